//! Model checkpoints.
//!
//! Layout: a UTF-8 header of newline-terminated lines, then raw tensors.
//!
//! ```text
//! deepgmm-checkpoint
//! format_version 1
//! joint_epochs <count>
//! config <key>=<value>             (zero or more, sorted by key)
//! layer encoder <activation> <in> <out>
//! layer decoder <activation> <in> <out>   (zero or more)
//! gmm <m> <d>                      (optional)
//! END_HEADER
//! ```
//!
//! The payload follows immediately: for every layer in header order its
//! weight (`out x in`, row-major) then its bias, then, if present, the
//! mixture logits (`m`), means (`m x d`) and log standard deviations
//! (`m x d`). Every value is a little-endian IEEE-754 f64.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::autoencoder::{Activation, DecoderStack, EncoderStack, Layer};
use crate::error::{Error, Result};
use crate::gmm::GmmParams;
use crate::numerics::Matrix;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "deepgmm-checkpoint";
const END: &str = "END_HEADER";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoder: EncoderStack,
    pub decoder: Option<DecoderStack>,
    pub gmm: Option<GmmParams>,
    /// Effective configuration at save time.
    pub config: BTreeMap<String, String>,
    /// Joint-training epochs completed so far.
    pub joint_epochs: usize,
}

impl Checkpoint {
    pub fn new(encoder: EncoderStack) -> Self {
        Checkpoint {
            encoder,
            decoder: None,
            gmm: None,
            config: BTreeMap::new(),
            joint_epochs: 0,
        }
    }
}

fn push_f64s(out: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut header = format!("{MAGIC}\nformat_version {FORMAT_VERSION}\njoint_epochs {}\n", ckpt.joint_epochs);
    for (k, v) in &ckpt.config {
        if k.is_empty() || k.contains(['=', '\n', ' ', '\t']) || v.contains('\n') {
            return Err(Error::InvalidArgument(format!(
                "config entry {k:?}={v:?} cannot be stored in a checkpoint header"
            )));
        }
        header.push_str(&format!("config {k}={v}\n"));
    }
    let mut layers: Vec<(&str, &Layer)> = ckpt.encoder.layers().iter().map(|l| ("encoder", l)).collect();
    if let Some(dec) = &ckpt.decoder {
        layers.extend(dec.layers().iter().map(|l| ("decoder", l)));
    }
    for (part, l) in &layers {
        header.push_str(&format!(
            "layer {part} {} {} {}\n",
            l.activation().name(),
            l.in_dim(),
            l.out_dim()
        ));
    }
    if let Some(g) = &ckpt.gmm {
        header.push_str(&format!("gmm {} {}\n", g.num_components(), g.dim()));
    }
    header.push_str(END);
    header.push('\n');

    let mut bytes = header.into_bytes();
    for (_, l) in &layers {
        push_f64s(&mut bytes, l.weight().as_slice());
        push_f64s(&mut bytes, l.bias());
    }
    if let Some(g) = &ckpt.gmm {
        push_f64s(&mut bytes, g.weight_logits());
        push_f64s(&mut bytes, g.means().as_slice());
        push_f64s(&mut bytes, g.log_sigmas().as_slice());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Payload<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Payload<'_> {
    fn take(&mut self, n: usize) -> Vec<f64> {
        let out = self.bytes[self.pos..self.pos + 8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        self.pos += 8 * n;
        out
    }
}

struct LayerSpec {
    decoder: bool,
    activation: Activation,
    in_dim: usize,
    out_dim: usize,
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |offset: usize, msg: String| Error::Format {
        path: path.to_path_buf(),
        offset,
        msg,
    };

    let mut offset = 0;
    let mut lines = Vec::new();
    loop {
        let Some(nl) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            return Err(bad(bytes.len(), format!("header is not terminated by {END}")));
        };
        let line = std::str::from_utf8(&bytes[offset..offset + nl])
            .map_err(|_| bad(offset, "header line is not valid UTF-8".into()))?;
        let start = offset;
        offset += nl + 1;
        if line == END {
            break;
        }
        lines.push((start, line));
    }
    let payload_start = offset;

    let mut it = lines.into_iter();
    match it.next() {
        Some((_, MAGIC)) => {}
        _ => return Err(bad(0, "not a checkpoint file (missing magic line)".into())),
    }
    let (vo, vline) = it.next().ok_or_else(|| bad(payload_start, "missing format_version".into()))?;
    let found: u32 = vline
        .strip_prefix("format_version ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad(vo, format!("expected format_version line, found {vline:?}")))?;
    if found != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found,
            expected: FORMAT_VERSION,
        });
    }

    let mut joint_epochs = None;
    let mut config = BTreeMap::new();
    let mut specs = Vec::new();
    let mut gmm_shape = None;
    for (lo, line) in it {
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        let num = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| bad(lo, format!("expected a count, found {s:?} in {line:?}")))
        };
        match key {
            "joint_epochs" => joint_epochs = Some(num(rest)?),
            "config" => {
                let (k, v) = rest
                    .split_once('=')
                    .ok_or_else(|| bad(lo, format!("malformed config line {line:?}")))?;
                config.insert(k.to_string(), v.to_string());
            }
            "layer" => {
                let f: Vec<&str> = rest.split(' ').collect();
                if f.len() != 4 || !(f[0] == "encoder" || f[0] == "decoder") {
                    return Err(bad(lo, format!("malformed layer line {line:?}")));
                }
                let activation = Activation::from_name(f[1])
                    .ok_or_else(|| bad(lo, format!("unknown activation {:?}", f[1])))?;
                specs.push((
                    lo,
                    LayerSpec {
                        decoder: f[0] == "decoder",
                        activation,
                        in_dim: num(f[2])?,
                        out_dim: num(f[3])?,
                    },
                ));
            }
            "gmm" => {
                let f: Vec<&str> = rest.split(' ').collect();
                if f.len() != 2 || gmm_shape.is_some() {
                    return Err(bad(lo, format!("malformed gmm line {line:?}")));
                }
                gmm_shape = Some((num(f[0])?, num(f[1])?));
            }
            _ => return Err(bad(lo, format!("unknown header entry {line:?}"))),
        }
    }
    let joint_epochs = joint_epochs.ok_or_else(|| bad(payload_start, "missing joint_epochs".into()))?;

    let mut expected = 0usize;
    for (_, s) in &specs {
        expected += s.out_dim * s.in_dim + s.out_dim;
    }
    if let Some((m, d)) = gmm_shape {
        expected += m + 2 * m * d;
    }
    let found_bytes = bytes.len() - payload_start;
    if found_bytes != 8 * expected {
        return Err(Error::CorruptPayload(format!(
            "{}: header describes {} bytes of tensors, file holds {found_bytes}",
            path.display(),
            8 * expected
        )));
    }

    let mut payload = Payload {
        bytes: &bytes[payload_start..],
        pos: 0,
    };
    let mut enc_layers = Vec::new();
    let mut dec_layers = Vec::new();
    for (lo, s) in &specs {
        let w = Matrix::from_vec(s.out_dim, s.in_dim, payload.take(s.out_dim * s.in_dim))
            .map_err(|e| Error::CorruptPayload(format!("layer at header offset {lo}: {e}")))?;
        let b = payload.take(s.out_dim);
        let layer = Layer::new(w, b, s.activation)
            .map_err(|e| Error::CorruptPayload(format!("layer at header offset {lo}: {e}")))?;
        if s.decoder {
            dec_layers.push(layer);
        } else {
            if !dec_layers.is_empty() {
                return Err(bad(*lo, "encoder layer listed after decoder layers".into()));
            }
            enc_layers.push(layer);
        }
    }
    let encoder = EncoderStack::new(enc_layers).map_err(|e| bad(0, format!("encoder: {e}")))?;
    let decoder = if dec_layers.is_empty() {
        None
    } else {
        Some(DecoderStack::new(dec_layers).map_err(|e| bad(0, format!("decoder: {e}")))?)
    };
    let gmm = match gmm_shape {
        None => None,
        Some((m, d)) => {
            let logits = payload.take(m);
            let means = Matrix::from_vec(m, d, payload.take(m * d));
            let sigmas = Matrix::from_vec(m, d, payload.take(m * d));
            let params = means
                .and_then(|mu| sigmas.and_then(|s| GmmParams::new(logits, mu, s)))
                .map_err(|e| Error::CorruptPayload(format!("mixture parameters: {e}")))?;
            Some(params)
        }
    };
    Ok(Checkpoint {
        encoder,
        decoder,
        gmm,
        config,
        joint_epochs,
    })
}
