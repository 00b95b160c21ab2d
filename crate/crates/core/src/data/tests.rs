use super::*;
use crate::autoencoder::{DecoderStack, EncoderStack};
use proptest::prelude::*;
use std::collections::BTreeMap;
use tempfile::TempDir;

fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut b = vec![0, 0, 8, 3];
    for v in [n, rows, cols] {
        b.extend_from_slice(&v.to_be_bytes());
    }
    b.extend_from_slice(pixels);
    b
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut b = vec![0, 0, 8, 1];
    b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    b.extend_from_slice(labels);
    b
}

fn write(dir: &TempDir, name: &str, bytes: &[u8]) -> std::path::PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, bytes).unwrap();
    p
}

#[test]
fn idx_fixture_scaled_rows() {
    let dir = TempDir::new().unwrap();
    let img = write(&dir, "img", &idx_images(2, 2, 2, &[0, 255, 128, 64, 1, 2, 3, 4]));
    let lab = write(&dir, "lab", &idx_labels(&[7, 3]));
    let ds = load_idx(&img, Some(&lab)).unwrap();
    assert_eq!(ds.samples().shape(), (2, 4));
    assert_eq!(ds.samples().row(0), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
    assert_eq!(ds.labels(), Some(&[7usize, 3][..]));
    assert!(load_idx(&img, None).unwrap().labels().is_none());
}

#[test]
fn idx_errors_name_offsets() {
    let dir = TempDir::new().unwrap();
    let img = write(&dir, "img", &idx_images(2, 2, 2, &[0; 8]));
    let lab = write(&dir, "lab", &idx_labels(&[1, 2, 3]));
    let err = load_idx(&img, Some(&lab)).unwrap_err().to_string();
    assert!(err.contains("label count 3"), "{err}");

    let mut bad = idx_images(1, 1, 1, &[0]);
    bad[3] = 2;
    let p = write(&dir, "magic", &bad);
    let err = load_idx(&p, None).unwrap_err().to_string();
    assert!(err.contains("byte offset 0") && err.contains("magic"), "{err}");

    let p = write(&dir, "short", &idx_images(2, 2, 2, &[0; 5]));
    let err = load_idx(&p, None).unwrap_err().to_string();
    assert!(err.contains("truncated") && err.contains("byte offset 21"), "{err}");

    let p = write(&dir, "long", &idx_images(1, 1, 1, &[0, 0]));
    assert!(load_idx(&p, None).is_err());
    let p = write(&dir, "tiny", &[0, 0]);
    assert!(load_idx(&p, None).is_err());
    assert!(load_idx(&dir.path().join("missing"), None).is_err());
}

#[test]
fn csv_with_and_without_labels() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "a.csv", b"1,2,0\n3,4,1\n");
    let ds = load_csv(&p, true, b',').unwrap();
    assert_eq!(ds.samples().as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(ds.labels(), Some(&[0usize, 1][..]));
    let ds = load_csv(&p, false, b',').unwrap();
    assert_eq!(ds.samples().shape(), (2, 3));
    let p = write(&dir, "b.tsv", b"0.5\t-2e3\n1\t2\n");
    let ds = load_csv(&p, false, b'\t').unwrap();
    assert_eq!(ds.samples().row(0), &[0.5, -2000.0]);
}

#[test]
fn csv_errors_name_lines() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "empty.csv", b"");
    assert!(load_csv(&p, true, b',').is_err());
    let p = write(&dir, "ragged.csv", b"1,2,0\n3,4,1\n5,1\n");
    let err = load_csv(&p, true, b',').unwrap_err().to_string();
    assert!(err.contains("line 3"), "{err}");
    let p = write(&dir, "text.csv", b"1,2,0\n3,x,1\n");
    let err = load_csv(&p, true, b',').unwrap_err().to_string();
    assert!(err.contains("line 2") && err.contains("\"x\""), "{err}");
    let p = write(&dir, "neg.csv", b"1,2,-1\n");
    assert!(load_csv(&p, true, b',').is_err());
    let p = write(&dir, "nan.csv", b"1,NaN\n");
    assert!(load_csv(&p, false, b',').is_err());
}

#[test]
fn synth_single_component_mean() {
    let mut rng = SeededRng::new(1);
    let n = 4000;
    let (ds, truth) = synth_gmm(1, 3, n, 5.0, &mut rng).unwrap();
    let mean = ds.samples().column_means();
    for (j, m) in mean.iter().enumerate() {
        assert!((m - truth.means()[(0, j)]).abs() < 4.0 / (n as f64).sqrt());
    }
    assert!(ds.labels().unwrap().iter().all(|&l| l == 0));
}

#[test]
fn synth_labels_match_nearest_true_mean() {
    let mut rng = SeededRng::new(2);
    let (ds, truth) = synth_gmm(3, 2, 1500, 20.0, &mut rng).unwrap();
    let labels = ds.labels().unwrap();
    let agree = ds
        .samples()
        .row_iter()
        .zip(labels)
        .filter(|(y, &l)| {
            let d = |k: usize| -> f64 { (0..2).map(|j| (y[j] - truth.means()[(k, j)]).powi(2)).sum() };
            (0..3).all(|k| d(l) <= d(k))
        })
        .count();
    assert!(agree as f64 / 1500.0 >= 0.999, "{agree}");
    for k in 0..3 {
        assert!(labels.contains(&k));
    }
}

#[test]
fn synth_is_deterministic_and_validates() {
    let a = synth_gmm(4, 3, 50, 3.0, &mut SeededRng::new(9)).unwrap();
    let b = synth_gmm(4, 3, 50, 3.0, &mut SeededRng::new(9)).unwrap();
    assert_eq!(a, b);
    assert!(synth_gmm(0, 3, 50, 3.0, &mut SeededRng::new(9)).is_err());
    assert!(synth_gmm(2, 3, 50, 0.0, &mut SeededRng::new(9)).is_err());
    let (one_d, _) = synth_gmm(3, 1, 10, 2.0, &mut SeededRng::new(9)).unwrap();
    assert_eq!(one_d.dim(), 1);
}

#[test]
fn embedding_csv_examples() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("e.csv");
    let ys = Matrix::from_rows(&[vec![0.5, -1.25]]).unwrap();
    emit_embedding_csv(&ys, Some(&[3]), &p).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap(), "x,y,label\n0.5,-1.25,3\n");
    emit_embedding_csv(&ys, None, &p).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap(), "x,y\n0.5,-1.25\n");
    assert!(emit_embedding_csv(&Matrix::zeros(1, 3), None, &p).is_err());
    assert!(emit_embedding_csv(&ys, None, &dir.path().join("no/such/dir.csv")).is_err());
}

#[test]
fn sig9_formatting() {
    assert_eq!(format_sig9(1.0 / 3.0), "0.333333333");
    assert_eq!(format_sig9(123456789012.0), "123456789000");
    assert_eq!(format_sig9(-2.5e-7), "-0.00000025");
}

fn random_checkpoint(seed: u64, with_decoder: bool, with_gmm: bool) -> Checkpoint {
    let mut rng = SeededRng::new(seed);
    let shape = [5, 4, 2];
    let encoder = EncoderStack::init(&shape, &mut rng).unwrap();
    // make biases nonzero so they are exercised
    let mut ckpt = Checkpoint::new(encoder);
    for l in ckpt.encoder.layers_mut() {
        for b in l.bias.iter_mut() {
            *b = rng.normal();
        }
    }
    if with_decoder {
        ckpt.decoder = Some(DecoderStack::init_mirror(&shape, &mut rng).unwrap());
    }
    if with_gmm {
        let ys = Matrix::from_vec(20, 2, (0..40).map(|_| rng.normal()).collect()).unwrap();
        ckpt.gmm = Some(crate::gmm::kmeans_init(&ys, 3, &mut rng).unwrap());
    }
    let mut config = BTreeMap::new();
    config.insert("eta".to_string(), "0.01".to_string());
    config.insert("data".to_string(), "/tmp/some path/x.csv".to_string());
    ckpt.config = config;
    ckpt.joint_epochs = seed as usize % 7;
    ckpt
}

fn bits(c: &Checkpoint) -> Vec<u64> {
    let mut out = Vec::new();
    let layers = c.encoder.layers().iter().chain(c.decoder.iter().flat_map(|d| d.layers()));
    for l in layers {
        out.extend(l.weight().as_slice().iter().map(|v| v.to_bits()));
        out.extend(l.bias().iter().map(|v| v.to_bits()));
    }
    if let Some(g) = &c.gmm {
        out.extend(g.weight_logits().iter().map(|v| v.to_bits()));
        out.extend(g.means().as_slice().iter().map(|v| v.to_bits()));
        out.extend(g.log_sigmas().as_slice().iter().map(|v| v.to_bits()));
    }
    out
}

#[test]
fn checkpoint_truncated_is_corrupt_payload() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("c.ckpt");
    save_checkpoint(&random_checkpoint(1, true, true), &p).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
    let err = load_checkpoint(&p).unwrap_err();
    assert!(matches!(err, Error::CorruptPayload(_)), "{err}");
}

#[test]
fn checkpoint_version_mismatch_names_both() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("c.ckpt");
    save_checkpoint(&random_checkpoint(2, false, false), &p).unwrap();
    let text = std::fs::read(&p).unwrap();
    let bumped = String::from_utf8_lossy(&text).replacen("format_version 1", "format_version 2", 1);
    std::fs::write(&p, bumped.as_bytes()).unwrap();
    let err = load_checkpoint(&p).unwrap_err();
    assert!(matches!(err, Error::VersionMismatch { found: 2, expected: 1 }));
    let msg = err.to_string();
    assert!(msg.contains('2') && msg.contains('1'), "{msg}");
}

#[test]
fn checkpoint_rejects_bad_headers() {
    let dir = TempDir::new().unwrap();
    let p = write(&dir, "x", b"hello\nEND_HEADER\n");
    assert!(matches!(load_checkpoint(&p), Err(Error::Format { .. })));
    let p = write(&dir, "y", b"deepgmm-checkpoint\nformat_version 1\n");
    assert!(matches!(load_checkpoint(&p), Err(Error::Format { .. })));
    let p = write(
        &dir,
        "z",
        b"deepgmm-checkpoint\nformat_version 1\njoint_epochs 0\nlayer encoder tanh 2 2\nEND_HEADER\n",
    );
    assert!(matches!(load_checkpoint(&p), Err(Error::Format { .. })));
    let mut c = random_checkpoint(3, false, false);
    c.config.insert("bad key".into(), "v".into());
    assert!(save_checkpoint(&c, &dir.path().join("w")).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn checkpoint_round_trip_is_bit_exact(seed in 0u64..10_000, dec in any::<bool>(), gmm in any::<bool>()) {
        let dir = TempDir::new().unwrap();
        let p = dir.path().join("c.ckpt");
        let c = random_checkpoint(seed, dec, gmm);
        save_checkpoint(&c, &p).unwrap();
        let back = load_checkpoint(&p).unwrap();
        prop_assert_eq!(bits(&back), bits(&c));
        prop_assert_eq!(back, c);
    }

    #[test]
    fn embedding_round_trips_to_nine_digits(vals in proptest::collection::vec(-1e6f64..1e6, 2..40)) {
        let dir = TempDir::new().unwrap();
        let p = dir.path().join("e.csv");
        let n = vals.len() / 2;
        let ys = Matrix::from_vec(n, 2, vals[..2 * n].to_vec()).unwrap();
        emit_embedding_csv(&ys, None, &p).unwrap();
        let mut r = csv::Reader::from_path(&p).unwrap();
        let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
        prop_assert_eq!(rows.len(), n);
        for (i, rec) in rows.iter().enumerate() {
            for j in 0..2 {
                let v: f64 = rec[j].parse().unwrap();
                let want = ys[(i, j)];
                prop_assert!((v - want).abs() <= 5e-9 * want.abs() + 1e-300, "{} vs {}", v, want);
            }
        }
    }
}
