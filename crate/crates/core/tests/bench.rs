use cerberus_core::bench::*;
use cerberus_core::model::*;
use cerberus_core::tensor::read_archive;

fn enc(layers: usize) -> EncoderConfig {
    EncoderConfig {
        vocab_size: 40,
        hidden_dim: 16,
        num_layers: layers,
        num_attention_heads: 2,
        feedforward_dim: 32,
        max_sequence_len: 24,
        dropout_rate: 0.0,
        layer_norm_eps: 1e-5,
    }
}

fn archive_numel(model: &Model) -> usize {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.ckpt");
    model.save(&p).unwrap();
    read_archive(&p)
        .unwrap()
        .entries()
        .iter()
        .map(|e| e.shape.iter().product::<usize>())
        .sum()
}

#[test]
fn zero_layer_closed_form() {
    let m = Model::from(StudentModel::new(enc(0), 1).unwrap());
    let (v, d, l) = (40, 16, 24);
    assert_eq!(count_params(&m), v * d + l * d + d * 2 + 2);
    assert_eq!(count_params(&m), archive_numel(&m));
}

#[test]
fn cerberus_count_identity_and_round_trip() {
    for (b, k, h) in [(3, 3, 1), (2, 3, 2), (1, 2, 3)] {
        let cfg = enc(b + h);
        let src = StudentModel::new(cfg.clone(), 2).unwrap();
        let base = count_params(&src);
        let cerb = Model::from(split_into_cerberus(&src, CerberusConfig::new(b, k, h)).unwrap());
        let extra = (k - 1) * (h * cfg.block_params() + cfg.projection_params());
        assert_eq!(count_params(&cerb), base + extra);
        assert_eq!(count_params(&cerb), archive_numel(&cerb));

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        cerb.save(&p).unwrap();
        assert_eq!(count_params(&Model::load(&p).unwrap()), count_params(&cerb));
    }
}

#[test]
fn shared_body_is_faster_than_three_full_models() {
    let cfg = EncoderConfig {
        hidden_dim: 32,
        feedforward_dim: 64,
        ..enc(4)
    };
    let singles: Vec<StudentModel> = (0..3)
        .map(|s| StudentModel::new(cfg.clone(), 10 + s).unwrap())
        .collect();
    let cerb = split_into_cerberus(&singles[0], CerberusConfig::new(3, 3, 1)).unwrap();
    let batch = synthetic_batch(40, 128, 6, 10, 24, 0).unwrap();
    let lc = LatencyConfig::default();
    let c = measure_model("b3_3h1", &cerb, &batch, &lc).unwrap();
    let refs: Vec<&StudentModel> = singles.iter().collect();
    let e = measure_ensemble("ensemble3", &refs, &batch, &lc).unwrap();
    assert!(
        c.mean_us < e.mean_us,
        "cerberus {} vs ensemble {}",
        c.mean_us,
        e.mean_us
    );
    assert_eq!(c.per_rep_us.len(), 30);
    assert!(c.std_us >= 0.0);
    assert!((c.mean_us_per_example * 128.0 - c.mean_us).abs() < 1e-6 * c.mean_us);
}

#[test]
fn doubling_repetitions_is_stable() {
    let m = StudentModel::new(enc(2), 3).unwrap();
    let batch = synthetic_batch(40, 128, 6, 10, 24, 1).unwrap();
    let lc = LatencyConfig::default();
    let a = measure_model("m", &m, &batch, &lc).unwrap();
    let b = measure_model(
        "m",
        &m,
        &batch,
        &LatencyConfig {
            repetitions: 60,
            ..lc
        },
    )
    .unwrap();
    assert!(
        (a.mean_us - b.mean_us).abs() < 3.0 * a.std_us.max(1e-3 * a.mean_us),
        "{} vs {} (std {})",
        a.mean_us,
        b.mean_us,
        a.std_us
    );
}

#[test]
fn reports_append() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("latency.jsonl");
    let r = measure(
        "noop",
        &LatencyConfig {
            repetitions: 3,
            warmup_reps: 0,
            batch_size: 1,
        },
        || Ok(()),
    )
    .unwrap();
    append_jsonl(&p, std::slice::from_ref(&r)).unwrap();
    append_jsonl(&p, std::slice::from_ref(&r)).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert_eq!(text.lines().count(), 2);
    let back: LatencyReport = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(back, r);
    assert_eq!(to_csv(&[r]).lines().count(), 2);
}
