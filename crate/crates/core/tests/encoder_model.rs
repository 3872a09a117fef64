use cerberus_core::data::Vocabulary;
use cerberus_core::model::{
    forward_batch, forward_pairs, score_candidates, split_into_cerberus, CerberusConfig,
    EncoderConfig, Model, PackedBatch, PoolingSpace, Ranker, StudentModel,
};
use cerberus_core::tensor::{Tape, Tensor};
use cerberus_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(vocab: usize, layers: usize) -> EncoderConfig {
    EncoderConfig {
        vocab_size: vocab,
        hidden_dim: 16,
        num_layers: layers,
        num_attention_heads: 2,
        feedforward_dim: 32,
        max_sequence_len: 16,
        dropout_rate: 0.0,
        layer_norm_eps: 1e-5,
    }
}

fn random_pairs(n: usize, vocab: usize, seed: u64) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let ql = rng.gen_range(1..6);
            let al = rng.gen_range(0..12);
            let q = (0..ql).map(|_| rng.gen_range(5..vocab)).collect();
            let a = (0..al).map(|_| rng.gen_range(5..vocab)).collect();
            (q, a)
        })
        .collect()
}

fn as_refs(pairs: &[(Vec<usize>, Vec<usize>)]) -> Vec<(&[usize], &[usize])> {
    pairs
        .iter()
        .map(|(q, a)| (q.as_slice(), a.as_slice()))
        .collect()
}

/// Perturb every parameter a little so copies that silently alias would be
/// caught.
fn jitter(model: &mut impl Ranker, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let store = model.params_mut();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            *v += 0.05 * rng.gen_range(-1.0..1.0);
        }
    }
}

#[test]
fn single_head_split_reproduces_source_exactly() {
    let mut source = StudentModel::new(small(40, 4), 3).unwrap();
    jitter(&mut source, 9);
    let pairs = random_pairs(100, 40, 1);
    let want = forward_pairs(&source, &as_refs(&pairs)).unwrap();
    for b in 1..4 {
        let cerb = split_into_cerberus(&source, CerberusConfig::new(b, 1, 4 - b)).unwrap();
        let got = forward_pairs(&cerb, &as_refs(&pairs)).unwrap();
        let max_diff = want
            .iter()
            .zip(&got)
            .flat_map(|(w, g)| (0..2).map(move |c| (w.pooled[c] - g.pooled[c]).abs()))
            .fold(0.0, f64::max);
        assert_eq!(max_diff, 0.0, "b={b}");
    }
}

#[test]
fn split_leaves_source_untouched_and_heads_identical() {
    let mut source = StudentModel::new(small(40, 4), 5).unwrap();
    jitter(&mut source, 2);
    let before = source.to_archive();
    let cerb = split_into_cerberus(&source, CerberusConfig::new(2, 3, 2)).unwrap();
    assert_eq!(source.to_archive(), before);
    let pairs = random_pairs(20, 40, 4);
    for out in forward_pairs(&cerb, &as_refs(&pairs)).unwrap() {
        assert_eq!(out.per_head.len(), 3);
        assert_eq!(out.per_head[0], out.per_head[1]);
        assert_eq!(out.per_head[0], out.per_head[2]);
        assert_eq!(out.pooled, out.per_head[0]);
    }
    let p = cerb.params();
    for suffix in ["0.attn.q.weight", "1.ff.out.bias", "proj.weight"] {
        let a = p.value_by_name(&format!("head.0.{suffix}")).unwrap();
        let c = p.value_by_name(&format!("head.2.{suffix}")).unwrap();
        assert_eq!(a, c);
    }
    let src_block = source.params().value_by_name("block.3.ln2.gain").unwrap();
    assert_eq!(p.value_by_name("head.1.1.ln2.gain").unwrap(), src_block);
}

#[test]
fn invalid_split_is_a_config_error() {
    let source = StudentModel::new(small(20, 4), 0).unwrap();
    let r = split_into_cerberus(&source, CerberusConfig::new(4, 2, 0));
    assert!(matches!(r, Err(Error::Config(_))));
}

/// Sum the tensor sizes listed in a checkpoint header, read straight from the
/// file bytes.
fn enumerate_archive(path: &std::path::Path) -> usize {
    let bytes = std::fs::read(path).unwrap();
    let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + hlen]).unwrap();
    let total: usize = header["tensors"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| {
            e["shape"]
                .as_array()
                .unwrap()
                .iter()
                .map(|d| d.as_u64().unwrap() as usize)
                .product::<usize>()
        })
        .sum();
    assert_eq!(bytes.len(), 8 + hlen + 8 * total);
    total
}

#[test]
fn parameter_count_matches_checkpoint_enumeration() {
    let enc = EncoderConfig {
        vocab_size: 200,
        hidden_dim: 32,
        num_layers: 4,
        num_attention_heads: 4,
        feedforward_dim: 64,
        max_sequence_len: 32,
        dropout_rate: 0.0,
        layer_norm_eps: 1e-5,
    };
    let (d, f, v, l) = (32usize, 64usize, 200usize, 32usize);
    let embed = v * d + l * d;
    let block = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 2 * (2 * d);
    let proj = d * 2 + 2;

    let dir = tempfile::tempdir().unwrap();
    let source = StudentModel::new(enc.clone(), 1).unwrap();
    let cerb = split_into_cerberus(&source, CerberusConfig::new(3, 3, 1)).unwrap();
    let sp = dir.path().join("student.ckpt");
    let cp = dir.path().join("cerberus.ckpt");
    source.save(&sp).unwrap();
    cerb.save(&cp).unwrap();

    let base = enumerate_archive(&sp);
    let multi = enumerate_archive(&cp);
    assert_eq!(base, embed + 4 * block + proj);
    assert_eq!(multi, embed + 3 * block + 3 * (block + proj));
    assert_eq!(multi - base, 2 * (block + proj));
    assert_eq!(cerb.param_count(), multi);
    assert_eq!(CerberusConfig::new(3, 3, 1).param_count(&enc), multi);
    assert_eq!(source.param_count(), base);
}

#[test]
fn checkpoint_round_trip_preserves_outputs_and_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut source = StudentModel::new(small(30, 3), 8).unwrap();
    jitter(&mut source, 1);
    let mut cfg = CerberusConfig::new(1, 2, 2);
    cfg.pooling = PoolingSpace::ProbabilityMean;
    cfg.head_weights = vec![1.0, 0.5];
    let mut cerb = split_into_cerberus(&source, cfg).unwrap();
    jitter(&mut cerb, 6);
    let pairs = random_pairs(10, 30, 0);
    for (model, name) in [(Model::from(source), "s"), (Model::from(cerb), "c")] {
        let path = dir.path().join(name);
        model.save(&path).unwrap();
        let back = Model::load(&path).unwrap();
        assert_eq!(back.kind(), model.kind());
        assert_eq!(back.param_count(), model.param_count());
        assert_eq!(back.pooling(), model.pooling());
        assert_eq!(
            forward_pairs(&back, &as_refs(&pairs)).unwrap(),
            forward_pairs(&model, &as_refs(&pairs)).unwrap()
        );
    }
}

#[test]
fn zero_projection_gives_zero_logits() {
    let mut m = StudentModel::new(small(30, 2), 0).unwrap();
    for name in ["proj.weight", "proj.bias"] {
        let id = m.params().id(name).unwrap();
        m.params_mut().value_mut(id).data_mut().fill(0.0);
    }
    for out in forward_pairs(&m, &as_refs(&random_pairs(30, 30, 2))).unwrap() {
        assert_eq!(out.per_head, vec![[0.0, 0.0]]);
        assert_eq!(out.score, 0.5);
    }
}

#[test]
fn logits_are_finite_on_a_thousand_random_pairs() {
    let m = StudentModel::new(EncoderConfig::desk(60), 11).unwrap();
    let pairs = random_pairs(1000, 60, 3);
    let outs = forward_pairs(&m, &as_refs(&pairs)).unwrap();
    assert_eq!(outs.len(), 1000);
    assert!(outs
        .iter()
        .all(|o| o.pooled.iter().all(|z| z.is_finite()) && o.score > 0.0 && o.score < 1.0));
}

#[test]
fn encode_pair_contract() {
    let m = StudentModel::new(small(30, 2), 4).unwrap();
    let (rep, truncated) = m.encode_pair(&[7, 8], &[]).unwrap();
    assert_eq!(rep.shape(), &[16]);
    assert!(rep.all_finite());
    assert_eq!(truncated, 0);
    let (again, _) = m.encode_pair(&[7, 8], &[]).unwrap();
    assert_eq!(
        rep.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        again.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    );
    let long: Vec<usize> = (0..40).map(|i| 5 + i % 20).collect();
    let (_, truncated) = m.encode_pair(&[7, 8], &long).unwrap();
    assert_eq!(truncated, 1);
}

#[test]
fn non_finite_activation_reports_the_layer() {
    let mut m = StudentModel::new(small(30, 3), 4).unwrap();
    let id = m.params().id("block.1.ln1.gain").unwrap();
    m.params_mut().value_mut(id).data_mut()[0] = f64::NAN;
    let batch = PackedBatch::new([(&[6usize, 7][..], &[8usize][..])], 16).unwrap();
    match forward_batch(&m, &batch) {
        Err(Error::NonFiniteActivation { layer }) => assert_eq!(layer, 2),
        other => panic!("unexpected {other:?}"),
    }
}

fn text_vocab() -> Vocabulary {
    Vocabulary::from_words([
        "who", "wrote", "the", "book", "alice", "bob", "did", "paint", "it",
    ])
}

#[test]
fn candidate_scoring_is_pointwise() {
    let vocab = text_vocab();
    let mut m = StudentModel::new(small(vocab.size(), 2), 2).unwrap();
    jitter(&mut m, 5);
    let cerb = split_into_cerberus(&m, CerberusConfig::new(1, 3, 1)).unwrap();
    let q = "who wrote the book";
    let cands = [
        "alice wrote it",
        "bob did paint it",
        "the book",
        "alice wrote it",
    ];
    for model in [Model::from(m), Model::from(cerb)] {
        let one = score_candidates(&model, &vocab, q, &cands[..1]).unwrap();
        assert_eq!(one.len(), 1);
        assert!(one[0] > 0.0 && one[0] < 1.0);

        let s = score_candidates(&model, &vocab, q, &cands).unwrap();
        assert_eq!(s[0].to_bits(), s[3].to_bits());
        let rev: Vec<&str> = cands.iter().rev().copied().collect();
        let r = score_candidates(&model, &vocab, q, &rev).unwrap();
        let back: Vec<f64> = r.into_iter().rev().collect();
        assert_eq!(s, back);
        assert!(score_candidates::<_, &str>(&model, &vocab, q, &[]).is_err());
    }
}

#[test]
fn full_encoder_cross_entropy_gradient_matches_finite_differences() {
    let cfg = EncoderConfig {
        vocab_size: 12,
        hidden_dim: 8,
        num_layers: 2,
        num_attention_heads: 2,
        feedforward_dim: 12,
        max_sequence_len: 10,
        dropout_rate: 0.0,
        layer_norm_eps: 1e-5,
    };
    let mut model = StudentModel::new(cfg, 21).unwrap();
    jitter(&mut model, 3);
    let pairs = random_pairs(3, 12, 8);
    let labels = [1usize, 0, 1];
    let batch = PackedBatch::new(as_refs(&pairs), 10).unwrap();

    let loss_of = |m: &StudentModel, tape: &mut Tape| {
        let z = m.head_logits(tape, &batch).unwrap()[0];
        let lp = tape.log_softmax(z).unwrap();
        let picked = tape.pick(lp, &labels).unwrap();
        let mean = tape.mean(picked);
        tape.scale(mean, -1.0)
    };
    let mut tape = Tape::new();
    let loss = loss_of(&model, &mut tape);
    let mut store = model.params().clone();
    tape.backward_into(loss, &mut store).unwrap();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for k in 0..store.value(id).numel() {
            let orig = model.params().value(id).data()[k];
            let mut eval = |x: f64| {
                model.params_mut().value_mut(id).data_mut()[k] = x;
                let mut t = Tape::new();
                let l = loss_of(&model, &mut t);
                t.value(l).item()
            };
            let num = (eval(orig + h) - eval(orig - h)) / (2.0 * h);
            model.params_mut().value_mut(id).data_mut()[k] = orig;
            let ana = store.grad(id).data()[k];
            let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-4, "max relative error {worst}");
    assert!(Tensor::scalar(worst).all_finite());
}
