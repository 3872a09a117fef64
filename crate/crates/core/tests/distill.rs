use cerberus_core::data::*;
use cerberus_core::distill::*;
use cerberus_core::model::*;
use cerberus_core::scoring::evaluate_model;
use cerberus_core::tensor::gradcheck::{check_params, random_tensor};
use cerberus_core::tensor::{ParamStore, Tape, Tensor, Var};
use cerberus_core::Error;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_encoder(vocab: usize, layers: usize) -> EncoderConfig {
    EncoderConfig {
        vocab_size: vocab,
        hidden_dim: 8,
        num_layers: layers,
        num_attention_heads: 2,
        feedforward_dim: 12,
        max_sequence_len: 12,
        dropout_rate: 0.0,
        layer_norm_eps: 1e-5,
    }
}

fn random_batch(n: usize, vocab: usize, seed: u64) -> PackedBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(Vec<usize>, Vec<usize>)> = (0..n)
        .map(|_| {
            let q = (0..rng.gen_range(1..4))
                .map(|_| rng.gen_range(NUM_RESERVED..vocab))
                .collect();
            let a = (0..rng.gen_range(1..5))
                .map(|_| rng.gen_range(NUM_RESERVED..vocab))
                .collect();
            (q, a)
        })
        .collect();
    PackedBatch::new(pairs.iter().map(|(q, a)| (q.as_slice(), a.as_slice())), 12).unwrap()
}

/// Three-head model whose heads no longer coincide.
fn three_heads(seed: u64) -> CerberusModel {
    let src = StudentModel::new(tiny_encoder(14, 3), seed).unwrap();
    let mut m = split_into_cerberus(&src, CerberusConfig::new(1, 3, 2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let ids: Vec<_> = m.params().ids().collect();
    for id in ids {
        for x in m.params_mut().value_mut(id).data_mut() {
            *x += rng.gen_range(-0.1..0.1);
        }
    }
    m
}

fn teacher_tensors(rows: usize, k: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| random_tensor(&[rows, 2], &mut rng))
        .collect()
}

const LABELS: [u8; 4] = [1, 0, 0, 1];

fn grads(
    model: &CerberusModel,
    batch: &PackedBatch,
    teachers: &[Tensor],
    lambda: &[f64],
) -> ParamStore {
    let cfg = DistillConfig::default();
    let mut tape = Tape::new();
    let heads = model.head_logits(&mut tape, batch).unwrap();
    let loss = cerberus_loss_var(&mut tape, &heads, teachers, &LABELS, lambda, &cfg).unwrap();
    let mut store = model.params().clone();
    store.zero_grads();
    tape.backward_into(loss, &mut store).unwrap();
    store
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|x| x.to_bits()).collect()
}

fn head_of(name: &str) -> Option<usize> {
    name.strip_prefix("head.")?.split('.').next()?.parse().ok()
}

#[test]
fn zero_weight_heads_get_zero_gradient_and_body_matches_single_head() {
    let m = three_heads(3);
    let batch = random_batch(4, 14, 8);
    let ts = teacher_tensors(4, 3, 9);
    let g = grads(&m, &batch, &ts, &[1.0, 0.0, 0.0]);

    // the k = 1 reference: only head 0 in the loss
    let cfg = DistillConfig::default();
    let mut tape = Tape::new();
    let heads = m.head_logits(&mut tape, &batch).unwrap();
    let loss = cerberus_loss_var(&mut tape, &heads[..1], &ts[..1], &LABELS, &[1.0], &cfg).unwrap();
    let mut single = m.params().clone();
    single.zero_grads();
    tape.backward_into(loss, &mut single).unwrap();

    for (i, name) in g.names().iter().enumerate() {
        let id = g.ids().nth(i).unwrap();
        match head_of(name) {
            Some(1) | Some(2) => assert!(g.grad(id).data().iter().all(|&x| x == 0.0), "{name}"),
            _ => assert_eq!(bits(g.grad(id)), bits(single.grad(id)), "{name}"),
        }
    }
}

#[test]
fn perturbing_one_teacher_moves_only_its_head_and_the_body() {
    let m = three_heads(4);
    let batch = random_batch(4, 14, 10);
    let ts = teacher_tensors(4, 3, 11);
    let base = grads(&m, &batch, &ts, &[1.0, 1.0, 1.0]);
    for j in 0..3 {
        let mut moved = ts.clone();
        moved[j].data_mut()[1] += 0.7;
        let g = grads(&m, &batch, &moved, &[1.0, 1.0, 1.0]);
        let mut own_changed = false;
        for (i, name) in g.names().iter().enumerate() {
            let id = g.ids().nth(i).unwrap();
            match head_of(name) {
                Some(h) if h != j => assert_eq!(bits(g.grad(id)), bits(base.grad(id)), "{name}"),
                Some(_) => own_changed |= bits(g.grad(id)) != bits(base.grad(id)),
                None => {}
            }
        }
        assert!(own_changed, "head {j} gradient should react to its teacher");
    }
}

#[test]
fn body_gradient_is_the_sum_of_per_head_contributions() {
    let m = three_heads(5);
    let batch = random_batch(4, 14, 12);
    let ts = teacher_tensors(4, 3, 13);
    let lambda = [0.5, 1.0, 2.0];
    let full = grads(&m, &batch, &ts, &lambda);
    let parts: Vec<ParamStore> = (0..3)
        .map(|i| {
            let mut l = [0.0; 3];
            l[i] = lambda[i];
            grads(&m, &batch, &ts, &l)
        })
        .collect();
    let mut worst: f64 = 0.0;
    for (i, name) in full.names().iter().enumerate() {
        if head_of(name).is_some() {
            continue;
        }
        let id = full.ids().nth(i).unwrap();
        for (e, x) in full.grad(id).data().iter().enumerate() {
            let sum: f64 = parts.iter().map(|p| p.grad(id).data()[e]).sum();
            worst = worst.max((x - sum).abs());
        }
    }
    assert!(worst < 1e-10, "body decomposition error {worst}");
}

#[test]
fn cerberus_loss_gradient_matches_finite_differences() {
    let m = three_heads(6);
    let batch = random_batch(4, 14, 14);
    let ts = teacher_tensors(4, 3, 15);
    let cfg = DistillConfig {
        alpha: 0.3,
        tau: 2.0,
    };
    let model_cfg = m.clone();
    let mut store = m.params().clone();
    let check = check_params(
        &mut store,
        |s: &ParamStore, tape: &mut Tape| -> cerberus_core::Result<Var> {
            let mut mm = model_cfg.clone();
            mm.params_mut().copy_values_from(s)?;
            let heads = mm.head_logits(tape, &batch)?;
            cerberus_loss_var(tape, &heads, &ts, &LABELS, &[1.0, 0.5, 2.0], &cfg)
        },
        None,
    )
    .unwrap();
    assert!(check.max_rel_error < 1e-4, "{check:?}");
    assert_eq!(check.entries_checked, m.param_count());
}

fn tiny_data(seed: u64) -> (As2Dataset, Vec<EncodedQuestion>, Vec<EncodedQuestion>) {
    let ds = generate(&GeneratorConfig {
        num_train: 24,
        num_dev: 8,
        num_test: 8,
        candidates_per_question: 6,
        ..GeneratorConfig::desk_benchmark(seed)
    })
    .unwrap();
    let tr = encode_questions(&ds.vocabulary, &ds.train);
    let dev = encode_questions(&ds.vocabulary, &ds.dev);
    (ds, tr, dev)
}

fn quick_loop(seed: u64) -> TrainLoopConfig {
    TrainLoopConfig {
        max_iterations: 20,
        validate_every: 5,
        patience_validations: 4,
        batch_size: 8,
        ..TrainLoopConfig::desk(seed)
    }
}

fn student(vocab: usize, seed: u64) -> StudentModel {
    let cfg = EncoderConfig {
        max_sequence_len: 24,
        ..tiny_encoder(vocab, 2)
    };
    StudentModel::new(cfg, seed).unwrap()
}

#[test]
fn early_stop_when_dev_cannot_improve() {
    let (ds, tr, _) = tiny_data(1);
    // identical candidates: every ranking falls back to index order
    let dev: Vec<Question> = ds
        .dev
        .iter()
        .map(|q| {
            let mut q = q.clone();
            for c in &mut q.candidates {
                c.text = "same words".into();
            }
            q
        })
        .collect();
    let dev = encode_questions(&ds.vocabulary, &dev);
    let mut m = Model::from(student(ds.vocabulary.size(), 2));
    let cfg = TrainLoopConfig {
        patience_validations: 1,
        ..quick_loop(3)
    };
    let log = train(
        &mut m,
        &StrategyConfig::new(Strategy::NoTeacher, vec![]),
        &tr,
        &dev,
        &[],
        &cfg,
    )
    .unwrap();
    assert_eq!(log.num_validations(), 2);
    match log.records.last().unwrap() {
        LogRecord::End {
            best_validation,
            iterations_run,
            stopped_early,
            ..
        } => {
            assert_eq!(*best_validation, 1);
            assert_eq!(*iterations_run, 10);
            assert!(stopped_early);
        }
        r => panic!("unexpected {r:?}"),
    }
}

#[test]
fn training_is_deterministic_and_restores_the_best_checkpoint() {
    let (ds, tr, dev) = tiny_data(2);
    let run = || {
        let mut m = Model::from(student(ds.vocabulary.size(), 4));
        let log = train(
            &mut m,
            &StrategyConfig::new(Strategy::NoTeacher, vec![]),
            &tr,
            &dev,
            &[],
            &quick_loop(5),
        )
        .unwrap();
        (m, log)
    };
    let (m1, l1) = run();
    let (m2, l2) = run();
    assert_eq!(l1.to_jsonl().unwrap(), l2.to_jsonl().unwrap());
    for ((_, a), (_, b)) in m1.params().iter().zip(m2.params().iter()) {
        assert_eq!(bits(a), bits(b));
    }
    let best = l1.best_dev_map().unwrap();
    let seen = l1
        .validations()
        .map(|(_, d)| d.map)
        .fold(f64::MIN, f64::max);
    assert_eq!(best, seen);
    assert_eq!(
        evaluate_model(&m1, &dev).unwrap().map.to_bits(),
        best.to_bits()
    );
}

#[test]
fn teachers_stay_frozen() {
    let (ds, tr, dev) = tiny_data(3);
    let teacher = ModelTeacher {
        id: "t".into(),
        model: Model::from(student(ds.vocabulary.size(), 6)),
    };
    let before: Vec<Vec<u64>> = teacher
        .model
        .params()
        .iter()
        .map(|(_, t)| bits(t))
        .collect();
    let logits = teacher.logits(&tr).unwrap();
    let mut m = Model::from(student(ds.vocabulary.size(), 7));
    train(
        &mut m,
        &StrategyConfig::new(Strategy::SingleTeacher, vec!["t".into()]),
        &tr,
        &dev,
        &[logits],
        &quick_loop(8),
    )
    .unwrap();
    let after: Vec<Vec<u64>> = teacher
        .model
        .params()
        .iter()
        .map(|(_, t)| bits(t))
        .collect();
    assert_eq!(before, after);
}

#[test]
fn strategy_and_model_must_agree() {
    let (ds, tr, dev) = tiny_data(4);
    let v = ds.vocabulary.size();
    let t = ModelTeacher {
        id: "t".into(),
        model: Model::from(student(v, 9)),
    };
    let logits = t.logits(&tr).unwrap();
    let cerb = split_into_cerberus(&student(v, 10), CerberusConfig::new(1, 1, 1)).unwrap();
    let mut m = Model::from(cerb);
    let err = train(
        &mut m,
        &StrategyConfig::new(Strategy::SingleTeacher, vec!["t".into()]),
        &tr,
        &dev,
        std::slice::from_ref(&logits),
        &quick_loop(1),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert!(err.to_string().contains("single-head"), "{err}");

    let mut s = Model::from(student(v, 11));
    let err = train(
        &mut s,
        &StrategyConfig::new(Strategy::PerHeadHeterogeneous, vec!["t".into()]),
        &tr,
        &dev,
        &[logits],
        &quick_loop(1),
    )
    .unwrap_err();
    assert!(err.to_string().contains("cerberus"), "{err}");

    let err = train(
        &mut s,
        &StrategyConfig::new(Strategy::NoTeacher, vec![]),
        &tr,
        &[],
        &[],
        &quick_loop(1),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn divergence_is_a_numeric_error() {
    let (ds, tr, dev) = tiny_data(5);
    let v = ds.vocabulary.size();
    let mut m = Model::from(student(v, 12));
    let lc = TrainLoopConfig {
        lr: 1e300,
        warmup_fraction: 0.0,
        ..quick_loop(1)
    };
    let err = train(
        &mut m,
        &StrategyConfig::new(Strategy::NoTeacher, vec![]),
        &tr,
        &dev,
        &[],
        &lc,
    )
    .unwrap_err();
    assert!(matches!(err, Error::NonFiniteActivation { .. }), "{err:?}");
    assert!(err.is_numeric());

    let mut m = Model::from(student(v, 12));
    let id = m.params().id("proj.weight").unwrap();
    m.params_mut().value_mut(id).data_mut()[0] = f64::NAN;
    let err = train(
        &mut m,
        &StrategyConfig::new(Strategy::NoTeacher, vec![]),
        &tr,
        &dev,
        &[],
        &quick_loop(1),
    )
    .unwrap_err();
    assert!(err.is_numeric(), "{err}");
}

#[test]
fn every_strategy_runs_on_its_model_kind() {
    let (ds, tr, dev) = tiny_data(6);
    let v = ds.vocabulary.size();
    let teachers: Vec<TeacherLogits> = (0..3)
        .map(|i| {
            ModelTeacher {
                id: format!("t{i}"),
                model: Model::from(student(v, 20 + i)),
            }
            .logits(&tr)
            .unwrap()
        })
        .collect();
    let ids: Vec<String> = teachers.iter().map(|t| t.teacher_id.clone()).collect();
    for s in Strategy::ALL {
        let (mut m, ts) = match s {
            Strategy::NoTeacher => (Model::from(student(v, 30)), vec![]),
            Strategy::SingleTeacher => (Model::from(student(v, 30)), teachers[..1].to_vec()),
            Strategy::KdSum | Strategy::KdRr => (Model::from(student(v, 30)), teachers.clone()),
            _ => (
                Model::from(
                    split_into_cerberus(&student(v, 30), CerberusConfig::new(1, 3, 1)).unwrap(),
                ),
                teachers.clone(),
            ),
        };
        let names = ids[..ts.len()].to_vec();
        let log = train(
            &mut m,
            &StrategyConfig::new(s, names),
            &tr,
            &dev,
            &ts,
            &quick_loop(2),
        )
        .unwrap();
        assert!(log.best_dev_map().unwrap().is_finite(), "{}", s.name());
    }
}

#[test]
fn grid_reports_every_alpha_tau_pair() {
    let (ds, tr, dev) = tiny_data(7);
    let v = ds.vocabulary.size();
    let t = ModelTeacher {
        id: "t".into(),
        model: Model::from(student(v, 40)),
    }
    .logits(&tr)
    .unwrap();
    let grids = DistillGrids {
        lr: vec![1e-3],
        batch_size: vec![8],
        ..DistillGrids::default()
    };
    let base = TrainLoopConfig {
        max_iterations: 4,
        validate_every: 2,
        patience_validations: 2,
        ..quick_loop(1)
    };
    let init = Model::from(student(v, 41));
    let (_, _, report) = grid_search(
        &init,
        &StrategyConfig::new(Strategy::SingleTeacher, vec!["t".into()]),
        &tr,
        &dev,
        std::slice::from_ref(&t),
        &base,
        &grids,
    )
    .unwrap();
    assert_eq!(report.entries.len(), 12);
    let best = select_best(&report.entries).unwrap();
    assert_eq!(best.config, report.best);

    let single = DistillGrids {
        alpha: vec![0.1],
        tau: vec![5.0],
        ..grids
    };
    let (_, _, r) = grid_search(
        &init,
        &StrategyConfig::new(Strategy::SingleTeacher, vec!["t".into()]),
        &tr,
        &dev,
        &[t],
        &base,
        &single,
    )
    .unwrap();
    assert_eq!((r.best.alpha, r.best.tau), (0.1, 5.0));
}

#[test]
fn logit_cache_round_trip() {
    let (ds, tr, _) = tiny_data(8);
    let teacher = ModelTeacher {
        id: "alpha".into(),
        model: Model::from(student(ds.vocabulary.size(), 50)),
    };
    let logits = teacher.logits(&tr).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    logits.write_cache(&tr, &path).unwrap();
    let cached = CachedTeacher::load(&path, "alpha").unwrap();
    assert_eq!(
        cached.len(),
        tr.iter().map(|q| q.candidates.len()).sum::<usize>()
    );
    let back = cached.logits(&tr).unwrap();
    assert_eq!(back, logits);
    assert!(CachedTeacher::load(&path, "other").unwrap().is_empty());

    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("{\"example_id\": 3}\n");
    std::fs::write(&path, text).unwrap();
    let err = CachedTeacher::load(&path, "alpha").unwrap_err();
    let n = tr.iter().map(|q| q.candidates.len()).sum::<usize>() + 1;
    assert!(
        matches!(err, Error::Parse { line, .. } if line == n),
        "{err}"
    );
}

#[test]
fn ensemble_teacher_smoke() {
    let (ds, tr, _) = tiny_data(9);
    let v = ds.vocabulary.size();
    let t = EnsembleTeacher {
        id: "ens".into(),
        members: vec![Model::from(student(v, 60)), Model::from(student(v, 61))],
    };
    let l = t.logits(&tr).unwrap();
    assert!(l.matches(&tr));
    assert!(l
        .logits
        .iter()
        .flatten()
        .all(|z| z[0].is_finite() && z[1].is_finite()));
    let empty = EnsembleTeacher {
        id: "none".into(),
        members: vec![],
    };
    assert!(empty.logits(&tr).is_err());
}
