use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use cerberus_core::bench::{
    append_jsonl, measure_ensemble, measure_model, synthetic_batch, to_csv,
};
use cerberus_core::data::{
    encode_questions, generate, load_dataset, save_dataset, As2Dataset, EncodedQuestion, Split,
};
use cerberus_core::distill::{
    grid_search, train, CachedTeacher, ModelTeacher, StrategyConfig, Teacher, TeacherLogits,
    TrainLog,
};
use cerberus_core::ensemble::{score_questions, tune_weights};
use cerberus_core::model::{forward_questions, split_into_cerberus, Model, Ranker, StudentModel};
use cerberus_core::ranking::{
    evaluate as rank_report, AgreementMatrix, RankingReport, ScoredQuestion,
};
use cerberus_core::scoring::{evaluate_model, score_split, scored_questions, ScoreSource};
use cerberus_core::Error;
use serde::Serialize;
use serde_json::json;

use crate::config::{
    BenchConfig, DistillCmdConfig, EvaluateConfig, GenerateConfig, TeacherRef, TrainTeacherConfig,
    TuneConfig,
};

pub const RESOLVED_CONFIG: &str = "resolved_config.json";

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Create the output directory, snapshot the resolved config there and echo it.
fn prepare_out<T: Serialize>(out: &Path, resolved: &T) -> Result<()> {
    std::fs::create_dir_all(out).map_err(Error::from)?;
    write_json(&out.join(RESOLVED_CONFIG), resolved)?;
    println!("{}", serde_json::to_string_pretty(resolved)?);
    Ok(())
}

fn load_data(dir: &Path) -> Result<As2Dataset> {
    load_dataset(dir).with_context(|| format!("loading dataset from {}", dir.display()))
}

fn load_model(path: &Path, vocab_size: usize) -> Result<Model> {
    let m = Model::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let v = m.encoder_config().vocab_size;
    if v != vocab_size {
        return Err(Error::Config(format!(
            "checkpoint {} expects a vocabulary of {v}, the dataset has {vocab_size}",
            path.display()
        ))
        .into());
    }
    Ok(m)
}

struct Splits {
    train: Vec<EncodedQuestion>,
    dev: Vec<EncodedQuestion>,
    test: Vec<EncodedQuestion>,
}

fn encode_all(ds: &As2Dataset) -> Splits {
    Splits {
        train: encode_questions(&ds.vocabulary, &ds.train),
        dev: encode_questions(&ds.vocabulary, &ds.dev),
        test: encode_questions(&ds.vocabulary, &ds.test),
    }
}

#[derive(Serialize)]
struct TrainReport<'a> {
    id: &'a str,
    kind: &'a str,
    param_count: usize,
    best_dev_map: f64,
    dev: RankingReport,
    test: RankingReport,
}

fn finish_training(
    out: &Path,
    id: &str,
    model: &Model,
    log: &TrainLog,
    splits: &Splits,
) -> Result<()> {
    model.save(&out.join("model.ckpt"))?;
    log.write(&out.join("train_log.jsonl"))?;
    let report = TrainReport {
        id,
        kind: model.kind(),
        param_count: model.param_count(),
        best_dev_map: log
            .best_dev_map()
            .context("training log has no end record")?,
        dev: evaluate_model(model, &splits.dev)?,
        test: evaluate_model(model, &splits.test)?,
    };
    write_json(&out.join("report.json"), &report)?;
    println!(
        "{id}: best dev MAP {:.4}, test MAP {:.4}",
        report.best_dev_map, report.test.map
    );
    Ok(())
}

pub fn generate_data(cfg: GenerateConfig) -> Result<()> {
    let cfg = cfg.resolved();
    let g = cfg.generator();
    let ds = generate(&g)?;
    prepare_out(&cfg.out, &cfg)?;
    save_dataset(&ds, &cfg.out)?;
    println!(
        "wrote {}/{}/{} questions, vocabulary {}",
        ds.train.len(),
        ds.dev.len(),
        ds.test.len(),
        ds.vocabulary.size()
    );
    Ok(())
}

pub fn train_teacher(cfg: TrainTeacherConfig) -> Result<()> {
    let ds = load_data(&cfg.data)?;
    let splits = encode_all(&ds);
    let enc = cfg.encoder.build(ds.vocabulary.size());
    let mut model = Model::from(StudentModel::new(enc, cfg.seed)?);
    let lc = cfg.train.build(cfg.seed);
    prepare_out(&cfg.out, &cfg)?;
    let log = train(
        &mut model,
        &StrategyConfig::new(cerberus_core::distill::Strategy::NoTeacher, vec![]),
        &splits.train,
        &splits.dev,
        &[],
        &lc,
    )?;
    finish_training(&cfg.out, &cfg.id, &model, &log, &splits)?;
    let teacher = ModelTeacher {
        id: cfg.id.clone(),
        model,
    };
    teacher
        .logits(&splits.train)?
        .write_cache(&splits.train, &cfg.out.join("teacher_logits.jsonl"))?;
    Ok(())
}

fn teacher_logits(
    t: &TeacherRef,
    vocab_size: usize,
    train_split: &[EncodedQuestion],
) -> Result<TeacherLogits> {
    let logits = match (&t.checkpoint, &t.cache) {
        (Some(ckpt), None) => ModelTeacher {
            id: t.id.clone(),
            model: load_model(ckpt, vocab_size)?,
        }
        .logits(train_split)?,
        (None, Some(cache)) => {
            let c = CachedTeacher::load(cache, &t.id)
                .with_context(|| format!("loading teacher cache {}", cache.display()))?;
            if c.is_empty() {
                return Err(Error::Config(format!(
                    "cache {} has no logits for teacher {}",
                    cache.display(),
                    t.id
                ))
                .into());
            }
            c.logits(train_split)?
        }
        _ => {
            return Err(Error::Config(format!(
                "teacher {} needs exactly one of `checkpoint` or `cache`",
                t.id
            ))
            .into())
        }
    };
    Ok(logits)
}

pub fn distill(cfg: DistillCmdConfig) -> Result<()> {
    let ds = load_data(&cfg.data)?;
    let v = ds.vocabulary.size();
    let splits = encode_all(&ds);
    let strategy = StrategyConfig {
        strategy: cfg.strategy,
        teachers: cfg.teachers.iter().map(|t| t.id.clone()).collect(),
        head_weights: cfg.head_weights.clone(),
        distill: cfg.distill,
    };
    strategy.validate()?;
    let teachers = cfg
        .teachers
        .iter()
        .map(|t| teacher_logits(t, v, &splits.train))
        .collect::<Result<Vec<_>>>()?;
    let student = match &cfg.init {
        Some(p) => match load_model(p, v)? {
            Model::Student(s) => s,
            Model::Cerberus(_) => {
                return Err(Error::Config(format!(
                    "init checkpoint {} is already multi-head",
                    p.display()
                ))
                .into())
            }
        },
        None => StudentModel::new(cfg.student.build(v), cfg.seed)?,
    };
    let mut model = match &cfg.cerberus {
        Some(c) => Model::from(split_into_cerberus(&student, c.build())?),
        None => Model::from(student),
    };
    let lc = cfg.train.build(cfg.seed);
    prepare_out(&cfg.out, &cfg)?;
    let log = match &cfg.grids {
        Some(grids) => {
            let (best, log, report) = grid_search(
                &model,
                &strategy,
                &splits.train,
                &splits.dev,
                &teachers,
                &lc,
                grids,
            )?;
            write_json(&cfg.out.join("grid_report.json"), &report)?;
            model = best;
            log
        }
        None => train(
            &mut model,
            &strategy,
            &splits.train,
            &splits.dev,
            &teachers,
            &lc,
        )?,
    };
    finish_training(&cfg.out, cfg.strategy.name(), &model, &log, &splits)
}

fn head_names(model: &Model) -> Vec<String> {
    match model {
        Model::Student(_) => vec!["model".into()],
        Model::Cerberus(_) => (0..model.num_heads()).map(|j| format!("head{j}")).collect(),
    }
}

pub fn evaluate(cfg: EvaluateConfig) -> Result<()> {
    let ds = load_data(&cfg.data)?;
    let v = ds.vocabulary.size();
    let model = load_model(&cfg.model, v)?;
    let teachers = cfg
        .teachers
        .iter()
        .map(|t| Ok((t.id.clone(), load_model(&t.checkpoint, v)?)))
        .collect::<Result<Vec<_>>>()?;
    prepare_out(&cfg.out, &cfg)?;
    let qs = encode_questions(&ds.vocabulary, ds.split(cfg.split));
    let outputs = forward_questions(&model, &qs)?;
    let pooled = scored_questions(&qs, &outputs, ScoreSource::Pooled)?;
    let names = head_names(&model);
    let per_head: Vec<(String, Vec<ScoredQuestion>)> = match model {
        Model::Student(_) => vec![(names[0].clone(), pooled.clone())],
        Model::Cerberus(_) => names
            .iter()
            .enumerate()
            .map(|(j, n)| {
                Ok((
                    n.clone(),
                    scored_questions(&qs, &outputs, ScoreSource::Head(j))?,
                ))
            })
            .collect::<Result<Vec<_>>>()?,
    };
    let head_reports = per_head
        .iter()
        .map(|(n, s)| Ok((n.clone(), rank_report(s)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let report = rank_report(&pooled)?;
    write_json(
        &cfg.out.join("report.json"),
        &json!({
            "kind": model.kind(),
            "split": cfg.split,
            "pooled": report,
            "heads": head_reports,
        }),
    )?;
    println!(
        "{} split: P@1 {:.4} MAP {:.4} MRR {:.4}",
        cfg.split.name(),
        report.p_at_1,
        report.map,
        report.mrr
    );
    if !teachers.is_empty() {
        let teacher_scores = teachers
            .iter()
            .map(|(id, m)| Ok((id.clone(), score_split(m, &qs)?)))
            .collect::<Result<Vec<_>>>()?;
        let matrix = AgreementMatrix::build(&per_head, &teacher_scores)?;
        std::fs::write(cfg.out.join("agreement.csv"), matrix.to_csv()).map_err(Error::from)?;
        write_json(&cfg.out.join("agreement.json"), &matrix)?;
    }
    Ok(())
}

pub fn bench(cfg: BenchConfig) -> Result<()> {
    cfg.latency.validate()?;
    if cfg.models.is_empty() && cfg.ensembles.is_empty() {
        return Err(Error::Config(
            "nothing to benchmark: `models` and `ensembles` are empty".into(),
        )
        .into());
    }
    let load = |p: &Path| -> Result<Model> {
        Model::load(p).with_context(|| format!("loading checkpoint {}", p.display()))
    };
    let models = cfg
        .models
        .iter()
        .map(|m| Ok((m.id.clone(), load(&m.checkpoint)?)))
        .collect::<Result<Vec<_>>>()?;
    let ensembles = cfg
        .ensembles
        .iter()
        .map(|e| {
            if e.members.is_empty() {
                return Err(Error::Config(format!("ensemble {} has no members", e.id)).into());
            }
            Ok((
                e.id.clone(),
                e.members
                    .iter()
                    .map(|p| load(p))
                    .collect::<Result<Vec<_>>>()?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    prepare_out(&cfg.out, &cfg)?;
    let batch_for = |m: &Model| {
        let e = m.encoder_config();
        synthetic_batch(
            e.vocab_size,
            cfg.latency.batch_size,
            cfg.question_len,
            cfg.answer_len,
            e.max_sequence_len,
            cfg.seed,
        )
    };
    let mut reports = Vec::new();
    let mut params = BTreeMap::new();
    for (id, m) in &models {
        reports.push(measure_model(id, m, &batch_for(m)?, &cfg.latency)?);
        params.insert(id.clone(), m.param_count());
    }
    for (id, members) in &ensembles {
        let refs: Vec<&Model> = members.iter().collect();
        reports.push(measure_ensemble(
            id,
            &refs,
            &batch_for(&members[0])?,
            &cfg.latency,
        )?);
        params.insert(id.clone(), members.iter().map(|m| m.param_count()).sum());
    }
    append_jsonl(&cfg.out.join("latency.jsonl"), &reports)?;
    std::fs::write(cfg.out.join("latency.csv"), to_csv(&reports)).map_err(Error::from)?;
    write_json(&cfg.out.join("params.json"), &params)?;
    for r in &reports {
        println!(
            "{}: {:.1} +- {:.1} us per batch of {}",
            r.model_id, r.mean_us, r.std_us, r.batch_size
        );
    }
    Ok(())
}

pub fn tune_ensemble(cfg: TuneConfig) -> Result<()> {
    let ds = load_data(&cfg.data)?;
    let v = ds.vocabulary.size();
    let members = cfg
        .members
        .iter()
        .map(|m| Ok((m.id.clone(), load_model(&m.checkpoint, v)?)))
        .collect::<Result<Vec<_>>>()?;
    if members.is_empty() {
        return Err(Error::Config("ensemble needs at least one member".into()).into());
    }
    if cfg.resolution < 2 {
        return Err(
            Error::Config(format!("resolution {} must be at least 2", cfg.resolution)).into(),
        );
    }
    prepare_out(&cfg.out, &cfg)?;
    let dev = encode_questions(&ds.vocabulary, &ds.dev);
    let refs: Vec<(String, &Model)> = members.iter().map(|(id, m)| (id.clone(), m)).collect();
    let tuned = tune_weights(&refs, &dev, cfg.resolution, cfg.combination_space)?;
    write_json(&cfg.out.join("ensemble_spec.json"), &tuned.spec)?;
    std::fs::write(cfg.out.join("trace.jsonl"), tuned.trace_jsonl()?).map_err(Error::from)?;
    let models: Vec<&Model> = members.iter().map(|(_, m)| m).collect();
    let split_report = |split: Split| -> Result<RankingReport> {
        Ok(rank_report(&score_questions(
            &tuned.spec,
            &models,
            &ds.vocabulary,
            ds.split(split),
        )?)?)
    };
    let dev_report = split_report(Split::Dev)?;
    let test_report = split_report(Split::Test)?;
    write_json(
        &cfg.out.join("report.json"),
        &json!({
            "weights": tuned.spec.weights,
            "grid_points": tuned.trace.len(),
            "dev": dev_report,
            "test": test_report,
        }),
    )?;
    println!(
        "weights {:?}: dev MAP {:.4}, test MAP {:.4}",
        tuned.spec.weights, dev_report.map, test_report.map
    );
    Ok(())
}
