//! Distillation objectives on the tape, plus scalar single-pair wrappers that
//! run through the same code.

use super::DistillConfig;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("temperature {tau} must be positive")))
    }
}

/// Softmax of `logits / tau`.
pub fn soften(logits: [f64; 2], tau: f64) -> Result<[f64; 2]> {
    check_tau(tau)?;
    if !(logits[0].is_finite() && logits[1].is_finite()) {
        return Err(Error::NumericDomain("non-finite logits".into()));
    }
    let (a, b) = (logits[0] / tau, logits[1] / tau);
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    Ok([ea / (ea + eb), eb / (ea + eb)])
}

fn check_labels(labels: &[u8], rows: usize) -> Result<Vec<usize>> {
    if labels.len() != rows {
        return Err(Error::Contract(format!(
            "{} labels for {rows} rows",
            labels.len()
        )));
    }
    labels
        .iter()
        .map(|&y| match y {
            0 | 1 => Ok(usize::from(y)),
            _ => Err(Error::Contract(format!("label {y} is not 0 or 1"))),
        })
        .collect()
}

/// Mean over rows of `-log softmax(z)[y]`.
pub fn cross_entropy_var(tape: &mut Tape, logits: Var, labels: &[u8]) -> Result<Var> {
    let ys = check_labels(labels, tape.value(logits).rows())?;
    let lp = tape.log_softmax(logits)?;
    let picked = tape.pick(lp, &ys)?;
    let mean = tape.mean(picked);
    Ok(tape.scale(mean, -1.0))
}

/// Mean over rows of `KL(soften(teacher) || soften(student))`. The teacher is
/// a constant, so gradients reach only the student.
pub fn soft_loss_var(tape: &mut Tape, student: Var, teacher: &Tensor, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let rows = tape.value(student).rows();
    if teacher.shape() != [rows, 2] {
        return Err(Error::shape(
            "soft_loss",
            tape.value(student).shape(),
            teacher.shape(),
        ));
    }
    let mut p = Vec::with_capacity(2 * rows);
    let mut neg_entropy = Vec::with_capacity(rows);
    for r in 0..rows {
        let t = teacher.row(r);
        let pr = soften([t[0], t[1]], tau)?;
        neg_entropy.push(
            pr.iter()
                .filter(|&&x| x > 0.0)
                .map(|&x| x * x.ln())
                .sum::<f64>(),
        );
        p.extend_from_slice(&pr);
    }
    let p = Tensor::new(vec![rows, 2], p)?;
    let scaled = tape.scale(student, 1.0 / tau);
    let lq = tape.log_softmax(scaled)?;
    let cross = tape.row_dot(lq, &p)?;
    let cross = tape.scale(cross, -1.0);
    let kl = tape.add_const(cross, &Tensor::new(vec![rows], neg_entropy)?)?;
    Ok(tape.mean(kl))
}

/// `α·CE + (1−α)·τ²·soft`; a term whose weight is zero is left out entirely.
pub fn kd_loss_var(
    tape: &mut Tape,
    student: Var,
    teacher: &Tensor,
    labels: &[u8],
    cfg: &DistillConfig,
) -> Result<Var> {
    kd_combine(tape, student, labels, cfg, |tape| {
        soft_loss_var(tape, student, teacher, cfg.tau)
    })
}

fn kd_combine(
    tape: &mut Tape,
    student: Var,
    labels: &[u8],
    cfg: &DistillConfig,
    soft: impl FnOnce(&mut Tape) -> Result<Var>,
) -> Result<Var> {
    cfg.validate()?;
    let hard = if cfg.alpha > 0.0 {
        let ce = cross_entropy_var(tape, student, labels)?;
        Some(tape.scale(ce, cfg.alpha))
    } else {
        check_labels(labels, tape.value(student).rows())?;
        None
    };
    let soft = if cfg.alpha < 1.0 {
        let s = soft(tape)?;
        Some(tape.scale(s, (1.0 - cfg.alpha) * cfg.tau * cfg.tau))
    } else {
        None
    };
    match (hard, soft) {
        (Some(h), Some(s)) => tape.add(h, s),
        (Some(h), None) => Ok(h),
        (None, Some(s)) => Ok(s),
        (None, None) => unreachable!("alpha is either > 0 or < 1"),
    }
}

/// Running mean of scalar nodes; equal inputs give that input exactly.
fn running_mean(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let mut mean = terms[0];
    for (i, &t) in terms.iter().enumerate().skip(1) {
        let neg = tape.scale(mean, -1.0);
        let diff = tape.add(t, neg)?;
        let step = tape.scale(diff, 1.0 / (i + 1) as f64);
        mean = tape.add(mean, step)?;
    }
    Ok(mean)
}

/// KD with the soft term averaged over several teachers.
pub fn kd_sum_loss_var(
    tape: &mut Tape,
    student: Var,
    teachers: &[Tensor],
    labels: &[u8],
    cfg: &DistillConfig,
) -> Result<Var> {
    if teachers.is_empty() {
        return Err(Error::Config("kd_sum needs at least one teacher".into()));
    }
    kd_combine(tape, student, labels, cfg, |tape| {
        let terms = teachers
            .iter()
            .map(|t| soft_loss_var(tape, student, t, cfg.tau))
            .collect::<Result<Vec<_>>>()?;
        running_mean(tape, &terms)
    })
}

/// `Σ_i λ_i · kd(head_i, teacher_i)`; heads with `λ_i = 0` are not evaluated.
pub fn cerberus_loss_var(
    tape: &mut Tape,
    heads: &[Var],
    teachers: &[Tensor],
    labels: &[u8],
    lambda: &[f64],
    cfg: &DistillConfig,
) -> Result<Var> {
    if heads.len() != teachers.len() || heads.len() != lambda.len() || heads.is_empty() {
        return Err(Error::Config(format!(
            "{} heads, {} teachers, {} head weights",
            heads.len(),
            teachers.len(),
            lambda.len()
        )));
    }
    let mut total: Option<Var> = None;
    for ((&h, t), &w) in heads.iter().zip(teachers).zip(lambda) {
        if w == 0.0 {
            continue;
        }
        let kd = kd_loss_var(tape, h, t, labels, cfg)?;
        let term = tape.scale(kd, w);
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok(match total {
        Some(v) => v,
        None => tape.constant(Tensor::scalar(0.0)),
    })
}

/// Round-robin teacher index for a batch.
pub fn kd_rr_index(batch_index: u64, num_teachers: usize) -> Result<usize> {
    if num_teachers == 0 {
        return Err(Error::Config(
            "round robin needs at least one teacher".into(),
        ));
    }
    Ok((batch_index % num_teachers as u64) as usize)
}

pub fn kd_rr_select<T>(batch_index: u64, teachers: &[T]) -> Result<&T> {
    Ok(&teachers[kd_rr_index(batch_index, teachers.len())?])
}

fn row(logits: [f64; 2]) -> Tensor {
    Tensor::new(vec![1, 2], logits.to_vec()).expect("1x2")
}

fn eval_scalar(build: impl FnOnce(&mut Tape) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let v = build(&mut tape)?;
    Ok(tape.value(v).item())
}

pub fn soft_loss(student: [f64; 2], teacher: [f64; 2], tau: f64) -> Result<f64> {
    eval_scalar(|tape| {
        let s = tape.input(row(student));
        soft_loss_var(tape, s, &row(teacher), tau)
    })
}

pub fn cross_entropy(student: [f64; 2], label: u8) -> Result<f64> {
    eval_scalar(|tape| {
        let s = tape.input(row(student));
        cross_entropy_var(tape, s, &[label])
    })
}

pub fn kd_loss(
    student: [f64; 2],
    teacher: [f64; 2],
    label: u8,
    cfg: &DistillConfig,
) -> Result<f64> {
    eval_scalar(|tape| {
        let s = tape.input(row(student));
        kd_loss_var(tape, s, &row(teacher), &[label], cfg)
    })
}

pub fn kd_sum_loss(
    student: [f64; 2],
    teachers: &[[f64; 2]],
    label: u8,
    cfg: &DistillConfig,
) -> Result<f64> {
    let ts: Vec<Tensor> = teachers.iter().map(|t| row(*t)).collect();
    eval_scalar(|tape| {
        let s = tape.input(row(student));
        kd_sum_loss_var(tape, s, &ts, &[label], cfg)
    })
}

pub fn cerberus_loss(
    per_head: &[[f64; 2]],
    teachers: &[[f64; 2]],
    label: u8,
    lambda: &[f64],
    cfg: &DistillConfig,
) -> Result<f64> {
    let ts: Vec<Tensor> = teachers.iter().map(|t| row(*t)).collect();
    eval_scalar(|tape| {
        let hs: Vec<Var> = per_head.iter().map(|h| tape.input(row(*h))).collect();
        cerberus_loss_var(tape, &hs, &ts, &[label], lambda, cfg)
    })
}
