//! Score-level linear ensembles of independently trained rankers and
//! exhaustive simplex-grid weight tuning on a dev split.

use serde::{Deserialize, Serialize};

use crate::data::{EncodedQuestion, Question, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{forward_pairs, forward_questions, pool, softmax2, PoolingSpace, Ranker};
use crate::ranking::{mean_average_precision, ScoredQuestion};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinationSpace {
    /// Probability of the positive class.
    #[default]
    Probability,
    /// Log-odds `z1 - z0` of the pooled logits.
    Logit,
}

impl CombinationSpace {
    pub fn member_score(self, logits: [f64; 2]) -> f64 {
        match self {
            CombinationSpace::Probability => softmax2(logits)[1],
            CombinationSpace::Logit => logits[1] - logits[0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    /// Member references, usually checkpoint paths.
    pub members: Vec<String>,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub combination_space: CombinationSpace,
}

impl EnsembleSpec {
    pub fn uniform(members: Vec<String>, combination_space: CombinationSpace) -> Self {
        let w = 1.0 / members.len().max(1) as f64;
        EnsembleSpec {
            weights: vec![w; members.len()],
            members,
            combination_space,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::Config("ensemble needs at least one member".into()));
        }
        if self.weights.len() != self.members.len() {
            return Err(Error::Config(format!(
                "{} weights for {} members",
                self.weights.len(),
                self.members.len()
            )));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(
                "ensemble weights must be finite and >= 0".into(),
            ));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "ensemble weights sum to {total}, not 1"
            )));
        }
        Ok(())
    }
}

/// `Σ_i w_i · s_i` for one candidate.
pub fn combine(weights: &[f64], member_scores: &[f64]) -> f64 {
    weights.iter().zip(member_scores).map(|(w, s)| w * s).sum()
}

/// Per-candidate ensemble scores for one question, in input order.
pub fn ensemble_score<R: Ranker, S: AsRef<str>>(
    spec: &EnsembleSpec,
    members: &[&R],
    vocab: &Vocabulary,
    question: &str,
    candidates: &[S],
) -> Result<Vec<f64>> {
    spec.validate()?;
    if members.len() != spec.members.len() {
        return Err(Error::Config(format!(
            "spec lists {} members, {} models given",
            spec.members.len(),
            members.len()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::Contract("no candidates to score".into()));
    }
    let q = vocab.tokenize(question);
    let toks: Vec<Vec<usize>> = candidates
        .iter()
        .map(|c| vocab.tokenize(c.as_ref()))
        .collect();
    let pairs: Vec<(&[usize], &[usize])> =
        toks.iter().map(|a| (q.as_slice(), a.as_slice())).collect();
    let per_member = members
        .iter()
        .map(|m| {
            forward_pairs(*m, &pairs).map(|outs| {
                outs.iter()
                    .map(|o| {
                        spec.combination_space
                            .member_score(pool(&o.per_head, PoolingSpace::LogitMean))
                    })
                    .collect::<Vec<_>>()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..candidates.len())
        .map(|c| {
            let s: Vec<f64> = per_member.iter().map(|m| m[c]).collect();
            combine(&spec.weights, &s)
        })
        .collect())
}

/// Member scores over a split: `[member][question][candidate]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MemberScores {
    pub ids: Vec<String>,
    pub scores: Vec<Vec<Vec<f64>>>,
}

impl MemberScores {
    pub fn compute<R: Ranker>(
        members: &[(String, &R)],
        questions: &[EncodedQuestion],
        space: CombinationSpace,
    ) -> Result<Self> {
        let mut scores = Vec::with_capacity(members.len());
        for (_, m) in members {
            let outs = forward_questions(*m, questions)?;
            scores.push(
                outs.iter()
                    .map(|q| {
                        q.iter()
                            .map(|o| space.member_score(pool(&o.per_head, PoolingSpace::LogitMean)))
                            .collect()
                    })
                    .collect(),
            );
        }
        Ok(MemberScores {
            ids: members.iter().map(|(id, _)| id.clone()).collect(),
            scores,
        })
    }

    fn scored(
        &self,
        weights: &[f64],
        questions: &[EncodedQuestion],
    ) -> Result<Vec<ScoredQuestion>> {
        questions
            .iter()
            .enumerate()
            .map(|(qi, q)| {
                let scores = (0..q.candidates.len())
                    .map(|c| {
                        let s: Vec<f64> = self.scores.iter().map(|m| m[qi][c]).collect();
                        combine(weights, &s)
                    })
                    .collect();
                ScoredQuestion::new(
                    q.question_id.clone(),
                    q.candidates.iter().map(|c| c.example_id.clone()).collect(),
                    q.labels(),
                    scores,
                )
            })
            .collect()
    }
}

/// Every nonnegative integer vector of length `k` summing to `resolution`,
/// in lexicographic order.
pub fn simplex_grid(k: usize, resolution: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for c in 0..=left {
            prefix.push(c);
            rec(k - 1, left - c, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if k > 0 {
        rec(k, resolution, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub counts: Vec<usize>,
    pub weights: Vec<f64>,
    pub dev_map: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneResult {
    pub spec: EnsembleSpec,
    pub dev_map: f64,
    pub trace: Vec<TraceEntry>,
}

impl TuneResult {
    pub fn trace_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.trace {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Exhaustive search over the simplex grid with step `1/resolution`,
/// maximizing dev MAP. Ties go to the lexicographically greatest count vector,
/// i.e. towards earlier members.
pub fn tune_weights_from_scores(
    scores: &MemberScores,
    dev: &[EncodedQuestion],
    resolution: usize,
    space: CombinationSpace,
) -> Result<TuneResult> {
    if resolution < 2 {
        return Err(Error::Config(format!(
            "resolution {resolution} must be >= 2"
        )));
    }
    let k = scores.ids.len();
    if k == 0 {
        return Err(Error::Config("ensemble needs at least one member".into()));
    }
    let mut trace = Vec::new();
    let mut best: Option<usize> = None;
    for counts in simplex_grid(k, resolution) {
        let weights: Vec<f64> = counts
            .iter()
            .map(|&c| c as f64 / resolution as f64)
            .collect();
        let dev_map = mean_average_precision(&scores.scored(&weights, dev)?);
        let better = match best {
            None => true,
            Some(b) => {
                let cur: &TraceEntry = &trace[b];
                dev_map > cur.dev_map || (dev_map == cur.dev_map && counts > cur.counts)
            }
        };
        trace.push(TraceEntry {
            counts,
            weights,
            dev_map,
        });
        if better {
            best = Some(trace.len() - 1);
        }
    }
    let b = &trace[best.expect("grid is nonempty")];
    Ok(TuneResult {
        spec: EnsembleSpec {
            members: scores.ids.clone(),
            weights: b.weights.clone(),
            combination_space: space,
        },
        dev_map: b.dev_map,
        trace,
    })
}

pub fn tune_weights<R: Ranker>(
    members: &[(String, &R)],
    dev: &[EncodedQuestion],
    resolution: usize,
    space: CombinationSpace,
) -> Result<TuneResult> {
    let scores = MemberScores::compute(members, dev, space)?;
    tune_weights_from_scores(&scores, dev, resolution, space)
}

/// Ensemble scores for raw questions, for reporting.
pub fn score_questions<R: Ranker>(
    spec: &EnsembleSpec,
    members: &[&R],
    vocab: &Vocabulary,
    questions: &[Question],
) -> Result<Vec<ScoredQuestion>> {
    questions
        .iter()
        .map(|q| {
            let texts: Vec<&str> = q.candidates.iter().map(|c| c.text.as_str()).collect();
            let scores = ensemble_score(spec, members, vocab, &q.text, &texts)?;
            ScoredQuestion::new(
                q.question_id.clone(),
                q.candidates.iter().map(|c| c.example_id.clone()).collect(),
                q.labels(),
                scores,
            )
        })
        .collect()
}
