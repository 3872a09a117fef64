//! Ranking metrics over scored candidate lists, answer selection, and
//! head/teacher agreement.

mod agreement;

pub use agreement::{agreement, AgreementCount, AgreementMatrix};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredQuestion {
    pub question_id: String,
    pub candidate_ids: Vec<String>,
    pub labels: Vec<u8>,
    pub scores: Vec<f64>,
}

impl ScoredQuestion {
    pub fn new(
        question_id: impl Into<String>,
        candidate_ids: Vec<String>,
        labels: Vec<u8>,
        scores: Vec<f64>,
    ) -> Result<Self> {
        let sq = ScoredQuestion {
            question_id: question_id.into(),
            candidate_ids,
            labels,
            scores,
        };
        sq.validate()?;
        Ok(sq)
    }

    /// Convenience constructor with ids `0..n`.
    pub fn anonymous(labels: Vec<u8>, scores: Vec<f64>) -> Result<Self> {
        let ids = (0..labels.len()).map(|i| i.to_string()).collect();
        Self::new("q", ids, labels, scores)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.scores.len();
        if self.candidate_ids.len() != n || self.labels.len() != n {
            return Err(Error::Contract(format!(
                "question {}: {} ids, {} labels, {} scores",
                self.question_id,
                self.candidate_ids.len(),
                self.labels.len(),
                n
            )));
        }
        if self.scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NumericDomain(format!(
                "question {} has a non-finite score",
                self.question_id
            )));
        }
        Ok(())
    }

    pub fn has_positive(&self) -> bool {
        self.labels.contains(&1)
    }

    /// Candidate indices by descending score; ties keep the lower index first.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        idx
    }

    fn ranked_labels(&self) -> Vec<u8> {
        self.ranking().into_iter().map(|i| self.labels[i]).collect()
    }
}

/// Index of the highest-scored candidate, lowest index on ties.
pub fn select_index(sq: &ScoredQuestion) -> Result<usize> {
    if sq.scores.is_empty() {
        return Err(Error::Contract(format!(
            "question {} has no candidates",
            sq.question_id
        )));
    }
    let mut best = 0;
    for (i, s) in sq.scores.iter().enumerate().skip(1) {
        if *s > sq.scores[best] {
            best = i;
        }
    }
    Ok(best)
}

pub fn select_answer(sq: &ScoredQuestion) -> Result<&str> {
    Ok(&sq.candidate_ids[select_index(sq)?])
}

pub fn average_precision(ranked_labels: &[u8]) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &l) in ranked_labels.iter().enumerate() {
        if l == 1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

pub fn reciprocal_rank(ranked_labels: &[u8]) -> f64 {
    ranked_labels
        .iter()
        .position(|&l| l == 1)
        .map_or(0.0, |r| 1.0 / (r + 1) as f64)
}

fn mean_over_evaluated(questions: &[ScoredQuestion], f: impl Fn(&ScoredQuestion) -> f64) -> f64 {
    let vals: Vec<f64> = questions
        .iter()
        .filter(|q| q.has_positive())
        .map(f)
        .collect();
    if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

pub fn precision_at_1(questions: &[ScoredQuestion]) -> f64 {
    mean_over_evaluated(questions, |q| {
        let top = select_index(q).expect("evaluated questions have candidates");
        f64::from(q.labels[top])
    })
}

pub fn mean_average_precision(questions: &[ScoredQuestion]) -> f64 {
    mean_over_evaluated(questions, |q| average_precision(&q.ranked_labels()))
}

pub fn mean_reciprocal_rank(questions: &[ScoredQuestion]) -> f64 {
    mean_over_evaluated(questions, |q| reciprocal_rank(&q.ranked_labels()))
}

/// Metrics over questions with at least one positive; all-negative questions
/// are counted in `num_questions_skipped`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub p_at_1: f64,
    pub map: f64,
    pub mrr: f64,
    pub num_questions_evaluated: usize,
    pub num_questions_skipped: usize,
}

pub fn evaluate(questions: &[ScoredQuestion]) -> Result<RankingReport> {
    for q in questions {
        q.validate()?;
        select_index(q)?;
    }
    let evaluated = questions.iter().filter(|q| q.has_positive()).count();
    Ok(RankingReport {
        p_at_1: precision_at_1(questions),
        map: mean_average_precision(questions),
        mrr: mean_reciprocal_rank(questions),
        num_questions_evaluated: evaluated,
        num_questions_skipped: questions.len() - evaluated,
    })
}
