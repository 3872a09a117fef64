//! Glue between model outputs and ranking metrics.

use crate::data::EncodedQuestion;
use crate::error::{Error, Result};
use crate::model::{forward_questions, softmax2, PairOutput, Ranker};
use crate::ranking::{evaluate, RankingReport, ScoredQuestion};

/// Which output of a multi-head model supplies the score.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreSource {
    Pooled,
    Head(usize),
}

pub fn scored_questions(
    questions: &[EncodedQuestion],
    outputs: &[Vec<PairOutput>],
    source: ScoreSource,
) -> Result<Vec<ScoredQuestion>> {
    if questions.len() != outputs.len() {
        return Err(Error::Contract("outputs do not match questions".into()));
    }
    questions
        .iter()
        .zip(outputs)
        .map(|(q, outs)| {
            let scores = outs
                .iter()
                .map(|o| match source {
                    ScoreSource::Pooled => Ok(o.score),
                    ScoreSource::Head(j) => o
                        .per_head
                        .get(j)
                        .map(|z| softmax2(*z)[1])
                        .ok_or_else(|| Error::Contract(format!("no head {j}"))),
                })
                .collect::<Result<Vec<f64>>>()?;
            ScoredQuestion::new(
                q.question_id.clone(),
                q.candidates.iter().map(|c| c.example_id.clone()).collect(),
                q.labels(),
                scores,
            )
        })
        .collect()
}

pub fn score_split<R: Ranker + ?Sized>(
    model: &R,
    questions: &[EncodedQuestion],
) -> Result<Vec<ScoredQuestion>> {
    let outputs = forward_questions(model, questions)?;
    scored_questions(questions, &outputs, ScoreSource::Pooled)
}

pub fn evaluate_model<R: Ranker + ?Sized>(
    model: &R,
    questions: &[EncodedQuestion],
) -> Result<RankingReport> {
    evaluate(&score_split(model, questions)?)
}
