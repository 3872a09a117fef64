use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{precision_at_1, select_index, ScoredQuestion};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementCount {
    /// Questions the head answers correctly with the same pick as the teacher.
    pub agreed: usize,
    /// Questions the head answers correctly.
    pub head_correct: usize,
}

impl AgreementCount {
    /// `None` when the head answers nothing correctly.
    pub fn value(&self) -> Option<f64> {
        (self.head_correct > 0).then(|| self.agreed as f64 / self.head_correct as f64)
    }
}

/// Among questions where the head's pick is correct, count those where the
/// teacher picks the same candidate.
pub fn agreement(head: &[ScoredQuestion], teacher: &[ScoredQuestion]) -> Result<AgreementCount> {
    if head.len() != teacher.len() {
        return Err(Error::Contract(format!(
            "{} head questions vs {} teacher questions",
            head.len(),
            teacher.len()
        )));
    }
    let mut count = AgreementCount {
        agreed: 0,
        head_correct: 0,
    };
    for (h, t) in head.iter().zip(teacher) {
        if h.question_id != t.question_id || h.candidate_ids != t.candidate_ids {
            return Err(Error::Contract(format!(
                "question sets differ at {} / {}",
                h.question_id, t.question_id
            )));
        }
        let pick = select_index(h)?;
        if h.labels[pick] == 1 {
            count.head_correct += 1;
            if select_index(t)? == pick {
                count.agreed += 1;
            }
        }
    }
    Ok(count)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementMatrix {
    pub heads: Vec<String>,
    pub teachers: Vec<String>,
    /// `counts[i][j]` for head `i` and teacher `j`.
    pub counts: Vec<Vec<AgreementCount>>,
    pub p_at_1: BTreeMap<String, f64>,
}

impl AgreementMatrix {
    pub fn build(
        heads: &[(String, Vec<ScoredQuestion>)],
        teachers: &[(String, Vec<ScoredQuestion>)],
    ) -> Result<Self> {
        let counts = heads
            .iter()
            .map(|(_, h)| {
                teachers
                    .iter()
                    .map(|(_, t)| agreement(h, t))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let p_at_1 = heads
            .iter()
            .chain(teachers)
            .map(|(name, qs)| (name.clone(), precision_at_1(qs)))
            .collect();
        Ok(AgreementMatrix {
            heads: heads.iter().map(|(n, _)| n.clone()).collect(),
            teachers: teachers.iter().map(|(n, _)| n.clone()).collect(),
            counts,
            p_at_1,
        })
    }

    pub fn value(&self, head: usize, teacher: usize) -> Option<f64> {
        self.counts[head][teacher].value()
    }

    /// Long-format CSV; undefined entries have an empty `agreement` field.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("head,teacher,agreement,agreed,head_correct\n");
        for (i, head) in self.heads.iter().enumerate() {
            for (j, teacher) in self.teachers.iter().enumerate() {
                let c = self.counts[i][j];
                let v = c.value().map(|v| v.to_string()).unwrap_or_default();
                writeln!(out, "{head},{teacher},{v},{},{}", c.agreed, c.head_correct)
                    .expect("write to string");
            }
        }
        out
    }
}
