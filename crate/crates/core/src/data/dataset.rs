use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::Vocabulary;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub example_id: String,
    pub text: String,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub question_id: String,
    pub text: String,
    pub candidates: Vec<Candidate>,
}

impl Question {
    pub fn has_positive(&self) -> bool {
        self.candidates.iter().any(|c| c.label == 1)
    }

    pub fn labels(&self) -> Vec<u8> {
        self.candidates.iter().map(|c| c.label).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct As2Dataset {
    pub train: Vec<Question>,
    pub dev: Vec<Question>,
    pub test: Vec<Question>,
    pub vocabulary: Vocabulary,
}

impl As2Dataset {
    /// Build a dataset and derive its vocabulary from every split's text.
    pub fn new(train: Vec<Question>, dev: Vec<Question>, test: Vec<Question>) -> Result<Self> {
        let vocabulary = Vocabulary::from_questions(train.iter().chain(&dev).chain(&test));
        let ds = As2Dataset {
            train,
            dev,
            test,
            vocabulary,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn split(&self, split: Split) -> &[Question] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn num_pairs(&self, split: Split) -> usize {
        self.split(split).iter().map(|q| q.candidates.len()).sum()
    }

    /// Split hygiene: disjoint question ids, unique example ids, nonempty
    /// candidate lists, binary labels, and no all-negative training question.
    pub fn validate(&self) -> Result<()> {
        let mut qids = HashSet::new();
        let mut eids = HashSet::new();
        for split in Split::ALL {
            for q in self.split(split) {
                validate_question(q, split)?;
                if !qids.insert(q.question_id.as_str()) {
                    return Err(Error::Contract(format!(
                        "question id {} appears more than once",
                        q.question_id
                    )));
                }
                for c in &q.candidates {
                    if !eids.insert(c.example_id.as_str()) {
                        return Err(Error::Contract(format!(
                            "example id {} appears more than once",
                            c.example_id
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn validate_question(q: &Question, split: Split) -> Result<()> {
    if q.candidates.is_empty() {
        return Err(Error::Contract(format!(
            "question {} has no candidates",
            q.question_id
        )));
    }
    if let Some(c) = q.candidates.iter().find(|c| c.label > 1) {
        return Err(Error::Contract(format!(
            "candidate {} has label {} (expected 0 or 1)",
            c.example_id, c.label
        )));
    }
    if split == Split::Train && !q.has_positive() {
        return Err(Error::Contract(format!(
            "training question {} has no positive candidate",
            q.question_id
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(id: &str, labels: &[u8]) -> Question {
        Question {
            question_id: id.into(),
            text: "what x".into(),
            candidates: labels
                .iter()
                .enumerate()
                .map(|(i, &l)| Candidate {
                    example_id: format!("{id}-{i}"),
                    text: "y".into(),
                    label: l,
                })
                .collect(),
        }
    }

    #[test]
    fn all_negative_allowed_only_outside_train() {
        assert!(As2Dataset::new(vec![q("a", &[0, 0])], vec![], vec![]).is_err());
        assert!(As2Dataset::new(vec![q("a", &[0, 1])], vec![], vec![q("b", &[0, 0])]).is_ok());
    }

    #[test]
    fn question_ids_disjoint_across_splits() {
        let err = As2Dataset::new(vec![q("a", &[1])], vec![q("a", &[1])], vec![]);
        assert!(err.is_err());
    }
}
