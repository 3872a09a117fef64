use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::EncodedQuestion;
use crate::error::{Error, Result};
use crate::model::{forward_questions, pool, Model, PoolingSpace};

/// Teacher logits for every candidate of a question list, computed once.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherLogits {
    pub teacher_id: String,
    pub logits: Vec<Vec<[f64; 2]>>,
}

impl TeacherLogits {
    pub fn get(&self, question: usize, candidate: usize) -> [f64; 2] {
        self.logits[question][candidate]
    }

    pub fn matches(&self, questions: &[EncodedQuestion]) -> bool {
        self.logits.len() == questions.len()
            && self
                .logits
                .iter()
                .zip(questions)
                .all(|(l, q)| l.len() == q.candidates.len())
    }

    /// Write as a cache: one `{"example_id", "teacher_id", "logits"}` record
    /// per candidate.
    pub fn write_cache(&self, questions: &[EncodedQuestion], path: &Path) -> Result<()> {
        if !self.matches(questions) {
            return Err(Error::Contract(
                "teacher logits do not match questions".into(),
            ));
        }
        let mut w = BufWriter::new(File::create(path)?);
        for (q, ls) in questions.iter().zip(&self.logits) {
            for (c, l) in q.candidates.iter().zip(ls) {
                let rec = CacheRecord {
                    example_id: c.example_id.clone(),
                    teacher_id: self.teacher_id.clone(),
                    logits: *l,
                };
                serde_json::to_writer(&mut w, &rec)?;
                w.write_all(b"\n")?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// A frozen scorer of (question, candidate) pairs.
pub trait Teacher {
    fn id(&self) -> &str;
    fn logits(&self, questions: &[EncodedQuestion]) -> Result<TeacherLogits>;
}

/// Pooled output in logit space, whatever the model's own pooling.
fn model_logits(model: &Model, questions: &[EncodedQuestion]) -> Result<Vec<Vec<[f64; 2]>>> {
    Ok(forward_questions(model, questions)?
        .into_iter()
        .map(|outs| {
            outs.into_iter()
                .map(|o| pool(&o.per_head, PoolingSpace::LogitMean))
                .collect()
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct ModelTeacher {
    pub id: String,
    pub model: Model,
}

impl Teacher for ModelTeacher {
    fn id(&self) -> &str {
        &self.id
    }

    fn logits(&self, questions: &[EncodedQuestion]) -> Result<TeacherLogits> {
        Ok(TeacherLogits {
            teacher_id: self.id.clone(),
            logits: model_logits(&self.model, questions)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub example_id: String,
    pub teacher_id: String,
    pub logits: [f64; 2],
}

/// Teacher backed by a logit cache keyed by example id.
#[derive(Clone, Debug)]
pub struct CachedTeacher {
    id: String,
    cache: HashMap<String, [f64; 2]>,
}

impl CachedTeacher {
    /// Load every record for `teacher_id` from a JSON-lines cache.
    pub fn load(path: &Path, teacher_id: &str) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut cache = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let rec: CacheRecord = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
            if rec.teacher_id != teacher_id {
                continue;
            }
            if !(rec.logits[0].is_finite() && rec.logits[1].is_finite()) {
                return Err(parse("non-finite logits".into()));
            }
            if cache.insert(rec.example_id.clone(), rec.logits).is_some() {
                return Err(parse(format!("duplicate example {}", rec.example_id)));
            }
        }
        Ok(CachedTeacher {
            id: teacher_id.to_string(),
            cache,
        })
    }

    pub fn len(&self) -> usize {
        self.cache.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cache.is_empty()
    }
}

impl Teacher for CachedTeacher {
    fn id(&self) -> &str {
        &self.id
    }

    fn logits(&self, questions: &[EncodedQuestion]) -> Result<TeacherLogits> {
        let logits = questions
            .iter()
            .map(|q| {
                q.candidates
                    .iter()
                    .map(|c| {
                        self.cache.get(&c.example_id).copied().ok_or_else(|| {
                            Error::Contract(format!(
                                "teacher {} has no logits for {}",
                                self.id, c.example_id
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TeacherLogits {
            teacher_id: self.id.clone(),
            logits,
        })
    }
}

/// Several models averaged in logit space and used as one teacher. Known to
/// be a weak teacher; kept for comparison runs.
#[derive(Clone, Debug)]
pub struct EnsembleTeacher {
    pub id: String,
    pub members: Vec<Model>,
}

impl Teacher for EnsembleTeacher {
    fn id(&self) -> &str {
        &self.id
    }

    fn logits(&self, questions: &[EncodedQuestion]) -> Result<TeacherLogits> {
        if self.members.is_empty() {
            return Err(Error::Config("ensemble teacher has no members".into()));
        }
        let per_member = self
            .members
            .iter()
            .map(|m| model_logits(m, questions))
            .collect::<Result<Vec<_>>>()?;
        let logits = (0..questions.len())
            .map(|q| {
                (0..questions[q].candidates.len())
                    .map(|c| {
                        let zs: Vec<[f64; 2]> = per_member.iter().map(|m| m[q][c]).collect();
                        pool(&zs, PoolingSpace::LogitMean)
                    })
                    .collect()
            })
            .collect();
        Ok(TeacherLogits {
            teacher_id: self.id.clone(),
            logits,
        })
    }
}
