//! One [`Question`] per line:
//! `{"question_id": str, "text": str, "candidates": [{"example_id", "text", "label"}]}`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::dataset::validate_question;
use super::{As2Dataset, Question, Split};
use crate::error::{Error, Result};

pub fn save_split(questions: &[Question], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for q in questions {
        serde_json::to_writer(&mut w, q)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Parse one split. Every rejection names the offending line.
pub fn load_split(path: &Path, split: Split) -> Result<Vec<Question>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    let mut qids = HashSet::new();
    let mut eids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg,
        };
        if line.trim().is_empty() {
            continue;
        }
        let q: Question = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        validate_question(&q, split).map_err(|e| err(e.to_string()))?;
        if !qids.insert(q.question_id.clone()) {
            return Err(err(format!("duplicate question id {}", q.question_id)));
        }
        for c in &q.candidates {
            if !eids.insert(c.example_id.clone()) {
                return Err(err(format!("duplicate example id {}", c.example_id)));
            }
        }
        out.push(q);
    }
    Ok(out)
}

pub fn split_path(dir: &Path, split: Split) -> std::path::PathBuf {
    dir.join(format!("{}.jsonl", split.name()))
}

/// Write `train.jsonl`, `dev.jsonl` and `test.jsonl` under `dir`.
pub fn save_dataset(ds: &As2Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for split in Split::ALL {
        save_split(ds.split(split), &split_path(dir, split))?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<As2Dataset> {
    let train = load_split(&split_path(dir, Split::Train), Split::Train)?;
    let dev = load_split(&split_path(dir, Split::Dev), Split::Dev)?;
    let test = load_split(&split_path(dir, Split::Test), Split::Test)?;
    As2Dataset::new(train, dev, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    const GOOD: &str = r#"{"question_id":"q1","text":"who a","candidates":[{"example_id":"e1","text":"b","label":1},{"example_id":"e2","text":"c","label":0}]}"#;

    #[test]
    fn bad_label_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let bad = r#"{"question_id":"q2","text":"x","candidates":[{"example_id":"e3","text":"y","label":2}]}"#;
        let p = write(dir.path(), "s.jsonl", &format!("{GOOD}\n{bad}\n"));
        match load_split(&p, Split::Test) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("label 2"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicates_and_empty_candidates_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "d.jsonl", &format!("{GOOD}\n{GOOD}\n"));
        assert!(matches!(
            load_split(&p, Split::Dev),
            Err(Error::Parse { line: 2, .. })
        ));
        let empty = r#"{"question_id":"q9","text":"x","candidates":[]}"#;
        let p = write(dir.path(), "e.jsonl", empty);
        assert!(matches!(
            load_split(&p, Split::Dev),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn all_negative_rejected_in_train_only() {
        let dir = tempfile::tempdir().unwrap();
        let neg = r#"{"question_id":"q3","text":"x","candidates":[{"example_id":"e4","text":"y","label":0}]}"#;
        let p = write(dir.path(), "n.jsonl", neg);
        assert!(matches!(
            load_split(&p, Split::Train),
            Err(Error::Parse { line: 1, .. })
        ));
        assert_eq!(load_split(&p, Split::Test).unwrap().len(), 1);
    }
}
