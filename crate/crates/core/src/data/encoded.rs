use super::{Question, Vocabulary};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedCandidate {
    pub example_id: String,
    pub tokens: Vec<usize>,
    pub label: u8,
}

/// A question and its candidates with text replaced by token ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedQuestion {
    pub question_id: String,
    pub tokens: Vec<usize>,
    pub candidates: Vec<EncodedCandidate>,
}

impl EncodedQuestion {
    pub fn labels(&self) -> Vec<u8> {
        self.candidates.iter().map(|c| c.label).collect()
    }

    pub fn pair(&self, candidate: usize) -> (&[usize], &[usize]) {
        (&self.tokens, &self.candidates[candidate].tokens)
    }
}

pub fn encode_questions(vocab: &Vocabulary, questions: &[Question]) -> Vec<EncodedQuestion> {
    questions
        .iter()
        .map(|q| EncodedQuestion {
            question_id: q.question_id.clone(),
            tokens: vocab.tokenize(&q.text),
            candidates: q
                .candidates
                .iter()
                .map(|c| EncodedCandidate {
                    example_id: c.example_id.clone(),
                    tokens: vocab.tokenize(&c.text),
                    label: c.label,
                })
                .collect(),
        })
        .collect()
}
