//! Synthetic AS2 corpus.
//!
//! Every question names a latent topic. A correct answer carries the answer
//! marker together with that topic's word. Negatives come from distractor
//! patterns: the marker next to another topic's word, or the question's topic
//! word without the marker. A misleading candidate, of either label, shows
//! the correct pattern plus a hedge word, so its surface form says nothing
//! about its label. The pattern leads each candidate and two to four filler
//! words follow it; question words are shuffled.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{As2Dataset, Candidate, Question, Split};
use crate::error::{Error, Result};

const WH_WORDS: [&str; 4] = ["what", "who", "which", "when"];
const MARKER: &str = "ans";
const HEDGE: &str = "maybe";

fn default_positive_rate() -> f64 {
    1.0 / 25.0
}
fn default_noise() -> f64 {
    0.15
}
fn default_vocab() -> usize {
    VOCAB_DEFAULT
}
fn default_topics() -> usize {
    12
}

const VOCAB_DEFAULT: usize = 80;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub num_train: usize,
    pub num_dev: usize,
    pub num_test: usize,
    pub candidates_per_question: usize,
    #[serde(default = "default_positive_rate")]
    pub positive_rate: f64,
    #[serde(default = "default_noise")]
    pub noise_rate: f64,
    /// Upper bound on distinct content words.
    #[serde(default = "default_vocab")]
    pub vocab_size: usize,
    #[serde(default = "default_topics")]
    pub num_topics: usize,
    pub seed: u64,
}

impl GeneratorConfig {
    pub fn new(seed: u64) -> Self {
        GeneratorConfig {
            num_train: 600,
            num_dev: 100,
            num_test: 200,
            candidates_per_question: 20,
            positive_rate: default_positive_rate(),
            noise_rate: default_noise(),
            vocab_size: default_vocab(),
            num_topics: default_topics(),
            seed,
        }
    }

    /// The standard desk benchmark: 600/100/200 questions, 20 candidates,
    /// one positive in ten, 15% misleading surface forms.
    pub fn desk_benchmark(seed: u64) -> Self {
        GeneratorConfig {
            positive_rate: 0.1,
            ..Self::new(seed)
        }
    }

    /// Extreme class imbalance (one positive in 400 candidates).
    pub fn imbalance_stress(seed: u64) -> Self {
        GeneratorConfig {
            positive_rate: 1.0 / 400.0,
            ..Self::new(seed)
        }
    }

    fn num_fillers(&self) -> isize {
        self.vocab_size as isize - (self.num_topics + 2 + WH_WORDS.len()) as isize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.positive_rate > 0.0 && self.positive_rate <= 1.0) {
            return Err(Error::Config(format!(
                "positive_rate {} must lie in (0, 1]",
                self.positive_rate
            )));
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(Error::Config(format!(
                "noise_rate {} must lie in [0, 1)",
                self.noise_rate
            )));
        }
        if self.candidates_per_question == 0 {
            return Err(Error::Config(
                "candidates_per_question must be positive".into(),
            ));
        }
        if self.num_topics < 2 {
            return Err(Error::Config("need at least 2 topics".into()));
        }
        if self.num_fillers() < 8 {
            return Err(Error::Config(format!(
                "vocab_size {} leaves too few filler words",
                self.vocab_size
            )));
        }
        Ok(())
    }
}

struct Generator<'a> {
    cfg: &'a GeneratorConfig,
    rng: ChaCha8Rng,
    fillers: usize,
}

impl Generator<'_> {
    fn other_topic(&mut self, t: usize) -> usize {
        let u = self.rng.gen_range(0..self.cfg.num_topics - 1);
        if u >= t {
            u + 1
        } else {
            u
        }
    }

    fn filler(&mut self) -> String {
        format!("w{}", self.rng.gen_range(0..self.fillers))
    }

    fn candidate_words(&mut self, topic: usize, label: u8) -> Vec<String> {
        let mut words = if self.rng.gen_bool(self.cfg.noise_rate) {
            vec![MARKER.into(), format!("topic{topic}"), HEDGE.into()]
        } else if label == 1 {
            vec![MARKER.into(), format!("topic{topic}")]
        } else if self.rng.gen_bool(2.0 / 3.0) {
            let u = self.other_topic(topic);
            vec![MARKER.into(), format!("topic{u}")]
        } else {
            vec![format!("topic{topic}")]
        };
        let n = self.rng.gen_range(2..=4);
        for _ in 0..n {
            words.push(self.filler());
        }
        words
    }

    fn question(&mut self, split: Split, index: usize) -> Question {
        let cfg = self.cfg;
        let topic = self.rng.gen_range(0..cfg.num_topics);
        let mut body = [format!("topic{topic}"), self.filler(), self.filler()];
        body.shuffle(&mut self.rng);
        let wh = WH_WORDS[self.rng.gen_range(0..WH_WORDS.len())];
        let text = format!("{wh} {}", body.join(" "));
        let labels: Vec<u8> = loop {
            let labels: Vec<u8> = (0..cfg.candidates_per_question)
                .map(|_| u8::from(self.rng.gen_bool(cfg.positive_rate)))
                .collect();
            if split != Split::Train || labels.contains(&1) {
                break labels;
            }
        };
        let question_id = format!("{}-q{index:05}", split.name());
        let candidates = labels
            .into_iter()
            .enumerate()
            .map(|(j, label)| Candidate {
                example_id: format!("{question_id}-c{j:03}"),
                text: self.candidate_words(topic, label).join(" "),
                label,
            })
            .collect();
        Question {
            question_id,
            text,
            candidates,
        }
    }
}

/// Deterministic in `cfg.seed`; each split draws from its own stream.
/// Training questions without a positive are redrawn.
pub fn generate(cfg: &GeneratorConfig) -> Result<As2Dataset> {
    cfg.validate()?;
    let mut splits = Vec::with_capacity(3);
    for (stream, split) in Split::ALL.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream as u64 + 1);
        let mut g = Generator {
            cfg,
            rng,
            fillers: cfg.num_fillers() as usize,
        };
        let n = match split {
            Split::Train => cfg.num_train,
            Split::Dev => cfg.num_dev,
            Split::Test => cfg.num_test,
        };
        splits.push((0..n).map(|i| g.question(split, i)).collect::<Vec<_>>());
    }
    let test = splits.pop().unwrap_or_default();
    let dev = splits.pop().unwrap_or_default();
    let train = splits.pop().unwrap_or_default();
    As2Dataset::new(train, dev, test)
}
