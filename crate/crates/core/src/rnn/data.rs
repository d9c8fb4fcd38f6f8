use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Byte-level vocabulary: one id per distinct corpus byte, one id for
/// unseen bytes, then padding ids up to a multiple of `align` so every
/// vocabulary-sized matrix dimension tiles into blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    bytes: Vec<u8>,
    size: usize,
    lookup: [u32; 256],
}

impl Vocab {
    pub fn build(corpus: &[u8], align: usize) -> Self {
        let mut seen = [false; 256];
        corpus.iter().for_each(|&b| seen[b as usize] = true);
        let bytes: Vec<u8> = (0..=255u8).filter(|&b| seen[b as usize]).collect();
        Self::from_bytes(bytes, align)
    }

    pub fn from_bytes(bytes: Vec<u8>, align: usize) -> Self {
        let align = align.max(1);
        let used = bytes.len() + 1;
        let size = used.div_ceil(align) * align;
        Self::with_size(bytes, size).expect("size covers the used ids")
    }

    pub fn with_size(bytes: Vec<u8>, size: usize) -> Result<Self> {
        if size < bytes.len() + 1 {
            return Err(Error::Corrupt(format!(
                "vocabulary size {size} cannot hold {} bytes plus unknown",
                bytes.len()
            )));
        }
        let unk = bytes.len() as u32;
        let mut lookup = [unk; 256];
        for (i, &b) in bytes.iter().enumerate() {
            lookup[b as usize] = i as u32;
        }
        Ok(Self {
            bytes,
            size,
            lookup,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn unknown_id(&self) -> u32 {
        self.bytes.len() as u32
    }

    pub fn encode(&self, text: &[u8]) -> Vec<u32> {
        text.iter().map(|&b| self.lookup[b as usize]).collect()
    }
}

/// One truncated-BPTT window: `inputs[t * batch + b]` predicts `targets[t * batch + b]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub batch: usize,
    pub steps: usize,
    pub inputs: Vec<u32>,
    pub targets: Vec<u32>,
}

impl Batch {
    pub fn new(batch: usize, steps: usize, inputs: Vec<u32>, targets: Vec<u32>) -> Result<Self> {
        if batch == 0 || steps == 0 || inputs.len() != batch * steps || targets.len() != inputs.len()
        {
            return Err(Error::ShapeMismatch(format!(
                "batch {batch}x{steps} with {} inputs and {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        Ok(Self {
            batch,
            steps,
            inputs,
            targets,
        })
    }
}

/// Splits a token stream into `batch` contiguous lanes and walks them in
/// `seq_len` windows, so hidden state can be carried from one window to
/// the next within an epoch.
#[derive(Debug, Clone)]
pub struct StreamBatcher {
    tokens: Vec<u32>,
    batch: usize,
    seq_len: usize,
    lane_len: usize,
}

impl StreamBatcher {
    pub fn new(tokens: Vec<u32>, batch: usize, seq_len: usize) -> Result<Self> {
        if batch == 0 || seq_len == 0 {
            return Err(Error::Config("batch and sequence length must be positive".into()));
        }
        let lane_len = tokens.len() / batch;
        if lane_len < seq_len + 1 {
            return Err(Error::Config(format!(
                "corpus of {} tokens is too short for batch {batch} and sequence length {seq_len}",
                tokens.len()
            )));
        }
        Ok(Self {
            tokens,
            batch,
            seq_len,
            lane_len,
        })
    }

    pub fn iters_per_epoch(&self) -> usize {
        (self.lane_len - 1) / self.seq_len
    }

    pub fn batch(&self, i: usize) -> Batch {
        let (b_n, t_n) = (self.batch, self.seq_len);
        let mut inputs = Vec::with_capacity(b_n * t_n);
        let mut targets = Vec::with_capacity(b_n * t_n);
        for t in 0..t_n {
            for b in 0..b_n {
                let p = b * self.lane_len + i * t_n + t;
                inputs.push(self.tokens[p]);
                targets.push(self.tokens[p + 1]);
            }
        }
        Batch {
            batch: b_n,
            steps: t_n,
            inputs,
            targets,
        }
    }
}

/// Splits raw bytes into (train, validation) at the last `valid_fraction`.
pub fn split_corpus(corpus: &[u8], valid_fraction: f64) -> Result<(&[u8], &[u8])> {
    if !(0.0..1.0).contains(&valid_fraction) {
        return Err(Error::Config(format!(
            "validation fraction must be in [0, 1), got {valid_fraction}"
        )));
    }
    let cut = corpus.len() - (corpus.len() as f64 * valid_fraction) as usize;
    Ok(corpus.split_at(cut))
}

const NOUNS: &[(&str, &str)] = &[
    ("cat", "cats"),
    ("dog", "dogs"),
    ("bird", "birds"),
    ("child", "children"),
    ("farmer", "farmers"),
    ("teacher", "teachers"),
    ("river", "rivers"),
    ("city", "cities"),
    ("machine", "machines"),
    ("garden", "gardens"),
    ("window", "windows"),
    ("story", "stories"),
    ("engine", "engines"),
    ("letter", "letters"),
    ("mountain", "mountains"),
    ("student", "students"),
    ("painter", "painters"),
    ("village", "villages"),
    ("signal", "signals"),
    ("network", "networks"),
];

const VERBS: &[(&str, &str)] = &[
    ("sees", "see"),
    ("finds", "find"),
    ("likes", "like"),
    ("carries", "carry"),
    ("follows", "follow"),
    ("watches", "watch"),
    ("builds", "build"),
    ("remembers", "remember"),
    ("opens", "open"),
    ("paints", "paint"),
    ("writes", "write"),
    ("teaches", "teach"),
];

const INTRANSITIVE: &[(&str, &str)] = &[
    ("sleeps", "sleep"),
    ("runs", "run"),
    ("waits", "wait"),
    ("sings", "sing"),
    ("works", "work"),
    ("falls", "fall"),
];

const ADJECTIVES: &[&str] = &[
    "old", "small", "quiet", "bright", "green", "heavy", "young", "strange", "warm", "empty",
    "busy", "gentle",
];

const ADVERBS: &[&str] = &["slowly", "again", "today", "often", "quickly", "there", "alone"];

const PLACES: &[&str] = &[
    "near the river",
    "in the city",
    "under the bridge",
    "by the window",
    "on the mountain",
    "at the station",
    "in the garden",
];

/// Deterministic English-like text from a small stochastic grammar with
/// number agreement, used as a desk-scale language-modelling corpus.
pub fn synthetic_corpus(seed: u64, n_bytes: usize) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::with_capacity(n_bytes + 128);
    while out.len() < n_bytes {
        let sentence = sentence(&mut rng);
        out.push_str(&sentence);
        out.push(if rng.gen_bool(0.15) { '\n' } else { ' ' });
    }
    out.truncate(n_bytes);
    out.into_bytes()
}

fn noun_phrase(rng: &mut ChaCha8Rng, plural: bool) -> String {
    let (sg, pl) = *NOUNS.choose(rng).unwrap();
    let det = if plural {
        *["the", "some", "many", "two"].choose(rng).unwrap()
    } else {
        *["the", "a", "one", "every"].choose(rng).unwrap()
    };
    let noun = if plural { pl } else { sg };
    if rng.gen_bool(0.4) {
        let adj = *ADJECTIVES.choose(rng).unwrap();
        let det = if det == "a" && adj.starts_with(['a', 'e', 'i', 'o', 'u']) {
            "an"
        } else {
            det
        };
        format!("{det} {adj} {noun}")
    } else {
        format!("{det} {noun}")
    }
}

fn clause(rng: &mut ChaCha8Rng) -> String {
    let plural = rng.gen_bool(0.4);
    let subject = noun_phrase(rng, plural);
    let mut s = if rng.gen_bool(0.65) {
        let (sg, pl) = *VERBS.choose(rng).unwrap();
        let object_plural = rng.gen_bool(0.5);
        let object = noun_phrase(rng, object_plural);
        format!("{subject} {} {object}", if plural { pl } else { sg })
    } else {
        let (sg, pl) = *INTRANSITIVE.choose(rng).unwrap();
        format!("{subject} {}", if plural { pl } else { sg })
    };
    if rng.gen_bool(0.3) {
        s.push(' ');
        s.push_str(PLACES.choose(rng).unwrap());
    }
    if rng.gen_bool(0.2) {
        s.push(' ');
        s.push_str(ADVERBS.choose(rng).unwrap());
    }
    s
}

fn sentence(rng: &mut ChaCha8Rng) -> String {
    let mut s = clause(rng);
    if rng.gen_bool(0.25) {
        s.push_str(*[" and ", " but ", " because "].choose(rng).unwrap());
        s.push_str(&clause(rng));
    }
    let mut chars = s.chars();
    let first = chars.next().unwrap().to_ascii_uppercase();
    let end = if rng.gen_bool(0.1) { '?' } else { '.' };
    format!("{first}{}{end}", chars.as_str())
}
