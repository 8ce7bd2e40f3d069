//! Synthetic cue corpora with a known scoring rule.
//!
//! Every sentence has two verbs: the annotated anchor and a second verb that
//! heads its own clause. Each lexicon cue attaches to the anchor with
//! probability `cue_rate` and, independently, to the second verb with
//! probability `distractor_rate`. Filler words attach to the anchor with
//! probability `filler_anchor_rate` and to the second verb otherwise. The
//! gold score starts at `base` and applies the effects of the cues attached
//! to the anchor, in lexicon order, then clamps to [-3, 3]. Cues attached to the second verb never count.
//!
//! Placement policies:
//!
//! * `sequence-adjacent`: each cue sits next to the verb it attaches to.
//! * `tree-adjacent-far`: every cue (anchor or distractor) sits at least
//!   [`FAR_DISTANCE`] tokens away from the anchor, so word order does not tell
//!   which verb a cue modifies; only the tree does.
//!
//! Spec files use the flat `key = value` format; `cue` may repeat:
//!
//! ```text
//! seed = 7
//! train_sentences = 32
//! dev_sentences = 16
//! test_sentences = 16
//! min_length = 8
//! max_length = 14
//! base = 3.0
//! placement = sequence-adjacent
//! cue_rate = 0.5
//! distractor_rate = 0.0
//! filler_anchor_rate = 0.5
//! embedding_dim = 16
//! filler_words = 16
//! verb_words = 4
//! cue = might shift -2
//! cue = not flip
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    join_and_split, read_file, serialize_conllu, Annotation, DatasetSplit, ParsedSentence, Split,
    Token, ANNOTATIONS_FILE, CONLLU_FILE, MAX_SCORE, MIN_SCORE, SPLITS_FILE,
};
use crate::embeddings::EmbeddingTable;
use crate::error::{with_path, Error, Result};

/// Minimum linear distance between the anchor and any cue under
/// [`Placement::TreeAdjacentFar`].
pub const FAR_DISTANCE: usize = 6;

/// Name of the embedding file written next to the corpus.
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";

const ANCHOR_VERBS: &[&str] = &["go", "leave", "stay", "return"];
const CLAUSE_VERBS: &[&str] = &["arrive", "win", "sleep", "call"];
const FILLERS: &[&str] = &[
    "the", "a", "house", "after", "when", "friend", "today", "city", "with", "old", "red", "door",
    "quickly", "morning", "they", "we",
];
const EMBEDDING_STREAM: u64 = 0xe3be_dd17;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CueEffect {
    /// Negates the running score.
    Flip,
    /// Adds a constant to the running score.
    Shift(f64),
}

impl CueEffect {
    pub fn apply(self, score: f64) -> f64 {
        match self {
            CueEffect::Flip => -score,
            CueEffect::Shift(d) => score + d,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cue {
    pub word: String,
    pub effect: CueEffect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    SequenceAdjacent,
    TreeAdjacentFar,
}

impl FromStr for Placement {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sequence-adjacent" => Ok(Placement::SequenceAdjacent),
            "tree-adjacent-far" => Ok(Placement::TreeAdjacentFar),
            other => Err(format!(
                "unknown placement {other:?}, expected sequence-adjacent or tree-adjacent-far"
            )),
        }
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Placement::SequenceAdjacent => "sequence-adjacent",
            Placement::TreeAdjacentFar => "tree-adjacent-far",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub train_sentences: usize,
    pub dev_sentences: usize,
    pub test_sentences: usize,
    pub min_length: usize,
    pub max_length: usize,
    pub base: f64,
    pub placement: Placement,
    pub cue_rate: f64,
    pub distractor_rate: f64,
    pub filler_anchor_rate: f64,
    pub embedding_dim: usize,
    /// How many words of the built-in filler list are used.
    pub filler_words: usize,
    /// How many words of the built-in verb list are used.
    pub verb_words: usize,
    pub cues: Vec<Cue>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            train_sentences: 32,
            dev_sentences: 16,
            test_sentences: 16,
            min_length: 8,
            max_length: 14,
            base: 3.0,
            placement: Placement::SequenceAdjacent,
            cue_rate: 0.5,
            distractor_rate: 0.0,
            filler_anchor_rate: 0.5,
            embedding_dim: 16,
            filler_words: FILLERS.len(),
            verb_words: ANCHOR_VERBS.len(),
            cues: vec![
                Cue {
                    word: "might".into(),
                    effect: CueEffect::Shift(-2.0),
                },
                Cue {
                    word: "not".into(),
                    effect: CueEffect::Flip,
                },
            ],
        }
    }
}

fn spec_err(line: usize, msg: impl fmt::Display) -> Error {
    Error::Config(format!("synth spec line {line}: {msg}"))
}

fn parse_cue(raw: &str, line: usize) -> Result<Cue> {
    let parts: Vec<&str> = raw.split_whitespace().collect();
    let effect = match parts.as_slice() {
        [_, "flip"] => CueEffect::Flip,
        [_, "shift", d] => CueEffect::Shift(
            d.parse()
                .map_err(|_| spec_err(line, format!("invalid shift {d:?}")))?,
        ),
        _ => {
            return Err(spec_err(
                line,
                format!("expected `cue = WORD flip` or `cue = WORD shift D`, got {raw:?}"),
            ))
        }
    };
    Ok(Cue {
        word: parts[0].to_string(),
        effect,
    })
}

impl SynthSpec {
    /// Parses a spec; keys absent from `text` keep their default, and any
    /// `cue` line replaces the default lexicon.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        let mut cues = Vec::new();
        let mut saw_cue_key = false;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split(" #").next().unwrap_or("").trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| spec_err(line, "expected key = value"))?;
            fn num<T: FromStr>(v: &str, line: usize, key: &str) -> Result<T> {
                v.parse()
                    .map_err(|_| spec_err(line, format!("invalid value {v:?} for {key}")))
            }
            match key {
                "seed" => spec.seed = num(value, line, key)?,
                "train_sentences" | "n_sentences" => spec.train_sentences = num(value, line, key)?,
                "dev_sentences" => spec.dev_sentences = num(value, line, key)?,
                "test_sentences" => spec.test_sentences = num(value, line, key)?,
                "min_length" => spec.min_length = num(value, line, key)?,
                "max_length" => spec.max_length = num(value, line, key)?,
                "base" => spec.base = num(value, line, key)?,
                "placement" => spec.placement = value.parse().map_err(|e| spec_err(line, e))?,
                "cue_rate" => spec.cue_rate = num(value, line, key)?,
                "distractor_rate" => spec.distractor_rate = num(value, line, key)?,
                "filler_anchor_rate" => spec.filler_anchor_rate = num(value, line, key)?,
                "embedding_dim" => spec.embedding_dim = num(value, line, key)?,
                "filler_words" => spec.filler_words = num(value, line, key)?,
                "verb_words" => spec.verb_words = num(value, line, key)?,
                "cues" if value == "none" => saw_cue_key = true,
                "cue" => {
                    saw_cue_key = true;
                    cues.push(parse_cue(value, line)?);
                }
                other => return Err(spec_err(line, format!("unknown key {other}"))),
            }
        }
        if saw_cue_key {
            spec.cues = cues;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&read_file(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(format!("synth spec: {m}")));
        if self.train_sentences == 0 {
            return err("train_sentences must be positive".into());
        }
        if self.embedding_dim == 0 {
            return err("embedding_dim must be positive".into());
        }
        if !(1..=FILLERS.len()).contains(&self.filler_words) {
            return err(format!("filler_words must lie in 1..={}", FILLERS.len()));
        }
        if !(1..=ANCHOR_VERBS.len()).contains(&self.verb_words) {
            return err(format!("verb_words must lie in 1..={}", ANCHOR_VERBS.len()));
        }
        if self.min_length > self.max_length {
            return err(format!(
                "min_length {} exceeds max_length {}",
                self.min_length, self.max_length
            ));
        }
        let needed = 2 + 2 * self.cues.len();
        let needed = match self.placement {
            Placement::SequenceAdjacent => needed,
            Placement::TreeAdjacentFar => needed.max(FAR_DISTANCE + 1 + 2 * self.cues.len()),
        };
        if self.min_length < needed {
            return err(format!(
                "min_length must be at least {needed} for this lexicon and placement"
            ));
        }
        if !(MIN_SCORE..=MAX_SCORE).contains(&self.base) {
            return err(format!("base {} outside [-3, 3]", self.base));
        }
        for (name, p) in [
            ("cue_rate", self.cue_rate),
            ("distractor_rate", self.distractor_rate),
            ("filler_anchor_rate", self.filler_anchor_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return err(format!("{name} must lie in [0, 1]"));
            }
        }
        for (i, c) in self.cues.iter().enumerate() {
            let w = c.word.as_str();
            if ANCHOR_VERBS.contains(&w) || CLAUSE_VERBS.contains(&w) || FILLERS.contains(&w) {
                return err(format!(
                    "cue {:?} collides with the base vocabulary",
                    c.word
                ));
            }
            if self.cues[..i].iter().any(|o| o.word == c.word) {
                return err(format!("cue {:?} listed twice", c.word));
            }
        }
        Ok(())
    }

    /// Gold score for a set of anchor cues given as lexicon flags.
    pub fn score(&self, anchor_cues: &[bool]) -> f64 {
        self.cues
            .iter()
            .zip(anchor_cues)
            .filter(|(_, &on)| on)
            .fold(self.base, |s, (c, _)| c.effect.apply(s))
            .clamp(MIN_SCORE, MAX_SCORE)
    }

    pub fn total_sentences(&self) -> usize {
        self.train_sentences + self.dev_sentences + self.test_sentences
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub sentences: Vec<ParsedSentence>,
    pub annotations: Vec<Annotation>,
    pub manifest: Vec<(String, Split)>,
    pub embeddings: EmbeddingTable,
}

impl SynthCorpus {
    pub fn dataset(&self) -> Result<DatasetSplit> {
        join_and_split(&self.sentences, &self.annotations, &self.manifest)
    }

    pub fn annotations_text(&self) -> String {
        self.annotations
            .iter()
            .map(|a| format!("{}\t{}\t{}\n", a.sentence_id, a.anchor_index, a.score))
            .collect()
    }

    pub fn manifest_text(&self) -> String {
        self.manifest
            .iter()
            .map(|(id, s)| format!("{id}\t{s}\n"))
            .collect()
    }

    /// Writes the corpus files and the embedding file into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        with_path(dir, std::fs::create_dir_all(dir))?;
        for (name, text) in [
            (CONLLU_FILE, serialize_conllu(&self.sentences)),
            (ANNOTATIONS_FILE, self.annotations_text()),
            (SPLITS_FILE, self.manifest_text()),
            (EMBEDDINGS_FILE, self.embeddings.to_text()),
        ] {
            let path = dir.join(name);
            with_path(&path, std::fs::write(&path, text))?;
        }
        Ok(())
    }
}

fn pick<'a>(rng: &mut impl Rng, words: &[&'a str]) -> &'a str {
    words[rng.gen_range(0..words.len())]
}

/// Free slot nearest to `pos`, ties broken towards the left.
fn nearest_free(free: &[bool], pos: usize) -> Option<usize> {
    (1..free.len()).find_map(|d| {
        let left = pos.checked_sub(d).filter(|&p| free[p]);
        let right = Some(pos + d).filter(|&p| p < free.len() && free[p]);
        left.or(right)
    })
}

struct Layout {
    forms: Vec<String>,
    heads: Vec<Option<usize>>,
    deprels: Vec<&'static str>,
    anchor: usize,
}

fn layout_sentence(
    spec: &SynthSpec,
    rng: &mut ChaCha8Rng,
    anchor_cues: &[bool],
    distractors: &[bool],
) -> Layout {
    let n = rng.gen_range(spec.min_length..=spec.max_length);
    let n_cues = anchor_cues
        .iter()
        .chain(distractors)
        .filter(|&&b| b)
        .count();
    let anchor = loop {
        let a = rng.gen_range(0..n);
        let far_slots = (0..n).filter(|&p| p.abs_diff(a) >= FAR_DISTANCE).count();
        if spec.placement == Placement::SequenceAdjacent || far_slots > n_cues {
            break a;
        }
    };
    let mut free = vec![true; n];
    free[anchor] = false;

    let mut forms = vec![String::new(); n];
    let mut heads: Vec<Option<usize>> = vec![None; n];
    let mut deprels = vec!["dep"; n];

    let other = match spec.placement {
        Placement::SequenceAdjacent => {
            let slots: Vec<usize> = (0..n).filter(|&p| free[p]).collect();
            *slots.choose(rng).expect("n >= 2")
        }
        Placement::TreeAdjacentFar => {
            // Keep at least n_cues far slots free for the cues.
            let far: Vec<usize> = (0..n)
                .filter(|&p| p.abs_diff(anchor) >= FAR_DISTANCE)
                .collect();
            let mut slots: Vec<usize> = (0..n).filter(|&p| p != anchor).collect();
            if far.len() == n_cues + 1 {
                slots.retain(|p| !far.contains(p));
            }
            *slots.choose(rng).expect("n >= 2")
        }
    };
    free[other] = false;
    forms[anchor] = pick(rng, &ANCHOR_VERBS[..spec.verb_words]).to_string();
    forms[other] = pick(rng, &CLAUSE_VERBS[..spec.verb_words]).to_string();
    let anchor_is_root = rng.gen_bool(0.5);
    let (root, child) = if anchor_is_root {
        (anchor, other)
    } else {
        (other, anchor)
    };
    heads[child] = Some(root);
    deprels[root] = "root";
    deprels[child] = "clause";

    let mut place_cue = |word: &str, verb: usize, rng: &mut ChaCha8Rng, free: &mut Vec<bool>| {
        let slot = match spec.placement {
            Placement::SequenceAdjacent => nearest_free(free, verb).expect("length validated"),
            Placement::TreeAdjacentFar => {
                let slots: Vec<usize> = (0..n)
                    .filter(|&p| free[p] && p.abs_diff(anchor) >= FAR_DISTANCE)
                    .collect();
                *slots
                    .choose(rng)
                    .expect("anchor chosen with enough far slots")
            }
        };
        free[slot] = false;
        forms[slot] = word.to_string();
        heads[slot] = Some(verb);
        deprels[slot] = "cue";
    };
    for (cue, (&on_anchor, &on_other)) in spec.cues.iter().zip(anchor_cues.iter().zip(distractors))
    {
        if on_anchor {
            place_cue(&cue.word, anchor, rng, &mut free);
        }
        if on_other {
            place_cue(&cue.word, other, rng, &mut free);
        }
    }
    for p in 0..n {
        if free[p] {
            forms[p] = pick(rng, &FILLERS[..spec.filler_words]).to_string();
            heads[p] = Some(if rng.gen_bool(spec.filler_anchor_rate) {
                anchor
            } else {
                other
            });
        }
    }
    Layout {
        forms,
        heads,
        deprels,
        anchor,
    }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Deterministic corpus for `spec`.
pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut sentences = Vec::new();
    let mut annotations = Vec::new();
    let mut manifest = Vec::new();
    let splits = std::iter::repeat_n(Split::Train, spec.train_sentences)
        .chain(std::iter::repeat_n(Split::Dev, spec.dev_sentences))
        .chain(std::iter::repeat_n(Split::Test, spec.test_sentences));
    for (i, split) in splits.enumerate() {
        let id = format!("syn{:04}", i + 1);
        let anchor_cues: Vec<bool> = spec
            .cues
            .iter()
            .map(|_| rng.gen_bool(spec.cue_rate))
            .collect();
        let distractors: Vec<bool> = spec
            .cues
            .iter()
            .map(|_| rng.gen_bool(spec.distractor_rate))
            .collect();
        let layout = layout_sentence(spec, &mut rng, &anchor_cues, &distractors);
        let tokens = layout
            .forms
            .into_iter()
            .zip(layout.heads)
            .zip(layout.deprels)
            .enumerate()
            .map(|(index, ((form, head), deprel))| Token {
                index,
                form,
                head,
                deprel: deprel.to_string(),
            })
            .collect();
        sentences.push(ParsedSentence {
            id: id.clone(),
            tokens,
        });
        annotations.push(Annotation {
            sentence_id: id.clone(),
            anchor_index: layout.anchor,
            score: spec.score(&anchor_cues),
        });
        manifest.push((id, split));
    }

    let mut vocab: Vec<&str> = ANCHOR_VERBS[..spec.verb_words]
        .iter()
        .chain(&CLAUSE_VERBS[..spec.verb_words])
        .chain(&FILLERS[..spec.filler_words])
        .copied()
        .chain(spec.cues.iter().map(|c| c.word.as_str()))
        .collect();
    vocab.sort_unstable();
    let mut erng = ChaCha8Rng::seed_from_u64(spec.seed ^ EMBEDDING_STREAM);
    let mut embeddings = EmbeddingTable::new(spec.embedding_dim);
    for w in vocab {
        let v = (0..spec.embedding_dim)
            .map(|_| round6(erng.gen_range(-1.0..1.0)))
            .collect();
        embeddings.insert(w, v)?;
    }
    Ok(SynthCorpus {
        sentences,
        annotations,
        manifest,
        embeddings,
    })
}
