//! Dependency-parsed sentences, factuality annotations and split manifests.
//!
//! A dataset directory holds three files:
//!
//! * `sentences.conllu`: CoNLL-U, one tree per sentence. The sentence id is
//!   taken from a `# sent_id = ...` comment, or `s<ordinal>` (1-based) when
//!   the comment is missing.
//! * `annotations.tsv`: `sentence_id<TAB>anchor_index<TAB>score`, anchor 0-based.
//! * `splits.tsv`: `sentence_id<TAB>{train|dev|test}`.
//!
//! Every annotation becomes one [`SentenceInstance`], so a sentence with two
//! annotated events yields two instances that share the sentence id.

use std::collections::{HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::error::{with_path, Error, Result};

pub const CONLLU_FILE: &str = "sentences.conllu";
pub const ANNOTATIONS_FILE: &str = "annotations.tsv";
pub const SPLITS_FILE: &str = "splits.tsv";

pub const MIN_SCORE: f64 = -3.0;
pub const MAX_SCORE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    /// 0-based position in the sentence.
    pub index: usize,
    pub form: String,
    /// 0-based index of the syntactic head; `None` for the root.
    pub head: Option<usize>,
    pub deprel: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedSentence {
    pub id: String,
    pub tokens: Vec<Token>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub sentence_id: String,
    pub anchor_index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceInstance {
    pub sentence_id: String,
    pub tokens: Vec<Token>,
    pub anchor_index: usize,
    pub gold_score: f64,
}

impl SentenceInstance {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn heads(&self) -> Vec<Option<usize>> {
        self.tokens.iter().map(|t| t.head).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!(
                "unknown split {other:?}, expected train, dev or test"
            )),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<SentenceInstance>,
    pub dev: Vec<SentenceInstance>,
    pub test: Vec<SentenceInstance>,
}

impl DatasetSplit {
    pub fn get(&self, split: Split) -> &[SentenceInstance] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.dev.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Concatenates two datasets split by split (multiset union).
    pub fn union(mut self, other: DatasetSplit) -> DatasetSplit {
        self.train.extend(other.train);
        self.dev.extend(other.dev);
        self.test.extend(other.test);
        self
    }
}

/// Checks that `heads` describes a single-rooted tree over `0..heads.len()`.
pub fn validate_tree(sentence: &str, heads: &[Option<usize>]) -> Result<()> {
    let tree_err = |msg: String| Error::Tree {
        sentence: sentence.to_string(),
        msg,
    };
    let n = heads.len();
    if n == 0 {
        return Err(tree_err("empty sentence".into()));
    }
    let roots = heads.iter().filter(|h| h.is_none()).count();
    if roots != 1 {
        return Err(tree_err(format!(
            "expected exactly one root, found {roots}"
        )));
    }
    if let Some((i, h)) = heads
        .iter()
        .enumerate()
        .find_map(|(i, h)| h.filter(|&h| h >= n).map(|h| (i, h)))
    {
        return Err(tree_err(format!(
            "token {i} has head {h} outside the sentence"
        )));
    }
    // 0 = unvisited, 1 = on current path, 2 = reaches the root
    let mut state = vec![0u8; n];
    for start in 0..n {
        let mut path = Vec::new();
        let mut cur = Some(start);
        while let Some(i) = cur {
            match state[i] {
                2 => break,
                1 => return Err(tree_err(format!("cycle through token {i}"))),
                _ => {
                    state[i] = 1;
                    path.push(i);
                    cur = heads[i];
                }
            }
        }
        for i in path {
            state[i] = 2;
        }
    }
    Ok(())
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

/// Parses CoNLL-U text into validated dependency trees.
pub fn parse_conllu(text: &str) -> Result<Vec<ParsedSentence>> {
    let mut out = Vec::new();
    let mut tokens: Vec<Token> = Vec::new();
    let mut sent_id: Option<String> = None;
    let mut start_line = 1;

    let finish = |tokens: &mut Vec<Token>,
                  sent_id: &mut Option<String>,
                  out: &mut Vec<ParsedSentence>|
     -> Result<()> {
        if tokens.is_empty() {
            *sent_id = None;
            return Ok(());
        }
        let id = sent_id
            .take()
            .unwrap_or_else(|| format!("s{}", out.len() + 1));
        let heads: Vec<Option<usize>> = tokens.iter().map(|t| t.head).collect();
        validate_tree(&id, &heads)?;
        out.push(ParsedSentence {
            id,
            tokens: std::mem::take(tokens),
        });
        Ok(())
    };

    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(&mut tokens, &mut sent_id, &mut out)?;
            start_line = line_no + 1;
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                if key.trim() == "sent_id" {
                    sent_id = Some(value.trim().to_string());
                }
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(parse_err(
                line_no,
                format!("expected 10 tab-separated columns, found {}", cols.len()),
            ));
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id: usize = cols[0]
            .parse()
            .map_err(|_| parse_err(line_no, format!("non-integer ID {:?}", cols[0])))?;
        if id != tokens.len() + 1 {
            return Err(parse_err(
                line_no,
                format!("token ID {id} out of sequence (expected {}) in sentence starting at line {start_line}", tokens.len() + 1),
            ));
        }
        let head: usize = cols[6]
            .parse()
            .map_err(|_| parse_err(line_no, format!("non-integer HEAD {:?}", cols[6])))?;
        tokens.push(Token {
            index: id - 1,
            form: cols[1].to_string(),
            head: head.checked_sub(1),
            deprel: cols[7].to_string(),
        });
    }
    finish(&mut tokens, &mut sent_id, &mut out)?;
    Ok(out)
}

/// Writes sentences back as CoNLL-U; unused columns are `_`.
pub fn serialize_conllu(sentences: &[ParsedSentence]) -> String {
    let mut s = String::new();
    for sent in sentences {
        writeln!(s, "# sent_id = {}", sent.id).unwrap();
        for t in &sent.tokens {
            let head = t.head.map_or(0, |h| h + 1);
            let deprel = if t.deprel.is_empty() { "_" } else { &t.deprel };
            writeln!(
                s,
                "{}\t{}\t_\t_\t_\t_\t{}\t{}\t_\t_",
                t.index + 1,
                t.form,
                head,
                deprel
            )
            .unwrap();
        }
        s.push('\n');
    }
    s
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

fn parse_score(line: usize, raw: &str) -> Result<f64> {
    let value: f64 = raw
        .trim()
        .parse()
        .map_err(|_| parse_err(line, format!("invalid score {raw:?}")))?;
    if !(MIN_SCORE..=MAX_SCORE).contains(&value) {
        return Err(Error::Range { line, value });
    }
    Ok(value)
}

/// Parses `sentence_id<TAB>anchor_index<TAB>score` lines.
pub fn parse_annotations(text: &str) -> Result<Vec<Annotation>> {
    data_lines(text)
        .map(|(line, l)| {
            let cols: Vec<&str> = l.split('\t').collect();
            if cols.len() != 3 {
                return Err(parse_err(
                    line,
                    format!("expected 3 tab-separated columns, found {}", cols.len()),
                ));
            }
            let anchor_index = cols[1]
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("invalid anchor index {:?}", cols[1])))?;
            Ok(Annotation {
                sentence_id: cols[0].to_string(),
                anchor_index,
                score: parse_score(line, cols[2])?,
            })
        })
        .collect()
}

/// Event mentions to score: like annotations, with the score column optional.
pub fn parse_mentions(text: &str) -> Result<Vec<(String, usize, Option<f64>)>> {
    data_lines(text)
        .map(|(line, l)| {
            let cols: Vec<&str> = l.split('\t').collect();
            if !(2..=3).contains(&cols.len()) {
                return Err(parse_err(
                    line,
                    format!(
                        "expected 2 or 3 tab-separated columns, found {}",
                        cols.len()
                    ),
                ));
            }
            let anchor = cols[1]
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("invalid anchor index {:?}", cols[1])))?;
            let score = cols.get(2).map(|s| parse_score(line, s)).transpose()?;
            Ok((cols[0].to_string(), anchor, score))
        })
        .collect()
}

/// Parses `sentence_id<TAB>split` lines; each id may appear once.
pub fn parse_manifest(text: &str) -> Result<Vec<(String, Split)>> {
    let mut seen = HashSet::new();
    data_lines(text)
        .map(|(line, l)| {
            let (id, split) = l
                .split_once('\t')
                .ok_or_else(|| parse_err(line, "expected sentence_id<TAB>split"))?;
            let split = split
                .trim()
                .parse::<Split>()
                .map_err(|e| parse_err(line, e))?;
            if !seen.insert(id.to_string()) {
                return Err(parse_err(line, format!("sentence {id} assigned twice")));
            }
            Ok((id.to_string(), split))
        })
        .collect()
}

/// Builds one instance per annotation and routes it to its manifest split.
pub fn join_and_split(
    sentences: &[ParsedSentence],
    annotations: &[Annotation],
    manifest: &[(String, Split)],
) -> Result<DatasetSplit> {
    let mut by_id: HashMap<&str, &ParsedSentence> = HashMap::new();
    for s in sentences {
        if by_id.insert(&s.id, s).is_some() {
            return Err(Error::Alignment(format!("duplicate sentence id {}", s.id)));
        }
    }
    let splits: HashMap<&str, Split> = manifest.iter().map(|(id, s)| (id.as_str(), *s)).collect();

    let mut seen = HashSet::new();
    let mut out = DatasetSplit::default();
    for a in annotations {
        let sent = by_id.get(a.sentence_id.as_str()).ok_or_else(|| {
            Error::Alignment(format!(
                "annotation references unknown sentence {}",
                a.sentence_id
            ))
        })?;
        if a.anchor_index >= sent.tokens.len() {
            return Err(Error::Alignment(format!(
                "anchor {} out of bounds for sentence {} with {} tokens",
                a.anchor_index,
                a.sentence_id,
                sent.tokens.len()
            )));
        }
        if !seen.insert((a.sentence_id.as_str(), a.anchor_index)) {
            return Err(Error::Alignment(format!(
                "duplicate annotation for sentence {} anchor {}",
                a.sentence_id, a.anchor_index
            )));
        }
        let split = splits.get(a.sentence_id.as_str()).ok_or_else(|| {
            Error::Alignment(format!(
                "sentence {} missing from split manifest",
                a.sentence_id
            ))
        })?;
        let inst = SentenceInstance {
            sentence_id: a.sentence_id.clone(),
            tokens: sent.tokens.clone(),
            anchor_index: a.anchor_index,
            gold_score: a.score,
        };
        match split {
            Split::Train => out.train.push(inst),
            Split::Dev => out.dev.push(inst),
            Split::Test => out.test.push(inst),
        }
    }
    Ok(out)
}

pub(crate) fn read_file(path: &Path) -> Result<String> {
    with_path(path, std::fs::read_to_string(path))
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    with_path(path, std::fs::read(path))
}

/// Loads a dataset directory (see the module docs for its layout).
pub fn load_dataset_dir(dir: &Path) -> Result<DatasetSplit> {
    let sentences = parse_conllu(&read_file(&dir.join(CONLLU_FILE))?)?;
    let annotations = parse_annotations(&read_file(&dir.join(ANNOTATIONS_FILE))?)?;
    let manifest = parse_manifest(&read_file(&dir.join(SPLITS_FILE))?)?;
    join_and_split(&sentences, &annotations, &manifest)
}
