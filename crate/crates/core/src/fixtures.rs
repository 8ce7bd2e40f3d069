//! Small corpora shipped with the crate, each with declared expectations.
//!
//! Fixture directories live under `fixtures/` in the crate root and use the
//! normal dataset layout, so they can also be passed to the CLI. All of them
//! share `fixtures/embeddings.txt` (8-dimensional vectors).

use crate::corpus::{join_and_split, parse_annotations, parse_conllu, parse_manifest};
use crate::error::Result;
use crate::structure::syntactic_adjacency;
use crate::tensor::Tensor;

/// One expected entry of a syntactic adjacency matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub sentence: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expectations {
    /// Number of ones in each sentence's syntactic adjacency.
    pub syn_ones: &'static [usize],
    pub entries: &'static [Entry],
    /// Form of each annotated anchor, in annotation order.
    pub anchors: &'static [&'static str],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub name: &'static str,
    pub conllu: &'static str,
    pub annotations: &'static str,
    pub splits: &'static str,
    pub expect: Expectations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub const EMBEDDINGS: &str = include_str!("../fixtures/embeddings.txt");
pub const EMBEDDING_DIM: usize = 8;

const fn e(sentence: usize, row: usize, col: usize, value: f64) -> Entry {
    Entry {
        sentence,
        row,
        col,
        value,
    }
}

/// "I will after seeing the treatment of others go back when I need medical
/// care", anchor `go`.
pub const FIGURE1: Fixture = Fixture {
    name: "figure1",
    conllu: include_str!("../fixtures/figure1/sentences.conllu"),
    annotations: include_str!("../fixtures/figure1/annotations.tsv"),
    splits: include_str!("../fixtures/figure1/splits.tsv"),
    expect: Expectations {
        syn_ones: &[43],
        // go = 8, will = 1, back = 9
        entries: &[
            e(0, 8, 1, 1.0),
            e(0, 1, 8, 1.0),
            e(0, 1, 1, 1.0),
            e(0, 1, 9, 0.0),
        ],
        anchors: &["go"],
    },
};

/// "She left yesterday ." (+3) and "She forgot to leave yesterday" (-3).
pub const INTRO: Fixture = Fixture {
    name: "intro",
    conllu: include_str!("../fixtures/intro/sentences.conllu"),
    annotations: include_str!("../fixtures/intro/annotations.tsv"),
    splits: include_str!("../fixtures/intro/splits.tsv"),
    expect: Expectations {
        syn_ones: &[10, 13],
        entries: &[
            e(0, 0, 1, 1.0),
            e(0, 0, 2, 0.0),
            e(1, 3, 4, 1.0),
            e(1, 1, 4, 0.0),
        ],
        anchors: &["left", "leave"],
    },
};

pub const SINGLE_TOKEN: Fixture = Fixture {
    name: "single_token",
    conllu: include_str!("../fixtures/single_token/sentences.conllu"),
    annotations: include_str!("../fixtures/single_token/annotations.tsv"),
    splits: include_str!("../fixtures/single_token/splits.tsv"),
    expect: Expectations {
        syn_ones: &[1],
        entries: &[e(0, 0, 0, 1.0)],
        anchors: &["Go"],
    },
};

/// A sentence whose heads form a cycle; [`check_fixture`] must reject it.
pub const MALFORMED: Fixture = Fixture {
    name: "malformed",
    conllu: include_str!("../fixtures/malformed/sentences.conllu"),
    annotations: include_str!("../fixtures/malformed/annotations.tsv"),
    splits: include_str!("../fixtures/malformed/splits.tsv"),
    expect: Expectations {
        syn_ones: &[7],
        entries: &[],
        anchors: &["stay"],
    },
};

/// Every well-formed shipped fixture.
pub fn shipped() -> [&'static Fixture; 3] {
    [&FIGURE1, &INTRO, &SINGLE_TOKEN]
}

fn verify(f: &Fixture) -> Result<Vec<String>> {
    let sentences = parse_conllu(f.conllu)?;
    let annotations = parse_annotations(f.annotations)?;
    let manifest = parse_manifest(f.splits)?;
    let ds = join_and_split(&sentences, &annotations, &manifest)?;
    let mut problems = Vec::new();
    if ds.len() != annotations.len() {
        problems.push(format!(
            "{} instances for {} annotations",
            ds.len(),
            annotations.len()
        ));
    }
    if sentences.len() != f.expect.syn_ones.len() {
        problems.push(format!(
            "{} sentences, expected {}",
            sentences.len(),
            f.expect.syn_ones.len()
        ));
    }
    let mut matrices: Vec<Tensor> = Vec::new();
    for (s, &want) in sentences.iter().zip(f.expect.syn_ones) {
        let a = syntactic_adjacency(&s.tokens)?;
        let n = s.tokens.len();
        let ones = a.data().iter().filter(|&&v| v == 1.0).count();
        if ones != want || ones != n + 2 * (n - 1) {
            problems.push(format!(
                "{}: {ones} ones, expected {want} and n + 2(n-1) = {}",
                s.id,
                n + 2 * (n - 1)
            ));
        }
        matrices.push(a);
    }
    for entry in f.expect.entries {
        match matrices.get(entry.sentence) {
            Some(a) if entry.row < a.rows() && entry.col < a.cols() => {
                let got = a.at(entry.row, entry.col);
                if got != entry.value {
                    problems.push(format!(
                        "sentence {} entry ({}, {}) = {got}, expected {}",
                        entry.sentence, entry.row, entry.col, entry.value
                    ));
                }
            }
            _ => problems.push(format!("entry {entry:?} out of range")),
        }
    }
    for (ann, &want) in annotations.iter().zip(f.expect.anchors) {
        let form = sentences
            .iter()
            .find(|s| s.id == ann.sentence_id)
            .and_then(|s| s.tokens.get(ann.anchor_index))
            .map(|t| t.form.as_str());
        if form != Some(want) {
            problems.push(format!(
                "{}: anchor is {form:?}, expected {want:?}",
                ann.sentence_id
            ));
        }
    }
    if annotations.len() != f.expect.anchors.len() {
        problems.push(format!(
            "{} annotations, expected {}",
            annotations.len(),
            f.expect.anchors.len()
        ));
    }
    Ok(problems)
}

/// Parses and validates one fixture against its declared expectations.
pub fn check_fixture(f: &Fixture) -> FixtureCheck {
    let (passed, detail) = match verify(f) {
        Ok(problems) if problems.is_empty() => (true, "ok".to_string()),
        Ok(problems) => (false, problems.join("; ")),
        Err(e) => (false, e.to_string()),
    };
    FixtureCheck {
        name: f.name,
        passed,
        detail,
    }
}

pub fn fixture_selfcheck() -> Vec<FixtureCheck> {
    shipped().into_iter().map(check_fixture).collect()
}
