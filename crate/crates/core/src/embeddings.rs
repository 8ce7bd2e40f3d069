//! Static word embeddings in the GloVe text format.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use crate::error::{with_path, Error, Result};
use crate::tensor::Tensor;

/// Token-to-vector table. Absent tokens map to a zero `unk` vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: HashMap<String, Vec<f64>>,
    unk: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: HashMap::new(),
            unk: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Format {
                line: 0,
                msg: format!(
                    "vector of length {} in a dim-{} table",
                    vector.len(),
                    self.dim
                ),
            });
        }
        self.entries.insert(token.into(), vector);
        Ok(())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.entries.contains_key(token)
    }

    /// Exact match, then lowercase match, then the zero `unk` vector.
    pub fn lookup(&self, form: &str) -> &[f64] {
        if let Some(v) = self.entries.get(form) {
            return v;
        }
        self.entries
            .get(&form.to_lowercase())
            .map_or(&self.unk[..], Vec::as_slice)
    }

    /// Stacks the vectors for `forms` into an `[n×dim]` matrix.
    pub fn embed<'a>(&self, forms: impl IntoIterator<Item = &'a str>) -> Tensor {
        let data: Vec<f64> = forms
            .into_iter()
            .flat_map(|f| self.lookup(f).iter().copied())
            .collect();
        let rows = data.len() / self.dim.max(1);
        Tensor::matrix(rows, self.dim, data).expect("non-empty sentence")
    }

    /// Text serialization with tokens in sorted order.
    pub fn to_text(&self) -> String {
        let mut keys: Vec<&String> = self.entries.keys().collect();
        keys.sort();
        let mut out = String::new();
        for k in keys {
            out.push_str(k);
            for v in &self.entries[k] {
                out.push(' ');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Reads `token v1 ... vD` lines.
///
/// The dimension comes from `expected_dim`, or from the first line when that
/// is `None`. Later occurrences of a token are ignored.
pub fn load_embeddings(
    reader: impl BufRead,
    expected_dim: Option<usize>,
) -> Result<EmbeddingTable> {
    let mut table: Option<EmbeddingTable> = expected_dim.map(EmbeddingTable::new);
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let vector = parts
            .map(|p| {
                p.parse::<f64>().map_err(|_| Error::Format {
                    line: line_no,
                    msg: format!("invalid component {p:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if vector.is_empty() {
            return Err(Error::Format {
                line: line_no,
                msg: format!("token {token:?} has no vector"),
            });
        }
        let t = table.get_or_insert_with(|| EmbeddingTable::new(vector.len()));
        if vector.len() != t.dim {
            return Err(Error::Format {
                line: line_no,
                msg: format!("expected {} values, found {}", t.dim, vector.len()),
            });
        }
        t.entries.entry(token.to_string()).or_insert(vector);
    }
    table.ok_or_else(|| Error::Format {
        line: 0,
        msg: "empty embedding file and no expected dimension".into(),
    })
}

pub fn load_embeddings_file(path: &Path, expected_dim: Option<usize>) -> Result<EmbeddingTable> {
    let file = with_path(path, std::fs::File::open(path))?;
    load_embeddings(std::io::BufReader::new(file), expected_dim).map_err(|e| match e {
        Error::Io(source) => Error::File {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infers_dimension() {
        let t = load_embeddings("a 1.0 0.0\nb 0.0 1.0\n".as_bytes(), None).unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.len(), 2);
        assert_eq!(t.lookup("b"), &[0.0, 1.0]);
    }

    #[test]
    fn oov_fallbacks() {
        let t = load_embeddings("the 0.5 0.25\n".as_bytes(), None).unwrap();
        assert_eq!(t.lookup("the"), &[0.5, 0.25]);
        assert_eq!(t.lookup("The"), &[0.5, 0.25]);
        assert_eq!(t.lookup("xyzzy"), &[0.0, 0.0]);
    }

    #[test]
    fn exact_match_wins_over_lowercase() {
        let t = load_embeddings("us 1 1\nUS 2 2\n".as_bytes(), None).unwrap();
        assert_eq!(t.lookup("US"), &[2.0, 2.0]);
        assert_eq!(t.lookup("Us"), &[1.0, 1.0]);
    }

    #[test]
    fn short_line_is_format_error() {
        let full = vec!["0.1"; 300].join(" ");
        let short = vec!["0.1"; 299].join(" ");
        let text = format!("a {full}\nb {short}\n");
        match load_embeddings(text.as_bytes(), Some(300)) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(load_embeddings("a 1.0 x\n".as_bytes(), None).is_err());
        assert!(load_embeddings("lonely\n".as_bytes(), None).is_err());
        assert!(load_embeddings("".as_bytes(), None).is_err());
        assert_eq!(load_embeddings("".as_bytes(), Some(4)).unwrap().dim(), 4);
    }

    #[test]
    fn text_round_trip() {
        let t = load_embeddings("b 0.1 -2\na 3 4.5\n".as_bytes(), None).unwrap();
        let back = load_embeddings(t.to_text().as_bytes(), None).unwrap();
        assert_eq!(t, back);
    }
}
