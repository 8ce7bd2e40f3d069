//! Affinity matrices that weight the graph convolution.
//!
//! * Semantic: `h'_i = tanh(W₁ h_i + b₁)`, `a_sem[i][j] = σ(W₂ [h'_i, h'_j] + b₂)`.
//!   Not symmetric in general.
//! * Syntactic: 1 where two tokens are joined by a dependency edge in either
//!   direction, plus the diagonal; 0 elsewhere.
//! * Blend: `A = λ·A_sem + (1 − λ)·A_syn`, with `A_syn` a constant.

use std::io::{self, Write};

use rand::Rng;

use crate::corpus::{validate_tree, Token};
use crate::error::{Error, Result as CrateResult};
use crate::graph::{Graph, Var};
use crate::params::{Bindings, Linear, ParamStore};
use crate::tensor::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy)]
pub struct StructureParams {
    /// `2H → P`
    pub projection: Linear,
    /// `2P → 1`
    pub scorer: Linear,
}

impl StructureParams {
    pub fn new(
        store: &mut ParamStore,
        input: usize,
        projection: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            projection: Linear::new(store, "structure.projection", input, projection, rng),
            scorer: Linear::new(store, "structure.scorer", 2 * projection, 1, rng),
        }
    }
}

/// The three `n×n` matrices of one sentence, detached from the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrices {
    pub semantic: Tensor,
    pub syntactic: Tensor,
    pub blended: Tensor,
    pub lambda: f64,
}

/// `[n×2H] → [n×n]` semantic affinities.
///
/// All ordered pairs are scored at once: row `i·n + j` of the pair matrix is
/// `[h'_i, h'_j]`.
pub fn semantic_affinity(
    g: &mut Graph,
    p: &Bindings,
    params: &StructureParams,
    h0: Var,
) -> Result<Var> {
    let n = g.value(h0).rows();
    let proj = params.projection.forward(g, p, h0)?;
    let hp = g.tanh(proj);
    let left: Vec<usize> = (0..n * n).map(|r| r / n).collect();
    let right: Vec<usize> = (0..n * n).map(|r| r % n).collect();
    let li = g.gather_rows(hp, &left)?;
    let rj = g.gather_rows(hp, &right)?;
    let pairs = g.concat(&[li, rj])?;
    let scores = params.scorer.forward(g, p, pairs)?;
    let square = g.reshape(scores, &[n, n])?;
    Ok(g.sigmoid(square))
}

/// Binary adjacency of a dependency tree with self-loops and reverse edges.
pub fn syntactic_adjacency(tokens: &[Token]) -> CrateResult<Tensor> {
    let heads: Vec<Option<usize>> = tokens.iter().map(|t| t.head).collect();
    adjacency_from_heads(&heads)
}

/// Same as [`syntactic_adjacency`] from a head vector.
pub fn adjacency_from_heads(heads: &[Option<usize>]) -> CrateResult<Tensor> {
    validate_tree("<adjacency>", heads)?;
    let n = heads.len();
    let mut a = Tensor::zeros(&[n, n]);
    let d = a.data_mut();
    for (i, head) in heads.iter().enumerate() {
        d[i * n + i] = 1.0;
        if let Some(h) = *head {
            d[i * n + h] = 1.0;
            d[h * n + i] = 1.0;
        }
    }
    Ok(a)
}

pub fn check_lambda(lambda: f64) -> CrateResult<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )))
    }
}

/// `λ·a_sem + (1 − λ)·a_syn`. Callers validate `λ` with [`check_lambda`].
pub fn blend(g: &mut Graph, a_sem: Var, a_syn: Var, lambda: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(TensorError::Domain {
            op: "blend",
            msg: format!("lambda {lambda} outside [0, 1]"),
        });
    }
    if g.shape(a_sem) != g.shape(a_syn) {
        return Err(TensorError::Shape {
            op: "blend",
            lhs: g.shape(a_sem).to_vec(),
            rhs: g.shape(a_syn).to_vec(),
        });
    }
    let sem = g.scale(a_sem, lambda);
    let syn = g.scale(a_syn, 1.0 - lambda);
    g.add(sem, syn)
}

/// Writes a matrix as header-less TSV, one row per line.
pub fn write_matrix_tsv(m: &Tensor, mut out: impl Write) -> io::Result<()> {
    for r in 0..m.rows() {
        let line: Vec<String> = m.row(r).iter().map(f64::to_string).collect();
        writeln!(out, "{}", line.join("\t"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::uniform;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_give_one_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let sp = StructureParams::new(&mut store, 4, 3, &mut rng);
        store.values_mut().iter_mut().for_each(|t| t.fill(0.0));
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let h0 = g.constant(uniform(&mut rng, &[3, 4], 1.0));
        let a = semantic_affinity(&mut g, &p, &sp, h0).unwrap();
        assert_eq!(g.shape(a), &[3, 3]);
        assert!(g.value(a).data().iter().all(|&x| x == 0.5));
    }

    #[test]
    fn pair_layout_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let sp = StructureParams::new(&mut store, 4, 3, &mut rng);
        let h = uniform(&mut rng, &[3, 4], 1.0);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let h0 = g.constant(h.clone());
        let a = semantic_affinity(&mut g, &p, &sp, h0).unwrap();

        let w1 = store.get(sp.projection.weight);
        let w2 = store.get(sp.scorer.weight);
        let proj = |i: usize| -> Vec<f64> {
            (0..3)
                .map(|c| (0..4).map(|k| h.at(i, k) * w1.at(k, c)).sum::<f64>().tanh())
                .collect()
        };
        for i in 0..3 {
            for j in 0..3 {
                let cat: Vec<f64> = proj(i).into_iter().chain(proj(j)).collect();
                let s: f64 = cat.iter().enumerate().map(|(k, v)| v * w2.at(k, 0)).sum();
                let want = 1.0 / (1.0 + (-s).exp());
                assert!((g.value(a).at(i, j) - want).abs() < 1e-14);
            }
        }
        assert_ne!(g.value(a).at(0, 1), g.value(a).at(1, 0));
    }

    #[test]
    fn chain_of_three() {
        let a = adjacency_from_heads(&[Some(1), Some(2), None]).unwrap();
        #[rustfmt::skip]
        let want = [1.0, 1.0, 0.0,
                    1.0, 1.0, 1.0,
                    0.0, 1.0, 1.0];
        assert_eq!(a.data(), &want);
    }

    #[test]
    fn single_token() {
        assert_eq!(adjacency_from_heads(&[None]).unwrap().data(), &[1.0]);
    }

    #[test]
    fn invalid_tree_rejected() {
        assert!(adjacency_from_heads(&[Some(1), Some(0)]).is_err());
    }

    #[test]
    fn blend_endpoints_and_midpoint() {
        let mut g = Graph::new();
        let sem = g.constant(Tensor::filled(&[2, 2], 0.5));
        let syn = g.constant(Tensor::eye(2));
        let a0 = blend(&mut g, sem, syn, 0.0).unwrap();
        assert_eq!(g.value(a0), g.value(syn));
        let a1 = blend(&mut g, sem, syn, 1.0).unwrap();
        assert_eq!(g.value(a1), g.value(sem));
        let mid = blend(&mut g, sem, syn, 0.6).unwrap();
        assert!((g.value(mid).at(0, 0) - 0.7).abs() < 1e-15);
        assert!(blend(&mut g, sem, syn, 1.5).is_err());
        assert!(check_lambda(-0.1).is_err());
        assert!(check_lambda(0.8).is_ok());
    }

    #[test]
    fn tsv_export() {
        let mut buf = Vec::new();
        write_matrix_tsv(&Tensor::eye(2), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1\t0\n0\t1\n");
    }
}
