//! Two-layer bidirectional LSTM over token embeddings.
//!
//! Each direction keeps its four gates stacked column-wise in one matrix,
//! in the order input, forget, candidate, output:
//! `z = x·W_ih + h·W_hh + b`, `z: [1×4H]`.

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::params::{add_row_bias, uniform, Bindings, ParamId, ParamStore};
use crate::tensor::{Result, Tensor, TensorError};

pub const ENCODER_LAYERS: usize = 2;

/// Parameters of one LSTM direction.
#[derive(Debug, Clone, Copy)]
pub struct LstmDirection {
    /// `[input × 4H]`
    pub w_ih: ParamId,
    /// `[H × 4H]`
    pub w_hh: ParamId,
    /// `[1 × 4H]`
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmDirection {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        forget_bias: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let w_ih = store.add(
            format!("{name}.w_ih"),
            uniform(rng, &[input, 4 * hidden], 1.0 / (input as f64).sqrt()),
        );
        let w_hh = store.add(
            format!("{name}.w_hh"),
            uniform(rng, &[hidden, 4 * hidden], 1.0 / (hidden as f64).sqrt()),
        );
        let mut b = Tensor::zeros(&[1, 4 * hidden]);
        b.data_mut()[hidden..2 * hidden].fill(forget_bias);
        let bias = store.add(format!("{name}.bias"), b);
        Self {
            w_ih,
            w_hh,
            bias,
            input,
            hidden,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BiLstmLayer {
    pub forward: LstmDirection,
    pub backward: LstmDirection,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub layers: Vec<BiLstmLayer>,
    pub hidden: usize,
}

impl Encoder {
    /// Layer 1 reads `embed_dim` inputs, layer 2 reads the `2H` outputs of layer 1.
    pub fn new(
        store: &mut ParamStore,
        embed_dim: usize,
        hidden: usize,
        forget_bias: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..ENCODER_LAYERS)
            .map(|l| {
                let input = if l == 0 { embed_dim } else { 2 * hidden };
                BiLstmLayer {
                    forward: LstmDirection::new(
                        store,
                        &format!("encoder.l{l}.fwd"),
                        input,
                        hidden,
                        forget_bias,
                        rng,
                    ),
                    backward: LstmDirection::new(
                        store,
                        &format!("encoder.l{l}.bwd"),
                        input,
                        hidden,
                        forget_bias,
                        rng,
                    ),
                }
            })
            .collect();
        Self { layers, hidden }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }
}

/// One LSTM step. `x: [1×input]`, `h_prev, c_prev: [1×H]`; returns `(h_t, c_t)`.
pub fn lstm_cell(
    g: &mut Graph,
    p: &Bindings,
    dir: &LstmDirection,
    x: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let hd = dir.hidden;
    let xw = g.matmul(x, p[dir.w_ih])?;
    let hw = g.matmul(h_prev, p[dir.w_hh])?;
    let z = g.add(xw, hw)?;
    let z = add_row_bias(g, z, p[dir.bias])?;

    let zi = g.narrow_cols(z, 0, hd)?;
    let zf = g.narrow_cols(z, hd, hd)?;
    let zg = g.narrow_cols(z, 2 * hd, hd)?;
    let zo = g.narrow_cols(z, 3 * hd, hd)?;
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let cand = g.tanh(zg);
    let o = g.sigmoid(zo);

    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

/// Runs one direction over `inputs`; the returned states are aligned with
/// input positions whichever way the sequence was traversed.
pub fn run_direction(
    g: &mut Graph,
    p: &Bindings,
    dir: &LstmDirection,
    inputs: &[Var],
    reverse: bool,
) -> Result<Vec<Var>> {
    let n = inputs.len();
    let mut h = g.constant(Tensor::zeros(&[1, dir.hidden]));
    let mut c = g.constant(Tensor::zeros(&[1, dir.hidden]));
    let mut states = vec![h; n];
    for step in 0..n {
        let t = if reverse { n - 1 - step } else { step };
        (h, c) = lstm_cell(g, p, dir, inputs[t], h, c)?;
        states[t] = h;
    }
    Ok(states)
}

/// Forward and backward passes concatenated per position: `[1×2H]` each.
pub fn bilstm_layer(
    g: &mut Graph,
    p: &Bindings,
    layer: &BiLstmLayer,
    inputs: &[Var],
) -> Result<Vec<Var>> {
    if inputs.is_empty() {
        return Err(TensorError::Domain {
            op: "bilstm_layer",
            msg: "empty sequence".into(),
        });
    }
    let fwd = run_direction(g, p, &layer.forward, inputs, false)?;
    let bwd = run_direction(g, p, &layer.backward, inputs, true)?;
    fwd.iter()
        .zip(&bwd)
        .map(|(&f, &b)| g.concat(&[f, b]))
        .collect()
}

/// `embeddings: [n×D]` to `H0: [n×2H]`, the last layer's states as rows.
pub fn encode(g: &mut Graph, p: &Bindings, enc: &Encoder, embeddings: Var) -> Result<Var> {
    let n = g.value(embeddings).rows();
    let mut seq = (0..n)
        .map(|t| g.row(embeddings, t))
        .collect::<Result<Vec<_>>>()?;
    for layer in &enc.layers {
        seq = bilstm_layer(g, p, layer, &seq)?;
    }
    g.concat_rows(&seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_store(store: &mut ParamStore) {
        store.values_mut().iter_mut().for_each(|t| t.fill(0.0));
    }

    #[test]
    fn zero_weights_give_zero_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let dir = LstmDirection::new(&mut store, "d", 3, 2, 1.0, &mut rng);
        zero_store(&mut store);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(Tensor::matrix(1, 3, vec![0.3, -1.0, 2.0]).unwrap());
        let h0 = g.constant(Tensor::zeros(&[1, 2]));
        let c0 = g.constant(Tensor::zeros(&[1, 2]));
        let (h, c) = lstm_cell(&mut g, &p, &dir, x, h0, c0).unwrap();
        assert_eq!(g.value(h).data(), &[0.0, 0.0]);
        assert_eq!(g.value(c).data(), &[0.0, 0.0]);
    }

    #[test]
    fn saturated_gates_carry_memory() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let dir = LstmDirection::new(&mut store, "d", 2, 2, 1.0, &mut rng);
        let b = store.get_mut(dir.bias).data_mut();
        b[0..2].fill(-50.0);
        b[2..4].fill(50.0);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(Tensor::matrix(1, 2, vec![0.4, -0.7]).unwrap());
        let h0 = g.constant(Tensor::matrix(1, 2, vec![0.1, 0.2]).unwrap());
        let c0 = g.constant(Tensor::matrix(1, 2, vec![0.8, -1.3]).unwrap());
        let (_, c) = lstm_cell(&mut g, &p, &dir, x, h0, c0).unwrap();
        for (got, want) in g.value(c).data().iter().zip([0.8, -1.3]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn cell_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let dir = LstmDirection::new(&mut store, "d", 3, 2, 1.0, &mut rng);
        let mut params: Vec<Tensor> = store.values().to_vec();
        params.push(uniform(&mut rng, &[1, 3], 1.0));
        params.push(uniform(&mut rng, &[1, 2], 1.0));
        params.push(uniform(&mut rng, &[1, 2], 1.0));
        let err = grad_check(
            |g, v| {
                let p = Bindings::from_vars(v[..3].to_vec());
                let (h, c) = lstm_cell(g, &p, &dir, v[3], v[4], v[5])?;
                let both = g.concat(&[h, c])?;
                let w = g.constant(Tensor::matrix(1, 4, vec![0.7, -1.1, 0.4, 0.9]).unwrap());
                let weighted = g.mul(both, w)?;
                Ok(g.sum(weighted))
            },
            &mut params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn bilstm_single_step_and_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, 3, 4, 1.0, &mut rng);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(uniform(&mut rng, &[1, 3], 1.0));
        let out = bilstm_layer(&mut g, &p, &enc.layers[0], &[x]).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(g.shape(out[0]), &[1, 8]);
        assert!(bilstm_layer(&mut g, &p, &enc.layers[0], &[]).is_err());

        let emb = g.constant(uniform(&mut rng, &[1, 3], 1.0));
        let h0 = encode(&mut g, &p, &enc, emb).unwrap();
        assert_eq!(g.shape(h0), &[1, 8]);
    }

    #[test]
    fn zero_params_encode_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, 3, 4, 1.0, &mut rng);
        zero_store(&mut store);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let emb = g.constant(uniform(&mut rng, &[5, 3], 1.0));
        let h0 = encode(&mut g, &p, &enc, emb).unwrap();
        assert_eq!(g.shape(h0), &[5, 8]);
        assert!(g.value(h0).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mirrored_params_on_palindrome() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, 3, 4, 1.0, &mut rng);
        let layer = enc.layers[0];
        for (src, dst) in [
            (layer.forward.w_ih, layer.backward.w_ih),
            (layer.forward.w_hh, layer.backward.w_hh),
            (layer.forward.bias, layer.backward.bias),
        ] {
            let v = store.get(src).clone();
            *store.get_mut(dst) = v;
        }
        let a = uniform(&mut rng, &[1, 3], 1.0);
        let b = uniform(&mut rng, &[1, 3], 1.0);
        let c = uniform(&mut rng, &[1, 3], 1.0);
        let seq = [&a, &b, &c, &b, &a];
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let inputs: Vec<Var> = seq.iter().map(|t| g.constant((*t).clone())).collect();
        let out = bilstm_layer(&mut g, &p, &layer, &inputs).unwrap();
        let n = out.len();
        for t in 0..n {
            let fwd = &g.value(out[t]).data()[..4];
            let bwd = &g.value(out[n - 1 - t]).data()[4..];
            assert_eq!(fwd, bwd);
        }
    }
}
