//! Parameterised building blocks: linear maps, layer norm, multi-head
//! self-attention and the pre-LN transformer layer.
//!
//! Nothing here carries positional information, so every block maps a set of
//! row vectors to a set of row vectors and commutes with row permutations.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::{Scalar, Tensor};

fn uniform_fan_in<T: Scalar>(rng: &mut Rng, fan_in: usize, rows: usize, cols: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| T::of(rng.gen_range(-bound..bound)))
}

/// `y = x·W + b` with `W: in×out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let w = store.add(format!("{name}.w"), uniform_fan_in(rng, d_in, d_in, d_out));
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(1, d_out)));
        Self { w, b }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Var {
        let w = tape.param(store, self.w);
        let y = tape.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_row(y, b)
            }
            None => y,
        }
    }

    /// Zeroes weight and bias, turning the map into the constant 0.
    pub fn zero<T: Scalar>(&self, store: &mut ParamStore<T>) {
        store.value_mut(self.w).scale_assign(T::zero());
        if let Some(b) = self.b {
            store.value_mut(b).scale_assign(T::zero());
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::filled(1, dim, T::one())),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(1, dim)),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Var {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b)
    }
}

/// Multi-head scaled dot-product self-attention with output projection.
#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub n_heads: usize,
    pub dim: usize,
}

impl Attention {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        n_heads: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if n_heads == 0 || !dim.is_multiple_of(n_heads) {
            return Err(Error::InvalidConfig(format!(
                "model dimension {dim} is not divisible by {n_heads} heads"
            )));
        }
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, true, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, true, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, true, rng),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, true, rng),
            n_heads,
            dim,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Var {
        let q = self.q.forward(tape, store, x);
        let k = self.k.forward(tape, store, x);
        let v = self.v.forward(tape, store, x);
        let head_dim = self.dim / self.n_heads;
        let scale = T::of(1.0 / (head_dim as f64).sqrt());
        let heads: Vec<Var> = (0..self.n_heads)
            .map(|h| {
                let (qh, kh, vh) = if self.n_heads == 1 {
                    (q, k, v)
                } else {
                    let s = h * head_dim;
                    (
                        tape.slice_cols(q, s, head_dim),
                        tape.slice_cols(k, s, head_dim),
                        tape.slice_cols(v, s, head_dim),
                    )
                };
                let scores = tape.matmul_t(qh, false, kh, true);
                let scores = tape.scale(scores, scale);
                let p = tape.softmax(scores);
                tape.matmul(p, vh)
            })
            .collect();
        let joined = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)
        };
        self.o.forward(tape, store, joined)
    }
}

/// Pre-LN block: `x + Attn(LN(x))`, then `x + FF(LN(x))` with a ReLU
/// feed-forward of hidden width `4·dim`.
#[derive(Clone, Debug)]
pub struct TransformerLayer {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl TransformerLayer {
    pub const FF_MULT: usize = 4;

    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        n_heads: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let hidden = Self::FF_MULT * dim;
        Ok(Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            attn: Attention::new(store, &format!("{name}.attn"), dim, n_heads, rng)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim),
            ff1: Linear::new(store, &format!("{name}.ff1"), dim, hidden, true, rng),
            ff2: Linear::new(store, &format!("{name}.ff2"), hidden, dim, true, rng),
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Var {
        let h = self.ln1.forward(tape, store, x);
        let a = self.attn.forward(tape, store, h);
        let x = tape.add(x, a);
        let h = self.ln2.forward(tape, store, x);
        let h = self.ff1.forward(tape, store, h);
        let h = tape.relu(h);
        let f = self.ff2.forward(tape, store, h);
        tape.add(x, f)
    }

    /// Zero both output projections so the block reduces to the identity.
    pub fn make_identity<T: Scalar>(&self, store: &mut ParamStore<T>) {
        self.attn.o.zero(store);
        self.ff2.zero(store);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::tape::softmax_rows;
    use crate::seed;

    fn random(rng: &mut Rng, r: usize, c: usize) -> Tensor<f64> {
        Tensor::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn indivisible_heads_is_config_error() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = seed::rng(0);
        let err = Attention::new(&mut store, "a", 10, 3, &mut rng).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn single_token_attention_is_projected_value() {
        let mut rng = seed::rng(1);
        let mut store = ParamStore::<f64>::new();
        let attn = Attention::new(&mut store, "a", 6, 2, &mut rng).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            let t = random(&mut rng, store.value(id).rows(), store.value(id).cols());
            *store.value_mut(id) = t;
        }
        let x = random(&mut rng, 1, 6);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = attn.forward(&mut tape, &store, xv);
        let mut v = x.matmul(store.value(attn.v.w)).unwrap();
        v.add_assign(store.value(attn.v.b.unwrap()));
        let mut expect = v.matmul(store.value(attn.o.w)).unwrap();
        expect.add_assign(store.value(attn.o.b.unwrap()));
        assert!(tape.value(y).max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn one_head_matches_straight_line_formula() {
        let mut rng = seed::rng(2);
        let mut store = ParamStore::<f64>::new();
        let attn = Attention::new(&mut store, "a", 8, 1, &mut rng).unwrap();
        let x = random(&mut rng, 4, 8);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = attn.forward(&mut tape, &store, xv);

        // softmax(Q Kᵀ / √d) V Wo + bo, written out with explicit loops.
        let proj = |l: &Linear| {
            let w = store.value(l.w);
            let b = store.value(l.b.unwrap());
            Tensor::from_fn(4, 8, |r, c| {
                b.get(0, c) + (0..8).map(|p| x.get(r, p) * w.get(p, c)).sum::<f64>()
            })
        };
        let (q, k, v) = (proj(&attn.q), proj(&attn.k), proj(&attn.v));
        let mut out = Tensor::<f64>::zeros(4, 8);
        for i in 0..4 {
            let logits: Vec<f64> = (0..4)
                .map(|j| (0..8).map(|c| q.get(i, c) * k.get(j, c)).sum::<f64>() / 8f64.sqrt())
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
            for c in 0..8 {
                let a: f64 = (0..4).map(|j| (logits[j] - mx).exp() / z * v.get(j, c)).sum();
                out.set(i, c, a);
            }
        }
        let wo = store.value(attn.o.w);
        let bo = store.value(attn.o.b.unwrap());
        let expect = Tensor::from_fn(4, 8, |r, c| {
            bo.get(0, c) + (0..8).map(|p| out.get(r, p) * wo.get(p, c)).sum::<f64>()
        });
        assert!(tape.value(y).max_abs_diff(&expect) < 1e-6);
    }

    #[test]
    fn zeroed_output_projections_give_identity() {
        let mut rng = seed::rng(3);
        let mut store = ParamStore::<f64>::new();
        let layers: Vec<_> = (0..3)
            .map(|i| TransformerLayer::new(&mut store, &format!("l{i}"), 8, 2, &mut rng).unwrap())
            .collect();
        for l in &layers {
            l.make_identity(&mut store);
        }
        let x = random(&mut rng, 5, 8);
        let mut tape = Tape::new();
        let mut h = tape.constant(x.clone());
        for l in &layers {
            h = l.forward(&mut tape, &store, h);
        }
        assert_eq!(tape.value(h), &x);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = seed::rng(4);
        let x = random(&mut rng, 7, 13).map(|v| v * 30.0);
        let s = softmax_rows(&x);
        for r in 0..7 {
            assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_output_is_standardised() {
        let mut rng = seed::rng(5);
        let mut store = ParamStore::<f64>::new();
        let ln = LayerNorm::new(&mut store, "ln", 32);
        let x = random(&mut rng, 16, 32).map(|v| 3.0 * v + 1.5);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let y = ln.forward(&mut tape, &store, xv);
        for r in 0..16 {
            let row = tape.value(y).row(r);
            let mean = row.iter().sum::<f64>() / 32.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
    }
}
