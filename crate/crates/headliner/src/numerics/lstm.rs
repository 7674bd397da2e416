//! An LSTM cell assembled from the graph primitives, so its backward pass
//! needs no dedicated derivation.
//!
//! The four gates share fused weight matrices (`[in,4H]` and `[H,4H]`): one
//! matmul per input instead of four, with the pre-activations sliced apart
//! afterwards. Gate order in the fused layout: input, forget, output, cell.

use crate::seed::stream_seed;

use super::graph::{Graph, Var};
use super::optim::{init_uniform_seeded, ParamSet};
use super::NumericsError;

/// Parameter slots of one LSTM layer: fused input matrix `w: [in,4H]`,
/// fused recurrent matrix `u: [H,4H]`, and fused bias `b: [4H]`.
#[derive(Debug, Clone)]
pub struct LstmLayer {
    w: usize,
    u: usize,
    b: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmLayer {
    /// Registers the layer's parameters under `prefix`, initializing each
    /// from its own name-derived stream of `init_seed`.
    pub fn register(set: &mut ParamSet, prefix: &str, input_dim: usize, hidden_dim: usize, init_seed: u64) -> LstmLayer {
        let mut reg = |suffix: &str, shape: &[usize]| {
            let name = format!("{prefix}.{suffix}");
            let value = init_uniform_seeded(shape, stream_seed(init_seed, &name));
            set.add(name, value)
        };
        LstmLayer {
            w: reg("w", &[input_dim, 4 * hidden_dim]),
            u: reg("u", &[hidden_dim, 4 * hidden_dim]),
            b: reg("b", &[4 * hidden_dim]),
            input_dim,
            hidden_dim,
        }
    }

    /// Reconstructs a layer from parameters already present in `set`
    /// (e.g. loaded from a checkpoint). Returns `None` if a slot or a shape
    /// is missing or wrong.
    pub fn lookup(set: &ParamSet, prefix: &str, input_dim: usize, hidden_dim: usize) -> Option<LstmLayer> {
        let find = |suffix: &str, shape: &[usize]| -> Option<usize> {
            let slot = set.slot(&format!("{prefix}.{suffix}"))?;
            (set.get(slot).value.shape() == shape).then_some(slot)
        };
        Some(LstmLayer {
            w: find("w", &[input_dim, 4 * hidden_dim])?,
            u: find("u", &[hidden_dim, 4 * hidden_dim])?,
            b: find("b", &[4 * hidden_dim])?,
            input_dim,
            hidden_dim,
        })
    }

    /// Binds the layer's parameters into a graph for one forward pass.
    pub fn bind(&self, g: &mut Graph, set: &ParamSet) -> Result<LstmLayerVars, NumericsError> {
        Ok(LstmLayerVars {
            w: g.param(set, self.w)?,
            u: g.param(set, self.u)?,
            b: g.param(set, self.b)?,
            hidden_dim: self.hidden_dim,
        })
    }
}

/// Graph-bound layer parameters.
pub struct LstmLayerVars {
    w: Var,
    u: Var,
    b: Var,
    pub hidden_dim: usize,
}

impl LstmLayerVars {
    /// One cell step: standard input/forget/output gates and cell candidate.
    ///
    /// `x: [B,in]`, `h_prev`/`c_prev: [B,H]` → `(h, c)`.
    pub fn step(&self, g: &mut Graph, x: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var), NumericsError> {
        let h = self.hidden_dim;
        let xw = g.matmul(x, self.w)?;
        let hu = g.matmul(h_prev, self.u)?;
        let summed = g.add(xw, hu)?;
        let pre = g.add(summed, self.b)?; // [B,4H]

        let i_pre = g.slice_cols(pre, 0, h)?;
        let f_pre = g.slice_cols(pre, h, h)?;
        let o_pre = g.slice_cols(pre, 2 * h, h)?;
        let g_pre = g.slice_cols(pre, 3 * h, h)?;

        let i_gate = g.sigmoid(i_pre)?;
        let f_gate = g.sigmoid(f_pre)?;
        let o_gate = g.sigmoid(o_pre)?;
        let candidate = g.tanh(g_pre)?;

        let keep = g.mul(f_gate, c_prev)?;
        let write = g.mul(i_gate, candidate)?;
        let c = g.add(keep, write)?;
        let c_act = g.tanh(c)?;
        let h_out = g.mul(o_gate, c_act)?;
        Ok((h_out, c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;

    fn zeroed_layer(input_dim: usize, hidden_dim: usize) -> (ParamSet, LstmLayer) {
        let mut set = ParamSet::new();
        let layer = LstmLayer::register(&mut set, "l0", input_dim, hidden_dim, 1);
        for p in set.iter_mut() {
            p.value = Tensor::zeros(p.value.shape());
        }
        (set, layer)
    }

    #[test]
    fn zero_everything_gives_zero_hidden() {
        let (set, layer) = zeroed_layer(3, 4);
        let mut g = Graph::new();
        let bound = layer.bind(&mut g, &set).unwrap();
        let x = g.input(Tensor::zeros(&[2, 3])).unwrap();
        let h0 = g.input(Tensor::zeros(&[2, 4])).unwrap();
        let c0 = g.input(Tensor::zeros(&[2, 4])).unwrap();
        let (h, _c) = bound.step(&mut g, x, h0, c0).unwrap();
        assert!(g.value(h).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn steps_are_deterministic() {
        let mut set = ParamSet::new();
        let layer = LstmLayer::register(&mut set, "l0", 3, 4, 7);
        let run = || {
            let mut g = Graph::new();
            let bound = layer.bind(&mut g, &set).unwrap();
            let x = g.input(Tensor::from_vec(&[1, 3], vec![0.3, -0.2, 0.9]).unwrap()).unwrap();
            let mut h = g.input(Tensor::zeros(&[1, 4])).unwrap();
            let mut c = g.input(Tensor::zeros(&[1, 4])).unwrap();
            for _ in 0..3 {
                let (nh, nc) = bound.step(&mut g, x, h, c).unwrap();
                h = nh;
                c = nc;
            }
            g.value(h).data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn registration_is_name_seeded() {
        let mut a = ParamSet::new();
        LstmLayer::register(&mut a, "enc.l0", 3, 4, 42);
        let mut b = ParamSet::new();
        b.add("unrelated", Tensor::zeros(&[1]));
        LstmLayer::register(&mut b, "enc.l0", 3, 4, 42);
        // same names, same seed -> same values regardless of surrounding set
        let pa = a.by_name("enc.l0.w").unwrap();
        let pb = b.by_name("enc.l0.w").unwrap();
        assert_eq!(pa.value, pb.value);
    }

    #[test]
    fn lookup_round_trip() {
        let mut set = ParamSet::new();
        let layer = LstmLayer::register(&mut set, "dec.l1", 5, 4, 3);
        let found = LstmLayer::lookup(&set, "dec.l1", 5, 4).unwrap();
        assert_eq!(found.input_dim, layer.input_dim);
        assert!(LstmLayer::lookup(&set, "dec.l1", 6, 4).is_none());
        assert!(LstmLayer::lookup(&set, "nope", 5, 4).is_none());
    }

    #[test]
    fn gradients_flow_through_a_step() {
        use crate::numerics::gradcheck::gradient_check;
        let mut set = ParamSet::new();
        let layer = LstmLayer::register(&mut set, "l0", 3, 4, 11);
        let x_data = Tensor::from_vec(&[2, 3], vec![0.4, -0.6, 0.1, 0.9, 0.2, -0.3]).unwrap();

        let forward = |ps: &ParamSet| {
            let mut g = Graph::new();
            let bound = layer.bind(&mut g, ps)?;
            let x = g.input(x_data.clone())?;
            let mut h = g.input(Tensor::zeros(&[2, 4]))?;
            let mut c = g.input(Tensor::zeros(&[2, 4]))?;
            for _ in 0..3 {
                let (nh, nc) = bound.step(&mut g, x, h, c)?;
                h = nh;
                c = nc;
            }
            // sum of tanh keeps every output in play
            let s = g.tanh(h)?;
            let ones = g.input(Tensor::filled(&[4, 1], 1.0))?;
            let folded = g.matmul(s, ones)?;
            let ones2 = g.input(Tensor::filled(&[1, 2], 1.0))?;
            let total = g.matmul(ones2, folded)?;
            let loss = g.reshape(total, &[])?;
            Ok((g, loss))
        };
        {
            let (mut g, loss) = forward(&set).unwrap();
            g.backward(loss).unwrap();
            g.flush_grads(&mut set);
        }
        let err = gradient_check(|ps| forward(ps).map(|(g, l)| g.value(l).item()), &mut set, 1e-5).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }
}
