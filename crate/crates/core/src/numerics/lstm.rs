use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{Bound, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// One LSTM layer with gate order input, forget, candidate, output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LstmLayer {
    pub input: usize,
    pub hidden: usize,
    w: ParamId,
    u: ParamId,
    b: ParamId,
}

impl LstmLayer {
    /// Registers `{prefix}w [4H, in]`, `{prefix}u [4H, H]` and `{prefix}b [4H]`
    /// drawn from `uniform(-init, init)`, with the forget-gate bias raised by 1.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        init: f64,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{prefix}w"), Tensor::uniform(&[4 * hidden, input], -init, init, rng));
        let u = store.add(format!("{prefix}u"), Tensor::uniform(&[4 * hidden, hidden], -init, init, rng));
        let mut bias = Tensor::uniform(&[4 * hidden], -init, init, rng);
        bias.data_mut()[hidden..2 * hidden].iter_mut().for_each(|v| *v += 1.0);
        let b = store.add(format!("{prefix}b"), bias);
        LstmLayer { input, hidden, w, u, b }
    }

    pub fn params(&self) -> [ParamId; 3] {
        [self.w, self.u, self.b]
    }

    /// Zero state `(h, c)` as constants.
    pub fn zero_state(&self, g: &mut Graph) -> (Var, Var) {
        (
            g.constant(Tensor::zeros(&[self.hidden])),
            g.constant(Tensor::zeros(&[self.hidden])),
        )
    }

    pub fn step(&self, g: &mut Graph, p: &Bound, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        if g.value(x).len() != self.input {
            return Err(Error::dim(format!(
                "LSTM input of {} for layer expecting {}",
                g.value(x).len(),
                self.input
            )));
        }
        let hd = self.hidden;
        let zx = g.matvec(p[self.w], x)?;
        let zh = g.matvec(p[self.u], h)?;
        let z = g.add(zx, zh)?;
        let z = g.add(z, p[self.b])?;
        let i = g.slice(z, 0, hd)?;
        let f = g.slice(z, hd, hd)?;
        let cand = g.slice(z, 2 * hd, hd)?;
        let o = g.slice(z, 3 * hd, hd)?;
        let (i, f, o) = (g.sigmoid(i), g.sigmoid(f), g.sigmoid(o));
        let cand = g.tanh(cand);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;
        Ok((h, c))
    }

    /// Runs over `xs` from `state` (zeros when `None`); returns every hidden
    /// state and the final cell.
    pub fn run(&self, g: &mut Graph, p: &Bound, xs: &[Var], state: Option<(Var, Var)>) -> Result<(Vec<Var>, Var)> {
        let (mut h, mut c) = match state {
            Some(s) => s,
            None => self.zero_state(g),
        };
        let mut hs = Vec::with_capacity(xs.len());
        for &x in xs {
            (h, c) = self.step(g, p, x, h, c)?;
            hs.push(h);
        }
        Ok((hs, c))
    }
}

/// Forward and backward LSTM layers whose outputs are concatenated per
/// position (`2H`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiLstm {
    pub fwd: LstmLayer,
    pub bwd: LstmLayer,
}

impl BiLstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        init: f64,
        rng: &mut R,
    ) -> Self {
        BiLstm {
            fwd: LstmLayer::new(store, &format!("{prefix}fwd/"), input, hidden, init, rng),
            bwd: LstmLayer::new(store, &format!("{prefix}bwd/"), input, hidden, init, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.fwd.hidden
    }

    pub fn run(&self, g: &mut Graph, p: &Bound, xs: &[Var]) -> Result<Vec<Var>> {
        let (f, _) = self.fwd.run(g, p, xs, None)?;
        let rev: Vec<Var> = xs.iter().rev().copied().collect();
        let (mut b, _) = self.bwd.run(g, p, &rev, None)?;
        b.reverse();
        f.into_iter().zip(b).map(|(hf, hb)| g.concat(&[hf, hb])).collect()
    }
}
