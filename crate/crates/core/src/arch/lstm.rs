//! Stacked memory-cell (LSTM) network with peephole connections.
//!
//! Per layer, with logistic gates and tanh cell nonlinearities:
//!
//! ```text
//! g^i_k = sigma(W^i_i u_k + W^m_i m_{k-1} + W^c_i c_{k-1} + b_i)
//! g^f_k = sigma(W^i_f u_k + W^m_f m_{k-1} + W^c_f c_{k-1} + b_f)
//! c_k   = g^i_k . tanh(W^i_c u_k + W^m_c m_{k-1} + b_c) + g^f_k . c_{k-1}
//! g^o_k = sigma(W^i_o u_k + W^m_o m_{k-1} + W^c_o c_k + b_o)
//! m_k   = tanh(c_k) . g^o_k
//! ```
//!
//! Note the output gate peeps at the *updated* cell state `c_k` while the
//! input and forget gates see `c_{k-1}`. Layers are connected in series:
//! layer `l > 1` receives `m^{l-1}_k`.

use crate::error::{Error, Result};
use crate::numeric::param::{BlockId, BlockTag, ParamLayout};
use crate::numeric::tape::{Tape, Var};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub layers: usize,
    /// Cells per layer.
    pub cells: usize,
    /// Peephole connections from the cell state into the gates.
    pub peepholes: bool,
}

impl LstmConfig {
    pub fn new(layers: usize, cells: usize) -> Self {
        LstmConfig {
            layers,
            cells,
            peepholes: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LstmLayer {
    pub cells: usize,
    pub in_width: usize,
    w_ii: BlockId,
    w_mi: BlockId,
    w_ci: Option<BlockId>,
    b_i: BlockId,
    w_if: BlockId,
    w_mf: BlockId,
    w_cf: Option<BlockId>,
    b_f: BlockId,
    w_io: BlockId,
    w_mo: BlockId,
    w_co: Option<BlockId>,
    b_o: BlockId,
    w_ic: BlockId,
    w_mc: BlockId,
    b_c: BlockId,
}

#[derive(Debug, Clone)]
pub struct LstmNet {
    pub layers: Vec<LstmLayer>,
}

impl LstmNet {
    pub fn build(
        layout: &mut ParamLayout,
        prefix: &str,
        in_width: usize,
        cfg: &LstmConfig,
    ) -> Result<LstmNet> {
        if cfg.layers == 0 || cfg.cells == 0 {
            return Err(Error::Config(
                "memory-cell network needs at least one layer of at least one cell".into(),
            ));
        }
        if in_width == 0 {
            return Err(Error::Config("network input width must be positive".into()));
        }
        let n = cfg.cells;
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let iw = if l == 0 { in_width } else { n };
            let peep = |layout: &mut ParamLayout, name: String| {
                if cfg.peepholes {
                    Some(layout.push(name, n, n))
                } else {
                    None
                }
            };
            let w_ii = layout.push(format!("{prefix}lstm.l{l}.w_ii"), n, iw);
            let w_mi = layout.push(format!("{prefix}lstm.l{l}.w_mi"), n, n);
            let w_ci = peep(layout, format!("{prefix}lstm.l{l}.w_ci"));
            let b_i = layout.push_vec(format!("{prefix}lstm.l{l}.b_i"), n);
            let w_if = layout.push(format!("{prefix}lstm.l{l}.w_if"), n, iw);
            let w_mf = layout.push(format!("{prefix}lstm.l{l}.w_mf"), n, n);
            let w_cf = peep(layout, format!("{prefix}lstm.l{l}.w_cf"));
            let b_f = layout.push_tagged(format!("{prefix}lstm.l{l}.b_f"), n, 1, BlockTag::ForgetBias);
            let w_io = layout.push(format!("{prefix}lstm.l{l}.w_io"), n, iw);
            let w_mo = layout.push(format!("{prefix}lstm.l{l}.w_mo"), n, n);
            let w_co = peep(layout, format!("{prefix}lstm.l{l}.w_co"));
            let b_o = layout.push_vec(format!("{prefix}lstm.l{l}.b_o"), n);
            let w_ic = layout.push(format!("{prefix}lstm.l{l}.w_ic"), n, iw);
            let w_mc = layout.push(format!("{prefix}lstm.l{l}.w_mc"), n, n);
            let b_c = layout.push_vec(format!("{prefix}lstm.l{l}.b_c"), n);
            layers.push(LstmLayer {
                cells: n,
                in_width: iw,
                w_ii,
                w_mi,
                w_ci,
                b_i,
                w_if,
                w_mf,
                w_cf,
                b_f,
                w_io,
                w_mo,
                w_co,
                b_o,
                w_ic,
                w_mc,
                b_c,
            });
        }
        Ok(LstmNet { layers })
    }

    /// Width of the stacked `[c^1; m^1; ...; c^L; m^L]` state.
    pub fn internal_dim(&self) -> usize {
        2 * self.layers.iter().map(|l| l.cells).sum::<usize>()
    }

    /// State is stored as alternating cell / hidden parts per layer.
    pub fn state_part_dims(&self) -> Vec<usize> {
        self.layers.iter().flat_map(|l| [l.cells, l.cells]).collect()
    }

    /// Cell states are capped at `cap`; hidden states live in (-1, 1).
    pub fn state_bounds(&self, cap: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.internal_dim());
        for l in &self.layers {
            out.extend(std::iter::repeat((-cap, cap)).take(l.cells));
            out.extend(std::iter::repeat((-1.0, 1.0)).take(l.cells));
        }
        out
    }

    /// One step of a single layer. Returns `(c_k, m_k)`.
    pub fn cell_step(
        &self,
        t: &mut Tape,
        params: &[Var],
        layer: &LstmLayer,
        input: Var,
        c_prev: Var,
        m_prev: Var,
    ) -> (Var, Var) {
        let n = layer.cells;
        let iw = layer.in_width;
        let gate = |t: &mut Tape, wi, wm, wc: Option<BlockId>, b, cell: Var| -> Var {
            let mut pre = t.matvec(params[wi], n, iw, input);
            let rec = t.matvec(params[wm], n, n, m_prev);
            pre = t.add(pre, rec);
            if let Some(wc) = wc {
                let peep = t.matvec(params[wc], n, n, cell);
                pre = t.add(pre, peep);
            }
            let pre = t.add(pre, params[b]);
            t.logistic(pre)
        };
        let g_i = gate(t, layer.w_ii, layer.w_mi, layer.w_ci, layer.b_i, c_prev);
        let g_f = gate(t, layer.w_if, layer.w_mf, layer.w_cf, layer.b_f, c_prev);
        let mut cand_pre = t.matvec(params[layer.w_ic], n, iw, input);
        let cand_rec = t.matvec(params[layer.w_mc], n, n, m_prev);
        cand_pre = t.add(cand_pre, cand_rec);
        cand_pre = t.add(cand_pre, params[layer.b_c]);
        let cand = t.tanh(cand_pre);
        let write = t.mul(g_i, cand);
        let keep = t.mul(g_f, c_prev);
        let c = t.add(write, keep);
        let g_o = gate(t, layer.w_io, layer.w_mo, layer.w_co, layer.b_o, c);
        let c_squashed = t.tanh(c);
        let m = t.mul(c_squashed, g_o);
        (c, m)
    }

    /// One step of the whole stack. `prev` alternates `[c^1, m^1, c^2, ...]`.
    /// Returns the new state parts in the same order.
    pub fn step(
        &self,
        t: &mut Tape,
        params: &[Var],
        mut drop_mask: Option<&mut dyn FnMut(&mut Tape, Var) -> Var>,
        net_in: Var,
        prev: &[Var],
    ) -> Vec<Var> {
        assert_eq!(prev.len(), 2 * self.layers.len(), "two state parts per layer");
        let mut out = Vec::with_capacity(prev.len());
        let mut input = net_in;
        for (l, layer) in self.layers.iter().enumerate() {
            let input_masked = match drop_mask.as_mut() {
                Some(mask) => mask(t, input),
                None => input,
            };
            let (c, m) = self.cell_step(t, params, layer, input_masked, prev[2 * l], prev[2 * l + 1]);
            out.push(c);
            out.push(m);
            input = m;
        }
        out
    }
}
