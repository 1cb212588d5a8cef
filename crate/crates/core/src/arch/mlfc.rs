//! Multi-layer fully-connected recurrent network.
//!
//! Layer `l` keeps one recurrent weight matrix on its own previous output
//! and receives every *other* layer through its input matrix, giving full
//! skip connectivity across layers:
//!
//! ```text
//! x^l_k = A^l y^l_{k-1} + B^l u^l_k + b^l
//! y^l_k = f^l(x^l_k)
//! u^l_k = [u_k, y^1_k, ..., y^{l-1}_k, y^{l+1}_{k-1}, ..., y^L_{k-1}]
//! ```
//!
//! where `u_k` is the network-level input. Layers below `l` contribute their
//! output from the current sweep, layers above contribute last step's
//! output; the composition order is exactly as written.

use crate::error::{Error, Result};
use crate::numeric::param::{BlockId, ParamLayout};
use crate::numeric::tape::{Tape, Var};
use crate::numeric::Act;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlfcLayerCfg {
    pub neurons: usize,
    pub act: Act,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlfcConfig {
    pub layers: Vec<MlfcLayerCfg>,
}

impl MlfcConfig {
    /// All-tanh network, `layers` layers of `neurons` each.
    pub fn uniform(layers: usize, neurons: usize) -> Self {
        MlfcConfig {
            layers: vec![
                MlfcLayerCfg {
                    neurons,
                    act: Act::Tanh
                };
                layers
            ],
        }
    }
}

#[derive(Debug, Clone)]
pub struct MlfcLayer {
    pub neurons: usize,
    pub act: Act,
    /// Width of the composed input `u^l`.
    pub in_width: usize,
    pub a: BlockId,
    pub b: BlockId,
    pub bias: BlockId,
}

#[derive(Debug, Clone)]
pub struct MlfcNet {
    pub layers: Vec<MlfcLayer>,
    /// Width of the network-level input `u_k`.
    pub global_width: usize,
}

impl MlfcNet {
    /// Register parameter blocks for all layers. `global_width` is the width
    /// of the network-level input each layer's composition starts with;
    /// `prefix` namespaces the block names when several networks share one
    /// parameter vector.
    pub fn build(
        layout: &mut ParamLayout,
        prefix: &str,
        global_width: usize,
        cfg: &MlfcConfig,
    ) -> Result<MlfcNet> {
        if cfg.layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        if global_width == 0 {
            return Err(Error::Config("network input width must be positive".into()));
        }
        let total_neurons: usize = cfg.layers.iter().map(|l| l.neurons).sum();
        let mut layers = Vec::with_capacity(cfg.layers.len());
        for (l, lc) in cfg.layers.iter().enumerate() {
            if lc.neurons == 0 {
                return Err(Error::Config(format!("layer {l} has zero neurons")));
            }
            // Every layer except this one feeds the composed input.
            let in_width = global_width + total_neurons - lc.neurons;
            let a = layout.push(format!("{prefix}mlfc.l{l}.a"), lc.neurons, lc.neurons);
            let b = layout.push(format!("{prefix}mlfc.l{l}.b"), lc.neurons, in_width);
            let bias = layout.push_vec(format!("{prefix}mlfc.l{l}.bias"), lc.neurons);
            layers.push(MlfcLayer {
                neurons: lc.neurons,
                act: lc.act,
                in_width,
                a,
                b,
                bias,
            });
        }
        Ok(MlfcNet {
            layers,
            global_width,
        })
    }

    /// Total width of the stacked layer outputs `[y^1; ...; y^L]`.
    pub fn internal_dim(&self) -> usize {
        self.layers.iter().map(|l| l.neurons).sum()
    }

    pub fn state_part_dims(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.neurons).collect()
    }

    /// Admissible range of each state component, for bounding learned
    /// initial states. `cap` substitutes for activations without an
    /// intrinsic range.
    pub fn state_bounds(&self, cap: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.internal_dim());
        for l in &self.layers {
            let r = l.act.range().unwrap_or((-cap, cap));
            out.extend(std::iter::repeat(r).take(l.neurons));
        }
        out
    }

    /// One synchronous sweep over all layers. `prev` holds every layer's
    /// output from the previous step.
    pub fn step(
        &self,
        t: &mut Tape,
        params: &[Var],
        mut drop_mask: Option<&mut dyn FnMut(&mut Tape, Var) -> Var>,
        global_in: Var,
        prev: &[Var],
    ) -> Vec<Var> {
        assert_eq!(prev.len(), self.layers.len(), "one state part per layer");
        let mut current: Vec<Var> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let u_l = compose_input(t, l, global_in, &current, prev)
                .expect("sweep composes layers in order");
            let u_l = match drop_mask.as_mut() {
                Some(mask) => mask(t, u_l),
                None => u_l,
            };
            let rec = t.matvec(params[layer.a], layer.neurons, layer.neurons, prev[l]);
            let inp = t.matvec(params[layer.b], layer.neurons, layer.in_width, u_l);
            let lin = t.add(rec, inp);
            let pre = t.add(lin, params[layer.bias]);
            let y = match layer.act {
                Act::Identity => pre,
                Act::Tanh => t.tanh(pre),
                Act::Logistic => t.logistic(pre),
            };
            current.push(y);
        }
        current
    }
}

/// Compose layer `l`'s input `u^l_k = [u_k, y^1_k, ..., y^{l-1}_k,
/// y^{l+1}_{k-1}, ..., y^L_{k-1}]`.
///
/// `current` must hold exactly the outputs of layers `1..l` from this sweep —
/// anything else means the sweep ran out of order and is an error.
pub fn compose_input(
    t: &mut Tape,
    l: usize,
    global_in: Var,
    current: &[Var],
    prev: &[Var],
) -> Result<Var> {
    if current.len() != l {
        return Err(Error::Sequencing(format!(
            "composing input of layer {l} requires outputs of layers 1..{l} from the current sweep, have {}",
            current.len()
        )));
    }
    if l >= prev.len() {
        return Err(Error::Sequencing(format!(
            "layer index {l} out of range for {} layers",
            prev.len()
        )));
    }
    let mut parts = Vec::with_capacity(prev.len());
    parts.push(global_in);
    parts.extend_from_slice(current);
    parts.extend_from_slice(&prev[l + 1..]);
    Ok(t.concat(&parts))
}
