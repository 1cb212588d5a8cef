//! Recurrent predictor architectures behind one common interface.
//!
//! A predictor's state `x_k = [o_k; s_k]` splits into *output-states* `o_k`
//! — the network output fed back from the previous step, `o_k = y~_{k-1}` —
//! and *internal states* `s_k` (layer outputs for the fully-connected
//! network; cell and hidden vectors for the memory-cell network). Each step
//! advances the internal states from the previous full state and the current
//! input, then applies a linear output map over the whole state:
//!
//! ```text
//! o_k = y~_{k-1}
//! s_k = f(x_{k-1}, u_k)
//! y~_k = A_o o_k + A_s s_k + B u_k
//! ```
//!
//! An optional tapped delay line can be placed on the input and fed-back
//! output paths, in which case the network-level input is the concatenated
//! contents of both delay lines instead of the instantaneous signals.

pub mod lstm;
pub mod mlfc;
pub mod tdl;

pub use lstm::{LstmConfig, LstmNet};
pub use mlfc::{MlfcConfig, MlfcLayerCfg, MlfcNet};
pub use tdl::{Tdl, TdlVars, DEFAULT_TDL_CAPACITY};

use crate::error::{Error, Result};
use crate::numeric::param::{BlockId, ParamLayout};
use crate::numeric::tape::{Tape, Var};
use serde::{Deserialize, Serialize};

/// Which recurrent network fills the internal-state update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ArchConfig {
    Mlfc(MlfcConfig),
    Lstm(LstmConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    /// External input width `m`.
    pub input_dim: usize,
    /// Output width `n`.
    pub output_dim: usize,
    pub arch: ArchConfig,
    /// Capacity of the input/output delay lines, when present.
    pub tdl: Option<usize>,
}

#[derive(Debug, Clone)]
enum Net {
    Mlfc(MlfcNet),
    Lstm(LstmNet),
}

/// A fully specified predictor: architecture, delay lines and output map.
/// Its parameter blocks live in whatever [`ParamLayout`] it was built into,
/// so several predictors (and their initialization networks) can share one
/// flat parameter vector.
#[derive(Debug, Clone)]
pub struct Predictor {
    cfg: PredictorConfig,
    net: Net,
    a_o: BlockId,
    a_s: BlockId,
    b: BlockId,
}

/// Recurrent state between steps, in plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnState {
    /// Output-states: the fed-back previous output, length `n`.
    pub o: Vec<f64>,
    /// Internal states, architecture-specific layout.
    pub s: Vec<f64>,
    pub tdl_u: Option<Tdl>,
    pub tdl_o: Option<Tdl>,
}

/// Recurrent state as tape nodes, used inside training graphs. Internal
/// states are kept as per-part nodes to avoid re-slicing every step.
#[derive(Debug, Clone)]
pub struct StateVars {
    pub o: Var,
    pub parts: Vec<Var>,
    pub tdl_u: Option<TdlVars>,
    pub tdl_o: Option<TdlVars>,
}

/// A state placed on the trajectory, plus the output `y~_{k0}` the output
/// map produced there — which the first prediction step feeds back.
#[derive(Debug, Clone, PartialEq)]
pub struct InitializedState {
    pub state: RnnState,
    pub y0: Vec<f64>,
}

/// Tape-side counterpart of [`InitializedState`].
#[derive(Debug, Clone)]
pub struct InitializedVars {
    pub state: StateVars,
    pub y0: Var,
}

/// Hook for masking a layer's input path (dropout). Receives the composed
/// layer input and returns the masked version.
pub type InputMask<'a> = &'a mut dyn FnMut(&mut Tape, Var) -> Var;

impl Predictor {
    /// Register the predictor's parameter blocks in `layout` (names prefixed
    /// with `prefix`) and return the wired-up predictor.
    pub fn build(layout: &mut ParamLayout, prefix: &str, cfg: PredictorConfig) -> Result<Predictor> {
        if cfg.input_dim == 0 || cfg.output_dim == 0 {
            return Err(Error::Config(
                "predictor needs positive input and output widths".into(),
            ));
        }
        if cfg.tdl == Some(0) {
            return Err(Error::Config("delay-line capacity must be >= 1".into()));
        }
        let net_in = net_in_width(&cfg);
        let net = match &cfg.arch {
            ArchConfig::Mlfc(mc) => Net::Mlfc(MlfcNet::build(layout, prefix, net_in, mc)?),
            ArchConfig::Lstm(lc) => Net::Lstm(LstmNet::build(layout, prefix, net_in, lc)?),
        };
        let internal = match &net {
            Net::Mlfc(n) => n.internal_dim(),
            Net::Lstm(n) => n.internal_dim(),
        };
        let n = cfg.output_dim;
        let a_o = layout.push(format!("{prefix}out.a_o"), n, n);
        let a_s = layout.push(format!("{prefix}out.a_s"), n, internal);
        let b = layout.push(format!("{prefix}out.b"), n, cfg.input_dim);
        Ok(Predictor { cfg, net, a_o, a_s, b })
    }

    /// Build a predictor in a fresh layout of its own.
    pub fn standalone(cfg: PredictorConfig) -> Result<(ParamLayout, Predictor)> {
        let mut layout = ParamLayout::new();
        let p = Predictor::build(&mut layout, "", cfg)?;
        Ok((layout, p))
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.cfg
    }

    /// Block ids of the output map `(A_o, A_s, B)`.
    pub fn output_blocks(&self) -> (BlockId, BlockId, BlockId) {
        (self.a_o, self.a_s, self.b)
    }

    pub fn input_dim(&self) -> usize {
        self.cfg.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.cfg.output_dim
    }

    pub fn internal_dim(&self) -> usize {
        match &self.net {
            Net::Mlfc(n) => n.internal_dim(),
            Net::Lstm(n) => n.internal_dim(),
        }
    }

    /// Declared state count: output-states plus internal states. This is
    /// the width an initialization network must produce.
    pub fn state_count(&self) -> usize {
        self.cfg.output_dim + self.internal_dim()
    }

    /// Admissible `(lo, hi)` range per state component (output-states
    /// first). `cap` bounds components without an intrinsic range —
    /// memory-cell states and identity-activation layers.
    pub fn state_bounds(&self, cap: f64) -> Vec<(f64, f64)> {
        let mut out = vec![(-1.0, 1.0); self.cfg.output_dim];
        out.extend(match &self.net {
            Net::Mlfc(n) => n.state_bounds(cap),
            Net::Lstm(n) => n.state_bounds(cap),
        });
        out
    }

    fn state_part_dims(&self) -> Vec<usize> {
        match &self.net {
            Net::Mlfc(n) => n.state_part_dims(),
            Net::Lstm(n) => n.state_part_dims(),
        }
    }

    pub fn uses_tdl(&self) -> bool {
        self.cfg.tdl.is_some()
    }

    /// All-zero state (empty delay lines when configured).
    pub fn zero_state(&self) -> RnnState {
        let line_dims = (self.cfg.input_dim, self.cfg.output_dim);
        RnnState {
            o: vec![0.0; self.cfg.output_dim],
            s: vec![0.0; self.internal_dim()],
            tdl_u: self.cfg.tdl.map(|cap| Tdl::new(cap, line_dims.0)),
            tdl_o: self.cfg.tdl.map(|cap| Tdl::new(cap, line_dims.1)),
        }
    }

    pub fn check_state(&self, state: &RnnState) -> Result<()> {
        if state.o.len() != self.cfg.output_dim || state.s.len() != self.internal_dim() {
            return Err(Error::Dim {
                op: "RnnState",
                expected: format!(
                    "o of length {}, s of length {}",
                    self.cfg.output_dim,
                    self.internal_dim()
                ),
                got: format!("o of length {}, s of length {}", state.o.len(), state.s.len()),
            });
        }
        if self.uses_tdl() != (state.tdl_u.is_some() && state.tdl_o.is_some()) {
            return Err(Error::Config(
                "state delay lines do not match the predictor's configuration".into(),
            ));
        }
        Ok(())
    }

    // ---- tape-side plumbing ----

    /// Lift a concrete state onto a tape as constants.
    pub fn lift_state(&self, t: &mut Tape, state: &RnnState) -> StateVars {
        let o = t.constant(&state.o);
        let mut parts = Vec::new();
        let mut at = 0;
        for d in self.state_part_dims() {
            parts.push(t.constant(&state.s[at..at + d]));
            at += d;
        }
        StateVars {
            o,
            parts,
            tdl_u: state.tdl_u.as_ref().map(|l| TdlVars::from_concrete(t, l)),
            tdl_o: state.tdl_o.as_ref().map(|l| TdlVars::from_concrete(t, l)),
        }
    }

    /// Read a tape-side state back into plain values.
    pub fn lower_state(&self, t: &Tape, vars: &StateVars) -> RnnState {
        let mut s = Vec::with_capacity(self.internal_dim());
        for p in &vars.parts {
            s.extend_from_slice(t.value(*p));
        }
        RnnState {
            o: t.value(vars.o).to_vec(),
            s,
            tdl_u: vars.tdl_u.as_ref().map(|l| l.to_concrete(t)),
            tdl_o: vars.tdl_o.as_ref().map(|l| l.to_concrete(t)),
        }
    }

    /// Split a flat `[o; s]` node (e.g. an initialization network's output)
    /// into the per-part representation.
    pub fn split_state_vector(&self, t: &mut Tape, x: Var) -> (Var, Vec<Var>) {
        assert_eq!(x.len(), self.state_count(), "state vector width");
        let o = t.slice(x, 0, self.cfg.output_dim);
        let mut parts = Vec::new();
        let mut at = self.cfg.output_dim;
        for d in self.state_part_dims() {
            parts.push(t.slice(x, at, d));
            at += d;
        }
        (o, parts)
    }

    /// The linear output map `A_o o + A_s s + B u` evaluated at a state.
    pub fn output_map(&self, t: &mut Tape, params: &[Var], o: Var, parts: &[Var], u: Var) -> Var {
        let n = self.cfg.output_dim;
        let s_flat = if parts.len() == 1 {
            parts[0]
        } else {
            t.concat(parts)
        };
        let yo = t.matvec(params[self.a_o], n, n, o);
        let ys = t.matvec(params[self.a_s], n, self.internal_dim(), s_flat);
        let yu = t.matvec(params[self.b], n, self.cfg.input_dim, u);
        let oy = t.add(yo, ys);
        t.add(oy, yu)
    }

    /// One predictor step on the tape. `state` is `x_{k-1}`, `prev_y` is
    /// `y~_{k-1}`, `u` is `u_k`; returns `(x_k, y~_k)`.
    pub fn step_on_tape(
        &self,
        t: &mut Tape,
        params: &[Var],
        mut mask: Option<InputMask<'_>>,
        state: &StateVars,
        prev_y: Var,
        u: Var,
    ) -> (StateVars, Var) {
        // Delay lines are pushed before the sweep so the network sees the
        // newest input sample (and the output produced one step ago).
        let (tdl_u, tdl_o, net_in) = if self.uses_tdl() {
            let mut tu = state.tdl_u.clone().expect("state carries input delay line");
            let mut to = state.tdl_o.clone().expect("state carries output delay line");
            tu.push(u);
            to.push(prev_y);
            let ru = tu.read(t);
            let ro = to.read(t);
            let joined = t.concat(&[ru, ro]);
            (Some(tu), Some(to), joined)
        } else {
            let net_in = match &self.net {
                // The fully-connected sweep composes from the external input
                // alone; output feedback reaches it through A_o.
                Net::Mlfc(_) => u,
                // The cell stack receives the fed-back output alongside the
                // input (last layer output returns to the first layer).
                Net::Lstm(_) => t.concat(&[u, state.o]),
            };
            (None, None, net_in)
        };

        let mask_dyn: Option<InputMask<'_>> = mask.as_deref_mut().map(|m| m as InputMask<'_>);
        let parts = match &self.net {
            Net::Mlfc(n) => n.step(t, params, mask_dyn, net_in, &state.parts),
            Net::Lstm(n) => n.step(t, params, mask_dyn, net_in, &state.parts),
        };
        let o = prev_y;
        let y = self.output_map(t, params, o, &parts, u);
        (
            StateVars {
                o,
                parts,
                tdl_u,
                tdl_o,
            },
            y,
        )
    }

    /// Closed-loop rollout over `inputs` on the tape; returns one output per
    /// input row plus the final state.
    pub fn rollout_on_tape(
        &self,
        t: &mut Tape,
        params: &[Var],
        mut mask: Option<InputMask<'_>>,
        init: InitializedVars,
        inputs: &[Var],
    ) -> (Vec<Var>, InitializedVars) {
        let mut state = init.state;
        let mut prev_y = init.y0;
        let mut ys = Vec::with_capacity(inputs.len());
        for (k, &u) in inputs.iter().enumerate() {
            t.set_step(k + 1);
            let mask_dyn: Option<InputMask<'_>> = mask.as_deref_mut().map(|m| m as InputMask<'_>);
            let (next, y) = self.step_on_tape(t, params, mask_dyn, &state, prev_y, u);
            state = next;
            prev_y = y;
            ys.push(y);
        }
        t.clear_step();
        (
            ys,
            InitializedVars {
                state,
                y0: prev_y,
            },
        )
    }

    // ---- concrete wrappers ----

    fn check_theta(layout: &ParamLayout, theta: &[f64]) -> Result<()> {
        if theta.len() != layout.total() {
            return Err(Error::Dim {
                op: "Predictor",
                expected: format!("theta of length {}", layout.total()),
                got: format!("{}", theta.len()),
            });
        }
        Ok(())
    }

    fn check_inputs(&self, inputs: &[Vec<f64>]) -> Result<()> {
        for (k, u) in inputs.iter().enumerate() {
            if u.len() != self.cfg.input_dim {
                return Err(Error::Dim {
                    op: "rollout inputs",
                    expected: format!("rows of width {}", self.cfg.input_dim),
                    got: format!("width {} at row {k}", u.len()),
                });
            }
        }
        Ok(())
    }

    /// Single concrete step; see [`step_on_tape`](Self::step_on_tape).
    /// `layout` must be the layout the predictor was built into and `theta`
    /// a full parameter vector for it.
    pub fn step(
        &self,
        layout: &ParamLayout,
        theta: &[f64],
        state: &RnnState,
        prev_y: &[f64],
        u: &[f64],
    ) -> Result<(RnnState, Vec<f64>)> {
        Self::check_theta(layout, theta)?;
        self.check_state(state)?;
        if prev_y.len() != self.cfg.output_dim || u.len() != self.cfg.input_dim {
            return Err(Error::Dim {
                op: "predictor step",
                expected: format!(
                    "prev_y of length {}, u of length {}",
                    self.cfg.output_dim, self.cfg.input_dim
                ),
                got: format!("prev_y of length {}, u of length {}", prev_y.len(), u.len()),
            });
        }
        let mut t = Tape::new();
        let params = t.bind_params(layout, theta);
        let sv = self.lift_state(&mut t, state);
        let py = t.constant(prev_y);
        let uv = t.constant(u);
        let (next, y) = self.step_on_tape(&mut t, &params, None, &sv, py, uv);
        if let Some(step) = t.poisoned() {
            return Err(Error::Instability { step });
        }
        Ok((self.lower_state(&t, &next), t.value(y).to_vec()))
    }

    /// Closed-loop multi-step prediction from an initialized state. Returns
    /// the predicted outputs (one per input row) and the continuation state.
    pub fn rollout(
        &self,
        layout: &ParamLayout,
        theta: &[f64],
        init: &InitializedState,
        inputs: &[Vec<f64>],
    ) -> Result<(Vec<Vec<f64>>, InitializedState)> {
        Self::check_theta(layout, theta)?;
        self.check_state(&init.state)?;
        self.check_inputs(inputs)?;
        let mut t = Tape::new();
        let params = t.bind_params(layout, theta);
        let sv = self.lift_state(&mut t, &init.state);
        let y0 = t.constant(&init.y0);
        let input_vars: Vec<Var> = inputs.iter().map(|u| t.constant(u)).collect();
        let (ys, fin) = self.rollout_on_tape(
            &mut t,
            &params,
            None,
            InitializedVars { state: sv, y0 },
            &input_vars,
        );
        if let Some(step) = t.poisoned() {
            return Err(Error::Instability { step });
        }
        let outputs = ys.iter().map(|y| t.value(*y).to_vec()).collect();
        Ok((
            outputs,
            InitializedState {
                state: self.lower_state(&t, &fin.state),
                y0: t.value(fin.y0).to_vec(),
            },
        ))
    }
}

fn net_in_width(cfg: &PredictorConfig) -> usize {
    match cfg.tdl {
        Some(cap) => cap * (cfg.input_dim + cfg.output_dim),
        None => match &cfg.arch {
            ArchConfig::Mlfc(_) => cfg.input_dim,
            ArchConfig::Lstm(_) => cfg.input_dim + cfg.output_dim,
        },
    }
}
