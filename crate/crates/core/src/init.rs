//! State initialization for closed-loop multi-step prediction.
//!
//! Before a predictor can roll forward from time `k0`, its recurrent state
//! `x_{k0}` must be placed on the system's trajectory. Three schemes are
//! provided:
//!
//! * **Washout** — run the predictor closed-loop from the zero state over the
//!   last `W` inputs of the history segment, discarding outputs; the state it
//!   reaches is used as `x_{k0}`.
//! * **Feed-forward initialization network** — a one-hidden-layer network
//!   maps the flattened history `(u_{k0-τ}..u_{k0}, y_{k0-τ}..y_{k0})` to
//!   `x_{k0}` in a single shot.
//! * **Recurrent initialization network** — a single-layer memory-cell
//!   encoder consumes the history one `[u_j; y_j]` pair per step; its final
//!   hidden state maps linearly to `x_{k0}`.
//!
//! Both network schemes squash every produced component into the admissible
//! range of the state it lands on, `lo + (hi - lo) * (tanh(z) + 1) / 2`, so
//! an initializer can never place the predictor outside its reachable set.
//! The network schemes are trained jointly with their predictor: a pair
//! shares one parameter vector, and the *state-initialization cost*
//!
//! ```text
//! L_si = || A_s s_{k0} - (y_{k0} - A_o y_{k0-1} - B u_{k0}) ||
//! ```
//!
//! measures how far the produced internal state is from one that would make
//! the output map reproduce the measured `y_{k0}` exactly.

use crate::arch::lstm::{LstmConfig, LstmNet};
use crate::arch::tdl::TdlVars;
use crate::arch::{InitializedState, InitializedVars, Predictor, StateVars};
use crate::error::{Error, Result};
use crate::numeric::param::{BlockId, ParamLayout};
use crate::numeric::tape::{Tape, Var};
use serde::{Deserialize, Serialize};

/// Default cap for state components without an intrinsic range (memory-cell
/// states, identity-activation layers) when squashing initializer outputs.
pub const DEFAULT_STATE_CAP: f64 = 5.0;

/// Which initialization scheme a model uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitConfig {
    /// Closed-loop warm-up over the last `steps` history inputs.
    Washout { steps: usize },
    /// One-hidden-layer feed-forward initialization network over a history
    /// of `tau + 1` samples.
    Mlp { hidden: usize, tau: usize },
    /// Single-layer memory-cell encoder over a history of `tau + 1` samples.
    Rnn { cells: usize, tau: usize },
}

impl InitConfig {
    /// History length the scheme consumes: a window's initialization segment
    /// holds `tau() + 1` rows ending at `k0`.
    pub fn tau(&self) -> usize {
        match self {
            InitConfig::Washout { steps } => *steps,
            InitConfig::Mlp { tau, .. } => *tau,
            InitConfig::Rnn { tau, .. } => *tau,
        }
    }
}

/// A borrowed history segment ending at the initialization time `k0`:
/// `u` rows are `u_{k0-τ}..u_{k0}`, `y` rows are `y_{k0-τ}..y_{k0}`. The
/// measured-output rows may be absent (empty slice) when the signal the
/// predictor emits is not measured, as for the submodels of a hybrid model.
#[derive(Debug, Clone, Copy)]
pub struct InitSegment<'a> {
    pub u: &'a [Vec<f64>],
    pub y: &'a [Vec<f64>],
}

#[derive(Debug, Clone)]
enum InitKind {
    Washout {
        steps: usize,
    },
    Mlp {
        w1: BlockId,
        b1: BlockId,
        w2: BlockId,
        b2: BlockId,
        hidden: usize,
        tau: usize,
    },
    Rnn {
        net: LstmNet,
        w_out: BlockId,
        b_out: BlockId,
        cells: usize,
    },
}

/// A state initializer bound to one predictor's state geometry. Network
/// schemes register their parameter blocks in the same layout as the
/// predictor so the pair trains as one parameter vector.
#[derive(Debug, Clone)]
pub struct Initializer {
    cfg: InitConfig,
    kind: InitKind,
    /// Admissible `(lo, hi)` per produced state component.
    bounds: Vec<(f64, f64)>,
    /// Width of one measured-output row in the history (0 when absent).
    y_width: usize,
    u_width: usize,
    state_count: usize,
}

impl Initializer {
    /// Register the initializer's parameter blocks (none for washout) and
    /// bind it to `pred`'s state geometry. `u_width` / `y_width` are the
    /// widths of the history rows the scheme will consume (`y_width` may be
    /// 0 when the predicted signal is not measured; `u_width` may differ
    /// from the predictor's input width when part of that input is an
    /// unmeasured internal signal). `cap` bounds unbounded state components
    /// for the output squash.
    pub fn build(
        layout: &mut ParamLayout,
        prefix: &str,
        pred: &Predictor,
        cfg: InitConfig,
        u_width: usize,
        y_width: usize,
        cap: f64,
    ) -> Result<Initializer> {
        if !(cap > 0.0) {
            return Err(Error::Config("state cap must be positive".into()));
        }
        if u_width == 0 {
            return Err(Error::Config(
                "initialization history needs nonempty input rows".into(),
            ));
        }
        let state_count = pred.state_count();
        let per_step = u_width + y_width;
        let kind = match &cfg {
            InitConfig::Washout { steps } => {
                if *steps == 0 {
                    return Err(Error::Config(
                        "washout needs at least one warm-up step".into(),
                    ));
                }
                if u_width != pred.input_dim() {
                    return Err(Error::Config(format!(
                        "washout replays history rows as predictor inputs, so their \
                         width must be {} (got {u_width})",
                        pred.input_dim()
                    )));
                }
                InitKind::Washout { steps: *steps }
            }
            InitConfig::Mlp { hidden, tau } => {
                if *hidden == 0 {
                    return Err(Error::Config(
                        "initialization network needs a nonempty hidden layer".into(),
                    ));
                }
                let in_w = (tau + 1) * per_step;
                let w1 = layout.push(format!("{prefix}init.w1"), *hidden, in_w);
                let b1 = layout.push_vec(format!("{prefix}init.b1"), *hidden);
                let w2 = layout.push(format!("{prefix}init.w2"), state_count, *hidden);
                let b2 = layout.push_vec(format!("{prefix}init.b2"), state_count);
                InitKind::Mlp {
                    w1,
                    b1,
                    w2,
                    b2,
                    hidden: *hidden,
                    tau: *tau,
                }
            }
            InitConfig::Rnn { cells, .. } => {
                let net = LstmNet::build(
                    layout,
                    &format!("{prefix}init."),
                    per_step,
                    &LstmConfig::new(1, *cells),
                )?;
                let w_out = layout.push(format!("{prefix}init.w_out"), state_count, *cells);
                let b_out = layout.push_vec(format!("{prefix}init.b_out"), state_count);
                InitKind::Rnn {
                    net,
                    w_out,
                    b_out,
                    cells: *cells,
                }
            }
        };
        Ok(Initializer {
            cfg,
            kind,
            bounds: pred.state_bounds(cap),
            y_width,
            u_width,
            state_count,
        })
    }

    pub fn config(&self) -> &InitConfig {
        &self.cfg
    }

    /// History length: segments must hold `tau() + 1` rows.
    pub fn tau(&self) -> usize {
        self.cfg.tau()
    }

    /// Whether the scheme has parameters that the state-initialization cost
    /// trains (the network schemes; washout has none).
    pub fn is_learned(&self) -> bool {
        !matches!(self.kind, InitKind::Washout { .. })
    }

    fn check_segment(&self, seg: &InitSegment<'_>) -> Result<()> {
        let need = self.tau() + 1;
        if seg.u.len() != need {
            return Err(Error::Sequencing(format!(
                "initialization history holds {} input rows, scheme needs {need}",
                seg.u.len()
            )));
        }
        for (j, r) in seg.u.iter().enumerate() {
            if r.len() != self.u_width {
                return Err(Error::Dim {
                    op: "initialization history",
                    expected: format!("input rows of width {}", self.u_width),
                    got: format!("width {} at row {j}", r.len()),
                });
            }
        }
        if self.y_width == 0 {
            if !seg.y.is_empty() {
                return Err(Error::Dim {
                    op: "initialization history",
                    expected: "no measured-output rows".into(),
                    got: format!("{} rows", seg.y.len()),
                });
            }
        } else {
            if seg.y.len() != need {
                return Err(Error::Sequencing(format!(
                    "initialization history holds {} output rows, scheme needs {need}",
                    seg.y.len()
                )));
            }
            for (j, r) in seg.y.iter().enumerate() {
                if r.len() != self.y_width {
                    return Err(Error::Dim {
                        op: "initialization history",
                        expected: format!("output rows of width {}", self.y_width),
                        got: format!("width {} at row {j}", r.len()),
                    });
                }
            }
        }
        Ok(())
    }

    /// Produce `x_{k0}` and the primed feedback output `y~_{k0}` on a tape,
    /// with gradient flow into both the initializer's and (through warm-up
    /// or the output map) the predictor's parameters. `prime_u` is the
    /// predictor input at `k0` the output map is evaluated with; the washout
    /// scheme ignores it (its last warm-up step plays that role).
    pub fn initialize_on_tape(
        &self,
        t: &mut Tape,
        params: &[Var],
        pred: &Predictor,
        seg: &InitSegment<'_>,
        prime_u: Var,
    ) -> Result<InitializedVars> {
        self.check_segment(seg)?;
        if prime_u.len() != pred.input_dim() {
            return Err(Error::Dim {
                op: "initialization priming input",
                expected: format!("width {}", pred.input_dim()),
                got: format!("width {}", prime_u.len()),
            });
        }
        match &self.kind {
            InitKind::Washout { steps } => {
                let rows: Vec<Var> = seg.u[seg.u.len() - steps..]
                    .iter()
                    .map(|r| t.constant(r))
                    .collect();
                let start = pred.lift_state(t, &pred.zero_state());
                let start_y = t.zeros(pred.output_dim());
                Ok(washout_run_on_tape(t, params, pred, start, start_y, &rows))
            }
            InitKind::Mlp {
                w1,
                b1,
                w2,
                b2,
                hidden,
                tau,
            } => {
                let per_step = self.u_width + self.y_width;
                let in_w = (tau + 1) * per_step;
                let mut flat = Vec::with_capacity(in_w);
                for r in seg.u {
                    flat.extend_from_slice(r);
                }
                for r in seg.y {
                    flat.extend_from_slice(r);
                }
                let z = t.constant(&flat);
                let h_lin = t.matvec(params[*w1], *hidden, in_w, z);
                let h_aff = t.add(h_lin, params[*b1]);
                let h = t.tanh(h_aff);
                let raw_lin = t.matvec(params[*w2], self.state_count, *hidden, h);
                let raw = t.add(raw_lin, params[*b2]);
                self.finish_network_init(t, params, pred, seg, raw, prime_u)
            }
            InitKind::Rnn { net, w_out, b_out, cells, .. } => {
                let mut parts = vec![t.zeros(*cells), t.zeros(*cells)];
                for j in 0..seg.u.len() {
                    let mut row = seg.u[j].clone();
                    if self.y_width > 0 {
                        row.extend_from_slice(&seg.y[j]);
                    }
                    let input = t.constant(&row);
                    parts = net.step(t, params, None, input, &parts);
                }
                let m_last = parts[1];
                let raw_lin = t.matvec(params[*w_out], self.state_count, *cells, m_last);
                let raw = t.add(raw_lin, params[*b_out]);
                self.finish_network_init(t, params, pred, seg, raw, prime_u)
            }
        }
    }

    /// Squash the raw network output into the admissible state box, split it
    /// into state parts, pre-fill delay lines from the history, and prime
    /// the feedback output through the output map at the `k0` input.
    fn finish_network_init(
        &self,
        t: &mut Tape,
        params: &[Var],
        pred: &Predictor,
        seg: &InitSegment<'_>,
        raw: Var,
        prime_u: Var,
    ) -> Result<InitializedVars> {
        let x = squash_to_bounds(t, raw, &self.bounds);
        let (o, parts) = pred.split_state_vector(t, x);
        let (tdl_u, tdl_o) = self.prefill_delay_lines(t, pred, seg);
        let state = StateVars {
            o,
            parts,
            tdl_u,
            tdl_o,
        };
        let y0 = pred.output_map(t, params, state.o, &state.parts, prime_u);
        Ok(InitializedVars { state, y0 })
    }

    /// Delay lines at `k0` for network-initialized states: the input line
    /// holds the most recent history inputs ending at `u_{k0}`, the output
    /// line the most recent measured outputs ending at `y_{k0-1}` (the first
    /// prediction step pushes `y~_{k0}` itself). History rows that do not
    /// match the line's width (unmeasured signals) leave it zero.
    fn prefill_delay_lines(
        &self,
        t: &mut Tape,
        pred: &Predictor,
        seg: &InitSegment<'_>,
    ) -> (Option<TdlVars>, Option<TdlVars>) {
        let Some(cap) = pred.config().tdl else {
            return (None, None);
        };
        let mut tu = TdlVars::new(cap, pred.input_dim());
        if self.u_width == pred.input_dim() {
            let ustart = seg.u.len().saturating_sub(cap);
            for r in &seg.u[ustart..] {
                tu.push(t.constant(r));
            }
        }
        let mut to = TdlVars::new(cap, pred.output_dim());
        if self.y_width == pred.output_dim() && !seg.y.is_empty() {
            let hist = &seg.y[..seg.y.len() - 1];
            let ostart = hist.len().saturating_sub(cap);
            for r in &hist[ostart..] {
                to.push(t.constant(r));
            }
        }
        (Some(tu), Some(to))
    }

    /// Concrete wrapper around [`initialize_on_tape`](Self::initialize_on_tape).
    pub fn initialize(
        &self,
        layout: &ParamLayout,
        theta: &[f64],
        pred: &Predictor,
        seg: &InitSegment<'_>,
        prime_u: &[f64],
    ) -> Result<InitializedState> {
        let mut t = Tape::new();
        let params = t.bind_params(layout, theta);
        let pu = t.constant(prime_u);
        let iv = self.initialize_on_tape(&mut t, &params, pred, seg, pu)?;
        if let Some(step) = t.poisoned() {
            return Err(Error::Instability { step });
        }
        Ok(InitializedState {
            state: pred.lower_state(&t, &iv.state),
            y0: t.value(iv.y0).to_vec(),
        })
    }
}

/// Closed-loop warm-up from an explicit start state over `rows`, outputs
/// discarded except for the feedback threading; returns the reached state
/// and the last output (which primes the first prediction step).
pub fn washout_run_on_tape(
    t: &mut Tape,
    params: &[Var],
    pred: &Predictor,
    start: StateVars,
    start_y: Var,
    rows: &[Var],
) -> InitializedVars {
    let mut state = start;
    let mut prev_y = start_y;
    for (j, &u) in rows.iter().enumerate() {
        t.set_step(j + 1);
        let (next, y) = pred.step_on_tape(t, params, None, &state, prev_y, u);
        state = next;
        prev_y = y;
    }
    t.clear_step();
    InitializedVars {
        state,
        y0: prev_y,
    }
}

/// Concrete washout warm-up from the zero state over `warmup` input rows.
/// Fails with the offending step index if the closed loop blows up.
pub fn washout_init(
    layout: &ParamLayout,
    theta: &[f64],
    pred: &Predictor,
    warmup: &[Vec<f64>],
) -> Result<InitializedState> {
    if warmup.is_empty() {
        return Err(Error::Config(
            "washout needs at least one warm-up step".into(),
        ));
    }
    let mut t = Tape::new();
    let params = t.bind_params(layout, theta);
    let rows: Vec<Var> = warmup.iter().map(|r| t.constant(r)).collect();
    let start = pred.lift_state(&mut t, &pred.zero_state());
    let start_y = t.zeros(pred.output_dim());
    let iv = washout_run_on_tape(&mut t, &params, pred, start, start_y, &rows);
    if let Some(step) = t.poisoned() {
        return Err(Error::Instability { step });
    }
    Ok(InitializedState {
        state: pred.lower_state(&t, &iv.state),
        y0: t.value(iv.y0).to_vec(),
    })
}

/// Map each raw component into its `(lo, hi)` box:
/// `lo + (hi - lo) * (tanh(z) + 1) / 2`.
pub fn squash_to_bounds(t: &mut Tape, raw: Var, bounds: &[(f64, f64)]) -> Var {
    assert_eq!(raw.len(), bounds.len(), "one bound per component");
    let half_span: Vec<f64> = bounds.iter().map(|(lo, hi)| (hi - lo) / 2.0).collect();
    let mid: Vec<f64> = bounds.iter().map(|(lo, hi)| (lo + hi) / 2.0).collect();
    let th = t.tanh(raw);
    let scaled = t.cmul(th, &half_span);
    t.cadd(scaled, &mid)
}

/// State-initialization cost on the tape:
/// `|| A_s s_{k0} - (y_{k0} - A_o y_{k0-1} - B u_{k0}) ||`.
pub fn state_init_cost_on_tape(
    t: &mut Tape,
    params: &[Var],
    pred: &Predictor,
    state: &StateVars,
    u_k0: &[f64],
    y_k0: &[f64],
    y_k0m1: &[f64],
) -> Var {
    let n = pred.output_dim();
    let (a_o, a_s, b) = pred.output_blocks();
    let yv = t.constant(y_k0);
    let ym = t.constant(y_k0m1);
    let uv = t.constant(u_k0);
    let feed = t.matvec(params[a_o], n, n, ym);
    let drive = t.matvec(params[b], n, pred.input_dim(), uv);
    let c_partial = t.sub(yv, feed);
    let c = t.sub(c_partial, drive);
    let s_flat = if state.parts.len() == 1 {
        state.parts[0]
    } else {
        t.concat(&state.parts)
    };
    let mapped = t.matvec(params[a_s], n, pred.internal_dim(), s_flat);
    let d = t.sub(mapped, c);
    t.norm(d)
}

/// Plain-value state-initialization cost, same formula as
/// [`state_init_cost_on_tape`].
pub fn state_init_cost(
    a_s: &crate::numeric::Mat,
    a_o: &crate::numeric::Mat,
    b: &crate::numeric::Mat,
    s: &[f64],
    u_k0: &[f64],
    y_k0: &[f64],
    y_k0m1: &[f64],
) -> Result<f64> {
    let feed = a_o.matvec(y_k0m1)?;
    let drive = b.matvec(u_k0)?;
    let mapped = a_s.matvec(s)?;
    let mut d = 0.0;
    for i in 0..y_k0.len() {
        let c_i = y_k0[i] - feed[i] - drive[i];
        d += (mapped[i] - c_i) * (mapped[i] - c_i);
    }
    Ok(d.sqrt())
}

/// An initializer-predictor pair sharing one flat parameter vector — the
/// unit that gets trained, evaluated and stored.
#[derive(Debug, Clone)]
pub struct PairModel {
    layout: ParamLayout,
    predictor: Predictor,
    initializer: Initializer,
    cap: f64,
}

impl PairModel {
    pub fn new(
        pred_cfg: crate::arch::PredictorConfig,
        init_cfg: InitConfig,
        cap: f64,
    ) -> Result<PairModel> {
        let mut layout = ParamLayout::new();
        let predictor = Predictor::build(&mut layout, "", pred_cfg)?;
        let u_width = predictor.input_dim();
        let y_width = predictor.output_dim();
        let initializer =
            Initializer::build(&mut layout, "", &predictor, init_cfg, u_width, y_width, cap)?;
        Ok(PairModel {
            layout,
            predictor,
            initializer,
            cap,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn predictor(&self) -> &Predictor {
        &self.predictor
    }

    pub fn initializer(&self) -> &Initializer {
        &self.initializer
    }

    pub fn state_cap(&self) -> f64 {
        self.cap
    }

    pub fn theta_len(&self) -> usize {
        self.layout.total()
    }

    /// History length the pair's windows must carry (`tau + 1` rows).
    pub fn tau(&self) -> usize {
        self.initializer.tau()
    }

    /// Whether training should add the state-initialization cost (the
    /// network schemes train on it; washout has nothing to train).
    pub fn uses_si_loss(&self) -> bool {
        self.initializer.is_learned()
    }

    /// Initialize at the end of `seg`, then roll the predictor closed-loop
    /// over `inputs`. The concrete end-to-end prediction operation.
    pub fn predict(
        &self,
        theta: &[f64],
        seg: &InitSegment<'_>,
        inputs: &[Vec<f64>],
    ) -> Result<Vec<Vec<f64>>> {
        let last = seg
            .u
            .last()
            .ok_or_else(|| Error::Sequencing("empty initialization history".into()))?;
        let mut t = Tape::new();
        let params = t.bind_params(&self.layout, theta);
        let pu = t.constant(last);
        let iv = self
            .initializer
            .initialize_on_tape(&mut t, &params, &self.predictor, seg, pu)?;
        let rows: Vec<Var> = inputs.iter().map(|r| t.constant(r)).collect();
        let (ys, _) = self
            .predictor
            .rollout_on_tape(&mut t, &params, None, iv, &rows);
        if let Some(step) = t.poisoned() {
            return Err(Error::Instability { step });
        }
        Ok(ys.iter().map(|y| t.value(*y).to_vec()).collect())
    }

    /// Initialize only (no rollout), concretely.
    pub fn initialize(&self, theta: &[f64], seg: &InitSegment<'_>) -> Result<InitializedState> {
        let last = seg
            .u
            .last()
            .ok_or_else(|| Error::Sequencing("empty initialization history".into()))?;
        self.initializer
            .initialize(&self.layout, theta, &self.predictor, seg, last)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{ArchConfig, LstmConfig, PredictorConfig};
    use crate::numeric::Mat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lstm_cfg(m: usize, n: usize, cells: usize, tdl: Option<usize>) -> PredictorConfig {
        PredictorConfig {
            input_dim: m,
            output_dim: n,
            arch: ArchConfig::Lstm(LstmConfig::new(1, cells)),
            tdl,
        }
    }

    fn random_theta(len: usize, seed: u64, scale: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-scale..scale)).collect()
    }

    fn random_rows(w: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| (0..w).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn washout_of_one_step_equals_single_step_from_zero() {
        let (layout, p) = Predictor::standalone(lstm_cfg(2, 1, 3, None)).unwrap();
        let theta = random_theta(layout.total(), 3, 0.2);
        let u = vec![0.4, -0.2];
        let init = washout_init(&layout, &theta, &p, &[u.clone()]).unwrap();
        let (s1, y1) = p
            .step(&layout, &theta, &p.zero_state(), &[0.0], &u)
            .unwrap();
        assert_eq!(init.state, s1);
        assert_eq!(init.y0, y1);
    }

    #[test]
    fn zero_length_washout_is_a_config_error() {
        let (layout, p) = Predictor::standalone(lstm_cfg(1, 1, 2, None)).unwrap();
        let theta = vec![0.0; layout.total()];
        let err = washout_init(&layout, &theta, &p, &[]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let mut pair_layout = ParamLayout::new();
        let p2 = Predictor::build(&mut pair_layout, "", lstm_cfg(1, 1, 2, None)).unwrap();
        let err2 = Initializer::build(
            &mut pair_layout,
            "",
            &p2,
            InitConfig::Washout { steps: 0 },
            1,
            1,
            DEFAULT_STATE_CAP,
        )
        .unwrap_err();
        assert!(matches!(err2, Error::Config(_)));
    }

    #[test]
    fn contractive_washout_forgets_its_start_state() {
        // A memory-cell layer with all weights small is a contraction on its
        // state; two warm-ups from far-apart starts must land close together,
        // and more warm-up steps must land them closer.
        let (layout, p) = Predictor::standalone(lstm_cfg(1, 1, 4, None)).unwrap();
        let theta = random_theta(layout.total(), 7, 0.05);
        let rows = random_rows(1, 40, 11);

        let run = |start_s: f64, start_o: f64, w: usize| -> Vec<f64> {
            let mut t = Tape::new();
            let params = t.bind_params(&layout, &theta);
            let mut st = p.zero_state();
            st.s.iter_mut().for_each(|v| *v = start_s);
            st.o[0] = start_o;
            let sv = p.lift_state(&mut t, &st);
            let y0 = t.constant(&[start_o]);
            let row_vars: Vec<Var> = rows[..w].iter().map(|r| t.constant(r)).collect();
            let iv = washout_run_on_tape(&mut t, &params, &p, sv, y0, &row_vars);
            let fin = p.lower_state(&t, &iv.state);
            let mut flat = fin.o;
            flat.extend(fin.s);
            flat
        };

        let dist = |a: &[f64], b: &[f64]| -> f64 {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        };
        let d0 = dist(&run(0.9, 0.8, 1), &run(-0.9, -0.8, 1));
        let d_short = dist(&run(0.9, 0.8, 8), &run(-0.9, -0.8, 8));
        let d_long = dist(&run(0.9, 0.8, 40), &run(-0.9, -0.8, 40));
        assert!(d_short < d0 * 0.5, "8 steps: {d_short} vs initial {d0}");
        assert!(d_long < d_short * 0.5, "40 steps: {d_long} vs {d_short}");
        assert!(d_long < 1e-6, "long warm-up should erase the start state");
    }

    #[test]
    fn diverging_washout_reports_the_failing_step() {
        // Huge recurrent output weights blow the closed loop up through the
        // unbounded output map in a few steps.
        let (layout, p) = Predictor::standalone(lstm_cfg(1, 1, 2, None)).unwrap();
        let mut theta = vec![0.0; layout.total()];
        let bo = layout.block(layout.find("out.a_o").unwrap());
        theta[bo.offset] = 1e160;
        let bb = layout.block(layout.find("out.b").unwrap());
        theta[bb.offset] = 1e160;
        let rows = vec![vec![1.0]; 6];
        let err = washout_init(&layout, &theta, &p, &rows).unwrap_err();
        match err {
            Error::Instability { step } => assert!(step >= 2, "step {step}"),
            other => panic!("expected instability, got {other:?}"),
        }
    }

    fn mlp_pair(tdl: Option<usize>) -> PairModel {
        PairModel::new(
            lstm_cfg(2, 1, 3, tdl),
            InitConfig::Mlp { hidden: 5, tau: 4 },
            DEFAULT_STATE_CAP,
        )
        .unwrap()
    }

    #[test]
    fn zero_weight_network_initializer_lands_mid_box() {
        // With all initializer weights zero the raw output is zero and every
        // component squashes to the middle of its admissible range — which
        // is 0 for symmetric boxes.
        let pair = mlp_pair(None);
        let theta = vec![0.0; pair.theta_len()];
        let u = random_rows(2, 5, 13);
        let y = random_rows(1, 5, 17);
        let seg = InitSegment { u: &u, y: &y };
        let init = pair.initialize(&theta, &seg).unwrap();
        assert!(init.state.o.iter().all(|v| *v == 0.0));
        assert!(init.state.s.iter().all(|v| *v == 0.0));
        // Output map is zero too, so the primed output is zero.
        assert_eq!(init.y0, vec![0.0]);
    }

    #[test]
    fn network_initializer_output_respects_state_bounds() {
        for pair in [
            mlp_pair(None),
            PairModel::new(
                lstm_cfg(2, 1, 3, None),
                InitConfig::Rnn { cells: 4, tau: 4 },
                2.5,
            )
            .unwrap(),
        ] {
            let theta = random_theta(pair.theta_len(), 19, 3.0);
            let u = random_rows(2, 5, 23);
            let y = random_rows(1, 5, 29);
            let seg = InitSegment { u: &u, y: &y };
            let init = pair.initialize(&theta, &seg).unwrap();
            let bounds = pair.predictor().state_bounds(pair.state_cap());
            let mut flat = init.state.o.clone();
            flat.extend(init.state.s.clone());
            for (v, (lo, hi)) in flat.iter().zip(&bounds) {
                assert!(lo < v && v < hi, "{v} outside ({lo}, {hi})");
            }
        }
    }

    #[test]
    fn primed_output_matches_output_map_at_initial_state() {
        let pair = mlp_pair(None);
        let theta = random_theta(pair.theta_len(), 31, 0.3);
        let u = random_rows(2, 5, 37);
        let y = random_rows(1, 5, 41);
        let seg = InitSegment { u: &u, y: &y };
        let init = pair.initialize(&theta, &seg).unwrap();

        let layout = pair.layout();
        let grab = |name: &str| {
            let blk = layout.block(layout.find(name).unwrap());
            Mat::from_vec(blk.rows, blk.cols, theta[blk.range()].to_vec()).unwrap()
        };
        let a_o = grab("out.a_o");
        let a_s = grab("out.a_s");
        let b = grab("out.b");
        let mut want = a_o.matvec(&init.state.o).unwrap();
        let ws = a_s.matvec(&init.state.s).unwrap();
        let wu = b.matvec(&u[4]).unwrap();
        for i in 0..want.len() {
            want[i] += ws[i] + wu[i];
        }
        for (a, b) in init.y0.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn network_initialization_is_deterministic() {
        for pair in [
            mlp_pair(Some(3)),
            PairModel::new(
                lstm_cfg(2, 1, 3, None),
                InitConfig::Rnn { cells: 4, tau: 4 },
                DEFAULT_STATE_CAP,
            )
            .unwrap(),
        ] {
            let theta = random_theta(pair.theta_len(), 43, 0.4);
            let u = random_rows(2, 5, 47);
            let y = random_rows(1, 5, 53);
            let seg = InitSegment { u: &u, y: &y };
            let a = pair.initialize(&theta, &seg).unwrap();
            let b = pair.initialize(&theta, &seg).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn recurrent_initializer_is_order_sensitive() {
        // The encoder consumes the history step by step, so reversing the
        // rows must change the produced state (a flattened feed-forward read
        // would too, but here it is the recurrence that carries order).
        let pair = PairModel::new(
            lstm_cfg(1, 1, 3, None),
            InitConfig::Rnn { cells: 4, tau: 3 },
            DEFAULT_STATE_CAP,
        )
        .unwrap();
        let theta = random_theta(pair.theta_len(), 59, 0.5);
        let u = random_rows(1, 4, 61);
        let y = random_rows(1, 4, 67);
        let seg = InitSegment { u: &u, y: &y };
        let fwd = pair.initialize(&theta, &seg).unwrap();
        let u_rev: Vec<Vec<f64>> = u.iter().rev().cloned().collect();
        let y_rev: Vec<Vec<f64>> = y.iter().rev().cloned().collect();
        let seg_rev = InitSegment { u: &u_rev, y: &y_rev };
        let rev = pair.initialize(&theta, &seg_rev).unwrap();
        let diff: f64 = fwd
            .state
            .s
            .iter()
            .zip(&rev.state.s)
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-9, "reversed history produced the same state");
    }

    #[test]
    fn delay_lines_prefill_from_history() {
        let pair = mlp_pair(Some(3));
        let theta = random_theta(pair.theta_len(), 71, 0.2);
        let u = random_rows(2, 5, 73);
        let y = random_rows(1, 5, 79);
        let seg = InitSegment { u: &u, y: &y };
        let init = pair.initialize(&theta, &seg).unwrap();
        let tu = init.state.tdl_u.as_ref().unwrap();
        // Newest three inputs, ending at u_{k0} = u[4].
        assert_eq!(tu.entries().collect::<Vec<_>>(), vec![&u[2], &u[3], &u[4]]);
        let to = init.state.tdl_o.as_ref().unwrap();
        // Measured outputs ending at y_{k0-1} = y[3].
        assert_eq!(to.entries().collect::<Vec<_>>(), vec![&y[1], &y[2], &y[3]]);
    }

    #[test]
    fn initialization_cost_is_zero_when_the_map_closes_exactly() {
        // One cell, crafted so A_s s == y_k0 - A_o y_prev - B u_k0 exactly.
        let a_s = Mat::from_vec(1, 2, vec![0.5, 0.25]).unwrap();
        let a_o = Mat::from_vec(1, 1, vec![0.3]).unwrap();
        let b = Mat::from_vec(1, 1, vec![-0.2]).unwrap();
        let s = vec![1.0, 2.0]; // A_s s = 1.0
        let y_prev = vec![2.0]; // A_o y_prev = 0.6
        let u = vec![1.0]; // B u = -0.2
        let y_k0 = vec![1.0 + 0.6 - 0.2];
        let cost = state_init_cost(&a_s, &a_o, &b, &s, &u, &y_k0, &y_prev).unwrap();
        assert!(cost.abs() < 1e-15);
        // Perturbing the target output by delta moves the cost to |delta|.
        let y_off = vec![y_k0[0] + 0.125];
        let cost2 = state_init_cost(&a_s, &a_o, &b, &s, &u, &y_off, &y_prev).unwrap();
        assert!((cost2 - 0.125).abs() < 1e-12);
    }

    #[test]
    fn taped_initialization_cost_matches_plain_recompute() {
        let pair = mlp_pair(None);
        let theta = random_theta(pair.theta_len(), 83, 0.4);
        let u = random_rows(2, 5, 89);
        let y = random_rows(1, 5, 97);
        let seg = InitSegment { u: &u, y: &y };
        let init = pair.initialize(&theta, &seg).unwrap();

        let mut t = Tape::new();
        let params = t.bind_params(pair.layout(), &theta);
        let pu = t.constant(&u[4]);
        let iv = pair
            .initializer()
            .initialize_on_tape(&mut t, &params, pair.predictor(), &seg, pu)
            .unwrap();
        let cost = state_init_cost_on_tape(
            &mut t,
            &params,
            pair.predictor(),
            &iv.state,
            &u[4],
            &y[4],
            &y[3],
        );
        let taped = t.scalar_value(cost);

        let layout = pair.layout();
        let grab = |name: &str| {
            let blk = layout.block(layout.find(name).unwrap());
            Mat::from_vec(blk.rows, blk.cols, theta[blk.range()].to_vec()).unwrap()
        };
        let plain = state_init_cost(
            &grab("out.a_s"),
            &grab("out.a_o"),
            &grab("out.b"),
            &init.state.s,
            &u[4],
            &y[4],
            &y[3],
        )
        .unwrap();
        assert!((taped - plain).abs() < 1e-12, "taped {taped} plain {plain}");
    }

    #[test]
    fn pair_prediction_runs_end_to_end_for_every_scheme() {
        for init_cfg in [
            InitConfig::Washout { steps: 4 },
            InitConfig::Mlp { hidden: 6, tau: 4 },
            InitConfig::Rnn { cells: 3, tau: 4 },
        ] {
            let pair = PairModel::new(lstm_cfg(2, 1, 3, None), init_cfg, DEFAULT_STATE_CAP).unwrap();
            let theta = random_theta(pair.theta_len(), 101, 0.2);
            let u = random_rows(2, 5, 103);
            let y = random_rows(1, 5, 107);
            let seg = InitSegment { u: &u, y: &y };
            let steps = random_rows(2, 7, 109);
            let ys = pair.predict(&theta, &seg, &steps).unwrap();
            assert_eq!(ys.len(), 7);
            assert!(ys.iter().all(|r| r.len() == 1 && r[0].is_finite()));
        }
    }

    #[test]
    fn history_length_mismatch_is_rejected() {
        let pair = mlp_pair(None);
        let theta = vec![0.0; pair.theta_len()];
        let u = random_rows(2, 4, 113); // needs 5
        let y = random_rows(1, 5, 127);
        let err = pair
            .initialize(&theta, &InitSegment { u: &u, y: &y })
            .unwrap_err();
        assert!(matches!(err, Error::Sequencing(_)));
    }

    #[test]
    fn washout_gradients_flow_into_predictor_parameters() {
        // Joint training must differentiate through the warm-up: the loss
        // gradient with respect to predictor weights used only during
        // washout must be nonzero.
        let (layout, p) = Predictor::standalone(lstm_cfg(1, 1, 2, None)).unwrap();
        let theta = random_theta(layout.total(), 131, 0.3);
        let rows = random_rows(1, 3, 137);
        let mut t = Tape::new();
        let params = t.bind_params(&layout, &theta);
        let row_vars: Vec<Var> = rows.iter().map(|r| t.constant(r)).collect();
        let start = p.lift_state(&mut t, &p.zero_state());
        let y00 = t.zeros(1);
        let iv = washout_run_on_tape(&mut t, &params, &p, start, y00, &row_vars);
        let loss = t.sumsq(iv.y0);
        let grad = t.backward(loss, layout.total()).unwrap();
        assert!(grad.iter().any(|g| g.abs() > 1e-12));
    }
}
