//! Shared test support: a straight-line reimplementation of the predictor
//! forward pass, written with plain loops and scalar arithmetic only. It
//! reads weights out of the flat parameter vector by block name (the
//! storage contract) but re-derives every equation independently of the
//! library's tape machinery.

#![allow(dead_code)]

use mspred_core::arch::{ArchConfig, PredictorConfig};
use mspred_core::numeric::param::ParamLayout;
use mspred_core::Act;

fn blk<'a>(layout: &ParamLayout, theta: &'a [f64], name: &str) -> (&'a [f64], usize, usize) {
    let id = layout
        .find(name)
        .unwrap_or_else(|| panic!("parameter block '{name}' not found"));
    let b = layout.block(id);
    (&theta[b.range()], b.rows, b.cols)
}

fn mv(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    assert_eq!(w.len(), rows * cols);
    assert_eq!(x.len(), cols);
    let mut y = vec![0.0; rows];
    for r in 0..rows {
        let mut acc = 0.0;
        for c in 0..cols {
            acc += w[r * cols + c] * x[c];
        }
        y[r] = acc;
    }
    y
}

fn vadd(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fixed-capacity FIFO with zero padding for the unfilled oldest slots.
struct Line {
    cap: usize,
    dim: usize,
    buf: Vec<Vec<f64>>,
}

impl Line {
    fn new(cap: usize, dim: usize) -> Line {
        Line {
            cap,
            dim,
            buf: Vec::new(),
        }
    }

    fn push(&mut self, v: Vec<f64>) {
        assert_eq!(v.len(), self.dim);
        if self.buf.len() == self.cap {
            self.buf.remove(0);
        }
        self.buf.push(v);
    }

    fn read(&self) -> Vec<f64> {
        let mut out = vec![0.0; (self.cap - self.buf.len()) * self.dim];
        for v in &self.buf {
            out.extend_from_slice(v);
        }
        out
    }
}

/// Closed-loop rollout of a predictor from the all-zero state, re-derived
/// from the written dynamics:
///
/// the fully-connected sweep
///   `y^l_k = act( A_l y^l_{k-1} + B_l [g_k, y^{<l}_k, y^{>l}_{k-1}] + bias_l )`
/// with network-level input `g_k`;
///
/// the memory-cell stack (gates peeping at the cell state, the output gate
/// at the updated one)
///   `i = sig(W_ii in + W_mi m' + W_ci c' + b_i)`
///   `f = sig(W_if in + W_mf m' + W_cf c' + b_f)`
///   `c = i * tanh(W_ic in + W_mc m' + b_c) + f * c'`
///   `o = sig(W_io in + W_mo m' + W_co c + b_o)`
///   `m = tanh(c) * o`;
///
/// the state split `x_k = [o_k; s_k]`, `o_k = y~_{k-1}`, and the output map
///   `y~_k = A_o o_k + A_s s_k + B u_k`.
///
/// Without delay lines the network-level input is `u_k` for the
/// fully-connected sweep and `[u_k; o_{k-1}]` for the cell stack (the
/// feedback stored in `x_{k-1}`); with delay lines it is the concatenated
/// input- and output-line contents after pushing `u_k` and `y~_{k-1}`.
pub fn oracle_rollout(
    layout: &ParamLayout,
    prefix: &str,
    cfg: &PredictorConfig,
    theta: &[f64],
    y0: &[f64],
    inputs: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let m = cfg.input_dim;
    let n = cfg.output_dim;
    assert_eq!(y0.len(), n);

    // Mutable rollout state.
    let mut prev_y = y0.to_vec();
    let mut state_o = vec![0.0; n];
    let mut lines = cfg.tdl.map(|cap| (Line::new(cap, m), Line::new(cap, n)));

    // Architecture bookkeeping: per-part internal state, all zeros.
    enum Arch {
        Mlfc { sizes: Vec<usize>, acts: Vec<Act> },
        Lstm { layers: usize, cells: usize, peep: bool },
    }
    let (arch, mut parts): (Arch, Vec<Vec<f64>>) = match &cfg.arch {
        ArchConfig::Mlfc(mc) => {
            let sizes: Vec<usize> = mc.layers.iter().map(|l| l.neurons).collect();
            let acts: Vec<Act> = mc.layers.iter().map(|l| l.act).collect();
            let parts = sizes.iter().map(|s| vec![0.0; *s]).collect();
            (Arch::Mlfc { sizes, acts }, parts)
        }
        ArchConfig::Lstm(lc) => {
            let parts = (0..2 * lc.layers).map(|_| vec![0.0; lc.cells]).collect();
            (
                Arch::Lstm {
                    layers: lc.layers,
                    cells: lc.cells,
                    peep: lc.peepholes,
                },
                parts,
            )
        }
    };

    let mut outputs = Vec::with_capacity(inputs.len());
    for u in inputs {
        assert_eq!(u.len(), m);
        // Network-level input.
        let net_in: Vec<f64> = match &mut lines {
            Some((lu, lo)) => {
                lu.push(u.clone());
                lo.push(prev_y.clone());
                let mut j = lu.read();
                j.extend(lo.read());
                j
            }
            None => match &arch {
                Arch::Mlfc { .. } => u.clone(),
                Arch::Lstm { .. } => {
                    let mut j = u.clone();
                    j.extend_from_slice(&state_o);
                    j
                }
            },
        };

        // Internal-state update.
        let new_parts: Vec<Vec<f64>> = match &arch {
            Arch::Mlfc { sizes, acts } => {
                let mut current: Vec<Vec<f64>> = Vec::with_capacity(sizes.len());
                for l in 0..sizes.len() {
                    // Composed input: network input, the outputs of lower
                    // layers from this sweep, the outputs of higher layers
                    // from the previous step.
                    let mut u_l = net_in.clone();
                    for c in current.iter() {
                        u_l.extend_from_slice(c);
                    }
                    for p in parts.iter().skip(l + 1) {
                        u_l.extend_from_slice(p);
                    }
                    let (a, ar, ac) = blk(layout, theta, &format!("{prefix}mlfc.l{l}.a"));
                    let (b, br, bc) = blk(layout, theta, &format!("{prefix}mlfc.l{l}.b"));
                    let (bias, _, _) = blk(layout, theta, &format!("{prefix}mlfc.l{l}.bias"));
                    let rec = mv(a, ar, ac, &parts[l]);
                    let inp = mv(b, br, bc, &u_l);
                    let pre = vadd(&vadd(&rec, &inp), bias);
                    current.push(pre.iter().map(|x| acts[l].apply(*x)).collect());
                }
                current
            }
            Arch::Lstm {
                layers,
                cells,
                peep,
            } => {
                let nc = *cells;
                let mut out = Vec::with_capacity(2 * layers);
                let mut input = net_in.clone();
                for l in 0..*layers {
                    let c_prev = &parts[2 * l];
                    let m_prev = &parts[2 * l + 1];
                    let w = |suffix: &str| -> (&[f64], usize, usize) {
                        blk(layout, theta, &format!("{prefix}lstm.l{l}.{suffix}"))
                    };
                    let gate = |wi: &str, wm: &str, wc: &str, b: &str, cell: &[f64]| -> Vec<f64> {
                        let (wiv, r, c) = w(wi);
                        let mut pre = mv(wiv, r, c, &input);
                        let (wmv, r, c) = w(wm);
                        pre = vadd(&pre, &mv(wmv, r, c, m_prev));
                        if *peep {
                            let (wcv, r, c) = w(wc);
                            pre = vadd(&pre, &mv(wcv, r, c, cell));
                        }
                        let (bv, _, _) = w(b);
                        vadd(&pre, bv).iter().map(|x| sigmoid(*x)).collect()
                    };
                    let g_i = gate("w_ii", "w_mi", "w_ci", "b_i", c_prev);
                    let g_f = gate("w_if", "w_mf", "w_cf", "b_f", c_prev);
                    let (wic, r, c) = w("w_ic");
                    let mut cand = mv(wic, r, c, &input);
                    let (wmc, r, c) = w("w_mc");
                    cand = vadd(&cand, &mv(wmc, r, c, m_prev));
                    let (bc, _, _) = w("b_c");
                    let cand: Vec<f64> = vadd(&cand, bc).iter().map(|x| x.tanh()).collect();
                    let c_new: Vec<f64> = (0..nc)
                        .map(|j| g_i[j] * cand[j] + g_f[j] * c_prev[j])
                        .collect();
                    let g_o = gate("w_io", "w_mo", "w_co", "b_o", &c_new);
                    let m_new: Vec<f64> = (0..nc).map(|j| c_new[j].tanh() * g_o[j]).collect();
                    input = m_new.clone();
                    out.push(c_new);
                    out.push(m_new);
                }
                out
            }
        };

        // Output map over the updated state.
        let o_now = prev_y.clone();
        let s_flat: Vec<f64> = new_parts.iter().flatten().copied().collect();
        let (ao, r, c) = blk(layout, theta, &format!("{prefix}out.a_o"));
        let (asb, r2, c2) = blk(layout, theta, &format!("{prefix}out.a_s"));
        let (bb, r3, c3) = blk(layout, theta, &format!("{prefix}out.b"));
        let y = vadd(
            &vadd(&mv(ao, r, c, &o_now), &mv(asb, r2, c2, &s_flat)),
            &mv(bb, r3, c3, u),
        );

        parts = new_parts;
        state_o = o_now;
        prev_y = y.clone();
        outputs.push(y);
    }
    outputs
}

/// Max absolute elementwise difference between two row sets.
pub fn max_abs_rows(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut worst = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x.len(), y.len());
        for (p, q) in x.iter().zip(y) {
            worst = worst.max((p - q).abs());
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Gradient-check fixtures shared between the gradcheck and acceptance targets
// ---------------------------------------------------------------------------

use mspred_core::data::SampleWindow;
use mspred_core::hybrid::{HybridConfig, HybridModel, HybridWindow, MmParams, QuadRecord};
use mspred_core::init::{InitConfig, PairModel, DEFAULT_STATE_CAP};
use mspred_core::numeric::fdiff::{finite_diff_grad, max_rel_err, DEFAULT_EPS};
use mspred_core::numeric::param::init_theta;
use mspred_core::numeric::tape::Tape;
use mspred_core::train::LossModel;
use mspred_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// History length of every gradient-check window.
pub const GC_TAU: usize = 5;
/// Prediction horizon of every gradient-check window.
pub const GC_HORIZON: usize = 8;
/// Gradient agreement contract: worst relative error must stay below this.
pub const GC_TOL: f64 = 1e-4;

pub fn random_rows(rng: &mut ChaCha8Rng, count: usize, width: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..width).map(|_| rng.gen_range(-scale..scale)).collect())
        .collect()
}

/// Signals are kept small so the total loss sits near 1e-2: central
/// differences carry absolute noise around `u * |loss| / eps` (machine
/// rounding of the loss divided by the probe step), and the relative-error
/// contract (denominator floored at 1e-8) needs that noise below 1e-12 for
/// the tiniest gradient components.
pub fn gc_sample_window(
    rng: &mut ChaCha8Rng,
    m: usize,
    n: usize,
    u_scale: f64,
    y_scale: f64,
) -> SampleWindow {
    SampleWindow {
        init_u: random_rows(rng, GC_TAU + 1, m, u_scale),
        init_y: random_rows(rng, GC_TAU + 1, n, y_scale),
        pred_u: random_rows(rng, GC_HORIZON, m, u_scale),
        pred_y: random_rows(rng, GC_HORIZON, n, y_scale),
        block: 0,
        start: 0,
    }
}

/// Worst relative error between the tape gradient and central finite
/// differences of the same scalar loss; prints the worst components when the
/// contract is missed.
pub fn gc_worst_rel_err<M: LossModel>(model: &M, sample: &M::Sample, theta: &[f64]) -> f64 {
    let mut t = Tape::new();
    let params = t.bind_params(model.layout(), theta);
    let loss = model
        .sample_loss(&mut t, &params, sample, 1.0, 1.0, None)
        .expect("loss construction");
    let grad = t.backward(loss, theta.len()).expect("reverse sweep");
    let mut f = |th: &[f64]| -> Result<f64> {
        let mut t = Tape::new();
        let params = t.bind_params(model.layout(), th);
        let l = model.sample_loss(&mut t, &params, sample, 1.0, 1.0, None)?;
        Ok(t.scalar_value(l))
    };
    let fd = finite_diff_grad(&mut f, theta, DEFAULT_EPS).expect("finite differences");
    let worst = max_rel_err(&grad, &fd);
    if worst >= GC_TOL {
        eprintln!("loss value {:e}", t.scalar_value(loss));
        let mut scored: Vec<(usize, f64)> = (0..grad.len())
            .map(|i| {
                let denom = grad[i].abs().max(fd[i].abs()).max(1e-8);
                (i, (grad[i] - fd[i]).abs() / denom)
            })
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        for (i, e) in scored.iter().take(5) {
            eprintln!(
                "component {i}: rel {e:.3e}, grad {:+.6e}, fd {:+.6e}",
                grad[*i], fd[*i]
            );
        }
    }
    worst
}

pub fn gc_pair(
    arch: ArchConfig,
    tdl: Option<usize>,
    init: InitConfig,
    m: usize,
    n: usize,
) -> PairModel {
    PairModel::new(
        PredictorConfig {
            input_dim: m,
            output_dim: n,
            arch,
            tdl,
        },
        init,
        DEFAULT_STATE_CAP,
    )
    .unwrap()
}

/// Gradient check of one initializer-predictor pair on a random window.
/// Some configurations (notably the recurrent initializer feeding an LSTM)
/// produce a larger state-initialization cost at a given scale — that cost is
/// a plain norm, so it shrinks only linearly with the target amplitude — which
/// raises the finite-difference noise floor past the tolerance; those fixtures
/// shrink the weight and signal scales until the total loss is back near 1e-2.
pub fn gc_pair_worst(
    model: &PairModel,
    seed: u64,
    theta_scale: f64,
    u_scale: f64,
    y_scale: f64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = model.predictor().input_dim();
    let n = model.predictor().output_dim();
    let w = gc_sample_window(&mut rng, m, n, u_scale, y_scale);
    let theta = init_theta(model.layout(), theta_scale, &mut rng);
    gc_worst_rel_err(model, &w, &theta)
}

pub fn toy_hybrid() -> HybridModel {
    HybridModel::new(HybridConfig {
        im_arch: ArchConfig::Lstm(mspred_core::arch::LstmConfig::new(1, 5)),
        im_tdl: None,
        im_init: InitConfig::Mlp {
            hidden: 6,
            tau: GC_TAU,
        },
        om_arch: ArchConfig::Lstm(mspred_core::arch::LstmConfig::new(1, 5)),
        om_tdl: None,
        om_init: InitConfig::Mlp {
            hidden: 6,
            tau: GC_TAU,
        },
        mm: MmParams::sim_default(),
        gains: Default::default(),
        cap: DEFAULT_STATE_CAP,
    })
    .unwrap()
}

pub fn random_record(rng: &mut ChaCha8Rng) -> QuadRecord {
    let motors = [
        rng.gen_range(0.3..0.8),
        rng.gen_range(0.3..0.8),
        rng.gen_range(0.3..0.8),
        rng.gen_range(0.3..0.8),
    ];
    let mut v = |s: f64| -> [f64; 3] {
        [
            rng.gen_range(-s..s),
            rng.gen_range(-s..s),
            rng.gen_range(-s..s),
        ]
    };
    QuadRecord {
        motors,
        eta: v(0.2),
        omega: v(0.5),
        xi: v(1.0),
        xi_dot: v(0.5),
    }
}

/// Gradient check of the physics+network composite on a random flight window.
pub fn gc_hybrid_worst(seed: u64) -> f64 {
    let model = toy_hybrid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = HybridWindow {
        hist: (0..GC_TAU + 1).map(|_| random_record(&mut rng)).collect(),
        pred: (0..GC_HORIZON).map(|_| random_record(&mut rng)).collect(),
    };
    let theta = init_theta(model.layout(), 0.1, &mut rng);
    gc_worst_rel_err(&model, &w, &theta)
}

/// The six gradient-check fixtures: name, model, seed and scaling. These are
/// the configurations every release must keep passing.
pub fn gc_fixtures() -> Vec<(&'static str, PairModel, u64, f64, f64, f64)> {
    use mspred_core::arch::{LstmConfig, MlfcConfig};
    vec![
        (
            "mlfc 2x8 washout",
            gc_pair(
                ArchConfig::Mlfc(MlfcConfig::uniform(2, 8)),
                None,
                InitConfig::Washout { steps: GC_TAU },
                2,
                1,
            ),
            1,
            0.15,
            0.1,
            0.03,
        ),
        (
            "lstm 2x8 washout",
            gc_pair(
                ArchConfig::Lstm(LstmConfig::new(2, 8)),
                None,
                InitConfig::Washout { steps: GC_TAU },
                2,
                1,
            ),
            2,
            0.15,
            0.1,
            0.03,
        ),
        (
            "lstm 1x8 delay lines",
            gc_pair(
                ArchConfig::Lstm(LstmConfig::new(1, 8)),
                Some(10),
                InitConfig::Washout { steps: GC_TAU },
                2,
                1,
            ),
            3,
            0.15,
            0.1,
            0.03,
        ),
        (
            "mlfc + mlp initializer",
            gc_pair(
                ArchConfig::Mlfc(MlfcConfig::uniform(1, 8)),
                None,
                InitConfig::Mlp {
                    hidden: 12,
                    tau: GC_TAU,
                },
                2,
                1,
            ),
            4,
            0.15,
            0.1,
            0.03,
        ),
        (
            "lstm + rnn initializer",
            gc_pair(
                ArchConfig::Lstm(LstmConfig::new(1, 8)),
                None,
                InitConfig::Rnn {
                    cells: 6,
                    tau: GC_TAU,
                },
                2,
                1,
            ),
            5,
            0.015,
            0.02,
            0.001,
        ),
    ]
}

// ---------------------------------------------------------------------------
// Forward-oracle fixtures shared between the oracle and acceptance targets
// ---------------------------------------------------------------------------

use mspred_core::arch::{InitializedState, LstmConfig, MlfcConfig, MlfcLayerCfg, Predictor};

pub fn mixed_mlfc(sizes: &[(usize, Act)]) -> ArchConfig {
    ArchConfig::Mlfc(MlfcConfig {
        layers: sizes
            .iter()
            .map(|(n, a)| MlfcLayerCfg {
                neurons: *n,
                act: *a,
            })
            .collect(),
    })
}

/// Ten architecture configurations spanning both families, depth, mixed
/// activations, delay lines and asymmetric input/output widths.
pub fn oracle_configs() -> Vec<PredictorConfig> {
    let lstm = |layers, cells| ArchConfig::Lstm(LstmConfig::new(layers, cells));
    let lstm_nopeep = |layers, cells| {
        ArchConfig::Lstm(LstmConfig {
            layers,
            cells,
            peepholes: false,
        })
    };
    vec![
        PredictorConfig {
            input_dim: 2,
            output_dim: 2,
            arch: ArchConfig::Mlfc(MlfcConfig::uniform(1, 5)),
            tdl: None,
        },
        PredictorConfig {
            input_dim: 1,
            output_dim: 2,
            arch: mixed_mlfc(&[(4, Act::Tanh), (3, Act::Logistic), (4, Act::Identity)]),
            tdl: None,
        },
        PredictorConfig {
            input_dim: 3,
            output_dim: 1,
            arch: ArchConfig::Mlfc(MlfcConfig::uniform(2, 6)),
            tdl: None,
        },
        PredictorConfig {
            input_dim: 2,
            output_dim: 1,
            arch: lstm(1, 4),
            tdl: None,
        },
        PredictorConfig {
            input_dim: 1,
            output_dim: 3,
            arch: lstm(2, 5),
            tdl: None,
        },
        PredictorConfig {
            input_dim: 2,
            output_dim: 2,
            arch: lstm_nopeep(3, 3),
            tdl: None,
        },
        PredictorConfig {
            input_dim: 2,
            output_dim: 2,
            arch: lstm(1, 6),
            tdl: Some(3),
        },
        PredictorConfig {
            input_dim: 1,
            output_dim: 1,
            arch: lstm(2, 4),
            tdl: Some(5),
        },
        PredictorConfig {
            input_dim: 2,
            output_dim: 1,
            arch: ArchConfig::Mlfc(MlfcConfig::uniform(2, 4)),
            tdl: Some(4),
        },
        PredictorConfig {
            input_dim: 1,
            output_dim: 2,
            arch: mixed_mlfc(&[(8, Act::Tanh)]),
            tdl: Some(2),
        },
    ]
}

/// Worst absolute deviation between the library rollout and the
/// straight-line reimplementation across all oracle configurations, with
/// random weights, initial output and a 12-step input sequence.
pub fn oracle_worst_deviation(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for cfg in oracle_configs() {
        let (layout, pred) = Predictor::standalone(cfg.clone()).unwrap();
        let theta = init_theta(&layout, 0.4, &mut rng);
        let y0: Vec<f64> = (0..cfg.output_dim)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let inputs: Vec<Vec<f64>> = (0..12)
            .map(|_| {
                (0..cfg.input_dim)
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        let init = InitializedState {
            state: pred.zero_state(),
            y0: y0.clone(),
        };
        let (lib, _) = pred.rollout(&layout, &theta, &init, &inputs).unwrap();
        let oracle = oracle_rollout(&layout, "", &cfg, &theta, &y0, &inputs);
        worst = worst.max(max_abs_rows(&lib, &oracle));
    }
    worst
}
