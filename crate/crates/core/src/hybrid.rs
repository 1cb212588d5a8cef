//! Grey-box quadrotor model: two recurrent submodels wrapped around a
//! first-principles rigid-body motion model.
//!
//! The composition per prediction step `k`:
//!
//! 1. The **input submodel** maps the four motor commands plus the fed-back
//!    (denormalized) previous prediction to body torques and collective
//!    thrust: `[tau~_k; F~_k] = IM(motors_k, w*y~_{k-1})`.
//! 2. The **motion model** integrates the rigid-body equations one forward
//!    Euler step of size `dt`, with the body rates and velocity on its
//!    right-hand side *overridden* by the fed-back prediction (measured
//!    values at the first step), while attitude and position integrate from
//!    its own states:
//!
//!    ```text
//!    eta'    = eta + dt * W(eta) omega
//!    omega'  = omega + dt * J^-1 (tau - omega x J omega)
//!    xi'     = xi + dt * xi_dot
//!    xi_dot' = xi_dot + dt * ((F/m) R(eta) e3 - g e3)
//!    ```
//!
//!    `W(eta)` is the body-rate to Euler-rate transform (singular at pitch
//!    +-pi/2, which is guarded) and `R(eta) e3` the body z-axis in the world
//!    frame for the roll-pitch-yaw convention.
//! 3. The motion-model rates and velocities are normalized per channel and
//!    the **output submodel** predicts residual corrections from the motor
//!    commands, the torque/thrust estimate and the normalized motion-model
//!    outputs: `delta_k = OM(motors_k, tau~_k, F~_k, omega^_k, xi_dot^_k)`.
//! 4. The prediction is `y~_k = [omega^_k; xi_dot^_k] + delta_k` (normalized),
//!    fed back into step 1 at `k+1`.
//!
//! Both submodels are ordinary predictors with their own state initializers;
//! all parameters live in one flat vector and train jointly through the
//! whole composition, including the motion-model step.

use crate::arch::{ArchConfig, InputMask, Predictor, PredictorConfig, StateVars};
use crate::error::{Error, Result};
use crate::init::{InitConfig, InitSegment, Initializer};
use crate::numeric::param::ParamLayout;
use crate::numeric::tape::{Tape, Var};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

/// Input submodel: 4 motor commands + 6 fed-back physical outputs.
pub const IM_INPUT_DIM: usize = 10;
/// Input submodel output: 3 body torques + collective thrust.
pub const IM_OUTPUT_DIM: usize = 4;
/// Output submodel: 4 motors + 4 torque/thrust + 6 normalized motion-model outputs.
pub const OM_INPUT_DIM: usize = 14;
/// Output submodel output: corrections to the 6 normalized outputs.
pub const OM_OUTPUT_DIM: usize = 6;

/// Rigid-body state of the vehicle: attitude `eta = [roll, pitch, yaw]`,
/// body rates `omega = [p, q, r]`, position `xi` and velocity `xi_dot`
/// (world frame), all in SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadState {
    pub eta: [f64; 3],
    pub omega: [f64; 3],
    pub xi: [f64; 3],
    pub xi_dot: [f64; 3],
}

impl QuadState {
    pub fn zero() -> QuadState {
        QuadState {
            eta: [0.0; 3],
            omega: [0.0; 3],
            xi: [0.0; 3],
            xi_dot: [0.0; 3],
        }
    }
}

/// One measured sample of the quadrotor dataset: the four motor commands
/// driving the step and the resulting measured rigid-body state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadRecord {
    pub motors: [f64; 4],
    pub eta: [f64; 3],
    pub omega: [f64; 3],
    pub xi: [f64; 3],
    pub xi_dot: [f64; 3],
}

/// Motion-model constants. `drag` adds a linear aerodynamic force
/// `-drag[i] * xi_dot[i]` to the translational dynamics; the nominal model
/// inside the grey box leaves it `None` (unmodeled effects are what the
/// output submodel learns), while the bundled plant simulation sets it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmParams {
    pub mass: f64,
    /// Diagonal of the inertia tensor `J`.
    pub inertia: [f64; 3],
    pub gravity: f64,
    /// Integration step, equal to the data sampling interval.
    pub dt: f64,
    pub drag: Option<[f64; 3]>,
}

impl MmParams {
    /// Constants of the bundled simulated vehicle.
    pub fn sim_default() -> MmParams {
        MmParams {
            mass: 0.55,
            inertia: [0.0045, 0.0045, 0.0085],
            gravity: 9.81,
            dt: 0.01,
            drag: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) || !(self.dt > 0.0) || self.inertia.iter().any(|j| !(*j > 0.0)) {
            return Err(Error::Config(
                "motion model needs positive mass, inertia and step size".into(),
            ));
        }
        Ok(())
    }
}

/// Per-channel normalization weights for the six predicted outputs
/// `[p, q, r, x_dot, y_dot, z_dot]`: networks exchange `value / weight`.
/// The defaults are the weights used with the real flight dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormGains {
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub x_dot: f64,
    pub y_dot: f64,
    pub z_dot: f64,
}

impl Default for NormGains {
    fn default() -> NormGains {
        NormGains {
            p: 3.9116,
            q: 3.8506,
            r: 3.7902,
            x_dot: 3.9268,
            y_dot: 3.9721,
            z_dot: 5.8526,
        }
    }
}

impl NormGains {
    /// Weights in output order `[p, q, r, x_dot, y_dot, z_dot]`.
    pub fn all6(&self) -> [f64; 6] {
        [self.p, self.q, self.r, self.x_dot, self.y_dot, self.z_dot]
    }

    pub fn inverse6(&self) -> [f64; 6] {
        let g = self.all6();
        [
            1.0 / g[0],
            1.0 / g[1],
            1.0 / g[2],
            1.0 / g[3],
            1.0 / g[4],
            1.0 / g[5],
        ]
    }

    /// Weights from per-channel maxima of a dataset (e.g. the simulated
    /// plant), so normalized signals live in [-1, 1].
    pub fn from_maxima(omega_max: [f64; 3], xi_dot_max: [f64; 3]) -> Result<NormGains> {
        let all = [
            omega_max[0],
            omega_max[1],
            omega_max[2],
            xi_dot_max[0],
            xi_dot_max[1],
            xi_dot_max[2],
        ];
        if all.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Data(
                "normalization weights need positive channel maxima".into(),
            ));
        }
        Ok(NormGains {
            p: all[0],
            q: all[1],
            r: all[2],
            x_dot: all[3],
            y_dot: all[4],
            z_dot: all[5],
        })
    }

    /// Normalized `[omega; xi_dot]` from physical measurements.
    pub fn normalize(&self, omega: [f64; 3], xi_dot: [f64; 3]) -> [f64; 6] {
        [
            omega[0] / self.p,
            omega[1] / self.q,
            omega[2] / self.r,
            xi_dot[0] / self.x_dot,
            xi_dot[1] / self.y_dot,
            xi_dot[2] / self.z_dot,
        ]
    }
}

/// Euler rates `eta_dot = W(eta) omega` for roll-pitch-yaw angles. The
/// caller must keep `|pitch| < pi/2` (see [`mm_step`] for the guarded form).
pub fn euler_rates(eta: [f64; 3], omega: [f64; 3]) -> [f64; 3] {
    let (sp, cp) = eta[0].sin_cos();
    let (st, ct) = eta[1].sin_cos();
    let [p, q, r] = omega;
    let tt = st / ct;
    [
        p + q * sp * tt + r * cp * tt,
        q * cp - r * sp,
        (q * sp + r * cp) / ct,
    ]
}

/// Body z-axis in world coordinates, `R(eta) e3`, for roll-pitch-yaw angles.
pub fn body_z_world(eta: [f64; 3]) -> [f64; 3] {
    let (sp, cp) = eta[0].sin_cos();
    let (st, ct) = eta[1].sin_cos();
    let (spsi, cpsi) = eta[2].sin_cos();
    [
        cp * st * cpsi + sp * spsi,
        cp * st * spsi - sp * cpsi,
        cp * ct,
    ]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// One forward Euler step of the rigid-body motion model. `step` labels the
/// pitch-singularity error when the attitude leaves the admissible range.
pub fn mm_step(
    mm: &MmParams,
    s: &QuadState,
    torque: [f64; 3],
    thrust: f64,
    step: usize,
) -> Result<QuadState> {
    let pitch = s.eta[1];
    if !(pitch.abs() < FRAC_PI_2) {
        return Err(Error::PitchSingularity {
            step,
            pitch,
            state: format!("{s:?}"),
        });
    }
    let eta_dot = euler_rates(s.eta, s.omega);
    let j = mm.inertia;
    let jw = [j[0] * s.omega[0], j[1] * s.omega[1], j[2] * s.omega[2]];
    let wxjw = cross3(s.omega, jw);
    let omega_dot = [
        (torque[0] - wxjw[0]) / j[0],
        (torque[1] - wxjw[1]) / j[1],
        (torque[2] - wxjw[2]) / j[2],
    ];
    let r3 = body_z_world(s.eta);
    let a = thrust / mm.mass;
    let mut xi_ddot = [a * r3[0], a * r3[1], a * r3[2] - mm.gravity];
    if let Some(d) = mm.drag {
        for i in 0..3 {
            xi_ddot[i] -= d[i] * s.xi_dot[i] / mm.mass;
        }
    }
    let dt = mm.dt;
    let step_vec = |x: [f64; 3], dx: [f64; 3]| {
        [x[0] + dt * dx[0], x[1] + dt * dx[1], x[2] + dt * dx[2]]
    };
    Ok(QuadState {
        eta: step_vec(s.eta, eta_dot),
        omega: step_vec(s.omega, omega_dot),
        xi: step_vec(s.xi, s.xi_dot),
        xi_dot: step_vec(s.xi_dot, xi_ddot),
    })
}

/// Motion-model states as tape nodes (each of width 3).
#[derive(Debug, Clone, Copy)]
pub struct MmVars {
    pub eta: Var,
    pub omega: Var,
    pub xi: Var,
    pub xi_dot: Var,
}

/// Tape counterpart of [`mm_step`]: torque and thrust may be network
/// outputs, so gradients flow through the physics into the submodels. The
/// pitch guard reads the concrete attitude value on the tape.
pub fn mm_step_on_tape(
    t: &mut Tape,
    mm: &MmParams,
    s: MmVars,
    torque: Var,
    thrust: Var,
    step: usize,
) -> Result<MmVars> {
    let pitch = t.value(s.eta)[1];
    if !(pitch.abs() < FRAC_PI_2) {
        let state = format!(
            "eta {:?}, omega {:?}, xi {:?}, xi_dot {:?}",
            t.value(s.eta),
            t.value(s.omega),
            t.value(s.xi),
            t.value(s.xi_dot)
        );
        return Err(Error::PitchSingularity { step, pitch, state });
    }
    let phi = t.slice(s.eta, 0, 1);
    let th = t.slice(s.eta, 1, 1);
    let psi = t.slice(s.eta, 2, 1);
    let sp = t.sin(phi);
    let cp = t.cos(phi);
    let st = t.sin(th);
    let ct = t.cos(th);
    let spsi = t.sin(psi);
    let cpsi = t.cos(psi);
    let p = t.slice(s.omega, 0, 1);
    let q = t.slice(s.omega, 1, 1);
    let r = t.slice(s.omega, 2, 1);

    // eta_dot = W(eta) omega
    let tt = t.div(st, ct);
    let q_sp = t.mul(q, sp);
    let q_sp_tt = t.mul(q_sp, tt);
    let r_cp = t.mul(r, cp);
    let r_cp_tt = t.mul(r_cp, tt);
    let e0a = t.add(p, q_sp_tt);
    let e0 = t.add(e0a, r_cp_tt);
    let q_cp = t.mul(q, cp);
    let r_sp = t.mul(r, sp);
    let e1 = t.sub(q_cp, r_sp);
    let e2n = t.add(q_sp, r_cp);
    let e2 = t.div(e2n, ct);
    let eta_dot = t.concat(&[e0, e1, e2]);

    // omega_dot = J^-1 (tau - omega x J omega)
    let j = mm.inertia;
    let jw = t.cmul(s.omega, &j);
    let wxjw = t.cross(s.omega, jw);
    let net_torque = t.sub(torque, wxjw);
    let omega_dot = t.cmul(net_torque, &[1.0 / j[0], 1.0 / j[1], 1.0 / j[2]]);

    // xi_ddot = (F/m) R(eta) e3 - g e3 (- drag/m when modeled)
    let cp_st = t.mul(cp, st);
    let r30a = t.mul(cp_st, cpsi);
    let r30b = t.mul(sp, spsi);
    let r30 = t.add(r30a, r30b);
    let r31a = t.mul(cp_st, spsi);
    let r31b = t.mul(sp, cpsi);
    let r31 = t.sub(r31a, r31b);
    let r32 = t.mul(cp, ct);
    let r3 = t.concat(&[r30, r31, r32]);
    let f_over_m = t.scale(thrust, 1.0 / mm.mass);
    let f3 = t.concat(&[f_over_m, f_over_m, f_over_m]);
    let accel = t.mul(r3, f3);
    let mut xi_ddot = t.cadd(accel, &[0.0, 0.0, -mm.gravity]);
    if let Some(d) = mm.drag {
        let drag = t.cmul(
            s.xi_dot,
            &[d[0] / mm.mass, d[1] / mm.mass, d[2] / mm.mass],
        );
        xi_ddot = t.sub(xi_ddot, drag);
    }

    let dt = mm.dt;
    let advance = |t: &mut Tape, x: Var, dx: Var| {
        let inc = t.scale(dx, dt);
        t.add(x, inc)
    };
    Ok(MmVars {
        eta: advance(t, s.eta, eta_dot),
        omega: advance(t, s.omega, omega_dot),
        xi: advance(t, s.xi, s.xi_dot),
        xi_dot: advance(t, s.xi_dot, xi_ddot),
    })
}

/// Configuration of the grey-box model: architectures and initialization
/// schemes for both submodels, the motion-model constants and the
/// normalization weights. Submodel input/output widths are fixed by the
/// composition and not configurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridConfig {
    pub im_arch: ArchConfig,
    pub im_tdl: Option<usize>,
    pub im_init: InitConfig,
    pub om_arch: ArchConfig,
    pub om_tdl: Option<usize>,
    pub om_init: InitConfig,
    pub mm: MmParams,
    pub gains: NormGains,
    /// Squash cap for unbounded state components of the initializers.
    pub cap: f64,
}

/// One training/evaluation window of quadrotor data: `tau + 1` history
/// records ending at the initialization time, then the records to predict.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridWindow {
    pub hist: Vec<QuadRecord>,
    pub pred: Vec<QuadRecord>,
}

impl HybridWindow {
    /// Normalized targets `[omega; xi_dot] / w`, one row per prediction step.
    pub fn targets(&self, gains: &NormGains) -> Vec<Vec<f64>> {
        self.pred
            .iter()
            .map(|r| gains.normalize(r.omega, r.xi_dot).to_vec())
            .collect()
    }
}

/// Carried variables of a hybrid rollout between steps.
#[derive(Debug, Clone)]
struct HybridVars {
    im_state: StateVars,
    im_prev: Var,
    om_state: StateVars,
    om_prev: Var,
    /// Attitude and position integrators of the motion model.
    eta: Var,
    xi: Var,
    /// Previous prediction (normalized), fed back into the next step;
    /// measured values at the first step.
    prev_out: Var,
}

/// The jointly trained grey-box model. All parameters — input submodel,
/// output submodel and both initializers — live in one layout/vector.
#[derive(Debug, Clone)]
pub struct HybridModel {
    cfg: HybridConfig,
    layout: ParamLayout,
    im: Predictor,
    im_init: Initializer,
    om: Predictor,
    om_init: Initializer,
}

impl HybridModel {
    pub fn new(cfg: HybridConfig) -> Result<HybridModel> {
        cfg.mm.validate()?;
        if cfg.im_init.tau() != cfg.om_init.tau() {
            return Err(Error::Config(format!(
                "submodel initializers must share one history length (got {} and {})",
                cfg.im_init.tau(),
                cfg.om_init.tau()
            )));
        }
        let mut layout = ParamLayout::new();
        let im = Predictor::build(
            &mut layout,
            "im.",
            PredictorConfig {
                input_dim: IM_INPUT_DIM,
                output_dim: IM_OUTPUT_DIM,
                arch: cfg.im_arch.clone(),
                tdl: cfg.im_tdl,
            },
        )?;
        let im_init = Initializer::build(
            &mut layout,
            "im.",
            &im,
            cfg.im_init.clone(),
            IM_INPUT_DIM,
            0,
            cfg.cap,
        )?;
        let om = Predictor::build(
            &mut layout,
            "om.",
            PredictorConfig {
                input_dim: OM_INPUT_DIM,
                output_dim: OM_OUTPUT_DIM,
                arch: cfg.om_arch.clone(),
                tdl: cfg.om_tdl,
            },
        )?;
        // The output submodel's own input contains unmeasured internal
        // signals, so its initializer reads the same measured history rows
        // as the input submodel's.
        let om_init = Initializer::build(
            &mut layout,
            "om.",
            &om,
            cfg.om_init.clone(),
            IM_INPUT_DIM,
            0,
            cfg.cap,
        )
        .map_err(|e| match e {
            Error::Config(msg) if msg.starts_with("washout replays") => Error::Config(
                "the output submodel cannot use washout initialization: its input \
                 includes unmeasured torque/thrust estimates, so no measured history \
                 can replay it — use a network scheme"
                    .into(),
            ),
            other => other,
        })?;
        Ok(HybridModel {
            cfg,
            layout,
            im,
            im_init,
            om,
            om_init,
        })
    }

    pub fn config(&self) -> &HybridConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn theta_len(&self) -> usize {
        self.layout.total()
    }

    pub fn gains(&self) -> &NormGains {
        &self.cfg.gains
    }

    pub fn mm(&self) -> &MmParams {
        &self.cfg.mm
    }

    pub fn im(&self) -> &Predictor {
        &self.im
    }

    pub fn om(&self) -> &Predictor {
        &self.om
    }

    /// History length: windows must carry `tau() + 1` history records.
    pub fn tau(&self) -> usize {
        self.cfg.im_init.tau()
    }

    /// The measured history row both initializers consume:
    /// `[motors; omega; xi_dot]` in physical units.
    fn measured_row(rec: &QuadRecord) -> Vec<f64> {
        let mut row = Vec::with_capacity(IM_INPUT_DIM);
        row.extend_from_slice(&rec.motors);
        row.extend_from_slice(&rec.omega);
        row.extend_from_slice(&rec.xi_dot);
        row
    }

    fn check_window(&self, w: &HybridWindow) -> Result<()> {
        if w.hist.len() != self.tau() + 1 {
            return Err(Error::Sequencing(format!(
                "hybrid window holds {} history records, model needs {}",
                w.hist.len(),
                self.tau() + 1
            )));
        }
        if w.pred.is_empty() {
            return Err(Error::Sequencing(
                "hybrid window has no prediction records".into(),
            ));
        }
        Ok(())
    }

    /// Initialize both submodels and the motion-model integrators at the end
    /// of the history.
    fn initialize_on_tape(
        &self,
        t: &mut Tape,
        params: &[Var],
        hist: &[QuadRecord],
    ) -> Result<HybridVars> {
        let rows: Vec<Vec<f64>> = hist.iter().map(Self::measured_row).collect();
        let seg = InitSegment { u: &rows, y: &[] };
        let last = hist.last().expect("window checked nonempty");

        let pu_im = t.constant(rows.last().expect("window checked nonempty"));
        let iv_im = self
            .im_init
            .initialize_on_tape(t, params, &self.im, &seg, pu_im)?;

        // Prime the output submodel with the k0 composition input, using
        // measured values where the motion model would feed it.
        let meas_n = self.cfg.gains.normalize(last.omega, last.xi_dot);
        let motors = t.constant(&last.motors);
        let meas_n_var = t.constant(&meas_n);
        let pu_om = t.concat(&[motors, iv_im.y0, meas_n_var]);
        let iv_om = self
            .om_init
            .initialize_on_tape(t, params, &self.om, &seg, pu_om)?;

        Ok(HybridVars {
            im_state: iv_im.state,
            im_prev: iv_im.y0,
            om_state: iv_om.state,
            om_prev: iv_om.y0,
            eta: t.constant(&last.eta),
            xi: t.constant(&last.xi),
            prev_out: t.constant(&meas_n),
        })
    }

    /// One composed prediction step (see the module docs for the wiring).
    fn step_on_tape(
        &self,
        t: &mut Tape,
        params: &[Var],
        mut mask: Option<InputMask<'_>>,
        vars: &HybridVars,
        motors: &[f64; 4],
        step: usize,
    ) -> Result<(HybridVars, Var)> {
        let gains = self.cfg.gains.all6();
        let denorm = t.cmul(vars.prev_out, &gains);
        let motors_var = t.constant(motors);
        let i_im = t.concat(&[motors_var, denorm]);
        let im_mask: Option<InputMask<'_>> = mask.as_deref_mut().map(|m| m as InputMask<'_>);
        let (im_state, im_y) =
            self.im
                .step_on_tape(t, params, im_mask, &vars.im_state, vars.im_prev, i_im);

        let omega_use = t.slice(denorm, 0, 3);
        let xi_dot_use = t.slice(denorm, 3, 3);
        let torque = t.slice(im_y, 0, 3);
        let thrust = t.slice(im_y, 3, 1);
        let next_mm = mm_step_on_tape(
            t,
            &self.cfg.mm,
            MmVars {
                eta: vars.eta,
                omega: omega_use,
                xi: vars.xi,
                xi_dot: xi_dot_use,
            },
            torque,
            thrust,
            step,
        )?;

        let mm_out = t.concat(&[next_mm.omega, next_mm.xi_dot]);
        let mm_norm = t.cmul(mm_out, &self.cfg.gains.inverse6());
        let i_om = t.concat(&[motors_var, im_y, mm_norm]);
        let om_mask: Option<InputMask<'_>> = mask.as_deref_mut().map(|m| m as InputMask<'_>);
        let (om_state, delta) =
            self.om
                .step_on_tape(t, params, om_mask, &vars.om_state, vars.om_prev, i_om);
        let y = t.add(mm_norm, delta);

        Ok((
            HybridVars {
                im_state,
                im_prev: im_y,
                om_state,
                om_prev: delta,
                eta: next_mm.eta,
                xi: next_mm.xi,
                prev_out: y,
            },
            y,
        ))
    }

    /// Closed-loop rollout over a window on the tape; returns one normalized
    /// output row per prediction record.
    pub fn rollout_on_tape(
        &self,
        t: &mut Tape,
        params: &[Var],
        mut mask: Option<InputMask<'_>>,
        window: &HybridWindow,
    ) -> Result<Vec<Var>> {
        self.check_window(window)?;
        let mut vars = self.initialize_on_tape(t, params, &window.hist)?;
        let mut ys = Vec::with_capacity(window.pred.len());
        for (k, rec) in window.pred.iter().enumerate() {
            t.set_step(k + 1);
            let m: Option<InputMask<'_>> = mask.as_deref_mut().map(|mm| mm as InputMask<'_>);
            let (next, y) = self.step_on_tape(t, params, m, &vars, &rec.motors, k + 1)?;
            vars = next;
            ys.push(y);
        }
        t.clear_step();
        Ok(ys)
    }

    /// Concrete closed-loop prediction over a window. Returns normalized
    /// output rows (multiply by [`NormGains::all6`] for physical units).
    pub fn predict(&self, theta: &[f64], window: &HybridWindow) -> Result<Vec<Vec<f64>>> {
        if theta.len() != self.layout.total() {
            return Err(Error::Dim {
                op: "HybridModel",
                expected: format!("theta of length {}", self.layout.total()),
                got: format!("{}", theta.len()),
            });
        }
        let mut t = Tape::new();
        let params = t.bind_params(&self.layout, theta);
        let ys = self.rollout_on_tape(&mut t, &params, None, window)?;
        if let Some(step) = t.poisoned() {
            return Err(Error::Instability { step });
        }
        Ok(ys.iter().map(|y| t.value(*y).to_vec()).collect())
    }

    /// Physical-unit rows from normalized prediction rows.
    pub fn denormalize(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let g = self.cfg.gains.all6();
        rows.iter()
            .map(|r| r.iter().zip(&g).map(|(v, w)| v * w).collect())
            .collect()
    }
}
