//! Fixed-step closed-loop simulation of plant, reference model, identifier,
//! switched controller and history stacks.
//!
//! Integrated state layout: `[x, x_m, ψ, θ̂, vec_rows(m), φ]` where
//! `ψ = x̂ - mθ̂`. The identifier filter is integrated in the `ψ`
//! coordinates (`ψ̇ = k_m (x - ψ)`), an exact rewrite of the `x̂` equation
//! that keeps `x̃ - mθ̃` a linear function of the state, so the regression
//! identity `g = mθ` survives discretization to round-off.

mod diagnostics;
mod integrator;

pub use diagnostics::{convergence_diagnostics, lyapunov_value, ConvergenceDiagnostics, Truth};
pub use integrator::{guard, rk4_step, ESCAPE_NORM};

use serde::{Deserialize, Serialize};

use crate::controller::{
    classical_phi_derivative, control_input, phi_derivative, ControllerGains, ControllerState, EpsilonContext, Phase, ProjectionSpec,
    DEFAULT_K_PHI,
};
use crate::error::{dim_err, MracError, Result};
use crate::excitation::{check_stack_span, excitation_window, ExcitationReport, SpanCheck};
use crate::identifier::{filtered_channels, finalize_ft, gamma_value, FtEstimate, IdentifierGains};
use crate::matrixlab::{self, inverse, is_positive_definite, norm2, solve_lyapunov, Matrix};
use crate::memory::{DataStack, HRecord, RecordingPolicy, WRecord};
use crate::system::{
    b_from_theta, build_regressor_y, build_regressor_z, solve_matching, Dims, MatchedGains, PlantModel, ReferenceModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    Proposed,
    ClassicalBaseline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialConditions {
    pub x0: Vec<f64>,
    pub xm0: Vec<f64>,
    pub x_hat0: Vec<f64>,
    pub theta_hat0: Vec<f64>,
    pub phi0: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StackSettings {
    pub policy: RecordingPolicy,
    /// Defaults to four times the minimum stack length.
    pub capacity: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub plant: PlantModel,
    pub reference: ReferenceModel,
    pub identifier: IdentifierGains,
    pub k_phi: f64,
    pub gamma_phi: Matrix,
    pub q: Matrix,
    pub gamma_x: Matrix,
    pub gamma_r: Matrix,
    pub projection: ProjectionSpec,
    pub stacks: StackSettings,
    pub dt: f64,
    pub t0: f64,
    pub t_end: f64,
    pub initial: InitialConditions,
    pub mode: SimMode,
}

impl SimConfig {
    /// Config with the library defaults for every gain; the initial
    /// conditions start the identifier at zero with `x̂(t₀) = x(t₀)`.
    pub fn with_defaults(plant: PlantModel, reference: ReferenceModel, x0: Vec<f64>, phi0: Vec<f64>) -> Self {
        let dims = plant.dims();
        let dt = 1e-3;
        Self {
            identifier: IdentifierGains::default(),
            k_phi: DEFAULT_K_PHI,
            gamma_phi: Matrix::identity(dims.phi_len()),
            q: Matrix::identity(dims.n),
            gamma_x: Matrix::identity(dims.n),
            gamma_r: Matrix::identity(dims.d),
            projection: ProjectionSpec { radius: 50.0, boundary_band: 5.0 },
            stacks: StackSettings {
                policy: RecordingPolicy::with_dt(dt),
                capacity: None,
            },
            dt,
            t0: 0.0,
            t_end: 10.0,
            initial: InitialConditions {
                xm0: vec![0.0; dims.n],
                x_hat0: x0.clone(),
                theta_hat0: vec![0.0; dims.theta_len()],
                x0,
                phi0,
            },
            mode: SimMode::Proposed,
            plant,
            reference,
        }
    }

    pub fn dims(&self) -> Dims {
        self.plant.dims()
    }

    /// Controller gains with `P` solved from `A_mᵀP + PA_m = -Q`.
    pub fn controller_gains(&self) -> Result<ControllerGains> {
        Ok(ControllerGains {
            gamma_phi: self.gamma_phi.clone(),
            k_phi: self.k_phi,
            p: solve_lyapunov(self.reference.a_m(), &self.q)?,
            gamma_x: self.gamma_x.clone(),
            gamma_r: self.gamma_r.clone(),
        })
    }

    pub fn steps(&self) -> usize {
        ((self.t_end - self.t0) / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.dims();
        let Dims { n, d } = dims;
        let bad = |m: String| Err(MracError::InvalidConfig(m));
        if self.reference.a_m().rows() != n || self.reference.b_m().cols() != d {
            return Err(dim_err("reference model", format!("n={n}, d={d}"), format!("n={}, d={}", self.reference.a_m().rows(), self.reference.b_m().cols())));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end > self.t0 && self.t_end.is_finite()) {
            return bad(format!("t_end ({}) must exceed t0 ({})", self.t_end, self.t0));
        }
        if !(self.identifier.k_theta > 0.0 && self.identifier.k_m > 0.0 && self.k_phi > 0.0) {
            return bad("k_theta, k_m and k_phi must be positive".into());
        }
        for (name, m, size) in [
            ("Q", &self.q, n),
            ("Gamma_phi", &self.gamma_phi, dims.phi_len()),
            ("Gamma_x", &self.gamma_x, n),
            ("Gamma_r", &self.gamma_r, d),
        ] {
            if m.shape() != (size, size) {
                return Err(dim_err("gain matrix", format!("{name} {size}x{size}"), format!("{}x{}", m.rows(), m.cols())));
            }
            if !is_positive_definite(m)? {
                return bad(format!("{name} must be positive definite"));
            }
        }
        self.projection.validate()?;
        let p = &self.stacks.policy;
        if !(p.eps_store > 0.0 && p.min_dwell >= 0.0 && p.floor > 0.0) {
            return bad("stack policy needs eps_store > 0, min_dwell >= 0, floor > 0".into());
        }
        let ic = &self.initial;
        for (name, v, len) in [
            ("x0", &ic.x0, n),
            ("xm0", &ic.xm0, n),
            ("x_hat0", &ic.x_hat0, n),
            ("theta_hat0", &ic.theta_hat0, dims.theta_len()),
            ("phi0", &ic.phi0, dims.phi_len()),
        ] {
            if v.len() != len {
                return Err(dim_err("initial condition", format!("{name} of length {len}"), v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return bad(format!("{name} must be finite"));
            }
        }
        if self.mode == SimMode::Proposed && norm2(&ic.phi0) > self.projection.radius {
            return bad("phi0 lies outside the projection region".into());
        }
        Ok(())
    }
}

/// Rank-satisfaction instants of the two stacks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EventTimes {
    pub t_c: Option<f64>,
    pub t_s: Option<f64>,
    pub t_m: Option<f64>,
}

/// Refreshes event times from the stacks; once set, an event time is kept.
pub fn detect_events<A, B>(w: &DataStack<A>, h: &DataStack<B>, prior: EventTimes) -> EventTimes {
    let t_c = prior.t_c.or(w.satisfied_at());
    let t_s = prior.t_s.or(h.satisfied_at());
    let t_m = match (t_c, t_s) {
        (Some(c), Some(s)) => Some(c.max(s)),
        _ => None,
    };
    EventTimes { t_c, t_s, t_m }
}

/// One logged sample on the uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub x: Vec<f64>,
    pub x_m: Vec<f64>,
    pub e: Vec<f64>,
    pub r: Vec<f64>,
    pub u: Vec<f64>,
    pub phi: Vec<f64>,
    /// `θ̂_FT(t)`
    pub theta_ft: Vec<f64>,
    /// Filtered channels `μ = [a; b]` of `m(t)`.
    pub mu: Vec<f64>,
    /// `‖θ̂_FT - θ‖`
    pub norm_theta_tilde: f64,
    /// `‖θ̂ - θ‖` of the online estimate.
    pub norm_theta_hat_err: f64,
    pub norm_phi_tilde: f64,
    pub norm_gamma: f64,
    /// `‖g - mθ‖`
    pub g_residual: f64,
    /// `‖γ - (x̃ - mθ̃)‖`
    pub gamma_residual: f64,
    /// `max_j ‖ε_{K,j} - z_jφ̃‖` once `θ̂_FT` is locked.
    pub eps_residual: Option<f64>,
    pub v_xi: f64,
    /// Phase in force from this step on.
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcitationSummary {
    /// `[x; u]` over `[t₀, t_c]`.
    pub xu_until_tc: Option<ExcitationReport>,
    /// `[x; r]` over `[t₀, t_s]`.
    pub xr_until_ts: Option<ExcitationReport>,
    /// W stack columns `μ_j` against the filtered signal `μ(t)`.
    pub span_w: Option<SpanCheck>,
    /// H stack columns `[x_j; r_j]` against `[x(t); r(t)]`.
    pub span_h: Option<SpanCheck>,
}

#[derive(Debug, Clone)]
pub struct RunLog {
    pub dims: Dims,
    pub mode: SimMode,
    pub records: Vec<StepRecord>,
    pub events: EventTimes,
    pub w_stack: DataStack<WRecord>,
    pub h_stack: DataStack<HRecord>,
    pub theta_locked: Option<Vec<f64>>,
    pub p: Matrix,
    pub truth: Option<Truth>,
    pub excitation: ExcitationSummary,
}

impl RunLog {
    pub fn initial(&self) -> &StepRecord {
        &self.records[0]
    }

    pub fn last(&self) -> &StepRecord {
        self.records.last().expect("run log has at least the initial record")
    }

    pub fn peak_tracking_error(&self) -> f64 {
        self.records.iter().map(|r| norm2(&r.e)).fold(0.0, f64::max)
    }
}

struct Layout {
    n: usize,
    p: usize,
    q: usize,
}

impl Layout {
    fn new(dims: Dims) -> Self {
        Self {
            n: dims.n,
            p: dims.theta_len(),
            q: dims.phi_len(),
        }
    }
    fn x(&self) -> std::ops::Range<usize> {
        0..self.n
    }
    fn xm(&self) -> std::ops::Range<usize> {
        self.n..2 * self.n
    }
    fn psi(&self) -> std::ops::Range<usize> {
        2 * self.n..3 * self.n
    }
    fn theta(&self) -> std::ops::Range<usize> {
        3 * self.n..3 * self.n + self.p
    }
    fn m(&self) -> std::ops::Range<usize> {
        let s = 3 * self.n + self.p;
        s..s + self.n * self.p
    }
    fn phi(&self) -> std::ops::Range<usize> {
        let s = 3 * self.n + self.p + self.n * self.p;
        s..s + self.q
    }
    fn len(&self) -> usize {
        self.phi().end
    }
}

/// Frozen pieces the derivative needs once `t_c` / `t_m` have passed.
struct Locked<'a> {
    b_hat: Option<&'a Matrix>,
    cl: Option<(&'a DataStack<HRecord>, &'a EpsilonContext)>,
}

struct Model<'a> {
    cfg: &'a SimConfig,
    dims: Dims,
    lay: Layout,
    gains: ControllerGains,
    gamma0: Vec<f64>,
}

impl Model<'_> {
    fn derivative(&self, t: f64, s: &[f64], phase: Phase, locked: &Locked<'_>) -> Result<Vec<f64>> {
        let lay = &self.lay;
        let dims = self.dims;
        let x = &s[lay.x()];
        let xm = &s[lay.xm()];
        let psi = &s[lay.psi()];
        let theta_hat = &s[lay.theta()];
        let m = Matrix::from_row_slice(lay.n, lay.p, &s[lay.m()]);
        let phi = &s[lay.phi()];

        let r = self.cfg.reference.r(t);
        let u = control_input(phi, x, &r, dims)?;
        let y = build_regressor_y(x, &u, dims)?;
        let k_m = self.cfg.identifier.k_m;
        let k_theta = self.cfg.identifier.k_theta;

        let mut out = Vec::with_capacity(lay.len());
        out.extend(self.cfg.plant.derivative(x, &u)?);
        out.extend(crate::system::reference_derivative(&self.cfg.reference, xm, t));
        out.extend(x.iter().zip(psi).map(|(xi, pi)| k_m * (xi - pi)));

        // x̃ - γ = x - ψ - mθ̂ - γ
        let gamma = gamma_value(&self.gamma0, self.cfg.t0, t, k_m);
        let mut innovation = matrixlab::vsub(x, psi);
        matrixlab::axpy(&mut innovation, -1.0, &m.mul_vec(theta_hat));
        matrixlab::axpy(&mut innovation, -1.0, &gamma);
        out.extend(matrixlab::vscale(&m.tr_mul_vec(&innovation), k_theta));
        out.extend((&y - &m.scale(k_m)).as_slice().iter().copied());

        let e = matrixlab::vsub(x, xm);
        let dphi = match phase {
            Phase::Classical => classical_phi_derivative(x, &r, &e, &self.gains.p, self.cfg.plant.b(), &self.gains)?,
            Phase::Phase1Proj => {
                let b_hat = b_from_theta(theta_hat, dims);
                let z = build_regressor_z(x, &r, dims)?;
                phi_derivative(phase, phi, &e, &z, &b_hat, &self.gains, &self.cfg.projection, None)?
            }
            Phase::Phase2Grad | Phase::Phase3Cl => {
                let b_hat = locked.b_hat.expect("locked B̂ after t_c");
                let z = build_regressor_z(x, &r, dims)?;
                phi_derivative(phase, phi, &e, &z, b_hat, &self.gains, &self.cfg.projection, locked.cl)?
            }
        };
        out.extend(dphi);
        Ok(out)
    }
}

/// Integrates the closed loop on the fixed grid `t₀ + k·dt` and returns the
/// full log. Absent event times mean the rank conditions never held.
pub fn run_closed_loop(cfg: &SimConfig) -> Result<RunLog> {
    cfg.validate()?;
    let dims = cfg.dims();
    let lay = Layout::new(dims);
    let matched: MatchedGains = solve_matching(&cfg.plant, &cfg.reference)?;
    let phi_star = matched.phi_star();
    if cfg.mode == SimMode::Proposed && norm2(&phi_star) >= cfg.projection.radius {
        return Err(MracError::InvalidConfig(format!(
            "projection radius {} does not contain the ideal gains (norm {})",
            cfg.projection.radius,
            norm2(&phi_star)
        )));
    }
    let theta_true = cfg.plant.theta();
    let gains = cfg.controller_gains()?;
    let p = gains.p.clone();
    let gamma_phi_inv = inverse(&cfg.gamma_phi)?;
    let ic = &cfg.initial;
    let model = Model {
        cfg,
        dims,
        lay: Layout::new(dims),
        gains,
        gamma0: matrixlab::vsub(&ic.x0, &ic.x_hat0),
    };

    let mut s = vec![0.0; lay.len()];
    s[lay.x()].copy_from_slice(&ic.x0);
    s[lay.xm()].copy_from_slice(&ic.xm0);
    s[lay.psi()].copy_from_slice(&ic.x_hat0);
    s[lay.theta()].copy_from_slice(&ic.theta_hat0);
    s[lay.phi()].copy_from_slice(&ic.phi0);

    let min_len = dims.n + dims.d;
    let capacity = cfg.stacks.capacity.unwrap_or(4 * min_len);
    let mut w_stack: DataStack<WRecord> = DataStack::new(min_len, capacity, cfg.stacks.policy);
    let mut h_stack: DataStack<HRecord> = DataStack::new(min_len, capacity, cfg.stacks.policy);
    let mut ft = FtEstimate::default();
    let mut controller = ControllerState::new(
        ic.phi0.clone(),
        match cfg.mode {
            SimMode::Proposed => Phase::Phase1Proj,
            SimMode::ClassicalBaseline => Phase::Classical,
        },
    );
    let mut events = EventTimes::default();
    // built once θ̂_FT is locked
    let mut eps_ctx: Option<EpsilonContext> = None;

    let steps = cfg.steps();
    let mut records = Vec::with_capacity(steps + 1);
    let observer = Observer {
        cfg,
        dims,
        theta_true: &theta_true,
        phi_star: &phi_star,
        p: &p,
        gamma_phi_inv: &gamma_phi_inv,
        gamma0: &model.gamma0,
    };
    records.push(observer.record(cfg.t0, &s, &lay, &ft, controller.phase(), None, &h_stack)?);

    for k in 0..steps {
        let t = cfg.t0 + k as f64 * cfg.dt;
        let t_next = cfg.t0 + (k + 1) as f64 * cfg.dt;
        let phase = controller.phase();
        let next = {
            let locked = Locked {
                b_hat: eps_ctx.as_ref().map(EpsilonContext::b_hat),
                cl: if phase == Phase::Phase3Cl {
                    eps_ctx.as_ref().map(|c| (&h_stack, c))
                } else {
                    None
                },
            };
            rk4_step(|tau, st| model.derivative(tau, st, phase, &locked), t, &s, cfg.dt)?
        };
        s = next;
        controller.phi = s[lay.phi()].to_vec();

        // stacks sample post-step values
        let x = &s[lay.x()];
        let m = Matrix::from_row_slice(lay.n, lay.p, &s[lay.m()]);
        if !w_stack.is_frozen() {
            let g = observer.g_value(t_next, &s, &lay, &m);
            let signal = m.as_slice().to_vec();
            if w_stack.maybe_record(t_next, &signal, WRecord { m: m.clone(), g }) {
                w_stack.rank_condition_met(t_next, |rec| rec.m.clone());
            }
        }
        let r = cfg.reference.r(t_next);
        if !h_stack.is_frozen() {
            let u = control_input(&controller.phi, x, &r, dims)?;
            let mut signal = x.to_vec();
            signal.extend_from_slice(&r);
            if h_stack.maybe_record(t_next, &signal, HRecord { x: x.to_vec(), r: r.clone(), u }) {
                h_stack.rank_condition_met(t_next, |rec| build_regressor_z(&rec.x, &rec.r, dims).expect("stored dimensions"));
            }
        }

        let prior = events;
        events = detect_events(&w_stack, &h_stack, prior);
        if prior.t_c.is_none() {
            if let Some(t_c) = events.t_c {
                let theta = finalize_ft(&w_stack)?;
                eps_ctx = Some(EpsilonContext::new(&theta, cfg.reference.a_m(), cfg.reference.b_m(), dims)?);
                ft.lock(theta, t_c);
                controller.advance_to(Phase::Phase2Grad);
            }
        }
        if prior.t_m.is_none() && events.t_m.is_some() {
            controller.advance_to(Phase::Phase3Cl);
        }

        records.push(observer.record(t_next, &s, &lay, &ft, controller.phase(), eps_ctx.as_ref(), &h_stack)?);
    }

    let excitation = excitation_summary(&records, &events, &w_stack, &h_stack, dims)?;
    Ok(RunLog {
        dims,
        mode: cfg.mode,
        records,
        events,
        w_stack,
        h_stack,
        theta_locked: ft.theta_locked().map(<[f64]>::to_vec),
        p,
        truth: Some(Truth {
            plant: cfg.plant.clone(),
            matched,
        }),
        excitation,
    })
}

struct Observer<'a> {
    cfg: &'a SimConfig,
    dims: Dims,
    theta_true: &'a [f64],
    phi_star: &'a [f64],
    p: &'a Matrix,
    gamma_phi_inv: &'a Matrix,
    gamma0: &'a [f64],
}

impl Observer<'_> {
    fn gamma(&self, t: f64) -> Vec<f64> {
        gamma_value(self.gamma0, self.cfg.t0, t, self.cfg.identifier.k_m)
    }

    /// `g = mθ̂ + x̃ - γ` with `x̂ = ψ + mθ̂`.
    fn g_value(&self, t: f64, s: &[f64], lay: &Layout, m: &Matrix) -> Vec<f64> {
        let x = &s[lay.x()];
        let psi = &s[lay.psi()];
        let theta_hat = &s[lay.theta()];
        let m_theta_hat = m.mul_vec(theta_hat);
        let x_hat = matrixlab::vadd(psi, &m_theta_hat);
        let mut g = m_theta_hat;
        matrixlab::axpy(&mut g, 1.0, &matrixlab::vsub(x, &x_hat));
        matrixlab::axpy(&mut g, -1.0, &self.gamma(t));
        g
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        t: f64,
        s: &[f64],
        lay: &Layout,
        ft: &FtEstimate,
        phase: Phase,
        eps_ctx: Option<&EpsilonContext>,
        h: &DataStack<HRecord>,
    ) -> Result<StepRecord> {
        let dims = self.dims;
        let x = s[lay.x()].to_vec();
        let x_m = s[lay.xm()].to_vec();
        let theta_hat = &s[lay.theta()];
        let m = Matrix::from_row_slice(lay.n, lay.p, &s[lay.m()]);
        let phi = s[lay.phi()].to_vec();
        let r = self.cfg.reference.r(t);
        let u = control_input(&phi, &x, &r, dims)?;
        let e = matrixlab::vsub(&x, &x_m);

        let theta_ft = ft.theta_ft(theta_hat).to_vec();
        let theta_tilde_ft = matrixlab::vsub(&theta_ft, self.theta_true);
        let theta_tilde = matrixlab::vsub(self.theta_true, theta_hat);
        let phi_tilde = matrixlab::vsub(&phi, self.phi_star);

        let gamma = self.gamma(t);
        let g = self.g_value(t, s, lay, &m);
        let g_residual = norm2(&matrixlab::vsub(&g, &m.mul_vec(self.theta_true)));
        // x̃ - mθ̃ from the reconstructed x̂
        let x_hat = matrixlab::vadd(&s[lay.psi()], &m.mul_vec(theta_hat));
        let mut surrogate = matrixlab::vsub(&x, &x_hat);
        matrixlab::axpy(&mut surrogate, -1.0, &m.mul_vec(&theta_tilde));
        let gamma_residual = norm2(&matrixlab::vsub(&gamma, &surrogate));

        let eps_residual = match eps_ctx {
            Some(ctx) => {
                let mut worst: f64 = 0.0;
                for entry in h.entries() {
                    let rec = &entry.payload;
                    let eps = ctx.epsilon(&rec.x, &rec.r, &phi)?;
                    let z = build_regressor_z(&rec.x, &rec.r, dims)?;
                    let expect = z.mul_vec(&phi_tilde);
                    worst = worst.max(norm2(&matrixlab::vsub(&eps, &expect)));
                }
                Some(worst)
            }
            None => None,
        };

        Ok(StepRecord {
            t,
            v_xi: lyapunov_value(&e, &phi_tilde, self.p, self.gamma_phi_inv),
            mu: filtered_channels(&m, dims),
            norm_theta_tilde: norm2(&theta_tilde_ft),
            norm_theta_hat_err: norm2(&theta_tilde),
            norm_phi_tilde: norm2(&phi_tilde),
            norm_gamma: norm2(&gamma),
            g_residual,
            gamma_residual,
            eps_residual,
            phase,
            x,
            x_m,
            e,
            r,
            u,
            phi,
            theta_ft,
        })
    }
}

fn excitation_summary(
    records: &[StepRecord],
    events: &EventTimes,
    w: &DataStack<WRecord>,
    h: &DataStack<HRecord>,
    dims: Dims,
) -> Result<ExcitationSummary> {
    let t0 = records[0].t;
    let xu: Vec<(f64, Vec<f64>)> = records
        .iter()
        .map(|r| {
            let mut v = r.x.clone();
            v.extend_from_slice(&r.u);
            (r.t, v)
        })
        .collect();
    let xr: Vec<(f64, Vec<f64>)> = records
        .iter()
        .map(|r| {
            let mut v = r.x.clone();
            v.extend_from_slice(&r.r);
            (r.t, v)
        })
        .collect();
    let mu: Vec<(f64, Vec<f64>)> = records.iter().map(|r| (r.t, r.mu.clone())).collect();

    let window = |samples: &[(f64, Vec<f64>)], t: Option<f64>| -> Result<Option<ExcitationReport>> {
        match t {
            Some(te) if te > t0 => excitation_window(samples, t0, te).map(Some),
            _ => Ok(None),
        }
    };
    let span_w = if w.is_empty() {
        None
    } else {
        let upto: Vec<(f64, Vec<f64>)> = mu.iter().filter(|(t, _)| Some(*t) <= w.last_time()).cloned().collect();
        Some(check_stack_span(w, |rec| filtered_channels(&rec.m, dims), &upto)?)
    };
    let span_h = if h.is_empty() {
        None
    } else {
        let upto: Vec<(f64, Vec<f64>)> = xr.iter().filter(|(t, _)| Some(*t) <= h.last_time()).cloned().collect();
        Some(check_stack_span(
            h,
            |rec| {
                let mut v = rec.x.clone();
                v.extend_from_slice(&rec.r);
                v
            },
            &upto,
        )?)
    };
    Ok(ExcitationSummary {
        xu_until_tc: window(&xu, events.t_c)?,
        xr_until_ts: window(&xr, events.t_s)?,
        span_w,
        span_h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::RecordingPolicy;

    fn open() -> RecordingPolicy {
        RecordingPolicy { eps_store: 1e-9, min_dwell: 0.0, floor: 1e-6 }
    }

    fn frozen_stack(t: f64) -> DataStack<Matrix> {
        let mut s = DataStack::new(1, 4, open());
        s.maybe_record(t, &[1.0], Matrix::identity(1));
        assert!(s.rank_condition_met(t, Clone::clone));
        s
    }

    #[test]
    fn events_absent_until_stacks_satisfied() {
        let w: DataStack<Matrix> = DataStack::new(1, 4, open());
        let h: DataStack<Matrix> = DataStack::new(1, 4, open());
        assert_eq!(detect_events(&w, &h, EventTimes::default()), EventTimes::default());
    }

    #[test]
    fn t_m_is_the_later_event() {
        let w = frozen_stack(0.2);
        let empty: DataStack<Matrix> = DataStack::new(1, 4, open());
        let ev = detect_events(&w, &empty, EventTimes::default());
        assert_eq!(ev.t_c, Some(0.2));
        assert_eq!(ev.t_m, None);
        let h = frozen_stack(0.5);
        let ev = detect_events(&w, &h, ev);
        assert_eq!(ev.t_m, Some(0.5));

        // H first
        let w = frozen_stack(0.9);
        let h = frozen_stack(0.3);
        let ev = detect_events(&w, &h, EventTimes::default());
        assert_eq!(ev.t_m, ev.t_c);
    }
}
