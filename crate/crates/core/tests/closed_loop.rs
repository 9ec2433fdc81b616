use mrac_core::controller::{Phase, ProjectionSpec};
use mrac_core::identifier::finalize_ft;
use mrac_core::matrixlab::{norm2, Matrix};
use mrac_core::simengine::{convergence_diagnostics, run_closed_loop, RunLog, SimConfig, SimMode};
use mrac_core::system::{PlantModel, ReferenceModel, ReferenceSignal};
use mrac_core::MracError;

fn m(rows: &[&[f64]]) -> Matrix {
    Matrix::from_rows(rows).unwrap()
}

fn second_order() -> (PlantModel, ReferenceModel) {
    let plant = PlantModel::new(m(&[&[0.0, 1.0], &[5.0, 2.0]]), m(&[&[0.0], &[2.0]])).unwrap();
    let reference = ReferenceModel::new(
        m(&[&[0.0, 1.0], &[-8.0, -10.0]]),
        m(&[&[0.0], &[1.0]]),
        ReferenceSignal::ExpDecay { amplitude: vec![20.0], rate: 0.5 },
    )
    .unwrap();
    (plant, reference)
}

fn config() -> SimConfig {
    let (plant, reference) = second_order();
    let mut cfg = SimConfig::with_defaults(plant, reference, vec![0.0, 0.0], vec![-4.0, -4.0, 1.0]);
    cfg.q = Matrix::identity(2).scale(5.0);
    cfg.gamma_phi = Matrix::diag(&[0.5, 0.5, 0.05]);
    cfg.projection = ProjectionSpec { radius: 20.0, boundary_band: 2.0 };
    cfg.stacks.policy.eps_store = 0.1;
    cfg.stacks.policy.min_dwell = 0.05;
    cfg
}

fn run() -> (SimConfig, RunLog) {
    let cfg = config();
    let log = run_closed_loop(&cfg).unwrap();
    (cfg, log)
}

#[test]
fn events_and_lock() {
    let (cfg, log) = run();
    let ev = log.events;
    let (t_c, t_s, t_m) = (ev.t_c.unwrap(), ev.t_s.unwrap(), ev.t_m.unwrap());
    assert_eq!(t_m, t_c.max(t_s));
    assert!(t_m < cfg.t_end);
    for t in [t_c, t_s] {
        let k = (t - cfg.t0) / cfg.dt;
        assert!((k - k.round()).abs() < 1e-6, "event off grid: {t}");
    }
    assert_eq!(log.theta_locked.as_deref(), Some(finalize_ft(&log.w_stack).unwrap().as_slice()));
    assert!(log.w_stack.len() >= 3 && log.h_stack.len() >= 3);
    assert!(log.w_stack.is_frozen() && log.h_stack.is_frozen());
}

#[test]
fn phases_switch_only_at_events() {
    let (_, log) = run();
    let ev = log.events;
    for rec in &log.records {
        let expect = if rec.t < ev.t_c.unwrap() {
            Phase::Phase1Proj
        } else if rec.t < ev.t_m.unwrap() {
            Phase::Phase2Grad
        } else {
            Phase::Phase3Cl
        };
        assert_eq!(rec.phase, expect, "t = {}", rec.t);
    }
}

#[test]
fn uniform_grid() {
    let (cfg, log) = run();
    assert_eq!(log.records.len(), cfg.steps() + 1);
    for (k, rec) in log.records.iter().enumerate() {
        assert!((rec.t - k as f64 * cfg.dt).abs() < 1e-12);
    }
}

#[test]
fn identities_hold_along_run() {
    let (_, log) = run();
    let theta_norm = norm2(&log.truth.as_ref().unwrap().plant.theta());
    for rec in &log.records {
        assert!(rec.g_residual <= 1e-8 * (1.0 + theta_norm), "g at {}", rec.t);
        assert!(rec.gamma_residual <= 1e-8, "gamma at {}", rec.t);
        if let Some(eps) = rec.eps_residual {
            assert!(eps <= 1e-9, "eps at {}: {eps}", rec.t);
        }
    }
}

#[test]
fn finite_time_identification() {
    let (_, log) = run();
    let t_c = log.events.t_c.unwrap();
    let theta_norm = norm2(&log.truth.as_ref().unwrap().plant.theta());
    let mut prev = f64::INFINITY;
    for rec in &log.records {
        if rec.t <= t_c {
            assert!(rec.norm_theta_tilde <= prev * (1.0 + 1e-12), "growth at {}", rec.t);
            prev = rec.norm_theta_tilde;
        } else {
            assert!(rec.norm_theta_tilde <= 1e-6 * theta_norm);
        }
    }
}

#[test]
fn lyapunov_decrease_after_identification() {
    let (cfg, log) = run();
    let diag = convergence_diagnostics(&log, log.truth.as_ref(), &cfg.controller_gains().unwrap(), &cfg.q).unwrap();
    assert!(diag.beta_rate > 0.0);
    let (t_c, t_m) = (log.events.t_c.unwrap(), log.events.t_m.unwrap());
    let k_m = log.records.iter().position(|r| r.t >= t_m).unwrap();
    let v_m = diag.v_xi[k_m];
    for k in 1..log.records.len() {
        let t = log.records[k].t;
        if t > t_c && t <= t_m && log.records[k - 1].t > t_c {
            assert!(diag.v_xi[k] <= diag.v_xi[k - 1] * (1.0 + 1e-12), "V grows at {t}");
        }
        if t >= t_m {
            let bound = v_m * (-diag.beta_rate * (t - t_m)).exp() * (1.0 + 1e-6);
            assert!(diag.v_xi[k] <= bound, "bound violated at {t}");
        }
    }
}

#[test]
fn beta1_at_identification() {
    let (cfg, log) = run();
    let gains = cfg.controller_gains().unwrap();
    let diag = convergence_diagnostics(&log, log.truth.as_ref(), &gains, &cfg.q).unwrap();
    let t_c = log.events.t_c.unwrap();
    let k_c = log.records.iter().position(|r| r.t >= t_c).unwrap();
    assert!((diag.beta1[k_c] - 5.0).abs() < 1e-9);
    assert!(diag.beta2[k_c].abs() < 1e-9);
    for k in k_c..log.records.len() {
        assert!((diag.beta1[k] - 5.0).abs() < 1e-9);
    }
}

// ‖B̃‖ alone need not shrink before t_c, so the per-step β₁ can dip again.
// The bound with ‖B̃‖ ≤ ‖θ̃‖ and ‖K̃_x‖ ≤ ρ + ‖K_x*‖ is monotone and
// therefore stays positive once positive.
#[test]
fn beta1_lower_bound_stays_positive() {
    let (cfg, log) = run();
    let p_norm = mrac_core::matrixlab::spectral_norm(&cfg.controller_gains().unwrap().p);
    let kx_star = log.truth.as_ref().unwrap().matched.kx_star.clone();
    let kx_bound = cfg.projection.radius + mrac_core::matrixlab::spectral_norm(&kx_star);
    let t_c = log.events.t_c.unwrap();
    let mut positive = false;
    let mut prev = f64::NEG_INFINITY;
    for rec in log.records.iter().filter(|r| r.t <= t_c) {
        let bound = 5.0 - 2.0 * p_norm * rec.norm_theta_hat_err * kx_bound;
        assert!(bound >= prev - 1e-12);
        if positive {
            assert!(bound > 0.0);
        }
        positive |= bound > 0.0;
        prev = bound;
    }
}

#[test]
fn tracking_and_parameter_convergence() {
    let (_, log) = run();
    let peak = log.peak_tracking_error();
    for rec in log.records.iter().filter(|r| r.t >= 5.0) {
        assert!(norm2(&rec.e) <= 0.02 * peak, "e at {}", rec.t);
    }
    assert!(log.last().norm_phi_tilde <= 1e-3 * log.initial().norm_phi_tilde);
}

#[test]
fn classical_baseline_stalls_without_excitation() {
    let mut cfg = config();
    cfg.mode = SimMode::ClassicalBaseline;
    let log = run_closed_loop(&cfg).unwrap();
    assert!(log.records.iter().all(|r| r.phase == Phase::Classical));
    assert!(log.last().norm_phi_tilde >= 0.1 * log.initial().norm_phi_tilde);
    assert!(norm2(&log.last().e) < 0.05 * log.peak_tracking_error());
}

#[test]
fn perfect_model_stays_on_reference() {
    let (_, reference) = second_order();
    let plant = PlantModel::new(reference.a_m().clone(), reference.b_m().clone()).unwrap();
    let mut cfg = SimConfig::with_defaults(plant, reference, vec![0.5, -0.2], vec![0.0, 0.0, 1.0]);
    cfg.initial.xm0 = cfg.initial.x0.clone();
    cfg.gamma_phi = Matrix::diag(&[0.5, 0.5, 0.05]);
    cfg.t_end = 3.0;
    let log = run_closed_loop(&cfg).unwrap();
    for rec in &log.records {
        assert!(norm2(&rec.e) < 1e-9, "e at {}", rec.t);
    }
}

#[test]
fn runs_are_bitwise_deterministic() {
    let mut cfg = config();
    cfg.t_end = 2.0;
    let a = run_closed_loop(&cfg).unwrap();
    let b = run_closed_loop(&cfg).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.events, b.events);
}

#[test]
fn divergence_is_reported() {
    let mut cfg = config();
    cfg.mode = SimMode::ClassicalBaseline;
    cfg.dt = 0.5;
    cfg.t_end = 200.0;
    assert!(matches!(run_closed_loop(&cfg), Err(MracError::NonFiniteState { .. })));
}

#[test]
fn rejects_invalid_configs() {
    let mut cfg = config();
    cfg.dt = 0.0;
    assert!(matches!(run_closed_loop(&cfg), Err(MracError::InvalidConfig(_))));
    let mut cfg = config();
    cfg.t_end = cfg.t0;
    assert!(run_closed_loop(&cfg).is_err());
    let mut cfg = config();
    cfg.q = Matrix::diag(&[1.0, -1.0]);
    assert!(run_closed_loop(&cfg).is_err());
    let mut cfg = config();
    cfg.initial.phi0 = vec![1.0, 2.0];
    assert!(matches!(run_closed_loop(&cfg), Err(MracError::DimensionMismatch { .. })));
    let mut cfg = config();
    cfg.projection.radius = 5.0;
    cfg.projection.boundary_band = 1.0;
    assert!(run_closed_loop(&cfg).is_err());
}

#[test]
fn rank_never_met_is_not_an_error() {
    let mut cfg = config();
    cfg.stacks.policy.eps_store = 1e6;
    cfg.t_end = 1.0;
    let log = run_closed_loop(&cfg).unwrap();
    assert_eq!(log.events.t_c, None);
    assert_eq!(log.events.t_m, None);
    assert!(log.records.iter().all(|r| r.phase == Phase::Phase1Proj && r.eps_residual.is_none()));
}

#[test]
fn diagnostics_need_truth() {
    let (cfg, log) = run();
    let r = convergence_diagnostics(&log, None, &cfg.controller_gains().unwrap(), &cfg.q);
    assert!(matches!(r, Err(MracError::TruthUnavailable)));
}

#[test]
fn excitation_reports_along_run() {
    let (_, log) = run();
    let ex = &log.excitation;
    assert!(ex.xu_until_tc.unwrap().exciting);
    assert!(ex.xr_until_ts.unwrap().exciting);
    for chk in [ex.span_w.unwrap(), ex.span_h.unwrap()] {
        assert!(chk.stack_full_rank);
        assert!(chk.implication_holds);
    }
}
