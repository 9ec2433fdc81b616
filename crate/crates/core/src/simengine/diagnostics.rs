use serde::Serialize;

use crate::controller::ControllerGains;
use crate::error::{MracError, Result};
use crate::matrixlab::{self, dot, inverse, lambda_max, lambda_min, norm2, spectral_norm, Matrix};
use crate::system::{b_from_theta, build_regressor_z, unpack_phi, MatchedGains, PlantModel};

use super::RunLog;

/// True plant and matched gains; only simulations and tests know these.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub plant: PlantModel,
    pub matched: MatchedGains,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceDiagnostics {
    pub t: Vec<f64>,
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    pub v_xi: Vec<f64>,
    /// Exponential rate guaranteed once both stacks are full rank.
    pub beta_rate: f64,
    /// `λ_min(Ω_z)` of the H stack, `Ω_z = Σ z_jᵀ z_j`.
    pub lambda_min_omega: f64,
}

/// `½eᵀPe + ½φ̃ᵀΓ_φ⁻¹φ̃`
pub fn lyapunov_value(e: &[f64], phi_tilde: &[f64], p: &Matrix, gamma_phi_inv: &Matrix) -> f64 {
    0.5 * dot(e, &p.mul_vec(e)) + 0.5 * dot(phi_tilde, &gamma_phi_inv.mul_vec(phi_tilde))
}

/// Evaluates the Lyapunov bounds along a finished run.
pub fn convergence_diagnostics(log: &RunLog, truth: Option<&Truth>, gains: &ControllerGains, q: &Matrix) -> Result<ConvergenceDiagnostics> {
    let truth = truth.ok_or(MracError::TruthUnavailable)?;
    let dims = log.dims;
    let phi_star = truth.matched.phi_star();
    let p_norm = spectral_norm(&gains.p);
    let lam_q = lambda_min(q)?;
    let gamma_inv = inverse(&gains.gamma_phi)?;

    let mut omega = Matrix::zeros(dims.phi_len(), dims.phi_len());
    for entry in log.h_stack.entries() {
        let z = build_regressor_z(&entry.payload.x, &entry.payload.r, dims)?;
        omega = &omega + &z.gram();
    }
    let lambda_min_omega = if log.h_stack.is_empty() { 0.0 } else { lambda_min(&omega)?.max(0.0) };
    let beta_rate = lam_q.min(2.0 * gains.k_phi * lambda_min_omega) / lambda_max(&gains.p)?.max(lambda_max(&gamma_inv)?);

    let n = log.records.len();
    let mut out = ConvergenceDiagnostics {
        t: Vec::with_capacity(n),
        beta1: Vec::with_capacity(n),
        beta2: Vec::with_capacity(n),
        v_xi: Vec::with_capacity(n),
        beta_rate,
        lambda_min_omega,
    };
    for rec in &log.records {
        let b_tilde = &b_from_theta(&rec.theta_ft, dims) - truth.plant.b();
        let b_norm = spectral_norm(&b_tilde);
        let phi_tilde = matrixlab::vsub(&rec.phi, &phi_star);
        let (kx, kr) = unpack_phi(&phi_tilde, dims)?;
        let kx_norm = spectral_norm(&kx);
        let kr_norm = spectral_norm(&kr);
        out.t.push(rec.t);
        out.beta1.push(lam_q - 2.0 * p_norm * b_norm * kx_norm);
        out.beta2.push(p_norm * b_norm * (kx_norm * norm2(&rec.x_m) + kr_norm * norm2(&rec.r)));
        out.v_xi.push(lyapunov_value(&rec.e, &phi_tilde, &gains.p, &gamma_inv));
    }
    Ok(out)
}
