//! Controller parametrization `u = zφ`, the three-phase switched update law
//! and the classical MRAC baseline.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, MracError, Result};
use crate::matrixlab::{self, left_pseudo_inverse, norm2, Matrix};
use crate::memory::{DataStack, HRecord};
use crate::system::{build_regressor_y, build_regressor_z, pack_phi, unpack_phi, Dims};

/// Default for the concurrent-learning gain.
pub const DEFAULT_K_PHI: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// `t₀ ≤ t ≤ t_c`: projected gradient using the online `B̂`.
    Phase1Proj,
    /// `t_c < t < t_m`: plain gradient with the identified `B`.
    Phase2Grad,
    /// `t ≥ t_m`: gradient plus the concurrent-learning term.
    Phase3Cl,
    /// Classical MRAC baseline with known `B`.
    Classical,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Phase1Proj => "phase1_proj",
            Phase::Phase2Grad => "phase2_grad",
            Phase::Phase3Cl => "phase3_cl",
            Phase::Classical => "classical",
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Phase::Phase1Proj => 1,
            Phase::Phase2Grad => 2,
            Phase::Phase3Cl => 3,
            Phase::Classical => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub phi: Vec<f64>,
    phase: Phase,
}

impl ControllerState {
    pub fn new(phi: Vec<f64>, phase: Phase) -> Self {
        Self { phi, phase }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Moves the switched law forward. Backward transitions are ignored.
    pub fn advance_to(&mut self, next: Phase) {
        if self.phase != Phase::Classical && next.rank() > self.phase.rank() {
            self.phase = next;
        }
    }
}

/// Smooth ball projection with a boundary band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSpec {
    pub radius: f64,
    pub boundary_band: f64,
}

impl ProjectionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.boundary_band > 0.0 && self.boundary_band < self.radius) {
            return Err(MracError::InvalidConfig(format!(
                "projection needs radius > band > 0 (radius {}, band {})",
                self.radius, self.boundary_band
            )));
        }
        Ok(())
    }

    pub fn inner_radius(&self) -> f64 {
        self.radius - self.boundary_band
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerGains {
    pub gamma_phi: Matrix,
    pub k_phi: f64,
    pub p: Matrix,
    pub gamma_x: Matrix,
    pub gamma_r: Matrix,
}

pub fn control_input(phi: &[f64], x: &[f64], r: &[f64], dims: Dims) -> Result<Vec<f64>> {
    if phi.len() != dims.phi_len() {
        return Err(dim_err("control_input phi", dims.phi_len(), phi.len()));
    }
    Ok(build_regressor_z(x, r, dims)?.mul_vec(phi))
}

fn projection_unchecked(nominal: &[f64], phi: &[f64], spec: &ProjectionSpec) -> Vec<f64> {
    let norm_sq = matrixlab::dot(phi, phi);
    let inner = spec.inner_radius();
    if norm_sq <= inner * inner {
        return nominal.to_vec();
    }
    let outward = matrixlab::dot(phi, nominal);
    if outward <= 0.0 {
        return nominal.to_vec();
    }
    let scale = (norm_sq - inner * inner) / (spec.radius * spec.radius - inner * inner);
    let mut out = nominal.to_vec();
    matrixlab::axpy(&mut out, -scale * outward / norm_sq, phi);
    out
}

/// Projects an update `nominal` so that `φ` stays inside the ball of radius
/// `spec.radius`. Inside the band the outward radial component is removed
/// in proportion to `(‖φ‖² - ρᵢ²)/(ρ² - ρᵢ²)`, reaching full removal on the
/// boundary.
pub fn project(nominal: &[f64], phi: &[f64], spec: &ProjectionSpec) -> Result<Vec<f64>> {
    if nominal.len() != phi.len() {
        return Err(dim_err("project", phi.len(), nominal.len()));
    }
    let norm = norm2(phi);
    if norm > spec.radius {
        return Err(MracError::OutsideRegion { norm, radius: spec.radius });
    }
    Ok(projection_unchecked(nominal, phi, spec))
}

/// Evaluates `ε_{K,j}` for stored data against the current gains.
///
/// Holds the identified `B̂`, its left pseudo-inverse and the locked `θ̂_FT`
/// so the pseudo-inverse is formed once per lock.
#[derive(Debug, Clone)]
pub struct EpsilonContext {
    dims: Dims,
    b_hat: Matrix,
    b_hat_pinv: Matrix,
    a_m: Matrix,
    b_m: Matrix,
    theta_ft: Vec<f64>,
}

impl EpsilonContext {
    pub fn new(theta_ft: &[f64], a_m: &Matrix, b_m: &Matrix, dims: Dims) -> Result<Self> {
        if theta_ft.len() != dims.theta_len() {
            return Err(dim_err("EpsilonContext theta", dims.theta_len(), theta_ft.len()));
        }
        let b_hat = crate::system::b_from_theta(theta_ft, dims);
        let b_hat_pinv = left_pseudo_inverse(&b_hat)?;
        Ok(Self {
            dims,
            b_hat,
            b_hat_pinv,
            a_m: a_m.clone(),
            b_m: b_m.clone(),
            theta_ft: theta_ft.to_vec(),
        })
    }

    pub fn b_hat(&self) -> &Matrix {
        &self.b_hat
    }

    /// `ε_K = ε_{K_x} + ε_{K_r}` for the stored pair `(x_j, r_j)`.
    ///
    /// The input at the stored point is re-evaluated with the current gains,
    /// `u_j = z(x_j, r_j) φ`, so that `ε_{K,j} = z_j φ̃` whenever `θ̂_FT = θ`.
    pub fn epsilon(&self, x_j: &[f64], r_j: &[f64], phi: &[f64]) -> Result<Vec<f64>> {
        let dims = self.dims;
        let u_j = control_input(phi, x_j, r_j, dims)?;
        let (_, kr) = unpack_phi(phi, dims)?;
        let bm_r = self.b_m.mul_vec(r_j);
        let mut eps_r = kr.tr_mul_vec(r_j);
        matrixlab::axpy(&mut eps_r, -1.0, &self.b_hat_pinv.mul_vec(&bm_r));

        let xdot_hat = build_regressor_y(x_j, &u_j, dims)?.mul_vec(&self.theta_ft);
        let mut resid = xdot_hat;
        matrixlab::axpy(&mut resid, -1.0, &self.a_m.mul_vec(x_j));
        matrixlab::axpy(&mut resid, -1.0, &bm_r);
        matrixlab::axpy(&mut resid, -1.0, &self.b_hat.mul_vec(&eps_r));
        let eps_x = self.b_hat_pinv.mul_vec(&resid);
        Ok(matrixlab::vadd(&eps_x, &eps_r))
    }

    /// `Σ_j z_jᵀ ε_{K,j}` over a frozen H stack.
    pub fn cl_sum(&self, h: &DataStack<HRecord>, phi: &[f64]) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.dims.phi_len()];
        for entry in h.entries() {
            let rec = &entry.payload;
            let eps = self.epsilon(&rec.x, &rec.r, phi)?;
            let z = build_regressor_z(&rec.x, &rec.r, self.dims)?;
            matrixlab::axpy(&mut acc, 1.0, &z.tr_mul_vec(&eps));
        }
        Ok(acc)
    }
}

/// One-shot `ε_{K,j}` evaluation; see [`EpsilonContext::epsilon`].
#[allow(clippy::too_many_arguments)]
pub fn epsilon_k(
    x_j: &[f64],
    r_j: &[f64],
    phi: &[f64],
    b_m: &Matrix,
    a_m: &Matrix,
    theta_ft: &[f64],
    dims: Dims,
) -> Result<Vec<f64>> {
    EpsilonContext::new(theta_ft, a_m, b_m, dims)?.epsilon(x_j, r_j, phi)
}

/// `zᵀ B̂ᵀ P e`
fn tracking_gradient(e: &[f64], z: &Matrix, b_hat: &Matrix, p: &Matrix) -> Vec<f64> {
    let pe = p.mul_vec(e);
    z.tr_mul_vec(&b_hat.tr_mul_vec(&pe))
}

/// Right-hand side of the switched controller update law.
///
/// `cl` carries the frozen H stack and the locked identification context;
/// it is required in phase 3 and ignored otherwise.
#[allow(clippy::too_many_arguments)]
pub fn phi_derivative(
    phase: Phase,
    phi: &[f64],
    e: &[f64],
    z: &Matrix,
    b_hat: &Matrix,
    gains: &ControllerGains,
    spec: &ProjectionSpec,
    cl: Option<(&DataStack<HRecord>, &EpsilonContext)>,
) -> Result<Vec<f64>> {
    let q = phi.len();
    if z.cols() != q || gains.gamma_phi.shape() != (q, q) {
        return Err(dim_err("phi_derivative", q, z.cols()));
    }
    if b_hat.cols() != z.rows() || b_hat.rows() != e.len() {
        return Err(dim_err("phi_derivative B_hat", format!("{}x{}", e.len(), z.rows()), format!("{}x{}", b_hat.rows(), b_hat.cols())));
    }
    let mut inner = tracking_gradient(e, z, b_hat, &gains.p);
    match phase {
        Phase::Phase1Proj => {
            let nominal = matrixlab::vscale(&gains.gamma_phi.mul_vec(&inner), -1.0);
            Ok(projection_unchecked(&nominal, phi, spec))
        }
        Phase::Phase2Grad => Ok(matrixlab::vscale(&gains.gamma_phi.mul_vec(&inner), -1.0)),
        Phase::Phase3Cl => {
            let (h, ctx) = cl.ok_or_else(|| MracError::InvalidConfig("phase 3 needs a frozen H stack and locked estimate".into()))?;
            let sum = ctx.cl_sum(h, phi)?;
            matrixlab::axpy(&mut inner, gains.k_phi, &sum);
            Ok(matrixlab::vscale(&gains.gamma_phi.mul_vec(&inner), -1.0))
        }
        Phase::Classical => Err(MracError::InvalidConfig("classical baseline uses classical_gain_derivatives".into())),
    }
}

/// Classical MRAC updates `K̇_x = -Γ_x x eᵀPB`, `K̇_r = -Γ_r r eᵀPB`.
pub fn classical_gain_derivatives(
    x: &[f64],
    r: &[f64],
    e: &[f64],
    p: &Matrix,
    b: &Matrix,
    gamma_x: &Matrix,
    gamma_r: &Matrix,
) -> Result<(Matrix, Matrix)> {
    let n = x.len();
    let d = r.len();
    if e.len() != n || p.shape() != (n, n) || b.shape() != (n, d) || gamma_x.shape() != (n, n) || gamma_r.shape() != (d, d) {
        return Err(dim_err("classical_gain_derivatives", format!("n={n}, d={d}"), "inconsistent operands"));
    }
    // eᵀPB as a 1 x d row
    let epb = Matrix::from_row_slice(1, d, &b.tr_mul_vec(&p.mul_vec(e)));
    let dkx = (&(gamma_x * &Matrix::column(x)) * &epb).scale(-1.0);
    let dkr = (&(gamma_r * &Matrix::column(r)) * &epb).scale(-1.0);
    Ok((dkx, dkr))
}

/// Classical update packed into the `φ` layout.
pub fn classical_phi_derivative(x: &[f64], r: &[f64], e: &[f64], p: &Matrix, b: &Matrix, gains: &ControllerGains) -> Result<Vec<f64>> {
    let (dkx, dkr) = classical_gain_derivatives(x, r, e, p, b, &gains.gamma_x, &gains.gamma_r)?;
    Ok(pack_phi(&dkx, &dkr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::RecordingPolicy;
    use crate::system::{build_regressor_z, PlantModel};

    const D21: Dims = Dims { n: 2, d: 1 };
    const PHI_STAR: [f64; 3] = [-6.5, -6.0, 0.5];

    fn a_m() -> Matrix {
        Matrix::from_row_slice(2, 2, &[0.0, 1.0, -8.0, -10.0])
    }

    fn b_m() -> Matrix {
        Matrix::from_row_slice(2, 1, &[0.0, 1.0])
    }

    fn theta() -> Vec<f64> {
        PlantModel::new(Matrix::from_row_slice(2, 2, &[0.0, 1.0, 5.0, 2.0]), Matrix::from_row_slice(2, 1, &[0.0, 2.0]))
            .unwrap()
            .theta()
    }

    fn p_bundled() -> Matrix {
        Matrix::from_row_slice(2, 2, &[5.375, 0.3125, 0.3125, 0.28125])
    }

    fn gains(gamma_phi: Matrix, k_phi: f64) -> ControllerGains {
        ControllerGains {
            gamma_phi,
            k_phi,
            p: p_bundled(),
            gamma_x: Matrix::identity(2),
            gamma_r: Matrix::identity(1),
        }
    }

    fn spec() -> ProjectionSpec {
        ProjectionSpec { radius: 20.0, boundary_band: 2.0 }
    }

    #[test]
    fn control_input_examples() {
        assert_eq!(control_input(&[0.0; 3], &[1.0, 2.0], &[3.0], D21).unwrap(), vec![0.0]);
        let u = control_input(&PHI_STAR, &[1.0, 0.0], &[2.0], D21).unwrap();
        assert!((u[0] + 5.5).abs() < 1e-15);
        assert!(control_input(&[0.0; 2], &[1.0, 2.0], &[3.0], D21).is_err());
    }

    #[test]
    fn epsilon_zero_at_truth() {
        let ctx = EpsilonContext::new(&theta(), &a_m(), &b_m(), D21).unwrap();
        let eps = ctx.epsilon(&[0.7, -1.3], &[4.0], &PHI_STAR).unwrap();
        assert!(eps[0].abs() < 1e-13);
    }

    #[test]
    fn epsilon_kr_component() {
        // only the feedforward gain differs from truth and x_j = 0
        let phi = [-6.5, -6.0, 0.7];
        let eps = epsilon_k(&[0.0, 0.0], &[2.0], &phi, &b_m(), &a_m(), &theta(), D21).unwrap();
        assert!((eps[0] - 0.4).abs() < 1e-13);
    }

    #[test]
    fn epsilon_kx_component() {
        let phi = [-6.0, -5.5, 0.5];
        let eps = epsilon_k(&[1.0, 1.0], &[0.0], &phi, &b_m(), &a_m(), &theta(), D21).unwrap();
        assert!((eps[0] - 1.0).abs() < 1e-13);
    }

    #[test]
    fn epsilon_rejects_singular_b_hat() {
        let mut th = theta();
        th[4] = 0.0;
        th[5] = 0.0;
        assert!(matches!(
            EpsilonContext::new(&th, &a_m(), &b_m(), D21),
            Err(MracError::RankDeficient { .. })
        ));
    }

    fn one_entry_stack(x: Vec<f64>, r: Vec<f64>) -> DataStack<HRecord> {
        let mut h = DataStack::new(1, 4, RecordingPolicy::with_dt(1e-3));
        h.maybe_record(0.0, &[1.0], HRecord { x, r, u: vec![0.0] });
        h
    }

    #[test]
    fn phase2_zero_error_is_stationary() {
        let z = build_regressor_z(&[1.0, 2.0], &[3.0], D21).unwrap();
        let b = b_m().scale(2.0);
        let d = phi_derivative(Phase::Phase2Grad, &[1.0, 1.0, 1.0], &[0.0, 0.0], &z, &b, &gains(Matrix::identity(3), 40.0), &spec(), None).unwrap();
        assert_eq!(d, vec![0.0; 3]);
    }

    #[test]
    fn phase3_equilibrium_at_truth() {
        let ctx = EpsilonContext::new(&theta(), &a_m(), &b_m(), D21).unwrap();
        let h = one_entry_stack(vec![1.0, -0.5], vec![3.0]);
        let z = build_regressor_z(&[1.0, 2.0], &[3.0], D21).unwrap();
        let d = phi_derivative(Phase::Phase3Cl, &PHI_STAR, &[0.0, 0.0], &z, ctx.b_hat(), &gains(Matrix::identity(3), 40.0), &spec(), Some((&h, &ctx))).unwrap();
        assert!(norm2(&d) < 1e-12);
    }

    #[test]
    fn phase3_hand_example() {
        // z₁ = [1, 0, 0], φ̃ = [0.5, 0, 0], Γ = I, k_φ = 1 → -z₁ᵀz₁φ̃
        let ctx = EpsilonContext::new(&theta(), &a_m(), &b_m(), D21).unwrap();
        let h = one_entry_stack(vec![1.0, 0.0], vec![0.0]);
        let phi = [PHI_STAR[0] + 0.5, PHI_STAR[1], PHI_STAR[2]];
        let z = build_regressor_z(&[0.0, 0.0], &[0.0], D21).unwrap();
        let d = phi_derivative(Phase::Phase3Cl, &phi, &[0.0, 0.0], &z, ctx.b_hat(), &gains(Matrix::identity(3), 1.0), &spec(), Some((&h, &ctx))).unwrap();
        assert!((d[0] + 0.5).abs() < 1e-13);
        assert!(d[1].abs() < 1e-13 && d[2].abs() < 1e-13);
    }

    #[test]
    fn phase3_requires_stack() {
        let z = build_regressor_z(&[0.0, 0.0], &[0.0], D21).unwrap();
        assert!(phi_derivative(Phase::Phase3Cl, &PHI_STAR, &[0.0, 0.0], &z, &b_m(), &gains(Matrix::identity(3), 1.0), &spec(), None).is_err());
    }

    #[test]
    fn projection_examples() {
        let s = spec();
        let nominal = vec![0.3, -2.0, 1.0];
        assert_eq!(project(&nominal, &[1.0, 1.0, 1.0], &s).unwrap(), nominal);

        let on_sphere = vec![12.0, 16.0, 0.0];
        let out = project(&on_sphere, &on_sphere, &s).unwrap();
        assert!(matrixlab::dot(&on_sphere, &out).abs() < 1e-12);

        let inward = vec![-1.0, -1.0, 0.5];
        assert_eq!(project(&inward, &on_sphere, &s).unwrap(), inward);

        assert!(matches!(project(&nominal, &[30.0, 0.0, 0.0], &s), Err(MracError::OutsideRegion { .. })));
    }

    #[test]
    fn projection_keeps_admissible_parameters_closer() {
        use rand::{Rng, SeedableRng};
        let s = spec();
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for _ in 0..500 {
            let dir: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let rad = rng.gen_range(s.inner_radius()..s.radius);
            let phi = matrixlab::vscale(&dir, rad / norm2(&dir));
            let nominal: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let star_dir: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let star = matrixlab::vscale(&star_dir, rng.gen_range(0.0..s.inner_radius()) / norm2(&star_dir));
            let out = project(&nominal, &phi, &s).unwrap();
            let lhs = matrixlab::dot(&matrixlab::vsub(&phi, &star), &matrixlab::vsub(&out, &nominal));
            assert!(lhs <= 1e-12);
        }
    }

    #[test]
    fn classical_examples() {
        let p = p_bundled();
        let b = b_m().scale(2.0);
        let (dkx, dkr) = classical_gain_derivatives(&[1.0, 0.0], &[1.0], &[0.0, 0.0], &p, &b, &Matrix::identity(2), &Matrix::identity(1)).unwrap();
        assert_eq!(dkx.max_abs(), 0.0);
        assert_eq!(dkr.max_abs(), 0.0);

        let (dkx, _) = classical_gain_derivatives(&[1.0, 0.0], &[0.0], &[0.0, 1.0], &p, &b, &Matrix::identity(2), &Matrix::identity(1)).unwrap();
        assert!((dkx[(0, 0)] + 0.5625).abs() < 1e-15);
        assert_eq!(dkx[(1, 0)], 0.0);

        let (dkx2, _) = classical_gain_derivatives(&[1.0, 0.0], &[0.0], &[0.0, 1.0], &p, &b, &Matrix::identity(2).scale(2.0), &Matrix::identity(1)).unwrap();
        assert!((&dkx2 - &dkx.scale(2.0)).max_abs() < 1e-15);
    }

    #[test]
    fn phases_only_move_forward() {
        let mut c = ControllerState::new(vec![0.0; 3], Phase::Phase1Proj);
        c.advance_to(Phase::Phase3Cl);
        c.advance_to(Phase::Phase2Grad);
        assert_eq!(c.phase(), Phase::Phase3Cl);
        let mut b = ControllerState::new(vec![0.0; 3], Phase::Classical);
        b.advance_to(Phase::Phase3Cl);
        assert_eq!(b.phase(), Phase::Classical);
    }
}
