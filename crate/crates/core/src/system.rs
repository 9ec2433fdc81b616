//! Plant and reference-model types, linear parametrizations and the
//! matching-condition solver.
//!
//! Parameter layouts:
//! * plant: `θ = [vec(Aᵀ); vec(Bᵀ)]`, so `θ[i*n + k] = A[i,k]` and
//!   `θ[n² + i*d + k] = B[i,k]`.
//! * controller: `φ = [vec(K_x); vec(K_r)]`, so `φ[i*n + k] = K_x[k,i]` and
//!   `φ[d*n + i*d + k] = K_r[k,i]`.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, MracError, Result};
use crate::matrixlab::{self, left_pseudo_inverse, min_singular_value, rank_tolerance, Matrix};

/// Residual bound used when validating the matching conditions.
pub const MATCHING_TOL: f64 = 1e-10;

/// State dimension `n` and input dimension `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub d: usize,
}

impl Dims {
    pub fn theta_len(&self) -> usize {
        self.n * (self.n + self.d)
    }

    pub fn phi_len(&self) -> usize {
        self.d * (self.n + self.d)
    }
}

/// Closed-form reference signals `r(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSignal {
    Constant { value: Vec<f64> },
    /// `amplitude * exp(-rate * t)`
    ExpDecay { amplitude: Vec<f64>, rate: f64 },
    /// `offset + Σ amplitude_k * sin(frequency_k * t + phase_k)`, frequencies in rad/s.
    Sinusoids {
        #[serde(default)]
        offset: Option<Vec<f64>>,
        components: Vec<Tone>,
    },
    /// `before` for `t < at`, `after` from then on.
    Step { before: Vec<f64>, after: Vec<f64>, at: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tone {
    pub amplitude: Vec<f64>,
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

impl ReferenceSignal {
    pub fn dim(&self) -> usize {
        match self {
            Self::Constant { value } => value.len(),
            Self::ExpDecay { amplitude, .. } => amplitude.len(),
            Self::Sinusoids { offset, components } => offset
                .as_ref()
                .map(Vec::len)
                .or_else(|| components.first().map(|c| c.amplitude.len()))
                .unwrap_or(0),
            Self::Step { before, .. } => before.len(),
        }
    }

    /// Checks internal consistency and finiteness.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let bad = |what: &str| Err(MracError::InvalidConfig(format!("reference signal: {what}")));
        if d == 0 {
            return bad("empty signal");
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            Self::Constant { value } => {
                if !finite(value) {
                    return bad("non-finite value");
                }
            }
            Self::ExpDecay { amplitude, rate } => {
                if !finite(amplitude) || !rate.is_finite() {
                    return bad("non-finite parameter");
                }
            }
            Self::Sinusoids { offset, components } => {
                if let Some(o) = offset {
                    if !finite(o) {
                        return bad("non-finite offset");
                    }
                }
                for c in components {
                    if c.amplitude.len() != d {
                        return bad("tone amplitude dimension differs");
                    }
                    if !finite(&c.amplitude) || !c.frequency.is_finite() || !c.phase.is_finite() {
                        return bad("non-finite tone parameter");
                    }
                }
            }
            Self::Step { before, after, at } => {
                if after.len() != d {
                    return bad("step levels differ in dimension");
                }
                if !finite(before) || !finite(after) || !at.is_finite() {
                    return bad("non-finite step parameter");
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        match self {
            Self::Constant { value } => value.clone(),
            Self::ExpDecay { amplitude, rate } => {
                let s = (-rate * t).exp();
                amplitude.iter().map(|a| a * s).collect()
            }
            Self::Sinusoids { offset, components } => {
                let mut out = offset.clone().unwrap_or_else(|| vec![0.0; self.dim()]);
                for c in components {
                    let s = (c.frequency * t + c.phase).sin();
                    matrixlab::axpy(&mut out, s, &c.amplitude);
                }
                out
            }
            Self::Step { before, after, at } => {
                if t < *at {
                    before.clone()
                } else {
                    after.clone()
                }
            }
        }
    }
}

/// The unknown LTI plant `ẋ = Ax + Bu`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    a: Matrix,
    b: Matrix,
}

impl PlantModel {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        let n = a.rows();
        if !a.is_square() || n == 0 {
            return Err(dim_err("PlantModel A", "non-empty square matrix", format!("{}x{}", a.rows(), a.cols())));
        }
        if b.rows() != n || b.cols() == 0 || b.cols() > n {
            return Err(dim_err("PlantModel B", format!("{n}xd with 1 <= d <= {n}"), format!("{}x{}", b.rows(), b.cols())));
        }
        let sigma = min_singular_value(&b);
        let tol = rank_tolerance(&b);
        if sigma < tol {
            return Err(MracError::RankDeficient { sigma_min: sigma, tolerance: tol });
        }
        Ok(Self { a, b })
    }

    /// Rebuilds `(A, B)` from a parameter vector `θ = [vec(Aᵀ); vec(Bᵀ)]`.
    pub fn from_theta(theta: &[f64], dims: Dims) -> Result<Self> {
        let (a, b) = unpack_theta(theta, dims)?;
        Self::new(a, b)
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn dims(&self) -> Dims {
        Dims {
            n: self.a.rows(),
            d: self.b.cols(),
        }
    }

    pub fn theta(&self) -> Vec<f64> {
        let mut v = self.a.transpose().vec();
        v.extend(self.b.transpose().vec());
        v
    }

    pub fn derivative(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        plant_derivative(self, x, u)
    }
}

/// Splits `θ` into `(A, B)` without any rank validation.
pub fn unpack_theta(theta: &[f64], dims: Dims) -> Result<(Matrix, Matrix)> {
    let Dims { n, d } = dims;
    if theta.len() != dims.theta_len() {
        return Err(dim_err("unpack_theta", dims.theta_len(), theta.len()));
    }
    let a = Matrix::from_row_slice(n, n, &theta[..n * n]);
    let b = Matrix::from_row_slice(n, d, &theta[n * n..]);
    Ok((a, b))
}

/// Extracts `B̂` from an estimate of `θ`.
pub fn b_from_theta(theta: &[f64], dims: Dims) -> Matrix {
    let n2 = dims.n * dims.n;
    Matrix::from_row_slice(dims.n, dims.d, &theta[n2..n2 + dims.n * dims.d])
}

/// Extracts `Â` from an estimate of `θ`.
pub fn a_from_theta(theta: &[f64], dims: Dims) -> Matrix {
    Matrix::from_row_slice(dims.n, dims.n, &theta[..dims.n * dims.n])
}

/// Packs `(K_x, K_r)` into `φ = [vec(K_x); vec(K_r)]`.
pub fn pack_phi(kx: &Matrix, kr: &Matrix) -> Vec<f64> {
    let mut v = kx.vec();
    v.extend(kr.vec());
    v
}

/// Splits `φ` into `(K_x, K_r)`.
pub fn unpack_phi(phi: &[f64], dims: Dims) -> Result<(Matrix, Matrix)> {
    let Dims { n, d } = dims;
    if phi.len() != dims.phi_len() {
        return Err(dim_err("unpack_phi", dims.phi_len(), phi.len()));
    }
    let kx = Matrix::from_col_major(n, d, &phi[..n * d]);
    let kr = Matrix::from_col_major(d, d, &phi[n * d..]);
    Ok((kx, kr))
}

/// The reference model `ẋ_m = A_m x_m + B_m r(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceModel {
    a_m: Matrix,
    b_m: Matrix,
    r: ReferenceSignal,
}

impl ReferenceModel {
    pub fn new(a_m: Matrix, b_m: Matrix, r: ReferenceSignal) -> Result<Self> {
        let n = a_m.rows();
        if !a_m.is_square() || n == 0 {
            return Err(dim_err("ReferenceModel A_m", "non-empty square matrix", format!("{}x{}", a_m.rows(), a_m.cols())));
        }
        if b_m.rows() != n || b_m.cols() == 0 {
            return Err(dim_err("ReferenceModel B_m", format!("{n}xd"), format!("{}x{}", b_m.rows(), b_m.cols())));
        }
        r.validate()?;
        if r.dim() != b_m.cols() {
            return Err(dim_err("ReferenceModel r", b_m.cols(), r.dim()));
        }
        if !matrixlab::is_hurwitz(&a_m) {
            return Err(MracError::NotHurwitz("reference model A_m".into()));
        }
        Ok(Self { a_m, b_m, r })
    }

    pub fn a_m(&self) -> &Matrix {
        &self.a_m
    }

    pub fn b_m(&self) -> &Matrix {
        &self.b_m
    }

    pub fn signal(&self) -> &ReferenceSignal {
        &self.r
    }

    pub fn r(&self, t: f64) -> Vec<f64> {
        self.r.eval(t)
    }
}

/// Ideal gains satisfying `A + B K_x*ᵀ = A_m` and `B K_r*ᵀ = B_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedGains {
    pub kx_star: Matrix,
    pub kr_star: Matrix,
}

impl MatchedGains {
    pub fn phi_star(&self) -> Vec<f64> {
        pack_phi(&self.kx_star, &self.kr_star)
    }
}

/// `Y(x, u) = [Iₙ⊗xᵀ | Iₙ⊗uᵀ]`, so that `Y θ = Ax + Bu`.
pub fn build_regressor_y(x: &[f64], u: &[f64], dims: Dims) -> Result<Matrix> {
    let Dims { n, d } = dims;
    if x.len() != n {
        return Err(dim_err("build_regressor_Y x", n, x.len()));
    }
    if u.len() != d {
        return Err(dim_err("build_regressor_Y u", d, u.len()));
    }
    let mut y = Matrix::zeros(n, dims.theta_len());
    for i in 0..n {
        for (k, xk) in x.iter().enumerate() {
            y[(i, i * n + k)] = *xk;
        }
        for (k, uk) in u.iter().enumerate() {
            y[(i, n * n + i * d + k)] = *uk;
        }
    }
    Ok(y)
}

/// `z(x, r) = [I_d⊗xᵀ | I_d⊗rᵀ]`, so that `z φ = K_xᵀx + K_rᵀr`.
pub fn build_regressor_z(x: &[f64], r: &[f64], dims: Dims) -> Result<Matrix> {
    let Dims { n, d } = dims;
    if x.len() != n {
        return Err(dim_err("build_regressor_z x", n, x.len()));
    }
    if r.len() != d {
        return Err(dim_err("build_regressor_z r", d, r.len()));
    }
    let mut z = Matrix::zeros(d, dims.phi_len());
    for i in 0..d {
        for (k, xk) in x.iter().enumerate() {
            z[(i, i * n + k)] = *xk;
        }
        for (k, rk) in r.iter().enumerate() {
            z[(i, d * n + i * d + k)] = *rk;
        }
    }
    Ok(z)
}

/// Solves the matching conditions via the left pseudo-inverse of `B` and
/// rejects the result when the residuals exceed [`MATCHING_TOL`].
pub fn solve_matching(plant: &PlantModel, reference: &ReferenceModel) -> Result<MatchedGains> {
    let Dims { n, d } = plant.dims();
    if reference.a_m().rows() != n || reference.b_m().cols() != d {
        return Err(dim_err(
            "solve_matching",
            format!("reference model with n={n}, d={d}"),
            format!("n={}, d={}", reference.a_m().rows(), reference.b_m().cols()),
        ));
    }
    let b_pinv = left_pseudo_inverse(plant.b())?;
    let kx_t = &b_pinv * &(reference.a_m() - plant.a());
    let kr_t = &b_pinv * reference.b_m();

    let scale = 1.0 + plant.a().max_abs() + reference.a_m().max_abs() + reference.b_m().max_abs();
    let res_x = (&(plant.a() + &(plant.b() * &kx_t)) - reference.a_m()).max_abs();
    let res_r = (&(plant.b() * &kr_t) - reference.b_m()).max_abs();
    if res_x > MATCHING_TOL * scale {
        return Err(MracError::MatchingInfeasible(format!(
            "A_m - A is not in the column space of B (residual {res_x:e})"
        )));
    }
    if res_r > MATCHING_TOL * scale {
        return Err(MracError::MatchingInfeasible(format!(
            "B_m is not in the column space of B (residual {res_r:e})"
        )));
    }
    Ok(MatchedGains {
        kx_star: kx_t.transpose(),
        kr_star: kr_t.transpose(),
    })
}

pub fn plant_derivative(plant: &PlantModel, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    let Dims { n, d } = plant.dims();
    if x.len() != n {
        return Err(dim_err("plant_derivative x", n, x.len()));
    }
    if u.len() != d {
        return Err(dim_err("plant_derivative u", d, u.len()));
    }
    let mut dx = plant.a().mul_vec(x);
    let bu = plant.b().mul_vec(u);
    matrixlab::axpy(&mut dx, 1.0, &bu);
    Ok(dx)
}

pub fn reference_derivative(reference: &ReferenceModel, x_m: &[f64], t: f64) -> Vec<f64> {
    let mut dx = reference.a_m().mul_vec(x_m);
    let br = reference.b_m().mul_vec(&reference.r(t));
    matrixlab::axpy(&mut dx, 1.0, &br);
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundled_plant() -> PlantModel {
        PlantModel::new(
            Matrix::from_row_slice(2, 2, &[0.0, 1.0, 5.0, 2.0]),
            Matrix::from_row_slice(2, 1, &[0.0, 2.0]),
        )
        .unwrap()
    }

    fn bundled_reference() -> ReferenceModel {
        ReferenceModel::new(
            Matrix::from_row_slice(2, 2, &[0.0, 1.0, -8.0, -10.0]),
            Matrix::from_row_slice(2, 1, &[0.0, 1.0]),
            ReferenceSignal::ExpDecay { amplitude: vec![20.0], rate: 0.5 },
        )
        .unwrap()
    }

    const D21: Dims = Dims { n: 2, d: 1 };

    #[test]
    fn regressor_y_example() {
        let y = build_regressor_y(&[1.0, 2.0], &[3.0], D21).unwrap();
        let expect = Matrix::from_row_slice(2, 6, &[1.0, 2.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 3.0]);
        assert_eq!(y, expect);
        assert_eq!(build_regressor_y(&[0.0, 0.0], &[0.0], D21).unwrap(), Matrix::zeros(2, 6));
        assert!(build_regressor_y(&[0.0], &[0.0], D21).is_err());
    }

    #[test]
    fn regressor_z_example() {
        let z = build_regressor_z(&[1.0, 2.0], &[4.0], D21).unwrap();
        assert_eq!(z, Matrix::from_row_slice(1, 3, &[1.0, 2.0, 4.0]));
        assert_eq!(build_regressor_z(&[0.0, 0.0], &[0.0], D21).unwrap(), Matrix::zeros(1, 3));
        assert!(build_regressor_z(&[1.0, 2.0], &[], D21).is_err());
    }

    #[test]
    fn matching_bundled_values() {
        let g = solve_matching(&bundled_plant(), &bundled_reference()).unwrap();
        assert!((g.kx_star[(0, 0)] + 6.5).abs() < 1e-12);
        assert!((g.kx_star[(1, 0)] + 6.0).abs() < 1e-12);
        assert!((g.kr_star[(0, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn matching_identity_case() {
        let a = Matrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.0]);
        let plant = PlantModel::new(a.clone(), Matrix::identity(2)).unwrap();
        let reference = ReferenceModel::new(a, Matrix::identity(2), ReferenceSignal::Constant { value: vec![1.0, 0.0] }).unwrap();
        let g = solve_matching(&plant, &reference).unwrap();
        assert!(g.kx_star.max_abs() < 1e-14);
        assert!((&g.kr_star - &Matrix::identity(2)).max_abs() < 1e-14);
    }

    #[test]
    fn matching_infeasible() {
        let a = Matrix::from_row_slice(2, 2, &[-1.0, 0.0, -1.0, -1.0]);
        let a_m = Matrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]);
        let plant = PlantModel::new(a, Matrix::from_row_slice(2, 1, &[1.0, 0.0])).unwrap();
        let reference = ReferenceModel::new(a_m, Matrix::from_row_slice(2, 1, &[1.0, 0.0]), ReferenceSignal::Constant { value: vec![0.0] }).unwrap();
        assert!(matches!(solve_matching(&plant, &reference), Err(MracError::MatchingInfeasible(_))));
    }

    #[test]
    fn plant_derivative_examples() {
        let p = bundled_plant();
        assert_eq!(plant_derivative(&p, &[1.0, 0.0], &[0.0]).unwrap(), vec![0.0, 5.0]);
        assert_eq!(plant_derivative(&p, &[0.0, 0.0], &[0.0]).unwrap(), vec![0.0, 0.0]);
        assert!(plant_derivative(&p, &[1.0], &[0.0]).is_err());
    }

    #[test]
    fn reference_derivative_examples() {
        let m = bundled_reference();
        assert_eq!(reference_derivative(&m, &[0.0, 0.0], 0.0), vec![0.0, 20.0]);
        let quiet = ReferenceModel::new(m.a_m().clone(), m.b_m().clone(), ReferenceSignal::Constant { value: vec![0.0] }).unwrap();
        assert_eq!(reference_derivative(&quiet, &[0.0, 0.0], 3.0), vec![0.0, 0.0]);
        assert_eq!(reference_derivative(&quiet, &[1.0, 0.0], 3.0), vec![0.0, -8.0]);
    }

    #[test]
    fn bundled_reference_values() {
        let r = bundled_reference();
        assert_eq!(r.r(0.0), vec![20.0]);
        assert!((r.r(2.0)[0] - 20.0 * (-1.0f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn theta_and_phi_round_trip() {
        let p = bundled_plant();
        assert_eq!(p.theta(), vec![0.0, 1.0, 5.0, 2.0, 0.0, 2.0]);
        let (a, b) = unpack_theta(&p.theta(), D21).unwrap();
        assert_eq!(&a, p.a());
        assert_eq!(&b, p.b());
        let phi = [-6.5, -6.0, 0.5];
        let (kx, kr) = unpack_phi(&phi, D21).unwrap();
        assert_eq!(pack_phi(&kx, &kr), phi.to_vec());
    }

    #[test]
    fn rejects_bad_models() {
        assert!(PlantModel::new(Matrix::identity(2), Matrix::zeros(2, 1)).is_err());
        assert!(PlantModel::new(Matrix::identity(2), Matrix::zeros(3, 1)).is_err());
        assert!(ReferenceModel::new(Matrix::identity(2), Matrix::zeros(2, 1), ReferenceSignal::Constant { value: vec![0.0] }).is_err());
    }
}
