//! Finite-time system identifier.
//!
//! The filter `(x̂, θ̂, m)` with the closed-form surrogate `γ` turns the plant
//! into the regression `g = mθ`, which holds without any state-derivative
//! measurement. Once the W stack of `(m_j, g_j)` pairs reaches full rank, a
//! least-squares solve recovers `θ` exactly and the estimate is locked.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::matrixlab::{self, inverse, least_squares_solve, Matrix};
use crate::memory::{DataStack, WRecord};
use crate::system::Dims;

/// Default for the identifier parameter gain.
pub const DEFAULT_K_THETA: f64 = 80.0;
/// Default for the filter gain.
pub const DEFAULT_K_M: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentifierGains {
    pub k_theta: f64,
    pub k_m: f64,
}

impl Default for IdentifierGains {
    fn default() -> Self {
        Self {
            k_theta: DEFAULT_K_THETA,
            k_m: DEFAULT_K_M,
        }
    }
}

/// Identifier quadruple `(x̂, θ̂, m, γ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentifierState {
    pub x_hat: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub m: Matrix,
    pub gamma: Vec<f64>,
    pub gains: IdentifierGains,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentifierDerivatives {
    pub dx_hat: Vec<f64>,
    pub dtheta_hat: Vec<f64>,
    pub dm: Matrix,
}

impl IdentifierState {
    /// Initial state at `t₀`: `m = 0` and `γ(t₀) = x(t₀) - x̂(t₀)`.
    pub fn new(dims: Dims, x0: &[f64], x_hat0: Vec<f64>, theta_hat0: Vec<f64>, gains: IdentifierGains) -> Result<Self> {
        if x0.len() != dims.n || x_hat0.len() != dims.n {
            return Err(dim_err("IdentifierState x", dims.n, x0.len().max(x_hat0.len())));
        }
        if theta_hat0.len() != dims.theta_len() {
            return Err(dim_err("IdentifierState theta_hat", dims.theta_len(), theta_hat0.len()));
        }
        let gamma = matrixlab::vsub(x0, &x_hat0);
        Ok(Self {
            x_hat: x_hat0,
            theta_hat: theta_hat0,
            m: Matrix::zeros(dims.n, dims.theta_len()),
            gamma,
            gains,
        })
    }

    pub fn x_tilde(&self, x: &[f64]) -> Vec<f64> {
        matrixlab::vsub(x, &self.x_hat)
    }

    pub fn derivatives(&self, y: &Matrix, x: &[f64]) -> Result<IdentifierDerivatives> {
        identifier_derivatives(self, y, x)
    }
}

/// Right-hand side of the identifier filter.
///
/// `x̃ = x - x̂`, `θ̂' = k_θ mᵀ(x̃ - γ)`, `m' = Y - k_m m` and
/// `x̂' = Yθ̂ + k_m x̃ + m θ̂'`, with `θ̂'` evaluated first.
pub fn identifier_derivatives(state: &IdentifierState, y: &Matrix, x: &[f64]) -> Result<IdentifierDerivatives> {
    let n = state.x_hat.len();
    let p = state.theta_hat.len();
    if y.shape() != (n, p) {
        return Err(dim_err("identifier_derivatives Y", format!("{n}x{p}"), format!("{}x{}", y.rows(), y.cols())));
    }
    if x.len() != n || state.gamma.len() != n || state.m.shape() != (n, p) {
        return Err(dim_err("identifier_derivatives state", n, x.len()));
    }
    let IdentifierGains { k_theta, k_m } = state.gains;
    let x_tilde = state.x_tilde(x);
    let innovation = matrixlab::vsub(&x_tilde, &state.gamma);
    let dtheta_hat = matrixlab::vscale(&state.m.tr_mul_vec(&innovation), k_theta);
    let dm = y - &state.m.scale(k_m);
    let mut dx_hat = y.mul_vec(&state.theta_hat);
    matrixlab::axpy(&mut dx_hat, k_m, &x_tilde);
    matrixlab::axpy(&mut dx_hat, 1.0, &state.m.mul_vec(&dtheta_hat));
    Ok(IdentifierDerivatives { dx_hat, dtheta_hat, dm })
}

/// `γ(t) = γ(t₀) e^{-k_m (t - t₀)}`.
pub fn gamma_value(gamma0: &[f64], t0: f64, t: f64, k_m: f64) -> Vec<f64> {
    let s = (-k_m * (t - t0)).exp();
    matrixlab::vscale(gamma0, s)
}

/// `g = mθ̂ + x̃ - γ`, which equals `mθ` along every trajectory.
pub fn auxiliary_g(state: &IdentifierState, x: &[f64]) -> Vec<f64> {
    let mut g = state.m.mul_vec(&state.theta_hat);
    let x_tilde = state.x_tilde(x);
    matrixlab::axpy(&mut g, 1.0, &x_tilde);
    matrixlab::axpy(&mut g, -1.0, &state.gamma);
    g
}

/// Stacked regression data `(M, G)` of a W stack.
pub fn stacked_regression(w: &DataStack<WRecord>) -> (Matrix, Vec<f64>) {
    let m = w.stacked_matrix(|rec| rec.m.clone());
    let g = w.entries().iter().flat_map(|e| e.payload.g.iter().copied()).collect();
    (m, g)
}

/// `θ̂_FT = (MᵀM)⁻¹MᵀG` on the W stack.
pub fn finalize_ft(w: &DataStack<WRecord>) -> Result<Vec<f64>> {
    let (m, g) = stacked_regression(w);
    least_squares_solve(&m, &g)
}

/// Filtered channel vector `μ = [a; b]` of a filtered regressor
/// `m = [Iₙ⊗aᵀ | Iₙ⊗bᵀ]`.
pub fn filtered_channels(m: &Matrix, dims: Dims) -> Vec<f64> {
    let Dims { n, d } = dims;
    let mut mu = Vec::with_capacity(n + d);
    mu.extend((0..n).map(|k| m[(0, k)]));
    mu.extend((0..d).map(|k| m[(0, n * n + k)]));
    mu
}

/// Columns of `θ` that share the channel block of plant row `i`.
fn group_indices(i: usize, dims: Dims) -> Vec<usize> {
    let Dims { n, d } = dims;
    (0..n).map(|k| i * n + k).chain((0..d).map(|k| n * n + i * d + k)).collect()
}

/// `(MᵀM)⁻¹` exploiting that `MᵀM` is a permutation of `Iₙ ⊗ S` with
/// `S = Σ μⱼμⱼᵀ`; only the `(n+d) x (n+d)` matrix `S` is inverted.
pub fn structured_gram_inverse(w: &DataStack<WRecord>, dims: Dims) -> Result<Matrix> {
    let k = dims.n + dims.d;
    let mut s = Matrix::zeros(k, k);
    for e in w.entries() {
        let mu = filtered_channels(&e.payload.m, dims);
        for a in 0..k {
            for b in 0..k {
                s[(a, b)] += mu[a] * mu[b];
            }
        }
    }
    let s_inv = inverse(&s)?;
    let p = dims.theta_len();
    let mut out = Matrix::zeros(p, p);
    for i in 0..dims.n {
        let idx = group_indices(i, dims);
        for (a, &ra) in idx.iter().enumerate() {
            for (b, &cb) in idx.iter().enumerate() {
                out[(ra, cb)] = s_inv[(a, b)];
            }
        }
    }
    Ok(out)
}

/// Least-squares estimate through the structured Gram inverse.
pub fn finalize_ft_structured(w: &DataStack<WRecord>, dims: Dims) -> Result<Vec<f64>> {
    let (m, g) = stacked_regression(w);
    let inv = structured_gram_inverse(w, dims)?;
    Ok(inv.mul_vec(&m.tr_mul_vec(&g)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FtMode {
    PreTc,
    PostTc,
}

/// Switched finite-time estimate: the online `θ̂` before `t_c`, the
/// least-squares solution from then on.
#[derive(Debug, Clone, PartialEq)]
pub struct FtEstimate {
    mode: FtMode,
    theta_locked: Option<Vec<f64>>,
    t_c: Option<f64>,
}

impl Default for FtEstimate {
    fn default() -> Self {
        Self {
            mode: FtMode::PreTc,
            theta_locked: None,
            t_c: None,
        }
    }
}

impl FtEstimate {
    pub fn lock(&mut self, theta: Vec<f64>, t_c: f64) {
        self.mode = FtMode::PostTc;
        self.theta_locked = Some(theta);
        self.t_c = Some(t_c);
    }

    pub fn mode(&self) -> FtMode {
        self.mode
    }

    pub fn t_c(&self) -> Option<f64> {
        self.t_c
    }

    pub fn theta_locked(&self) -> Option<&[f64]> {
        self.theta_locked.as_deref()
    }

    pub fn theta_ft<'a>(&'a self, theta_hat: &'a [f64]) -> &'a [f64] {
        match self.mode {
            FtMode::PreTc => theta_hat,
            FtMode::PostTc => self.theta_locked.as_deref().expect("locked estimate present after t_c"),
        }
    }
}

/// `θ̂_FT(t)` for an identifier state.
pub fn theta_ft<'a>(est: &'a FtEstimate, state: &'a IdentifierState) -> &'a [f64] {
    est.theta_ft(&state.theta_hat)
}
