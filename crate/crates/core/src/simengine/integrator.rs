use crate::error::{MracError, Result};

/// Norm above which a state is treated as diverged.
pub const ESCAPE_NORM: f64 = 1e12;

/// One classical fourth-order Runge–Kutta step of `ẏ = f(t, y)`.
pub fn rk4_step<F>(mut f: F, t: f64, y: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let n = y.len();
    let stage = |base: &[f64], k: &[f64], h: f64| -> Vec<f64> { base.iter().zip(k).map(|(b, k)| b + h * k).collect() };

    let k1 = f(t, y)?;
    let k2 = f(t + 0.5 * dt, &stage(y, &k1, 0.5 * dt))?;
    let k3 = f(t + 0.5 * dt, &stage(y, &k2, 0.5 * dt))?;
    let k4 = f(t + dt, &stage(y, &k3, dt))?;

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    }
    guard(t + dt, &out)?;
    Ok(out)
}

/// Rejects non-finite or diverging states.
pub fn guard(t: f64, y: &[f64]) -> Result<()> {
    let norm_sq: f64 = y.iter().map(|v| v * v).sum();
    if !norm_sq.is_finite() || norm_sq.sqrt() > ESCAPE_NORM {
        return Err(MracError::NonFiniteState { t });
    }
    Ok(())
}
