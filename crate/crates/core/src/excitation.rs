//! Excitation diagnostics on recorded signals.
//!
//! A signal is exciting over `[t, t+T]` when `∫ x xᵀ dτ ≥ αI` for some
//! `α > 0`. Persistent excitation is a statement about all future windows and
//! is only ever falsified here, by showing windowed `α` decaying.

use serde::{Deserialize, Serialize};

use crate::error::{MracError, Result};
use crate::matrixlab::{lambda_min, min_singular_value, rank_tolerance, Matrix};
use crate::memory::DataStack;

/// `α` above which a signal counts as exciting.
pub const EXCITATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcitationReport {
    pub t_start: f64,
    pub t_end: f64,
    pub alpha: f64,
    pub exciting: bool,
}

/// Trapezoidal Gram integral `∫ x xᵀ dτ` over the sample grid.
pub fn gram_integral(samples: &[(f64, Vec<f64>)]) -> Result<Matrix> {
    if samples.len() < 2 {
        return Err(MracError::TooFewSamples(samples.len()));
    }
    if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(MracError::TooFewSamples(samples.len()));
    }
    let k = samples[0].1.len();
    let mut c = Matrix::zeros(k, k);
    let outer = |v: &[f64], w: f64, c: &mut Matrix| {
        for i in 0..k {
            for j in 0..k {
                c[(i, j)] += w * v[i] * v[j];
            }
        }
    };
    for pair in samples.windows(2) {
        let h = 0.5 * (pair[1].0 - pair[0].0);
        outer(&pair[0].1, h, &mut c);
        outer(&pair[1].1, h, &mut c);
    }
    Ok(c)
}

pub fn excitation_level(samples: &[(f64, Vec<f64>)]) -> Result<ExcitationReport> {
    let c = gram_integral(samples)?;
    let alpha = lambda_min(&c)?.max(0.0);
    Ok(ExcitationReport {
        t_start: samples[0].0,
        t_end: samples[samples.len() - 1].0,
        alpha,
        exciting: alpha > EXCITATION_TOL,
    })
}

/// Excitation level restricted to samples with `t_start <= t <= t_end`.
pub fn excitation_window(samples: &[(f64, Vec<f64>)], t_start: f64, t_end: f64) -> Result<ExcitationReport> {
    let eps = 1e-9 * (1.0 + t_end.abs());
    let window: Vec<(f64, Vec<f64>)> = samples
        .iter()
        .filter(|(t, _)| *t >= t_start - eps && *t <= t_end + eps)
        .cloned()
        .collect();
    excitation_level(&window)
}

/// Both sides of the full-rank-stack ⇒ exciting implication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanCheck {
    pub stack_full_rank: bool,
    pub sigma_min: f64,
    pub alpha: f64,
    pub implication_holds: bool,
}

/// Builds `X = [x_1, …, x_p]` from the stack (one column per entry) and
/// compares its rank with the excitation level of the sampled signal over
/// `[t₀, t_e]`, where `t_e` is the last stored time.
pub fn check_stack_span<T, F>(stack: &DataStack<T>, column: F, samples: &[(f64, Vec<f64>)]) -> Result<SpanCheck>
where
    F: Fn(&T) -> Vec<f64>,
{
    let cols: Vec<Vec<f64>> = stack.entries().iter().map(|e| column(&e.payload)).collect();
    let rows = samples.first().map_or(0, |s| s.1.len());
    let (stack_full_rank, sigma_min) = if cols.len() >= rows && rows > 0 {
        let mut x = Matrix::zeros(rows, cols.len());
        for (j, c) in cols.iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                x[(i, j)] = *v;
            }
        }
        let s = min_singular_value(&x);
        (s >= rank_tolerance(&x), s)
    } else {
        (false, 0.0)
    };
    let t_e = stack.last_time().unwrap_or_else(|| samples.last().map_or(0.0, |s| s.0));
    let t0 = samples.first().map_or(0.0, |s| s.0);
    let alpha = if t_e > t0 {
        excitation_window(samples, t0, t_e)?.alpha
    } else {
        0.0
    };
    Ok(SpanCheck {
        stack_full_rank,
        sigma_min,
        alpha,
        implication_holds: !stack_full_rank || alpha > EXCITATION_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::RecordingPolicy;
    use std::f64::consts::PI;

    fn sampled<F: Fn(f64) -> Vec<f64>>(f: F, t0: f64, t1: f64, dt: f64) -> Vec<(f64, Vec<f64>)> {
        let steps = ((t1 - t0) / dt).round() as usize;
        (0..=steps).map(|k| {
            let t = t0 + k as f64 * dt;
            (t, f(t))
        }).collect()
    }

    #[test]
    fn sinusoid_gram_is_pi_identity() {
        let s = sampled(|t| vec![t.sin(), t.cos()], 0.0, 2.0 * PI, 2.0 * PI / 6283.0);
        let c = gram_integral(&s).unwrap();
        assert!((c[(0, 0)] - PI).abs() < 1e-3);
        assert!((c[(1, 1)] - PI).abs() < 1e-3);
        assert!(c[(0, 1)].abs() < 1e-3);
        let rep = excitation_level(&s).unwrap();
        assert!((rep.alpha - PI).abs() < 1e-3);
        assert!(rep.exciting);
    }

    #[test]
    fn zero_and_one_directional_signals() {
        let zero = sampled(|_| vec![0.0, 0.0], 0.0, 1.0, 0.01);
        let rep = excitation_level(&zero).unwrap();
        assert_eq!(rep.alpha, 0.0);
        assert!(!rep.exciting);

        let line = sampled(|_| vec![1.0, 0.0], 0.0, 1.0, 0.01);
        let c = gram_integral(&line).unwrap();
        assert!((c[(0, 0)] - 1.0).abs() < 1e-12);
        assert_eq!(c[(1, 1)], 0.0);
        assert!(excitation_level(&line).unwrap().alpha < 1e-15);
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(excitation_level(&[(0.0, vec![1.0])]), Err(MracError::TooFewSamples(1))));
        assert!(excitation_level(&[(1.0, vec![1.0]), (0.5, vec![1.0])]).is_err());
    }

    #[test]
    fn quadrature_error_shrinks_quadratically() {
        let f = |t: f64| vec![(3.0 * t).sin() + 0.5, t.cos()];
        let coarse = excitation_level(&sampled(f, 0.0, 2.0, 0.02)).unwrap().alpha;
        let fine = excitation_level(&sampled(f, 0.0, 2.0, 0.01)).unwrap().alpha;
        let finest = excitation_level(&sampled(f, 0.0, 2.0, 0.005)).unwrap().alpha;
        let ratio = (coarse - fine).abs() / (fine - finest).abs();
        assert!((ratio - 4.0).abs() < 0.5, "ratio {ratio}");
    }

    #[test]
    fn decaying_exponential_is_not_persistently_exciting() {
        let s = sampled(|t| vec![20.0 * (-t / 2.0).exp()], 0.0, 11.0, 1e-3);
        let alphas: Vec<f64> = [0.0, 5.0, 10.0]
            .iter()
            .map(|&t| excitation_window(&s, t, t + 1.0).unwrap().alpha)
            .collect();
        assert!(alphas.windows(2).all(|w| w[1] < w[0]));
        // ∫_t^{t+1} 400 e^{-τ} dτ = 400 e^{-t}(1 - e^{-1})
        let exact = 400.0 * (1.0 - (-1.0f64).exp());
        assert!((alphas[0] - exact).abs() < 1e-3);
    }

    fn open_stack(values: &[Vec<f64>]) -> DataStack<Vec<f64>> {
        let mut s = DataStack::new(1, 16, RecordingPolicy { eps_store: 0.0, min_dwell: 0.0, floor: 1e-6 });
        for (j, v) in values.iter().enumerate() {
            s.maybe_record(0.1 * (j + 1) as f64, &[j as f64], v.clone());
        }
        s
    }

    #[test]
    fn stack_span_vacuous_cases() {
        let zero = sampled(|_| vec![0.0, 0.0], 0.0, 1.0, 0.01);
        let st = open_stack(&[vec![0.0, 0.0], vec![0.0, 0.0]]);
        let chk = check_stack_span(&st, Clone::clone, &zero).unwrap();
        assert!(!chk.stack_full_rank && chk.implication_holds);

        let line = sampled(|_| vec![1.0, 0.0], 0.0, 1.0, 0.01);
        let st = open_stack(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]]);
        let chk = check_stack_span(&st, Clone::clone, &line).unwrap();
        assert!(!chk.stack_full_rank);
        assert!(chk.alpha < 1e-15);
        assert!(chk.implication_holds);
    }

    #[test]
    fn stack_span_full_rank() {
        let f = |t: f64| vec![t.sin(), t.cos()];
        let sig = sampled(f, 0.0, 1.0, 0.001);
        let st = open_stack(&[f(0.1), f(0.2), f(0.3)]);
        let chk = check_stack_span(&st, Clone::clone, &sig).unwrap();
        assert!(chk.stack_full_rank);
        assert!(chk.alpha > EXCITATION_TOL);
        assert!(chk.implication_holds);
    }
}
