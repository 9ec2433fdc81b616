//! Time-stamped history stacks with a novelty-based recording policy and an
//! online rank monitor.
//!
//! A stack records until its stacked matrix reaches full column rank and then
//! freezes; the time of that event is kept in `satisfied_at`.

use serde::{Deserialize, Serialize};

use crate::matrixlab::{self, min_singular_value, rank_tolerance, Matrix};

/// Decides when a new sample is novel enough to be stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordingPolicy {
    /// Relative novelty threshold on `‖s - s_last‖² / max(‖s‖², floor)`.
    pub eps_store: f64,
    /// Minimum time between two stored samples.
    pub min_dwell: f64,
    /// Denominator regularizer.
    pub floor: f64,
}

impl RecordingPolicy {
    /// Defaults scaled to the integration step.
    pub fn with_dt(dt: f64) -> Self {
        Self {
            eps_store: 0.01,
            min_dwell: 10.0 * dt,
            floor: 1e-6,
        }
    }

    pub fn novelty(&self, last: &[f64], signal: &[f64]) -> f64 {
        let diff = matrixlab::vsub(signal, last);
        matrixlab::dot(&diff, &diff) / matrixlab::dot(signal, signal).max(self.floor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackEntry<T> {
    pub t: f64,
    pub payload: T,
}

/// Payload of the identification stack W.
#[derive(Debug, Clone, PartialEq)]
pub struct WRecord {
    pub m: Matrix,
    pub g: Vec<f64>,
}

/// Payload of the controller stack H.
///
/// `u` is the input applied at the storage instant; it is kept for logging.
/// The concurrent-learning term re-evaluates the input with current gains.
#[derive(Debug, Clone, PartialEq)]
pub struct HRecord {
    pub x: Vec<f64>,
    pub r: Vec<f64>,
    pub u: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DataStack<T> {
    entries: Vec<StackEntry<T>>,
    capacity: usize,
    min_entries: usize,
    policy: RecordingPolicy,
    last_signal: Option<Vec<f64>>,
    satisfied_at: Option<f64>,
}

impl<T> DataStack<T> {
    /// `min_entries` is the minimum stack length before the rank condition
    /// can hold (`n + d` for both W and H).
    pub fn new(min_entries: usize, capacity: usize, policy: RecordingPolicy) -> Self {
        Self {
            entries: Vec::new(),
            capacity: capacity.max(min_entries),
            min_entries,
            policy,
            last_signal: None,
            satisfied_at: None,
        }
    }

    /// Capacity defaults to four times the minimum length.
    pub fn with_default_capacity(min_entries: usize, policy: RecordingPolicy) -> Self {
        Self::new(min_entries, 4 * min_entries, policy)
    }

    pub fn entries(&self) -> &[StackEntry<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn min_entries(&self) -> usize {
        self.min_entries
    }

    pub fn policy(&self) -> &RecordingPolicy {
        &self.policy
    }

    pub fn satisfied_at(&self) -> Option<f64> {
        self.satisfied_at
    }

    pub fn is_frozen(&self) -> bool {
        self.satisfied_at.is_some()
    }

    pub fn last_time(&self) -> Option<f64> {
        self.entries.last().map(|e| e.t)
    }

    /// Stores `payload` when the stack is open, has room, the dwell time has
    /// elapsed and `signal` is novel relative to the last stored signal. The
    /// first sample is always stored.
    pub fn maybe_record(&mut self, t: f64, signal: &[f64], payload: T) -> bool {
        if self.is_frozen() || self.entries.len() >= self.capacity {
            return false;
        }
        if let (Some(last_t), Some(last)) = (self.last_time(), self.last_signal.as_deref()) {
            if t <= last_t || t - last_t < self.policy.min_dwell {
                return false;
            }
            if self.policy.novelty(last, signal) < self.policy.eps_store {
                return false;
            }
        }
        self.entries.push(StackEntry { t, payload });
        self.last_signal = Some(signal.to_vec());
        true
    }

    /// Vertical concatenation of the per-entry blocks in time order.
    pub fn stacked_matrix<F>(&self, extract: F) -> Matrix
    where
        F: Fn(&T) -> Matrix,
    {
        let blocks: Vec<Matrix> = self.entries.iter().map(|e| extract(&e.payload)).collect();
        Matrix::vstack(&blocks).expect("stack blocks share a column count")
    }

    /// Checks the rank condition on the stacked matrix. The first time it
    /// holds, the stack is frozen and `satisfied_at` is set to `t`.
    pub fn rank_condition_met<F>(&mut self, t: f64, extract: F) -> bool
    where
        F: Fn(&T) -> Matrix,
    {
        if self.satisfied_at.is_some() {
            return true;
        }
        if self.entries.len() < self.min_entries || self.entries.is_empty() {
            return false;
        }
        let stacked = self.stacked_matrix(extract);
        if stacked.rows() < stacked.cols() {
            return false;
        }
        if min_singular_value(&stacked) >= rank_tolerance(&stacked) {
            self.satisfied_at = Some(t);
            true
        } else {
            false
        }
    }
}
