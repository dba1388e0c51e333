//! Nodal updates of connective tissue `c` and protease `p` over one time step.
//!
//! Both ODEs are integrated exactly once `u` and `c` are taken piecewise
//! linear in time between the two levels:
//!
//! ```text
//! c_new = c_old * exp(-tau (p_old + p_new) / 2)
//! p_new = exp(-tau/eps) p_old + (1/eps) * int_0^tau u(s) c(s) exp(-(tau - s)/eps) ds
//! ```
//!
//! The closed form of the protease integral has a `1/tau^2` prefactor on
//! braces that nearly cancel when `tau << eps`. Here it is rearranged as a
//! non-negative combination of the nodal products,
//!
//! ```text
//! W11 u_new c_new + W10 (u_new c_old + u_old c_new) + W00 u_old c_old,
//! ```
//!
//! whose weights are moments of `exp(-sigma/eps)` against the linear hat
//! functions in time, written through regularized incomplete gamma tails
//! `P_k(x) = 1 - e^-x sum_{j<=k} x^j/j!` that are evaluated by series for
//! small `x = tau/eps`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KineticsError {
    #[error("epsilon must be positive and finite, got {0}")]
    Epsilon(f64),
    #[error("time step must be positive and finite, got {0}")]
    TimeStep(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KineticsParams {
    epsilon: f64,
    tau: f64,
}

impl KineticsParams {
    pub fn new(epsilon: f64, tau: f64) -> Result<Self, KineticsError> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(KineticsError::Epsilon(epsilon));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(KineticsError::TimeStep(tau));
        }
        Ok(Self { epsilon, tau })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Precomputed weights for repeated nodal updates with these parameters.
    pub fn weights(&self) -> ProteaseWeights {
        ProteaseWeights::new(self.tau / self.epsilon)
    }
}

/// Weights of the exact protease update for a fixed `tau / eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProteaseWeights {
    /// `exp(-tau/eps)`, the decay of the old value.
    pub decay: f64,
    pub new_new: f64,
    pub mixed: f64,
    pub old_old: f64,
}

impl ProteaseWeights {
    pub fn new(ratio: f64) -> Self {
        let m0 = gamma_tail_scaled(0, ratio);
        let m1 = gamma_tail_scaled(1, ratio);
        let m2 = 2.0 * gamma_tail_scaled(2, ratio);
        Self {
            decay: (-ratio).exp(),
            new_new: (m0 - 2.0 * m1 + m2).max(0.0),
            mixed: (m1 - m2).max(0.0),
            old_old: m2.max(0.0),
        }
    }

    #[inline]
    pub fn apply(&self, u_old: f64, u_new: f64, c_old: f64, c_new: f64, p_old: f64) -> f64 {
        self.decay * p_old
            + self.new_new * u_new * c_new
            + self.mixed * (u_new * c_old + u_old * c_new)
            + self.old_old * u_old * c_old
    }
}

/// `P_k(x) / x^k` with `P_k` the regularized lower incomplete gamma function
/// of order `k + 1`.
fn gamma_tail_scaled(k: u32, x: f64) -> f64 {
    if x < 2.0 {
        // e^-x * sum_{j>k} x^(j-k) / j!
        let mut term = 1.0;
        for j in 1..=k + 1 {
            term /= j as f64;
        }
        term *= x;
        let mut sum = 0.0;
        let mut j = k + 1;
        while term > 1e-18 * sum || sum == 0.0 {
            sum += term;
            j += 1;
            term *= x / j as f64;
            if term == 0.0 {
                break;
            }
        }
        (-x).exp() * sum
    } else {
        let mut partial = 0.0;
        let mut term = 1.0;
        for j in 0..=k {
            if j > 0 {
                term *= x / j as f64;
            }
            partial += term;
        }
        let tail = if k == 0 {
            -(-x).exp_m1()
        } else {
            1.0 - (-x).exp() * partial
        };
        tail / x.powi(k as i32)
    }
}

/// `c_new = c_old * exp(-tau (p_old + p_new) / 2)`.
#[inline]
pub fn update_c(c_old: f64, p_old: f64, p_new: f64, tau: f64) -> f64 {
    c_old * (-0.5 * tau * (p_new + p_old)).exp()
}

/// Exact protease update with `u`, `c` linear in time between the levels.
/// `u_new`/`c_new` are the end-of-step values (or the current fixed-point
/// iterates).
pub fn update_p(
    u_old: f64,
    u_new: f64,
    c_old: f64,
    c_new: f64,
    p_old: f64,
    params: KineticsParams,
) -> f64 {
    params.weights().apply(u_old, u_new, c_old, c_new, p_old)
}

/// Vector form of [`update_c`].
pub fn update_c_nodes(c_old: &[f64], p_old: &[f64], p_new: &[f64], tau: f64, out: &mut [f64]) {
    for i in 0..out.len() {
        out[i] = update_c(c_old[i], p_old[i], p_new[i], tau);
    }
}

/// Vector form of [`update_p`] with shared weights.
pub fn update_p_nodes(
    weights: &ProteaseWeights,
    u_old: &[f64],
    u_new: &[f64],
    c_old: &[f64],
    c_new: &[f64],
    p_old: &[f64],
    out: &mut [f64],
) {
    for i in 0..out.len() {
        out[i] = weights.apply(u_old[i], u_new[i], c_old[i], c_new[i], p_old[i]);
    }
}
