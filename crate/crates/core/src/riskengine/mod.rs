//! Sequential testing with the ALPHA test supermartingale.
//!
//! For an assorter with upper bound `u`, the null hypothesis is that the
//! population mean is at most `t = 1/2`. Cards are drawn without
//! replacement; before draw `j` the mean of the cards not yet drawn, under the
//! null, is
//!
//! ```text
//! mu_j = (N t - S_j) / (N - j)
//! ```
//!
//! where `S_j` is the sum of the values drawn so far. Each draw multiplies
//! the test statistic by
//!
//! ```text
//! (x eta_j / mu_j + (u - x)(u - eta_j) / (u - mu_j)) / u
//! ```
//!
//! which has expectation one under the null whenever `eta_j` lies in
//! `[0, u]`. The audit stops when the product reaches `1/alpha`.

mod audit;
mod estimator;
mod sampling;

pub use audit::{
    run_audit, AssertionOutcome, AuditAssorter, AuditConfig, AuditDecision, AuditError, AuditResult, AuditTarget,
    DrawRecord, PreparedAudit, SequentialAudit, StepRecord,
};
pub use estimator::{eta_cobra, optimal_fixed_eta, EstimatorConfig, EstimatorError, EtaRule};
pub use sampling::{sample_plan, SamplePlan};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Rational;

#[derive(Debug, Error, PartialEq)]
pub enum StepError {
    #[error("all {0} cards have been drawn")]
    Exhausted(usize),
}

/// State of the null mean before the next draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NullMean {
    /// The null is still feasible; holds `mu_j`.
    Feasible(f64),
    /// `mu_j < 0`: the values already drawn exceed what the null allows.
    Infeasible,
    /// `mu_j >= u`: certification is impossible without a full count.
    Unreachable(f64),
}

/// Running state of one ALPHA test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestState {
    pub draws: usize,
    /// ln T_j.
    pub log_t: f64,
    /// Sum of the values drawn so far.
    pub sum: f64,
    pub population: usize,
    /// Hypothesized mean `t`.
    pub null_mean: f64,
    pub upper: f64,
    /// Running minimum of min(1, 1/T).
    pub p_value: f64,
}

impl TestState {
    pub fn new(population: usize, upper: f64) -> Self {
        TestState {
            draws: 0,
            log_t: 0.0,
            sum: 0.0,
            population,
            null_mean: 0.5,
            upper,
            p_value: 1.0,
        }
    }

    pub fn t(&self) -> f64 {
        self.log_t.exp()
    }

    /// `mu_j` for the next draw.
    pub fn next_null_mean(&self) -> Result<NullMean, StepError> {
        if self.draws >= self.population {
            return Err(StepError::Exhausted(self.population));
        }
        let mu = (self.population as f64 * self.null_mean - self.sum) / (self.population - self.draws) as f64;
        Ok(if mu < 0.0 {
            NullMean::Infeasible
        } else if mu >= self.upper {
            NullMean::Unreachable(mu)
        } else {
            NullMean::Feasible(mu)
        })
    }

    /// Records draw `x` bet at `eta`, against null mean `mu`; returns the
    /// multiplier applied.
    pub fn step(&mut self, x: f64, eta: f64, mu: f64) -> f64 {
        let m = step_multiplier(x, eta, mu, self.upper);
        self.log_t += m.ln();
        self.sum += x;
        self.draws += 1;
        let p = (-self.log_t).exp().min(1.0);
        if p < self.p_value {
            self.p_value = p;
        }
        m
    }

    pub fn certified(&self, alpha: f64) -> bool {
        self.p_value <= alpha
    }
}

/// One ALPHA factor. With `mu == 0` the null leaves no room to bet and the
/// factor is 1.
pub fn step_multiplier(x: f64, eta: f64, mu: f64, upper: f64) -> f64 {
    if mu <= 0.0 {
        return 1.0;
    }
    (x * eta / mu + (upper - x) * (upper - eta) / (upper - mu)) / upper
}

/// [`step_multiplier`] in exact arithmetic.
pub fn step_multiplier_exact(x: Rational, eta: Rational, mu: Rational, upper: Rational) -> Rational {
    (x * eta / mu + (upper - x) * (upper - eta) / (upper - mu)) / upper
}

/// Functional form of one step: returns the advanced state.
pub fn alpha_step(state: &TestState, x: f64, eta: f64) -> Result<(TestState, f64), StepError> {
    let mu = match state.next_null_mean()? {
        NullMean::Feasible(mu) | NullMean::Unreachable(mu) => mu,
        NullMean::Infeasible => 0.0,
    };
    let mut next = state.clone();
    let m = next.step(x, eta, mu);
    Ok((next, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::One;

    #[test]
    fn null_mean_examples() {
        let s = TestState::new(10, 1.0);
        assert_eq!(s.next_null_mean().unwrap(), NullMean::Feasible(0.5));
        let s = TestState {
            draws: 9,
            sum: 5.0,
            ..TestState::new(10, 1.0)
        };
        assert_eq!(s.next_null_mean().unwrap(), NullMean::Feasible(0.0));
        let s = TestState {
            draws: 50,
            sum: 30.0,
            ..TestState::new(100, 1.0)
        };
        match s.next_null_mean().unwrap() {
            NullMean::Feasible(mu) => assert!((mu - 0.4).abs() < 1e-15),
            other => panic!("{other:?}"),
        }
        let s = TestState {
            draws: 10,
            sum: 10.0,
            ..TestState::new(10, 1.0)
        };
        assert_eq!(s.next_null_mean(), Err(StepError::Exhausted(10)));
        let s = TestState {
            draws: 5,
            sum: 0.0,
            ..TestState::new(10, 0.8)
        };
        assert!(matches!(s.next_null_mean().unwrap(), NullMean::Unreachable(_)));
        let s = TestState {
            draws: 3,
            sum: 6.0,
            ..TestState::new(10, 1.0)
        };
        assert_eq!(s.next_null_mean().unwrap(), NullMean::Infeasible);
    }

    #[test]
    fn step_algebra() {
        let (u, mu, eta) = (0.6, 0.5, 0.58);
        assert!((step_multiplier(u, eta, mu, u) - eta / mu).abs() < 1e-15);
        assert!(step_multiplier(u, eta, mu, u) > 1.0);
        let m0 = step_multiplier(0.0, eta, mu, u);
        assert!((m0 - (u - eta) / (u - mu)).abs() < 1e-15);
        assert!(m0 < 1.0);
        for x in [0.0, 0.1, 0.3, 0.6] {
            assert!((step_multiplier(x, mu, mu, u) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn exact_identity_case() {
        let u = Rational::new(5, 9);
        let mu = Rational::new(1, 2);
        for k in 0..=5 {
            let x = u * Rational::new(k, 5);
            assert!(step_multiplier_exact(x, mu, mu, u).is_one());
        }
    }

    #[test]
    fn state_tracks_p_value_as_running_minimum() {
        let mut s = TestState::new(100, 1.0);
        s.step(1.0, 0.9, 0.5);
        let p1 = s.p_value;
        assert!(p1 < 1.0);
        s.step(0.0, 0.9, 0.5);
        assert_eq!(s.p_value, p1);
        assert!(s.t() < 1.0 / p1);
        let (next, m) = alpha_step(&s, 1.0, 0.9).unwrap();
        assert_eq!(next.draws, 3);
        assert!(m > 1.0);
    }
}
