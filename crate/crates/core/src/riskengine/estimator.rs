use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TestState;
use crate::assorters::{overstatement_upper, to_f64};
use crate::Rational;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("eta0 = {eta0} must lie in [1/2, u) with u = {upper}")]
    Eta0OutOfRange { eta0: f64, upper: f64 },
    #[error("d = {0} must be nonnegative")]
    NegativeWeight(f64),
    #[error("c = {0} must be positive")]
    NonPositiveGuardrail(f64),
    #[error("fixed eta = {eta} must lie in (0, u] with u = {upper}")]
    FixedOutOfRange { eta: f64, upper: f64 },
    #[error("assumed error rates p1 = {p1}, p2 = {p2} must be nonnegative and sum to at most 1")]
    BadRates { p1: f64, p2: f64 },
}

/// How the alternative mean `eta_j` is chosen for each draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorConfig {
    /// Truncated shrinkage: the sample mean shrunk towards `eta0` with weight
    /// `d`, held at least `c/sqrt(d + j)` above the null mean and, with the
    /// mirror guardrail, at least `c/sqrt(d + j)` below `u`.
    ///
    /// `eta0` defaults to 0.999 times the value of a matching card; `c`
    /// defaults to `0.1 (u - 1/2)`.
    ShrinkTrunc {
        #[serde(default)]
        eta0: Option<f64>,
        #[serde(default = "default_d")]
        d: f64,
        #[serde(default)]
        c: Option<f64>,
        #[serde(default = "default_true")]
        mirror_guardrail: bool,
    },
    /// A constant alternative mean.
    Fixed { eta: f64 },
    /// Constant eta maximising expected log growth when a fraction `p2` of
    /// cards are 2-vote overstatements and `p1` are 1-vote overstatements.
    Cobra {
        #[serde(default = "default_p2")]
        p2: f64,
        #[serde(default)]
        p1: f64,
    },
}

fn default_d() -> f64 {
    100.0
}

fn default_true() -> bool {
    true
}

fn default_p2() -> f64 {
    1e-5
}

impl EstimatorConfig {
    pub fn shrink_trunc() -> Self {
        EstimatorConfig::ShrinkTrunc {
            eta0: None,
            d: default_d(),
            c: None,
            mirror_guardrail: true,
        }
    }

    pub fn cobra(p2: f64) -> Self {
        EstimatorConfig::Cobra { p2, p1: 0.0 }
    }

    /// Binds the configuration to an assorter with upper bound `upper` whose
    /// value on a matching card is `match_value`. `one_over` is the value of a
    /// 1-vote overstatement, when that notion applies.
    pub fn resolve(&self, upper: f64, match_value: f64, one_over: Option<f64>) -> Result<EtaRule, EstimatorError> {
        match *self {
            EstimatorConfig::ShrinkTrunc {
                eta0,
                d,
                c,
                mirror_guardrail,
            } => {
                let eta0 = eta0.unwrap_or(0.999 * match_value);
                // 0.999/(2 - 2v) is exactly 1/2 at v = 0.001; allow it.
                if !(eta0 >= 0.5 - 1e-12 && eta0 < upper) {
                    return Err(EstimatorError::Eta0OutOfRange { eta0, upper });
                }
                if !(d >= 0.0) {
                    return Err(EstimatorError::NegativeWeight(d));
                }
                let c = c.unwrap_or(0.1 * (upper - 0.5));
                if !(c > 0.0) {
                    return Err(EstimatorError::NonPositiveGuardrail(c));
                }
                Ok(EtaRule::ShrinkTrunc {
                    eta0,
                    d,
                    c,
                    mirror: mirror_guardrail,
                })
            }
            EstimatorConfig::Fixed { eta } => {
                if !(eta > 0.0 && eta <= upper) {
                    return Err(EstimatorError::FixedOutOfRange { eta, upper });
                }
                Ok(EtaRule::Fixed(eta))
            }
            EstimatorConfig::Cobra { p2, p1 } => {
                if !(p2 >= 0.0 && p1 >= 0.0 && p1 + p2 <= 1.0) {
                    return Err(EstimatorError::BadRates { p1, p2 });
                }
                let mut dist = vec![(0.0, p2), (match_value, 1.0 - p1 - p2)];
                match one_over {
                    Some(v) => dist.push((v, p1)),
                    // Without a half-step value every discrepancy is total.
                    None => dist[0].1 += p1,
                }
                Ok(EtaRule::Fixed(optimal_fixed_eta(&dist, upper, 0.5)))
            }
        }
    }
}

/// A resolved estimator, ready to produce `eta_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaRule {
    ShrinkTrunc { eta0: f64, d: f64, c: f64, mirror: bool },
    Fixed(f64),
}

impl EtaRule {
    /// `eta_j` for the next draw given the current null mean `mu` (which must
    /// lie in `[0, u)`). The result lies in `[mu, u]`; it equals `mu` only
    /// for a fixed bet that is not above the null mean.
    pub fn eta(&self, state: &TestState, mu: f64) -> f64 {
        let u = state.upper;
        match *self {
            EtaRule::Fixed(eta) => eta.clamp(mu, u),
            EtaRule::ShrinkTrunc { eta0, d, c, mirror } => {
                let weight = d + state.draws as f64;
                let (base, scale) = if weight > 0.0 {
                    ((d * eta0 + state.sum) / weight, c / weight.sqrt())
                } else {
                    (eta0, c)
                };
                let lower = mu + scale;
                let mut eta = base.max(lower);
                if mirror {
                    let ceiling = u - scale;
                    eta = if lower > ceiling { 0.5 * (mu + u) } else { eta.min(ceiling) };
                }
                if eta >= u {
                    eta = u * (1.0 - f64::EPSILON);
                }
                if eta <= mu {
                    eta = 0.5 * (mu + u);
                }
                eta
            }
        }
    }
}

/// Expected log growth of one step at null mean `mu` when the drawn value
/// follows `dist` (pairs of value and probability).
fn expected_log_growth(dist: &[(f64, f64)], eta: f64, upper: f64, mu: f64) -> f64 {
    dist.iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|&(x, p)| p * super::step_multiplier(x, eta, mu, upper).ln())
        .sum()
}

/// Constant eta in `(mu, upper]` maximising expected log growth under `dist`.
///
/// The objective is concave in eta, so a golden-section search finds the
/// maximiser; it stops once the bracket is narrower than 1e-9 relative to
/// `upper`. When no value lies below `mu` the optimum is `upper` itself.
pub fn optimal_fixed_eta(dist: &[(f64, f64)], upper: f64, mu: f64) -> f64 {
    // The log growth of a value x is increasing in eta exactly when x > mu.
    if dist.iter().all(|&(x, p)| p == 0.0 || x >= mu) {
        return upper;
    }
    let f = |eta: f64| expected_log_growth(dist, eta, upper, mu);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (mu, upper);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-9 * upper {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// COBRA bet for an overstatement assorter built from a {0, 1/2, 1}-valued
/// assorter with upper bound `assorter_upper` and margin `margin`.
pub fn eta_cobra(p2: f64, p1: f64, assorter_upper: Rational, margin: Rational) -> Result<f64, EstimatorError> {
    let upper = overstatement_upper(assorter_upper, margin);
    let denom = Rational::from_integer(2) * assorter_upper - margin;
    let match_value = to_f64(assorter_upper / denom);
    let one_over = to_f64(assorter_upper / (Rational::from_integer(2) * denom));
    match (EstimatorConfig::Cobra { p2, p1 }).resolve(to_f64(upper), match_value, Some(one_over))? {
        EtaRule::Fixed(eta) => Ok(eta),
        EtaRule::ShrinkTrunc { .. } => unreachable!("cobra resolves to a fixed bet"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i128, d: i128) -> Rational {
        Rational::new(n, d)
    }

    /// Grid-search oracle for the COBRA optimum.
    fn grid_argmax(p2: f64, upper: f64, match_value: f64, points: usize) -> f64 {
        let dist = [(0.0, p2), (match_value, 1.0 - p2)];
        let mut best = (f64::NEG_INFINITY, 0.0);
        for k in 1..points {
            let eta = 0.5 + (upper - 0.5) * k as f64 / points as f64;
            let g = expected_log_growth(&dist, eta, upper, 0.5);
            if g > best.0 {
                best = (g, eta);
            }
        }
        best.1
    }

    #[test]
    fn cobra_degenerate_is_upper_bound() {
        let eta = eta_cobra(0.0, 0.0, q(1, 1), q(1, 50)).unwrap();
        assert!((eta - 100.0 / 99.0).abs() < 1e-15);
    }

    #[test]
    fn cobra_small_rate_matches_grid_oracle() {
        let upper = 2.0 / 1.98;
        let match_value = 1.0 / 1.98;
        let eta = eta_cobra(1e-5, 0.0, q(1, 1), q(1, 50)).unwrap();
        let oracle = grid_argmax(1e-5, upper, match_value, 1_000_000);
        assert!(eta < upper);
        assert!((eta - oracle).abs() <= 2.0 * (upper - 0.5) / 1e6, "{eta} vs {oracle}");
        let dist = [(0.0, 1e-5), (match_value, 1.0 - 1e-5)];
        let g = |e: f64| expected_log_growth(&dist, e, upper, 0.5);
        assert!(g(eta) >= g(oracle) - 1e-15);
        assert!(upper - eta < 1e-3);
    }

    #[test]
    fn cobra_pessimistic_rate_bets_low() {
        let match_value = 1.0 / 1.98;
        let eta = eta_cobra(0.5, 0.0, q(1, 1), q(1, 50)).unwrap();
        assert!(eta < match_value);
        let oracle = grid_argmax(0.5, 2.0 / 1.98, match_value, 1_000_000);
        assert!((eta - oracle).abs() < 1e-5);
    }

    #[test]
    fn shrink_trunc_initial_and_limits() {
        // Mismatch assorter with v = 0.01.
        let u = 1.0 / 1.98;
        let rule = EstimatorConfig::shrink_trunc().resolve(u, u, None).unwrap();
        let EtaRule::ShrinkTrunc { eta0, c, .. } = rule else {
            panic!()
        };
        assert!((eta0 - 0.999 / 1.98).abs() < 1e-15);
        assert!((eta0 - 0.50455).abs() < 1e-5);
        let s = TestState::new(10_000, u);
        let eta = rule.eta(&s, 0.5);
        assert!(eta <= u - c / 10.0 + 1e-15);
        assert!((eta - eta0).abs() < 1e-4);

        // After many matching draws the estimate presses on u, held off by
        // the mirror guardrail.
        let s = TestState {
            draws: 5000,
            sum: 5000.0 * u,
            ..TestState::new(10_000, u)
        };
        let mu = (5000.0 - s.sum) / 5000.0;
        let eta = rule.eta(&s, mu);
        assert!(eta <= u - c / 5100f64.sqrt() + 1e-15);
        assert!(eta > mu);
    }

    #[test]
    fn shrink_trunc_guardrails_cross_gives_midpoint() {
        let rule = EtaRule::ShrinkTrunc {
            eta0: 0.55,
            d: 1.0,
            c: 0.5,
            mirror: true,
        };
        let s = TestState::new(100, 0.6);
        assert!((rule.eta(&s, 0.5) - 0.55).abs() < 1e-15);
    }

    #[test]
    fn lower_guardrail_keeps_eta_above_mu() {
        let rule = EstimatorConfig::shrink_trunc().resolve(0.6, 0.6, None).unwrap();
        let s = TestState {
            draws: 200,
            sum: 0.0,
            ..TestState::new(1000, 0.6)
        };
        let mu = 500.0 / 800.0 - 0.1;
        assert!(rule.eta(&s, mu) > mu);
    }

    #[test]
    fn eta0_at_one_tenth_percent_margin_is_half() {
        // v = 0.001 gives 0.999 / 1.998 = 1/2 exactly.
        let u = 1000.0 / 1998.0;
        assert!(EstimatorConfig::shrink_trunc().resolve(u, u, None).is_ok());
        let bad = EstimatorConfig::ShrinkTrunc {
            eta0: Some(0.4),
            d: 100.0,
            c: None,
            mirror_guardrail: true,
        };
        assert!(bad.resolve(0.6, 0.6, None).is_err());
    }

    #[test]
    fn fixed_is_clamped_to_null_mean() {
        let s = TestState::new(10, 1.0);
        assert_eq!(EtaRule::Fixed(0.4).eta(&s, 0.5), 0.5);
        assert_eq!(EtaRule::Fixed(0.7).eta(&s, 0.5), 0.7);
    }

    #[test]
    fn config_json_shape() {
        let c: EstimatorConfig = serde_json::from_str(r#"{"kind":"shrink_trunc"}"#).unwrap();
        assert_eq!(c, EstimatorConfig::shrink_trunc());
        let c: EstimatorConfig = serde_json::from_str(r#"{"kind":"cobra"}"#).unwrap();
        assert_eq!(c, EstimatorConfig::cobra(1e-5));
    }
}
