use std::io::Write;

use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::estimator::{EstimatorConfig, EstimatorError, EtaRule};
use super::sampling::SamplePlan;
use super::{NullMean, TestState};
use crate::assorters::{
    mismatch_upper, mismatch_value, overstatement_upper, overstatement_value, to_f64, Assorter, AssorterError,
};
use crate::electiondata::{Contest, LinkedInstance, Vote};
use crate::Rational;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("risk limit alpha = {0} must lie in (0, 1)")]
    BadAlpha(f64),
    #[error("the population is empty")]
    EmptyPopulation,
    #[error("no assertions to audit")]
    NoTargets,
    #[error("max_draws = {max_draws} exceeds N = {population}")]
    MaxDrawsTooLarge { max_draws: usize, population: usize },
    #[error("V- = 0: mismatch audit cannot certify")]
    ZeroMismatchMargin,
    #[error("{label}: {source}")]
    Assorter {
        label: String,
        #[source]
        source: AssorterError,
    },
    #[error("{label}: {source}")]
    Estimator {
        label: String,
        #[source]
        source: EstimatorError,
    },
    #[error("expected {expected} assorter values per card, got {found}")]
    ValueCount { expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The quantity whose mean is tested against 1/2.
#[derive(Debug, Clone, PartialEq)]
pub enum AuditAssorter {
    /// Mismatch assorter with margin bound `v_prime`.
    Mismatch { v_prime: Rational },
    /// Overstatement assorter built on `assorter`, whose margin on the CVRs
    /// is `margin`.
    Comparison { assorter: Assorter, margin: Rational },
}

impl AuditAssorter {
    pub fn check(&self) -> Result<(), AuditError> {
        let wrap = |source| AuditError::Assorter {
            label: self.label(),
            source,
        };
        match self {
            AuditAssorter::Mismatch { v_prime } => {
                mismatch_upper(*v_prime).map_err(wrap)?;
                if v_prime.is_zero() {
                    return Err(AuditError::ZeroMismatchMargin);
                }
            }
            AuditAssorter::Comparison { assorter, margin } => {
                overstatement_value(&Vote::Null, &Vote::Null, assorter, *margin).map_err(wrap)?;
            }
        }
        Ok(())
    }

    pub fn upper(&self) -> Rational {
        match self {
            AuditAssorter::Mismatch { v_prime } => mismatch_upper(*v_prime).unwrap_or_else(|_| Rational::zero()),
            AuditAssorter::Comparison { assorter, margin } => overstatement_upper(assorter.upper(), *margin),
        }
    }

    /// Value on a card whose ballot reads `ballot` and whose CVR reads `cvr`.
    pub fn value(&self, ballot: &Vote, cvr: &Vote) -> Result<Rational, AssorterError> {
        match self {
            AuditAssorter::Mismatch { v_prime } => mismatch_value(ballot, cvr, *v_prime),
            AuditAssorter::Comparison { assorter, margin } => {
                overstatement_value(ballot, cvr, assorter, *margin).map(|s| s.value)
            }
        }
    }

    /// Value when ballot and CVR agree.
    pub fn match_value(&self) -> Rational {
        match self {
            AuditAssorter::Mismatch { .. } => self.upper(),
            AuditAssorter::Comparison { assorter, margin } => {
                let u = assorter.upper();
                u / (Rational::from_integer(2) * u - margin)
            }
        }
    }

    /// Value of a 1-vote overstatement, where that notion exists.
    pub fn one_over(&self) -> Option<Rational> {
        match self {
            AuditAssorter::Mismatch { .. } => None,
            AuditAssorter::Comparison { assorter, margin } => {
                let u = assorter.upper();
                Some((u - Rational::new(1, 2)) / (Rational::from_integer(2) * u - margin))
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            AuditAssorter::Mismatch { v_prime } => format!("mismatch v'={v_prime}"),
            AuditAssorter::Comparison { assorter, .. } => format!("comparison {}", assorter.label),
        }
    }
}

/// One assertion to certify, with the estimator that bets on it.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditTarget {
    pub assorter: AuditAssorter,
    pub estimator: EstimatorConfig,
}

impl AuditTarget {
    /// Mismatch audit with the truncated-shrinkage estimator.
    pub fn mismatch(v_prime: Rational) -> Self {
        AuditTarget {
            assorter: AuditAssorter::Mismatch { v_prime },
            estimator: EstimatorConfig::shrink_trunc(),
        }
    }

    /// Card-level comparison audit with the COBRA bet at p2 = 1e-5.
    pub fn comparison(assorter: Assorter, margin: Rational) -> Self {
        AuditTarget {
            assorter: AuditAssorter::Comparison { assorter, margin },
            estimator: EstimatorConfig::cobra(1e-5),
        }
    }

    pub fn with_estimator(mut self, estimator: EstimatorConfig) -> Self {
        self.estimator = estimator;
        self
    }

    fn rule(&self) -> Result<EtaRule, AuditError> {
        let a = &self.assorter;
        a.check()?;
        self.estimator
            .resolve(to_f64(a.upper()), to_f64(a.match_value()), a.one_over().map(to_f64))
            .map_err(|source| AuditError::Estimator {
                label: a.label(),
                source,
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub alpha: f64,
    pub seed: u64,
    /// Draws before falling back to a full count; `None` means N.
    #[serde(default)]
    pub max_draws: Option<usize>,
}

impl AuditConfig {
    pub fn new(alpha: f64, seed: u64) -> Self {
        AuditConfig {
            alpha,
            seed,
            max_draws: None,
        }
    }

    pub fn check(&self) -> Result<(), AuditError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(AuditError::BadAlpha(self.alpha));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditDecision {
    Certified,
    FullCount,
}

/// What happened to one assertion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionOutcome {
    pub label: String,
    /// Draw count at which the assertion certified.
    pub certified_at: Option<usize>,
    pub p_value: f64,
    pub log_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditResult {
    pub decision: AuditDecision,
    /// Sample size; N when the audit ends in a full count.
    pub n_draws: usize,
    /// Cards actually examined by the sequential test.
    pub draws_examined: usize,
    /// Audit-level p-value after each draw: the largest running-minimum
    /// p-value over the assertions.
    pub p_trajectory: Vec<f64>,
    pub assertions: Vec<AssertionOutcome>,
}

/// The effect of one draw on one assertion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub x: f64,
    pub eta: f64,
    pub mu: f64,
    pub log_t: f64,
    pub p: f64,
}

/// One draw: its 1-based index, the card drawn, and a step per assertion
/// (`None` for assertions that had already certified).
#[derive(Debug, Clone, PartialEq)]
pub struct DrawRecord {
    pub j: usize,
    pub card: usize,
    pub steps: Vec<Option<StepRecord>>,
}

#[derive(Debug, Clone)]
struct Live {
    label: String,
    rule: EtaRule,
    state: TestState,
    certified_at: Option<usize>,
    unreachable: bool,
}

/// The per-assertion test states of one audit, advanced one card at a time.
#[derive(Debug, Clone)]
pub struct SequentialAudit {
    live: Vec<Live>,
    alpha: f64,
    draws: usize,
    population: usize,
}

impl SequentialAudit {
    pub fn new(targets: &[AuditTarget], population: usize, alpha: f64) -> Result<Self, AuditError> {
        AuditConfig::new(alpha, 0).check()?;
        if population == 0 {
            return Err(AuditError::EmptyPopulation);
        }
        if targets.is_empty() {
            return Err(AuditError::NoTargets);
        }
        let live = targets
            .iter()
            .map(|t| {
                Ok(Live {
                    label: t.assorter.label(),
                    rule: t.rule()?,
                    state: TestState::new(population, to_f64(t.assorter.upper())),
                    certified_at: None,
                    unreachable: false,
                })
            })
            .collect::<Result<Vec<_>, AuditError>>()?;
        Ok(SequentialAudit {
            live,
            alpha,
            draws: 0,
            population,
        })
    }

    pub fn draws(&self) -> usize {
        self.draws
    }

    pub fn population(&self) -> usize {
        self.population
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Feeds the next card's assorter values (one per assertion). Certified
    /// assertions ignore the card.
    pub fn observe(&mut self, values: &[f64]) -> Result<Vec<Option<StepRecord>>, AuditError> {
        if values.len() != self.live.len() {
            return Err(AuditError::ValueCount {
                expected: self.live.len(),
                found: values.len(),
            });
        }
        if self.draws >= self.population {
            return Err(AuditError::EmptyPopulation);
        }
        self.draws += 1;
        let j = self.draws;
        let alpha = self.alpha;
        Ok(self
            .live
            .iter_mut()
            .zip(values)
            .map(|(a, &x)| {
                if a.certified_at.is_some() {
                    return None;
                }
                let (eta, mu) = match a.state.next_null_mean() {
                    Ok(NullMean::Feasible(mu)) => (a.rule.eta(&a.state, mu), mu),
                    Ok(NullMean::Unreachable(mu)) => {
                        a.unreachable = true;
                        (mu, mu)
                    }
                    // Infeasible states are certified as soon as they arise.
                    Ok(NullMean::Infeasible) | Err(_) => (0.0, 0.0),
                };
                if a.unreachable {
                    a.state.sum += x;
                    a.state.draws += 1;
                } else {
                    a.state.step(x, eta, mu);
                }
                if a.state.certified(alpha) {
                    a.certified_at = Some(j);
                } else if a.state.draws < a.state.population
                    && a.state.next_null_mean() == Ok(NullMean::Infeasible)
                {
                    a.state.p_value = 0.0;
                    a.certified_at = Some(j);
                }
                Some(StepRecord {
                    x,
                    eta,
                    mu,
                    log_t: a.state.log_t,
                    p: a.state.p_value,
                })
            })
            .collect())
    }

    /// `Some` once the audit can stop.
    pub fn decision(&self) -> Option<AuditDecision> {
        if self.live.iter().all(|a| a.certified_at.is_some()) {
            Some(AuditDecision::Certified)
        } else if self.draws >= self.population || self.live.iter().any(|a| a.unreachable) {
            Some(AuditDecision::FullCount)
        } else {
            None
        }
    }

    /// True when some assertion can no longer certify short of a full count.
    pub fn unreachable(&self) -> bool {
        self.live.iter().any(|a| a.unreachable)
    }

    /// Audit-level p-value: the largest p over the assertions.
    pub fn p_value(&self) -> f64 {
        self.live.iter().map(|a| a.state.p_value).fold(0.0, f64::max)
    }

    pub fn states(&self) -> impl Iterator<Item = (&str, &TestState)> {
        self.live.iter().map(|a| (a.label.as_str(), &a.state))
    }

    pub fn outcomes(&self) -> Vec<AssertionOutcome> {
        self.live
            .iter()
            .map(|a| AssertionOutcome {
                label: a.label.clone(),
                certified_at: a.certified_at,
                p_value: a.state.p_value,
                log_t: a.state.log_t,
            })
            .collect()
    }
}

/// An instance with every card's assorter values computed once, ready for
/// repeated audits under different seeds.
#[derive(Debug, Clone)]
pub struct PreparedAudit {
    targets: Vec<AuditTarget>,
    /// `values[t][i]`: value of card `i` under target `t`.
    values: Vec<Vec<f64>>,
}

impl PreparedAudit {
    pub fn new(instance: &LinkedInstance, targets: Vec<AuditTarget>) -> Result<Self, AuditError> {
        if instance.is_empty() {
            return Err(AuditError::EmptyPopulation);
        }
        if targets.is_empty() {
            return Err(AuditError::NoTargets);
        }
        let values = targets
            .iter()
            .map(|t| {
                t.rule()?;
                (0..instance.len())
                    .map(|i| {
                        let (b, c) = instance.pair(i);
                        t.assorter.value(b, c).map(to_f64).map_err(|source| AuditError::Assorter {
                            label: t.assorter.label(),
                            source,
                        })
                    })
                    .collect::<Result<Vec<f64>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PreparedAudit { targets, values })
    }

    pub fn population(&self) -> usize {
        self.values[0].len()
    }

    pub fn targets(&self) -> &[AuditTarget] {
        &self.targets
    }

    pub fn run(&self, config: &AuditConfig) -> Result<AuditResult, AuditError> {
        self.run_with(config, |_| {})
    }

    /// Runs the audit, reporting every draw to `observer`.
    pub fn run_with(
        &self,
        config: &AuditConfig,
        mut observer: impl FnMut(&DrawRecord),
    ) -> Result<AuditResult, AuditError> {
        config.check()?;
        let population = self.population();
        let max_draws = config.max_draws.unwrap_or(population);
        if max_draws > population {
            return Err(AuditError::MaxDrawsTooLarge { max_draws, population });
        }
        let mut audit = SequentialAudit::new(&self.targets, population, config.alpha)?;
        let mut trajectory = Vec::new();
        let mut xs = vec![0.0; self.targets.len()];
        let mut decision = None;
        for card in SamplePlan::new(config.seed, population).take(max_draws) {
            for (x, v) in xs.iter_mut().zip(&self.values) {
                *x = v[card];
            }
            let steps = audit.observe(&xs)?;
            trajectory.push(audit.p_value());
            observer(&DrawRecord {
                j: audit.draws(),
                card,
                steps,
            });
            decision = audit.decision();
            if decision.is_some() {
                break;
            }
        }
        let decision = decision.unwrap_or(AuditDecision::FullCount);
        let draws_examined = audit.draws();
        Ok(AuditResult {
            decision,
            n_draws: match decision {
                AuditDecision::Certified => draws_examined,
                AuditDecision::FullCount => population,
            },
            draws_examined,
            p_trajectory: trajectory,
            assertions: audit.outcomes(),
        })
    }

    /// Runs the audit and writes its log as NDJSON: a header line carrying
    /// the seed and the full sampling order, one line per draw, and a final
    /// result line.
    pub fn run_logged(
        &self,
        instance: &LinkedInstance,
        contest: &Contest,
        config: &AuditConfig,
        mut out: impl Write,
    ) -> Result<AuditResult, AuditError> {
        let labels: Vec<String> = self.targets.iter().map(|t| t.assorter.label()).collect();
        let order: Vec<&str> = SamplePlan::new(config.seed, self.population())
            .map(|i| instance.card_ids()[i].as_str())
            .collect();
        let header = serde_json::json!({
            "type": "header",
            "seed": config.seed,
            "alpha": config.alpha,
            "N": self.population(),
            "assertions": labels,
            "permutation": order,
        });
        writeln!(out, "{header}")?;
        let mut io_error = None;
        let result = self.run_with(config, |rec| {
            if io_error.is_some() {
                return;
            }
            let line = draw_line(rec, instance, contest, &labels);
            if let Err(e) = writeln!(out, "{line}") {
                io_error = Some(e);
            }
        })?;
        if let Some(e) = io_error {
            return Err(e.into());
        }
        let summary = serde_json::json!({ "type": "result", "result": result });
        writeln!(out, "{summary}")?;
        Ok(result)
    }
}

fn draw_line(rec: &DrawRecord, instance: &LinkedInstance, contest: &Contest, labels: &[String]) -> serde_json::Value {
    let (ballot, cvr) = instance.pair(rec.card);
    let steps: Vec<serde_json::Value> = labels
        .iter()
        .zip(&rec.steps)
        .filter_map(|(label, s)| {
            s.map(|s| {
                serde_json::json!({
                    "label": label,
                    "x": s.x,
                    "eta": s.eta,
                    "mu": s.mu,
                    "T": s.log_t.exp(),
                    "p": s.p,
                })
            })
        })
        .collect();
    serde_json::json!({
        "j": rec.j,
        "card_id": instance.card_ids()[rec.card],
        "vote": contest.vote_json(ballot),
        "cvr": contest.vote_json(cvr),
        "assertions": steps,
    })
}

/// Prepares and runs one audit.
pub fn run_audit(
    instance: &LinkedInstance,
    targets: Vec<AuditTarget>,
    config: &AuditConfig,
) -> Result<AuditResult, AuditError> {
    PreparedAudit::new(instance, targets)?.run(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assorters::plurality_assorter;
    use crate::electiondata::{Candidate, ContestKind};

    fn matching(n: usize) -> LinkedInstance {
        let votes: Vec<Vote> = (0..n).map(|i| Vote::Plurality(Candidate((i % 2) as u16))).collect();
        LinkedInstance::from_parts((0..n).map(|i| format!("c{i}")).collect(), votes.clone(), votes)
    }

    #[test]
    fn all_matching_mismatch_audit_certifies() {
        let inst = matching(10_000);
        let r = run_audit(&inst, vec![AuditTarget::mismatch(Rational::new(1, 10))], &AuditConfig::new(0.05, 1)).unwrap();
        assert_eq!(r.decision, AuditDecision::Certified);
        assert!(r.n_draws > 20 && r.n_draws < 40, "{}", r.n_draws);
        assert_eq!(r.p_trajectory.len(), r.n_draws);
        assert!(*r.p_trajectory.last().unwrap() <= 0.05);
    }

    #[test]
    fn refuses_zero_margin_and_bad_alpha() {
        let inst = matching(10);
        let e = run_audit(&inst, vec![AuditTarget::mismatch(Rational::zero())], &AuditConfig::new(0.05, 1)).unwrap_err();
        assert!(matches!(e, AuditError::ZeroMismatchMargin));
        let e = run_audit(&inst, vec![AuditTarget::mismatch(Rational::new(1, 10))], &AuditConfig::new(1.5, 1)).unwrap_err();
        assert!(matches!(e, AuditError::BadAlpha(_)));
        let contest = Contest::single_winner("p", ContestKind::Plurality, &["A", "B"]).unwrap();
        let a = plurality_assorter(Candidate(0), Candidate(1), &contest).unwrap();
        let e = run_audit(&inst, vec![AuditTarget::comparison(a, Rational::zero())], &AuditConfig::new(0.05, 1)).unwrap_err();
        assert!(matches!(e, AuditError::Assorter { .. }));
    }

    #[test]
    fn too_many_mismatches_forces_full_count() {
        let n = 1000;
        let votes: Vec<Vote> = (0..n).map(|_| Vote::Plurality(Candidate(0))).collect();
        let ballots: Vec<Vote> = (0..n)
            .map(|i| if i % 10 == 0 { Vote::Null } else { Vote::Plurality(Candidate(0)) })
            .collect();
        let inst = LinkedInstance::from_parts((0..n).map(|i| format!("c{i}")).collect(), votes, ballots);
        let r = run_audit(&inst, vec![AuditTarget::mismatch(Rational::new(5, 100))], &AuditConfig::new(0.05, 3)).unwrap();
        assert_eq!(r.decision, AuditDecision::FullCount);
        assert_eq!(r.n_draws, n);
    }

    #[test]
    fn max_draws_caps_the_sample() {
        let inst = matching(1000);
        let cfg = AuditConfig {
            max_draws: Some(5),
            ..AuditConfig::new(0.05, 1)
        };
        let r = run_audit(&inst, vec![AuditTarget::mismatch(Rational::new(1, 100))], &cfg).unwrap();
        assert_eq!(r.decision, AuditDecision::FullCount);
        assert_eq!(r.draws_examined, 5);
        assert_eq!(r.n_draws, 1000);
    }

    #[test]
    fn comparison_audit_on_clean_plurality() {
        let contest = Contest::single_winner("p", ContestKind::Plurality, &["A", "B"]).unwrap();
        let n = 10_000;
        let votes: Vec<Vote> = (0..n)
            .map(|i| Vote::Plurality(Candidate(if i < 5500 { 0 } else { 1 })))
            .collect();
        let inst = LinkedInstance::from_parts((0..n).map(|i| format!("c{i}")).collect(), votes.clone(), votes.clone());
        let a = plurality_assorter(Candidate(0), Candidate(1), &contest).unwrap();
        let margin = crate::assorters::margin_over(&a, &votes);
        assert_eq!(margin, Rational::new(1, 10));
        let r = run_audit(&inst, vec![AuditTarget::comparison(a, margin)], &AuditConfig::new(0.05, 9)).unwrap();
        assert_eq!(r.decision, AuditDecision::Certified);
        assert!(r.n_draws < 80, "{}", r.n_draws);
    }

    #[test]
    fn log_has_header_draws_and_result() {
        let contest = Contest::single_winner("p", ContestKind::Plurality, &["A", "B"]).unwrap();
        let inst = matching(500);
        let prepared = PreparedAudit::new(&inst, vec![AuditTarget::mismatch(Rational::new(1, 10))]).unwrap();
        let mut buf = Vec::new();
        let r = prepared.run_logged(&inst, &contest, &AuditConfig::new(0.05, 4), &mut buf).unwrap();
        let lines: Vec<serde_json::Value> = String::from_utf8(buf)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), r.draws_examined + 2);
        assert_eq!(lines[0]["permutation"].as_array().unwrap().len(), 500);
        assert_eq!(lines[1]["j"], 1);
        assert_eq!(lines[1]["card_id"], lines[0]["permutation"][0]);
        assert_eq!(r, prepared.run(&AuditConfig::new(0.05, 4)).unwrap());
    }
}
