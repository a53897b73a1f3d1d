//! Synthetic (ballot, CVR) populations with a chosen CVR margin and mismatch
//! rate.

use std::path::PathBuf;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assorters::{
    irv_assertion_assorters, margin_over, parse_assertions, plurality_assorter, AssertionSet, Assorter, AssorterError,
};
use crate::electiondata::{Candidate, Contest, ContestKind, CvrSet, ElectionDataError, LinkedInstance, Vote};
use crate::margins::{
    default_vocabulary, hamming_margin_bruteforce, irv_last_round_margin, load_external_margin, MarginError,
    MarginKind, MarginReport, DEFAULT_WORK_BUDGET,
};
use crate::socialchoice::{outcome_equal, tabulate, tabulate_irv, TabulationError};
use crate::Rational;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("infeasible scenario: {0}")]
    Infeasible(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Data(#[from] ElectionDataError),
    #[error(transparent)]
    Assorter(#[from] AssorterError),
    #[error(transparent)]
    Margin(#[from] MarginError),
    #[error(transparent)]
    Tabulation(#[from] TabulationError),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing assertions: {0}")]
    Assertions(#[from] serde_json::Error),
}

/// How ballots come to differ from their CVRs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorModel {
    /// Plurality: every error is a 2-vote understatement.
    TwoUnder,
    /// Plurality: every error is a 2-vote overstatement.
    TwoOver,
    /// Plurality: the ballot is a uniformly chosen other vote (null
    /// included); every CVR is a valid vote.
    #[serde(rename = "random_100_0")]
    Random100_0,
    /// As `Random100_0`, but 80% of the CVRs are null.
    #[serde(rename = "random_20_80")]
    Random20_80,
    /// IRV: understatements of the smallest-margin assertion.
    Under,
    /// IRV: overstatements of the smallest-margin assertion.
    Over,
    /// IRV: preferences cut after a random position.
    Truncate,
    /// IRV: a random ranking of a length drawn from the CVRs.
    Random,
    /// STV: arbitrary distinct rankings.
    Flip,
}

impl ErrorModel {
    pub fn kind(self) -> ContestKind {
        match self {
            ErrorModel::TwoUnder | ErrorModel::TwoOver | ErrorModel::Random100_0 | ErrorModel::Random20_80 => {
                ContestKind::Plurality
            }
            ErrorModel::Under | ErrorModel::Over | ErrorModel::Truncate | ErrorModel::Random => ContestKind::Irv,
            ErrorModel::Flip => ContestKind::Stv,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorModel::TwoUnder => "two_under",
            ErrorModel::TwoOver => "two_over",
            ErrorModel::Random100_0 => "random_100_0",
            ErrorModel::Random20_80 => "random_20_80",
            ErrorModel::Under => "under",
            ErrorModel::Over => "over",
            ErrorModel::Truncate => "truncate",
            ErrorModel::Random => "random",
            ErrorModel::Flip => "flip",
        }
    }
}

/// Files describing a real IRV contest to perturb.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrvBase {
    pub contest: PathBuf,
    pub cvrs: PathBuf,
    pub assertions: PathBuf,
    /// External margin file; without one the margin is found by brute force.
    #[serde(default)]
    pub margin: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ContestKind,
    #[serde(rename = "N", default)]
    pub n: usize,
    /// Target CVR margin proportion (plurality) or margin lower bound (STV).
    #[serde(default)]
    pub v: f64,
    pub m: f64,
    pub model: ErrorModel,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub base: Option<IrvBase>,
}

impl ScenarioSpec {
    pub fn plurality(n: usize, v: f64, m: f64, model: ErrorModel, seed: u64) -> Self {
        ScenarioSpec {
            kind: ContestKind::Plurality,
            n,
            v,
            m,
            model,
            seed,
            base: None,
        }
    }

    pub fn stv(n: usize, v: f64, m: f64, seed: u64) -> Self {
        ScenarioSpec {
            kind: ContestKind::Stv,
            n,
            v,
            m,
            model: ErrorModel::Flip,
            seed,
            base: None,
        }
    }
}

/// A generated population ready to audit.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub contest: Contest,
    pub instance: LinkedInstance,
    /// Margin used as v' by a mismatch audit.
    pub margin: MarginReport,
    /// Assorters and CVR margins for a comparison audit (empty for STV).
    pub comparison: Vec<(Assorter, Rational)>,
    /// Whether tabulating the ballots gives the reported (CVR) outcome.
    pub outcome_correct: bool,
}

/// Summary metadata recorded with a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "V")]
    pub v_cards: u64,
    #[serde(rename = "M")]
    pub mismatches: usize,
    pub margin_kind: MarginKind,
    pub outcome_correct: bool,
}

impl Scenario {
    pub fn summary(&self) -> ScenarioSummary {
        ScenarioSummary {
            n: self.instance.len(),
            v_cards: self.margin.cards,
            mismatches: self.instance.mismatch_count(),
            margin_kind: self.margin.kind,
            outcome_correct: self.outcome_correct,
        }
    }
}

/// `round(x * n)` with ties to even.
pub fn round_count(x: f64, n: usize) -> usize {
    (x * n as f64).round_ties_even().max(0.0) as usize
}

fn card_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i}")).collect()
}

fn check_rate(name: &str, x: f64, lo_open: bool) -> Result<(), ScenarioError> {
    let ok = if lo_open { x > 0.0 && x < 1.0 } else { (0.0..1.0).contains(&x) };
    if ok {
        Ok(())
    } else {
        Err(ScenarioError::Invalid(format!("{name} = {x} is out of range")))
    }
}

/// Generates the scenario a spec describes.
pub fn generate(spec: &ScenarioSpec) -> Result<Scenario, ScenarioError> {
    if spec.model.kind() != spec.kind {
        return Err(ScenarioError::Invalid(format!(
            "error model {} does not apply to {} contests",
            spec.model.name(),
            spec.kind
        )));
    }
    match spec.kind {
        ContestKind::Plurality => gen_plurality(spec),
        ContestKind::Stv => gen_stv(spec.n, round_count(spec.v, spec.n) as u64, spec.m, spec.seed),
        ContestKind::Irv => {
            let base = spec
                .base
                .as_ref()
                .ok_or_else(|| ScenarioError::Invalid("IRV scenarios need base contest files".into()))?;
            let contest = Contest::load(&base.contest)?;
            let cvrs = CvrSet::load(&base.cvrs, &contest)?;
            let text = std::fs::read_to_string(&base.assertions).map_err(|source| ScenarioError::Io {
                path: base.assertions.clone(),
                source,
            })?;
            let votes = cvrs.vote_list();
            let assertions = irv_assertion_assorters(&parse_assertions(&text)?, &contest, &votes)?;
            let margin = match &base.margin {
                Some(path) => load_external_margin(path, cvrs.len() as u64)?,
                None => irv_margin(&cvrs, &contest)?,
            };
            let instance = gen_irv(&contest, &cvrs, &assertions, spec.m, spec.model, spec.seed)?;
            let outcome_correct = outcome_equal(
                &tabulate(instance.ballots(), &contest)?,
                &tabulate(instance.cvrs(), &contest)?,
            );
            Ok(Scenario {
                contest,
                instance,
                margin,
                comparison: assertions.assertions.into_iter().zip(assertions.margins).collect(),
                outcome_correct,
            })
        }
    }
}

/// Exact IRV margin by brute force, searching up to one below the last-round
/// margin (which is attained whenever nothing smaller is found).
pub fn irv_margin(cvrs: &CvrSet, contest: &Contest) -> Result<MarginReport, ScenarioError> {
    let votes = cvrs.vote_list();
    let (rounds, _) = tabulate_irv(&votes, contest)?;
    let n = cvrs.len() as u64;
    let cap = irv_last_round_margin(&rounds, n).map(|r| r.cards).ok();
    let vocabulary = default_vocabulary(contest)?;
    let radius = cap.map_or(2, |c| c.saturating_sub(1) as usize);
    let mut report = hamming_margin_bruteforce(cvrs, contest, radius, &vocabulary, DEFAULT_WORK_BUDGET)?;
    if report.kind == MarginKind::LowerBound && cap == Some(report.cards) {
        report.kind = MarginKind::Exact;
    }
    Ok(report)
}

/// Two-candidate plurality population: winner "W", loser "L".
///
/// The CVRs hold `W - L = 2V` with as few nulls as parity allows (or about
/// 80% nulls for `random_20_80`); exactly `M` uniformly chosen eligible cards
/// get a ballot that differs from the CVR.
pub fn gen_plurality(spec: &ScenarioSpec) -> Result<Scenario, ScenarioError> {
    check_rate("v", spec.v, true)?;
    check_rate("m", spec.m, false)?;
    let n = spec.n;
    let margin = round_count(spec.v, n);
    let mismatches = round_count(spec.m, n);
    let mut nulls = match spec.model {
        ErrorModel::TwoUnder | ErrorModel::TwoOver | ErrorModel::Random100_0 => 0,
        ErrorModel::Random20_80 => round_count(0.8, n),
        other => {
            return Err(ScenarioError::Invalid(format!(
                "{} is not a plurality error model",
                other.name()
            )))
        }
    };
    if (n - nulls) % 2 == 1 {
        nulls += 1;
    }
    let valid = n - nulls;
    if 2 * margin > valid || margin == 0 {
        return Err(ScenarioError::Infeasible(format!(
            "margin V = {margin} needs 0 < 2V <= {valid} valid CVRs"
        )));
    }
    let winners = (valid + 2 * margin) / 2;
    let losers = valid - winners;
    let (w, l) = (Candidate(0), Candidate(1));
    let contest = Contest::single_winner("plurality", ContestKind::Plurality, &["W", "L"])?;
    let cvrs: Vec<Vote> = std::iter::repeat_n(Vote::Plurality(w), winners)
        .chain(std::iter::repeat_n(Vote::Plurality(l), losers))
        .chain(std::iter::repeat_n(Vote::Null, nulls))
        .collect();
    let eligible = match spec.model {
        ErrorModel::TwoUnder => winners..winners + losers,
        ErrorModel::TwoOver => 0..winners,
        _ => 0..n,
    };
    if mismatches > eligible.len() {
        return Err(ScenarioError::Infeasible(format!(
            "{} needs M = {mismatches} <= {} eligible CVRs",
            spec.model.name(),
            eligible.len()
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let mut ballots = cvrs.clone();
    let mut chosen = sample(&mut rng, eligible.len(), mismatches).into_vec();
    chosen.sort_unstable();
    let options = [Vote::Plurality(w), Vote::Plurality(l), Vote::Null];
    for k in chosen {
        let i = eligible.start + k;
        ballots[i] = match spec.model {
            ErrorModel::TwoUnder => Vote::Plurality(w),
            ErrorModel::TwoOver => Vote::Plurality(l),
            _ => {
                let others: Vec<&Vote> = options.iter().filter(|o| **o != cvrs[i]).collect();
                others[rng.random_range(0..others.len())].clone()
            }
        };
    }
    let assorter = plurality_assorter(w, l, &contest)?;
    let nu = margin_over(&assorter, &cvrs);
    let outcome_correct = outcome_equal(&tabulate(&ballots, &contest)?, &tabulate(&cvrs, &contest)?);
    Ok(Scenario {
        contest,
        instance: LinkedInstance::from_parts(card_ids(n), cvrs, ballots),
        margin: MarginReport::new(margin as u64, n as u64, MarginKind::Exact),
        comparison: vec![(assorter, nu)],
        outcome_correct,
    })
}

/// Perturbs `M = round(m N)` IRV ballots away from their CVRs.
///
/// `under` and `over` move the smallest-margin assertion's assorter by a full
/// unit on cards that allow it, taken in card order, and by half a unit on
/// further cards once those run out. `truncate` keeps a uniformly chosen
/// proper prefix of the ranking (a null CVR gets one random candidate);
/// `random` draws a fresh ranking whose length is that of a random CVR.
pub fn gen_irv(
    contest: &Contest,
    cvrs: &CvrSet,
    assertions: &AssertionSet,
    m: f64,
    model: ErrorModel,
    seed: u64,
) -> Result<LinkedInstance, ScenarioError> {
    check_rate("m", m, false)?;
    let votes = cvrs.vote_list();
    let n = votes.len();
    let mismatches = round_count(m, n);
    let mut ballots = votes.clone();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    match model {
        ErrorModel::Under | ErrorModel::Over => {
            let idx = assertions
                .min_margin_index()
                .ok_or_else(|| ScenarioError::Invalid("empty assertion set".into()))?;
            let a = &assertions.assertions[idx];
            let (w, l) = (Vote::Ranking(vec![a.winner()]), Vote::Ranking(vec![a.loser()]));
            let (full_from, half_from, target) = if model == ErrorModel::Over {
                (Rational::from_integer(1), Rational::new(1, 2), l)
            } else {
                (Rational::from_integer(0), Rational::new(1, 2), w)
            };
            let values: Vec<Rational> = votes.iter().map(|v| a.value(v)).collect();
            let full: Vec<usize> = (0..n).filter(|&i| values[i] == full_from).collect();
            let half: Vec<usize> = (0..n).filter(|&i| values[i] == half_from).collect();
            if mismatches > full.len() + half.len() {
                return Err(ScenarioError::Infeasible(format!(
                    "M = {mismatches} exceeds the {} cards whose {} can move",
                    full.len() + half.len(),
                    a.label
                )));
            }
            for &i in full.iter().chain(&half).take(mismatches) {
                ballots[i] = target.clone();
            }
        }
        ErrorModel::Truncate => {
            for i in chosen(&mut rng, n, mismatches) {
                let prefs = votes[i].preferences();
                ballots[i] = if prefs.is_empty() {
                    Vote::Ranking(vec![random_candidate(&mut rng, contest)])
                } else {
                    truncate(&votes[i], rng.random_range(0..prefs.len()))
                };
            }
        }
        ErrorModel::Random => {
            if contest.num_candidates() < 2 && mismatches > 0 {
                return Err(ScenarioError::Infeasible("one candidate admits no other ranking".into()));
            }
            for i in chosen(&mut rng, n, mismatches) {
                ballots[i] = loop {
                    let len = votes[rng.random_range(0..n)].preferences().len();
                    let b = random_ranking(&mut rng, contest, len);
                    if b != votes[i] {
                        break b;
                    }
                };
            }
        }
        other => {
            return Err(ScenarioError::Invalid(format!("{} is not an IRV error model", other.name())));
        }
    }
    Ok(LinkedInstance::from_parts(
        cvrs.records().iter().map(|r| r.card_id.clone()).collect(),
        votes,
        ballots,
    ))
}

/// The first `keep` preferences of `vote`.
pub fn truncate(vote: &Vote, keep: usize) -> Vote {
    let prefs = vote.preferences();
    Vote::ranking(prefs[..keep.min(prefs.len())].to_vec())
}

/// Synthetic STV population of `n` cards with a margin lower bound of
/// `v_minus` cards and exactly `round(m n)` mismatching cards. Only the
/// mismatch audit applies, so vote content is arbitrary.
pub fn gen_stv(n: usize, v_minus: u64, m: f64, seed: u64) -> Result<Scenario, ScenarioError> {
    check_rate("m", m, false)?;
    if n == 0 || v_minus as usize > n {
        return Err(ScenarioError::Invalid(format!("V- = {v_minus} must lie in [0, N = {n}]")));
    }
    let names: Vec<String> = (1..=7).map(|i| format!("S{i}")).collect();
    let contest = Contest::new("stv", ContestKind::Stv, names, 3)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let k = contest.num_candidates();
    let cvrs: Vec<Vote> = (0..n)
        .map(|_| {
            let len = rng.random_range(1..=k);
            random_ranking(&mut rng, &contest, len)
        })
        .collect();
    let mut ballots = cvrs.clone();
    for i in chosen(&mut rng, n, round_count(m, n)) {
        ballots[i] = loop {
            let len = rng.random_range(0..=k);
            let b = random_ranking(&mut rng, &contest, len);
            if b != cvrs[i] {
                break b;
            }
        };
    }
    let mut margin = MarginReport::new(v_minus, n as u64, MarginKind::LowerBound);
    margin.source = Some("synthetic".into());
    Ok(Scenario {
        contest,
        instance: LinkedInstance::from_parts(card_ids(n), cvrs, ballots),
        margin,
        comparison: Vec::new(),
        // STV is not tabulated; a margin lower bound above the mismatch count
        // guarantees the outcome.
        outcome_correct: (round_count(m, n) as u64) < v_minus,
    })
}

fn chosen(rng: &mut ChaCha20Rng, n: usize, k: usize) -> Vec<usize> {
    let mut v = sample(rng, n, k.min(n)).into_vec();
    v.sort_unstable();
    v
}

fn random_candidate(rng: &mut ChaCha20Rng, contest: &Contest) -> Candidate {
    Candidate(rng.random_range(0..contest.num_candidates()) as u16)
}

fn random_ranking(rng: &mut ChaCha20Rng, contest: &Contest, len: usize) -> Vote {
    let mut all: Vec<Candidate> = contest.all_candidates().collect();
    all.shuffle(rng);
    all.truncate(len);
    Vote::ranking(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::electiondata::CardRecord;
    use crate::margins::plurality_cvr_margin;
    use crate::socialchoice::tabulate_plurality;

    #[test]
    fn plurality_composition_and_margin() {
        let s = gen_plurality(&ScenarioSpec::plurality(10_000, 0.01, 0.0, ErrorModel::TwoOver, 1)).unwrap();
        let (tally, _) = tabulate_plurality(s.instance.cvrs(), &s.contest);
        assert_eq!(tally.counts, vec![5100, 4900]);
        assert_eq!(plurality_cvr_margin(&tally, 10_000).cards, 100);
        assert_eq!(s.instance.mismatch_count(), 0);
        assert_eq!(s.comparison[0].1, Rational::new(2, 100));
        assert!(s.outcome_correct);
    }

    #[test]
    fn two_over_errors_are_winner_to_loser() {
        let s = gen_plurality(&ScenarioSpec::plurality(10_000, 0.02, 0.001, ErrorModel::TwoOver, 7)).unwrap();
        let inst = &s.instance;
        let diffs: Vec<usize> = (0..inst.len()).filter(|&i| inst.cvrs()[i] != inst.ballots()[i]).collect();
        assert_eq!(diffs.len(), 10);
        for i in diffs {
            assert_eq!(inst.cvrs()[i], Vote::Plurality(Candidate(0)));
            assert_eq!(inst.ballots()[i], Vote::Plurality(Candidate(1)));
        }
    }

    #[test]
    fn twenty_eighty_has_eight_thousand_nulls() {
        let s = gen_plurality(&ScenarioSpec::plurality(10_000, 0.01, 0.003, ErrorModel::Random20_80, 2)).unwrap();
        assert_eq!(s.instance.cvrs().iter().filter(|v| v.is_null()).count(), 8000);
        assert_eq!(s.instance.mismatch_count(), 30);
        let (tally, _) = tabulate_plurality(s.instance.cvrs(), &s.contest);
        assert_eq!(plurality_cvr_margin(&tally, 10_000).cards, 100);
    }

    #[test]
    fn odd_population_gets_one_null() {
        let s = gen_plurality(&ScenarioSpec::plurality(1001, 0.01, 0.0, ErrorModel::TwoUnder, 2)).unwrap();
        assert_eq!(s.instance.cvrs().iter().filter(|v| v.is_null()).count(), 1);
        assert_eq!(s.margin.cards, 10);
    }

    #[test]
    fn infeasible_counts_are_reported() {
        let e = gen_plurality(&ScenarioSpec::plurality(100, 0.5, 0.9, ErrorModel::TwoUnder, 0)).unwrap_err();
        assert!(matches!(e, ScenarioError::Infeasible(_)), "{e}");
        assert!(gen_plurality(&ScenarioSpec::plurality(100, 0.0, 0.0, ErrorModel::TwoUnder, 0)).is_err());
    }

    #[test]
    fn same_seed_same_instance() {
        let spec = ScenarioSpec::plurality(2000, 0.02, 0.01, ErrorModel::Random100_0, 5);
        assert_eq!(gen_plurality(&spec).unwrap().instance, gen_plurality(&spec).unwrap().instance);
    }

    #[test]
    fn stv_mismatch_count_is_exact() {
        let s = gen_stv(8869, 161, 0.003, 3).unwrap();
        assert_eq!(s.instance.mismatch_count(), 27);
        assert_eq!(s.margin.kind, MarginKind::LowerBound);
        assert_eq!(s.margin.cards, 161);
        assert_eq!(gen_stv(100, 5, 0.0, 3).unwrap().instance.mismatch_count(), 0);
    }

    fn small_irv() -> (Contest, CvrSet) {
        let c = Contest::single_winner("e", ContestKind::Irv, &["Ali", "Bob", "Cal"]).unwrap();
        let r = |x: &[u16]| Vote::ranking(x.iter().map(|&i| Candidate(i)).collect());
        let mut votes = vec![r(&[0, 1]); 6];
        votes.extend(vec![r(&[1, 0]); 4]);
        votes.extend(vec![r(&[2, 1]); 3]);
        votes.push(Vote::Null);
        let records = votes
            .into_iter()
            .enumerate()
            .map(|(i, vote)| CardRecord {
                card_id: format!("k{i}"),
                vote,
            })
            .collect();
        (c, CvrSet::new(records).unwrap())
    }

    #[test]
    fn truncation_keeps_a_proper_prefix() {
        let (c, cvrs) = small_irv();
        let inst = gen_irv(&c, &cvrs, &AssertionSet { assertions: vec![], margins: vec![] }, 0.5, ErrorModel::Truncate, 4).unwrap();
        assert_eq!(inst.mismatch_count(), 7);
        for i in 0..inst.len() {
            let (b, cv) = inst.pair(i);
            if b != cv {
                let (bp, cp) = (b.preferences(), cv.preferences());
                if cp.is_empty() {
                    assert_eq!(bp.len(), 1);
                } else {
                    assert!(bp.len() < cp.len() && cp.starts_with(bp));
                }
            }
        }
    }

    #[test]
    fn random_ballots_differ_from_cvrs() {
        let (c, cvrs) = small_irv();
        let inst = gen_irv(&c, &cvrs, &AssertionSet { assertions: vec![], margins: vec![] }, 0.99, ErrorModel::Random, 4).unwrap();
        assert_eq!(inst.mismatch_count(), 14);
    }
}
