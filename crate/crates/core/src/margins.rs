//! CVR margins: the fewest CVRs that must be wrong for the reported outcome
//! to be wrong.
//!
//! Three sources are supported. Plurality margins have a closed form. For
//! small instances of any tabulated contest the margin can be found by
//! searching Hamming balls of increasing radius around the CVRs. Everything
//! else (STV in particular) comes in as an externally computed lower bound.
//! The last-round IRV margin is also available, but only as a diagnostic: it
//! can exceed the true margin and must never drive an audit.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::electiondata::{Candidate, Contest, ContestKind, CvrSet, Vote};
use crate::socialchoice::{outcome_equal, IrvRounds, Outcome, Profile, Tally, TabulationError};
use crate::Rational;

/// Default cap on the number of tabulations a brute-force search may run.
pub const DEFAULT_WORK_BUDGET: u64 = 100_000_000;

#[derive(Debug, Error)]
pub enum MarginError {
    #[error(transparent)]
    Tabulation(#[from] TabulationError),
    #[error("work budget of {budget} tabulations exhausted at radius {radius}")]
    BudgetExceeded { budget: u64, radius: usize },
    #[error("the count stopped on a majority with {remaining} candidates left; there is no final two-candidate round")]
    NoFinalPair { remaining: usize },
    #[error("invalid margin bound: {0}")]
    InvalidBound(String),
    #[error("cannot read margin file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed margin file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("vocabulary of all rankings is too large for {0} candidates; supply a restricted vocabulary")]
    VocabularyTooLarge(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginKind {
    Exact,
    LowerBound,
    DiagnosticUpper,
}

/// One CVR replaced in a margin witness.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WitnessChange {
    pub card: usize,
    pub replacement: Vote,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginReport {
    /// CVR margin (or bound on it), in cards.
    pub cards: u64,
    /// Number of cards N.
    pub population: u64,
    pub kind: MarginKind,
    pub witness: Option<Vec<WitnessChange>>,
    pub source: Option<String>,
}

impl MarginReport {
    pub fn new(cards: u64, population: u64, kind: MarginKind) -> Self {
        MarginReport {
            cards,
            population,
            kind,
            witness: None,
            source: None,
        }
    }

    /// V/N as an exact fraction (0 for an empty population).
    pub fn proportion(&self) -> Rational {
        if self.population == 0 {
            Rational::from_integer(0)
        } else {
            Rational::new(self.cards as i128, self.population as i128)
        }
    }

    pub fn proportion_f64(&self) -> f64 {
        if self.population == 0 {
            0.0
        } else {
            self.cards as f64 / self.population as f64
        }
    }

    /// A zero bound means a mismatch audit can never certify.
    pub fn is_degenerate(&self) -> bool {
        self.cards == 0
    }

    /// Whether this report may supply the v' of a mismatch audit.
    pub fn usable_for_audit(&self) -> bool {
        self.kind != MarginKind::DiagnosticUpper && !self.is_degenerate()
    }

    /// JSON summary with candidate names resolved.
    pub fn to_json(&self, contest: &Contest) -> serde_json::Value {
        let v = self.proportion();
        serde_json::json!({
            "V": self.cards,
            "N": self.population,
            "v": self.proportion_f64(),
            "v_exact": format!("{}/{}", v.numer(), v.denom()),
            "kind": self.kind,
            "degenerate": self.is_degenerate(),
            "source": self.source,
            "witness": self.witness.as_ref().map(|w| w.iter().map(|c| serde_json::json!({
                "card": c.card,
                "replacement": contest.vote_json(&c.replacement),
            })).collect::<Vec<_>>()),
        })
    }
}

/// Closed-form plurality margin: moving one CVR from the winner to the
/// runner-up closes the vote gap by two, and a tie already counts as a
/// different outcome.
pub fn plurality_cvr_margin(tally: &Tally, population: u64) -> MarginReport {
    let ranked = tally.ranked();
    let winner = ranked.first().map(|x| x.1).unwrap_or(0);
    let runner_up = ranked.get(1).map(|x| x.1).unwrap_or(0);
    MarginReport::new((winner - runner_up).div_ceil(2), population, MarginKind::Exact)
}

/// [`plurality_cvr_margin`] plus a witness built from the CVRs: the first V
/// winner CVRs in card order, each turned into a runner-up vote.
pub fn plurality_cvr_margin_with_witness(cvrs: &CvrSet, contest: &Contest) -> MarginReport {
    let votes = cvrs.vote_list();
    let (tally, _) = crate::socialchoice::tabulate_plurality(&votes, contest);
    let mut report = plurality_cvr_margin(&tally, votes.len() as u64);
    let ranked = tally.ranked();
    if ranked.len() >= 2 {
        let (winner, runner_up) = (ranked[0].0, ranked[1].0);
        let replacement = match contest.kind() {
            ContestKind::Plurality => Vote::Plurality(runner_up),
            _ => Vote::Ranking(vec![runner_up]),
        };
        let witness = votes
            .iter()
            .enumerate()
            .filter(|(_, v)| v.first_preference() == Some(winner))
            .take(report.cards as usize)
            .map(|(card, _)| WitnessChange {
                card,
                replacement: replacement.clone(),
            })
            .collect();
        report.witness = Some(witness);
    }
    report
}

/// Every vote a card could carry: null, and for ranked contests every
/// ordering of every non-empty subset of candidates.
pub fn default_vocabulary(contest: &Contest) -> Result<Vec<Vote>, MarginError> {
    let n = contest.num_candidates();
    let mut out = vec![Vote::Null];
    match contest.kind() {
        ContestKind::Plurality => out.extend(contest.all_candidates().map(Vote::Plurality)),
        _ => {
            if n > 6 {
                return Err(MarginError::VocabularyTooLarge(n));
            }
            let mut prefix = Vec::new();
            let mut used = vec![false; n];
            extend_rankings(n, &mut prefix, &mut used, &mut out);
        }
    }
    Ok(out)
}

fn extend_rankings(n: usize, prefix: &mut Vec<Candidate>, used: &mut [bool], out: &mut Vec<Vote>) {
    for i in 0..n {
        if used[i] {
            continue;
        }
        used[i] = true;
        prefix.push(Candidate(i as u16));
        out.push(Vote::Ranking(prefix.clone()));
        extend_rankings(n, prefix, used, out);
        prefix.pop();
        used[i] = false;
    }
}

/// Smallest Hamming radius around the CVRs whose image contains a different
/// outcome, searched exhaustively up to `max_radius`.
///
/// Cards carrying identical CVRs are interchangeable, so the search runs over
/// multisets of (CVR group, replacement) moves rather than card subsets. The
/// enumeration order is fixed, so the witness is deterministic. If no
/// radius up to `max_radius` changes the outcome the report is a lower bound
/// of `max_radius + 1`.
pub fn hamming_margin_bruteforce(
    cvrs: &CvrSet,
    contest: &Contest,
    max_radius: usize,
    vocabulary: &[Vote],
    work_budget: u64,
) -> Result<MarginReport, MarginError> {
    let votes = cvrs.vote_list();
    let population = votes.len() as u64;
    let social = Social::for_contest(contest)?;
    let mut profile = Profile::from_votes(&votes);
    let reported = social.apply(&profile);
    if reported.tie_flag {
        let mut report = MarginReport::new(0, population, MarginKind::Exact);
        report.witness = Some(Vec::new());
        return Ok(report);
    }

    // Group cards by CVR, in order of first appearance.
    let mut groups: Vec<(Vote, Vec<usize>)> = Vec::new();
    for (i, v) in votes.iter().enumerate() {
        match groups.iter_mut().find(|(g, _)| g == v) {
            Some((_, cards)) => cards.push(i),
            None => groups.push((v.clone(), vec![i])),
        }
    }
    let moves: Vec<(usize, usize)> = groups
        .iter()
        .enumerate()
        .flat_map(|(g, (v, _))| {
            vocabulary
                .iter()
                .enumerate()
                .filter(move |(_, t)| *t != v)
                .map(move |(t, _)| (g, t))
        })
        .collect();

    let mut search = Search {
        groups: &groups,
        moves: &moves,
        vocabulary,
        social: &social,
        reported: &reported,
        used: vec![0; groups.len()],
        chosen: Vec::new(),
        work: 0,
        budget: work_budget,
    };
    for radius in 1..=max_radius {
        if let Some(found) = search.descend(&mut profile, radius, 0)? {
            let mut next = vec![0usize; groups.len()];
            let witness = found
                .into_iter()
                .map(|m| {
                    let (g, t) = moves[m];
                    let card = groups[g].1[next[g]];
                    next[g] += 1;
                    WitnessChange {
                        card,
                        replacement: vocabulary[t].clone(),
                    }
                })
                .collect();
            let mut report = MarginReport::new(radius as u64, population, MarginKind::Exact);
            report.witness = Some(witness);
            return Ok(report);
        }
    }
    Ok(MarginReport::new(
        max_radius as u64 + 1,
        population,
        MarginKind::LowerBound,
    ))
}

enum Social {
    Plurality(usize),
    Irv(usize),
}

impl Social {
    fn for_contest(contest: &Contest) -> Result<Self, TabulationError> {
        match contest.kind() {
            ContestKind::Plurality => Ok(Social::Plurality(contest.num_candidates())),
            ContestKind::Irv => Ok(Social::Irv(contest.num_candidates())),
            ContestKind::Stv => Err(TabulationError::Unsupported(ContestKind::Stv)),
        }
    }

    fn apply(&self, profile: &Profile) -> Outcome {
        match *self {
            Social::Plurality(n) => profile.plurality(n),
            Social::Irv(n) => profile.irv_outcome(n),
        }
    }
}

struct Search<'a> {
    groups: &'a [(Vote, Vec<usize>)],
    moves: &'a [(usize, usize)],
    vocabulary: &'a [Vote],
    social: &'a Social,
    reported: &'a Outcome,
    used: Vec<usize>,
    chosen: Vec<usize>,
    work: u64,
    budget: u64,
}

impl Search<'_> {
    /// Chooses `remaining` more moves with index >= `from`; returns the move
    /// list of the first outcome change found.
    fn descend(
        &mut self,
        profile: &mut Profile,
        remaining: usize,
        from: usize,
    ) -> Result<Option<Vec<usize>>, MarginError> {
        if remaining == 0 {
            self.work += 1;
            if self.work > self.budget {
                return Err(MarginError::BudgetExceeded {
                    budget: self.budget,
                    radius: self.chosen.len(),
                });
            }
            let outcome = self.social.apply(profile);
            return Ok((!outcome_equal(&outcome, self.reported)).then(|| self.chosen.clone()));
        }
        for m in from..self.moves.len() {
            let (g, t) = self.moves[m];
            if self.used[g] == self.groups[g].1.len() {
                continue;
            }
            let source = self.groups[g].0.preferences();
            let target = self.vocabulary[t].preferences();
            self.used[g] += 1;
            self.chosen.push(m);
            profile.add(source, -1);
            profile.add(target, 1);
            let found = self.descend(profile, remaining - 1, m)?;
            profile.add(target, -1);
            profile.add(source, 1);
            self.chosen.pop();
            self.used[g] -= 1;
            if found.is_some() {
                return Ok(found);
            }
        }
        Ok(None)
    }
}

/// Last-round margin of an IRV count: half the final-round gap, rounded up.
///
/// This is an upper bound on the CVR margin, reported as a diagnostic only.
pub fn irv_last_round_margin(rounds: &IrvRounds, population: u64) -> Result<MarginReport, MarginError> {
    let last = rounds
        .rounds
        .last()
        .ok_or(MarginError::NoFinalPair { remaining: 0 })?;
    if last.tallies.len() != 2 {
        return Err(MarginError::NoFinalPair {
            remaining: last.tallies.len(),
        });
    }
    let (a, b) = (last.tallies[0].1, last.tallies[1].1);
    Ok(MarginReport::new(
        a.abs_diff(b).div_ceil(2),
        population,
        MarginKind::DiagnosticUpper,
    ))
}

/// External lower bound file: `{"V_minus": 436, "source": "..."}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExternalMargin {
    #[serde(rename = "V_minus")]
    pub v_minus: i64,
    #[serde(default)]
    pub source: Option<String>,
}

impl ExternalMargin {
    /// Validates the bound against the number of cards.
    pub fn into_report(self, population: u64) -> Result<MarginReport, MarginError> {
        if self.v_minus < 0 {
            return Err(MarginError::InvalidBound(format!("V_minus = {} is negative", self.v_minus)));
        }
        if self.v_minus as u64 > population {
            return Err(MarginError::InvalidBound(format!(
                "V_minus = {} exceeds N = {population}",
                self.v_minus
            )));
        }
        let mut report = MarginReport::new(self.v_minus as u64, population, MarginKind::LowerBound);
        report.source = self.source;
        Ok(report)
    }
}

pub fn load_external_margin(path: impl AsRef<Path>, population: u64) -> Result<MarginReport, MarginError> {
    let m: ExternalMargin = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    m.into_report(population)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::socialchoice::tabulate_plurality;

    fn plurality(names: &[&str]) -> Contest {
        Contest::single_winner("p", ContestKind::Plurality, names).unwrap()
    }

    fn tally(counts: Vec<u64>) -> Tally {
        Tally { counts, null_votes: 0 }
    }

    #[test]
    fn plurality_formula() {
        assert_eq!(plurality_cvr_margin(&tally(vec![26, 15]), 41).cards, 6);
        assert_eq!(plurality_cvr_margin(&tally(vec![30, 20]), 50).cards, 5);
        assert_eq!(plurality_cvr_margin(&tally(vec![7, 7, 1]), 15).cards, 0);
        let r = plurality_cvr_margin(&tally(vec![26, 15]), 41);
        assert_eq!(r.proportion(), Rational::new(6, 41));
        assert_eq!(r.kind, MarginKind::Exact);
    }

    #[test]
    fn plurality_bruteforce_agrees_on_reduction() {
        // 26 for the winner, 15 for the runner-up.
        let c = plurality(&["Ali", "Dee"]);
        let votes: Vec<Vote> = std::iter::repeat_n(Vote::Plurality(Candidate(0)), 26)
            .chain(std::iter::repeat_n(Vote::Plurality(Candidate(1)), 15))
            .collect();
        let cvrs = CvrSet::from_votes(votes.into_iter().enumerate().map(|(i, v)| (format!("c{i}"), v))).unwrap();
        let vocab = default_vocabulary(&c).unwrap();
        let brute = hamming_margin_bruteforce(&cvrs, &c, 8, &vocab, DEFAULT_WORK_BUDGET).unwrap();
        assert_eq!(brute.cards, 6);
        assert_eq!(brute.kind, MarginKind::Exact);
        let closed = plurality_cvr_margin_with_witness(&cvrs, &c);
        assert_eq!(closed.cards, 6);
        assert_eq!(closed.witness.unwrap().len(), 6);
    }

    #[test]
    fn radius_zero_is_lower_bound_one() {
        let c = plurality(&["A", "B"]);
        let cvrs = CvrSet::from_votes([("x".to_string(), Vote::Plurality(Candidate(0)))]).unwrap();
        let r = hamming_margin_bruteforce(&cvrs, &c, 0, &default_vocabulary(&c).unwrap(), 10).unwrap();
        assert_eq!(r.kind, MarginKind::LowerBound);
        assert_eq!(r.cards, 1);
    }

    #[test]
    fn budget_is_enforced() {
        let c = plurality(&["A", "B", "C"]);
        let votes = (0..30).map(|i| (format!("c{i}"), Vote::Plurality(Candidate((i % 3) as u16))));
        let mut cvrs: Vec<(String, Vote)> = votes.collect();
        cvrs.extend((0..20).map(|i| (format!("a{i}"), Vote::Plurality(Candidate(0)))));
        let cvrs = CvrSet::from_votes(cvrs).unwrap();
        let err = hamming_margin_bruteforce(&cvrs, &c, 20, &default_vocabulary(&c).unwrap(), 50).unwrap_err();
        assert!(matches!(err, MarginError::BudgetExceeded { budget: 50, .. }));
    }

    #[test]
    fn last_round_margin_final_tie_and_refusal() {
        use crate::socialchoice::{IrvRound, IrvRounds};
        let tied = IrvRounds {
            rounds: vec![IrvRound {
                tallies: vec![(Candidate(0), 10), (Candidate(1), 10)],
                exhausted: 0,
            }],
            eliminated: vec![],
            elimination_tie: false,
            majority_stop: false,
        };
        assert_eq!(irv_last_round_margin(&tied, 20).unwrap().cards, 0);
        let early = IrvRounds {
            rounds: vec![IrvRound {
                tallies: vec![(Candidate(0), 10), (Candidate(1), 2), (Candidate(2), 1)],
                exhausted: 0,
            }],
            eliminated: vec![],
            elimination_tie: false,
            majority_stop: true,
        };
        assert!(matches!(
            irv_last_round_margin(&early, 13),
            Err(MarginError::NoFinalPair { remaining: 3 })
        ));
    }

    #[test]
    fn external_margins() {
        let r = ExternalMargin { v_minus: 436, source: Some("t".into()) }.into_report(6886).unwrap();
        assert_eq!(r.kind, MarginKind::LowerBound);
        assert!((r.proportion_f64() - 0.0633).abs() < 5e-5);
        let r = ExternalMargin { v_minus: 161, source: Some("t".into()) }.into_report(8869).unwrap();
        assert!((r.proportion_f64() - 0.0182).abs() < 5e-5);
        let zero = ExternalMargin { v_minus: 0, source: Some("t".into()) }.into_report(100).unwrap();
        assert!(zero.is_degenerate());
        assert!(!zero.usable_for_audit());
        assert!(ExternalMargin { v_minus: -1, source: None }.into_report(10).is_err());
        assert!(ExternalMargin { v_minus: 11, source: None }.into_report(10).is_err());
    }

    #[test]
    fn external_margin_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(&path, r#"{"V_minus": 436, "source": "Lower Deeside"}"#).unwrap();
        let r = load_external_margin(&path, 6886).unwrap();
        assert_eq!(r.cards, 436);
        assert_eq!(r.source.as_deref(), Some("Lower Deeside"));
    }

    #[test]
    fn witness_changes_outcome() {
        let c = plurality(&["A", "B", "C"]);
        let votes: Vec<Vote> = [0, 0, 0, 0, 1, 1, 2, 0]
            .iter()
            .map(|&i| Vote::Plurality(Candidate(i)))
            .collect();
        let cvrs = CvrSet::from_votes(votes.iter().cloned().enumerate().map(|(i, v)| (format!("{i}"), v))).unwrap();
        let r = hamming_margin_bruteforce(&cvrs, &c, 4, &default_vocabulary(&c).unwrap(), 1_000_000).unwrap();
        let mut modified = votes.clone();
        for w in r.witness.as_ref().unwrap() {
            modified[w.card] = w.replacement.clone();
        }
        let (_, before) = tabulate_plurality(&votes, &c);
        let (_, after) = tabulate_plurality(&modified, &c);
        assert!(!outcome_equal(&before, &after));
        assert_eq!(r.cards, 2);
    }
}
