//! Plurality and instant-runoff tabulation.

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::electiondata::{Candidate, Contest, ContestKind, Vote};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TabulationError {
    #[error("{0} contests are not tabulated here; supply the reported outcome and a margin bound instead")]
    Unsupported(ContestKind),
    #[error("a {expected} contest was expected, got {found}")]
    WrongKind { expected: ContestKind, found: ContestKind },
}

/// The result of applying the social choice function.
///
/// A tie is its own outcome: when `tie_flag` is set, `winners` lists every
/// candidate who could win depending on how the tie is resolved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Outcome {
    pub winners: BTreeSet<Candidate>,
    pub tie_flag: bool,
}

impl Outcome {
    pub fn single(c: Candidate) -> Self {
        Outcome {
            winners: BTreeSet::from([c]),
            tie_flag: false,
        }
    }

    pub fn winner(&self) -> Option<Candidate> {
        if self.tie_flag || self.winners.len() != 1 {
            None
        } else {
            self.winners.iter().next().copied()
        }
    }
}

/// True iff both outcomes name the same winners and neither is a tie.
pub fn outcome_equal(a: &Outcome, b: &Outcome) -> bool {
    !a.tie_flag && !b.tie_flag && a.winners == b.winners
}

/// Vote counts indexed by candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Tally {
    pub counts: Vec<u64>,
    pub null_votes: u64,
}

impl Tally {
    pub fn count(&self, c: Candidate) -> u64 {
        self.counts[c.index()]
    }

    /// Candidates by descending count; ties keep candidate-list order.
    pub fn ranked(&self) -> Vec<(Candidate, u64)> {
        let mut v: Vec<(Candidate, u64)> = self
            .counts
            .iter()
            .enumerate()
            .map(|(i, &n)| (Candidate(i as u16), n))
            .collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }
}

/// First-preference count. Null votes (and empty rankings) are ignored.
pub fn tabulate_plurality(votes: &[Vote], contest: &Contest) -> (Tally, Outcome) {
    let mut counts = vec![0u64; contest.num_candidates()];
    let mut null_votes = 0;
    for v in votes {
        match v.first_preference() {
            Some(c) => counts[c.index()] += 1,
            None => null_votes += 1,
        }
    }
    let tally = Tally { counts, null_votes };
    let outcome = plurality_outcome(&tally.counts);
    (tally, outcome)
}

pub(crate) fn plurality_outcome(counts: &[u64]) -> Outcome {
    let top = counts.iter().copied().max().unwrap_or(0);
    let winners: BTreeSet<Candidate> = counts
        .iter()
        .enumerate()
        .filter(|(_, &n)| n == top)
        .map(|(i, _)| Candidate(i as u16))
        .collect();
    let tie_flag = winners.len() != 1;
    Outcome { winners, tie_flag }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IrvRound {
    /// Tallies of the candidates continuing in this round, in candidate order.
    pub tallies: Vec<(Candidate, u64)>,
    /// Cards with no continuing preference, cumulative (null votes included).
    pub exhausted: u64,
}

impl IrvRound {
    pub fn tally_of(&self, c: Candidate) -> Option<u64> {
        self.tallies.iter().find(|(x, _)| *x == c).map(|(_, n)| *n)
    }

    pub fn continuing_total(&self) -> u64 {
        self.tallies.iter().map(|(_, n)| n).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IrvRounds {
    pub rounds: Vec<IrvRound>,
    pub eliminated: Vec<Candidate>,
    /// Set when some elimination had to be decided by candidate-list order.
    pub elimination_tie: bool,
    /// Set when the count stopped because a candidate held a strict majority
    /// of continuing cards while three or more candidates remained.
    pub majority_stop: bool,
}

/// Instant-runoff count with full round records.
///
/// Each round eliminates the continuing candidate with the fewest votes
/// (ties: earliest in the candidate list) until one candidate remains or one
/// holds a strict majority of the continuing cards. When an elimination tie
/// could change the winner the outcome is flagged as a tie listing every
/// candidate reachable by some resolution of the tie.
pub fn tabulate_irv(votes: &[Vote], contest: &Contest) -> Result<(IrvRounds, Outcome), TabulationError> {
    match contest.kind() {
        ContestKind::Irv => {}
        ContestKind::Stv => return Err(TabulationError::Unsupported(ContestKind::Stv)),
        found => {
            return Err(TabulationError::WrongKind {
                expected: ContestKind::Irv,
                found,
            })
        }
    }
    let profile = Profile::from_votes(votes);
    Ok(profile.irv(contest.num_candidates()))
}

/// Applies the contest's social choice function.
pub fn tabulate(votes: &[Vote], contest: &Contest) -> Result<Outcome, TabulationError> {
    match contest.kind() {
        ContestKind::Plurality => Ok(tabulate_plurality(votes, contest).1),
        ContestKind::Irv => tabulate_irv(votes, contest).map(|(_, o)| o),
        ContestKind::Stv => Err(TabulationError::Unsupported(ContestKind::Stv)),
    }
}

/// A multiset of votes: distinct preference lists with their counts.
#[derive(Debug, Clone, Default)]
pub(crate) struct Profile {
    pub(crate) ballots: Vec<(Vec<Candidate>, u64)>,
}

impl Profile {
    pub(crate) fn from_votes<'a>(votes: impl IntoIterator<Item = &'a Vote>) -> Self {
        let mut index: HashMap<&[Candidate], usize> = HashMap::new();
        let mut ballots: Vec<(Vec<Candidate>, u64)> = Vec::new();
        for v in votes {
            let prefs = v.preferences();
            match index.get(prefs) {
                Some(&i) => ballots[i].1 += 1,
                None => {
                    index.insert(prefs, ballots.len());
                    ballots.push((prefs.to_vec(), 1));
                }
            }
        }
        Profile { ballots }
    }

    /// First-continuing-preference tallies under `mask`; returns exhausted count.
    fn tally(&self, mask: u64, counts: &mut [u64]) -> u64 {
        counts.iter_mut().for_each(|c| *c = 0);
        let mut exhausted = 0;
        for (prefs, n) in &self.ballots {
            match prefs.iter().find(|c| mask & (1 << c.0) != 0) {
                Some(c) => counts[c.index()] += n,
                None => exhausted += n,
            }
        }
        exhausted
    }

    pub(crate) fn plurality(&self, num_candidates: usize) -> Outcome {
        let mut counts = vec![0u64; num_candidates];
        self.tally(full_mask(num_candidates), &mut counts);
        plurality_outcome(&counts)
    }

    pub(crate) fn irv(&self, num_candidates: usize) -> (IrvRounds, Outcome) {
        let mut mask = full_mask(num_candidates);
        let mut counts = vec![0u64; num_candidates];
        let mut rounds = Vec::new();
        let mut eliminated = Vec::new();
        let mut elimination_tie = false;
        let mut majority_stop = false;
        let winner = loop {
            let exhausted = self.tally(mask, &mut counts);
            let continuing: Vec<Candidate> = members(mask).collect();
            rounds.push(IrvRound {
                tallies: continuing.iter().map(|&c| (c, counts[c.index()])).collect(),
                exhausted,
            });
            if continuing.len() == 1 {
                break continuing[0];
            }
            if let Some(c) = majority_holder(mask, &counts) {
                majority_stop = continuing.len() > 2;
                break c;
            }
            let lowest = lowest(mask, &counts);
            elimination_tie |= lowest.len() > 1;
            let out = lowest[0];
            eliminated.push(out);
            mask &= !(1 << out.0);
        };
        let outcome = if elimination_tie {
            let mut memo = HashMap::new();
            let reachable = self.possible_winners(full_mask(num_candidates), &mut counts, &mut memo);
            let winners: BTreeSet<Candidate> = members(reachable).collect();
            Outcome {
                tie_flag: winners.len() != 1,
                winners,
            }
        } else {
            Outcome::single(winner)
        };
        (
            IrvRounds {
                rounds,
                eliminated,
                elimination_tie,
                majority_stop,
            },
            outcome,
        )
    }

    /// IRV winner only, without round records.
    pub(crate) fn irv_outcome(&self, num_candidates: usize) -> Outcome {
        let mut mask = full_mask(num_candidates);
        let mut counts = vec![0u64; num_candidates];
        loop {
            self.tally(mask, &mut counts);
            if mask.count_ones() == 1 {
                return Outcome::single(Candidate(mask.trailing_zeros() as u16));
            }
            if let Some(c) = majority_holder(mask, &counts) {
                return Outcome::single(c);
            }
            let lowest = lowest(mask, &counts);
            if lowest.len() > 1 {
                let mut memo = HashMap::new();
                let reachable = self.possible_winners(mask, &mut counts, &mut memo);
                let winners: BTreeSet<Candidate> = members(reachable).collect();
                return Outcome {
                    tie_flag: winners.len() != 1,
                    winners,
                };
            }
            mask &= !(1 << lowest[0].0);
        }
    }

    fn possible_winners(&self, mask: u64, counts: &mut [u64], memo: &mut HashMap<u64, u64>) -> u64 {
        if let Some(&w) = memo.get(&mask) {
            return w;
        }
        self.tally(mask, counts);
        let result = if mask.count_ones() == 1 {
            mask
        } else if let Some(c) = majority_holder(mask, counts) {
            1 << c.0
        } else {
            let lowest = lowest(mask, counts);
            let mut acc = 0;
            for c in lowest {
                acc |= self.possible_winners(mask & !(1 << c.0), counts, memo);
            }
            acc
        };
        memo.insert(mask, result);
        result
    }

    pub(crate) fn add(&mut self, prefs: &[Candidate], delta: i64) {
        match self.ballots.iter_mut().find(|(p, _)| p == prefs) {
            Some((_, n)) => *n = (*n as i64 + delta) as u64,
            None => {
                assert!(delta >= 0, "removing a ballot that is not present");
                self.ballots.push((prefs.to_vec(), delta as u64));
            }
        }
    }
}

fn full_mask(n: usize) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

fn members(mask: u64) -> impl Iterator<Item = Candidate> {
    (0..64u16).filter(move |i| mask & (1 << i) != 0).map(Candidate)
}

fn majority_holder(mask: u64, counts: &[u64]) -> Option<Candidate> {
    let total: u64 = members(mask).map(|c| counts[c.index()]).sum();
    members(mask).find(|c| 2 * counts[c.index()] > total)
}

fn lowest(mask: u64, counts: &[u64]) -> Vec<Candidate> {
    let min = members(mask).map(|c| counts[c.index()]).min().unwrap_or(0);
    members(mask).filter(|c| counts[c.index()] == min).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn contest(kind: ContestKind, names: &[&str]) -> Contest {
        Contest::single_winner("t", kind, names).unwrap()
    }

    fn p(c: u16) -> Vote {
        Vote::Plurality(Candidate(c))
    }

    fn r(cs: &[u16]) -> Vote {
        Vote::Ranking(cs.iter().map(|&c| Candidate(c)).collect())
    }

    #[test]
    fn plurality_basic() {
        let c = contest(ContestKind::Plurality, &["Ali", "Bob"]);
        let mut votes = vec![p(0); 26];
        votes.extend(vec![p(1); 10]);
        votes.extend(vec![Vote::Null; 24]);
        let (t, o) = tabulate_plurality(&votes, &c);
        assert_eq!(t.counts, vec![26, 10]);
        assert_eq!(t.null_votes, 24);
        assert_eq!(o, Outcome::single(Candidate(0)));
    }

    #[test]
    fn plurality_tie_and_empty() {
        let c = contest(ContestKind::Plurality, &["Ali", "Bob"]);
        let mut votes = vec![p(0); 5];
        votes.extend(vec![p(1); 5]);
        let (_, o) = tabulate_plurality(&votes, &c);
        assert!(o.tie_flag);
        assert_eq!(o.winners.len(), 2);
        let (t, o) = tabulate_plurality(&[], &c);
        assert_eq!(t.counts, vec![0, 0]);
        assert!(o.tie_flag);
    }

    #[test]
    fn outcome_equality() {
        let dee = Outcome::single(Candidate(3));
        let ali = Outcome::single(Candidate(0));
        assert!(outcome_equal(&dee, &dee.clone()));
        assert!(!outcome_equal(&dee, &ali));
        let tie = Outcome {
            winners: BTreeSet::from([Candidate(0), Candidate(1)]),
            tie_flag: true,
        };
        assert!(!outcome_equal(&ali, &tie));
        assert!(!outcome_equal(&tie, &tie));
    }

    #[test]
    fn single_candidate_wins_round_one() {
        let c = contest(ContestKind::Irv, &["Solo"]);
        let (rounds, o) = tabulate_irv(&[r(&[0]), Vote::Null], &c).unwrap();
        assert_eq!(rounds.rounds.len(), 1);
        assert_eq!(o, Outcome::single(Candidate(0)));
    }

    #[test]
    fn irrelevant_elimination_tie_is_not_an_outcome_tie() {
        // Cal and Dee tie on one vote each; whichever goes first, Ali wins.
        let c = contest(ContestKind::Irv, &["Ali", "Bob", "Cal", "Dee"]);
        let mut votes = vec![r(&[0]); 4];
        votes.extend(vec![r(&[1]); 3]);
        votes.push(r(&[2, 0]));
        votes.push(r(&[3, 1]));
        let (rounds, o) = tabulate_irv(&votes, &c).unwrap();
        assert!(rounds.elimination_tie);
        assert!(!o.tie_flag);
        assert_eq!(o.winner(), Some(Candidate(0)));
    }

    #[test]
    fn decisive_elimination_tie_is_flagged() {
        // Bob and Cal tie for last; eliminating Bob elects Ali, eliminating Cal elects Dee.
        let c = contest(ContestKind::Irv, &["Ali", "Bob", "Cal", "Dee"]);
        let mut votes = vec![r(&[0, 3]); 5];
        votes.extend(vec![r(&[3]); 6]);
        votes.extend(vec![r(&[1, 0]); 3]);
        votes.extend(vec![r(&[2, 1]); 3]);
        let (rounds, o) = tabulate_irv(&votes, &c).unwrap();
        assert!(rounds.elimination_tie);
        assert!(o.tie_flag);
        assert_eq!(o.winners, BTreeSet::from([Candidate(0), Candidate(3)]));
        let profile = Profile::from_votes(&votes);
        assert_eq!(profile.irv_outcome(4), o);
    }

    #[test]
    fn stv_is_not_tabulated() {
        let c = Contest::new("s", ContestKind::Stv, vec!["A".into(), "B".into(), "C".into()], 2).unwrap();
        assert_eq!(tabulate(&[], &c), Err(TabulationError::Unsupported(ContestKind::Stv)));
    }
}
