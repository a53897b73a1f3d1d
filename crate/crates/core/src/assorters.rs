//! Assorters and the comparison transforms built on them.
//!
//! An assorter maps a vote to a bounded nonnegative number; the reported
//! outcome is right when the assorter's mean over the true votes exceeds 1/2.
//! All arithmetic here is exact.

use std::fmt;

use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::electiondata::{Candidate, Contest, ContestKind, Vote};
use crate::Rational;

#[derive(Debug, Error, PartialEq)]
pub enum AssorterError {
    #[error("assorter margin {0} is not positive: the assertion is not reportedly true")]
    NonPositiveMargin(Rational),
    #[error("assorter margin {margin} is not below 2u = {twice_upper}")]
    MarginTooLarge { margin: Rational, twice_upper: Rational },
    #[error("v' = {0} must lie in [0, 1)")]
    BadMismatchMargin(Rational),
    #[error("winner and loser are the same candidate")]
    SameCandidate,
    #[error("assertion {index}: {message}")]
    MalformedAssertion { index: usize, message: String },
    #[error("assertion {label} has margin {margin} <= 0 on the CVRs")]
    AssertionNotHolding { label: String, margin: Rational },
}

fn half() -> Rational {
    Rational::new(1, 2)
}

fn one() -> Rational {
    Rational::from_integer(1)
}

/// What an assorter scores.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AssorterKind {
    /// `winner` beats `loser` in a plurality count.
    Plurality { winner: Candidate, loser: Candidate },
    /// `winner` cannot be eliminated before `loser`: the winner's first
    /// preferences beat every vote on which the loser is ranked above the winner.
    NotEliminatedBefore { winner: Candidate, loser: Candidate },
    /// `winner` beats `loser` once only `continuing` candidates remain.
    NotEliminatedNext {
        winner: Candidate,
        loser: Candidate,
        continuing: Vec<Candidate>,
    },
}

/// A {0, 1/2, 1}-valued assorter (upper bound 1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assorter {
    pub kind: AssorterKind,
    pub label: String,
}

impl Assorter {
    pub fn upper(&self) -> Rational {
        one()
    }

    pub fn value(&self, vote: &Vote) -> Rational {
        match self.score(vote) {
            Score::Winner => one(),
            Score::Loser => Rational::zero(),
            Score::Neither => half(),
        }
    }

    fn score(&self, vote: &Vote) -> Score {
        let prefs = vote.preferences();
        match &self.kind {
            AssorterKind::Plurality { winner, loser } => match vote.first_preference() {
                Some(c) if c == *winner => Score::Winner,
                Some(c) if c == *loser => Score::Loser,
                _ => Score::Neither,
            },
            AssorterKind::NotEliminatedBefore { winner, loser } => {
                if prefs.first() == Some(winner) {
                    return Score::Winner;
                }
                for c in prefs {
                    if c == winner {
                        return Score::Neither;
                    }
                    if c == loser {
                        return Score::Loser;
                    }
                }
                Score::Neither
            }
            AssorterKind::NotEliminatedNext {
                winner,
                loser,
                continuing,
            } => match prefs.iter().find(|c| continuing.contains(c)) {
                Some(c) if c == winner => Score::Winner,
                Some(c) if c == loser => Score::Loser,
                _ => Score::Neither,
            },
        }
    }

    /// The vote that scores 1 (a single preference for the winner).
    pub fn winner(&self) -> Candidate {
        match &self.kind {
            AssorterKind::Plurality { winner, .. }
            | AssorterKind::NotEliminatedBefore { winner, .. }
            | AssorterKind::NotEliminatedNext { winner, .. } => *winner,
        }
    }

    pub fn loser(&self) -> Candidate {
        match &self.kind {
            AssorterKind::Plurality { loser, .. }
            | AssorterKind::NotEliminatedBefore { loser, .. }
            | AssorterKind::NotEliminatedNext { loser, .. } => *loser,
        }
    }
}

enum Score {
    Winner,
    Loser,
    Neither,
}

/// Plurality assorter: 1 for the winner, 0 for the loser, 1/2 otherwise.
pub fn plurality_assorter(winner: Candidate, loser: Candidate, contest: &Contest) -> Result<Assorter, AssorterError> {
    if winner == loser {
        return Err(AssorterError::SameCandidate);
    }
    Ok(Assorter {
        kind: AssorterKind::Plurality { winner, loser },
        label: format!("{} beats {}", contest.name(winner), contest.name(loser)),
    })
}

/// ν = 2·mean(x) − 1.
pub fn assorter_margin(values: &[Rational]) -> Rational {
    if values.is_empty() {
        return Rational::zero();
    }
    let sum: Rational = values.iter().sum();
    Rational::from_integer(2) * sum / Rational::from_integer(values.len() as i128) - one()
}

/// ν of `assorter` over the CVRs.
pub fn margin_over(assorter: &Assorter, cvrs: &[Vote]) -> Rational {
    let values: Vec<Rational> = cvrs.iter().map(|v| assorter.value(v)).collect();
    assorter_margin(&values)
}

/// Discrepancy class of a comparison, read off the overstatement numerator
/// u + A(b) − A(c) for a {0, 1/2, 1}-valued assorter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Discrepancy {
    TwoOver,
    OneOver,
    Match,
    OneUnder,
    TwoUnder,
}

impl fmt::Display for Discrepancy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Discrepancy::TwoOver => "2-over",
            Discrepancy::OneOver => "1-over",
            Discrepancy::Match => "match",
            Discrepancy::OneUnder => "1-under",
            Discrepancy::TwoUnder => "2-under",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonScore {
    pub value: Rational,
    pub numerator: Rational,
    /// `None` when the assorter is not {0, 1/2, 1}-valued.
    pub category: Option<Discrepancy>,
}

/// Overstatement assorter B(b) = (u + A(b) − A(c)) / (2u − ν).
pub fn overstatement_value(
    ballot: &Vote,
    cvr: &Vote,
    assorter: &Assorter,
    margin: Rational,
) -> Result<ComparisonScore, AssorterError> {
    let u = assorter.upper();
    check_margin(margin, u)?;
    let numerator = u + assorter.value(ballot) - assorter.value(cvr);
    let value = numerator / (Rational::from_integer(2) * u - margin);
    let category = if u == one() {
        let twice = numerator * Rational::from_integer(2);
        match twice.to_integer() {
            _ if !twice.is_integer() => None,
            0 => Some(Discrepancy::TwoOver),
            1 => Some(Discrepancy::OneOver),
            2 => Some(Discrepancy::Match),
            3 => Some(Discrepancy::OneUnder),
            4 => Some(Discrepancy::TwoUnder),
            _ => None,
        }
    } else {
        None
    };
    Ok(ComparisonScore {
        value,
        numerator,
        category,
    })
}

fn check_margin(margin: Rational, upper: Rational) -> Result<(), AssorterError> {
    if margin <= Rational::zero() {
        return Err(AssorterError::NonPositiveMargin(margin));
    }
    let twice_upper = Rational::from_integer(2) * upper;
    if margin >= twice_upper {
        return Err(AssorterError::MarginTooLarge { margin, twice_upper });
    }
    Ok(())
}

/// Upper bound of the overstatement assorter, 2u / (2u − ν).
pub fn overstatement_upper(upper: Rational, margin: Rational) -> Rational {
    Rational::from_integer(2) * upper / (Rational::from_integer(2) * upper - margin)
}

/// Mismatch assorter C(b) = (1 − [b ≠ c]) / (2 − 2v′).
pub fn mismatch_value(ballot: &Vote, cvr: &Vote, v_prime: Rational) -> Result<Rational, AssorterError> {
    let u = mismatch_upper(v_prime)?;
    Ok(if ballot == cvr { u } else { Rational::zero() })
}

/// The largest value of the mismatch assorter, 1 / (2 − 2v′).
pub fn mismatch_upper(v_prime: Rational) -> Result<Rational, AssorterError> {
    if v_prime < Rational::zero() || v_prime >= one() {
        return Err(AssorterError::BadMismatchMargin(v_prime));
    }
    Ok(one() / (Rational::from_integer(2) - Rational::from_integer(2) * v_prime))
}

/// Exact test of mean(values) > 1/2.
pub fn mean_gt_half(values: &[Rational]) -> bool {
    if values.is_empty() {
        return false;
    }
    let sum: Rational = values.iter().sum();
    sum * Rational::from_integer(2) > Rational::from_integer(values.len() as i128)
}

/// One line of an assertion file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssertionSpec {
    #[serde(rename = "type")]
    pub kind: AssertionType,
    pub winner: String,
    pub loser: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuing: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssertionType {
    #[serde(rename = "NEB")]
    Neb,
    #[serde(rename = "NEN")]
    Nen,
}

/// IRV assertions with their margins on the CVRs.
#[derive(Debug, Clone)]
pub struct AssertionSet {
    pub assertions: Vec<Assorter>,
    pub margins: Vec<Rational>,
}

impl AssertionSet {
    /// Index of the assertion with the smallest margin (first on ties).
    pub fn min_margin_index(&self) -> Option<usize> {
        self.margins
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.cmp(b.1).then(a.0.cmp(&b.0)))
            .map(|(i, _)| i)
    }
}

/// Builds the assorter for one assertion without checking its margin.
pub fn assertion_assorter(index: usize, spec: &AssertionSpec, contest: &Contest) -> Result<Assorter, AssorterError> {
    let malformed = |message: String| AssorterError::MalformedAssertion { index, message };
    if contest.kind() != ContestKind::Irv {
        return Err(malformed(format!("IRV assertions need an IRV contest, not {}", contest.kind())));
    }
    let lookup = |name: &str| {
        contest
            .candidate(name)
            .ok_or_else(|| malformed(format!("unknown candidate {name:?}")))
    };
    let winner = lookup(&spec.winner)?;
    let loser = lookup(&spec.loser)?;
    if winner == loser {
        return Err(malformed("winner and loser are the same candidate".into()));
    }
    let kind = match spec.kind {
        AssertionType::Neb => {
            if spec.continuing.is_some() {
                return Err(malformed("NEB assertions take no continuing list".into()));
            }
            AssorterKind::NotEliminatedBefore { winner, loser }
        }
        AssertionType::Nen => {
            let names = spec
                .continuing
                .as_ref()
                .ok_or_else(|| malformed("NEN assertions need a continuing list".into()))?;
            let mut continuing = Vec::with_capacity(names.len());
            for n in names {
                let c = lookup(n)?;
                if continuing.contains(&c) {
                    return Err(malformed(format!("{n:?} listed twice")));
                }
                continuing.push(c);
            }
            if !continuing.contains(&winner) || !continuing.contains(&loser) {
                return Err(malformed("winner and loser must both be continuing".into()));
            }
            AssorterKind::NotEliminatedNext {
                winner,
                loser,
                continuing,
            }
        }
    };
    let label = match &kind {
        AssorterKind::NotEliminatedNext { continuing, .. } => format!(
            "NEN {} > {} | {{{}}}",
            spec.winner,
            spec.loser,
            continuing.iter().map(|c| contest.name(*c)).collect::<Vec<_>>().join(", ")
        ),
        _ => format!("NEB {} > {}", spec.winner, spec.loser),
    };
    Ok(Assorter { kind, label })
}

/// Turns an assertion list into assorters, rejecting any whose margin on the
/// CVRs is not positive.
pub fn irv_assertion_assorters(
    specs: &[AssertionSpec],
    contest: &Contest,
    cvrs: &[Vote],
) -> Result<AssertionSet, AssorterError> {
    let mut assertions = Vec::with_capacity(specs.len());
    let mut margins = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let a = assertion_assorter(i, spec, contest)?;
        let margin = margin_over(&a, cvrs);
        if margin <= Rational::zero() {
            return Err(AssorterError::AssertionNotHolding {
                label: a.label.clone(),
                margin,
            });
        }
        assertions.push(a);
        margins.push(margin);
    }
    Ok(AssertionSet { assertions, margins })
}

/// Winner-versus-loser assorters for every losing candidate of a plurality
/// contest, with their margins on the CVRs.
pub fn plurality_assertions(contest: &Contest, cvrs: &[Vote]) -> Result<AssertionSet, AssorterError> {
    let (tally, outcome) = crate::socialchoice::tabulate_plurality(cvrs, contest);
    let Some(w) = outcome.winner() else {
        return Err(AssorterError::AssertionNotHolding {
            label: "plurality winner".into(),
            margin: Rational::zero(),
        });
    };
    let mut assertions = Vec::new();
    let mut margins = Vec::new();
    for (l, _) in tally.ranked().into_iter().filter(|(c, _)| *c != w) {
        let a = plurality_assorter(w, l, contest)?;
        margins.push(margin_over(&a, cvrs));
        assertions.push(a);
    }
    Ok(AssertionSet { assertions, margins })
}

/// Parses an assertion file (a JSON list).
pub fn parse_assertions(text: &str) -> Result<Vec<AssertionSpec>, serde_json::Error> {
    serde_json::from_str(text)
}

/// Lossy conversion used at reporting and simulation boundaries.
pub fn to_f64(r: Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i128, d: i128) -> Rational {
        Rational::new(n, d)
    }

    fn irv() -> Contest {
        Contest::single_winner("e", ContestKind::Irv, &["Ali", "Bob", "Cal", "Dee"]).unwrap()
    }

    fn plur() -> Contest {
        Contest::single_winner("p", ContestKind::Plurality, &["Ali", "Bob", "Cal"]).unwrap()
    }

    fn rank(c: &Contest, names: &[&str]) -> Vote {
        Vote::Ranking(names.iter().map(|n| c.candidate(n).unwrap()).collect())
    }

    #[test]
    fn plurality_values() {
        let c = plur();
        let a = plurality_assorter(Candidate(0), Candidate(1), &c).unwrap();
        assert_eq!(a.value(&Vote::Plurality(Candidate(0))), one());
        assert_eq!(a.value(&Vote::Null), half());
        assert_eq!(a.value(&Vote::Plurality(Candidate(1))), Rational::zero());
        assert_eq!(a.value(&Vote::Plurality(Candidate(2))), half());
        assert!(plurality_assorter(Candidate(0), Candidate(0), &c).is_err());
    }

    #[test]
    fn margins() {
        assert_eq!(assorter_margin(&vec![one(); 7]), one());
        assert_eq!(assorter_margin(&[one(), Rational::zero()]), Rational::zero());
        let mut v = vec![one(); 5100];
        v.extend(vec![Rational::zero(); 4900]);
        assert_eq!(assorter_margin(&v), q(1, 50));
    }

    #[test]
    fn overstatement_examples() {
        let c = plur();
        let a = plurality_assorter(Candidate(0), Candidate(1), &c).unwrap();
        let ali = Vote::Plurality(Candidate(0));
        let bob = Vote::Plurality(Candidate(1));
        let nu = q(1, 50);
        let s = overstatement_value(&bob, &ali, &a, nu).unwrap();
        assert_eq!(s.value, Rational::zero());
        assert_eq!(s.category, Some(Discrepancy::TwoOver));
        let s = overstatement_value(&ali, &ali, &a, nu).unwrap();
        assert_eq!(s.value, one() / (Rational::from_integer(2) - nu));
        assert_eq!(s.category, Some(Discrepancy::Match));
        let s = overstatement_value(&ali, &bob, &a, nu).unwrap();
        assert_eq!(s.value, q(2, 1) / q(99, 50));
        assert!((to_f64(s.value) - 1.0101).abs() < 1e-4);
        assert_eq!(s.category, Some(Discrepancy::TwoUnder));
        assert_eq!(
            overstatement_value(&ali, &bob, &a, Rational::zero()),
            Err(AssorterError::NonPositiveMargin(Rational::zero()))
        );
    }

    #[test]
    fn mismatch_examples() {
        let a = Vote::Plurality(Candidate(0));
        let b = Vote::Plurality(Candidate(1));
        assert_eq!(mismatch_value(&a, &b, q(1, 10)).unwrap(), Rational::zero());
        assert_eq!(mismatch_value(&a, &a, Rational::zero()).unwrap(), half());
        assert_eq!(mismatch_value(&a, &a, q(1, 10)).unwrap(), q(5, 9));
        assert_eq!(mismatch_value(&Vote::Null, &Vote::Null, q(1, 10)).unwrap(), q(5, 9));
        assert!(mismatch_value(&a, &a, one()).is_err());
    }

    #[test]
    fn mean_gt_half_boundaries() {
        let n = 100;
        let vp = q(5, 100);
        let u = mismatch_upper(vp).unwrap();
        let pop = |m: usize| {
            let mut v = vec![u; n - m];
            v.extend(vec![Rational::zero(); m]);
            v
        };
        assert!(mean_gt_half(&pop(0)));
        assert!(!mean_gt_half(&pop(5)));
        assert!(mean_gt_half(&pop(4)));
    }

    #[test]
    fn neb_and_nen_scoring() {
        let c = irv();
        let neb = assertion_assorter(
            0,
            &AssertionSpec {
                kind: AssertionType::Neb,
                winner: "Ali".into(),
                loser: "Cal".into(),
                continuing: None,
            },
            &c,
        )
        .unwrap();
        assert_eq!(neb.value(&rank(&c, &["Ali"])), one());
        assert_eq!(neb.value(&rank(&c, &["Dee", "Cal", "Ali"])), Rational::zero());
        assert_eq!(neb.value(&rank(&c, &["Dee", "Ali", "Cal"])), half());
        assert_eq!(neb.value(&Vote::Null), half());

        let nen = assertion_assorter(
            1,
            &AssertionSpec {
                kind: AssertionType::Nen,
                winner: "Dee".into(),
                loser: "Ali".into(),
                continuing: Some(vec!["Ali".into(), "Dee".into()]),
            },
            &c,
        )
        .unwrap();
        assert_eq!(nen.value(&rank(&c, &["Bob", "Cal", "Dee"])), one());
        assert_eq!(nen.value(&rank(&c, &["Bob", "Ali", "Dee"])), Rational::zero());
        assert_eq!(nen.value(&rank(&c, &["Bob", "Cal"])), half());
    }

    #[test]
    fn malformed_assertions() {
        let c = irv();
        let text = r#"[{"type":"NEN","winner":"Dee","loser":"Ali"}]"#;
        let specs = parse_assertions(text).unwrap();
        assert!(matches!(
            irv_assertion_assorters(&specs, &c, &[]),
            Err(AssorterError::MalformedAssertion { index: 0, .. })
        ));
        let text = r#"[{"type":"NEB","winner":"Zed","loser":"Ali"}]"#;
        assert!(irv_assertion_assorters(&parse_assertions(text).unwrap(), &c, &[]).is_err());
        assert!(parse_assertions(r#"[{"type":"XYZ","winner":"A","loser":"B"}]"#).is_err());
    }

    #[test]
    fn assertion_must_hold_on_cvrs() {
        let c = irv();
        let specs = vec![AssertionSpec {
            kind: AssertionType::Neb,
            winner: "Bob".into(),
            loser: "Ali".into(),
            continuing: None,
        }];
        let cvrs = vec![rank(&c, &["Ali"]), rank(&c, &["Ali", "Bob"])];
        assert!(matches!(
            irv_assertion_assorters(&specs, &c, &cvrs),
            Err(AssorterError::AssertionNotHolding { .. })
        ));
    }

    #[test]
    fn plurality_assertion_set() {
        let c = plur();
        let p = |i| Vote::Plurality(Candidate(i));
        let cvrs = vec![p(0), p(0), p(0), p(1), p(2), p(2), Vote::Null, p(0)];
        let set = plurality_assertions(&c, &cvrs).unwrap();
        assert_eq!(set.assertions.len(), 2);
        assert_eq!(set.assertions[0].label, "Ali beats Cal");
        assert_eq!(set.margins, vec![q(2, 8), q(3, 8)]);
        assert!(plurality_assertions(&c, &[p(0), p(1)]).is_err());
    }
}
