#![allow(dead_code)]

use std::path::PathBuf;

use rla_core::assorters::{irv_assertion_assorters, parse_assertions, AssertionSet};
use rla_core::electiondata::{parse_cvrs, Contest, CvrSet, Vote};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/irv60")
}

pub fn irv60() -> (Contest, CvrSet) {
    let dir = data_dir();
    let contest = Contest::load(dir.join("contest.json")).unwrap();
    let cvrs = parse_cvrs(dir.join("cvrs.ndjson"), &contest).unwrap();
    (contest, cvrs)
}

pub fn irv60_assertions(contest: &Contest, cvrs: &CvrSet) -> AssertionSet {
    let text = std::fs::read_to_string(data_dir().join("assertions.json")).unwrap();
    irv_assertion_assorters(&parse_assertions(&text).unwrap(), contest, &cvrs.vote_list()).unwrap()
}

pub fn ranking(contest: &Contest, names: &[&str]) -> Vote {
    Vote::ranking(names.iter().map(|n| contest.candidate(n).unwrap()).collect())
}

/// The 60-card profile with one (Bob, Cal, Dee) CVR turned into (Cal, Dee).
pub fn irv60_modified(contest: &Contest, cvrs: &CvrSet) -> Vec<Vote> {
    let from = ranking(contest, &["Bob", "Cal", "Dee"]);
    let mut votes = cvrs.vote_list();
    let i = votes.iter().position(|v| *v == from).unwrap();
    votes[i] = ranking(contest, &["Cal", "Dee"]);
    votes
}
