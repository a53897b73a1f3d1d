//! Contests, votes, cast vote records and ballot cards.
//!
//! Card records are read from newline-delimited JSON, one record per line:
//!
//! ```text
//! {"id": "c1", "vote": null}
//! {"id": "c2", "vote": {"plurality": "Ali"}}
//! {"id": "c3", "vote": {"ranking": ["Dee", "Ali", "Bob"]}}
//! ```
//!
//! Candidate names are resolved against a [`Contest`] at parse time, so every
//! [`Vote`] held in memory refers to candidates by index.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ElectionDataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate card id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: candidate {name:?} is not in contest {contest:?}")]
    UnknownCandidate {
        line: usize,
        name: String,
        contest: String,
    },
    #[error("line {line}: invalid ranking: {reason}")]
    InvalidRanking { line: usize, reason: String },
    #[error("line {line}: {found} vote in a {kind} contest")]
    KindMismatch {
        line: usize,
        found: &'static str,
        kind: ContestKind,
    },
    #[error("invalid contest: {0}")]
    InvalidContest(String),
    #[error("card {0:?} has a CVR but no ballot")]
    MissingBallot(String),
    #[error("card {0:?} has a ballot but no CVR")]
    MissingCvr(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContestKind {
    Plurality,
    Irv,
    Stv,
}

impl fmt::Display for ContestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContestKind::Plurality => "plurality",
            ContestKind::Irv => "irv",
            ContestKind::Stv => "stv",
        })
    }
}

/// Index of a candidate in its contest's candidate list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Candidate(pub u16);

impl Candidate {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Largest supported candidate count; IRV tabulation tracks continuing
/// candidates in a 64-bit mask.
pub const MAX_CANDIDATES: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ContestFile", into = "ContestFile")]
pub struct Contest {
    id: String,
    kind: ContestKind,
    candidates: Vec<String>,
    seats: usize,
    #[serde(skip)]
    lookup: HashMap<String, Candidate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ContestFile {
    id: String,
    kind: ContestKind,
    candidates: Vec<String>,
    #[serde(default = "one")]
    seats: usize,
}

fn one() -> usize {
    1
}

impl TryFrom<ContestFile> for Contest {
    type Error = ElectionDataError;

    fn try_from(file: ContestFile) -> Result<Self, Self::Error> {
        Contest::new(file.id, file.kind, file.candidates, file.seats)
    }
}

impl From<Contest> for ContestFile {
    fn from(c: Contest) -> Self {
        ContestFile {
            id: c.id,
            kind: c.kind,
            candidates: c.candidates,
            seats: c.seats,
        }
    }
}

impl Contest {
    pub fn new(
        id: impl Into<String>,
        kind: ContestKind,
        candidates: Vec<String>,
        seats: usize,
    ) -> Result<Self, ElectionDataError> {
        let id = id.into();
        if candidates.is_empty() {
            return Err(ElectionDataError::InvalidContest(format!(
                "contest {id:?} has no candidates"
            )));
        }
        if candidates.len() > MAX_CANDIDATES {
            return Err(ElectionDataError::InvalidContest(format!(
                "contest {id:?} has {} candidates; at most {MAX_CANDIDATES} are supported",
                candidates.len()
            )));
        }
        if seats == 0 {
            return Err(ElectionDataError::InvalidContest("seats must be positive".into()));
        }
        if kind != ContestKind::Stv && seats != 1 {
            return Err(ElectionDataError::InvalidContest(format!(
                "{kind} contests elect exactly one candidate"
            )));
        }
        // A single-candidate contest is allowed (trivially won); otherwise the
        // seats must leave somebody out.
        if candidates.len() > 1 && seats >= candidates.len() {
            return Err(ElectionDataError::InvalidContest(format!(
                "{seats} seats for {} candidates",
                candidates.len()
            )));
        }
        let mut lookup = HashMap::with_capacity(candidates.len());
        for (i, name) in candidates.iter().enumerate() {
            if lookup.insert(name.clone(), Candidate(i as u16)).is_some() {
                return Err(ElectionDataError::InvalidContest(format!(
                    "duplicate candidate {name:?}"
                )));
            }
        }
        Ok(Contest {
            id,
            kind,
            candidates,
            seats,
            lookup,
        })
    }

    /// Convenience constructor for a single-winner contest.
    pub fn single_winner(
        id: impl Into<String>,
        kind: ContestKind,
        candidates: &[&str],
    ) -> Result<Self, ElectionDataError> {
        Contest::new(
            id,
            kind,
            candidates.iter().map(|s| s.to_string()).collect(),
            1,
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ElectionDataError> {
        let file = File::open(path)?;
        serde_json::from_reader(BufReader::new(file))
            .map_err(|e| ElectionDataError::InvalidContest(e.to_string()))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> ContestKind {
        self.kind
    }

    pub fn seats(&self) -> usize {
        self.seats
    }

    pub fn candidates(&self) -> &[String] {
        &self.candidates
    }

    pub fn num_candidates(&self) -> usize {
        self.candidates.len()
    }

    pub fn candidate(&self, name: &str) -> Option<Candidate> {
        self.lookup.get(name).copied()
    }

    pub fn name(&self, c: Candidate) -> &str {
        &self.candidates[c.index()]
    }

    pub fn all_candidates(&self) -> impl Iterator<Item = Candidate> + '_ {
        (0..self.candidates.len()).map(|i| Candidate(i as u16))
    }

    /// Parses a vote in its JSON form (`null`, `{"plurality": ..}` or
    /// `{"ranking": [..]}`) against this contest.
    pub fn parse_vote(&self, raw: &serde_json::Value) -> Result<Vote, String> {
        let raw: Option<RawVote> = serde_json::from_value(raw.clone()).map_err(|e| e.to_string())?;
        self.resolve_vote(raw).map_err(|e| e.to_string())
    }

    fn resolve_vote(&self, raw: Option<RawVote>) -> Result<Vote, VoteError> {
        match raw {
            None => Ok(Vote::Null),
            Some(RawVote::Plurality(name)) => {
                if self.kind != ContestKind::Plurality {
                    return Err(VoteError::Kind("plurality", self.kind));
                }
                self.candidate(&name)
                    .map(Vote::Plurality)
                    .ok_or(VoteError::Unknown(name))
            }
            Some(RawVote::Ranking(names)) => {
                if self.kind == ContestKind::Plurality {
                    return Err(VoteError::Kind("ranking", self.kind));
                }
                if names.len() > self.candidates.len() {
                    return Err(VoteError::Ranking(format!(
                        "{} preferences for {} candidates",
                        names.len(),
                        self.candidates.len()
                    )));
                }
                let mut seen = HashSet::with_capacity(names.len());
                let mut ranking = Vec::with_capacity(names.len());
                for name in names {
                    let c = self.candidate(&name).ok_or_else(|| VoteError::Unknown(name.clone()))?;
                    if !seen.insert(c) {
                        return Err(VoteError::Ranking(format!("{name:?} ranked twice")));
                    }
                    ranking.push(c);
                }
                Ok(Vote::Ranking(ranking))
            }
        }
    }

    /// Checks that an in-memory vote is admissible in this contest, applying
    /// the same rules as the parser.
    pub fn check_vote(&self, vote: &Vote) -> Result<(), String> {
        self.resolve_vote(self.raw_vote(vote))
            .map(|_| ())
            .map_err(|e| e.to_string())
    }

    fn raw_vote(&self, vote: &Vote) -> Option<RawVote> {
        let name = |c: &Candidate| {
            self.candidates
                .get(c.index())
                .cloned()
                .unwrap_or_else(|| format!("#{}", c.0))
        };
        match vote {
            Vote::Null => None,
            Vote::Plurality(c) => Some(RawVote::Plurality(name(c))),
            Vote::Ranking(r) => Some(RawVote::Ranking(r.iter().map(name).collect())),
        }
    }

    /// JSON form of a vote, the inverse of [`Contest::parse_vote`].
    pub fn vote_json(&self, vote: &Vote) -> serde_json::Value {
        serde_json::to_value(self.raw_vote(vote)).expect("vote serializes")
    }

    /// Human-readable rendering, e.g. `(Dee, Ali, Bob)`.
    pub fn display_vote(&self, vote: &Vote) -> String {
        match vote {
            Vote::Null => "null".to_string(),
            Vote::Plurality(c) => format!("({})", self.name(*c)),
            Vote::Ranking(r) => {
                let names: Vec<&str> = r.iter().map(|c| self.name(*c)).collect();
                format!("({})", names.join(", "))
            }
        }
    }
}

#[derive(Debug, Error)]
enum VoteError {
    #[error("candidate {0:?} is not in the contest")]
    Unknown(String),
    #[error("{0}")]
    Ranking(String),
    #[error("{0} vote in a {1} contest")]
    Kind(&'static str, ContestKind),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
enum RawVote {
    Plurality(String),
    Ranking(Vec<String>),
}

/// The interpretation of the marks on one card (or one CVR).
///
/// Equality is structural: two rankings are equal only if they list the same
/// candidates in the same order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Vote {
    Null,
    Plurality(Candidate),
    Ranking(Vec<Candidate>),
}

impl Vote {
    /// Preferences in order; a plurality vote is a ranking of length one and
    /// a null vote is empty.
    pub fn preferences(&self) -> &[Candidate] {
        match self {
            Vote::Null => &[],
            Vote::Plurality(c) => std::slice::from_ref(c),
            Vote::Ranking(r) => r,
        }
    }

    pub fn first_preference(&self) -> Option<Candidate> {
        self.preferences().first().copied()
    }

    /// True for votes the social choice function ignores.
    pub fn is_null(&self) -> bool {
        self.preferences().is_empty()
    }

    /// Builds a ranking, mapping an empty ranking to [`Vote::Null`].
    pub fn ranking(prefs: Vec<Candidate>) -> Vote {
        if prefs.is_empty() {
            Vote::Null
        } else {
            Vote::Ranking(prefs)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CardRecord {
    pub card_id: String,
    pub vote: Vote,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    vote: Option<RawVote>,
}

#[derive(Serialize)]
struct OutRecord<'a> {
    id: &'a str,
    vote: Option<RawVote>,
}

macro_rules! card_set {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Default, PartialEq, Eq)]
        pub struct $name {
            records: Vec<CardRecord>,
        }

        impl $name {
            /// Builds the set, rejecting duplicate card ids.
            pub fn new(records: Vec<CardRecord>) -> Result<Self, ElectionDataError> {
                let mut seen = HashSet::with_capacity(records.len());
                for (i, r) in records.iter().enumerate() {
                    if !seen.insert(r.card_id.as_str()) {
                        return Err(ElectionDataError::DuplicateId {
                            line: i + 1,
                            id: r.card_id.clone(),
                        });
                    }
                }
                Ok(Self { records })
            }

            pub fn from_votes(votes: impl IntoIterator<Item = (String, Vote)>) -> Result<Self, ElectionDataError> {
                Self::new(
                    votes
                        .into_iter()
                        .map(|(card_id, vote)| CardRecord { card_id, vote })
                        .collect(),
                )
            }

            /// Reads newline-delimited JSON. Blank lines are skipped.
            pub fn read_ndjson(reader: impl Read, contest: &Contest) -> Result<Self, ElectionDataError> {
                read_records(reader, contest).map(|records| Self { records })
            }

            pub fn load(path: impl AsRef<Path>, contest: &Contest) -> Result<Self, ElectionDataError> {
                Self::read_ndjson(File::open(path)?, contest)
            }

            pub fn write_ndjson(&self, writer: impl Write, contest: &Contest) -> std::io::Result<()> {
                write_records(&self.records, writer, contest)
            }

            pub fn records(&self) -> &[CardRecord] {
                &self.records
            }

            pub fn len(&self) -> usize {
                self.records.len()
            }

            pub fn is_empty(&self) -> bool {
                self.records.is_empty()
            }

            pub fn votes(&self) -> impl Iterator<Item = &Vote> {
                self.records.iter().map(|r| &r.vote)
            }

            pub fn vote_list(&self) -> Vec<Vote> {
                self.votes().cloned().collect()
            }
        }
    };
}

card_set!(
    /// The cast vote records, in canonical card order.
    CvrSet
);
card_set!(
    /// The votes actually on the cards, as a human reads them.
    BallotSet
);

/// Reads a CVR file.
pub fn parse_cvrs(path: impl AsRef<Path>, contest: &Contest) -> Result<CvrSet, ElectionDataError> {
    CvrSet::load(path, contest)
}

fn read_records(reader: impl Read, contest: &Contest) -> Result<Vec<CardRecord>, ElectionDataError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| ElectionDataError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let vote = contest.resolve_vote(raw.vote).map_err(|e| match e {
            VoteError::Unknown(name) => ElectionDataError::UnknownCandidate {
                line: line_no,
                name,
                contest: contest.id.clone(),
            },
            VoteError::Ranking(reason) => ElectionDataError::InvalidRanking { line: line_no, reason },
            VoteError::Kind(found, kind) => ElectionDataError::KindMismatch {
                line: line_no,
                found,
                kind,
            },
        })?;
        if !seen.insert(raw.id.clone()) {
            return Err(ElectionDataError::DuplicateId {
                line: line_no,
                id: raw.id,
            });
        }
        records.push(CardRecord {
            card_id: raw.id,
            vote,
        });
    }
    Ok(records)
}

fn write_records(records: &[CardRecord], writer: impl Write, contest: &Contest) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(writer);
    for r in records {
        let out = OutRecord {
            id: &r.card_id,
            vote: contest.raw_vote(&r.vote),
        };
        serde_json::to_writer(&mut w, &out)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Reads a two-column (`id,vote`) CSV for plurality contests. An empty vote
/// cell is a null vote.
pub fn read_plurality_csv(reader: impl Read, contest: &Contest) -> Result<CvrSet, ElectionDataError> {
    if contest.kind != ContestKind::Plurality {
        return Err(ElectionDataError::InvalidContest(
            "the CSV adapter only handles plurality contests".into(),
        ));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        // header is line 1
        let line = i + 2;
        let id = row.get(0).ok_or_else(|| ElectionDataError::Malformed {
            line,
            message: "missing id column".into(),
        })?;
        let vote = match row.get(1).unwrap_or("") {
            "" => Vote::Null,
            name => Vote::Plurality(contest.candidate(name).ok_or_else(|| {
                ElectionDataError::UnknownCandidate {
                    line,
                    name: name.to_string(),
                    contest: contest.id.clone(),
                }
            })?),
        };
        records.push(CardRecord {
            card_id: id.to_string(),
            vote,
        });
    }
    CvrSet::new(records)
}

/// CVRs paired with the ballot cards they purport to represent, in CVR order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkedInstance {
    card_ids: Vec<String>,
    cvrs: Vec<Vote>,
    ballots: Vec<Vote>,
}

impl LinkedInstance {
    /// Builds an instance from already-aligned vectors.
    ///
    /// # Panics
    /// If the three vectors differ in length.
    pub fn from_parts(card_ids: Vec<String>, cvrs: Vec<Vote>, ballots: Vec<Vote>) -> Self {
        assert_eq!(card_ids.len(), cvrs.len());
        assert_eq!(cvrs.len(), ballots.len());
        LinkedInstance {
            card_ids,
            cvrs,
            ballots,
        }
    }

    pub fn len(&self) -> usize {
        self.cvrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cvrs.is_empty()
    }

    pub fn card_ids(&self) -> &[String] {
        &self.card_ids
    }

    pub fn cvrs(&self) -> &[Vote] {
        &self.cvrs
    }

    pub fn ballots(&self) -> &[Vote] {
        &self.ballots
    }

    pub fn pair(&self, i: usize) -> (&Vote, &Vote) {
        (&self.ballots[i], &self.cvrs[i])
    }

    /// Number of cards whose CVR differs from the ballot.
    pub fn mismatch_count(&self) -> usize {
        self.cvrs.iter().zip(&self.ballots).filter(|(c, b)| c != b).count()
    }

    pub fn cvr_set(&self) -> CvrSet {
        CvrSet {
            records: self
                .card_ids
                .iter()
                .zip(&self.cvrs)
                .map(|(id, v)| CardRecord {
                    card_id: id.clone(),
                    vote: v.clone(),
                })
                .collect(),
        }
    }

    pub fn ballot_set(&self) -> BallotSet {
        BallotSet {
            records: self
                .card_ids
                .iter()
                .zip(&self.ballots)
                .map(|(id, v)| CardRecord {
                    card_id: id.clone(),
                    vote: v.clone(),
                })
                .collect(),
        }
    }
}

/// Pairs every CVR with the ballot carrying the same card id.
pub fn link(cvrs: &CvrSet, ballots: &BallotSet) -> Result<LinkedInstance, ElectionDataError> {
    let mut by_id: HashMap<&str, &Vote> = ballots
        .records
        .iter()
        .map(|r| (r.card_id.as_str(), &r.vote))
        .collect();
    let mut out_ballots = Vec::with_capacity(cvrs.len());
    for r in &cvrs.records {
        match by_id.remove(r.card_id.as_str()) {
            Some(v) => out_ballots.push(v.clone()),
            None => return Err(ElectionDataError::MissingBallot(r.card_id.clone())),
        }
    }
    if let Some(extra) = ballots.records.iter().find(|r| by_id.contains_key(r.card_id.as_str())) {
        return Err(ElectionDataError::MissingCvr(extra.card_id.clone()));
    }
    Ok(LinkedInstance {
        card_ids: cvrs.records.iter().map(|r| r.card_id.clone()).collect(),
        cvrs: cvrs.vote_list(),
        ballots: out_ballots,
    })
}
