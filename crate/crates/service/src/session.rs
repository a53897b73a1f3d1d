//! One live audit: the sample order, the submitted manual vote records and
//! the sequential test they drive, kept in step with an append-only trail.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use rla_core::assorters::{irv_assertion_assorters, plurality_assertions, to_f64, AssertionSpec};
use rla_core::errormodels::{generate, ErrorModel, ScenarioSpec};
use rla_core::margins::plurality_cvr_margin;
use rla_core::riskengine::{sample_plan, AuditError, PreparedAudit, SequentialAudit, StepRecord};
use rla_core::simharness::Method;
use rla_core::{
    tabulate_plurality, AuditConfig, AuditDecision, AuditTarget, Contest, ContestKind, CvrSet, EstimatorConfig,
    LinkedInstance, MarginKind, MarginReport, Vote,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

const RECENT: usize = 10;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("no audit session {0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Invalid(String),
    #[error("trail of session {id} does not replay: {reason}")]
    Replay { id: String, reason: String },
    #[error("storage: {0}")]
    Io(#[from] std::io::Error),
}

fn invalid(e: impl std::fmt::Display) -> SessionError {
    SessionError::Invalid(e.to_string())
}

/// One CVR as submitted: the same shape as a line of a CVR file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvrLine {
    pub id: String,
    #[serde(default)]
    pub vote: Value,
}

/// A margin for a mismatch audit: the CVR margin or a lower bound on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginInput {
    #[serde(rename = "V_minus")]
    pub v_minus: i64,
    #[serde(default = "lower_bound")]
    pub kind: MarginKind,
    #[serde(default)]
    pub source: Option<String>,
}

fn lower_bound() -> MarginKind {
    MarginKind::LowerBound
}

fn default_alpha() -> f64 {
    0.05
}

fn default_method() -> Method {
    Method::Mismatch
}

/// Everything needed to set up a session; stored verbatim in `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub contest: Contest,
    pub cvrs: Vec<CvrLine>,
    #[serde(default = "default_method")]
    pub method: Method,
    /// Required for mismatch audits of non-plurality contests.
    #[serde(default)]
    pub margin: Option<MarginInput>,
    /// IRV assertions for a comparison audit.
    #[serde(default)]
    pub assertions: Option<Vec<AssertionSpec>>,
    #[serde(default)]
    pub estimator: Option<EstimatorConfig>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredConfig {
    id: String,
    config: SessionConfig,
    /// Card ids in sampling order.
    permutation: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Open,
    Certified,
    FullCountRequired,
    Closed,
}

/// One applied draw, as written to the trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawLine {
    pub j: usize,
    pub card_id: String,
    pub cvr: Value,
    pub mvr: Value,
    pub mismatch: bool,
    /// One step per assertion; `null` once an assertion has certified.
    pub steps: Vec<Option<StepRecord>>,
    pub p_value: f64,
    pub status: SessionStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TrailLine {
    Retrieve { upto: usize },
    Mvr { card_id: String, vote: Value },
    Draw(DrawLine),
    Close,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextCard {
    pub card_id: String,
    /// 1-based position in the sample order.
    pub position: usize,
    pub submitted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextCards {
    pub cards: Vec<NextCard>,
    /// Set when fewer than the requested number of cards remain.
    pub truncated: bool,
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionStatus {
    pub label: String,
    pub p_value: f64,
    pub log_t: f64,
    pub certified_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusView {
    pub id: String,
    pub status: SessionStatus,
    pub decision: Option<AuditDecision>,
    pub method: Method,
    pub draws: usize,
    pub population: usize,
    pub alpha: f64,
    pub p_value: f64,
    pub mismatches: usize,
    pub retrieved: usize,
    pub pending: Vec<String>,
    pub assertions: Vec<AssertionStatus>,
    pub recent: Vec<DrawLine>,
}

#[derive(Debug, Clone)]
struct LiveState {
    audit: SequentialAudit,
    retrieved: usize,
    /// Submitted but not yet drawn, by position.
    pending: BTreeMap<usize, Vote>,
    mismatches: usize,
    status: SessionStatus,
    decision: Option<AuditDecision>,
    recent: VecDeque<DrawLine>,
}

#[derive(Debug)]
pub struct Session {
    id: String,
    config: SessionConfig,
    contest: Contest,
    cvrs: CvrSet,
    targets: Vec<AuditTarget>,
    /// Card index at each position of the sample order.
    order: Vec<usize>,
    position: HashMap<String, usize>,
    state: LiveState,
    trail: Option<File>,
}

fn build_targets(config: &SessionConfig, contest: &Contest, cvrs: &CvrSet) -> Result<Vec<AuditTarget>, SessionError> {
    let votes = cvrs.vote_list();
    let n = votes.len() as u64;
    let targets = match config.method {
        Method::Mismatch => {
            let margin = match &config.margin {
                Some(m) => {
                    if m.kind == MarginKind::DiagnosticUpper {
                        return Err(invalid("an upper bound on the margin cannot back a mismatch audit"));
                    }
                    if m.v_minus < 0 || m.v_minus as u64 > n {
                        return Err(invalid(format!("V- = {} must lie in [0, N = {n}]", m.v_minus)));
                    }
                    MarginReport::new(m.v_minus as u64, n, m.kind)
                }
                None if contest.kind() == ContestKind::Plurality => {
                    plurality_cvr_margin(&tabulate_plurality(&votes, contest).0, n)
                }
                None => return Err(invalid("a margin (V_minus) is required for this contest")),
            };
            if margin.is_degenerate() {
                return Err(invalid(AuditError::ZeroMismatchMargin));
            }
            vec![AuditTarget::mismatch(margin.proportion())]
        }
        Method::Comparison => {
            let set = match (contest.kind(), &config.assertions) {
                (ContestKind::Plurality, _) => plurality_assertions(contest, &votes).map_err(invalid)?,
                (ContestKind::Irv, Some(specs)) => irv_assertion_assorters(specs, contest, &votes).map_err(invalid)?,
                (ContestKind::Irv, None) => return Err(invalid("a comparison audit of an IRV contest needs assertions")),
                (kind, _) => return Err(invalid(format!("comparison audits of {kind} contests are not supported"))),
            };
            set.assertions
                .into_iter()
                .zip(set.margins)
                .map(|(a, nu)| AuditTarget::comparison(a, nu))
                .collect()
        }
    };
    Ok(match &config.estimator {
        Some(e) => targets.into_iter().map(|t| t.with_estimator(e.clone())).collect(),
        None => targets,
    })
}

fn sync_dir(dir: &Path) -> std::io::Result<()> {
    File::open(dir)?.sync_all()
}

impl Session {
    fn build(id: String, config: SessionConfig) -> Result<Self, SessionError> {
        AuditConfig::new(config.alpha, config.seed).check().map_err(invalid)?;
        let contest = config.contest.clone();
        let records = config
            .cvrs
            .iter()
            .map(|l| {
                contest
                    .parse_vote(&l.vote)
                    .map(|v| (l.id.clone(), v))
                    .map_err(|e| invalid(format!("CVR {}: {e}", l.id)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let cvrs = CvrSet::from_votes(records).map_err(invalid)?;
        if cvrs.is_empty() {
            return Err(invalid(AuditError::EmptyPopulation));
        }
        let targets = build_targets(&config, &contest, &cvrs)?;
        let audit = SequentialAudit::new(&targets, cvrs.len(), config.alpha).map_err(invalid)?;
        let order = sample_plan(config.seed, cvrs.len());
        let position = order
            .iter()
            .enumerate()
            .map(|(pos, &card)| (cvrs.records()[card].card_id.clone(), pos))
            .collect();
        Ok(Session {
            id,
            config,
            contest,
            cvrs,
            targets,
            order,
            position,
            state: LiveState {
                audit,
                retrieved: 0,
                pending: BTreeMap::new(),
                mismatches: 0,
                status: SessionStatus::Open,
                decision: None,
                recent: VecDeque::new(),
            },
            trail: None,
        })
    }

    /// Validates `config` and persists a new session under `root/id`.
    pub fn create(root: &Path, id: String, config: SessionConfig) -> Result<Self, SessionError> {
        let mut session = Session::build(id, config)?;
        let dir = root.join(&session.id);
        fs::create_dir_all(&dir)?;
        let stored = StoredConfig {
            id: session.id.clone(),
            config: session.config.clone(),
            permutation: session.permutation(),
        };
        let tmp = dir.join("config.json.tmp");
        let mut f = File::create(&tmp)?;
        serde_json::to_writer_pretty(&mut f, &stored).map_err(std::io::Error::other)?;
        f.write_all(b"\n")?;
        f.sync_all()?;
        fs::rename(&tmp, dir.join("config.json"))?;
        let trail = OpenOptions::new().create(true).append(true).open(dir.join("trail.ndjson"))?;
        trail.sync_all()?;
        sync_dir(&dir)?;
        session.trail = Some(trail);
        Ok(session)
    }

    /// Rebuilds a session from its directory, checking every recorded draw
    /// against a recomputation. A torn final line is discarded.
    pub fn open(dir: &Path) -> Result<Self, SessionError> {
        let stored: StoredConfig = serde_json::from_reader(BufReader::new(File::open(dir.join("config.json"))?))
            .map_err(|e| invalid(format!("{}: {e}", dir.display())))?;
        let mut session = Session::build(stored.id.clone(), stored.config)?;
        if session.permutation() != stored.permutation {
            return Err(session.replay_error("stored sample order differs from the seed's"));
        }
        let path = dir.join("trail.ndjson");
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(&path)?;
        let mut text = String::new();
        file.read_to_string(&mut text)?;
        let complete = text.rfind('\n').map_or(0, |i| i + 1);
        if complete < text.len() {
            file.set_len(complete as u64)?;
            file.sync_all()?;
        }
        file.seek(SeekFrom::End(0))?;
        session.replay_lines(text[..complete].lines())?;
        session.trail = Some(file);
        Ok(session)
    }

    fn replay_error(&self, reason: impl Into<String>) -> SessionError {
        SessionError::Replay {
            id: self.id.clone(),
            reason: reason.into(),
        }
    }

    fn replay_lines<'a>(&mut self, lines: impl Iterator<Item = &'a str>) -> Result<(), SessionError> {
        let mut expected: VecDeque<String> = VecDeque::new();
        for (i, raw) in lines.enumerate() {
            let line: TrailLine =
                serde_json::from_str(raw).map_err(|e| self.replay_error(format!("line {}: {e}", i + 1)))?;
            let result = match line {
                TrailLine::Draw(_) => match expected.pop_front() {
                    Some(text) if text == raw => continue,
                    Some(_) => return Err(self.replay_error(format!("line {}: recomputed draw differs", i + 1))),
                    None => return Err(self.replay_error(format!("line {}: draw without a vote record", i + 1))),
                },
                _ if !expected.is_empty() => {
                    return Err(self.replay_error(format!("line {}: missing draw records", i + 1)));
                }
                TrailLine::Retrieve { upto } => self.retrieve_to(upto).map(|_| Vec::new()),
                TrailLine::Mvr { card_id, vote } => self.submit(&card_id, &vote),
                TrailLine::Close => self.close().map(|_| Vec::new()),
            };
            let produced = result.map_err(|e| self.replay_error(format!("line {}: {e}", i + 1)))?;
            for l in produced.iter().skip(1) {
                expected.push_back(serde_json::to_string(l).map_err(std::io::Error::other)?);
            }
        }
        if !expected.is_empty() {
            return Err(self.replay_error("trail ends before the last vote record's draws"));
        }
        Ok(())
    }

    /// Appends `lines` durably, then adopts `next`.
    fn commit(&mut self, lines: &[TrailLine], next: LiveState) -> Result<(), SessionError> {
        if let Some(f) = self.trail.as_mut() {
            let mut buf = Vec::new();
            for l in lines {
                serde_json::to_writer(&mut buf, l).map_err(std::io::Error::other)?;
                buf.push(b'\n');
            }
            f.write_all(&buf)?;
            f.sync_data()?;
        }
        self.state = next;
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn population(&self) -> usize {
        self.order.len()
    }

    pub fn permutation(&self) -> Vec<String> {
        self.order.iter().map(|&c| self.cvrs.records()[c].card_id.clone()).collect()
    }

    fn require_open(&self) -> Result<(), SessionError> {
        match self.state.status {
            SessionStatus::Open => Ok(()),
            s => Err(SessionError::Conflict(format!(
                "session is {}",
                serde_json::to_value(s).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
            ))),
        }
    }

    fn retrieve_to(&mut self, upto: usize) -> Result<(), SessionError> {
        self.require_open()?;
        if upto > self.population() {
            return Err(invalid(format!("retrieval past card {}", self.population())));
        }
        if upto > self.state.retrieved {
            let mut next = self.state.clone();
            next.retrieved = upto;
            self.commit(&[TrailLine::Retrieve { upto }], next)?;
        }
        Ok(())
    }

    /// The next `k` undrawn cards in sample order. Widens the retrieval
    /// window (so these cards may be entered in any order) but draws nothing.
    pub fn next(&mut self, k: usize) -> Result<NextCards, SessionError> {
        self.require_open()?;
        let drawn = self.state.audit.draws();
        let remaining = self.population() - drawn;
        let end = drawn + k.min(remaining);
        self.retrieve_to(end)?;
        let cards = (drawn..end)
            .map(|pos| NextCard {
                card_id: self.cvrs.records()[self.order[pos]].card_id.clone(),
                position: pos + 1,
                submitted: self.state.pending.contains_key(&pos),
            })
            .collect();
        Ok(NextCards {
            cards,
            truncated: k > remaining,
            remaining,
        })
    }

    /// Records the audit board's reading of `card_id`, applying every draw
    /// that is now complete. Returns the trail lines written.
    pub fn submit(&mut self, card_id: &str, vote: &Value) -> Result<Vec<TrailLine>, SessionError> {
        self.require_open()?;
        let &pos = self
            .position
            .get(card_id)
            .ok_or_else(|| invalid(format!("unknown card id {card_id:?}")))?;
        let parsed = self.contest.parse_vote(vote).map_err(|e| invalid(format!("vote: {e}")))?;
        let drawn = self.state.audit.draws();
        if pos < drawn || self.state.pending.contains_key(&pos) {
            return Err(SessionError::Conflict(format!("card {card_id} has already been entered")));
        }
        let window = self.state.retrieved.max(drawn + 1);
        if pos >= window {
            return Err(SessionError::Conflict(format!(
                "card {card_id} is at position {} but only cards up to {window} may be entered",
                pos + 1
            )));
        }
        let mut lines = vec![TrailLine::Mvr {
            card_id: card_id.to_string(),
            vote: self.contest.vote_json(&parsed),
        }];
        let mut next = self.state.clone();
        next.pending.insert(pos, parsed);
        while next.status == SessionStatus::Open {
            let pos = next.audit.draws();
            let Some(mvr) = next.pending.remove(&pos) else {
                break;
            };
            let card = self.order[pos];
            let cvr = &self.cvrs.records()[card].vote;
            let values = self
                .targets
                .iter()
                .map(|t| t.assorter.value(&mvr, cvr).map(to_f64))
                .collect::<Result<Vec<f64>, _>>()
                .map_err(invalid)?;
            let steps = next.audit.observe(&values).map_err(invalid)?;
            let mismatch = mvr != *cvr;
            if mismatch {
                next.mismatches += 1;
            }
            if let Some(d) = next.audit.decision() {
                next.decision = Some(d);
                next.status = match d {
                    AuditDecision::Certified => SessionStatus::Certified,
                    AuditDecision::FullCount => SessionStatus::FullCountRequired,
                };
            }
            let draw = DrawLine {
                j: next.audit.draws(),
                card_id: self.cvrs.records()[card].card_id.clone(),
                cvr: self.contest.vote_json(cvr),
                mvr: self.contest.vote_json(&mvr),
                mismatch,
                steps,
                p_value: next.audit.p_value(),
                status: next.status,
            };
            if next.recent.len() == RECENT {
                next.recent.pop_front();
            }
            next.recent.push_back(draw.clone());
            lines.push(TrailLine::Draw(draw));
        }
        self.commit(&lines, next)?;
        Ok(lines)
    }

    /// Ends a finished audit.
    pub fn close(&mut self) -> Result<StatusView, SessionError> {
        match self.state.status {
            SessionStatus::Certified | SessionStatus::FullCountRequired => {
                let mut next = self.state.clone();
                next.status = SessionStatus::Closed;
                self.commit(&[TrailLine::Close], next)?;
                Ok(self.status())
            }
            SessionStatus::Open => Err(SessionError::Conflict("the audit has not reached a decision".into())),
            SessionStatus::Closed => Err(SessionError::Conflict("session is already closed".into())),
        }
    }

    pub fn status(&self) -> StatusView {
        let s = &self.state;
        StatusView {
            id: self.id.clone(),
            status: s.status,
            decision: s.decision,
            method: self.config.method,
            draws: s.audit.draws(),
            population: self.population(),
            alpha: self.config.alpha,
            p_value: s.audit.p_value(),
            mismatches: s.mismatches,
            retrieved: s.retrieved,
            pending: s
                .pending
                .keys()
                .map(|&p| self.cvrs.records()[self.order[p]].card_id.clone())
                .collect(),
            assertions: s
                .audit
                .outcomes()
                .into_iter()
                .map(|o| AssertionStatus {
                    label: o.label,
                    p_value: o.p_value,
                    log_t: o.log_t,
                    certified_at: o.certified_at,
                })
                .collect(),
            recent: s.recent.iter().cloned().collect(),
        }
    }
}

/// Outcome of replaying a stored session offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub id: String,
    pub draws: usize,
    pub status: SessionStatus,
    pub p_value: f64,
    pub assertions: Vec<AssertionStatus>,
    /// Whether a batch audit over the recorded votes reaches exactly the
    /// session's test statistics.
    pub batch_agrees: bool,
}

/// Rebuilds the session in `dir` from its trail (checking each recorded draw
/// bit for bit), then reruns the drawn prefix as a batch audit and compares.
pub fn replay(dir: &Path) -> Result<ReplayReport, SessionError> {
    let session = Session::open(dir)?;
    let status = session.status();

    let mut ballots = session.cvrs.vote_list();
    let file = File::open(dir.join("trail.ndjson"))?;
    for line in BufReader::new(file).lines() {
        if let Ok(TrailLine::Draw(d)) = serde_json::from_str::<TrailLine>(&line?) {
            let card = session.order[session.position[&d.card_id]];
            ballots[card] = session.contest.parse_vote(&d.mvr).map_err(invalid)?;
        }
    }
    let ids = session.cvrs.records().iter().map(|r| r.card_id.clone()).collect();
    let instance = LinkedInstance::from_parts(ids, session.cvrs.vote_list(), ballots);
    let batch = PreparedAudit::new(&instance, session.targets.clone()).map_err(invalid)?;
    let config = AuditConfig {
        alpha: session.config.alpha,
        seed: session.config.seed,
        max_draws: Some(status.draws),
    };
    let result = batch.run(&config).map_err(invalid)?;
    let batch_agrees = result.draws_examined == status.draws
        && result.assertions.len() == status.assertions.len()
        && result.assertions.iter().zip(&status.assertions).all(|(b, s)| {
            b.log_t.to_bits() == s.log_t.to_bits()
                && b.p_value.to_bits() == s.p_value.to_bits()
                && b.certified_at == s.certified_at
        });
    Ok(ReplayReport {
        id: status.id,
        draws: status.draws,
        status: status.status,
        p_value: status.p_value,
        assertions: status.assertions,
        batch_agrees,
    })
}

/// A plurality session over generated CVRs with CVR margin `v`, for trying
/// the service without real ballots. Also returns the true votes so a demo
/// board can enter them.
pub fn demo_config(n: usize, v: f64, seed: u64) -> Result<(SessionConfig, Vec<(String, Value)>), SessionError> {
    let scenario = generate(&ScenarioSpec::plurality(n, v, 0.0, ErrorModel::TwoUnder, seed)).map_err(invalid)?;
    let contest = scenario.contest;
    let inst = &scenario.instance;
    let cvrs = (0..inst.len())
        .map(|i| CvrLine {
            id: inst.card_ids()[i].clone(),
            vote: contest.vote_json(&inst.cvrs()[i]),
        })
        .collect();
    let ballots = (0..inst.len())
        .map(|i| (inst.card_ids()[i].clone(), contest.vote_json(&inst.ballots()[i])))
        .collect();
    let config = SessionConfig {
        contest,
        cvrs,
        method: Method::Mismatch,
        margin: Some(MarginInput {
            v_minus: scenario.margin.cards as i64,
            kind: MarginKind::Exact,
            source: Some("demo".into()),
        }),
        assertions: None,
        estimator: None,
        alpha: 0.05,
        seed,
    };
    Ok((config, ballots))
}

/// Session directories under `root`.
pub fn session_dirs(root: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    if root.is_dir() {
        for entry in fs::read_dir(root)? {
            let p = entry?.path();
            if p.join("config.json").is_file() {
                dirs.push(p);
            }
        }
    }
    dirs.sort();
    Ok(dirs)
}
