//! Monte-Carlo experiments: many audits of fixed generated populations,
//! summarised by mean sample size and full-count fraction.
//!
//! Each grid point's population is generated once; replication `r` differs
//! only in its sampling seed, derived from the master seed, the grid point
//! and `r` with SHA-256. Results therefore do not depend on the number of
//! worker threads.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use flate2::write::GzEncoder;
use flate2::Compression;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::errormodels::{generate, ErrorModel, Scenario, ScenarioSpec, ScenarioSummary};
use crate::electiondata::ContestKind;
use crate::riskengine::{AuditConfig, AuditDecision, AuditError, AuditTarget, EstimatorConfig, PreparedAudit};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("replications must be at least 1")]
    NoReplications,
    #[error("the experiment has no grid points")]
    EmptyGrid,
    #[error("grid point {key} has no {method} result")]
    MissingMethod { key: String, method: Method },
    #[error("building the worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mismatch,
    Comparison,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Mismatch => "mismatch",
            Method::Comparison => "comparison",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Methods {
    #[default]
    Mismatch,
    Comparison,
    Both,
}

impl Methods {
    fn list(self) -> &'static [Method] {
        match self {
            Methods::Mismatch => &[Method::Mismatch],
            Methods::Comparison => &[Method::Comparison],
            Methods::Both => &[Method::Mismatch, Method::Comparison],
        }
    }
}

/// Cartesian product of plurality or STV scenario parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub models: Vec<ErrorModel>,
    #[serde(rename = "N")]
    pub n: Vec<usize>,
    pub v: Vec<f64>,
    pub m: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl Sweep {
    pub fn specs(&self) -> Vec<ScenarioSpec> {
        let mut out = Vec::new();
        for &model in &self.models {
            for &v in &self.v {
                for &n in &self.n {
                    for &m in &self.m {
                        out.push(ScenarioSpec {
                            kind: model.kind(),
                            n,
                            v,
                            m,
                            model,
                            seed: self.seed,
                            base: None,
                        });
                    }
                }
            }
        }
        out
    }
}

fn default_replications() -> usize {
    1000
}

fn default_alpha() -> f64 {
    0.05
}

fn default_comparison_estimator() -> EstimatorConfig {
    EstimatorConfig::cobra(1e-5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub grid: Vec<ScenarioSpec>,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub methods: Methods,
    #[serde(default = "EstimatorConfig::shrink_trunc")]
    pub mismatch_estimator: EstimatorConfig,
    #[serde(default = "default_comparison_estimator")]
    pub comparison_estimator: EstimatorConfig,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub master_seed: u64,
    /// Worker threads; `None` lets the pool decide.
    #[serde(default)]
    pub jobs: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(grid: Vec<ScenarioSpec>, methods: Methods, replications: usize, master_seed: u64) -> Self {
        ExperimentConfig {
            grid,
            sweep: None,
            replications,
            methods,
            mismatch_estimator: EstimatorConfig::shrink_trunc(),
            comparison_estimator: default_comparison_estimator(),
            alpha: default_alpha(),
            master_seed,
            jobs: None,
        }
    }

    /// Explicit grid points followed by the sweep's.
    pub fn points(&self) -> Vec<ScenarioSpec> {
        let mut out = self.grid.clone();
        if let Some(s) = &self.sweep {
            out.extend(s.specs());
        }
        out
    }
}

/// Stable identifier of a grid point.
pub fn grid_key(spec: &ScenarioSpec) -> String {
    let mut key = format!(
        "{}:{}:N={}:v={}:m={}:seed={}",
        spec.kind,
        spec.model.name(),
        spec.n,
        spec.v,
        spec.m,
        spec.seed
    );
    if let Some(b) = &spec.base {
        let _ = write!(key, ":cvrs={}", b.cvrs.display());
    }
    key
}

/// Sampling seed of replication `r` at grid point `key`.
pub fn replication_seed(master: u64, key: &str, r: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((key.len() as u64).to_le_bytes());
    h.update(key.as_bytes());
    h.update((r as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// One audit of the replication set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Replication {
    pub seed: u64,
    pub n_draws: usize,
    pub decision: AuditDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub mean_n: f64,
    pub full_count_fraction: f64,
    pub replications: Vec<Replication>,
}

impl MethodResult {
    fn from_replications(method: Method, replications: Vec<Replication>) -> Self {
        let k = replications.len() as f64;
        let mean_n = replications.iter().map(|r| r.n_draws as f64).sum::<f64>() / k;
        let full = replications
            .iter()
            .filter(|r| r.decision == AuditDecision::FullCount)
            .count() as f64;
        MethodResult {
            method,
            mean_n,
            full_count_fraction: full / k,
            replications,
        }
    }

    /// Standard error of the mean sample size.
    pub fn std_error(&self) -> f64 {
        let k = self.replications.len() as f64;
        if k < 2.0 {
            return 0.0;
        }
        let var = self
            .replications
            .iter()
            .map(|r| (r.n_draws as f64 - self.mean_n).powi(2))
            .sum::<f64>()
            / (k - 1.0);
        (var / k).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub key: String,
    pub spec: ScenarioSpec,
    pub summary: Option<ScenarioSummary>,
    /// Why the point (or one of its methods) was skipped.
    pub skipped: Option<String>,
    pub methods: Vec<MethodResult>,
}

impl PointResult {
    pub fn method(&self, m: Method) -> Option<&MethodResult> {
        self.methods.iter().find(|r| r.method == m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub alpha: f64,
    pub replications: usize,
    pub points: Vec<PointResult>,
}

/// Audit targets for `method` on a generated scenario.
pub fn targets_for(
    scenario: &Scenario,
    method: Method,
    mismatch_estimator: &EstimatorConfig,
    comparison_estimator: &EstimatorConfig,
) -> Result<Vec<AuditTarget>, String> {
    match method {
        Method::Mismatch => {
            if !scenario.margin.usable_for_audit() {
                return Err(format!(
                    "margin of {} cards ({:?}) cannot back a mismatch audit",
                    scenario.margin.cards, scenario.margin.kind
                ));
            }
            Ok(vec![
                AuditTarget::mismatch(scenario.margin.proportion()).with_estimator(mismatch_estimator.clone())
            ])
        }
        Method::Comparison => {
            if scenario.comparison.is_empty() {
                return Err("no comparison assorters for this contest".into());
            }
            Ok(scenario
                .comparison
                .iter()
                .map(|(a, nu)| AuditTarget::comparison(a.clone(), *nu).with_estimator(comparison_estimator.clone()))
                .collect())
        }
    }
}

/// Runs `replications` audits of one prepared population.
pub fn replicate(
    prepared: &PreparedAudit,
    alpha: f64,
    master_seed: u64,
    key: &str,
    replications: usize,
) -> Result<Vec<Replication>, AuditError> {
    (0..replications)
        .into_par_iter()
        .map(|r| {
            let seed = replication_seed(master_seed, key, r);
            let res = prepared.run(&AuditConfig::new(alpha, seed))?;
            Ok(Replication {
                seed,
                n_draws: res.n_draws,
                decision: res.decision,
            })
        })
        .collect()
}

fn run_point(config: &ExperimentConfig, spec: ScenarioSpec) -> Result<PointResult, SimError> {
    let key = grid_key(&spec);
    let mut point = PointResult {
        key: key.clone(),
        spec,
        summary: None,
        skipped: None,
        methods: Vec::new(),
    };
    let scenario = match generate(&point.spec) {
        Ok(s) => s,
        Err(e) => {
            point.skipped = Some(e.to_string());
            return Ok(point);
        }
    };
    point.summary = Some(scenario.summary());
    let mut reasons = Vec::new();
    for &method in config.methods.list() {
        let targets = match targets_for(&scenario, method, &config.mismatch_estimator, &config.comparison_estimator) {
            Ok(t) => t,
            Err(reason) => {
                reasons.push(format!("{method}: {reason}"));
                continue;
            }
        };
        let prepared = match PreparedAudit::new(&scenario.instance, targets) {
            Ok(p) => p,
            Err(e) => {
                reasons.push(format!("{method}: {e}"));
                continue;
            }
        };
        let method_key = format!("{key}:{method}");
        let reps = replicate(&prepared, config.alpha, config.master_seed, &method_key, config.replications)?;
        point.methods.push(MethodResult::from_replications(method, reps));
    }
    if !reasons.is_empty() {
        point.skipped = Some(reasons.join("; "));
    }
    Ok(point)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult, SimError> {
    if config.replications == 0 {
        return Err(SimError::NoReplications);
    }
    let specs = config.points();
    if specs.is_empty() {
        return Err(SimError::EmptyGrid);
    }
    let run = || {
        specs
            .into_par_iter()
            .map(|s| run_point(config, s))
            .collect::<Result<Vec<_>, _>>()
    };
    let points = match config.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .map_err(|e| SimError::Pool(e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    Ok(ExperimentResult {
        alpha: config.alpha,
        replications: config.replications,
        points,
    })
}

/// Mismatch-audit sample sizes laid out as rows (v, N) by columns m.
#[derive(Debug, Clone, PartialEq)]
pub struct Table2 {
    pub ms: Vec<f64>,
    /// Each row: v, N, and one cell per m.
    pub rows: Vec<(f64, usize, Vec<Table2Cell>)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Table2Cell {
    /// Every replication required a full count.
    Full,
    Mean(f64),
    Missing,
}

impl Table2Cell {
    fn text(&self) -> String {
        match self {
            Table2Cell::Full => "F".into(),
            Table2Cell::Mean(x) => thousands(x.round() as u64),
            Table2Cell::Missing => "?".into(),
        }
    }
}

fn thousands(x: u64) -> String {
    let s = x.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Orders floats for use as map keys; grid values are finite.
fn ord(x: f64) -> u64 {
    x.to_bits()
}

/// Builds the mismatch-audit table. When several error models share a
/// (v, N, m) point, the first in grid order is used.
pub fn table2(result: &ExperimentResult) -> Table2 {
    let mut cells: BTreeMap<(u64, usize, u64), Table2Cell> = BTreeMap::new();
    let mut row_keys = BTreeSet::new();
    let mut ms = BTreeSet::new();
    for p in &result.points {
        let (v, n, m) = (p.spec.v, p.spec.n, p.spec.m);
        row_keys.insert((ord(v), n));
        ms.insert(ord(m));
        let cell = match p.method(Method::Mismatch) {
            Some(r) if r.full_count_fraction == 1.0 => Table2Cell::Full,
            Some(r) => Table2Cell::Mean(r.mean_n),
            None => Table2Cell::Missing,
        };
        let slot = cells.entry((ord(v), n, ord(m))).or_insert(Table2Cell::Missing);
        if *slot == Table2Cell::Missing {
            *slot = cell;
        }
    }
    let ms: Vec<u64> = ms.into_iter().collect();
    let mut rows = Vec::new();
    for &(v, n) in &row_keys {
        let row = ms
            .iter()
            .map(|&m| cells.get(&(v, n, m)).copied().unwrap_or(Table2Cell::Missing))
            .collect();
        rows.push((f64::from_bits(v), n, row));
    }
    Table2 {
        ms: ms.into_iter().map(f64::from_bits).collect(),
        rows,
    }
}

/// Table as (CSV, aligned text).
pub fn emit_table2(result: &ExperimentResult) -> Result<(String, String), SimError> {
    let t = table2(result);
    let mut csv = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["v".to_string(), "N".to_string()];
    header.extend(t.ms.iter().map(|m| format!("m={m}")));
    csv.write_record(&header)?;
    let mut text_rows = vec![header.clone()];
    let mut missing = false;
    for (v, n, cells) in &t.rows {
        let mut rec = vec![v.to_string(), n.to_string()];
        let mut text = rec.clone();
        for c in cells {
            missing |= *c == Table2Cell::Missing;
            rec.push(match c {
                Table2Cell::Full => "F".into(),
                Table2Cell::Mean(x) => format!("{x:.1}"),
                Table2Cell::Missing => String::new(),
            });
            text.push(c.text());
        }
        csv.write_record(&rec)?;
        text_rows.push(text);
    }
    let csv = String::from_utf8(csv.into_inner().map_err(|e| e.into_error())?).expect("csv output is UTF-8");
    let widths: Vec<usize> = (0..header.len())
        .map(|i| text_rows.iter().map(|r| r[i].len()).max().unwrap_or(0))
        .collect();
    let mut text = String::new();
    for row in &text_rows {
        let line: Vec<String> = row.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect();
        text.push_str(line.join("  ").trim_end());
        text.push('\n');
    }
    if missing {
        text.push_str("? = grid point missing or skipped\n");
    }
    Ok((csv, text))
}

/// CSV of (mean mismatch n − mean comparison n)/N per grid point.
pub fn emit_comparison_plotdata(result: &ExperimentResult) -> Result<String, SimError> {
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["v", "N", "m", "model", "diff"])?;
    for p in &result.points {
        let get = |method| {
            p.method(method).ok_or_else(|| SimError::MissingMethod {
                key: p.key.clone(),
                method,
            })
        };
        let (a, b) = (get(Method::Mismatch)?, get(Method::Comparison)?);
        let n = p.summary.as_ref().map_or(p.spec.n, |s| s.n) as f64;
        csv.write_record([
            p.spec.v.to_string(),
            p.spec.n.to_string(),
            p.spec.m.to_string(),
            p.spec.model.name().to_string(),
            ((a.mean_n - b.mean_n) / n).to_string(),
        ])?;
    }
    Ok(String::from_utf8(csv.into_inner().map_err(|e| e.into_error())?).expect("csv output is UTF-8"))
}

/// One summary row per (grid point, method).
pub fn emit_summary(result: &ExperimentResult) -> Result<String, SimError> {
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record([
        "key",
        "kind",
        "model",
        "N",
        "v",
        "m",
        "V",
        "M",
        "outcome_correct",
        "method",
        "replications",
        "mean_n",
        "std_error",
        "full_count_fraction",
        "skipped",
    ])?;
    for p in &result.points {
        let s = p.summary.as_ref();
        let base = |method: String, reps: String, mean: String, se: String, full: String| {
            vec![
                p.key.clone(),
                match p.spec.kind {
                    ContestKind::Plurality => "plurality",
                    ContestKind::Irv => "irv",
                    ContestKind::Stv => "stv",
                }
                .to_string(),
                p.spec.model.name().to_string(),
                s.map_or(p.spec.n, |s| s.n).to_string(),
                p.spec.v.to_string(),
                p.spec.m.to_string(),
                s.map_or(String::new(), |s| s.v_cards.to_string()),
                s.map_or(String::new(), |s| s.mismatches.to_string()),
                s.map_or(String::new(), |s| s.outcome_correct.to_string()),
                method,
                reps,
                mean,
                se,
                full,
                p.skipped.clone().unwrap_or_default(),
            ]
        };
        if p.methods.is_empty() {
            csv.write_record(base(String::new(), String::new(), String::new(), String::new(), String::new()))?;
        }
        for r in &p.methods {
            csv.write_record(base(
                r.method.to_string(),
                r.replications.len().to_string(),
                r.mean_n.to_string(),
                r.std_error().to_string(),
                r.full_count_fraction.to_string(),
            ))?;
        }
    }
    Ok(String::from_utf8(csv.into_inner().map_err(|e| e.into_error())?).expect("csv output is UTF-8"))
}

/// Writes summary.csv, table2.csv, table2.txt, diffplot.csv (when both
/// methods ran everywhere), result.json and raw/<point>.ndjson.gz.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<(), SimError> {
    fs::create_dir_all(dir.join("raw"))?;
    fs::write(dir.join("summary.csv"), emit_summary(result)?)?;
    let (csv, text) = emit_table2(result)?;
    fs::write(dir.join("table2.csv"), csv)?;
    fs::write(dir.join("table2.txt"), text)?;
    match emit_comparison_plotdata(result) {
        Ok(plot) => fs::write(dir.join("diffplot.csv"), plot)?,
        Err(SimError::MissingMethod { .. }) => {}
        Err(e) => return Err(e),
    }
    for (i, p) in result.points.iter().enumerate() {
        let file = File::create(dir.join("raw").join(format!("{i:04}.ndjson.gz")))?;
        let mut gz = BufWriter::new(GzEncoder::new(file, Compression::default()));
        for m in &p.methods {
            for (r, rep) in m.replications.iter().enumerate() {
                let line = serde_json::json!({
                    "key": p.key,
                    "method": m.method,
                    "r": r,
                    "seed": rep.seed,
                    "n_draws": rep.n_draws,
                    "decision": rep.decision,
                });
                writeln!(gz, "{line}")?;
            }
        }
        gz.into_inner().map_err(|e| e.into_error())?.finish()?;
    }
    let mut lean = result.clone();
    for p in &mut lean.points {
        for m in &mut p.methods {
            m.replications.clear();
        }
    }
    fs::write(dir.join("result.json"), serde_json::to_string_pretty(&lean)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(grid: Vec<ScenarioSpec>, methods: Methods, reps: usize) -> ExperimentConfig {
        ExperimentConfig::new(grid, methods, reps, 11)
    }

    #[test]
    fn seeds_depend_on_every_input() {
        let a = replication_seed(1, "k", 0);
        assert_eq!(a, replication_seed(1, "k", 0));
        assert_ne!(a, replication_seed(2, "k", 0));
        assert_ne!(a, replication_seed(1, "j", 0));
        assert_ne!(a, replication_seed(1, "k", 1));
    }

    #[test]
    fn rerun_is_identical_and_mean_matches_raw() {
        let grid = vec![ScenarioSpec::plurality(2000, 0.05, 0.001, ErrorModel::TwoOver, 3)];
        let c = cfg(grid, Methods::Both, 20);
        let a = run_experiment(&c).unwrap();
        assert_eq!(a, run_experiment(&c).unwrap());
        for m in &a.points[0].methods {
            let mean = m.replications.iter().map(|r| r.n_draws as f64).sum::<f64>() / 20.0;
            assert_eq!(mean, m.mean_n);
            assert!(m.mean_n <= 2000.0);
        }
    }

    #[test]
    fn one_thread_matches_default_pool() {
        let grid = vec![ScenarioSpec::plurality(1000, 0.1, 0.0, ErrorModel::TwoUnder, 3)];
        let mut c = cfg(grid, Methods::Mismatch, 8);
        let a = run_experiment(&c).unwrap();
        c.jobs = Some(1);
        assert_eq!(a, run_experiment(&c).unwrap());
    }

    #[test]
    fn infeasible_points_are_skipped() {
        let grid = vec![ScenarioSpec::plurality(100, 0.9, 0.5, ErrorModel::TwoOver, 3)];
        let r = run_experiment(&cfg(grid, Methods::Mismatch, 2)).unwrap();
        assert!(r.points[0].skipped.is_some());
        let (_, text) = emit_table2(&r).unwrap();
        assert!(text.contains('?'));
    }

    #[test]
    fn table_marks_full_counts() {
        let grid = vec![
            ScenarioSpec::plurality(1000, 0.002, 0.05, ErrorModel::TwoOver, 1),
            ScenarioSpec::plurality(1000, 0.1, 0.0, ErrorModel::TwoOver, 1),
        ];
        let r = run_experiment(&cfg(grid, Methods::Mismatch, 5)).unwrap();
        let t = table2(&r);
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0].2[1], Table2Cell::Full);
        assert!(matches!(t.rows[1].2[0], Table2Cell::Mean(_)));
        let (csv, text) = emit_table2(&r).unwrap();
        assert!(csv.lines().count() == 3 && text.contains('F'));
    }

    #[test]
    fn plot_data_needs_both_methods() {
        let grid = vec![ScenarioSpec::plurality(1000, 0.1, 0.0, ErrorModel::TwoOver, 1)];
        let r = run_experiment(&cfg(grid.clone(), Methods::Mismatch, 2)).unwrap();
        assert!(matches!(emit_comparison_plotdata(&r), Err(SimError::MissingMethod { .. })));
        let r = run_experiment(&cfg(grid, Methods::Both, 2)).unwrap();
        assert_eq!(emit_comparison_plotdata(&r).unwrap().lines().count(), 2);
    }

    #[test]
    fn identical_methods_give_zero_difference() {
        let grid = vec![ScenarioSpec::plurality(1000, 0.1, 0.0, ErrorModel::TwoOver, 1)];
        let mut r = run_experiment(&cfg(grid, Methods::Mismatch, 3)).unwrap();
        let mut twin = r.points[0].methods[0].clone();
        twin.method = Method::Comparison;
        r.points[0].methods.push(twin);
        let plot = emit_comparison_plotdata(&r).unwrap();
        assert!(plot.lines().nth(1).unwrap().ends_with(",0"));
    }

    #[test]
    fn outputs_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let grid = vec![ScenarioSpec::plurality(1000, 0.1, 0.0, ErrorModel::TwoOver, 1)];
        let r = run_experiment(&cfg(grid, Methods::Both, 3)).unwrap();
        write_outputs(&r, dir.path()).unwrap();
        for f in ["summary.csv", "table2.txt", "table2.csv", "diffplot.csv", "result.json", "raw/0000.ndjson.gz"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }

    #[test]
    fn config_defaults_from_json() {
        let c: ExperimentConfig = serde_json::from_str(
            r#"{"sweep": {"models": ["two_over"], "N": [10000], "v": [0.1, 0.01], "m": [0, 0.001]}}"#,
        )
        .unwrap();
        assert_eq!(c.replications, 1000);
        assert_eq!(c.alpha, 0.05);
        assert_eq!(c.points().len(), 4);
    }
}
