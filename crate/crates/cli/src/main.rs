use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use rla_core::assorters::{irv_assertion_assorters, parse_assertions, plurality_assertions};
use rla_core::electiondata::{parse_cvrs, BallotSet};
use rla_core::errormodels::{generate, irv_margin, ScenarioSpec};
use rla_core::margins::{
    default_vocabulary, hamming_margin_bruteforce, irv_last_round_margin, load_external_margin, ExternalMargin,
    plurality_cvr_margin_with_witness, DEFAULT_WORK_BUDGET,
};
use rla_core::riskengine::PreparedAudit;
use rla_core::simharness::{run_experiment, write_outputs, ExperimentConfig};
use rla_core::{link, tabulate_irv, tabulate_plurality, AuditConfig, AuditTarget, Contest, ContestKind, CvrSet};
use rla_service::{demo_config, replay, AppState};

#[derive(Parser)]
#[command(name = "rla", version, about = "Risk-limiting audits from cast vote records")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Mismatch,
    Comparison,
}

#[derive(Subcommand)]
enum Command {
    /// Count the CVRs and report the outcome (with IRV round tallies).
    Tabulate {
        #[arg(long)]
        contest: PathBuf,
        #[arg(long)]
        cvrs: PathBuf,
    },
    /// CVR margin of a contest.
    Margin {
        #[arg(long)]
        contest: PathBuf,
        #[arg(long)]
        cvrs: PathBuf,
        /// Brute-force search radius; by default one below the last-round
        /// margin for IRV.
        #[arg(long)]
        radius: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_WORK_BUDGET)]
        budget: u64,
    },
    /// Audit linked CVRs and ballots, writing a per-draw log.
    Audit {
        #[arg(long)]
        contest: PathBuf,
        #[arg(long)]
        cvrs: PathBuf,
        /// The votes on the cards, in the CVR file format.
        #[arg(long)]
        ballots: PathBuf,
        #[arg(long, value_enum, default_value = "mismatch")]
        method: MethodArg,
        /// CVR margin (or lower bound) in cards, for a mismatch audit.
        #[arg(long, conflicts_with = "margin_file")]
        v_minus: Option<u64>,
        /// `{"V_minus": .., "source": ..}` file, for a mismatch audit.
        #[arg(long)]
        margin_file: Option<PathBuf>,
        /// IRV assertion file, for a comparison audit.
        #[arg(long)]
        assertions: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// NDJSON audit log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run a simulation grid.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Write a generated scenario as contest, CVR, ballot and margin files.
    Generate {
        /// Scenario spec as JSON.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild a service session from its trail and check it against a batch rerun.
    Replay { session: PathBuf },
    /// Run the audit service (bind address from RLA_BIND, data from RLA_DATA_DIR).
    Serve {
        #[arg(long)]
        bind: Option<std::net::SocketAddr>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Start with a generated plurality session.
        #[arg(long)]
        demo: bool,
        #[arg(long, default_value_t = 10_000)]
        demo_n: usize,
        #[arg(long, default_value_t = 0.06)]
        demo_v: f64,
        #[arg(long, default_value_t = 1)]
        demo_seed: u64,
    },
}

fn load(contest: &Path, cvrs: &Path) -> Result<(Contest, CvrSet)> {
    let c = Contest::load(contest).with_context(|| format!("reading {}", contest.display()))?;
    let v = parse_cvrs(cvrs, &c).with_context(|| format!("reading {}", cvrs.display()))?;
    Ok((c, v))
}

fn print(value: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}", serde_json::to_string_pretty(value)?) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn tabulate_cmd(contest: &Path, cvrs: &Path) -> Result<()> {
    let (contest, cvrs) = load(contest, cvrs)?;
    let votes = cvrs.vote_list();
    let names = |w: &std::collections::BTreeSet<_>| w.iter().map(|&c| contest.name(c).to_string()).collect::<Vec<_>>();
    match contest.kind() {
        ContestKind::Plurality => {
            let (tally, outcome) = tabulate_plurality(&votes, &contest);
            let counts: serde_json::Map<_, _> = contest
                .all_candidates()
                .map(|c| (contest.name(c).to_string(), json!(tally.count(c))))
                .collect();
            print(&json!({
                "N": votes.len(),
                "tally": counts,
                "null": tally.null_votes,
                "winners": names(&outcome.winners),
                "tie": outcome.tie_flag,
            }))
        }
        ContestKind::Irv => {
            let (rounds, outcome) = tabulate_irv(&votes, &contest)?;
            let rs: Vec<_> = rounds
                .rounds
                .iter()
                .map(|r| {
                    let t: serde_json::Map<_, _> = r
                        .tallies
                        .iter()
                        .map(|&(c, n)| (contest.name(c).to_string(), json!(n)))
                        .collect();
                    json!({ "tallies": t, "exhausted": r.exhausted })
                })
                .collect();
            print(&json!({
                "N": votes.len(),
                "rounds": rs,
                "eliminated": rounds.eliminated.iter().map(|&c| contest.name(c)).collect::<Vec<_>>(),
                "elimination_tie": rounds.elimination_tie,
                "majority_stop": rounds.majority_stop,
                "winners": names(&outcome.winners),
                "tie": outcome.tie_flag,
            }))
        }
        ContestKind::Stv => bail!("STV contests are not tabulated; supply the reported outcome and a margin bound"),
    }
}

fn margin_cmd(contest: &Path, cvrs: &Path, radius: Option<usize>, budget: u64) -> Result<()> {
    let (contest, cvrs) = load(contest, cvrs)?;
    let n = cvrs.len() as u64;
    let report = match (contest.kind(), radius) {
        (ContestKind::Plurality, None) => plurality_cvr_margin_with_witness(&cvrs, &contest),
        (ContestKind::Irv, None) if budget == DEFAULT_WORK_BUDGET => irv_margin(&cvrs, &contest)?,
        (_, r) => {
            let vocab = default_vocabulary(&contest)?;
            hamming_margin_bruteforce(&cvrs, &contest, r.unwrap_or(2), &vocab, budget)?
        }
    };
    let mut out = json!({ "margin": report.to_json(&contest) });
    if contest.kind() == ContestKind::Irv {
        let (rounds, _) = tabulate_irv(&cvrs.vote_list(), &contest)?;
        if let Ok(d) = irv_last_round_margin(&rounds, n) {
            out["last_round_diagnostic"] = d.to_json(&contest);
        }
    }
    print(&out)
}

#[allow(clippy::too_many_arguments)]
fn audit_cmd(
    contest: &Path,
    cvrs: &Path,
    ballots: &Path,
    method: MethodArg,
    v_minus: Option<u64>,
    margin_file: Option<&Path>,
    assertions: Option<&Path>,
    config: AuditConfig,
    log: Option<&Path>,
) -> Result<()> {
    let (contest, cvrs) = load(contest, cvrs)?;
    let ballots = BallotSet::load(ballots, &contest).with_context(|| format!("reading {}", ballots.display()))?;
    let instance = link(&cvrs, &ballots)?;
    let votes = cvrs.vote_list();
    let n = votes.len() as u64;
    let targets = match method {
        MethodArg::Mismatch => {
            let margin = match (v_minus, margin_file) {
                (Some(v), _) => rla_core::MarginReport::new(v, n, rla_core::MarginKind::LowerBound),
                (None, Some(p)) => load_external_margin(p, n)?,
                (None, None) if contest.kind() == ContestKind::Plurality => {
                    plurality_cvr_margin_with_witness(&cvrs, &contest)
                }
                (None, None) => irv_margin(&cvrs, &contest)?,
            };
            if !margin.usable_for_audit() {
                bail!("margin of {} cards ({:?}) cannot back a mismatch audit", margin.cards, margin.kind);
            }
            vec![AuditTarget::mismatch(margin.proportion())]
        }
        MethodArg::Comparison => {
            let set = match (contest.kind(), assertions) {
                (ContestKind::Plurality, _) => plurality_assertions(&contest, &votes)?,
                (_, Some(p)) => irv_assertion_assorters(&parse_assertions(&fs::read_to_string(p)?)?, &contest, &votes)?,
                (_, None) => bail!("a comparison audit of this contest needs --assertions"),
            };
            set.assertions
                .into_iter()
                .zip(set.margins)
                .map(|(a, nu)| AuditTarget::comparison(a, nu))
                .collect()
        }
    };
    let prepared = PreparedAudit::new(&instance, targets)?;
    let result = match log {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            let r = prepared.run_logged(&instance, &contest, &config, &mut w)?;
            w.flush()?;
            r
        }
        None => prepared.run(&config)?,
    };
    let mut out = serde_json::to_value(&result)?;
    out.as_object_mut().unwrap().remove("p_trajectory");
    print(&out)
}

fn simulate_cmd(config: &Path, out: &Path, jobs: Option<usize>, replications: Option<usize>) -> Result<()> {
    let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let mut cfg: ExperimentConfig = serde_json::from_str(&text)?;
    if jobs.is_some() {
        cfg.jobs = jobs;
    }
    if let Some(r) = replications {
        cfg.replications = r;
    }
    let result = run_experiment(&cfg)?;
    write_outputs(&result, out)?;
    print!("{}", fs::read_to_string(out.join("table2.txt"))?);
    Ok(())
}

fn generate_cmd(spec: &Path, out: &Path) -> Result<()> {
    let spec: ScenarioSpec = serde_json::from_str(&fs::read_to_string(spec)?)?;
    let s = generate(&spec)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("contest.json"), serde_json::to_string_pretty(&s.contest)? + "\n")?;
    s.instance.cvr_set().write_ndjson(File::create(out.join("cvrs.ndjson"))?, &s.contest)?;
    s.instance.ballot_set().write_ndjson(File::create(out.join("ballots.ndjson"))?, &s.contest)?;
    let margin = ExternalMargin {
        v_minus: s.margin.cards as i64,
        source: Some(format!("generated, {:?}", s.margin.kind).to_lowercase()),
    };
    fs::write(out.join("margin.json"), serde_json::to_string_pretty(&margin)? + "\n")?;
    let summary = serde_json::to_value(s.summary())?;
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    print(&summary)
}

fn serve_cmd(
    bind: Option<std::net::SocketAddr>,
    data_dir: Option<PathBuf>,
    demo: Option<(usize, f64, u64)>,
) -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    let bind = match bind {
        Some(b) => b,
        None => rla_service::bind_from_env()?,
    };
    let app = AppState::load(data_dir.unwrap_or_else(rla_service::data_dir_from_env))?;
    if let Some((n, v, seed)) = demo {
        let (config, _) = demo_config(n, v, seed)?;
        let id = app.create(config)?;
        eprintln!("demo session {id}");
    }
    tokio::runtime::Runtime::new()?.block_on(rla_service::serve(app, bind))?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Tabulate { contest, cvrs } => tabulate_cmd(&contest, &cvrs),
        Command::Margin {
            contest,
            cvrs,
            radius,
            budget,
        } => margin_cmd(&contest, &cvrs, radius, budget),
        Command::Audit {
            contest,
            cvrs,
            ballots,
            method,
            v_minus,
            margin_file,
            assertions,
            alpha,
            seed,
            log,
        } => audit_cmd(
            &contest,
            &cvrs,
            &ballots,
            method,
            v_minus,
            margin_file.as_deref(),
            assertions.as_deref(),
            AuditConfig::new(alpha, seed),
            log.as_deref(),
        ),
        Command::Simulate {
            config,
            out,
            jobs,
            replications,
        } => simulate_cmd(&config, &out, jobs, replications),
        Command::Generate { spec, out } => generate_cmd(&spec, &out),
        Command::Replay { session } => {
            let report = replay(&session)?;
            print(&serde_json::to_value(&report)?)?;
            if !report.batch_agrees {
                bail!("batch rerun disagrees with the session trail");
            }
            Ok(())
        }
        Command::Serve {
            bind,
            data_dir,
            demo,
            demo_n,
            demo_v,
            demo_seed,
        } => serve_cmd(bind, data_dir, demo.then_some((demo_n, demo_v, demo_seed))),
    }
}
