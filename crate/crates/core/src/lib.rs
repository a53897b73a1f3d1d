//! Risk-limiting audits for a single contest, by mismatch counting or by
//! card-level comparison.
//!
//! The crate covers contest and vote data ([`electiondata`]), tabulation
//! ([`socialchoice`]), CVR margins ([`margins`]), assorters ([`assorters`]),
//! the sequential test ([`riskengine`]), synthetic error models
//! ([`errormodels`]) and the simulation harness ([`simharness`]).

pub mod assorters;
pub mod electiondata;
pub mod errormodels;
pub mod margins;
pub mod riskengine;
pub mod simharness;
pub mod socialchoice;

/// Exact rational used for votes, assorter values and margins.
pub type Rational = num_rational::Ratio<i128>;

pub use electiondata::{link, BallotSet, Candidate, Contest, ContestKind, CvrSet, LinkedInstance, Vote};
pub use margins::{MarginKind, MarginReport};
pub use riskengine::{run_audit, AuditConfig, AuditDecision, AuditResult, AuditTarget, EstimatorConfig};
pub use socialchoice::{outcome_equal, tabulate, tabulate_irv, tabulate_plurality, Outcome};
