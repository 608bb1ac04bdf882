//! Experiment harness: config, invariant audits, distribution checks and
//! seeded runs against baseline policies.

pub mod audit;
pub mod config;
pub mod distribution;
pub mod experiment;

pub use audit::{audit_stream, AuditReport, Auditor, InvariantId, Violation};
pub use config::{parse_seeds, AuditLevel, PolicySpec, RunConfig, StreamKind, Thresholds};
pub use distribution::{distribution_test, DistributionKind, DistributionReport};
pub use experiment::{run_experiment, summarize, write_report, ExperimentReport, StepRow, Summary};
