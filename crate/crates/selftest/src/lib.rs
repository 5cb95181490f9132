//! Acceptance checks. Each criterion compares the library against a
//! reference computed here, independently of the code under test.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dual_softmax;
pub mod encoding;
pub mod end_to_end;
pub mod jacobian;
pub mod metrics;
pub mod oracle;
pub mod procrustes;
pub mod recovery;

use std::fmt;
use std::time::Duration;

/// Outcome of one acceptance criterion.
#[derive(Clone, Debug)]
pub struct Report {
    pub id: u32,
    pub name: &'static str,
    pub elapsed: Duration,
    pub time_limit: Duration,
    pub failures: Vec<String>,
    pub summary: String,
}

impl Report {
    pub fn new(
        id: u32,
        name: &'static str,
        elapsed: Duration,
        time_limit: Duration,
        mut failures: Vec<String>,
        summary: String,
    ) -> Self {
        if elapsed > time_limit {
            failures.push(format!("took {:.1}s, limit {:.0}s", elapsed.as_secs_f64(), time_limit.as_secs_f64()));
        }
        Self { id, name, elapsed, time_limit, failures, summary }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        write!(
            f,
            "{verdict} criterion {}: {} ({:.2}s) {}",
            self.id,
            self.name,
            self.elapsed.as_secs_f64(),
            self.summary
        )?;
        for failure in self.failures.iter().take(5) {
            write!(f, "\n    {failure}")?;
        }
        if self.failures.len() > 5 {
            write!(f, "\n    ... {} more", self.failures.len() - 5)?;
        }
        Ok(())
    }
}

/// Criterion ids with their runners, in order.
pub const CRITERIA: [(u32, fn() -> Report); 8] = [
    (1, encoding::run),
    (2, procrustes::run),
    (3, jacobian::run),
    (4, recovery::run),
    (5, metrics::run),
    (6, dual_softmax::run),
    (7, end_to_end::run),
    (8, config::run),
];

/// Runs the selected criteria (all when `only` is empty), calling `each`
/// as every report completes.
pub fn run_selected(only: &[u32], mut each: impl FnMut(&Report)) -> Vec<Report> {
    CRITERIA
        .iter()
        .filter(|(id, _)| only.is_empty() || only.contains(id))
        .map(|(_, run)| {
            let report = run();
            each(&report);
            report
        })
        .collect()
}
