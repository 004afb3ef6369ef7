//! Full acceptance gate: runs every criterion of the regression suite and
//! prints one pass/fail line per criterion. All tolerances and budgets are
//! pinned inside the suite next to each check.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to stream the
//! per-criterion lines; total runtime is dominated by the 2-D bisection
//! criteria (several minutes).

use ioa_cli::suite;

#[test]
fn all_criteria_pass() {
    let outcomes = suite::run_all();
    let lines = suite::render(&outcomes);
    for line in &lines {
        println!("{line}");
    }
    let failed: Vec<&String> = outcomes
        .iter()
        .zip(&lines)
        .filter(|(o, _)| !o.passed)
        .map(|(_, l)| l)
        .collect();
    assert!(
        failed.is_empty(),
        "failed criteria:\n{}",
        failed
            .iter()
            .map(|s| s.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    );
}
