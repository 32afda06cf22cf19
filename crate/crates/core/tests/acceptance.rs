//! Acceptance suite (`harness = false`): prints one `[PASS]`/`[FAIL]` line
//! per criterion and exits nonzero if any criterion fails.

use std::process::ExitCode;

use dyadic_core::selftest::{run_all, CriterionResult};

/// Instance counts each randomized criterion must report having run.
const EXPECTED_COUNTS: [(u32, &str); 5] = [
    (1, "200 instances"),
    (3, "1000 instances, 0 violations"),
    (5, "100 instances, 0 violations"),
    (8, "50 random sets, 0 failures"),
    (12, "20 random f, 0 failures"),
];

fn counts_ok(r: &CriterionResult) -> bool {
    EXPECTED_COUNTS
        .iter()
        .filter(|(id, _)| *id == r.id)
        .all(|(_, prefix)| r.detail.starts_with(prefix))
}

fn main() -> ExitCode {
    let mut failed = Vec::new();
    let results = run_all(|r| {
        let mut r = r.clone();
        if r.passed && !counts_ok(&r) {
            r.passed = false;
            r.detail = format!("unexpected instance count: {}", r.detail);
        }
        println!("{r}");
        if !r.passed {
            failed.push(r.id);
        }
    });
    println!(
        "{}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failing: {failed:?}");
        ExitCode::FAILURE
    }
}
