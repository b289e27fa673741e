//! Acceptance suite: runs every release-gating criterion at its pinned
//! tolerance and prints one pass/fail line per criterion.
//!
//! The stochastic criteria are seeded and therefore deterministic; the same
//! checks back the `gate-sim verify` subcommand.

use gate_sim_core::verify;

#[test]
fn acceptance_criteria() {
    let results = verify::run_all(verify::DEFAULT_SEED);
    let mut all_passed = true;
    for r in &results {
        println!("{}", r.status_line());
        all_passed &= r.passed;
    }
    assert!(all_passed, "at least one acceptance criterion failed");
}
