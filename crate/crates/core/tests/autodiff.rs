mod common;

use common::gradcheck::{all_cases, check, GRADCHECK_TOLERANCE};

#[test]
fn every_op_matches_finite_differences() {
    let mut failures = Vec::new();
    for (i, case) in all_cases().iter().enumerate() {
        let r = check(case, 100 + i as u64);
        if !(r.rel_error < GRADCHECK_TOLERANCE) {
            failures.push(format!("{}: {:.3e}", r.name, r.rel_error));
        }
    }
    assert!(failures.is_empty(), "gradcheck failures: {failures:?}");
}

#[test]
fn oracle_detects_a_wrong_gradient() {
    // Sanity check on the checker: a reference that disagrees with the tape
    // must be flagged.
    let mut case = all_cases().into_iter().find(|c| c.name == "silu").unwrap();
    case.reference = |a| common::gradcheck::scale(&a[0], 1.0);
    assert!(check(&case, 1).rel_error > 1e-2);
}
