use std::io::Write;

use attn_margin::experiments::checks::{run_checks, CRITERIA};

#[test]
fn acceptance_criteria() {
    let results = run_checks(&[]);
    assert_eq!(results.len(), CRITERIA.len());
    // Written to the handle directly so the lines show without --nocapture.
    let mut out = std::io::stdout().lock();
    for r in &results {
        writeln!(out, "{}", r.line()).unwrap();
    }
    out.flush().unwrap();
    let failed: Vec<u8> = results.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
