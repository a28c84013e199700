//! Golden-fixture checks through the text matrix format: stored inputs and
//! the stored merge result must agree with a fresh computation.

use specmerge::linalg::Matrix;
use specmerge::merge::{merge_matrix, MergeConfig};

fn fixture(name: &str) -> Matrix {
    let text = std::fs::read_to_string(format!(
        "{}/tests/fixtures/{name}",
        env!("CARGO_MANIFEST_DIR")
    ))
    .unwrap();
    Matrix::from_text(&text).unwrap()
}

#[test]
fn merge_reproduces_golden_fixture() {
    let base = fixture("merge_base.txt");
    let new = fixture("merge_new.txt");
    let expected = fixture("merge_expected.txt");
    let cfg = MergeConfig::new(7, 3, 0.4, 0.25, 0.75).unwrap();
    let merged = merge_matrix(&base, &new, &cfg).unwrap();
    let err = merged.max_abs_diff(&expected).unwrap();
    assert!(err <= 1e-12, "golden merge deviates by {err:e}");
}

#[test]
fn fixtures_round_trip_bit_exactly() {
    for name in ["merge_base.txt", "merge_new.txt", "merge_expected.txt"] {
        let text = std::fs::read_to_string(format!(
            "{}/tests/fixtures/{name}",
            env!("CARGO_MANIFEST_DIR")
        ))
        .unwrap();
        let parsed = Matrix::from_text(&text).unwrap();
        assert_eq!(parsed.to_text(), text, "{name}");
    }
}
