//! Fixtures shared by the benchmarks in `benches/`.

use axpir_core::galois::Field;
use axpir_core::protocol::Scenario;
use axpir_core::topology::CommMatrix;

/// Named topologies of increasing size.
pub fn topologies() -> Vec<(&'static str, CommMatrix)> {
    let t = |n: usize, links: &[&[usize]]| {
        let links: Vec<Vec<usize>> = links.iter().map(|l| l.to_vec()).collect();
        CommMatrix::from_one_based(n, &links).expect("fixture topology")
    };
    vec![
        ("n4_pairs", t(4, &[&[1, 2], &[3, 4]])),
        ("n6_triples", t(6, &[&[1, 2, 3], &[4, 5, 6]])),
        ("n8_mixed", t(8, &[&[1, 2, 3], &[3, 4, 5], &[5, 6, 7, 8], &[1, 8]])),
        ("n10_pairs", t(10, &[&[1, 2], &[3, 4], &[5, 6], &[7, 8]])),
    ]
}

/// Scenarios for session benchmarks.
pub fn scenarios() -> Vec<(&'static str, Scenario)> {
    let f7 = Field::new(7).expect("7 is prime");
    vec![
        ("reduced_q2", Scenario::reduced_example(Field::binary())),
        ("grouped_k2_q7", Scenario::grouped_example(f7, 2)),
        ("grouped_k3_q7", Scenario::grouped_example(f7, 3)),
    ]
}
