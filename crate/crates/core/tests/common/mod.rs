#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trollhunter_core::cooccur::ContingencyTable;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(rel)
}

/// Random count table with every margin nonzero.
pub fn random_table(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> ContingencyTable {
    let mut counts: Vec<Vec<u64>> = (0..rows)
        .map(|_| {
            (0..cols)
                .map(|_| {
                    if rng.random_bool(0.3) {
                        0
                    } else {
                        rng.random_range(1..=50)
                    }
                })
                .collect()
        })
        .collect();
    for row in counts.iter_mut() {
        if row.iter().all(|&c| c == 0) {
            let j = rng.random_range(0..cols);
            row[j] = 1;
        }
    }
    for j in 0..cols {
        if counts.iter().all(|r| r[j] == 0) {
            let i = rng.random_range(0..rows);
            counts[i][j] = 1;
        }
    }
    ContingencyTable::new(
        (0..rows).map(|i| format!("v{i:02}")).collect(),
        (0..cols).map(|j| format!("n{j:02}")).collect(),
        counts,
    )
}

/// The seeded fuzz set: 100 tables from 2x2 up to 12x12.
pub fn fuzz_tables(seed: u64) -> Vec<ContingencyTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..100)
        .map(|_| {
            let r = rng.random_range(2..=12);
            let c = rng.random_range(2..=12);
            random_table(&mut rng, r, c)
        })
        .collect()
}

/// Pearson chi-square by the margin-product route, n * (sum n^2/(R C) - 1),
/// deliberately not via residuals.
pub fn pearson_chi_square(t: &ContingencyTable) -> f64 {
    let n = t.grand_total as f64;
    let rows: Vec<f64> = t
        .counts
        .iter()
        .map(|r| r.iter().sum::<u64>() as f64)
        .collect();
    let mut cols = vec![0.0; t.cols()];
    for r in &t.counts {
        for (j, &c) in r.iter().enumerate() {
            cols[j] += c as f64;
        }
    }
    let mut acc = 0.0;
    for (i, r) in t.counts.iter().enumerate() {
        for (j, &c) in r.iter().enumerate() {
            let c = c as f64;
            acc += c * c / (rows[i] * cols[j]);
        }
    }
    n * (acc - 1.0)
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
