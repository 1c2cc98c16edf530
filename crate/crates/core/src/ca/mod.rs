//! Correspondence analysis of a contingency table.
//!
//! The table is turned into standardized chi-square residuals
//! `c_ij = (n_ij - E_ij) / sqrt(E_ij)` with `E_ij = row_i * col_j / n`, and
//! the residual matrix is decomposed as `C = U diag(delta) V'`. Row points
//! come from `U`, column points from `V`; a dimension's share of inertia is
//! `delta_k^2 / sum(delta^2)` and the squared singular values add up to the
//! Pearson chi-square statistic of the table.

mod svd;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cooccur::ContingencyTable;

pub use svd::{svd, Svd};

#[derive(Debug, Error, PartialEq)]
pub enum CaError {
    #[error("degenerate table: {0}")]
    DegenerateTable(String),
    #[error("requested {dims} dimensions but the table supports 1..={max}")]
    InvalidDims { dims: usize, max: usize },
    #[error("SVD did not converge within {sweeps} sweeps")]
    ConvergenceFailure { sweeps: usize },
}

/// Singular values at or below this fraction of the largest one are
/// treated as exact zeros (their vectors are numerically arbitrary).
const NULL_DIM_RATIO: f64 = 1e-10;

/// Norms below this are treated as the origin.
const ORIGIN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualMatrix {
    pub values: Vec<Vec<f64>>,
    pub expected: Vec<Vec<f64>>,
    pub chi_square: f64,
}

impl ResidualMatrix {
    fn row_masses(&self) -> Vec<f64> {
        self.expected.iter().map(|r| r.iter().sum()).collect()
    }

    fn col_masses(&self) -> Vec<f64> {
        let cols = self.expected.first().map_or(0, Vec::len);
        (0..cols)
            .map(|j| self.expected.iter().map(|r| r[j]).sum())
            .collect()
    }
}

pub fn residual_matrix(table: &ContingencyTable) -> Result<ResidualMatrix, CaError> {
    let rows = table.row_totals();
    let cols = table.col_totals();
    if let Some(i) = rows.iter().position(|&r| r == 0) {
        return Err(CaError::DegenerateTable(format!(
            "row {:?} has a zero margin",
            table.row_labels[i]
        )));
    }
    if let Some(j) = cols.iter().position(|&c| c == 0) {
        return Err(CaError::DegenerateTable(format!(
            "column {:?} has a zero margin",
            table.col_labels[j]
        )));
    }
    let n = table.grand_total as f64;
    let mut values = Vec::with_capacity(rows.len());
    let mut expected = Vec::with_capacity(rows.len());
    let mut chi_square = 0.0;
    for (i, &r) in rows.iter().enumerate() {
        let mut vrow = Vec::with_capacity(cols.len());
        let mut erow = Vec::with_capacity(cols.len());
        for (j, &c) in cols.iter().enumerate() {
            let e = r as f64 * c as f64 / n;
            let v = (table.counts[i][j] as f64 - e) / e.sqrt();
            chi_square += v * v;
            vrow.push(v);
            erow.push(e);
        }
        values.push(vrow);
        expected.push(erow);
    }
    Ok(ResidualMatrix {
        values,
        expected,
        chi_square,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordinateMode {
    /// Raw columns of `U` (rows) and `V` (columns).
    #[default]
    SingularVectors,
    /// Vectors scaled by `delta_k / sqrt(n * mass)`, the usual principal
    /// coordinates of correspondence analysis.
    Principal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaResult {
    /// All `min(R, C)` singular values, non-increasing.
    pub singular_values: Vec<f64>,
    /// `R x D` row (verb) coordinates.
    pub row_coords: Vec<Vec<f64>>,
    /// `C x D` column (noun) coordinates.
    pub col_coords: Vec<Vec<f64>>,
    /// Share of total inertia for each retained dimension.
    pub inertia_share: Vec<f64>,
    pub coordinate_mode: CoordinateMode,
    pub chi_square: f64,
}

impl CaResult {
    pub fn dims(&self) -> usize {
        self.inertia_share.len()
    }
}

/// SVD of the residual matrix, keeping `dims` dimensions.
///
/// For each retained dimension the largest-magnitude column coordinate is
/// made positive (earliest index wins on ties) so repeated runs and
/// permuted inputs give the same orientation.
pub fn decompose(
    residuals: &ResidualMatrix,
    dims: usize,
    mode: CoordinateMode,
) -> Result<CaResult, CaError> {
    let r = residuals.values.len();
    let c = residuals.values.first().map_or(0, Vec::len);
    let max = r.min(c);
    if dims == 0 || dims > max {
        return Err(CaError::InvalidDims { dims, max });
    }
    let Svd {
        mut u,
        mut s,
        mut v,
    } = svd(&residuals.values)?;

    let top = s.first().copied().unwrap_or(0.0);
    for k in 0..s.len() {
        if top == 0.0 || s[k] <= NULL_DIM_RATIO * top {
            s[k] = 0.0;
            u.iter_mut().for_each(|row| row[k] = 0.0);
            v.iter_mut().for_each(|row| row[k] = 0.0);
        }
    }

    let total: f64 = s.iter().map(|d| d * d).sum();
    let inertia_share: Vec<f64> = s[..dims]
        .iter()
        .map(|d| if total > 0.0 { d * d / total } else { 0.0 })
        .collect();

    let (row_scale, col_scale): (Vec<f64>, Vec<f64>) = match mode {
        CoordinateMode::SingularVectors => (vec![1.0; r], vec![1.0; c]),
        CoordinateMode::Principal => (
            residuals
                .row_masses()
                .iter()
                .map(|m| 1.0 / m.sqrt())
                .collect(),
            residuals
                .col_masses()
                .iter()
                .map(|m| 1.0 / m.sqrt())
                .collect(),
        ),
    };
    let dim_scale = |k: usize| match mode {
        CoordinateMode::SingularVectors => 1.0,
        CoordinateMode::Principal => s[k],
    };

    let mut row_coords: Vec<Vec<f64>> = (0..r)
        .map(|i| {
            (0..dims)
                .map(|k| u[i][k] * dim_scale(k) * row_scale[i])
                .collect()
        })
        .collect();
    let mut col_coords: Vec<Vec<f64>> = (0..c)
        .map(|j| {
            (0..dims)
                .map(|k| v[j][k] * dim_scale(k) * col_scale[j])
                .collect()
        })
        .collect();

    for k in 0..dims {
        let peak = col_coords.iter().map(|p| p[k].abs()).fold(0.0, f64::max);
        if peak == 0.0 {
            continue;
        }
        let lead = col_coords
            .iter()
            .map(|p| p[k])
            .find(|x| x.abs() >= peak * (1.0 - 1e-9))
            .unwrap_or(0.0);
        if lead < 0.0 {
            row_coords.iter_mut().for_each(|p| p[k] = -p[k]);
            col_coords.iter_mut().for_each(|p| p[k] = -p[k]);
        }
    }

    Ok(CaResult {
        singular_values: s,
        row_coords,
        col_coords,
        inertia_share,
        coordinate_mode: mode,
        chi_square: residuals.chi_square,
    })
}

pub fn norm(p: &[f64]) -> f64 {
    svd::dot(p, p).sqrt()
}

/// Cosine of the angle between two points seen from the origin; 0 when
/// either point sits at the origin.
pub fn association_cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na < ORIGIN_EPS || nb < ORIGIN_EPS {
        return 0.0;
    }
    (svd::dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// `max(0, cos) * sqrt(|verb| * |noun|) / plot_radius`: high when the two
/// points point the same way and both lie far from the origin.
pub fn narrative_score(verb_point: &[f64], noun_point: &[f64], plot_radius: f64) -> f64 {
    if plot_radius <= 0.0 {
        return 0.0;
    }
    let cos = association_cosine(verb_point, noun_point).max(0.0);
    let spread = (norm(verb_point) * norm(noun_point)).sqrt();
    (cos * spread / plot_radius).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(counts: Vec<Vec<u64>>) -> ContingencyTable {
        let rows = (0..counts.len()).map(|i| format!("v{i}")).collect();
        let cols = (0..counts[0].len()).map(|j| format!("n{j}")).collect();
        ContingencyTable::new(rows, cols, counts)
    }

    #[test]
    fn uniform_table_has_no_residual() {
        let res = residual_matrix(&table(vec![vec![4; 3]; 3])).unwrap();
        assert!(res.values.iter().flatten().all(|&x| x == 0.0));
        assert_eq!(res.chi_square, 0.0);
        let ca = decompose(&res, 2, CoordinateMode::SingularVectors).unwrap();
        assert!(ca.singular_values.iter().all(|&d| d == 0.0));
        assert!(ca.row_coords.iter().flatten().all(|&x| x == 0.0));
        assert!(ca.col_coords.iter().flatten().all(|&x| x == 0.0));
        assert_eq!(ca.inertia_share, vec![0.0, 0.0]);
    }

    #[test]
    fn diagonal_two_by_two() {
        let res = residual_matrix(&table(vec![vec![10, 0], vec![0, 10]])).unwrap();
        let r5 = 5f64.sqrt();
        assert_eq!(res.expected, vec![vec![5.0, 5.0], vec![5.0, 5.0]]);
        let want = [[r5, -r5], [-r5, r5]];
        for (got, want) in res.values.iter().flatten().zip(want.iter().flatten()) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((res.chi_square - 20.0).abs() < 1e-12);
        let ca = decompose(&res, 2, CoordinateMode::SingularVectors).unwrap();
        assert!((ca.singular_values[0] - 2.0 * r5).abs() < 1e-12);
        assert_eq!(ca.singular_values[1], 0.0);
        assert!((ca.inertia_share[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_margin_is_rejected() {
        let err = residual_matrix(&table(vec![vec![1, 0], vec![2, 0]])).unwrap_err();
        assert!(matches!(err, CaError::DegenerateTable(_)));
    }

    #[test]
    fn dims_are_validated() {
        let res = residual_matrix(&table(vec![vec![1, 2], vec![3, 1]])).unwrap();
        assert_eq!(
            decompose(&res, 3, CoordinateMode::SingularVectors),
            Err(CaError::InvalidDims { dims: 3, max: 2 })
        );
        assert!(decompose(&res, 0, CoordinateMode::SingularVectors).is_err());
    }

    #[test]
    fn largest_column_coordinate_is_positive() {
        let res = residual_matrix(&table(vec![
            vec![9, 1, 2, 0],
            vec![1, 7, 1, 3],
            vec![2, 2, 8, 1],
        ]))
        .unwrap();
        for mode in [CoordinateMode::SingularVectors, CoordinateMode::Principal] {
            let ca = decompose(&res, 2, mode).unwrap();
            for k in 0..2 {
                let lead = ca
                    .col_coords
                    .iter()
                    .map(|p| p[k])
                    .max_by(|a, b| a.abs().total_cmp(&b.abs()))
                    .unwrap();
                assert!(lead > 0.0);
            }
        }
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(association_cosine(&[1.0, 0.0], &[2.0, 0.0]), 1.0);
        assert_eq!(association_cosine(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
        assert!((association_cosine(&[1.0, 1.0], &[-1.0, -1.0]) + 1.0).abs() < 1e-15);
        assert_eq!(association_cosine(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn score_cases() {
        assert!((narrative_score(&[2.0, 0.0], &[2.0, 0.0], 2.0) - 1.0).abs() < 1e-15);
        assert_eq!(narrative_score(&[0.0, 0.0], &[2.0, 0.0], 2.0), 0.0);
        // cos 0.8, norms 1 and 4, radius 4
        let verb = [0.8, 0.6];
        let noun = [4.0, 0.0];
        assert!((narrative_score(&verb, &noun, 4.0) - 0.4).abs() < 1e-12);
        assert_eq!(narrative_score(&[1.0, 0.0], &[-1.0, 0.0], 1.0), 0.0);
    }
}
