use serde::Serialize;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// A 2x2 table of counts, `cells[row][col]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Contingency2x2 {
    pub cells: [[u64; 2]; 2],
    pub row_labels: [String; 2],
    pub col_labels: [String; 2],
}

impl Contingency2x2 {
    pub fn new(cells: [[u64; 2]; 2]) -> Self {
        Contingency2x2::labelled(cells, ["row 1", "row 2"], ["col 1", "col 2"])
    }

    pub fn labelled(cells: [[u64; 2]; 2], rows: [&str; 2], cols: [&str; 2]) -> Self {
        Contingency2x2 {
            cells,
            row_labels: rows.map(str::to_owned),
            col_labels: cols.map(str::to_owned),
        }
    }

    pub fn transpose(&self) -> Self {
        let [[a, b], [c, d]] = self.cells;
        Contingency2x2 {
            cells: [[a, c], [b, d]],
            row_labels: self.col_labels.clone(),
            col_labels: self.row_labels.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiSquared {
    pub statistic: f64,
    pub p_value: f64,
    pub dof: u32,
}

/// Pearson chi-squared test of independence on a 2x2 table, no continuity correction.
///
/// The statistic uses the closed form `n (ad - bc)^2 / (r1 r2 c1 c2)`; with one
/// degree of freedom the upper tail is `erfc(sqrt(x / 2))`.
pub fn chi_squared_1dof(table: &Contingency2x2) -> Result<ChiSquared> {
    let [[a, b], [c, d]] = table.cells.map(|r| r.map(u128::from));
    let rows = [a + b, c + d];
    let cols = [a + c, b + d];
    if rows.contains(&0) || cols.contains(&0) {
        return Err(Error::DegenerateTable(format!(
            "zero marginal in {:?} (rows {rows:?}, columns {cols:?})",
            table.cells
        )));
    }
    let n = (a + b + c + d) as f64;
    let det = (a * d).abs_diff(b * c) as f64;
    let denom = rows[0] as f64 * rows[1] as f64 * cols[0] as f64 * cols[1] as f64;
    let statistic = n * det * det / denom;
    Ok(ChiSquared {
        statistic,
        p_value: upper_tail_1dof(statistic),
        dof: 1,
    })
}

/// `P(X >= x)` for a chi-squared variable with one degree of freedom.
pub fn upper_tail_1dof(x: f64) -> f64 {
    erfc((x / 2.0).sqrt())
}
