use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::row_squared_errors;
use crate::error::{Error, Result};

/// Side of a grid cell in meters.
pub const DEFAULT_CELL_SIZE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    /// `None` marks an empty cell (no samples), which is different from zero error.
    pub mse: Option<f64>,
    pub count: usize,
}

/// Squared errors binned by the true location of each sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridErrorMap {
    pub cell_size: f64,
    pub extents: [f64; 2],
    /// Cells along x.
    pub columns: usize,
    /// Cells along y.
    pub rows: usize,
    /// Row-major, `cells[row * columns + column]`.
    pub cells: Vec<GridCell>,
    /// Samples whose label fell outside the extents and were put in a boundary cell.
    pub out_of_extents: usize,
}

impl GridErrorMap {
    pub fn cell(&self, column: usize, row: usize) -> &GridCell {
        &self.cells[row * self.columns + column]
    }

    pub fn total_count(&self) -> usize {
        self.cells.iter().map(|c| c.count).sum()
    }

    /// Count-weighted mean of the cell MSEs (equals the global MSE).
    pub fn weighted_mse(&self) -> f64 {
        let total = self.total_count() as f64;
        self.cells
            .iter()
            .filter_map(|c| c.mse.map(|m| m * c.count as f64))
            .sum::<f64>()
            / total
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("column,row,x_min,y_min,count,mse\n");
        for row in 0..self.rows {
            for column in 0..self.columns {
                let c = self.cell(column, row);
                let mse = c.mse.map(|m| m.to_string()).unwrap_or_default();
                out.push_str(&format!(
                    "{column},{row},{},{},{},{mse}\n",
                    column as f64 * self.cell_size,
                    row as f64 * self.cell_size,
                    c.count
                ));
            }
        }
        out
    }
}

fn bin(v: f64, cell: f64, n: usize) -> (usize, bool) {
    let idx = (v / cell).floor();
    if idx < 0.0 || v.is_nan() {
        (0, true)
    } else if idx as usize >= n {
        // the far edge itself belongs to the last cell
        (n - 1, v > n as f64 * cell)
    } else {
        (idx as usize, false)
    }
}

/// Bins the per-sample squared error (mean over coordinates) by the first two label coordinates.
pub fn grid_error_map(
    predictions: &ArrayView2<f64>,
    labels: &ArrayView2<f64>,
    extents: [f64; 2],
    cell_size: f64,
) -> Result<GridErrorMap> {
    if predictions.dim() != labels.dim() {
        return Err(Error::contract("predictions and labels differ in shape"));
    }
    if labels.ncols() < 2 {
        return Err(Error::contract("grid maps need two label coordinates"));
    }
    if !(cell_size > 0.0) || !(extents[0] > 0.0 && extents[1] > 0.0) {
        return Err(Error::config("eval.cell_size", "cell size and extents must be positive"));
    }
    let columns = (extents[0] / cell_size).ceil() as usize;
    let rows = (extents[1] / cell_size).ceil() as usize;
    let mut sums = vec![0.0; columns * rows];
    let mut counts = vec![0usize; columns * rows];
    let mut out_of_extents = 0;
    let errors = if labels.nrows() == 0 {
        Vec::new()
    } else {
        row_squared_errors(predictions, labels)
    };
    for (i, e) in errors.into_iter().enumerate() {
        let (cx, ox) = bin(labels[[i, 0]], cell_size, columns);
        let (cy, oy) = bin(labels[[i, 1]], cell_size, rows);
        if ox || oy {
            out_of_extents += 1;
        }
        sums[cy * columns + cx] += e;
        counts[cy * columns + cx] += 1;
    }
    if out_of_extents > 0 {
        log::warn!("{out_of_extents} labels outside the floor extents were assigned to boundary cells");
    }
    let cells = sums
        .into_iter()
        .zip(counts)
        .map(|(s, count)| GridCell {
            mse: (count > 0).then(|| s / count as f64),
            count,
        })
        .collect();
    Ok(GridErrorMap {
        cell_size,
        extents,
        columns,
        rows,
        cells,
        out_of_extents,
    })
}
