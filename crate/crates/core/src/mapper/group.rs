//! Zero-pattern grouping of unrolled input rows.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};

use super::SparseUnroll;
use crate::error::{Error, Result};

/// Rows sharing one zero pattern: `values[i][j]` is the entry of unrolled
/// row `rows[i]` at column `columns[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RowGroup {
    pub rows: Vec<usize>,
    pub columns: Vec<usize>,
    pub values: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupedInput {
    pub groups: Vec<RowGroup>,
    pub total_rows: usize,
    pub total_cols: usize,
}

impl GroupedInput {
    fn from_patterns(
        patterns: BTreeMap<Vec<usize>, Vec<usize>>,
        value: impl Fn(usize, usize) -> f64,
        total_rows: usize,
        total_cols: usize,
    ) -> Self {
        let mut groups: Vec<RowGroup> = patterns
            .into_iter()
            .filter(|(cols, _)| !cols.is_empty())
            .map(|(columns, rows)| {
                let values = Array2::from_shape_fn((rows.len(), columns.len()), |(i, j)| value(rows[i], columns[j]));
                RowGroup { rows, columns, values }
            })
            .collect();
        groups.sort_by_key(|g| g.rows[0]);
        GroupedInput {
            groups,
            total_rows,
            total_cols,
        }
    }

    /// The full unrolled matrix, zeros restored.
    pub fn reconstruct(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.total_rows, self.total_cols));
        for g in &self.groups {
            for (i, &r) in g.rows.iter().enumerate() {
                for (j, &c) in g.columns.iter().enumerate() {
                    out[[r, c]] = g.values[[i, j]];
                }
            }
        }
        out
    }

    /// `reconstruct() . kernel`, touching only the stored columns. Each
    /// group multiplies against the kernel rows its pattern selects.
    pub fn multiply(&self, kernel: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if kernel.nrows() != self.total_cols {
            return Err(Error::DimensionMismatch(format!(
                "kernel has {} rows, unrolled input {} columns",
                kernel.nrows(),
                self.total_cols
            )));
        }
        let mut out = Array2::zeros((self.total_rows, kernel.ncols()));
        for g in &self.groups {
            let sub = kernel.select(ndarray::Axis(0), &g.columns);
            for (i, &r) in g.rows.iter().enumerate() {
                let mut row = out.row_mut(r);
                for (j, &x) in g.values.row(i).iter().enumerate() {
                    for (o, &w) in row.iter_mut().zip(sub.row(j)) {
                        *o += x * w;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Scalar multiplies performed by [`multiply`](Self::multiply).
    pub fn multiply_count(&self, out_cols: usize) -> usize {
        self.groups
            .iter()
            .map(|g| g.rows.len() * g.columns.len())
            .sum::<usize>()
            * out_cols
    }

    pub fn stored_values(&self) -> usize {
        self.groups.iter().map(|g| g.values.len()).sum()
    }
}

/// Partition rows by the positions of their non-zero entries. Rows that
/// are entirely zero produce no group.
pub fn group_nonzero_rows(unrolled: ArrayView2<'_, f64>) -> GroupedInput {
    let mut patterns: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for (r, row) in unrolled.rows().into_iter().enumerate() {
        let cols: Vec<usize> = row
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(c, _)| c)
            .collect();
        patterns.entry(cols).or_default().push(r);
    }
    GroupedInput::from_patterns(patterns, |r, c| unrolled[[r, c]], unrolled.nrows(), unrolled.ncols())
}

/// Group by the structural tap pattern of a gather plan instead of by
/// values: padding and dilation zeros are dropped, data zeros are kept.
pub fn group_by_taps(plan: &SparseUnroll, input: &[f64]) -> GroupedInput {
    let mut patterns: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    let mut lookup: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for p in 0..plan.pixels() {
        let taps = plan.pixel_taps(p);
        for t in taps {
            lookup.insert((p, t.row), t.src);
        }
        patterns
            .entry(taps.iter().map(|t| t.row).collect())
            .or_default()
            .push(p);
    }
    GroupedInput::from_patterns(
        patterns,
        |r, c| input[lookup[&(r, c)]],
        plan.pixels(),
        plan.shape().kernel_rows(),
    )
}

/// Plain `unrolled . kernel` with every column visited.
pub fn dense_multiply(unrolled: ArrayView2<'_, f64>, kernel: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if unrolled.ncols() != kernel.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} times {}x{}",
            unrolled.nrows(),
            unrolled.ncols(),
            kernel.nrows(),
            kernel.ncols()
        )));
    }
    let mut out = Array2::zeros((unrolled.nrows(), kernel.ncols()));
    for (r, row) in unrolled.rows().into_iter().enumerate() {
        for (k, &x) in row.iter().enumerate() {
            for (o, &w) in out.row_mut(r).iter_mut().zip(kernel.row(k)) {
                *o += x * w;
            }
        }
    }
    Ok(out)
}

/// Scalar multiplies performed by [`dense_multiply`].
pub fn dense_multiply_count(rows: usize, cols: usize, out_cols: usize) -> usize {
    rows * cols * out_cols
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn dense_rows_form_one_group() {
        let u = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let g = group_nonzero_rows(u.view());
        assert_eq!(g.groups.len(), 1);
        assert_eq!(g.stored_values(), 6);
        assert_eq!(g.reconstruct(), u);
    }

    #[test]
    fn zero_rows_do_no_work() {
        let u = Array2::<f64>::zeros((4, 3));
        let g = group_nonzero_rows(u.view());
        assert!(g.groups.is_empty());
        assert_eq!(g.multiply_count(5), 0);
        let k = Array2::from_elem((3, 5), 1.5);
        assert_eq!(g.multiply(k.view()).unwrap(), Array2::<f64>::zeros((4, 5)));
    }

    #[test]
    fn mixed_patterns_multiply_like_dense() {
        let u = array![[0.0, 2.0, 0.0], [1.0, 0.0, 3.0], [0.0, -4.0, 0.0], [0.0, 0.0, 0.0]];
        let k = array![[1.0, -1.0], [0.5, 2.0], [-3.0, 0.25]];
        let g = group_nonzero_rows(u.view());
        assert_eq!(g.groups.len(), 2);
        assert_eq!(
            g.multiply(k.view()).unwrap(),
            dense_multiply(u.view(), k.view()).unwrap()
        );
        assert!(g.multiply_count(2) < dense_multiply_count(4, 3, 2));
    }
}
