//! Binary datasets in the comma-separated "Twenty Datasets" layout.
//!
//! Samples are stored column-major as packed bit vectors so that pairwise
//! counts and circuit flows reduce to word-wise AND/OR and popcounts.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bits::Bits;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    columns: Vec<Bits>,
    num_rows: usize,
    weights: Option<Vec<f64>>,
}

impl Dataset {
    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let m = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidArgument("dataset has no rows".into()))?;
        if m == 0 {
            return Err(Error::InvalidArgument("dataset has no columns".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::format(
                    i + 1,
                    format!("expected {m} values, found {}", row.len()),
                ));
            }
        }
        let columns = (0..m).map(|v| Bits::from_bools(rows.iter().map(|r| r[v]))).collect();
        Ok(Dataset {
            columns,
            num_rows: rows.len(),
            weights: None,
        })
    }

    /// Builds a dataset directly from per-variable columns of equal length.
    pub fn from_columns(columns: Vec<Bits>) -> Result<Self> {
        let num_rows = columns
            .first()
            .map(Bits::len)
            .ok_or_else(|| Error::InvalidArgument("dataset has no columns".into()))?;
        if columns.iter().any(|c| c.len() != num_rows) {
            return Err(Error::InvalidArgument("columns differ in length".into()));
        }
        Ok(Dataset {
            columns,
            num_rows,
            weights: None,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut rows: Vec<Vec<bool>> = Vec::new();
        let mut width = None;
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|tok| match tok.trim() {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(Error::format(line_no, format!("non-binary token {other:?}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            match width {
                None => width = Some(row.len()),
                Some(w) if w != row.len() => {
                    return Err(Error::format(
                        line_no,
                        format!("expected {w} values, found {}", row.len()),
                    ))
                }
                _ => {}
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::format(0, "empty dataset"));
        }
        Dataset::from_rows(&rows)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Dataset::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.num_rows * self.num_vars() * 2);
        for r in 0..self.num_rows {
            for v in 0..self.num_vars() {
                if v > 0 {
                    out.push(',');
                }
                out.push(if self.value(r, v) { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    #[inline]
    pub fn num_vars(&self) -> usize {
        self.columns.len()
    }

    #[inline]
    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    #[inline]
    pub fn column(&self, var: usize) -> &Bits {
        &self.columns[var]
    }

    pub fn columns(&self) -> &[Bits] {
        &self.columns
    }

    #[inline]
    pub fn value(&self, row: usize, var: usize) -> bool {
        self.columns[var].get(row)
    }

    pub fn row(&self, row: usize) -> Vec<bool> {
        self.columns.iter().map(|c| c.get(row)).collect()
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    #[inline]
    pub fn weight(&self, row: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[row])
    }

    pub fn total_weight(&self) -> f64 {
        match &self.weights {
            Some(w) => w.iter().sum(),
            None => self.num_rows as f64,
        }
    }

    /// Attaches per-row weights. Weights must be non-negative with at least
    /// one strictly positive entry.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.num_rows {
            return Err(Error::InvalidArgument(format!(
                "{} weights for {} rows",
                weights.len(),
                self.num_rows
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
        }
        if !weights.iter().any(|&w| w > 0.0) {
            return Err(Error::InvalidArgument("all weights are zero".into()));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn without_weights(mut self) -> Self {
        self.weights = None;
        self
    }

    /// New dataset made of the given rows, in order, with repeats allowed.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let columns = self
            .columns
            .iter()
            .map(|c| Bits::from_bools(rows.iter().map(|&r| c.get(r))))
            .collect();
        Dataset {
            columns,
            num_rows: rows.len(),
            weights: self.weights.as_ref().map(|w| rows.iter().map(|&r| w[r]).collect()),
        }
    }

    /// Bootstrap resample: `num_rows` rows drawn uniformly with replacement.
    pub fn bag_resample(&self, seed: u64) -> Result<Dataset> {
        if self.num_rows == 0 {
            return Err(Error::InvalidArgument("cannot resample an empty dataset".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picks: Vec<usize> = (0..self.num_rows).map(|_| rng.gen_range(0..self.num_rows)).collect();
        Ok(self.select_rows(&picks))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_basic_files() {
        let d = Dataset::parse("1,0,1,0\n0,0,0,0").unwrap();
        assert_eq!((d.num_rows(), d.num_vars()), (2, 4));
        assert_eq!(d.row(0), vec![true, false, true, false]);

        let d = Dataset::parse("1\n0\n1").unwrap();
        assert_eq!((d.num_rows(), d.num_vars()), (3, 1));
    }

    #[test]
    fn tolerates_whitespace_and_trailing_blank_line() {
        let d = Dataset::parse(" 1 , 0\n0,1 \n\n").unwrap();
        assert_eq!(d.num_rows(), 2);
        assert_eq!(d.row(1), vec![false, true]);
    }

    #[test]
    fn ragged_rows_name_the_line() {
        match Dataset::parse("1,0\n1,0\n1\n") {
            Err(Error::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_non_binary_and_empty() {
        assert!(matches!(Dataset::parse("1,2"), Err(Error::Format { line: 1, .. })));
        assert!(Dataset::parse("").is_err());
        assert!(Dataset::parse("\n\n").is_err());
    }

    #[test]
    fn weights_are_validated() {
        let d = Dataset::parse("1\n0").unwrap();
        assert!(d.clone().with_weights(vec![1.0]).is_err());
        assert!(d.clone().with_weights(vec![-1.0, 2.0]).is_err());
        assert!(d.clone().with_weights(vec![0.0, 0.0]).is_err());
        let w = d.with_weights(vec![0.0, 2.5]).unwrap();
        assert_eq!(w.total_weight(), 2.5);
    }

    #[test]
    fn single_row_bag_is_identity() {
        let d = Dataset::parse("1,0,1").unwrap();
        assert_eq!(d.bag_resample(99).unwrap(), d);
    }

    #[test]
    fn bagging_is_seeded() {
        let rows: Vec<Vec<bool>> = (0..50).map(|i| vec![i % 3 == 0, i % 5 == 0]).collect();
        let d = Dataset::from_rows(&rows).unwrap();
        assert_eq!(d.bag_resample(4).unwrap(), d.bag_resample(4).unwrap());
        assert_ne!(d.bag_resample(4).unwrap(), d.bag_resample(5).unwrap());
    }
}
