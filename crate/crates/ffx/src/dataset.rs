//! Tabular regression data: CSV loading, validation, seeded shuffling,
//! train/test splitting and cross-validation folds.
//!
//! All shuffling uses ChaCha8 keyed by the caller's seed with the
//! Fisher-Yates shuffle from `rand::seq`, so splits and folds reproduce
//! bit-identically across platforms.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv parse error: {0}")]
    Csv(String),
    #[error("file contains no data rows")]
    EmptyFile,
    #[error("target column '{0}' not found in header")]
    MissingTarget(String),
    #[error("cell at row {row}, column '{col}' is not a finite number")]
    NonNumericCell { row: usize, col: String },
    #[error("dataset needs at least one feature column besides the target")]
    NoFeatureColumns,
    #[error("duplicate column name '{0}' in header")]
    DuplicateColumnName(String),
    #[error("non-finite value at row {row}, feature column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("feature name count {names} does not match feature count {features}")]
    NameCountMismatch { names: usize, features: usize },
    #[error("row count of X ({x_rows}) does not match length of y ({y_len})")]
    RowCountMismatch { x_rows: usize, y_len: usize },
    #[error("split with train_fraction {train_fraction} leaves an empty train or test set for {n_rows} rows")]
    DegenerateSplit { train_fraction: f64, n_rows: usize },
    #[error("cannot build {k} folds from {n_rows} rows")]
    TooFewRows { n_rows: usize, k: usize },
    #[error("fold count must be at least 2, got {0}")]
    InvalidFoldCount(usize),
}

/// Immutable numeric regression dataset: feature matrix, target vector and
/// feature names.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    feature_names: Vec<String>,
    x: DMatrix<f64>,
    y: DVector<f64>,
}

/// Seeded train/test split request.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.75,
            seed: 0,
        }
    }
}

/// Assignment of each row to one of `k` cross-validation folds.
#[derive(Debug, Clone)]
pub struct FoldAssignment {
    fold_of_row: Vec<usize>,
    k: usize,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of_row(&self) -> &[usize] {
        &self.fold_of_row
    }

    pub fn fold_size(&self, fold: usize) -> usize {
        self.fold_of_row.iter().filter(|&&f| f == fold).count()
    }

    /// Row indices held out for validation in `fold`.
    pub fn validation_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of_row.len())
            .filter(|&i| self.fold_of_row[i] == fold)
            .collect()
    }

    /// Row indices used for training when `fold` is held out.
    pub fn training_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of_row.len())
            .filter(|&i| self.fold_of_row[i] != fold)
            .collect()
    }
}

impl Dataset {
    /// Validating constructor; all invariants are checked here so every
    /// other operation can rely on them.
    pub fn new(
        feature_names: Vec<String>,
        x: DMatrix<f64>,
        y: DVector<f64>,
    ) -> Result<Self, DatasetError> {
        if x.nrows() == 0 || y.len() == 0 {
            return Err(DatasetError::EmptyFile);
        }
        if x.ncols() == 0 {
            return Err(DatasetError::NoFeatureColumns);
        }
        if x.nrows() != y.len() {
            return Err(DatasetError::RowCountMismatch {
                x_rows: x.nrows(),
                y_len: y.len(),
            });
        }
        if feature_names.len() != x.ncols() {
            return Err(DatasetError::NameCountMismatch {
                names: feature_names.len(),
                features: x.ncols(),
            });
        }
        for (i, name) in feature_names.iter().enumerate() {
            if feature_names[..i].iter().any(|n| n == name) {
                return Err(DatasetError::DuplicateColumnName(name.clone()));
            }
        }
        for j in 0..x.ncols() {
            for i in 0..x.nrows() {
                if !x[(i, j)].is_finite() {
                    return Err(DatasetError::NonFiniteValue { row: i + 1, col: j });
                }
            }
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(DatasetError::NonFiniteValue {
                row: i + 1,
                col: usize::MAX,
            });
        }
        Ok(Dataset {
            feature_names,
            x,
            y,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    /// Load a CSV file with a header row, separating `target` from the
    /// remaining columns. Row order is preserved.
    pub fn load_csv(path: impl AsRef<Path>, target: &str) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_csv_reader(file, target)
    }

    /// Same as [`Dataset::load_csv`] but over any reader.
    pub fn from_csv_reader(reader: impl Read, target: &str) -> Result<Self, DatasetError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers: Vec<String> = match rdr.headers() {
            Ok(h) if !h.is_empty() && !(h.len() == 1 && h[0].is_empty()) => {
                h.iter().map(str::to_owned).collect()
            }
            Ok(_) => return Err(DatasetError::EmptyFile),
            Err(e) => return Err(DatasetError::Csv(e.to_string())),
        };
        let target_idx = headers
            .iter()
            .position(|h| h == target)
            .ok_or_else(|| DatasetError::MissingTarget(target.to_string()))?;
        let feature_names: Vec<String> = headers
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != target_idx)
            .map(|(_, h)| h.clone())
            .collect();
        if feature_names.is_empty() {
            return Err(DatasetError::NoFeatureColumns);
        }

        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut target_vals: Vec<f64> = Vec::new();
        for (row_idx, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| DatasetError::Csv(e.to_string()))?;
            if record.len() != headers.len() {
                return Err(DatasetError::Csv(format!(
                    "row {} has {} cells, expected {}",
                    row_idx + 1,
                    record.len(),
                    headers.len()
                )));
            }
            let mut row = Vec::with_capacity(feature_names.len());
            for (col_idx, cell) in record.iter().enumerate() {
                let value: f64 = cell.parse().ok().filter(|v: &f64| v.is_finite()).ok_or(
                    DatasetError::NonNumericCell {
                        row: row_idx + 1,
                        col: headers[col_idx].clone(),
                    },
                )?;
                if col_idx == target_idx {
                    target_vals.push(value);
                } else {
                    row.push(value);
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(DatasetError::EmptyFile);
        }
        let n = rows.len();
        let d = feature_names.len();
        let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        Dataset::new(feature_names, x, DVector::from_vec(target_vals))
    }

    /// Write the dataset back out as CSV with the target in a trailing
    /// column named `target`.
    pub fn write_csv(
        &self,
        mut writer: impl std::io::Write,
        target: &str,
    ) -> std::io::Result<()> {
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(target);
        writeln!(writer, "{}", header.join(","))?;
        for i in 0..self.n_rows() {
            let mut cells: Vec<String> = (0..self.n_features())
                .map(|j| format!("{}", self.x[(i, j)]))
                .collect();
            cells.push(format!("{}", self.y[i]));
            writeln!(writer, "{}", cells.join(","))?;
        }
        Ok(())
    }

    /// New dataset containing the given rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let x = DMatrix::from_fn(rows.len(), self.n_features(), |i, j| self.x[(rows[i], j)]);
        let y = DVector::from_fn(rows.len(), |i, _| self.y[rows[i]]);
        Dataset {
            feature_names: self.feature_names.clone(),
            x,
            y,
        }
    }

    /// Seeded shuffle followed by a head/tail split: the first
    /// `ceil(train_fraction * n)` shuffled rows become the training set.
    pub fn shuffle_split(&self, spec: &SplitSpec) -> Result<(Dataset, Dataset), DatasetError> {
        let n = self.n_rows();
        let train_n = (spec.train_fraction * n as f64).ceil() as usize;
        if train_n == 0 || train_n >= n {
            return Err(DatasetError::DegenerateSplit {
                train_fraction: spec.train_fraction,
                n_rows: n,
            });
        }
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        perm.shuffle(&mut rng);
        let train = self.select_rows(&perm[..train_n]);
        let test = self.select_rows(&perm[train_n..]);
        Ok((train, test))
    }

    /// Seeded permutation dealt round-robin into `k` folds, so fold sizes
    /// differ by at most one.
    pub fn make_folds(&self, k: usize, seed: u64) -> Result<FoldAssignment, DatasetError> {
        if k < 2 {
            return Err(DatasetError::InvalidFoldCount(k));
        }
        let n = self.n_rows();
        if k > n {
            return Err(DatasetError::TooFewRows { n_rows: n, k });
        }
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        perm.shuffle(&mut rng);
        let mut fold_of_row = vec![0usize; n];
        for (i, &row) in perm.iter().enumerate() {
            fold_of_row[row] = i % k;
        }
        Ok(FoldAssignment { fold_of_row, k })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_csv() -> &'static str {
        "a,b,y\n1.0,2.0,3.0\n4.0,5.0,6.0\n7.0,8.0,9.0\n"
    }

    #[test]
    fn load_csv_separates_target() {
        let d = Dataset::from_csv_reader(small_csv().as_bytes(), "y").unwrap();
        assert_eq!(d.n_rows(), 3);
        assert_eq!(d.n_features(), 2);
        assert_eq!(d.feature_names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(d.y()[1], 6.0);
        assert_eq!(d.x()[(2, 0)], 7.0);
    }

    #[test]
    fn load_csv_missing_target() {
        let err = Dataset::from_csv_reader(small_csv().as_bytes(), "z").unwrap_err();
        assert!(matches!(err, DatasetError::MissingTarget(t) if t == "z"));
    }

    #[test]
    fn load_csv_rejects_nan_cell() {
        let csv = "a,y\n1.0,2.0\nNaN,3.0\n";
        let err = Dataset::from_csv_reader(csv.as_bytes(), "y").unwrap_err();
        assert!(
            matches!(err, DatasetError::NonNumericCell { row: 2, ref col } if col == "a"),
            "{err:?}"
        );
    }

    #[test]
    fn load_csv_rejects_text_cell() {
        let csv = "a,y\nfoo,2.0\n";
        let err = Dataset::from_csv_reader(csv.as_bytes(), "y").unwrap_err();
        assert!(matches!(err, DatasetError::NonNumericCell { row: 1, .. }));
    }

    #[test]
    fn load_csv_empty_file() {
        let err = Dataset::from_csv_reader("".as_bytes(), "y").unwrap_err();
        assert!(matches!(err, DatasetError::EmptyFile));
        let err = Dataset::from_csv_reader("a,y\n".as_bytes(), "y").unwrap_err();
        assert!(matches!(err, DatasetError::EmptyFile));
    }

    #[test]
    fn csv_round_trip() {
        let d = Dataset::from_csv_reader(small_csv().as_bytes(), "y").unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf, "y").unwrap();
        let back = Dataset::from_csv_reader(buf.as_slice(), "y").unwrap();
        assert_eq!(d, back);
    }

    fn sequential_dataset(n: usize) -> Dataset {
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64);
        let y = DVector::from_fn(n, |i, _| i as f64 * 2.0);
        Dataset::new(vec!["a".into()], x, y).unwrap()
    }

    #[test]
    fn shuffle_split_sizes() {
        let d = sequential_dataset(100);
        let (train, test) = d
            .shuffle_split(&SplitSpec {
                train_fraction: 0.75,
                seed: 7,
            })
            .unwrap();
        assert_eq!(train.n_rows(), 75);
        assert_eq!(test.n_rows(), 25);
    }

    #[test]
    fn shuffle_split_is_deterministic() {
        let d = sequential_dataset(4);
        let spec = SplitSpec {
            train_fraction: 0.75,
            seed: 42,
        };
        let (tr1, te1) = d.shuffle_split(&spec).unwrap();
        let (tr2, te2) = d.shuffle_split(&spec).unwrap();
        assert_eq!(tr1, tr2);
        assert_eq!(te1, te2);
    }

    #[test]
    fn shuffle_split_single_row_is_degenerate() {
        let d = sequential_dataset(1);
        let err = d.shuffle_split(&SplitSpec::default()).unwrap_err();
        assert!(matches!(err, DatasetError::DegenerateSplit { .. }));
    }

    #[test]
    fn shuffle_split_partitions_rows() {
        let d = sequential_dataset(23);
        let (train, test) = d
            .shuffle_split(&SplitSpec {
                train_fraction: 0.6,
                seed: 3,
            })
            .unwrap();
        let mut seen: Vec<f64> = train.y().iter().chain(test.y().iter()).copied().collect();
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut expected: Vec<f64> = d.y().iter().copied().collect();
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(seen, expected);
    }

    #[test]
    fn folds_are_balanced() {
        let d = sequential_dataset(10);
        let folds = d.make_folds(5, 1).unwrap();
        for f in 0..5 {
            assert_eq!(folds.fold_size(f), 2);
        }

        let d = sequential_dataset(11);
        let folds = d.make_folds(5, 1).unwrap();
        let mut sizes: Vec<usize> = (0..5).map(|f| folds.fold_size(f)).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 2, 2, 3]);
    }

    #[test]
    fn folds_reject_too_few_rows() {
        let d = sequential_dataset(3);
        assert!(matches!(
            d.make_folds(5, 0),
            Err(DatasetError::TooFewRows { n_rows: 3, k: 5 })
        ));
        assert!(matches!(
            d.make_folds(1, 0),
            Err(DatasetError::InvalidFoldCount(1))
        ));
    }

    #[test]
    fn training_and_validation_rows_partition() {
        let d = sequential_dataset(9);
        let folds = d.make_folds(4, 5).unwrap();
        for f in 0..4 {
            let mut all = folds.training_rows(f);
            all.extend(folds.validation_rows(f));
            all.sort_unstable();
            assert_eq!(all, (0..9).collect::<Vec<_>>());
        }
    }

    #[test]
    fn constructor_rejects_non_finite() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, f64::INFINITY]);
        let y = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(
            Dataset::new(vec!["a".into()], x, y),
            Err(DatasetError::NonFiniteValue { .. })
        ));
    }

    #[test]
    fn constructor_rejects_duplicate_names() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let y = DVector::from_vec(vec![1.0]);
        assert!(matches!(
            Dataset::new(vec!["a".into(), "a".into()], x, y),
            Err(DatasetError::DuplicateColumnName(_))
        ));
    }
}
