//! Datasets: synthetic generators, UCI CSV ingestion, z-scoring and
//! train/test splits.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::{Error, Result};

/// Likelihood noise variance used for every dataset except the counterexample.
pub const DEFAULT_NOISE_SIGMA2: f64 = 0.025;

/// Per-column affine maps applied by [`standardize_split`]:
/// `standardized = (raw - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

impl Standardization {
    pub fn apply_x(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.x_mean[j]) / self.x_std[j];
            }
        }
        out
    }

    pub fn apply_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| (v - self.y_mean) / self.y_std).collect()
    }

    pub fn invert_x(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = *v * self.x_std[j] + self.x_mean[j];
            }
        }
        out
    }

    pub fn invert_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| v * self.y_std + self.y_mean).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub name: String,
    /// Known observation-noise variance of the Gaussian likelihood.
    pub noise_sigma2: f64,
    /// Statistics used to standardize this dataset, if it has been.
    pub standardization: Option<Standardization>,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<f64>, name: impl Into<String>, noise_sigma2: f64) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} input rows but {} targets",
                x.rows(),
                y.len()
            )));
        }
        if !(noise_sigma2 > 0.0 && noise_sigma2.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be positive, got {noise_sigma2}"
            )));
        }
        if x.as_slice().iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("dataset contains non-finite values".into()));
        }
        Ok(Self {
            x,
            y,
            name: name.into(),
            noise_sigma2,
            standardization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn d_in(&self) -> usize {
        self.x.cols()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            name: self.name.clone(),
            noise_sigma2: self.noise_sigma2,
            standardization: self.standardization.clone(),
        }
    }

    /// Writes `x_0,..,x_{d-1},y` with a header row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.d_in()).map(|j| format!("x_{j}")).collect();
        header.push("y".into());
        wr.write_record(&header)?;
        for n in 0..self.len() {
            let mut rec: Vec<String> = self.x.row(n).iter().map(|v| v.to_string()).collect();
            rec.push(self.y[n].to_string());
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// The two observations `(-1, -1)` and `(1, 1)`.
pub fn make_two_points() -> Dataset {
    Dataset::new(
        Matrix::column(&[-1.0, 1.0]),
        vec![-1.0, 1.0],
        "two_points",
        DEFAULT_NOISE_SIGMA2,
    )
    .expect("static dataset is valid")
}

/// `y = sin(x) + eps`, `x ~ U(-5, 5)`, `eps ~ N(0, 0.025)`. Unstandardized.
pub fn make_sine<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("sine dataset needs N >= 1".into()));
    }
    let ux = Uniform::new(-5.0f64, 5.0).expect("valid bounds");
    let noise = Normal::new(0.0, DEFAULT_NOISE_SIGMA2.sqrt()).expect("valid sd");
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = ux.sample(rng);
        xs.push(x);
        ys.push(x.sin() + noise.sample(rng));
    }
    Dataset::new(Matrix::column(&xs), ys, "sine", DEFAULT_NOISE_SIGMA2)
}

/// `y = x_0 sin(x_1) + eps` with both inputs `U(-5, 5)`. Unstandardized.
pub fn make_toy<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("toy dataset needs N >= 1".into()));
    }
    let ux = Uniform::new(-5.0f64, 5.0).expect("valid bounds");
    let noise = Normal::new(0.0, DEFAULT_NOISE_SIGMA2.sqrt()).expect("valid sd");
    let mut data = Vec::with_capacity(2 * n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x0 = ux.sample(rng);
        let x1 = ux.sample(rng);
        data.push(x0);
        data.push(x1);
        ys.push(x0 * x1.sin() + noise.sample(rng));
    }
    Dataset::new(Matrix::from_vec(n, 2, data)?, ys, "toy", DEFAULT_NOISE_SIGMA2)
}

/// Column-selection recipe for [`load_uci_csv`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvRecipe {
    /// Target column: a header name (case-insensitive), a zero-based index,
    /// or `last`.
    pub target: String,
    /// Columns to discard besides the target.
    #[serde(default)]
    pub drop: Vec<String>,
}

impl CsvRecipe {
    pub fn target(target: impl Into<String>) -> Self {
        Self {
            target: target.into(),
            drop: Vec::new(),
        }
    }

    /// Concrete Slump Test: seven mix ingredients predicting slump.
    pub fn slump() -> Self {
        Self {
            target: "SLUMP(cm)".into(),
            drop: vec![
                "No".into(),
                "FLOW(cm)".into(),
                "Compressive Strength (28-day)(Mpa)".into(),
            ],
        }
    }

    /// Concrete Compressive Strength: eight inputs, strength is the last column.
    pub fn concrete() -> Self {
        Self::target("last")
    }
}

fn resolve_column(path: &Path, header: &[String], spec: &str) -> Result<usize> {
    let norm = |s: &str| s.trim().to_ascii_lowercase();
    if spec.eq_ignore_ascii_case("last") && !header.is_empty() {
        return Ok(header.len() - 1);
    }
    if let Some(i) = header.iter().position(|h| norm(h) == norm(spec)) {
        return Ok(i);
    }
    match spec.trim().parse::<usize>() {
        Ok(i) if i < header.len() => Ok(i),
        _ => Err(Error::UnknownColumn {
            path: path.to_path_buf(),
            name: spec.to_string(),
        }),
    }
}

/// Reads a numeric CSV with a header row; no standardization is applied.
///
/// Row numbers in errors count data rows from 1; column numbers are
/// zero-based.
pub fn load_uci_csv(path: impl AsRef<Path>, recipe: &CsvRecipe) -> Result<Dataset> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let target = resolve_column(path, &header, &recipe.target)?;
    let mut dropped = vec![false; header.len()];
    for d in &recipe.drop {
        dropped[resolve_column(path, &header, d)?] = true;
    }
    dropped[target] = true;
    let features: Vec<usize> = (0..header.len()).filter(|&j| !dropped[j]).collect();

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        if rec.len() != header.len() {
            return Err(Error::ColumnCount {
                path: path.to_path_buf(),
                row,
                expected: header.len(),
                found: rec.len(),
            });
        }
        let parse = |col: usize| -> Result<f64> {
            let s = &rec[col];
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::NonNumeric {
                    path: path.to_path_buf(),
                    row,
                    col,
                    value: s.to_string(),
                })
        };
        for &j in &features {
            xs.push(parse(j)?);
        }
        ys.push(parse(target)?);
    }
    if ys.is_empty() {
        return Err(Error::NoDataRows {
            path: path.to_path_buf(),
        });
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    Dataset::new(
        Matrix::from_vec(ys.len(), features.len(), xs)?,
        ys,
        name,
        DEFAULT_NOISE_SIGMA2,
    )
}

/// Train and test parts of a dataset with the row indices that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

fn population_stats(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Fits z-scoring statistics on `ds` (population standard deviation).
pub fn fit_standardization(ds: &Dataset) -> Result<Standardization> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument("cannot standardize an empty dataset".into()));
    }
    let mut x_mean = Vec::with_capacity(ds.d_in());
    let mut x_std = Vec::with_capacity(ds.d_in());
    for j in 0..ds.d_in() {
        let (m, s) = population_stats((0..ds.len()).map(|i| ds.x.get(i, j)));
        if !(s > 0.0) {
            return Err(Error::DegenerateColumn(format!("x_{j}")));
        }
        x_mean.push(m);
        x_std.push(s);
    }
    let (y_mean, y_std) = population_stats(ds.y.iter().copied());
    if !(y_std > 0.0) {
        return Err(Error::DegenerateColumn("y".into()));
    }
    Ok(Standardization {
        x_mean,
        x_std,
        y_mean,
        y_std,
    })
}

/// Applies `stats` to `ds`, recording them on the result.
pub fn apply_standardization(ds: &Dataset, stats: &Standardization) -> Dataset {
    Dataset {
        x: stats.apply_x(&ds.x),
        y: stats.apply_y(&ds.y),
        name: ds.name.clone(),
        noise_sigma2: ds.noise_sigma2,
        standardization: Some(stats.clone()),
    }
}

/// Z-scores the whole dataset with its own statistics.
pub fn standardize(ds: &Dataset) -> Result<Dataset> {
    let stats = fit_standardization(ds)?;
    Ok(apply_standardization(ds, &stats))
}

/// Shuffles, holds out `round(test_fraction * N)` rows, then z-scores both
/// parts with statistics computed on the training rows only.
pub fn standardize_split<R: Rng + ?Sized>(ds: &Dataset, test_fraction: f64, rng: &mut R) -> Result<Split> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidArgument(format!(
            "test fraction must lie in [0, 1), got {test_fraction}"
        )));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(rng);
    let n_test = (test_fraction * ds.len() as f64).round() as usize;
    let test_idx = idx[..n_test].to_vec();
    let train_idx = idx[n_test..].to_vec();
    let train_raw = ds.select(&train_idx);
    let stats = fit_standardization(&train_raw)?;
    Ok(Split {
        train: apply_standardization(&train_raw, &stats),
        test: apply_standardization(&ds.select(&test_idx), &stats),
        train_idx,
        test_idx,
    })
}

/// Source locations of the UCI files expected by [`CsvRecipe::slump`] and
/// [`CsvRecipe::concrete`]; the library never downloads them. The concrete
/// spreadsheet must be exported to CSV before loading.
pub const UCI_SOURCES: [(&str, &str); 2] = [
    (
        "slump",
        "https://archive.ics.uci.edu/ml/machine-learning-databases/concrete/slump/slump_test.data",
    ),
    (
        "concrete",
        "https://archive.ics.uci.edu/ml/machine-learning-databases/concrete/compressive/Concrete_Data.xls",
    ),
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;
    use crate::stats::{ks_statistic, ks_two_sample, ks_critical};

    #[test]
    fn two_points() {
        let ds = make_two_points();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.d_in(), 1);
        assert_eq!(ds.y.iter().sum::<f64>(), 0.0);
        assert_eq!(ds.noise_sigma2, 0.025);
    }

    #[test]
    fn sine_generator() {
        let mut rng = rng_from_seed(1);
        let ds = make_sine(10_000, &mut rng).unwrap();
        assert!(ds.x.as_slice().iter().all(|v| (-5.0..=5.0).contains(v)));
        let resid: Vec<f64> = (0..ds.len()).map(|i| ds.y[i] - ds.x.get(i, 0).sin()).collect();
        let var = resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64;
        // SE of the variance estimate is about sqrt(2/N) * 0.025.
        assert!((var - 0.025).abs() < 4.0 * (2.0f64 / 1e4).sqrt() * 0.025, "var {var}");
        let d = ks_statistic(ds.x.as_slice(), |x| ((x + 5.0) / 10.0).clamp(0.0, 1.0));
        assert!(d < ks_critical(1e4, 0.001));
        let nd = statrs::distribution::Normal::new(0.0, 0.025f64.sqrt()).unwrap();
        use statrs::distribution::ContinuousCDF;
        assert!(ks_statistic(&resid, |r| nd.cdf(r)) < ks_critical(1e4, 0.001));
        assert_eq!(make_sine(50, &mut rng_from_seed(9)).unwrap(), make_sine(50, &mut rng_from_seed(9)).unwrap());
    }

    #[test]
    fn toy_generator() {
        let mut rng = rng_from_seed(2);
        let ds = make_toy(10_000, &mut rng).unwrap();
        assert_eq!(ds.d_in(), 2);
        let pos: Vec<f64> = (0..ds.len()).filter(|&i| ds.x.get(i, 0) > 0.0).map(|i| ds.y[i]).collect();
        let neg: Vec<f64> = (0..ds.len()).filter(|&i| ds.x.get(i, 0) < 0.0).map(|i| -ds.y[i]).collect();
        let d = ks_two_sample(&pos, &neg);
        let n_eff = (pos.len() * neg.len()) as f64 / (pos.len() + neg.len()) as f64;
        assert!(d < ks_critical(n_eff, 0.001), "d {d}");
        assert_eq!(make_toy(20, &mut rng_from_seed(3)).unwrap(), make_toy(20, &mut rng_from_seed(3)).unwrap());
    }

    #[test]
    fn split_standardization() {
        let mut rng = rng_from_seed(5);
        let ds = make_toy(101, &mut rng).unwrap();
        let split = standardize_split(&ds, 0.1, &mut rng).unwrap();
        assert_eq!(split.test.len(), 10);
        assert_eq!(split.train.len(), 91);
        for j in 0..2 {
            let col = split.train.x.column_values(j);
            let (m, s) = population_stats(col.iter().copied());
            assert!(m.abs() < 1e-10 && (s - 1.0).abs() < 1e-10);
        }
        let stats = split.train.standardization.as_ref().unwrap();
        let back = stats.invert_x(&split.train.x);
        let raw = ds.x.select_rows(&split.train_idx);
        for (a, b) in back.as_slice().iter().zip(raw.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut all: Vec<usize> = split.train_idx.iter().chain(&split.test_idx).copied().collect();
        all.sort();
        assert_eq!(all, (0..101).collect::<Vec<_>>());
        let again = standardize_split(&ds, 0.1, &mut rng_from_seed(5)).unwrap();
        let first = standardize_split(&ds, 0.1, &mut rng_from_seed(5)).unwrap();
        assert_eq!(again.test_idx, first.test_idx);
    }

    #[test]
    fn split_zero_fraction_and_errors() {
        let ds = make_sine(20, &mut rng_from_seed(1)).unwrap();
        let split = standardize_split(&ds, 0.0, &mut rng_from_seed(0)).unwrap();
        assert!(split.test.is_empty());
        assert_eq!(split.train.len(), 20);
        assert!(standardize_split(&ds, 1.0, &mut rng_from_seed(0)).is_err());
        let flat = Dataset::new(Matrix::column(&[1.0, 1.0, 1.0]), vec![0.0, 1.0, 2.0], "flat", 0.1).unwrap();
        match standardize_split(&flat, 0.0, &mut rng_from_seed(0)) {
            Err(Error::DegenerateColumn(c)) => assert_eq!(c, "x_0"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
