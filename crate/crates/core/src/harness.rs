//! Experiment orchestration: configuration, sweeps over widths and seeds,
//! metrics, and CSV/SVG/JSON emission.
//!
//! Every cell of a sweep draws its randomness from a seed derived from
//! `(base seed, width, seed index)`, so running cells in parallel does not
//! change any per-cell number.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::{
    kl_bound_empirical, mc_opnorm_checks, mean_bound_1hl, mean_bound_deep, verify_param_bounds, BoundInputs,
    BoundReport,
};
use crate::counterexample::{
    build_qc, cell_seed, run_counterexample_check, CheckSettings, CounterexampleReport, CounterexampleSpec,
};
use crate::data::{make_sine, make_toy, make_two_points, standardize_split, CsvRecipe, Dataset};
use crate::linalg::Matrix;
use crate::mfvi::{
    elbo_estimate, elbo_estimate_with_noise, elbo_gradient_with_noise, kl_to_standard_normal,
    paired_predictive_moments, predictive_moments, train, Batch, LikelihoodSpec, MeanFieldGaussian, Output,
    TrainConfig,
};
use crate::net::{ActivationKind, Architecture};
use crate::nngp::{nngp_kernel, nngp_posterior, output_variance, InputKernel};
use crate::stats::{bootstrap_mean_ci, non_decreasing_trend, non_increasing_trend, TrendTest};
use crate::{rng_from_seed, Error, Result};

/// Crate version recorded in run metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Bootstrap replicates for confidence intervals over splits.
pub const BOOTSTRAP_REPLICATES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    PosteriorPlot,
    Convergence,
    RmseSweep,
    Counterexample,
    BoundsTable,
    Verify,
}

/// Where a dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    TwoPoints,
    /// `n` training and `n` test points per replicate.
    Sine {
        #[serde(default = "default_synthetic_n")]
        n: usize,
    },
    Toy {
        #[serde(default = "default_synthetic_n")]
        n: usize,
    },
    Csv {
        path: PathBuf,
        name: String,
        recipe: CsvRecipe,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        #[serde(default = "default_noise")]
        noise_sigma2: f64,
    },
    /// Two-point dataset built from `activation` at inputs `x`, `x2`.
    Counterexample {
        #[serde(default = "default_counter_activation")]
        activation: ActivationKind,
        #[serde(default = "default_counter_c")]
        c: f64,
        #[serde(default = "default_counter_x")]
        x: Vec<f64>,
        #[serde(default = "default_counter_x2")]
        x2: Vec<f64>,
    },
}

fn default_synthetic_n() -> usize {
    100
}
fn default_test_fraction() -> f64 {
    0.1
}
fn default_noise() -> f64 {
    crate::data::DEFAULT_NOISE_SIGMA2
}
fn default_counter_activation() -> ActivationKind {
    ActivationKind::Relu
}
fn default_counter_c() -> f64 {
    1.0 / crate::counterexample::DEFAULT_NOISE_SIGMA2
}
fn default_counter_x() -> Vec<f64> {
    vec![0.0]
}
fn default_counter_x2() -> Vec<f64> {
    vec![1.0]
}

impl DatasetSpec {
    pub fn name(&self) -> String {
        match self {
            DatasetSpec::TwoPoints => "two_points".into(),
            DatasetSpec::Sine { .. } => "sine".into(),
            DatasetSpec::Toy { .. } => "toy".into(),
            DatasetSpec::Csv { name, .. } => name.clone(),
            DatasetSpec::Counterexample { .. } => "counterexample".into(),
        }
    }

    /// Input dimension, loading the file for CSV datasets.
    pub fn d_in(&self) -> Result<usize> {
        Ok(match self {
            DatasetSpec::TwoPoints | DatasetSpec::Sine { .. } => 1,
            DatasetSpec::Toy { .. } => 2,
            DatasetSpec::Counterexample { x, .. } => x.len(),
            DatasetSpec::Csv { path, recipe, .. } => crate::data::load_uci_csv(path, recipe)?.d_in(),
        })
    }

    /// Builds the counterexample spec at `width`.
    pub fn counterexample_spec(&self, depth: usize, width: usize) -> Result<CounterexampleSpec> {
        match self {
            DatasetSpec::Counterexample { activation, c, x, x2 } => {
                let arch = Architecture::scalar(depth, width, x.len(), *activation)?;
                CounterexampleSpec::new(arch, *c, x.clone(), x2.clone())
            }
            _ => Err(Error::Config("experiment needs a counterexample dataset".into())),
        }
    }

    /// The full training set, for experiments without a held-out split.
    pub fn load_train(&self) -> Result<Dataset> {
        match self {
            DatasetSpec::TwoPoints => Ok(make_two_points()),
            DatasetSpec::Counterexample { .. } => {
                let spec = self.counterexample_spec(1, 1)?;
                crate::counterexample::build_counterexample_dataset(&spec)
            }
            _ => Ok(self.load_split(0)?.train),
        }
    }

    /// Train/test replicate `index`: a fresh draw for synthetic data, a
    /// fresh random split for CSV data. Both parts are standardized with
    /// training statistics.
    pub fn load_split(&self, index: u64) -> Result<crate::data::Split> {
        let mut rng = rng_from_seed(cell_seed(0x5eed, index, 0));
        match self {
            DatasetSpec::TwoPoints | DatasetSpec::Counterexample { .. } => {
                let train = self.load_train()?;
                let empty = Dataset::new(Matrix::zeros(0, train.d_in()), vec![], train.name.clone(), train.noise_sigma2)?;
                Ok(crate::data::Split {
                    train_idx: (0..train.len()).collect(),
                    test_idx: vec![],
                    train,
                    test: empty,
                })
            }
            DatasetSpec::Sine { n } => standardize_split(&make_sine(2 * n, &mut rng)?, 0.5, &mut rng),
            DatasetSpec::Toy { n } => standardize_split(&make_toy(2 * n, &mut rng)?, 0.5, &mut rng),
            DatasetSpec::Csv {
                path,
                recipe,
                test_fraction,
                noise_sigma2,
                ..
            } => {
                let mut ds = crate::data::load_uci_csv(path, recipe)?;
                ds.noise_sigma2 = *noise_sigma2;
                standardize_split(&ds, *test_fraction, &mut rng)
            }
        }
    }
}

/// Network shape shared by every width of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchTemplate {
    pub depth: usize,
    pub activation: ActivationKind,
    pub widths: Vec<usize>,
}

impl ArchTemplate {
    pub fn at(&self, width: usize, d_in: usize) -> Result<Architecture> {
        Architecture::scalar(self.depth, width, d_in, self.activation)
    }
}

/// `n` equally spaced points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

fn default_grid() -> Vec<f64> {
    linspace(-1.0, 1.0, 25)
}
fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}
fn default_eval_samples() -> usize {
    1000
}
fn default_restarts() -> usize {
    2
}
fn default_kl_samples() -> usize {
    1000
}
fn default_eval_points() -> usize {
    100
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Full description of one experiment, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub dataset: DatasetSpec,
    pub arch: ArchTemplate,
    #[serde(default)]
    pub train: TrainConfig,
    /// Seeds of the replicates; each cell derives its own seed from these.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// One-dimensional evaluation grid.
    #[serde(default = "default_grid")]
    pub grid: Vec<f64>,
    /// Posterior predictive samples for moment estimates.
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    /// Random restarts per cell; the highest final ELBO is kept.
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    /// Prior samples for the empirical KL bound.
    #[serde(default = "default_kl_samples")]
    pub kl_bound_samples: usize,
    /// Random inputs in `[-1, 1]^d` for the prior-distance metrics.
    #[serde(default = "default_eval_points")]
    pub eval_points: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Reasonable defaults for each experiment kind.
    pub fn preset(kind: ExperimentKind) -> Self {
        let (dataset, activation, widths) = match kind {
            ExperimentKind::Counterexample => (
                DatasetSpec::Counterexample {
                    activation: default_counter_activation(),
                    c: default_counter_c(),
                    x: default_counter_x(),
                    x2: default_counter_x2(),
                },
                ActivationKind::Relu,
                vec![256, 1024, 4096],
            ),
            ExperimentKind::RmseSweep => (DatasetSpec::Sine { n: 100 }, ActivationKind::Tanh, vec![16, 64, 256, 1024]),
            _ => (DatasetSpec::TwoPoints, ActivationKind::Tanh, vec![64, 256, 1024, 4096]),
        };
        Self {
            experiment: kind,
            dataset,
            arch: ArchTemplate {
                depth: 1,
                activation,
                widths,
            },
            train: TrainConfig::default(),
            seeds: default_seeds(),
            grid: default_grid(),
            eval_samples: default_eval_samples(),
            restarts: default_restarts(),
            kl_bound_samples: default_kl_samples(),
            eval_points: default_eval_points(),
            output_dir: default_output_dir(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.arch.widths.is_empty() {
            return Err(Error::Config("width list must be nonempty".into()));
        }
        if self.arch.widths.contains(&0) || self.arch.depth == 0 {
            return Err(Error::Config("widths and depth must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list must be nonempty".into()));
        }
        if self.eval_samples < 2 || self.kl_bound_samples < 2 {
            return Err(Error::Config("sample counts must be at least 2".into()));
        }
        if self.restarts == 0 || self.eval_points == 0 {
            return Err(Error::Config("restarts and eval_points must be positive".into()));
        }
        if self.grid.iter().any(|g| !g.is_finite()) {
            return Err(Error::Config("grid values must be finite".into()));
        }
        self.train.validate()
    }

    /// Shorter schedule and widths capped at the desk maximum.
    pub fn apply_desk(&mut self) {
        let seed = self.train.seed;
        self.train = TrainConfig::desk().with_seed(seed);
        self.arch.widths.retain(|&w| w <= TrainConfig::DESK_MAX_WIDTH);
    }

    /// SHA-256 of the canonical JSON serialization, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    fn lik(&self, data: &Dataset) -> LikelihoodSpec {
        LikelihoodSpec::Gaussian {
            sigma2: data.noise_sigma2,
        }
    }
}

/// Enough to reproduce a run bit-identically on one thread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub version: String,
    pub config_hash: String,
    pub base_seed: u64,
    pub seeds: Vec<u64>,
    pub threads: usize,
    pub wall_clock_s: f64,
    pub standardization: String,
    pub bootstrap_replicates: usize,
}

impl RunMetadata {
    fn new(cfg: &ExperimentConfig, started: Instant) -> Self {
        Self {
            version: VERSION.to_string(),
            config_hash: cfg.hash(),
            base_seed: cfg.train.seed,
            seeds: cfg.seeds.clone(),
            threads: rayon::current_num_threads(),
            wall_clock_s: started.elapsed().as_secs_f64(),
            standardization: "train-split statistics".into(),
            bootstrap_replicates: BOOTSTRAP_REPLICATES,
        }
    }
}

/// Metrics of one `(dataset, width, seed)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub dataset: String,
    pub width: usize,
    pub seed_index: usize,
    pub max_mean_dist_to_prior: f64,
    pub rmse_mean_to_prior: f64,
    pub rmse_mean_to_test_y: f64,
    pub rmse_var_to_prior_var: f64,
    pub final_kl: f64,
    pub final_elbo: f64,
}

/// Collected cells with metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub metadata: RunMetadata,
    pub cells: Vec<CellMetrics>,
    /// Cells that failed, as `(width, seed_index, message)`.
    pub failures: Vec<(usize, usize, String)>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn csv_file(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(csv::Writer::from_path(path)?)
}

fn train_best(
    arch: &Architecture,
    data: &Dataset,
    lik: &LikelihoodSpec,
    cfg: &TrainConfig,
    restarts: usize,
    seed: u64,
) -> Result<(MeanFieldGaussian, f64, f64)> {
    let mut best: Option<(MeanFieldGaussian, f64, f64)> = None;
    for r in 0..restarts {
        let (q, history) = train(arch, data, lik, &cfg.with_seed(cell_seed(seed, r as u64, 17)))?;
        let last = history.last().copied();
        let (elbo, kl) = last.map_or((f64::NEG_INFINITY, kl_to_standard_normal(&q)), |r| (r.elbo, r.kl));
        if best.as_ref().is_none_or(|b| elbo > b.1) {
            best = Some((q, elbo, kl));
        }
    }
    Ok(best.expect("restarts >= 1"))
}

// ---------------------------------------------------------------------------
// Convergence to the prior on a one-dimensional grid.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCell {
    pub width: usize,
    pub seed_index: usize,
    /// `max_grid |E_q f - E_p f|` from paired draws.
    pub max_mean_dist: f64,
    /// Same for the output without the final bias and even part.
    pub max_mean_dist_tilde: f64,
    pub final_kl: f64,
    pub final_elbo: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceWidth {
    pub width: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    /// Mean bound evaluated with the empirical KL bound.
    pub bound: f64,
    pub kl_bound: f64,
    pub kl_bound_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceResult {
    pub metadata: RunMetadata,
    pub cells: Vec<ConvergenceCell>,
    pub widths: Vec<ConvergenceWidth>,
    /// `max_grid |NNGP posterior mean|`, the infinite-width reference.
    pub nngp_posterior_dist: f64,
    pub trend: Option<TrendTest>,
    pub failures: Vec<(usize, usize, String)>,
}

impl ConvergenceResult {
    pub const CSV_HEADER: [&'static str; 7] = [
        "width",
        "seed_index",
        "max_mean_dist",
        "max_mean_dist_tilde",
        "final_kl",
        "final_elbo",
        "bound",
    ];
    pub const SUMMARY_HEADER: [&'static str; 8] = [
        "width",
        "min",
        "mean",
        "max",
        "bound",
        "kl_bound",
        "kl_bound_se",
        "nngp_posterior_dist",
    ];

    /// Whether every width's largest observed distance lies below its bound.
    pub fn below_bound(&self) -> bool {
        self.widths.iter().all(|w| w.max <= w.bound)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let bounds: BTreeMap<usize, f64> = self.widths.iter().map(|w| (w.width, w.bound)).collect();
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(Self::CSV_HEADER)?;
        for c in &self.cells {
            wr.serialize((
                c.width,
                c.seed_index,
                c.max_mean_dist,
                c.max_mean_dist_tilde,
                c.final_kl,
                c.final_elbo,
                bounds[&c.width],
            ))?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(Self::SUMMARY_HEADER)?;
        for s in &self.widths {
            wr.serialize((
                s.width,
                s.min,
                s.mean,
                s.max,
                s.bound,
                s.kl_bound,
                s.kl_bound_se,
                self.nngp_posterior_dist,
            ))?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Bound on the predictive-mean distance at width `m` for inputs with
/// `||x|| <= x_norm`, using `kl` as the KL budget.
pub fn mean_distance_bound(arch: &Architecture, x_norm: f64, kl: f64) -> Result<BoundReport> {
    let alpha = arch.activation.odd_offset()?;
    let inputs = BoundInputs {
        m: arch.width,
        l: arch.depth,
        d_in: arch.d_in,
        x_norm,
        kl,
        alpha,
    };
    if arch.depth == 1 {
        mean_bound_1hl(&inputs)
    } else {
        mean_bound_deep(&inputs)
    }
}

/// Trains every `(width, seed)` cell on a one-dimensional dataset and
/// measures the largest distance of the predictive mean from the prior mean
/// over the grid.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<ConvergenceResult> {
    cfg.validate()?;
    let started = Instant::now();
    let data = cfg.dataset.load_train()?;
    if data.d_in() != 1 {
        return Err(Error::Config("convergence runs need a one-dimensional dataset".into()));
    }
    let lik = cfg.lik(&data);
    let grid = Matrix::column(&cfg.grid);
    let x_norm = cfg.grid.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let cells: Vec<(usize, usize)> = cfg
        .arch
        .widths
        .iter()
        .flat_map(|&w| (0..cfg.seeds.len()).map(move |s| (w, s)))
        .collect();
    let outcomes: Vec<Result<ConvergenceCell>> = cells
        .par_iter()
        .map(|&(width, si)| {
            let arch = cfg.arch.at(width, 1)?;
            let seed = cell_seed(cfg.seeds[si], width as u64, si as u64);
            let (q, elbo, kl) = train_best(&arch, &data, &lik, &cfg.train, 1, seed)?;
            // The same evaluation seed at every width and restart.
            let eval_seed = cell_seed(cfg.train.seed, 0, 99);
            let pm = paired_predictive_moments(&q, &arch, &grid, cfg.eval_samples, Output::Full, &mut rng_from_seed(eval_seed))?;
            let tilde = paired_predictive_moments(&q, &arch, &grid, cfg.eval_samples, Output::Tilde, &mut rng_from_seed(eval_seed));
            let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |a, d| a.max(d.abs()));
            Ok(ConvergenceCell {
                width,
                seed_index: si,
                max_mean_dist: max_abs(&pm.mean_diff),
                max_mean_dist_tilde: tilde.map_or(f64::NAN, |t| max_abs(&t.mean_diff)),
                final_kl: kl,
                final_elbo: elbo,
            })
        })
        .collect();
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for ((w, s), r) in cells.iter().zip(outcomes) {
        match r {
            Ok(c) => ok.push(c),
            Err(e) => failures.push((*w, *s, e.to_string())),
        }
    }
    let mut widths = Vec::new();
    let mut groups = Vec::new();
    for &width in &cfg.arch.widths {
        let arch = cfg.arch.at(width, 1)?;
        let kb = kl_bound_empirical(
            &data,
            &arch,
            data.noise_sigma2,
            cfg.kl_bound_samples,
            &mut rng_from_seed(cell_seed(cfg.train.seed, width as u64, 7)),
        )?;
        let bound = mean_distance_bound(&arch, x_norm, kb.value)?.value;
        let vals: Vec<f64> = ok.iter().filter(|c| c.width == width).map(|c| c.max_mean_dist).collect();
        if vals.is_empty() {
            continue;
        }
        widths.push(ConvergenceWidth {
            width,
            min: vals.iter().cloned().fold(f64::INFINITY, f64::min),
            mean: vals.iter().sum::<f64>() / vals.len() as f64,
            max: vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            bound,
            kl_bound: kb.value,
            kl_bound_se: kb.std_error,
        });
        groups.push(vals);
    }
    let ref_arch = cfg.arch.at(cfg.arch.widths[0], 1)?;
    let gp = nngp_posterior(&ref_arch, &data.x, &data.y, &grid, data.noise_sigma2)?;
    let nngp_posterior_dist = gp.mean.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let trend = (groups.len() > 1).then(|| non_increasing_trend(&groups));
    Ok(ConvergenceResult {
        metadata: RunMetadata::new(cfg, started),
        cells: ok,
        widths,
        nngp_posterior_dist,
        trend,
        failures,
    })
}

// ---------------------------------------------------------------------------
// RMSE sweep over datasets, widths and splits.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseSummary {
    pub width: usize,
    pub metric: String,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseSweepResult {
    pub record: RunRecord,
    pub summary: Vec<RmseSummary>,
    /// Non-increasing trend of RMSE to the prior mean, when there are several widths.
    pub prior_trend: Option<TrendTest>,
    /// Non-decreasing trend of RMSE to the test targets.
    pub test_trend: Option<TrendTest>,
}

impl RmseSweepResult {
    pub const CSV_HEADER: [&'static str; 9] = [
        "dataset",
        "width",
        "split",
        "rmse_mean_to_prior",
        "rmse_mean_to_test_y",
        "rmse_var_to_prior_var",
        "final_kl",
        "final_elbo",
        "max_mean_dist_to_prior",
    ];

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(Self::CSV_HEADER)?;
        for c in &self.record.cells {
            wr.serialize((
                &c.dataset,
                c.width,
                c.seed_index,
                c.rmse_mean_to_prior,
                c.rmse_mean_to_test_y,
                c.rmse_var_to_prior_var,
                c.final_kl,
                c.final_elbo,
                c.max_mean_dist_to_prior,
            ))?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return f64::NAN;
    }
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

/// For each width and replicate split: train (best of `restarts` by ELBO)
/// and compare the predictive to the prior and to the test targets.
pub fn run_rmse_sweep(cfg: &ExperimentConfig) -> Result<RmseSweepResult> {
    cfg.validate()?;
    let started = Instant::now();
    let d_in = cfg.dataset.d_in()?;
    let splits: Vec<crate::data::Split> = (0..cfg.seeds.len())
        .map(|i| cfg.dataset.load_split(cfg.seeds[i]))
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, usize)> = cfg
        .arch
        .widths
        .iter()
        .flat_map(|&w| (0..splits.len()).map(move |s| (w, s)))
        .collect();
    let name = cfg.dataset.name();
    let outcomes: Vec<Result<CellMetrics>> = cells
        .par_iter()
        .map(|&(width, si)| {
            let split = &splits[si];
            let arch = cfg.arch.at(width, d_in)?;
            let lik = cfg.lik(&split.train);
            let seed = cell_seed(cfg.seeds[si], width as u64, si as u64);
            let (q, elbo, kl) = train_best(&arch, &split.train, &lik, &cfg.train, cfg.restarts, seed)?;
            let mut rng = rng_from_seed(cell_seed(seed, 1, 2));
            let probe = Matrix::from_vec(
                cfg.eval_points,
                d_in,
                (0..cfg.eval_points * d_in).map(|_| rng.random_range(-1.0..=1.0)).collect(),
            )?;
            let pm = paired_predictive_moments(&q, &arch, &probe, cfg.eval_samples, Output::Full, &mut rng)?;
            let prior_var: Vec<f64> = (0..probe.rows())
                .map(|i| output_variance(&arch, probe.row(i), InputKernel::Scaled))
                .collect::<Result<_>>()?;
            let zeros = vec![0.0; probe.rows()];
            let rmse_test = if split.test.is_empty() {
                f64::NAN
            } else {
                let t = predictive_moments(&q, &arch, &split.test.x, cfg.eval_samples, &mut rng)?;
                rmse(&t.mean, &split.test.y)
            };
            Ok(CellMetrics {
                dataset: name.clone(),
                width,
                seed_index: si,
                max_mean_dist_to_prior: pm.mean_diff.iter().fold(0.0f64, |a, d| a.max(d.abs())),
                rmse_mean_to_prior: rmse(&pm.q.mean, &zeros),
                rmse_mean_to_test_y: rmse_test,
                rmse_var_to_prior_var: rmse(&pm.q.variance, &prior_var),
                final_kl: kl,
                final_elbo: elbo,
            })
        })
        .collect();
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for ((w, s), r) in cells.iter().zip(outcomes) {
        match r {
            Ok(c) => ok.push(c),
            Err(e) => failures.push((*w, *s, e.to_string())),
        }
    }
    let mut summary = Vec::new();
    let mut prior_groups = Vec::new();
    let mut test_groups = Vec::new();
    let mut boot = rng_from_seed(cell_seed(cfg.train.seed, 3, 3));
    for &width in &cfg.arch.widths {
        let of = |f: fn(&CellMetrics) -> f64| -> Vec<f64> {
            ok.iter().filter(|c| c.width == width).map(f).filter(|v| v.is_finite()).collect()
        };
        let metrics: [(&str, Vec<f64>); 3] = [
            ("rmse_mean_to_prior", of(|c| c.rmse_mean_to_prior)),
            ("rmse_mean_to_test_y", of(|c| c.rmse_mean_to_test_y)),
            ("rmse_var_to_prior_var", of(|c| c.rmse_var_to_prior_var)),
        ];
        for (metric, vals) in &metrics {
            if vals.is_empty() {
                continue;
            }
            let (lo, hi) = bootstrap_mean_ci(vals, BOOTSTRAP_REPLICATES, 0.95, &mut boot);
            summary.push(RmseSummary {
                width,
                metric: metric.to_string(),
                mean: vals.iter().sum::<f64>() / vals.len() as f64,
                ci_low: lo,
                ci_high: hi,
            });
        }
        let [(_, prior), (_, test), _] = metrics;
        if !prior.is_empty() {
            prior_groups.push(prior);
        }
        if !test.is_empty() {
            test_groups.push(test);
        }
    }
    let prior_trend = (prior_groups.len() > 1).then(|| non_increasing_trend(&prior_groups));
    let test_trend = (test_groups.len() > 1).then(|| non_decreasing_trend(&test_groups));
    Ok(RmseSweepResult {
        record: RunRecord {
            metadata: RunMetadata::new(cfg, started),
            cells: ok,
            failures,
        },
        summary,
        prior_trend,
        test_trend,
    })
}

// ---------------------------------------------------------------------------
// Posterior predictive plot.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub label: String,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorPlot {
    pub grid: Vec<f64>,
    pub data_x: Vec<f64>,
    pub data_y: Vec<f64>,
    pub bands: Vec<Band>,
    /// A few functions sampled from the widest fit.
    pub samples: Vec<Vec<f64>>,
    /// `sup_grid |mean(widest fit) - mean(NNGP prior)|`.
    pub widest_prior_distance: f64,
    /// Whether the NNGP posterior mean passes within two posterior standard
    /// deviations of every training point.
    pub nngp_fits_data: bool,
}

impl PosteriorPlot {
    pub const CSV_HEADER: [&'static str; 4] = ["series", "x", "mean", "sd"];

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(Self::CSV_HEADER)?;
        for b in &self.bands {
            for (i, x) in self.grid.iter().enumerate() {
                wr.serialize((&b.label, x, b.mean[i], b.sd[i]))?;
            }
        }
        for (k, s) in self.samples.iter().enumerate() {
            for (x, v) in self.grid.iter().zip(s) {
                wr.serialize((format!("sample_{k}"), x, v, 0.0))?;
            }
        }
        for (x, y) in self.data_x.iter().zip(&self.data_y) {
            wr.serialize(("data", x, y, 0.0))?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Static SVG with one panel: bands, sampled functions and data.
    pub fn to_svg(&self) -> String {
        const W: f64 = 640.0;
        const H: f64 = 420.0;
        const PAD: f64 = 48.0;
        let colors = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2"];
        let (x_lo, x_hi) = (self.grid[0], self.grid[self.grid.len() - 1]);
        let mut y_lo = f64::INFINITY;
        let mut y_hi = f64::NEG_INFINITY;
        for b in &self.bands {
            for (m, s) in b.mean.iter().zip(&b.sd) {
                y_lo = y_lo.min(m - s);
                y_hi = y_hi.max(m + s);
            }
        }
        for y in &self.data_y {
            y_lo = y_lo.min(*y);
            y_hi = y_hi.max(*y);
        }
        if !(y_hi > y_lo) {
            y_lo -= 1.0;
            y_hi += 1.0;
        }
        let px = |x: f64| PAD + (x - x_lo) / (x_hi - x_lo).max(1e-12) * (W - 2.0 * PAD);
        let py = |y: f64| H - PAD - (y - y_lo) / (y_hi - y_lo) * (H - 2.0 * PAD);
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - 2.0 * PAD,
            H - 2.0 * PAD
        );
        for (k, b) in self.bands.iter().enumerate() {
            let c = colors[k % colors.len()];
            let mut poly = String::new();
            for (x, (m, sd)) in self.grid.iter().zip(b.mean.iter().zip(&b.sd)) {
                let _ = write!(poly, "{:.2},{:.2} ", px(*x), py(m + sd));
            }
            for (x, (m, sd)) in self.grid.iter().zip(b.mean.iter().zip(&b.sd)).rev() {
                let _ = write!(poly, "{:.2},{:.2} ", px(*x), py(m - sd));
            }
            let _ = writeln!(s, r#"<polygon points="{}" fill="{c}" fill-opacity="0.15" stroke="none"/>"#, poly.trim());
            let line: Vec<String> = self
                .grid
                .iter()
                .zip(&b.mean)
                .map(|(x, m)| format!("{:.2},{:.2}", px(*x), py(*m)))
                .collect();
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#, line.join(" "));
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-size="12" fill="{c}">{}</text>"#,
                PAD + 8.0,
                PAD + 16.0 + 14.0 * k as f64,
                b.label
            );
        }
        for f in &self.samples {
            let line: Vec<String> = self
                .grid
                .iter()
                .zip(f)
                .map(|(x, v)| format!("{:.2},{:.2}", px(*x), py(v.clamp(y_lo, y_hi))))
                .collect();
            let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#555" stroke-opacity="0.25"/>"##, line.join(" "));
        }
        for (x, y) in self.data_x.iter().zip(&self.data_y) {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="black"/>"#, px(*x), py(*y));
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Mean and one-standard-deviation bands for every width, plus NNGP prior
/// and posterior references and a few sampled functions from the widest fit.
pub fn run_posterior_plot(cfg: &ExperimentConfig) -> Result<PosteriorPlot> {
    cfg.validate()?;
    let data = cfg.dataset.load_train()?;
    if data.d_in() != 1 {
        return Err(Error::Config("posterior plots need a one-dimensional dataset".into()));
    }
    let lik = cfg.lik(&data);
    let grid = Matrix::column(&cfg.grid);
    let seed = cfg.seeds[0];
    let fits: Vec<(usize, Band, MeanFieldGaussian)> = cfg
        .arch
        .widths
        .par_iter()
        .map(|&width| {
            let arch = cfg.arch.at(width, 1)?;
            let (q, _, _) = train_best(&arch, &data, &lik, &cfg.train, 1, cell_seed(seed, width as u64, 0))?;
            let pm = predictive_moments(&q, &arch, &grid, cfg.eval_samples, &mut rng_from_seed(cell_seed(seed, 5, 5)))?;
            let band = Band {
                label: format!("mfvi M={width}"),
                sd: pm.variance.iter().map(|v| v.max(0.0).sqrt()).collect(),
                mean: pm.mean,
            };
            Ok((width, band, q))
        })
        .collect::<Result<_>>()?;
    let widest = fits.iter().max_by_key(|f| f.0).expect("nonempty widths");
    let ref_arch = cfg.arch.at(widest.0, 1)?;
    let k = nngp_kernel(&ref_arch, &grid, &grid)?;
    let prior_band = Band {
        label: "nngp prior".into(),
        mean: vec![0.0; cfg.grid.len()],
        sd: (0..cfg.grid.len()).map(|i| k.entries.get(i, i).sqrt()).collect(),
    };
    let gp = nngp_posterior(&ref_arch, &data.x, &data.y, &grid, data.noise_sigma2)?;
    let at_data = nngp_posterior(&ref_arch, &data.x, &data.y, &data.x, data.noise_sigma2)?;
    let nngp_fits_data = data
        .y
        .iter()
        .enumerate()
        .all(|(i, y)| (at_data.mean[i] - y).abs() <= 2.0 * (at_data.variance[i] + data.noise_sigma2).sqrt());
    let post_band = Band {
        label: "nngp posterior".into(),
        mean: gp.mean.clone(),
        sd: gp.variance.iter().map(|v| v.sqrt()).collect(),
    };
    let widest_prior_distance = widest.1.mean.iter().fold(0.0f64, |a, m| a.max(m.abs()));
    let mut rng = rng_from_seed(cell_seed(seed, 6, 6));
    let sigma = widest.2.sigma();
    let samples = (0..5)
        .map(|_| {
            let theta: Vec<f64> = widest
                .2
                .mu
                .iter()
                .zip(&sigma)
                .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                .collect();
            crate::net::forward(&ref_arch, &theta, &grid).map(|f| f.as_slice().to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut bands = vec![prior_band, post_band];
    bands.extend(fits.into_iter().map(|f| f.1));
    Ok(PosteriorPlot {
        grid: cfg.grid.clone(),
        data_x: data.x.as_slice().to_vec(),
        data_y: data.y.clone(),
        bands,
        samples,
        widest_prior_distance,
        nngp_fits_data,
    })
}

// ---------------------------------------------------------------------------
// Counterexample.

/// Trains the configured activation on the counterexample dataset.
pub fn run_counterexample(cfg: &ExperimentConfig) -> Result<CounterexampleReport> {
    cfg.validate()?;
    let spec = cfg.dataset.counterexample_spec(cfg.arch.depth, cfg.arch.widths[0])?;
    run_counterexample_check(
        &spec,
        cfg.arch.activation,
        &cfg.arch.widths,
        &cfg.train,
        CheckSettings {
            eval_samples: cfg.eval_samples,
            seed: cfg.seeds[0],
        },
    )
}

// ---------------------------------------------------------------------------
// Verification suite.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyCheck {
    pub name: String,
    pub pass: bool,
    /// Smallest slack (bound minus observed) across the check's instances.
    pub slack: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<VerifyCheck>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// A mean-field Gaussian with `mu ~ N(0, mu_sd^2)` and
/// `log sigma ~ N(0, log_sigma_sd^2)`.
pub fn random_q<R: Rng + ?Sized>(arch: &Architecture, mu_sd: f64, log_sigma_sd: f64, rng: &mut R) -> MeanFieldGaussian {
    let p = arch.param_count();
    let mu = (0..p).map(|_| mu_sd * rng.sample::<f64, _>(StandardNormal)).collect();
    let ls = (0..p).map(|_| log_sigma_sd * rng.sample::<f64, _>(StandardNormal)).collect();
    MeanFieldGaussian::new(mu, ls).expect("matching lengths")
}

/// Largest relative discrepancy between the pathwise ELBO gradient and
/// central finite differences under common random numbers.
///
/// Each coordinate's error is scaled by `max(|g_i|, |fd_i|, floor)` with
/// `floor = 1e-3 * max_i |fd_i|`, so coordinates with negligible gradients
/// do not dominate.
pub fn finite_difference_check(
    q: &MeanFieldGaussian,
    arch: &Architecture,
    data: &Dataset,
    lik: &LikelihoodSpec,
    noise: &[Vec<f64>],
    h: f64,
) -> Result<f64> {
    let batch = Batch::full(data);
    let g = elbo_gradient_with_noise(q, arch, &batch, lik, noise)?;
    let eval = |q: &MeanFieldGaussian| elbo_estimate_with_noise(q, arch, &batch, lik, noise).map(|e| e.elbo);
    let mut fd = Vec::with_capacity(2 * q.len());
    for which in 0..2 {
        for i in 0..q.len() {
            let mut plus = q.clone();
            let mut minus = q.clone();
            let (p, m) = if which == 0 {
                (&mut plus.mu[i], &mut minus.mu[i])
            } else {
                (&mut plus.log_sigma[i], &mut minus.log_sigma[i])
            };
            *p += h;
            *m -= h;
            fd.push((eval(&plus)? - eval(&minus)?) / (2.0 * h));
        }
    }
    let analytic: Vec<f64> = g.mu.iter().chain(&g.log_sigma).copied().collect();
    let floor = 1e-3 * fd.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(analytic
        .iter()
        .zip(&fd)
        .map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(floor).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max))
}

/// Parameter-norm bounds, spectral-norm lemmas, the `Q^C` KL identity and a
/// gradient check, each reported with its slack.
pub fn run_verify(seed: u64) -> Result<VerifyReport> {
    let mut rng = rng_from_seed(seed);
    let mut checks = Vec::new();

    let arch = Architecture::scalar(2, 6, 2, ActivationKind::Tanh)?;
    let mut worst = f64::INFINITY;
    let mut pass = true;
    for _ in 0..200 {
        let q = random_q(&arch, 0.5, 0.1f64.sqrt(), &mut rng);
        let r = verify_param_bounds(&q, &arch)?;
        pass &= r.all_pass();
        worst = r.checks.iter().map(|c| c.slack).fold(worst, f64::min);
    }
    checks.push(VerifyCheck {
        name: "param_bounds".into(),
        pass,
        slack: worst,
        detail: "200 random mean-field Gaussians".into(),
    });

    for (i, j) in [(8, 8), (64, 64), (16, 128)] {
        let r = mc_opnorm_checks(i, j, 1.0, 200, &mut rng)?;
        checks.push(VerifyCheck {
            name: format!("opnorm_{i}x{j}"),
            pass: r.pass,
            slack: (r.norm_bound - r.mean_norm).min(r.sq_norm_bound - r.mean_sq_norm),
            detail: format!(
                "E||A|| = {:.4} (bound {:.4}), E||A||^2 = {:.4} (bound {:.4})",
                r.mean_norm, r.norm_bound, r.mean_sq_norm, r.sq_norm_bound
            ),
        });
    }

    let mut worst_err = 0.0f64;
    for _ in 0..20 {
        let depth = rng.random_range(1..=3);
        let width = rng.random_range(1..=16);
        let a = Architecture::scalar(depth, width, 1, ActivationKind::Relu)?;
        let c = rng.random_range(0.0..50.0);
        let q = build_qc(&a, c)?;
        worst_err = worst_err.max((kl_to_standard_normal(&q) - c / 2.0).abs());
    }
    checks.push(VerifyCheck {
        name: "qc_kl_identity".into(),
        pass: worst_err <= 1e-12,
        slack: 1e-12 - worst_err,
        detail: format!("max |KL - C/2| = {worst_err:e}"),
    });

    let mut worst_grad = 0.0f64;
    for kind in ActivationKind::ALL {
        let a = Architecture::scalar(2, 4, 2, kind)?;
        let q = random_q(&a, 0.5, 0.2, &mut rng);
        let x = Matrix::from_vec(3, 2, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        let data = Dataset::new(x, vec![0.3, -0.5, 1.1], "probe", 0.5)?;
        let noise: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..q.len()).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let lik = LikelihoodSpec::Gaussian { sigma2: 0.5 };
        worst_grad = worst_grad.max(finite_difference_check(&q, &a, &data, &lik, &noise, 1e-5)?);
    }
    checks.push(VerifyCheck {
        name: "elbo_gradient".into(),
        pass: worst_grad <= 1e-4,
        slack: 1e-4 - worst_grad,
        detail: format!("max relative error {worst_grad:e}"),
    });

    let ds = make_two_points();
    let a = Architecture::scalar(1, 256, 1, ActivationKind::Tanh)?;
    let kb = kl_bound_empirical(&ds, &a, ds.noise_sigma2, 500, &mut rng)?;
    let kg = crate::bounds::kl_bound_gaussian(&ds, 1, ds.noise_sigma2)?;
    checks.push(VerifyCheck {
        name: "kl_bound_ordering".into(),
        pass: kb.value <= kg + 4.0 * kb.std_error,
        slack: kg + 4.0 * kb.std_error - kb.value,
        detail: format!("empirical {:.3} +- {:.3}, analytic {kg:.3}", kb.value, kb.std_error),
    });

    let pb = crate::counterexample::prior_with_optimal_bias(&a, &ds)?;
    let lik = LikelihoodSpec::Gaussian { sigma2: ds.noise_sigma2 };
    let e = elbo_estimate(&pb, &a, &ds, &lik, 200, &mut rng)?;
    checks.push(VerifyCheck {
        name: "elbo_finite".into(),
        pass: e.elbo.is_finite(),
        slack: 0.0,
        detail: format!("prior with optimal bias ELBO {:.3}", e.elbo),
    });

    Ok(VerifyReport { checks })
}

// ---------------------------------------------------------------------------
// Output helpers used by the command-line front end.

/// Writes convergence CSVs and metadata under `dir`.
pub fn write_convergence(result: &ConvergenceResult, dir: &Path) -> Result<()> {
    result.write_csv(csv_file(&dir.join("convergence.csv"))?.into_inner().map_err(|e| e.into_error())?)?;
    result.write_summary_csv(fs::File::create(dir.join("convergence_summary.csv"))?)?;
    write_json(&dir.join("metadata.json"), &result.metadata)
}

/// Writes RMSE sweep CSVs and metadata under `dir`.
pub fn write_rmse_sweep(result: &RmseSweepResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    result.write_csv(fs::File::create(dir.join("rmse_sweep.csv"))?)?;
    let mut wr = csv::Writer::from_path(dir.join("rmse_summary.csv"))?;
    wr.write_record(["width", "metric", "mean", "ci_low", "ci_high"])?;
    for s in &result.summary {
        wr.serialize((s.width, &s.metric, s.mean, s.ci_low, s.ci_high))?;
    }
    wr.flush()?;
    write_json(&dir.join("metadata.json"), &result.record.metadata)
}

/// Writes the plot SVG and CSV under `dir`.
pub fn write_posterior_plot(plot: &PosteriorPlot, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("posterior.svg"), plot.to_svg())?;
    plot.write_csv(fs::File::create(dir.join("posterior.csv"))?)
}

/// Writes a JSON value under `dir/name`.
pub fn write_report<T: Serialize>(value: &T, dir: &Path, name: &str) -> Result<()> {
    write_json(&dir.join(name), value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linspace_endpoints() {
        let g = linspace(-1.0, 1.0, 25);
        assert_eq!(g.len(), 25);
        assert_eq!(g[0], -1.0);
        assert_eq!(g[24], 1.0);
        assert!((g[12]).abs() < 1e-15);
    }

    #[test]
    fn config_round_trip_and_hash() {
        let cfg = ExperimentConfig::preset(ExperimentKind::Convergence);
        let json = serde_json::to_string(&cfg).unwrap();
        let back = ExperimentConfig::from_json(&json).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
        assert_eq!(cfg.hash().len(), 64);
        let mut other = cfg.clone();
        other.seeds.push(9);
        assert_ne!(cfg.hash(), other.hash());
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::from_json(
            r#"{"experiment":"convergence","dataset":{"kind":"two_points"},
                "arch":{"depth":1,"activation":"tanh","widths":[8]}}"#,
        )
        .unwrap();
        assert_eq!(cfg.grid.len(), 25);
        assert_eq!(cfg.eval_samples, 1000);
        assert_eq!(cfg.train, TrainConfig::default());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = ExperimentConfig::preset(ExperimentKind::Convergence);
        cfg.arch.widths.clear();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ExperimentConfig::preset(ExperimentKind::Convergence);
        cfg.seeds.clear();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        assert!(ExperimentConfig::from_json("{").is_err());
    }

    #[test]
    fn desk_preset_caps_widths() {
        let mut cfg = ExperimentConfig::preset(ExperimentKind::Convergence);
        cfg.arch.widths = vec![64, 8192];
        cfg.train.seed = 11;
        cfg.apply_desk();
        assert_eq!(cfg.arch.widths, vec![64]);
        assert_eq!(cfg.train.steps, 5000);
        assert_eq!(cfg.train.seed, 11);
    }

    #[test]
    fn gradient_check_is_tight() {
        let mut rng = rng_from_seed(4);
        let a = Architecture::scalar(1, 3, 1, ActivationKind::Tanh).unwrap();
        let q = random_q(&a, 0.5, 0.2, &mut rng);
        let data = Dataset::new(Matrix::column(&[0.3, -0.7]), vec![0.1, 0.4], "t", 0.3).unwrap();
        let noise: Vec<Vec<f64>> = (0..2).map(|_| (0..q.len()).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let lik = LikelihoodSpec::Gaussian { sigma2: 0.3 };
        assert!(finite_difference_check(&q, &a, &data, &lik, &noise, 1e-5).unwrap() < 1e-6);
    }

    #[test]
    fn rmse_basic() {
        assert_eq!(rmse(&[1.0, -1.0], &[0.0, 0.0]), 1.0);
        assert!(rmse(&[], &[]).is_nan());
    }
}
