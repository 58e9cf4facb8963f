//! `widebnn` command-line driver.
//!
//! Exit codes: 0 on success, 1 when a run finishes but one of its checks
//! fails, 2 on configuration or input errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use widebnn::bounds::{
    kl_bound_empirical, kl_bound_gaussian, second_moment_bound, write_reports_csv, BoundInputs, BoundReport,
};
use widebnn::harness::{self, ExperimentConfig, ExperimentKind};
use widebnn::linalg::Matrix;
use widebnn::mfvi::{train, LikelihoodSpec};
use widebnn::net::ActivationSpec;
use widebnn::nngp::{nngp_kernel, nngp_posterior};
use widebnn::{rng_from_seed, Error};

#[derive(Parser, Debug)]
#[command(name = "widebnn", version, about = "Mean-field variational BNNs at growing width")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one network at the first configured width.
    Train(Common),
    /// Run the sweep named by the config's `experiment` field.
    Sweep(Common),
    /// Tabulate the KL, mean and second-moment bounds for each width.
    Bounds(Common),
    /// NNGP prior and posterior on the evaluation grid.
    Nngp(Common),
    /// Trained mean gap on the two-point counterexample dataset.
    Counterexample(Common),
    /// Batch of numerical self-checks; fails when any check fails.
    Verify(Common),
    /// Posterior predictive bands as SVG and CSV.
    Plot(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON experiment config; a preset for the subcommand when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed, overriding the config's training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Shorter training schedule and widths capped for a single machine.
    #[arg(long)]
    desk: bool,
    /// Worker threads for sweeps.
    #[arg(long)]
    threads: Option<usize>,
}

/// How a subcommand ended.
enum Outcome {
    Pass,
    Fail(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, default_kind) = match &cli.command {
        Command::Train(c) => (c, ExperimentKind::Convergence),
        Command::Sweep(c) => (c, ExperimentKind::Convergence),
        Command::Bounds(c) => (c, ExperimentKind::BoundsTable),
        Command::Nngp(c) => (c, ExperimentKind::PosteriorPlot),
        Command::Counterexample(c) => (c, ExperimentKind::Counterexample),
        Command::Verify(c) => (c, ExperimentKind::Verify),
        Command::Plot(c) => (c, ExperimentKind::PosteriorPlot),
    };
    if let Some(n) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let cfg = match load_config(common, default_kind) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Train(_) => cmd_train(&cfg),
        Command::Sweep(_) => cmd_sweep(&cfg),
        Command::Bounds(_) => cmd_bounds(&cfg),
        Command::Nngp(_) => cmd_nngp(&cfg),
        Command::Counterexample(_) => cmd_counterexample(&cfg),
        Command::Verify(_) => cmd_verify(&cfg),
        Command::Plot(_) => cmd_plot(&cfg),
    };
    match result {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            let config_like = matches!(
                e,
                Error::Config(_)
                    | Error::Json(_)
                    | Error::Io(_)
                    | Error::Csv(_)
                    | Error::InvalidArchitecture(_)
                    | Error::InvalidArgument(_)
                    | Error::NoDataRows { .. }
                    | Error::ColumnCount { .. }
                    | Error::NonNumeric { .. }
                    | Error::UnknownColumn { .. }
                    | Error::DegenerateColumn(_)
            );
            ExitCode::from(if config_like { 2 } else { 1 })
        }
    }
}

fn load_config(common: &Common, default_kind: ExperimentKind) -> widebnn::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::preset(default_kind),
    };
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    if common.desk {
        cfg.apply_desk();
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> widebnn::Result<&Path> {
    fs::create_dir_all(&cfg.output_dir)?;
    Ok(&cfg.output_dir)
}

fn cmd_train(cfg: &ExperimentConfig) -> widebnn::Result<Outcome> {
    let data = cfg.dataset.load_train()?;
    let arch = cfg.arch.at(cfg.arch.widths[0], data.d_in())?;
    let lik = LikelihoodSpec::Gaussian {
        sigma2: data.noise_sigma2,
    };
    let (q, history) = train(&arch, &data, &lik, &cfg.train)?;
    let dir = out_dir(cfg)?;
    history.write_csv(fs::File::create(dir.join("history.csv"))?)?;
    harness::write_report(&q, dir, "posterior.json")?;
    if let Some(last) = history.last() {
        println!(
            "width {} steps {}: elbo {:.4} kl {:.4}",
            arch.width, last.step, last.elbo, last.kl
        );
    }
    Ok(Outcome::Pass)
}

fn cmd_sweep(cfg: &ExperimentConfig) -> widebnn::Result<Outcome> {
    match cfg.experiment {
        ExperimentKind::Convergence => {
            let r = harness::run_convergence(cfg)?;
            harness::write_convergence(&r, out_dir(cfg)?)?;
            println!("{:>8} {:>12} {:>12} {:>12}", "width", "mean", "max", "bound");
            for w in &r.widths {
                println!("{:>8} {:>12.5} {:>12.5} {:>12.5}", w.width, w.mean, w.max, w.bound);
            }
            if !r.failures.is_empty() {
                return Ok(Outcome::Fail(format!("{} cells failed", r.failures.len())));
            }
            if !r.below_bound() {
                return Ok(Outcome::Fail("observed distance exceeds the bound".into()));
            }
            Ok(Outcome::Pass)
        }
        ExperimentKind::RmseSweep => {
            let r = harness::run_rmse_sweep(cfg)?;
            harness::write_rmse_sweep(&r, out_dir(cfg)?)?;
            for s in &r.summary {
                println!(
                    "{:>8} {:<24} {:>10.5} [{:.5}, {:.5}]",
                    s.width, s.metric, s.mean, s.ci_low, s.ci_high
                );
            }
            if r.record.failures.is_empty() {
                Ok(Outcome::Pass)
            } else {
                Ok(Outcome::Fail(format!("{} cells failed", r.record.failures.len())))
            }
        }
        ExperimentKind::PosteriorPlot => cmd_plot(cfg),
        ExperimentKind::Counterexample => cmd_counterexample(cfg),
        ExperimentKind::BoundsTable => cmd_bounds(cfg),
        ExperimentKind::Verify => cmd_verify(cfg),
    }
}

fn cmd_bounds(cfg: &ExperimentConfig) -> widebnn::Result<Outcome> {
    let data = cfg.dataset.load_train()?;
    let d_in = data.d_in();
    let x_norm = if d_in == 1 {
        cfg.grid.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    } else {
        (d_in as f64).sqrt()
    };
    let mut reports: Vec<BoundReport> = Vec::new();
    println!(
        "{:>8} {:>12} {:>12} {:<14} {:>14}",
        "width", "kl_gaussian", "kl_empirical", "formula", "value"
    );
    for &width in &cfg.arch.widths {
        let arch = cfg.arch.at(width, d_in)?;
        let kl_g = kl_bound_gaussian(&data, arch.depth, data.noise_sigma2)?;
        let mut rng = rng_from_seed(cfg.train.seed ^ width as u64);
        let kl_e = kl_bound_empirical(&data, &arch, data.noise_sigma2, cfg.kl_bound_samples, &mut rng)?;
        let mean = harness::mean_distance_bound(&arch, x_norm, kl_e.value)?;
        let second = second_moment_bound(&BoundInputs {
            m: width,
            l: arch.depth,
            d_in,
            x_norm,
            kl: kl_e.value,
            alpha: arch.activation.odd_offset()?,
        })?;
        for r in [mean, second] {
            println!(
                "{:>8} {:>12.4} {:>12.4} {:<14} {:>14.6}",
                width,
                kl_g,
                kl_e.value,
                r.formula.to_string(),
                r.value
            );
            reports.push(r);
        }
    }
    write_reports_csv(&reports, fs::File::create(out_dir(cfg)?.join("bounds.csv"))?)?;
    Ok(Outcome::Pass)
}

fn cmd_nngp(cfg: &ExperimentConfig) -> widebnn::Result<Outcome> {
    let data = cfg.dataset.load_train()?;
    if data.d_in() != 1 {
        return Err(Error::Config("the nngp subcommand evaluates on a one-dimensional grid".into()));
    }
    let arch = cfg.arch.at(cfg.arch.widths[0], 1)?;
    let grid = Matrix::column(&cfg.grid);
    let prior = nngp_kernel(&arch, &grid, &grid)?;
    let post = nngp_posterior(&arch, &data.x, &data.y, &grid, data.noise_sigma2)?;
    let dir = out_dir(cfg)?;
    let mut text = String::from("x,prior_var,post_mean,post_var\n");
    for (i, x) in cfg.grid.iter().enumerate() {
        text.push_str(&format!(
            "{x},{},{},{}\n",
            prior.entries.get(i, i),
            post.mean[i],
            post.variance[i]
        ));
    }
    fs::write(dir.join("nngp.csv"), text)?;
    prior.write_csv(fs::File::create(dir.join("nngp_prior_kernel.csv"))?)?;
    Ok(Outcome::Pass)
}

fn cmd_counterexample(cfg: &ExperimentConfig) -> widebnn::Result<Outcome> {
    let report = harness::run_counterexample(cfg)?;
    report.write_csv(fs::File::create(out_dir(cfg)?.join("counterexample.csv"))?)?;
    println!("threshold {:.4}", report.threshold);
    for r in &report.rows {
        println!("{:>8} gap {:.4} +- {:.4}", r.width, r.gap, r.gap_se);
    }
    // Only the even-part activation carries a claim that the gap persists.
    if ActivationSpec::new(report.fit_activation).odd_offset().is_err() && !report.gap_persists() {
        return Ok(Outcome::Fail("trained gap fell below the threshold".into()));
    }
    Ok(Outcome::Pass)
}

fn cmd_verify(cfg: &ExperimentConfig) -> widebnn::Result<Outcome> {
    let report = harness::run_verify(cfg.train.seed)?;
    harness::write_report(&report, out_dir(cfg)?, "verify.json")?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if report.all_pass() {
        Ok(Outcome::Pass)
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        Ok(Outcome::Fail(failed.join(", ")))
    }
}

fn cmd_plot(cfg: &ExperimentConfig) -> widebnn::Result<Outcome> {
    let plot = harness::run_posterior_plot(cfg)?;
    harness::write_posterior_plot(&plot, out_dir(cfg)?)?;
    println!(
        "widest fit distance to prior mean {:.4}; nngp fits data: {}",
        plot.widest_prior_distance, plot.nngp_fits_data
    );
    Ok(Outcome::Pass)
}
