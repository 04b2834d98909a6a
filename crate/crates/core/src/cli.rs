//! Command-line driver: simulate | fit | evaluate | recover | sweep | report,
//! all driven by one JSON config. KEDRL_THREADS caps the worker pool.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use crate::config::ExperimentConfig;
use crate::data;
use crate::error::{KedrlError, Result};
use crate::evaluation;
use crate::pipeline;
use crate::sim_env;
use crate::stats_recovery::{self, TestFunction};

#[derive(Parser)]
#[command(name = "kedrl", version, about = "Distributional off-policy evaluation via kernel mean embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// experiment configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// override the config's base seed
    #[arg(long)]
    seed: Option<u64>,
    /// output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a trajectory dataset (CSV + manifest)
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the embedding model on a dataset file
    Fit {
        #[command(flatten)]
        common: Common,
        /// trajectory CSV written by `simulate`
        #[arg(long)]
        data: PathBuf,
    },
    /// Score a fitted model against the Monte-Carlo reference
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// fitted model JSON
        #[arg(long)]
        model: PathBuf,
        /// optional CSV of reference return samples (rows of d values);
        /// generated from the config when absent
        #[arg(long)]
        mc_samples: Option<PathBuf>,
    },
    /// Recover a distributional statistic from a fitted model
    Recover {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// named statistic: mass | smooth_cdf | tail_sigmoid | tanh_utility |
        /// sigmoid_utility | smoothed_moment | kernel_density | cdf_curve
        #[arg(long)]
        kind: String,
        /// JSON parameters for the statistic (thresholds, bandwidth, ...)
        #[arg(long)]
        params: Option<String>,
    },
    /// Grid-sweep kernel and regularization settings by validation risk
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Run the replicate study and write the aggregate report
    Report {
        #[command(flatten)]
        common: Common,
    },
}

/// Parse arguments, run, and map errors to exit codes
/// (0 ok, 2 validation, 3 numerical, 4 I/O).
pub fn run() -> i32 {
    let cli = Cli::parse();
    init_threads();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_threads() {
    if let Ok(v) = std::env::var("KEDRL_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    std::fs::create_dir_all(&common.out).map_err(|e| KedrlError::io(common.out.display().to_string(), e))?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let body = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, body).map_err(|e| KedrlError::io(path.display().to_string(), e))
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common } => {
            let cfg = load_config(&common)?;
            let trajs =
                sim_env::generate_dataset(&cfg.env, &cfg.behavior_policy, cfg.n_trajectories, cfg.horizon, cfg.seed)?;
            let csv_path = common.out.join("dataset.csv");
            let manifest = data::DatasetManifest {
                state_dim: cfg.env.state_dim(),
                action_dim: cfg.env.action_dim(),
                reward_dim: cfg.env.reward_dim(),
                discount: cfg.discount,
                seed: cfg.seed,
                n_trajectories: cfg.n_trajectories,
            };
            data::write_csv(&csv_path, &trajs, &manifest)?;
            println!("wrote {} and {}", csv_path.display(), data::manifest_path(&csv_path).display());
            Ok(())
        }
        Command::Fit { common, data: data_path } => {
            let cfg = load_config(&common)?;
            let (trajs, manifest) = data::read_csv(&data_path)?;
            if manifest.state_dim != cfg.env.state_dim()
                || manifest.action_dim != cfg.env.action_dim()
                || manifest.reward_dim != cfg.env.reward_dim()
            {
                return Err(KedrlError::invalid("dataset dimensions do not match the config environment"));
            }
            let (train, _val, _test) = data::split_trajectories(&trajs, cfg.split_fractions, cfg.seed)?;
            let fit = pipeline::fit_bellman(&train, &cfg, cfg.seed).map_err(|e| stage("fit", e))?;
            let model_path = common.out.join("model.json");
            fit.model.save(&model_path)?;
            fit.trace.write_csv(&common.out.join("trace.csv"))?;
            fit.model.grid().write_csv(&common.out.join("grid.csv"))?;
            fit.ratio.save(&common.out.join("ratio.json"))?;
            println!("wrote {}", model_path.display());
            Ok(())
        }
        Command::Evaluate { common, model, mc_samples } => {
            let cfg = load_config(&common)?;
            let model = crate::bellman::EmbeddingModel::load(&model)?;
            let mc = match mc_samples {
                Some(path) => read_samples_csv(&path, model.grid_atoms.ncols())?,
                None => pipeline::mc_reference(&cfg).map_err(|e| stage("mc reference", e))?.0,
            };
            let eval_points = evaluation::eval_grid(&mc, cfg.eval_points_per_dim)?;
            let query: Vec<f64> = cfg.query_state.iter().chain(cfg.query_action.iter()).copied().collect();
            let mut report = evaluation::embedding_error(&model, &mc, &eval_points, &query)?;
            let trajs =
                sim_env::generate_dataset(&cfg.env, &cfg.behavior_policy, cfg.n_trajectories, cfg.horizon, cfg.seed)?;
            let (_train, val, _test) = data::split_trajectories(&trajs, cfg.split_fractions, cfg.seed)?;
            if !val.is_empty() {
                let (vi, vr) = pipeline::risk_pairs(&val, cfg.discount)?;
                report.heldout_risk = Some(evaluation::heldout_risk(&model, &vi, &vr)?);
            }
            let omega = model.omega(&query)?;
            report.recovered_mass =
                Some(stats_recovery::recover(&omega, &model.grid(), &TestFunction::Mass)?);
            let agg = evaluation::aggregate(vec![report], cfg.echo())?;
            write_json(&common.out.join("report.json"), &agg)?;
            write_report_csv(&common.out.join("report.csv"), &agg)?;
            write_plot_slices(&common.out, &model, &omega, &mc)?;
            println!("wrote {}", common.out.join("report.json").display());
            Ok(())
        }
        Command::Recover { common, model, kind, params } => {
            let cfg = load_config(&common)?;
            let model = crate::bellman::EmbeddingModel::load(&model)?;
            let query: Vec<f64> = cfg.query_state.iter().chain(cfg.query_action.iter()).copied().collect();
            let omega = model.omega(&query)?;
            let out = recover_statistic(&model, &omega, &kind, params.as_deref())?;
            let path = common.out.join("statistic.json");
            write_json(&path, &out)?;
            println!("{}", serde_json::to_string_pretty(&out).expect("serializable"));
            Ok(())
        }
        Command::Sweep { common } => {
            let cfg = load_config(&common)?;
            let rows = pipeline::sweep(&cfg)?;
            let path = common.out.join("sweep.csv");
            write_sweep_csv(&path, &rows)?;
            println!("wrote {} ({} rows)", path.display(), rows.len());
            Ok(())
        }
        Command::Report { common } => {
            let cfg = load_config(&common)?;
            let (agg, _fit) = pipeline::replicate_study(&cfg)?;
            write_json(&common.out.join("report.json"), &agg)?;
            write_report_csv(&common.out.join("report.csv"), &agg)?;
            println!(
                "replicates {}: rmse {:.4} ({:.4}), bias {:+.4} ({:.4})",
                agg.replicates, agg.rmse_mean, agg.rmse_sd, agg.bias_mean, agg.bias_sd
            );
            Ok(())
        }
    }
}

fn write_report_csv(path: &Path, agg: &evaluation::OPEReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| KedrlError::io(path.display().to_string(), std::io::Error::other(e.to_string())))?;
    w.write_record(["replicate", "bias", "rmse", "mae", "heldout_risk", "recovered_mass"])
        .map_err(|e| KedrlError::format(path.display().to_string(), e.to_string()))?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.10e}")).unwrap_or_default();
    for (i, r) in agg.per_replicate.iter().enumerate() {
        w.write_record([
            i.to_string(),
            format!("{:.10e}", r.bias),
            format!("{:.10e}", r.rmse),
            format!("{:.10e}", r.mae),
            opt(r.heldout_risk),
            opt(r.recovered_mass),
        ])
        .map_err(|e| KedrlError::format(path.display().to_string(), e.to_string()))?;
    }
    w.write_record([
        "mean".to_string(),
        format!("{:.10e}", agg.bias_mean),
        format!("{:.10e}", agg.rmse_mean),
        format!("{:.10e}", agg.mae_mean),
        opt(agg.heldout_risk_mean),
        String::new(),
    ])
    .map_err(|e| KedrlError::format(path.display().to_string(), e.to_string()))?;
    w.write_record([
        "sd".to_string(),
        format!("{:.10e}", agg.bias_sd),
        format!("{:.10e}", agg.rmse_sd),
        format!("{:.10e}", agg.mae_sd),
        opt(agg.heldout_risk_sd),
        String::new(),
    ])
    .map_err(|e| KedrlError::format(path.display().to_string(), e.to_string()))?;
    w.flush().map_err(|e| KedrlError::io(path.display().to_string(), e))?;
    Ok(())
}

fn stage(name: &str, e: KedrlError) -> KedrlError {
    match e {
        KedrlError::InvalidInput(m) => KedrlError::InvalidInput(format!("[{name}] {m}")),
        KedrlError::Numerical(m) => KedrlError::Numerical(format!("[{name}] {m}")),
        other => other,
    }
}

fn read_samples_csv(path: &Path, dim: usize) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| KedrlError::io(path.display().to_string(), std::io::Error::other(e.to_string())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| KedrlError::format(path.display().to_string(), e.to_string()))?;
        if rec.len() != dim {
            return Err(KedrlError::format(
                path.display().to_string(),
                format!("row {line}: expected {dim} columns, got {}", rec.len()),
            ));
        }
        let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(|v| v.trim().parse::<f64>()).collect();
        rows.push(vals.map_err(|_| KedrlError::format(path.display().to_string(), format!("row {line}: bad number")))?);
    }
    if rows.is_empty() {
        return Err(KedrlError::format(path.display().to_string(), "no samples".to_string()));
    }
    Ok(DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]))
}

/// 1-D slices through the reference mean for each reward coordinate:
/// columns x, mu_hat, mu_mc.
fn write_plot_slices(out: &Path, model: &crate::bellman::EmbeddingModel, omega: &[f64], mc: &DMatrix<f64>) -> Result<()> {
    let d = mc.ncols();
    let n = mc.nrows() as f64;
    let mean: Vec<f64> = (0..d).map(|c| mc.column(c).sum() / n).collect();
    for c in 0..d {
        let lo = mc.column(c).iter().fold(f64::INFINITY, |a, &b| a.min(b));
        let hi = mc.column(c).iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let pad = 0.1 * (hi - lo);
        let n_pts = 101;
        let mut pts = DMatrix::from_fn(n_pts, d, |_, j| mean[j]);
        for i in 0..n_pts {
            pts[(i, c)] = lo - pad + (hi - lo + 2.0 * pad) * i as f64 / (n_pts - 1) as f64;
        }
        let fitted = model.embedding_values(omega, &pts)?;
        let reference = evaluation::reference_embedding(mc, &pts, &model.k_z_params)?;
        let path = out.join(format!("plot_coord_{c}.csv"));
        let mut w = csv::Writer::from_path(&path)
            .map_err(|e| KedrlError::io(path.display().to_string(), std::io::Error::other(e.to_string())))?;
        w.write_record(["x", "mu_hat", "mu_mc"])
            .map_err(|e| KedrlError::format(path.display().to_string(), e.to_string()))?;
        for i in 0..n_pts {
            w.write_record([
                format!("{:.17e}", pts[(i, c)]),
                format!("{:.17e}", fitted[i]),
                format!("{:.17e}", reference[i]),
            ])
            .map_err(|e| KedrlError::format(path.display().to_string(), e.to_string()))?;
        }
        w.flush().map_err(|e| KedrlError::io(path.display().to_string(), e))?;
    }
    Ok(())
}

fn params_value(params: Option<&str>) -> Result<serde_json::Value> {
    match params {
        None => Ok(serde_json::json!({})),
        Some(text) => serde_json::from_str(text)
            .map_err(|e| KedrlError::invalid(format!("bad --params JSON: {e}"))),
    }
}

fn f64_field(v: &serde_json::Value, key: &str, default: f64) -> f64 {
    v.get(key).and_then(|x| x.as_f64()).unwrap_or(default)
}

fn vec_field(v: &serde_json::Value, key: &str) -> Option<Vec<f64>> {
    v.get(key)
        .and_then(|x| x.as_array())
        .map(|a| a.iter().filter_map(|e| e.as_f64()).collect())
}

fn recover_statistic(
    model: &crate::bellman::EmbeddingModel,
    omega: &[f64],
    kind: &str,
    params: Option<&str>,
) -> Result<serde_json::Value> {
    if let Some(err) = TestFunction::reject_unsupported(kind) {
        return Err(err);
    }
    let grid = model.grid();
    let d = grid.dim();
    let p = params_value(params)?;
    let mass: f64 = omega.iter().sum();
    // clipped-and-renormalized weight variant reported alongside the raw one
    let clipped: Vec<f64> = {
        let pos: Vec<f64> = omega.iter().map(|w| w.max(0.0)).collect();
        let s: f64 = pos.iter().sum();
        if s > 0.0 {
            pos.iter().map(|w| w / s).collect()
        } else {
            pos
        }
    };
    let pair = |g: &TestFunction| -> Result<serde_json::Value> {
        Ok(serde_json::json!({
            "statistic": kind,
            "params": p,
            "raw": stats_recovery::recover(omega, &grid, g)?,
            "clipped": stats_recovery::recover(&clipped, &grid, g)?,
            "mass": mass,
        }))
    };
    match kind {
        "mass" => pair(&TestFunction::Mass),
        "smooth_cdf" => {
            let bandwidth = f64_field(&p, "bandwidth", stats_recovery::default_bandwidth(&grid, 0));
            let threshold = vec_field(&p, "threshold")
                .ok_or_else(|| KedrlError::invalid("smooth_cdf needs params.threshold (length d)"))?;
            pair(&TestFunction::SmoothCdf { threshold, bandwidth })
        }
        "tail_sigmoid" => {
            let bandwidth = f64_field(&p, "bandwidth", stats_recovery::default_bandwidth(&grid, 0));
            let threshold = vec_field(&p, "threshold")
                .ok_or_else(|| KedrlError::invalid("tail_sigmoid needs params.threshold (length d)"))?;
            pair(&TestFunction::TailSigmoid { threshold, bandwidth })
        }
        "tanh_utility" => {
            let direction =
                vec_field(&p, "direction").ok_or_else(|| KedrlError::invalid("tanh_utility needs params.direction"))?;
            pair(&TestFunction::TanhUtility { direction })
        }
        "sigmoid_utility" => {
            let direction = vec_field(&p, "direction")
                .ok_or_else(|| KedrlError::invalid("sigmoid_utility needs params.direction"))?;
            pair(&TestFunction::SigmoidUtility { direction })
        }
        "smoothed_moment" => {
            let coordinate = f64_field(&p, "coordinate", 0.0) as usize;
            let order = f64_field(&p, "order", 1.0) as u8;
            let alpha = f64_field(&p, "alpha", 1.0);
            pair(&TestFunction::SmoothedMoment { coordinate, order, alpha })
        }
        "kernel_density" => {
            let center =
                vec_field(&p, "center").ok_or_else(|| KedrlError::invalid("kernel_density needs params.center"))?;
            pair(&TestFunction::KernelDensity { center, params: model.k_z_params })
        }
        "cdf_curve" => {
            let coordinate = f64_field(&p, "coordinate", 0.0) as usize;
            if coordinate >= d {
                return Err(KedrlError::invalid(format!("coordinate {coordinate} out of range for dim {d}")));
            }
            let bandwidth = f64_field(&p, "bandwidth", stats_recovery::default_bandwidth(&grid, coordinate));
            let col = grid.atoms.column(coordinate);
            let lo = col.iter().fold(f64::INFINITY, |a, &b| a.min(b)) - 3.0 * bandwidth;
            let hi = col.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) + 3.0 * bandwidth;
            let n_t = f64_field(&p, "points", 101.0) as usize;
            let ts: Vec<f64> = (0..n_t).map(|i| lo + (hi - lo) * i as f64 / (n_t.max(2) - 1) as f64).collect();
            let curve = stats_recovery::smooth_cdf_curve(omega, &grid, coordinate, &ts, bandwidth)?;
            Ok(serde_json::json!({
                "statistic": kind,
                "params": {"coordinate": coordinate, "bandwidth": bandwidth},
                "raw": curve.raw,
                "clipped": curve.clipped,
                "thresholds": curve.thresholds,
                "mass": mass,
            }))
        }
        other => Err(KedrlError::invalid(format!(
            "unknown statistic {other:?}; supported: mass, smooth_cdf, tail_sigmoid, \
             tanh_utility, sigmoid_utility, smoothed_moment, kernel_density, cdf_curve"
        ))),
    }
}

fn write_sweep_csv(path: &Path, rows: &[pipeline::SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| KedrlError::io(path.display().to_string(), std::io::Error::other(e.to_string())))?;
    w.write_record(["nu", "length_scale", "sigma", "lambda_reg", "lambda_fp", "risk_bellman", "risk_cme", "error"])
        .map_err(|e| KedrlError::format(path.display().to_string(), e.to_string()))?;
    for r in rows {
        w.write_record([
            r.nu.to_string(),
            r.length_scale.to_string(),
            r.sigma.to_string(),
            r.lambda_reg.to_string(),
            r.lambda_fp.to_string(),
            r.risk_bellman.map(|v| format!("{v:.10e}")).unwrap_or_default(),
            r.risk_cme.map(|v| format!("{v:.10e}")).unwrap_or_default(),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(|e| KedrlError::format(path.display().to_string(), e.to_string()))?;
    }
    w.flush().map_err(|e| KedrlError::io(path.display().to_string(), e))?;
    Ok(())
}
