use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::warn;

use soap_core::data::gen_gaussians;
use soap_core::harness::{
    batch_size_sweep, consistency_report, run_experiment, DataSource, ExperimentConfig,
};
use soap_core::objective::gradcheck;
use soap_core::record::read_curve;
use soap_core::{Dataset, Error, Result, ScoreModel};

#[derive(Parser)]
#[command(
    name = "soap",
    version,
    about = "Average precision optimization experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one method over every configured seed.
    Run(ConfigArgs),
    /// Repeat `run` for several general batch sizes.
    SweepBatch {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated batch sizes.
        #[arg(long, default_value = "8,16,32,64")]
        sizes: String,
    },
    /// Compare the exact objective gradient with finite differences.
    Gradcheck {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        /// Use at most this many training rows.
        #[arg(long, default_value_t = 200)]
        max_rows: usize,
    },
    /// Write a synthetic Gaussian dataset as CSV.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a run directory or a single curve.csv.
    Report { path: PathBuf },
}

/// Config file plus per-key overrides; each flag sets the config key of the
/// same name with dashes replaced by underscores.
#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Generic override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    data_csv: Option<String>,
    #[arg(long)]
    gen_n: Option<String>,
    #[arg(long)]
    gen_d: Option<String>,
    #[arg(long)]
    gen_ratio: Option<String>,
    #[arg(long)]
    gen_sep: Option<String>,
    #[arg(long)]
    data_seed: Option<String>,
    #[arg(long)]
    keep: Option<String>,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    squash: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    surrogate: Option<String>,
    #[arg(long)]
    margin: Option<String>,
    #[arg(long)]
    scale: Option<String>,
    #[arg(long)]
    focal_gamma: Option<String>,
    #[arg(long)]
    cb_beta: Option<String>,
    #[arg(long)]
    iters: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    batch_pos: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    u0: Option<String>,
    #[arg(long)]
    eta1: Option<String>,
    #[arg(long)]
    eta2: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    eval_every: Option<String>,
    #[arg(long)]
    warm_start: Option<String>,
    #[arg(long)]
    nested_batches: Option<String>,
    #[arg(long)]
    baseline_update: Option<String>,
    #[arg(long)]
    baseline_alpha: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
}

impl ConfigArgs {
    fn flags(&self) -> [(&'static str, &Option<String>); 34] {
        [
            ("data_csv", &self.data_csv),
            ("gen_n", &self.gen_n),
            ("gen_d", &self.gen_d),
            ("gen_ratio", &self.gen_ratio),
            ("gen_sep", &self.gen_sep),
            ("data_seed", &self.data_seed),
            ("keep", &self.keep),
            ("split", &self.split),
            ("arch", &self.arch),
            ("hidden", &self.hidden),
            ("squash", &self.squash),
            ("method", &self.method),
            ("surrogate", &self.surrogate),
            ("margin", &self.margin),
            ("scale", &self.scale),
            ("focal_gamma", &self.focal_gamma),
            ("cb_beta", &self.cb_beta),
            ("iters", &self.iters),
            ("batch_size", &self.batch_size),
            ("batch_pos", &self.batch_pos),
            ("alpha", &self.alpha),
            ("gamma", &self.gamma),
            ("u0", &self.u0),
            ("eta1", &self.eta1),
            ("eta2", &self.eta2),
            ("epsilon", &self.epsilon),
            ("schedule", &self.schedule),
            ("seeds", &self.seeds),
            ("eval_every", &self.eval_every),
            ("warm_start", &self.warm_start),
            ("nested_batches", &self.nested_batches),
            ("baseline_update", &self.baseline_update),
            ("baseline_alpha", &self.baseline_alpha),
            ("out_dir", &self.out_dir),
        ]
    }

    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::default();
        if let Some(path) = &self.config {
            config.apply_file(path)?;
        }
        for pair in &self.set {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got `{pair}`")))?;
            config.set(k.trim(), v)?;
        }
        for (key, value) in self.flags() {
            if let Some(v) = value {
                config.set(key, v)?;
            }
        }
        Ok(config)
    }
}

fn parse_sizes(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Usage(format!("invalid batch size `{s}`")))
        })
        .collect()
}

fn cmd_run(args: &ConfigArgs) -> Result<()> {
    let config = args.resolve()?;
    let summary = run_experiment(&config)?;
    print!("{}", summary.summary_csv());
    println!(
        "{}: mean test AP {:.4} +/- {:.4} over {} seeds ({} failed)",
        summary.method,
        summary.mean_test_ap(),
        summary.std_test_ap(),
        summary.runs.len(),
        summary.failures.len()
    );
    Ok(())
}

fn cmd_sweep(args: &ConfigArgs, sizes: &str) -> Result<()> {
    let config = args.resolve()?;
    let table = batch_size_sweep(&config, &parse_sizes(sizes)?)?;
    print!("{}", table.to_csv());
    for (seed, spread) in table.spread_per_seed() {
        println!("seed {seed}: spread {spread:.4}");
    }
    Ok(())
}

fn cmd_gradcheck(args: &ConfigArgs, step: f64, tol: f64, max_rows: usize) -> Result<()> {
    let config = args.resolve()?;
    let [train, _, _] = config.prepare_data()?;
    let data = cap_rows(&train, max_rows)?;
    let seed = config.seeds.first().copied().unwrap_or(0);
    let arch = config.arch.clone().with_input_dim(data.dim());
    let model = ScoreModel::init(arch, config.squash, seed)?;
    // Zero-initialized linear models sit at a symmetric point; perturb them.
    let model = model.with_params(
        model
            .params()
            .iter()
            .enumerate()
            .map(|(k, w)| w + 0.1 * ((k as f64) * 0.7).sin())
            .collect(),
    )?;
    let check = gradcheck(&model, &config.surrogate, &data, step)?;
    println!(
        "surrogate={} {} params={} rel_error={:.3e} tol={tol:.1e}",
        config.surrogate,
        model.arch(),
        check.analytic.len(),
        check.rel_error
    );
    if check.rel_error < tol {
        Ok(())
    } else {
        Err(Error::RunFailed(format!(
            "relative error {:.3e} exceeds {tol:.1e}",
            check.rel_error
        )))
    }
}

/// Keeps all positives that fit and fills the rest with the first negatives.
fn cap_rows(data: &Dataset, max_rows: usize) -> Result<Dataset> {
    if data.len() <= max_rows {
        return Ok(data.clone());
    }
    if max_rows < 2 {
        return Err(Error::Usage("--max-rows must be at least 2".into()));
    }
    let n_pos = data.n_pos().min(max_rows / 2).max(1);
    let mut idx: Vec<usize> = data.positives()[..n_pos].to_vec();
    idx.extend(
        (0..data.len())
            .filter(|&i| !data.is_positive(i))
            .take(max_rows - n_pos),
    );
    idx.sort_unstable();
    Ok(data.subset(&idx))
}

fn cmd_gen_data(args: &ConfigArgs, out: &Path) -> Result<()> {
    let config = args.resolve()?;
    let DataSource::Gaussians { n, d, ratio, sep } = config.data else {
        return Err(Error::Usage(
            "gen-data needs generator parameters, not data_csv".into(),
        ));
    };
    let data = gen_gaussians(n, d, ratio, sep, config.data_seed)?;
    data.save_csv(out)?;
    println!(
        "wrote {} rows ({} positive) to {}",
        data.len(),
        data.n_pos(),
        out.display()
    );
    Ok(())
}

fn cmd_report(path: &Path) -> Result<()> {
    if path.is_file() {
        println!("{}", consistency_line(path)?);
        return Ok(());
    }
    let aggregate = path.join("aggregate.csv");
    if !aggregate.is_file() {
        return Err(Error::Usage(format!(
            "{} is neither a curve file nor a run directory",
            path.display()
        )));
    }
    let text = std::fs::read_to_string(&aggregate).map_err(|e| Error::Io {
        path: aggregate.clone(),
        source: e,
    })?;
    print!("{text}");
    let mut seeds: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("curve.csv").is_file())
        .collect();
    seeds.sort();
    for dir in seeds {
        match consistency_line(&dir.join("curve.csv")) {
            Ok(line) => println!("{line}"),
            Err(e) => warn!("{}: {e}", dir.display()),
        }
    }
    Ok(())
}

fn consistency_line(curve: &Path) -> Result<String> {
    let records = read_curve(curve)?;
    let rep = consistency_report(&records)?;
    let fmt = |c: Option<f64>| c.map_or("undefined".to_string(), |v| format!("{v:.4}"));
    let mut line = String::new();
    let _ = write!(
        line,
        "{}: records={} spearman={} pearson={}",
        curve.display(),
        rep.n,
        fmt(rep.spearman),
        fmt(rep.pearson)
    );
    if let Some(last) = records.last() {
        let _ = write!(line, " final_train_ap={:.4}", last.train_ap);
    }
    Ok(line)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::SweepBatch { config, sizes } => cmd_sweep(config, sizes),
        Command::Gradcheck {
            config,
            step,
            tol,
            max_rows,
        } => cmd_gradcheck(config, *step, *tol, *max_rows),
        Command::GenData { config, out } => cmd_gen_data(config, out),
        Command::Report { path } => cmd_report(path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
