//! Command-line front end: evaluates the penalty, writes solution paths,
//! fits penalized regressions and runs the quantization experiments.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use foothill::penalty::{eval, grad, hess, ridge_gap, saddle};
use foothill::prox::solution_path;
use foothill::quantizer::{accuracy, binarize_snapshot, train, Dataset, Forward, PenaltyKind, QuantNet};
use foothill::regression::{consistency_experiment, fit, ConsistencySetup, DEFAULT_MAX_ITER, DEFAULT_TOL};
use foothill::{PenaltyParams, QuantReport, RegressionProblem, ShiftedPenalty, TrainConfig};
use serde::Serialize;
use tempfile::NamedTempFile;

/// Points and spread of the built-in two-Gaussian dataset.
const DEMO_POINTS: usize = 1000;
const DEMO_SEPARATION: f64 = 4.0;

#[derive(Debug, Parser)]
#[command(name = "foothill", version, about = "Foothill penalty toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ParamArgs {
    #[arg(long)]
    pub alpha: f64,
    #[arg(long)]
    pub beta: f64,
}

impl ParamArgs {
    fn params(&self) -> Result<PenaltyParams> {
        Ok(PenaltyParams::new(self.alpha, self.beta)?)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print value, gradient and curvature at a point as JSON.
    Eval {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, allow_hyphen_values = true)]
        x: f64,
    },
    /// Print the positive saddle point and the value there as JSON.
    Saddle {
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Print the integrated gap to x² on [-c, c] for beta = 2/alpha.
    RidgeGap {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        c: f64,
    },
    /// Write the univariate proximal solution path as CSV.
    Path {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        lambda: f64,
        #[arg(long, allow_hyphen_values = true)]
        zmin: f64,
        #[arg(long, allow_hyphen_values = true)]
        zmax: f64,
        #[arg(long, default_value_t = 201)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a penalized least-squares model to a CSV (`y,x1,...`) and write JSON.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
        max_iter: usize,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
    },
    /// Run the sqrt(n)-consistency simulation and write a JSON report.
    Consistency {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        theta: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        n_list: Vec<usize>,
        #[arg(long, default_value_t = 30)]
        reps: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 2.0)]
        beta: f64,
        #[arg(long, default_value_t = 1.0)]
        noise_sd: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a binarized network from a JSON training config and write a JSON report.
    Quantize {
        #[command(flatten)]
        run: QuantArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-epoch lambda, accuracy and concentration as CSV.
        #[arg(long)]
        epoch_csv: Option<PathBuf>,
    },
    /// Train with foothill, mod_l1 and mod_l2 from the same seed; one CSV row per penalty.
    ///
    /// The foothill row uses the config's alpha and beta.
    Compare {
        #[command(flatten)]
        run: QuantArgs,
        /// Output CSV; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct QuantArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Training data (`label,f1,...`); defaults to two Gaussian blobs seeded from the config.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Hidden layer widths; the first and last layers stay full precision.
    #[arg(long, value_delimiter = ',', default_value = "16,16")]
    pub hidden: Vec<usize>,
}

#[derive(Serialize)]
struct EvalOutput {
    alpha: f64,
    beta: f64,
    x: f64,
    value: f64,
    grad: f64,
    hess: f64,
}

#[derive(Serialize)]
struct RidgeGapOutput {
    alpha: f64,
    beta: f64,
    c: f64,
    gap: f64,
}

/// Parses `args` (program name first) and runs the command, printing to `stdout`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    execute(cli.command, stdout)
}

pub fn execute(command: Command, stdout: &mut dyn Write) -> Result<()> {
    match command {
        Command::Eval { params, x } => {
            let p = params.params()?;
            let out = EvalOutput {
                alpha: p.alpha(),
                beta: p.beta(),
                x,
                value: eval(&p, x)?,
                grad: grad(&p, x)?,
                hess: hess(&p, x)?,
            };
            print_json(stdout, &out)
        }
        Command::Saddle { params } => print_json(stdout, &saddle(&params.params()?)),
        Command::RidgeGap { alpha, c } => {
            let p = PenaltyParams::ridge_like(alpha)?;
            let gap = ridge_gap(&p, c)?;
            print_json(
                stdout,
                &RidgeGapOutput {
                    alpha: p.alpha(),
                    beta: p.beta(),
                    c,
                    gap,
                },
            )
        }
        Command::Path {
            params,
            lambda,
            zmin,
            zmax,
            n,
            out,
        } => {
            let path = solution_path(lambda, params.params()?, zmin, zmax, n)?;
            write_atomic(&out, |w| Ok(path.write_csv(w)?))
        }
        Command::Fit {
            data,
            lambda,
            params,
            out,
            max_iter,
            tol,
        } => {
            let file = File::open(&data).with_context(|| format!("opening {}", data.display()))?;
            let problem = RegressionProblem::from_csv(BufReader::new(file), lambda, params.params()?)
                .with_context(|| format!("reading {}", data.display()))?;
            let result = fit(&problem, max_iter, tol)?;
            write_json(&out, &result)
        }
        Command::Consistency {
            theta,
            n_list,
            reps,
            seed,
            lambda,
            alpha,
            beta,
            noise_sd,
            out,
        } => {
            let setup = ConsistencySetup {
                true_theta: theta,
                n_list,
                replicates: reps,
                lambda,
                params: PenaltyParams::new(alpha, beta)?,
                noise_sd,
                seed,
            };
            write_json(&out, &consistency_experiment(&setup)?)
        }
        Command::Quantize { run, out, epoch_csv } => {
            let cfg = read_config(&run.config)?;
            let (report, _) = train_once(&run, &cfg)?;
            if let Some(path) = epoch_csv {
                write_atomic(&path, |w| Ok(report.write_epoch_csv(w)?))?;
            }
            write_json(&out, &report)
        }
        Command::Compare { run, out } => {
            let base = read_config(&run.config)?;
            let penalties = [
                ShiftedPenalty::foothill(base.penalty.params),
                ShiftedPenalty::baseline(PenaltyKind::ModL1),
                ShiftedPenalty::baseline(PenaltyKind::ModL2),
            ];
            let mut rows = Vec::with_capacity(penalties.len());
            for penalty in penalties {
                let cfg = TrainConfig { penalty, ..base };
                rows.push(train_once(&run, &cfg)?);
            }
            match out {
                Some(path) => write_atomic(&path, |w| write_comparison(w, &rows)),
                None => write_comparison(stdout, &rows),
            }
        }
    }
}

fn read_config(path: &Path) -> Result<TrainConfig> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let cfg: TrainConfig =
        serde_json::from_reader(BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Trains a fresh network; returns the report and the snapshot accuracy.
fn train_once(args: &QuantArgs, cfg: &TrainConfig) -> Result<(QuantReport, f64)> {
    let data = match &args.data {
        Some(path) => {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            Dataset::from_csv(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?
        }
        None => Dataset::two_gaussians(DEMO_POINTS, DEMO_SEPARATION, cfg.seed)?,
    };
    let mut sizes = vec![data.n_features()];
    sizes.extend(&args.hidden);
    sizes.push(data.n_classes());
    if sizes.len() < 3 {
        bail!("at least one hidden layer is required");
    }
    let mut net = QuantNet::new(&sizes, cfg.seed)?;
    let report = train(&data, &mut net, cfg)?;
    let snapshot = accuracy(&binarize_snapshot(&net), &data, Forward::Latent);
    Ok((report, snapshot))
}

fn write_comparison(w: &mut dyn Write, rows: &[(QuantReport, f64)]) -> Result<()> {
    writeln!(
        w,
        "penalty,alpha,beta,final_loss,train_acc,latent_acc,quantized_acc,concentration"
    )?;
    for (report, snapshot) in rows {
        let pen = report.penalty;
        let (alpha, beta) = match pen.kind {
            PenaltyKind::Foothill => (pen.params.alpha().to_string(), pen.params.beta().to_string()),
            _ => (String::new(), String::new()),
        };
        writeln!(
            w,
            "{},{alpha},{beta},{},{},{},{},{}",
            pen.kind.name(),
            report.loss.last().copied().unwrap_or(f64::NAN),
            report.final_train_accuracy(),
            report.final_latent_accuracy(),
            snapshot,
            report.final_concentration(),
        )?;
    }
    Ok(())
}

fn print_json<T: Serialize>(stdout: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *stdout, value)?;
    writeln!(stdout)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

/// Writes through a temporary file in the destination directory, then renames it into place.
fn write_atomic<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp =
        NamedTempFile::new_in(dir).with_context(|| format!("creating temporary file in {}", dir.display()))?;
    body(tmp.as_file_mut())?;
    tmp.as_file_mut().flush()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
