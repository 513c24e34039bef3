//! `insdvl` command-line interface.
//!
//! Every subcommand starts from an [`ExperimentConfig`] (defaults, or the
//! JSON file given with `--config`), applies flag overrides, and writes CSV
//! to standard output. Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use insdvl::bench::{self, ExperimentConfig, Method};
use insdvl::dataset::{generate_dataset, save_dataset, AlignmentMode};
use insdvl::imu::{ImuGrade, ImuSpec};
use insdvl::pipeline::SensorRun;
use insdvl::regressor::{Model, ModelConfig};
use insdvl::so3::{euler_to_matrix, EulerAngles};
use insdvl::trajgen::{TrajectoryKind, TrajectoryPreset};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser, Debug)]
#[command(name = "insdvl", version, about = "INS/DVL alignment simulation and estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one run and write trajectory, DVL and INS CSVs.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long, required = true)]
        out: PathBuf,
        /// Alignment roll / pitch / yaw in degrees.
        #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [1.0, 2.0, 3.0])]
        alignment: Vec<f64>,
    },
    /// Generate and save a windowed training dataset.
    GenDataset {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true)]
        out: PathBuf,
        /// Window length in seconds (defaults to the first grid window).
        #[arg(long = "window-s")]
        window_s: Option<f64>,
    },
    /// SVD baseline over the window grid.
    Svd {
        #[command(flatten)]
        common: Common,
    },
    /// Train one network per window in the grid.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        training: TrainFlags,
        /// Directory receiving `model_w{W}.ckpt` and history CSVs.
        #[arg(long, required = true)]
        out: PathBuf,
    },
    /// Window comparison for the configured methods (svd, net).
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long = "model-dir")]
        model_dir: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
    },
    /// Minimum SVD RMSE over the window grid for each bias pair.
    BiasSweep {
        #[command(flatten)]
        common: Common,
        /// Accelerometer biases in mg.
        #[arg(long, value_delimiter = ',', required = true)]
        accel: Vec<f64>,
        /// Gyroscope biases in deg/h.
        #[arg(long, value_delimiter = ',', required = true)]
        gyro: Vec<f64>,
    },
    /// Train under one configuration, evaluate under another.
    DomainShift {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        training: TrainFlags,
        /// Evaluation config (JSON); defaults to the training config.
        #[arg(long = "eval-config")]
        eval_config: Option<PathBuf>,
        #[arg(long = "eval-traj")]
        eval_traj: Option<TrajectoryKind>,
        #[arg(long = "eval-imu")]
        eval_imu: Option<ImuGrade>,
        /// Reuse a checkpoint instead of training.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    traj: Option<TrajectoryKind>,
    /// Trajectory duration in seconds; drops longer grid windows unless
    /// `--window` is also given.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    imu: Option<ImuGrade>,
    /// Override accelerometer bias (mg).
    #[arg(long = "accel-bias")]
    accel_bias: Option<f64>,
    /// Override gyroscope bias (deg/h).
    #[arg(long = "gyro-bias")]
    gyro_bias: Option<f64>,
    /// Window grid in seconds.
    #[arg(long, value_delimiter = ',')]
    window: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long = "range-deg")]
    range_deg: Option<f64>,
    #[arg(long = "alignment-mode", value_parser = parse_mode)]
    alignment_mode: Option<AlignmentMode>,
    /// Also write the CSV into this directory.
    #[arg(long = "output-dir")]
    output_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainFlags {
    #[arg(long = "model-preset")]
    model_preset: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    #[arg(long = "max-steps")]
    max_steps: Option<usize>,
    /// Start-index step between training windows.
    #[arg(long = "window-step")]
    window_step: Option<usize>,
}

fn parse_mode(s: &str) -> Result<AlignmentMode, String> {
    match s {
        "grid" => Ok(AlignmentMode::Grid),
        "random" => Ok(AlignmentMode::Random),
        other => Err(format!("unknown alignment mode '{other}' (expected grid|random)")),
    }
}

type AnyResult<T> = Result<T, Box<dyn std::error::Error>>;

impl Common {
    fn resolve(&self) -> AnyResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(k) = self.traj {
            let duration = cfg.trajectory.duration_s;
            cfg.trajectory = TrajectoryPreset {
                duration_s: duration,
                ..TrajectoryPreset::of_kind(k)
            };
        }
        if let Some(d) = self.duration {
            cfg.trajectory.duration_s = d;
            if self.window.is_none() {
                cfg.windows_s.retain(|w| *w <= d);
            }
        }
        if let Some(g) = self.imu {
            cfg.imu = g;
        }
        if self.accel_bias.is_some() || self.gyro_bias.is_some() {
            let base = cfg.imu.spec();
            cfg.imu = ImuGrade::Custom(ImuSpec {
                accel_bias_mg: self.accel_bias.unwrap_or(base.accel_bias_mg),
                gyro_bias_deg_h: self.gyro_bias.unwrap_or(base.gyro_bias_deg_h),
                ..base
            });
        }
        if let Some(w) = &self.window {
            cfg.windows_s = w.clone();
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(l) = self.levels {
            cfg.alignment_levels = l;
        }
        if let Some(r) = self.range_deg {
            cfg.range_deg = r;
        }
        if let Some(m) = self.alignment_mode {
            cfg.alignment_mode = m;
        }
        if let Some(o) = &self.output_dir {
            cfg.output_dir = Some(o.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl TrainFlags {
    fn apply(&self, cfg: &mut ExperimentConfig) -> AnyResult<()> {
        if let Some(p) = &self.model_preset {
            cfg.model = ModelConfig::preset(p)?;
        }
        if let Some(e) = self.epochs {
            cfg.training.epochs = e;
        }
        if let Some(lr) = self.lr {
            cfg.training.learning_rate = lr;
        }
        if let Some(b) = self.batch_size {
            cfg.training.batch_size = b;
        }
        if let Some(m) = self.max_steps {
            cfg.training.max_steps = Some(m);
        }
        if let Some(s) = self.window_step {
            cfg.dataset.window_step = s;
        }
        cfg.training.seed = cfg.seed;
        cfg.validate()?;
        Ok(())
    }
}

/// Prints `text` and mirrors it into the configured output directory.
fn emit(cfg: &ExperimentConfig, name: &str, text: &str) -> AnyResult<()> {
    if let Some(dir) = &cfg.output_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(name), text)?;
    }
    std::io::stdout().write_all(text.as_bytes())?;
    Ok(())
}

fn write_file(path: &Path, f: impl FnOnce(&mut fs::File) -> std::io::Result<()>) -> AnyResult<()> {
    let mut file = fs::File::create(path)?;
    f(&mut file)?;
    Ok(())
}

fn run(cli: Cli) -> AnyResult<()> {
    match cli.command {
        Command::Simulate { common, out, alignment } => {
            let cfg = common.resolve()?;
            let a = EulerAngles::from_degrees(alignment[0], alignment[1], alignment[2]);
            let traj = cfg.trajectory.build();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let run = SensorRun::simulate(&traj, &euler_to_matrix(a), &cfg.dvl, &cfg.imu_spec(), &mut rng)?;
            fs::create_dir_all(&out)?;
            write_file(&out.join("trajectory.csv"), |f| traj.write_csv(f))?;
            write_file(&out.join("dvl.csv"), |f| run.dvl.write_csv(f))?;
            write_file(&out.join("ins.csv"), |f| run.ins.write_csv(f))?;
            let text = format!(
                "file,rows\ntrajectory.csv,{}\ndvl.csv,{}\nins.csv,{}\n",
                traj.len(),
                run.dvl.len(),
                run.ins.v_b.len()
            );
            emit(&cfg, "simulate.csv", &text)
        }
        Command::GenDataset { common, out, window_s } => {
            let cfg = common.resolve()?;
            let w = cfg.window_len(window_s.unwrap_or(cfg.windows_s[0]));
            let ds = generate_dataset(&cfg.dataset_params(w), cfg.seed)?;
            save_dataset(&ds, &out)?;
            let c = ds.manifest.counts;
            let k = ds.manifest.configurations;
            let text = format!(
                "split,windows,configurations\ntrain,{},{}\nval,{},{}\ntest,{},{}\n",
                c.train, k.train, c.val, k.val, c.test, k.test
            );
            emit(&cfg, "dataset.csv", &text)
        }
        Command::Svd { common } => {
            let mut cfg = common.resolve()?;
            cfg.methods = vec![Method::Svd];
            let reports = bench::run_window_comparison(&cfg)?;
            emit(&cfg, "svd.csv", &bench::reports_csv(&cfg, &reports))
        }
        Command::Train { common, training, out } => {
            let mut cfg = common.resolve()?;
            training.apply(&mut cfg)?;
            let mut rows = String::from("window_len,epoch,train_loss,val_loss\n");
            bench::train_window_models(&cfg, &out, &mut |w, r| {
                eprintln!("W={w} epoch {} train {:.4} val {:.4}", r.epoch, r.train_loss, r.val_loss);
                rows.push_str(&format!("{w},{},{:.6},{:.6}\n", r.epoch, r.train_loss, r.val_loss));
            })?;
            emit(&cfg, "train.csv", &format!("{}\n{rows}", cfg.csv_comment()))
        }
        Command::Eval { common, model_dir, methods } => {
            let mut cfg = common.resolve()?;
            if let Some(d) = model_dir {
                cfg.model_dir = Some(d);
            }
            cfg.methods = methods.unwrap_or_else(|| vec![Method::Svd, Method::Net]);
            cfg.validate()?;
            let reports = bench::run_window_comparison(&cfg)?;
            emit(&cfg, "eval.csv", &bench::reports_csv(&cfg, &reports))
        }
        Command::BiasSweep { common, accel, gyro } => {
            let cfg = common.resolve()?;
            let cells = bench::run_bias_sweep(&cfg, &accel, &gyro)?;
            let (ra, rg) = bench::bias_sweep_trend(&cells);
            eprintln!("spearman accel {ra:.3} gyro {rg:.3}");
            emit(&cfg, "bias_sweep.csv", &bench::bias_sweep_csv(&cfg, &cells))
        }
        Command::DomainShift {
            common,
            training,
            eval_config,
            eval_traj,
            eval_imu,
            model,
        } => {
            let mut train_cfg = common.resolve()?;
            training.apply(&mut train_cfg)?;
            let mut eval_cfg = match eval_config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => train_cfg.clone(),
            };
            eval_cfg.seed = train_cfg.seed;
            if let Some(k) = eval_traj {
                eval_cfg.trajectory = TrajectoryPreset {
                    duration_s: eval_cfg.trajectory.duration_s,
                    ..TrajectoryPreset::of_kind(k)
                };
            }
            if let Some(g) = eval_imu {
                eval_cfg.imu = g;
            }
            eval_cfg.validate()?;
            let model = model.map(|p| Model::load(&p)).transpose()?;
            let report = bench::run_domain_shift(&train_cfg, &eval_cfg, model)?;
            let mut text = bench::reports_csv(&train_cfg, &[report.in_domain, report.shifted]);
            text.push_str(&format!("# gap_deg,{:.6}\n", report.gap_deg));
            emit(&train_cfg, "domain_shift.csv", &text)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
