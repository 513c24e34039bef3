//! Experiment harness: window-size comparison, bias sweep and
//! cross-configuration domain shift.
//!
//! Every Monte-Carlo run draws from its own generator seeded by
//! `(seed, trial, alignment index)`, so results do not depend on execution
//! order and bias-sweep cells share their random draws.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{generate_dataset, split_alignments, AlignmentMode, BuildOptions, DatasetParams, SplitFractions, WindowSample};
use crate::dvl::DvlSpec;
use crate::error::{Error, Result};
use crate::imu::{ImuGrade, ImuSpec};
use crate::metrics::{aoe, max_geodesic_error, rmse, EvalReport};
use crate::pipeline::{window_samples, SensorRun};
use crate::regressor::{train_with_progress, EpochRecord, Model, ModelConfig, TrainConfig};
use crate::so3::{euler_to_matrix, matrix_to_euler_saturating, EulerAngles};
use crate::trajgen::{Trajectory, TrajectoryPreset};
use crate::wahba::svd_align;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Svd,
    Net,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Svd => "svd",
            Method::Net => "net",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "svd" => Ok(Method::Svd),
            "net" => Ok(Method::Net),
            other => Err(format!("unknown method '{other}' (expected svd|net)")),
        }
    }
}

/// How training windows are cut and split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSettings {
    pub window_step: usize,
    pub ins_per_alignment: bool,
    pub split_fractions: SplitFractions,
}

impl Default for DatasetSettings {
    fn default() -> Self {
        Self {
            window_step: 5,
            ins_per_alignment: true,
            split_fractions: SplitFractions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub trajectory: TrajectoryPreset,
    pub dvl: DvlSpec,
    pub imu: ImuGrade,
    /// Alignment configurations: a `levels^3` grid or `levels^3` uniform draws
    /// over `[0, range_deg]` per axis. Evaluation uses the held-out test split.
    pub alignment_mode: AlignmentMode,
    pub alignment_levels: usize,
    pub range_deg: f64,
    pub windows_s: Vec<f64>,
    pub methods: Vec<Method>,
    pub trials: usize,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Directory holding `model_w{W}.ckpt` checkpoints for the network rows.
    pub model_dir: Option<PathBuf>,
    pub dataset: DatasetSettings,
    pub model: ModelConfig,
    pub training: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            trajectory: TrajectoryPreset::turn(),
            dvl: DvlSpec::reference(),
            imu: ImuGrade::Navigation,
            alignment_mode: AlignmentMode::Grid,
            alignment_levels: 5,
            range_deg: 5.0,
            windows_s: vec![5.0, 15.0, 25.0, 50.0, 75.0, 100.0],
            methods: vec![Method::Svd],
            trials: 20,
            seed: 0,
            output_dir: None,
            model_dir: None,
            dataset: DatasetSettings::default(),
            model: ModelConfig::desk(),
            training: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if self.alignment_levels == 0 || !(self.range_deg >= 0.0) {
            return bad("alignment grid must be non-empty with a non-negative range".into());
        }
        if self.windows_s.is_empty() {
            return bad("window grid is empty".into());
        }
        let duration = self.trajectory.duration_s;
        if let Some(w) = self.windows_s.iter().find(|w| !(**w > 0.0 && **w <= duration + 1e-9)) {
            return bad(format!("window {w} s outside (0, {duration}] s"));
        }
        if self.methods.is_empty() {
            return bad("method set is empty".into());
        }
        self.dvl.validate()?;
        self.imu.spec().validate()?;
        self.model.validate()
    }

    pub fn imu_spec(&self) -> ImuSpec {
        self.imu.spec()
    }

    /// DVL epochs per window of `window_s` seconds.
    pub fn window_len(&self, window_s: f64) -> usize {
        window_samples(window_s, self.dvl.rate_hz)
    }

    pub fn dataset_params(&self, window_len: usize) -> DatasetParams {
        DatasetParams {
            trajectory: self.trajectory.clone(),
            dvl: self.dvl,
            imu: self.imu_spec(),
            alignment_mode: self.alignment_mode,
            alignment_levels: self.alignment_levels,
            range_deg: self.range_deg,
            build: BuildOptions {
                window_len,
                window_step: self.dataset.window_step,
                ins_per_alignment: self.dataset.ins_per_alignment,
            },
            split_fractions: self.dataset.split_fractions,
        }
    }

    /// Held-out alignment configurations, identical to the test split of
    /// any dataset generated from this config.
    pub fn test_alignments(&self) -> Result<Vec<EulerAngles>> {
        let params = self.dataset_params(1);
        let all = params.alignments(&mut ChaCha8Rng::seed_from_u64(self.seed));
        let [_, _, test] = split_alignments(&all, self.dataset.split_fractions, self.seed)?;
        Ok(test)
    }

    /// Comment line carrying the resolved config.
    pub fn csv_comment(&self) -> String {
        format!("# config: {}", self.to_json())
    }
}

/// SplitMix64 finalizer over a sequence of words.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut x = base;
    for p in std::iter::once(&0x5851_f42d_4c95_7f2d).chain(parts) {
        x = x.wrapping_add(*p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        x ^= x >> 31;
    }
    x
}

/// Order-preserving map spread over the available cores.
pub fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync) -> Vec<U> {
    #[cfg(not(target_arch = "wasm32"))]
    {
        let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len());
        if threads > 1 {
            let chunk = items.len().div_ceil(threads);
            return std::thread::scope(|s| {
                let handles: Vec<_> = items
                    .chunks(chunk)
                    .map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<U>>()))
                    .collect();
                handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
            });
        }
    }
    items.iter().map(f).collect()
}

fn checkpoint_path(dir: &Path, window_len: usize) -> PathBuf {
    dir.join(format!("model_w{window_len}.ckpt"))
}

/// Simulates one Monte-Carlo run, truncating the trajectory after the
/// longest window so no unused INS propagation is paid for.
fn simulate_run(
    traj: &Trajectory,
    cfg: &ExperimentConfig,
    imu: &ImuSpec,
    alignment: EulerAngles,
    seed: u64,
) -> Result<SensorRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SensorRun::simulate(traj, &euler_to_matrix(alignment), &cfg.dvl, imu, &mut rng)
}

fn truncated(traj: &Trajectory, until_s: f64) -> Trajectory {
    let keep = traj.samples.iter().take_while(|s| s.t <= until_s + 1e-9).count();
    Trajectory {
        samples: traj.samples[..keep].to_vec(),
        rate_hz: traj.rate_hz,
    }
}

/// Per-window estimates for every (trial, alignment) run, in run order.
struct WindowEstimates {
    labels: Vec<EulerAngles>,
    /// `estimates[method][window][run]`.
    estimates: BTreeMap<Method, Vec<Vec<EulerAngles>>>,
}

fn estimate_windows(
    cfg: &ExperimentConfig,
    imu: &ImuSpec,
    alignments: &[EulerAngles],
    methods: &[Method],
) -> Result<WindowEstimates> {
    cfg.validate()?;
    if alignments.is_empty() {
        return Err(Error::InvalidArgument("no test alignments".into()));
    }
    let max_w = cfg.windows_s.iter().copied().fold(0.0, f64::max);
    let traj = truncated(&cfg.trajectory.build(), max_w + 1.0);
    let lens: Vec<usize> = cfg.windows_s.iter().map(|w| cfg.window_len(*w)).collect();

    let models: Vec<Model> = if methods.contains(&Method::Net) {
        let dir = cfg.model_dir.as_deref();
        lens.iter()
            .map(|&w| match dir.map(|d| checkpoint_path(d, w)) {
                Some(p) if p.exists() => Model::load(&p),
                _ => Err(Error::MissingModel(w)),
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let jobs: Vec<(usize, usize)> = (0..cfg.trials).flat_map(|t| (0..alignments.len()).map(move |a| (t, a))).collect();
    type RunOut = Result<(Vec<EulerAngles>, Vec<WindowSample>)>;
    let runs: Vec<RunOut> = par_map(&jobs, |&(t, a)| {
        let seed = derive_seed(cfg.seed, &[t as u64, a as u64]);
        let run = simulate_run(&traj, cfg, imu, alignments[a], seed)?;
        let mut svd = Vec::new();
        let mut windows = Vec::new();
        for &w in &lens {
            let pw = run.paired(0, w)?;
            if methods.contains(&Method::Svd) {
                svd.push(matrix_to_euler_saturating(&svd_align(&pw)?.rotation));
            }
            if !models.is_empty() {
                windows.push(WindowSample::from_window(&pw, alignments[a]));
            }
        }
        Ok((svd, windows))
    });

    let n_runs = jobs.len();
    let mut estimates = BTreeMap::new();
    let mut svd = vec![Vec::with_capacity(n_runs); lens.len()];
    let mut per_window: Vec<Vec<WindowSample>> = vec![Vec::with_capacity(n_runs); lens.len()];
    for run in runs {
        let (s, w) = run?;
        for (i, e) in s.into_iter().enumerate() {
            svd[i].push(e);
        }
        for (i, win) in w.into_iter().enumerate() {
            per_window[i].push(win);
        }
    }
    if methods.contains(&Method::Svd) {
        estimates.insert(Method::Svd, svd);
    }
    if !models.is_empty() {
        let net = models
            .iter()
            .zip(&per_window)
            .map(|(m, ws)| m.predict(ws))
            .collect::<Result<Vec<_>>>()?;
        estimates.insert(Method::Net, net);
    }
    let labels = jobs.iter().map(|&(_, a)| alignments[a]).collect();
    Ok(WindowEstimates { labels, estimates })
}

/// Trial-averaged report: RMSE and AOE are computed per trial over the
/// alignments, then averaged; the std is across trials; max is global.
fn monte_carlo_report(
    method: &str,
    window_s: f64,
    labels: &[EulerAngles],
    preds: &[EulerAngles],
    per_trial: usize,
) -> Result<EvalReport> {
    let mut rmses = Vec::new();
    let mut aoes = Vec::new();
    for (l, p) in labels.chunks(per_trial).zip(preds.chunks(per_trial)) {
        rmses.push(rmse(l, p)?);
        let lr: Vec<_> = l.iter().map(|e| euler_to_matrix(*e)).collect();
        let pr: Vec<_> = p.iter().map(|e| euler_to_matrix(*e)).collect();
        aoes.push(aoe(&lr, &pr)?);
    }
    let n = rmses.len() as f64;
    let mean = rmses.iter().sum::<f64>() / n;
    let std = if rmses.len() > 1 {
        (rmses.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let lr: Vec<_> = labels.iter().map(|e| euler_to_matrix(*e)).collect();
    let pr: Vec<_> = preds.iter().map(|e| euler_to_matrix(*e)).collect();
    Ok(EvalReport {
        method: method.to_string(),
        window_s,
        rmse_deg: mean,
        rmse_std_deg: std,
        aoe_deg: aoes.iter().sum::<f64>() / n,
        max_err_deg: max_geodesic_error(&lr, &pr)?,
        n_samples: per_trial,
        n_trials: rmses.len(),
    })
}

/// One report per (method, window), methods in config order.
pub fn run_window_comparison(cfg: &ExperimentConfig) -> Result<Vec<EvalReport>> {
    let alignments = cfg.test_alignments()?;
    let est = estimate_windows(cfg, &cfg.imu_spec(), &alignments, &cfg.methods)?;
    let mut out = Vec::new();
    for m in &cfg.methods {
        for (i, &w) in cfg.windows_s.iter().enumerate() {
            out.push(monte_carlo_report(m.name(), w, &est.labels, &est.estimates[m][i], alignments.len())?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasCell {
    pub accel_mg: f64,
    pub gyro_deg_h: f64,
    pub min_rmse_deg: f64,
    pub best_window_s: f64,
}

pub const BIAS_SWEEP_HEADER: &str = "accel_mg,gyro_deg_h,min_rmse_deg,best_window_s";

impl BiasCell {
    pub fn csv_row(&self) -> String {
        format!("{},{},{:.6},{}", self.accel_mg, self.gyro_deg_h, self.min_rmse_deg, self.best_window_s)
    }
}

/// SVD min-over-windows RMSE for every (accel, gyro) bias pair. Noise
/// densities and sign policy come from the configured grade.
pub fn run_bias_sweep(cfg: &ExperimentConfig, accel_mg: &[f64], gyro_deg_h: &[f64]) -> Result<Vec<BiasCell>> {
    if accel_mg.is_empty() || gyro_deg_h.is_empty() {
        return Err(Error::InvalidArgument("bias grids must be non-empty".into()));
    }
    let alignments = cfg.test_alignments()?;
    let base = cfg.imu_spec();
    let mut out = Vec::with_capacity(accel_mg.len() * gyro_deg_h.len());
    for &a in accel_mg {
        for &g in gyro_deg_h {
            let imu = ImuSpec {
                accel_bias_mg: a,
                gyro_bias_deg_h: g,
                ..base
            };
            imu.validate()?;
            let est = estimate_windows(cfg, &imu, &alignments, &[Method::Svd])?;
            let mut best = (f64::INFINITY, 0.0);
            for (i, &w) in cfg.windows_s.iter().enumerate() {
                let r = monte_carlo_report("svd", w, &est.labels, &est.estimates[&Method::Svd][i], alignments.len())?;
                if r.rmse_deg < best.0 {
                    best = (r.rmse_deg, w);
                }
            }
            out.push(BiasCell {
                accel_mg: a,
                gyro_deg_h: g,
                min_rmse_deg: best.0,
                best_window_s: best.1,
            });
        }
    }
    Ok(out)
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Spearman correlation of the cell value with each bias axis after
/// averaging over the other axis: `(rho_accel, rho_gyro)`.
pub fn bias_sweep_trend(cells: &[BiasCell]) -> (f64, f64) {
    let marginal = |key: fn(&BiasCell) -> f64| {
        let mut groups: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
        for c in cells {
            let e = groups.entry(key(c).to_bits()).or_insert((key(c), 0.0, 0));
            e.1 += c.min_rmse_deg;
            e.2 += 1;
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = groups.values().map(|(x, s, n)| (*x, s / *n as f64)).unzip();
        spearman(&xs, &ys)
    };
    (marginal(|c| c.accel_mg), marginal(|c| c.gyro_deg_h))
}

/// Trains a network for windows of `window_len` epochs on the dataset the
/// config describes.
pub fn train_model(
    cfg: &ExperimentConfig,
    window_len: usize,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<(Model, Vec<EpochRecord>)> {
    cfg.validate()?;
    let ds = generate_dataset(&cfg.dataset_params(window_len), cfg.seed)?;
    let model_cfg = ModelConfig {
        window_len,
        ..cfg.model.clone()
    };
    let model = Model::new(&model_cfg, derive_seed(cfg.seed, &[window_len as u64]))?;
    let out = train_with_progress(model, &ds.train, &ds.val, &cfg.training, progress)?;
    Ok((out.model, out.history))
}

/// Trains (or reuses) one checkpoint per window in the grid and writes them
/// to `dir`. Returns the checkpoint paths.
pub fn train_window_models(
    cfg: &ExperimentConfig,
    dir: &Path,
    progress: &mut dyn FnMut(usize, &EpochRecord),
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for &w in &cfg.windows_s {
        let len = cfg.window_len(w);
        let (model, history) = train_model(cfg, len, &mut |r| progress(len, r))?;
        let path = checkpoint_path(dir, len);
        model.save(&path)?;
        crate::regressor::write_history_csv(&history, &dir.join(format!("history_w{len}.csv")))?;
        paths.push(path);
    }
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainShiftReport {
    pub in_domain: EvalReport,
    pub shifted: EvalReport,
    /// `shifted.rmse - in_domain.rmse` in degrees.
    pub gap_deg: f64,
}

fn score_test_split(model: &Model, cfg: &ExperimentConfig, method: &str) -> Result<EvalReport> {
    let w = model.config().window_len;
    let ds = generate_dataset(&cfg.dataset_params(w), cfg.seed)?;
    let preds = model.predict(&ds.test)?;
    let labels: Vec<EulerAngles> = ds.test.iter().map(WindowSample::label).collect();
    EvalReport::from_predictions(method, w as f64 / cfg.dvl.rate_hz, &labels, &preds)
}

/// Trains under `train_cfg` (unless a model is supplied) and scores the
/// held-out windows generated under both configs. Uses the first window of
/// the training config's grid.
pub fn run_domain_shift(
    train_cfg: &ExperimentConfig,
    eval_cfg: &ExperimentConfig,
    model: Option<Model>,
) -> Result<DomainShiftReport> {
    train_cfg.validate()?;
    eval_cfg.validate()?;
    let model = match model {
        Some(m) => m,
        None => {
            let w = train_cfg.window_len(train_cfg.windows_s[0]);
            train_model(train_cfg, w, &mut |_| {})?.0
        }
    };
    let in_domain = score_test_split(&model, train_cfg, "net-in-domain")?;
    let shifted = score_test_split(&model, eval_cfg, "net-shifted")?;
    Ok(DomainShiftReport {
        gap_deg: shifted.rmse_deg - in_domain.rmse_deg,
        in_domain,
        shifted,
    })
}

/// Report table with a leading config comment.
pub fn reports_csv(cfg: &ExperimentConfig, reports: &[EvalReport]) -> String {
    let mut s = cfg.csv_comment();
    s.push('\n');
    s.push_str(crate::metrics::REPORT_CSV_HEADER);
    s.push('\n');
    for r in reports {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}

pub fn bias_sweep_csv(cfg: &ExperimentConfig, cells: &[BiasCell]) -> String {
    let mut s = cfg.csv_comment();
    s.push('\n');
    s.push_str(BIAS_SWEEP_HEADER);
    s.push('\n');
    for c in cells {
        let _ = writeln!(s, "{}", c.csv_row());
    }
    s
}
