//! Supervised dataset construction and persistence.
//!
//! Each record is one window of `W` DVL epochs with the nearest INS
//! velocities and the alignment label in degrees. Splits are made per
//! alignment configuration so that overlapping windows of one configuration
//! never straddle train and test.
//!
//! On disk a dataset is a directory holding `manifest.json` and one record
//! file per split (`train.bin`, `val.bin`, `test.bin`):
//!
//! ```text
//! "IDVLDS01" | u32 count | u32 W | count x [label(3) | dvl(W x 3) | ins(W x 3)]
//! ```
//!
//! All numbers little-endian, records as `f32`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dvl::{DvlSeries, DvlSpec};
use crate::error::{Error, Result};
use crate::imu::{simulate_ins, ImuSpec, InsVelocitySeries};
use crate::so3::{euler_to_matrix, EulerAngles, Vec3};
use crate::trajgen::{Trajectory, TrajectoryPreset};
use crate::wahba::PairedVelocityWindow;

pub const DATASET_MAGIC: &[u8; 8] = b"IDVLDS01";
const HEADER_LEN: usize = 16;

/// One training example.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// Roll, pitch, yaw in degrees.
    pub label_deg: [f32; 3],
    /// `W x 3` DVL-frame velocities, row-major.
    pub dvl: Vec<f32>,
    /// `W x 3` INS body-frame velocities, row-major.
    pub ins: Vec<f32>,
}

impl WindowSample {
    pub fn from_window(window: &PairedVelocityWindow, label: EulerAngles) -> Self {
        let flat = |vs: &[Vec3]| vs.iter().flat_map(|v| [v.x as f32, v.y as f32, v.z as f32]).collect();
        let d = label.to_degrees();
        Self {
            label_deg: [d[0] as f32, d[1] as f32, d[2] as f32],
            dvl: flat(&window.v_d),
            ins: flat(&window.v_b),
        }
    }

    pub fn window_len(&self) -> usize {
        self.dvl.len() / 3
    }

    pub fn label(&self) -> EulerAngles {
        EulerAngles::from_degrees(
            self.label_deg[0] as f64,
            self.label_deg[1] as f64,
            self.label_deg[2] as f64,
        )
    }

    /// The six input channels at time step `i`: DVL xyz then INS xyz.
    pub fn input_row(&self, i: usize) -> [f32; 6] {
        let (d, n) = (&self.dvl[3 * i..3 * i + 3], &self.ins[3 * i..3 * i + 3]);
        [d[0], d[1], d[2], n[0], n[1], n[2]]
    }

    fn label_key(&self) -> [u32; 3] {
        self.label_deg.map(f32::to_bits)
    }
}

/// Windows of `w` consecutive DVL epochs starting every `step` epochs, each
/// DVL epoch paired with the nearest INS epoch. `step = 1` gives all
/// `N - W + 1` overlapping windows.
pub fn make_windows_strided(
    dvl: &DvlSeries,
    ins: &InsVelocitySeries,
    w: usize,
    step: usize,
) -> Result<Vec<PairedVelocityWindow>> {
    if w == 0 || dvl.len() < w {
        return Err(Error::TooShort {
            len: dvl.len(),
            window: w,
        });
    }
    let step = step.max(1);
    let nearest: Vec<usize> = dvl.timestamps.iter().map(|&t| ins.nearest_index(t)).collect();
    Ok((0..=dvl.len() - w)
        .step_by(step)
        .map(|start| {
            let mut win = PairedVelocityWindow::with_capacity(w);
            for j in start..start + w {
                win.timestamps.push(dvl.timestamps[j]);
                win.v_d.push(dvl.v_d[j]);
                win.v_b.push(ins.v_b[nearest[j]]);
            }
            win
        })
        .collect())
}

pub fn make_windows(
    dvl: &DvlSeries,
    ins: &InsVelocitySeries,
    w: usize,
) -> Result<Vec<PairedVelocityWindow>> {
    make_windows_strided(dvl, ins, w, 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildOptions {
    pub window_len: usize,
    /// Start-index step between consecutive windows of one configuration.
    pub window_step: usize,
    /// Draw a fresh INS error realization for every alignment configuration
    /// instead of sharing one mechanization across all of them.
    pub ins_per_alignment: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            window_len: 125,
            window_step: 1,
            ins_per_alignment: true,
        }
    }
}

/// Simulates every alignment along `traj` and windows the result; every
/// window is labelled with its alignment.
pub fn augment_and_build<R: Rng + ?Sized>(
    traj: &Trajectory,
    alignments: &[EulerAngles],
    dvl_spec: &DvlSpec,
    imu_spec: &ImuSpec,
    opts: &BuildOptions,
    rng: &mut R,
) -> Result<Vec<WindowSample>> {
    if alignments.is_empty() {
        return Err(Error::InvalidArgument("no alignment configurations".into()));
    }
    let mut shared: Option<InsVelocitySeries> = None;
    let mut out = Vec::new();
    for a in alignments {
        let ins = match (&shared, opts.ins_per_alignment) {
            (Some(ins), false) => ins.clone(),
            _ => {
                let ins = simulate_ins(traj, imu_spec, rng)?;
                if !opts.ins_per_alignment {
                    shared = Some(ins.clone());
                }
                ins
            }
        };
        let dvl = crate::dvl::simulate_dvl(traj, &euler_to_matrix(*a), dvl_spec, rng)?;
        for win in make_windows_strided(&dvl, &ins, opts.window_len, opts.window_step)? {
            out.push(WindowSample::from_window(&win, *a));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    /// Configuration counts: train is floored, validation rounded, test takes
    /// the remainder (4913 -> 2947 / 983 / 983).
    pub fn partition(&self, n: usize) -> Result<(usize, usize, usize)> {
        let sum = self.train + self.val + self.test;
        if !(self.train > 0.0 && self.val > 0.0 && self.test > 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("bad split fractions {self:?}")));
        }
        let train = (self.train * n as f64).floor() as usize;
        let val = ((self.val * n as f64).round() as usize).min(n - train);
        Ok((train, val, n - train - val))
    }
}

/// Sample indices per split.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn label_key(e: &EulerAngles) -> [u32; 3] {
    e.to_degrees().map(|d| (d as f32).to_bits())
}

/// Distinct configuration keys in a seeded random order, with the
/// train / val / test boundaries.
fn shuffled_keys(mut keys: Vec<[u32; 3]>, fractions: SplitFractions, seed: u64) -> Result<(Vec<[u32; 3]>, usize, usize)> {
    keys.sort_unstable();
    keys.dedup();
    keys.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (n_train, n_val, _) = fractions.partition(keys.len())?;
    Ok((keys, n_train, n_train + n_val))
}

/// Configuration-level split: all windows sharing a label land in the same
/// split. Deterministic under `seed`.
pub fn split(samples: &[WindowSample], fractions: SplitFractions, seed: u64) -> Result<SplitIndices> {
    let mut groups: BTreeMap<[u32; 3], Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        groups.entry(s.label_key()).or_default().push(i);
    }
    let (keys, a, b) = shuffled_keys(groups.keys().copied().collect(), fractions, seed)?;
    let collect = |ks: &[[u32; 3]]| {
        let mut idx: Vec<usize> = ks.iter().flat_map(|k| groups[k].iter().copied()).collect();
        idx.sort_unstable();
        idx
    };
    Ok(SplitIndices {
        train: collect(&keys[..a]),
        val: collect(&keys[a..b]),
        test: collect(&keys[b..]),
    })
}

/// The same configuration split applied to the alignments themselves:
/// `[train, val, test]`, each in input order.
pub fn split_alignments(
    alignments: &[EulerAngles],
    fractions: SplitFractions,
    seed: u64,
) -> Result<[Vec<EulerAngles>; 3]> {
    let (keys, a, b) = shuffled_keys(alignments.iter().map(label_key).collect(), fractions, seed)?;
    let part = |ks: &[[u32; 3]]| -> Vec<EulerAngles> {
        let mut seen = std::collections::BTreeSet::new();
        alignments
            .iter()
            .filter(|e| ks.contains(&label_key(e)) && seen.insert(label_key(e)))
            .copied()
            .collect()
    };
    Ok([part(&keys[..a]), part(&keys[a..b]), part(&keys[b..])])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignmentMode {
    Grid,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub window_len: usize,
    pub window_step: usize,
    pub dvl_rate_hz: f64,
    /// Window records per split.
    pub counts: SplitCounts,
    /// Alignment configurations per split.
    pub configurations: SplitCounts,
    pub split_fractions: SplitFractions,
    pub split_granularity: String,
    pub alignment_mode: AlignmentMode,
    pub alignment_levels: usize,
    pub range_deg: f64,
    pub seed: u64,
    pub ins_per_alignment: bool,
    pub dvl: DvlSpec,
    pub imu: ImuSpec,
    pub trajectory: TrajectoryPreset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub train: Vec<WindowSample>,
    pub val: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
}

impl Dataset {
    pub fn splits(&self) -> [(&'static str, &[WindowSample]); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }
}

pub fn write_records<W: Write>(mut out: W, samples: &[WindowSample], window_len: usize) -> Result<()> {
    let io = |e| Error::io("<records>", e);
    out.write_all(DATASET_MAGIC).map_err(io)?;
    out.write_all(&(samples.len() as u32).to_le_bytes()).map_err(io)?;
    out.write_all(&(window_len as u32).to_le_bytes()).map_err(io)?;
    for s in samples {
        if s.dvl.len() != 3 * window_len || s.ins.len() != 3 * window_len {
            return Err(Error::ShapeMismatch(format!(
                "record has {} rows, dataset window is {window_len}",
                s.window_len()
            )));
        }
        for v in s.label_deg.iter().chain(&s.dvl).chain(&s.ins) {
            out.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    Ok(())
}

pub fn read_records(bytes: &[u8]) -> Result<(usize, Vec<WindowSample>)> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != DATASET_MAGIC {
        return Err(Error::CorruptManifest("bad magic bytes".into()));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let floats = 3 + 6 * w;
    let expected = HEADER_LEN + count * floats * 4;
    if bytes.len() != expected {
        return Err(Error::CorruptManifest(format!(
            "record file is {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let values: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let samples = values
        .chunks_exact(floats.max(1))
        .take(count)
        .map(|r| WindowSample {
            label_deg: [r[0], r[1], r[2]],
            dvl: r[3..3 + 3 * w].to_vec(),
            ins: r[3 + 3 * w..].to_vec(),
        })
        .collect();
    Ok((w, samples))
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let w = dataset.manifest.window_len;
    for (name, samples) in dataset.splits() {
        let path = dir.join(format!("{name}.bin"));
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        write_records(&mut out, samples, w)?;
        out.flush().map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&dataset.manifest)?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::CorruptManifest(format!("manifest.json: {e}")))?;
    let load = |name: &str, expected: usize| -> Result<Vec<WindowSample>> {
        let path = dir.join(format!("{name}.bin"));
        let mut bytes = Vec::new();
        fs::File::open(&path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(&path, e))?;
        let (w, samples) = read_records(&bytes)?;
        if w != manifest.window_len || samples.len() != expected {
            return Err(Error::CorruptManifest(format!(
                "{name}.bin holds {} records of W={w}, manifest says {expected} of W={}",
                samples.len(),
                manifest.window_len
            )));
        }
        Ok(samples)
    };
    let train = load("train", manifest.counts.train)?;
    let val = load("val", manifest.counts.val)?;
    let test = load("test", manifest.counts.test)?;
    Ok(Dataset {
        manifest,
        train,
        val,
        test,
    })
}

fn pick(samples: &[WindowSample], idx: &[usize]) -> Vec<WindowSample> {
    idx.iter().map(|&i| samples[i].clone()).collect()
}

fn distinct_labels(samples: &[WindowSample]) -> usize {
    let mut keys: Vec<_> = samples.iter().map(WindowSample::label_key).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// Everything needed to synthesize a dataset from scratch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetParams {
    pub trajectory: TrajectoryPreset,
    pub dvl: DvlSpec,
    pub imu: ImuSpec,
    pub alignment_mode: AlignmentMode,
    /// Grid levels per axis (grid mode) or cube root of the number of
    /// random draws (random mode draws `levels^3` configurations).
    pub alignment_levels: usize,
    pub range_deg: f64,
    pub build: BuildOptions,
    pub split_fractions: SplitFractions,
}

impl Default for DatasetParams {
    fn default() -> Self {
        Self {
            trajectory: TrajectoryPreset::turn(),
            dvl: DvlSpec::reference(),
            imu: ImuSpec::tactical(),
            alignment_mode: AlignmentMode::Grid,
            alignment_levels: 5,
            range_deg: 5.0,
            build: BuildOptions::default(),
            split_fractions: SplitFractions::default(),
        }
    }
}

impl DatasetParams {
    pub fn alignments<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<EulerAngles> {
        match self.alignment_mode {
            AlignmentMode::Grid => crate::so3::grid_alignments(self.alignment_levels, self.range_deg),
            AlignmentMode::Random => (0..self.alignment_levels.pow(3))
                .map(|_| crate::so3::sample_alignment(self.range_deg, rng))
                .collect(),
        }
    }
}

/// Builds, splits and packages a dataset. The alignment draw, the sensor
/// noise and the split all derive from `seed`.
pub fn generate_dataset(params: &DatasetParams, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let traj = params.trajectory.build();
    let alignments = params.alignments(&mut rng);
    let samples = augment_and_build(&traj, &alignments, &params.dvl, &params.imu, &params.build, &mut rng)?;
    let idx = split(&samples, params.split_fractions, seed)?;
    let (train, val, test) = (pick(&samples, &idx.train), pick(&samples, &idx.val), pick(&samples, &idx.test));
    let manifest = DatasetManifest {
        format: "IDVLDS01".into(),
        window_len: params.build.window_len,
        window_step: params.build.window_step,
        dvl_rate_hz: params.dvl.rate_hz,
        counts: SplitCounts {
            train: train.len(),
            val: val.len(),
            test: test.len(),
        },
        configurations: SplitCounts {
            train: distinct_labels(&train),
            val: distinct_labels(&val),
            test: distinct_labels(&test),
        },
        split_fractions: params.split_fractions,
        split_granularity: "configuration".into(),
        alignment_mode: params.alignment_mode,
        alignment_levels: params.alignment_levels,
        range_deg: params.range_deg,
        seed,
        ins_per_alignment: params.build.ins_per_alignment,
        dvl: params.dvl,
        imu: params.imu,
        trajectory: params.trajectory.clone(),
    };
    Ok(Dataset {
        manifest,
        train,
        val,
        test,
    })
}
