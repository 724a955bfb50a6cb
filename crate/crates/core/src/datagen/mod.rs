//! Synthetic datasets of solved planning problems.
//!
//! A dataset `<stem>` is two files: `<stem>.jsonl` with one
//! [`TrajectoryRecord`] per line and `<stem>.manifest.json` with a
//! [`DatasetManifest`]. Every double is written with 17 significant digits.


use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::neural::{samples_from_solution, Sample};
use crate::planner::{
    cold_start, dense_check, plan, DecisionVector, PlanRequest, PlanResult, CHECK_FACTOR, DEFAULT_DENSITY,
    DEFAULT_LAMBDA,
};
use crate::sqp::SqpSettings;
use crate::trajectory::{RobotLimits, SplineTrajectory, WaypointPath};
use crate::{json, Error, Result};

pub const DATASET_VERSION: u32 = 1;
/// Fraction of each joint's position limit that sampled waypoints stay within.
pub const SAMPLE_RANGE: f64 = 0.9;
/// Generation aborts when fewer than this fraction of solves converge.
pub const MIN_CONVERGENCE_RATE: f64 = 0.5;
/// Feasibility slack accepted when loading records.
pub const LOAD_TOLERANCE: f64 = 1e-6;

/// `I` waypoints drawn i.i.d. uniform in `±0.9·q_max` per joint.
pub fn sample_path(limits: &RobotLimits, waypoints: usize, rng: &mut impl Rng) -> Result<WaypointPath> {
    if waypoints < 2 {
        return Err(Error::param("a path needs at least two waypoints"));
    }
    let rows = (0..waypoints)
        .map(|_| {
            limits
                .q_max()
                .iter()
                .map(|q| {
                    let r = SAMPLE_RANGE * q;
                    rng.random_range(-r..=r)
                })
                .collect()
        })
        .collect();
    WaypointPath::new(rows)
}

/// One solved problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    /// Position in the generation sequence, discarded attempts included.
    pub index: usize,
    pub joints: usize,
    pub waypoints: usize,
    pub path: WaypointPath,
    pub lambda: f64,
    /// Ground truth: `I + 10` knots and `K × (I + 4)` control points.
    pub trajectory: SplineTrajectory,
    pub objective: f64,
    pub jerk: f64,
    pub duration: f64,
    pub iterations: usize,
}

impl TrajectoryRecord {
    /// One training sample per joint.
    pub fn samples(&self) -> Result<Vec<Sample>> {
        samples_from_solution(&self.path, &self.trajectory)
    }

    /// Shape checks and the dense feasibility audit, with `LOAD_TOLERANCE`
    /// of slack.
    pub fn validate(&self, limits: &RobotLimits) -> Result<()> {
        let (ii, k) = (self.path.num_waypoints(), self.path.num_joints());
        if ii != self.waypoints || k != self.joints || k != limits.num_joints() {
            return Err(Error::param("dimension fields disagree with the stored path"));
        }
        if self.trajectory.num_joints() != k || self.trajectory.knots().num_control_points() != ii + 4 {
            return Err(Error::param("trajectory shape does not match the path"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::param("lambda outside [0, 1]"));
        }
        let audit = dense_check(&self.trajectory, &self.path, limits, CHECK_FACTOR * DEFAULT_DENSITY)?;
        if audit.min_kinematic_residual < -LOAD_TOLERANCE {
            return Err(Error::param(format!(
                "kinematic limit exceeded by {:.3e} (joint {}, order {}, t = {})",
                -audit.min_kinematic_residual, audit.worst.0, audit.worst.1, audit.worst.2
            )));
        }
        if audit.max_boundary_residual > LOAD_TOLERANCE || audit.max_interpolation_residual > LOAD_TOLERANCE {
            return Err(Error::param(format!(
                "equality residuals {:.3e} (boundary), {:.3e} (interpolation)",
                audit.max_boundary_residual, audit.max_interpolation_residual
            )));
        }
        let objective = self.trajectory.scalar_objective(self.lambda)?;
        if (objective - self.objective).abs() > 1e-9 * objective.abs().max(1.0) {
            return Err(Error::param(format!("stored objective {} but trajectory gives {objective}", self.objective)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Splits in blocks of ten consecutive record positions: a seeded shuffle of
/// each block sends seven positions to training, two to validation and one
/// to test. Any multiple of ten splits exactly 70/20/10.
pub fn split_of(position: usize, seed: u64) -> Split {
    let block = (position / 10) as u64;
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x0005_9117);
    r.set_stream(block);
    let mut slots: [u8; 10] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9];
    slots.shuffle(&mut r);
    match slots[position % 10] {
        0..=6 => Split::Train,
        7..=8 => Split::Validation,
        _ => Split::Test,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }

    fn add(&mut self, split: Split) {
        match split {
            Split::Train => self.train += 1,
            Split::Validation => self.validation += 1,
            Split::Test => self.test += 1,
        }
    }
}

/// A solve that produced no record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discard {
    pub index: usize,
    pub waypoints: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub attempted: usize,
    pub records: usize,
    pub counts: SplitCounts,
    /// Records per path length.
    pub length_histogram: BTreeMap<usize, usize>,
    pub min_waypoints: usize,
    pub max_waypoints: usize,
    pub lambda: f64,
    pub limits: RobotLimits,
    pub discarded: Vec<Discard>,
}

/// Generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Problems to attempt.
    pub n: usize,
    pub min_waypoints: usize,
    pub max_waypoints: usize,
    pub limits: RobotLimits,
    pub lambda: f64,
    pub seed: u64,
    pub solver: SqpSettings,
}

impl DatasetConfig {
    pub fn new(n: usize, lengths: std::ops::RangeInclusive<usize>, limits: RobotLimits, seed: u64) -> Self {
        Self {
            n,
            min_waypoints: *lengths.start(),
            max_waypoints: *lengths.end(),
            limits,
            lambda: DEFAULT_LAMBDA,
            seed,
            solver: SqpSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::param("n must be at least 1"));
        }
        if self.min_waypoints < 2 || self.min_waypoints > self.max_waypoints {
            return Err(Error::param(format!("invalid length range {}..={}", self.min_waypoints, self.max_waypoints)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::param("lambda outside [0, 1]"));
        }
        self.solver.validate()
    }

    /// The path attempted at `index`; depends only on the seed and index.
    pub fn problem(&self, index: usize) -> Result<WaypointPath> {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(index as u64);
        let len = r.random_range(self.min_waypoints..=self.max_waypoints);
        sample_path(&self.limits, len, &mut r)
    }

    fn solve(&self, index: usize) -> Result<std::result::Result<TrajectoryRecord, Discard>> {
        let path = self.problem(index)?;
        let waypoints = path.num_waypoints();
        let request = PlanRequest {
            lambda: self.lambda,
            solver: self.solver.clone(),
            ..PlanRequest::new(path.clone(), self.limits.clone())
        };
        let discard = |reason: String| Ok(Err(Discard { index, waypoints, reason }));
        let init = match cold_start(&path, &self.limits) {
            Ok(init) => init,
            Err(e) => return discard(format!("cold start: {e}")),
        };
        let solved = plan(&request, &init).and_then(|res| polish(&request, res));
        match solved {
            Ok(res) if res.attempts.len() > 1 => {
                discard(format!("only the tightened retry converged ({} iterations)", res.total_iterations()))
            }
            Ok(res) if res.converged() => Ok(Ok(TrajectoryRecord {
                index,
                joints: path.num_joints(),
                waypoints,
                path,
                lambda: self.lambda,
                objective: res.objective,
                jerk: res.jerk,
                duration: res.duration,
                iterations: res.total_iterations(),
                trajectory: res.trajectory,
            })),
            Ok(res) => discard(format!(
                "solver stopped with {:?} after {} iterations",
                res.solver.status,
                res.total_iterations()
            )),
            Err(e) => discard(e.to_string()),
        }
    }
}

/// A solution found by the tightened retry is re-solved from itself under
/// the first attempt's settings; the iteration counts add up.
fn polish(request: &PlanRequest, res: PlanResult) -> Result<PlanResult> {
    if res.attempts.len() < 2 {
        return Ok(res);
    }
    let mut again = plan(request, &DecisionVector::encode(&res.trajectory)?)?;
    let first = res.total_iterations();
    again.attempts.iter_mut().take(1).for_each(|a| a.iterations += first);
    Ok(again)
}

pub fn dataset_paths(stem: impl AsRef<Path>) -> (PathBuf, PathBuf) {
    let stem = stem.as_ref();
    let name = stem.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    (stem.with_file_name(format!("{name}.jsonl")), stem.with_file_name(format!("{name}.manifest.json")))
}

/// Records with their split assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub records: Vec<TrajectoryRecord>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &TrajectoryRecord> {
        let seed = self.manifest.seed;
        self.records.iter().enumerate().filter(move |(i, _)| split_of(*i, seed) == split).map(|(_, r)| r)
    }

    /// Per-joint training samples of one split, in record order.
    pub fn samples(&self, split: Split) -> Result<Vec<Sample>> {
        let mut out = Vec::new();
        for r in self.split(split) {
            out.extend(r.samples()?);
        }
        Ok(out)
    }
}

/// Solves `config.n` cold-start problems in parallel and keeps the converged
/// ones. Fails when fewer than half converge.
pub fn build_dataset(config: &DatasetConfig) -> Result<Dataset> {
    config.validate()?;
    let outcomes: Vec<Result<std::result::Result<TrajectoryRecord, Discard>>> =
        (0..config.n).into_par_iter().map(|i| config.solve(i)).collect();
    let mut records = Vec::new();
    let mut discarded = Vec::new();
    for outcome in outcomes {
        match outcome? {
            Ok(r) => records.push(r),
            Err(d) => discarded.push(d),
        }
    }
    let rate = records.len() as f64 / config.n as f64;
    if rate < MIN_CONVERGENCE_RATE {
        let reasons: Vec<String> =
            discarded.iter().take(5).map(|d| format!("#{} (I = {}): {}", d.index, d.waypoints, d.reason)).collect();
        return Err(Error::Dataset(format!(
            "only {} of {} solves converged ({:.1}%); first failures: {}",
            records.len(),
            config.n,
            100.0 * rate,
            reasons.join("; ")
        )));
    }
    let mut counts = SplitCounts::default();
    let mut length_histogram = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        counts.add(split_of(i, config.seed));
        *length_histogram.entry(r.waypoints).or_insert(0) += 1;
    }
    let manifest = DatasetManifest {
        format_version: DATASET_VERSION,
        seed: config.seed,
        attempted: config.n,
        records: records.len(),
        counts,
        length_histogram,
        min_waypoints: config.min_waypoints,
        max_waypoints: config.max_waypoints,
        lambda: config.lambda,
        limits: config.limits.clone(),
        discarded,
    };
    Ok(Dataset { manifest, records })
}

/// Writes `<stem>.jsonl` and `<stem>.manifest.json`.
pub fn write_dataset(dataset: &Dataset, stem: impl AsRef<Path>) -> Result<()> {
    let (data, manifest) = dataset_paths(stem);
    let mut w = BufWriter::new(File::create(&data)?);
    for r in &dataset.records {
        json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let mut m = BufWriter::new(File::create(&manifest)?);
    json::to_writer(&mut m, &dataset.manifest)?;
    m.write_all(b"\n")?;
    m.flush()?;
    Ok(())
}

/// [`build_dataset`] followed by [`write_dataset`].
pub fn generate_dataset(config: &DatasetConfig, stem: impl AsRef<Path>) -> Result<Dataset> {
    let dataset = build_dataset(config)?;
    write_dataset(&dataset, stem)?;
    Ok(dataset)
}

/// Reads and validates a dataset; every record is re-audited against the
/// manifest's limits.
pub fn load_dataset(stem: impl AsRef<Path>) -> Result<Dataset> {
    let (data, manifest_path) = dataset_paths(stem);
    let manifest: DatasetManifest = serde_json::from_reader(BufReader::new(File::open(&manifest_path)?))
        .map_err(|e| Error::Dataset(format!("manifest: {e}")))?;
    if manifest.format_version != DATASET_VERSION {
        return Err(Error::Version { found: manifest.format_version, expected: DATASET_VERSION });
    }
    let mut records = Vec::new();
    for (i, line) in BufReader::new(File::open(&data)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrajectoryRecord =
            serde_json::from_str(&line).map_err(|e| Error::Record { index: i, message: e.to_string() })?;
        record.validate(&manifest.limits).map_err(|e| Error::Record { index: i, message: e.to_string() })?;
        if record.lambda != manifest.lambda {
            return Err(Error::Record { index: i, message: "lambda differs from the manifest".into() });
        }
        records.push(record);
    }
    if records.len() != manifest.records || manifest.counts.total() != manifest.records {
        return Err(Error::Dataset(format!(
            "manifest lists {} records ({} across splits) but the data file holds {}",
            manifest.records,
            manifest.counts.total(),
            records.len()
        )));
    }
    let mut counts = SplitCounts::default();
    for i in 0..records.len() {
        counts.add(split_of(i, manifest.seed));
    }
    if counts != manifest.counts {
        return Err(Error::Dataset("split counts disagree with the manifest".into()));
    }
    Ok(Dataset { manifest, records })
}
