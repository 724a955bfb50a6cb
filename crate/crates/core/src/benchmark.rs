//! Paired cold/warm start comparisons.
//!
//! Every problem is solved from the cold start and, when a model is given,
//! from the model's prediction with identical settings. The report holds one
//! row per (problem, method), aggregates per (method, length) and paired
//! comparisons. Wall-clock times are kept apart from the deterministic
//! columns so that reports of equal seeds are byte-identical.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::sample_path;
use crate::planner::{
    cold_start, dense_check, plan_unchecked, warm_start_from_model, DecisionVector, InitialGuessModel, PlanRequest,
    CHECK_FACTOR, DEFAULT_LAMBDA,
};
use crate::sqp::SqpSettings;
use crate::trajectory::{RobotLimits, WaypointPath};
use crate::{json, Result};

/// Version of the CSV column layout.
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "cold-sqp")]
    Cold,
    #[serde(rename = "warm-sqp")]
    Warm,
    /// The model's guess without refinement.
    #[serde(rename = "model-only")]
    ModelOnly,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Cold => "cold-sqp",
            Method::Warm => "warm-sqp",
            Method::ModelOnly => "model-only",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub problem: usize,
    pub waypoints: usize,
    pub method: Method,
    /// Solver status; `failed` when no guess or solve was available, `guess`
    /// for model-only rows.
    pub status: String,
    pub converged: bool,
    pub iterations: Option<usize>,
    pub objective: Option<f64>,
    pub jerk: Option<f64>,
    pub duration: Option<f64>,
    /// Dense audit of the returned trajectory against the unmargined limits.
    pub feasible: bool,
    /// FNV-1a of the problem definition shared by the paired rows.
    pub problem_hash: u64,
    pub warm_start_ns: u64,
    pub sqp_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: Method,
    pub waypoints: usize,
    pub runs: usize,
    pub converged: usize,
    pub median_iterations: f64,
    pub iqr_iterations: f64,
    pub median_objective: f64,
    pub iqr_objective: f64,
}

/// Paired cold/warm statistics over one length, or all lengths when
/// `waypoints` is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub waypoints: Option<usize>,
    pub problems: usize,
    pub warm_wins: usize,
    pub win_rate: f64,
    pub median_cold_iterations: f64,
    pub median_warm_iterations: f64,
    /// `100·(1 − median warm / median cold)`.
    pub median_iteration_reduction_pct: f64,
    pub converged_pairs: usize,
    /// Largest `warm − cold` objective difference over converged pairs.
    pub max_objective_excess: f64,
    /// The same difference relative to `|cold|`, in percent.
    pub max_objective_excess_pct: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub aggregates: Vec<Aggregate>,
    pub comparisons: Vec<Comparison>,
}

/// Problem set and solve settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSettings {
    pub lengths: Vec<usize>,
    /// Problems per length.
    pub per_length: usize,
    pub seed: u64,
    pub lambda: f64,
    pub limits: RobotLimits,
    pub solver: SqpSettings,
}

impl BenchSettings {
    pub fn new(lengths: Vec<usize>, per_length: usize, limits: RobotLimits, seed: u64) -> Self {
        Self { lengths, per_length, seed, lambda: DEFAULT_LAMBDA, limits, solver: SqpSettings::default() }
    }

    /// Random paths, length-major; each depends only on the seed, its length
    /// and its position.
    pub fn problems(&self) -> Result<Vec<WaypointPath>> {
        let mut out = Vec::with_capacity(self.lengths.len() * self.per_length);
        for &len in &self.lengths {
            for i in 0..self.per_length {
                let mut r = ChaCha8Rng::seed_from_u64(self.seed ^ ((len as u64) << 32));
                r.set_stream(i as u64);
                out.push(sample_path(&self.limits, len, &mut r)?);
            }
        }
        Ok(out)
    }

    fn request(&self, path: &WaypointPath) -> PlanRequest {
        PlanRequest {
            lambda: self.lambda,
            solver: self.solver.clone(),
            ..PlanRequest::new(path.clone(), self.limits.clone())
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Hash of everything a paired solve shares.
pub fn problem_hash(request: &PlanRequest) -> Result<u64> {
    Ok(fnv1a(json::to_string(request)?.as_bytes()))
}

fn solve_row(
    problem: usize,
    method: Method,
    request: &PlanRequest,
    hash: u64,
    init: Option<(DecisionVector, u64)>,
) -> BenchRow {
    let mut row = BenchRow {
        problem,
        waypoints: request.path.num_waypoints(),
        method,
        status: "failed".into(),
        converged: false,
        iterations: None,
        objective: None,
        jerk: None,
        duration: None,
        feasible: false,
        problem_hash: hash,
        warm_start_ns: 0,
        sqp_ns: 0,
    };
    let Some((init, warm_ns)) = init else {
        return row;
    };
    row.warm_start_ns = warm_ns;
    if method == Method::ModelOnly {
        row.status = "guess".into();
        if let Ok(traj) = init.decode(&request.path) {
            let audit = dense_check(&traj, &request.path, &request.limits, CHECK_FACTOR * request.collocation_density);
            row.feasible = audit.map(|a| a.passed).unwrap_or(false);
            row.iterations = Some(0);
            row.jerk = traj.total_jerk().ok();
            row.duration = Some(traj.end_time());
            row.objective = traj.scalar_objective(request.lambda).ok();
        }
        return row;
    }
    if let Ok(res) = plan_unchecked(request, &init) {
        row.status = format!("{:?}", res.solver.status);
        row.converged = res.converged();
        row.iterations = Some(res.total_iterations());
        row.objective = Some(res.objective);
        row.jerk = Some(res.jerk);
        row.duration = Some(res.duration);
        row.feasible = res.feasibility.passed;
        row.sqp_ns = res.timings.sqp_ns;
    }
    row
}

/// Solves every problem cold and, with a model, warm and model-only.
/// Problems run in parallel on the current rayon pool; rows are ordered by
/// problem index and method.
pub fn bench_compare(
    problems: &[WaypointPath],
    model: Option<&(dyn InitialGuessModel + Sync)>,
    settings: &BenchSettings,
) -> Result<BenchReport> {
    let per_problem: Vec<Result<Vec<BenchRow>>> = problems
        .par_iter()
        .enumerate()
        .map(|(i, path)| {
            let request = settings.request(path);
            let hash = problem_hash(&request)?;
            let mut rows = vec![solve_row(
                i,
                Method::Cold,
                &request,
                hash,
                cold_start(path, &settings.limits).ok().map(|d| (d, 0)),
            )];
            if let Some(m) = model {
                let started = std::time::Instant::now();
                let guess = warm_start_from_model(m, path, &settings.limits).ok();
                let ns = started.elapsed().as_nanos() as u64;
                let guess = guess.map(|g| (g, ns));
                rows.push(solve_row(i, Method::Warm, &request, hash, guess.clone()));
                rows.push(solve_row(i, Method::ModelOnly, &request, hash, guess));
            }
            Ok(rows)
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_problem {
        rows.extend(r?);
    }
    Ok(summarize(rows))
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn median_iqr(mut v: Vec<f64>) -> (f64, f64) {
    v.sort_by(f64::total_cmp);
    (quantile(&v, 0.5), quantile(&v, 0.75) - quantile(&v, 0.25))
}

fn compare(rows: &[BenchRow], waypoints: Option<usize>) -> Option<Comparison> {
    let pick = |m: Method| -> Vec<&BenchRow> {
        rows.iter().filter(|r| r.method == m && waypoints.is_none_or(|w| r.waypoints == w)).collect()
    };
    let (cold, warm) = (pick(Method::Cold), pick(Method::Warm));
    if warm.is_empty() || cold.len() != warm.len() {
        return None;
    }
    let mut wins = 0;
    let mut pairs = 0;
    let (mut excess, mut excess_pct) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (c, w) in cold.iter().zip(&warm) {
        debug_assert_eq!((c.problem, c.problem_hash), (w.problem, w.problem_hash));
        let won = match (c.iterations, w.iterations) {
            (Some(ci), Some(wi)) => w.converged && (wi < ci || !c.converged),
            (None, Some(_)) => w.converged,
            _ => false,
        };
        wins += won as usize;
        if let (true, true, Some(co), Some(wo)) = (c.converged, w.converged, c.objective, w.objective) {
            pairs += 1;
            excess = excess.max(wo - co);
            excess_pct = excess_pct.max(100.0 * (wo - co) / co.abs().max(f64::MIN_POSITIVE));
        }
    }
    let iterations = |v: &[&BenchRow]| median_iqr(v.iter().filter_map(|r| r.iterations.map(|i| i as f64)).collect()).0;
    let (mc, mw) = (iterations(&cold), iterations(&warm));
    Some(Comparison {
        waypoints,
        problems: cold.len(),
        warm_wins: wins,
        win_rate: wins as f64 / cold.len() as f64,
        median_cold_iterations: mc,
        median_warm_iterations: mw,
        median_iteration_reduction_pct: 100.0 * (1.0 - mw / mc),
        converged_pairs: pairs,
        max_objective_excess: if pairs > 0 { excess } else { 0.0 },
        max_objective_excess_pct: if pairs > 0 { excess_pct } else { 0.0 },
    })
}

/// Aggregates and comparisons recomputed from rows.
pub fn summarize(rows: Vec<BenchRow>) -> BenchReport {
    let mut keys: Vec<(Method, usize)> = rows.iter().map(|r| (r.method, r.waypoints)).collect();
    keys.sort();
    keys.dedup();
    let aggregates = keys
        .iter()
        .map(|&(method, waypoints)| {
            let group: Vec<&BenchRow> =
                rows.iter().filter(|r| r.method == method && r.waypoints == waypoints).collect();
            let (median_iterations, iqr_iterations) =
                median_iqr(group.iter().filter_map(|r| r.iterations.map(|i| i as f64)).collect());
            let (median_objective, iqr_objective) = median_iqr(group.iter().filter_map(|r| r.objective).collect());
            Aggregate {
                method,
                waypoints,
                runs: group.len(),
                converged: group.iter().filter(|r| r.converged).count(),
                median_iterations,
                iqr_iterations,
                median_objective,
                iqr_objective,
            }
        })
        .collect();
    let mut lengths: Vec<usize> = rows.iter().map(|r| r.waypoints).collect();
    lengths.sort();
    lengths.dedup();
    let comparisons = lengths.into_iter().map(Some).chain([None]).filter_map(|w| compare(&rows, w)).collect();
    BenchReport { rows, aggregates, comparisons }
}

fn num(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

impl BenchReport {
    /// Per-run rows without wall-clock columns.
    pub fn report_csv(&self) -> String {
        let mut out = String::from(
            "problem,waypoints,method,status,converged,iterations,objective,jerk,duration,feasible,problem_hash\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{:016x}",
                r.problem,
                r.waypoints,
                r.method.name(),
                r.status,
                r.converged,
                r.iterations.map(|i| i.to_string()).unwrap_or_default(),
                num(r.objective),
                num(r.jerk),
                num(r.duration),
                r.feasible,
                r.problem_hash
            );
        }
        out
    }

    /// Aggregates per (method, length) followed by the paired comparisons;
    /// columns that do not apply to a row kind are empty.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "kind,method,waypoints,runs,converged,median_iterations,iqr_iterations,median_objective,iqr_objective,\
             median_cold_iterations,median_warm_iterations,warm_wins,win_rate,median_iteration_reduction_pct,\
             converged_pairs,max_objective_excess,max_objective_excess_pct\n",
        );
        for a in &self.aggregates {
            let _ = writeln!(
                out,
                "aggregate,{},{},{},{},{},{},{},{},,,,,,,,",
                a.method.name(),
                a.waypoints,
                a.runs,
                a.converged,
                num(Some(a.median_iterations)),
                num(Some(a.iqr_iterations)),
                num(Some(a.median_objective)),
                num(Some(a.iqr_objective)),
            );
        }
        for c in &self.comparisons {
            let _ = writeln!(
                out,
                "comparison,warm-vs-cold,{},{},,,,,,{},{},{},{},{},{},{},{}",
                c.waypoints.map(|w| w.to_string()).unwrap_or_else(|| "all".into()),
                c.problems,
                num(Some(c.median_cold_iterations)),
                num(Some(c.median_warm_iterations)),
                c.warm_wins,
                num(Some(c.win_rate)),
                num(Some(c.median_iteration_reduction_pct)),
                c.converged_pairs,
                num(Some(c.max_objective_excess)),
                num(Some(c.max_objective_excess_pct)),
            );
        }
        out
    }

    /// Wall-clock stage times; differs between runs.
    pub fn timings_csv(&self) -> String {
        let mut out = String::from("problem,waypoints,method,warm_start_ns,sqp_ns\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.problem, r.waypoints, r.method.name(), r.warm_start_ns, r.sqp_ns);
        }
        out
    }
}
