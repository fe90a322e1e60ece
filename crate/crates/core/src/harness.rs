//! Multi-round, multi-method benchmark runs with range-normalized reporting.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{baseline_batch, run_sobol_stream, BaselineKind};
use crate::error::{Error, Result};
use crate::fit::{fit_posterior, FitSettings};
use crate::gp::{Dataset, GpPosterior};
use crate::mountain_car::{evaluate_controller_seeded, N_PARAMS};
use crate::mtv::{design_batch, Batch, MtvConfig};
use crate::pstar::PStarConfig;
use crate::sobol::SobolStream;
use crate::testbed::{Problem, TestFunction};

pub const RESULTS_HEADER: [&str; 7] = [
    "method",
    "problem",
    "dimension",
    "replication",
    "round",
    "raw_best",
    "normalized_best",
];
pub const REPORT_HEADER: [&str; 5] = ["method", "round", "mean_normalized", "stderr", "n"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    Mtv,
    MtvNoPstar,
    MtvNoOpt,
    MtvNoIc,
    Random,
    Sobol,
    Thompson,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Mtv,
        Method::MtvNoPstar,
        Method::MtvNoOpt,
        Method::MtvNoIc,
        Method::Random,
        Method::Sobol,
        Method::Thompson,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Method::Mtv => "mtv",
            Method::MtvNoPstar => "mtv_no_pstar",
            Method::MtvNoOpt => "mtv_no_opt",
            Method::MtvNoIc => "mtv_no_ic",
            Method::Random => "random",
            Method::Sobol => "sobol",
            Method::Thompson => "ts",
        }
    }

    /// MTV flags for the MTV family; `None` for baselines.
    pub fn mtv_config(self, batch_size: usize) -> Option<MtvConfig> {
        let mut c = MtvConfig::new(batch_size);
        match self {
            Method::Mtv => {}
            Method::MtvNoPstar => c.use_pstar_weights = false,
            Method::MtvNoOpt => c.optimize = false,
            Method::MtvNoIc => c.seed_from_pstar = false,
            _ => return None,
        }
        Some(c)
    }

    pub fn baseline(self) -> Option<BaselineKind> {
        match self {
            Method::Random => Some(BaselineKind::Random),
            Method::Sobol => Some(BaselineKind::Sobol),
            Method::Thompson => Some(BaselineKind::Thompson),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        let found = match norm.as_str() {
            "thompson" => Some(Method::Thompson),
            other => Method::ALL.into_iter().find(|m| m.id() == other),
        };
        found.ok_or_else(|| Error::UnknownId {
            kind: "method",
            id: s.to_string(),
            valid: Method::ALL.map(|m| m.id()).join(", "),
        })
    }
}

/// Which designer runs in each round.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MethodPlan {
    pub per_round: Vec<Method>,
}

impl MethodPlan {
    pub fn uniform(method: Method, rounds: usize) -> Self {
        Self {
            per_round: vec![method; rounds],
        }
    }

    /// Parses `mtv` (repeated for every round) or `mtv:ts:ts` (one per round).
    pub fn parse(spec: &str, rounds: usize) -> Result<Self> {
        let parts: Vec<Method> = spec.split(':').map(str::parse).collect::<Result<_>>()?;
        if parts.len() == 1 {
            return Ok(Self::uniform(parts[0], rounds));
        }
        if parts.len() != rounds {
            return Err(Error::InvalidConfig(format!(
                "ensemble '{spec}' lists {} methods for {rounds} rounds",
                parts.len()
            )));
        }
        Ok(Self { per_round: parts })
    }

    /// Distinct methods in order of first use, joined by `+`.
    pub fn name(&self) -> String {
        let mut seen: Vec<Method> = Vec::new();
        for m in &self.per_round {
            if !seen.contains(m) {
                seen.push(*m);
            }
        }
        seen.iter().map(|m| m.id()).collect::<Vec<_>>().join("+")
    }
}

/// What is being optimized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Task {
    /// A test function; each replication draws its own distortion center
    /// unless `distort` is off.
    Function {
        function: TestFunction,
        dimension: usize,
        noise_sd: f64,
        distort: bool,
    },
    /// The mountain-car controller, averaged over `episodes` episodes.
    MountainCar { episodes: usize },
}

impl Task {
    pub fn function(function: TestFunction, dimension: usize) -> Self {
        Task::Function {
            function,
            dimension,
            noise_sd: 0.0,
            distort: true,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Task::Function { function, .. } => function.id().to_string(),
            Task::MountainCar { .. } => "mountain_car".to_string(),
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            Task::Function { dimension, .. } => *dimension,
            Task::MountainCar { .. } => N_PARAMS,
        }
    }

    /// Problem instance for a replication seed.
    fn instantiate(&self, seed: u64) -> Result<Instance> {
        match self {
            Task::Function {
                function,
                dimension,
                noise_sd,
                distort,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(0);
                let problem = if *distort {
                    Problem::random(*function, *dimension, *noise_sd, seed, &mut rng)?
                } else {
                    Problem::new(*function, vec![0.0; *dimension], *noise_sd)?
                };
                Ok(Instance::Function(problem))
            }
            Task::MountainCar { episodes } => Ok(Instance::MountainCar { episodes: *episodes }),
        }
    }
}

enum Instance {
    Function(Problem),
    MountainCar { episodes: usize },
}

impl Instance {
    fn measure<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<f64> {
        match self {
            Instance::Function(p) => p.measure(x, rng),
            Instance::MountainCar { episodes } => Ok(evaluate_controller_seeded(x, *episodes, rng.next_u64())),
        }
    }

    /// Known noise variance, or `None` when it must be fitted.
    fn known_noise(&self) -> Option<f64> {
        match self {
            Instance::Function(p) => Some(p.noise_sd * p.noise_sd),
            Instance::MountainCar { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub rounds: usize,
    pub batch_size: usize,
    pub plan: MethodPlan,
    pub replications: usize,
    pub base_seed: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.batch_size == 0 || self.replications == 0 {
            return Err(Error::InvalidConfig("rounds, batch size and replications must be >= 1".into()));
        }
        if self.plan.per_round.len() != self.rounds {
            return Err(Error::InvalidConfig(format!(
                "method plan has {} entries for {} rounds",
                self.plan.per_round.len(),
                self.rounds
            )));
        }
        Ok(())
    }
}

/// Everything recorded for one replication of one method on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub method: String,
    pub problem: String,
    pub dimension: usize,
    pub replication: usize,
    pub seed: u64,
    pub batches: Vec<Batch>,
    pub measurements: Vec<Vec<f64>>,
    /// Cumulative max of measured values after each completed round.
    pub best_so_far: Vec<f64>,
    pub error: Option<String>,
}

/// Runs one optimization: `plan.per_round.len()` rounds of `batch_size` arms.
pub fn run_one(task: &Task, plan: &MethodPlan, batch_size: usize, seed: u64, replication: usize) -> RunTrace {
    let mut trace = RunTrace {
        method: plan.name(),
        problem: task.name(),
        dimension: task.dimension(),
        replication,
        seed,
        batches: Vec::new(),
        measurements: Vec::new(),
        best_so_far: Vec::new(),
        error: None,
    };
    if let Err(e) = run_rounds(task, plan, batch_size, seed, &mut trace) {
        trace.error = Some(e.to_string());
    }
    trace
}

fn run_rounds(task: &Task, plan: &MethodPlan, batch_size: usize, seed: u64, trace: &mut RunTrace) -> Result<()> {
    let instance = task.instantiate(seed)?;
    let d = task.dimension();
    let mut design_rng = ChaCha8Rng::seed_from_u64(seed);
    design_rng.set_stream(1);
    let mut measure_rng = ChaCha8Rng::seed_from_u64(seed);
    measure_rng.set_stream(2);
    let mut sobol: SobolStream = run_sobol_stream(d, &mut design_rng)?;

    let known_noise = instance.known_noise();
    let mut dataset = Dataset::empty(d, known_noise.unwrap_or(0.0));
    let mut gp: Option<GpPosterior> = None;
    let mut best = f64::NEG_INFINITY;
    let rounds = plan.per_round.len();

    for (round, &method) in plan.per_round.iter().enumerate() {
        let batch = design_round(method, gp.as_ref(), d, batch_size, round, &mut sobol, &mut design_rng)?;
        let mut ys = Vec::with_capacity(batch.len());
        for arm in &batch.arms {
            let y = instance.measure(arm, &mut measure_rng)?;
            dataset.push(arm.clone(), y)?;
            ys.push(y);
            best = best.max(y);
        }
        trace.batches.push(batch);
        trace.measurements.push(ys);
        trace.best_so_far.push(best);

        if round + 1 < rounds {
            let settings = FitSettings {
                seed: design_rng.next_u64(),
                fit_noise: known_noise.is_none(),
                ..Default::default()
            };
            let (posterior, _) = fit_posterior(dataset.clone(), &settings)?;
            gp = Some(posterior);
        }
    }
    Ok(())
}

fn design_round<R: Rng + ?Sized>(
    method: Method,
    gp: Option<&GpPosterior>,
    d: usize,
    batch_size: usize,
    round: usize,
    sobol: &mut SobolStream,
    rng: &mut R,
) -> Result<Batch> {
    if let Some(cfg) = method.mtv_config(batch_size) {
        let pstar = PStarConfig::for_batch(batch_size);
        return design_batch(gp, d, &cfg, &pstar, round, rng);
    }
    let kind = method.baseline().expect("every method is MTV-family or a baseline");
    baseline_batch(kind, gp, batch_size, d, round, sobol, rng)
}

/// Runs every (task, plan, replication) combination; replication `r` uses
/// seed `base_seed + r`.
pub fn run_bench(tasks: &[Task], plans: &[MethodPlan], rounds: usize, batch_size: usize, replications: usize, base_seed: u64) -> Result<Vec<RunTrace>> {
    for plan in plans {
        RunConfig {
            rounds,
            batch_size,
            plan: plan.clone(),
            replications,
            base_seed,
        }
        .validate()?;
    }
    let jobs: Vec<(&Task, &MethodPlan, usize)> = tasks
        .iter()
        .flat_map(|t| plans.iter().flat_map(move |p| (0..replications).map(move |r| (t, p, r))))
        .collect();
    Ok(jobs
        .par_iter()
        .map(|(t, p, r)| run_one(t, p, batch_size, base_seed + *r as u64, *r))
        .collect())
}

/// Maps best-so-far values to `[0, 1]` using the min and max over all the
/// given traces (which must share one problem). A flat range maps to 0.5.
pub fn range_normalize(traces: &[&RunTrace]) -> Vec<Vec<f64>> {
    let values = traces.iter().flat_map(|t| t.best_so_far.iter().copied());
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    traces
        .iter()
        .map(|t| {
            t.best_so_far
                .iter()
                .map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 })
                .collect()
        })
        .collect()
}

/// Normalizes per (problem, dimension) group; output aligned with `traces`.
pub fn normalize_by_problem(traces: &[&RunTrace]) -> Vec<Vec<f64>> {
    let mut groups: BTreeMap<(String, usize), Vec<usize>> = BTreeMap::new();
    for (i, t) in traces.iter().enumerate() {
        groups.entry((t.problem.clone(), t.dimension)).or_default().push(i);
    }
    let mut out = vec![Vec::new(); traces.len()];
    for idx in groups.values() {
        let group: Vec<&RunTrace> = idx.iter().map(|&i| traces[i]).collect();
        for (i, norm) in idx.iter().zip(range_normalize(&group)) {
            out[*i] = norm;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub round: usize,
    pub mean_normalized: f64,
    pub stderr: f64,
    pub n: usize,
}

fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per (method, round) mean and standard error over replications and
/// problems, methods ordered by final-round mean (descending).
pub fn aggregate(traces: &[&RunTrace], normalized: &[Vec<f64>]) -> Vec<ReportRow> {
    let mut cells: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for (t, norm) in traces.iter().zip(normalized) {
        for (round, v) in norm.iter().enumerate() {
            cells.entry((t.method.clone(), round)).or_default().push(*v);
        }
    }
    let mut rows: Vec<ReportRow> = cells
        .into_iter()
        .map(|((method, round), v)| {
            let (mean, se) = mean_stderr(&v);
            ReportRow {
                method,
                round,
                mean_normalized: mean,
                stderr: se,
                n: v.len(),
            }
        })
        .collect();
    let finals = final_means(&rows);
    rows.sort_by(|a, b| {
        let fa = finals[&a.method];
        let fb = finals[&b.method];
        fb.total_cmp(&fa).then_with(|| a.method.cmp(&b.method)).then(a.round.cmp(&b.round))
    });
    rows
}

fn final_means(rows: &[ReportRow]) -> BTreeMap<String, f64> {
    let mut last: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    for r in rows {
        let e = last.entry(r.method.clone()).or_insert((r.round, r.mean_normalized));
        if r.round >= e.0 {
            *e = (r.round, r.mean_normalized);
        }
    }
    last.into_iter().map(|(k, (_, v))| (k, v)).collect()
}

/// (method, final-round mean) in report order.
pub fn final_round_summary(rows: &[ReportRow]) -> Vec<(String, f64)> {
    let finals = final_means(rows);
    let mut seen = Vec::new();
    for r in rows {
        if !seen.iter().any(|(m, _): &(String, f64)| *m == r.method) {
            seen.push((r.method.clone(), finals[&r.method]));
        }
    }
    seen
}

pub fn write_results_csv<W: Write>(out: W, traces: &[&RunTrace], normalized: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(RESULTS_HEADER)?;
    for (t, norm) in traces.iter().zip(normalized) {
        for (round, (raw, nv)) in t.best_so_far.iter().zip(norm).enumerate() {
            w.write_record([
                t.method.clone(),
                t.problem.clone(),
                t.dimension.to_string(),
                t.replication.to_string(),
                round.to_string(),
                raw.to_string(),
                nv.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_report_csv<W: Write>(out: W, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.round.to_string(),
            r.mean_normalized.to_string(),
            r.stderr.to_string(),
            r.n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
