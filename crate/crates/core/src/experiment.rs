//! Experiment configuration, replicated runs, CSV outputs and run comparison.
//!
//! Configuration files are flat `key = value` text; `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{QosModel, SamplerKind};
use crate::rng::replication_seed;
use crate::runner::{min_explore_len, run_baseline_random, run_genie, run_simulation, AuctionMode, SimConfig};
use crate::trace::Trace;

/// Environment variable holding the worker count for replications.
pub const WORKERS_ENV: &str = "CHANALLOC_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Algorithm1,
    Random,
    HungarianGenie,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Algorithm1 => "algorithm1",
            Algorithm::Random => "random",
            Algorithm::HungarianGenie => "hungarian-genie",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "algorithm1" => Some(Algorithm::Algorithm1),
            "random" => Some(Algorithm::Random),
            "hungarian-genie" => Some(Algorithm::HungarianGenie),
            _ => None,
        }
    }
}

/// A value that may be left to the protocol's own bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Auto<T> {
    Auto,
    Value(T),
}

impl<T: std::fmt::Display> std::fmt::Display for Auto<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Auto::Auto => f.write_str("auto"),
            Auto::Value(v) => v.fmt(f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuctionKind {
    Theory,
    Practical,
}

/// A validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n_links: usize,
    pub n_channels: usize,
    /// Ladder size `M`; levels are `delta_min·{1, …, M}`.
    pub levels: usize,
    pub delta_min: f64,
    pub horizon: u64,
    pub explore_len: Auto<u64>,
    pub auction_mode: AuctionKind,
    pub auction_slots: u64,
    pub c2: u64,
    pub b0: u32,
    pub eps: Auto<f64>,
    pub sampler: SamplerKind,
    /// Sampler half-width; `auto` is `delta_min / 2`.
    pub sampler_spread: Auto<f64>,
    pub reps: u64,
    pub seed: u64,
    pub out: PathBuf,
    pub algorithm: Algorithm,
    /// Fixed expected-QoS matrix; a fresh random instance per replication otherwise.
    pub q_matrix: Option<Vec<Vec<f64>>>,
    pub write_traces: bool,
    pub curve_stride: u64,
}

impl ExperimentConfig {
    /// Defaults for `N` links and `K` channels.
    pub fn new(n_links: usize, n_channels: usize) -> Self {
        ExperimentConfig {
            n_links,
            n_channels,
            levels: 4,
            delta_min: 1.0,
            horizon: 100_000,
            explore_len: Auto::Value(800),
            auction_mode: AuctionKind::Practical,
            auction_slots: 500,
            c2: 100,
            b0: 8,
            eps: Auto::Auto,
            sampler: SamplerKind::UniformBand,
            sampler_spread: Auto::Auto,
            reps: 1,
            seed: 1,
            out: PathBuf::from("out"),
            algorithm: Algorithm::Algorithm1,
            q_matrix: None,
            write_traces: true,
            curve_stride: 100,
        }
    }

    /// `ε` after resolving `auto` to `0.9·Δ_min/(4K)`.
    pub fn resolved_eps(&self) -> f64 {
        match self.eps {
            Auto::Auto => 0.9 * self.delta_min / (4.0 * self.n_channels as f64),
            Auto::Value(v) => v,
        }
    }

    /// `c_1` after resolving `auto` to the smallest length allowed by the
    /// exploration bound.
    pub fn resolved_explore_len(&self) -> u64 {
        match self.explore_len {
            Auto::Auto => min_explore_len(self.n_channels, self.n_links, (self.levels - 1) as f64),
            Auto::Value(v) => v,
        }
    }

    pub fn resolved_spread(&self) -> f64 {
        match self.sampler_spread {
            Auto::Auto => self.delta_min / 2.0,
            Auto::Value(v) => v,
        }
    }

    pub fn auction(&self) -> AuctionMode {
        match self.auction_mode {
            AuctionKind::Theory => AuctionMode::Theory,
            AuctionKind::Practical => AuctionMode::Practical {
                slots: self.auction_slots,
            },
        }
    }

    /// Instance of replication `rep`.
    pub fn model(&self, rep_seed: u64) -> Result<QosModel> {
        match &self.q_matrix {
            Some(rows) => QosModel::new(QosModel::ladder(self.levels, self.delta_min), self.delta_min, rows.clone()),
            None => QosModel::random(rep_seed, self.n_links, self.n_channels, self.levels, self.delta_min),
        }
    }

    /// Simulation settings of replication `rep`.
    pub fn sim_config(&self, rep: u64) -> Result<SimConfig> {
        let seed = replication_seed(self.seed, rep);
        Ok(SimConfig {
            model: self.model(seed)?,
            sampler: self.sampler,
            sampler_spread: self.resolved_spread(),
            explore_len: self.resolved_explore_len(),
            auction: self.auction(),
            c2: self.c2,
            b0: self.b0,
            eps: self.resolved_eps(),
            horizon: self.horizon,
            seed,
            record_links: self.write_traces,
        })
    }

    /// Checks every protocol hypothesis, naming the violated constraint.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_links < 1 {
            return fail("N >= 1 violated".into());
        }
        if self.n_channels < self.n_links {
            return fail(format!("K >= N violated: N = {}, K = {}", self.n_links, self.n_channels));
        }
        if self.levels < 2 {
            return fail(format!("M >= 2 violated: M = {}", self.levels));
        }
        if !(self.delta_min > 0.0 && self.delta_min.is_finite()) {
            return fail(format!("delta_min > 0 violated: delta_min = {}", self.delta_min));
        }
        let eps = self.resolved_eps();
        let bound = self.delta_min / (4.0 * self.n_channels as f64);
        if !(eps > 0.0) {
            return fail(format!("eps > 0 violated: eps = {eps}"));
        }
        if eps >= bound {
            return fail(format!("eps >= Δ_min/4K: eps = {eps}, Δ_min/4K = {bound}"));
        }
        if self.horizon < 1 {
            return fail("T >= 1 violated".into());
        }
        if self.c2 < 1 {
            return fail("c_2 >= 1 violated".into());
        }
        if self.b0 < 1 || self.b0 > crate::agent::MAX_BITS {
            return fail(format!("1 <= b0 <= {} violated: b0 = {}", crate::agent::MAX_BITS, self.b0));
        }
        if self.auction_mode == AuctionKind::Practical && self.auction_slots < 1 {
            return fail("auction_slots >= 1 violated".into());
        }
        if self.reps < 1 {
            return fail("reps >= 1 violated".into());
        }
        if self.curve_stride < 1 {
            return fail("curve_stride >= 1 violated".into());
        }
        if !(self.resolved_spread() >= 0.0) {
            return fail("sampler_spread >= 0 violated".into());
        }
        if let Some(rows) = &self.q_matrix {
            if rows.len() != self.n_links || rows.iter().any(|r| r.len() != self.n_channels) {
                return fail(format!("q_matrix must be N×K = {}×{}", self.n_links, self.n_channels));
            }
            self.model(0)?;
        }
        Ok(())
    }

    /// Parses configuration text and validates it.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected `key = value`, got `{line}`"),
                });
            };
            let key = key.trim().to_string();
            if !KEYS.contains(&key.as_str()) {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("unknown key `{key}`"),
                });
            }
            if entries.insert(key.clone(), (line_no, value.trim().to_string())).is_some() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("duplicate key `{key}`"),
                });
            }
        }
        let required = |k: &str| {
            entries.get(k).cloned().ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("missing required key `{k}`"),
            })
        };
        let (l, v) = required("N")?;
        let n = parse_num::<usize>(l, "N", &v)?;
        let (l, v) = required("K")?;
        let k = parse_num::<usize>(l, "K", &v)?;
        let mut cfg = ExperimentConfig::new(n, k);

        for (key, (line, value)) in &entries {
            let (line, v) = (*line, value.as_str());
            match key.as_str() {
                "N" | "K" => {}
                "M" => cfg.levels = parse_num(line, key, v)?,
                "delta_min" => cfg.delta_min = parse_num(line, key, v)?,
                "T" => cfg.horizon = parse_num(line, key, v)?,
                "c_1" => cfg.explore_len = parse_auto(line, key, v)?,
                "auction_mode" => {
                    cfg.auction_mode = match v {
                        "theory" => AuctionKind::Theory,
                        "practical" => AuctionKind::Practical,
                        _ => return Err(bad(line, key, v, "theory | practical")),
                    }
                }
                "auction_slots" => cfg.auction_slots = parse_num(line, key, v)?,
                "c_2" => cfg.c2 = parse_num(line, key, v)?,
                "b0" => cfg.b0 = parse_num(line, key, v)?,
                "eps" => cfg.eps = parse_auto(line, key, v)?,
                "sampler" => {
                    cfg.sampler = SamplerKind::parse(v).ok_or_else(|| {
                        bad(line, key, v, "deterministic | uniform-band | two-point | truncated-bell")
                    })?
                }
                "sampler_spread" => cfg.sampler_spread = parse_auto(line, key, v)?,
                "reps" => cfg.reps = parse_num(line, key, v)?,
                "seed" => cfg.seed = parse_num(line, key, v)?,
                "out" => cfg.out = PathBuf::from(v),
                "algorithm" => {
                    cfg.algorithm = Algorithm::parse(v)
                        .ok_or_else(|| bad(line, key, v, "algorithm1 | random | hungarian-genie"))?
                }
                "q_matrix" => cfg.q_matrix = Some(parse_matrix(line, v)?),
                "write_traces" => cfg.write_traces = parse_num(line, key, v)?,
                "curve_stride" => cfg.curve_stride = parse_num(line, key, v)?,
                _ => unreachable!("keys are checked while reading"),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Serializes every key; `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "N = {}", self.n_links);
        let _ = writeln!(s, "K = {}", self.n_channels);
        let _ = writeln!(s, "M = {}", self.levels);
        let _ = writeln!(s, "delta_min = {}", self.delta_min);
        let _ = writeln!(s, "T = {}", self.horizon);
        let _ = writeln!(s, "c_1 = {}", self.explore_len);
        let _ = writeln!(
            s,
            "auction_mode = {}",
            match self.auction_mode {
                AuctionKind::Theory => "theory",
                AuctionKind::Practical => "practical",
            }
        );
        let _ = writeln!(s, "auction_slots = {}", self.auction_slots);
        let _ = writeln!(s, "c_2 = {}", self.c2);
        let _ = writeln!(s, "b0 = {}", self.b0);
        let _ = writeln!(s, "eps = {}", self.eps);
        let _ = writeln!(s, "sampler = {}", self.sampler.name());
        let _ = writeln!(s, "sampler_spread = {}", self.sampler_spread);
        let _ = writeln!(s, "reps = {}", self.reps);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "out = {}", self.out.display());
        let _ = writeln!(s, "algorithm = {}", self.algorithm.name());
        if let Some(rows) = &self.q_matrix {
            let text: Vec<String> = rows
                .iter()
                .map(|r| r.iter().map(f64::to_string).collect::<Vec<_>>().join(","))
                .collect();
            let _ = writeln!(s, "q_matrix = {}", text.join(";"));
        }
        let _ = writeln!(s, "write_traces = {}", self.write_traces);
        let _ = writeln!(s, "curve_stride = {}", self.curve_stride);
        s
    }
}

const KEYS: &[&str] = &[
    "N",
    "K",
    "M",
    "delta_min",
    "T",
    "c_1",
    "auction_mode",
    "auction_slots",
    "c_2",
    "b0",
    "eps",
    "sampler",
    "sampler_spread",
    "reps",
    "seed",
    "out",
    "algorithm",
    "q_matrix",
    "write_traces",
    "curve_stride",
];

fn bad(line: usize, key: &str, value: &str, expected: &str) -> Error {
    Error::Parse {
        line,
        msg: format!("invalid value `{value}` for `{key}` (expected {expected})"),
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| bad(line, key, value, std::any::type_name::<T>()))
}

fn parse_auto<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<Auto<T>> {
    if value == "auto" {
        Ok(Auto::Auto)
    } else {
        parse_num(line, key, value).map(Auto::Value)
    }
}

/// `a,b,c;d,e,f` — rows separated by `;`.
fn parse_matrix(line: usize, value: &str) -> Result<Vec<Vec<f64>>> {
    value
        .split(';')
        .map(|row| {
            row.split(',')
                .map(|x| parse_num::<f64>(line, "q_matrix", x.trim()))
                .collect()
        })
        .collect()
}

/// Ordinary least-squares line `y = intercept + slope·x` and its R².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some(LinearFit { slope, intercept, r2 })
}

/// Fit of `y` against `ln x`.
pub fn log_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, y)
}

/// What one replication contributes to the aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationSummary {
    pub rep: u64,
    pub seed: u64,
    pub optimal_sum: f64,
    pub final_regret: f64,
    pub final_pseudo_regret: f64,
    pub total_reward: f64,
    pub convergence_packet: Option<u64>,
    /// `(packet, last slot, cumulative pseudo-regret there, exploit optimal)`.
    pub packet_ends: Vec<(u64, u64, f64, bool)>,
    /// Cumulative (regret, pseudo-regret) at every curve grid point.
    pub curve: Vec<(f64, f64)>,
}

impl ReplicationSummary {
    pub fn from_trace(rep: u64, seed: u64, trace: &Trace, grid: &[u64]) -> Self {
        let packet_ends = trace
            .packets
            .iter()
            .map(|p| {
                let end = p.start + p.explore_len + p.auction_len + p.exploit_len - 1;
                (p.packet, end, trace.cum_pseudo_at(end), p.exploit_optimal)
            })
            .collect();
        let curve = grid
            .iter()
            .map(|&t| {
                let s = &trace.slots[(t - 1) as usize];
                (s.cum_regret, s.cum_pseudo_regret)
            })
            .collect();
        ReplicationSummary {
            rep,
            seed,
            optimal_sum: trace.optimal_sum,
            final_regret: trace.final_regret(),
            final_pseudo_regret: trace.final_pseudo_regret(),
            total_reward: trace.total_reward,
            convergence_packet: trace.convergence_packet(),
            packet_ends,
            curve,
        }
    }
}

/// Aggregates of a whole experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    pub algorithm: Algorithm,
    pub grid: Vec<u64>,
    pub mean_regret: Vec<f64>,
    pub mean_pseudo_regret: Vec<f64>,
    /// Mean realized sum-QoS per slot over each grid interval.
    pub mean_sum_qos: Vec<f64>,
    pub replications: Vec<ReplicationSummary>,
    /// Fraction of replications whose exploitation allocation was optimal by packet 2.
    pub converged_by_packet_2: f64,
    pub log_fit: Option<LinearFit>,
    pub linear_fit: Option<LinearFit>,
    /// `(packet, end slot, mean cumulative pseudo-regret, fraction optimal)` when
    /// all replications share packet boundaries.
    pub packet_means: Vec<(u64, u64, f64, f64)>,
}

/// Curve grid: every `stride` slots, plus the horizon.
pub fn curve_grid(horizon: u64, stride: u64) -> Vec<u64> {
    let mut g: Vec<u64> = (1..=horizon / stride).map(|i| i * stride).collect();
    if g.last() != Some(&horizon) {
        g.push(horizon);
    }
    g
}

/// Runs replication `rep` of the configured algorithm.
pub fn run_replication(cfg: &ExperimentConfig, rep: u64) -> Result<(SimConfig, Trace)> {
    let sim = cfg.sim_config(rep)?;
    let trace = match cfg.algorithm {
        Algorithm::Algorithm1 => run_simulation(&sim)?,
        Algorithm::Random => run_baseline_random(&sim)?,
        Algorithm::HungarianGenie => run_genie(&sim)?,
    };
    Ok((sim, trace))
}

fn worker_count() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok()?.parse().ok().filter(|&n| n > 0)
}

/// Runs all replications (in parallel) and aggregates them; no files written.
pub fn run_replications(
    cfg: &ExperimentConfig,
    on_trace: &(dyn Fn(u64, &Trace) -> Result<()> + Sync),
) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let grid = curve_grid(cfg.horizon, cfg.curve_stride);
    let job = |rep: u64| -> Result<ReplicationSummary> {
        let (sim, trace) = run_replication(cfg, rep)?;
        on_trace(rep, &trace)?;
        Ok(ReplicationSummary::from_trace(rep, sim.seed, &trace, &grid))
    };
    let results: Vec<Result<ReplicationSummary>> = match worker_count() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?
            .install(|| (0..cfg.reps).into_par_iter().map(job).collect()),
        None => (0..cfg.reps).into_par_iter().map(job).collect(),
    };
    // results are in replication order, so the reduction is interleaving-independent
    let replications = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(aggregate(cfg.algorithm, grid, replications))
}

fn aggregate(algorithm: Algorithm, grid: Vec<u64>, replications: Vec<ReplicationSummary>) -> ExperimentSummary {
    let reps = replications.len() as f64;
    let mean_at = |f: &dyn Fn(&ReplicationSummary, usize) -> f64, i: usize| {
        replications.iter().map(|r| f(r, i)).sum::<f64>() / reps
    };
    let mean_regret: Vec<f64> = (0..grid.len()).map(|i| mean_at(&|r, i| r.curve[i].0, i)).collect();
    let mean_pseudo_regret: Vec<f64> = (0..grid.len()).map(|i| mean_at(&|r, i| r.curve[i].1, i)).collect();
    let mean_opt = replications.iter().map(|r| r.optimal_sum).sum::<f64>() / reps;
    let mean_sum_qos = (0..grid.len())
        .map(|i| {
            let (t0, r0) = if i == 0 { (0, 0.0) } else { (grid[i - 1], mean_regret[i - 1]) };
            let dt = (grid[i] - t0) as f64;
            mean_opt - (mean_regret[i] - r0) / dt
        })
        .collect();
    let converged_by_packet_2 = replications
        .iter()
        .filter(|r| r.convergence_packet.is_some_and(|k| k <= 2))
        .count() as f64
        / reps;

    let shared_bounds = replications
        .windows(2)
        .all(|w| w[0].packet_ends.iter().map(|p| p.1).eq(w[1].packet_ends.iter().map(|p| p.1)));
    let packet_means: Vec<(u64, u64, f64, f64)> = if shared_bounds && !replications.is_empty() {
        replications[0]
            .packet_ends
            .iter()
            .enumerate()
            .map(|(j, &(k, end, ..))| {
                let mean = replications.iter().map(|r| r.packet_ends[j].2).sum::<f64>() / reps;
                let opt = replications.iter().filter(|r| r.packet_ends[j].3).count() as f64 / reps;
                (k, end, mean, opt)
            })
            .collect()
    } else {
        Vec::new()
    };

    // fit points: packet boundaries after convergence when available, else the curve grid
    let (x, y): (Vec<f64>, Vec<f64>) = if packet_means.len() >= 3 {
        let first = replications
            .iter()
            .filter_map(|r| r.convergence_packet)
            .max()
            .unwrap_or(1);
        packet_means
            .iter()
            .filter(|p| p.0 >= first)
            .map(|p| (p.1 as f64, p.2))
            .unzip()
    } else {
        grid.iter().map(|&t| t as f64).zip(mean_pseudo_regret.iter().copied()).unzip()
    };
    ExperimentSummary {
        algorithm,
        log_fit: log_fit(&x, &y),
        linear_fit: linear_fit(&x, &y),
        grid,
        mean_regret,
        mean_pseudo_regret,
        mean_sum_qos,
        replications,
        converged_by_packet_2,
        packet_means,
    }
}

/// Files created by an experiment, removed again if it fails.
struct OutputSet {
    created: Mutex<Vec<PathBuf>>,
}

impl OutputSet {
    fn create(&self, path: PathBuf) -> Result<BufWriter<File>> {
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        self.created.lock().expect("output list").push(path);
        Ok(BufWriter::new(f))
    }

    fn remove_all(&self) {
        for p in self.created.lock().expect("output list").drain(..) {
            let _ = fs::remove_file(p);
        }
    }
}

fn flush(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Runs the experiment and writes its outputs into `cfg.out`:
/// `config.txt`, `trace_NNNN.csv` / `packets_NNNN.csv` per replication (when
/// `write_traces`), `curve.csv`, `replications.csv`, `packet_summary.csv` and
/// `summary.csv`. On failure every file written so far is removed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    let dir = cfg.out.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let outputs = OutputSet {
        created: Mutex::new(Vec::new()),
    };
    let result = write_experiment(cfg, &dir, &outputs);
    if result.is_err() {
        outputs.remove_all();
    }
    result
}

fn write_experiment(cfg: &ExperimentConfig, dir: &Path, outputs: &OutputSet) -> Result<ExperimentSummary> {
    let write_lock = Mutex::new(());
    let on_trace = |rep: u64, trace: &Trace| -> Result<()> {
        if !cfg.write_traces {
            return Ok(());
        }
        let _guard = write_lock.lock().expect("write lock");
        let path = dir.join(format!("trace_{rep:04}.csv"));
        let mut w = outputs.create(path.clone())?;
        trace.write_csv(&mut w).map_err(|e| relabel(e, &path))?;
        flush(w, &path)?;
        if !trace.packets.is_empty() {
            let path = dir.join(format!("packets_{rep:04}.csv"));
            let mut w = outputs.create(path.clone())?;
            trace.write_packets_csv(&mut w).map_err(|e| relabel(e, &path))?;
            flush(w, &path)?;
        }
        Ok(())
    };
    let summary = run_replications(cfg, &on_trace)?;

    let path = dir.join("config.txt");
    let mut w = outputs.create(path.clone())?;
    w.write_all(cfg.to_text().as_bytes()).map_err(|e| Error::io(&path, e))?;
    flush(w, &path)?;

    let path = dir.join("curve.csv");
    let mut w = outputs.create(path.clone())?;
    write_curve(&summary, &mut w).map_err(|e| Error::io(&path, e))?;
    flush(w, &path)?;

    let path = dir.join("replications.csv");
    let mut w = outputs.create(path.clone())?;
    write_replications(&summary, &mut w).map_err(|e| Error::io(&path, e))?;
    flush(w, &path)?;

    let path = dir.join("packet_summary.csv");
    let mut w = outputs.create(path.clone())?;
    write_packet_means(&summary, &mut w).map_err(|e| Error::io(&path, e))?;
    flush(w, &path)?;

    let path = dir.join("summary.csv");
    let mut w = outputs.create(path.clone())?;
    write_summary(cfg, &summary, &mut w).map_err(|e| Error::io(&path, e))?;
    flush(w, &path)?;
    Ok(summary)
}

fn relabel(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}

pub fn write_curve<W: Write>(s: &ExperimentSummary, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "t,mean_cum_regret,mean_cum_pseudo_regret,mean_sum_qos")?;
    for i in 0..s.grid.len() {
        writeln!(
            w,
            "{},{},{},{}",
            s.grid[i], s.mean_regret[i], s.mean_pseudo_regret[i], s.mean_sum_qos[i]
        )?;
    }
    Ok(())
}

pub fn write_replications<W: Write>(s: &ExperimentSummary, w: &mut W) -> std::io::Result<()> {
    writeln!(
        w,
        "rep,seed,optimal_sum,final_regret,final_pseudo_regret,total_reward,convergence_packet"
    )?;
    for r in &s.replications {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.rep,
            r.seed,
            r.optimal_sum,
            r.final_regret,
            r.final_pseudo_regret,
            r.total_reward,
            r.convergence_packet.map_or(String::new(), |k| k.to_string())
        )?;
    }
    Ok(())
}

pub fn write_packet_means<W: Write>(s: &ExperimentSummary, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "packet,end_t,mean_cum_pseudo_regret,exploit_optimal_fraction")?;
    for (k, end, mean, opt) in &s.packet_means {
        writeln!(w, "{k},{end},{mean},{opt}")?;
    }
    Ok(())
}

fn write_summary<W: Write>(cfg: &ExperimentConfig, s: &ExperimentSummary, w: &mut W) -> std::io::Result<()> {
    let reps = s.replications.len() as f64;
    let mean = |f: fn(&ReplicationSummary) -> f64| s.replications.iter().map(f).sum::<f64>() / reps;
    let conv: Vec<f64> = s
        .replications
        .iter()
        .filter_map(|r| r.convergence_packet.map(|k| k as f64))
        .collect();
    writeln!(w, "key,value")?;
    writeln!(w, "algorithm,{}", s.algorithm.name())?;
    writeln!(w, "reps,{}", s.replications.len())?;
    writeln!(w, "horizon,{}", cfg.horizon)?;
    writeln!(w, "mean_final_regret,{}", mean(|r| r.final_regret))?;
    writeln!(w, "mean_final_pseudo_regret,{}", mean(|r| r.final_pseudo_regret))?;
    writeln!(w, "converged_fraction,{}", conv.len() as f64 / reps)?;
    writeln!(w, "converged_by_packet_2_fraction,{}", s.converged_by_packet_2)?;
    let mean_conv = if conv.is_empty() {
        String::new()
    } else {
        (conv.iter().sum::<f64>() / conv.len() as f64).to_string()
    };
    writeln!(w, "mean_convergence_packet,{mean_conv}")?;
    let fit = |f: Option<LinearFit>| f.map_or((String::new(), String::new()), |f| (f.slope.to_string(), f.r2.to_string()));
    let (ls, lr) = fit(s.log_fit);
    writeln!(w, "log_fit_slope,{ls}")?;
    writeln!(w, "log_fit_r2,{lr}")?;
    let (ls, lr) = fit(s.linear_fit);
    writeln!(w, "linear_fit_slope,{ls}")?;
    writeln!(w, "linear_fit_r2,{lr}")?;
    Ok(())
}

/// One `curve.csv` loaded for comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub name: String,
    pub t: Vec<u64>,
    pub mean_regret: Vec<f64>,
    pub mean_sum_qos: Vec<f64>,
}

pub fn read_curve(path: &Path) -> Result<Curve> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut curve = Curve {
        name: path.display().to_string(),
        t: Vec::new(),
        mean_regret: Vec::new(),
        mean_sum_qos: Vec::new(),
    };
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let field = |j: usize| -> Result<&str> {
            rec.get(j).ok_or_else(|| Error::Parse {
                line: i + 2,
                msg: format!("{}: missing column {j}", path.display()),
            })
        };
        let num = |j: usize| -> Result<f64> {
            field(j)?.parse().map_err(|_| Error::Parse {
                line: i + 2,
                msg: format!("{}: bad number in column {j}", path.display()),
            })
        };
        curve.t.push(num(0)? as u64);
        curve.mean_regret.push(num(1)?);
        curve.mean_sum_qos.push(num(3)?);
    }
    Ok(curve)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            line: 0,
            msg: format!("{}: {other:?}", path.display()),
        },
    }
}

/// Aligns curves on their common time grid: one row per grid point with each
/// curve's mean regret and mean sum-QoS, plus `diff_regret` (second minus
/// first) when exactly two curves are given.
pub fn compare_curves(curves: &[Curve]) -> Result<String> {
    let Some(first) = curves.first() else {
        return Err(Error::Alignment("nothing to compare".into()));
    };
    for c in &curves[1..] {
        if c.t != first.t {
            return Err(Error::Alignment(format!(
                "time grids of {} and {} differ",
                first.name, c.name
            )));
        }
    }
    let mut out = String::from("t");
    for i in 0..curves.len() {
        let _ = write!(out, ",regret_{i},sum_qos_{i}");
    }
    if curves.len() == 2 {
        out.push_str(",diff_regret");
    }
    out.push('\n');
    for (j, t) in first.t.iter().enumerate() {
        let _ = write!(out, "{t}");
        for c in curves {
            let _ = write!(out, ",{},{}", c.mean_regret[j], c.mean_sum_qos[j]);
        }
        if curves.len() == 2 {
            let _ = write!(out, ",{}", curves[1].mean_regret[j] - curves[0].mean_regret[j]);
        }
        out.push('\n');
    }
    Ok(out)
}

/// Reads `curve.csv` files and returns the comparison table.
pub fn compare_runs(paths: &[PathBuf]) -> Result<String> {
    let curves = paths.iter().map(|p| read_curve(p)).collect::<Result<Vec<_>>>()?;
    compare_curves(&curves)
}
