//! Monte-Carlo sweeps over the number of measurements: configuration,
//! per-trial execution, aggregation, CSV/JSON output and SVG charts.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use plotters::prelude::*;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::io::write_json;
use crate::links::Link;
use crate::matched_filter::{mf_struct_dht, ToneGrid, DEFAULT_RANGE_MULTIPLIER};
use crate::model::{
    check_block_dims, normalized_error, synthesize_instance, SignalConfig, SuperpositionInstance,
};
use crate::operators::{
    gen_factored_with_exponent, gen_subgaussian, BasisDescriptor, BasisKind, BasisPair,
    DesignOperator, Family, DEFAULT_T,
};
use crate::seed;
use crate::solvers::{
    dht, dst, struct_dht, ForwardCache, Initialization, Problem, SolveResult, SolverParams,
    DEFAULT_ETA, DEFAULT_MAX_ITERS, DEFAULT_TOL,
};

/// Exact CSV header of sweep results.
pub const CSV_HEADER: &str =
    "algorithm,m,trial,normalized_error,success,iterations,wall_time_seconds";
pub const DEFAULT_SUCCESS_THRESHOLD: f64 = 0.05;
pub const DEFAULT_B_EXPONENT: f64 = 0.5;
pub const DEFAULT_DST_LAMBDAS: [f64; 3] = [1e-3, 3e-3, 1e-2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    StructDht,
    Dht,
    Dst,
    MfStructDht,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::StructDht => "struct-dht",
            Algorithm::Dht => "dht",
            Algorithm::Dst => "dst",
            Algorithm::MfStructDht => "mf-struct-dht",
        }
    }

    pub fn all() -> [Algorithm; 4] {
        [
            Algorithm::StructDht,
            Algorithm::Dht,
            Algorithm::Dst,
            Algorithm::MfStructDht,
        ]
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Algorithm::all()
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm '{s}'")))
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSection {
    pub n: usize,
    pub s: usize,
    pub b: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    /// Number of diagonal blocks of D; required by the periodic pipeline,
    /// which then uses q = m/k.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasesSection {
    #[serde(default = "default_phi")]
    pub phi: BasisKind,
    #[serde(default = "default_psi")]
    pub psi: BasisKind,
}

fn default_phi() -> BasisKind {
    BasisKind::Identity
}

fn default_psi() -> BasisKind {
    BasisKind::DctLike
}

impl Default for BasesSection {
    fn default() -> Self {
        BasesSection {
            phi: default_phi(),
            psi: default_psi(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    #[serde(default = "default_family")]
    pub family: Family,
    /// Entry scale of dense designs.
    #[serde(default = "one")]
    pub scale: f64,
    /// Range of D's diagonal entries (factored designs).
    #[serde(default = "default_t")]
    pub t: f64,
    /// B is scaled by q^(−b_exponent) (factored designs).
    #[serde(default = "default_b_exponent")]
    pub b_exponent: f64,
}

fn default_family() -> Family {
    Family::Gaussian
}

fn one() -> f64 {
    1.0
}

fn default_t() -> f64 {
    DEFAULT_T
}

fn default_b_exponent() -> f64 {
    DEFAULT_B_EXPONENT
}

impl Default for DesignSection {
    fn default() -> Self {
        DesignSection {
            family: default_family(),
            scale: 1.0,
            t: DEFAULT_T,
            b_exponent: DEFAULT_B_EXPONENT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_eta")]
    pub eta_prime: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_init")]
    pub init: Initialization,
    /// Soft-threshold levels tried by DST; the best per trial is reported.
    #[serde(default = "default_lambdas")]
    pub dst_lambdas: Vec<f64>,
    /// Per-algorithm step sizes overriding `eta_prime`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub eta_by_algorithm: BTreeMap<Algorithm, f64>,
}

fn default_eta() -> f64 {
    DEFAULT_ETA
}

fn default_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

fn default_init() -> Initialization {
    Initialization::Random
}

fn default_lambdas() -> Vec<f64> {
    DEFAULT_DST_LAMBDAS.to_vec()
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            eta_prime: DEFAULT_ETA,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
            init: default_init(),
            dst_lambdas: default_lambdas(),
            eta_by_algorithm: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// R in omega_max = 3R.
    #[serde(default = "one")]
    pub signal_radius: f64,
    /// Overrides 3R when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_max: Option<f64>,
    /// Overrides π/(8T) when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<f64>,
    #[serde(default)]
    pub refine: bool,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            signal_radius: 1.0,
            omega_max: None,
            resolution: None,
            refine: false,
        }
    }
}

/// A sweep specification, read from TOML. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub trials: usize,
    pub m_grid: Vec<usize>,
    pub algorithms: Vec<Algorithm>,
    pub link: String,
    #[serde(default = "default_threshold")]
    pub success_threshold: f64,
    /// Wall-clock times make the CSV non-reproducible, so they are opt-in.
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub signal: SignalSection,
    #[serde(default)]
    pub bases: BasesSection,
    #[serde(default)]
    pub design: DesignSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub grid: GridSection,
}

fn default_threshold() -> f64 {
    DEFAULT_SUCCESS_THRESHOLD
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        ExperimentConfig::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The scaled fixture: n = 2^12, b = 16, s = 160, m from 2s to 12s in
    /// 8 steps, sigmoid link. Steps were tuned per algorithm on a separate seed.
    pub fn desk_scale() -> Self {
        let s = 160;
        let m_grid = (0..8).map(|i| 2 * s + (10 * s * i) / 7).collect();
        ExperimentConfig {
            seed: 2017,
            trials: 20,
            m_grid,
            algorithms: vec![Algorithm::StructDht, Algorithm::Dht, Algorithm::Dst],
            link: "sigmoid".into(),
            success_threshold: DEFAULT_SUCCESS_THRESHOLD,
            record_wall_time: false,
            output_dir: None,
            signal: SignalSection {
                n: 4096,
                s,
                b: 16,
                noise_sigma: 0.0,
                k: None,
            },
            bases: BasesSection::default(),
            design: DesignSection::default(),
            solver: SolverSection {
                eta_prime: 1.5,
                eta_by_algorithm: BTreeMap::from([(Algorithm::Dht, 1.0), (Algorithm::Dst, 0.5)]),
                ..SolverSection::default()
            },
            grid: GridSection::default(),
        }
    }

    pub fn link(&self) -> Result<Link> {
        self.link.parse()
    }

    pub fn validate(&self) -> Result<()> {
        let sig = &self.signal;
        check_block_dims(sig.n, sig.s, sig.b)?;
        if self.trials == 0 {
            return config_err("trials must be at least 1");
        }
        if self.m_grid.is_empty() || self.m_grid[0] == 0 {
            return config_err("m_grid must be a non-empty list of positive sample counts");
        }
        if self.m_grid.windows(2).any(|w| w[0] >= w[1]) {
            return config_err("m_grid must be strictly increasing");
        }
        if !(self.success_threshold > 0.0 && self.success_threshold < 1.0) {
            return config_err(format!(
                "success_threshold must lie in (0, 1), got {}",
                self.success_threshold
            ));
        }
        if !(sig.noise_sigma >= 0.0 && sig.noise_sigma.is_finite()) {
            return config_err("noise_sigma must be non-negative");
        }
        let link = self.link()?;
        for alg in &self.algorithms {
            let mf = *alg == Algorithm::MfStructDht;
            if mf != link.is_periodic() {
                return config_err(format!(
                    "algorithm '{alg}' cannot be used with link '{link}'"
                ));
            }
        }
        if self.algorithms.contains(&Algorithm::MfStructDht) {
            let k = sig
                .k
                .ok_or_else(|| Error::Config("the periodic pipeline needs signal.k".into()))?;
            if k == 0 {
                return config_err("signal.k must be positive");
            }
            if let Some(m) = self.m_grid.iter().find(|m| *m % k != 0) {
                return config_err(format!("m = {m} is not a multiple of k = {k}"));
            }
            self.tone_grid()?;
        }
        if self.algorithms.contains(&Algorithm::Dst)
            && (self.solver.dst_lambdas.is_empty()
                || self.solver.dst_lambdas.iter().any(|l| !(*l >= 0.0)))
        {
            return config_err("dst_lambdas must be a non-empty list of non-negative values");
        }
        if !(self.design.scale > 0.0 && self.design.t > 0.0) {
            return config_err("design scale and t must be positive");
        }
        for alg in Algorithm::all() {
            self.solver_params(alg, 0).validate(sig.n)?;
        }
        Ok(())
    }

    pub fn tone_grid(&self) -> Result<ToneGrid> {
        let g = &self.grid;
        let omega_max = g
            .omega_max
            .unwrap_or(DEFAULT_RANGE_MULTIPLIER * g.signal_radius);
        let resolution = g.resolution.unwrap_or(PI / (8.0 * self.design.t));
        Ok(ToneGrid::new(omega_max, resolution)?.with_refinement(g.refine))
    }

    /// Solver parameters for `alg` with the given solver seed.
    pub fn solver_params(&self, alg: Algorithm, seed: u64) -> SolverParams {
        let sig = &self.signal;
        let base = match alg {
            Algorithm::Dht => SolverParams::plain(sig.s),
            _ => SolverParams::block(sig.s, sig.b),
        };
        SolverParams {
            eta_prime: self.eta_for(alg),
            max_iters: self.solver.max_iters,
            tol: self.solver.tol,
            init: self.solver.init,
            seed,
            ..base
        }
    }

    /// The step used by `alg`: its override if present, else `eta_prime`.
    pub fn eta_for(&self, alg: Algorithm) -> f64 {
        self.solver
            .eta_by_algorithm
            .get(&alg)
            .copied()
            .unwrap_or(self.solver.eta_prime)
    }

    pub fn basis_descriptor(&self) -> BasisDescriptor {
        BasisDescriptor {
            phi: self.bases.phi,
            psi: self.bases.psi,
            seed: seed::derive(self.seed, &["bases"]),
        }
    }
}

// ---------------------------------------------------------------------------
// Trials
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub algorithm: Algorithm,
    pub m: usize,
    pub trial: usize,
    /// ‖β̂ − β‖/‖β‖; absent when the run failed.
    pub normalized_error: Option<f64>,
    pub success: bool,
    pub iterations: usize,
    pub wall_time_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta1_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta2_error: Option<f64>,
    /// Failure marker: the error that stopped this run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// A validated configuration with its basis pair built once.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub link: Link,
    pub bases: BasisPair,
    pub grid: Option<ToneGrid>,
}

impl Prepared {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let bases = BasisPair::from_descriptor(config.signal.n, &config.basis_descriptor())?;
        let grid = if config.algorithms.contains(&Algorithm::MfStructDht) {
            Some(config.tone_grid()?)
        } else {
            None
        };
        Ok(Prepared {
            config: config.clone(),
            link: config.link()?,
            bases,
            grid,
        })
    }

    /// Seed shared by every algorithm on grid point m, trial `trial`.
    pub fn instance_seed(&self, m: usize, trial: usize) -> u64 {
        seed::derive(
            self.config.seed,
            &["instance", &m.to_string(), &trial.to_string()],
        )
    }

    /// The instance and design seen by all algorithms at (m, trial).
    pub fn instance(
        &self,
        m: usize,
        trial: usize,
    ) -> Result<(SuperpositionInstance, DesignOperator)> {
        let c = &self.config;
        let sig = &c.signal;
        let inst_seed = self.instance_seed(m, trial);
        let design_seed = seed::derive(inst_seed, &["design"]);
        let mut signal = SignalConfig::new(sig.n, sig.s, sig.b, m).with_noise(sig.noise_sigma);
        let design = if self.link.is_periodic() {
            let k = sig
                .k
                .ok_or_else(|| Error::Config("periodic link needs signal.k".into()))?;
            signal = signal.with_factored(k, m / k);
            gen_factored_with_exponent(
                k,
                m / k,
                sig.n,
                c.design.t,
                c.design.family,
                c.design.b_exponent,
                design_seed,
            )?
        } else {
            gen_subgaussian(m, sig.n, c.design.family, c.design.scale, design_seed)?
        };
        let inst = synthesize_instance(&signal, &self.bases, &design, self.link, inst_seed)?;
        Ok((inst, design))
    }

    /// XΓ for dense designs, shared by the algorithms of one trial.
    pub fn forward_cache(&self, design: &DesignOperator) -> Result<Option<ForwardCache>> {
        match design {
            DesignOperator::Dense { x, .. } => Ok(Some(ForwardCache::new(x, &self.bases)?)),
            DesignOperator::Factored { .. } => Ok(None),
        }
    }

    /// Runs one algorithm on a prepared instance.
    pub fn solve(
        &self,
        alg: Algorithm,
        inst: &SuperpositionInstance,
        design: &DesignOperator,
        cache: Option<&ForwardCache>,
    ) -> Result<SolveResult> {
        let params = self
            .config
            .solver_params(alg, seed::derive(inst.seed, &["solver", alg.name()]));
        let mut problem = Problem::from_instance(inst, design, &self.bases)?;
        if let Some(c) = cache {
            problem = problem.with_cache(c)?;
        }
        match alg {
            Algorithm::StructDht => struct_dht(&problem, &self.link, &params, None),
            Algorithm::Dht => dht(&problem, &self.link, &params, None),
            Algorithm::Dst => {
                let mut best: Option<(f64, SolveResult)> = None;
                for &lambda in &self.config.solver.dst_lambdas {
                    let p = SolverParams {
                        lambda,
                        ..params.clone()
                    };
                    let r = dst(&problem, &self.link, &p, None)?;
                    let err = normalized_error(&r.beta_hat, inst.beta.as_slice())?;
                    if best.as_ref().is_none_or(|(e, _)| err < *e) {
                        best = Some((err, r));
                    }
                }
                best.map(|(_, r)| r)
                    .ok_or_else(|| Error::Config("dst_lambdas is empty".into()))
            }
            Algorithm::MfStructDht => {
                let grid = self
                    .grid
                    .as_ref()
                    .ok_or_else(|| Error::Config("no tone grid configured".into()))?;
                let r = mf_struct_dht(
                    inst.y.as_slice(),
                    design,
                    &self.bases,
                    &self.link,
                    grid,
                    &params,
                    None,
                )?;
                Ok(r.solve)
            }
        }
    }

    fn record(
        &self,
        alg: Algorithm,
        (m, trial): (usize, usize),
        inst: &SuperpositionInstance,
        design: &DesignOperator,
        cache: Option<&ForwardCache>,
    ) -> TrialResult {
        let start = Instant::now();
        let outcome = self.solve(alg, inst, design, cache).and_then(|r| {
            let err = normalized_error(&r.beta_hat, inst.beta.as_slice())?;
            let e1 = normalized_error(&r.theta1_hat, inst.theta_true.theta1().as_slice()).ok();
            let e2 = normalized_error(&r.theta2_hat, inst.theta_true.theta2().as_slice()).ok();
            Ok((r.iterations, err, e1, e2))
        });
        let wall = self
            .config
            .record_wall_time
            .then(|| start.elapsed().as_secs_f64());
        match outcome {
            Ok((iterations, err, e1, e2)) => TrialResult {
                algorithm: alg,
                m,
                trial,
                normalized_error: Some(err),
                success: err < self.config.success_threshold,
                iterations,
                wall_time_seconds: wall,
                theta1_error: e1,
                theta2_error: e2,
                error: None,
            },
            Err(e) => failed_row(alg, m, trial, wall, &e),
        }
    }

    /// Every configured algorithm on the shared instance at (m, trial).
    pub fn run_point(&self, m: usize, trial: usize) -> Vec<TrialResult> {
        let prepared = self
            .instance(m, trial)
            .and_then(|(inst, design)| Ok((self.forward_cache(&design)?, inst, design)));
        match prepared {
            Ok((cache, inst, design)) => self
                .config
                .algorithms
                .iter()
                .map(|&alg| self.record(alg, (m, trial), &inst, &design, cache.as_ref()))
                .collect(),
            Err(e) => self
                .config
                .algorithms
                .iter()
                .map(|&alg| failed_row(alg, m, trial, None, &e))
                .collect(),
        }
    }

    pub fn run_trial(&self, alg: Algorithm, m: usize, trial: usize) -> Result<TrialResult> {
        if !self.config.algorithms.contains(&alg) {
            let link = self.link;
            if (alg == Algorithm::MfStructDht) != link.is_periodic() {
                return config_err(format!(
                    "algorithm '{alg}' cannot be used with link '{link}'"
                ));
            }
        }
        let (inst, design) = self.instance(m, trial)?;
        let cache = self.forward_cache(&design)?;
        Ok(self.record(alg, (m, trial), &inst, &design, cache.as_ref()))
    }
}

fn failed_row(alg: Algorithm, m: usize, trial: usize, wall: Option<f64>, e: &Error) -> TrialResult {
    TrialResult {
        algorithm: alg,
        m,
        trial,
        normalized_error: None,
        success: false,
        iterations: 0,
        wall_time_seconds: wall,
        theta1_error: None,
        theta2_error: None,
        error: Some(e.to_string()),
    }
}

/// One trial; the seed depends on (seed, m, trial) so all algorithms see
/// the same instance, and the solver seed additionally on the algorithm.
pub fn run_trial(
    config: &ExperimentConfig,
    alg: Algorithm,
    m: usize,
    trial: usize,
) -> Result<TrialResult> {
    Prepared::new(config)?.run_trial(alg, m, trial)
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub algorithm: Algorithm,
    pub m: usize,
    pub trials: usize,
    pub successes: usize,
    pub failures: usize,
    pub success_probability: f64,
    /// Mean over runs that produced an estimate.
    pub mean_normalized_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: ExperimentConfig,
    pub rows: Vec<TrialResult>,
    pub aggregates: Vec<Aggregate>,
}

/// Per-(algorithm, m) aggregates, in order of first appearance.
pub fn aggregate(rows: &[TrialResult]) -> Vec<Aggregate> {
    let mut order: Vec<(Algorithm, usize)> = Vec::new();
    let mut groups: BTreeMap<(Algorithm, usize), Vec<&TrialResult>> = BTreeMap::new();
    for r in rows {
        let key = (r.algorithm, r.m);
        groups
            .entry(key)
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let successes = g.iter().filter(|r| r.success).count();
            let errors: Vec<f64> = g.iter().filter_map(|r| r.normalized_error).collect();
            Aggregate {
                algorithm: key.0,
                m: key.1,
                trials: g.len(),
                successes,
                failures: g.iter().filter(|r| r.error.is_some()).count(),
                success_probability: successes as f64 / g.len() as f64,
                mean_normalized_error: (!errors.is_empty())
                    .then(|| errors.iter().sum::<f64>() / errors.len() as f64),
            }
        })
        .collect()
}

/// Runs every (algorithm, m, trial) combination. Rows are ordered by
/// algorithm (config order), then m, then trial, at any thread count.
pub fn run_sweep(config: &ExperimentConfig, threads: Option<usize>) -> Result<SweepResult> {
    let prepared = Prepared::new(config)?;
    let points: Vec<(usize, usize)> = config
        .m_grid
        .iter()
        .flat_map(|&m| (0..config.trials).map(move |t| (m, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let per_point: Vec<Vec<TrialResult>> = pool.install(|| {
        points
            .par_iter()
            .map(|&(m, t)| prepared.run_point(m, t))
            .collect()
    });

    let mut rows = Vec::with_capacity(per_point.len() * config.algorithms.len());
    for a in 0..config.algorithms.len() {
        rows.extend(per_point.iter().map(|p| p[a].clone()));
    }
    Ok(SweepResult {
        config: config.clone(),
        aggregates: aggregate(&rows),
        rows,
    })
}

// ---------------------------------------------------------------------------
// Outputs
// ---------------------------------------------------------------------------

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_rows_csv<W: Write>(writer: W, rows: &[TrialResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER.split(','))?;
    for r in rows {
        w.write_record([
            r.algorithm.name().to_string(),
            r.m.to_string(),
            r.trial.to_string(),
            r.normalized_error
                .map_or_else(|| "NaN".to_string(), fmt_float),
            r.success.to_string(),
            r.iterations.to_string(),
            r.wall_time_seconds
                .map_or_else(String::new, |t| format!("{t:.6}")),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parses rows written by [`write_rows_csv`]; a NaN error marks a failed run.
pub fn read_rows_csv<R: Read>(reader: R) -> Result<Vec<TrialResult>> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        return config_err(format!("unexpected CSV header '{}'", header.join(",")));
    }
    let field = |rec: &csv::StringRecord, i: usize, line: usize| -> Result<String> {
        rec.get(i)
            .map(str::to_string)
            .ok_or_else(|| Error::Config(format!("row {line}: missing column {i}")))
    };
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Config(format!("row {}: bad {what}", line + 1));
        let err: f64 = field(&rec, 3, line)?
            .parse()
            .map_err(|_| bad("normalized_error"))?;
        let wall = field(&rec, 6, line)?;
        rows.push(TrialResult {
            algorithm: field(&rec, 0, line)?.parse()?,
            m: field(&rec, 1, line)?.parse().map_err(|_| bad("m"))?,
            trial: field(&rec, 2, line)?.parse().map_err(|_| bad("trial"))?,
            normalized_error: (!err.is_nan()).then_some(err),
            success: field(&rec, 4, line)?.parse().map_err(|_| bad("success"))?,
            iterations: field(&rec, 5, line)?
                .parse()
                .map_err(|_| bad("iterations"))?,
            wall_time_seconds: if wall.is_empty() {
                None
            } else {
                Some(wall.parse().map_err(|_| bad("wall_time_seconds"))?)
            },
            theta1_error: None,
            theta2_error: None,
            error: err.is_nan().then(|| "failed run".to_string()),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputKind {
    Csv,
    Json,
    SvgSuccess,
    SvgError,
}

impl OutputKind {
    pub fn file_name(&self) -> &'static str {
        match self {
            OutputKind::Csv => "results.csv",
            OutputKind::Json => "sweep.json",
            OutputKind::SvgSuccess => "success.svg",
            OutputKind::SvgError => "error.svg",
        }
    }

    pub fn all() -> [OutputKind; 4] {
        [
            OutputKind::Csv,
            OutputKind::Json,
            OutputKind::SvgSuccess,
            OutputKind::SvgError,
        ]
    }
}

/// Writes the requested artifacts into `dir` and returns their paths.
pub fn emit_outputs(sweep: &SweepResult, dir: &Path, kinds: &[OutputKind]) -> Result<Vec<PathBuf>> {
    let plots = kinds
        .iter()
        .any(|k| matches!(k, OutputKind::SvgSuccess | OutputKind::SvgError));
    if plots && sweep.rows.is_empty() {
        return config_err("cannot plot an empty sweep");
    }
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for kind in kinds {
        let path = dir.join(kind.file_name());
        match kind {
            OutputKind::Csv => write_rows_csv(fs::File::create(&path)?, &sweep.rows)?,
            OutputKind::Json => write_json(&path, sweep)?,
            OutputKind::SvgSuccess => fs::write(&path, success_chart(&sweep.aggregates)?)?,
            OutputKind::SvgError => fs::write(&path, error_chart(&sweep.aggregates)?)?,
        }
        paths.push(path);
    }
    Ok(paths)
}

const PALETTE: [RGBColor; 4] = [
    RGBColor(0x1f, 0x77, 0xb4),
    RGBColor(0xd6, 0x27, 0x28),
    RGBColor(0x2c, 0xa0, 0x2c),
    RGBColor(0x94, 0x67, 0xbd),
];

fn series(
    aggs: &[Aggregate],
    value: impl Fn(&Aggregate) -> Option<f64>,
) -> Vec<(Algorithm, Vec<(f64, f64)>)> {
    let mut out: Vec<(Algorithm, Vec<(f64, f64)>)> = Vec::new();
    for a in aggs {
        let Some(v) = value(a) else { continue };
        match out.iter_mut().find(|(alg, _)| *alg == a.algorithm) {
            Some((_, pts)) => pts.push((a.m as f64, v)),
            None => out.push((a.algorithm, vec![(a.m as f64, v)])),
        }
    }
    out
}

fn m_range(aggs: &[Aggregate]) -> std::ops::Range<f64> {
    let lo = aggs.iter().map(|a| a.m).min().unwrap_or(0) as f64;
    let hi = aggs.iter().map(|a| a.m).max().unwrap_or(1) as f64;
    if hi > lo {
        lo..hi
    } else {
        (lo - 1.0)..(hi + 1.0)
    }
}

fn plot_err<E: std::fmt::Debug>(e: E) -> Error {
    Error::Numerical(format!("chart rendering failed: {e:?}"))
}

/// Success probability vs m, one line per algorithm.
pub fn success_chart(aggs: &[Aggregate]) -> Result<String> {
    if aggs.is_empty() {
        return config_err("cannot plot an empty sweep");
    }
    let lines = series(aggs, |a| Some(a.success_probability));
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (720, 450)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption("Probability of recovery", ("sans-serif", 20))
            .margin(15)
            .x_label_area_size(45)
            .y_label_area_size(60)
            .build_cartesian_2d(m_range(aggs), 0f64..1.05f64)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("number of measurements m")
            .y_desc("success probability")
            .draw()
            .map_err(plot_err)?;
        draw_lines(&mut chart, lines)?;
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}

/// Mean normalized error vs m on a log scale, one line per algorithm.
pub fn error_chart(aggs: &[Aggregate]) -> Result<String> {
    if aggs.is_empty() {
        return config_err("cannot plot an empty sweep");
    }
    // log10 of the error on a linear axis, labelled as powers of ten
    let floor = 1e-16;
    let lines = series(aggs, |a| {
        a.mean_normalized_error
            .filter(|e| e.is_finite())
            .map(|e| e.max(floor).log10())
    });
    let (lo, hi) = lines
        .iter()
        .flat_map(|(_, p)| p.iter().map(|(_, v)| *v))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    let (lo, hi) = if lo.is_finite() {
        (lo.floor() - 0.5, hi.ceil() + 0.5)
    } else {
        (-1.0, 1.0)
    };
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (720, 450)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption("Mean normalized error", ("sans-serif", 20))
            .margin(15)
            .x_label_area_size(45)
            .y_label_area_size(70)
            .build_cartesian_2d(m_range(aggs), lo..hi)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("number of measurements m")
            .y_desc("‖β̂ − β‖ / ‖β‖")
            .y_label_formatter(&|v| format!("1e{v:.1}"))
            .draw()
            .map_err(plot_err)?;
        draw_lines(&mut chart, lines)?;
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}

fn draw_lines<'a, DB, CT>(
    chart: &mut ChartContext<'a, DB, CT>,
    lines: Vec<(Algorithm, Vec<(f64, f64)>)>,
) -> Result<()>
where
    DB: DrawingBackend + 'a,
    CT: CoordTranslate<From = (f64, f64)>,
{
    for (alg, pts) in lines {
        let color = PALETTE[Algorithm::all().iter().position(|a| *a == alg).unwrap_or(0)];
        chart
            .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(alg.name())
            .legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2))
            });
        chart
            .draw_series(pts.into_iter().map(|p| Circle::new(p, 3, color.filled())))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.9))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    Ok(())
}
