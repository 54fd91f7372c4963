//! Restricted curvature estimates, the step-size window and convergence rates.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::links::Link;
use crate::model::StackedCoefficients;
use crate::seed;
use crate::solvers::Problem;

/// Supports larger than this use power iterations instead of a full
/// symmetric eigendecomposition.
pub const DENSE_EIGEN_LIMIT: usize = 512;
/// Default multiplier c in the probed level c·s.
pub const DEFAULT_LEVEL_MULTIPLIER: usize = 6;

/// (1/m) (XΓ)_ξᵀ diag(g′(XΓt)) (XΓ)_ξ.
pub fn restricted_hessian(
    t: &StackedCoefficients,
    support: &[usize],
    problem: &Problem<'_>,
    link: &Link,
) -> Result<DMatrix<f64>> {
    let two_n = 2 * problem.n();
    if let Some(&bad) = support.iter().find(|&&j| j >= two_n) {
        return config_err(format!("support index {bad} out of range 0..{two_n}"));
    }
    let a = problem.forward(&t.t);
    let weights = a.map(|v| link.derivative(v));
    let cols = restricted_columns(support, problem);
    Ok(weighted_gram(&cols, &weights, problem.m()))
}

/// Columns of XΓ indexed by `support`.
fn restricted_columns(support: &[usize], problem: &Problem<'_>) -> DMatrix<f64> {
    let m = problem.m();
    let mut out = DMatrix::zeros(m, support.len());
    for (c, &j) in support.iter().enumerate() {
        let col = problem.design.apply(&problem.bases.gamma_column(j));
        out.set_column(c, &col);
    }
    out
}

fn weighted_gram(cols: &DMatrix<f64>, weights: &DVector<f64>, m: usize) -> DMatrix<f64> {
    let mut scaled = cols.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= weights[i];
    }
    let h = cols.tr_mul(&scaled) / m as f64;
    (&h + h.transpose()) * 0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimate {
    pub level: usize,
    pub m_hat: f64,
    #[serde(rename = "M_hat")]
    pub big_m_hat: f64,
    pub trials: usize,
    pub points: String,
}

fn extremal_eigenvalues(h: &DMatrix<f64>) -> (f64, f64) {
    let dim = h.nrows();
    if dim == 0 {
        return (0.0, 0.0);
    }
    if dim <= DENSE_EIGEN_LIMIT {
        let ev = h.symmetric_eigenvalues();
        return (ev.min(), ev.max());
    }
    // shifted power iterations: top of H, then top of (λmax I − H)
    let top = power_top(h, 0.0);
    let shifted = power_top(h, top);
    (top - shifted, top)
}

/// Largest eigenvalue of `shift·I − H` when shift > 0, else of H.
fn power_top(h: &DMatrix<f64>, shift: f64) -> f64 {
    let dim = h.nrows();
    let mut v = DVector::from_fn(dim, |i, _| 1.0 + (i as f64 * 0.618).sin() * 0.5);
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..5000 {
        let mut w = h * &v;
        if shift > 0.0 {
            w = &v * shift - w;
        }
        let next = v.dot(&w);
        let wn = w.norm();
        if wn == 0.0 {
            return 0.0;
        }
        v = w / wn;
        if (next - lambda).abs() <= 1e-12 * next.abs().max(1e-300) {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// A level-sized support: per half, ⌈(level/2)/b⌉ random blocks (capped at n/b).
/// When `mirror` is set the second half reuses the first half's blocks.
fn draw_support(n: usize, level: usize, b: usize, mirror: bool, rng: &mut impl Rng) -> Vec<usize> {
    let nblocks = n / b;
    let per_half = (level / 2).div_ceil(b).min(nblocks).max(1);
    let mut first = sample(rng, nblocks, per_half).into_vec();
    first.sort_unstable();
    let second = if mirror {
        first.clone()
    } else {
        let mut s = sample(rng, nblocks, per_half).into_vec();
        s.sort_unstable();
        s
    };
    let mut support = Vec::with_capacity(2 * per_half * b);
    for &blk in &first {
        support.extend(blk * b..(blk + 1) * b);
    }
    for &blk in &second {
        support.extend(n + blk * b..n + (blk + 1) * b);
    }
    support
}

/// Inner estimates of the SRSC/SRSS constants at sparsity level `level`.
///
/// Each trial draws its own support (odd trials share blocks between the
/// two halves) and evaluates the restricted Hessian at a random unit-norm
/// point on that support, at zero, and at `truth` if given.
pub fn estimate_srsc_srss(
    problem: &Problem<'_>,
    link: &Link,
    level: usize,
    block_len: usize,
    trials: usize,
    seed: u64,
    truth: Option<&StackedCoefficients>,
) -> Result<SpectralEstimate> {
    let n = problem.n();
    if trials == 0 {
        return config_err("trials must be at least 1");
    }
    if level == 0 || level > 2 * n {
        return config_err(format!("level must lie in 1..={}, got {level}", 2 * n));
    }
    if block_len == 0 || !n.is_multiple_of(block_len) {
        return config_err(format!("block length {block_len} must divide n = {n}"));
    }
    let mut m_hat = f64::INFINITY;
    let mut big_m_hat = 0.0f64;
    for trial in 0..trials {
        let mut rng = seed::rng_from(seed::derive_index(seed, "srsc", trial as u64));
        let support = draw_support(n, level, block_len, trial % 2 == 1, &mut rng);
        let cols = restricted_columns(&support, problem);

        let mut probe = DVector::zeros(2 * n);
        for &j in &support {
            probe[j] = StandardNormal.sample(&mut rng);
        }
        let norm = probe.norm();
        if norm > 0.0 {
            probe /= norm;
        }
        let mut points = vec![
            StackedCoefficients::from_stacked(probe),
            StackedCoefficients::zeros(n),
        ];
        if let Some(th) = truth {
            points.push(th.clone());
        }
        for t in &points {
            let a = problem.forward(&t.t);
            let weights = a.map(|v| link.derivative(v));
            let h = weighted_gram(&cols, &weights, problem.m());
            let (lo, hi) = extremal_eigenvalues(&h);
            m_hat = m_hat.min(lo);
            big_m_hat = big_m_hat.max(hi);
        }
    }
    Ok(SpectralEstimate {
        level,
        m_hat: m_hat.max(0.0),
        big_m_hat,
        trials,
        points: if truth.is_some() {
            "random unit-norm on support, zero, truth".into()
        } else {
            "random unit-norm on support, zero".into()
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepWindow {
    pub lower: f64,
    pub upper: f64,
    pub condition_ok: bool,
}

/// (0.5/M̂, 1.5/m̂) and whether M̂/m̂ ≤ 2/√3.
pub fn step_size_window(m_hat: f64, big_m_hat: f64) -> Result<StepWindow> {
    if !(m_hat > 0.0) {
        return Err(Error::DegenerateCurvature(m_hat));
    }
    if big_m_hat < m_hat {
        return Err(Error::Domain(format!(
            "M_hat = {big_m_hat} is below m_hat = {m_hat}"
        )));
    }
    Ok(StepWindow {
        lower: 0.5 / big_m_hat,
        upper: 1.5 / m_hat,
        condition_ok: big_m_hat / m_hat <= 2.0 / 3f64.sqrt(),
    })
}

/// rho = 2·√(1 + η′²M̂² − 2η′m̂).
pub fn theoretical_rate(eta_prime: f64, m_hat: f64, big_m_hat: f64) -> Result<f64> {
    let radicand = 1.0 + eta_prime * eta_prime * big_m_hat * big_m_hat - 2.0 * eta_prime * m_hat;
    if radicand < 0.0 {
        return Err(Error::Domain(format!(
            "negative radicand {radicand} for (eta'={eta_prime}, m={m_hat}, M={big_m_hat})"
        )));
    }
    Ok(2.0 * radicand.sqrt())
}

/// Default step 1/(2M̂).
pub fn default_step(big_m_hat: f64) -> Result<f64> {
    if !(big_m_hat > 0.0) {
        return Err(Error::DegenerateCurvature(big_m_hat));
    }
    Ok(0.5 / big_m_hat)
}

/// Per-iteration contraction fitted by least squares on log(error) over the
/// tail of the trace (first 20% discarded). A trace that hits zero is cut at
/// the first zero; a trace that is exactly zero after one entry gives 0.
pub fn empirical_rate(error_trace: &[f64]) -> Result<f64> {
    if error_trace.len() < 5 {
        return Err(Error::Domain(format!(
            "need at least 5 trace entries, got {}",
            error_trace.len()
        )));
    }
    if let Some(bad) = error_trace.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Domain(format!("invalid trace entry {bad}")));
    }
    let end = error_trace
        .iter()
        .position(|&v| v == 0.0)
        .unwrap_or(error_trace.len());
    let prefix = &error_trace[..end];
    if prefix.len() < 2 {
        return Ok(0.0);
    }
    let skip = if end == error_trace.len() {
        prefix.len() / 5
    } else {
        0
    };
    let tail = &prefix[skip..];
    let tail = if tail.len() < 2 {
        &prefix[prefix.len() - 2..]
    } else {
        tail
    };
    let k = tail.len() as f64;
    let xs = (0..tail.len()).map(|i| i as f64);
    let x_mean = (k - 1.0) / 2.0;
    let y: Vec<f64> = tail.iter().map(|v| v.ln()).collect();
    let y_mean = y.iter().sum::<f64>() / k;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, yi) in xs.zip(&y) {
        sxy += (x - x_mean) * (yi - y_mean);
        sxx += (x - x_mean) * (x - x_mean);
    }
    Ok((sxy / sxx).exp())
}

/// Report emitted by the `analyze` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub level: usize,
    pub m_hat: f64,
    #[serde(rename = "M_hat")]
    pub big_m_hat: f64,
    pub window: Option<(f64, f64)>,
    pub condition_ok: bool,
    pub default_step: Option<f64>,
    pub rho_at_default_step: Option<f64>,
    pub trials: usize,
}

impl AnalysisReport {
    pub fn from_estimate(est: &SpectralEstimate) -> Self {
        let window = step_size_window(est.m_hat, est.big_m_hat).ok();
        let step = default_step(est.big_m_hat).ok();
        let rho = step.and_then(|eta| theoretical_rate(eta, est.m_hat, est.big_m_hat).ok());
        AnalysisReport {
            level: est.level,
            m_hat: est.m_hat,
            big_m_hat: est.big_m_hat,
            window: window.map(|w| (w.lower, w.upper)),
            condition_ok: window.is_some_and(|w| w.condition_ok),
            default_step: step,
            rho_at_default_step: rho,
            trials: est.trials,
        }
    }
}
