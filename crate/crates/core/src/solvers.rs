//! Loss, projections and the hard/soft thresholding demixing solvers.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::links::Link;
use crate::model::{
    check_block_dims, BlockSparseVector, StackedCoefficients, SuperpositionInstance,
};
use crate::operators::{BasisPair, LinearOperator};
use crate::seed;

pub const DEFAULT_ETA: f64 = 0.5;
pub const DEFAULT_TOL: f64 = 1e-7;
pub const DEFAULT_MAX_ITERS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SparsityModel {
    /// s nonzeros per half in s/b contiguous blocks of length b.
    Block { s: usize, b: usize },
    /// s nonzeros per half, anywhere.
    Plain { s: usize },
}

impl SparsityModel {
    /// (s, b) with plain sparsity read as block length 1.
    pub fn as_blocks(&self) -> (usize, usize) {
        match *self {
            SparsityModel::Block { s, b } => (s, b),
            SparsityModel::Plain { s } => (s, 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Initialization {
    /// Seeded standard normal, projected onto the constraint set, unit norm.
    Random,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub eta_prime: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub sparsity_model: SparsityModel,
    /// Soft-threshold level (DST only).
    pub lambda: f64,
    pub trace: bool,
    pub init: Initialization,
    pub seed: u64,
}

impl SolverParams {
    pub fn block(s: usize, b: usize) -> Self {
        SolverParams {
            eta_prime: DEFAULT_ETA,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
            sparsity_model: SparsityModel::Block { s, b },
            lambda: 0.0,
            trace: false,
            init: Initialization::Random,
            seed: 0,
        }
    }

    pub fn plain(s: usize) -> Self {
        SolverParams {
            sparsity_model: SparsityModel::Plain { s },
            ..SolverParams::block(s, 1)
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.eta_prime > 0.0 && self.eta_prime.is_finite()) {
            return config_err(format!(
                "step size must be positive, got {}",
                self.eta_prime
            ));
        }
        if self.max_iters == 0 {
            return config_err("max_iters must be at least 1");
        }
        if !(self.tol >= 0.0) || !(self.lambda >= 0.0) {
            return config_err("tol and lambda must be non-negative");
        }
        let (s, b) = self.sparsity_model.as_blocks();
        check_block_dims(n, s, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceKind {
    /// ‖tᵏ − θ‖₂ against a supplied ground truth.
    Error,
    /// Loss value F(tᵏ).
    Loss,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveResult {
    pub theta1_hat: Vec<f64>,
    pub theta2_hat: Vec<f64>,
    pub beta_hat: Vec<f64>,
    pub iterations: usize,
    pub trace_kind: TraceKind,
    pub error_trace: Vec<f64>,
    /// False for soft thresholding, whose output is not forced onto the model.
    pub sparsity_enforced: bool,
}

impl SolveResult {
    pub fn stacked(&self) -> StackedCoefficients {
        StackedCoefficients::new(
            &DVector::from_column_slice(&self.theta1_hat),
            &DVector::from_column_slice(&self.theta2_hat),
        )
    }
}

/// Observations together with the operators that produced them.
#[derive(Clone, Copy)]
pub struct Problem<'a> {
    pub y: &'a DVector<f64>,
    pub design: &'a dyn LinearOperator,
    pub bases: &'a BasisPair,
    cache: Option<&'a ForwardCache>,
}

/// The explicit m×2n matrix XΓ, letting the forward map of a sparse
/// iterate touch only the columns on its support.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    a: DMatrix<f64>,
}

impl ForwardCache {
    /// Row i of XΓ is (Γᵀxᵢ)ᵀ, so the cache costs m basis analyses.
    pub fn new(x: &DMatrix<f64>, bases: &BasisPair) -> Result<Self> {
        if x.ncols() != bases.n() {
            return config_err(format!(
                "design has {} columns, bases n = {}",
                x.ncols(),
                bases.n()
            ));
        }
        let mut a = DMatrix::zeros(x.nrows(), 2 * bases.n());
        for (i, row) in x.row_iter().enumerate() {
            let analyzed = bases.analyze_stacked(&row.transpose());
            a.row_mut(i).copy_from(&analyzed.transpose());
        }
        Ok(ForwardCache { a })
    }
}

impl<'a> Problem<'a> {
    pub fn new(
        y: &'a DVector<f64>,
        design: &'a dyn LinearOperator,
        bases: &'a BasisPair,
    ) -> Result<Self> {
        if design.nrows() != y.len() || design.ncols() != bases.n() {
            return config_err(format!(
                "problem dimensions disagree: y has {}, design is {}x{}, bases n = {}",
                y.len(),
                design.nrows(),
                design.ncols(),
                bases.n()
            ));
        }
        Ok(Problem {
            y,
            design,
            bases,
            cache: None,
        })
    }

    /// Uses `cache` (built from the same design and bases) for sparse forward maps.
    pub fn with_cache(mut self, cache: &'a ForwardCache) -> Result<Self> {
        if cache.a.shape() != (self.m(), 2 * self.n()) {
            return config_err("forward cache does not match the problem dimensions");
        }
        self.cache = Some(cache);
        Ok(self)
    }

    pub fn from_instance(
        instance: &'a SuperpositionInstance,
        design: &'a dyn LinearOperator,
        bases: &'a BasisPair,
    ) -> Result<Self> {
        Problem::new(&instance.y, design, bases)
    }

    pub fn m(&self) -> usize {
        self.y.len()
    }

    pub fn n(&self) -> usize {
        self.bases.n()
    }

    /// X Γ t.
    pub fn forward(&self, t: &DVector<f64>) -> DVector<f64> {
        if let Some(cache) = self.cache {
            let nnz = t.iter().filter(|v| **v != 0.0).count();
            if nnz <= t.len() / 4 {
                let mut out = DVector::zeros(self.m());
                for (j, &v) in t.iter().enumerate().filter(|(_, v)| **v != 0.0) {
                    out.axpy(v, &cache.a.column(j), 1.0);
                }
                return out;
            }
        }
        self.design.apply(&self.bases.synthesize_stacked(t))
    }

    /// Γᵀ Xᵀ r.
    pub fn adjoint(&self, r: &DVector<f64>) -> DVector<f64> {
        self.bases.analyze_stacked(&self.design.apply_adjoint(r))
    }
}

// ---------------------------------------------------------------------------
// Projections
// ---------------------------------------------------------------------------

/// Indices of the `keep` largest-energy blocks, ties to the lower index; sorted.
fn top_blocks(v: &[f64], b: usize, keep: usize) -> Vec<usize> {
    let mut energy: Vec<(usize, f64)> = v
        .chunks(b)
        .enumerate()
        .map(|(i, blk)| (i, blk.iter().map(|x| x * x).sum()))
        .collect();
    let by_energy = |a: &(usize, f64), c: &(usize, f64)| -> Ordering {
        c.1.total_cmp(&a.1).then(a.0.cmp(&c.0))
    };
    if keep < energy.len() {
        if keep > 0 {
            energy.select_nth_unstable_by(keep - 1, by_energy);
        }
        energy.truncate(keep);
    }
    let mut blocks: Vec<usize> = energy.into_iter().map(|(i, _)| i).collect();
    blocks.sort_unstable();
    blocks
}

fn project_in_place(v: &mut [f64], s: usize, b: usize) -> Vec<usize> {
    let blocks = top_blocks(v, b, s / b);
    let mut next = blocks.iter().peekable();
    for (i, chunk) in v.chunks_mut(b).enumerate() {
        if next.peek() == Some(&&i) {
            next.next();
        } else {
            chunk.iter_mut().for_each(|x| *x = 0.0);
        }
    }
    blocks
}

/// Euclidean projection onto (s, b) block-sparse vectors.
pub fn project_block_sparse(v: &[f64], s: usize, b: usize) -> Result<BlockSparseVector> {
    check_block_dims(v.len(), s, b)?;
    let mut values = v.to_vec();
    let blocks = project_in_place(&mut values, s, b);
    Ok(BlockSparseVector {
        values: DVector::from_vec(values),
        block_support: blocks,
        block_len: b,
    })
}

/// Projects each half of a stacked vector independently.
pub fn project_stacked(t: &[f64], s: usize, b: usize) -> Result<StackedCoefficients> {
    if !t.len().is_multiple_of(2) {
        return config_err("stacked vector must have even length");
    }
    let n = t.len() / 2;
    check_block_dims(n, s, b)?;
    let mut out = t.to_vec();
    let (first, second) = out.split_at_mut(n);
    project_in_place(first, s, b);
    project_in_place(second, s, b);
    Ok(StackedCoefficients::from_stacked(DVector::from_vec(out)))
}

/// sign(x)·max(|x| − τ, 0).
#[inline]
pub fn soft_threshold(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// F(t) = (1/m) Σ Θ(xᵢᵀΓt) − yᵢ xᵢᵀΓt.
pub fn loss_value(t: &StackedCoefficients, problem: &Problem<'_>, link: &Link) -> f64 {
    let a = problem.forward(&t.t);
    loss_from_forward(&a, problem.y, link)
}

fn loss_from_forward(a: &DVector<f64>, y: &DVector<f64>, link: &Link) -> f64 {
    let m = y.len() as f64;
    a.iter()
        .zip(y.iter())
        .map(|(&ai, &yi)| link.antiderivative(ai) - yi * ai)
        .sum::<f64>()
        / m
}

/// (1/m) Γᵀ Xᵀ (g(XΓt) − y), i.e. [Φᵀ·; Ψᵀ·] applied to the residual.
pub fn loss_gradient(t: &StackedCoefficients, problem: &Problem<'_>, link: &Link) -> DVector<f64> {
    let a = problem.forward(&t.t);
    gradient_from_forward(&a, problem, link)
}

fn gradient_from_forward(a: &DVector<f64>, problem: &Problem<'_>, link: &Link) -> DVector<f64> {
    let m = problem.m() as f64;
    let r = DVector::from_fn(a.len(), |i, _| (link.value(a[i]) - problem.y[i]) / m);
    problem.adjoint(&r)
}

// ---------------------------------------------------------------------------
// Solvers
// ---------------------------------------------------------------------------

fn initial_point(n: usize, params: &SolverParams) -> DVector<f64> {
    match params.init {
        Initialization::Zero => DVector::zeros(2 * n),
        Initialization::Random => {
            let mut rng = seed::stream(params.seed, "init");
            let raw: Vec<f64> = (0..2 * n)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let (s, b) = params.sparsity_model.as_blocks();
            let mut t = DVector::from_vec(raw);
            let (first, second) = t.as_mut_slice().split_at_mut(n);
            project_in_place(first, s, b);
            project_in_place(second, s, b);
            let norm = t.norm();
            if norm > 0.0 {
                t /= norm;
            }
            t
        }
    }
}

enum Update {
    Hard { s: usize, b: usize },
    Soft { tau: f64 },
}

fn iterate(
    problem: &Problem<'_>,
    link: &Link,
    params: &SolverParams,
    truth: Option<&StackedCoefficients>,
    update: Update,
) -> Result<SolveResult> {
    let n = problem.n();
    params.validate(n)?;
    if let Some(th) = truth {
        if th.t.len() != 2 * n {
            return config_err("ground truth has the wrong length");
        }
    }
    let mut t = initial_point(n, params);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut a = problem.forward(&t);
    for _ in 0..params.max_iters {
        let grad = gradient_from_forward(&a, problem, link);
        let mut next = &t - grad * params.eta_prime;
        match update {
            Update::Hard { s, b } => {
                let (first, second) = next.as_mut_slice().split_at_mut(n);
                project_in_place(first, s, b);
                project_in_place(second, s, b);
            }
            Update::Soft { tau } => next.apply(|x| *x = soft_threshold(*x, tau)),
        }
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite iterate at iteration {}",
                iterations + 1
            )));
        }
        iterations += 1;
        let change = (&next - &t).norm();
        let prev_norm = t.norm();
        t = next;
        a = problem.forward(&t);
        if params.trace {
            trace.push(match truth {
                Some(th) => (&t - &th.t).norm(),
                None => loss_from_forward(&a, problem.y, link),
            });
        }
        if change == 0.0 || change < params.tol * prev_norm {
            break;
        }
    }
    let stacked = StackedCoefficients::from_stacked(t);
    let (theta1, theta2) = (stacked.theta1(), stacked.theta2());
    let beta = problem.bases.synthesize(&theta1, &theta2);
    Ok(SolveResult {
        theta1_hat: theta1.as_slice().to_vec(),
        theta2_hat: theta2.as_slice().to_vec(),
        beta_hat: beta.as_slice().to_vec(),
        iterations,
        trace_kind: if truth.is_some() {
            TraceKind::Error
        } else {
            TraceKind::Loss
        },
        error_trace: trace,
        sparsity_enforced: matches!(update, Update::Hard { .. }),
    })
}

fn require_aperiodic(link: &Link) -> Result<()> {
    if link.is_periodic() {
        return Err(Error::UnsupportedLink(format!(
            "'{}' is periodic; use the matched-filter pipeline",
            link.name()
        )));
    }
    Ok(())
}

/// Projected gradient descent with block hard thresholding of each half
/// (plain top-s thresholding when the sparsity model is `Plain`).
pub fn struct_dht(
    problem: &Problem<'_>,
    link: &Link,
    params: &SolverParams,
    truth: Option<&StackedCoefficients>,
) -> Result<SolveResult> {
    require_aperiodic(link)?;
    let (s, b) = params.sparsity_model.as_blocks();
    iterate(problem, link, params, truth, Update::Hard { s, b })
}

/// Unstructured baseline: [`struct_dht`] with plain s-sparsity per half.
pub fn dht(
    problem: &Problem<'_>,
    link: &Link,
    params: &SolverParams,
    truth: Option<&StackedCoefficients>,
) -> Result<SolveResult> {
    let (s, _) = params.sparsity_model.as_blocks();
    let plain = SolverParams {
        sparsity_model: SparsityModel::Plain { s },
        ..params.clone()
    };
    struct_dht(problem, link, &plain, truth)
}

/// Soft-thresholding baseline: tᵏ⁺¹ = soft(tᵏ − η′∇F(tᵏ), η′λ).
pub fn dst(
    problem: &Problem<'_>,
    link: &Link,
    params: &SolverParams,
    truth: Option<&StackedCoefficients>,
) -> Result<SolveResult> {
    require_aperiodic(link)?;
    iterate(
        problem,
        link,
        params,
        truth,
        Update::Soft {
            tau: params.eta_prime * params.lambda,
        },
    )
}
