//! Problem dimensions, block-sparse signals and instance synthesis.

use nalgebra::DVector;
use rand::seq::index::sample;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::links::Link;
use crate::operators::{BasisPair, LinearOperator};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalConfig {
    pub n: usize,
    pub s: usize,
    pub b: usize,
    pub m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default)]
    pub noise_sigma: f64,
}

impl SignalConfig {
    pub fn new(n: usize, s: usize, b: usize, m: usize) -> Self {
        SignalConfig {
            n,
            s,
            b,
            m,
            q: None,
            k: None,
            noise_sigma: 0.0,
        }
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn with_factored(mut self, k: usize, q: usize) -> Self {
        self.k = Some(k);
        self.q = Some(q);
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_block_dims(self.n, self.s, self.b)?;
        if self.m == 0 {
            return config_err("m must be positive");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return config_err(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            ));
        }
        match (self.k, self.q) {
            (Some(k), Some(q)) if k * q != self.m => config_err(format!(
                "factored design needs m = k*q, got m={} k={k} q={q}",
                self.m
            )),
            (Some(0), _) | (_, Some(0)) => config_err("k and q must be positive"),
            (Some(_), None) | (None, Some(_)) => config_err("k and q must be given together"),
            _ => Ok(()),
        }
    }
}

pub(crate) fn check_block_dims(n: usize, s: usize, b: usize) -> Result<()> {
    if n == 0 || s == 0 || b == 0 {
        return config_err(format!("n, s, b must be positive (n={n}, s={s}, b={b})"));
    }
    if s > n {
        return config_err(format!("s = {s} exceeds n = {n}"));
    }
    if !s.is_multiple_of(b) || !n.is_multiple_of(b) {
        return config_err(format!("block length {b} must divide s = {s} and n = {n}"));
    }
    Ok(())
}

/// A length-n vector whose nonzeros lie inside at most s/b blocks of length b.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSparseVector {
    pub values: DVector<f64>,
    /// Sorted indices of the active blocks.
    pub block_support: Vec<usize>,
    pub block_len: usize,
}

impl BlockSparseVector {
    /// Checks the support invariant against an (s, b) budget.
    pub fn validate(&self, s: usize) -> Result<()> {
        let b = self.block_len;
        if b == 0 || !self.values.len().is_multiple_of(b) {
            return Err(Error::Domain(
                "block length does not tile the vector".into(),
            ));
        }
        if self.block_support.len() > s / b {
            return Err(Error::Domain(format!(
                "{} active blocks exceed the budget {}",
                self.block_support.len(),
                s / b
            )));
        }
        if self.block_support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain(
                "block support is not sorted and distinct".into(),
            ));
        }
        for (i, v) in self.values.iter().enumerate() {
            if *v != 0.0 && self.block_support.binary_search(&(i / b)).is_err() {
                return Err(Error::Domain(format!("nonzero at {i} outside the support")));
            }
        }
        Ok(())
    }

    pub fn nnz(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }
}

/// Draws s/b distinct blocks uniformly, fills them with standard normals and
/// scales the result to unit Euclidean norm.
pub fn make_block_sparse<R: rand::Rng>(
    n: usize,
    s: usize,
    b: usize,
    rng: &mut R,
) -> Result<BlockSparseVector> {
    check_block_dims(n, s, b)?;
    let mut blocks = sample(rng, n / b, s / b).into_vec();
    blocks.sort_unstable();
    let mut values = DVector::zeros(n);
    for &blk in &blocks {
        for i in blk * b..(blk + 1) * b {
            values[i] = StandardNormal.sample(rng);
        }
    }
    let norm = values.norm();
    if norm > 0.0 {
        values /= norm;
    }
    Ok(BlockSparseVector {
        values,
        block_support: blocks,
        block_len: b,
    })
}

/// t = [θ₁; θ₂].
#[derive(Debug, Clone, PartialEq)]
pub struct StackedCoefficients {
    pub t: DVector<f64>,
}

impl StackedCoefficients {
    pub fn new(theta1: &DVector<f64>, theta2: &DVector<f64>) -> Self {
        let n = theta1.len();
        assert_eq!(n, theta2.len(), "halves must have equal length");
        let mut t = DVector::zeros(2 * n);
        t.rows_mut(0, n).copy_from(theta1);
        t.rows_mut(n, n).copy_from(theta2);
        StackedCoefficients { t }
    }

    pub fn from_stacked(t: DVector<f64>) -> Self {
        assert!(
            t.len().is_multiple_of(2),
            "stacked vector must have even length"
        );
        StackedCoefficients { t }
    }

    pub fn zeros(n: usize) -> Self {
        StackedCoefficients {
            t: DVector::zeros(2 * n),
        }
    }

    pub fn n(&self) -> usize {
        self.t.len() / 2
    }

    pub fn theta1(&self) -> DVector<f64> {
        self.t.rows(0, self.n()).into_owned()
    }

    pub fn theta2(&self) -> DVector<f64> {
        self.t.rows(self.n(), self.n()).into_owned()
    }
}

/// A ground-truth instance y = g(Xβ) + e with β = Φθ₁ + Ψθ₂.
#[derive(Debug, Clone)]
pub struct SuperpositionInstance {
    pub config: SignalConfig,
    pub theta_true: StackedCoefficients,
    pub beta: DVector<f64>,
    pub y: DVector<f64>,
    pub e: DVector<f64>,
    pub link: Link,
    pub seed: u64,
}

/// Draws θ₁, θ₂, forms β and y. Substreams: "theta1", "theta2", "noise".
pub fn synthesize_instance(
    config: &SignalConfig,
    bases: &BasisPair,
    design: &dyn LinearOperator,
    link: Link,
    seed: u64,
) -> Result<SuperpositionInstance> {
    config.validate()?;
    if bases.n() != config.n || design.ncols() != config.n || design.nrows() != config.m {
        return config_err(format!(
            "dimension mismatch: config (m={}, n={}), bases n={}, design {}x{}",
            config.m,
            config.n,
            bases.n(),
            design.nrows(),
            design.ncols()
        ));
    }
    let theta1 = make_block_sparse(
        config.n,
        config.s,
        config.b,
        &mut seed::stream(seed, "theta1"),
    )?;
    let theta2 = make_block_sparse(
        config.n,
        config.s,
        config.b,
        &mut seed::stream(seed, "theta2"),
    )?;
    let beta = bases.synthesize(&theta1.values, &theta2.values);
    let e = if config.noise_sigma > 0.0 {
        let normal =
            Normal::new(0.0, config.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = seed::stream(seed, "noise");
        DVector::from_fn(config.m, |_, _| normal.sample(&mut rng))
    } else {
        DVector::zeros(config.m)
    };
    let xb = design.apply(&beta);
    let y = DVector::from_fn(config.m, |i, _| link.value(xb[i]) + e[i]);
    Ok(SuperpositionInstance {
        config: config.clone(),
        theta_true: StackedCoefficients::new(&theta1.values, &theta2.values),
        beta,
        y,
        e,
        link,
        seed,
    })
}

/// ‖estimate − truth‖₂ / ‖truth‖₂.
pub fn normalized_error(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::Domain(format!(
            "length mismatch {} vs {}",
            estimate.len(),
            truth.len()
        )));
    }
    let denom = truth.iter().map(|v| v * v).sum::<f64>().sqrt();
    if denom == 0.0 {
        return Err(Error::Domain("truth has zero norm".into()));
    }
    let num = estimate
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(num / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{gen_orthobasis, gen_subgaussian, BasisKind, DesignOperator, Family};
    use nalgebra::DMatrix;

    #[test]
    fn block_sparse_examples() {
        let mut rng = seed::rng_from(1);
        let v = make_block_sparse(8, 2, 2, &mut rng).unwrap();
        assert_eq!(v.block_support.len(), 1);
        assert_eq!(v.nnz(), 2);
        assert!((v.values.norm() - 1.0).abs() < 1e-14);
        v.validate(2).unwrap();

        let dense = make_block_sparse(8, 8, 2, &mut rng).unwrap();
        assert_eq!(dense.block_support, vec![0, 1, 2, 3]);

        let big = make_block_sparse(1 << 16, 656, 16, &mut rng).unwrap();
        assert_eq!(big.block_support.len(), 41);
        assert_eq!(big.nnz(), 656);
        big.validate(656).unwrap();
    }

    #[test]
    fn block_sparse_rejects_bad_dims() {
        let mut rng = seed::rng_from(1);
        assert!(matches!(
            make_block_sparse(8, 3, 2, &mut rng),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            make_block_sparse(9, 2, 2, &mut rng),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            make_block_sparse(8, 10, 2, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn validator_catches_violations() {
        let v = BlockSparseVector {
            values: DVector::from_vec(vec![1.0, 0.0, 0.0, 2.0]),
            block_support: vec![0],
            block_len: 2,
        };
        assert!(v.validate(2).is_err());
        let over = BlockSparseVector {
            values: DVector::from_vec(vec![1.0, 0.0, 0.0, 2.0]),
            block_support: vec![0, 1],
            block_len: 2,
        };
        assert!(over.validate(2).is_err());
        over.validate(4).unwrap();
    }

    #[test]
    fn normalized_error_examples() {
        let v = [0.3, -1.0, 2.0];
        assert_eq!(normalized_error(&v, &v).unwrap(), 0.0);
        assert_eq!(normalized_error(&[0.0; 3], &v).unwrap(), 1.0);
        assert_eq!(normalized_error(&[1.0, 1.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert!(normalized_error(&[1.0], &[0.0]).is_err());
        assert!(normalized_error(&[1.0], &[1.0, 2.0]).is_err());
    }

    fn identity_setup(n: usize) -> (BasisPair, DesignOperator) {
        let bases = BasisPair::new(
            gen_orthobasis(n, BasisKind::Identity, 0).unwrap(),
            gen_orthobasis(n, BasisKind::Identity, 0).unwrap(),
        )
        .unwrap();
        let x = DesignOperator::Dense {
            x: DMatrix::identity(n, n),
            descriptor: crate::operators::DesignDescriptor::Dense {
                family: Family::Gaussian,
                m: n,
                n,
                scale: 0.0,
                seed: 0,
            },
        };
        (bases, x)
    }

    #[test]
    fn identity_composition() {
        let (bases, x) = identity_setup(16);
        let cfg = SignalConfig::new(16, 4, 2, 16);
        let inst = synthesize_instance(&cfg, &bases, &x, Link::Identity, 3).unwrap();
        let expected = inst.theta_true.theta1() + inst.theta_true.theta2();
        assert_eq!(inst.y, expected);
        assert_eq!(inst.e, DVector::zeros(16));
    }

    #[test]
    fn noiseless_round_trip_and_seeding() {
        let n = 64;
        let bases = BasisPair::new(
            gen_orthobasis(n, BasisKind::Identity, 0).unwrap(),
            gen_orthobasis(n, BasisKind::DctLike, 0).unwrap(),
        )
        .unwrap();
        let x = gen_subgaussian(40, n, Family::Gaussian, 1.0, 5).unwrap();
        let cfg = SignalConfig::new(n, 8, 4, 40);
        let a = synthesize_instance(&cfg, &bases, &x, Link::Identity, 17).unwrap();
        let direct = x.apply(&bases.synthesize(&a.theta_true.theta1(), &a.theta_true.theta2()));
        assert!((&a.y - &direct).norm() <= 1e-12 * direct.norm());
        let b = synthesize_instance(&cfg, &bases, &x, Link::Identity, 17).unwrap();
        assert_eq!(a.y, b.y);
        assert_eq!(a.theta_true, b.theta_true);

        let noisy =
            synthesize_instance(&cfg.clone().with_noise(0.1), &bases, &x, Link::Identity, 17)
                .unwrap();
        assert_eq!(noisy.beta, a.beta);
        assert!((&noisy.y - &noisy.e - &a.y).norm() < 1e-12);
        assert!(noisy.e.norm() > 0.0);
    }

    #[test]
    fn sigmoid_outputs_in_open_interval() {
        let n = 32;
        let bases = BasisPair::new(
            gen_orthobasis(n, BasisKind::Identity, 0).unwrap(),
            gen_orthobasis(n, BasisKind::RandomOrthonormal, 1).unwrap(),
        )
        .unwrap();
        let x = gen_subgaussian(24, n, Family::Gaussian, 1.0, 2).unwrap();
        let cfg = SignalConfig::new(n, 4, 2, 24);
        let inst = synthesize_instance(&cfg, &bases, &x, Link::sigmoid(), 4).unwrap();
        assert!(inst.y.iter().all(|v| *v > -1.0 && *v < 1.0));
    }

    #[test]
    fn dimension_mismatch_is_a_config_error() {
        let (bases, x) = identity_setup(16);
        let cfg = SignalConfig::new(16, 4, 2, 12);
        assert!(matches!(
            synthesize_instance(&cfg, &bases, &x, Link::Identity, 0),
            Err(Error::Config(_))
        ));
        let bad = SignalConfig::new(16, 4, 2, 12).with_factored(5, 3);
        assert!(bad.validate().is_err());
        SignalConfig::new(16, 4, 2, 15)
            .with_factored(5, 3)
            .validate()
            .unwrap();
    }
}
