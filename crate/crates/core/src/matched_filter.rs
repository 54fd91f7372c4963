//! The periodic-link pipeline: premap, per-coordinate tone estimation from
//! the block-diagonal factor D, then structured demixing of the tones.

use std::cmp::Ordering;
use std::f64::consts::PI;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::links::Link;
use crate::model::StackedCoefficients;
use crate::operators::{BasisPair, DesignOperator, FactoredDesign, LinearOperator};
use crate::solvers::{struct_dht, Problem, SolveResult, SolverParams};

/// Multiplier c in omega_max = c·R.
pub const DEFAULT_RANGE_MULTIPLIER: f64 = 3.0;
/// Coarse local maxima examined by the refinement pass.
pub const REFINE_CANDIDATES: usize = 8;
const GOLDEN_TOL: f64 = 1e-13;

/// A symmetric uniform frequency grid over [−omega_max, omega_max].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToneGrid {
    pub omega_max: f64,
    pub resolution: f64,
    /// Polish the coarse argmax with a bounded golden-section search.
    #[serde(default)]
    pub refine: bool,
}

impl ToneGrid {
    pub fn new(omega_max: f64, resolution: f64) -> Result<Self> {
        let grid = ToneGrid {
            omega_max,
            resolution,
            refine: false,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// omega_max = 3R and resolution = π/(8T).
    pub fn for_radius(radius: f64, t: f64) -> Result<Self> {
        ToneGrid::new(DEFAULT_RANGE_MULTIPLIER * radius, PI / (8.0 * t))
    }

    pub fn with_refinement(mut self, refine: bool) -> Self {
        self.refine = refine;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.omega_max) || !ok(self.resolution) {
            return config_err(format!(
                "tone grid needs positive finite omega_max and resolution, got ({}, {})",
                self.omega_max, self.resolution
            ));
        }
        Ok(())
    }

    /// Number of grid points on each side of zero.
    fn half_len(&self) -> usize {
        (self.omega_max / self.resolution).ceil().max(1.0) as usize
    }

    /// Actual spacing: omega_max / ⌈omega_max/resolution⌉ ≤ resolution.
    pub fn spacing(&self) -> f64 {
        self.omega_max / self.half_len() as f64
    }

    pub fn len(&self) -> usize {
        2 * self.half_len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The i-th frequency in ascending order; index `len()/2` is zero.
    pub fn frequency(&self, i: usize) -> f64 {
        let h = self.half_len();
        if i == h {
            0.0
        } else if i == 0 {
            -self.omega_max
        } else if i == 2 * h {
            self.omega_max
        } else {
            (i as f64 - h as f64) * self.spacing()
        }
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.frequency(i)).collect()
    }

    /// Whether `omega` sits on one of the two range endpoints.
    pub fn is_edge(&self, omega: f64) -> bool {
        omega.abs() >= self.omega_max
    }
}

/// Stage 1: map raw observations to sinusoidal ones.
pub fn premap_observations(y: &[f64], link: &Link) -> Result<Vec<f64>> {
    match link {
        Link::Sin => Ok(y.to_vec()),
        Link::Sawtooth => Ok(y.iter().map(|&v| Link::Sin.value(v)).collect()),
        other => Err(Error::UnsupportedLink(format!(
            "premap needs a periodic link, got {other}"
        ))),
    }
}

/// ⟨u, ψ_ω⟩/‖ψ_ω‖ with ψ_ω(j) = sin(ω·d_j); a zero template scores 0.
fn score(u: &[f64], d: &[f64], omega: f64) -> f64 {
    let (mut dot, mut norm2) = (0.0, 0.0);
    for (ui, di) in u.iter().zip(d) {
        let p = (omega * di).sin();
        dot += ui * p;
        norm2 += p * p;
    }
    if norm2 > 0.0 {
        dot / norm2.sqrt()
    } else {
        0.0
    }
}

/// Preference order among equal scores: smaller |ω|, then negative ω.
fn prefer(a: (f64, f64), b: (f64, f64)) -> Ordering {
    b.1.total_cmp(&a.1)
        .then(a.0.abs().total_cmp(&b.0.abs()))
        .then(a.0.total_cmp(&b.0))
}

/// Result of a single-coordinate tone search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tone {
    pub omega: f64,
    pub peak: f64,
}

/// Matched-filter tone estimate from samples u_j ≈ sin(z·d_j).
pub fn estimate_tone(u: &[f64], d: &[f64], grid: &ToneGrid) -> Result<Tone> {
    grid.validate()?;
    if u.len() != d.len() {
        return config_err(format!("{} samples but {} locations", u.len(), d.len()));
    }
    if u.len() < 2 {
        return config_err(format!(
            "tone estimation needs at least 2 samples, got {}",
            u.len()
        ));
    }
    let scored: Vec<(f64, f64)> = grid
        .frequencies()
        .into_iter()
        .map(|w| (w, score(u, d, w)))
        .collect();
    let best = *scored
        .iter()
        .min_by(|a, b| prefer(**a, **b))
        .ok_or_else(|| Error::Config("empty tone grid".into()))?;
    if !grid.refine {
        return Ok(Tone {
            omega: best.0,
            peak: best.1,
        });
    }

    // Golden-section search within one grid step of the strongest local maxima.
    let step = grid.spacing();
    let mut maxima: Vec<(f64, f64)> = (0..scored.len())
        .filter(|&i| {
            let left = i == 0 || scored[i - 1].1 <= scored[i].1;
            let right = i + 1 == scored.len() || scored[i + 1].1 <= scored[i].1;
            left && right
        })
        .map(|i| scored[i])
        .collect();
    maxima.sort_by(|a, b| prefer(*a, *b));
    maxima.truncate(REFINE_CANDIDATES);
    let mut result = best;
    for (w, _) in maxima {
        let lo = (w - step).max(-grid.omega_max);
        let hi = (w + step).min(grid.omega_max);
        let cand = golden_max(|x| score(u, d, x), lo, hi);
        if prefer(cand, result) == Ordering::Less {
            result = cand;
        }
    }
    Ok(Tone {
        omega: result.0,
        peak: result.1,
    })
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut e = a + inv_phi * (b - a);
    let (mut fc, mut fe) = (f(c), f(e));
    while b - a > GOLDEN_TOL * (1.0 + a.abs().max(b.abs())) {
        if fc >= fe {
            b = e;
            e = c;
            fe = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + inv_phi * (b - a);
            fe = f(e);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Per-coordinate tone estimates for every l in 0..q.
pub fn estimate_z(y_mapped: &[f64], design: &FactoredDesign, grid: &ToneGrid) -> Result<Vec<Tone>> {
    let (k, q) = (design.k, design.q);
    if y_mapped.len() != k * q || design.d.len() != k * q {
        return config_err(format!(
            "stride mismatch: {} observations, {} diagonal entries, k·q = {}",
            y_mapped.len(),
            design.d.len(),
            k * q
        ));
    }
    (0..q)
        .into_par_iter()
        .map(|l| {
            let u: Vec<f64> = (0..k).map(|r| y_mapped[r * q + l]).collect();
            estimate_tone(&u, &design.strided_diagonal(l), grid)
        })
        .collect()
}

/// Tone-stage diagnostics attached to a pipeline result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfDiagnostics {
    pub z_hat: Vec<f64>,
    pub peaks: Vec<f64>,
    /// Estimates that landed on ±omega_max.
    pub edge_pinned: usize,
    /// Coordinates with |z_l| > omega_max (needs the ground truth).
    pub range_violations: Option<usize>,
    pub grid: ToneGrid,
}

#[derive(Debug, Clone)]
pub struct MfResult {
    pub solve: SolveResult,
    pub diagnostics: MfDiagnostics,
}

/// Number of true tones that the grid cannot represent.
pub fn range_violations(z_true: &[f64], grid: &ToneGrid) -> usize {
    z_true.iter().filter(|z| z.abs() > grid.omega_max).count()
}

/// Step for the tone-domain problem: η′ divided by the mean diagonal
/// curvature ‖B‖²_F/(q·n), so η′ keeps the meaning it has for unit-variance designs.
pub fn surrogate_step(eta_prime: f64, design: &FactoredDesign) -> f64 {
    let (q, n) = design.b.shape();
    let curvature = design.b.norm_squared() / (q * n) as f64;
    if curvature > 0.0 {
        eta_prime / curvature
    } else {
        eta_prime
    }
}

/// Premap → tone estimation → STRUCT-DHT on (ẑ, B) with the identity link.
pub fn mf_struct_dht(
    y: &[f64],
    design: &DesignOperator,
    bases: &BasisPair,
    link: &Link,
    grid: &ToneGrid,
    params: &SolverParams,
    truth: Option<&StackedCoefficients>,
) -> Result<MfResult> {
    let factored = design
        .factored()
        .ok_or_else(|| Error::Config("the periodic pipeline needs a factored design".into()))?;
    if y.len() != design.nrows() {
        return config_err(format!(
            "{} observations for a design with {} rows",
            y.len(),
            design.nrows()
        ));
    }
    let mapped = premap_observations(y, link)?;
    let tones = estimate_z(&mapped, factored, grid)?;
    let z_hat = DVector::from_iterator(tones.len(), tones.iter().map(|t| t.omega));

    let z_true = truth.map(|th| &factored.b * bases.synthesize_stacked(&th.t));
    let mut stage = params.clone();
    stage.eta_prime = surrogate_step(params.eta_prime, factored);
    let problem = Problem::new(&z_hat, &factored.b, bases)?;
    let solve = struct_dht(&problem, &Link::Identity, &stage, truth)?;

    let diagnostics = MfDiagnostics {
        edge_pinned: tones.iter().filter(|t| grid.is_edge(t.omega)).count(),
        peaks: tones.iter().map(|t| t.peak).collect(),
        z_hat: z_hat.as_slice().to_vec(),
        range_violations: z_true.map(|z| range_violations(z.as_slice(), grid)),
        grid: grid.clone(),
    };
    Ok(MfResult { solve, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{synthesize_instance, SignalConfig};
    use crate::operators::{gen_factored, gen_orthobasis, BasisKind, Family, DEFAULT_T};
    use crate::seed;
    use rand::Rng;

    fn draw_d(k: usize, t: f64, rng: &mut impl Rng) -> Vec<f64> {
        (0..k).map(|_| rng.random_range(-t..=t)).collect()
    }

    #[test]
    fn grid_layout() {
        let g = ToneGrid::new(1.0, 0.3).unwrap();
        assert_eq!(g.len(), 9);
        let f = g.frequencies();
        assert_eq!(f[0], -1.0);
        assert_eq!(f[4], 0.0);
        assert_eq!(f[8], 1.0);
        assert!(f.windows(2).all(|w| w[1] - w[0] <= 0.3 + 1e-15));
        assert!(ToneGrid::new(0.0, 0.1).is_err());
        assert!(ToneGrid::new(1.0, f64::NAN).is_err());
        let d = ToneGrid::for_radius(1.0, 20.0).unwrap();
        assert_eq!(d.omega_max, 3.0);
        assert_eq!(d.resolution, PI / 160.0);
    }

    #[test]
    fn premap_rules() {
        let y = [0.3, -2.0, 7.0];
        assert_eq!(premap_observations(&y, &Link::Sin).unwrap(), y.to_vec());
        let x = [-4.0, 0.5, 9.0];
        let saw: Vec<f64> = x.iter().map(|&v| Link::Sawtooth.value(v)).collect();
        let sin: Vec<f64> = x.iter().map(|&v| Link::Sin.value(v)).collect();
        assert_eq!(premap_observations(&saw, &Link::Sawtooth).unwrap(), sin);
        let twice = premap_observations(
            &premap_observations(&saw, &Link::Sawtooth).unwrap(),
            &Link::Sawtooth,
        )
        .unwrap();
        assert_ne!(twice, sin);
        assert!(matches!(
            premap_observations(&y, &Link::Identity),
            Err(Error::UnsupportedLink(_))
        ));
    }

    #[test]
    fn on_grid_tones_are_exact() {
        let grid = ToneGrid::for_radius(1.0, DEFAULT_T).unwrap();
        let mut rng = seed::rng_from(5);
        for _ in 0..200 {
            let z = grid.frequency(rng.random_range(0..grid.len()));
            let d = draw_d(16, DEFAULT_T, &mut rng);
            let u: Vec<f64> = d.iter().map(|di| (z * di).sin()).collect();
            assert_eq!(estimate_tone(&u, &d, &grid).unwrap().omega, z);
        }
    }

    #[test]
    fn tone_sign_is_recovered() {
        let grid = ToneGrid::new(2.0, 0.01).unwrap();
        let d = [-3.0, 1.0, 4.5, -0.5, 2.0];
        for z in [-1.3f64, 1.3] {
            let u: Vec<f64> = d.iter().map(|di| (z * di).sin()).collect();
            assert!((estimate_tone(&u, &d, &grid).unwrap().omega - z).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_signal_picks_zero() {
        let grid = ToneGrid::new(1.0, 0.1).unwrap();
        let tone = estimate_tone(&[0.0; 6], &[1.0, -2.0, 3.0, 0.5, -1.5, 2.5], &grid).unwrap();
        assert_eq!(tone.omega, 0.0);
        assert!(estimate_tone(&[1.0], &[1.0], &grid).is_err());
        assert!(estimate_tone(&[1.0, 2.0], &[1.0], &grid).is_err());
    }

    #[test]
    fn refinement_reaches_off_grid_tones() {
        let grid = ToneGrid::for_radius(1.0, DEFAULT_T)
            .unwrap()
            .with_refinement(true);
        let mut rng = seed::rng_from(8);
        for _ in 0..100 {
            let z = rng.random_range(-2.4..2.4);
            let d = draw_d(8, DEFAULT_T, &mut rng);
            let u: Vec<f64> = d.iter().map(|di| (z * di).sin()).collect();
            let est = estimate_tone(&u, &d, &grid).unwrap().omega;
            assert!((est - z).abs() < 1e-8, "z {z} est {est}");
        }
    }

    fn mf_fixture(
        link: Link,
        seed: u64,
    ) -> (
        crate::model::SuperpositionInstance,
        DesignOperator,
        BasisPair,
    ) {
        let (n, k, q) = (64, 6, 48);
        let bases = BasisPair::new(
            gen_orthobasis(n, BasisKind::Identity, 0).unwrap(),
            gen_orthobasis(n, BasisKind::DctLike, 0).unwrap(),
        )
        .unwrap();
        let design = gen_factored(k, q, n, DEFAULT_T, Family::Gaussian, seed).unwrap();
        let config = SignalConfig::new(n, 4, 2, k * q).with_factored(k, q);
        let inst = synthesize_instance(&config, &bases, &design, link, seed).unwrap();
        (inst, design, bases)
    }

    #[test]
    fn strided_estimation_and_permutation_invariance() {
        let (inst, design, _) = mf_fixture(Link::Sin, 2);
        let fd = design.factored().unwrap();
        let grid = ToneGrid::for_radius(1.0, DEFAULT_T).unwrap();
        let z = estimate_z(inst.y.as_slice(), fd, &grid).unwrap();
        assert_eq!(z.len(), fd.q);

        // reverse the order of the k diagonal blocks in both D and y
        let (k, q) = (fd.k, fd.q);
        let mut perm = fd.clone();
        let mut y = inst.y.as_slice().to_vec();
        for r in 0..k {
            for l in 0..q {
                perm.d[r * q + l] = fd.d[(k - 1 - r) * q + l];
                y[r * q + l] = inst.y[(k - 1 - r) * q + l];
            }
        }
        let zp = estimate_z(&y, &perm, &grid).unwrap();
        for (a, b) in z.iter().zip(&zp) {
            assert!((a.omega - b.omega).abs() <= grid.spacing() * 1e-9 || a.omega == b.omega);
        }
        assert!(estimate_z(&y[1..], fd, &grid).is_err());
    }

    #[test]
    fn single_stride_is_one_tone() {
        let mut rng = seed::rng_from(1);
        let d = draw_d(10, DEFAULT_T, &mut rng);
        let fd = FactoredDesign {
            d: d.clone(),
            b: nalgebra::DMatrix::from_element(1, 3, 1.0),
            k: 10,
            q: 1,
            t: DEFAULT_T,
        };
        let grid = ToneGrid::new(2.0, 0.05).unwrap();
        let u: Vec<f64> = d.iter().map(|x| (0.5 * x).sin()).collect();
        let z = estimate_z(&u, &fd, &grid).unwrap();
        assert_eq!(z[0], estimate_tone(&u, &d, &grid).unwrap());
    }

    #[test]
    fn pipeline_equals_manual_stages_and_links_agree() {
        let (sin_inst, design, bases) = mf_fixture(Link::Sin, 4);
        let (saw_inst, _, _) = mf_fixture(Link::Sawtooth, 4);
        let grid = ToneGrid::for_radius(1.0, DEFAULT_T)
            .unwrap()
            .with_refinement(true);
        let mut params = SolverParams::block(4, 2);
        params.eta_prime = 0.6;
        let a = mf_struct_dht(
            sin_inst.y.as_slice(),
            &design,
            &bases,
            &Link::Sin,
            &grid,
            &params,
            None,
        )
        .unwrap();
        let b = mf_struct_dht(
            saw_inst.y.as_slice(),
            &design,
            &bases,
            &Link::Sawtooth,
            &grid,
            &params,
            None,
        )
        .unwrap();
        assert_eq!(a.diagnostics.z_hat, b.diagnostics.z_hat);
        assert_eq!(a.solve.beta_hat, b.solve.beta_hat);

        let fd = design.factored().unwrap();
        let z = DVector::from_vec(a.diagnostics.z_hat.clone());
        let manual_params = SolverParams {
            eta_prime: surrogate_step(0.6, fd),
            ..params.clone()
        };
        let problem = Problem::new(&z, &fd.b, &bases).unwrap();
        let manual = struct_dht(&problem, &Link::Identity, &manual_params, None).unwrap();
        assert_eq!(manual.beta_hat, a.solve.beta_hat);

        assert!(mf_struct_dht(
            sin_inst.y.as_slice(),
            &design,
            &bases,
            &Link::sigmoid(),
            &grid,
            &params,
            None
        )
        .is_err());
    }

    #[test]
    fn range_guard_counts() {
        let grid = ToneGrid::new(1.0, 0.1).unwrap();
        assert_eq!(range_violations(&[0.5, -1.5, 1.0, 2.0], &grid), 2);
        let (inst, design, bases) = mf_fixture(Link::Sin, 6);
        let tiny = ToneGrid::new(1e-3, 1e-4).unwrap();
        let params = SolverParams::block(4, 2);
        let r = mf_struct_dht(
            inst.y.as_slice(),
            &design,
            &bases,
            &Link::Sin,
            &tiny,
            &params,
            Some(&inst.theta_true),
        )
        .unwrap();
        assert!(r.diagnostics.range_violations.unwrap() > 0);
        assert!(r.diagnostics.edge_pinned > 0);
    }
}
