//! Target distributions and test functions.
//!
//! Houses the benchmark targets used throughout the crate: Gaussian mixtures
//! in any dimension (with quadrature oracles for d <= 2), the uniform
//! distribution on the S-shaped pair of annular sectors, and small discrete
//! chains such as the random walk on a cycle. Targets carry their exact
//! oracles (mean, region masses, i.i.d. sampler) where analytically or
//! numerically available so that Monte Carlo output can be checked against
//! ground truth.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::quadrature::{integrate_1d, integrate_2d};

/// Absolute tolerance for the quadrature oracles bundled with targets.
pub const ORACLE_TOL: f64 = 1e-8;

type DensityFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type SamplerFn = dyn Fn(&mut ChaCha8Rng) -> Vec<f64> + Send + Sync;

/// An unnormalized target density with optional exact oracles.
///
/// The support indicator is derived from the log density: a state is in the
/// support exactly when `log_density_unnorm` is finite, so the two can never
/// disagree.
#[derive(Clone)]
pub struct TargetModel {
    dimension: usize,
    log_density: Arc<DensityFn>,
    exact_mean: Option<Vec<f64>>,
    integration_box: Option<Vec<(f64, f64)>>,
    exact_sampler: Option<Arc<SamplerFn>>,
    normalizer: Arc<OnceLock<f64>>,
}

impl TargetModel {
    /// Wrap a raw log-density function (`-inf` marks points outside the support).
    pub fn from_log_density<F>(dimension: usize, log_density: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        TargetModel {
            dimension,
            log_density: Arc::new(log_density),
            exact_mean: None,
            integration_box: None,
            exact_sampler: None,
            normalizer: Arc::new(OnceLock::new()),
        }
    }

    /// Attach the box over which quadrature oracles integrate (d <= 2).
    pub fn with_integration_box(mut self, bounds: Vec<(f64, f64)>) -> Self {
        assert_eq!(bounds.len(), self.dimension);
        self.integration_box = Some(bounds);
        self
    }

    pub fn with_exact_mean(mut self, mean: Vec<f64>) -> Self {
        assert_eq!(mean.len(), self.dimension);
        self.exact_mean = Some(mean);
        self
    }

    /// Attach an i.i.d. sampler drawing exactly from the normalized target.
    pub fn with_exact_sampler<F>(mut self, sampler: F) -> Self
    where
        F: Fn(&mut ChaCha8Rng) -> Vec<f64> + Send + Sync + 'static,
    {
        self.exact_sampler = Some(Arc::new(sampler));
        self
    }

    fn with_known_normalizer(self, z: f64) -> Self {
        let _ = self.normalizer.set(z);
        self
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Unnormalized log density; `-inf` outside the support.
    pub fn log_density_unnorm(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dimension);
        (self.log_density)(x)
    }

    pub fn in_support(&self, x: &[f64]) -> bool {
        self.log_density_unnorm(x) > f64::NEG_INFINITY
    }

    pub fn exact_mean(&self) -> Option<&[f64]> {
        self.exact_mean.as_deref()
    }

    pub fn integration_box(&self) -> Option<&[(f64, f64)]> {
        self.integration_box.as_deref()
    }

    pub fn sample_exact(&self, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
        self.exact_sampler.as_ref().map(|s| s(rng))
    }

    pub fn has_exact_sampler(&self) -> bool {
        self.exact_sampler.is_some()
    }

    /// Integral of the unnormalized density over the integration box.
    ///
    /// `None` when no box is attached or the dimension exceeds 2.
    pub fn normalizing_constant(&self) -> Option<f64> {
        if let Some(z) = self.normalizer.get() {
            return Some(*z);
        }
        let z = self.integrate_indicator(&|_| true)?;
        let _ = self.normalizer.set(z);
        Some(z)
    }

    /// Probability mass of `{x : region(x)}` under the normalized target.
    ///
    /// Quadrature oracle, absolute tolerance [`ORACLE_TOL`]; available for
    /// d <= 2 targets carrying an integration box.
    pub fn exact_region_mass(&self, region: &dyn Fn(&[f64]) -> bool) -> Option<f64> {
        let z = self.normalizing_constant()?;
        let raw = self.integrate_indicator(region)?;
        Some(raw / z)
    }

    fn integrate_indicator(&self, region: &dyn Fn(&[f64]) -> bool) -> Option<f64> {
        let bounds = self.integration_box.as_ref()?;
        match self.dimension {
            1 => {
                let (a, b) = bounds[0];
                let f = |x: f64| {
                    let s = [x];
                    if region(&s) {
                        self.log_density_unnorm(&s).exp()
                    } else {
                        0.0
                    }
                };
                Some(integrate_1d(f, a, b, ORACLE_TOL))
            }
            2 => {
                let f = |x: f64, y: f64| {
                    let s = [x, y];
                    if region(&s) {
                        self.log_density_unnorm(&s).exp()
                    } else {
                        0.0
                    }
                };
                Some(integrate_2d(f, bounds[0], bounds[1], ORACLE_TOL))
            }
            _ => None,
        }
    }
}

/// A test function h mapping states to real vectors of fixed dimension.
#[derive(Clone)]
pub struct TestFunction {
    f: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
    output_dimension: usize,
}

impl TestFunction {
    pub fn new<F>(output_dimension: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        TestFunction {
            f: Arc::new(f),
            output_dimension,
        }
    }

    /// h(x) = x.
    pub fn identity(dimension: usize) -> Self {
        TestFunction::new(dimension, |x: &[f64]| x.to_vec())
    }

    /// h(x) = x[index].
    pub fn coordinate(index: usize) -> Self {
        TestFunction::new(1, move |x: &[f64]| vec![x[index]])
    }

    /// h(x) = 1.
    pub fn constant_one() -> Self {
        TestFunction::new(1, |_: &[f64]| vec![1.0])
    }

    pub fn output_dimension(&self) -> usize {
        self.output_dimension
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let out = (self.f)(x);
        assert_eq!(out.len(), self.output_dimension, "test function output dimension drifted");
        out
    }
}

struct MixtureComponent {
    mean: DVector<f64>,
    chol_l: DMatrix<f64>,
    inv_cov: DMatrix<f64>,
    /// ln w_k - d/2 ln(2 pi) - 1/2 ln det(cov_k)
    log_coeff: f64,
}

/// Normalized mixture of Gaussians with exact mean, sampler, and (d <= 2)
/// quadrature region-mass oracle.
pub fn gaussian_mixture(
    means: &[Vec<f64>],
    covariances: &[Vec<Vec<f64>>],
    mixture_weights: &[f64],
) -> Result<TargetModel> {
    if means.is_empty() || means.len() != covariances.len() || means.len() != mixture_weights.len()
    {
        return Err(Error::LengthMismatch(format!(
            "{} means, {} covariances, {} weights",
            means.len(),
            covariances.len(),
            mixture_weights.len()
        )));
    }
    let dim = means[0].len();
    for m in means {
        if m.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: m.len(),
            });
        }
    }
    let wsum: f64 = mixture_weights.iter().sum();
    if (wsum - 1.0).abs() > 1e-9 {
        return Err(Error::WeightsNotNormalized { sum: wsum });
    }
    for (i, &w) in mixture_weights.iter().enumerate() {
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::NonPositiveWeight { index: i, value: w });
        }
    }

    let mut components = Vec::with_capacity(means.len());
    for (k, cov) in covariances.iter().enumerate() {
        if cov.len() != dim || cov.iter().any(|row| row.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: cov.len(),
            });
        }
        let c = DMatrix::from_fn(dim, dim, |i, j| cov[i][j]);
        let scale = c.amax().max(1.0);
        if (&c - c.transpose()).amax() > 1e-9 * scale {
            return Err(Error::NotPositiveDefinite { index: k });
        }
        let chol = nalgebra::Cholesky::new(c.clone()).ok_or(Error::NotPositiveDefinite { index: k })?;
        let chol_l = chol.l();
        let log_det: f64 = 2.0 * chol_l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let inv_cov = chol.inverse();
        let log_coeff = mixture_weights[k].ln()
            - 0.5 * dim as f64 * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * log_det;
        components.push(MixtureComponent {
            mean: DVector::from_row_slice(&means[k]),
            chol_l,
            inv_cov,
            log_coeff,
        });
    }

    let exact_mean: Vec<f64> = (0..dim)
        .map(|j| {
            means
                .iter()
                .zip(mixture_weights)
                .map(|(m, w)| w * m[j])
                .sum()
        })
        .collect();

    // Box wide enough that tail mass outside it is far below ORACLE_TOL.
    let bounds: Vec<(f64, f64)> = (0..dim)
        .map(|j| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for (k, m) in means.iter().enumerate() {
                let sd = covariances[k][j][j].sqrt();
                lo = lo.min(m[j] - 12.0 * sd);
                hi = hi.max(m[j] + 12.0 * sd);
            }
            (lo, hi)
        })
        .collect();

    let comps = Arc::new(components);
    let density_comps = Arc::clone(&comps);
    let log_density = move |x: &[f64]| {
        let xv = DVector::from_row_slice(x);
        let mut best = f64::NEG_INFINITY;
        let mut terms = [0.0f64; 64];
        let mut n = 0;
        for c in density_comps.iter() {
            let d = &xv - &c.mean;
            let quad = (&c.inv_cov * &d).dot(&d);
            let t = c.log_coeff - 0.5 * quad;
            terms[n] = t;
            n += 1;
            if t > best {
                best = t;
            }
        }
        if best == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let sum: f64 = terms[..n].iter().map(|t| (t - best).exp()).sum();
        best + sum.ln()
    };

    let sampler_comps = Arc::clone(&comps);
    let weights: Vec<f64> = mixture_weights.to_vec();
    let sampler = move |rng: &mut ChaCha8Rng| {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = weights.len() - 1;
        for (i, &w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let c = &sampler_comps[k];
        let z = DVector::from_fn(c.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &c.mean + &c.chol_l * z;
        x.iter().copied().collect()
    };

    if means.len() > 64 {
        return Err(Error::InvalidConfig(
            "gaussian_mixture supports at most 64 components".into(),
        ));
    }

    Ok(TargetModel::from_log_density(dim, log_density)
        .with_integration_box(bounds)
        .with_exact_mean(exact_mean)
        .with_exact_sampler(sampler)
        .with_known_normalizer(1.0))
}

/// 1-D symmetric two-mode mixture (1/2) N(-mu, sigma^2) + (1/2) N(mu, sigma^2).
pub fn symmetric_mixture_1d(mu: f64, sigma: f64) -> TargetModel {
    gaussian_mixture(
        &[vec![-mu], vec![mu]],
        &[vec![vec![sigma * sigma]], vec![vec![sigma * sigma]]],
        &[0.5, 0.5],
    )
    .expect("valid symmetric mixture")
}

const S_R_LO: f64 = 1.0;
const S_R_HI: f64 = 1.1;

/// Membership in the annular sector S1: 1 <= r <= 1.1, theta in [pi/3, 5pi/3].
///
/// The angular constraint is equivalent to cos(theta) <= 1/2, i.e. x <= r/2.
fn in_s1(x: f64, y: f64) -> bool {
    let r = x.hypot(y);
    (S_R_LO..=S_R_HI).contains(&r) && x <= 0.5 * r
}

/// Membership in the sheared sector S2 = {(r cos t, (r-1) sin t)} with
/// t in [-2pi/3, 2pi/3], r in [1, 1.1].
///
/// For fixed x the achievable y^2 along the valid r-range is an interval,
/// which gives a closed-form section test: y^2 <= 0.01 (1 - x^2/1.21), with a
/// positive lower bound 0.75 (-2x - 1)^2 when the angle constraint forces
/// r >= -2x (x < -0.5). The degenerate r = 1 image (a segment on the x-axis)
/// is excluded; on the axis only the t = 0 branch x in [1, 1.1] counts.
fn in_s2(x: f64, y: f64) -> bool {
    if !(-0.55..=S_R_HI).contains(&x) {
        return false;
    }
    if y == 0.0 {
        return (S_R_LO..=S_R_HI).contains(&x);
    }
    let y2 = y * y;
    let max_y2 = 0.01 * (1.0 - x * x / (S_R_HI * S_R_HI));
    if y2 > max_y2 {
        return false;
    }
    if x < -0.5 {
        let min_y2 = 0.75 * (-2.0 * x - 1.0) * (-2.0 * x - 1.0);
        if y2 < min_y2 {
            return false;
        }
    }
    true
}

fn in_s_shape(x: f64, y: f64) -> bool {
    in_s1(x, y) || in_s2(x, y)
}

static S_SHAPE_MEAN: OnceLock<(Vec<f64>, f64)> = OnceLock::new();

/// Uniform distribution on the union of the two annular sectors S1 and S2.
///
/// Log density 0 on the support, -inf elsewhere; exact mean computed once by
/// 2-D quadrature and cached for the process lifetime.
pub fn s_shape_uniform() -> TargetModel {
    let (mean, area) = S_SHAPE_MEAN
        .get_or_init(|| {
            let ind = |x: f64, y: f64| if in_s_shape(x, y) { 1.0 } else { 0.0 };
            let area = integrate_2d(ind, (-1.2, 1.2), (-1.2, 1.2), 1e-9);
            let mx = integrate_2d(
                |x, y| if in_s_shape(x, y) { x } else { 0.0 },
                (-1.2, 1.2),
                (-1.2, 1.2),
                1e-9,
            );
            let my = integrate_2d(
                |x, y| if in_s_shape(x, y) { y } else { 0.0 },
                (-1.2, 1.2),
                (-1.2, 1.2),
                1e-9,
            );
            (vec![mx / area, my / area], area)
        })
        .clone();

    TargetModel::from_log_density(2, |x: &[f64]| {
        if in_s_shape(x[0], x[1]) {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    })
    .with_integration_box(vec![(-1.2, 1.2), (-1.2, 1.2)])
    .with_exact_mean(mean)
    .with_known_normalizer(area)
}

/// A finite-state Markov chain stored dense.
#[derive(Clone, Debug)]
pub struct DiscreteChain {
    transition: DMatrix<f64>,
    stationary: DVector<f64>,
    reversible: bool,
}

impl DiscreteChain {
    /// Validate and wrap a transition matrix with its stationary distribution.
    pub fn new(transition: DMatrix<f64>, stationary: DVector<f64>, reversible: bool) -> Result<Self> {
        let m = transition.nrows();
        if m == 0 || transition.ncols() != m {
            return Err(Error::InvalidChain("transition matrix must be square and nonempty".into()));
        }
        if stationary.len() != m {
            return Err(Error::LengthMismatch(format!(
                "stationary length {} vs {} states",
                stationary.len(),
                m
            )));
        }
        for i in 0..m {
            let mut row = 0.0;
            for j in 0..m {
                let k = transition[(i, j)];
                if k < 0.0 {
                    return Err(Error::InvalidChain(format!("negative entry at ({i},{j})")));
                }
                row += k;
            }
            if (row - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidChain(format!("row {i} sums to {row}")));
            }
        }
        let psum: f64 = stationary.iter().sum();
        if stationary.iter().any(|&p| p < 0.0) || (psum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidChain(format!(
                "stationary vector is not a probability vector (sum {psum})"
            )));
        }
        for j in 0..m {
            let flow: f64 = (0..m).map(|i| stationary[i] * transition[(i, j)]).sum();
            if (flow - stationary[j]).abs() > 1e-10 {
                return Err(Error::InvalidChain(format!(
                    "stationarity violated at state {j}: {flow} vs {}",
                    stationary[j]
                )));
            }
        }
        if reversible {
            for i in 0..m {
                for j in 0..m {
                    let fwd = stationary[i] * transition[(i, j)];
                    let bwd = stationary[j] * transition[(j, i)];
                    if (fwd - bwd).abs() > 1e-10 {
                        return Err(Error::InvalidChain(format!(
                            "detailed balance violated between {i} and {j}"
                        )));
                    }
                }
            }
        }
        Ok(DiscreteChain {
            transition,
            stationary,
            reversible,
        })
    }

    pub fn size(&self) -> usize {
        self.transition.nrows()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn stationary(&self) -> &DVector<f64> {
        &self.stationary
    }

    pub fn is_reversible(&self) -> bool {
        self.reversible
    }
}

/// Lazy simple random walk on the m-cycle: K(x, y) = 1/3 for |x - y| <= 1 mod m.
///
/// Uniform stationary distribution, reversible. Requires m >= 3.
pub fn cycle_walk(m: usize) -> Result<DiscreteChain> {
    if m < 3 {
        return Err(Error::ChainTooSmall { min: 3, got: m });
    }
    let mut k = DMatrix::zeros(m, m);
    let third = 1.0 / 3.0;
    for x in 0..m {
        k[(x, (x + m - 1) % m)] += third;
        k[(x, x)] += third;
        k[(x, (x + 1) % m)] += third;
    }
    let pi = DVector::from_element(m, 1.0 / m as f64);
    DiscreteChain::new(k, pi, true)
}
