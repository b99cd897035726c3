//! Bridge-sampling estimation of region weights w_i = pi(Omega_i).
//!
//! For each region a normal or student-t proposal p_i is moment-matched to
//! the pooled region samples, and the unnormalized constant is estimated by
//! the single-pass geometric-bridge ratio
//!
//! ```text
//! c_i = mean_j[ pi_i(theta_j) a(theta_j) ] / mean_x[ p_i(x) a(x) ],
//! a = (p_i * pi_i)^(-1/2),  theta_j ~ p_i,  x in X_i,
//! ```
//!
//! computed entirely in log space with max-subtraction so densities spanning
//! 1e+-300 stay finite. The renormalized vector w_i = c_i / sum_j c_j is the
//! weight estimate.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Cap on proposal draws per region (the paper's ratio uses |X_i| draws,
/// which is wasteful for very large pooled histories).
const MAX_PROPOSAL_DRAWS: usize = 100_000;

/// Default degrees of freedom for the student-t bridge family.
pub const DEFAULT_STUDENT_DOF: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeFamily {
    Gaussian,
    StudentT,
}

/// Moment-matched, normalized proposal density used as the bridge reference.
#[derive(Clone, Debug)]
pub struct BridgeProposal {
    family: BridgeFamily,
    dof: Option<f64>,
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    chol_l: DMatrix<f64>,
    inv_cov: DMatrix<f64>,
    /// family-specific additive constant of the log density
    log_coeff: f64,
}

impl BridgeProposal {
    pub fn family(&self) -> BridgeFamily {
        self.family
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn dof(&self) -> Option<f64> {
        self.dof
    }

    /// Normalized log density.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let xv = DVector::from_row_slice(x);
        let d = &xv - &self.mean;
        let quad = (&self.inv_cov * &d).dot(&d);
        match self.family {
            BridgeFamily::Gaussian => self.log_coeff - 0.5 * quad,
            BridgeFamily::StudentT => {
                let nu = self.dof.expect("student proposal carries dof");
                let dim = self.mean.len() as f64;
                self.log_coeff - 0.5 * (nu + dim) * (1.0 + quad / nu).ln()
            }
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let dim = self.mean.len();
        let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut x = &self.mean + &self.chol_l * z;
        if self.family == BridgeFamily::StudentT {
            let nu = self.dof.expect("student proposal carries dof");
            let w: f64 = ChiSquared::new(nu).expect("positive dof").sample(rng);
            let scale = (nu / w).sqrt();
            x = &self.mean + (&x - &self.mean) * scale;
        }
        x.iter().copied().collect()
    }
}

/// Fit a bridge proposal to the pooled samples of one region.
///
/// Mean and covariance are the empirical moments; the covariance gets a ridge
/// `1e-8 * trace / d` (floored at 1e-8 when the samples are degenerate) so it
/// stays invertible. Needs at least d + 2 samples.
pub fn fit_bridge_proposal(
    region_samples: &[Vec<f64>],
    family: BridgeFamily,
    dof: Option<f64>,
) -> Result<BridgeProposal> {
    let got = region_samples.len();
    if got == 0 {
        return Err(Error::TooFewSamples { needed: 3, got: 0 });
    }
    let dim = region_samples[0].len();
    let needed = dim + 2;
    if got < needed {
        return Err(Error::TooFewSamples { needed, got });
    }

    let mut mean = DVector::zeros(dim);
    for s in region_samples {
        mean += DVector::from_row_slice(s);
    }
    mean /= got as f64;

    let mut cov = DMatrix::zeros(dim, dim);
    for s in region_samples {
        let d = DVector::from_row_slice(s) - &mean;
        cov += &d * d.transpose();
    }
    cov /= (got - 1) as f64;

    let mut ridge = 1e-8 * cov.trace() / dim as f64;
    if !(ridge > 0.0) {
        ridge = 1e-8;
    }
    for i in 0..dim {
        cov[(i, i)] += ridge;
    }

    let chol = nalgebra::Cholesky::new(cov.clone())
        .ok_or_else(|| Error::BridgeDegenerate("covariance not SPD after ridge".into()))?;
    let chol_l = chol.l();
    let log_det: f64 = 2.0 * chol_l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let inv_cov = chol.inverse();

    let dof = match family {
        BridgeFamily::Gaussian => None,
        BridgeFamily::StudentT => Some(dof.unwrap_or(DEFAULT_STUDENT_DOF)),
    };
    let dimf = dim as f64;
    let log_coeff = match family {
        BridgeFamily::Gaussian => {
            -0.5 * dimf * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det
        }
        BridgeFamily::StudentT => {
            let nu = dof.expect("set above");
            ln_gamma(0.5 * (nu + dimf))
                - ln_gamma(0.5 * nu)
                - 0.5 * dimf * (nu * std::f64::consts::PI).ln()
                - 0.5 * log_det
        }
    };

    Ok(BridgeProposal {
        family,
        dof,
        mean,
        covariance: cov,
        chol_l,
        inv_cov,
        log_coeff,
    })
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    max + sum.ln()
}

/// Geometric-bridge estimate of the unnormalized constant of one region.
///
/// `log_pi_tilde` is the unnormalized restricted log density (the base target
/// where the region matches, `-inf` elsewhere); `region_samples` are the
/// pooled history points of the region, repeats included.
pub fn bridge_estimate(
    region_samples: &[Vec<f64>],
    log_pi_tilde: &dyn Fn(&[f64]) -> f64,
    proposal: &BridgeProposal,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if region_samples.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let draws = region_samples.len().min(MAX_PROPOSAL_DRAWS);

    // numerator: mean over theta ~ p of pi(theta) a(theta) = (pi/p)^(1/2)
    let mut num_terms = Vec::with_capacity(draws);
    for _ in 0..draws {
        let theta = proposal.sample(rng);
        let lp = log_pi_tilde(&theta);
        if lp == f64::NEG_INFINITY {
            continue; // a := 0 where pi vanishes
        }
        num_terms.push(0.5 * (lp - proposal.log_density(&theta)));
    }

    // denominator: mean over x in X_i of p(x) a(x) = (p/pi)^(1/2)
    let mut den_terms = Vec::with_capacity(region_samples.len());
    for x in region_samples {
        let lp = log_pi_tilde(x);
        if lp == f64::NEG_INFINITY {
            continue;
        }
        den_terms.push(0.5 * (proposal.log_density(x) - lp));
    }

    if num_terms.is_empty() {
        return Err(Error::BridgeDegenerate(
            "no proposal draw landed where the restricted density is positive".into(),
        ));
    }
    if den_terms.is_empty() {
        return Err(Error::BridgeDegenerate(
            "denominator underflowed to zero: bridge proposal does not overlap the region".into(),
        ));
    }

    let log_num = log_sum_exp(&num_terms) - (draws as f64).ln();
    let log_den = log_sum_exp(&den_terms) - (region_samples.len() as f64).ln();
    let c = (log_num - log_den).exp();
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::BridgeDegenerate(format!(
            "estimate {c} is not a positive finite number"
        )));
    }
    Ok(c)
}

/// Per-region unnormalized constants and normalized weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightEstimate {
    pub c_hat: Vec<f64>,
    pub w_hat: Vec<f64>,
    pub draws_used: Vec<usize>,
}

impl WeightEstimate {
    pub fn n_regions(&self) -> usize {
        self.w_hat.len()
    }

    pub fn with_draws(mut self, draws: Vec<usize>) -> Self {
        assert_eq!(draws.len(), self.c_hat.len());
        self.draws_used = draws;
        self
    }
}

/// Renormalize unnormalized constants into a weight vector.
pub fn normalize_weights(c_hats: &[f64]) -> Result<WeightEstimate> {
    if c_hats.is_empty() {
        return Err(Error::LengthMismatch("no constants to normalize".into()));
    }
    for (i, &c) in c_hats.iter().enumerate() {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::NonPositiveWeight { index: i, value: c });
        }
    }
    let total: f64 = c_hats.iter().sum();
    let w_hat: Vec<f64> = c_hats.iter().map(|c| c / total).collect();
    Ok(WeightEstimate {
        c_hat: c_hats.to_vec(),
        w_hat,
        draws_used: vec![0; c_hats.len()],
    })
}
