//! Exact spectral theory on small discrete chains.
//!
//! Spectral gaps, set and minimum conductances, the asymptotic-variance
//! bounds for naive and partitioned estimators, the two partition objective
//! functions, and the sample-size experiment measuring how many landmarks a
//! partition needs before its restricted chains mix as well as the optimal
//! cut's. Continuous 1-D problems enter through grid discretization of the
//! MH kernel, which makes every quantity exactly computable.
//!
//! Convention: per-region second moments are taken under the *restricted*
//! (unnormalized) measure, s_i = sum_{x in region} pi(x) h(x)^2, and
//! nu_par = 2 sum_i w_i^2 s_i / (1 - lambda_i). With the trivial one-region
//! partition this reduces exactly to nu_naive with n = 1.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::explore::{SampleBank, SourceTag};
use crate::mh::ProposalKernel;
use crate::parallel;
use crate::partition::{assign_region, do_spectral_clustering, PartitionModel};
use crate::rng::{derive_seed, stream_rng};
use crate::targets::{symmetric_mixture_1d, DiscreteChain, TargetModel};

/// Exhaustive minimum-conductance search is limited to this many states.
pub const EXHAUSTIVE_CONDUCTANCE_CAP: usize = 24;

/// Spectrum summary of a reversible chain.
#[derive(Clone, Debug)]
pub struct GapReport {
    /// Largest non-unit eigenvalue magnitude (0 for a single-state chain).
    pub lambda_star: f64,
    /// 1 - lambda_star.
    pub gap: f64,
    /// Full spectrum, descending.
    pub eigenvalues: Vec<f64>,
}

fn symmetrized(chain: &DiscreteChain) -> Result<DMatrix<f64>> {
    let m = chain.size();
    let pi = chain.stationary();
    if pi.iter().any(|&p| p <= 0.0) {
        return Err(Error::InvalidChain(
            "spectral analysis needs strictly positive stationary mass".into(),
        ));
    }
    let k = chain.transition();
    let mut s = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            s[(i, j)] = (pi[i] / pi[j]).sqrt() * k[(i, j)];
        }
    }
    // wash out last-bit asymmetry before the symmetric eigensolver
    let st = s.transpose();
    Ok(0.5 * (s + st))
}

/// Full symmetric eigendecomposition of the pi-symmetrized kernel;
/// `gap = 1 - max{|lambda| : lambda != 1}` with one unit eigenvalue removed.
pub fn spectral_gap(chain: &DiscreteChain) -> Result<GapReport> {
    if !chain.is_reversible() {
        return Err(Error::NotReversible);
    }
    let m = chain.size();
    if m == 1 {
        // a single-state chain is constant: no relaxation penalty
        return Ok(GapReport {
            lambda_star: 0.0,
            gap: 1.0,
            eigenvalues: vec![1.0],
        });
    }
    let s = symmetrized(chain)?;
    let eig = SymmetricEigen::new(s);
    let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(|a, b| b.partial_cmp(a).expect("finite eigenvalues"));
    let lambda_star = eigenvalues[1..]
        .iter()
        .map(|l| l.abs())
        .fold(0.0f64, f64::max);
    Ok(GapReport {
        lambda_star,
        gap: 1.0 - lambda_star,
        eigenvalues,
    })
}

fn subset_mass(chain: &DiscreteChain, members: &[bool]) -> f64 {
    members
        .iter()
        .zip(chain.stationary().iter())
        .filter_map(|(&inside, &p)| inside.then_some(p))
        .sum()
}

fn conductance_members(chain: &DiscreteChain, members: &[bool]) -> Result<f64> {
    let mass = subset_mass(chain, members);
    if !(mass > 0.0 && mass < 1.0) {
        return Err(Error::DegenerateSubset);
    }
    let m = chain.size();
    let k = chain.transition();
    let pi = chain.stationary();
    let mut flow = 0.0;
    for x in 0..m {
        if !members[x] {
            continue;
        }
        let out: f64 = (0..m).filter(|&y| !members[y]).map(|y| k[(x, y)]).sum();
        flow += pi[x] * out;
    }
    Ok(flow / (mass * (1.0 - mass)))
}

/// Conductance phi(S) = [sum_{x in S} pi(x) K(x, S^c)] / [pi(S) pi(S^c)].
pub fn conductance_of_set(chain: &DiscreteChain, subset: &[usize]) -> Result<f64> {
    let mut members = vec![false; chain.size()];
    for &x in subset {
        if x >= chain.size() {
            return Err(Error::InvalidChain(format!("state {x} out of range")));
        }
        members[x] = true;
    }
    conductance_members(chain, &members)
}

fn mask_to_subset(mask: u32, m: usize) -> Vec<usize> {
    (0..m).filter(|&x| mask & (1 << x) != 0).collect()
}

/// Exhaustive minimum conductance over subsets with pi(S) < 1/2 (sets at
/// exactly 1/2 enter once, through the side containing state 0).
pub fn min_conductance(chain: &DiscreteChain) -> Result<(f64, Vec<usize>)> {
    let m = chain.size();
    if m > EXHAUSTIVE_CONDUCTANCE_CAP {
        return Err(Error::ConductanceSizeCap {
            cap: EXHAUSTIVE_CONDUCTANCE_CAP,
            got: m,
        });
    }
    if m < 2 {
        return Err(Error::DegenerateSubset);
    }
    let pi = chain.stationary();
    let tol = 1e-12;
    let mut best: Option<(f64, u32)> = None;
    for mask in 1u32..((1u32 << m) - 1) {
        let mass: f64 = (0..m)
            .filter(|&x| mask & (1 << x) != 0)
            .map(|x| pi[x])
            .sum();
        let eligible = mass < 0.5 - tol || ((mass - 0.5).abs() <= tol && mask & 1 == 1);
        if !eligible || mass <= 0.0 {
            continue;
        }
        let members: Vec<bool> = (0..m).map(|x| mask & (1 << x) != 0).collect();
        let phi = conductance_members(chain, &members)?;
        if best.as_ref().is_none_or(|(b, _)| phi < *b) {
            best = Some((phi, mask));
        }
    }
    let (phi, mask) = best.ok_or(Error::DegenerateSubset)?;
    Ok((phi, mask_to_subset(mask, m)))
}

/// Heuristic minimum conductance: sweep cuts along the second eigenvector of
/// the symmetrized kernel, plus seeded random subsets refined by greedy
/// single-state flips. Works at any size; an upper bound on the true minimum.
pub fn min_conductance_heuristic(
    chain: &DiscreteChain,
    restarts: usize,
    seed: u64,
) -> Result<(f64, Vec<usize>)> {
    let m = chain.size();
    if m < 2 {
        return Err(Error::DegenerateSubset);
    }
    let pi = chain.stationary();

    let mut best: Option<(f64, Vec<bool>)> = None;
    let mut consider = |phi: f64, members: &[bool]| {
        if best.as_ref().is_none_or(|(b, _)| phi < *b) {
            best = Some((phi, members.to_vec()));
        }
    };

    // sweep cuts in the Fiedler order of the normalized kernel
    if chain.is_reversible() {
        let s = symmetrized(chain)?;
        let eig = SymmetricEigen::new(s);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .expect("finite")
        });
        let second = eig.eigenvectors.column(order[1]);
        let mut by_coord: Vec<usize> = (0..m).collect();
        by_coord.sort_by(|&a, &b| {
            let fa = second[a] / pi[a].sqrt();
            let fb = second[b] / pi[b].sqrt();
            fa.partial_cmp(&fb).expect("finite")
        });
        let mut members = vec![false; m];
        for &x in by_coord.iter().take(m - 1) {
            members[x] = true;
            if let Ok(phi) = conductance_members(chain, &members) {
                consider(phi, &members);
            }
        }
    }

    // random subsets with greedy descent
    let mut rng = stream_rng(seed, 0);
    for _ in 0..restarts {
        let mut members: Vec<bool> = (0..m).map(|_| rng.random::<bool>()).collect();
        if members.iter().all(|&b| b) || members.iter().all(|&b| !b) {
            members[0] = !members[0];
        }
        let mut current = match conductance_members(chain, &members) {
            Ok(phi) => phi,
            Err(_) => continue,
        };
        loop {
            let mut improved = false;
            for x in 0..m {
                members[x] = !members[x];
                match conductance_members(chain, &members) {
                    Ok(phi) if phi < current => {
                        current = phi;
                        improved = true;
                    }
                    _ => members[x] = !members[x],
                }
            }
            if !improved {
                break;
            }
        }
        consider(current, &members);
    }

    let (phi, members) = best.ok_or(Error::DegenerateSubset)?;
    // canonicalize to the light side (ties keep the side holding state 0)
    let mass = subset_mass(chain, &members);
    let flip = mass > 0.5 + 1e-12 || ((mass - 0.5).abs() <= 1e-12 && !members[0]);
    let subset: Vec<usize> = (0..m)
        .filter(|&x| members[x] != flip)
        .collect();
    Ok((phi, subset))
}

/// ||h||^2_{2,pi} = sum_x pi(x) h(x)^2.
pub fn h_norm_sq(chain: &DiscreteChain, h: &[f64]) -> f64 {
    chain
        .stationary()
        .iter()
        .zip(h)
        .map(|(&p, &v)| p * v * v)
        .sum()
}

/// Restricted second moment s = sum_{x in region} pi(x) h(x)^2.
pub fn region_h_norm_sq(chain: &DiscreteChain, h: &[f64], members: &[bool]) -> f64 {
    chain
        .stationary()
        .iter()
        .zip(h)
        .zip(members)
        .filter_map(|((&p, &v), &inside)| inside.then_some(p * v * v))
        .sum()
}

/// nu_naive = 2 ||h||^2 / (n (1 - lambda)).
pub fn nu_naive(h_norm_sq: f64, gap: f64, n_chains: usize) -> Result<f64> {
    if !(gap > 0.0) {
        return Err(Error::ZeroGap("nu_naive needs a positive spectral gap".into()));
    }
    Ok(2.0 * h_norm_sq / (n_chains as f64 * gap))
}

/// nu_par = 2 sum_i w_i^2 s_i / (1 - lambda_i) with restricted moments s_i.
pub fn nu_par(weights: &[f64], region_norms_sq: &[f64], gaps: &[f64]) -> Result<f64> {
    if weights.len() != region_norms_sq.len() || weights.len() != gaps.len() {
        return Err(Error::LengthMismatch(format!(
            "{} weights, {} norms, {} gaps",
            weights.len(),
            region_norms_sq.len(),
            gaps.len()
        )));
    }
    let mut total = 0.0;
    for ((&w, &s), &g) in weights.iter().zip(region_norms_sq).zip(gaps) {
        if !(g > 0.0) {
            return Err(Error::ZeroGap("nu_par needs positive restricted gaps".into()));
        }
        total += w * w * s / g;
    }
    Ok(2.0 * total)
}

/// Restriction of a reversible chain to a state subset: moves that would
/// leave the subset are turned into holding mass, the stationary law is the
/// conditional one.
pub fn restrict_chain(chain: &DiscreteChain, members: &[bool]) -> Result<DiscreteChain> {
    if !chain.is_reversible() {
        return Err(Error::NotReversible);
    }
    let m = chain.size();
    assert_eq!(members.len(), m);
    let states: Vec<usize> = (0..m).filter(|&x| members[x]).collect();
    if states.is_empty() {
        return Err(Error::DegenerateSubset);
    }
    let mass = subset_mass(chain, members);
    if !(mass > 0.0) {
        return Err(Error::DegenerateSubset);
    }
    let k = chain.transition();
    let sz = states.len();
    let mut restricted = DMatrix::zeros(sz, sz);
    for (a, &x) in states.iter().enumerate() {
        let mut inside = 0.0;
        for (b, &y) in states.iter().enumerate() {
            if a != b {
                restricted[(a, b)] = k[(x, y)];
                inside += k[(x, y)];
            }
        }
        // holding: own mass plus every rejected exit
        let row_total: f64 = (0..m).map(|y| k[(x, y)]).sum();
        restricted[(a, a)] = row_total - inside;
    }
    let pi = DVector::from_iterator(sz, states.iter().map(|&x| chain.stationary()[x] / mass));
    DiscreteChain::new(restricted, pi, true)
}

/// Per-region quantities of a labeled partition and the two objectives.
#[derive(Clone, Debug)]
pub struct PartitionObjective {
    pub weights: Vec<f64>,
    /// Set conductances phi(Omega_i) under the full chain.
    pub conductances: Vec<f64>,
    /// Spectral gaps of the restricted chains.
    pub gaps: Vec<f64>,
    /// sum_i w_i / (1 - lambda_i); infinite when a region disconnects.
    pub value_real: f64,
    /// sum_i w_i phi(Omega_i), the normalized-cut objective.
    pub value_ncut: f64,
}

/// Evaluate both partition objectives for a labeling into at least 2 regions.
pub fn partition_objective(chain: &DiscreteChain, labels: &[usize]) -> Result<PartitionObjective> {
    let m = chain.size();
    if labels.len() != m {
        return Err(Error::LengthMismatch(format!(
            "{} labels for {} states",
            labels.len(),
            m
        )));
    }
    let n = labels.iter().max().map_or(0, |&l| l + 1);
    if n < 2 {
        return Err(Error::InvalidConfig(
            "partition objectives need at least two regions".into(),
        ));
    }
    let mut weights = Vec::with_capacity(n);
    let mut conductances = Vec::with_capacity(n);
    let mut gaps = Vec::with_capacity(n);
    for region in 0..n {
        let members: Vec<bool> = labels.iter().map(|&l| l == region).collect();
        if members.iter().all(|&b| !b) {
            return Err(Error::EmptyRegion { region });
        }
        weights.push(subset_mass(chain, &members));
        conductances.push(conductance_members(chain, &members)?);
        gaps.push(spectral_gap(&restrict_chain(chain, &members)?)?.gap);
    }
    let value_real = weights
        .iter()
        .zip(&gaps)
        .map(|(&w, &g)| if g > 0.0 { w / g } else { f64::INFINITY })
        .sum();
    let value_ncut = weights
        .iter()
        .zip(&conductances)
        .map(|(&w, &phi)| w * phi)
        .sum();
    Ok(PartitionObjective {
        weights,
        conductances,
        gaps,
        value_real,
        value_ncut,
    })
}

/// Left side of the beat-naive condition:
/// sum_i n w_i^2 (1 - lambda) s_i / (phi_i^2 ||h||^2), with phi_i the minimum
/// conductance of the restricted chain K_i (exhaustive when the region is
/// small, heuristic otherwise).
pub fn efficiency_lhs(
    chain: &DiscreteChain,
    labels: &[usize],
    h: &[f64],
    seed: u64,
) -> Result<f64> {
    let m = chain.size();
    if labels.len() != m || h.len() != m {
        return Err(Error::LengthMismatch("labels/h must match the state count".into()));
    }
    let n = labels.iter().max().map_or(0, |&l| l + 1);
    let full_gap = spectral_gap(chain)?.gap;
    let total_norm = h_norm_sq(chain, h);
    let mut lhs = 0.0;
    for region in 0..n {
        let members: Vec<bool> = labels.iter().map(|&l| l == region).collect();
        let w = subset_mass(chain, &members);
        if w <= 0.0 {
            return Err(Error::EmptyRegion { region });
        }
        let restricted = restrict_chain(chain, &members)?;
        let phi = if restricted.size() <= EXHAUSTIVE_CONDUCTANCE_CAP && restricted.size() >= 2 {
            min_conductance(&restricted)?.0
        } else if restricted.size() < 2 {
            1.0
        } else {
            min_conductance_heuristic(&restricted, 32, derive_seed(seed, region as u64))?.0
        };
        let s = region_h_norm_sq(chain, h, &members);
        lhs += n as f64 * w * w * full_gap * s / (phi * phi * total_norm);
    }
    Ok(lhs)
}

/// A 1-D target discretized into an MH chain on a uniform grid.
#[derive(Clone, Debug)]
pub struct GridChain {
    pub chain: DiscreteChain,
    pub grid: Vec<f64>,
}

/// Discretize the MH kernel of a 1-D target over `[-half_width, half_width]`.
///
/// Grid cells propose uniformly among their neighbors within the proposal's
/// reach (off-grid proposals are rejected in place), accepted with the usual
/// density ratio, which keeps the grid chain reversible with respect to the
/// discretized target.
pub fn discretize_1d(
    target: &TargetModel,
    proposal: &ProposalKernel,
    half_width: f64,
    grid_points: usize,
) -> Result<GridChain> {
    if grid_points < 50 {
        return Err(Error::GridTooCoarse {
            min: 50,
            got: grid_points,
        });
    }
    if target.dimension() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: target.dimension(),
        });
    }
    let m = grid_points;
    let h = 2.0 * half_width / m as f64;
    let grid: Vec<f64> = (0..m)
        .map(|i| -half_width + h * (i as f64 + 0.5))
        .collect();

    let mut pi: Vec<f64> = grid
        .iter()
        .map(|&x| target.log_density_unnorm(&[x]).exp())
        .collect();
    let total: f64 = pi.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidConfig(
            "target density vanishes on the whole grid".into(),
        ));
    }
    if pi.iter().any(|&p| p <= 0.0) {
        return Err(Error::InvalidConfig(
            "grid extends beyond the target support; shrink half_width".into(),
        ));
    }
    for p in &mut pi {
        *p /= total;
    }

    // per-offset proposal weights, symmetric, self-move included
    let (reach, weight): (usize, Box<dyn Fn(usize) -> f64>) = match proposal {
        ProposalKernel::UniformBox { tau } => {
            let k = ((tau / h).round() as usize).max(1);
            (k, Box::new(|_d: usize| 1.0))
        }
        ProposalKernel::Gaussian { sigma } => {
            let k = ((5.0 * sigma / h).ceil() as usize).max(1);
            let s = *sigma;
            (k, Box::new(move |d: usize| {
                let x = d as f64 * h;
                (-0.5 * x * x / (s * s)).exp()
            }))
        }
    };
    let w_total: f64 = (0..=reach)
        .map(|d| if d == 0 { weight(0) } else { 2.0 * weight(d) })
        .sum();

    let mut kmat = DMatrix::zeros(m, m);
    for i in 0..m {
        let mut stay = 1.0; // starts with full mass, off-grid and rejections stay
        for d in 1..=reach {
            for j in [i.checked_sub(d), i.checked_add(d)] {
                let Some(j) = j else { continue };
                if j >= m {
                    continue;
                }
                let q = weight(d) / w_total;
                let accept = (pi[j] / pi[i]).min(1.0);
                kmat[(i, j)] = q * accept;
                stay -= q * accept;
            }
        }
        kmat[(i, i)] = stay.max(0.0);
    }
    let chain = DiscreteChain::new(kmat, DVector::from_vec(pi), true)?;
    Ok(GridChain { chain, grid })
}

/// One row of the objective-function scan.
#[derive(Clone, Debug)]
pub struct ObjectiveScanRow {
    pub cut: f64,
    pub value_real: f64,
    pub value_ncut: f64,
    pub nu_par_bound: f64,
}

/// Scan all two-region threshold cuts of the discretized 1-D target,
/// reporting both objectives and the nu_par bound (h = identity) per cut.
pub fn objective_scan_1d(
    target: &TargetModel,
    proposal: &ProposalKernel,
    half_width: f64,
    grid_points: usize,
) -> Result<Vec<ObjectiveScanRow>> {
    let gc = discretize_1d(target, proposal, half_width, grid_points)?;
    let m = gc.grid.len();
    let rows = parallel::map_indexed(m - 1, |s| {
        let split = s + 1;
        let labels: Vec<usize> = (0..m).map(|i| usize::from(i >= split)).collect();
        let obj = partition_objective(&gc.chain, &labels)?;
        let members_left: Vec<bool> = (0..m).map(|i| i < split).collect();
        let members_right: Vec<bool> = (0..m).map(|i| i >= split).collect();
        let s_left = region_h_norm_sq(&gc.chain, &gc.grid, &members_left);
        let s_right = region_h_norm_sq(&gc.chain, &gc.grid, &members_right);
        let bound = nu_par(&obj.weights, &[s_left, s_right], &obj.gaps)?;
        Ok(ObjectiveScanRow {
            cut: 0.5 * (gc.grid[split - 1] + gc.grid[split]),
            value_real: obj.value_real,
            value_ncut: obj.value_ncut,
            nu_par_bound: bound,
        })
    });
    rows.into_iter().collect()
}

/// Precomputed row CDFs for simulating a discrete chain.
pub struct ChainSimulator {
    cdf: Vec<Vec<f64>>,
}

impl ChainSimulator {
    pub fn new(chain: &DiscreteChain) -> Self {
        let m = chain.size();
        let k = chain.transition();
        let cdf = (0..m)
            .map(|i| {
                let mut acc = 0.0;
                (0..m)
                    .map(|j| {
                        acc += k[(i, j)];
                        acc
                    })
                    .collect()
            })
            .collect();
        ChainSimulator { cdf }
    }

    pub fn step(&self, state: usize, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random();
        let row = &self.cdf[state];
        row.partition_point(|&c| c < u).min(row.len() - 1)
    }

    pub fn run(&self, start: usize, steps: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(steps + 1);
        out.push(start);
        let mut s = start;
        for _ in 0..steps {
            s = self.step(s, rng);
            out.push(s);
        }
        out
    }
}

/// Smallest restricted-chain gap of a grid labeling (the lambda(P) of the
/// sample-size experiment). A labeling with a single nonempty region scores
/// the full chain's gap.
pub fn min_restricted_gap(chain: &DiscreteChain, labels: &[usize]) -> Result<f64> {
    let n = labels.iter().max().map_or(0, |&l| l + 1);
    let mut populated = 0;
    let mut min_gap = f64::INFINITY;
    for region in 0..n {
        let members: Vec<bool> = labels.iter().map(|&l| l == region).collect();
        if members.iter().all(|&b| !b) {
            continue;
        }
        populated += 1;
        let gap = spectral_gap(&restrict_chain(chain, &members)?)?.gap;
        min_gap = min_gap.min(gap);
    }
    if populated <= 1 {
        return spectral_gap(chain).map(|r| r.gap);
    }
    Ok(min_gap)
}

/// Label every grid point by the fitted model; points the compact proposal
/// cannot reach fall back to their nearest landmark's label.
pub fn grid_labels(model: &PartitionModel, grid: &[f64]) -> Vec<usize> {
    grid.iter()
        .map(|&x| match assign_region(&[x], model) {
            Ok(l) => l,
            Err(_) => {
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (i, lm) in model.landmarks().iter().enumerate() {
                    let d = (lm[0] - x).abs();
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                model.labels()[best]
            }
        })
        .collect()
}

/// Parameters of the sample-size experiment on pi_mu = (1/2) N(-mu, 1) +
/// (1/2) N(mu, 1).
#[derive(Clone, Debug)]
pub struct NMaxConfig {
    pub mus: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub replications: usize,
    pub tau: f64,
    pub grid_points: usize,
    /// Largest landmark count tried before a run counts as censored.
    pub n_cap: usize,
    pub seed: u64,
}

impl Default for NMaxConfig {
    fn default() -> Self {
        NMaxConfig {
            mus: (2..=37).map(|i| i as f64 * 0.1).collect(),
            epsilons: vec![0.015, 0.01, 0.0085],
            replications: 20,
            tau: 1.0,
            grid_points: 400,
            n_cap: 10_000,
            seed: 0,
        }
    }
}

/// One aggregated point of the sample-size curves.
#[derive(Clone, Debug)]
pub struct NMaxPoint {
    pub mu: f64,
    pub epsilon: f64,
    /// Mean first-sufficient N over replications (censored runs count at cap).
    pub mean_n: f64,
    /// Running median of `mean_n` over the mu grid (window 3).
    pub smoothed_n: f64,
    pub censored: usize,
}

fn n_ladder(cap: usize) -> Vec<usize> {
    let mut ns = Vec::new();
    let mut n = 2usize;
    while n <= cap {
        ns.push(n);
        n = if n < 16 { n + 1 } else { ((n as f64) * 1.25).ceil() as usize };
    }
    ns
}

/// For each mu and epsilon, the smallest landmark count N whose fitted
/// partition mixes within (1 - epsilon) of the sign cut's worst restricted
/// gap, averaged over replications and median-smoothed along the mu grid.
pub fn n_max_experiment(cfg: &NMaxConfig) -> Result<Vec<NMaxPoint>> {
    let proposal = ProposalKernel::UniformBox { tau: cfg.tau };
    let ladder = n_ladder(cfg.n_cap);

    let per_mu: Vec<Result<Vec<(f64, usize)>>> = parallel::map_indexed(cfg.mus.len(), |mi| {
        let mu = cfg.mus[mi];
        let target = symmetric_mixture_1d(mu, 1.0);
        let gc = discretize_1d(&target, &proposal, mu + 5.0, cfg.grid_points)?;
        let sign_labels: Vec<usize> = gc.grid.iter().map(|&x| usize::from(x > 0.0)).collect();
        let lambda0 = min_restricted_gap(&gc.chain, &sign_labels)?;

        let mut acc: Vec<(f64, usize)> = cfg.epsilons.iter().map(|_| (0.0, 0)).collect();
        for rep in 0..cfg.replications {
            let rep_seed = derive_seed(cfg.seed, (mi as u64) << 24 | rep as u64);
            let mut rng = stream_rng(rep_seed, 0);
            let mut bank = SampleBank::new(1);
            for _ in 0..cfg.n_cap {
                bank.push(target.sample_exact(&mut rng).unwrap(), SourceTag::Exploration);
            }
            let mut hit: Vec<Option<usize>> = vec![None; cfg.epsilons.len()];
            for (li, &n) in ladder.iter().enumerate() {
                if hit.iter().all(Option::is_some) {
                    break;
                }
                let fit_seed = derive_seed(rep_seed, li as u64 + 1);
                let Ok(model) = do_spectral_clustering(&bank, 2, n, &proposal, fit_seed) else {
                    continue;
                };
                let labels = grid_labels(&model, &gc.grid);
                let lambda = min_restricted_gap(&gc.chain, &labels)?;
                for (ei, &eps) in cfg.epsilons.iter().enumerate() {
                    if hit[ei].is_none() && lambda >= (1.0 - eps) * lambda0 {
                        hit[ei] = Some(n);
                    }
                }
            }
            for (ei, h) in hit.iter().enumerate() {
                match h {
                    Some(n) => acc[ei].0 += *n as f64,
                    None => {
                        acc[ei].0 += cfg.n_cap as f64;
                        acc[ei].1 += 1;
                    }
                }
            }
        }
        Ok(acc
            .into_iter()
            .map(|(sum, censored)| (sum / cfg.replications as f64, censored))
            .collect())
    });

    let per_mu: Vec<Vec<(f64, usize)>> = per_mu.into_iter().collect::<Result<_>>()?;

    let mut out = Vec::new();
    for (ei, &eps) in cfg.epsilons.iter().enumerate() {
        let means: Vec<f64> = per_mu.iter().map(|v| v[ei].0).collect();
        for (mi, &mu) in cfg.mus.iter().enumerate() {
            let lo = mi.saturating_sub(1);
            let hi = (mi + 2).min(means.len());
            let mut window: Vec<f64> = means[lo..hi].to_vec();
            window.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            let smoothed = window[window.len() / 2];
            out.push(NMaxPoint {
                mu,
                epsilon: eps,
                mean_n: means[mi],
                smoothed_n: smoothed,
                censored: per_mu[mi][ei].1,
            });
        }
    }
    Ok(out)
}

/// The sample-size heuristic (d_12 / min_i w_i (1 - lambda_i))^2 for the sign
/// cut of pi_mu, every ingredient computed by quadrature/eigendecomposition.
pub fn n_max_heuristic(mu: f64, tau: f64, grid_points: usize) -> Result<f64> {
    let target = symmetric_mixture_1d(mu, 1.0);
    let proposal = ProposalKernel::UniformBox { tau };
    let half_width = mu + 5.0;
    let gc = discretize_1d(&target, &proposal, half_width, grid_points)?;
    let labels: Vec<usize> = gc.grid.iter().map(|&x| usize::from(x > 0.0)).collect();

    let w_left = target
        .exact_region_mass(&|x| x[0] <= 0.0)
        .expect("1-D mixture carries a quadrature oracle");
    let w_right = 1.0 - w_left;

    // d_12 = E|x - y|, x ~ pi restricted left, y ~ pi restricted right
    let density = |x: f64| target.log_density_unnorm(&[x]).exp();
    let cross = crate::quadrature::integrate_2d(
        |x, y| {
            if x <= 0.0 && y > 0.0 {
                (y - x) * density(x) * density(y)
            } else {
                0.0
            }
        },
        (-half_width, 0.0),
        (0.0, half_width),
        1e-9,
    );
    let d12 = cross / (w_left * w_right);

    let mut worst = f64::INFINITY;
    for region in 0..2 {
        let members: Vec<bool> = labels.iter().map(|&l| l == region).collect();
        let gap = spectral_gap(&restrict_chain(&gc.chain, &members)?)?.gap;
        let w = if region == 0 { w_left } else { w_right };
        worst = worst.min(w * gap);
    }
    Ok((d12 / worst).powi(2))
}
