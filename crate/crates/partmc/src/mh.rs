//! Metropolis-Hastings stepping for full and region-restricted targets.
//!
//! Proposals landing outside the support or outside a chain's region are
//! rejected through the usual acceptance ratio (the ratio is zero there),
//! which is exactly the MH kernel for the restricted distribution. Every step
//! consumes a fixed number of RNG draws (the proposal's, then one uniform),
//! so traces are a pure function of `(seed, stream)`.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::csvio;
use crate::error::{Error, Result};
use crate::parallel;
use crate::rng::stream_rng;
use crate::targets::TargetModel;

/// A proposal kernel Q: a sampler plus its transition density.
pub trait Proposal: Send + Sync {
    fn sample(&self, from: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64>;
    /// log q(from, to); `-inf` where the proposal cannot move.
    fn log_density(&self, from: &[f64], to: &[f64]) -> f64;
    fn is_symmetric(&self) -> bool {
        false
    }
}

/// The bundled proposal kernels. Both are symmetric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProposalKernel {
    /// x + Unif[-tau, tau]^d
    UniformBox { tau: f64 },
    /// x + N(0, sigma^2 I)
    Gaussian { sigma: f64 },
}

impl ProposalKernel {
    pub fn validate(&self) -> Result<()> {
        let scale = match self {
            ProposalKernel::UniformBox { tau } => *tau,
            ProposalKernel::Gaussian { sigma } => *sigma,
        };
        if scale > 0.0 && scale.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("proposal scale must be positive, got {scale}")))
        }
    }
}

impl Proposal for ProposalKernel {
    fn sample(&self, from: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            ProposalKernel::UniformBox { tau } => from
                .iter()
                .map(|x| x + rng.random_range(-tau..=*tau))
                .collect(),
            ProposalKernel::Gaussian { sigma } => from
                .iter()
                .map(|x| x + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        }
    }

    fn log_density(&self, from: &[f64], to: &[f64]) -> f64 {
        debug_assert_eq!(from.len(), to.len());
        match self {
            ProposalKernel::UniformBox { tau } => {
                let inside = from
                    .iter()
                    .zip(to)
                    .all(|(a, b)| (a - b).abs() <= *tau);
                if inside {
                    -(from.len() as f64) * (2.0 * tau).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            ProposalKernel::Gaussian { sigma } => {
                let d = from.len() as f64;
                let sq: f64 = from.iter().zip(to).map(|(a, b)| (a - b) * (a - b)).sum();
                -0.5 * d * (2.0 * std::f64::consts::PI * sigma * sigma).ln()
                    - 0.5 * sq / (sigma * sigma)
            }
        }
    }

    fn is_symmetric(&self) -> bool {
        true
    }
}

type RegionFn = dyn Fn(&[f64]) -> Option<usize> + Send + Sync;

/// The restricted target pi restricted to one region of a partition.
///
/// Its log density equals the base target's where the region map sends the
/// state to `region_index`, and `-inf` elsewhere.
#[derive(Clone)]
pub struct RegionTarget {
    base: TargetModel,
    region_of: Arc<RegionFn>,
    region_index: usize,
}

impl RegionTarget {
    pub fn new(base: TargetModel, region_of: Arc<RegionFn>, region_index: usize) -> Self {
        RegionTarget {
            base,
            region_of,
            region_index,
        }
    }

    /// The trivial one-region restriction (the whole support).
    pub fn whole_space(base: TargetModel) -> Self {
        RegionTarget::new(base, Arc::new(|_: &[f64]| Some(0)), 0)
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        if (self.region_of)(x) == Some(self.region_index) {
            self.base.log_density_unnorm(x)
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.log_density(x) > f64::NEG_INFINITY
    }

    pub fn region_index(&self) -> usize {
        self.region_index
    }

    pub fn base(&self) -> &TargetModel {
        &self.base
    }
}

/// The ordered states visited by one chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainTrace {
    pub states: Vec<Vec<f64>>,
    /// Per-row accept flags; entry 0 (the initial state) is always true.
    pub accepted: Vec<bool>,
    pub chain_id: u32,
    pub region_id: Option<u32>,
    pub acceptance_count: usize,
    pub seed: u64,
}

impl ChainTrace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.states.len() <= 1 {
            0.0
        } else {
            self.acceptance_count as f64 / (self.states.len() - 1) as f64
        }
    }

    /// One CSV row per state; the initial state is written as accepted.
    pub fn write_csv<W: Write>(&self, w: &mut W, with_header: bool) -> Result<()> {
        if with_header {
            csvio::write_header(w, self.dimension())?;
        }
        for (step, state) in self.states.iter().enumerate() {
            csvio::write_row(w, self.chain_id, self.region_id, step, state, self.accepted[step])?;
        }
        Ok(())
    }
}

/// Write several traces into one CSV file, chains in order.
pub fn write_traces_csv<W: Write>(traces: &[ChainTrace], w: &mut W) -> Result<()> {
    let dim = traces.first().map_or(0, ChainTrace::dimension);
    csvio::write_header(w, dim)?;
    for t in traces {
        t.write_csv(w, false)?;
    }
    Ok(())
}

/// One MH transition with cached current log density.
///
/// Consumes the proposal's draws plus exactly one uniform, whatever the
/// outcome. Returns `(new_state, new_log_density, accepted)`.
fn step_cached<P, F>(
    current: &[f64],
    current_ld: f64,
    log_target: &F,
    proposal: &P,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, f64, bool)
where
    P: Proposal + ?Sized,
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let candidate = proposal.sample(current, rng);
    let u: f64 = rng.random();
    let cand_ld = log_target(&candidate);
    let log_ratio = if cand_ld == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else if proposal.is_symmetric() {
        cand_ld - current_ld
    } else {
        cand_ld - current_ld + proposal.log_density(&candidate, current)
            - proposal.log_density(current, &candidate)
    };
    if u.ln() < log_ratio {
        (candidate, cand_ld, true)
    } else {
        (current.to_vec(), current_ld, false)
    }
}

/// One Metropolis-Hastings step from `current`.
///
/// Errors if `current` lies outside the support of `log_target` (a chain must
/// never be initialized there).
pub fn mh_step<P, F>(
    current: &[f64],
    log_target: &F,
    proposal: &P,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, bool)>
where
    P: Proposal + ?Sized,
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let current_ld = log_target(current);
    if current_ld == f64::NEG_INFINITY {
        return Err(Error::OutsideSupport);
    }
    let (state, _, accepted) = step_cached(current, current_ld, log_target, proposal, rng);
    Ok((state, accepted))
}

fn run_chain_inner<P, F>(
    init: &[f64],
    log_target: &F,
    proposal: &P,
    steps: usize,
    mut rng: ChaCha8Rng,
    chain_id: u32,
    region_id: Option<u32>,
    seed: u64,
) -> Result<ChainTrace>
where
    P: Proposal + ?Sized,
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let mut current_ld = log_target(init);
    if current_ld == f64::NEG_INFINITY {
        return Err(Error::OutsideSupport);
    }
    let mut states = Vec::with_capacity(steps + 1);
    let mut flags = Vec::with_capacity(steps + 1);
    states.push(init.to_vec());
    flags.push(true);
    let mut current = init.to_vec();
    let mut accepted_total = 0usize;
    for _ in 0..steps {
        let (next, next_ld, accepted) =
            step_cached(&current, current_ld, log_target, proposal, &mut rng);
        current = next;
        current_ld = next_ld;
        if accepted {
            accepted_total += 1;
        }
        states.push(current.clone());
        flags.push(accepted);
    }
    Ok(ChainTrace {
        states,
        accepted: flags,
        chain_id,
        region_id,
        acceptance_count: accepted_total,
        seed,
    })
}

/// Run one MH chain for `steps` transitions; the trace holds `steps + 1`
/// states beginning at `init` and is a pure function of `seed` (stream 0).
pub fn run_chain<P, F>(
    init: &[f64],
    log_target: &F,
    proposal: &P,
    steps: usize,
    seed: u64,
) -> Result<ChainTrace>
where
    P: Proposal + ?Sized,
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    run_chain_inner(
        init,
        log_target,
        proposal,
        steps,
        stream_rng(seed, 0),
        0,
        None,
        seed,
    )
}

/// Run one restricted chain per region, concurrently.
///
/// Chain `i` targets `region_targets[i]` from `inits[i]` on RNG stream `i`
/// under `seed`; the output is bit-identical to running the chains one after
/// another.
pub fn run_parallel_chains<P>(
    proposal: &P,
    region_targets: &[RegionTarget],
    inits: &[Vec<f64>],
    steps: usize,
    seed: u64,
) -> Result<Vec<ChainTrace>>
where
    P: Proposal,
{
    if region_targets.len() != inits.len() {
        return Err(Error::LengthMismatch(format!(
            "{} region targets vs {} initial states",
            region_targets.len(),
            inits.len()
        )));
    }
    for (i, (rt, init)) in region_targets.iter().zip(inits).enumerate() {
        if !rt.contains(init) {
            return Err(Error::InitOutsideRegion { region: i });
        }
    }
    let results = parallel::map_indexed(region_targets.len(), |i| {
        let rt = &region_targets[i];
        run_chain_inner(
            &inits[i],
            &|x: &[f64]| rt.log_density(x),
            proposal,
            steps,
            stream_rng(seed, i as u64),
            i as u32,
            Some(i as u32),
            seed,
        )
    });
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::symmetric_mixture_1d;

    /// Test kernel that always proposes `from + offset`.
    struct FixedJump {
        offset: f64,
    }

    impl Proposal for FixedJump {
        fn sample(&self, from: &[f64], _rng: &mut ChaCha8Rng) -> Vec<f64> {
            from.iter().map(|x| x + self.offset).collect()
        }
        fn log_density(&self, _from: &[f64], _to: &[f64]) -> f64 {
            0.0
        }
        fn is_symmetric(&self) -> bool {
            true
        }
    }

    #[test]
    fn flat_target_always_accepts() {
        let flat = |_: &[f64]| 0.0;
        let proposal = ProposalKernel::UniformBox { tau: 0.5 };
        let trace = run_chain(&[0.0], &flat, &proposal, 200, 9).unwrap();
        assert_eq!(trace.acceptance_count, 200);
    }

    #[test]
    fn out_of_region_proposal_is_rejected_in_place() {
        let target = symmetric_mixture_1d(1.0, 0.4);
        let rt = RegionTarget::new(
            target,
            Arc::new(|x: &[f64]| Some(usize::from(x[0] > 0.0))),
            0,
        );
        let jump = FixedJump { offset: 5.0 };
        let mut rng = stream_rng(1, 0);
        let (state, accepted) =
            mh_step(&[-1.0], &|x: &[f64]| rt.log_density(x), &jump, &mut rng).unwrap();
        assert!(!accepted);
        assert_eq!(state, vec![-1.0]);
    }

    #[test]
    fn init_outside_support_is_an_error() {
        let target = symmetric_mixture_1d(1.0, 0.4);
        let rt = RegionTarget::new(
            target,
            Arc::new(|x: &[f64]| Some(usize::from(x[0] > 0.0))),
            0,
        );
        let proposal = ProposalKernel::UniformBox { tau: 0.5 };
        let err = run_chain(&[2.0], &|x: &[f64]| rt.log_density(x), &proposal, 5, 3).unwrap_err();
        assert!(matches!(err, Error::OutsideSupport));
    }

    #[test]
    fn standard_normal_acceptance_probability_from_zero_to_one() {
        // target N(0,1), fixed proposal 0 -> 1: accept prob = exp(-0.5)
        let normal = |x: &[f64]| -0.5 * x[0] * x[0];
        let jump = FixedJump { offset: 1.0 };
        let mut rng = stream_rng(17, 0);
        let trials = 100_000;
        let mut accepts = 0;
        for _ in 0..trials {
            let (_, accepted) = mh_step(&[0.0], &normal, &jump, &mut rng).unwrap();
            if accepted {
                accepts += 1;
            }
        }
        let rate = accepts as f64 / trials as f64;
        let expect = (-0.5f64).exp();
        assert!((rate - expect).abs() < 0.01, "rate {rate}, expect {expect}");
    }

    #[test]
    fn zero_steps_returns_init_only() {
        let normal = |x: &[f64]| -0.5 * x[0] * x[0];
        let proposal = ProposalKernel::UniformBox { tau: 1.0 };
        let trace = run_chain(&[0.25], &normal, &proposal, 0, 5).unwrap();
        assert_eq!(trace.states, vec![vec![0.25]]);
        assert_eq!(trace.acceptance_count, 0);
    }

    #[test]
    fn same_seed_gives_identical_traces() {
        let normal = |x: &[f64]| -0.5 * x[0] * x[0];
        let proposal = ProposalKernel::UniformBox { tau: 1.0 };
        let a = run_chain(&[0.0], &normal, &proposal, 500, 77).unwrap();
        let b = run_chain(&[0.0], &normal, &proposal, 500, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn long_normal_chain_mean_is_near_zero() {
        let normal = |x: &[f64]| -0.5 * x[0] * x[0];
        let proposal = ProposalKernel::UniformBox { tau: 1.0 };
        let trace = run_chain(&[0.0], &normal, &proposal, 100_000, 4).unwrap();
        let mean: f64 = trace.states.iter().map(|s| s[0]).sum::<f64>() / trace.len() as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn parallel_chains_respect_regions_and_determinism() {
        let target = symmetric_mixture_1d(1.0, 0.4);
        let region_of: Arc<RegionFn> = Arc::new(|x: &[f64]| Some(usize::from(x[0] > 0.0)));
        let targets: Vec<RegionTarget> = (0..2)
            .map(|i| RegionTarget::new(target.clone(), Arc::clone(&region_of), i))
            .collect();
        let proposal = ProposalKernel::UniformBox { tau: 0.4 };
        let inits = vec![vec![-1.0], vec![1.0]];
        let traces = run_parallel_chains(&proposal, &targets, &inits, 2_000, 21).unwrap();
        assert!(traces[0].states.iter().all(|s| s[0] <= 0.0));
        assert!(traces[1].states.iter().all(|s| s[0] > 0.0));

        let again = run_parallel_chains(&proposal, &targets, &inits, 2_000, 21).unwrap();
        assert_eq!(traces, again);
    }

    #[test]
    fn single_region_parallel_run_matches_run_chain() {
        let target = symmetric_mixture_1d(1.0, 0.4);
        let proposal = ProposalKernel::UniformBox { tau: 0.4 };
        let rt = RegionTarget::whole_space(target.clone());
        let par = run_parallel_chains(&proposal, &[rt], &[vec![1.0]], 500, 3).unwrap();
        let single = run_chain(
            &[1.0],
            &|x: &[f64]| target.log_density_unnorm(x),
            &proposal,
            500,
            3,
        )
        .unwrap();
        assert_eq!(par[0].states, single.states);
    }

    #[test]
    fn parallel_chains_reject_bad_inits() {
        let target = symmetric_mixture_1d(1.0, 0.4);
        let region_of: Arc<RegionFn> = Arc::new(|x: &[f64]| Some(usize::from(x[0] > 0.0)));
        let targets: Vec<RegionTarget> = (0..2)
            .map(|i| RegionTarget::new(target.clone(), Arc::clone(&region_of), i))
            .collect();
        let proposal = ProposalKernel::UniformBox { tau: 0.4 };
        let err = run_parallel_chains(&proposal, &targets, &[vec![1.0], vec![1.0]], 10, 0)
            .unwrap_err();
        assert!(matches!(err, Error::InitOutsideRegion { region: 0 }));
    }

    #[test]
    fn empirical_detailed_balance_on_binned_flat_target() {
        // flat target on [0,1], symmetric proposal: binned transition flows
        // must be symmetric within Monte Carlo error.
        let flat = |x: &[f64]| {
            if (0.0..=1.0).contains(&x[0]) {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        };
        let proposal = ProposalKernel::UniformBox { tau: 0.3 };
        let trace = run_chain(&[0.5], &flat, &proposal, 200_000, 8).unwrap();
        let bins = 8;
        let bin_of = |x: f64| ((x * bins as f64) as usize).min(bins - 1);
        let mut counts = vec![vec![0f64; bins]; bins];
        for w in trace.states.windows(2) {
            counts[bin_of(w[0][0])][bin_of(w[1][0])] += 1.0;
        }
        for a in 0..bins {
            for b in (a + 1)..bins {
                let n_ab = counts[a][b];
                let n_ba = counts[b][a];
                if n_ab + n_ba < 50.0 {
                    continue;
                }
                let diff = (n_ab - n_ba).abs();
                let se = (n_ab + n_ba).sqrt();
                assert!(diff <= 3.0 * se + 1.0, "bins {a}->{b}: {n_ab} vs {n_ba}");
            }
        }
    }

    #[test]
    fn uniform_box_log_density_is_symmetric_and_correct() {
        let p = ProposalKernel::UniformBox { tau: 0.2 };
        let a = [0.1, 0.3];
        let b = [0.2, 0.25];
        assert_eq!(p.log_density(&a, &b), p.log_density(&b, &a));
        assert!((p.log_density(&a, &b) - (-2.0 * (0.4f64).ln())).abs() < 1e-12);
        assert_eq!(p.log_density(&a, &[0.5, 0.3]), f64::NEG_INFINITY);
    }

    #[test]
    fn csv_output_has_one_row_per_state() {
        let normal = |x: &[f64]| -0.5 * x[0] * x[0];
        let proposal = ProposalKernel::UniformBox { tau: 1.0 };
        let trace = run_chain(&[0.0], &normal, &proposal, 10, 5).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf, true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 12); // header + 11 states
    }
}
