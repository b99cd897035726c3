//! The full pipeline: explore, then repeat (partition -> restricted chains ->
//! weights), then combine.
//!
//! Seed schedule: every stage derives its own seed from the config seed and a
//! stage tag (inits, exploration, per-round partition / chains / weights, the
//! baselines), and addresses its workers as streams 0, 1, ... under that
//! stage seed. The whole report is a pure function of the config.

use crate::error::{Error, Result};
use crate::explore::{dispersed_inits, parallel_tempering, SampleBank, TemperLadder};
use crate::mh::{run_parallel_chains, ChainTrace, ProposalKernel, RegionTarget};
use crate::parallel;
use crate::partition::{assigner_fn, do_spectral_clustering, nystrom_embed, PartitionModel};
use crate::rng::{derive_seed, stream_rng};
use crate::targets::{TargetModel, TestFunction};
use crate::weights::{bridge_estimate, fit_bridge_proposal, normalize_weights, BridgeFamily, WeightEstimate};

const TAG_INITS: u64 = 0x01;
const TAG_EXPLORE: u64 = 0x02;
const TAG_NAIVE_INITS: u64 = 0x03;
const TAG_NAIVE_CHAINS: u64 = 0x04;
const TAG_PT_BASELINE: u64 = 0x05;

fn tag_partition(round: usize) -> u64 {
    0x1000 + round as u64
}

fn tag_chains(round: usize) -> u64 {
    0x2000 + round as u64
}

fn tag_weights(round: usize, region: usize) -> u64 {
    0x3000_0000 + ((round as u64) << 16) + region as u64
}

/// Everything one experiment needs; validated before running.
#[derive(Clone)]
pub struct ExperimentConfig {
    pub n_regions: usize,
    /// Exploration sample count N0.
    pub n0: usize,
    /// Repartitioning rounds (the paper's ell).
    pub rounds: usize,
    /// Landmark subsample size per round, length `rounds`.
    pub subsample_sizes: Vec<usize>,
    /// Restricted-chain length per round, length `rounds`.
    pub chain_lengths: Vec<usize>,
    pub seed: u64,
    pub target: TargetModel,
    pub proposal: ProposalKernel,
    pub test_function: TestFunction,
    pub burn_in: usize,
    pub ladder: TemperLadder,
    /// Box for drawing dispersed initial points.
    pub init_box: Vec<(f64, f64)>,
    pub bridge_family: BridgeFamily,
    pub bridge_dof: Option<f64>,
    /// Average final estimates over every round's traces instead of only the
    /// last round's. Off by default.
    pub pool_rounds: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidConfig("need at least one round".into()));
        }
        if self.subsample_sizes.len() != self.rounds || self.chain_lengths.len() != self.rounds {
            return Err(Error::InvalidConfig(format!(
                "subsample_sizes ({}) and chain_lengths ({}) must both have length rounds ({})",
                self.subsample_sizes.len(),
                self.chain_lengths.len(),
                self.rounds
            )));
        }
        if self.n_regions == 0 || self.n0 == 0 {
            return Err(Error::InvalidConfig("n_regions and n0 must be positive".into()));
        }
        if self.subsample_sizes.iter().any(|&n| n == 0)
            || self.chain_lengths.iter().any(|&t| t == 0)
        {
            return Err(Error::InvalidConfig("subsample sizes and chain lengths must be positive".into()));
        }
        if self.init_box.len() != self.target.dimension() {
            return Err(Error::InvalidConfig(format!(
                "init_box has {} dimensions, target has {}",
                self.init_box.len(),
                self.target.dimension()
            )));
        }
        self.proposal.validate()?;
        Ok(())
    }

    /// Per-core chain-step budget of one full run: exploration sweeps plus
    /// one restricted chain per round.
    pub fn per_core_budget(&self) -> usize {
        self.n0 + self.chain_lengths.iter().sum::<usize>()
    }
}

/// Kernel-evaluation accounting of a run.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KernelBudget {
    /// Target evaluations spent in exploration (sweeps times replicas).
    pub exploration_steps: usize,
    /// Affinity evaluations spent fitting partitions (sum of N_r^2).
    pub clustering_affinity_evals: usize,
    /// Restricted-chain target evaluations (sum of n * T_r).
    pub restricted_chain_steps: usize,
    /// Wall-clock-equivalent per-core steps: N0 + sum of T_r.
    pub per_core_steps: usize,
}

#[derive(Clone, Debug, Default)]
pub struct Diagnostics {
    pub acceptance_rates: Vec<f64>,
    pub region_sample_counts: Vec<usize>,
    pub budget: KernelBudget,
}

/// Output of a pipeline run (or of one of the baselines).
#[derive(Clone)]
pub struct EstimateReport {
    pub mu_hat: Vec<f64>,
    pub per_region_mu: Vec<Vec<f64>>,
    pub weights: WeightEstimate,
    pub partitions: Vec<PartitionModel>,
    /// Restricted-chain traces, one inner vector per round.
    pub traces_by_round: Vec<Vec<ChainTrace>>,
    pub bank: SampleBank,
    pub diagnostics: Diagnostics,
}

/// Mean of h over the post-burn-in states of a trace.
pub fn region_mean(trace: &ChainTrace, h: &TestFunction, burn_in: usize) -> Result<Vec<f64>> {
    if burn_in >= trace.len() {
        return Err(Error::BurnInTooLarge {
            burn_in,
            len: trace.len(),
        });
    }
    let mut acc = vec![0.0; h.output_dimension()];
    let used = &trace.states[burn_in..];
    for state in used {
        for (a, v) in acc.iter_mut().zip(h.eval(state)) {
            *a += v;
        }
    }
    for a in &mut acc {
        *a /= used.len() as f64;
    }
    Ok(acc)
}

/// Weighted combination mu = sum_i w_i mu_i.
pub fn combine(per_region_mu: &[Vec<f64>], weights: &WeightEstimate) -> Result<Vec<f64>> {
    if per_region_mu.len() != weights.w_hat.len() {
        return Err(Error::LengthMismatch(format!(
            "{} region means vs {} weights",
            per_region_mu.len(),
            weights.w_hat.len()
        )));
    }
    let dim = per_region_mu.first().map_or(0, Vec::len);
    if per_region_mu.iter().any(|m| m.len() != dim) {
        return Err(Error::LengthMismatch("region means differ in dimension".into()));
    }
    let mut out = vec![0.0; dim];
    for (mu, &w) in per_region_mu.iter().zip(&weights.w_hat) {
        for (o, v) in out.iter_mut().zip(mu) {
            *o += w * v;
        }
    }
    Ok(out)
}

struct RoundOutcome {
    model: PartitionModel,
    traces: Vec<ChainTrace>,
    weights: WeightEstimate,
}

fn run_round(
    config: &ExperimentConfig,
    bank: &mut SampleBank,
    round: usize,
) -> Result<RoundOutcome> {
    let n = config.n_regions;
    let model = do_spectral_clustering(
        bank,
        n,
        config.subsample_sizes[round],
        &config.proposal,
        derive_seed(config.seed, tag_partition(round)),
    )
    .map_err(|e| e.in_stage("partition"))?;
    let assigner = assigner_fn(&model);

    // label and embed the pooled history once; chain inits are the bank
    // points nearest each region's k-means center in embedding space
    let placements: Vec<Option<(usize, Vec<f64>)>> =
        parallel::map_indexed(bank.len(), |i| {
            let point = &bank.points()[i];
            let z = nystrom_embed(point, &model).ok()?;
            let label = crate::partition::assign_region(point, &model).ok()?;
            Some((label, z))
        });

    let mut inits: Vec<Option<(usize, f64)>> = vec![None; n]; // (bank idx, dist)
    for (i, placement) in placements.iter().enumerate() {
        let Some((label, z)) = placement else { continue };
        let center = &model.centers()[*label];
        let d: f64 = center
            .iter()
            .zip(z)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let slot = &mut inits[*label];
        if slot.is_none() || d < slot.expect("checked").1 {
            *slot = Some((i, d));
        }
    }
    let mut init_states = Vec::with_capacity(n);
    for (region, slot) in inits.iter().enumerate() {
        match slot {
            Some((idx, _)) => init_states.push(bank.points()[*idx].clone()),
            None => return Err(Error::EmptyRegion { region }.in_stage("partition")),
        }
    }

    let region_targets: Vec<RegionTarget> = (0..n)
        .map(|i| RegionTarget::new(config.target.clone(), assigner.clone(), i))
        .collect();
    let traces = run_parallel_chains(
        &config.proposal,
        &region_targets,
        &init_states,
        config.chain_lengths[round],
        derive_seed(config.seed, tag_chains(round)),
    )
    .map_err(|e| e.in_stage("chains"))?;

    for trace in &traces {
        bank.extend_from_trace(trace, round as u32);
    }

    // pooled region samples: previously labeled bank points plus the new
    // restricted states, which stay in their own region by construction
    let mut region_samples: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n];
    for (i, placement) in placements.iter().enumerate() {
        if let Some((label, _)) = placement {
            region_samples[*label].push(bank.points()[i].clone());
        }
    }
    for trace in &traces {
        let region = trace.region_id.expect("restricted traces carry regions") as usize;
        for state in trace.states.iter().skip(1) {
            region_samples[region].push(state.clone());
        }
    }

    let estimates: Vec<Result<(f64, usize)>> = parallel::map_indexed(n, |i| {
        let samples = &region_samples[i];
        if samples.is_empty() {
            return Err(Error::EmptyRegion { region: i });
        }
        let proposal =
            fit_bridge_proposal(samples, config.bridge_family, config.bridge_dof)?;
        let rt = &region_targets[i];
        let mut rng = stream_rng(derive_seed(config.seed, tag_weights(round, i)), 0);
        let c = bridge_estimate(samples, &|x: &[f64]| rt.log_density(x), &proposal, &mut rng)?;
        Ok((c, samples.len()))
    });
    let mut c_hats = Vec::with_capacity(n);
    let mut draws = Vec::with_capacity(n);
    for r in estimates {
        let (c, used) = r.map_err(|e| e.in_stage("weights"))?;
        c_hats.push(c);
        draws.push(used);
    }
    let weights = normalize_weights(&c_hats)
        .map_err(|e| e.in_stage("weights"))?
        .with_draws(draws);

    Ok(RoundOutcome {
        model,
        traces,
        weights,
    })
}

/// The complete method: explore, repartition/run/reweight for each round,
/// combine the last round's restricted averages under the final weights.
pub fn run_algorithm1(config: &ExperimentConfig) -> Result<EstimateReport> {
    config.validate()?;
    let mut init_rng = stream_rng(derive_seed(config.seed, TAG_INITS), 0);
    let inits = dispersed_inits(
        &config.target,
        config.ladder.len(),
        &config.init_box,
        &mut init_rng,
    )
    .map_err(|e| e.in_stage("explore"))?;
    let mut bank = parallel_tempering(
        &config.target,
        &config.proposal,
        &config.ladder,
        &inits,
        config.n0,
        derive_seed(config.seed, TAG_EXPLORE),
    )
    .map_err(|e| e.in_stage("explore"))?;

    let mut partitions = Vec::with_capacity(config.rounds);
    let mut traces_by_round = Vec::with_capacity(config.rounds);
    let mut final_weights = None;
    for round in 0..config.rounds {
        let outcome = run_round(config, &mut bank, round)?;
        partitions.push(outcome.model);
        traces_by_round.push(outcome.traces);
        final_weights = Some(outcome.weights);
    }
    let weights = final_weights.expect("at least one round ran");

    let last = traces_by_round.last().expect("at least one round ran");
    let mut per_region_mu = Vec::with_capacity(config.n_regions);
    for i in 0..config.n_regions {
        if config.pool_rounds {
            let mut acc = vec![0.0; config.test_function.output_dimension()];
            let mut count = 0usize;
            for round_traces in &traces_by_round {
                let trace = &round_traces[i];
                if config.burn_in >= trace.len() {
                    return Err(Error::BurnInTooLarge {
                        burn_in: config.burn_in,
                        len: trace.len(),
                    });
                }
                for state in &trace.states[config.burn_in..] {
                    for (a, v) in acc.iter_mut().zip(config.test_function.eval(state)) {
                        *a += v;
                    }
                    count += 1;
                }
            }
            for a in &mut acc {
                *a /= count as f64;
            }
            per_region_mu.push(acc);
        } else {
            per_region_mu.push(region_mean(&last[i], &config.test_function, config.burn_in)?);
        }
    }
    let mu_hat = combine(&per_region_mu, &weights)?;

    let diagnostics = Diagnostics {
        acceptance_rates: last.iter().map(ChainTrace::acceptance_rate).collect(),
        region_sample_counts: weights.draws_used.clone(),
        budget: KernelBudget {
            exploration_steps: config.n0 * config.ladder.len(),
            clustering_affinity_evals: config.subsample_sizes.iter().map(|n| n * n).sum(),
            restricted_chain_steps: config.n_regions
                * config.chain_lengths.iter().sum::<usize>(),
            per_core_steps: config.per_core_budget(),
        },
    };

    Ok(EstimateReport {
        mu_hat,
        per_region_mu,
        weights,
        partitions,
        traces_by_round,
        bank,
        diagnostics,
    })
}

/// Naive parallelization baseline: `n_regions` unrestricted chains from
/// dispersed starts, each spending the full per-core budget, equally
/// weighted.
pub fn run_naive(config: &ExperimentConfig) -> Result<EstimateReport> {
    config.validate()?;
    let n = config.n_regions;
    let steps = config.per_core_budget();
    let mut init_rng = stream_rng(derive_seed(config.seed, TAG_NAIVE_INITS), 0);
    let inits = dispersed_inits(&config.target, n, &config.init_box, &mut init_rng)?;
    let region_targets: Vec<RegionTarget> = (0..n)
        .map(|_| RegionTarget::whole_space(config.target.clone()))
        .collect();
    // whole-space restrictions all carry region index 0; re-tag chain ids
    let mut traces = run_parallel_chains(
        &config.proposal,
        &region_targets,
        &inits,
        steps,
        derive_seed(config.seed, TAG_NAIVE_CHAINS),
    )?;
    for (i, t) in traces.iter_mut().enumerate() {
        t.chain_id = i as u32;
        t.region_id = None;
    }

    let per_region_mu: Vec<Vec<f64>> = traces
        .iter()
        .map(|t| region_mean(t, &config.test_function, config.burn_in))
        .collect::<Result<_>>()?;
    let weights = normalize_weights(&vec![1.0; n])?;
    let mu_hat = combine(&per_region_mu, &weights)?;
    let diagnostics = Diagnostics {
        acceptance_rates: traces.iter().map(ChainTrace::acceptance_rate).collect(),
        region_sample_counts: traces.iter().map(|t| t.len() - config.burn_in).collect(),
        budget: KernelBudget {
            exploration_steps: 0,
            clustering_affinity_evals: 0,
            restricted_chain_steps: n * steps,
            per_core_steps: steps,
        },
    };
    Ok(EstimateReport {
        mu_hat,
        per_region_mu,
        weights,
        partitions: Vec::new(),
        traces_by_round: vec![traces],
        bank: SampleBank::new(config.target.dimension()),
        diagnostics,
    })
}

/// Parallel-tempering baseline: one replica-exchange run over the matched
/// per-core budget, estimating with the cold chain's ergodic mean.
pub fn run_pt_baseline(config: &ExperimentConfig) -> Result<EstimateReport> {
    config.validate()?;
    let steps = config.per_core_budget();
    let mut init_rng = stream_rng(derive_seed(config.seed, TAG_INITS), 0);
    let inits = dispersed_inits(
        &config.target,
        config.ladder.len(),
        &config.init_box,
        &mut init_rng,
    )?;
    let bank = parallel_tempering(
        &config.target,
        &config.proposal,
        &config.ladder,
        &inits,
        steps,
        derive_seed(config.seed, TAG_PT_BASELINE),
    )?;
    if config.burn_in >= bank.len() {
        return Err(Error::BurnInTooLarge {
            burn_in: config.burn_in,
            len: bank.len(),
        });
    }
    let mut acc = vec![0.0; config.test_function.output_dimension()];
    let used = &bank.points()[config.burn_in..];
    for p in used {
        for (a, v) in acc.iter_mut().zip(config.test_function.eval(p)) {
            *a += v;
        }
    }
    for a in &mut acc {
        *a /= used.len() as f64;
    }
    let weights = normalize_weights(&[1.0])?;
    Ok(EstimateReport {
        mu_hat: acc.clone(),
        per_region_mu: vec![acc],
        weights,
        partitions: Vec::new(),
        traces_by_round: Vec::new(),
        bank,
        diagnostics: Diagnostics {
            acceptance_rates: Vec::new(),
            region_sample_counts: Vec::new(),
            budget: KernelBudget {
                exploration_steps: steps * config.ladder.len(),
                clustering_affinity_evals: 0,
                restricted_chain_steps: 0,
                per_core_steps: steps,
            },
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mh::run_chain;
    use crate::targets::{symmetric_mixture_1d, TestFunction};

    fn small_config(n_regions: usize, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            n_regions,
            n0: 400,
            rounds: 1,
            subsample_sizes: vec![60],
            chain_lengths: vec![400],
            seed,
            target: symmetric_mixture_1d(1.0, 0.4),
            proposal: ProposalKernel::UniformBox { tau: 0.25 },
            test_function: TestFunction::identity(1),
            burn_in: 0,
            ladder: TemperLadder::default_ladder(),
            init_box: vec![(-2.5, 2.5)],
            bridge_family: BridgeFamily::Gaussian,
            bridge_dof: None,
            pool_rounds: false,
        }
    }

    #[test]
    fn region_mean_examples() {
        let trace = ChainTrace {
            states: vec![vec![0.0], vec![2.0]],
            accepted: vec![true, true],
            chain_id: 0,
            region_id: None,
            acceptance_count: 1,
            seed: 0,
        };
        let ones = region_mean(&trace, &TestFunction::constant_one(), 0).unwrap();
        assert_eq!(ones, vec![1.0]);
        let mean = region_mean(&trace, &TestFunction::identity(1), 0).unwrap();
        assert_eq!(mean, vec![1.0]);
        assert!(matches!(
            region_mean(&trace, &TestFunction::identity(1), 2),
            Err(Error::BurnInTooLarge { .. })
        ));
    }

    #[test]
    fn combine_examples() {
        let w = normalize_weights(&[1.0]).unwrap();
        assert_eq!(combine(&[vec![3.5]], &w).unwrap(), vec![3.5]);

        let w = normalize_weights(&[1.0, 1.0]).unwrap();
        assert_eq!(combine(&[vec![-1.0], vec![1.0]], &w).unwrap(), vec![0.0]);

        let w = normalize_weights(&[0.3, 0.7]).unwrap();
        let out = combine(&[vec![-3.0], vec![3.0]], &w).unwrap();
        assert!((out[0] - 1.2).abs() < 1e-12);

        assert!(combine(&[vec![1.0]], &w).is_err());
    }

    #[test]
    fn degenerate_single_region_run_equals_plain_mh() {
        let config = small_config(1, 33);
        let report = run_algorithm1(&config).unwrap();
        assert_eq!(report.weights.w_hat, vec![1.0]);

        let trace = &report.traces_by_round[0][0];
        let expected = run_chain(
            &trace.states[0],
            &|x: &[f64]| config.target.log_density_unnorm(x),
            &config.proposal,
            config.chain_lengths[0],
            derive_seed(config.seed, tag_chains(0)),
        )
        .unwrap();
        assert_eq!(trace.states, expected.states);

        let plain_mean = region_mean(&expected, &config.test_function, 0).unwrap();
        assert_eq!(report.mu_hat, plain_mean);
    }

    #[test]
    fn report_is_deterministic_and_exact() {
        let config = small_config(2, 7);
        let a = run_algorithm1(&config).unwrap();
        let b = run_algorithm1(&config).unwrap();
        assert_eq!(a.mu_hat, b.mu_hat);
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.traces_by_round[0], b.traces_by_round[0]);

        // bitwise combination identity
        let recombined = combine(&a.per_region_mu, &a.weights).unwrap();
        for (x, y) in a.mu_hat.iter().zip(&recombined) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn budget_accounting_adds_up() {
        let config = small_config(2, 7);
        let report = run_algorithm1(&config).unwrap();
        let b = &report.diagnostics.budget;
        assert_eq!(b.exploration_steps, 400 * 4);
        assert_eq!(b.clustering_affinity_evals, 60 * 60);
        assert_eq!(b.restricted_chain_steps, 2 * 400);
        assert_eq!(b.per_core_steps, 800);
        assert_eq!(config.per_core_budget(), 800);
    }

    #[test]
    fn naive_baseline_reports_uniform_weights() {
        let config = small_config(3, 11);
        let report = run_naive(&config).unwrap();
        assert_eq!(report.per_region_mu.len(), 3);
        for w in &report.weights.w_hat {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(report.traces_by_round[0][0].len(), 801);
    }

    #[test]
    fn pt_baseline_runs_matched_budget() {
        let config = small_config(2, 13);
        let report = run_pt_baseline(&config).unwrap();
        assert_eq!(report.bank.len(), config.per_core_budget());
        assert_eq!(report.mu_hat.len(), 1);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut config = small_config(2, 1);
        config.subsample_sizes = vec![60, 60];
        assert!(matches!(run_algorithm1(&config), Err(Error::InvalidConfig(_))));

        let mut config = small_config(2, 1);
        config.init_box = vec![(-1.0, 1.0), (-1.0, 1.0)];
        assert!(run_algorithm1(&config).is_err());
    }
}
