//! Exploration phase: parallel tempering from well-dispersed starts.
//!
//! Produces the initial sample bank X that seeds the first partition. Only
//! the cold (beta = 1) replica's visited states enter the bank; tempered
//! replicas exist to carry the chain across energy barriers. Replicas step
//! concurrently between swap barriers, each on its own RNG stream, with swap
//! decisions on a reserved stream, so runs are reproducible independent of
//! scheduling.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::csvio;
use crate::error::{Error, Result};
use crate::mh::{ChainTrace, Proposal};
use crate::parallel;
use crate::rng::{stream_rng, SWAP_STREAM};
use crate::targets::TargetModel;

/// Inverse-temperature ladder for replica exchange.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperLadder {
    betas: Vec<f64>,
    swap_interval: usize,
}

impl TemperLadder {
    /// `betas` must start at exactly 1 and be strictly decreasing within (0, 1].
    pub fn new(betas: Vec<f64>, swap_interval: usize) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidLadder("ladder must hold at least one temperature".into()));
        }
        if betas[0] != 1.0 {
            return Err(Error::InvalidLadder(format!(
                "first inverse temperature must be 1, got {}",
                betas[0]
            )));
        }
        for w in betas.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::InvalidLadder("betas must be strictly decreasing".into()));
            }
        }
        if let Some(&last) = betas.last() {
            if !(last > 0.0) {
                return Err(Error::InvalidLadder("betas must stay positive".into()));
            }
        }
        if swap_interval == 0 {
            return Err(Error::InvalidLadder("swap interval must be at least 1".into()));
        }
        Ok(TemperLadder {
            betas,
            swap_interval,
        })
    }

    /// Geometric ladder beta_k = beta_min^(k/(len-1)); the crate default is
    /// length 4 down to 0.3.
    pub fn geometric(len: usize, beta_min: f64, swap_interval: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidLadder("ladder must hold at least one temperature".into()));
        }
        if !(beta_min > 0.0 && beta_min < 1.0) {
            return Err(Error::InvalidLadder(format!(
                "geometric ladder needs 0 < beta_min < 1, got {beta_min}"
            )));
        }
        let betas = if len == 1 {
            vec![1.0]
        } else {
            (0..len)
                .map(|k| beta_min.powf(k as f64 / (len - 1) as f64))
                .collect()
        };
        TemperLadder::new(betas, swap_interval)
    }

    pub fn default_ladder() -> Self {
        TemperLadder::geometric(4, 0.3, 10).expect("default ladder is valid")
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn swap_interval(&self) -> usize {
        self.swap_interval
    }
}

/// Provenance of a bank point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceTag {
    Exploration,
    Restricted { round: u32, chain_id: u32 },
}

/// Pooled history X of visited states.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBank {
    points: Vec<Vec<f64>>,
    tags: Vec<SourceTag>,
    dimension: usize,
}

impl SampleBank {
    pub fn new(dimension: usize) -> Self {
        SampleBank {
            points: Vec::new(),
            tags: Vec::new(),
            dimension,
        }
    }

    pub fn push(&mut self, point: Vec<f64>, tag: SourceTag) {
        debug_assert_eq!(point.len(), self.dimension);
        self.points.push(point);
        self.tags.push(tag);
    }

    /// Append the post-initial states of a restricted-chain trace.
    pub fn extend_from_trace(&mut self, trace: &ChainTrace, round: u32) {
        for state in trace.states.iter().skip(1) {
            self.push(
                state.clone(),
                SourceTag::Restricted {
                    round,
                    chain_id: trace.chain_id,
                },
            );
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn tags(&self) -> &[SourceTag] {
        &self.tags
    }

    /// Same CSV schema as chain traces, with the region column left empty.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        csvio::write_header(w, self.dimension)?;
        for (step, (point, tag)) in self.points.iter().zip(&self.tags).enumerate() {
            let chain_id = match tag {
                SourceTag::Exploration => 0,
                SourceTag::Restricted { chain_id, .. } => *chain_id,
            };
            csvio::write_row(w, chain_id, None, step, point, true)?;
        }
        Ok(())
    }
}

/// Log acceptance ratio of a replica swap between inverse temperatures
/// `beta_a`, `beta_b` holding states with unnormalized log densities
/// `log_a`, `log_b`.
pub fn swap_log_ratio(beta_a: f64, beta_b: f64, log_a: f64, log_b: f64) -> f64 {
    (beta_a - beta_b) * (log_b - log_a)
}

#[derive(Clone)]
struct Replica {
    state: Vec<f64>,
    log_density: f64,
    rng: ChaCha8Rng,
}

fn advance_replica<P: Proposal + ?Sized>(
    mut rep: Replica,
    beta: f64,
    target: &TargetModel,
    proposal: &P,
    steps: usize,
    record: bool,
) -> (Replica, Vec<Vec<f64>>) {
    let mut visited = if record { Vec::with_capacity(steps) } else { Vec::new() };
    for _ in 0..steps {
        let candidate = proposal.sample(&rep.state, &mut rep.rng);
        let u: f64 = rep.rng.random();
        let cand_ld = target.log_density_unnorm(&candidate);
        let log_ratio = if cand_ld == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else if proposal.is_symmetric() {
            beta * (cand_ld - rep.log_density)
        } else {
            beta * (cand_ld - rep.log_density)
                + proposal.log_density(&candidate, &rep.state)
                - proposal.log_density(&rep.state, &candidate)
        };
        if u.ln() < log_ratio {
            rep.state = candidate;
            rep.log_density = cand_ld;
        }
        if record {
            visited.push(rep.state.clone());
        }
    }
    (rep, visited)
}

/// Replica-exchange exploration of `target`.
///
/// One replica per ladder rung, `inits[j]` starting replica `j`; returns the
/// cold chain's `steps` visited states. Adjacent-pair swaps run every
/// `swap_interval` sweeps, alternating even/odd pairings.
pub fn parallel_tempering<P: Proposal>(
    target: &TargetModel,
    proposal: &P,
    ladder: &TemperLadder,
    inits: &[Vec<f64>],
    steps: usize,
    seed: u64,
) -> Result<SampleBank> {
    if inits.len() != ladder.len() {
        return Err(Error::LengthMismatch(format!(
            "{} initial states for {} ladder rungs",
            inits.len(),
            ladder.len()
        )));
    }
    let mut replicas = Vec::with_capacity(ladder.len());
    for (j, init) in inits.iter().enumerate() {
        let ld = target.log_density_unnorm(init);
        if ld == f64::NEG_INFINITY {
            return Err(Error::OutsideSupport);
        }
        replicas.push(Replica {
            state: init.clone(),
            log_density: ld,
            rng: stream_rng(seed, j as u64),
        });
    }
    let mut swap_rng = stream_rng(seed, SWAP_STREAM);
    let betas = ladder.betas();
    let mut bank = SampleBank::new(target.dimension());

    let mut done = 0usize;
    let mut swap_round = 0usize;
    while done < steps {
        let window = ladder.swap_interval().min(steps - done);
        let advanced = parallel::map_indexed(replicas.len(), |j| {
            advance_replica(
                replicas[j].clone(),
                betas[j],
                target,
                proposal,
                window,
                j == 0,
            )
        });
        let mut new_replicas = Vec::with_capacity(replicas.len());
        for (j, (rep, visited)) in advanced.into_iter().enumerate() {
            if j == 0 {
                for state in visited {
                    bank.push(state, SourceTag::Exploration);
                }
            }
            new_replicas.push(rep);
        }
        replicas = new_replicas;
        done += window;

        if done < steps && replicas.len() > 1 {
            let parity = swap_round % 2;
            let mut p = parity;
            while p + 1 < replicas.len() {
                let ratio = swap_log_ratio(
                    betas[p],
                    betas[p + 1],
                    replicas[p].log_density,
                    replicas[p + 1].log_density,
                );
                let u: f64 = swap_rng.random();
                if u.ln() < ratio {
                    let (a, b) = replicas.split_at_mut(p + 1);
                    std::mem::swap(&mut a[p].state, &mut b[0].state);
                    std::mem::swap(&mut a[p].log_density, &mut b[0].log_density);
                }
                p += 2;
            }
            swap_round += 1;
        }
    }
    Ok(bank)
}

/// Uniform draws in an axis-aligned box, rejection-filtered to the support.
///
/// Fails once 10^6 total draws could not produce the requested count.
pub fn dispersed_inits(
    target: &TargetModel,
    count: usize,
    bounds: &[(f64, f64)],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>> {
    const CAP: usize = 1_000_000;
    if bounds.len() != target.dimension() {
        return Err(Error::DimensionMismatch {
            expected: target.dimension(),
            got: bounds.len(),
        });
    }
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        if attempts >= CAP {
            return Err(Error::RejectionCapExceeded { cap: CAP });
        }
        attempts += 1;
        let point: Vec<f64> = bounds
            .iter()
            .map(|&(lo, hi)| {
                if lo == hi {
                    lo
                } else {
                    rng.random_range(lo..=hi)
                }
            })
            .collect();
        if target.in_support(&point) {
            out.push(point);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mh::{run_chain, ProposalKernel};
    use crate::targets::{s_shape_uniform, symmetric_mixture_1d};

    #[test]
    fn ladder_validation() {
        assert!(TemperLadder::new(vec![0.9, 0.5], 10).is_err());
        assert!(TemperLadder::new(vec![1.0, 1.0], 10).is_err());
        assert!(TemperLadder::new(vec![1.0, 0.5, 0.7], 10).is_err());
        assert!(TemperLadder::new(vec![1.0, 0.5], 0).is_err());
        let ladder = TemperLadder::geometric(4, 0.3, 10).unwrap();
        assert_eq!(ladder.betas()[0], 1.0);
        assert!((ladder.betas()[3] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn swap_between_identical_states_always_accepts() {
        assert_eq!(swap_log_ratio(1.0, 0.4, -3.25, -3.25), 0.0);
        // ln(u) < 0 for u drawn in [0, 1), so ratio 0 accepts surely
    }

    #[test]
    fn single_rung_ladder_reduces_to_plain_mh() {
        let target = symmetric_mixture_1d(1.0, 0.4);
        let proposal = ProposalKernel::UniformBox { tau: 0.2 };
        let ladder = TemperLadder::new(vec![1.0], 7).unwrap();
        let bank =
            parallel_tempering(&target, &proposal, &ladder, &[vec![-1.0]], 300, 99).unwrap();
        let chain = run_chain(
            &[-1.0],
            &|x: &[f64]| target.log_density_unnorm(x),
            &proposal,
            300,
            99,
        )
        .unwrap();
        assert_eq!(bank.points(), &chain.states[1..]);
    }

    #[test]
    fn tempering_visits_both_modes() {
        let target = symmetric_mixture_1d(1.0, 0.4);
        let proposal = ProposalKernel::UniformBox { tau: 0.2 };
        let ladder = TemperLadder::default_ladder();
        let mut rng = stream_rng(5, 1_000);
        let inits = dispersed_inits(&target, ladder.len(), &[(-2.5, 2.5)], &mut rng).unwrap();
        let bank = parallel_tempering(&target, &proposal, &ladder, &inits, 8_000, 5).unwrap();
        assert_eq!(bank.len(), 8_000);
        let left = bank.points().iter().filter(|p| p[0] <= 0.0).count() as f64;
        let frac = left / bank.len() as f64;
        // exact masses are 0.5/0.5; the threshold is loose for MC noise
        assert!(frac >= 0.2 && frac <= 0.8, "left fraction {frac}");
    }

    #[test]
    fn tempering_is_deterministic() {
        let target = symmetric_mixture_1d(1.0, 0.4);
        let proposal = ProposalKernel::UniformBox { tau: 0.2 };
        let ladder = TemperLadder::default_ladder();
        let inits = vec![vec![-1.0], vec![-0.5], vec![0.5], vec![1.0]];
        let a = parallel_tempering(&target, &proposal, &ladder, &inits, 500, 12).unwrap();
        let b = parallel_tempering(&target, &proposal, &ladder, &inits, 500, 12).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bank_points_stay_in_support() {
        let target = s_shape_uniform();
        let proposal = ProposalKernel::UniformBox { tau: 0.1 };
        let ladder = TemperLadder::geometric(3, 0.4, 5).unwrap();
        let inits = vec![vec![-1.05, 0.0], vec![1.05, 0.0], vec![0.0, 1.05]];
        let bank = parallel_tempering(&target, &proposal, &ladder, &inits, 2_000, 3).unwrap();
        assert!(bank.points().iter().all(|p| target.in_support(p)));
    }

    #[test]
    fn dispersed_inits_on_s_shape() {
        let target = s_shape_uniform();
        let mut rng = stream_rng(2, 0);
        let inits = dispersed_inits(&target, 10, &[(-1.2, 1.2), (-1.2, 1.2)], &mut rng).unwrap();
        assert_eq!(inits.len(), 10);
        assert!(inits.iter().all(|p| target.in_support(p)));
    }

    #[test]
    fn dispersed_inits_single_point_box() {
        let target = symmetric_mixture_1d(1.0, 0.4);
        let mut rng = stream_rng(2, 0);
        let inits = dispersed_inits(&target, 1, &[(0.75, 0.75)], &mut rng).unwrap();
        assert_eq!(inits, vec![vec![0.75]]);
    }

    #[test]
    fn dispersed_inits_cover_both_modes() {
        let target = symmetric_mixture_1d(1.0, 0.4);
        let mut rng = stream_rng(40, 0);
        let inits = dispersed_inits(&target, 100, &[(-3.0, 3.0)], &mut rng).unwrap();
        // at least one draw within 3 sigma of each mode
        assert!(inits.iter().any(|p| (p[0] + 1.0).abs() <= 1.2));
        assert!(inits.iter().any(|p| (p[0] - 1.0).abs() <= 1.2));
    }

    #[test]
    fn rejection_cap_fires_for_disjoint_box() {
        let target = s_shape_uniform();
        let mut rng = stream_rng(2, 0);
        let err = dispersed_inits(&target, 1, &[(8.0, 9.0), (8.0, 9.0)], &mut rng).unwrap_err();
        assert!(matches!(err, Error::RejectionCapExceeded { .. }));
    }

    #[test]
    fn bank_csv_has_header_and_rows() {
        let mut bank = SampleBank::new(1);
        bank.push(vec![1.0], SourceTag::Exploration);
        bank.push(vec![2.0], SourceTag::Exploration);
        let mut buf = Vec::new();
        bank.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().starts_with("0,,0,"));
    }
}
