//! Split-merge MCMC driver.
//!
//! One iteration runs a parallel assignment sweep over the existing
//! clusters, resamples cluster parameters and weights, then runs the two
//! split/merge chains in an order chosen by a fair coin.

pub mod moves;

use std::time::Instant;

use rand::distr::OpenClosed01;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dm::{cell_loglik, log_joint, sample_mixing_weights, sample_theta_posterior};
use crate::error::{Error, Result};
use crate::rng::{stream, Domain};
use crate::state::{prune_empty_clusters, CountMatrix, Hyperparams, ModelState, Partition};

pub use moves::{
    draw_anchors, local_gibbs_subclusters, mh_accept, propose_merge_random,
    propose_merge_restricted, propose_split, propose_split_random, restricted_gibbs, select_move,
    split_dimension_correction, split_log_state_ratio, ClusterView, Mechanism, MoveKind,
    MoveProposal, MoveTarget,
};

/// Below this many cells the sweep runs on the calling thread; the result
/// is the same either way.
const PAR_MIN_CELLS: usize = 512;

/// Which visited state a run reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// Highest log-joint state after burn-in.
    #[default]
    Map,
    /// State after the final iteration.
    Last,
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "map" => Ok(Estimator::Map),
            "last" => Ok(Estimator::Last),
            other => Err(Error::InvalidArgument(format!("unknown estimator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub hp: Hyperparams,
    pub n_iterations: usize,
    pub burn_in: usize,
    pub local_gibbs_iters: usize,
    pub split_moves_per_iter: usize,
    pub merge_moves_per_iter: usize,
    pub k_init: usize,
    pub seed: u64,
    pub n_threads: usize,
    pub estimator: Estimator,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            hp: Hyperparams::default(),
            n_iterations: 200,
            burn_in: 50,
            local_gibbs_iters: 1,
            split_moves_per_iter: 1,
            merge_moves_per_iter: 1,
            k_init: 1,
            seed: 1,
            n_threads: 1,
            estimator: Estimator::Map,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if self.n_iterations == 0 {
            return Err(Error::InvalidArgument("n_iterations must be positive".into()));
        }
        if self.burn_in >= self.n_iterations {
            return Err(Error::InvalidArgument(format!(
                "burn_in ({}) must be below n_iterations ({})",
                self.burn_in, self.n_iterations
            )));
        }
        if self.local_gibbs_iters == 0 {
            return Err(Error::InvalidArgument("local_gibbs_iters must be positive".into()));
        }
        if self.k_init == 0 {
            return Err(Error::InvalidArgument("k_init must be positive".into()));
        }
        if self.n_threads == 0 {
            return Err(Error::InvalidArgument("n_threads must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub k: usize,
    pub log_joint: f64,
    pub split_proposed: usize,
    pub split_accepted: usize,
    pub merge_proposed: usize,
    pub merge_accepted: usize,
    /// Cells that changed cluster in the sweep.
    pub sweep_moved: usize,
    /// Sweep moves refused because they would have emptied a cluster.
    pub sweep_blocked: usize,
    pub wall_ms: f64,
}

/// Wall-clock totals per phase, in milliseconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub init: f64,
    pub sweep: f64,
    pub params: f64,
    pub moves: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config: SamplerConfig,
    pub trace: Vec<IterationTrace>,
    pub final_k: usize,
    /// Labels of the state chosen by the estimator.
    #[serde(skip)]
    pub labels: Vec<usize>,
    #[serde(skip)]
    pub last_labels: Vec<usize>,
    #[serde(skip)]
    pub map_labels: Vec<usize>,
    pub last_k: usize,
    pub map_k: usize,
    pub map_log_joint: f64,
    pub map_iteration: usize,
    pub labels_path: Option<String>,
    pub wall_ms: PhaseTimes,
}

impl RunReport {
    pub fn partition(&self) -> Partition {
        Partition::new(self.labels.clone())
    }
}

/// Random initial state with `k_init` clusters.
///
/// Cells are assigned uniformly; clusters left empty are pruned, so the
/// result can have fewer than `k_init` clusters on tiny inputs.
pub fn init_state(matrix: &CountMatrix, config: &SamplerConfig) -> Result<ModelState> {
    let n = matrix.n_cells();
    let k = config.k_init;
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k_init {k} must be in 1..={n}")));
    }
    let seed = config.seed;
    let assignments: Vec<usize> = (0..n)
        .map(|i| {
            if k == 1 {
                0
            } else {
                stream(seed, Domain::Init, 0, i as u64).random_range(0..k)
            }
        })
        .collect();
    // Weights and theta are placeholders until the stats exist.
    let placeholder = ModelState::from_parts(
        matrix,
        assignments,
        vec![1.0 / (k + 1) as f64; k + 1],
        vec![crate::dm::LogProbVector::uniform(matrix.n_genes()); k],
    )?;
    let mut state = prune_empty_clusters(placeholder);
    for c in 0..state.k() {
        let mut rng = stream(seed, Domain::Init, 1, c as u64);
        state.log_theta[c] = sample_theta_posterior(&state.stats[c], config.hp.lambda, &mut rng);
    }
    let mut rng = stream(seed, Domain::Init, 2, 0);
    state.weights = sample_mixing_weights(&state.cluster_sizes(), config.hp.alpha, &mut rng)?;
    Ok(state)
}

fn draw_cell(state: &ModelState, matrix: &CountMatrix, seed: u64, iteration: usize, i: usize) -> usize {
    let k = state.k();
    let x = matrix.cell(i);
    let mut lw: Vec<f64> = (0..k)
        .map(|c| state.weights[c].ln() + cell_loglik(x, state.log_theta[c].values()))
        .collect();
    let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        // Unreachable with positive hyperparameters; keep the cell put.
        log::warn!("cell {i} has zero likelihood under every cluster");
        return state.assignments[i];
    }
    let mut total = 0.0;
    for v in &mut lw {
        *v = (*v - max).exp();
        total += *v;
    }
    let mut rng = stream(seed, Domain::Sweep, iteration as u64, i as u64);
    let u: f64 = rng.sample::<f64, _>(OpenClosed01) * total;
    let mut acc = 0.0;
    for (c, &w) in lw.iter().enumerate() {
        acc += w;
        if u <= acc {
            return c;
        }
    }
    lw.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Assignment sweep over the existing clusters.
///
/// Every cell draws a candidate cluster from `pi_k * p(x_i | theta_k)` in
/// parallel, each from its own stream. Candidates are then applied in cell
/// order, except that a cell never leaves a cluster it is the last member
/// of. This is a sequential-scan Gibbs sweep restricted to states with no
/// empty cluster, so the number of clusters is unchanged. Returns
/// `(moved, blocked)`.
pub fn sample_assignments_parallel(
    state: &mut ModelState,
    matrix: &CountMatrix,
    seed: u64,
    iteration: usize,
) -> (usize, usize) {
    let n = matrix.n_cells();
    if state.k() < 2 {
        return (0, 0);
    }
    let candidates: Vec<usize> = if n >= PAR_MIN_CELLS {
        (0..n)
            .into_par_iter()
            .with_min_len(64)
            .map(|i| draw_cell(state, matrix, seed, iteration, i))
            .collect()
    } else {
        (0..n).map(|i| draw_cell(state, matrix, seed, iteration, i)).collect()
    };
    let (mut moved, mut blocked) = (0, 0);
    for (i, &to) in candidates.iter().enumerate() {
        let from = state.assignments[i];
        if from == to {
            continue;
        }
        if state.stats[from].n_cells() == 1 {
            blocked += 1;
            continue;
        }
        let x = matrix.cell(i);
        state.stats[from].remove_cell(x);
        state.stats[to].add_cell(x);
        state.assignments[i] = to;
        moved += 1;
    }
    (moved, blocked)
}

/// Redraws every cluster parameter from its posterior and the weights from
/// `Dirichlet(n_1, .., n_K, alpha)`.
pub fn resample_cluster_params(
    state: &mut ModelState,
    hp: &Hyperparams,
    seed: u64,
    iteration: usize,
) -> Result<()> {
    let stats = &state.stats;
    state.log_theta = (0..stats.len())
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, Domain::Theta, iteration as u64, c as u64);
            sample_theta_posterior(&stats[c], hp.lambda, &mut rng)
        })
        .collect();
    let mut rng = stream(seed, Domain::Weights, iteration as u64, 0);
    state.weights = sample_mixing_weights(&state.cluster_sizes(), hp.alpha, &mut rng)?;
    Ok(())
}

#[derive(Default)]
struct MoveCounts {
    split_proposed: usize,
    split_accepted: usize,
    merge_proposed: usize,
    merge_accepted: usize,
}

fn check_ratio(state: &ModelState, proposal: &MoveProposal, next: &ModelState, matrix: &CountMatrix, hp: &Hyperparams) {
    if cfg!(debug_assertions) && matrix.n_cells() * matrix.n_genes() <= 4096 {
        let direct = log_joint(next, matrix, hp) - log_joint(state, matrix, hp);
        let r = proposal.log_state_ratio;
        if direct.is_finite() && r.is_finite() {
            debug_assert!(
                (direct - r).abs() < 1e-8 * direct.abs().max(1.0),
                "state ratio {r} disagrees with joint difference {direct}"
            );
        }
    }
}

fn run_chain(
    mut state: ModelState,
    matrix: &CountMatrix,
    config: &SamplerConfig,
    iteration: usize,
    mechanism: Mechanism,
    counts: &mut MoveCounts,
) -> Result<ModelState> {
    let (domain, n_moves) = match mechanism {
        Mechanism::Restricted => (Domain::SplitChain, config.split_moves_per_iter),
        Mechanism::Random => (Domain::MergeChain, config.merge_moves_per_iter),
    };
    let hp = &config.hp;
    for m in 0..n_moves {
        let mut rng = stream(config.seed, domain, iteration as u64, m as u64);
        let Some(target) = select_move(&state, &mut rng) else {
            continue;
        };
        let anchors = target.anchors;
        let same = target.kind == MoveKind::Split;
        let proposal = match (mechanism, same) {
            (Mechanism::Restricted, true) => {
                let k = state.assignments[anchors.0];
                propose_split(&state, matrix, k, anchors, config.local_gibbs_iters, hp, &mut rng)
            }
            (Mechanism::Restricted, false) => {
                propose_merge_restricted(&state, matrix, anchors, config.local_gibbs_iters, hp, &mut rng)
            }
            (Mechanism::Random, true) => {
                let k = state.assignments[anchors.0];
                propose_split_random(&state, matrix, k, anchors, hp, &mut rng)
            }
            (Mechanism::Random, false) => propose_merge_random(&state, anchors, hp, &mut rng),
        };
        let mut proposal = match proposal {
            Ok(p) => p,
            Err(Error::ProposalImpossible(_)) => continue,
            Err(e) => return Err(e),
        };
        let (forward, reverse) = target.selection_log_probs(&proposal);
        proposal.log_transition_forward += forward;
        proposal.log_transition_reverse += reverse;
        let split = proposal.kind == MoveKind::Split;
        if split {
            counts.split_proposed += 1;
        } else {
            counts.merge_proposed += 1;
        }
        if mh_accept(&proposal, &mut rng) {
            let next = proposal.apply(state.clone());
            check_ratio(&state, &proposal, &next, matrix, hp);
            state = next;
            if split {
                counts.split_accepted += 1;
            } else {
                counts.merge_accepted += 1;
            }
        }
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy, Default)]
struct StepTimes {
    sweep: f64,
    params: f64,
    moves: f64,
}

fn step_timed(
    state: ModelState,
    matrix: &CountMatrix,
    config: &SamplerConfig,
    iteration: usize,
) -> Result<(ModelState, IterationTrace, StepTimes)> {
    let start = Instant::now();
    let mut state = state;
    let (moved, blocked) = sample_assignments_parallel(&mut state, matrix, config.seed, iteration);
    let mut state = prune_empty_clusters(state);
    let t_sweep = start.elapsed().as_secs_f64() * 1e3;

    resample_cluster_params(&mut state, &config.hp, config.seed, iteration)?;
    let t_params = start.elapsed().as_secs_f64() * 1e3 - t_sweep;

    let mut counts = MoveCounts::default();
    let restricted_first = stream(config.seed, Domain::MoveOrder, iteration as u64, 0).random::<bool>();
    let order = if restricted_first {
        [Mechanism::Restricted, Mechanism::Random]
    } else {
        [Mechanism::Random, Mechanism::Restricted]
    };
    for mech in order {
        state = run_chain(state, matrix, config, iteration, mech, &mut counts)?;
    }
    let total = start.elapsed().as_secs_f64() * 1e3;

    let trace = IterationTrace {
        iteration,
        k: state.k(),
        log_joint: log_joint(&state, matrix, &config.hp),
        split_proposed: counts.split_proposed,
        split_accepted: counts.split_accepted,
        merge_proposed: counts.merge_proposed,
        merge_accepted: counts.merge_accepted,
        sweep_moved: moved,
        sweep_blocked: blocked,
        wall_ms: total,
    };
    let times = StepTimes {
        sweep: t_sweep,
        params: t_params,
        moves: total - t_sweep - t_params,
    };
    Ok((state, trace, times))
}

/// One full iteration; parallel phases use the current rayon pool.
pub fn step(
    state: ModelState,
    matrix: &CountMatrix,
    config: &SamplerConfig,
    iteration: usize,
) -> Result<(ModelState, IterationTrace)> {
    step_timed(state, matrix, config, iteration).map(|(s, t, _)| (s, t))
}

/// Owns the worker pool for a configuration.
pub struct Sampler {
    config: SamplerConfig,
    pool: rayon::ThreadPool,
}

impl Sampler {
    pub fn new(config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.n_threads)
            .build()
            .map_err(|e| Error::Runtime(format!("cannot start worker pool: {e}")))?;
        Ok(Self { config, pool })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    /// Runs `f` inside this sampler's worker pool.
    pub fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        self.pool.install(f)
    }

    pub fn run(&self, matrix: &CountMatrix) -> Result<RunReport> {
        self.run_with(matrix, |_, _| {})
    }

    /// Runs the chain, calling `observe` after every iteration.
    pub fn run_with(
        &self,
        matrix: &CountMatrix,
        mut observe: impl FnMut(&ModelState, &IterationTrace) + Send,
    ) -> Result<RunReport> {
        let config = &self.config;
        self.pool.install(|| {
            let t0 = Instant::now();
            let mut state = init_state(matrix, config)?;
            let mut times = PhaseTimes {
                init: t0.elapsed().as_secs_f64() * 1e3,
                ..PhaseTimes::default()
            };
            let mut trace = Vec::with_capacity(config.n_iterations);
            let mut map: Option<(f64, usize, Vec<usize>, usize)> = None;
            for it in 0..config.n_iterations {
                let (next, tr, st) = step_timed(state, matrix, config, it)?;
                state = next;
                times.sweep += st.sweep;
                times.params += st.params;
                times.moves += st.moves;
                if it >= config.burn_in && map.as_ref().is_none_or(|m| tr.log_joint > m.0) {
                    map = Some((tr.log_joint, it, state.assignments.clone(), state.k()));
                }
                observe(&state, &tr);
                trace.push(tr);
            }
            times.total = t0.elapsed().as_secs_f64() * 1e3;
            let (map_lj, map_it, map_labels, map_k) =
                map.expect("burn_in < n_iterations guarantees a recorded state");
            let last_labels = state.assignments.clone();
            let last_k = state.k();
            let (labels, final_k) = match config.estimator {
                Estimator::Map => (map_labels.clone(), map_k),
                Estimator::Last => (last_labels.clone(), last_k),
            };
            Ok(RunReport {
                config: config.clone(),
                trace,
                final_k,
                labels,
                last_labels,
                map_labels,
                last_k,
                map_k,
                map_log_joint: map_lj,
                map_iteration: map_it,
                labels_path: None,
                wall_ms: times,
            })
        })
    }
}

/// Convenience wrapper: builds a [`Sampler`] and runs it.
pub fn run(matrix: &CountMatrix, config: &SamplerConfig) -> Result<RunReport> {
    Sampler::new(config.clone())?.run(matrix)
}
