//! Split and merge proposals.
//!
//! Two reversible move pairs act on the partition:
//!
//! * the *restricted* pair proposes splits built by restricted Gibbs over two
//!   subclusters, with the deterministic merge as reverse;
//! * the *random* pair proposes merges, whose reverse is a uniformly random
//!   split.
//!
//! Each attempt flips a coin between a split of one cluster and a merge of
//! two (see [`select_move`]). Anchor cells `(i, j)` tie the directions
//! together: a split keeps `i` on side 0 and `j` on side 1, and a merge
//! draws one anchor from each cluster. Selection probabilities depend on K
//! and the cluster sizes and enter the acceptance ratio.
//!
//! Proposed weights use `pi_k0 = u * pi_k`, `pi_k1 = (1 - u) * pi_k` with
//! `u ~ Beta(n_0, n_1)`, and new parameters are drawn from their
//! subcluster (split) or merged (merge) Dirichlet posteriors. The densities
//! of these draws and the Jacobian `pi_k` of the weight map enter the
//! acceptance ratio through [`MoveProposal::log_dimension_correction`].

use rand::distr::OpenClosed01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dm::{
    cell_loglik, log_beta_density_ln, log_dirichlet_density, log_dirichlet_norm, logaddexp,
    sample_log_gamma, sample_theta_posterior, weighted_log_sum, LogProbVector,
};
use crate::error::{Error, Result};
use crate::state::{ClusterStats, CountMatrix, Hyperparams, ModelState, SubclusterState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoveKind {
    Split,
    Merge,
}

/// How the split side of a move pair is generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Restricted,
    Random,
}

/// A fully specified split or merge proposal and its acceptance terms.
#[derive(Debug, Clone, PartialEq)]
pub struct MoveProposal {
    pub kind: MoveKind,
    pub mechanism: Mechanism,
    /// `[k]` for a split, `[k0, k1]` for a merge.
    pub targets: Vec<usize>,
    pub anchors: (usize, usize),
    /// Cells of the split cluster (or of both merged clusters), sorted.
    pub members: Vec<usize>,
    /// Side of each member: proposed sides for a split, current cluster
    /// (0 = `k0`, 1 = `k1`) for a merge.
    pub sub_assignments: Vec<u8>,
    /// `[pi_k0, pi_k1]` for a split, `[pi_k]` for a merge.
    pub proposed_weights: Vec<f64>,
    pub proposed_log_theta: Vec<LogProbVector>,
    pub proposed_stats: Vec<ClusterStats>,
    /// `log q(S*|S)` of the assignment path.
    pub log_transition_forward: f64,
    /// `log q(S|S*)` of the assignment path.
    pub log_transition_reverse: f64,
    /// `log p(S*) - log p(S)`.
    pub log_state_ratio: f64,
    /// Proposal densities of new weights and parameters plus the Jacobian
    /// of the weight map.
    pub log_dimension_correction: f64,
}

impl MoveProposal {
    pub fn log_acceptance(&self) -> f64 {
        self.log_state_ratio + self.log_transition_reverse - self.log_transition_forward
            + self.log_dimension_correction
    }

    /// Applies the move to `state`, returning the proposed state.
    ///
    /// A split keeps side 0 at index `k` and appends side 1 as cluster `K`.
    /// A merge keeps the lower of the two ids and compacts the rest.
    pub fn apply(&self, mut state: ModelState) -> ModelState {
        match self.kind {
            MoveKind::Split => {
                let k = self.targets[0];
                let new_id = state.k();
                for (&m, &side) in self.members.iter().zip(&self.sub_assignments) {
                    if side == 1 {
                        state.assignments[m] = new_id;
                    }
                }
                state.weights[k] = self.proposed_weights[0];
                state.weights.insert(new_id, self.proposed_weights[1]);
                state.log_theta[k] = self.proposed_log_theta[0].clone();
                state.log_theta.push(self.proposed_log_theta[1].clone());
                state.stats[k] = self.proposed_stats[0].clone();
                state.stats.push(self.proposed_stats[1].clone());
            }
            MoveKind::Merge => {
                let (a, b) = {
                    let (x, y) = (self.targets[0], self.targets[1]);
                    (x.min(y), x.max(y))
                };
                for c in &mut state.assignments {
                    if *c == b {
                        *c = a;
                    } else if *c > b {
                        *c -= 1;
                    }
                }
                state.weights[a] = self.proposed_weights[0];
                state.weights.remove(b);
                state.log_theta[a] = self.proposed_log_theta[0].clone();
                state.log_theta.remove(b);
                state.stats[a] = self.proposed_stats[0].clone();
                state.stats.remove(b);
            }
        }
        state
    }
}

/// One cluster's contribution to a split/merge ratio.
#[derive(Debug, Clone, Copy)]
pub struct ClusterView<'a> {
    pub stats: &'a ClusterStats,
    pub weight: f64,
    pub log_theta: &'a [f64],
}

/// `log p(S*)/p(S)` for splitting `parent` into `children`:
///
/// `log a + (n0-1) log pi_k0 + (n1-1) log pi_k1 - (n-1) log pi_k
///  + lnG(lambda V) - V lnG(lambda) + sum_u (lambda-1)(l0 + l1 - l)
///  + s0.l0 + s1.l1 - s.l`,
///
/// with the likelihood sums taken from the cluster statistics.
pub fn split_log_state_ratio(
    parent: ClusterView<'_>,
    children: [ClusterView<'_>; 2],
    hp: &Hyperparams,
) -> f64 {
    let coef = |s: &'_ ClusterStats| {
        let lam1 = hp.lambda - 1.0;
        s.gene_counts()
            .iter()
            .map(move |&x| lam1 + x as f64)
            .collect::<Vec<_>>()
    };
    let mut r = hp.alpha.ln() + log_dirichlet_norm(hp.lambda, parent.stats.n_genes());
    r -= (parent.stats.n_cells() as f64 - 1.0) * parent.weight.ln();
    r -= weighted_log_sum(coef(parent.stats).into_iter(), parent.log_theta);
    for c in &children {
        r += (c.stats.n_cells() as f64 - 1.0) * c.weight.ln();
        r += weighted_log_sum(coef(c.stats).into_iter(), c.log_theta);
    }
    r
}

/// Dimension-matching term for a split of `parent` into `children`:
/// density of the merged parameter under the reverse merge, minus the
/// densities of `u` and the two child parameters, plus `log pi_k`.
pub fn split_dimension_correction(
    parent: ClusterView<'_>,
    children: [ClusterView<'_>; 2],
    hp: &Hyperparams,
) -> f64 {
    let ln_pi = parent.weight.ln();
    let ln_u = children[0].weight.ln() - ln_pi;
    let ln_1mu = children[1].weight.ln() - ln_pi;
    let n0 = children[0].stats.n_cells() as f64;
    let n1 = children[1].stats.n_cells() as f64;
    let mut c = log_dirichlet_density(
        parent.log_theta,
        parent.stats.gene_counts().iter().map(|&x| hp.lambda + x as f64),
    );
    c -= log_beta_density_ln(ln_u, ln_1mu, n0, n1);
    for ch in &children {
        c -= log_dirichlet_density(
            ch.log_theta,
            ch.stats.gene_counts().iter().map(|&x| hp.lambda_bar + x as f64),
        );
    }
    c + ln_pi
}

/// Draws an ordered pair of distinct cells uniformly.
pub fn draw_anchors<R: Rng + ?Sized>(n_cells: usize, rng: &mut R) -> Option<(usize, usize)> {
    if n_cells < 2 {
        return None;
    }
    let i = rng.random_range(0..n_cells);
    let mut j = rng.random_range(0..n_cells - 1);
    if j >= i {
        j += 1;
    }
    Some((i, j))
}

/// Targets of one move attempt.
///
/// A fair coin picks the kind. A split takes a uniformly chosen cluster with
/// at least two cells and an ordered pair of distinct members as anchors. A
/// merge takes a uniformly chosen ordered pair of distinct clusters with one
/// anchor from each. Both orders of a merge pair are needed so that every
/// ordered anchor pair of the reverse split has a matching merge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MoveTarget {
    pub kind: MoveKind,
    pub anchors: (usize, usize),
    k: usize,
    splittable: usize,
}

fn pick<R: Rng + ?Sized>(items: &[usize], rng: &mut R) -> usize {
    items[rng.random_range(0..items.len())]
}

pub fn select_move<R: Rng + ?Sized>(state: &ModelState, rng: &mut R) -> Option<MoveTarget> {
    let sizes = state.cluster_sizes();
    let k = sizes.len();
    let splittable: Vec<usize> = (0..k).filter(|&c| sizes[c] >= 2).collect();
    let split = rng.random::<bool>();
    let anchors = if split {
        if splittable.is_empty() {
            return None;
        }
        let members = state.members(pick(&splittable, rng));
        let (i, j) = draw_anchors(members.len(), rng)?;
        (members[i], members[j])
    } else {
        if k < 2 {
            return None;
        }
        let a = rng.random_range(0..k);
        let mut b = rng.random_range(0..k - 1);
        if b >= a {
            b += 1;
        }
        (pick(&state.members(a), rng), pick(&state.members(b), rng))
    };
    Some(MoveTarget {
        kind: if split { MoveKind::Split } else { MoveKind::Merge },
        anchors,
        k,
        splittable: splittable.len(),
    })
}

fn ln_pairs(n: usize) -> f64 {
    ((n * (n - 1)) as f64).ln()
}

impl MoveTarget {
    /// Log probabilities of selecting this move and of selecting its reverse
    /// from the proposed state, as `(forward, reverse)`. The coin cancels.
    pub fn selection_log_probs(&self, proposal: &MoveProposal) -> (f64, f64) {
        let [n0, n1] = side_sizes(&proposal.sub_assignments);
        let n = n0 + n1;
        let ln = |x: usize| (x as f64).ln();
        match self.kind {
            MoveKind::Split => {
                let forward = -ln(self.splittable) - ln_pairs(n);
                let reverse = -ln_pairs(self.k + 1) - ln(n0) - ln(n1);
                (forward, reverse)
            }
            MoveKind::Merge => {
                let forward = -ln_pairs(self.k) - ln(n0) - ln(n1);
                let after = self.splittable + 1 - usize::from(n0 >= 2) - usize::from(n1 >= 2);
                (forward, -ln(after) - ln_pairs(n))
            }
        }
    }
}

fn side_sizes(sides: &[u8]) -> [usize; 2] {
    let ones = sides.iter().filter(|&&s| s == 1).count();
    [sides.len() - ones, ones]
}

/// Restricted Gibbs over a two-way labelling of `members`.
///
/// Anchor `i` is pinned to side 0 and anchor `j` to side 1. Other members
/// start uniformly at random; subcluster parameters are drawn from their
/// `lambda_bar` posteriors, then each of `iters` sequential sweeps samples
///
/// `p(c_m = r) ∝ n_{r,¬m} * p(x_m | theta_r)`
///
/// and is followed by a parameter refresh. With `forced`, the final sweep
/// follows the given labels instead of sampling (used to score the reverse
/// of a merge) and the final refresh is skipped.
#[allow(clippy::too_many_arguments)]
pub fn restricted_gibbs<R: Rng + ?Sized>(
    matrix: &CountMatrix,
    members: &[usize],
    anchors: (usize, usize),
    iters: usize,
    lambda_bar: f64,
    forced: Option<&[u8]>,
    parent_cluster: usize,
    rng: &mut R,
) -> Result<SubclusterState> {
    if iters == 0 {
        return Err(Error::InvalidArgument("local Gibbs needs at least one sweep".into()));
    }
    if members.len() < 2 {
        return Err(Error::ProposalImpossible(format!(
            "cluster {parent_cluster} has fewer than two cells"
        )));
    }
    let pos_i = members
        .binary_search(&anchors.0)
        .map_err(|_| Error::ProposalImpossible("anchor i is not a member".into()))?;
    let pos_j = members
        .binary_search(&anchors.1)
        .map_err(|_| Error::ProposalImpossible("anchor j is not a member".into()))?;
    if pos_i == pos_j {
        return Err(Error::ProposalImpossible("anchors must be distinct".into()));
    }
    if let Some(f) = forced {
        if f.len() != members.len() || f[pos_i] != 0 || f[pos_j] != 1 {
            return Err(Error::Structure("forced labels disagree with anchors".into()));
        }
    }

    let n_genes = matrix.n_genes();
    let mut labels: Vec<u8> = (0..members.len())
        .map(|p| {
            if p == pos_i {
                0
            } else if p == pos_j {
                1
            } else {
                u8::from(rng.random::<bool>())
            }
        })
        .collect();
    let mut stats = [ClusterStats::empty(n_genes), ClusterStats::empty(n_genes)];
    for (&m, &l) in members.iter().zip(&labels) {
        stats[l as usize].add_cell(matrix.cell(m));
    }
    let mut theta = [
        sample_theta_posterior(&stats[0], lambda_bar, rng),
        sample_theta_posterior(&stats[1], lambda_bar, rng),
    ];
    let mut log_probs = vec![0.0; members.len()];

    for sweep in 0..iters {
        let last = sweep + 1 == iters;
        for (p, &m) in members.iter().enumerate() {
            if p == pos_i || p == pos_j {
                continue;
            }
            let x = matrix.cell(m);
            let cur = labels[p] as usize;
            stats[cur].remove_cell(x);
            // Anchors keep both sides nonempty.
            let l0 = (stats[0].n_cells() as f64).ln() + cell_loglik(x, theta[0].values());
            let l1 = (stats[1].n_cells() as f64).ln() + cell_loglik(x, theta[1].values());
            let lse = logaddexp(l0, l1);
            let lp = [l0 - lse, l1 - lse];
            let new = match forced {
                Some(f) if last => f[p],
                _ => {
                    let u: f64 = rng.sample(OpenClosed01);
                    u8::from(u.ln() < lp[1])
                }
            };
            if last {
                log_probs[p] = lp[new as usize];
            }
            labels[p] = new;
            stats[new as usize].add_cell(x);
        }
        if !(last && forced.is_some()) {
            theta = [
                sample_theta_posterior(&stats[0], lambda_bar, rng),
                sample_theta_posterior(&stats[1], lambda_bar, rng),
            ];
        }
    }

    Ok(SubclusterState {
        parent_cluster,
        members: members.to_vec(),
        sub_assignments: labels,
        sub_stats: stats,
        log_theta_bar: theta,
        final_sweep_log_probs: log_probs,
    })
}

/// Runs restricted Gibbs on live cluster `k` with the given anchors.
pub fn local_gibbs_subclusters<R: Rng + ?Sized>(
    state: &ModelState,
    matrix: &CountMatrix,
    k: usize,
    anchors: (usize, usize),
    iters: usize,
    lambda_bar: f64,
    rng: &mut R,
) -> Result<SubclusterState> {
    if k >= state.k() {
        return Err(Error::Structure(format!("cluster {k} does not exist")));
    }
    let members = state.members(k);
    restricted_gibbs(matrix, &members, anchors, iters, lambda_bar, None, k, rng)
}

/// Draws `u ~ Beta(a, b)` and returns `(ln u, ln(1-u))`.
fn sample_beta_ln<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> (f64, f64) {
    let ga = sample_log_gamma(a, rng);
    let gb = sample_log_gamma(b, rng);
    let lse = logaddexp(ga, gb);
    (ga - lse, gb - lse)
}

fn side_stats(matrix: &CountMatrix, members: &[usize], sides: &[u8]) -> [ClusterStats; 2] {
    let mut s = [
        ClusterStats::empty(matrix.n_genes()),
        ClusterStats::empty(matrix.n_genes()),
    ];
    for (&m, &side) in members.iter().zip(sides) {
        s[side as usize].add_cell(matrix.cell(m));
    }
    s
}

/// Completes a split proposal once the sides and child parameters exist.
#[allow(clippy::too_many_arguments)]
fn finish_split<R: Rng + ?Sized>(
    state: &ModelState,
    k: usize,
    anchors: (usize, usize),
    mechanism: Mechanism,
    members: Vec<usize>,
    sides: Vec<u8>,
    stats: [ClusterStats; 2],
    theta: [LogProbVector; 2],
    log_forward: f64,
    hp: &Hyperparams,
    rng: &mut R,
) -> MoveProposal {
    let pi_k = state.weights[k];
    let (ln_u, ln_1mu) = sample_beta_ln(stats[0].n_cells() as f64, stats[1].n_cells() as f64, rng);
    let ln_pi = pi_k.ln();
    let w = [(ln_pi + ln_u).exp(), (ln_pi + ln_1mu).exp()];
    let parent = ClusterView {
        stats: &state.stats[k],
        weight: pi_k,
        log_theta: state.log_theta[k].values(),
    };
    let children = [
        ClusterView {
            stats: &stats[0],
            weight: w[0],
            log_theta: theta[0].values(),
        },
        ClusterView {
            stats: &stats[1],
            weight: w[1],
            log_theta: theta[1].values(),
        },
    ];
    let log_state_ratio = split_log_state_ratio(parent, children, hp);
    let log_dimension_correction = split_dimension_correction(parent, children, hp);
    let [s0, s1] = stats;
    let [t0, t1] = theta;
    MoveProposal {
        kind: MoveKind::Split,
        mechanism,
        targets: vec![k],
        anchors,
        members,
        sub_assignments: sides,
        proposed_weights: w.to_vec(),
        proposed_log_theta: vec![t0, t1],
        proposed_stats: vec![s0, s1],
        log_transition_forward: log_forward,
        log_transition_reverse: 0.0,
        log_state_ratio,
        log_dimension_correction,
    }
}

/// Split of cluster `k` proposed by restricted Gibbs; the reverse merge is
/// deterministic so `log q(S|S*) = 0`.
pub fn propose_split<R: Rng + ?Sized>(
    state: &ModelState,
    matrix: &CountMatrix,
    k: usize,
    anchors: (usize, usize),
    local_gibbs_iters: usize,
    hp: &Hyperparams,
    rng: &mut R,
) -> Result<MoveProposal> {
    let sub = local_gibbs_subclusters(state, matrix, k, anchors, local_gibbs_iters, hp.lambda_bar, rng)?;
    let log_q = sub.log_q();
    let SubclusterState {
        members,
        sub_assignments,
        sub_stats,
        log_theta_bar,
        ..
    } = sub;
    Ok(finish_split(
        state,
        k,
        anchors,
        Mechanism::Restricted,
        members,
        sub_assignments,
        sub_stats,
        log_theta_bar,
        log_q,
        hp,
        rng,
    ))
}

/// Split of cluster `k` with every non-anchor member placed on a fair
/// coin: `q(S*|S) = (1/2)^(n_k - 2)`.
pub fn propose_split_random<R: Rng + ?Sized>(
    state: &ModelState,
    matrix: &CountMatrix,
    k: usize,
    anchors: (usize, usize),
    hp: &Hyperparams,
    rng: &mut R,
) -> Result<MoveProposal> {
    let members = state.members(k);
    if members.len() < 2 {
        return Err(Error::ProposalImpossible(format!("cluster {k} has fewer than two cells")));
    }
    let sides: Vec<u8> = members
        .iter()
        .map(|&m| {
            if m == anchors.0 {
                0
            } else if m == anchors.1 {
                1
            } else {
                u8::from(rng.random::<bool>())
            }
        })
        .collect();
    if state.assignments[anchors.0] != k || state.assignments[anchors.1] != k {
        return Err(Error::ProposalImpossible("anchors are not members of the cluster".into()));
    }
    let stats = side_stats(matrix, &members, &sides);
    let theta = [
        sample_theta_posterior(&stats[0], hp.lambda_bar, rng),
        sample_theta_posterior(&stats[1], hp.lambda_bar, rng),
    ];
    let log_forward = (members.len() as f64 - 2.0) * 0.5f64.ln();
    Ok(finish_split(
        state,
        k,
        anchors,
        Mechanism::Random,
        members,
        sides,
        stats,
        theta,
        log_forward,
        hp,
        rng,
    ))
}

/// Builds a merge of the anchors' clusters; `log_reverse` is filled by the
/// caller's mechanism.
fn merge_skeleton<R: Rng + ?Sized>(
    state: &ModelState,
    anchors: (usize, usize),
    mechanism: Mechanism,
    hp: &Hyperparams,
    rng: &mut R,
) -> Result<MoveProposal> {
    let k0 = state.assignments[anchors.0];
    let k1 = state.assignments[anchors.1];
    if k0 == k1 {
        return Err(Error::ProposalImpossible("anchors share a cluster".into()));
    }
    let mut members = Vec::with_capacity(state.stats[k0].n_cells() + state.stats[k1].n_cells());
    let mut sides = Vec::with_capacity(members.capacity());
    for (i, &c) in state.assignments.iter().enumerate() {
        if c == k0 || c == k1 {
            members.push(i);
            sides.push(u8::from(c == k1));
        }
    }
    let merged = ClusterStats::merged(&state.stats[k0], &state.stats[k1]);
    let theta = sample_theta_posterior(&merged, hp.lambda, rng);
    let pi = state.weights[k0] + state.weights[k1];
    let parent = ClusterView {
        stats: &merged,
        weight: pi,
        log_theta: theta.values(),
    };
    let children = [
        ClusterView {
            stats: &state.stats[k0],
            weight: state.weights[k0],
            log_theta: state.log_theta[k0].values(),
        },
        ClusterView {
            stats: &state.stats[k1],
            weight: state.weights[k1],
            log_theta: state.log_theta[k1].values(),
        },
    ];
    let log_state_ratio = -split_log_state_ratio(parent, children, hp);
    let log_dimension_correction = -split_dimension_correction(parent, children, hp);
    Ok(MoveProposal {
        kind: MoveKind::Merge,
        mechanism,
        targets: vec![k0, k1],
        anchors,
        members,
        sub_assignments: sides,
        proposed_weights: vec![pi],
        proposed_log_theta: vec![theta],
        proposed_stats: vec![merged],
        log_transition_forward: 0.0,
        log_transition_reverse: 0.0,
        log_state_ratio,
        log_dimension_correction,
    })
}

/// Merge of the anchors' clusters whose reverse is a random split:
/// `q(S|S*)/q(S*|S) = (1/2)^(n_k0 + n_k1 - 2)`.
pub fn propose_merge_random<R: Rng + ?Sized>(
    state: &ModelState,
    anchors: (usize, usize),
    hp: &Hyperparams,
    rng: &mut R,
) -> Result<MoveProposal> {
    let mut p = merge_skeleton(state, anchors, Mechanism::Random, hp, rng)?;
    p.log_transition_reverse = (p.members.len() as f64 - 2.0) * 0.5f64.ln();
    Ok(p)
}

/// Merge of the anchors' clusters whose reverse is the restricted-Gibbs
/// split. The reverse probability is scored by running the launch phase on
/// the union and forcing the final sweep onto the current clusters.
pub fn propose_merge_restricted<R: Rng + ?Sized>(
    state: &ModelState,
    matrix: &CountMatrix,
    anchors: (usize, usize),
    local_gibbs_iters: usize,
    hp: &Hyperparams,
    rng: &mut R,
) -> Result<MoveProposal> {
    let mut p = merge_skeleton(state, anchors, Mechanism::Restricted, hp, rng)?;
    let reverse = restricted_gibbs(
        matrix,
        &p.members,
        anchors,
        local_gibbs_iters,
        hp.lambda_bar,
        Some(&p.sub_assignments),
        p.targets[0],
        rng,
    )?;
    p.log_transition_reverse = reverse.log_q();
    Ok(p)
}

/// Metropolis-Hastings test: accept with probability
/// `min(1, exp(log_acceptance))`. NaN ratios are rejected.
pub fn mh_accept<R: Rng + ?Sized>(proposal: &MoveProposal, rng: &mut R) -> bool {
    let log_a = proposal.log_acceptance();
    if log_a.is_nan() {
        log::warn!(
            "NaN acceptance ratio for {:?} of {:?}; rejecting",
            proposal.kind,
            proposal.targets
        );
        return false;
    }
    if log_a >= 0.0 {
        return true;
    }
    let u: f64 = rng.sample(OpenClosed01);
    u.ln() < log_a
}
