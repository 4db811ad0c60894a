//! Domain types shared by inference and evaluation: the sparse count
//! matrix, per-cluster sufficient statistics and the instantiated mixture
//! state.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dm::LogProbVector;
use crate::error::{Error, Result};

/// One cell's nonzero `(gene, count)` pairs, sorted by gene.
pub type SparseCell = Vec<(u32, u32)>;

/// Sparse genes x cells UMI matrix stored cell-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMatrix {
    n_genes: usize,
    cells: Vec<SparseCell>,
    gene_names: Option<Vec<String>>,
    cell_names: Option<Vec<String>>,
}

impl CountMatrix {
    /// Builds a matrix, checking that gene indices are in range and strictly
    /// increasing within each cell and that no zero counts are stored.
    pub fn new(n_genes: usize, cells: Vec<SparseCell>) -> Result<Self> {
        if n_genes == 0 {
            return Err(Error::Structure("matrix must have at least one gene".into()));
        }
        if cells.is_empty() {
            return Err(Error::Structure("matrix must have at least one cell".into()));
        }
        for (i, cell) in cells.iter().enumerate() {
            let mut prev: Option<u32> = None;
            for &(g, c) in cell {
                if g as usize >= n_genes {
                    return Err(Error::Structure(format!(
                        "cell {i}: gene index {g} out of range (V = {n_genes})"
                    )));
                }
                if c == 0 {
                    return Err(Error::Structure(format!("cell {i}: explicit zero for gene {g}")));
                }
                if prev.is_some_and(|p| p >= g) {
                    return Err(Error::Structure(format!(
                        "cell {i}: gene indices not strictly increasing at {g}"
                    )));
                }
                prev = Some(g);
            }
        }
        Ok(Self {
            n_genes,
            cells,
            gene_names: None,
            cell_names: None,
        })
    }

    /// Builds a matrix from a dense cells x genes grid.
    pub fn from_dense(rows: &[Vec<u32>]) -> Result<Self> {
        let n_genes = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_genes) {
            return Err(Error::Structure("ragged dense matrix".into()));
        }
        let cells = rows
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(|(g, &c)| (g as u32, c))
                    .collect()
            })
            .collect();
        Self::new(n_genes, cells)
    }

    pub fn with_gene_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_genes {
            return Err(Error::Structure(format!(
                "{} gene names for {} genes",
                names.len(),
                self.n_genes
            )));
        }
        self.gene_names = Some(names);
        Ok(self)
    }

    pub fn with_cell_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.cells.len() {
            return Err(Error::Structure(format!(
                "{} cell names for {} cells",
                names.len(),
                self.cells.len()
            )));
        }
        self.cell_names = Some(names);
        Ok(self)
    }

    pub fn n_genes(&self) -> usize {
        self.n_genes
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell(&self, i: usize) -> &[(u32, u32)] {
        &self.cells[i]
    }

    pub fn cells(&self) -> &[SparseCell] {
        &self.cells
    }

    pub fn gene_names(&self) -> Option<&[String]> {
        self.gene_names.as_deref()
    }

    pub fn cell_names(&self) -> Option<&[String]> {
        self.cell_names.as_deref()
    }

    pub fn total_umi(&self, i: usize) -> u64 {
        self.cells[i].iter().map(|&(_, c)| u64::from(c)).sum()
    }

    pub fn nnz(&self) -> usize {
        self.cells.iter().map(Vec::len).sum()
    }

    /// Per-gene totals over all cells.
    pub fn gene_totals(&self) -> Vec<u64> {
        let mut totals = vec![0u64; self.n_genes];
        for cell in &self.cells {
            for &(g, c) in cell {
                totals[g as usize] += u64::from(c);
            }
        }
        totals
    }

    /// Dense cells x genes copy; only sensible for small matrices.
    pub fn to_dense(&self) -> Vec<Vec<u32>> {
        self.cells
            .iter()
            .map(|cell| {
                let mut row = vec![0u32; self.n_genes];
                for &(g, c) in cell {
                    row[g as usize] = c;
                }
                row
            })
            .collect()
    }
}

/// Model hyperparameters: CRP concentration, cluster Dirichlet prior and
/// subcluster Dirichlet prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub alpha: f64,
    pub lambda: f64,
    pub lambda_bar: f64,
}

impl Hyperparams {
    pub fn new(alpha: f64, lambda: f64, lambda_bar: f64) -> Result<Self> {
        let hp = Self {
            alpha,
            lambda,
            lambda_bar,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("lambda", self.lambda),
            ("lambda_bar", self.lambda_bar),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            lambda: 1.0,
            lambda_bar: 1.0,
        }
    }
}

/// Sufficient statistics of one cluster: member count and dense per-gene
/// UMI sums.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterStats {
    n_cells: usize,
    gene_counts: Vec<u64>,
    total_umi: u64,
}

impl ClusterStats {
    pub fn empty(n_genes: usize) -> Self {
        Self {
            n_cells: 0,
            gene_counts: vec![0; n_genes],
            total_umi: 0,
        }
    }

    /// Builds stats directly from per-gene sums.
    pub fn from_counts(n_cells: usize, gene_counts: Vec<u64>) -> Self {
        let total_umi = gene_counts.iter().sum();
        Self {
            n_cells,
            gene_counts,
            total_umi,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn gene_counts(&self) -> &[u64] {
        &self.gene_counts
    }

    pub fn total_umi(&self) -> u64 {
        self.total_umi
    }

    pub fn n_genes(&self) -> usize {
        self.gene_counts.len()
    }

    pub fn add_cell(&mut self, cell: &[(u32, u32)]) {
        self.n_cells += 1;
        for &(g, c) in cell {
            self.gene_counts[g as usize] += u64::from(c);
            self.total_umi += u64::from(c);
        }
    }

    /// Removes a cell previously added. Panics on underflow, which would mean
    /// the bookkeeping is already corrupt.
    pub fn remove_cell(&mut self, cell: &[(u32, u32)]) {
        self.n_cells = self
            .n_cells
            .checked_sub(1)
            .expect("removing a cell from an empty cluster");
        for &(g, c) in cell {
            let slot = &mut self.gene_counts[g as usize];
            *slot = slot.checked_sub(u64::from(c)).expect("gene count underflow");
            self.total_umi -= u64::from(c);
        }
    }

    /// Adds another cluster's statistics into this one.
    pub fn absorb(&mut self, other: &ClusterStats) {
        self.n_cells += other.n_cells;
        for (a, b) in self.gene_counts.iter_mut().zip(&other.gene_counts) {
            *a += b;
        }
        self.total_umi += other.total_umi;
    }

    pub fn merged(a: &ClusterStats, b: &ClusterStats) -> ClusterStats {
        let mut out = a.clone();
        out.absorb(b);
        out
    }

    /// Dot product of the gene sums with a log-probability vector, skipping
    /// zero counts so that `0 * -inf` never appears.
    pub fn dot_log(&self, log_theta: &[f64]) -> f64 {
        self.gene_counts
            .iter()
            .zip(log_theta)
            .filter(|(&c, _)| c > 0)
            .map(|(&c, &l)| c as f64 * l)
            .sum()
    }

    pub fn is_consistent(&self) -> bool {
        self.gene_counts.iter().sum::<u64>() == self.total_umi
    }
}

/// Instantiated mixture state: assignments, mixing weights (with the
/// trailing unopened-cluster slot), per-cluster log parameters and stats.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub(crate) assignments: Vec<usize>,
    pub(crate) weights: Vec<f64>,
    pub(crate) log_theta: Vec<LogProbVector>,
    pub(crate) stats: Vec<ClusterStats>,
}

impl ModelState {
    /// Assembles a state, computing the statistics from the assignments.
    /// `weights` has length K+1; `log_theta` has length K.
    pub fn from_parts(
        matrix: &CountMatrix,
        assignments: Vec<usize>,
        weights: Vec<f64>,
        log_theta: Vec<LogProbVector>,
    ) -> Result<Self> {
        let k = log_theta.len();
        if weights.len() != k + 1 {
            return Err(Error::Structure(format!(
                "{} weights for {k} clusters (expected K+1)",
                weights.len()
            )));
        }
        if assignments.len() != matrix.n_cells() {
            return Err(Error::Structure("assignment length differs from cell count".into()));
        }
        let map = recompute_stats(matrix, &assignments, k)?;
        let stats = (0..k)
            .map(|c| map.get(&c).cloned().unwrap_or_else(|| ClusterStats::empty(matrix.n_genes())))
            .collect();
        Ok(Self {
            assignments,
            weights,
            log_theta,
            stats,
        })
    }

    pub fn k(&self) -> usize {
        self.stats.len()
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_theta(&self) -> &[LogProbVector] {
        &self.log_theta
    }

    pub fn stats(&self) -> &[ClusterStats] {
        &self.stats
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.stats.iter().map(ClusterStats::n_cells).collect()
    }

    /// Members of cluster `k` in increasing cell order.
    pub fn members(&self, k: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == k)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn partition(&self) -> Partition {
        Partition::new(self.assignments.clone())
    }

    /// Checks every state invariant, including that the incremental stats
    /// agree with a recomputation from scratch.
    pub fn validate(&self, matrix: &CountMatrix) -> Result<()> {
        let k = self.k();
        if self.log_theta.len() != k || self.weights.len() != k + 1 {
            return Err(Error::Structure("length mismatch between stats, theta and weights".into()));
        }
        let wsum: f64 = self.weights.iter().sum();
        if (wsum - 1.0).abs() > 1e-12 || self.weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Structure(format!("weights not a positive simplex point (sum {wsum})")));
        }
        for (c, lt) in self.log_theta.iter().enumerate() {
            if lt.len() != matrix.n_genes() || !lt.is_normalized(1e-9) {
                return Err(Error::Structure(format!("theta of cluster {c} is not normalized")));
            }
        }
        let fresh = recompute_stats(matrix, &self.assignments, k)?;
        if fresh.len() != k {
            return Err(Error::Structure("some live cluster has no members".into()));
        }
        for (c, s) in self.stats.iter().enumerate() {
            if fresh.get(&c) != Some(s) || !s.is_consistent() {
                return Err(Error::Structure(format!("stats of cluster {c} out of sync")));
            }
        }
        Ok(())
    }
}

/// Two-way split scaffolding for one cluster, built by restricted Gibbs.
#[derive(Debug, Clone, PartialEq)]
pub struct SubclusterState {
    pub parent_cluster: usize,
    /// Member cells in increasing order; aligned with `sub_assignments`.
    pub members: Vec<usize>,
    pub sub_assignments: Vec<u8>,
    pub sub_stats: [ClusterStats; 2],
    pub log_theta_bar: [LogProbVector; 2],
    /// Log conditional probability of each member's label in the final
    /// sweep (0 for the two anchor cells, which are never resampled).
    pub final_sweep_log_probs: Vec<f64>,
}

impl SubclusterState {
    pub fn sizes(&self) -> [usize; 2] {
        [self.sub_stats[0].n_cells(), self.sub_stats[1].n_cells()]
    }

    /// Log probability of the final labelling under the final sweep.
    pub fn log_q(&self) -> f64 {
        self.final_sweep_log_probs.iter().sum()
    }

    pub fn side_members(&self, side: u8) -> Vec<usize> {
        self.members
            .iter()
            .zip(&self.sub_assignments)
            .filter(|(_, &s)| s == side)
            .map(|(&m, _)| m)
            .collect()
    }
}

/// Flat labelling of cells. Labels need not be contiguous.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Partition {
    pub labels: Vec<usize>,
}

impl Partition {
    pub fn new(labels: Vec<usize>) -> Self {
        Self { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_clusters(&self) -> usize {
        let mut seen: Vec<usize> = self.labels.clone();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    /// Relabels clusters by order of first appearance, giving a canonical
    /// key for the underlying set partition.
    pub fn canonical(&self) -> Vec<usize> {
        let mut map = std::collections::HashMap::new();
        self.labels
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(*l).or_insert(next)
            })
            .collect()
    }
}

impl From<Vec<usize>> for Partition {
    fn from(labels: Vec<usize>) -> Self {
        Self::new(labels)
    }
}

/// Recomputes per-cluster statistics from scratch. Only referenced cluster
/// ids appear in the output; any id `>= n_clusters` is an error.
pub fn recompute_stats(
    matrix: &CountMatrix,
    assignments: &[usize],
    n_clusters: usize,
) -> Result<BTreeMap<usize, ClusterStats>> {
    if assignments.len() != matrix.n_cells() {
        return Err(Error::Structure(format!(
            "{} assignments for {} cells",
            assignments.len(),
            matrix.n_cells()
        )));
    }
    let mut out: BTreeMap<usize, ClusterStats> = BTreeMap::new();
    for (i, &c) in assignments.iter().enumerate() {
        if c >= n_clusters {
            return Err(Error::Structure(format!(
                "cell {i} assigned to cluster {c}, only {n_clusters} exist"
            )));
        }
        out.entry(c)
            .or_insert_with(|| ClusterStats::empty(matrix.n_genes()))
            .add_cell(matrix.cell(i));
    }
    Ok(out)
}

/// Drops clusters without members, compacts ids to `0..K'` preserving
/// order, and renormalizes the surviving weights together with the
/// unopened-cluster slot.
pub fn prune_empty_clusters(state: ModelState) -> ModelState {
    if state.stats.iter().all(|s| s.n_cells() > 0) {
        return state;
    }
    let ModelState {
        mut assignments,
        weights,
        log_theta,
        stats,
    } = state;
    let k = stats.len();
    let mut remap = vec![usize::MAX; k];
    let mut new_weights = Vec::with_capacity(k + 1);
    let mut new_theta = Vec::with_capacity(k);
    let mut new_stats = Vec::with_capacity(k);
    for (old, ((s, lt), w)) in stats.into_iter().zip(log_theta).zip(&weights).enumerate() {
        if s.n_cells() > 0 {
            remap[old] = new_stats.len();
            new_stats.push(s);
            new_theta.push(lt);
            new_weights.push(*w);
        }
    }
    new_weights.push(weights[k]);
    let total: f64 = new_weights.iter().sum();
    for w in &mut new_weights {
        *w /= total;
    }
    for a in &mut assignments {
        *a = remap[*a];
    }
    ModelState {
        assignments,
        weights: new_weights,
        log_theta: new_theta,
        stats: new_stats,
    }
}
