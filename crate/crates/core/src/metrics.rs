//! Pair-counting partition comparisons and cross-run stability.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::state::Partition;

/// Pair classification of two partitions of the same cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PairCounts {
    /// Together in both.
    pub a: u64,
    /// Together in the first only.
    pub b: u64,
    /// Together in the second only.
    pub c: u64,
    /// Apart in both.
    pub d: u64,
}

impl PairCounts {
    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }
}

fn choose2(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

fn check_lengths(p1: &Partition, p2: &Partition) -> Result<()> {
    if p1.len() != p2.len() {
        return Err(Error::InvalidArgument(format!(
            "partitions have different lengths ({} vs {})",
            p1.len(),
            p2.len()
        )));
    }
    Ok(())
}

/// Contingency table with its row and column marginals.
struct Contingency {
    cells: HashMap<(usize, usize), u64>,
    rows: HashMap<usize, u64>,
    cols: HashMap<usize, u64>,
    n: u64,
}

fn contingency(p1: &Partition, p2: &Partition) -> Contingency {
    let mut t = Contingency {
        cells: HashMap::new(),
        rows: HashMap::new(),
        cols: HashMap::new(),
        n: p1.len() as u64,
    };
    for (&x, &y) in p1.labels.iter().zip(&p2.labels) {
        *t.cells.entry((x, y)).or_default() += 1;
        *t.rows.entry(x).or_default() += 1;
        *t.cols.entry(y).or_default() += 1;
    }
    t
}

/// Pair counts from the contingency table in `O(N + table size)`.
pub fn pair_counts(p1: &Partition, p2: &Partition) -> Result<PairCounts> {
    check_lengths(p1, p2)?;
    let t = contingency(p1, p2);
    let a: u64 = t.cells.values().map(|&v| choose2(v)).sum();
    let same1: u64 = t.rows.values().map(|&v| choose2(v)).sum();
    let same2: u64 = t.cols.values().map(|&v| choose2(v)).sum();
    let b = same1 - a;
    let c = same2 - a;
    let d = choose2(t.n) - a - b - c;
    Ok(PairCounts { a, b, c, d })
}

fn require_pairs(p: &Partition) -> Result<()> {
    if p.len() < 2 {
        return Err(Error::InvalidArgument("need at least two cells".into()));
    }
    Ok(())
}

/// Fraction of cell pairs on which the two partitions agree.
pub fn rand_index(p1: &Partition, p2: &Partition) -> Result<f64> {
    require_pairs(p1)?;
    let pc = pair_counts(p1, p2)?;
    Ok((pc.a + pc.d) as f64 / pc.total() as f64)
}

/// Hubert's agreement-minus-disagreement index, `2 RI - 1`.
pub fn huberts_index(p1: &Partition, p2: &Partition) -> Result<f64> {
    Ok(2.0 * rand_index(p1, p2)? - 1.0)
}

/// Hubert-Arabie adjusted Rand index.
///
/// When both partitions are trivial in the same way (the chance-corrected
/// denominator is zero) the value is defined as 1.
pub fn adjusted_rand_index(p1: &Partition, p2: &Partition) -> Result<f64> {
    require_pairs(p1)?;
    let pc = pair_counts(p1, p2)?;
    let index = pc.a as f64;
    let s1 = (pc.a + pc.b) as f64;
    let s2 = (pc.a + pc.c) as f64;
    let total = pc.total() as f64;
    let expected = s1 * s2 / total;
    let max = 0.5 * (s1 + s2);
    let denom = max - expected;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}

/// Per-cell stability across repeated runs.
///
/// For each pair of runs, a cell scores the Jaccard overlap of its cluster
/// in one run with its cluster in the other. The per-cell value is the
/// mean over run pairs; 1 means the cell always shares its cluster with the
/// same cells.
pub fn coassignment_stability(runs: &[Partition]) -> Result<Vec<f64>> {
    if runs.len() < 2 {
        return Err(Error::InvalidArgument("stability needs at least two runs".into()));
    }
    let n = runs[0].len();
    if runs.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidArgument("runs have different lengths".into()));
    }
    let sizes: Vec<HashMap<usize, u64>> = runs
        .iter()
        .map(|r| {
            let mut m = HashMap::new();
            for &l in &r.labels {
                *m.entry(l).or_default() += 1;
            }
            m
        })
        .collect();
    let mut score = vec![0.0; n];
    let mut n_pairs = 0usize;
    for x in 0..runs.len() {
        for y in x + 1..runs.len() {
            n_pairs += 1;
            let t = contingency(&runs[x], &runs[y]);
            for (i, s) in score.iter_mut().enumerate() {
                let (lx, ly) = (runs[x].labels[i], runs[y].labels[i]);
                let both = t.cells[&(lx, ly)] as f64;
                let union = (sizes[x][&lx] + sizes[y][&ly]) as f64 - both;
                *s += both / union;
            }
        }
    }
    for s in &mut score {
        *s /= n_pairs as f64;
    }
    Ok(score)
}
