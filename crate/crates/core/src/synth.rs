//! Synthetic count matrices drawn from the model's generative process.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::dm::sample_log_dirichlet;
use crate::error::{Error, Result};
use crate::rng::{stream, Domain};
use crate::state::{CountMatrix, Partition, SparseCell};

/// Reads per cell: a fixed depth or a uniform draw from an inclusive range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReadDepth {
    Fixed(u64),
    Range(u64, u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_clusters: usize,
    pub n_cells: usize,
    pub n_genes: usize,
    pub reads_per_cell: ReadDepth,
    pub lambda_gen: f64,
    /// 0 gives plain Dirichlet draws, 1 gives disjoint gene blocks.
    pub separation: f64,
    /// Cluster proportions; uniform when absent.
    pub mixing: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_clusters: 3,
            n_cells: 300,
            n_genes: 100,
            reads_per_cell: ReadDepth::Fixed(2000),
            lambda_gen: 1.0,
            separation: 0.8,
            mixing: None,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_clusters == 0 || self.n_cells == 0 || self.n_genes == 0 {
            return bad("cluster, cell and gene counts must be positive".into());
        }
        if self.n_clusters > self.n_cells {
            return bad(format!("{} clusters exceed {} cells", self.n_clusters, self.n_cells));
        }
        if !(0.0..=1.0).contains(&self.separation) {
            return bad(format!("separation {} outside [0, 1]", self.separation));
        }
        if self.separation > 0.0 && self.n_genes < self.n_clusters {
            return bad(format!(
                "{} genes cannot hold {} disjoint blocks",
                self.n_genes, self.n_clusters
            ));
        }
        if !(self.lambda_gen > 0.0 && self.lambda_gen.is_finite()) {
            return bad(format!("lambda_gen {} must be positive", self.lambda_gen));
        }
        match self.reads_per_cell {
            ReadDepth::Fixed(0) => return bad("reads per cell must be positive".into()),
            ReadDepth::Range(lo, hi) if lo == 0 || lo > hi => {
                return bad(format!("bad read range {lo}..={hi}"))
            }
            _ => {}
        }
        if let Some(w) = &self.mixing {
            let sum: f64 = w.iter().sum();
            if w.len() != self.n_clusters || w.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return bad("mixing must be K nonnegative weights summing to 1".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub matrix: CountMatrix,
    pub truth: Partition,
    /// Generating gene frequencies per cluster.
    pub theta: Vec<Vec<f64>>,
}

/// Gene range of block `k` out of `n_blocks` contiguous blocks.
fn block(k: usize, n_blocks: usize, n_genes: usize) -> std::ops::Range<usize> {
    (k * n_genes / n_blocks)..((k + 1) * n_genes / n_blocks)
}

/// Multinomial draw by sequential conditional binomials.
fn multinomial<R: Rng + ?Sized>(n: u64, probs: &[f64], rng: &mut R) -> SparseCell {
    let mut out = Vec::new();
    let mut left = n;
    let mut mass = 1.0;
    for (g, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        let q = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 1.0 };
        let x = if g + 1 == probs.len() || q >= 1.0 {
            left
        } else {
            Binomial::new(left, q).expect("probability in [0, 1]").sample(rng)
        };
        if x > 0 {
            out.push((g as u32, x as u32));
        }
        left -= x;
        mass -= p;
    }
    out
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let (k, n, v) = (spec.n_clusters, spec.n_cells, spec.n_genes);
    let theta: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            let mut rng = stream(spec.seed, Domain::Synth, 0, c as u64);
            let draw = sample_log_dirichlet(std::iter::repeat_n(spec.lambda_gen, v), &mut rng).probs();
            let mut t: Vec<f64> = draw.iter().map(|&p| (1.0 - spec.separation) * p).collect();
            if spec.separation > 0.0 {
                let b = block(c, k, v);
                let share = spec.separation / b.len() as f64;
                for g in b {
                    t[g] += share;
                }
            }
            let s: f64 = t.iter().sum();
            t.iter_mut().for_each(|x| *x /= s);
            t
        })
        .collect();
    let mixing = spec.mixing.clone().unwrap_or_else(|| vec![1.0 / k as f64; k]);
    let pick = WeightedIndex::new(&mixing).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut labels = Vec::with_capacity(n);
    let mut cells = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = stream(spec.seed, Domain::Synth, 1, i as u64);
        let c = pick.sample(&mut rng);
        let depth = match spec.reads_per_cell {
            ReadDepth::Fixed(d) => d,
            ReadDepth::Range(lo, hi) => rng.random_range(lo..=hi),
        };
        labels.push(c);
        cells.push(multinomial(depth, &theta[c], &mut rng));
    }
    let matrix = CountMatrix::new(v, cells)?;
    Ok(SynthData {
        matrix,
        truth: Partition::new(labels),
        theta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cluster_totals() {
        let d = generate(&SynthSpec {
            n_clusters: 1,
            n_cells: 20,
            n_genes: 7,
            reads_per_cell: ReadDepth::Fixed(50),
            ..SynthSpec::default()
        })
        .unwrap();
        assert!(d.truth.labels.iter().all(|&l| l == 0));
        assert!((0..20).all(|i| d.matrix.total_umi(i) == 50));
    }

    #[test]
    fn full_separation_gives_disjoint_blocks() {
        let d = generate(&SynthSpec {
            n_clusters: 2,
            n_cells: 40,
            n_genes: 4,
            separation: 1.0,
            reads_per_cell: ReadDepth::Fixed(30),
            ..SynthSpec::default()
        })
        .unwrap();
        for (i, cell) in d.matrix.cells().iter().enumerate() {
            let b = block(d.truth.labels[i], 2, 4);
            assert!(cell.iter().all(|&(g, _)| b.contains(&(g as usize))));
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let s = SynthSpec::default();
        assert_eq!(generate(&s).unwrap(), generate(&s).unwrap());
    }

    #[test]
    fn rejects_bad_specs() {
        let s = SynthSpec { separation: 1.5, ..SynthSpec::default() };
        assert!(generate(&s).is_err());
        let s = SynthSpec { n_genes: 2, ..SynthSpec::default() };
        assert!(generate(&s).is_err());
        let s = SynthSpec { n_cells: 2, ..SynthSpec::default() };
        assert!(generate(&s).is_err());
    }
}
