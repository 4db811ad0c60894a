//! Thread-scaling measurements and Amdahl fits.

use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sampler::{init_state, step, SamplerConfig};
use crate::state::{CountMatrix, ModelState};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub thread_counts: Vec<usize>,
    /// Median wall time per thread count.
    pub wall_ms: Vec<f64>,
    /// Single-thread time over each entry of `wall_ms`.
    pub speedups: Vec<f64>,
    /// Parallel fraction fitted to the speedups; absent with one thread
    /// count.
    pub fitted_p: Option<f64>,
}

/// Amdahl speedup `1 / (p/n + 1 - p)`.
pub fn amdahl_speedup(p: f64, n: f64) -> f64 {
    1.0 / (p / n + 1.0 - p)
}

/// Least-squares parallel fraction in `[0, 1]` by golden-section search.
/// The squared error is unimodal in `p` for speedup data of this shape.
pub fn fit_amdahl(thread_counts: &[usize], speedups: &[f64]) -> f64 {
    let sse = |p: f64| -> f64 {
        thread_counts
            .iter()
            .zip(speedups)
            .map(|(&n, &s)| (amdahl_speedup(p, n as f64) - s).powi(2))
            .sum()
    };
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (sse(x1), sse(x2));
    while hi - lo > 1e-10 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = sse(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = sse(x2);
        }
    }
    let mid = 0.5 * (lo + hi);
    // The interior search cannot land exactly on the bounds.
    [0.0, mid, 1.0]
        .into_iter()
        .min_by(|a, b| sse(*a).total_cmp(&sse(*b)))
        .unwrap_or(mid)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times `workload` inside a dedicated pool for each thread count and
/// reports the median of `reps` runs. The first thread count must be 1.
pub fn bench_scaling<F>(thread_counts: &[usize], reps: usize, workload: F) -> Result<BenchResult>
where
    F: Fn() + Sync,
{
    if thread_counts.first() != Some(&1) {
        return Err(Error::InvalidArgument("thread counts must start at 1".into()));
    }
    if thread_counts.contains(&0) {
        return Err(Error::InvalidArgument("thread counts must be positive".into()));
    }
    if reps < 3 {
        return Err(Error::InvalidArgument("at least three repetitions are required".into()));
    }
    let mut wall_ms = Vec::with_capacity(thread_counts.len());
    for &t in thread_counts {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Runtime(format!("cannot start worker pool: {e}")))?;
        let times = (0..reps)
            .map(|_| {
                let start = Instant::now();
                pool.install(&workload);
                start.elapsed().as_secs_f64() * 1e3
            })
            .collect();
        wall_ms.push(median(times));
    }
    let speedups: Vec<f64> = wall_ms.iter().map(|&w| wall_ms[0] / w).collect();
    let fitted_p = (thread_counts.len() > 1).then(|| fit_amdahl(thread_counts, &speedups));
    Ok(BenchResult {
        thread_counts: thread_counts.to_vec(),
        wall_ms,
        speedups,
        fitted_p,
    })
}

/// A fixed number of sampler iterations from a fixed starting state.
/// Ingest and output are outside the timed region.
pub struct SweepWorkload<'a> {
    matrix: &'a CountMatrix,
    config: SamplerConfig,
    start: ModelState,
    iterations: usize,
}

impl<'a> SweepWorkload<'a> {
    pub fn new(matrix: &'a CountMatrix, config: SamplerConfig, iterations: usize) -> Result<Self> {
        config.validate()?;
        let start = init_state(matrix, &config)?;
        Ok(Self {
            matrix,
            config,
            start,
            iterations,
        })
    }

    /// Runs the iterations and returns the final assignments.
    pub fn run(&self) -> Result<Vec<usize>> {
        let mut state = self.start.clone();
        for it in 0..self.iterations {
            state = step(state, self.matrix, &self.config, it)?.0;
        }
        Ok(state.assignments().to_vec())
    }
}
