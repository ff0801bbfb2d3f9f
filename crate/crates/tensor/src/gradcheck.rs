//! Finite-difference verification of reverse-mode gradients.
//!
//! The checker rebuilds the computation from scratch for every probe, so the
//! closure must be a pure function of the parameter tensors it is handed
//! (stochastic pieces such as dropout masks have to be replayed from a fixed
//! seed inside the closure).

use rand::Rng;

use crate::{Graph, Result, Tensor, TensorId};

/// Central-difference gradient checker.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Half-width of the central difference stencil.
    pub epsilon: f64,
    /// Relative tolerance on |analytic - numeric|.
    pub rel_tolerance: f64,
    /// Absolute tolerance floor for near-zero gradients.
    pub abs_tolerance: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            epsilon: 1e-5,
            rel_tolerance: 1e-4,
            abs_tolerance: 1e-8,
        }
    }
}

/// One coordinate where the analytic and numeric gradients disagree.
#[derive(Debug, Clone)]
pub struct Mismatch {
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Outcome of a gradient check over a set of parameter tensors.
#[derive(Debug, Clone, Default)]
pub struct GradReport {
    pub checked: usize,
    pub failures: Vec<Mismatch>,
    pub max_abs_diff: f64,
    pub max_rel_error: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

impl GradCheck {
    /// Checks every coordinate of every parameter tensor.
    pub fn check<F>(&self, params: &[Tensor], build: F) -> Result<GradReport>
    where
        F: Fn(&mut Graph, &[TensorId]) -> Result<TensorId>,
    {
        let coords: Vec<Vec<usize>> = params.iter().map(|p| (0..p.numel()).collect()).collect();
        self.run(params, &coords, build)
    }

    /// Checks a deterministic random subset of coordinates per tensor.
    /// Tensors with at most `per_tensor` elements are checked exhaustively.
    pub fn check_sampled<F, R>(
        &self,
        params: &[Tensor],
        per_tensor: usize,
        rng: &mut R,
        build: F,
    ) -> Result<GradReport>
    where
        F: Fn(&mut Graph, &[TensorId]) -> Result<TensorId>,
        R: Rng,
    {
        let coords: Vec<Vec<usize>> = params
            .iter()
            .map(|p| {
                let n = p.numel();
                if n <= per_tensor {
                    (0..n).collect()
                } else {
                    let mut picked = rand::seq::index::sample(rng, n, per_tensor).into_vec();
                    picked.sort_unstable();
                    picked
                }
            })
            .collect();
        self.run(params, &coords, build)
    }

    fn run<F>(&self, params: &[Tensor], coords: &[Vec<usize>], build: F) -> Result<GradReport>
    where
        F: Fn(&mut Graph, &[TensorId]) -> Result<TensorId>,
    {
        // Analytic pass.
        let mut graph = Graph::new();
        let ids: Vec<TensorId> = params.iter().map(|p| graph.param(p)).collect();
        let loss = build(&mut graph, &ids)?;
        graph.backward(loss)?;
        let analytic: Vec<Vec<f64>> = ids
            .iter()
            .zip(params)
            .map(|(&id, p)| {
                graph
                    .grad(id)
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| vec![0.0; p.numel()])
            })
            .collect();

        // Numeric probes.
        let mut report = GradReport::default();
        let mut work: Vec<Tensor> = params.to_vec();
        for (ti, tensor_coords) in coords.iter().enumerate() {
            for &ci in tensor_coords {
                let original = work[ti].data()[ci];
                work[ti].data_mut()[ci] = original + self.epsilon;
                let plus = self.eval(&work, &build)?;
                work[ti].data_mut()[ci] = original - self.epsilon;
                let minus = self.eval(&work, &build)?;
                work[ti].data_mut()[ci] = original;

                let numeric = (plus - minus) / (2.0 * self.epsilon);
                let a = analytic[ti][ci];
                let diff = (a - numeric).abs();
                let scale = a.abs().max(numeric.abs());
                report.checked += 1;
                report.max_abs_diff = report.max_abs_diff.max(diff);
                if scale > 0.0 {
                    report.max_rel_error = report.max_rel_error.max(diff / scale);
                }
                if diff > self.abs_tolerance + self.rel_tolerance * scale {
                    report.failures.push(Mismatch {
                        tensor: ti,
                        index: ci,
                        analytic: a,
                        numeric,
                    });
                }
            }
        }
        Ok(report)
    }

    fn eval<F>(&self, params: &[Tensor], build: &F) -> Result<f64>
    where
        F: Fn(&mut Graph, &[TensorId]) -> Result<TensorId>,
    {
        let mut graph = Graph::new();
        let ids: Vec<TensorId> = params.iter().map(|p| graph.constant(p)).collect();
        let loss = build(&mut graph, &ids)?;
        Ok(graph.tensor(loss).item())
    }
}
