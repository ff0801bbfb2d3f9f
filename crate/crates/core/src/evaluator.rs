//! Generalized evaluation: sweep a calibration bias added to unseen-class
//! scores, trace the seen/unseen accuracy curve, and summarize it by its
//! area and best harmonic mean.

use crate::{CoreError, Result};

/// One evaluation problem: an n × c score matrix, the true column per row,
/// and which columns belong to unseen compositions.
#[derive(Debug, Clone, Copy)]
pub struct EvalInstance<'a> {
    scores: &'a [f64],
    n: usize,
    c: usize,
    labels: &'a [usize],
    unseen_col: &'a [bool],
}

impl<'a> EvalInstance<'a> {
    pub fn new(
        scores: &'a [f64],
        n: usize,
        c: usize,
        labels: &'a [usize],
        unseen_col: &'a [bool],
    ) -> Result<Self> {
        if scores.len() != n * c || labels.len() != n || unseen_col.len() != c {
            return Err(CoreError::ConfigError(format!(
                "evaluation dims disagree: {} scores for n={n}, c={c}, {} labels, {} column flags",
                scores.len(),
                labels.len(),
                unseen_col.len()
            )));
        }
        if let Some(bad) = scores.iter().find(|v| !v.is_finite()) {
            return Err(CoreError::ConfigError(format!(
                "scores must be finite, found {bad}"
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(CoreError::ConfigError(format!(
                "label column {bad} out of range for {c} columns"
            )));
        }
        let inst = EvalInstance {
            scores,
            n,
            c,
            labels,
            unseen_col,
        };
        let empty = |which: &str| CoreError::EmptyPartition {
            which: which.to_string(),
        };
        if !unseen_col.iter().any(|&u| !u) {
            return Err(empty("seen-composition column"));
        }
        if !unseen_col.iter().any(|&u| u) {
            return Err(empty("unseen-composition column"));
        }
        if inst.n_seen_samples() == 0 {
            return Err(empty("seen-labeled sample"));
        }
        if inst.n_unseen_samples() == 0 {
            return Err(empty("unseen-labeled sample"));
        }
        Ok(inst)
    }

    fn n_seen_samples(&self) -> usize {
        self.labels.iter().filter(|&&l| !self.unseen_col[l]).count()
    }

    fn n_unseen_samples(&self) -> usize {
        self.labels.iter().filter(|&&l| self.unseen_col[l]).count()
    }

    /// Predicted column per sample at one bias. The infinities act as
    /// selectors: −∞ restricts the argmax to seen columns (unseen priced
    /// out), +∞ restricts it to unseen columns. Ties go to the lowest
    /// column index.
    fn predict(&self, row: usize, bias: f64) -> usize {
        let scores = &self.scores[row * self.c..(row + 1) * self.c];
        let mut best = f64::NEG_INFINITY;
        let mut arg = usize::MAX;
        for (j, (&s, &unseen)) in scores.iter().zip(self.unseen_col).enumerate() {
            let eff = if bias == f64::NEG_INFINITY {
                if unseen {
                    continue;
                }
                s
            } else if bias == f64::INFINITY {
                if !unseen {
                    continue;
                }
                s
            } else if unseen {
                s + bias
            } else {
                s
            };
            if arg == usize::MAX || eff > best {
                best = eff;
                arg = j;
            }
        }
        arg
    }

    /// Seen and unseen accuracy at one bias.
    fn accuracy_at(&self, bias: f64) -> (f64, f64) {
        let mut seen_hits = 0usize;
        let mut unseen_hits = 0usize;
        for i in 0..self.n {
            let correct = self.predict(i, bias) == self.labels[i];
            if correct {
                if self.unseen_col[self.labels[i]] {
                    unseen_hits += 1;
                } else {
                    seen_hits += 1;
                }
            }
        }
        (
            seen_hits as f64 / self.n_seen_samples() as f64,
            unseen_hits as f64 / self.n_unseen_samples() as f64,
        )
    }
}

/// Harmonic mean of two accuracies (0 when both vanish).
pub fn harmonic_mean(s: f64, u: f64) -> f64 {
    if s + u == 0.0 {
        0.0
    } else {
        2.0 * s * u / (s + u)
    }
}

/// Seen accuracy, unseen accuracy and harmonic mean at one explicit
/// calibration bias (±∞ select the restricted argmax, as in the sweep).
pub fn point_at_bias(inst: &EvalInstance, bias: f64) -> CurvePoint {
    let (seen_acc, unseen_acc) = inst.accuracy_at(bias);
    CurvePoint {
        bias,
        seen_acc,
        unseen_acc,
        hm: harmonic_mean(seen_acc, unseen_acc),
    }
}

/// Every bias at which some sample's prediction can flip between a seen
/// and an unseen column: for each sample, the gap between its best seen
/// score and each unseen score. Sorted ascending, exact duplicates
/// removed.
pub fn sweep_biases(inst: &EvalInstance) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..inst.n {
        let row = &inst.scores[i * inst.c..(i + 1) * inst.c];
        let mut max_seen = f64::NEG_INFINITY;
        for (j, &s) in row.iter().enumerate() {
            if !inst.unseen_col[j] && s > max_seen {
                max_seen = s;
            }
        }
        for (j, &s) in row.iter().enumerate() {
            if inst.unseen_col[j] {
                out.push(max_seen - s);
            }
        }
    }
    out.sort_by(|a, b| a.partial_cmp(b).expect("finite biases"));
    out.dedup();
    out
}

/// Evenly spaced subsample of a sorted bias list, keeping both endpoints.
pub fn subsample_biases(biases: &[f64], keep: usize) -> Result<Vec<f64>> {
    if keep < 2 {
        return Err(CoreError::ConfigError(format!(
            "bias subsample must keep at least 2 points, got {keep}"
        )));
    }
    if biases.len() <= keep {
        return Ok(biases.to_vec());
    }
    let last = biases.len() - 1;
    let mut picked = Vec::with_capacity(keep);
    for j in 0..keep {
        let idx = (j as f64 * last as f64 / (keep - 1) as f64).round() as usize;
        picked.push(biases[idx.min(last)]);
    }
    picked.dedup();
    Ok(picked)
}

/// One point of the calibration curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub bias: f64,
    pub seen_acc: f64,
    pub unseen_acc: f64,
    pub hm: f64,
}

/// The swept curve and its summary statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCurve {
    /// Points in ascending bias order, bracketed by the ±∞ sentinels.
    pub points: Vec<CurvePoint>,
    /// Area under the seen-vs-unseen curve (trapezoid rule over points
    /// ordered by bias).
    pub auc: f64,
    pub best_hm: f64,
    /// Bias at which `best_hm` is first attained.
    pub best_hm_bias: f64,
    /// Best seen accuracy anywhere on the curve.
    pub best_seen: f64,
    /// Best unseen accuracy anywhere on the curve.
    pub best_unseen: f64,
}

impl EvalCurve {
    fn from_points(points: Vec<CurvePoint>) -> Self {
        let mut auc = 0.0;
        for w in points.windows(2) {
            auc += (w[1].unseen_acc - w[0].unseen_acc) * (w[0].seen_acc + w[1].seen_acc) / 2.0;
        }
        let mut best_hm = f64::NEG_INFINITY;
        let mut best_hm_bias = f64::NEG_INFINITY;
        let mut best_seen: f64 = 0.0;
        let mut best_unseen: f64 = 0.0;
        for p in &points {
            if p.hm > best_hm {
                best_hm = p.hm;
                best_hm_bias = p.bias;
            }
            best_seen = best_seen.max(p.seen_acc);
            best_unseen = best_unseen.max(p.unseen_acc);
        }
        EvalCurve {
            points,
            auc,
            best_hm,
            best_hm_bias,
            best_seen,
            best_unseen,
        }
    }

    /// CSV: one row per curve point, then a `#`-prefixed summary line.
    /// Floats (including the ±inf sentinels) print in round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bias,seen_acc,unseen_acc,hm\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.bias, p.seen_acc, p.unseen_acc, p.hm
            ));
        }
        out.push_str(&format!(
            "# auc={} best_hm={} best_hm_bias={} best_seen={} best_unseen={}\n",
            self.auc, self.best_hm, self.best_hm_bias, self.best_seen, self.best_unseen
        ));
        out
    }
}

/// Full evaluation at every critical bias (or an evenly spaced subsample
/// of `n_bias` of them), single-threaded.
pub fn evaluate(inst: &EvalInstance, n_bias: Option<usize>) -> Result<EvalCurve> {
    evaluate_with_threads(inst, n_bias, 1)
}

/// Same curve computed with `threads` worker threads over disjoint bias
/// chunks; the result is identical for any thread count.
pub fn evaluate_with_threads(
    inst: &EvalInstance,
    n_bias: Option<usize>,
    threads: usize,
) -> Result<EvalCurve> {
    let mut biases = vec![f64::NEG_INFINITY];
    let criticals = sweep_biases(inst);
    match n_bias {
        Some(keep) => biases.extend(subsample_biases(&criticals, keep)?),
        None => biases.extend(criticals),
    }
    biases.push(f64::INFINITY);

    let accuracies: Vec<(f64, f64)> = if threads <= 1 || biases.len() < 2 * threads {
        biases.iter().map(|&b| inst.accuracy_at(b)).collect()
    } else {
        let chunk = biases.len().div_ceil(threads);
        let mut out = Vec::with_capacity(biases.len());
        std::thread::scope(|scope| {
            let handles: Vec<_> = biases
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || {
                        part.iter().map(|&b| inst.accuracy_at(b)).collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                out.extend(h.join().expect("evaluation worker panicked"));
            }
        });
        out
    };

    let points = biases
        .into_iter()
        .zip(accuracies)
        .map(|(bias, (seen_acc, unseen_acc))| CurvePoint {
            bias,
            seen_acc,
            unseen_acc,
            hm: harmonic_mean(seen_acc, unseen_acc),
        })
        .collect();
    Ok(EvalCurve::from_points(points))
}
