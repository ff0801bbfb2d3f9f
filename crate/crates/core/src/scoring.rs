//! Compatibility scoring: cosine similarity between image features and
//! projected composition embeddings, optionally sharpened by a logit
//! scale before the cross-entropy.

use std::fs;
use std::path::Path;

use cape_tensor::{Graph, TensorId};

use crate::{CoreError, Result};

/// Pairwise cosine compatibility: rows of `features` (n × d) against rows
/// of `y_f` (c × d), giving an n × c score matrix. Both sides are
/// L2-normalized; `logit_scale` multiplies the result (1.0 leaves pure
/// cosines in [-1, 1]).
pub fn compatibility(
    g: &mut Graph,
    features: TensorId,
    y_f: TensorId,
    logit_scale: f64,
) -> Result<TensorId> {
    if !logit_scale.is_finite() || logit_scale <= 0.0 {
        return Err(CoreError::ConfigError(format!(
            "logit scale must be positive and finite, got {logit_scale}"
        )));
    }
    let fn_ = g.normalize_rows(features)?;
    let yn = g.normalize_rows(y_f)?;
    let yt = g.transpose(yn)?;
    let cos = g.matmul(fn_, yt)?;
    if logit_scale == 1.0 {
        Ok(cos)
    } else {
        Ok(g.scale(cos, logit_scale)?)
    }
}

/// Mean softmax cross-entropy of `scores` (n × c) against per-row target
/// columns.
pub fn cross_entropy(g: &mut Graph, scores: TensorId, labels: &[usize]) -> Result<TensorId> {
    Ok(g.cross_entropy_rows(scores, labels)?)
}

/// A dense score matrix with named columns, as written by evaluation and
/// consumed by the standalone protocol checker.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    /// Row-major n × c scores.
    pub scores: Vec<f64>,
    pub n: usize,
    pub c: usize,
    /// Column names, "state+object" per composition.
    pub col_names: Vec<String>,
    /// True column index per row.
    pub labels: Vec<usize>,
}

impl ScoreMatrix {
    pub fn new(
        scores: Vec<f64>,
        n: usize,
        c: usize,
        col_names: Vec<String>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if scores.len() != n * c || col_names.len() != c || labels.len() != n {
            return Err(CoreError::ConfigError(format!(
                "score matrix dims disagree: {} scores for n={n}, c={c}, {} names, {} labels",
                scores.len(),
                col_names.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(CoreError::ConfigError(format!(
                "label column {bad} out of range for {c} columns"
            )));
        }
        Ok(ScoreMatrix {
            scores,
            n,
            c,
            col_names,
            labels,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.c..(i + 1) * self.c]
    }

    /// CSV with a `label` column (true column index) followed by one score
    /// column per composition. Floats print in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label");
        for name in &self.col_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for i in 0..self.n {
            out.push_str(&self.labels[i].to_string());
            for v in self.row(i) {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| CoreError::Parse {
            path: origin.to_string(),
            line: 1,
            msg: "empty score file".to_string(),
        })?;
        let mut cols = header.split(',');
        if cols.next() != Some("label") {
            return Err(CoreError::Parse {
                path: origin.to_string(),
                line: 1,
                msg: "first header column must be 'label'".to_string(),
            });
        }
        let col_names: Vec<String> = cols.map(str::to_string).collect();
        let c = col_names.len();
        if c == 0 {
            return Err(CoreError::Parse {
                path: origin.to_string(),
                line: 1,
                msg: "no score columns".to_string(),
            });
        }
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let label_field = fields.next().unwrap_or("");
            let label: usize = label_field.parse().map_err(|_| CoreError::Parse {
                path: origin.to_string(),
                line: idx + 1,
                msg: format!("bad label '{label_field}'"),
            })?;
            let row: Vec<f64> = fields
                .map(|f| {
                    f.parse::<f64>().map_err(|_| CoreError::Parse {
                        path: origin.to_string(),
                        line: idx + 1,
                        msg: format!("bad score '{f}'"),
                    })
                })
                .collect::<Result<_>>()?;
            if row.len() != c {
                return Err(CoreError::RaggedVectors {
                    path: origin.to_string(),
                    line: idx + 1,
                    expected: c,
                    found: row.len(),
                });
            }
            labels.push(label);
            scores.push(row);
        }
        let n = labels.len();
        ScoreMatrix::new(scores.into_iter().flatten().collect(), n, c, col_names, labels)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_csv(&text, &path.display().to_string())
    }
}
