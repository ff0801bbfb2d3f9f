//! Attention-route inspection: for one query row, rank the other rows by
//! their pre-softmax attention score, per head or maximized over heads.

use crate::propagator::AttentionMaps;
use crate::{CoreError, Result};

/// Which head's scores to rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadSelect {
    Head(usize),
    /// For each candidate row, the maximum score over all heads.
    MaxOverHeads,
}

impl HeadSelect {
    pub fn tag(self) -> String {
        match self {
            HeadSelect::Head(h) => format!("head{h}"),
            HeadSelect::MaxOverHeads => "max".to_string(),
        }
    }
}

/// Ranked attention routes for one query row.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteReport {
    pub query: String,
    pub head: String,
    /// k strongest routes, best first.
    pub top: Vec<(String, f64)>,
    /// k weakest routes, worst first.
    pub bottom: Vec<(String, f64)>,
}

/// Ranks the attention scores of `query_row` against every other row.
/// Ties order by row index. `exclude_self` (the default elsewhere) drops
/// the query's own row from the candidates.
pub fn extract_routes(
    maps: &AttentionMaps,
    row_names: &[String],
    query_row: usize,
    k: usize,
    head: HeadSelect,
    exclude_self: bool,
) -> Result<RouteReport> {
    let n = maps.n_rows;
    if row_names.len() != n {
        return Err(CoreError::ConfigError(format!(
            "{} row names for {n} attention rows",
            row_names.len()
        )));
    }
    if query_row >= n {
        return Err(CoreError::UnknownComposition(format!(
            "attention row {query_row} out of range"
        )));
    }
    if let HeadSelect::Head(h) = head {
        if h >= maps.a_pre.len() {
            return Err(CoreError::ConfigError(format!(
                "head {h} out of range for {} heads",
                maps.a_pre.len()
            )));
        }
    }
    if k == 0 {
        return Err(CoreError::ConfigError("k must be positive".into()));
    }

    let score_of = |col: usize| -> f64 {
        match head {
            HeadSelect::Head(h) => maps.a_pre[h][query_row * n + col],
            HeadSelect::MaxOverHeads => maps
                .a_pre
                .iter()
                .map(|a| a[query_row * n + col])
                .fold(f64::NEG_INFINITY, f64::max),
        }
    };

    let mut candidates: Vec<(usize, f64)> = (0..n)
        .filter(|&c| !(exclude_self && c == query_row))
        .map(|c| (c, score_of(c)))
        .collect();
    if k > candidates.len() {
        return Err(CoreError::KTooLarge {
            k,
            available: candidates.len(),
        });
    }
    // Descending by score, ascending by row index on ties.
    candidates.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("finite attention scores")
            .then(a.0.cmp(&b.0))
    });

    let top = candidates[..k]
        .iter()
        .map(|&(c, s)| (row_names[c].clone(), s))
        .collect();
    let bottom = candidates[candidates.len() - k..]
        .iter()
        .rev()
        .map(|&(c, s)| (row_names[c].clone(), s))
        .collect();
    Ok(RouteReport {
        query: row_names[query_row].clone(),
        head: head.tag(),
        top,
        bottom,
    })
}

/// CSV rows `query,rank,direction,name,score,head`; rank is 1-based within
/// its direction.
pub fn reports_to_csv(reports: &[RouteReport]) -> String {
    let mut out = String::from("query,rank,direction,name,score,head\n");
    for r in reports {
        for (i, (name, score)) in r.top.iter().enumerate() {
            out.push_str(&format!(
                "{},{},top,{},{},{}\n",
                r.query,
                i + 1,
                name,
                score,
                r.head
            ));
        }
        for (i, (name, score)) in r.bottom.iter().enumerate() {
            out.push_str(&format!(
                "{},{},bottom,{},{},{}\n",
                r.query,
                i + 1,
                name,
                score,
                r.head
            ));
        }
    }
    out
}

/// Human-readable listing of one report.
pub fn report_to_text(r: &RouteReport) -> String {
    let mut out = format!("routes for '{}' ({}):\n", r.query, r.head);
    out.push_str("  strongest:\n");
    for (i, (name, score)) in r.top.iter().enumerate() {
        out.push_str(&format!("    {}. {} ({score})\n", i + 1, name));
    }
    out.push_str("  weakest:\n");
    for (i, (name, score)) in r.bottom.iter().enumerate() {
        out.push_str(&format!("    {}. {} ({score})\n", i + 1, name));
    }
    out
}
