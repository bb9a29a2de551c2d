//! PSR evaluation: procedure order similarity (POS), F1 under temporal
//! TP/FP/FN semantics, and average recognition delay.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{PsrError, Result};
use crate::procedure::EventSequence;

/// Costs of the four edit operations. All default to 1.
///
/// The distance is the unrestricted Damerau-Levenshtein distance (characters
/// may be edited again after a transposition). The dynamic program is exact
/// whenever `2 * transpose >= insert + delete`, which holds for unit costs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditWeights {
    pub insert: f64,
    pub delete: f64,
    pub substitute: f64,
    pub transpose: f64,
}

impl Default for EditWeights {
    fn default() -> Self {
        EditWeights { insert: 1.0, delete: 1.0, substitute: 1.0, transpose: 1.0 }
    }
}

impl EditWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("insert", self.insert),
            ("delete", self.delete),
            ("substitute", self.substitute),
            ("transpose", self.transpose),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(PsrError::arg(name, format!("edit cost must be finite and non-negative, got {w}")));
            }
        }
        Ok(())
    }
}

/// Weighted Damerau-Levenshtein distance turning `a` into `b`.
pub fn damerau_levenshtein<T: Ord>(a: &[T], b: &[T], weights: &EditWeights) -> Result<f64> {
    weights.validate()?;
    let (n, m) = (a.len(), b.len());
    let inf = f64::INFINITY;
    // d[i + 1][j + 1] is the distance between a[..i] and b[..j]; row/column 0 are sentinels.
    let mut d = vec![vec![0.0f64; m + 2]; n + 2];
    d[0][0] = inf;
    for i in 0..=n {
        d[i + 1][0] = inf;
        d[i + 1][1] = i as f64 * weights.delete;
    }
    for j in 0..=m {
        d[0][j + 1] = inf;
        d[1][j + 1] = j as f64 * weights.insert;
    }
    let mut last_row: BTreeMap<&T, usize> = BTreeMap::new();
    for i in 1..=n {
        let mut last_match_col = 0;
        for j in 1..=m {
            let k = last_row.get(&b[j - 1]).copied().unwrap_or(0);
            let l = last_match_col;
            let cost = if a[i - 1] == b[j - 1] {
                last_match_col = j;
                0.0
            } else {
                weights.substitute
            };
            let transposed =
                d[k][l] + (i - k - 1) as f64 * weights.delete + weights.transpose + (j - l - 1) as f64 * weights.insert;
            d[i + 1][j + 1] =
                (d[i][j] + cost).min(d[i + 1][j] + weights.insert).min(d[i][j + 1] + weights.delete).min(transposed);
        }
        last_row.insert(&a[i - 1], i);
    }
    Ok(d[n + 1][m + 1])
}

/// `1 - min(DamLev(gt, pred) / |gt|, 1)` over the action orders of both sequences.
pub fn pos_score(gt: &EventSequence, pred: &EventSequence, weights: &EditWeights) -> Result<f64> {
    if gt.is_empty() {
        return Err(PsrError::UndefinedMetric("POS needs at least one ground-truth step"));
    }
    let dist = damerau_levenshtein(&gt.action_order(), &pred.action_order(), weights)?;
    Ok(1.0 - (dist / gt.len() as f64).min(1.0))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchStrategy {
    /// Predictions in ascending time each take the earliest unmatched
    /// ground-truth event of the same action completed at or before them.
    #[default]
    Greedy,
    /// Experimental: maximum-cardinality bipartite matching by augmenting paths.
    Optimal,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchLedger {
    /// `(pred index, gt index)` pairs.
    pub matches: Vec<(usize, usize)>,
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
}

impl MatchLedger {
    pub fn tp(&self) -> usize {
        self.matches.len()
    }

    pub fn fp(&self) -> usize {
        self.false_positives.len()
    }

    pub fn fn_(&self) -> usize {
        self.false_negatives.len()
    }
}

pub fn match_predictions(gt: &EventSequence, pred: &EventSequence) -> MatchLedger {
    match_with(gt, pred, MatchStrategy::Greedy)
}

pub fn match_with(gt: &EventSequence, pred: &EventSequence, strategy: MatchStrategy) -> MatchLedger {
    let (g, p) = (gt.events(), pred.events());
    let mut gt_match: Vec<Option<usize>> = vec![None; g.len()];
    let mut pred_match: Vec<Option<usize>> = vec![None; p.len()];
    match strategy {
        MatchStrategy::Greedy => {
            // Events are frame-sorted already; a stable sort on time keeps that order for equal times.
            let mut order: Vec<usize> = (0..p.len()).collect();
            order.sort_by(|&x, &y| p[x].time_s.total_cmp(&p[y].time_s));
            for pi in order {
                let pe = &p[pi];
                let candidate = (0..g.len())
                    .filter(|&gi| gt_match[gi].is_none() && g[gi].action == pe.action && g[gi].time_s <= pe.time_s)
                    .min_by(|&x, &y| g[x].time_s.total_cmp(&g[y].time_s).then(x.cmp(&y)));
                if let Some(gi) = candidate {
                    gt_match[gi] = Some(pi);
                    pred_match[pi] = Some(gi);
                }
            }
        }
        MatchStrategy::Optimal => {
            let adj: Vec<Vec<usize>> = (0..p.len())
                .map(|pi| {
                    (0..g.len()).filter(|&gi| g[gi].action == p[pi].action && g[gi].time_s <= p[pi].time_s).collect()
                })
                .collect();
            for pi in 0..p.len() {
                let mut seen = vec![false; g.len()];
                augment(pi, &adj, &mut seen, &mut gt_match, &mut pred_match);
            }
        }
    }
    let mut matches: Vec<(usize, usize)> =
        pred_match.iter().enumerate().filter_map(|(pi, m)| m.map(|gi| (pi, gi))).collect();
    matches.sort_unstable();
    MatchLedger {
        matches,
        false_positives: (0..p.len()).filter(|&pi| pred_match[pi].is_none()).collect(),
        false_negatives: (0..g.len()).filter(|&gi| gt_match[gi].is_none()).collect(),
    }
}

fn augment(
    pi: usize,
    adj: &[Vec<usize>],
    seen: &mut [bool],
    gt_match: &mut [Option<usize>],
    pred_match: &mut [Option<usize>],
) -> bool {
    for &gi in &adj[pi] {
        if seen[gi] {
            continue;
        }
        seen[gi] = true;
        let free = match gt_match[gi] {
            None => true,
            Some(other) => augment(other, adj, seen, gt_match, pred_match),
        };
        if free {
            gt_match[gi] = Some(pi);
            pred_match[pi] = Some(gi);
            return true;
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn f1_score(ledger: &MatchLedger) -> F1Score {
    let (tp, fp, fn_) = (ledger.tp() as f64, ledger.fp() as f64, ledger.fn_() as f64);
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = ratio(2.0 * precision * recall, precision + recall);
    F1Score { precision, recall, f1 }
}

fn matched_delays(ledger: &MatchLedger, gt: &EventSequence, pred: &EventSequence) -> Vec<f64> {
    ledger.matches.iter().map(|&(pi, gi)| pred.events()[pi].time_s - gt.events()[gi].time_s).collect()
}

/// Mean delay in seconds over matched pairs; `None` when nothing matched.
pub fn average_delay(ledger: &MatchLedger, gt: &EventSequence, pred: &EventSequence) -> Option<f64> {
    mean(&matched_delays(ledger, gt, pred))
}

fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOptions {
    #[serde(default)]
    pub weights: EditWeights,
    /// Keep incorrectly executed ground-truth steps (diagnostics only).
    #[serde(default)]
    pub include_incorrect: bool,
    #[serde(default)]
    pub matching: MatchStrategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub pos: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tau_s: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Delay of every matched pair in seconds, in ledger order.
    pub delays_s: Vec<f64>,
    pub ledger: MatchLedger,
}

pub fn evaluate(gt: &EventSequence, pred: &EventSequence, opts: &EvalOptions) -> Result<EvaluationReport> {
    let gt = if opts.include_incorrect { gt.clone() } else { gt.correct_only() };
    let pos = pos_score(&gt, pred, &opts.weights)?;
    let ledger = match_with(&gt, pred, opts.matching);
    let f = f1_score(&ledger);
    let delays_s = matched_delays(&ledger, &gt, pred);
    Ok(EvaluationReport {
        pos,
        precision: f.precision,
        recall: f.recall,
        f1: f.f1,
        tau_s: mean(&delays_s),
        tp: ledger.tp(),
        fp: ledger.fp(),
        fn_: ledger.fn_(),
        delays_s,
        ledger,
    })
}

/// Dataset-level summary: POS, precision, recall and F1 are macro-averaged over
/// videos; the delay pools every matched pair across videos.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub videos: usize,
    pub pos: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tau_s: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

pub fn aggregate<'a, I>(reports: I) -> Result<DatasetSummary>
where
    I: IntoIterator<Item = &'a EvaluationReport>,
{
    let reports: Vec<&EvaluationReport> = reports.into_iter().collect();
    if reports.is_empty() {
        return Err(PsrError::UndefinedMetric("no videos to aggregate"));
    }
    let n = reports.len() as f64;
    let avg = |f: fn(&EvaluationReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / n;
    let pooled: Vec<f64> = reports.iter().flat_map(|r| r.delays_s.iter().copied()).collect();
    Ok(DatasetSummary {
        videos: reports.len(),
        pos: avg(|r| r.pos),
        precision: avg(|r| r.precision),
        recall: avg(|r| r.recall),
        f1: avg(|r| r.f1),
        tau_s: mean(&pooled),
        tp: reports.iter().map(|r| r.tp).sum(),
        fp: reports.iter().map(|r| r.fp).sum(),
        fn_: reports.iter().map(|r| r.fn_).sum(),
    })
}

/// Human-readable one-line rendering used in logs.
pub fn describe(report: &EvaluationReport) -> String {
    match report.tau_s {
        Some(t) => format!("pos={:.4} f1={:.4} tau={:.3}s", report.pos, report.f1, t),
        None => format!("pos={:.4} f1={:.4} tau=undefined", report.pos, report.f1),
    }
}
