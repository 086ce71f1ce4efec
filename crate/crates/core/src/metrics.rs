//! AUC, logloss and sliced evaluation reports.

use serde::{Deserialize, Serialize};

use crate::data::{FeatureVocabulary, Instance};
use crate::error::{Error, Result};

/// Predictions are clamped into `[CLAMP, 1 - CLAMP]`.
pub const CLAMP: f64 = 1e-7;

/// Rank AUC with midranks for ties; equals the fraction of (positive,
/// negative) pairs ordered correctly, ties counting one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            context: "auc labels",
            expected: scores.len(),
            got: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::AucUndefined);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of (1-based) midranks of positives, kept doubled to stay integral
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        // midrank of ranks i+1..=j+1, doubled
        rank_sum2 += pos_in_group * (i as u128 + j as u128 + 2);
        i = j + 1;
    }
    let p = n_pos as u128;
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Mean binary cross-entropy of clamped predictions.
pub fn logloss(predictions: &[f64], labels: &[u8]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if predictions.len() != labels.len() {
        return Err(Error::Dimension {
            context: "logloss labels",
            expected: predictions.len(),
            got: labels.len(),
        });
    }
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(CLAMP, 1.0 - CLAMP);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / predictions.len() as f64)
}

/// Half-open `[lo, hi)` bucket; `hi = None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bucket {
    pub lo: u64,
    pub hi: Option<u64>,
}

impl Bucket {
    pub fn contains(&self, x: u64) -> bool {
        x >= self.lo && self.hi.is_none_or(|h| x < h)
    }

    pub fn label(&self) -> String {
        match self.hi {
            Some(h) => format!("[{},{})", self.lo, h),
            None => format!("[{},inf)", self.lo),
        }
    }
}

/// Ordered, contiguous buckets. Values below the first lower bound land in
/// an extra leading bucket so every instance is routed somewhere.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Buckets(pub Vec<Bucket>);

impl Buckets {
    /// Thresholds `[t0, t1, ..]` become `[t0,t1), [t1,t2), .., [tn,inf)`.
    pub fn from_thresholds(t: &[u64]) -> Result<Self> {
        if t.is_empty() || t.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "bucket thresholds must be non-empty and increasing".into(),
            ));
        }
        let mut v: Vec<Bucket> = t
            .windows(2)
            .map(|w| Bucket {
                lo: w[0],
                hi: Some(w[1]),
            })
            .collect();
        v.push(Bucket {
            lo: *t.last().unwrap(),
            hi: None,
        });
        if t[0] > 0 {
            v.insert(
                0,
                Bucket {
                    lo: 0,
                    hi: Some(t[0]),
                },
            );
        }
        Ok(Buckets(v))
    }

    pub fn default_frequency() -> Self {
        Self::from_thresholds(&[1, 10, 100]).unwrap()
    }

    pub fn default_behavior_length() -> Self {
        Self::from_thresholds(&[1, 5, 20]).unwrap()
    }

    pub fn route(&self, x: u64) -> usize {
        self.0
            .iter()
            .position(|b| b.contains(x))
            .expect("buckets cover [0, inf)")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub bucket: String,
    pub lo: u64,
    pub hi: Option<u64>,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub count: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    /// `None` when a class is missing.
    pub auc: Option<f64>,
    /// `None` when empty.
    pub logloss: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub slices: Vec<SliceReport>,
}

impl EvalReport {
    pub fn new(scores: &[f64], labels: &[u8]) -> Self {
        let n_pos = labels.iter().filter(|&&y| y == 1).count();
        EvalReport {
            count: labels.len(),
            n_pos,
            n_neg: labels.len() - n_pos,
            auc: auc(scores, labels).ok(),
            logloss: logloss(scores, labels).ok(),
            slices: Vec::new(),
        }
    }

    /// Delimited table of the slices: bucket, lo, hi, count, n_pos, n_neg, auc, logloss.
    pub fn slice_table(&self, delimiter: char) -> String {
        let d = delimiter;
        let opt = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
        let mut out = format!("bucket{d}lo{d}hi{d}count{d}n_pos{d}n_neg{d}auc{d}logloss\n");
        for s in &self.slices {
            let r = &s.report;
            out.push_str(&format!(
                "{}{d}{}{d}{}{d}{}{d}{}{d}{}{d}{}{d}{}\n",
                s.bucket,
                s.lo,
                s.hi.map(|h| h.to_string()).unwrap_or_else(|| "inf".into()),
                r.count,
                r.n_pos,
                r.n_neg,
                opt(r.auc),
                opt(r.logloss)
            ));
        }
        out
    }
}

pub fn evaluate(instances: &[Instance], scores: &[f64]) -> EvalReport {
    let labels: Vec<u8> = instances.iter().map(|i| i.label).collect();
    EvalReport::new(scores, &labels)
}

fn sliced(
    instances: &[Instance],
    scores: &[f64],
    buckets: &Buckets,
    key: impl Fn(&Instance) -> u64,
) -> EvalReport {
    let mut report = evaluate(instances, scores);
    let mut members: Vec<(Vec<f64>, Vec<u8>)> = vec![(Vec::new(), Vec::new()); buckets.0.len()];
    for (inst, &s) in instances.iter().zip(scores) {
        let b = buckets.route(key(inst));
        members[b].0.push(s);
        members[b].1.push(inst.label);
    }
    report.slices = buckets
        .0
        .iter()
        .zip(members)
        .map(|(b, (s, l))| SliceReport {
            bucket: b.label(),
            lo: b.lo,
            hi: b.hi,
            report: EvalReport::new(&s, &l),
        })
        .collect();
    report
}

/// Training frequency of an instance's rarest non-behavior feature.
pub fn min_feature_frequency(inst: &Instance, vocab: &FeatureVocabulary) -> u64 {
    inst.features()
        .map(|f| vocab.frequency[f as usize])
        .min()
        .expect("user and item are always present")
}

/// Each instance is routed by its rarest feature, so slice counts add up
/// to the parent count.
pub fn slice_by_feature_frequency(
    instances: &[Instance],
    scores: &[f64],
    vocab: &FeatureVocabulary,
    buckets: &Buckets,
) -> EvalReport {
    sliced(instances, scores, buckets, |i| {
        min_feature_frequency(i, vocab)
    })
}

/// Routed by the instance's behavior-list length.
pub fn slice_by_behavior_length(
    instances: &[Instance],
    scores: &[f64],
    buckets: &Buckets,
) -> EvalReport {
    sliced(instances, scores, buckets, |i| i.behaviors.len() as u64)
}
