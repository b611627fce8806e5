//! Multi-rater truth fusion and (optionally sales-weighted) confusion-matrix
//! scoring of a predicted labeling.

use std::collections::BTreeMap;
use std::io::Read;

use serde::Serialize;

use crate::error::{Error, Result};

/// One rater's judgment for an item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RaterVote {
    Assault,
    NotAssault,
    Indeterminate,
}

impl RaterVote {
    pub fn parse(s: &str) -> Option<RaterVote> {
        match s.trim() {
            "Assault" => Some(RaterVote::Assault),
            "NotAssault" => Some(RaterVote::NotAssault),
            "Indeterminate" => Some(RaterVote::Indeterminate),
            _ => None,
        }
    }
}

/// The automated classifier's tag for an item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PredictedLabel {
    Taw,
    NonTaw,
}

impl PredictedLabel {
    pub fn parse(s: &str) -> Option<PredictedLabel> {
        match s.trim() {
            "TAW" => Some(PredictedLabel::Taw),
            "NonTAW" => Some(PredictedLabel::NonTaw),
            _ => None,
        }
    }
}

/// Fused ground truth for an item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TruthLabel {
    Assault,
    NotAssault,
    /// No usable consensus under the chosen standard.
    Excluded,
}

/// How rater votes become truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruthStandard {
    /// Strict majority between Assault and NotAssault; Indeterminate votes
    /// count for neither side; no strict majority excludes the item.
    Median,
    /// All raters must agree on Assault or NotAssault.
    Unanimous,
}

/// Rater votes and sales volume for one item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RaterLabels {
    pub item_id: String,
    pub votes: Vec<RaterVote>,
    pub sales_count: u64,
}

/// Fuses rater votes into per-item truth under the chosen standard.
pub fn fuse_truth(
    items: &[RaterLabels],
    standard: TruthStandard,
) -> Result<BTreeMap<String, TruthLabel>> {
    let mut out = BTreeMap::new();
    for item in items {
        if item.votes.is_empty() {
            return Err(Error::invalid(format!(
                "item {} has no rater votes",
                item.item_id
            )));
        }
        let assault = item.votes.iter().filter(|v| **v == RaterVote::Assault).count();
        let not = item
            .votes
            .iter()
            .filter(|v| **v == RaterVote::NotAssault)
            .count();
        let label = match standard {
            TruthStandard::Median => {
                if assault > not {
                    TruthLabel::Assault
                } else if not > assault {
                    TruthLabel::NotAssault
                } else {
                    TruthLabel::Excluded
                }
            }
            TruthStandard::Unanimous => {
                if assault == item.votes.len() {
                    TruthLabel::Assault
                } else if not == item.votes.len() {
                    TruthLabel::NotAssault
                } else {
                    TruthLabel::Excluded
                }
            }
        };
        if out.insert(item.item_id.clone(), label).is_some() {
            return Err(Error::invalid(format!(
                "duplicate item id {}",
                item.item_id
            )));
        }
    }
    Ok(out)
}

/// Sales-index weights: each item's sales divided by the mean sales over all
/// provided items, so the weights average to exactly one.
pub fn sales_weights(items: &[RaterLabels]) -> Result<BTreeMap<String, f64>> {
    if items.is_empty() {
        return Err(Error::invalid("no items to weight"));
    }
    let total: u64 = items.iter().map(|i| i.sales_count).sum();
    if total == 0 {
        return Err(Error::invalid("all sales counts are zero"));
    }
    let mean = total as f64 / items.len() as f64;
    Ok(items
        .iter()
        .map(|i| (i.item_id.clone(), i.sales_count as f64 / mean))
        .collect())
}

/// Confusion cells; real-valued because cells accumulate sales weights.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ConfusionMatrix {
    pub true_negative: f64,
    pub false_positive: f64,
    pub false_negative: f64,
    pub true_positive: f64,
}

impl ConfusionMatrix {
    pub fn new(true_negative: f64, false_positive: f64, false_negative: f64, true_positive: f64) -> Self {
        ConfusionMatrix {
            true_negative,
            false_positive,
            false_negative,
            true_positive,
        }
    }

    pub fn total(&self) -> f64 {
        self.true_negative + self.false_positive + self.false_negative + self.true_positive
    }
}

/// Accumulates (optionally weighted) confusion cells. Predicted positive is
/// the TAW tag, truth positive is Assault. Items excluded from the truth are
/// skipped and counted.
pub fn confusion(
    truth: &BTreeMap<String, TruthLabel>,
    predicted: &BTreeMap<String, PredictedLabel>,
    weights: Option<&BTreeMap<String, f64>>,
) -> Result<(ConfusionMatrix, usize)> {
    for id in predicted.keys() {
        if !truth.contains_key(id) {
            return Err(Error::invalid(format!(
                "prediction for unknown item {id}"
            )));
        }
    }
    let mut cm = ConfusionMatrix::default();
    let mut skipped = 0;
    for (id, label) in truth {
        if *label == TruthLabel::Excluded {
            if predicted.contains_key(id) {
                skipped += 1;
            }
            continue;
        }
        let pred = predicted
            .get(id)
            .ok_or_else(|| Error::invalid(format!("missing prediction for item {id}")))?;
        let w = match weights {
            Some(map) => *map
                .get(id)
                .ok_or_else(|| Error::invalid(format!("missing weight for item {id}")))?,
            None => 1.0,
        };
        match (label, pred) {
            (TruthLabel::NotAssault, PredictedLabel::NonTaw) => cm.true_negative += w,
            (TruthLabel::NotAssault, PredictedLabel::Taw) => cm.false_positive += w,
            (TruthLabel::Assault, PredictedLabel::NonTaw) => cm.false_negative += w,
            (TruthLabel::Assault, PredictedLabel::Taw) => cm.true_positive += w,
            (TruthLabel::Excluded, _) => unreachable!(),
        }
    }
    Ok((cm, skipped))
}

/// Scores for one confusion matrix. The headline false-negative and
/// false-positive rates are column-normalized (shares of the predicted
/// classes); the conventional row-normalized rates are exported separately as
/// `miss_rate` and `fall_out`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    /// fn / (fn + tn): share of predicted negatives that are truly positive.
    pub false_negative_rate: Option<f64>,
    /// fp / (fp + tp): share of predicted positives that are truly negative.
    pub false_positive_rate: Option<f64>,
    /// fn / (fn + tp): row-normalized miss rate.
    pub miss_rate: Option<f64>,
    /// fp / (fp + tn): row-normalized false alarm rate.
    pub fall_out: Option<f64>,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    if den > 0.0 {
        Some(num / den)
    } else {
        None
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    if cm.total() <= 0.0 {
        return Err(Error::invalid("empty confusion matrix"));
    }
    Ok(Metrics {
        accuracy: ratio(cm.true_positive + cm.true_negative, cm.total()),
        false_negative_rate: ratio(cm.false_negative, cm.false_negative + cm.true_negative),
        false_positive_rate: ratio(cm.false_positive, cm.false_positive + cm.true_positive),
        miss_rate: ratio(cm.false_negative, cm.false_negative + cm.true_positive),
        fall_out: ratio(cm.false_positive, cm.false_positive + cm.true_negative),
    })
}

/// One standard/weighting combination scored end to end.
pub fn evaluate(
    items: &[RaterLabels],
    predicted: &BTreeMap<String, PredictedLabel>,
    standard: TruthStandard,
    weighted: bool,
) -> Result<(ConfusionMatrix, Metrics, usize)> {
    let truth = fuse_truth(items, standard)?;
    let weights = if weighted {
        Some(sales_weights(items)?)
    } else {
        None
    };
    let (cm, skipped) = confusion(&truth, predicted, weights.as_ref())?;
    let m = metrics(&cm)?;
    Ok((cm, m, skipped))
}

/// Parses the labels file: header row, then
/// `item_id,rater_1,..,rater_R,predicted,sales_count`. The columns between
/// the first and the last two are rater votes.
pub fn read_labels<R: Read>(
    reader: R,
) -> Result<(Vec<RaterLabels>, BTreeMap<String, PredictedLabel>)> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = csv_reader.headers()?.clone();
    if headers.len() < 4 {
        return Err(Error::format(
            "labels file needs item_id, at least one rater, predicted, sales_count",
        ));
    }
    let rater_count = headers.len() - 3;
    let mut items = Vec::new();
    let mut predicted = BTreeMap::new();
    for (idx, row) in csv_reader.records().enumerate() {
        let row = row?;
        let line = idx + 1;
        if row.len() != headers.len() {
            return Err(Error::format(format!("row {line}: wrong column count")));
        }
        let item_id = row[0].trim().to_string();
        let mut votes = Vec::with_capacity(rater_count);
        for r in 0..rater_count {
            let vote = RaterVote::parse(&row[1 + r]).ok_or_else(|| {
                Error::format(format!("row {line}: unknown rater vote {:?}", &row[1 + r]))
            })?;
            votes.push(vote);
        }
        let pred = PredictedLabel::parse(&row[headers.len() - 2]).ok_or_else(|| {
            Error::format(format!(
                "row {line}: unknown predicted label {:?}",
                &row[headers.len() - 2]
            ))
        })?;
        let sales_count: u64 = row[headers.len() - 1].trim().parse().map_err(|_| {
            Error::format(format!(
                "row {line}: bad sales count {:?}",
                &row[headers.len() - 1]
            ))
        })?;
        predicted.insert(item_id.clone(), pred);
        items.push(RaterLabels {
            item_id,
            votes,
            sales_count,
        });
    }
    Ok((items, predicted))
}
