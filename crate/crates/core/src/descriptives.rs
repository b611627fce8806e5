//! Longitudinal and cross-sectional summaries: annual/monthly/weekly totals,
//! newly-observed purchasers, purchaser concentration, retailer sales ratios,
//! and covariate associations.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use serde::Serialize;

use crate::data::{FirearmType, TransactionRecord};
use crate::design::week_of_year;
use crate::error::{Error, Result};
use crate::linalg;

/// Counts per firearm category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TypeCounts {
    pub counts: [u64; 4],
}

impl TypeCounts {
    pub fn add(&mut self, t: FirearmType) {
        self.counts[t.index()] += 1;
    }

    pub fn get(&self, t: FirearmType) -> u64 {
        self.counts[t.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Exact counts by calendar year and type.
pub fn annual_totals(transactions: &[TransactionRecord]) -> BTreeMap<i32, TypeCounts> {
    let mut out: BTreeMap<i32, TypeCounts> = BTreeMap::new();
    for r in transactions {
        out.entry(r.date.year()).or_default().add(r.firearm_type);
    }
    out
}

/// Exact counts by (year, month) and type.
pub fn monthly_totals(transactions: &[TransactionRecord]) -> BTreeMap<(i32, u32), TypeCounts> {
    let mut out: BTreeMap<(i32, u32), TypeCounts> = BTreeMap::new();
    for r in transactions {
        out.entry((r.date.year(), r.date.month()))
            .or_default()
            .add(r.firearm_type);
    }
    out
}

/// The two year-over-year averaging conventions for monthly series: the mean
/// of the twelve monthly percentage changes, and the percentage change of the
/// annual totals. Both are exported because they differ on uneven months.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonthlyChange {
    pub firearm_type: FirearmType,
    pub mean_of_monthly_pct: Option<f64>,
    pub pct_change_of_totals: Option<f64>,
}

pub fn monthly_yoy_change(
    monthly: &BTreeMap<(i32, u32), TypeCounts>,
    y0: i32,
    y1: i32,
) -> Vec<MonthlyChange> {
    FirearmType::ALL
        .iter()
        .map(|&t| {
            let mut pct_sum = 0.0;
            let mut months = 0;
            let mut total0 = 0u64;
            let mut total1 = 0u64;
            for m in 1..=12 {
                let a = monthly.get(&(y0, m)).map(|c| c.get(t)).unwrap_or(0);
                let b = monthly.get(&(y1, m)).map(|c| c.get(t)).unwrap_or(0);
                total0 += a;
                total1 += b;
                if a > 0 {
                    pct_sum += (b as f64 - a as f64) / a as f64;
                    months += 1;
                }
            }
            MonthlyChange {
                firearm_type: t,
                mean_of_monthly_pct: if months > 0 {
                    Some(pct_sum / months as f64)
                } else {
                    None
                },
                pct_change_of_totals: if total0 > 0 {
                    Some((total1 as f64 - total0 as f64) / total0 as f64)
                } else {
                    None
                },
            }
        })
        .collect()
}

/// Weekly counts by (year, capped week-of-year) and type.
pub fn weekly_by_year(transactions: &[TransactionRecord]) -> BTreeMap<(i32, u32), TypeCounts> {
    let mut out: BTreeMap<(i32, u32), TypeCounts> = BTreeMap::new();
    for r in transactions {
        out.entry((r.date.year(), week_of_year(r.date)))
            .or_default()
            .add(r.firearm_type);
    }
    out
}

/// Per-row newly-observed classification. A purchase is newly observed when
/// it falls in its purchaser's first observed week, where weeks are 7-day
/// blocks counted from the dataset's first dated row with a purchaser id.
#[derive(Debug, Clone, PartialEq)]
pub struct NewlyObserved {
    /// Aligned to the input rows; rows without a purchaser id are `false`.
    pub flags: Vec<bool>,
    pub missing_purchaser_rows: usize,
    pub first_date: Option<NaiveDate>,
}

pub fn newly_observed_flags(transactions: &[TransactionRecord]) -> NewlyObserved {
    let first_date = transactions
        .iter()
        .filter(|r| !r.purchaser_id.is_empty())
        .map(|r| r.date)
        .min();
    let mut flags = vec![false; transactions.len()];
    let mut missing = 0;
    let Some(first) = first_date else {
        missing = transactions.len();
        return NewlyObserved {
            flags,
            missing_purchaser_rows: missing,
            first_date: None,
        };
    };
    let block = |d: NaiveDate| (d - first).num_days() / 7;
    let mut first_block: BTreeMap<&str, i64> = BTreeMap::new();
    for r in transactions {
        if r.purchaser_id.is_empty() {
            missing += 1;
            continue;
        }
        let b = block(r.date);
        first_block
            .entry(r.purchaser_id.as_str())
            .and_modify(|cur| *cur = (*cur).min(b))
            .or_insert(b);
    }
    for (i, r) in transactions.iter().enumerate() {
        if r.purchaser_id.is_empty() {
            continue;
        }
        flags[i] = block(r.date) == first_block[r.purchaser_id.as_str()];
    }
    NewlyObserved {
        flags,
        missing_purchaser_rows: missing,
        first_date,
    }
}

/// Weekly newly-observed and total purchase counts per type, on the 7-day
/// block grid used for the newly-observed definition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NewlyObservedWeekly {
    pub first_date: Option<NaiveDate>,
    pub newly: BTreeMap<i64, TypeCounts>,
    pub total: BTreeMap<i64, TypeCounts>,
    pub missing_purchaser_rows: usize,
}

pub fn newly_observed_weekly(transactions: &[TransactionRecord]) -> NewlyObservedWeekly {
    let classified = newly_observed_flags(transactions);
    let mut newly: BTreeMap<i64, TypeCounts> = BTreeMap::new();
    let mut total: BTreeMap<i64, TypeCounts> = BTreeMap::new();
    if let Some(first) = classified.first_date {
        for (i, r) in transactions.iter().enumerate() {
            if r.purchaser_id.is_empty() {
                continue;
            }
            let week = (r.date - first).num_days() / 7;
            total.entry(week).or_default().add(r.firearm_type);
            if classified.flags[i] {
                newly.entry(week).or_default().add(r.firearm_type);
            }
        }
    }
    NewlyObservedWeekly {
        first_date: classified.first_date,
        newly,
        total,
        missing_purchaser_rows: classified.missing_purchaser_rows,
    }
}

/// Weekly (year, week-of-year) newly-observed purchase counts, for annual
/// overlay exports.
pub fn weekly_newly_observed_by_year(
    transactions: &[TransactionRecord],
) -> BTreeMap<(i32, u32), TypeCounts> {
    let classified = newly_observed_flags(transactions);
    let mut out: BTreeMap<(i32, u32), TypeCounts> = BTreeMap::new();
    for (i, r) in transactions.iter().enumerate() {
        if classified.flags[i] {
            out.entry((r.date.year(), week_of_year(r.date)))
                .or_default()
                .add(r.firearm_type);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationBucket {
    pub label: String,
    pub buyers: u64,
    pub purchases: u64,
    pub share: f64,
}

/// Transactions-per-buyer distribution over a window, with the top-10
/// retailer share alongside.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationReport {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub total_purchases: u64,
    pub buckets: Vec<ConcentrationBucket>,
    pub top10_retailer_share: Option<f64>,
    pub missing_purchaser_rows: usize,
}

const BUCKETS: [(&str, u64, u64); 5] = [
    ("1", 1, 1),
    ("2", 2, 2),
    ("3-4", 3, 4),
    ("5-15", 5, 15),
    (">15", 16, u64::MAX),
];

/// Buckets buyers by their transaction count within `[start, end]` over the
/// given types and reports each bucket's share of purchases.
pub fn purchaser_concentration(
    transactions: &[TransactionRecord],
    start: NaiveDate,
    end: NaiveDate,
    types: &[FirearmType],
) -> Result<ConcentrationReport> {
    if start > end {
        return Err(Error::invalid("window start after end"));
    }
    if types.is_empty() {
        return Err(Error::invalid("need at least one firearm type"));
    }
    let mut per_buyer: BTreeMap<&str, u64> = BTreeMap::new();
    let mut per_dealer: BTreeMap<&str, u64> = BTreeMap::new();
    let mut missing = 0;
    let mut total = 0u64;
    for r in transactions {
        if r.date < start || r.date > end || !types.contains(&r.firearm_type) {
            continue;
        }
        total += 1;
        *per_dealer.entry(r.dealer_id.as_str()).or_insert(0) += 1;
        if r.purchaser_id.is_empty() {
            missing += 1;
            continue;
        }
        *per_buyer.entry(r.purchaser_id.as_str()).or_insert(0) += 1;
    }
    let counted: u64 = per_buyer.values().sum();
    let buckets = BUCKETS
        .iter()
        .map(|&(label, lo, hi)| {
            let mut buyers = 0;
            let mut purchases = 0;
            for &n in per_buyer.values() {
                if n >= lo && n <= hi {
                    buyers += 1;
                    purchases += n;
                }
            }
            ConcentrationBucket {
                label: label.to_string(),
                buyers,
                purchases,
                share: if counted > 0 {
                    purchases as f64 / counted as f64
                } else {
                    0.0
                },
            }
        })
        .collect();
    let mut dealer_counts: Vec<u64> = per_dealer.values().copied().collect();
    dealer_counts.sort_unstable_by(|a, b| b.cmp(a));
    let top10: u64 = dealer_counts.iter().take(10).sum();
    Ok(ConcentrationReport {
        start,
        end,
        total_purchases: total,
        buckets,
        top10_retailer_share: if total > 0 {
            Some(top10 as f64 / total as f64)
        } else {
            None
        },
        missing_purchaser_rows: missing,
    })
}

/// Per-retailer year-over-year sales and ratios.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetailerRatio {
    pub dealer_id: String,
    pub zip: Option<String>,
    pub y0_sales: [u64; 4],
    pub y1_sales: [u64; 4],
    /// y1/y0 per type; undefined when the base year has no sales.
    pub ratios: [Option<f64>; 4],
}

/// Ratios for the smallest set of top retailers (by base-year sales of
/// `reference`) covering at least `coverage` of that type's base-year sales.
pub fn retailer_sales_ratios(
    transactions: &[TransactionRecord],
    y0: i32,
    y1: i32,
    coverage: f64,
    reference: FirearmType,
) -> Result<Vec<RetailerRatio>> {
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(Error::invalid("coverage must lie in (0, 1]"));
    }
    let mut any0 = false;
    let mut any1 = false;
    let mut sales: BTreeMap<&str, ([u64; 4], [u64; 4])> = BTreeMap::new();
    let mut zips: BTreeMap<&str, BTreeMap<&str, u64>> = BTreeMap::new();
    for r in transactions {
        let year = r.date.year();
        if year == y0 {
            any0 = true;
            sales.entry(r.dealer_id.as_str()).or_default().0[r.firearm_type.index()] += 1;
        } else if year == y1 {
            any1 = true;
            sales.entry(r.dealer_id.as_str()).or_default().1[r.firearm_type.index()] += 1;
        } else {
            continue;
        }
        if let Some(zip) = &r.dealer_zip {
            *zips
                .entry(r.dealer_id.as_str())
                .or_default()
                .entry(zip.as_str())
                .or_insert(0) += 1;
        }
    }
    if !any0 || !any1 {
        return Err(Error::invalid(format!(
            "no transactions in year {}",
            if any0 { y1 } else { y0 }
        )));
    }
    let total_ref: u64 = sales.values().map(|(a, _)| a[reference.index()]).sum();
    if total_ref == 0 {
        return Err(Error::invalid(format!(
            "no {} sales in base year {y0}",
            reference.name()
        )));
    }
    let mut ranked: Vec<(&str, u64)> = sales
        .iter()
        .map(|(d, (a, _))| (*d, a[reference.index()]))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let threshold = coverage * total_ref as f64;
    let mut covered = 0u64;
    let mut out = Vec::new();
    for (dealer, ref_sales) in ranked {
        if covered as f64 >= threshold {
            break;
        }
        covered += ref_sales;
        let (y0_sales, y1_sales) = sales[dealer];
        let mut ratios = [None; 4];
        for k in 0..4 {
            if y0_sales[k] > 0 {
                ratios[k] = Some(y1_sales[k] as f64 / y0_sales[k] as f64);
            }
        }
        let zip = zips.get(dealer).and_then(|m| {
            m.iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(z, _)| z.to_string())
        });
        out.push(RetailerRatio {
            dealer_id: dealer.to_string(),
            zip,
            y0_sales,
            y1_sales,
            ratios,
        });
    }
    Ok(out)
}

/// Pearson correlation of two equal-length series; `None` under zero
/// variance.
pub fn series_correlation(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.len() != b.len() {
        return Err(Error::invalid("series lengths differ"));
    }
    if a.len() < 3 {
        return Err(Error::invalid("need at least 3 points"));
    }
    Ok(linalg::pearson(a, b))
}

/// Covariate file: header row, then `zip,value`.
pub fn read_covariates<R: std::io::Read>(reader: R) -> Result<BTreeMap<String, f64>> {
    let mut csv_reader = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut out = BTreeMap::new();
    for (idx, row) in csv_reader.records().enumerate() {
        let row = row?;
        let line = idx + 1;
        if row.len() < 2 {
            return Err(Error::format(format!("covariate row {line}: missing columns")));
        }
        let value: f64 = row[1]
            .trim()
            .parse()
            .map_err(|_| Error::format(format!("covariate row {line}: bad value {:?}", &row[1])))?;
        out.insert(row[0].trim().to_string(), value);
    }
    Ok(out)
}

/// Association between retailer ratios and a per-zip covariate for one type.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Association {
    pub firearm_type: FirearmType,
    pub matched: usize,
    /// Retailers dropped for an undefined ratio, missing zip, or missing
    /// covariate value.
    pub excluded: usize,
    pub correlation: Option<f64>,
    pub slope: f64,
    pub intercept: f64,
    /// (dealer_id, covariate, ratio) scatter points.
    pub points: Vec<(String, f64, f64)>,
}

pub fn covariate_association(
    ratios: &[RetailerRatio],
    covariate: &BTreeMap<String, f64>,
    firearm_type: FirearmType,
) -> Result<Association> {
    let mut points = Vec::new();
    let mut excluded = 0;
    for r in ratios {
        let ratio = r.ratios[firearm_type.index()];
        let value = r.zip.as_ref().and_then(|z| covariate.get(z));
        match (ratio, value) {
            (Some(y), Some(&x)) => points.push((r.dealer_id.clone(), x, y)),
            _ => excluded += 1,
        }
    }
    if points.len() < 3 {
        return Err(Error::invalid(format!(
            "only {} retailers with both ratio and covariate",
            points.len()
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.1).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.2).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|&x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(&x, &y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    Ok(Association {
        firearm_type,
        matched: points.len(),
        excluded,
        correlation: linalg::pearson(&xs, &ys),
        slope,
        intercept: my - slope * mx,
        points,
    })
}
