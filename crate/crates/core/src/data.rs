//! Transaction/license ingestion and the daily count panel.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Log-transform offset used throughout; counts enter models as ln(count + offset).
pub const DEFAULT_LOG_OFFSET: f64 = 0.1;

/// The four modelled firearm categories. Machine guns are rejected at ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FirearmType {
    Handgun,
    TawRifle,
    NonTawRifle,
    Shotgun,
}

impl FirearmType {
    pub const ALL: [FirearmType; 4] = [
        FirearmType::Handgun,
        FirearmType::TawRifle,
        FirearmType::NonTawRifle,
        FirearmType::Shotgun,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FirearmType::Handgun => "Handgun",
            FirearmType::TawRifle => "TAWRifle",
            FirearmType::NonTawRifle => "NonTAWRifle",
            FirearmType::Shotgun => "Shotgun",
        }
    }

    pub fn index(&self) -> usize {
        match self {
            FirearmType::Handgun => 0,
            FirearmType::TawRifle => 1,
            FirearmType::NonTawRifle => 2,
            FirearmType::Shotgun => 3,
        }
    }

    /// Parses a category name. Machine guns are a recognized-but-excluded
    /// category and get a dedicated error so ingestion can report them.
    pub fn parse(s: &str) -> std::result::Result<FirearmType, TypeParseError> {
        match s.trim() {
            "Handgun" => Ok(FirearmType::Handgun),
            "TAWRifle" => Ok(FirearmType::TawRifle),
            "NonTAWRifle" => Ok(FirearmType::NonTawRifle),
            "Shotgun" => Ok(FirearmType::Shotgun),
            "MachineGun" | "Machine Gun" => Err(TypeParseError::Excluded),
            _ => Err(TypeParseError::Unknown),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TypeParseError {
    /// A real category that is out of scope for the analysis.
    Excluded,
    Unknown,
}

/// One registered dealer sale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransactionRecord {
    pub date: NaiveDate,
    pub firearm_type: FirearmType,
    pub dealer_id: String,
    pub dealer_zip: Option<String>,
    pub purchaser_id: String,
    pub make: String,
    pub model: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LicenseKind {
    New,
    Renewal,
}

impl LicenseKind {
    pub fn parse(s: &str) -> Option<LicenseKind> {
        match s.trim() {
            "New" => Some(LicenseKind::New),
            "Renewal" => Some(LicenseKind::Renewal),
            _ => None,
        }
    }
}

/// One license issuance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LicenseRecord {
    pub issue_date: NaiveDate,
    pub kind: LicenseKind,
}

/// Row-level rejection reasons tallied by the ingestion report.
pub mod reject {
    pub const BAD_DATE: &str = "unparseable date";
    pub const EXCLUDED_TYPE: &str = "excluded firearm category";
    pub const UNKNOWN_TYPE: &str = "unknown firearm type";
    pub const UNKNOWN_KIND: &str = "unknown license kind";
    pub const SHORT_ROW: &str = "missing columns";
}

/// Ingestion outcome: accepted rows plus a machine-readable rejection tally.
#[derive(Debug, Clone, Default, Serialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: BTreeMap<String, usize>,
    /// (1-based data row index, reason) for each rejected row.
    pub rejected_rows: Vec<(usize, String)>,
    /// Rows identical to an earlier row. Counted, never dropped.
    pub duplicate_rows: usize,
}

impl IngestReport {
    fn reject(&mut self, row: usize, reason: &str) {
        *self.rejected.entry(reason.to_string()).or_insert(0) += 1;
        self.rejected_rows.push((row, reason.to_string()));
    }

    pub fn rejected_total(&self) -> usize {
        self.rejected.values().sum()
    }
}

/// Parses the transactions file: header row, then
/// `date,firearm_type,dealer_id,dealer_zip,purchaser_id,make,model`.
///
/// Malformed rows are tallied in the report with their row index; an
/// unreadable source is fatal.
pub fn ingest_transactions<R: Read>(reader: R) -> Result<(Vec<TransactionRecord>, IngestReport)> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let mut records = Vec::new();
    let mut report = IngestReport::default();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (idx, row) in csv_reader.records().enumerate() {
        let row_no = idx + 1;
        let row = row?;
        if row.len() < 7 {
            report.reject(row_no, reject::SHORT_ROW);
            continue;
        }
        let date = match NaiveDate::parse_from_str(row[0].trim(), "%Y-%m-%d") {
            Ok(d) => d,
            Err(_) => {
                report.reject(row_no, reject::BAD_DATE);
                continue;
            }
        };
        let firearm_type = match FirearmType::parse(&row[1]) {
            Ok(t) => t,
            Err(TypeParseError::Excluded) => {
                report.reject(row_no, reject::EXCLUDED_TYPE);
                continue;
            }
            Err(TypeParseError::Unknown) => {
                report.reject(row_no, reject::UNKNOWN_TYPE);
                continue;
            }
        };
        let zip = row[3].trim();
        let record = TransactionRecord {
            date,
            firearm_type,
            dealer_id: row[2].trim().to_string(),
            dealer_zip: if zip.is_empty() {
                None
            } else {
                Some(zip.to_string())
            },
            purchaser_id: row[4].trim().to_string(),
            make: row[5].trim().to_string(),
            model: row[6].trim().to_string(),
        };
        let key = format!(
            "{}|{}|{}|{}|{}|{}",
            record.date,
            record.firearm_type.name(),
            record.dealer_id,
            record.purchaser_id,
            record.make,
            record.model
        );
        let count = seen.entry(key).or_insert(0);
        if *count > 0 {
            report.duplicate_rows += 1;
        }
        *count += 1;
        records.push(record);
        report.accepted += 1;
    }
    Ok((records, report))
}

pub fn ingest_transactions_path(path: &Path) -> Result<(Vec<TransactionRecord>, IngestReport)> {
    let file = std::fs::File::open(path)?;
    ingest_transactions(file)
}

/// Parses the licenses file: header row, then `issue_date,kind`.
pub fn ingest_licenses<R: Read>(reader: R) -> Result<(Vec<LicenseRecord>, IngestReport)> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let mut records = Vec::new();
    let mut report = IngestReport::default();
    for (idx, row) in csv_reader.records().enumerate() {
        let row_no = idx + 1;
        let row = row?;
        if row.len() < 2 {
            report.reject(row_no, reject::SHORT_ROW);
            continue;
        }
        let date = match NaiveDate::parse_from_str(row[0].trim(), "%Y-%m-%d") {
            Ok(d) => d,
            Err(_) => {
                report.reject(row_no, reject::BAD_DATE);
                continue;
            }
        };
        let kind = match LicenseKind::parse(&row[1]) {
            Some(k) => k,
            None => {
                report.reject(row_no, reject::UNKNOWN_KIND);
                continue;
            }
        };
        records.push(LicenseRecord {
            issue_date: date,
            kind,
        });
        report.accepted += 1;
    }
    Ok((records, report))
}

pub fn ingest_licenses_path(path: &Path) -> Result<(Vec<LicenseRecord>, IngestReport)> {
    let file = std::fs::File::open(path)?;
    ingest_licenses(file)
}

/// ln(count + offset). The offset keeps zero-count days finite.
pub fn log_offset(count: f64, offset: f64) -> Result<f64> {
    if offset <= 0.0 {
        return Err(Error::invalid(format!("log offset must be > 0, got {offset}")));
    }
    if count < 0.0 {
        return Err(Error::invalid(format!("count must be >= 0, got {count}")));
    }
    Ok((count + offset).ln())
}

/// Inverse of [`log_offset`]: max(exp(v) − offset, 0). Never negative.
pub fn inverse_log_offset(v: f64, offset: f64) -> f64 {
    (v.exp() - offset).max(0.0)
}

/// A count series on the log scale, tagged with the offset that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct LogSeries {
    values: Vec<f64>,
    offset: f64,
}

impl LogSeries {
    pub fn from_counts(counts: &[u32], offset: f64) -> Result<LogSeries> {
        let values = counts
            .iter()
            .map(|&c| log_offset(c as f64, offset))
            .collect::<Result<Vec<f64>>>()?;
        Ok(LogSeries { values, offset })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn to_counts(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|&v| inverse_log_offset(v, self.offset))
            .collect()
    }
}

/// Exclusion tallies from panel aggregation.
#[derive(Debug, Clone, Default, Serialize)]
pub struct AggregationSummary {
    pub transactions_in_range: usize,
    pub transactions_out_of_range: usize,
    pub licenses_in_range: usize,
    pub licenses_out_of_range: usize,
}

/// Contiguous daily counts for J outcome series plus the two license series.
///
/// Counts are stored row-major by day. The panel carries the log-transform
/// offset so every series derived from it shares one transform.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyPanel {
    start_date: NaiveDate,
    days: usize,
    series_names: Vec<String>,
    counts: Vec<u32>,
    new_licenses: Vec<u32>,
    renewal_licenses: Vec<u32>,
    offset: f64,
}

impl DailyPanel {
    pub fn new(
        start_date: NaiveDate,
        series_names: Vec<String>,
        counts: Vec<u32>,
        new_licenses: Vec<u32>,
        renewal_licenses: Vec<u32>,
        offset: f64,
    ) -> Result<DailyPanel> {
        let j = series_names.len();
        if j == 0 {
            return Err(Error::invalid("panel needs at least one series"));
        }
        if !counts.len().is_multiple_of(j) || counts.is_empty() {
            return Err(Error::invalid(format!(
                "count matrix size {} is not a positive multiple of series count {j}",
                counts.len()
            )));
        }
        let days = counts.len() / j;
        if new_licenses.len() != days || renewal_licenses.len() != days {
            return Err(Error::invalid(
                "license series must have one entry per panel day",
            ));
        }
        if offset <= 0.0 {
            return Err(Error::invalid("panel log offset must be > 0"));
        }
        let mut unique = series_names.clone();
        unique.sort();
        unique.dedup();
        if unique.len() != j {
            return Err(Error::invalid("series names must be distinct"));
        }
        Ok(DailyPanel {
            start_date,
            days,
            series_names,
            counts,
            new_licenses,
            renewal_licenses,
            offset,
        })
    }

    pub fn start_date(&self) -> NaiveDate {
        self.start_date
    }

    pub fn end_date(&self) -> NaiveDate {
        self.start_date + Days::new(self.days as u64 - 1)
    }

    pub fn len(&self) -> usize {
        self.days
    }

    pub fn is_empty(&self) -> bool {
        self.days == 0
    }

    pub fn series_count(&self) -> usize {
        self.series_names.len()
    }

    pub fn series_names(&self) -> &[String] {
        &self.series_names
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn date_at(&self, t: usize) -> NaiveDate {
        self.start_date + Days::new(t as u64)
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let delta = (date - self.start_date).num_days();
        if delta < 0 || delta as usize >= self.days {
            None
        } else {
            Some(delta as usize)
        }
    }

    pub fn count(&self, t: usize, j: usize) -> u32 {
        self.counts[t * self.series_names.len() + j]
    }

    pub fn series_counts(&self, j: usize) -> Vec<u32> {
        (0..self.days).map(|t| self.count(t, j)).collect()
    }

    pub fn new_licenses(&self) -> &[u32] {
        &self.new_licenses
    }

    pub fn renewal_licenses(&self) -> &[u32] {
        &self.renewal_licenses
    }

    pub fn log_series(&self, j: usize) -> Result<LogSeries> {
        LogSeries::from_counts(&self.series_counts(j), self.offset)
    }

    pub fn log_new_licenses(&self) -> Result<LogSeries> {
        LogSeries::from_counts(&self.new_licenses, self.offset)
    }

    pub fn log_renewal_licenses(&self) -> Result<LogSeries> {
        LogSeries::from_counts(&self.renewal_licenses, self.offset)
    }

    /// Total count over every day and series.
    pub fn grand_total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// The sub-panel of all days strictly before `cutoff`.
    pub fn up_to(&self, cutoff: NaiveDate) -> Result<DailyPanel> {
        let delta = (cutoff - self.start_date).num_days();
        if delta <= 0 {
            return Err(Error::invalid(format!(
                "cutoff {cutoff} leaves no panel days before it"
            )));
        }
        let keep = (delta as usize).min(self.days);
        self.slice_rows(0, keep)
    }

    /// A sub-panel of `days` days starting at `start` (inclusive).
    pub fn slice(&self, start: NaiveDate, days: usize) -> Result<DailyPanel> {
        let t0 = self
            .index_of(start)
            .ok_or_else(|| Error::invalid(format!("date {start} outside panel")))?;
        if t0 + days > self.days {
            return Err(Error::invalid(format!(
                "slice of {days} days starting {start} runs past panel end"
            )));
        }
        self.slice_rows(t0, days)
    }

    fn slice_rows(&self, t0: usize, days: usize) -> Result<DailyPanel> {
        let j = self.series_names.len();
        DailyPanel::new(
            self.date_at(t0),
            self.series_names.clone(),
            self.counts[t0 * j..(t0 + days) * j].to_vec(),
            self.new_licenses[t0..t0 + days].to_vec(),
            self.renewal_licenses[t0..t0 + days].to_vec(),
            self.offset,
        )
    }

    /// License counts for `h` days starting at `cutoff`, as forecast inputs.
    pub fn exogenous_after(&self, cutoff: NaiveDate, h: usize) -> Result<ExogenousFuture> {
        let t0 = self
            .index_of(cutoff)
            .ok_or_else(|| Error::invalid(format!("cutoff {cutoff} outside panel")))?;
        if t0 + h > self.days {
            return Err(Error::invalid(format!(
                "panel holds {} days from {cutoff}, need {h}",
                self.days - t0
            )));
        }
        Ok(ExogenousFuture {
            new_licenses: self.new_licenses[t0..t0 + h].to_vec(),
            renewal_licenses: self.renewal_licenses[t0..t0 + h].to_vec(),
        })
    }
}

/// License issuances covering a forecast horizon. Valid as an instrument only
/// while issuances are driven by applications filed before the cutoff.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExogenousFuture {
    pub new_licenses: Vec<u32>,
    pub renewal_licenses: Vec<u32>,
}

/// Aggregates record streams onto a contiguous daily grid.
///
/// Every date in `[start, end]` is present; out-of-range records are excluded
/// and tallied. Series order follows [`FirearmType::ALL`].
pub fn aggregate_daily(
    transactions: &[TransactionRecord],
    licenses: &[LicenseRecord],
    start: NaiveDate,
    end: NaiveDate,
    offset: f64,
) -> Result<(DailyPanel, AggregationSummary)> {
    if start > end {
        return Err(Error::invalid(format!(
            "start {start} after end {end}"
        )));
    }
    let days = (end - start).num_days() as usize + 1;
    let j = FirearmType::ALL.len();
    let mut counts = vec![0u32; days * j];
    let mut new_licenses = vec![0u32; days];
    let mut renewal_licenses = vec![0u32; days];
    let mut summary = AggregationSummary::default();
    for record in transactions {
        let delta = (record.date - start).num_days();
        if delta < 0 || delta as usize >= days {
            summary.transactions_out_of_range += 1;
            continue;
        }
        counts[delta as usize * j + record.firearm_type.index()] += 1;
        summary.transactions_in_range += 1;
    }
    for record in licenses {
        let delta = (record.issue_date - start).num_days();
        if delta < 0 || delta as usize >= days {
            summary.licenses_out_of_range += 1;
            continue;
        }
        match record.kind {
            LicenseKind::New => new_licenses[delta as usize] += 1,
            LicenseKind::Renewal => renewal_licenses[delta as usize] += 1,
        }
        summary.licenses_in_range += 1;
    }
    let panel = DailyPanel::new(
        start,
        FirearmType::ALL.iter().map(|t| t.name().to_string()).collect(),
        counts,
        new_licenses,
        renewal_licenses,
        offset,
    )?;
    Ok((panel, summary))
}
