//! Multi-step counterfactual prediction after a cutoff, with forward
//! bootstrap prediction intervals: coefficient draws from the asymptotic
//! normal, innovations resampled jointly from centered fitted residuals,
//! iterated through the lag structure.

use std::io::{Read, Write};

use chrono::{Days, NaiveDate};
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::{inverse_log_offset, log_offset, DailyPanel, ExogenousFuture};
use crate::design;
use crate::error::{Error, Result};
use crate::estimator::SurFit;
use crate::linalg;

const DRAWS_MAGIC: &[u8; 8] = b"CCFDRW01";

/// Empirical percentile bounds per forecast date and series.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionInterval {
    pub level: f64,
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
}

/// Counterfactual forecast: level-scale point paths plus the bootstrap draw
/// tensor the intervals are cut from.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastResult {
    pub series_names: Vec<String>,
    pub dates: Vec<NaiveDate>,
    /// Bootstrap-mean path, H x J.
    pub point_path: DMatrix<f64>,
    /// Deterministic recursion under the point estimates (no parameter or
    /// innovation noise), H x J. Exported for diagnostics.
    pub plugin_path: DMatrix<f64>,
    /// Row-major `[replicate][date][series]`, level scale.
    pub draws: Vec<f64>,
    pub b: usize,
    pub seed: u64,
    /// Intervals at the default 95% level.
    pub intervals: PredictionInterval,
}

impl ForecastResult {
    pub fn horizon(&self) -> usize {
        self.dates.len()
    }

    pub fn series_count(&self) -> usize {
        self.series_names.len()
    }

    pub fn draw(&self, b: usize, h: usize, j: usize) -> f64 {
        let (hh, jj) = (self.horizon(), self.series_count());
        self.draws[b * hh * jj + h * jj + j]
    }

    /// Percentile interval per (date, series) at `level`.
    pub fn interval(&self, level: f64) -> Result<PredictionInterval> {
        let h = self.horizon();
        let j = self.series_count();
        let mut lower = DMatrix::zeros(h, j);
        let mut upper = DMatrix::zeros(h, j);
        let mut buf = vec![0.0; self.b];
        for t in 0..h {
            for s in 0..j {
                for (b, slot) in buf.iter_mut().enumerate() {
                    *slot = self.draw(b, t, s);
                }
                let (lo, hi) = percentile_interval(&buf, level)?;
                lower[(t, s)] = lo;
                upper[(t, s)] = hi;
            }
        }
        Ok(PredictionInterval {
            level,
            lower,
            upper,
        })
    }

    /// Per-replicate cumulative sums over day offsets `[start_h, end_h]` for
    /// one series.
    pub fn cumulative_draws(&self, series: usize, start_h: usize, end_h: usize) -> Result<Vec<f64>> {
        if end_h >= self.horizon() || start_h > end_h {
            return Err(Error::invalid(format!(
                "window [{start_h}, {end_h}] outside horizon {}",
                self.horizon()
            )));
        }
        Ok((0..self.b)
            .map(|b| (start_h..=end_h).map(|t| self.draw(b, t, series)).sum())
            .collect())
    }

    /// Percentile interval of the cumulative sum over a window.
    pub fn cumulative_interval(
        &self,
        series: usize,
        start_h: usize,
        end_h: usize,
        level: f64,
    ) -> Result<(f64, f64)> {
        let sums = self.cumulative_draws(series, start_h, end_h)?;
        percentile_interval(&sums, level)
    }

    /// Persists the draw tensor: 8-byte magic, u32 version, u32 reserved,
    /// u64 B/H/J/seed, then B*H*J little-endian f64 in `[b][h][j]` order.
    pub fn write_draws<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DRAWS_MAGIC)?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&0u32.to_le_bytes())?;
        for v in [
            self.b as u64,
            self.horizon() as u64,
            self.series_count() as u64,
            self.seed,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.draws.len() * 8);
        for &v in &self.draws {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }
}

/// A persisted draw tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawsFile {
    pub b: usize,
    pub h: usize,
    pub j: usize,
    pub seed: u64,
    pub draws: Vec<f64>,
}

pub fn read_draws<R: Read>(mut r: R) -> Result<DrawsFile> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != DRAWS_MAGIC {
        return Err(Error::format("not a draws file (bad magic)"));
    }
    let mut word4 = [0u8; 4];
    r.read_exact(&mut word4)?;
    if u32::from_le_bytes(word4) != 1 {
        return Err(Error::format("unsupported draws file version"));
    }
    r.read_exact(&mut word4)?;
    let mut word8 = [0u8; 8];
    let mut header = [0u64; 4];
    for slot in header.iter_mut() {
        r.read_exact(&mut word8)?;
        *slot = u64::from_le_bytes(word8);
    }
    let [b, h, j, seed] = header;
    let n = (b * h * j) as usize;
    let mut draws = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut word8)?;
        draws.push(f64::from_le_bytes(word8));
    }
    Ok(DrawsFile {
        b: b as usize,
        h: h as usize,
        j: j as usize,
        seed,
        draws,
    })
}

/// Empirical percentile interval with symmetric tail trimming: with
/// k = ceil(((1-level)/2) * n), the bounds are the k-th smallest and k-th
/// largest values.
pub fn percentile_interval(values: &[f64], level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!(
            "interval level must lie in (0, 1), got {level}"
        )));
    }
    let n = values.len();
    if n < 2 {
        return Err(Error::invalid("need at least 2 values for an interval"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
    let alpha = (1.0 - level) / 2.0;
    // ceil with a guard against binary representation pushing an exact
    // integer boundary (e.g. 0.025 * 1000) up a rank.
    let raw = alpha * n as f64;
    let k = if (raw - raw.round()).abs() < 1e-9 {
        raw.round() as usize
    } else {
        raw.ceil() as usize
    }
    .max(1);
    let lower = sorted[k - 1];
    let upper = sorted[n - k];
    Ok((lower, upper))
}

/// Generates the counterfactual forecast for `horizon` days from `cutoff`.
///
/// The panel must be the pre-cutoff data the fit was estimated on (its last
/// day is the day before the cutoff), so observed post-cutoff outcomes cannot
/// leak into the forecast. License issuances over the horizon arrive through
/// `exogenous`; they stay valid as an instrument only while issuance is
/// driven by pre-cutoff applications.
pub fn forecast_counterfactual(
    fit: &SurFit,
    panel: &DailyPanel,
    cutoff: NaiveDate,
    horizon: usize,
    exogenous: &ExogenousFuture,
    b: usize,
    seed: u64,
) -> Result<ForecastResult> {
    if b < 2 {
        return Err(Error::invalid("bootstrap replication count must be >= 2"));
    }
    if horizon == 0 {
        return Err(Error::invalid("horizon must be >= 1"));
    }
    if exogenous.new_licenses.len() < horizon || exogenous.renewal_licenses.len() < horizon {
        return Err(Error::invalid(format!(
            "horizon {horizon} exceeds exogenous license coverage ({} days)",
            exogenous.new_licenses.len().min(exogenous.renewal_licenses.len())
        )));
    }
    if panel.end_date() + Days::new(1) != cutoff {
        return Err(Error::invalid(format!(
            "panel must end the day before the cutoff (panel ends {}, cutoff {cutoff})",
            panel.end_date()
        )));
    }
    let spec = &fit.spec;
    spec.validate()?;
    let j = fit.equations();
    if j != panel.series_count() {
        return Err(Error::invalid("fit and panel series counts differ"));
    }
    let lay = design::layout(spec);
    for c in &fit.coefficients {
        if c.len() != lay.width {
            return Err(Error::invalid(
                "fit coefficients do not match the specification layout",
            ));
        }
    }
    let max_lag = spec.max_lag();
    if fit.usable_len() + max_lag != panel.len() || fit.first_date != panel.date_at(max_lag) {
        return Err(Error::invalid(
            "fit was not estimated on this panel (usable range mismatch)",
        ));
    }

    let t_len = panel.len();
    let offset = panel.offset();

    // Shared histories: observed panel logs, exogenous license logs appended.
    let mut base_hist: Vec<Vec<f64>> = Vec::with_capacity(j);
    for s in 0..j {
        let mut hist = panel.log_series(s)?.values().to_vec();
        hist.resize(t_len + horizon, 0.0);
        base_hist.push(hist);
    }
    let mut new_log = panel.log_new_licenses()?.values().to_vec();
    let mut renew_log = panel.log_renewal_licenses()?.values().to_vec();
    for t in 0..horizon {
        new_log.push(log_offset(exogenous.new_licenses[t] as f64, offset)?);
        renew_log.push(log_offset(exogenous.renewal_licenses[t] as f64, offset)?);
    }

    let dates: Vec<NaiveDate> = (0..horizon).map(|t| cutoff + Days::new(t as u64)).collect();

    // Plug-in path: deterministic recursion under the point estimates.
    let mut plugin_path = DMatrix::zeros(horizon, j);
    {
        let mut hist = base_hist.clone();
        let mut row = vec![0.0; lay.width];
        for t in 0..horizon {
            for s in 0..j {
                design::fill_row(
                    &mut row,
                    spec,
                    &lay,
                    &hist[s],
                    &new_log,
                    &renew_log,
                    t_len + t,
                    dates[t],
                    (t_len + t) as i64,
                    t_len,
                );
                let mean: f64 = row
                    .iter()
                    .zip(fit.coefficients[s].iter())
                    .map(|(x, c)| x * c)
                    .sum();
                hist[s][t_len + t] = mean;
                plugin_path[(t, s)] = inverse_log_offset(mean, offset);
            }
        }
    }

    // Centered fitted residuals, resampled jointly by time index.
    let usable = fit.usable_len();
    let mut centered = fit.residuals.clone();
    for s in 0..j {
        let mean = centered.column(s).sum() / usable as f64;
        for r in 0..usable {
            centered[(r, s)] -= mean;
        }
    }
    let coef_factor = linalg::psd_factor(&fit.coef_covariance);
    let theta_hat = fit.stacked_coefficients();
    let offsets = fit.block_offsets();
    let total = fit.stacked_len();

    let mut draws = vec![0.0; b * horizon * j];
    draws
        .par_chunks_mut(horizon * j)
        .enumerate()
        .for_each(|(rep, chunk)| {
            // Order-free substream: one ChaCha stream per replicate.
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64 + 1);
            let z = DVector::from_fn(total, |_, _| rng.sample::<f64, _>(StandardNormal));
            let theta = &theta_hat + &coef_factor * z;
            let mut hist = base_hist.clone();
            let mut row = vec![0.0; lay.width];
            for t in 0..horizon {
                let u = rng.random_range(0..usable);
                for s in 0..j {
                    design::fill_row(
                        &mut row,
                        spec,
                        &lay,
                        &hist[s],
                        &new_log,
                        &renew_log,
                        t_len + t,
                        dates[t],
                        (t_len + t) as i64,
                        t_len,
                    );
                    let block = theta.rows(offsets[s], fit.coefficients[s].len());
                    let mean: f64 = row.iter().zip(block.iter()).map(|(x, c)| x * c).sum();
                    let value = mean + centered[(u, s)];
                    hist[s][t_len + t] = value;
                    chunk[t * j + s] = inverse_log_offset(value, offset);
                }
            }
        });

    let mut point_path = DMatrix::zeros(horizon, j);
    for rep in 0..b {
        for t in 0..horizon {
            for s in 0..j {
                point_path[(t, s)] += draws[rep * horizon * j + t * j + s];
            }
        }
    }
    point_path /= b as f64;

    let mut result = ForecastResult {
        series_names: fit.series_names.clone(),
        dates,
        point_path,
        plugin_path,
        draws,
        b,
        seed,
        intervals: PredictionInterval {
            level: 0.95,
            lower: DMatrix::zeros(0, 0),
            upper: DMatrix::zeros(0, 0),
        },
    };
    result.intervals = result.interval(0.95)?;
    Ok(result)
}
