//! Power/weather time series: CSV ingest, validation, resampling, and
//! calendar features.
//!
//! The canonical wire format is a two-column CSV `timestamp,value` with UTC
//! integer-second timestamps and megawatt values. Timestamps must be strictly
//! increasing; the inferred resolution of a freshly loaded trace is the
//! minimum observed gap.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: timestamps must be strictly increasing")]
    NonIncreasing { line: usize },
    #[error("line {line}: negative value")]
    NegativeValue { line: usize },
    #[error("line {line}: negative timestamp")]
    NegativeTimestamp { line: usize },
    #[error("trace has no samples")]
    Empty,
    #[error("resolution must be a positive whole number of seconds")]
    BadResolution,
    #[error("gap of {missing_bins} bins in [{from}, {to}] exceeds the 3-bin interpolation limit")]
    Gap { from: i64, to: i64, missing_bins: usize },
    #[error("traces are not aligned (resolution or timestamps differ)")]
    Misaligned,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    /// Megawatts.
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    RenewableGeneration,
    Demand,
}

/// An ordered power series with a declared bin width.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyTrace {
    samples: Vec<TraceSample>,
    resolution: u64,
    kind: TraceKind,
}

impl EnergyTrace {
    /// Wraps pre-validated samples. Timestamps must be strictly increasing
    /// and non-negative, values non-negative, resolution positive.
    pub fn new(samples: Vec<TraceSample>, resolution: u64, kind: TraceKind) -> Result<Self, TraceError> {
        if resolution == 0 {
            return Err(TraceError::BadResolution);
        }
        if samples.is_empty() {
            return Err(TraceError::Empty);
        }
        for (i, pair) in samples.windows(2).enumerate() {
            if pair[1].timestamp <= pair[0].timestamp {
                return Err(TraceError::NonIncreasing { line: i + 2 });
            }
        }
        for (i, s) in samples.iter().enumerate() {
            if s.value < 0.0 {
                return Err(TraceError::NegativeValue { line: i + 1 });
            }
            if s.timestamp < 0 {
                return Err(TraceError::NegativeTimestamp { line: i + 1 });
            }
        }
        Ok(Self { samples, resolution, kind })
    }

    pub fn samples(&self) -> &[TraceSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn resolution(&self) -> u64 {
        self.resolution
    }

    pub fn kind(&self) -> TraceKind {
        self.kind
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.value)
    }

    /// True when both traces share resolution and timestamps pointwise.
    pub fn aligned_with(&self, other: &EnergyTrace) -> bool {
        self.resolution == other.resolution
            && self.len() == other.len()
            && self
                .samples
                .iter()
                .zip(&other.samples)
                .all(|(a, b)| a.timestamp == b.timestamp)
    }

    /// Sum of value*resolution over all samples, in MW*s.
    pub fn total_energy(&self) -> f64 {
        self.samples.iter().map(|s| s.value).sum::<f64>() * self.resolution as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp,value\n");
        for s in &self.samples {
            out.push_str(&format!("{},{}\n", s.timestamp, s.value));
        }
        out
    }
}

/// Parses the canonical `timestamp,value` CSV. The trace keeps the original
/// (possibly irregular) timestamps; resolution is the minimum observed gap,
/// or 1 s for a single-sample trace.
pub fn load_trace(csv: &str, kind: TraceKind) -> Result<EnergyTrace, TraceError> {
    let mut lines = csv.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "timestamp,value" => {}
        Some((_, header)) => {
            return Err(TraceError::Parse {
                line: 1,
                reason: format!("expected header `timestamp,value`, got `{}`", header.trim()),
            })
        }
        None => return Err(TraceError::Empty),
    }

    let mut samples: Vec<TraceSample> = Vec::new();
    let mut min_gap = u64::MAX;
    for (idx, raw) in lines {
        let line = idx + 1;
        let row = raw.trim();
        if row.is_empty() {
            continue;
        }
        let (ts_str, val_str) = row.split_once(',').ok_or_else(|| TraceError::Parse {
            line,
            reason: "expected two comma-separated fields".into(),
        })?;
        let timestamp: i64 = ts_str.trim().parse().map_err(|e| TraceError::Parse {
            line,
            reason: format!("bad timestamp `{}`: {e}", ts_str.trim()),
        })?;
        let value: f64 = val_str.trim().parse().map_err(|e| TraceError::Parse {
            line,
            reason: format!("bad value `{}`: {e}", val_str.trim()),
        })?;
        if timestamp < 0 {
            return Err(TraceError::NegativeTimestamp { line });
        }
        if value < 0.0 || !value.is_finite() {
            return Err(TraceError::NegativeValue { line });
        }
        if let Some(prev) = samples.last() {
            if timestamp <= prev.timestamp {
                return Err(TraceError::NonIncreasing { line });
            }
            min_gap = min_gap.min((timestamp - prev.timestamp) as u64);
        }
        samples.push(TraceSample { timestamp, value });
    }
    if samples.is_empty() {
        return Err(TraceError::Empty);
    }
    let resolution = if min_gap == u64::MAX { 1 } else { min_gap };
    EnergyTrace::new(samples, resolution, kind)
}

/// Rebins a trace to `target_resolution`. Bins are anchored at the first
/// sample's timestamp and aggregated by mean. A run of up to 3 empty bins is
/// filled by linear interpolation between its neighbours; longer runs are an
/// error. When the source resolution divides the target, a partially covered
/// trailing bin is pro-rated (absent tail counted as zero) so that total
/// energy is preserved exactly.
pub fn resample(trace: &EnergyTrace, target_resolution: u64) -> Result<EnergyTrace, TraceError> {
    if target_resolution == 0 {
        return Err(TraceError::BadResolution);
    }
    let src = trace.samples();
    let base = src[0].timestamp;
    let span = (src[src.len() - 1].timestamp - base) as u64;
    let nbins = (span / target_resolution + 1) as usize;

    let mut sums = vec![0.0f64; nbins];
    let mut counts = vec![0u32; nbins];
    for s in src {
        let bin = ((s.timestamp - base) as u64 / target_resolution) as usize;
        sums[bin] += s.value;
        counts[bin] += 1;
    }

    let expected = if target_resolution.is_multiple_of(trace.resolution()) {
        (target_resolution / trace.resolution()) as u32
    } else {
        0
    };

    let mut values: Vec<Option<f64>> = sums
        .iter()
        .zip(&counts)
        .enumerate()
        .map(|(i, (&sum, &count))| {
            if count == 0 {
                None
            } else if expected > 1 && i == nbins - 1 && count < expected {
                Some(sum / expected as f64)
            } else {
                Some(sum / count as f64)
            }
        })
        .collect();

    // Fill gaps of at most 3 consecutive empty bins by linear interpolation.
    let mut i = 0;
    while i < values.len() {
        if values[i].is_some() {
            i += 1;
            continue;
        }
        let start = i;
        while i < values.len() && values[i].is_none() {
            i += 1;
        }
        let missing = i - start;
        // The first and last bins always contain a sample, so a run of empty
        // bins is interior and has neighbours on both sides.
        if missing > 3 {
            return Err(TraceError::Gap {
                from: base + start as i64 * target_resolution as i64,
                to: base + (i as i64 - 1) * target_resolution as i64,
                missing_bins: missing,
            });
        }
        let left = values[start - 1].unwrap();
        let right = values[i].unwrap();
        for (j, slot) in values[start..i].iter_mut().enumerate() {
            let frac = (j + 1) as f64 / (missing + 1) as f64;
            *slot = Some(left + (right - left) * frac);
        }
    }

    let samples = values
        .into_iter()
        .enumerate()
        .map(|(k, v)| TraceSample {
            timestamp: base + k as i64 * target_resolution as i64,
            value: v.expect("all gaps filled"),
        })
        .collect();
    EnergyTrace::new(samples, target_resolution, trace.kind())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalendarFeatures {
    pub hour_sin: f64,
    pub hour_cos: f64,
    /// 0 = Monday .. 6 = Sunday.
    pub day_of_week: u8,
    /// 1..=12.
    pub month: u8,
    pub is_weekend: bool,
}

/// Civil month from a day count since 1970-01-01 (proleptic Gregorian).
fn month_from_days(days: i64) -> u8 {
    // Shift epoch to 0000-03-01 so leap days land at the end of the year.
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = (z - era * 146_097) as u64;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let month = if mp < 10 { mp + 3 } else { mp - 9 };
    month as u8
}

/// Calendar inputs for the forecaster, derived from a UTC timestamp.
pub fn calendar_features(timestamp: i64) -> CalendarFeatures {
    let seconds_of_day = timestamp.rem_euclid(86_400) as f64;
    let hour = seconds_of_day / 3600.0;
    let angle = 2.0 * std::f64::consts::PI * hour / 24.0;
    let days = timestamp.div_euclid(86_400);
    // 1970-01-01 was a Thursday; Monday = 0.
    let day_of_week = (days + 3).rem_euclid(7) as u8;
    CalendarFeatures {
        hour_sin: angle.sin(),
        hour_cos: angle.cos(),
        day_of_week,
        month: month_from_days(days),
        is_weekend: day_of_week >= 5,
    }
}
