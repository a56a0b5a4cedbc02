//! Level-1 quote ingestion.
//!
//! Quotes are reduced to log mid-quote revisions: a record survives only if
//! its mid differs from the previous surviving mid of the same asset. The
//! trading day `[open, close]` is mapped affinely onto `[0, 1]`.
//!
//! Two CSV layouts are accepted, distinguished by header:
//!
//! ```text
//! asset_id,timestamp,bid,ask
//! asset_id,timestamp,price
//! ```
//!
//! Timestamps are either integer nanoseconds or ISO-8601 date-times; the
//! format is detected from the first data row and must not change.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::data::{ObservationSeries, Panel};
use crate::error::{Error, Result};

const NANOS_PER_DAY: i64 = 86_400_000_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct QuoteRecord {
    pub asset_id: String,
    /// Nanoseconds since the Unix epoch (or any fixed origin).
    pub timestamp: i64,
    pub bid: f64,
    pub ask: f64,
}

impl QuoteRecord {
    pub fn new(asset_id: impl Into<String>, timestamp: i64, bid: f64, ask: f64) -> Self {
        Self {
            asset_id: asset_id.into(),
            timestamp,
            bid,
            ask,
        }
    }

    /// A record whose mid is already known.
    pub fn from_price(asset_id: impl Into<String>, timestamp: i64, price: f64) -> Self {
        Self::new(asset_id, timestamp, price, price)
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.bid + self.ask)
    }
}

/// The trading session that is rescaled to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayWindow {
    pub open: i64,
    pub close: i64,
}

impl DayWindow {
    pub fn new(open: i64, close: i64) -> Result<Self> {
        if close <= open {
            return Err(Error::Input(format!(
                "day window close ({close}) must be after open ({open})"
            )));
        }
        Ok(Self { open, close })
    }

    /// The span of the records' timestamps.
    pub fn spanning(records: &[QuoteRecord]) -> Result<Self> {
        let open = records.iter().map(|r| r.timestamp).min();
        let close = records.iter().map(|r| r.timestamp).max();
        match (open, close) {
            (Some(o), Some(c)) => Self::new(o, c),
            _ => Err(Error::Input("no records".into())),
        }
    }

    pub fn to_unit(&self, ts: i64) -> f64 {
        (ts - self.open) as f64 / (self.close - self.open) as f64
    }

    pub fn from_unit(&self, t: f64) -> i64 {
        self.open + (t * (self.close - self.open) as f64).round() as i64
    }

    pub fn contains(&self, ts: i64) -> bool {
        (self.open..=self.close).contains(&ts)
    }
}

/// Per-asset bookkeeping of what ingestion discarded.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetIngestStats {
    pub asset_id: String,
    pub records: usize,
    pub crossed: usize,
    pub invalid_price: usize,
    pub out_of_window: usize,
    /// Records superseded by a later record with the same timestamp.
    pub same_timestamp: usize,
    /// Records whose mid equals the previous surviving mid.
    pub unchanged_mid: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub assets: Vec<AssetIngestStats>,
}

impl IngestReport {
    pub fn total_crossed(&self) -> usize {
        self.assets.iter().map(|a| a.crossed).sum()
    }
}

impl fmt::Display for IngestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in &self.assets {
            writeln!(
                f,
                "{}: {} records, {} kept ({} crossed, {} invalid, {} outside window, {} same-timestamp, {} unchanged mid)",
                a.asset_id,
                a.records,
                a.kept,
                a.crossed,
                a.invalid_price,
                a.out_of_window,
                a.same_timestamp,
                a.unchanged_mid
            )?;
        }
        Ok(())
    }
}

/// Builds a [`Panel`] of log mid-quote revisions. Assets appear in order of
/// first occurrence.
pub fn ingest_quotes(records: &[QuoteRecord], window: DayWindow) -> Result<(Panel, IngestReport)> {
    let mut order: Vec<&str> = Vec::new();
    let mut by_asset: HashMap<&str, Vec<&QuoteRecord>> = HashMap::new();
    for r in records {
        by_asset
            .entry(r.asset_id.as_str())
            .or_insert_with(|| {
                order.push(r.asset_id.as_str());
                Vec::new()
            })
            .push(r);
    }
    if order.is_empty() {
        return Err(Error::Input("no quote records".into()));
    }

    let mut report = IngestReport::default();
    let mut series = Vec::with_capacity(order.len());
    for asset in order {
        let mut stats = AssetIngestStats {
            asset_id: asset.to_string(),
            ..Default::default()
        };
        let mut valid: Vec<(i64, f64)> = Vec::new();
        for r in &by_asset[asset] {
            stats.records += 1;
            if r.bid > r.ask {
                stats.crossed += 1;
                continue;
            }
            let mid = r.mid();
            if !(mid > 0.0 && mid.is_finite()) {
                stats.invalid_price += 1;
                continue;
            }
            if !window.contains(r.timestamp) {
                stats.out_of_window += 1;
                continue;
            }
            valid.push((r.timestamp, mid));
        }
        valid.sort_by_key(|&(ts, _)| ts);

        let mut times = Vec::with_capacity(valid.len());
        let mut log_prices = Vec::with_capacity(valid.len());
        let mut last_mid: Option<f64> = None;
        let mut i = 0;
        while i < valid.len() {
            // last record of a run with equal timestamps is the prevailing quote
            let mut j = i;
            while j + 1 < valid.len() && valid[j + 1].0 == valid[i].0 {
                j += 1;
            }
            stats.same_timestamp += j - i;
            let (ts, mid) = valid[j];
            if last_mid == Some(mid) {
                stats.unchanged_mid += 1;
            } else {
                times.push(window.to_unit(ts));
                log_prices.push(mid.ln());
                last_mid = Some(mid);
            }
            i = j + 1;
        }
        stats.kept = times.len();
        if times.len() < 2 {
            return Err(Error::EmptyAsset {
                asset: asset.to_string(),
                count: times.len(),
            });
        }
        series.push(ObservationSeries::new(asset, times, log_prices)?);
        report.assets.push(stats);
    }
    Ok((Panel::new(series)?, report))
}

/// Renders a panel back into price records on the given day window.
pub fn panel_to_records(panel: &Panel, window: DayWindow) -> Vec<QuoteRecord> {
    panel
        .series()
        .iter()
        .flat_map(|s| {
            s.times()
                .iter()
                .zip(s.log_prices())
                .map(move |(&t, &y)| QuoteRecord::from_price(&s.asset_id, window.from_unit(t), y.exp()))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TimeFormat {
    Nanos,
    Iso,
}

fn detect_format(s: &str) -> TimeFormat {
    let s = s.trim();
    let digits = s.strip_prefix('-').unwrap_or(s);
    if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
        TimeFormat::Nanos
    } else {
        TimeFormat::Iso
    }
}

fn parse_iso(s: &str) -> Option<i64> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return dt.timestamp_nanos_opt();
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return dt.and_utc().timestamp_nanos_opt();
        }
    }
    None
}

/// Parses an integer-nanosecond or ISO-8601 timestamp.
pub fn parse_timestamp(s: &str) -> Result<i64> {
    let s = s.trim();
    match detect_format(s) {
        TimeFormat::Nanos => s
            .parse::<i64>()
            .map_err(|e| Error::Input(format!("bad timestamp `{s}`: {e}"))),
        TimeFormat::Iso => parse_iso(s).ok_or_else(|| Error::Input(format!("bad timestamp `{s}`"))),
    }
}

/// Parses a session bound: a full timestamp, or a time of day `HH:MM[:SS[.f]]`
/// taken on the calendar day containing `reference`.
pub fn parse_session_bound(s: &str, reference: i64) -> Result<i64> {
    let s = s.trim();
    for fmt in ["%H:%M:%S%.f", "%H:%M"] {
        if let Ok(t) = NaiveTime::parse_from_str(s, fmt) {
            let since_midnight = t
                .signed_duration_since(NaiveTime::MIN)
                .num_nanoseconds()
                .unwrap_or(0);
            return Ok(reference.div_euclid(NANOS_PER_DAY) * NANOS_PER_DAY + since_midnight);
        }
    }
    parse_timestamp(s)
}

/// Reads quote records from CSV in either accepted layout.
pub fn read_quotes_csv<R: Read>(reader: R) -> Result<Vec<QuoteRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Input(format!("unreadable CSV header: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (asset, ts) = match (col("asset_id"), col("timestamp")) {
        (Some(a), Some(t)) => (a, t),
        _ => {
            return Err(Error::Input(
                "CSV header must contain asset_id and timestamp".into(),
            ))
        }
    };
    enum Layout {
        Quotes(usize, usize),
        Price(usize),
    }
    let layout = match (col("bid"), col("ask"), col("price")) {
        (Some(b), Some(a), _) => Layout::Quotes(b, a),
        (_, _, Some(p)) => Layout::Price(p),
        _ => {
            return Err(Error::Input(
                "CSV header must contain bid,ask or price".into(),
            ))
        }
    };

    let mut format: Option<TimeFormat> = None;
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Input(format!("CSV row {}: {e}", line + 2)))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let ts_raw = field(ts);
        let this = detect_format(ts_raw);
        if *format.get_or_insert(this) != this {
            return Err(Error::Input(format!(
                "CSV row {}: timestamp format changes within the file",
                line + 2
            )));
        }
        let timestamp = parse_timestamp(ts_raw)?;
        let num = |i: usize| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .map_err(|e| Error::Input(format!("CSV row {}: `{}`: {e}", line + 2, field(i))))
        };
        let record = match layout {
            Layout::Quotes(b, a) => QuoteRecord::new(field(asset), timestamp, num(b)?, num(a)?),
            Layout::Price(p) => QuoteRecord::from_price(field(asset), timestamp, num(p)?),
        };
        out.push(record);
    }
    Ok(out)
}

/// Writes records in the single-price layout with nanosecond timestamps.
pub fn write_prices_csv<W: Write>(writer: W, records: &[QuoteRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Input(format!("CSV write failed: {e}"));
    w.write_record(["asset_id", "timestamp", "price"]).map_err(io)?;
    for r in records {
        w.write_record([
            r.asset_id.clone(),
            r.timestamp.to_string(),
            format!("{:e}", r.mid()),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Input(format!("CSV write failed: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window() -> DayWindow {
        DayWindow::new(0, 1_000).unwrap()
    }

    #[test]
    fn duplicate_mids_keep_first() {
        let recs = vec![
            QuoteRecord::new("A", 100, 10.0, 10.2),
            QuoteRecord::new("A", 200, 10.0, 10.2),
            QuoteRecord::new("A", 300, 10.1, 10.3),
        ];
        let (panel, report) = ingest_quotes(&recs, window()).unwrap();
        let s = &panel.series()[0];
        assert_eq!(s.times(), &[0.1, 0.3]);
        assert_eq!(report.assets[0].unchanged_mid, 1);
    }

    #[test]
    fn mid_quote_at_open() {
        let recs = vec![
            QuoteRecord::new("A", 0, 100.0, 101.0),
            QuoteRecord::new("A", 1_000, 100.0, 102.0),
        ];
        let (panel, _) = ingest_quotes(&recs, window()).unwrap();
        let s = &panel.series()[0];
        assert_eq!(s.times()[0], 0.0);
        assert_eq!(s.log_prices()[0], 100.5f64.ln());
        assert_eq!(s.times()[1], 1.0);
    }

    #[test]
    fn sparse_revisions_feed() {
        // 1000 quotes with 129 mid changes: 87% of mid returns are zero
        let mut recs = Vec::new();
        let mut mid = 50.0;
        for i in 0..1000i64 {
            if i > 0 && i % 7 == 0 && i / 7 <= 129 {
                mid += 0.01;
            }
            recs.push(QuoteRecord::new("A", i, mid - 0.005, mid + 0.005));
        }
        let w = DayWindow::new(0, 999).unwrap();
        let (panel, report) = ingest_quotes(&recs, w).unwrap();
        assert_eq!(panel.series()[0].len(), 130);
        assert_eq!(report.assets[0].unchanged_mid, 870);
    }

    #[test]
    fn crossed_quotes_are_skipped_and_counted() {
        let recs = vec![
            QuoteRecord::new("A", 0, 10.0, 10.1),
            QuoteRecord::new("A", 10, 10.5, 10.1),
            QuoteRecord::new("A", 20, 10.2, 10.3),
        ];
        let (panel, report) = ingest_quotes(&recs, window()).unwrap();
        assert_eq!(panel.series()[0].len(), 2);
        assert_eq!(report.total_crossed(), 1);
    }

    #[test]
    fn empty_asset_is_named() {
        let recs = vec![
            QuoteRecord::new("A", 0, 10.0, 10.1),
            QuoteRecord::new("A", 10, 10.2, 10.3),
            QuoteRecord::new("B", 5, 11.0, 10.0),
            QuoteRecord::new("B", 6, 11.0, 11.0),
        ];
        match ingest_quotes(&recs, window()) {
            Err(Error::EmptyAsset { asset, count }) => {
                assert_eq!(asset, "B");
                assert_eq!(count, 1);
            }
            other => panic!("expected EmptyAsset, got {other:?}"),
        }
    }

    #[test]
    fn out_of_order_records_are_sorted_and_same_timestamps_collapse() {
        let recs = vec![
            QuoteRecord::new("A", 500, 10.2, 10.2),
            QuoteRecord::new("A", 100, 10.0, 10.0),
            QuoteRecord::new("A", 100, 10.1, 10.1),
            QuoteRecord::new("A", 2_000, 10.3, 10.3),
        ];
        let (panel, report) = ingest_quotes(&recs, window()).unwrap();
        let s = &panel.series()[0];
        assert_eq!(s.times(), &[0.1, 0.5]);
        assert_eq!(s.log_prices()[0], 10.1f64.ln());
        assert_eq!(report.assets[0].same_timestamp, 1);
        assert_eq!(report.assets[0].out_of_window, 1);
    }

    #[test]
    fn ingestion_is_idempotent() {
        let mut recs = Vec::new();
        for (k, asset) in ["X", "Y"].iter().enumerate() {
            let mut p = 20.0 + k as f64;
            for i in 0..400i64 {
                p *= 1.0 + 0.001 * (((i * 7919 + k as i64 * 31) % 13) as f64 - 6.0);
                recs.push(QuoteRecord::new(*asset, 1_700_000_000_000_000_000 + i * 61_000_000_000, p - 0.01, p + 0.01));
            }
        }
        let w = DayWindow::spanning(&recs).unwrap();
        let (first, _) = ingest_quotes(&recs, w).unwrap();
        let (second, _) = ingest_quotes(&panel_to_records(&first, w), w).unwrap();
        assert_eq!(first.dim(), second.dim());
        for (a, b) in first.series().iter().zip(second.series()) {
            assert_eq!(a.asset_id, b.asset_id);
            assert_eq!(a.len(), b.len());
            for (x, y) in a.times().iter().zip(b.times()) {
                assert!((x - y).abs() < 1e-12);
            }
            for (x, y) in a.log_prices().iter().zip(b.log_prices()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn csv_layouts_and_timestamp_formats() {
        let quotes = "asset_id,timestamp,bid,ask\nA,2024-03-01T09:30:00.000,10,10.2\nA,2024-03-01T09:30:01.500,10.1,10.3\n";
        let recs = read_quotes_csv(quotes.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].timestamp - recs[0].timestamp, 1_500_000_000);

        let prices = "asset_id,timestamp,price\nB,1000,5.5\nB,2000,5.6\n";
        let recs = read_quotes_csv(prices.as_bytes()).unwrap();
        assert_eq!(recs[0].timestamp, 1000);
        assert_eq!(recs[1].mid(), 5.6);

        let mixed = "asset_id,timestamp,price\nB,1000,5.5\nB,2024-03-01T09:30:00,5.6\n";
        assert!(read_quotes_csv(mixed.as_bytes()).is_err());
    }

    #[test]
    fn session_bounds_from_time_of_day() {
        let reference = parse_timestamp("2024-03-01T12:00:00").unwrap();
        let open = parse_session_bound("09:30", reference).unwrap();
        assert_eq!(open, parse_timestamp("2024-03-01T09:30:00").unwrap());
        assert_eq!(parse_session_bound("12345", reference).unwrap(), 12345);
    }
}
