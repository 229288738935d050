//! Per-request SLO metrics, aggregate attainment, and report files.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::domain::{Request, SimTime, SloConfig};
use crate::engine::ClusterConfig;
use crate::error::Result;

/// Time to first token and whether it meets the target (inclusive).
pub fn ttft_metric(r: &Request, slo: &SloConfig) -> (SimTime, bool) {
    let v = r.ttft().expect("TTFT of a request without a first token");
    (v, v <= slo.ttft_slo)
}

/// Mean inter-token latency in microseconds and whether it meets the target.
/// Single-token requests trivially meet it.
pub fn tpot_metric(r: &Request, slo: &SloConfig) -> (f64, bool) {
    if r.output_len <= 1 {
        return (0.0, true);
    }
    let (first, last) = first_last(r);
    let span = (last - first).as_micros();
    let gaps = r.output_len - 1;
    let met = span as u128 <= slo.tpot_slo.as_micros() as u128 * gaps as u128;
    (span as f64 / gaps as f64, met)
}

fn first_last(r: &Request) -> (SimTime, SimTime) {
    let first = r.t_first_token.expect("request without a first token");
    let last = *r.token_timestamps.last().expect("request without tokens");
    (first, last)
}

/// Decode tokens per second; `None` for single-token requests.
pub fn decode_throughput(r: &Request) -> Option<f64> {
    if r.output_len < 2 {
        return None;
    }
    let (first, last) = first_last(r);
    Some((r.output_len - 1) as f64 / (last - first).as_secs_f64())
}

/// Tokens produced after their per-token deadline `first + k * TPOT`.
pub fn deadline_misses(r: &Request, slo: &SloConfig) -> u64 {
    let Some(first) = r.t_first_token else { return 0 };
    let tpot = slo.tpot_slo.as_micros();
    r.token_timestamps
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(k, t)| t.as_micros() > first.as_micros() + *k as u64 * tpot)
        .count() as u64
}

/// Time from arrival until the first prefill chunk started.
pub fn queue_wait(r: &Request) -> Option<SimTime> {
    r.t_prefill_start.map(|t| t - r.arrival_time)
}

/// One row of the per-request CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestMetrics {
    pub id: String,
    pub ttft_us: u64,
    pub mean_tpot_us: f64,
    pub decode_tps: Option<f64>,
    pub ttft_met: bool,
    pub tpot_met: bool,
    pub e2e_met: bool,
    pub deadline_misses: u64,
    #[serde(skip)]
    pub queue_wait_us: Option<u64>,
}

impl RequestMetrics {
    pub fn of(r: &Request, slo: &SloConfig) -> Self {
        let (ttft, ttft_met) = ttft_metric(r, slo);
        let (tpot, tpot_met) = tpot_metric(r, slo);
        RequestMetrics {
            id: r.label.clone(),
            ttft_us: ttft.as_micros(),
            mean_tpot_us: tpot,
            decode_tps: decode_throughput(r),
            ttft_met,
            tpot_met,
            e2e_met: ttft_met && tpot_met,
            deadline_misses: deadline_misses(r, slo),
            queue_wait_us: queue_wait(r).map(SimTime::as_micros),
        }
    }
}

/// Aggregate figures for one simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub n_requests: usize,
    /// Set when there were no requests; attainments are then 1.0 by
    /// convention and percentiles are absent.
    pub empty: bool,
    pub ttft_attainment: f64,
    pub tpot_attainment: f64,
    pub e2e_attainment: f64,
    pub decode_tps_p50: Option<f64>,
    pub decode_tps_p90: Option<f64>,
    pub worst_queue_wait_us: Option<u64>,
    pub total_deadline_misses: u64,
    pub seed: u64,
    pub config: Option<ClusterConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub summary: ReportSummary,
    /// Sorted by request order (arrival, then id).
    pub rows: Vec<RequestMetrics>,
}

/// Nearest-rank percentile of an ascending slice, `p` in (0, 100].
pub fn nearest_rank(sorted: &[f64], p: u32) -> Option<f64> {
    assert!((1..=100).contains(&p), "percentile must be in 1..=100");
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    let rank = (p as usize * n).div_ceil(100).max(1);
    Some(sorted[rank - 1])
}

fn fraction(count: usize, n: usize) -> f64 {
    if n == 0 {
        1.0
    } else {
        count as f64 / n as f64
    }
}

/// Folds rows into a report. Rows are kept in the given order.
pub fn aggregate(rows: Vec<RequestMetrics>, seed: u64, config: Option<ClusterConfig>) -> MetricsReport {
    let n = rows.len();
    let mut tps: Vec<f64> = rows.iter().filter_map(|r| r.decode_tps).collect();
    tps.sort_by(f64::total_cmp);
    let summary = ReportSummary {
        n_requests: n,
        empty: n == 0,
        ttft_attainment: fraction(rows.iter().filter(|r| r.ttft_met).count(), n),
        tpot_attainment: fraction(rows.iter().filter(|r| r.tpot_met).count(), n),
        e2e_attainment: fraction(rows.iter().filter(|r| r.e2e_met).count(), n),
        decode_tps_p50: nearest_rank(&tps, 50),
        decode_tps_p90: nearest_rank(&tps, 90),
        worst_queue_wait_us: rows.iter().filter_map(|r| r.queue_wait_us).max(),
        total_deadline_misses: rows.iter().map(|r| r.deadline_misses).sum(),
        seed,
        config,
    };
    MetricsReport { summary, rows }
}

/// Builds a report from finished requests, ordered by request id.
pub fn report_from_requests(
    requests: &[Request],
    slo: &SloConfig,
    seed: u64,
    config: Option<ClusterConfig>,
) -> MetricsReport {
    let mut sorted: Vec<&Request> = requests.iter().collect();
    sorted.sort_by_key(|r| r.id);
    let rows = sorted.into_iter().map(|r| RequestMetrics::of(r, slo)).collect();
    aggregate(rows, seed, config)
}

pub const REQUEST_CSV_HEADER: [&str; 8] = [
    "id",
    "ttft_us",
    "mean_tpot_us",
    "decode_tps",
    "ttft_met",
    "tpot_met",
    "e2e_met",
    "deadline_misses",
];

pub fn write_requests_csv(out: impl Write, rows: &[RequestMetrics]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(REQUEST_CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_requests_csv(input: impl std::io::Read) -> Result<Vec<RequestMetrics>> {
    let mut rdr = csv::Reader::from_reader(input);
    rdr.deserialize().map(|r| r.map_err(csv_err)).collect()
}

/// One line of a QPS sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub qps: f64,
    pub policy_pair: String,
    pub ttft_att: f64,
    pub tpot_att: f64,
    pub e2e_att: f64,
    pub decode_tps_p50: Option<f64>,
}

pub const SWEEP_CSV_HEADER: [&str; 6] = [
    "qps",
    "policy_pair",
    "ttft_att",
    "tpot_att",
    "e2e_att",
    "decode_tps_p50",
];

impl SweepRow {
    pub fn new(qps: f64, policy_pair: impl Into<String>, s: &ReportSummary) -> Self {
        SweepRow {
            qps,
            policy_pair: policy_pair.into(),
            ttft_att: s.ttft_attainment,
            tpot_att: s.tpot_attainment,
            e2e_att: s.e2e_attainment,
            decode_tps_p50: s.decode_tps_p50,
        }
    }
}

pub fn write_sweep_csv(out: impl Write, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(SWEEP_CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a sweep CSV, insisting on the exact header.
pub fn read_sweep_csv(input: impl std::io::Read) -> Result<Vec<SweepRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.iter().ne(SWEEP_CSV_HEADER) {
        return Err(crate::error::SimError::config(format!(
            "unexpected sweep CSV header {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    rdr.deserialize().map(|r| r.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> crate::error::SimError {
    crate::error::SimError::config(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::RequestId;

    fn finished(arrival_ms: u64, first_ms: u64, gaps_ms: &[u64]) -> Request {
        let out = gaps_ms.len() as u64 + 1;
        let mut r = Request::new(RequestId(0), "x", SimTime::from_millis(arrival_ms), 100, out).unwrap();
        let mut t = SimTime::from_millis(first_ms);
        r.record_first_token(t);
        for g in gaps_ms {
            t += SimTime::from_millis(*g);
            r.record_decode_token(t);
        }
        r
    }

    #[test]
    fn ttft_examples() {
        let slo = SloConfig::default();
        assert_eq!(
            ttft_metric(&finished(0, 10, &[]), &slo),
            (SimTime::from_millis(10), true)
        );
        assert_eq!(
            ttft_metric(&finished(0, 8_800, &[]), &slo),
            (SimTime::from_millis(8_800), false)
        );
        assert_eq!(
            ttft_metric(&finished(1_000, 9_000, &[]), &slo),
            (SimTime::from_secs(8), true)
        );
    }

    #[test]
    fn tpot_examples() {
        let slo = SloConfig::default();
        let r = finished(0, 10_000, &[100; 9]);
        assert_eq!(tpot_metric(&r, &slo), (100_000.0, false));
        assert_eq!(tpot_metric(&finished(0, 5, &[]), &slo), (0.0, true));
        assert_eq!(tpot_metric(&finished(0, 5, &[50; 9]), &slo), (50_000.0, true));
    }

    #[test]
    fn throughput_examples() {
        let r = finished(0, 0, &[40, 40, 40, 40, 40, 40, 40, 20, 20]);
        let tps = decode_throughput(&r).unwrap();
        assert!((tps - 28.125).abs() < 1e-9);
        assert_eq!(format!("{tps:.1}"), "28.1");
        let r = finished(0, 0, &[11; 20]);
        assert!((decode_throughput(&r).unwrap() - 90.909).abs() < 1e-3);
        let r = Request {
            token_timestamps: vec![SimTime::ZERO, SimTime::from_micros(40_300)],
            ..finished(0, 0, &[1])
        };
        assert!((decode_throughput(&r).unwrap() - 24.81).abs() < 0.01);
        assert_eq!(decode_throughput(&finished(0, 0, &[])), None);
    }

    #[test]
    fn deadline_miss_examples() {
        let slo = SloConfig::default();
        assert_eq!(deadline_misses(&finished(0, 0, &[11; 30]), &slo), 0);
        assert_eq!(deadline_misses(&finished(0, 0, &[60, 30]), &slo), 1);
        assert_eq!(deadline_misses(&finished(0, 0, &[]), &slo), 0);
    }

    fn row(ttft: bool, tpot: bool, tps: Option<f64>) -> RequestMetrics {
        RequestMetrics {
            id: "r".into(),
            ttft_us: 1,
            mean_tpot_us: 1.0,
            decode_tps: tps,
            ttft_met: ttft,
            tpot_met: tpot,
            e2e_met: ttft && tpot,
            deadline_misses: 0,
            queue_wait_us: Some(3),
        }
    }

    #[test]
    fn aggregate_examples() {
        let mut rows: Vec<_> = (0..10).map(|_| row(true, true, Some(10.0))).collect();
        rows.push(row(false, true, None));
        let rep = aggregate(rows, 1, None);
        assert_eq!(rep.summary.ttft_attainment, 10.0 / 11.0);
        assert!((rep.summary.ttft_attainment - 0.9091).abs() < 1e-4);
        assert_eq!(rep.summary.tpot_attainment, 1.0);
        assert_eq!(rep.summary.worst_queue_wait_us, Some(3));

        let rep = aggregate(Vec::new(), 0, None);
        assert!(rep.summary.empty);
        assert_eq!(rep.summary.e2e_attainment, 1.0);
        assert_eq!(rep.summary.decode_tps_p50, None);

        let rep = aggregate(vec![row(true, true, Some(1.0)); 3], 0, None);
        assert_eq!(rep.summary.e2e_attainment, 1.0);
    }

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 50), Some(5.0));
        assert_eq!(nearest_rank(&v, 90), Some(9.0));
        assert_eq!(nearest_rank(&v, 100), Some(10.0));
        assert_eq!(nearest_rank(&[3.0], 1), Some(3.0));
        assert_eq!(nearest_rank(&[], 50), None);
    }

    #[test]
    fn request_csv_header_and_round_trip() {
        let rows = vec![row(true, false, Some(12.5)), row(false, false, None)];
        let mut buf = Vec::new();
        write_requests_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "id,ttft_us,mean_tpot_us,decode_tps,ttft_met,tpot_met,e2e_met,deadline_misses"
        );
        let back = read_requests_csv(buf.as_slice()).unwrap();
        let strip = |v: Vec<RequestMetrics>| -> Vec<RequestMetrics> {
            v.into_iter()
                .map(|r| RequestMetrics {
                    queue_wait_us: None,
                    ..r
                })
                .collect()
        };
        assert_eq!(back, strip(rows));
    }

    #[test]
    fn sweep_csv_header() {
        let s = aggregate(vec![row(true, true, Some(2.0))], 0, None).summary;
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &[SweepRow::new(2.5, "fcfs+continuous", &s)]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "qps,policy_pair,ttft_att,tpot_att,e2e_att,decode_tps_p50"
        );
        assert_eq!(read_sweep_csv(buf.as_slice()).unwrap().len(), 1);
        assert!(read_sweep_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
