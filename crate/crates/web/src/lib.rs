//! Browser bindings for the simulator demo.
//!
//! Every export takes plain numbers and strings and returns a JSON string, so
//! the same functions are callable from native tests. Failures come back as
//! `{"error": "..."}`.

use pdsim::costmodel::PrefillCost;
use pdsim::workload::rescale_qps;
use pdsim::{
    gen_longtail, ClusterConfig, DecodePolicy, LongTailSpec, PrefillPolicy, Request, RequestId, SimTime, Simulation,
};
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

fn to_json<T: Serialize>(r: Result<T, String>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).expect("demo output serializes"),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

fn ms(t: SimTime) -> f64 {
    t.as_millis_f64()
}

#[derive(Serialize)]
struct HolRequest {
    label: String,
    input_len: u64,
    arrival_ms: f64,
    prefill_start_ms: f64,
    prefill_finish_ms: f64,
    ttft_ms: f64,
    ttft_met: bool,
}

#[derive(Serialize)]
struct HolTimeline {
    policy: String,
    ttft_slo_ms: f64,
    met: usize,
    requests: Vec<HolRequest>,
    /// Prefill steps as (start, end, [[label, tokens], ...]).
    steps: Vec<(f64, f64, serde_json::Value)>,
}

fn hol(policy: &str, n_short: u32, spacing_ms: u32) -> Result<HolTimeline, String> {
    let policy: PrefillPolicy = policy.parse().map_err(|e: pdsim::SimError| e.to_string())?;
    if n_short > 200 {
        return Err("at most 200 short requests".into());
    }
    let mut w = vec![Request::new(RequestId(0), "long", SimTime::ZERO, 131_072, 1).map_err(|e| e.to_string())?];
    for k in 1..=n_short as u64 {
        let t = SimTime::from_millis(spacing_ms as u64 * k);
        w.push(Request::new(RequestId(k), format!("short{k}"), t, 8192, 1).map_err(|e| e.to_string())?);
    }
    let cfg = ClusterConfig::default().with_policies(policy, DecodePolicy::Continuous);
    let slo = cfg.slo.ttft_slo;
    let out = Simulation::new(cfg, w)
        .and_then(|s| s.with_event_log().run())
        .map_err(|e| e.to_string())?;

    let mut steps = Vec::new();
    let mut open = None;
    for e in &out.log {
        match e.kind.as_str() {
            "prefill_step_start" => open = Some((e.t_us, e.detail["chunks"].clone())),
            "prefill_step_done" => {
                let (s, chunks) = open.take().expect("step start precedes done");
                steps.push((s as f64 / 1e3, e.t_us as f64 / 1e3, chunks));
            }
            _ => {}
        }
    }
    let requests: Vec<HolRequest> = out
        .requests
        .iter()
        .zip(&out.report.rows)
        .map(|(r, row)| HolRequest {
            label: r.label.clone(),
            input_len: r.input_len,
            arrival_ms: ms(r.arrival_time),
            prefill_start_ms: ms(r.t_prefill_start.unwrap_or(r.arrival_time)),
            prefill_finish_ms: ms(r.t_prefill_finish.unwrap_or(r.arrival_time)),
            ttft_ms: row.ttft_us as f64 / 1e3,
            ttft_met: row.ttft_met,
        })
        .collect();
    Ok(HolTimeline {
        policy: policy.to_string(),
        ttft_slo_ms: ms(slo),
        met: requests.iter().filter(|r| r.ttft_met).count(),
        requests,
        steps,
    })
}

/// One long prompt followed by `n_short` 8K prompts `spacing_ms` apart,
/// scheduled by the named prefill policy.
#[wasm_bindgen]
pub fn hol_timeline(policy: &str, n_short: u32, spacing_ms: u32) -> String {
    to_json(hol(policy, n_short, spacing_ms))
}

#[derive(Serialize)]
struct DecodeTrack {
    label: String,
    seq_len: u64,
    token_ms: Vec<f64>,
    decode_tps: Option<f64>,
    deadline_misses: u64,
}

fn straggler(policy: &str, short_len: u32, long_len: u32, output_len: u32) -> Result<serde_json::Value, String> {
    let policy: DecodePolicy = policy.parse().map_err(|e: pdsim::SimError| e.to_string())?;
    if !(2..=2000).contains(&output_len) {
        return Err("output length must be in 2..=2000".into());
    }
    let mk = |id, label: &str, len: u32| {
        Request::new(RequestId(id), label, SimTime::ZERO, len as u64, output_len as u64).map_err(|e| e.to_string())
    };
    let w = vec![mk(0, "short", short_len)?, mk(1, "long", long_len)?];
    let cfg = ClusterConfig {
        chunk_budget: 10_000_000,
        kv_capacity_tokens: 10_000_000,
        prefill_cost: PrefillCost::Linear {
            tokens: 1_000_000_000,
            duration_us: 1,
        },
        ..ClusterConfig::default().with_policies(PrefillPolicy::Fcfs, policy)
    };
    let slo_ms = ms(cfg.slo.tpot_slo);
    let out = Simulation::new(cfg, w)
        .and_then(|s| s.run())
        .map_err(|e| e.to_string())?;
    let tracks: Vec<DecodeTrack> = out
        .requests
        .iter()
        .zip(&out.report.rows)
        .map(|(r, row)| DecodeTrack {
            label: r.label.clone(),
            seq_len: r.input_len,
            token_ms: r.token_timestamps.iter().map(|&t| ms(t)).collect(),
            decode_tps: row.decode_tps,
            deadline_misses: row.deadline_misses,
        })
        .collect();
    Ok(json!({
        "policy": policy.to_string(),
        "tpot_slo_ms": slo_ms,
        "decode_steps": out.stats.decode_steps,
        "tracks": tracks,
    }))
}

/// Two requests decoding side by side under the named decode policy.
#[wasm_bindgen]
pub fn straggler_timeline(policy: &str, short_len: u32, long_len: u32, output_len: u32) -> String {
    to_json(straggler(policy, short_len, long_len, output_len))
}

#[derive(Serialize)]
struct SweepPoint {
    qps: f64,
    e2e: f64,
    ttft: f64,
    tpot: f64,
}

fn sweep(n_requests: u32, qps_start: f64, qps_stop: f64, points: u32, seed: u32) -> Result<serde_json::Value, String> {
    if !(2..=2000).contains(&n_requests) {
        return Err("request count must be in 2..=2000".into());
    }
    if !(1..=40).contains(&points) || !(qps_start > 0.0 && qps_stop >= qps_start) {
        return Err("need 0 < start <= stop and 1..=40 points".into());
    }
    let spec = LongTailSpec {
        n_requests: n_requests as usize,
        seed: seed as u64,
        ..LongTailSpec::default()
    };
    let base = gen_longtail(&spec).map_err(|e| e.to_string())?;
    let rates: Vec<f64> = (0..points)
        .map(|i| {
            if points == 1 {
                qps_start
            } else {
                qps_start + (qps_stop - qps_start) * i as f64 / (points - 1) as f64
            }
        })
        .collect();
    let pairs = [
        (PrefillPolicy::Fcfs, DecodePolicy::Continuous),
        (PrefillPolicy::KairosUrgency, DecodePolicy::KairosSlack),
    ];
    let mut curves = Vec::new();
    for (p, d) in pairs {
        let mut pts = Vec::new();
        for &qps in &rates {
            let w = rescale_qps(&base, qps).map_err(|e| e.to_string())?;
            let cfg = ClusterConfig {
                seed: seed as u64,
                ..ClusterConfig::default()
            }
            .with_policies(p, d);
            let s = pdsim::run(cfg, w).map_err(|e| e.to_string())?.summary;
            pts.push(SweepPoint {
                qps,
                e2e: s.e2e_attainment,
                ttft: s.ttft_attainment,
                tpot: s.tpot_attainment,
            });
        }
        curves.push(json!({ "pair": format!("{p}+{d}"), "points": pts }));
    }
    Ok(json!({ "n_requests": n_requests, "curves": curves }))
}

/// SLO attainment of the baseline and the SLO-aware pair over a rate sweep
/// of the synthetic long-tail workload.
#[wasm_bindgen]
pub fn qps_sweep(n_requests: u32, qps_start: f64, qps_stop: f64, points: u32, seed: u32) -> String {
    to_json(sweep(n_requests, qps_start, qps_stop, points, seed))
}
