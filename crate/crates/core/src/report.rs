//! Run artifacts: CSV traces, summary JSON, message log.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde_json::{json, Value};

use crate::error::Result;
use crate::runtime::TraceRow;
use crate::sim::{ModuleRecord, RunConfig, RunOutput};

/// Fixed-point text with nine significant digits.
pub fn fmt_sig9(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let decimals = if x == 0.0 {
        8
    } else {
        (8 - x.abs().log10().floor() as i32).clamp(0, 12) as usize
    };
    let s = format!("{x:.decimals$}");
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s[1..].to_string()
    } else {
        s
    }
}

pub fn direct_csv(rows: &[ModuleRecord]) -> String {
    let n = rows.first().map_or(0, |r| r.q.len());
    let mut out = String::from("t");
    for prefix in ["q", "phi", "r"] {
        for k in 1..=n {
            write!(out, ",{prefix}{k}").unwrap();
        }
    }
    out.push('\n');
    for row in rows {
        out.push_str(&fmt_sig9(row.t));
        for v in row.q.iter().chain(&row.phi).chain(&row.r) {
            out.push(',');
            out.push_str(&fmt_sig9(*v));
        }
        out.push('\n');
    }
    out
}

pub fn slave_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("t_ms,q1,q2,q3,q4,q5,p1,p2,p3,p4,p5,seq_active,holds\n");
    for row in rows {
        write!(out, "{}", row.t_ms).unwrap();
        for q in &row.q {
            write!(out, ",{}", fmt_sig9(*q)).unwrap();
        }
        for p in &row.pulse.pulse_us {
            write!(out, ",{p}").unwrap();
        }
        match row.seq_active {
            Some(s) => write!(out, ",{s}").unwrap(),
            None => out.push(','),
        }
        writeln!(out, ",{}", row.holds).unwrap();
    }
    out
}

pub fn summary(cfg: &RunConfig, run: &RunOutput) -> Value {
    let d = &run.direct.summary;
    let mut v = json!({
        "preset": cfg.preset.name,
        "mode": match cfg.mode {
            crate::sim::Mode::Direct => "direct",
            crate::sim::Mode::Networked => "networked",
        },
        "duration_s": d.duration_s,
        "dt": cfg.dt,
        "seed": cfg.seed,
        "random_init": cfg.random_init,
        "modules": run.direct.records.len(),
        "intra_residual_max": d.intra_residual_max,
        "inter_residual_max": d.inter_residual_max,
        "inter_residual_partial": d.inter_partial,
        "potential_final": d.potential_final,
        "convergence_time_s": d.convergence_time_s,
        "convergence_threshold": crate::sim::CONVERGENCE_THRESHOLD,
        "joint_limits": {
            "clamp_events": d.clamp_events,
            "clamp_events_after_transient": d.clamp_events_after_transient,
            "max_abs_q": d.max_abs_q,
            "within_limits": d.clamp_events_after_transient == 0,
        },
    });
    if let Some(net) = &run.networked {
        let s = &net.stats;
        let sent = s.trajectory.sent;
        v["network"] = json!({
            "loss_probability": cfg.network.channel.loss_probability,
            "latency_ms": cfg.network.channel.latency_ms,
            "jitter_ms": cfg.network.channel.jitter_ms,
            "pipeline_delay_ms": net.pipeline_delay_ms,
            "segments_sent": sent,
            "segments_dropped": s.trajectory.dropped,
            "observed_loss": if sent == 0 { 0.0 } else { s.trajectory.dropped as f64 / sent as f64 },
            "segments_delivered": s.delivered,
            "segments_stale": s.stale,
            "segments_duplicate": s.duplicates,
            "segments_overflow": s.overflow,
            "decode_errors": s.decode_errors,
            "status_sent": s.status.sent,
            "status_dropped": s.status.dropped,
            "status_received": s.status_received,
            "holds": s.holds,
            "clamped_samples": s.clamped_samples,
            "interpolation_error_max": net.fidelity.max_error,
            "interpolation_bound": net.fidelity.bound,
            "max_qddot": net.fidelity.max_qddot,
            "probes": net.fidelity.probes,
            "held_probes": net.fidelity.held_probes,
            "within_bound": net.fidelity.max_error <= net.fidelity.bound,
        });
    }
    v
}

/// All output files of a run, by file name.
pub fn artifacts(cfg: &RunConfig, run: &RunOutput) -> BTreeMap<String, String> {
    let mut files = BTreeMap::new();
    for (j, rows) in run.direct.records.iter().enumerate() {
        files.insert(format!("module_{j}.csv"), direct_csv(rows));
    }
    if let Some(net) = &run.networked {
        for (j, rows) in net.traces.iter().enumerate() {
            files.insert(format!("slave_{j}.csv"), slave_csv(rows));
        }
        files.insert("messages.log".into(), net.message_log.clone());
    }
    let mut text = serde_json::to_string_pretty(&summary(cfg, run)).expect("summary serializes");
    text.push('\n');
    files.insert("summary.json".into(), text);
    files
}

pub fn write_artifacts(dir: &Path, files: &BTreeMap<String, String>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, body) in files {
        std::fs::write(dir.join(name), body)?;
    }
    Ok(())
}
