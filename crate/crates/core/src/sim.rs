//! Run harnesses: a direct integration of the full hierarchy, and a
//! networked run where a master streams segments over simulated lossy
//! links to per-module slaves, all driven by one virtual-time event queue.

use std::fmt::Write as _;

use crate::angle::JOINT_LIMIT;
use crate::error::{Error, Result};
use crate::gaits::{GaitPreset, Gains, JOINTS};
use crate::hierarchy::{HierarchicalCpg, SystemState};
use crate::runtime::{IngestOutcome, Slave, TraceRow, DEFAULT_CAPACITY, DEFAULT_TIMER_PERIOD_MS};
use crate::transport::bridge::MqttBridge;
use crate::transport::{
    decode_status, encode, encode_status, status_topic, trajectory_topic, Channel, ChannelConfig,
    ChannelStats, Delivery, EventKey, EventQueue, JointVector, Master, MasterConfig, StatusMessage,
};

/// Phase-error threshold that defines convergence.
pub const CONVERGENCE_THRESHOLD: f64 = 1e-3;

fn step_count(duration_s: f64, dt: f64) -> Result<usize> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::InvalidParameter(format!("duration must be > 0, got {duration_s}")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
    }
    Ok((duration_s / dt).round().max(1.0) as usize)
}

/// One recorded row of a module during a direct run.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleRecord {
    pub t: f64,
    pub q: Vec<f64>,
    pub phi: Vec<f64>,
    pub r: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectSummary {
    pub duration_s: f64,
    pub intra_residual_max: f64,
    pub inter_residual_max: f64,
    pub inter_partial: bool,
    pub potential_final: Vec<f64>,
    /// First time after which the intra-module phase error stayed below
    /// [`CONVERGENCE_THRESHOLD`]; `None` if it never settled.
    pub convergence_time_s: Option<f64>,
    /// Joint outputs that had to be clamped, counted per joint per step.
    pub clamp_events: u64,
    /// Clamp events after the amplitude transient (`t > 3 / min(a)`).
    pub clamp_events_after_transient: u64,
    /// Largest `|q|` seen at any step, rad.
    pub max_abs_q: f64,
}

#[derive(Debug, Clone)]
pub struct DirectRun {
    /// Per module, rows at the record period plus the final instant.
    pub records: Vec<Vec<ModuleRecord>>,
    pub final_state: SystemState,
    pub summary: DirectSummary,
}

/// Integrate the hierarchy for `duration_s`, recording every
/// `record_period_s` (rounded to whole steps).
pub fn run_direct(
    cpg: &HierarchicalCpg,
    initial: SystemState,
    dt: f64,
    duration_s: f64,
    record_period_s: f64,
) -> Result<DirectRun> {
    let steps = step_count(duration_s, dt)?;
    let every = ((record_period_s / dt).round() as usize).max(1);
    let m = cpg.config().m();
    let transient = 3.0
        / cpg
            .config()
            .modules
            .iter()
            .flat_map(|p| p.a.iter().copied())
            .fold(f64::INFINITY, f64::min);

    let mut records = vec![Vec::new(); m];
    let mut state = initial;
    let mut last_unconverged = None;
    let mut clamp_events = 0;
    let mut clamp_after = 0;
    let mut max_abs_q: f64 = 0.0;

    for step in 0..=steps {
        let outputs = cpg.outputs(&state);
        for out in &outputs {
            let clamped = out.clamped.iter().filter(|c| **c).count() as u64;
            clamp_events += clamped;
            if state.t > transient {
                clamp_after += clamped;
            }
            max_abs_q = out.q.iter().fold(max_abs_q, |acc, q| acc.max(q.abs()));
        }
        if cpg.max_phase_error(&state) >= CONVERGENCE_THRESHOLD {
            last_unconverged = Some(step);
        }
        if step % every == 0 || step == steps {
            for (j, out) in outputs.into_iter().enumerate() {
                let s = &state.modules[j];
                records[j].push(ModuleRecord { t: state.t, q: out.q, phi: s.phi.clone(), r: s.r.clone() });
            }
        }
        if step < steps {
            state = cpg.step(&state, dt)?;
        }
    }

    let convergence_time_s = match last_unconverged {
        None => Some(0.0),
        Some(s) if s == steps => None,
        Some(s) => Some((s + 1) as f64 * dt),
    };
    let residuals = cpg.residuals(&state);
    let summary = DirectSummary {
        duration_s: steps as f64 * dt,
        intra_residual_max: residuals.max_intra(),
        inter_residual_max: residuals.max_inter(),
        inter_partial: residuals.partial,
        potential_final: cpg
            .modules()
            .iter()
            .zip(&state.modules)
            .map(|(net, s)| net.potential(s))
            .collect(),
        convergence_time_s,
        clamp_events,
        clamp_events_after_transient: clamp_after,
        max_abs_q,
    };
    Ok(DirectRun { records, final_state: state, summary })
}

/// Joint outputs at every integrator step, indexed `[step][module]`.
pub fn dense_outputs(cpg: &HierarchicalCpg, initial: SystemState, dt: f64, steps: usize) -> Result<Vec<Vec<JointVector>>> {
    let mut state = initial;
    let mut out = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        out.push(
            cpg.outputs(&state)
                .into_iter()
                .map(|o| std::array::from_fn(|k| o.q[k].clamp(-JOINT_LIMIT, JOINT_LIMIT)))
                .collect(),
        );
        if step < steps {
            state = cpg.step(&state, dt)?;
        }
    }
    Ok(out)
}

/// Largest second finite difference of any joint over a dense trajectory.
pub fn max_second_derivative(dense: &[Vec<JointVector>], dt: f64) -> f64 {
    dense
        .windows(3)
        .flat_map(|w| {
            (0..w[1].len()).flat_map(move |j| {
                (0..JOINTS).map(move |k| ((w[2][j][k] - 2.0 * w[1][j][k] + w[0][j][k]) / (dt * dt)).abs())
            })
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct NetworkOptions {
    pub channel: ChannelConfig,
    /// Restrict trajectory loss to sends within `[start, end)` ms.
    pub loss_window_ms: Option<(u64, u64)>,
    pub master: MasterConfig,
    pub timer_period_ms: u64,
    pub capacity: usize,
    /// Compare the slave buffers against the dense reference at every
    /// integrator step.
    pub probe: bool,
}

impl Default for NetworkOptions {
    fn default() -> Self {
        Self {
            channel: ChannelConfig::default(),
            loss_window_ms: None,
            master: MasterConfig::default(),
            timer_period_ms: DEFAULT_TIMER_PERIOD_MS,
            capacity: DEFAULT_CAPACITY,
            probe: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub t_ms: f64,
    /// Max abs joint error against the dense reference; `None` while holding.
    pub error: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Fidelity {
    pub max_error: f64,
    /// `(dt_s^2 / 8) * max|q''|` for the segment sample spacing `dt_s`.
    pub bound: f64,
    pub max_qddot: f64,
    pub probes: u64,
    pub held_probes: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NetworkStats {
    pub trajectory: ChannelStats,
    pub status: ChannelStats,
    pub delivered: u64,
    pub stale: u64,
    pub duplicates: u64,
    pub overflow: u64,
    pub decode_errors: u64,
    pub status_received: u64,
    pub holds: Vec<u64>,
    pub clamped_samples: u64,
    pub bridged: u64,
}

#[derive(Debug, Clone)]
pub struct NetworkedRun {
    pub traces: Vec<Vec<TraceRow>>,
    pub applied_seqs: Vec<Vec<u64>>,
    pub probes: Vec<Vec<Probe>>,
    pub message_log: String,
    pub last_status: Vec<Option<StatusMessage>>,
    pub stats: NetworkStats,
    pub fidelity: Fidelity,
    pub pipeline_delay_ms: u64,
}

enum Event {
    MasterTick,
    Trajectory { module: usize, payload: Vec<u8> },
    Status { payload: Vec<u8> },
    Timer { module: usize },
    Probe,
}

const CLASS_TICK: u8 = 0;
const CLASS_TRAJ: u8 = 1;
const CLASS_STATUS: u8 = 2;
const CLASS_TIMER: u8 = 3;
const CLASS_PROBE: u8 = 4;

/// Stream a run through the master, channels and slaves.
pub fn run_networked(
    cpg: &HierarchicalCpg,
    initial: SystemState,
    duration_s: f64,
    opts: &NetworkOptions,
    mut bridge: Option<&mut MqttBridge>,
) -> Result<NetworkedRun> {
    let dt = opts.master.dt;
    let steps = step_count(duration_s, dt)?;
    if opts.timer_period_ms == 0 {
        return Err(Error::InvalidParameter("timer period must be > 0".into()));
    }
    let dt_us = (dt * 1e6).round() as u64;
    if (dt_us as f64 - dt * 1e6).abs() > 1e-6 {
        return Err(Error::InvalidParameter(format!("dt = {dt} s is not a whole number of microseconds")));
    }
    let duration_us = steps as u64 * dt_us;
    let m = cpg.config().m();

    let mut master = Master::new(cpg.clone(), initial.clone(), opts.master)?;
    let delay_us = master.pipeline_delay_ms() * 1000;
    let horizon_us = opts.master.horizon_ms as u64 * 1000;
    let mut traj_channel = Channel::new(opts.channel)?;
    if let Some((start, end)) = opts.loss_window_ms {
        traj_channel = traj_channel.with_loss_window(start * 1000, end * 1000);
    }
    let mut status_channel = Channel::new(ChannelConfig {
        seed: opts.channel.seed.wrapping_add(0x9E37_79B9_7F4A_7C15),
        ..opts.channel
    })?;
    if let Some((start, end)) = opts.loss_window_ms {
        status_channel = status_channel.with_loss_window(start * 1000, end * 1000);
    }
    let mut slaves: Vec<Slave> = (0..m).map(|j| Slave::new(j as u32, opts.capacity)).collect();

    let dense = if opts.probe { Some(dense_outputs(cpg, initial, dt, steps)?) } else { None };

    let mut queue = EventQueue::new();
    let key = |at_us, class, module_id: usize, seq| EventKey { at_us, class, module_id: module_id as u32, seq };
    for k in 0.. {
        let at = k * horizon_us;
        if at >= duration_us {
            break;
        }
        queue.schedule(key(at, CLASS_TICK, 0, k), Event::MasterTick);
    }
    let timer_us = opts.timer_period_ms * 1000;
    for j in 0..m {
        let mut at = 0;
        while at <= duration_us {
            queue.schedule(key(at, CLASS_TIMER, j, at / timer_us), Event::Timer { module: j });
            at += timer_us;
        }
    }
    if dense.is_some() {
        let mut at = delay_us;
        while at <= duration_us {
            queue.schedule(key(at, CLASS_PROBE, 0, at / dt_us), Event::Probe);
            at += dt_us;
        }
    }

    let mut log = String::new();
    let mut stats = NetworkStats { holds: vec![0; m], ..Default::default() };
    let mut probes = vec![Vec::new(); m];
    let mut last_status = vec![None; m];

    while let Some((k, event)) = queue.pop() {
        let now = k.at_us;
        let now_ms = now as f64 / 1000.0;
        match event {
            Event::MasterTick => {
                for msg in master.tick()? {
                    let topic = trajectory_topic(msg.module_id);
                    let payload = encode(&msg);
                    if let Some(b) = bridge.as_deref_mut() {
                        b.publish(&topic, &payload)?;
                        stats.bridged += 1;
                    }
                    match traj_channel.transmit(now) {
                        Delivery::Dropped => {
                            writeln!(log, "{now} drop {topic} seq={}", msg.seq).unwrap();
                        }
                        Delivery::At(at) => {
                            writeln!(log, "{now} send {topic} deliver_at={at} {}", String::from_utf8_lossy(&payload)).unwrap();
                            let module = msg.module_id as usize;
                            queue.schedule(key(at, CLASS_TRAJ, module, msg.seq), Event::Trajectory { module, payload });
                        }
                    }
                }
            }
            Event::Trajectory { module, payload } => {
                let topic = trajectory_topic(module as u32);
                let outcome = slaves[module].on_payload(&payload, now_ms);
                match &outcome {
                    Ok(IngestOutcome::Inserted) => stats.delivered += 1,
                    Ok(IngestOutcome::Overflow) => {
                        stats.delivered += 1;
                        stats.overflow += 1;
                    }
                    Ok(IngestOutcome::Stale) => stats.stale += 1,
                    Ok(IngestOutcome::Duplicate) => stats.duplicates += 1,
                    Err(_) => stats.decode_errors += 1,
                }
                writeln!(log, "{now} recv {topic} seq={} {:?}", k.seq, outcome.map_err(|e| e.to_string())).unwrap();
            }
            Event::Status { payload } => {
                let status = decode_status(&payload)?;
                writeln!(log, "{now} recv {} {}", status_topic(status.module_id), String::from_utf8_lossy(&payload)).unwrap();
                stats.status_received += 1;
                let j = status.module_id as usize;
                last_status[j] = Some(status);
            }
            Event::Timer { module } => {
                let t_ms = now / 1000;
                slaves[module].on_timer(t_ms);
                if now % horizon_us == 0 {
                    let status = slaves[module].status(t_ms);
                    let payload = encode_status(&status);
                    let topic = status_topic(module as u32);
                    match status_channel.transmit(now) {
                        Delivery::Dropped => writeln!(log, "{now} drop {topic}").unwrap(),
                        Delivery::At(at) => {
                            writeln!(log, "{now} send {topic} deliver_at={at} {}", String::from_utf8_lossy(&payload)).unwrap();
                            queue.schedule(key(at, CLASS_STATUS, module, t_ms), Event::Status { payload });
                        }
                    }
                }
            }
            Event::Probe => {
                let dense = dense.as_ref().expect("probes only scheduled with a reference");
                let idx = ((now - delay_us) / dt_us) as usize;
                for (j, slave) in slaves.iter().enumerate() {
                    let s = slave.buffer().sample(now_ms);
                    let error = (!s.held).then(|| {
                        (0..JOINTS).map(|k| (s.q[k] - dense[idx][j][k]).abs()).fold(0.0, f64::max)
                    });
                    probes[j].push(Probe { t_ms: now_ms, error });
                }
            }
        }
    }

    let mut fidelity = Fidelity::default();
    if let Some(dense) = &dense {
        let spacing = opts.master.sample_period_ms as f64 / 1000.0;
        fidelity.max_qddot = max_second_derivative(dense, dt);
        fidelity.bound = spacing * spacing / 8.0 * fidelity.max_qddot;
        for p in probes.iter().flatten() {
            fidelity.probes += 1;
            match p.error {
                Some(e) => fidelity.max_error = fidelity.max_error.max(e),
                None => fidelity.held_probes += 1,
            }
        }
    }
    stats.trajectory = traj_channel.stats();
    stats.status = status_channel.stats();
    stats.holds = slaves.iter().map(|s| s.holds()).collect();
    stats.clamped_samples = master.clamped_samples();

    Ok(NetworkedRun {
        applied_seqs: slaves.iter().map(|s| s.applied_seqs().to_vec()).collect(),
        traces: slaves.into_iter().map(Slave::into_trace).collect(),
        probes,
        message_log: log,
        last_status,
        stats,
        fidelity,
        pipeline_delay_ms: delay_us / 1000,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Direct,
    Networked,
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub preset: GaitPreset,
    pub duration_s: f64,
    pub dt: f64,
    pub seed: u64,
    /// Draw initial phases uniformly from `[-pi, pi]` with `seed`, instead
    /// of starting from zero.
    pub random_init: bool,
    pub mode: Mode,
    pub gains: Gains,
    pub network: NetworkOptions,
}

impl RunConfig {
    pub fn new(preset: GaitPreset) -> Self {
        Self {
            preset,
            duration_s: 10.0,
            dt: crate::cpg::DEFAULT_DT,
            seed: 0,
            random_init: false,
            mode: Mode::Direct,
            gains: Gains::default(),
            network: NetworkOptions::default(),
        }
    }

    pub fn build(&self) -> Result<(HierarchicalCpg, SystemState)> {
        step_count(self.duration_s, self.dt)?;
        let cpg = HierarchicalCpg::new(self.preset.to_system_config(&self.gains)?)?;
        let (m, n) = (cpg.config().m(), cpg.config().n());
        let init = if self.random_init {
            SystemState::random(m, n, std::f64::consts::PI, self.seed)
        } else {
            cpg.initial_state()
        };
        Ok((cpg, init))
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub direct: DirectRun,
    pub networked: Option<NetworkedRun>,
}

pub fn execute(cfg: &RunConfig, bridge: Option<&mut MqttBridge>) -> Result<RunOutput> {
    let (cpg, init) = cfg.build()?;
    let record = cfg.network.master.sample_period_ms as f64 / 1000.0;
    let direct = run_direct(&cpg, init.clone(), cfg.dt, cfg.duration_s, record)?;
    let networked = match cfg.mode {
        Mode::Direct => None,
        Mode::Networked => {
            let mut opts = cfg.network.clone();
            opts.master.dt = cfg.dt;
            opts.channel.seed = cfg.seed;
            Some(run_networked(&cpg, init, cfg.duration_s, &opts, bridge)?)
        }
    };
    Ok(RunOutput { direct, networked })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaits::get_preset;

    fn cpg(name: &str) -> HierarchicalCpg {
        HierarchicalCpg::new(get_preset(name).unwrap().to_system_config(&Gains::default()).unwrap()).unwrap()
    }

    #[test]
    fn direct_run_records_on_grid() {
        let c = cpg("single_roll");
        let run = run_direct(&c, c.initial_state(), 0.002, 4.0, 0.01).unwrap();
        assert_eq!(run.records.len(), 1);
        assert_eq!(run.records[0].len(), 401);
        assert!((run.records[0][400].t - 4.0).abs() < 1e-9);
        let t = run.summary.convergence_time_s.unwrap();
        assert!(t < 3.0 * 1.1, "{t}");
    }

    #[test]
    fn rejects_bad_durations() {
        let c = cpg("single_roll");
        assert!(run_direct(&c, c.initial_state(), 0.002, 0.0, 0.01).is_err());
        assert!(run_direct(&c, c.initial_state(), 0.0, 1.0, 0.01).is_err());
    }

    #[test]
    fn networked_zero_loss_is_gap_free() {
        let c = cpg("snake_crawl");
        let run = run_networked(&c, c.initial_state(), 1.0, &NetworkOptions::default(), None).unwrap();
        for seqs in &run.applied_seqs {
            assert!(seqs.windows(2).all(|w| w[1] == w[0] + 1), "{seqs:?}");
            assert_eq!(seqs[0], 0);
        }
        assert_eq!(run.stats.trajectory.dropped, 0);
        assert_eq!(run.fidelity.held_probes, 0);
        assert!(run.fidelity.max_error <= run.fidelity.bound);
        assert_eq!(run.traces[0].len(), 101);
        assert!(run.last_status.iter().all(|s| s.is_some()));
    }

    #[test]
    fn master_samples_match_offline_run() {
        let c = cpg("snake_crawl");
        let mut master = Master::new(c.clone(), c.initial_state(), MasterConfig::default()).unwrap();
        let dense = dense_outputs(&c, c.initial_state(), 0.002, 1000).unwrap();
        let mut worst: f64 = 0.0;
        for _ in 0..40 {
            for msg in master.tick().unwrap() {
                let base = (msg.start_time_ms - 50) / 10;
                for (i, s) in msg.samples.iter().enumerate() {
                    let step = ((base + i as u64) * 5) as usize;
                    for k in 0..JOINTS {
                        worst = worst.max((s[k] - dense[step][msg.module_id as usize][k]).abs());
                    }
                }
            }
        }
        assert!(worst < 1e-9, "{worst}");
    }
}
