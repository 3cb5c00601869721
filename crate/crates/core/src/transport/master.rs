use log::warn;

use super::message::{JointVector, TrajectorySegmentMessage};
use crate::angle::JOINT_LIMIT;
use crate::error::{Error, Result};
use crate::gaits::JOINTS;
use crate::hierarchy::{HierarchicalCpg, SystemState};

/// Master scheduling parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MasterConfig {
    /// Length of one planning horizon; the master ticks at `1000 / horizon_ms` Hz.
    pub horizon_ms: u32,
    pub sample_period_ms: u32,
    /// Integrator step, s.
    pub dt: f64,
}

impl Default for MasterConfig {
    fn default() -> Self {
        Self { horizon_ms: 50, sample_period_ms: 10, dt: crate::cpg::DEFAULT_DT }
    }
}

impl MasterConfig {
    /// Integrator steps per sample, checking that the grids line up.
    pub fn steps_per_sample(&self) -> Result<usize> {
        if self.sample_period_ms == 0 || !self.horizon_ms.is_multiple_of(self.sample_period_ms) {
            return Err(Error::InvalidParameter(format!(
                "sample period {} ms must divide the {} ms horizon",
                self.sample_period_ms, self.horizon_ms
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be > 0, got {}", self.dt)));
        }
        let period = self.sample_period_ms as f64 / 1000.0;
        let steps = (period / self.dt).round();
        if steps < 1.0 || (steps * self.dt - period).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "dt = {} s does not divide the {} ms sample period",
                self.dt, self.sample_period_ms
            )));
        }
        Ok(steps as usize)
    }

    pub fn samples_per_horizon(&self) -> usize {
        (self.horizon_ms / self.sample_period_ms) as usize
    }
}

/// Trajectory planner. Each tick integrates one horizon ahead and emits one
/// segment per module, stamped to play back one horizon later.
#[derive(Debug, Clone)]
pub struct Master {
    cpg: HierarchicalCpg,
    state: SystemState,
    config: MasterConfig,
    steps_per_sample: usize,
    next_seq: Vec<u64>,
    ticks: u64,
    clamped_samples: u64,
}

impl Master {
    pub fn new(cpg: HierarchicalCpg, initial: SystemState, config: MasterConfig) -> Result<Self> {
        let steps_per_sample = config.steps_per_sample()?;
        let m = cpg.config().m();
        Ok(Self {
            cpg,
            state: initial,
            config,
            steps_per_sample,
            next_seq: vec![0; m],
            ticks: 0,
            clamped_samples: 0,
        })
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn config(&self) -> &MasterConfig {
        &self.config
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    /// Joint samples that had to be clamped to the joint range so far.
    pub fn clamped_samples(&self) -> u64 {
        self.clamped_samples
    }

    /// Playback delay between planning and execution.
    pub fn pipeline_delay_ms(&self) -> u64 {
        self.config.horizon_ms as u64
    }

    pub fn tick(&mut self) -> Result<Vec<TrajectorySegmentMessage>> {
        let m = self.cpg.config().m();
        let mut samples: Vec<Vec<JointVector>> = vec![Vec::new(); m];
        for _ in 0..self.config.samples_per_horizon() {
            for (j, out) in self.cpg.outputs(&self.state).into_iter().enumerate() {
                let mut q = [0.0; JOINTS];
                for (k, v) in out.q.iter().take(JOINTS).enumerate() {
                    q[k] = v.clamp(-JOINT_LIMIT, JOINT_LIMIT);
                }
                if out.any_clamped() || out.q.iter().any(|v| v.abs() > JOINT_LIMIT) {
                    self.clamped_samples += 1;
                    warn!("module {j}: joint command clamped at t = {:.3} s", self.state.t);
                }
                samples[j].push(q);
            }
            for _ in 0..self.steps_per_sample {
                self.state = self.cpg.step(&self.state, self.config.dt)?;
            }
        }
        self.ticks += 1;
        let start_time_ms = self.ticks * self.config.horizon_ms as u64;
        Ok(samples
            .into_iter()
            .enumerate()
            .map(|(j, samples)| {
                let seq = self.next_seq[j];
                self.next_seq[j] += 1;
                TrajectorySegmentMessage {
                    module_id: j as u32,
                    seq,
                    start_time_ms,
                    sample_period_ms: self.config.sample_period_ms,
                    samples,
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaits::{get_preset, Gains};

    fn master(name: &str) -> Master {
        let cfg = get_preset(name).unwrap().to_system_config(&Gains::default()).unwrap();
        let cpg = HierarchicalCpg::new(cfg).unwrap();
        let init = cpg.initial_state();
        Master::new(cpg, init, MasterConfig::default()).unwrap()
    }

    #[test]
    fn one_message_per_module_per_tick() {
        let mut m = master("snake_crawl");
        for tick in 0..4u64 {
            let msgs = m.tick().unwrap();
            assert_eq!(msgs.len(), 2);
            for (j, msg) in msgs.iter().enumerate() {
                assert_eq!(msg.module_id, j as u32);
                assert_eq!(msg.seq, tick);
                assert_eq!(msg.start_time_ms, 50 * (tick + 1));
                assert_eq!(msg.samples.len(), 5);
                msg.validate().unwrap();
            }
        }
        assert!((m.state().t - 0.2).abs() < 1e-9);
    }

    #[test]
    fn zero_amplitude_emits_offsets() {
        let mut p = get_preset("snake_crawl").unwrap();
        for g in &mut p.modules {
            g.amplitude = vec![0.0; 5];
        }
        let cpg = HierarchicalCpg::new(p.to_system_config(&Gains::default()).unwrap()).unwrap();
        let init = cpg.initial_state();
        let mut m = Master::new(cpg, init, MasterConfig::default()).unwrap();
        for _ in 0..10 {
            for msg in m.tick().unwrap() {
                for s in &msg.samples {
                    assert_eq!(s.to_vec(), p.modules[msg.module_id as usize].offset);
                }
            }
        }
    }

    #[test]
    fn rejects_misaligned_grids() {
        let bad = [
            MasterConfig { dt: 0.003, ..Default::default() },
            MasterConfig { sample_period_ms: 15, ..Default::default() },
            MasterConfig { sample_period_ms: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.steps_per_sample().is_err(), "{cfg:?}");
        }
        assert_eq!(MasterConfig::default().steps_per_sample().unwrap(), 5);
    }
}
