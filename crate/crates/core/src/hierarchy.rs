//! High-level coordination across modules.
//!
//! Every module `j` carries a global phase `Phi_j`. The vector `Phi` follows
//! the same gradient law as a single module (with `m` oscillators and the
//! inter-module delays as targets). Each module is then tied to its global
//! phase by a proportional reference-phase injection, so at steady state the
//! phase matrix satisfies both the intra-module delays (rows) and the
//! inter-module delays (columns).

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::angle::wrap;
use crate::cpg::{JointOutput, NetworkState, OscillatorNetwork, OscillatorNetworkParams, DEFAULT_MU};
use crate::error::{Error, Result};

pub const DEFAULT_GAMMA: f64 = 2.0;

/// Where the reference-phase pull enters each module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Injection {
    /// `gamma * wrap(Phi_j - phi_{j,1})` on the first oscillator only. The
    /// pull bends the row shape until the module has locked to `Phi_j`, so
    /// intra-module errors decay only at about `gamma / n`.
    FirstOscillator,
    /// The same pull applied uniformly to every oscillator, acting on the row
    /// mean. Leaves the phase differences untouched.
    #[default]
    RowMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub modules: Vec<OscillatorNetworkParams>,
    /// Desired inter-module delays, length `m - 1`, normalized into `(-pi, pi]`.
    pub inter_delay: Vec<f64>,
    /// High-level convergence gains, length `m - 1`.
    pub mu_high: Vec<f64>,
    /// Reference-phase injection gain, 1/s.
    pub gamma: f64,
    pub injection: Injection,
}

impl SystemConfig {
    pub fn new(modules: Vec<OscillatorNetworkParams>, inter_delay: &[f64]) -> Result<Self> {
        let m = modules.len();
        let cfg = Self {
            mu_high: vec![DEFAULT_MU; m.saturating_sub(1)],
            inter_delay: inter_delay.iter().copied().map(wrap).collect(),
            modules,
            gamma: DEFAULT_GAMMA,
            injection: Injection::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn m(&self) -> usize {
        self.modules.len()
    }

    pub fn n(&self) -> usize {
        self.modules.first().map_or(0, |p| p.n)
    }

    /// Shared natural frequency of all oscillators.
    pub fn omega(&self) -> f64 {
        self.modules[0].omega[0]
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.m();
        if m == 0 {
            return Err(Error::InvalidDimension("system needs at least one module".into()));
        }
        for p in &self.modules {
            p.validate()?;
        }
        let (n, omega) = (self.n(), self.omega());
        for (j, p) in self.modules.iter().enumerate() {
            if p.n != n {
                return Err(Error::InvalidDimension(format!(
                    "module {j} has {} oscillators, module 0 has {n}",
                    p.n
                )));
            }
            if p.omega.iter().any(|w| *w != omega) {
                return Err(Error::InvalidParameter(format!(
                    "module {j}: all oscillators must share omega = {omega}"
                )));
            }
        }
        if self.inter_delay.len() != m - 1 {
            return Err(Error::InvalidDimension(format!(
                "inter-module delay: expected length {}, got {}",
                m - 1,
                self.inter_delay.len()
            )));
        }
        if self.mu_high.len() != m - 1 {
            return Err(Error::InvalidDimension(format!(
                "high-level gains: expected length {}, got {}",
                m - 1,
                self.mu_high.len()
            )));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// True when every module shares the same intra-module delays, the case
    /// in which all columns of the phase matrix can satisfy the inter-module
    /// delay simultaneously.
    pub fn uniform_intra_delays(&self) -> bool {
        self.modules.windows(2).all(|w| w[0].theta_des == w[1].theta_des)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    /// Global phase per module, unwrapped.
    pub phi_high: Vec<f64>,
    pub modules: Vec<NetworkState>,
    pub t: f64,
}

impl SystemState {
    pub fn zeros(m: usize, n: usize) -> Self {
        Self {
            phi_high: vec![0.0; m],
            modules: vec![NetworkState::zeros(n); m],
            t: 0.0,
        }
    }

    /// All phases (global and per-oscillator) drawn from `[-spread, spread]`.
    pub fn random(m: usize, n: usize, spread: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || rng.random_range(-spread..=spread);
        let phi_high = (0..m).map(|_| draw()).collect();
        let modules = (0..m)
            .map(|_| NetworkState {
                phi: (0..n).map(|_| draw()).collect(),
                ..NetworkState::zeros(n)
            })
            .collect();
        Self { phi_high, modules, t: 0.0 }
    }
}

/// Phase matrix: row `j` holds module `j`'s oscillator phases.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMatrix(pub DMatrix<f64>);

pub fn assemble_phase_matrix(state: &SystemState) -> PhaseMatrix {
    let m = state.modules.len();
    let n = state.modules.first().map_or(0, |s| s.phi.len());
    PhaseMatrix(DMatrix::from_fn(m, n, |j, k| state.modules[j].phi[k]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintResiduals {
    /// `m x (n-1)`: `wrap(P[j,k] - P[j,k+1] - theta_des[j][k])`.
    pub intra: DMatrix<f64>,
    /// `(m-1) x n`: `wrap(P[j,k] - P[j+1,k] - Theta_des[j])`.
    pub inter: DMatrix<f64>,
    /// Modules disagree on their intra-module delays, so only the first
    /// column of `inter` is expected to vanish.
    pub partial: bool,
}

impl ConstraintResiduals {
    pub fn max_intra(&self) -> f64 {
        self.intra.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_inter(&self) -> f64 {
        let cols = if self.partial { self.inter.ncols().min(1) } else { self.inter.ncols() };
        self.inter
            .columns(0, cols)
            .iter()
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub fn constraint_residuals(
    p: &PhaseMatrix,
    theta_des: &[Vec<f64>],
    inter_delay: &[f64],
) -> Result<ConstraintResiduals> {
    let p = &p.0;
    let (m, n) = p.shape();
    if theta_des.len() != m {
        return Err(Error::InvalidDimension(format!(
            "expected intra-module delays for {m} modules, got {}",
            theta_des.len()
        )));
    }
    if let Some(bad) = theta_des.iter().find(|t| t.len() + 1 != n) {
        return Err(Error::InvalidDimension(format!(
            "intra-module delay vector of length {} for {n} oscillators",
            bad.len()
        )));
    }
    if inter_delay.len() + 1 != m.max(1) {
        return Err(Error::InvalidDimension(format!(
            "expected {} inter-module delays, got {}",
            m.saturating_sub(1),
            inter_delay.len()
        )));
    }
    let intra = DMatrix::from_fn(m, n.saturating_sub(1), |j, k| {
        wrap(p[(j, k)] - p[(j, k + 1)] - theta_des[j][k])
    });
    let inter = DMatrix::from_fn(m.saturating_sub(1), n, |j, k| {
        wrap(p[(j, k)] - p[(j + 1, k)] - inter_delay[j])
    });
    let partial = theta_des.windows(2).any(|w| w[0] != w[1]);
    Ok(ConstraintResiduals { intra, inter, partial })
}

fn high_level_network(inter_delay: &[f64], omega: f64, mu_high: &[f64]) -> Result<Option<OscillatorNetwork>> {
    let m = inter_delay.len() + 1;
    if mu_high.len() != inter_delay.len() {
        return Err(Error::InvalidDimension(format!(
            "high-level gains: expected length {}, got {}",
            inter_delay.len(),
            mu_high.len()
        )));
    }
    if m == 1 {
        return Ok(None);
    }
    let params = OscillatorNetworkParams {
        n: m,
        omega: vec![omega; m],
        mu: mu_high.to_vec(),
        a: vec![1.0; m],
        amplitude: vec![0.0; m],
        offset: vec![0.0; m],
        theta_des: inter_delay.iter().copied().map(wrap).collect(),
        joint_limits: false,
    };
    OscillatorNetwork::new(params).map(Some)
}

fn advance_high_level(net: Option<&OscillatorNetwork>, phi_high: &[f64], omega: f64, t: f64, dt: f64) -> Result<Vec<f64>> {
    match net {
        None => Ok(phi_high.iter().map(|p| p + omega * dt).collect()),
        Some(net) => {
            let state = NetworkState {
                phi: phi_high.to_vec(),
                t,
                ..NetworkState::zeros(phi_high.len())
            };
            Ok(net.step(&state, dt)?.phi)
        }
    }
}

/// One step of the global phases. For a single module this is `Phi' = omega`.
pub fn step_high_level(
    phi_high: &[f64],
    inter_delay: &[f64],
    omega: f64,
    mu_high: &[f64],
    dt: f64,
) -> Result<Vec<f64>> {
    if phi_high.len() != inter_delay.len() + 1 {
        return Err(Error::InvalidDimension(format!(
            "{} global phases but {} inter-module delays",
            phi_high.len(),
            inter_delay.len()
        )));
    }
    let net = high_level_network(inter_delay, omega, mu_high)?;
    advance_high_level(net.as_ref(), phi_high, omega, 0.0, dt)
}

/// A validated system configuration with all networks built.
#[derive(Debug, Clone)]
pub struct HierarchicalCpg {
    config: SystemConfig,
    high: Option<OscillatorNetwork>,
    modules: Vec<OscillatorNetwork>,
    /// Mean of the cumulative intra-module delays per module, the steady
    /// offset between the first oscillator and the row mean.
    row_offsets: Vec<f64>,
}

impl HierarchicalCpg {
    pub fn new(config: SystemConfig) -> Result<Self> {
        config.validate()?;
        let high = high_level_network(&config.inter_delay, config.omega(), &config.mu_high)?;
        let modules = config
            .modules
            .iter()
            .cloned()
            .map(OscillatorNetwork::new)
            .collect::<Result<Vec<_>>>()?;
        let row_offsets = config
            .modules
            .iter()
            .map(|p| {
                let mut acc = 0.0;
                let mut sum = 0.0;
                for t in &p.theta_des {
                    acc += t;
                    sum += acc;
                }
                sum / p.n as f64
            })
            .collect();
        Ok(Self { config, high, modules, row_offsets })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn modules(&self) -> &[OscillatorNetwork] {
        &self.modules
    }

    pub fn initial_state(&self) -> SystemState {
        SystemState::zeros(self.config.m(), self.config.n())
    }

    fn check_state(&self, state: &SystemState) -> Result<()> {
        let m = self.config.m();
        if state.phi_high.len() != m || state.modules.len() != m {
            return Err(Error::InvalidDimension(format!(
                "state has {} global phases and {} modules, config has {m}",
                state.phi_high.len(),
                state.modules.len()
            )));
        }
        Ok(())
    }

    /// High-level step, then one low-level step per module with the
    /// reference-phase injection. The global phase seen by the injection is
    /// interpolated linearly across the step.
    pub fn step(&self, state: &SystemState, dt: f64) -> Result<SystemState> {
        self.check_state(state)?;
        if !state.phi_high.iter().all(|p| p.is_finite()) {
            return Err(Error::NumericDivergence { t: state.t });
        }
        let next_high = advance_high_level(self.high.as_ref(), &state.phi_high, self.config.omega(), state.t, dt)?;
        let gamma = self.config.gamma;
        let modules = self
            .modules
            .iter()
            .enumerate()
            .map(|(j, net)| {
                let (from, to) = (state.phi_high[j], next_high[j]);
                let offset = self.row_offsets[j];
                let injection = self.config.injection;
                net.step_driven(&state.modules[j], dt, |c, phi, rate| {
                    if gamma == 0.0 {
                        return;
                    }
                    let reference = from + c * (to - from);
                    match injection {
                        Injection::FirstOscillator => rate[0] += gamma * wrap(reference - phi[0]),
                        Injection::RowMean => {
                            let mean = phi.iter().sum::<f64>() / phi.len() as f64;
                            let pull = gamma * wrap(reference - offset - mean);
                            rate.iter_mut().for_each(|r| *r += pull);
                        }
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SystemState {
            phi_high: next_high,
            t: modules[0].t,
            modules,
        })
    }

    pub fn outputs(&self, state: &SystemState) -> Vec<JointOutput> {
        self.modules
            .iter()
            .zip(&state.modules)
            .map(|(net, s)| net.output(s))
            .collect()
    }

    pub fn residuals(&self, state: &SystemState) -> ConstraintResiduals {
        let theta: Vec<Vec<f64>> = self.config.modules.iter().map(|p| p.theta_des.clone()).collect();
        constraint_residuals(&assemble_phase_matrix(state), &theta, &self.config.inter_delay)
            .expect("state dimensions match config")
    }

    /// Largest wrapped intra-module phase error over all modules.
    pub fn max_phase_error(&self, state: &SystemState) -> f64 {
        self.modules
            .iter()
            .zip(&state.modules)
            .map(|(net, s)| net.max_phase_error(s))
            .fold(0.0, f64::max)
    }
}

pub fn step_system(state: &SystemState, config: &SystemConfig, dt: f64) -> Result<SystemState> {
    HierarchicalCpg::new(config.clone())?.step(state, dt)
}
