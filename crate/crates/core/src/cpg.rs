//! Single-module oscillator network.
//!
//! Each module runs `n` phase oscillators. The phase differences
//! `theta = T phi` are driven toward a target `theta_des` by the negative
//! gradient of the quadratic potential
//!
//! ```text
//! V(psi) = sum_i mu_i (psi_i - psi_des_i)^2,    psi = S theta,  psi_des = S theta_des
//! ```
//!
//! which, pulled back to phase space through the pseudoinverse of `T`, gives
//! the linear law `phi' = omega + A phi + B theta_des`. Amplitudes follow a
//! critically damped second-order system and the joint command is
//! `q = r sin(phi) + C`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::angle::{check_finite, wrap, JOINT_LIMIT, TWO_PI};
use crate::error::{Error, Result};
use crate::integrate::rk4_step;

pub const DEFAULT_MU: f64 = 5.0;
pub const DEFAULT_AMPLITUDE_RATE: f64 = 20.0;
pub const DEFAULT_DT: f64 = 0.002;

/// Slack on the `|R| + |C| <= 3pi/4` feasibility check, so limits written
/// as `3/4 pi` in a catalog are not rejected by rounding.
const LIMIT_SLACK: f64 = 1e-12;

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidDimension(format!(
            "oscillator count must be >= 2, got {n}"
        )));
    }
    Ok(())
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::InvalidDimension(format!(
            "{what}: expected length {want}, got {got}"
        )));
    }
    Ok(())
}

/// Finite-difference matrix `T`, `(n-1) x n`, with `(T phi)_i = phi_i - phi_{i+1}`.
pub fn build_difference_matrix(n: usize) -> Result<DMatrix<f64>> {
    check_n(n)?;
    Ok(DMatrix::from_fn(n - 1, n, |i, j| {
        if j == i {
            1.0
        } else if j == i + 1 {
            -1.0
        } else {
            0.0
        }
    }))
}

/// Map `S` from phase differences to the auxiliary coordinate:
/// `psi_1 = theta_1`, `psi_{n-1} = theta_{n-1}` and
/// `psi_i = theta_{i-1} - theta_i` in between.
pub fn build_psi_map(n: usize) -> Result<DMatrix<f64>> {
    check_n(n)?;
    let k = n - 1;
    let mut s = DMatrix::zeros(k, k);
    for i in 0..k {
        if i == 0 || i == k - 1 {
            s[(i, i)] = 1.0;
        } else {
            s[(i, i - 1)] = 1.0;
            s[(i, i)] = -1.0;
        }
    }
    Ok(s)
}

/// `psi = S theta` for a network of `theta.len() + 1` oscillators.
pub fn compute_psi(theta: &[f64]) -> Result<Vec<f64>> {
    if theta.is_empty() {
        return Err(Error::InvalidDimension(
            "phase-difference vector must be non-empty".into(),
        ));
    }
    let s = build_psi_map(theta.len() + 1)?;
    Ok((s * DVector::from_column_slice(theta)).as_slice().to_vec())
}

/// Quadratic potential `sum mu_i (psi_i - psi_des_i)^2`.
pub fn potential(psi: &[f64], psi_des: &[f64], mu: &[f64]) -> Result<f64> {
    check_len("psi_des", psi_des.len(), psi.len())?;
    check_len("mu", mu.len(), psi.len())?;
    Ok(psi
        .iter()
        .zip(psi_des)
        .zip(mu)
        .map(|((p, d), m)| m * (p - d).powi(2))
        .sum())
}

/// Closed-form solution of `r'' = a [ (a/4)(R - r) - r' ]`, whose
/// characteristic roots are both `-a/2`.
pub fn amplitude_closed_form(r0: f64, r_dot0: f64, target: f64, a: f64, t: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "amplitude rate must be > 0, got {a}"
        )));
    }
    if t < 0.0 {
        return Err(Error::InvalidParameter(format!("time must be >= 0, got {t}")));
    }
    let e0 = r0 - target;
    Ok(target + (-0.5 * a * t).exp() * (e0 + (0.5 * a * e0 + r_dot0) * t))
}

/// Linear operators of the phase law for one network size and gain vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingOperators {
    /// `T`, `(n-1) x n`.
    pub diff: DMatrix<f64>,
    /// `S`, `(n-1) x (n-1)`.
    pub psi_map: DMatrix<f64>,
    /// `T^+ = T^T (T T^T)^-1`, `n x (n-1)`.
    pub diff_pinv: DMatrix<f64>,
    /// `A = -2 T^+ S^-1 M S T`, `n x n`.
    pub a_eff: DMatrix<f64>,
    /// `B = 2 T^+ S^-1 M S`, `n x (n-1)`.
    pub b_eff: DMatrix<f64>,
}

impl CouplingOperators {
    pub fn new(n: usize, mu: &[f64]) -> Result<Self> {
        check_n(n)?;
        check_len("mu", mu.len(), n - 1)?;
        if let Some(bad) = mu.iter().find(|m| !(**m > 0.0) || !m.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "convergence coefficients must be > 0, got {bad}"
            )));
        }
        let diff = build_difference_matrix(n)?;
        let psi_map = build_psi_map(n)?;
        let gram = &diff * diff.transpose();
        let diff_pinv = diff.transpose()
            * gram
                .try_inverse()
                .ok_or(Error::Singular("T T^T is not invertible"))?;
        let psi_inv = psi_map
            .clone()
            .try_inverse()
            .ok_or(Error::Singular("psi map is not invertible"))?;
        let m = DMatrix::from_diagonal(&DVector::from_column_slice(mu));
        let core = &diff_pinv * psi_inv * m * &psi_map * 2.0;
        let a_eff = -(&core * &diff);
        Ok(Self {
            diff,
            psi_map,
            diff_pinv,
            a_eff,
            b_eff: core,
        })
    }

    pub fn n(&self) -> usize {
        self.diff.ncols()
    }
}

/// `(A_eff, B_eff)` for `n` oscillators with gains `mu`.
pub fn build_coupling(n: usize, mu: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let ops = CouplingOperators::new(n, mu)?;
    Ok((ops.a_eff, ops.b_eff))
}

/// Per-module CPG constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillatorNetworkParams {
    pub n: usize,
    /// Natural frequency per oscillator, rad/s.
    pub omega: Vec<f64>,
    /// Phase convergence gains, length `n - 1`.
    pub mu: Vec<f64>,
    /// Amplitude convergence rates, length `n`, 1/s.
    pub a: Vec<f64>,
    /// Desired amplitudes `R`, rad.
    pub amplitude: Vec<f64>,
    /// Constant offsets `C`, rad.
    pub offset: Vec<f64>,
    /// Desired phase differences, normalized into `(-pi, pi]`.
    pub theta_des: Vec<f64>,
    /// Enforce `|R| + |C| <= 3pi/4` and clamp joint outputs to the joint range.
    pub joint_limits: bool,
}

impl OscillatorNetworkParams {
    /// Parameters with a shared frequency `omega` and default gains.
    pub fn new(theta_des: &[f64], amplitude: &[f64], offset: &[f64], omega: f64) -> Result<Self> {
        let n = amplitude.len();
        let params = Self {
            n,
            omega: vec![omega; n],
            mu: vec![DEFAULT_MU; n.saturating_sub(1)],
            a: vec![DEFAULT_AMPLITUDE_RATE; n],
            amplitude: amplitude.to_vec(),
            offset: offset.to_vec(),
            theta_des: theta_des.iter().copied().map(wrap).collect(),
            joint_limits: true,
        };
        params.validate()?;
        Ok(params)
    }

    /// Shared frequency from a gait period, `omega = 2 pi / period`.
    pub fn from_period(
        theta_des: &[f64],
        amplitude: &[f64],
        offset: &[f64],
        period: f64,
    ) -> Result<Self> {
        if !(period > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gait period must be > 0, got {period}"
            )));
        }
        Self::new(theta_des, amplitude, offset, TWO_PI / period)
    }

    pub fn with_mu(mut self, mu: f64) -> Result<Self> {
        self.mu = vec![mu; self.n - 1];
        self.validate()?;
        Ok(self)
    }

    pub fn with_amplitude_rate(mut self, a: f64) -> Result<Self> {
        self.a = vec![a; self.n];
        self.validate()?;
        Ok(self)
    }

    pub fn with_joint_limits(mut self, enabled: bool) -> Result<Self> {
        self.joint_limits = enabled;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        check_n(self.n)?;
        check_len("omega", self.omega.len(), self.n)?;
        check_len("mu", self.mu.len(), self.n - 1)?;
        check_len("a", self.a.len(), self.n)?;
        check_len("amplitude", self.amplitude.len(), self.n)?;
        check_len("offset", self.offset.len(), self.n)?;
        check_len("theta_des", self.theta_des.len(), self.n - 1)?;
        check_finite(&self.omega, "omega")?;
        check_finite(&self.amplitude, "amplitude")?;
        check_finite(&self.offset, "offset")?;
        check_finite(&self.theta_des, "theta_des")?;
        if let Some(m) = self.mu.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
            return Err(Error::InvalidParameter(format!("mu must be > 0, got {m}")));
        }
        if let Some(a) = self.a.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidParameter(format!("a must be > 0, got {a}")));
        }
        if let Some(t) = self.theta_des.iter().find(|t| !(**t > -PI && **t <= PI)) {
            return Err(Error::InvalidParameter(format!(
                "theta_des entry {t} outside (-pi, pi]"
            )));
        }
        if self.joint_limits {
            for (i, (r, c)) in self.amplitude.iter().zip(&self.offset).enumerate() {
                if r.abs() + c.abs() > JOINT_LIMIT + LIMIT_SLACK {
                    return Err(Error::InvalidParameter(format!(
                        "joint {}: |R| + |C| = {:.6} exceeds 3pi/4",
                        i + 1,
                        r.abs() + c.abs()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Instantaneous state of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    /// Unwrapped phases, rad.
    pub phi: Vec<f64>,
    pub r: Vec<f64>,
    pub r_dot: Vec<f64>,
    pub t: f64,
}

impl NetworkState {
    pub fn zeros(n: usize) -> Self {
        Self {
            phi: vec![0.0; n],
            r: vec![0.0; n],
            r_dot: vec![0.0; n],
            t: 0.0,
        }
    }

    /// Phases drawn uniformly from `[-pi, pi]`, zero amplitude.
    pub fn random_phases(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            phi: (0..n).map(|_| rng.random_range(-PI..=PI)).collect(),
            ..Self::zeros(n)
        }
    }

    pub fn n(&self) -> usize {
        self.phi.len()
    }

    pub fn is_finite(&self) -> bool {
        self.phi
            .iter()
            .chain(&self.r)
            .chain(&self.r_dot)
            .all(|v| v.is_finite())
            && self.t.is_finite()
    }

    fn pack(&self) -> DVector<f64> {
        DVector::from_iterator(
            3 * self.n(),
            self.phi.iter().chain(&self.r).chain(&self.r_dot).copied(),
        )
    }

    fn unpack(y: &DVector<f64>, t: f64) -> Self {
        let n = y.len() / 3;
        let s = y.as_slice();
        Self {
            phi: s[..n].to_vec(),
            r: s[n..2 * n].to_vec(),
            r_dot: s[2 * n..].to_vec(),
            t,
        }
    }
}

/// Joint angles for one network, with a flag per joint that was clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct JointOutput {
    pub q: Vec<f64>,
    pub clamped: Vec<bool>,
}

impl JointOutput {
    pub fn any_clamped(&self) -> bool {
        self.clamped.iter().any(|c| *c)
    }
}

/// `q_i = r_i sin(phi_i) + C_i`, clamped to the joint range when limits are on.
pub fn output(state: &NetworkState, params: &OscillatorNetworkParams) -> JointOutput {
    let mut clamped = vec![false; state.n()];
    let q = state
        .phi
        .iter()
        .zip(&state.r)
        .zip(&params.offset)
        .enumerate()
        .map(|(i, ((phi, r), c))| {
            let q = r * phi.sin() + c;
            if params.joint_limits && q.abs() > JOINT_LIMIT {
                clamped[i] = true;
                q.clamp(-JOINT_LIMIT, JOINT_LIMIT)
            } else {
                q
            }
        })
        .collect();
    JointOutput { q, clamped }
}

/// A parameter set together with its prebuilt coupling operators.
#[derive(Debug, Clone)]
pub struct OscillatorNetwork {
    params: OscillatorNetworkParams,
    ops: CouplingOperators,
    omega: DVector<f64>,
    theta_des: DVector<f64>,
    /// `B_eff theta_des`, constant for the lifetime of the network.
    bias: DVector<f64>,
}

impl OscillatorNetwork {
    pub fn new(params: OscillatorNetworkParams) -> Result<Self> {
        params.validate()?;
        let ops = CouplingOperators::new(params.n, &params.mu)?;
        let theta_des = DVector::from_column_slice(&params.theta_des);
        let bias = &ops.b_eff * &theta_des;
        Ok(Self {
            omega: DVector::from_column_slice(&params.omega),
            theta_des,
            bias,
            ops,
            params,
        })
    }

    pub fn params(&self) -> &OscillatorNetworkParams {
        &self.params
    }

    pub fn operators(&self) -> &CouplingOperators {
        &self.ops
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    /// `omega + A_eff phi + B_eff theta_des`.
    pub fn phase_rate(&self, phi: &[f64]) -> DVector<f64> {
        self.phase_rate_vec(&DVector::from_column_slice(phi))
    }

    fn phase_rate_vec(&self, phi: &DVector<f64>) -> DVector<f64> {
        &self.omega + &self.ops.a_eff * phi + &self.bias
    }

    pub fn step(&self, state: &NetworkState, dt: f64) -> Result<NetworkState> {
        self.step_driven(state, dt, |_, _, _| {})
    }

    /// One integrator step with an extra phase-rate input. `drive(c, phi, rate)`
    /// is called at every stage with the stage offset `c` (fraction of `dt`)
    /// and may add to `rate`.
    pub fn step_driven<D>(&self, state: &NetworkState, dt: f64, mut drive: D) -> Result<NetworkState>
    where
        D: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = self.n();
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
        }
        check_len("phi", state.phi.len(), n)?;
        check_len("r", state.r.len(), n)?;
        check_len("r_dot", state.r_dot.len(), n)?;
        if !state.is_finite() {
            return Err(Error::NumericDivergence { t: state.t });
        }
        let y = state.pack();
        let next = rk4_step(&y, dt, |c, y| {
            let phi = y.rows(0, n).into_owned();
            let mut dy = DVector::zeros(3 * n);
            let mut rate = self.phase_rate_vec(&phi);
            drive(c, phi.as_slice(), rate.as_mut_slice());
            dy.rows_mut(0, n).copy_from(&rate);
            for i in 0..n {
                let (r, r_dot) = (y[n + i], y[2 * n + i]);
                let a = self.params.a[i];
                dy[n + i] = r_dot;
                dy[2 * n + i] = a * (0.25 * a * (self.params.amplitude[i] - r) - r_dot);
            }
            dy
        });
        let out = NetworkState::unpack(&next, state.t + dt);
        if !out.is_finite() {
            return Err(Error::NumericDivergence { t: out.t });
        }
        Ok(out)
    }

    pub fn output(&self, state: &NetworkState) -> JointOutput {
        output(state, &self.params)
    }

    /// Raw phase differences `T phi`, unwrapped.
    pub fn phase_differences(&self, state: &NetworkState) -> Vec<f64> {
        state.phi.windows(2).map(|w| w[0] - w[1]).collect()
    }

    /// `wrap(T phi - theta_des)` per difference.
    pub fn phase_error(&self, state: &NetworkState) -> Vec<f64> {
        self.phase_differences(state)
            .iter()
            .zip(self.theta_des.iter())
            .map(|(d, t)| wrap(d - t))
            .collect()
    }

    pub fn max_phase_error(&self, state: &NetworkState) -> f64 {
        self.phase_error(state)
            .into_iter()
            .fold(0.0, |m, e| m.max(e.abs()))
    }

    /// Potential of the current phases, evaluated on `S T phi` against `S theta_des`.
    pub fn potential(&self, state: &NetworkState) -> f64 {
        let theta = DVector::from_vec(self.phase_differences(state));
        let psi = &self.ops.psi_map * theta;
        let psi_des = &self.ops.psi_map * &self.theta_des;
        potential(psi.as_slice(), psi_des.as_slice(), &self.params.mu)
            .expect("operator dimensions are consistent")
    }
}

/// Build the operators for `params` and advance `state` by one step.
pub fn step(state: &NetworkState, params: &OscillatorNetworkParams, dt: f64) -> Result<NetworkState> {
    OscillatorNetwork::new(params.clone())?.step(state, dt)
}
