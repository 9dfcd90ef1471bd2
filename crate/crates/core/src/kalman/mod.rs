//! Deviation-state Kalman filter with state augmentation.
//!
//! The state stacks the last `s + 1` O-D deviations from historical flows,
//! `X_h = [dx_h; dx_{h-1}; ...; dx_{h-s}]` with `s = max(p', q' - 1)`.
//! Transition is the companion form of a diagonal AR(`q'`); the measurement
//! maps the stacked deviations to link-count deviations through the lagged
//! assignment fractions.

pub mod assignment;
pub mod transition;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use assignment::{estimate_assignment, ground_truth_assignment, AssignmentEstimate};
pub use transition::{estimate_transition, TransitionModel};

use crate::error::{Error, Result};
use crate::simulator::Series;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KalmanConfig {
    pub q_prime: usize,
    pub p_prime: usize,
}

impl KalmanConfig {
    pub fn new(q_prime: usize, p_prime: usize) -> Result<Self> {
        if q_prime == 0 {
            return Err(Error::InvalidArgument("q' must be at least 1".into()));
        }
        Ok(Self { q_prime, p_prime })
    }

    pub fn s(&self) -> usize {
        self.p_prime.max(self.q_prime - 1)
    }
}

/// Assignment blocks `a^0..a^p'` and diagonal measurement noise.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    pub a_blocks: Vec<DMatrix<f64>>,
    pub r_diag: DVector<f64>,
}

/// Diagonal sample variance of link-count deviations `y - y^H` over `days`.
pub fn estimate_measurement_noise(link: &Series, hist_link: &Series, days: &[usize]) -> DVector<f64> {
    let n_l = link.width();
    let mut r = DVector::zeros(n_l);
    for s in 0..n_l {
        let devs: Vec<f64> = days
            .iter()
            .flat_map(|&d| (0..link.intervals()).map(move |h| (d, h)))
            .map(|(d, h)| link.at(d, h)[s] - hist_link.at(d, h)[s])
            .collect();
        if devs.len() > 1 {
            let mean = devs.iter().sum::<f64>() / devs.len() as f64;
            r[s] = devs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (devs.len() - 1) as f64;
        }
    }
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedKalmanState {
    pub x: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl AugmentedKalmanState {
    /// Deviation block `i` (`0` is the most recent interval).
    pub fn block(&self, i: usize, n_od: usize) -> DVector<f64> {
        self.x.rows(i * n_od, n_od).into_owned()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.cov.clone().symmetric_eigen().eigenvalues.min()
    }

    pub fn asymmetry(&self) -> f64 {
        (&self.cov - self.cov.transpose()).abs().max()
    }
}

/// Assembled filter matrices.
#[derive(Debug, Clone)]
pub struct KalmanFilter {
    n_od: usize,
    s: usize,
    /// Companion transition `F`.
    f: DMatrix<f64>,
    /// Process covariance `Theta` (Q in the top-left block).
    theta: DMatrix<f64>,
    /// `A = [a^0 a^1 ... a^s]`.
    h: DMatrix<f64>,
    r: DMatrix<f64>,
    p0: DMatrix<f64>,
}

pub const JITTER: f64 = 1e-9;

impl KalmanFilter {
    pub fn new(transition: &TransitionModel, measurement: &MeasurementModel, config: KalmanConfig) -> Result<Self> {
        let n_od = transition.n_od();
        if transition.q_prime() != config.q_prime {
            return Err(Error::InvalidArgument(format!(
                "transition has q'={}, config says {}",
                transition.q_prime(),
                config.q_prime
            )));
        }
        if measurement.a_blocks.len() > config.p_prime + 1 {
            return Err(Error::InvalidArgument(format!(
                "{} assignment blocks exceed p'={}",
                measurement.a_blocks.len(),
                config.p_prime
            )));
        }
        let n_l = measurement.r_diag.len();
        if measurement.a_blocks.iter().any(|a| a.shape() != (n_l, n_od)) {
            return Err(Error::InvalidArgument(format!("assignment blocks must be {n_l}x{n_od}")));
        }
        let s = config.s();
        let dim = n_od * (s + 1);

        let mut f = DMatrix::zeros(dim, dim);
        for (p, coef) in transition.f_blocks.iter().enumerate() {
            for r in 0..n_od {
                f[(r, p * n_od + r)] = coef[r];
            }
        }
        for i in 1..=s {
            for r in 0..n_od {
                f[(i * n_od + r, (i - 1) * n_od + r)] = 1.0;
            }
        }

        let mut theta = DMatrix::zeros(dim, dim);
        let mut p0 = DMatrix::zeros(dim, dim);
        for r in 0..n_od {
            theta[(r, r)] = transition.q_diag[r];
            for i in 0..=s {
                p0[(i * n_od + r, i * n_od + r)] = transition.q_diag[r];
            }
        }

        let mut h = DMatrix::zeros(n_l, dim);
        for (p, a) in measurement.a_blocks.iter().enumerate() {
            h.view_mut((0, p * n_od), (n_l, n_od)).copy_from(a);
        }
        let r = DMatrix::from_diagonal(&measurement.r_diag);
        Ok(Self { n_od, s, f, theta, h, r, p0 })
    }

    pub fn n_od(&self) -> usize {
        self.n_od
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn with_initial_covariance(mut self, p0: DMatrix<f64>) -> Self {
        self.p0 = p0;
        self
    }

    /// Zero deviations with the block-diagonal `Q` covariance.
    pub fn initial_state(&self) -> AugmentedKalmanState {
        AugmentedKalmanState { x: DVector::zeros(self.f.nrows()), cov: self.p0.clone() }
    }

    /// `x <- F x`, `P <- F P F' + Theta`.
    pub fn predict(&self, state: &AugmentedKalmanState) -> AugmentedKalmanState {
        let x = &self.f * &state.x;
        let cov = &self.f * &state.cov * self.f.transpose() + &self.theta;
        AugmentedKalmanState { x, cov: symmetrize(cov) }
    }

    /// Update on `Y = y_obs - y_hist` with a Joseph-form covariance update.
    pub fn update(&self, state: &AugmentedKalmanState, y_obs: &[f64], y_hist: &[f64]) -> Result<AugmentedKalmanState> {
        let n_l = self.h.nrows();
        if y_obs.len() != n_l || y_hist.len() != n_l {
            return Err(Error::InvalidArgument(format!(
                "measurement has {} / {} entries, model expects {n_l}",
                y_obs.len(),
                y_hist.len()
            )));
        }
        let y = DVector::from_iterator(n_l, y_obs.iter().zip(y_hist).map(|(o, h)| o - h));
        let innovation = y - &self.h * &state.x;
        let ph_t = &state.cov * self.h.transpose();
        let s = &self.h * &ph_t + &self.r;
        let chol = match symmetrize(s.clone()).cholesky() {
            Some(c) => c,
            None => symmetrize(s + DMatrix::identity(n_l, n_l) * JITTER).cholesky().ok_or_else(|| {
                Error::Numerical(format!("innovation covariance is not positive definite even after {JITTER:e} jitter"))
            })?,
        };
        // K = P H' S^-1, solved as S K' = H P.
        let gain = chol.solve(&ph_t.transpose()).transpose();
        let x = &state.x + &gain * innovation;
        let dim = state.x.len();
        let i_kh = DMatrix::identity(dim, dim) - &gain * &self.h;
        let cov = &i_kh * &state.cov * i_kh.transpose() + &gain * &self.r * gain.transpose();
        Ok(AugmentedKalmanState { x, cov: symmetrize(cov) })
    }

    /// Filters one day and extrapolates.
    ///
    /// The prior for interval 0 is [`initial_state`](Self::initial_state);
    /// every later interval is predicted then updated. After the update at
    /// interval `h`, the state is pushed forward `step` times to forecast
    /// interval `h + step`; historical flows are added back and the result
    /// clamped at zero. Returns `out[step_idx][t]` for each requested step,
    /// `None` where `t < step`.
    pub fn run_day(
        &self,
        hist_od: &[&[f64]],
        y_obs: &[&[f64]],
        y_hist: &[&[f64]],
        steps: &[usize],
    ) -> Result<Vec<Vec<Option<Vec<f64>>>>> {
        let t = y_obs.len();
        if hist_od.len() != t || y_hist.len() != t {
            return Err(Error::InvalidArgument("day inputs must cover the same intervals".into()));
        }
        let mut out = vec![vec![None; t]; steps.len()];
        let mut state = self.initial_state();
        for h in 0..t {
            if h > 0 {
                state = self.predict(&state);
            }
            state = self.update(&state, y_obs[h], y_hist[h])?;
            for (si, &step) in steps.iter().enumerate() {
                let target = h + step;
                if step == 0 || target >= t {
                    continue;
                }
                let mut x = state.x.clone();
                for _ in 0..step {
                    x = &self.f * x;
                }
                let pred = hist_od[target].iter().zip(x.rows(0, self.n_od).iter()).map(|(xh, d)| (xh + d).max(0.0)).collect();
                out[si][target] = Some(pred);
            }
        }
        Ok(out)
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}
