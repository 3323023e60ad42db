//! Kalman filter over the carrier-phase triple [θ, θ̇, θ̈].
//!
//! The state propagates with the constant-jerk-noise model
//!
//! ```text
//! F = | 1  T  T²/2 |        Q = q_w · | T⁵/20  T⁴/8  T³/6 |
//!     | 0  1  T    |                  | T⁴/8   T³/3  T²/2 |
//!     | 0  0  1    |                  | T³/6   T²/2  T    |
//! ```
//!
//! and the scalar measurement observes θ̇ (H = [0 1 0]). The correlator
//! measures the residual Doppler of a wiped-off frame directly, so the
//! update consumes the innovation 2πΔf rather than an absolute θ̇ reading.
//! θ is kept unwrapped; wrap only where phases are compared.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::capture::FrameSignal;
use crate::error::{Error, Result};

/// Tracker state: phase triple, covariance, and the frame counter.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    /// [θ rad, θ̇ rad/s, θ̈ rad/s²]
    pub x: Vector3<f64>,
    pub p: Matrix3<f64>,
    pub k: usize,
}

impl TrackState {
    pub fn doppler_hz(&self) -> f64 {
        self.x[1] / (2.0 * std::f64::consts::PI)
    }

    pub fn doppler_rate_hz_s(&self) -> f64 {
        self.x[2] / (2.0 * std::f64::consts::PI)
    }
}

/// Filter configuration. The defaults are the working point published for
/// Ku-band frame tracking: q_w = 1e-28 rad²/s⁵, R = 70 rad²/s²,
/// σ_θ̇₀ = 40π rad/s, σ_θ̈₀ = 8000π rad/s², zero initial state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KFConfig {
    /// Frame period T_fr, s.
    pub t_fr: f64,
    /// Process noise intensity q_w, rad²/s⁵.
    pub q_w: f64,
    /// Measurement noise variance R, rad²/s².
    pub r: f64,
    /// Initial state [θ₀, θ̇₀, θ̈₀].
    pub x0: [f64; 3],
    /// Initial standard deviations (σ_θ₀, σ_θ̇₀, σ_θ̈₀); P₀ is diagonal.
    pub sigma0: [f64; 3],
}

impl Default for KFConfig {
    fn default() -> Self {
        KFConfig {
            t_fr: 1.0 / 750.0,
            q_w: 1e-28,
            r: 70.0,
            x0: [0.0; 3],
            sigma0: [0.0, 40.0 * std::f64::consts::PI, 8000.0 * std::f64::consts::PI],
        }
    }
}

impl KFConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_fr > 0.0 && self.q_w >= 0.0 && self.r > 0.0) {
            return Err(Error::invalid(
                "KF config requires t_fr > 0, q_w >= 0, r > 0",
            ));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> TrackState {
        let s = self.sigma0;
        TrackState {
            x: Vector3::from(self.x0),
            p: Matrix3::from_diagonal(&Vector3::new(s[0] * s[0], s[1] * s[1], s[2] * s[2])),
            k: 0,
        }
    }

    pub fn transition(&self) -> Matrix3<f64> {
        let t = self.t_fr;
        Matrix3::new(1.0, t, 0.5 * t * t, 0.0, 1.0, t, 0.0, 0.0, 1.0)
    }

    pub fn process_noise(&self) -> Matrix3<f64> {
        let t = self.t_fr;
        let (t2, t3, t4, t5) = (t * t, t * t * t, t * t * t * t, t * t * t * t * t);
        self.q_w
            * Matrix3::new(
                t5 / 20.0,
                t4 / 8.0,
                t3 / 6.0,
                t4 / 8.0,
                t3 / 3.0,
                t2 / 2.0,
                t3 / 6.0,
                t2 / 2.0,
                t,
            )
    }
}

fn symmetrize(p: &mut Matrix3<f64>) {
    let pt = p.transpose();
    *p = (*p + pt) * 0.5;
}

/// Time update: x ← Fx, P ← FPFᵀ + Q. Advances the frame counter.
pub fn predict(state: &TrackState, cfg: &KFConfig) -> TrackState {
    let f = cfg.transition();
    let x = f * state.x;
    let mut p = f * state.p * f.transpose() + cfg.process_noise();
    symmetrize(&mut p);
    TrackState {
        x,
        p,
        k: state.k + 1,
    }
}

/// Remove the predicted phase trajectory from a frame: sample `n` is
/// multiplied by exp(−j(θ + θ̇·nT_s + ½θ̈·(nT_s)²)) using the a-priori
/// state.
pub fn wipe_off(frame: &FrameSignal, a_priori: &TrackState, t_s: f64) -> FrameSignal {
    let (theta, theta_dot, theta_ddot) = (a_priori.x[0], a_priori.x[1], a_priori.x[2]);
    let samples = frame
        .samples
        .iter()
        .enumerate()
        .map(|(n, &s)| {
            let t = n as f64 * t_s;
            let phase = theta + theta_dot * t + 0.5 * theta_ddot * t * t;
            s * Complex64::from_polar(1.0, -phase)
        })
        .collect();
    FrameSignal {
        samples,
        frame_index: frame.frame_index,
    }
}

/// Measurement update with the frequency innovation ỹ = 2πΔf. Joseph-form
/// covariance update for robustness at small R / large P₀.
pub fn update(a_priori: &TrackState, delta_f_hz: f64, cfg: &KFConfig) -> Result<TrackState> {
    if !delta_f_hz.is_finite() {
        return Err(Error::NonFinite {
            what: "KF frequency innovation",
        });
    }
    let p = &a_priori.p;
    let innovation = 2.0 * std::f64::consts::PI * delta_f_hz;
    let s = p[(1, 1)] + cfg.r;
    let gain = Vector3::new(p[(0, 1)], p[(1, 1)], p[(2, 1)]) / s;
    let x = a_priori.x + gain * innovation;
    // (I - KH) with H = [0 1 0]
    let mut ikh = Matrix3::identity();
    ikh[(0, 1)] = -gain[0];
    ikh[(1, 1)] = 1.0 - gain[1];
    ikh[(2, 1)] = -gain[2];
    let mut p_post = ikh * p * ikh.transpose() + cfg.r * gain * gain.transpose();
    symmetrize(&mut p_post);
    Ok(TrackState {
        x,
        p: p_post,
        k: a_priori.k,
    })
}

/// Wrap a phase to (−π, π].
pub fn wrap_phase(phi: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = phi.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

/// One row of the per-iteration trace (`k,theta,theta_dot,theta_ddot,
/// residual_hz,accepted` in the CSV form).
#[derive(Debug, Clone, Copy)]
pub struct KfTraceRow {
    pub k: usize,
    pub theta: f64,
    pub theta_dot: f64,
    pub theta_ddot: f64,
    pub residual_hz: f64,
    pub accepted: bool,
}

pub fn write_kf_trace(path: &std::path::Path, rows: &[KfTraceRow]) -> Result<()> {
    let mut out = String::from("k,theta,theta_dot,theta_ddot,residual_hz,accepted\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.k,
            r.theta,
            r.theta_dot,
            r.theta_ddot,
            r.residual_hz,
            r.accepted as u8
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
