//! Synthetic capture generation with a known truth log.
//!
//! Each active frame k is the planted beacon with data-filled cells,
//! circularly shifted by the true code phase d_k, rotated by the phase
//! trajectory Θ_k[n] = θ_k + θ̇_k·nT_s + ½θ̈_k·(nT_s)², plus complex
//! white Gaussian noise. Silent frames are pure noise. The dynamics
//! inside one frame are the frame-start Taylor triple — the same model
//! the tracker assumes — so estimator error can be isolated from model
//! error.
//!
//! θ̇_k carries the geometric Doppler (2π f_D with f_D from the orbit
//! module, logged exactly in the truth log) plus the receiver clock-drift
//! offset −δṫ·f_c when configured. θ_k accumulates frame to frame
//! through the same transition the tracker uses.
//!
//! `frame_stride_s` decouples scenario time from frame time: a 600 s
//! scenario sampled at one frame per second stays desk-sized. Frames are
//! independent given the truth log, so synthesis parallelizes per frame.

use std::path::Path;

use nalgebra::Vector3;
use num_complex::Complex64;
use rand::prelude::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beacon::{build_beacon, ofdm_modulate, BeaconPreset, PresetKind, QPSK};
use crate::capture::{CaptureMeta, CaptureWriter, FrameSignal};
use crate::correlator::circshift;
use crate::error::{Error, Result};
use crate::orbit::{
    elevation_angle, predicted_doppler, predicted_doppler_rate, propagate, OrbitSpec,
    SPEED_OF_LIGHT,
};

/// Which SV (if any) transmits in a given frame. At most one SV is active
/// per frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DutyCycle {
    /// One SV transmits every frame.
    Always { sv_id: String },
    /// Nobody transmits; the capture is pure noise.
    Silent,
    /// One SV transmits in bursts: `active_len` frames on, `silent_len`
    /// frames off.
    Burst {
        sv_id: String,
        active_len: usize,
        silent_len: usize,
    },
    /// SVs take turns in blocks of `block_len` frames.
    Alternate { sv_ids: Vec<String>, block_len: usize },
    /// The SV with the highest elevation transmits, if any clears the
    /// mask.
    BestVisible { min_elevation_deg: f64 },
}

/// Content of non-pilot OFDM cells in active frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFill {
    /// Fresh 4-PSK data every frame — the averaging workload.
    Random,
    /// Leave them empty (degenerate recovery tests).
    Silent,
}

/// Frame dynamics source.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsModel {
    /// Doppler and Doppler rate from the configured orbits.
    Geometric,
    /// Planted linear Doppler ramp (test scenarios): the frame-k Doppler
    /// is f_d_hz + f_d_rate_hz_s·(t_k − t_0), a consistent quadratic
    /// carrier phase.
    Planted {
        f_d_hz: f64,
        f_d_rate_hz_s: f64,
        theta0_rad: f64,
    },
}

/// Code-phase source.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodePhaseModel {
    /// d_k = round(range/c / T_s) mod N_fr, plus an optional random walk
    /// (samples/frame std) for non-deterministic code phase behavior.
    Geometric { walk_sigma: f64 },
    /// Fixed shift in samples.
    Fixed { d: usize },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BeaconConfig {
    pub preset: PresetKind,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub rx_position_ecef_m: [f64; 3],
    pub orbits: Vec<OrbitSpec>,
    pub k_frames: usize,
    /// Per-sample beacon power over noise power, dB. `None` disables
    /// noise entirely.
    pub snr_db: Option<f64>,
    pub duty_cycle: DutyCycle,
    pub data_fill: DataFill,
    pub dynamics: DynamicsModel,
    pub code_phase: CodePhaseModel,
    /// Receiver clock bias (s): shifts the capture's claimed start time.
    pub clock_bias_s: f64,
    /// Receiver clock drift (s/s): offsets every planted carrier by
    /// −δṫ·f_c.
    pub clock_drift_s_per_s: f64,
    /// Scenario time of frame 0.
    pub start_time_s: f64,
    /// True-time spacing between consecutive frames; `None` means
    /// contiguous frames (T_fr).
    pub frame_stride_s: Option<f64>,
    pub beacon: BeaconConfig,
    pub f_c_hz: f64,
    /// Multiplier applied before int16 quantization on write.
    pub write_scale: f64,
    /// Seed for data fill, noise, code walk, and initial carrier phases.
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_frames == 0 {
            return Err(Error::invalid("k_frames must be >= 1"));
        }
        match &self.duty_cycle {
            DutyCycle::Always { sv_id } | DutyCycle::Burst { sv_id, .. } => {
                if !self.orbits.iter().any(|o| &o.sv_id == sv_id) {
                    return Err(Error::invalid(format!("duty cycle names unknown SV {sv_id}")));
                }
            }
            DutyCycle::Alternate { sv_ids, block_len } => {
                if *block_len == 0 {
                    return Err(Error::invalid("alternate block_len must be >= 1"));
                }
                for sv in sv_ids {
                    if !self.orbits.iter().any(|o| &o.sv_id == sv) {
                        return Err(Error::invalid(format!("duty cycle names unknown SV {sv}")));
                    }
                }
            }
            _ => {}
        }
        for orbit in &self.orbits {
            orbit.validate()?;
        }
        Ok(())
    }
}

/// Per-frame planted truth. `f_d_hz` is the geometric Doppler of the
/// active SV at the frame start (exactly `orbit::predicted_doppler`);
/// clock-drift offsets are recorded separately in the log header data.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRow {
    pub k: usize,
    pub sv_id: String,
    pub f_d_hz: f64,
    pub f_d_rate_hz_s: f64,
    pub d_k_samples: usize,
    pub theta_k_rad: f64,
    pub active: bool,
}

#[derive(Debug, Clone)]
pub struct TruthLog {
    pub rows: Vec<TruthRow>,
    /// Total noise power per complex sample (σ²); 0 when noise-free.
    pub noise_power: f64,
    /// Mean per-sample beacon power over the frame.
    pub beacon_power: f64,
    /// Constant carrier offset from receiver clock drift, Hz.
    pub clock_doppler_hz: f64,
    pub t_fr: f64,
    pub stride_s: f64,
    pub start_time_s: f64,
}

impl TruthLog {
    /// Scenario time of frame k.
    pub fn time_of(&self, k: usize) -> f64 {
        self.start_time_s + k as f64 * self.stride_s
    }

    pub fn active_count(&self) -> usize {
        self.rows.iter().filter(|r| r.active).count()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from("k,sv_id,f_d_hz,f_d_rate_hz_s,d_k_samples,theta_k_rad,active\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.k, r.sv_id, r.f_d_hz, r.f_d_rate_hz_s, r.d_k_samples, r.theta_k_rad, r.active as u8
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Vec<TruthRow>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(Error::Csv {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    what: format!("expected 7 fields, got {}", f.len()),
                });
            }
            let parse_err = |what: String| Error::Csv {
                path: path.to_path_buf(),
                line: lineno + 1,
                what,
            };
            rows.push(TruthRow {
                k: f[0].parse().map_err(|e| parse_err(format!("k: {e}")))?,
                sv_id: f[1].to_string(),
                f_d_hz: f[2].parse().map_err(|e| parse_err(format!("f_d_hz: {e}")))?,
                f_d_rate_hz_s: f[3]
                    .parse()
                    .map_err(|e| parse_err(format!("f_d_rate: {e}")))?,
                d_k_samples: f[4].parse().map_err(|e| parse_err(format!("d_k: {e}")))?,
                theta_k_rad: f[5].parse().map_err(|e| parse_err(format!("theta: {e}")))?,
                active: f[6].trim() == "1",
            });
        }
        Ok(rows)
    }
}

/// A fully resolved scenario: config, beacon preset, and derived frame
/// geometry.
pub struct Scenario {
    pub cfg: ScenarioConfig,
    pub preset: BeaconPreset,
    /// Planted beacon, length n_fr.
    pub beacon: Vec<Complex64>,
    pub n_fr: usize,
    pub t_s: f64,
    pub t_fr: f64,
}

impl Scenario {
    pub fn new(cfg: ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let preset = BeaconPreset::build(cfg.beacon.preset, cfg.beacon.seed);
        let n_fr = preset.n_fr;
        let t_s = 1.0 / preset.sample_rate_hz;
        let beacon = build_beacon(&preset.spec, n_fr)?;
        Ok(Scenario {
            cfg,
            preset,
            beacon,
            n_fr,
            t_s,
            t_fr: n_fr as f64 * t_s,
        })
    }

    pub fn stride_s(&self) -> f64 {
        self.cfg.frame_stride_s.unwrap_or(self.t_fr)
    }

    /// Mean per-sample beacon power over the frame (the SNR reference).
    pub fn beacon_power(&self) -> f64 {
        self.beacon.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.n_fr as f64
    }

    pub fn noise_power(&self) -> f64 {
        match self.cfg.snr_db {
            Some(snr) => self.beacon_power() / 10f64.powf(snr / 10.0),
            None => 0.0,
        }
    }

    pub fn capture_meta(&self) -> CaptureMeta {
        let mut meta = CaptureMeta::new(self.preset.sample_rate_hz, self.cfg.f_c_hz);
        meta.start_time_utc = self.cfg.start_time_s + self.cfg.clock_bias_s;
        meta
    }

    fn active_sv(&self, k: usize, t: f64) -> Option<&OrbitSpec> {
        match &self.cfg.duty_cycle {
            DutyCycle::Silent => None,
            DutyCycle::Always { sv_id } => self.cfg.orbits.iter().find(|o| &o.sv_id == sv_id),
            DutyCycle::Burst {
                sv_id,
                active_len,
                silent_len,
            } => {
                if k % (active_len + silent_len) < *active_len {
                    self.cfg.orbits.iter().find(|o| &o.sv_id == sv_id)
                } else {
                    None
                }
            }
            DutyCycle::Alternate { sv_ids, block_len } => {
                let sv = &sv_ids[(k / block_len) % sv_ids.len()];
                self.cfg.orbits.iter().find(|o| &o.sv_id == sv)
            }
            DutyCycle::BestVisible { min_elevation_deg } => {
                let rx = Vector3::from(self.cfg.rx_position_ecef_m);
                self.cfg
                    .orbits
                    .iter()
                    .map(|o| {
                        let s = propagate(o, t);
                        (o, elevation_angle(s.position_ecef_m, rx))
                    })
                    .filter(|(_, el)| *el >= min_elevation_deg.to_radians())
                    .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                    .map(|(o, _)| o)
            }
        }
    }

    /// Generate the per-frame truth log.
    pub fn truth(&self) -> Result<TruthLog> {
        let rx = Vector3::from(self.cfg.rx_position_ecef_m);
        let f_c = self.cfg.f_c_hz;
        let stride = self.stride_s();
        let clock_doppler = -self.cfg.clock_drift_s_per_s * f_c;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0xA5A5_5A5A_DEAD_BEEF);
        let normal = Normal::new(0.0, 1.0).unwrap();

        // per-SV accumulated carrier phase and code-walk offset
        let mut theta: Vec<f64> = self
            .cfg
            .orbits
            .iter()
            .map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
            .collect();
        let mut walk: Vec<f64> = vec![0.0; self.cfg.orbits.len()];

        let mut rows = Vec::with_capacity(self.cfg.k_frames);
        for k in 0..self.cfg.k_frames {
            let t = self.cfg.start_time_s + k as f64 * stride;
            let active = self.active_sv(k, t);
            let row = match active {
                None => TruthRow {
                    k,
                    sv_id: String::new(),
                    f_d_hz: 0.0,
                    f_d_rate_hz_s: 0.0,
                    d_k_samples: 0,
                    theta_k_rad: 0.0,
                    active: false,
                },
                Some(orbit) => {
                    let idx = self
                        .cfg
                        .orbits
                        .iter()
                        .position(|o| o.sv_id == orbit.sv_id)
                        .unwrap();
                    let (f_d, f_d_rate, d_geom) = match self.cfg.dynamics {
                        DynamicsModel::Planted {
                            f_d_hz,
                            f_d_rate_hz_s,
                            theta0_rad,
                        } => {
                            if k == 0 {
                                theta[idx] = theta0_rad;
                            }
                            let elapsed = k as f64 * stride;
                            (f_d_hz + f_d_rate_hz_s * elapsed, f_d_rate_hz_s, 0.0)
                        }
                        DynamicsModel::Geometric => {
                            let sv = propagate(orbit, t);
                            let f_d = predicted_doppler(&sv, rx, Vector3::zeros(), f_c)?;
                            let rate =
                                predicted_doppler_rate(orbit, t, rx, Vector3::zeros(), f_c)?;
                            let range = (sv.position_ecef_m - rx).norm();
                            (f_d, rate, range / SPEED_OF_LIGHT / self.t_s)
                        }
                    };
                    let d_k = match self.cfg.code_phase {
                        CodePhaseModel::Fixed { d } => d % self.n_fr,
                        CodePhaseModel::Geometric { walk_sigma } => {
                            if walk_sigma > 0.0 {
                                walk[idx] += normal.sample(&mut rng) * walk_sigma;
                            }
                            ((d_geom + walk[idx]).round() as i64).rem_euclid(self.n_fr as i64)
                                as usize
                        }
                    };
                    TruthRow {
                        k,
                        sv_id: orbit.sv_id.clone(),
                        f_d_hz: f_d,
                        f_d_rate_hz_s: f_d_rate,
                        d_k_samples: d_k,
                        theta_k_rad: theta[idx],
                        active: true,
                    }
                }
            };
            // advance every SV's carrier phase to the next frame start
            for (idx, orbit) in self.cfg.orbits.iter().enumerate() {
                let (f_d, rate) = match self.cfg.dynamics {
                    DynamicsModel::Planted {
                        f_d_hz,
                        f_d_rate_hz_s,
                        ..
                    } => (f_d_hz + f_d_rate_hz_s * (k as f64 * stride), f_d_rate_hz_s),
                    DynamicsModel::Geometric => {
                        let sv = propagate(orbit, t);
                        let f_d = predicted_doppler(&sv, rx, Vector3::zeros(), f_c)?;
                        let rate = predicted_doppler_rate(orbit, t, rx, Vector3::zeros(), f_c)?;
                        (f_d, rate)
                    }
                };
                let theta_dot = 2.0 * std::f64::consts::PI * (f_d + clock_doppler);
                let theta_ddot = 2.0 * std::f64::consts::PI * rate;
                theta[idx] += theta_dot * stride + 0.5 * theta_ddot * stride * stride;
            }
            rows.push(row);
        }
        Ok(TruthLog {
            rows,
            noise_power: self.noise_power(),
            beacon_power: self.beacon_power(),
            clock_doppler_hz: clock_doppler,
            t_fr: self.t_fr,
            stride_s: stride,
            start_time_s: self.cfg.start_time_s,
        })
    }

    /// Synthesize one frame given its truth row. Deterministic in
    /// (config seed, k).
    pub fn frame(&self, truth: &TruthLog, row: &TruthRow) -> FrameSignal {
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.cfg
                .seed
                .wrapping_add((row.k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        );
        let sigma = (truth.noise_power / 2.0).sqrt(); // per real component
        let normal = Normal::new(0.0, 1.0).unwrap();

        let mut samples = if row.active {
            let spec = &self.preset.spec;
            let mut grid = spec.pilot_grid();
            if self.cfg.data_fill == DataFill::Random {
                for (s, grid_row) in grid.iter_mut().enumerate() {
                    for (c, cell) in grid_row.iter_mut().enumerate() {
                        if !spec.pilot_mask[s][c] && !spec.gutter_tones.contains(&c) {
                            *cell = *QPSK.choose(&mut rng).unwrap() * spec.symbol_amplitudes[s];
                        }
                    }
                }
            }
            let mut base = spec.sync_preamble.clone();
            base.extend(ofdm_modulate(&grid, spec.n_subcarriers, spec.cp_len));
            base.resize(self.n_fr, Complex64::new(0.0, 0.0));
            let shifted = circshift(&base, row.d_k_samples as i64);
            let theta_dot =
                2.0 * std::f64::consts::PI * (row.f_d_hz + truth.clock_doppler_hz);
            let theta_ddot = 2.0 * std::f64::consts::PI * row.f_d_rate_hz_s;
            shifted
                .iter()
                .enumerate()
                .map(|(n, &s)| {
                    let t = n as f64 * self.t_s;
                    let phase = row.theta_k_rad + theta_dot * t + 0.5 * theta_ddot * t * t;
                    s * Complex64::from_polar(1.0, phase)
                })
                .collect()
        } else {
            vec![Complex64::new(0.0, 0.0); self.n_fr]
        };

        if sigma > 0.0 {
            for s in samples.iter_mut() {
                *s += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng)) * sigma;
            }
        }
        FrameSignal {
            samples,
            frame_index: row.k,
        }
    }

    /// All frames in memory, parallel per frame.
    pub fn synthesize(&self) -> Result<(Vec<FrameSignal>, TruthLog)> {
        let truth = self.truth()?;
        let frames = truth
            .rows
            .par_iter()
            .map(|row| self.frame(&truth, row))
            .collect();
        Ok((frames, truth))
    }

    /// Stream frames into a capture file (with metadata sidecar) without
    /// holding the whole capture in memory. Returns the truth log.
    pub fn write_capture(&self, path: &Path) -> Result<TruthLog> {
        let truth = self.truth()?;
        let mut writer =
            CaptureWriter::create(path, self.capture_meta())?.with_scale(self.cfg.write_scale);
        const CHUNK: usize = 64;
        for block in truth.rows.chunks(CHUNK) {
            let frames: Vec<FrameSignal> = block
                .par_iter()
                .map(|row| self.frame(&truth, row))
                .collect();
            for f in &frames {
                writer.write_samples(&f.samples)?;
            }
        }
        writer.finish()?;
        Ok(truth)
    }
}
