//! Doppler acquisition over a capture using the resolved beacon, plus SV
//! association against predicted Doppler curves.
//!
//! Acquisition is one-frame: at each epoch a single frame is correlated
//! against the beacon over a wide frequency grid covering the full
//! Doppler span. The search is hierarchical — a coarse pass on a
//! decimated lattice, then a fine pass around the coarse winner — with
//! both passes on the same fine lattice, so the result equals a flat
//! fine-grid search whenever the true peak sits within the fine window of
//! the coarse winner (the correlation main lobe is ~1/T_fr wide, far
//! wider than the coarse step).
//!
//! Association assigns each measurement to the SV whose predicted Doppler
//! is nearest, but only when that nearest distance clears the gate and
//! the runner-up stays outside the margin; ambiguous measurements remain
//! unassigned rather than guessed.

use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlator::{Correlator, FrequencyGrid};
use crate::error::{Error, Result};
use crate::estimator::{BeaconEstimate, FrameSource};
use crate::orbit::{predicted_doppler, EphemerisTable};

/// Timestamped single-frame Doppler measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct DopplerMeasurement {
    /// Epoch, seconds (same timebase as the ephemerides).
    pub t: f64,
    pub f_d_hz: f64,
    pub peak: f64,
    pub normalized_peak: f64,
    /// Filled by association.
    pub sv_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcquisitionConfig {
    /// Spacing between acquisition epochs, s.
    pub cadence_s: f64,
    /// True-time spacing of consecutive frames in the capture, s (the
    /// frame period for contiguous captures, the stride for decimated
    /// ones).
    pub frame_period_s: f64,
    /// Capture start time, s.
    pub start_time_s: f64,
    pub t_s: f64,
    /// Full search span at the fine step.
    pub wide_grid: FrequencyGrid,
    /// Coarse-pass step; snapped to a multiple of the fine step.
    pub coarse_step_hz: f64,
    /// Half-width of the fine pass around the coarse winner.
    pub fine_window_hz: f64,
    /// Emit a measurement only above this normalized peak.
    pub gate_normalized: f64,
}

impl AcquisitionConfig {
    pub fn new(t_s: f64, frame_period_s: f64) -> Self {
        AcquisitionConfig {
            cadence_s: 1.0,
            frame_period_s,
            start_time_s: 0.0,
            t_s,
            wide_grid: FrequencyGrid {
                f_min: -300e3,
                f_max: 300e3,
                f_step: 250.0,
            },
            coarse_step_hz: 1000.0,
            fine_window_hz: 2000.0,
            gate_normalized: 0.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.wide_grid.validate()?;
        if !(self.cadence_s > 0.0 && self.frame_period_s > 0.0) {
            return Err(Error::invalid("cadence and frame period must be > 0"));
        }
        if self.cadence_s + 1e-12 < self.frame_period_s {
            return Err(Error::invalid(
                "cadence below the frame period: epochs would reuse frames",
            ));
        }
        Ok(())
    }
}

/// Hierarchical wide search for one frame. Returns the fine-lattice
/// correlation winner.
fn search_frame(
    correlator: &Correlator,
    beacon: &[num_complex::Complex64],
    frame: &[num_complex::Complex64],
    cfg: &AcquisitionConfig,
) -> Result<crate::correlator::CorrelationResult> {
    let wide = &cfg.wide_grid;
    let n_fine = wide.len();
    let stride = (cfg.coarse_step_hz / wide.f_step).round().max(1.0) as usize;

    // coarse pass on a decimated sub-lattice (indices 0, stride, ...)
    let coarse_last = (n_fine - 1) / stride;
    let coarse = FrequencyGrid {
        f_min: wide.f_min,
        f_max: wide.value(coarse_last * stride),
        f_step: wide.f_step * stride as f64,
    };
    let coarse_res = correlator.correlate(beacon, frame, &coarse, cfg.t_s)?;
    if coarse_res.degenerate {
        return Ok(coarse_res);
    }

    // fine pass on every lattice point within the window
    let center_idx = coarse_res.freq_index * stride;
    let half = (cfg.fine_window_hz / wide.f_step).round() as usize;
    let lo = center_idx.saturating_sub(half);
    let hi = (center_idx + half).min(n_fine - 1);
    let fine = FrequencyGrid {
        f_min: wide.value(lo),
        f_max: wide.value(hi),
        f_step: wide.f_step,
    };
    correlator.correlate(beacon, frame, &fine, cfg.t_s)
}

/// Correlate one frame per epoch against the resolved beacon and emit a
/// measurement wherever the normalized peak clears the gate. Epochs run
/// in parallel; output order follows epoch order.
pub fn acquire_doppler_series<S: FrameSource + ?Sized>(
    source: &S,
    beacon: &BeaconEstimate,
    cfg: &AcquisitionConfig,
) -> Result<Vec<DopplerMeasurement>> {
    cfg.validate()?;
    if !beacon.is_resolved() {
        return Err(Error::UnresolvedBeacon {
            what: format!("acquisition requires a resolved beacon ({})", beacon.ambiguities),
        });
    }
    let n = source.n_fr();
    if beacon.b_hat.len() != n {
        return Err(Error::LengthMismatch {
            what: "beacon vs capture frame length",
            expected: n,
            actual: beacon.b_hat.len(),
        });
    }
    let frame_count = source.frame_count();
    let span_s = frame_count as f64 * cfg.frame_period_s;
    let epochs = (span_s / cfg.cadence_s).floor() as usize;
    let correlator = Correlator::new(n);

    let results: Vec<Option<DopplerMeasurement>> = (0..epochs)
        .into_par_iter()
        .map(|i| -> Result<Option<DopplerMeasurement>> {
            let t_rel = i as f64 * cfg.cadence_s;
            let k = (t_rel / cfg.frame_period_s).round() as usize;
            if k >= frame_count {
                return Ok(None);
            }
            let frame = source.frame(k)?;
            let res = search_frame(&correlator, &beacon.b_hat, &frame.samples, cfg)?;
            if res.degenerate || res.normalized_peak < cfg.gate_normalized {
                return Ok(None);
            }
            Ok(Some(DopplerMeasurement {
                t: cfg.start_time_s + k as f64 * cfg.frame_period_s,
                f_d_hz: res.delta_f_hz,
                peak: res.peak,
                normalized_peak: res.normalized_peak,
                sv_id: None,
            }))
        })
        .collect::<Result<_>>()?;

    Ok(results.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssociationConfig {
    /// Max |measured − predicted| for an assignment.
    pub gate_hz: f64,
    /// Min runner-up distance; closer runner-ups leave the measurement
    /// unassigned.
    pub margin_hz: f64,
    pub rx_position_ecef_m: [f64; 3],
    pub f_c_hz: f64,
}

impl AssociationConfig {
    pub fn new(rx_position_ecef_m: [f64; 3], f_c_hz: f64) -> Self {
        AssociationConfig {
            gate_hz: 2000.0,
            margin_hz: 4000.0,
            rx_position_ecef_m,
            f_c_hz,
        }
    }
}

/// Fill `sv_id` by nearest predicted Doppler, with a runner-up margin.
/// Measurements outside every ephemeris span or failing the gate or the
/// margin stay unassigned.
pub fn associate_measurements(
    meas: &[DopplerMeasurement],
    ephemerides: &[EphemerisTable],
    cfg: &AssociationConfig,
) -> Vec<DopplerMeasurement> {
    let rx = Vector3::from(cfg.rx_position_ecef_m);
    meas.iter()
        .map(|m| {
            let mut out = m.clone();
            out.sv_id = None;
            let mut distances: Vec<(f64, &str)> = Vec::new();
            for table in ephemerides {
                let Ok(sv) = table.interpolate(m.t) else {
                    continue;
                };
                let Ok(pred) = predicted_doppler(&sv, rx, Vector3::zeros(), cfg.f_c_hz) else {
                    continue;
                };
                distances.push(((m.f_d_hz - pred).abs(), table.sv_id.as_str()));
            }
            distances.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            if let Some(&(best, sv)) = distances.first() {
                let runner = distances.get(1).map(|d| d.0).unwrap_or(f64::INFINITY);
                if best < cfg.gate_hz && runner >= cfg.margin_hz {
                    out.sv_id = Some(sv.to_string());
                }
            }
            out
        })
        .collect()
}

/// Measurements CSV: `t,f_d_hz,peak,normalized_peak,sv_id` (empty sv_id
/// when unassigned).
pub fn write_measurements(path: &Path, meas: &[DopplerMeasurement]) -> Result<()> {
    let mut out = String::from("t,f_d_hz,peak,normalized_peak,sv_id\n");
    for m in meas {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            m.t,
            m.f_d_hz,
            m.peak,
            m.normalized_peak,
            m.sv_id.as_deref().unwrap_or("")
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_measurements(path: &Path) -> Result<Vec<DopplerMeasurement>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut meas = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                line: lineno + 1,
                what: format!("expected 5 fields, got {}", f.len()),
            });
        }
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.parse().map_err(|e| Error::Csv {
                path: path.to_path_buf(),
                line: lineno + 1,
                what: format!("{what}: {e}"),
            })
        };
        meas.push(DopplerMeasurement {
            t: parse(f[0], "t")?,
            f_d_hz: parse(f[1], "f_d_hz")?,
            peak: parse(f[2], "peak")?,
            normalized_peak: parse(f[3], "normalized_peak")?,
            sv_id: if f[4].trim().is_empty() {
                None
            } else {
                Some(f[4].trim().to_string())
            },
        });
    }
    Ok(meas)
}
