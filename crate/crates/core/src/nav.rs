//! Doppler-only iterative least-squares positioning.
//!
//! Measurements are Doppler shifts converted to range rates,
//! ṙ = −(c/f_c)·f_D, modeled as ṙ = (v_ℓ − v)ᵀe + c·δṫ with e the unit
//! vector from receiver to SV. Gauss–Newton iterates Δs = argmin ‖GΔs −
//! Δṙ‖ until the scaled update norm drops below ε.
//!
//! The clock bias δt is carried but never estimated: its Jacobian column
//! is identically zero for Doppler observables, so it is unobservable
//! here. The drift unknown is scaled as c·δṫ (m/s) to keep the normal
//! system well conditioned; the update vector therefore mixes meters and
//! m/s and ε applies to that scaled vector. In static mode (the default)
//! the receiver velocity is pinned to zero and the unknowns are
//! [p, c·δṫ]; full mode adds the velocity, [p, v, c·δṫ].
//!
//! The normal equations are solved through an SVD rather than an explicit
//! (GᵀG)⁻¹; near-rank-deficient geometry is reported with the weakest
//! direction named. Measurements are unweighted.
//!
//! Post-fit refinement keeps the λ fraction of measurements with the
//! smallest absolute post-fit residuals and re-solves from the previous
//! solution.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::acquisition::DopplerMeasurement;
use crate::error::{Error, Result};
use crate::orbit::{EphemerisTable, StateVector, SPEED_OF_LIGHT};

/// Receiver state. ECEF throughout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PVTState {
    pub position_ecef_m: [f64; 3],
    /// Clock bias, s — carried but not estimated (unobservable from
    /// Doppler).
    pub clock_bias_s: f64,
    pub velocity_ecef_mps: [f64; 3],
    pub clock_drift_s_per_s: f64,
}

impl PVTState {
    pub fn static_at(position_ecef_m: [f64; 3]) -> Self {
        PVTState {
            position_ecef_m,
            clock_bias_s: 0.0,
            velocity_ecef_mps: [0.0; 3],
            clock_drift_s_per_s: 0.0,
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::from(self.position_ecef_m)
    }

    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::from(self.velocity_ecef_mps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    /// Estimate position and clock drift; velocity pinned to zero.
    Static,
    /// Estimate position, velocity, and clock drift.
    Full,
}

impl SolveMode {
    pub fn unknowns(&self) -> usize {
        match self {
            SolveMode::Static => 4,
            SolveMode::Full => 7,
        }
    }

    fn labels(&self) -> &'static [&'static str] {
        match self {
            SolveMode::Static => &["x", "y", "z", "c*drift"],
            SolveMode::Full => &["x", "y", "z", "vx", "vy", "vz", "c*drift"],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NavConfig {
    /// Convergence threshold on ‖Δs‖ (m and m/s mixed).
    pub epsilon: f64,
    pub max_iters: usize,
    pub mode: SolveMode,
    /// Fraction of measurements kept by post-fit refinement.
    pub lambda: f64,
    /// Reject geometry whose singular-value ratio exceeds this.
    pub condition_limit: f64,
}

impl Default for NavConfig {
    fn default() -> Self {
        NavConfig {
            epsilon: 1e-3,
            max_iters: 20,
            mode: SolveMode::Static,
            lambda: 1.0,
            condition_limit: 1e10,
        }
    }
}

impl NavConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::invalid("lambda must be in (0, 1]"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be > 0"));
        }
        Ok(())
    }
}

/// Per-measurement post-fit residuals and iteration diagnostics.
#[derive(Debug, Clone)]
pub struct ResidualReport {
    /// Post-fit range-rate residuals, m/s, one per input measurement.
    pub residuals_mps: Vec<f64>,
    /// Measurements used by the solve that produced this report.
    pub kept: Vec<bool>,
    pub iterations: usize,
    pub final_delta_norm: f64,
    pub converged: bool,
    /// ‖Δṙ‖ at the start of each iteration.
    pub residual_norms: Vec<f64>,
}

/// Modeled range rate (m/s): (v_ℓ − v)ᵀe + c·δṫ.
pub fn range_rate_model(sv: &StateVector, s: &PVTState) -> Result<f64> {
    let los = sv.position_ecef_m - s.position();
    let range = los.norm();
    if range == 0.0 {
        return Err(Error::CoincidentPositions);
    }
    let e = los / range;
    Ok((sv.velocity_ecef_mps - s.velocity()).dot(&e) + SPEED_OF_LIGHT * s.clock_drift_s_per_s)
}

/// Analytic derivatives of the range-rate model: (∂ṙ/∂p, ∂ṙ/∂v,
/// ∂ṙ/∂(c·δṫ)).
pub fn range_rate_jacobian(
    sv: &StateVector,
    s: &PVTState,
) -> Result<(Vector3<f64>, Vector3<f64>, f64)> {
    let los = sv.position_ecef_m - s.position();
    let range = los.norm();
    if range == 0.0 {
        return Err(Error::CoincidentPositions);
    }
    let e = los / range;
    let v_rel = sv.velocity_ecef_mps - s.velocity();
    let d_p = (v_rel.dot(&e) * e - v_rel) / range;
    Ok((d_p, -e, 1.0))
}

/// Doppler shift to range rate: ṙ = −(c/f_c)·f_D.
pub fn doppler_to_range_rate(f_d_hz: f64, f_c_hz: f64) -> f64 {
    -(SPEED_OF_LIGHT / f_c_hz) * f_d_hz
}

fn sv_state_for(meas: &DopplerMeasurement, ephemerides: &[EphemerisTable]) -> Result<StateVector> {
    let sv_id = meas.sv_id.as_deref().ok_or_else(|| {
        Error::invalid("solve_ls requires associated measurements; drop unassigned ones first")
    })?;
    let table = ephemerides
        .iter()
        .find(|t| t.sv_id == sv_id)
        .ok_or_else(|| Error::invalid(format!("no ephemeris for SV {sv_id}")))?;
    table.interpolate(meas.t)
}

fn apply_update(s: &mut PVTState, delta: &DVector<f64>, mode: SolveMode) {
    s.position_ecef_m[0] += delta[0];
    s.position_ecef_m[1] += delta[1];
    s.position_ecef_m[2] += delta[2];
    match mode {
        SolveMode::Static => {
            s.clock_drift_s_per_s += delta[3] / SPEED_OF_LIGHT;
        }
        SolveMode::Full => {
            s.velocity_ecef_mps[0] += delta[3];
            s.velocity_ecef_mps[1] += delta[4];
            s.velocity_ecef_mps[2] += delta[5];
            s.clock_drift_s_per_s += delta[6] / SPEED_OF_LIGHT;
        }
    }
}

/// Gauss–Newton solve over a set of associated measurements.
pub fn solve_ls(
    meas: &[DopplerMeasurement],
    ephemerides: &[EphemerisTable],
    s0: &PVTState,
    cfg: &NavConfig,
    f_c_hz: f64,
) -> Result<(PVTState, ResidualReport)> {
    cfg.validate()?;
    let unknowns = cfg.mode.unknowns();
    if meas.len() < unknowns {
        return Err(Error::UnderDetermined {
            measurements: meas.len(),
            unknowns,
        });
    }
    let sv_states: Vec<StateVector> = meas
        .iter()
        .map(|m| sv_state_for(m, ephemerides))
        .collect::<Result<_>>()?;
    let measured: Vec<f64> = meas
        .iter()
        .map(|m| doppler_to_range_rate(m.f_d_hz, f_c_hz))
        .collect();

    let mut state = *s0;
    let mut converged = false;
    let mut iterations = 0;
    let mut final_delta_norm = f64::INFINITY;
    let mut residual_norms = Vec::new();

    for _ in 0..cfg.max_iters {
        iterations += 1;
        let mut g = DMatrix::zeros(meas.len(), unknowns);
        let mut r = DVector::zeros(meas.len());
        for (i, sv) in sv_states.iter().enumerate() {
            r[i] = measured[i] - range_rate_model(sv, &state)?;
            let (d_p, d_v, d_drift) = range_rate_jacobian(sv, &state)?;
            g[(i, 0)] = d_p[0];
            g[(i, 1)] = d_p[1];
            g[(i, 2)] = d_p[2];
            match cfg.mode {
                SolveMode::Static => {
                    g[(i, 3)] = d_drift;
                }
                SolveMode::Full => {
                    g[(i, 3)] = d_v[0];
                    g[(i, 4)] = d_v[1];
                    g[(i, 5)] = d_v[2];
                    g[(i, 6)] = d_drift;
                }
            }
        }
        residual_norms.push(r.norm());

        let svd = g.svd(true, true);
        let sigma_max = svd.singular_values.max();
        let sigma_min = svd.singular_values.min();
        if sigma_min <= 0.0 || sigma_max / sigma_min > cfg.condition_limit {
            let directions = weakest_directions(&svd, sigma_max, cfg);
            return Err(Error::SingularGeometry {
                condition: if sigma_min > 0.0 {
                    sigma_max / sigma_min
                } else {
                    f64::INFINITY
                },
                directions,
            });
        }
        let delta = svd
            .solve(&r, 0.0)
            .map_err(|e| Error::invalid(format!("SVD solve failed: {e}")))?;
        apply_update(&mut state, &delta, cfg.mode);
        final_delta_norm = delta.norm();
        if final_delta_norm < cfg.epsilon {
            converged = true;
            break;
        }
    }

    let residuals_mps: Vec<f64> = sv_states
        .iter()
        .zip(&measured)
        .map(|(sv, &m)| Ok(m - range_rate_model(sv, &state)?))
        .collect::<Result<_>>()?;
    Ok((
        state,
        ResidualReport {
            residuals_mps,
            kept: vec![true; meas.len()],
            iterations,
            final_delta_norm,
            converged,
            residual_norms,
        },
    ))
}

fn weakest_directions(
    svd: &nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>,
    sigma_max: f64,
    cfg: &NavConfig,
) -> String {
    let labels = cfg.mode.labels();
    let mut out = Vec::new();
    if let Some(v_t) = &svd.v_t {
        for (i, &sigma) in svd.singular_values.iter().enumerate() {
            if sigma <= 0.0 || sigma_max / sigma > cfg.condition_limit {
                let row = v_t.row(i);
                let mut parts: Vec<String> = Vec::new();
                for (j, label) in labels.iter().enumerate() {
                    if row[j].abs() > 0.4 {
                        parts.push(format!("{label}({:+.2})", row[j]));
                    }
                }
                out.push(parts.join(" "));
            }
        }
    }
    if out.is_empty() {
        "unknown".to_string()
    } else {
        out.join("; ")
    }
}

/// Keep the λ fraction of measurements with the smallest |post-fit
/// residual| and re-solve from the previous solution. With λ = 1 the
/// input solution is returned unchanged.
pub fn postfit_refine(
    meas: &[DopplerMeasurement],
    ephemerides: &[EphemerisTable],
    solution: &PVTState,
    initial_report: &ResidualReport,
    cfg: &NavConfig,
    f_c_hz: f64,
) -> Result<(PVTState, ResidualReport)> {
    cfg.validate()?;
    if meas.len() != initial_report.residuals_mps.len() {
        return Err(Error::LengthMismatch {
            what: "measurements vs residual report",
            expected: meas.len(),
            actual: initial_report.residuals_mps.len(),
        });
    }
    let keep_count = (cfg.lambda * meas.len() as f64).round() as usize;
    if keep_count == meas.len() {
        let mut report = initial_report.clone();
        report.kept = vec![true; meas.len()];
        return Ok((*solution, report));
    }
    let unknowns = cfg.mode.unknowns();
    if keep_count < unknowns {
        return Err(Error::RefinementTooFew {
            kept: keep_count,
            unknowns,
        });
    }
    let mut order: Vec<usize> = (0..meas.len()).collect();
    order.sort_by(|&a, &b| {
        initial_report.residuals_mps[a]
            .abs()
            .partial_cmp(&initial_report.residuals_mps[b].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut kept = vec![false; meas.len()];
    for &i in order.iter().take(keep_count) {
        kept[i] = true;
    }
    let subset: Vec<DopplerMeasurement> = meas
        .iter()
        .zip(&kept)
        .filter(|(_, &k)| k)
        .map(|(m, _)| m.clone())
        .collect();
    let (refined, sub_report) = solve_ls(&subset, ephemerides, solution, cfg, f_c_hz)?;

    // report residuals of every input measurement against the refined fix
    let residuals_mps: Vec<f64> = meas
        .iter()
        .map(|m| {
            let sv = sv_state_for(m, ephemerides)?;
            Ok(doppler_to_range_rate(m.f_d_hz, f_c_hz) - range_rate_model(&sv, &refined)?)
        })
        .collect::<Result<_>>()?;
    Ok((
        refined,
        ResidualReport {
            residuals_mps,
            kept,
            iterations: sub_report.iterations,
            final_delta_norm: sub_report.final_delta_norm,
            converged: sub_report.converged,
            residual_norms: sub_report.residual_norms,
        },
    ))
}

/// Position error against a reference for a sweep of λ values. Each λ
/// starts from a fresh solve at `s0`.
pub fn lambda_sweep(
    meas: &[DopplerMeasurement],
    ephemerides: &[EphemerisTable],
    s0: &PVTState,
    cfg: &NavConfig,
    f_c_hz: f64,
    lambdas: &[f64],
    truth_position: Vector3<f64>,
) -> Result<Vec<(f64, f64)>> {
    let (solution, report) = solve_ls(meas, ephemerides, s0, cfg, f_c_hz)?;
    lambdas
        .iter()
        .map(|&lambda| {
            let sweep_cfg = NavConfig {
                lambda,
                ..cfg.clone()
            };
            let (refined, _) =
                postfit_refine(meas, ephemerides, &solution, &report, &sweep_cfg, f_c_hz)?;
            Ok((lambda, (refined.position() - truth_position).norm()))
        })
        .collect()
}

/// Residuals CSV: `index,t,sv_id,residual_mps,kept`.
pub fn write_residuals(
    path: &Path,
    meas: &[DopplerMeasurement],
    report: &ResidualReport,
) -> Result<()> {
    let mut out = String::from("index,t,sv_id,residual_mps,kept\n");
    for (i, (m, (&res, &kept))) in meas
        .iter()
        .zip(report.residuals_mps.iter().zip(&report.kept))
        .enumerate()
    {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            i,
            m.t,
            m.sv_id.as_deref().unwrap_or(""),
            res,
            kept as u8
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// λ-sweep CSV: `lambda,pos_error_m`.
pub fn write_lambda_sweep(path: &Path, sweep: &[(f64, f64)]) -> Result<()> {
    let mut out = String::from("lambda,pos_error_m\n");
    for (lambda, err) in sweep {
        out.push_str(&format!("{lambda},{err}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orbit::{ecef_from_lat_lon, predicted_doppler, OrbitSpec};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rx() -> Vector3<f64> {
        ecef_from_lat_lon(45.7f64.to_radians(), 11.7f64.to_radians())
    }

    fn pass_tables(rx: Vector3<f64>) -> Vec<EphemerisTable> {
        let peaks = [80.0, 230.0, 380.0, 530.0];
        let incl = [53.0, 56.0, 50.0, 58.0];
        let offsets = [0.04, -0.05, 0.07, -0.03];
        peaks
            .iter()
            .zip(incl)
            .zip(offsets)
            .enumerate()
            .map(|(i, ((&peak, inc), off))| {
                let orbit = OrbitSpec::overhead_pass(
                    &format!("sv{i}"),
                    rx,
                    peak,
                    6_921_000.0,
                    (inc as f64).to_radians(),
                    off,
                )
                .unwrap();
                EphemerisTable::from_orbit(&orbit, -10.0, 620.0, 10.0).unwrap()
            })
            .collect()
    }

    /// Measurements generated from the same tables the solver uses, with
    /// SVs cycling across epochs.
    fn synth_measurements(
        tables: &[EphemerisTable],
        rx: Vector3<f64>,
        f_c: f64,
        count: usize,
        span: f64,
        drift: f64,
        noise_hz: f64,
        seed: u64,
    ) -> Vec<DopplerMeasurement> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|i| {
                let t = span * (i as f64 + 0.5) / count as f64;
                let table = &tables[i % tables.len()];
                let sv = table.interpolate(t).unwrap();
                let f_geom = predicted_doppler(&sv, rx, Vector3::zeros(), f_c).unwrap();
                let f_clock = -drift * f_c;
                let noise = if noise_hz > 0.0 {
                    rng.random_range(-1.0..1.0) * noise_hz * 3f64.sqrt()
                } else {
                    0.0
                };
                DopplerMeasurement {
                    t,
                    f_d_hz: f_geom + f_clock + noise,
                    peak: 1.0,
                    normalized_peak: 0.5,
                    sv_id: Some(table.sv_id.clone()),
                }
            })
            .collect()
    }

    #[test]
    fn range_rate_static_geometry_is_zero() {
        let sv = StateVector {
            t: 0.0,
            position_ecef_m: Vector3::new(7e6, 0.0, 0.0),
            velocity_ecef_mps: Vector3::zeros(),
        };
        let s = PVTState::static_at([6.4e6, 0.0, 0.0]);
        assert_eq!(range_rate_model(&sv, &s).unwrap(), 0.0);
    }

    /// Sign convention pinned: an SV receding radially at 100 m/s gives
    /// +100 m/s range rate.
    #[test]
    fn range_rate_sign_convention() {
        let sv = StateVector {
            t: 0.0,
            position_ecef_m: Vector3::new(7e6, 0.0, 0.0),
            velocity_ecef_mps: Vector3::new(100.0, 0.0, 0.0),
        };
        let s = PVTState::static_at([6.4e6, 0.0, 0.0]);
        assert_relative_eq!(range_rate_model(&sv, &s).unwrap(), 100.0);
    }

    /// −(f_c/c)·range_rate equals the orbit module's predicted Doppler.
    #[test]
    fn doppler_consistency_with_orbit_module() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f_c = 11.325e9;
        for _ in 0..100 {
            let sv = StateVector {
                t: 0.0,
                position_ecef_m: Vector3::new(
                    rng.random_range(6.5e6..7.5e6),
                    rng.random_range(-2e6..2e6),
                    rng.random_range(-2e6..2e6),
                ),
                velocity_ecef_mps: Vector3::new(
                    rng.random_range(-7500.0..7500.0),
                    rng.random_range(-7500.0..7500.0),
                    rng.random_range(-7500.0..7500.0),
                ),
            };
            let p = ecef_from_lat_lon(rng.random_range(-1.2..1.2), rng.random_range(-3.0..3.0));
            let s = PVTState::static_at(p.into());
            let rr = range_rate_model(&sv, &s).unwrap();
            let f_d = predicted_doppler(&sv, p, Vector3::zeros(), f_c).unwrap();
            assert_relative_eq!(-(f_c / SPEED_OF_LIGHT) * rr, f_d, max_relative = 1e-9);
        }
    }

    /// Analytic rows match central finite differences (full mode, random
    /// states with nonzero receiver velocity).
    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let sv = StateVector {
                t: 0.0,
                position_ecef_m: Vector3::new(
                    rng.random_range(6.6e6..7.4e6),
                    rng.random_range(-3e6..3e6),
                    rng.random_range(-3e6..3e6),
                ),
                velocity_ecef_mps: Vector3::new(
                    rng.random_range(-7500.0..7500.0),
                    rng.random_range(-7500.0..7500.0),
                    rng.random_range(-7500.0..7500.0),
                ),
            };
            let s = PVTState {
                position_ecef_m: ecef_from_lat_lon(
                    rng.random_range(-1.2..1.2),
                    rng.random_range(-3.0..3.0),
                )
                .into(),
                clock_bias_s: 0.0,
                velocity_ecef_mps: [
                    rng.random_range(-400.0..400.0),
                    rng.random_range(-400.0..400.0),
                    rng.random_range(-400.0..400.0),
                ],
                clock_drift_s_per_s: rng.random_range(-1e-8..1e-8),
            };
            let (d_p, d_v, d_drift) = range_rate_jacobian(&sv, &s).unwrap();
            let mut fd_row = Vec::new();
            let h_p = 10.0;
            for axis in 0..3 {
                let mut sp = s;
                sp.position_ecef_m[axis] += h_p;
                let mut sm = s;
                sm.position_ecef_m[axis] -= h_p;
                fd_row.push(
                    (range_rate_model(&sv, &sp).unwrap() - range_rate_model(&sv, &sm).unwrap())
                        / (2.0 * h_p),
                );
            }
            let h_v = 0.1;
            for axis in 0..3 {
                let mut sp = s;
                sp.velocity_ecef_mps[axis] += h_v;
                let mut sm = s;
                sm.velocity_ecef_mps[axis] -= h_v;
                fd_row.push(
                    (range_rate_model(&sv, &sp).unwrap() - range_rate_model(&sv, &sm).unwrap())
                        / (2.0 * h_v),
                );
            }
            let h_d = 1e-3 / SPEED_OF_LIGHT; // 1 mm/s of c·δṫ
            let mut sp = s;
            sp.clock_drift_s_per_s += h_d;
            let mut sm = s;
            sm.clock_drift_s_per_s -= h_d;
            fd_row.push(
                (range_rate_model(&sv, &sp).unwrap() - range_rate_model(&sv, &sm).unwrap())
                    / (2.0 * h_d * SPEED_OF_LIGHT),
            );

            let analytic = [d_p[0], d_p[1], d_p[2], d_v[0], d_v[1], d_v[2], d_drift];
            let num: f64 = analytic
                .iter()
                .zip(&fd_row)
                .map(|(a, f)| (a - f) * (a - f))
                .sum::<f64>()
                .sqrt();
            let den: f64 = fd_row.iter().map(|f| f * f).sum::<f64>().sqrt();
            assert!(num / den < 1e-6, "row error {}", num / den);
        }
    }

    #[test]
    fn solve_from_truth_converges_immediately() {
        let rx = rx();
        let tables = pass_tables(rx);
        let drift = 2e-10;
        let meas = synth_measurements(&tables, rx, 11.325e9, 120, 600.0, drift, 0.0, 1);
        let mut s0 = PVTState::static_at(rx.into());
        s0.clock_drift_s_per_s = drift;
        let cfg = NavConfig::default();
        let (fix, report) = solve_ls(&meas, &tables, &s0, &cfg, 11.325e9).unwrap();
        assert!(report.converged);
        assert_eq!(report.iterations, 1);
        assert!((fix.position() - rx).norm() < 1.0);
    }

    #[test]
    fn solve_from_forty_km_offset_recovers_truth() {
        let rx = rx();
        let tables = pass_tables(rx);
        let drift = -3e-10;
        let meas = synth_measurements(&tables, rx, 11.325e9, 200, 600.0, drift, 0.0, 2);
        let offset = Vector3::new(28e3, -28e3, 4.0e3);
        let s0 = PVTState::static_at((rx + offset).into());
        let cfg = NavConfig::default();
        let (fix, report) = solve_ls(&meas, &tables, &s0, &cfg, 11.325e9).unwrap();
        assert!(report.converged, "no convergence in {} iters", report.iterations);
        assert!(
            (fix.position() - rx).norm() < 1.0,
            "position error {} m",
            (fix.position() - rx).norm()
        );
        assert_relative_eq!(fix.clock_drift_s_per_s, drift, max_relative = 1e-3);
        // noise-free well-conditioned run: residual norm non-increasing
        for pair in report.residual_norms.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9);
        }
    }

    /// Shifting all SV positions and the initial state by the same vector
    /// shifts the fix by exactly that vector.
    #[test]
    fn translation_consistency() {
        let rx = rx();
        let tables = pass_tables(rx);
        let meas = synth_measurements(&tables, rx, 11.325e9, 80, 600.0, 0.0, 0.0, 3);
        let cfg = NavConfig::default();
        let s0 = PVTState::static_at((rx + Vector3::new(5e3, -2e3, 1e3)).into());
        let (fix_a, _) = solve_ls(&meas, &tables, &s0, &cfg, 11.325e9).unwrap();

        let shift = Vector3::new(1500.0, -700.0, 300.0);
        let shifted_tables: Vec<EphemerisTable> = tables
            .iter()
            .map(|t| {
                let samples = t
                    .samples
                    .iter()
                    .map(|s| StateVector {
                        t: s.t,
                        position_ecef_m: s.position_ecef_m + shift,
                        velocity_ecef_mps: s.velocity_ecef_mps,
                    })
                    .collect();
                EphemerisTable::new(t.sv_id.clone(), samples).unwrap()
            })
            .collect();
        let s0_shifted = PVTState::static_at((s0.position() + shift).into());
        let (fix_b, _) = solve_ls(&meas, &shifted_tables, &s0_shifted, &cfg, 11.325e9).unwrap();
        assert!(((fix_b.position() - fix_a.position()) - shift).norm() < 1e-5);
    }

    #[test]
    fn under_determined_rejected() {
        let rx = rx();
        let tables = pass_tables(rx);
        let meas = synth_measurements(&tables, rx, 11.325e9, 3, 600.0, 0.0, 0.0, 4);
        let cfg = NavConfig::default();
        assert!(matches!(
            solve_ls(&meas, &tables, &PVTState::static_at(rx.into()), &cfg, 11.325e9),
            Err(Error::UnderDetermined {
                measurements: 3,
                unknowns: 4
            })
        ));
    }

    #[test]
    fn singular_geometry_named() {
        let rx = rx();
        let tables = pass_tables(rx);
        // four copies of the same epoch from the same SV: rank 1 geometry
        let sv = tables[0].interpolate(80.0).unwrap();
        let f = predicted_doppler(&sv, rx, Vector3::zeros(), 11.325e9).unwrap();
        let meas: Vec<DopplerMeasurement> = (0..4)
            .map(|_| DopplerMeasurement {
                t: 80.0,
                f_d_hz: f,
                peak: 1.0,
                normalized_peak: 0.5,
                sv_id: Some("sv0".into()),
            })
            .collect();
        let cfg = NavConfig::default();
        match solve_ls(&meas, &tables, &PVTState::static_at(rx.into()), &cfg, 11.325e9) {
            Err(Error::SingularGeometry { directions, .. }) => {
                assert!(!directions.is_empty());
            }
            other => panic!("expected singular geometry, got {other:?}"),
        }
    }

    #[test]
    fn refine_lambda_one_is_identity() {
        let rx = rx();
        let tables = pass_tables(rx);
        let meas = synth_measurements(&tables, rx, 11.325e9, 60, 600.0, 0.0, 5.0, 5);
        let cfg = NavConfig::default();
        let s0 = PVTState::static_at((rx + Vector3::new(1e4, 0.0, 0.0)).into());
        let (fix, report) = solve_ls(&meas, &tables, &s0, &cfg, 11.325e9).unwrap();
        let (refined, rep2) =
            postfit_refine(&meas, &tables, &fix, &report, &cfg, 11.325e9).unwrap();
        assert_eq!(refined, fix);
        assert!(rep2.kept.iter().all(|&k| k));
    }

    #[test]
    fn refine_discards_planted_outliers() {
        let rx = rx();
        let tables = pass_tables(rx);
        let mut meas = synth_measurements(&tables, rx, 11.325e9, 100, 600.0, 0.0, 10.0, 6);
        let outliers: Vec<usize> = (0..100).step_by(5).collect(); // 20%
        for &i in &outliers {
            meas[i].f_d_hz += 5000.0;
        }
        let cfg = NavConfig {
            lambda: 0.75,
            ..NavConfig::default()
        };
        let s0 = PVTState::static_at(rx.into());
        let (fix, report) = solve_ls(&meas, &tables, &s0, &cfg, 11.325e9).unwrap();
        let (refined, rep2) =
            postfit_refine(&meas, &tables, &fix, &report, &cfg, 11.325e9).unwrap();
        for &i in &outliers {
            assert!(!rep2.kept[i], "outlier {i} survived refinement");
        }
        assert!((refined.position() - rx).norm() < (fix.position() - rx).norm());
    }

    #[test]
    fn refine_below_unknown_count_rejected() {
        let rx = rx();
        let tables = pass_tables(rx);
        let meas = synth_measurements(&tables, rx, 11.325e9, 10, 600.0, 0.0, 5.0, 7);
        let cfg = NavConfig {
            lambda: 0.2,
            ..NavConfig::default()
        };
        let s0 = PVTState::static_at(rx.into());
        let (fix, report) = solve_ls(&meas, &tables, &s0, &NavConfig::default(), 11.325e9).unwrap();
        assert!(matches!(
            postfit_refine(&meas, &tables, &fix, &report, &cfg, 11.325e9),
            Err(Error::RefinementTooFew {
                kept: 2,
                unknowns: 4
            })
        ));
    }
}
