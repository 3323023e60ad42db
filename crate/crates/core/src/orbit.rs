//! SV position/velocity over time and predicted Doppler at a receiver.
//!
//! Orbits are circular two-body Keplerian, propagated in an inertial frame
//! and rotated into ECEF with a constant Earth rotation rate. Polar motion
//! and nutation are ignored; at the error scales of Doppler-only
//! positioning they are irrelevant. Externally propagated ephemerides can
//! be imported from CSV and interpolated with cubic Hermite segments.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Earth gravitational parameter, m³/s².
pub const MU_EARTH: f64 = 3.986004418e14;
/// Earth rotation rate, rad/s.
pub const OMEGA_EARTH: f64 = 7.2921150e-5;
/// Speed of light, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Mean Earth radius used for ground points, m.
pub const EARTH_RADIUS: f64 = 6.371e6;

/// Circular orbit, eccentricity fixed at zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrbitSpec {
    pub sv_id: String,
    pub semi_major_axis_m: f64,
    pub inclination_rad: f64,
    pub raan_rad: f64,
    /// Argument of latitude at `epoch` (angle from ascending node).
    pub arg_latitude_epoch_rad: f64,
    /// UTC seconds. The inertial and ECEF frames coincide at t = 0.
    pub epoch: f64,
}

/// Position/velocity sample in ECEF.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector {
    pub t: f64,
    pub position_ecef_m: Vector3<f64>,
    pub velocity_ecef_mps: Vector3<f64>,
}

impl OrbitSpec {
    pub fn mean_motion(&self) -> f64 {
        (MU_EARTH / self.semi_major_axis_m.powi(3)).sqrt()
    }

    pub fn period_s(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.mean_motion()
    }

    pub fn validate(&self) -> Result<()> {
        if self.semi_major_axis_m <= EARTH_RADIUS {
            return Err(Error::invalid(format!(
                "semi-major axis {} m is below Earth radius",
                self.semi_major_axis_m
            )));
        }
        Ok(())
    }

    /// Construct an orbit whose ground track passes directly over
    /// `rx_ecef` at `t_peak`, with the given semi-major axis and
    /// inclination (epoch 0, ascending branch). `raan_offset_rad` slides
    /// the plane east/west for cross-track variety.
    pub fn overhead_pass(
        sv_id: &str,
        rx_ecef: Vector3<f64>,
        t_peak: f64,
        semi_major_axis_m: f64,
        inclination_rad: f64,
        raan_offset_rad: f64,
    ) -> Result<Self> {
        let p_hat_ecef = rx_ecef.normalize();
        let theta_g = OMEGA_EARTH * t_peak;
        let p_hat_eci = rot_z(theta_g) * p_hat_ecef;
        let decl = p_hat_eci.z.asin();
        if inclination_rad.sin().abs() < decl.sin().abs() {
            return Err(Error::invalid(format!(
                "inclination {:.3} rad cannot reach latitude {:.3} rad",
                inclination_rad, decl
            )));
        }
        let alpha = p_hat_eci.y.atan2(p_hat_eci.x);
        let sin_u = decl.sin() / inclination_rad.sin();
        let u = sin_u.asin();
        let raan = alpha - (sin_u * inclination_rad.cos()).atan2(u.cos()) + raan_offset_rad;
        let spec = OrbitSpec {
            sv_id: sv_id.to_string(),
            semi_major_axis_m,
            inclination_rad,
            raan_rad: raan,
            arg_latitude_epoch_rad: u - (MU_EARTH / semi_major_axis_m.powi(3)).sqrt() * t_peak,
            epoch: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn rot_z(alpha: f64) -> nalgebra::Matrix3<f64> {
    let (s, c) = alpha.sin_cos();
    nalgebra::Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn rot_x(alpha: f64) -> nalgebra::Matrix3<f64> {
    let (s, c) = alpha.sin_cos();
    nalgebra::Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Inertial-frame state at time `t` (used by tests and by the ECEF
/// conversion below).
pub fn propagate_inertial(spec: &OrbitSpec, t: f64) -> (Vector3<f64>, Vector3<f64>) {
    let a = spec.semi_major_axis_m;
    let n = spec.mean_motion();
    let u = spec.arg_latitude_epoch_rad + n * (t - spec.epoch);
    let plane = rot_z(spec.raan_rad) * rot_x(spec.inclination_rad);
    let r = plane * Vector3::new(a * u.cos(), a * u.sin(), 0.0);
    let v = plane * Vector3::new(-a * n * u.sin(), a * n * u.cos(), 0.0);
    (r, v)
}

/// Two-body circular Keplerian state in ECEF at time `t`.
pub fn propagate(spec: &OrbitSpec, t: f64) -> StateVector {
    let (r_eci, v_eci) = propagate_inertial(spec, t);
    let theta_g = OMEGA_EARTH * t;
    let to_ecef = rot_z(-theta_g);
    let position = to_ecef * r_eci;
    let omega = Vector3::new(0.0, 0.0, OMEGA_EARTH);
    let velocity = to_ecef * v_eci - omega.cross(&position);
    StateVector {
        t,
        position_ecef_m: position,
        velocity_ecef_mps: velocity,
    }
}

/// Doppler shift seen at the receiver, Hz. Positive while approaching.
pub fn predicted_doppler(
    sv: &StateVector,
    rx_pos: Vector3<f64>,
    rx_vel: Vector3<f64>,
    f_c_hz: f64,
) -> Result<f64> {
    let los = sv.position_ecef_m - rx_pos;
    let range = los.norm();
    if range == 0.0 {
        return Err(Error::CoincidentPositions);
    }
    let e = los / range;
    let range_rate = (sv.velocity_ecef_mps - rx_vel).dot(&e);
    Ok(-(f_c_hz / SPEED_OF_LIGHT) * range_rate)
}

/// Doppler rate, Hz/s, by central difference of the predicted Doppler.
pub fn predicted_doppler_rate(
    spec: &OrbitSpec,
    t: f64,
    rx_pos: Vector3<f64>,
    rx_vel: Vector3<f64>,
    f_c_hz: f64,
) -> Result<f64> {
    let dt = 1e-3;
    let f_plus = predicted_doppler(&propagate(spec, t + dt), rx_pos, rx_vel, f_c_hz)?;
    let f_minus = predicted_doppler(&propagate(spec, t - dt), rx_pos, rx_vel, f_c_hz)?;
    Ok((f_plus - f_minus) / (2.0 * dt))
}

/// Elevation of the SV above the receiver's local horizon, rad (spherical
/// Earth).
pub fn elevation_angle(sv_pos: Vector3<f64>, rx_pos: Vector3<f64>) -> f64 {
    let e = (sv_pos - rx_pos).normalize();
    let up = rx_pos.normalize();
    e.dot(&up).asin()
}

/// Ground point on the spherical Earth at geocentric latitude/longitude.
pub fn ecef_from_lat_lon(lat_rad: f64, lon_rad: f64) -> Vector3<f64> {
    Vector3::new(
        EARTH_RADIUS * lat_rad.cos() * lon_rad.cos(),
        EARTH_RADIUS * lat_rad.cos() * lon_rad.sin(),
        EARTH_RADIUS * lat_rad.sin(),
    )
}

/// Time-ordered ephemeris for one SV.
#[derive(Debug, Clone)]
pub struct EphemerisTable {
    pub sv_id: String,
    pub samples: Vec<StateVector>,
}

impl EphemerisTable {
    pub fn new(sv_id: impl Into<String>, samples: Vec<StateVector>) -> Result<Self> {
        let sv_id = sv_id.into();
        if samples.len() < 2 {
            return Err(Error::EphemerisTooShort {
                sv_id,
                count: samples.len(),
            });
        }
        for (i, pair) in samples.windows(2).enumerate() {
            if pair[1].t <= pair[0].t {
                return Err(Error::NonMonotoneEphemeris { row: i + 1 });
            }
        }
        Ok(EphemerisTable { sv_id, samples })
    }

    /// Sample an orbit every `step_s` over [t_start, t_end].
    pub fn from_orbit(spec: &OrbitSpec, t_start: f64, t_end: f64, step_s: f64) -> Result<Self> {
        let count = ((t_end - t_start) / step_s).floor() as usize + 1;
        let samples = (0..count)
            .map(|i| propagate(spec, t_start + i as f64 * step_s))
            .collect();
        EphemerisTable::new(spec.sv_id.clone(), samples)
    }

    pub fn span(&self) -> (f64, f64) {
        (
            self.samples.first().unwrap().t,
            self.samples.last().unwrap().t,
        )
    }

    /// Cubic Hermite interpolation using the stored velocities. Exact at
    /// nodes.
    pub fn interpolate(&self, t: f64) -> Result<StateVector> {
        let (t_min, t_max) = self.span();
        if t < t_min || t > t_max {
            return Err(Error::OutOfEphemerisSpan { t, t_min, t_max });
        }
        let idx = match self
            .samples
            .binary_search_by(|s| s.t.partial_cmp(&t).unwrap())
        {
            Ok(i) => return Ok(self.samples[i]),
            Err(i) => i - 1,
        };
        let s0 = &self.samples[idx];
        let s1 = &self.samples[idx + 1];
        let h = s1.t - s0.t;
        let s = (t - s0.t) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let position = h00 * s0.position_ecef_m
            + h10 * h * s0.velocity_ecef_mps
            + h01 * s1.position_ecef_m
            + h11 * h * s1.velocity_ecef_mps;
        let d00 = (6.0 * s2 - 6.0 * s) / h;
        let d10 = 3.0 * s2 - 4.0 * s + 1.0;
        let d01 = (6.0 * s - 6.0 * s2) / h;
        let d11 = 3.0 * s2 - 2.0 * s;
        let velocity = d00 * s0.position_ecef_m
            + d10 * s0.velocity_ecef_mps
            + d01 * s1.position_ecef_m
            + d11 * s1.velocity_ecef_mps;
        Ok(StateVector {
            t,
            position_ecef_m: position,
            velocity_ecef_mps: velocity,
        })
    }
}

/// Read an ephemeris CSV (`t,x,y,z,vx,vy,vz`, SI units, UTC seconds). The
/// SV id is taken from the file stem.
pub fn import_ephemeris(path: &Path) -> Result<EphemerisTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let sv_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut samples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            let header = line.trim();
            if header != "t,x,y,z,vx,vy,vz" {
                return Err(Error::Csv {
                    path: path.to_path_buf(),
                    line: 1,
                    what: format!("unexpected header {header:?}"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Csv {
                path: path.to_path_buf(),
                line: lineno + 1,
                what: e.to_string(),
            })?;
        if fields.len() != 7 {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                line: lineno + 1,
                what: format!("expected 7 fields, got {}", fields.len()),
            });
        }
        samples.push(StateVector {
            t: fields[0],
            position_ecef_m: Vector3::new(fields[1], fields[2], fields[3]),
            velocity_ecef_mps: Vector3::new(fields[4], fields[5], fields[6]),
        });
    }
    EphemerisTable::new(sv_id, samples)
}

/// Write an ephemeris table in the same CSV schema.
pub fn export_ephemeris(path: &Path, table: &EphemerisTable) -> Result<()> {
    let mut out = String::from("t,x,y,z,vx,vy,vz\n");
    for s in &table.samples {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.t,
            s.position_ecef_m.x,
            s.position_ecef_m.y,
            s.position_ecef_m.z,
            s.velocity_ecef_mps.x,
            s.velocity_ecef_mps.y,
            s.velocity_ecef_mps.z,
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn leo_spec() -> OrbitSpec {
        OrbitSpec {
            sv_id: "sv1".into(),
            semi_major_axis_m: 6_921_000.0,
            inclination_rad: 53f64.to_radians(),
            raan_rad: 0.7,
            arg_latitude_epoch_rad: 0.3,
            epoch: 0.0,
        }
    }

    #[test]
    fn epoch_identity() {
        let mut spec = leo_spec();
        spec.epoch = 0.0;
        spec.raan_rad = 0.0;
        spec.inclination_rad = 0.0;
        spec.arg_latitude_epoch_rad = 0.25;
        // Equatorial orbit, epoch at t=0 where ECI == ECEF.
        let s = propagate(&spec, 0.0);
        let a = spec.semi_major_axis_m;
        assert_relative_eq!(s.position_ecef_m.x, a * 0.25f64.cos(), max_relative = 1e-12);
        assert_relative_eq!(s.position_ecef_m.y, a * 0.25f64.sin(), max_relative = 1e-12);
        assert_relative_eq!(s.position_ecef_m.z, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn inertial_position_repeats_after_one_period() {
        let spec = leo_spec();
        let period = spec.period_s();
        let (r0, _) = propagate_inertial(&spec, 100.0);
        let (r1, _) = propagate_inertial(&spec, 100.0 + period);
        assert!((r1 - r0).norm() / r0.norm() < 1e-6);
    }

    #[test]
    fn circular_speed_matches_vis_viva() {
        let spec = leo_spec();
        let (_, v) = propagate_inertial(&spec, 1234.5);
        let expected = (MU_EARTH / spec.semi_major_axis_m).sqrt();
        assert_relative_eq!(v.norm(), expected, max_relative = 1e-9);
        assert_relative_eq!(expected, 7589.0, max_relative = 1e-4);
    }

    #[test]
    fn radius_invariant_over_span() {
        let spec = leo_spec();
        let a = spec.semi_major_axis_m;
        for i in 0..200 {
            let (r, _) = propagate_inertial(&spec, i as f64 * 37.0);
            assert_relative_eq!(r.norm(), a, max_relative = 1e-9);
        }
    }

    #[test]
    fn geostationary_is_static_in_ecef() {
        // a chosen so that mean motion equals the Earth rotation rate
        let a = (MU_EARTH / (OMEGA_EARTH * OMEGA_EARTH)).cbrt();
        let spec = OrbitSpec {
            sv_id: "geo".into(),
            semi_major_axis_m: a,
            inclination_rad: 0.0,
            raan_rad: 0.0,
            arg_latitude_epoch_rad: 0.0,
            epoch: 0.0,
        };
        let s = propagate(&spec, 5000.0);
        assert!(s.velocity_ecef_mps.norm() < 1e-6);
    }

    #[test]
    fn doppler_zero_for_static_geometry() {
        let sv = StateVector {
            t: 0.0,
            position_ecef_m: Vector3::new(7e6, 0.0, 0.0),
            velocity_ecef_mps: Vector3::zeros(),
        };
        let f = predicted_doppler(&sv, Vector3::new(6.4e6, 0.0, 0.0), Vector3::zeros(), 11.3e9)
            .unwrap();
        assert_eq!(f, 0.0);
    }

    #[test]
    fn doppler_coincident_positions_rejected() {
        let sv = StateVector {
            t: 0.0,
            position_ecef_m: Vector3::new(7e6, 0.0, 0.0),
            velocity_ecef_mps: Vector3::zeros(),
        };
        assert!(matches!(
            predicted_doppler(&sv, Vector3::new(7e6, 0.0, 0.0), Vector3::zeros(), 11.3e9),
            Err(Error::CoincidentPositions)
        ));
    }

    #[test]
    fn doppler_negates_under_velocity_reversal() {
        let sv = StateVector {
            t: 0.0,
            position_ecef_m: Vector3::new(6.9e6, 0.5e6, 0.4e6),
            velocity_ecef_mps: Vector3::new(1000.0, -7000.0, 2000.0),
        };
        let rx = ecef_from_lat_lon(0.8, 0.2);
        let f = predicted_doppler(&sv, rx, Vector3::zeros(), 11.325e9).unwrap();
        let mut rev = sv;
        rev.velocity_ecef_mps = -sv.velocity_ecef_mps;
        let g = predicted_doppler(&rev, rx, Vector3::zeros(), 11.325e9).unwrap();
        assert_relative_eq!(f, -g, max_relative = 1e-12);
    }

    #[test]
    fn doppler_crosses_zero_at_minimum_range() {
        let rx = ecef_from_lat_lon(45.7f64.to_radians(), 11.7f64.to_radians());
        let spec = OrbitSpec::overhead_pass("sv1", rx, 300.0, 6_921_000.0, 53f64.to_radians(), 0.0)
            .unwrap();
        let dt = 0.5;
        let mut min_range = f64::INFINITY;
        let mut t_min = 0.0;
        for i in 0..=1200 {
            let t = i as f64 * dt;
            let s = propagate(&spec, t);
            let r = (s.position_ecef_m - rx).norm();
            if r < min_range {
                min_range = r;
                t_min = t;
            }
        }
        // overhead pass peaks where we asked for it
        assert!((t_min - 300.0).abs() <= 1.0);
        // Doppler changes sign within one step of minimum range
        let f_before = predicted_doppler(&propagate(&spec, t_min - dt), rx, Vector3::zeros(), 11.325e9).unwrap();
        let f_after = predicted_doppler(&propagate(&spec, t_min + dt), rx, Vector3::zeros(), 11.325e9).unwrap();
        assert!(f_before > 0.0 && f_after < 0.0);
    }

    #[test]
    fn doppler_magnitude_bound() {
        let rx = ecef_from_lat_lon(45.7f64.to_radians(), 11.7f64.to_radians());
        let f_c = 11.325e9;
        let bound = (MU_EARTH / 6_921_000.0).sqrt() / SPEED_OF_LIGHT * f_c;
        assert_relative_eq!(bound, 287e3, max_relative = 2e-3);
        for k in 0..40 {
            let spec = OrbitSpec {
                sv_id: format!("sv{k}"),
                semi_major_axis_m: 6_921_000.0,
                inclination_rad: (40.0 + 2.0 * k as f64).to_radians().min(1.55),
                raan_rad: 0.31 * k as f64,
                arg_latitude_epoch_rad: 0.77 * k as f64,
                epoch: 0.0,
            };
            for i in 0..50 {
                let s = propagate(&spec, i as f64 * 130.0);
                let f = predicted_doppler(&s, rx, Vector3::zeros(), f_c).unwrap();
                assert!(f.abs() <= bound, "|f_D| = {} exceeds bound {}", f.abs(), bound);
            }
        }
    }

    #[test]
    fn interpolation_exact_at_nodes() {
        let spec = leo_spec();
        let table = EphemerisTable::from_orbit(&spec, 0.0, 100.0, 10.0).unwrap();
        for s in &table.samples {
            let i = table.interpolate(s.t).unwrap();
            assert_eq!(i.position_ecef_m, s.position_ecef_m);
            assert_eq!(i.velocity_ecef_mps, s.velocity_ecef_mps);
        }
    }

    #[test]
    fn interpolation_reproduces_linear_motion() {
        let p0 = Vector3::new(1.0e6, 2.0e6, -3.0e6);
        let v = Vector3::new(10.0, -20.0, 5.0);
        let samples: Vec<StateVector> = (0..5)
            .map(|i| {
                let t = i as f64 * 7.0;
                StateVector {
                    t,
                    position_ecef_m: p0 + v * t,
                    velocity_ecef_mps: v,
                }
            })
            .collect();
        let table = EphemerisTable::new("lin", samples).unwrap();
        let s = table.interpolate(10.5).unwrap();
        assert_relative_eq!(
            (s.position_ecef_m - (p0 + v * 10.5)).norm(),
            0.0,
            epsilon = 1e-6
        );
        assert_relative_eq!((s.velocity_ecef_mps - v).norm(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn interpolation_midpoint_error_below_one_meter() {
        let spec = leo_spec();
        let table = EphemerisTable::from_orbit(&spec, 0.0, 600.0, 10.0).unwrap();
        for i in 0..60 {
            let t = 5.0 + 10.0 * i as f64;
            let interp = table.interpolate(t).unwrap();
            let exact = propagate(&spec, t);
            let err = (interp.position_ecef_m - exact.position_ecef_m).norm();
            assert!(err < 1.0, "midpoint error {err} m at t = {t}");
        }
    }

    #[test]
    fn interpolation_rejects_out_of_span() {
        let spec = leo_spec();
        let table = EphemerisTable::from_orbit(&spec, 0.0, 100.0, 10.0).unwrap();
        assert!(matches!(
            table.interpolate(-1.0),
            Err(Error::OutOfEphemerisSpan { .. })
        ));
        assert!(matches!(
            table.interpolate(100.1),
            Err(Error::OutOfEphemerisSpan { .. })
        ));
    }

    #[test]
    fn ephemeris_csv_round_trip() {
        let spec = leo_spec();
        let table = EphemerisTable::from_orbit(&spec, 0.0, 50.0, 10.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sv1.csv");
        export_ephemeris(&path, &table).unwrap();
        let back = import_ephemeris(&path).unwrap();
        assert_eq!(back.sv_id, "sv1");
        assert_eq!(back.samples.len(), table.samples.len());
        for (a, b) in back.samples.iter().zip(&table.samples) {
            assert_eq!(a.position_ecef_m, b.position_ecef_m);
            assert_eq!(a.velocity_ecef_mps, b.velocity_ecef_mps);
        }
    }

    #[test]
    fn non_monotone_ephemeris_rejected() {
        let s = StateVector {
            t: 0.0,
            position_ecef_m: Vector3::zeros(),
            velocity_ecef_mps: Vector3::zeros(),
        };
        let mut s1 = s;
        s1.t = -1.0;
        assert!(matches!(
            EphemerisTable::new("x", vec![s, s1]),
            Err(Error::NonMonotoneEphemeris { row: 1 })
        ));
    }
}
