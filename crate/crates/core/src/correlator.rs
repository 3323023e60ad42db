//! Beacon–frame circular correlation over a frequency hypothesis grid.
//!
//! For each hypothesis f_i the frame is derotated by exp(−j2πf_i nT_s),
//! both vectors are FFT'd, and the circular correlation is read off the
//! inverse FFT of B·conj(R). The global argmax over (hypothesis, lag)
//! yields the frequency offset Δf, the carrier-phase offset ΔΦ, and the
//! code-phase offset Δd between frame and beacon.
//!
//! Correlation is circular by construction — no zero padding — so Δd is
//! a shift modulo N_fr: Δd = (N_fr − n_max) mod N_fr. The lag convention
//! is pinned by `align_to_frame`: a frame equal to
//! circshift(beacon, d)·e^{jφ} measures Δd = d and ΔΦ = φ.
//!
//! Ties in the argmax break toward the lowest frequency index, then the
//! smallest lag, so parallel evaluation stays deterministic.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kf::wrap_phase;

/// Inclusive frequency grid f_min : f_step : f_max.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub f_min: f64,
    pub f_max: f64,
    pub f_step: f64,
}

impl FrequencyGrid {
    pub fn new(f_min: f64, f_max: f64, f_step: f64) -> Result<Self> {
        let grid = FrequencyGrid {
            f_min,
            f_max,
            f_step,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Single-hypothesis grid at `f`.
    pub fn single(f: f64) -> Self {
        FrequencyGrid {
            f_min: f,
            f_max: f,
            f_step: 1.0,
        }
    }

    /// The default tracking grid: ±10 Hz in 0.5 Hz steps.
    pub fn tracking_default() -> Self {
        FrequencyGrid {
            f_min: -10.0,
            f_max: 10.0,
            f_step: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_min <= self.f_max) || !(self.f_step > 0.0) {
            return Err(Error::BadFrequencyGrid {
                f_min: self.f_min,
                f_max: self.f_max,
                f_step: self.f_step,
            });
        }
        Ok(())
    }

    /// |grid| = floor((f_max − f_min)/f_step) + 1, endpoints inclusive.
    pub fn len(&self) -> usize {
        (((self.f_max - self.f_min) / self.f_step) + 1e-9) as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn value(&self, i: usize) -> f64 {
        self.f_min + i as f64 * self.f_step
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.value(i)).collect()
    }
}

/// Output of one beacon–frame correlation.
#[derive(Debug, Clone, Copy)]
pub struct CorrelationResult {
    /// Frequency offset of the frame relative to the beacon, on the grid.
    pub delta_f_hz: f64,
    /// Carrier-phase offset, wrapped to (−π, π].
    pub delta_phi_rad: f64,
    /// Code-phase offset in samples, in [0, N_fr).
    pub delta_d_samples: usize,
    /// max |correlation|, unnormalized (absolute-threshold gating).
    pub peak: f64,
    /// peak / (‖beacon‖·‖frame‖), for scale-invariant gating.
    pub normalized_peak: f64,
    /// Grid index of the winning hypothesis.
    pub freq_index: usize,
    /// True when an input had no energy and the result is meaningless.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    mag: f64,
    freq_index: usize,
    lag: usize,
    value: Complex64,
}

impl Candidate {
    fn better_than(&self, other: &Candidate) -> bool {
        if self.mag != other.mag {
            return self.mag > other.mag;
        }
        (self.freq_index, self.lag) < (other.freq_index, other.lag)
    }
}

/// Reusable FFT plans for one frame length.
pub struct Correlator {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl Correlator {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Correlator {
            n,
            fft: planner.plan_fft_forward(n),
            ifft: planner.plan_fft_inverse(n),
        }
    }

    pub fn frame_len(&self) -> usize {
        self.n
    }

    pub fn correlate(
        &self,
        beacon: &[Complex64],
        frame: &[Complex64],
        grid: &FrequencyGrid,
        t_s: f64,
    ) -> Result<CorrelationResult> {
        grid.validate()?;
        if beacon.len() != self.n || frame.len() != self.n {
            return Err(Error::LengthMismatch {
                what: "correlator inputs",
                expected: self.n,
                actual: if beacon.len() != self.n {
                    beacon.len()
                } else {
                    frame.len()
                },
            });
        }
        let n = self.n;
        let mut beacon_fft = beacon.to_vec();
        self.fft.process(&mut beacon_fft);

        let best = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let f = grid.value(i);
                let mut buf: Vec<Complex64> = frame
                    .iter()
                    .enumerate()
                    .map(|(idx, &s)| {
                        let phase = -2.0 * std::f64::consts::PI * f * idx as f64 * t_s;
                        s * Complex64::from_polar(1.0, phase)
                    })
                    .collect();
                self.fft.process(&mut buf);
                for (c, b) in buf.iter_mut().zip(&beacon_fft) {
                    *c = b * c.conj();
                }
                self.ifft.process(&mut buf);
                let scale = 1.0 / n as f64;
                let mut cand = Candidate {
                    mag: -1.0,
                    freq_index: i,
                    lag: 0,
                    value: Complex64::new(0.0, 0.0),
                };
                for (lag, v) in buf.iter().enumerate() {
                    let value = v * scale;
                    let mag = value.norm();
                    if mag > cand.mag {
                        cand = Candidate {
                            mag,
                            freq_index: i,
                            lag,
                            value,
                        };
                    }
                }
                cand
            })
            .reduce_with(|a, b| if b.better_than(&a) { b } else { a })
            .expect("grid is non-empty");

        Ok(finish(best, beacon, frame, grid, n))
    }
}

fn finish(
    best: Candidate,
    beacon: &[Complex64],
    frame: &[Complex64],
    grid: &FrequencyGrid,
    n: usize,
) -> CorrelationResult {
    let beacon_norm = beacon.iter().map(|s| s.norm_sqr()).sum::<f64>().sqrt();
    let frame_norm = frame.iter().map(|s| s.norm_sqr()).sum::<f64>().sqrt();
    let degenerate = best.mag <= 0.0 || beacon_norm == 0.0 || frame_norm == 0.0;
    let normalized_peak = if degenerate {
        0.0
    } else {
        best.mag / (beacon_norm * frame_norm)
    };
    CorrelationResult {
        delta_f_hz: grid.value(best.freq_index),
        delta_phi_rad: if degenerate {
            0.0
        } else {
            wrap_phase(-best.value.arg())
        },
        delta_d_samples: (n - best.lag) % n,
        peak: best.mag.max(0.0),
        normalized_peak,
        freq_index: best.freq_index,
        degenerate,
    }
}

/// One-shot correlation; plans FFTs internally.
pub fn correlate(
    beacon: &[Complex64],
    frame: &[Complex64],
    grid: &FrequencyGrid,
    t_s: f64,
) -> Result<CorrelationResult> {
    if beacon.len() != frame.len() {
        return Err(Error::LengthMismatch {
            what: "correlator inputs",
            expected: beacon.len(),
            actual: frame.len(),
        });
    }
    Correlator::new(beacon.len()).correlate(beacon, frame, grid, t_s)
}

/// Brute-force reference with the identical contract, computed without
/// FFTs: c[m] = Σ_n conj(frame'[n])·beacon[(n+m) mod N] per hypothesis.
/// O(|grid|·N²); for verification only.
pub fn correlate_oracle(
    beacon: &[Complex64],
    frame: &[Complex64],
    grid: &FrequencyGrid,
    t_s: f64,
) -> Result<CorrelationResult> {
    grid.validate()?;
    if beacon.len() != frame.len() {
        return Err(Error::LengthMismatch {
            what: "correlator inputs",
            expected: beacon.len(),
            actual: frame.len(),
        });
    }
    let n = beacon.len();
    let mut best = Candidate {
        mag: -1.0,
        freq_index: 0,
        lag: 0,
        value: Complex64::new(0.0, 0.0),
    };
    for i in 0..grid.len() {
        let f = grid.value(i);
        let derotated: Vec<Complex64> = frame
            .iter()
            .enumerate()
            .map(|(idx, &s)| {
                let phase = -2.0 * std::f64::consts::PI * f * idx as f64 * t_s;
                s * Complex64::from_polar(1.0, phase)
            })
            .collect();
        for lag in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for (idx, d) in derotated.iter().enumerate() {
                acc += d.conj() * beacon[(idx + lag) % n];
            }
            let cand = Candidate {
                mag: acc.norm(),
                freq_index: i,
                lag,
                value: acc,
            };
            if cand.better_than(&best) {
                best = cand;
            }
        }
    }
    Ok(finish(best, beacon, frame, grid, n))
}

/// Apply a measured (Δd, ΔΦ) to the beacon so it matches the frame:
/// circshift by Δd then rotate by e^{jΔΦ}.
pub fn align_to_frame(
    beacon: &[Complex64],
    delta_d: usize,
    delta_phi: f64,
) -> Vec<Complex64> {
    let n = beacon.len();
    let rot = Complex64::from_polar(1.0, delta_phi);
    (0..n)
        .map(|i| beacon[(i + n - delta_d % n) % n] * rot)
        .collect()
}

/// circshift toward higher indices: out[n] = v[(n − s) mod N].
pub fn circshift(v: &[Complex64], s: i64) -> Vec<Complex64> {
    let n = v.len() as i64;
    let s = s.rem_euclid(n);
    (0..n).map(|i| v[((i - s).rem_euclid(n)) as usize]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_signal(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn autocorrelation_peak_is_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = random_signal(&mut rng, 512);
        let r = correlate(&b, &b, &FrequencyGrid::single(0.0), 1e-6).unwrap();
        let energy: f64 = b.iter().map(|s| s.norm_sqr()).sum();
        assert_eq!(r.delta_f_hz, 0.0);
        assert_eq!(r.delta_d_samples, 0);
        assert!(r.delta_phi_rad.abs() < 1e-9);
        assert_relative_eq!(r.peak, energy, max_relative = 1e-9);
        assert_relative_eq!(r.normalized_peak, 1.0, max_relative = 1e-9);
    }

    /// Sign conventions pinned here: a frame that is the beacon shifted by
    /// +7 samples, rotated by 0.3 rad, with a +3 Hz carrier reads back as
    /// exactly (Δf, Δd, ΔΦ) = (3, 7, 0.3).
    #[test]
    fn planted_offsets_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t_s = 1.0 / 3.75e6;
        let b = random_signal(&mut rng, 5000);
        let shifted = circshift(&b, 7);
        let frame: Vec<Complex64> = shifted
            .iter()
            .enumerate()
            .map(|(n, &s)| {
                let carrier = 2.0 * std::f64::consts::PI * 3.0 * n as f64 * t_s;
                s * Complex64::from_polar(1.0, 0.3 + carrier)
            })
            .collect();
        let grid = FrequencyGrid::new(-5.0, 5.0, 0.5).unwrap();
        let r = correlate(&b, &frame, &grid, t_s).unwrap();
        assert_relative_eq!(r.delta_f_hz, 3.0);
        assert_eq!(r.delta_d_samples, 7);
        assert_relative_eq!(r.delta_phi_rad, 0.3, epsilon = 1e-6);
        // and align_to_frame reproduces the frame's structure
        let aligned = align_to_frame(&b, r.delta_d_samples, r.delta_phi_rad);
        for (a, s) in aligned.iter().zip(&shifted) {
            assert!((a - s * Complex64::from_polar(1.0, 0.3)).norm() < 1e-6);
        }
    }

    #[test]
    fn impulse_pair_lag_convention() {
        let n = 32;
        let mut beacon = vec![Complex64::new(0.0, 0.0); n];
        beacon[0] = Complex64::new(1.0, 0.0);
        let mut frame = vec![Complex64::new(0.0, 0.0); n];
        frame[5] = Complex64::new(1.0, 0.0);
        let grid = FrequencyGrid::single(0.0);
        let fft = correlate(&beacon, &frame, &grid, 1e-6).unwrap();
        let oracle = correlate_oracle(&beacon, &frame, &grid, 1e-6).unwrap();
        assert_eq!(fft.delta_d_samples, 5);
        assert_eq!(oracle.delta_d_samples, 5);
    }

    #[test]
    fn zero_frame_is_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = random_signal(&mut rng, 64);
        let z = vec![Complex64::new(0.0, 0.0); 64];
        for r in [
            correlate(&b, &z, &FrequencyGrid::single(0.0), 1e-6).unwrap(),
            correlate_oracle(&b, &z, &FrequencyGrid::single(0.0), 1e-6).unwrap(),
        ] {
            assert!(r.degenerate);
            assert_eq!(r.peak, 0.0);
            assert_eq!(r.normalized_peak, 0.0);
        }
    }

    #[test]
    fn length_mismatch_rejected() {
        let a = vec![Complex64::new(1.0, 0.0); 8];
        let b = vec![Complex64::new(1.0, 0.0); 9];
        assert!(correlate(&a, &b, &FrequencyGrid::single(0.0), 1e-6).is_err());
    }

    #[test]
    fn grid_len_inclusive() {
        let g = FrequencyGrid::new(-10.0, 10.0, 0.5).unwrap();
        assert_eq!(g.len(), 41);
        assert_eq!(g.value(0), -10.0);
        assert_eq!(g.value(40), 10.0);
        assert!(FrequencyGrid::new(1.0, -1.0, 0.5).is_err());
        assert!(FrequencyGrid::new(-1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn fft_matches_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t_s = 1.0 / 3.75e6;
        for _ in 0..10 {
            let n = rng.random_range(32..256);
            let b = random_signal(&mut rng, n);
            let f = random_signal(&mut rng, n);
            let f_center = rng.random_range(-500.0..500.0);
            let grid = FrequencyGrid::new(f_center - 100.0, f_center + 100.0, 50.0).unwrap();
            let fast = correlate(&b, &f, &grid, t_s).unwrap();
            let slow = correlate_oracle(&b, &f, &grid, t_s).unwrap();
            assert_eq!(fast.freq_index, slow.freq_index);
            assert_eq!(fast.delta_d_samples, slow.delta_d_samples);
            assert_relative_eq!(fast.peak, slow.peak, max_relative = 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        /// Shifting the frame by +m adds +m (mod N) to Δd and changes
        /// nothing else.
        #[test]
        fn prop_shift_covariance(seed in 0u64..1000, m in 0usize..64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 64;
            let b = random_signal(&mut rng, n);
            let f = random_signal(&mut rng, n);
            let grid = FrequencyGrid::single(0.0);
            let base = correlate(&b, &f, &grid, 1e-6).unwrap();
            let shifted = circshift(&f, m as i64);
            let moved = correlate(&b, &shifted, &grid, 1e-6).unwrap();
            prop_assert_eq!(moved.delta_d_samples, (base.delta_d_samples + m) % n);
            prop_assert!((moved.peak - base.peak).abs() <= 1e-9 * base.peak);
            prop_assert!((wrap_phase(moved.delta_phi_rad - base.delta_phi_rad)).abs() < 1e-6);
        }

        /// Rotating the frame by e^{jφ} adds +φ (wrapped) to ΔΦ and
        /// changes nothing else.
        #[test]
        fn prop_phase_covariance(seed in 0u64..1000, phi in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 64;
            let b = random_signal(&mut rng, n);
            let f = random_signal(&mut rng, n);
            let grid = FrequencyGrid::single(0.0);
            let base = correlate(&b, &f, &grid, 1e-6).unwrap();
            let rot = Complex64::from_polar(1.0, phi);
            let rotated: Vec<Complex64> = f.iter().map(|s| s * rot).collect();
            let moved = correlate(&b, &rotated, &grid, 1e-6).unwrap();
            prop_assert_eq!(moved.delta_d_samples, base.delta_d_samples);
            prop_assert!((moved.peak - base.peak).abs() <= 1e-9 * base.peak);
            let dphi = wrap_phase(moved.delta_phi_rad - base.delta_phi_rad - phi);
            prop_assert!(dphi.abs() < 1e-6);
        }
    }
}
