//! Ground-truth beacon construction and OFDM grid modulation.
//!
//! A beacon is a non-OFDM sync preamble (a repeated subsequence, as frame
//! markers tend to be) followed by OFDM symbols whose pilot cells carry
//! deterministic 4-PSK values. The remaining cells stay empty in the
//! beacon itself; the simulator fills them with per-frame data. Four
//! gutter tones at the center of the channel are always silent.
//!
//! Subcarrier columns are indexed low-frequency-first: column `c` of an
//! `n`-subcarrier grid maps to FFT bin `(c + n/2) mod n`, so column `n/2`
//! is DC. The per-symbol IFFT/FFT pair is unitary (1/sqrt(n) both ways).

use num_complex::Complex64;
use rand::prelude::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 4-PSK alphabet used for pilots, preamble chips, and data fill.
pub const QPSK: [Complex64; 4] = [
    Complex64::new(1.0, 0.0),
    Complex64::new(0.0, 1.0),
    Complex64::new(-1.0, 0.0),
    Complex64::new(0.0, -1.0),
];

/// FFT bin carrying subcarrier column `c` (column n/2 = DC).
pub fn subcarrier_bin(c: usize, n: usize) -> usize {
    (c + n / 2) % n
}

/// Deterministic beacon structure.
#[derive(Debug, Clone)]
pub struct BeaconSpec {
    pub n_subcarriers: usize,
    pub cp_len: usize,
    pub n_ofdm_symbols: usize,
    /// [symbol][subcarrier] — true where a pilot is transmitted.
    pub pilot_mask: Vec<Vec<bool>>,
    /// 4-PSK pilot values (unscaled); only masked cells are read.
    pub pilot_symbols: Vec<Vec<Complex64>>,
    /// Per-symbol amplitude applied to every cell of that symbol.
    pub symbol_amplitudes: Vec<f64>,
    /// Non-OFDM frame marker placed before the OFDM symbols.
    pub sync_preamble: Vec<Complex64>,
    /// Subcarrier columns forced silent in every symbol.
    pub gutter_tones: Vec<usize>,
    /// Symbols excluded from the pilot-fraction denominator (frame
    /// markers like the SSS).
    pub sync_symbols: Vec<usize>,
}

impl BeaconSpec {
    /// OFDM portion length in samples.
    pub fn ofdm_len(&self) -> usize {
        self.n_ofdm_symbols * (self.n_subcarriers + self.cp_len)
    }

    /// Preamble + OFDM length in samples.
    pub fn beacon_len(&self) -> usize {
        self.sync_preamble.len() + self.ofdm_len()
    }

    pub fn validate(&self) -> Result<()> {
        let (rows, cols) = (self.n_ofdm_symbols, self.n_subcarriers);
        for (name, grid_rows) in [
            ("pilot_mask", self.pilot_mask.len()),
            ("pilot_symbols", self.pilot_symbols.len()),
        ] {
            if grid_rows != rows {
                return Err(Error::LengthMismatch {
                    what: name,
                    expected: rows,
                    actual: grid_rows,
                });
            }
        }
        for row in &self.pilot_mask {
            if row.len() != cols {
                return Err(Error::LengthMismatch {
                    what: "pilot_mask row",
                    expected: cols,
                    actual: row.len(),
                });
            }
        }
        for row in &self.pilot_symbols {
            if row.len() != cols {
                return Err(Error::LengthMismatch {
                    what: "pilot_symbols row",
                    expected: cols,
                    actual: row.len(),
                });
            }
        }
        if self.symbol_amplitudes.len() != rows {
            return Err(Error::LengthMismatch {
                what: "symbol_amplitudes",
                expected: rows,
                actual: self.symbol_amplitudes.len(),
            });
        }
        for (s, row) in self.pilot_mask.iter().enumerate() {
            for &g in &self.gutter_tones {
                if row[g] {
                    return Err(Error::invalid(format!(
                        "gutter tone {g} marked as pilot in symbol {s}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Scaled frequency-domain grid of the beacon (zeros off-mask).
    pub fn pilot_grid(&self) -> Vec<Vec<Complex64>> {
        (0..self.n_ofdm_symbols)
            .map(|s| {
                (0..self.n_subcarriers)
                    .map(|c| {
                        if self.pilot_mask[s][c] {
                            self.pilot_symbols[s][c] * self.symbol_amplitudes[s]
                        } else {
                            Complex64::new(0.0, 0.0)
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Fraction of pilot cells over non-gutter cells of non-sync symbols.
    pub fn pilot_fraction(&self) -> f64 {
        let mut pilots = 0usize;
        let mut total = 0usize;
        for (s, row) in self.pilot_mask.iter().enumerate() {
            if self.sync_symbols.contains(&s) {
                continue;
            }
            for (c, &m) in row.iter().enumerate() {
                if self.gutter_tones.contains(&c) {
                    continue;
                }
                total += 1;
                pilots += m as usize;
            }
        }
        pilots as f64 / total as f64
    }
}

/// Symbol rate, grid size, and frame length that go with a preset.
#[derive(Debug, Clone)]
pub struct BeaconPreset {
    pub spec: BeaconSpec,
    pub sample_rate_hz: f64,
    pub n_fr: usize,
}

/// Named preset selector (serde-friendly for config files).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetKind {
    Desk,
    StarlinkLike,
}

impl BeaconPreset {
    pub fn build(kind: PresetKind, seed: u64) -> Self {
        match kind {
            PresetKind::Desk => Self::desk(seed),
            PresetKind::StarlinkLike => Self::starlink_like(seed),
        }
    }

    /// Small grid for fast end-to-end runs: 128 subcarriers, CP 16,
    /// 32 symbols, one pilot subcarrier in four. With F_s = 3.75 MS/s the
    /// 1/750 s frame is exactly 5000 samples.
    pub fn desk(seed: u64) -> Self {
        let n_sc = 128;
        let n_sym = 32;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gutter = center_gutter(n_sc);
        let mask: Vec<Vec<bool>> = (0..n_sym)
            .map(|_| {
                (0..n_sc)
                    .map(|c| c % 4 == 0 && !gutter.contains(&c))
                    .collect()
            })
            .collect();
        let pilots = random_qpsk_grid(&mut rng, n_sym, n_sc);
        let spec = BeaconSpec {
            n_subcarriers: n_sc,
            cp_len: 16,
            n_ofdm_symbols: n_sym,
            pilot_mask: mask,
            pilot_symbols: pilots,
            symbol_amplitudes: vec![1.0; n_sym],
            sync_preamble: repeated_qpsk_preamble(&mut rng, 32, 4),
            gutter_tones: gutter,
            sync_symbols: vec![],
        };
        BeaconPreset {
            spec,
            sample_rate_hz: 3.75e6,
            n_fr: 5000,
        }
    }

    /// 302-symbol grid that mirrors the published Starlink frame findings:
    /// symbol 2 fully recurrent (SSS-like), symbol 4 silent, symbol 8
    /// fully recurrent at lower power, the two closing symbols fully
    /// recurrent, every fourth subcarrier recurrent in all remaining
    /// symbols, and extra recurrent subcarriers sized so that pilots make
    /// up 61.8% of the non-sync grid cells.
    pub fn starlink_like(seed: u64) -> Self {
        let n_sc = 128;
        let n_sym = 302;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gutter = center_gutter(n_sc);
        let usable = n_sc - gutter.len();

        // 1-based symbol labels from the frame layout: 2 = SSS, 4 silent,
        // 8 low-power recurrent, 301/302 closing markers.
        let sss = 1usize;
        let silent = 3usize;
        let low_power = 7usize;
        let closing = [n_sym - 2, n_sym - 1];
        let full: Vec<usize> = [vec![sss, low_power], closing.to_vec()].concat();

        let denom_symbols = n_sym - 1; // all but the SSS
        let pattern_per_symbol = (0..n_sc)
            .filter(|c| c % 4 == 0 && !gutter.contains(c))
            .count();
        let regular_symbols = denom_symbols - 1 - 3; // minus silent, minus 3 in-denominator full
        let base = (1 + closing.len()) * usable + regular_symbols * pattern_per_symbol;
        let target = (0.618 * (denom_symbols * usable) as f64).round() as usize;
        let extra_total = target - base;
        let extra_each = extra_total / regular_symbols;
        let extra_remainder = extra_total % regular_symbols;

        let mut mask = vec![vec![false; n_sc]; n_sym];
        let mut regular_seen = 0usize;
        for (s, row) in mask.iter_mut().enumerate() {
            if s == silent {
                continue;
            }
            if full.contains(&s) {
                for (c, m) in row.iter_mut().enumerate() {
                    *m = !gutter.contains(&c);
                }
                continue;
            }
            let mut extra = extra_each + (regular_seen < extra_remainder) as usize;
            regular_seen += 1;
            for (c, m) in row.iter_mut().enumerate() {
                if gutter.contains(&c) {
                    continue;
                }
                if c % 4 == 0 {
                    *m = true;
                } else if extra > 0 {
                    *m = true;
                    extra -= 1;
                }
            }
        }

        let pilots = random_qpsk_grid(&mut rng, n_sym, n_sc);
        let mut amplitudes = vec![1.0; n_sym];
        amplitudes[low_power] = 0.7;
        let spec = BeaconSpec {
            n_subcarriers: n_sc,
            cp_len: 16,
            n_ofdm_symbols: n_sym,
            pilot_mask: mask,
            pilot_symbols: pilots,
            symbol_amplitudes: amplitudes,
            sync_preamble: repeated_qpsk_preamble(&mut rng, 32, 4),
            gutter_tones: gutter,
            sync_symbols: vec![sss],
        };
        // 302 symbols of 144 samples plus the preamble fit in the 44000
        // samples of a 1/750 s frame at 33 MS/s.
        BeaconPreset {
            spec,
            sample_rate_hz: 33e6,
            n_fr: 44_000,
        }
    }
}

fn center_gutter(n_sc: usize) -> Vec<usize> {
    vec![n_sc / 2 - 2, n_sc / 2 - 1, n_sc / 2, n_sc / 2 + 1]
}

fn random_qpsk_grid(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<Complex64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| *QPSK.choose(rng).unwrap()).collect())
        .collect()
}

/// `repeats` copies of a `chip_len`-sample 4-PSK sequence. The repetition
/// gives the preamble autocorrelation its characteristic non-zero-lag
/// peaks and lets code search run per-chip when a carrier offset is still
/// present.
pub fn repeated_qpsk_preamble(
    rng: &mut ChaCha8Rng,
    chip_len: usize,
    repeats: usize,
) -> Vec<Complex64> {
    let chip: Vec<Complex64> = (0..chip_len).map(|_| *QPSK.choose(rng).unwrap()).collect();
    (0..repeats).flat_map(|_| chip.iter().copied()).collect()
}

/// OFDM geometry needed to demodulate a frame-aligned beacon.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OfdmParams {
    pub n_subcarriers: usize,
    pub cp_len: usize,
    pub n_symbols: usize,
    pub preamble_len: usize,
}

impl OfdmParams {
    pub fn of(spec: &BeaconSpec) -> Self {
        OfdmParams {
            n_subcarriers: spec.n_subcarriers,
            cp_len: spec.cp_len,
            n_symbols: spec.n_ofdm_symbols,
            preamble_len: spec.sync_preamble.len(),
        }
    }

    pub fn occupied_len(&self) -> usize {
        self.preamble_len + self.n_symbols * (self.n_subcarriers + self.cp_len)
    }
}

/// Modulate a frequency-domain grid into time samples: per symbol, a
/// unitary IFFT preceded by its cyclic prefix.
pub fn ofdm_modulate(grid: &[Vec<Complex64>], n_subcarriers: usize, cp_len: usize) -> Vec<Complex64> {
    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(n_subcarriers);
    let scale = 1.0 / (n_subcarriers as f64).sqrt();
    let mut out = Vec::with_capacity(grid.len() * (n_subcarriers + cp_len));
    let mut body = vec![Complex64::new(0.0, 0.0); n_subcarriers];
    for row in grid {
        for v in body.iter_mut() {
            *v = Complex64::new(0.0, 0.0);
        }
        for (c, &cell) in row.iter().enumerate() {
            body[subcarrier_bin(c, n_subcarriers)] = cell;
        }
        ifft.process(&mut body);
        for v in body.iter_mut() {
            *v *= scale;
        }
        out.extend_from_slice(&body[n_subcarriers - cp_len..]);
        out.extend_from_slice(&body);
    }
    out
}

/// Inverse of [`ofdm_modulate`] on a frame-aligned sample block: strip the
/// preamble, then per symbol drop the cyclic prefix and take the unitary
/// FFT. Returns the [symbol][subcarrier] grid.
pub fn demodulate_grid(samples: &[Complex64], params: &OfdmParams) -> Result<Vec<Vec<Complex64>>> {
    let needed = params.occupied_len();
    if samples.len() < needed {
        return Err(Error::LengthMismatch {
            what: "OFDM demodulation input",
            expected: needed,
            actual: samples.len(),
        });
    }
    let n = params.n_subcarriers;
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let scale = 1.0 / (n as f64).sqrt();
    let sym_len = n + params.cp_len;
    let mut grid = Vec::with_capacity(params.n_symbols);
    let mut body = vec![Complex64::new(0.0, 0.0); n];
    for s in 0..params.n_symbols {
        let start = params.preamble_len + s * sym_len + params.cp_len;
        body.copy_from_slice(&samples[start..start + n]);
        fft.process(&mut body);
        let row: Vec<Complex64> = (0..n)
            .map(|c| body[subcarrier_bin(c, n)] * scale)
            .collect();
        grid.push(row);
    }
    Ok(grid)
}

/// Time-domain beacon: preamble, OFDM pilot symbols, zero pad to `n_fr`.
/// Deterministic given the spec.
pub fn build_beacon(spec: &BeaconSpec, n_fr: usize) -> Result<Vec<Complex64>> {
    spec.validate()?;
    if spec.beacon_len() > n_fr {
        return Err(Error::LengthMismatch {
            what: "beacon vs frame length",
            expected: n_fr,
            actual: spec.beacon_len(),
        });
    }
    let mut out = spec.sync_preamble.clone();
    out.extend(ofdm_modulate(
        &spec.pilot_grid(),
        spec.n_subcarriers,
        spec.cp_len,
    ));
    out.resize(n_fr, Complex64::new(0.0, 0.0));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn total_energy(v: &[Complex64]) -> f64 {
        v.iter().map(|s| s.norm_sqr()).sum()
    }

    /// With an all-true mask, no CP, and no preamble the time-domain
    /// energy equals the summed per-cell powers (the IFFT is unitary).
    #[test]
    fn parseval_energy_all_pilots() {
        let preset = BeaconPreset::desk(3);
        let mut spec = preset.spec;
        spec.cp_len = 0;
        spec.sync_preamble.clear();
        spec.gutter_tones.clear();
        for row in spec.pilot_mask.iter_mut() {
            for m in row.iter_mut() {
                *m = true;
            }
        }
        let n_fr = spec.beacon_len();
        let b = build_beacon(&spec, n_fr).unwrap();
        let cell_power: f64 = spec
            .pilot_grid()
            .iter()
            .flatten()
            .map(|c| c.norm_sqr())
            .sum();
        assert_relative_eq!(total_energy(&b), cell_power, max_relative = 1e-9);
    }

    #[test]
    fn desk_mask_is_one_in_four() {
        let preset = BeaconPreset::desk(3);
        assert_relative_eq!(preset.spec.pilot_fraction(), 0.25, max_relative = 1e-12);
        assert_eq!(preset.n_fr, 5000);
        assert!(preset.spec.beacon_len() <= preset.n_fr);
    }

    #[test]
    fn starlink_like_fraction_and_pattern() {
        let preset = BeaconPreset::starlink_like(3);
        let spec = &preset.spec;
        assert_eq!(spec.n_ofdm_symbols, 302);
        let frac = spec.pilot_fraction();
        assert!(
            (frac - 0.618).abs() < 1e-4,
            "pilot fraction {frac} not 61.8%"
        );
        // one-in-four pattern: every non-gutter subcarrier with c % 4 == 0
        // is a pilot in every non-silent symbol
        for (s, row) in spec.pilot_mask.iter().enumerate() {
            if s == 3 {
                assert!(row.iter().all(|&m| !m), "symbol 4 must be silent");
                continue;
            }
            for (c, &m) in row.iter().enumerate() {
                if c % 4 == 0 && !spec.gutter_tones.contains(&c) {
                    assert!(m, "pattern cell ({s},{c}) not pilot");
                }
            }
        }
        assert!(spec.beacon_len() <= preset.n_fr);
    }

    /// Per-symbol body energy equals that symbol's summed cell power, with
    /// the silent and fully-recurrent symbols where the layout says.
    #[test]
    fn per_symbol_energy_profile() {
        let preset = BeaconPreset::starlink_like(9);
        let spec = &preset.spec;
        let b = build_beacon(spec, preset.n_fr).unwrap();
        let grid = spec.pilot_grid();
        let sym_len = spec.n_subcarriers + spec.cp_len;
        for s in 0..spec.n_ofdm_symbols {
            let start = spec.sync_preamble.len() + s * sym_len + spec.cp_len;
            let body = &b[start..start + spec.n_subcarriers];
            let expected: f64 = grid[s].iter().map(|c| c.norm_sqr()).sum();
            if s == 3 {
                assert_eq!(expected, 0.0);
                assert!(total_energy(body) < 1e-20);
            } else {
                assert_relative_eq!(total_energy(body), expected, max_relative = 1e-9);
            }
        }
        // symbol 2 (index 1) fully recurrent, symbol 8 (index 7) at lower power
        let full_power = (spec.n_subcarriers - 4) as f64;
        let e1: f64 = grid[1].iter().map(|c| c.norm_sqr()).sum();
        let e7: f64 = grid[7].iter().map(|c| c.norm_sqr()).sum();
        assert_relative_eq!(e1, full_power, max_relative = 1e-12);
        assert_relative_eq!(e7, full_power * 0.49, max_relative = 1e-12);
    }

    #[test]
    fn demodulation_inverts_modulation() {
        let preset = BeaconPreset::desk(11);
        let spec = &preset.spec;
        let b = build_beacon(spec, preset.n_fr).unwrap();
        let grid = demodulate_grid(&b, &OfdmParams::of(spec)).unwrap();
        let planted = spec.pilot_grid();
        for s in 0..spec.n_ofdm_symbols {
            for c in 0..spec.n_subcarriers {
                assert!(
                    (grid[s][c] - planted[s][c]).norm() < 1e-9,
                    "cell ({s},{c}) mismatch"
                );
            }
        }
    }

    #[test]
    fn gutter_tones_are_silent() {
        let preset = BeaconPreset::desk(11);
        let spec = &preset.spec;
        let b = build_beacon(spec, preset.n_fr).unwrap();
        let grid = demodulate_grid(&b, &OfdmParams::of(spec)).unwrap();
        let pilot_mag = grid
            .iter()
            .flatten()
            .map(|c| c.norm())
            .fold(0.0f64, f64::max);
        for row in &grid {
            for &g in &spec.gutter_tones {
                assert!(row[g].norm() < 1e-6 * pilot_mag);
            }
        }
    }

    #[test]
    fn mask_shape_mismatch_rejected() {
        let preset = BeaconPreset::desk(1);
        let mut spec = preset.spec;
        spec.pilot_mask.pop();
        assert!(matches!(
            build_beacon(&spec, preset.n_fr),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn preamble_autocorrelation_peaks_at_chip_lags() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = repeated_qpsk_preamble(&mut rng, 32, 4);
        let n = p.len();
        let acorr = |lag: usize| -> f64 {
            (0..n)
                .map(|i| p[i].conj() * p[(i + lag) % n])
                .sum::<Complex64>()
                .norm()
        };
        let zero = acorr(0);
        assert_relative_eq!(acorr(32), zero, max_relative = 1e-12);
        assert_relative_eq!(acorr(64), zero, max_relative = 1e-12);
        assert!(acorr(17) < 0.5 * zero);
    }
}
