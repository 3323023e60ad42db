//! Raw IQ capture reading and writing.
//!
//! The capture format is a headerless binary file of little-endian int16
//! samples, interleaved I then Q, one pair per complex sample. Metadata
//! lives in a UTF-8 JSON sidecar next to the data file (same path with
//! `.meta.json` appended) with keys `sample_rate_hz`, `center_freq_hz`,
//! `start_time_utc`, `quantization`, and `sample_count`.
//!
//! Samples are converted to `Complex64` using the raw integer values; no
//! 1/32768 normalization is applied. An optional gain can be configured on
//! the reader for captures written with a known scale.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample quantization of the data file. Only int16 is defined for now.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Quantization {
    #[default]
    Int16,
}

/// Capture-level metadata, stored in the sidecar file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaptureMeta {
    /// Sample rate F_s in samples/s.
    pub sample_rate_hz: f64,
    /// RF center frequency f_c in Hz.
    pub center_freq_hz: f64,
    /// Capture start time, UTC seconds.
    pub start_time_utc: f64,
    pub quantization: Quantization,
    /// Total complex samples in the data file. Zero means "unknown"; the
    /// reader then trusts the file size.
    pub sample_count: u64,
}

impl CaptureMeta {
    pub fn new(sample_rate_hz: f64, center_freq_hz: f64) -> Self {
        CaptureMeta {
            sample_rate_hz,
            center_freq_hz,
            start_time_utc: 0.0,
            quantization: Quantization::Int16,
            sample_count: 0,
        }
    }

    /// Data-file size implied by `sample_count` (4 bytes per sample).
    pub fn expected_bytes(&self) -> u64 {
        self.sample_count * 4
    }

    /// Sample count implied by a recording of `duration_s` seconds.
    pub fn samples_for_duration(&self, duration_s: f64) -> u64 {
        (duration_s * self.sample_rate_hz).round() as u64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::invalid("sample_rate_hz must be > 0"));
        }
        Ok(())
    }
}

/// One frame of N_fr complex baseband samples.
#[derive(Debug, Clone)]
pub struct FrameSignal {
    pub samples: Vec<Complex64>,
    pub frame_index: usize,
}

impl FrameSignal {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }
}

/// N_fr = round(T_fr / T_s), rounding half away from zero.
pub fn frame_length(t_fr: f64, t_s: f64) -> usize {
    (t_fr / t_s).round() as usize
}

/// Sidecar path for a given data path: `<data>.meta.json`.
pub fn sidecar_path(data_path: &Path) -> PathBuf {
    let mut os = data_path.as_os_str().to_owned();
    os.push(".meta.json");
    PathBuf::from(os)
}

/// Read-only capture handle supporting random frame access.
///
/// Reads go through `read_exact_at`, so one handle can serve concurrent
/// frame reads from multiple threads.
#[derive(Debug)]
pub struct CaptureReader {
    file: File,
    meta: CaptureMeta,
    sample_count: u64,
    /// Gain applied to every decoded sample (raw int16 value times gain).
    pub gain: f64,
}

/// Open a capture, checking the file against the supplied metadata.
pub fn open_capture(path: &Path, meta: CaptureMeta) -> Result<CaptureReader> {
    meta.validate()?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let bytes = file.metadata().map_err(|e| Error::io(path, e))?.len();
    if bytes % 4 != 0 {
        return Err(Error::SizeNotMultipleOfFour {
            path: path.to_path_buf(),
            bytes,
        });
    }
    let actual = bytes / 4;
    if meta.sample_count != 0 && meta.sample_count != actual {
        return Err(Error::MetaSizeMismatch {
            expected: meta.sample_count,
            actual,
        });
    }
    Ok(CaptureReader {
        file,
        meta,
        sample_count: actual,
        gain: 1.0,
    })
}

/// Open a capture using the metadata sidecar next to the data file.
pub fn open_capture_with_sidecar(path: &Path) -> Result<CaptureReader> {
    let sidecar = sidecar_path(path);
    let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let meta: CaptureMeta = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: sidecar.clone(),
        source: e,
    })?;
    open_capture(path, meta)
}

impl CaptureReader {
    pub fn sample_count(&self) -> u64 {
        self.sample_count
    }

    pub fn meta(&self) -> &CaptureMeta {
        &self.meta
    }

    /// Number of complete frames of length `n_fr`.
    pub fn frame_count(&self, n_fr: usize) -> usize {
        if n_fr == 0 {
            0
        } else {
            (self.sample_count / n_fr as u64) as usize
        }
    }

    pub fn with_gain(mut self, gain: f64) -> Self {
        self.gain = gain;
        self
    }

    /// Read frame `k` of length `n_fr`: samples [k*n_fr, (k+1)*n_fr).
    pub fn read_frame(&self, k: usize, n_fr: usize) -> Result<FrameSignal> {
        let available = self.frame_count(n_fr);
        if k >= available {
            return Err(Error::FrameOutOfRange { k, available });
        }
        let mut buf = vec![0u8; n_fr * 4];
        let offset = (k as u64) * (n_fr as u64) * 4;
        self.file
            .read_exact_at(&mut buf, offset)
            .map_err(|e| Error::io("<capture data>", e))?;
        let samples = buf
            .chunks_exact(4)
            .map(|c| {
                let i = i16::from_le_bytes([c[0], c[1]]) as f64;
                let q = i16::from_le_bytes([c[2], c[3]]) as f64;
                Complex64::new(i * self.gain, q * self.gain)
            })
            .collect();
        Ok(FrameSignal {
            samples,
            frame_index: k,
        })
    }
}

/// Append-only capture writer. Samples are scaled, rounded half away from
/// zero, and clamped to int16; the clipped-sample count is checked against
/// `clip_tolerance` (fraction of total) when the writer is finished.
pub struct CaptureWriter {
    path: PathBuf,
    out: BufWriter<File>,
    meta: CaptureMeta,
    /// Multiplied into every sample before quantization.
    pub scale: f64,
    /// Accepted fraction of clipped samples before `finish` errors.
    pub clip_tolerance: f64,
    written: u64,
    clipped: usize,
}

impl CaptureWriter {
    pub fn create(path: &Path, meta: CaptureMeta) -> Result<Self> {
        meta.validate()?;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(CaptureWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
            meta,
            scale: 1.0,
            clip_tolerance: 0.0,
            written: 0,
            clipped: 0,
        })
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn with_clip_tolerance(mut self, tol: f64) -> Self {
        self.clip_tolerance = tol;
        self
    }

    pub fn write_samples(&mut self, samples: &[Complex64]) -> Result<()> {
        let mut buf = Vec::with_capacity(samples.len() * 4);
        for s in samples {
            let (i, ci) = quantize(s.re * self.scale);
            let (q, cq) = quantize(s.im * self.scale);
            self.clipped += (ci as usize) + (cq as usize);
            buf.extend_from_slice(&i.to_le_bytes());
            buf.extend_from_slice(&q.to_le_bytes());
        }
        self.out
            .write_all(&buf)
            .map_err(|e| Error::io(&self.path, e))?;
        self.written += samples.len() as u64;
        Ok(())
    }

    /// Flush data, write the metadata sidecar, and report clipping.
    pub fn finish(mut self) -> Result<CaptureMeta> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))?;
        let total = (self.written as usize) * 2;
        if total > 0 && self.clipped as f64 > self.clip_tolerance * total as f64 {
            return Err(Error::Clipping {
                clipped: self.clipped,
                total,
                tolerance: self.clip_tolerance,
            });
        }
        self.meta.sample_count = self.written;
        let sidecar = sidecar_path(&self.path);
        let text =
            serde_json::to_string_pretty(&self.meta).expect("capture metadata serializes");
        std::fs::write(&sidecar, text).map_err(|e| Error::io(&sidecar, e))?;
        Ok(self.meta)
    }
}

/// Convenience wrapper: write a full sample slice as one capture.
pub fn write_capture(path: &Path, meta: CaptureMeta, samples: &[Complex64]) -> Result<CaptureMeta> {
    let mut w = CaptureWriter::create(path, meta)?;
    w.write_samples(samples)?;
    w.finish()
}

fn quantize(v: f64) -> (i16, bool) {
    let r = v.round();
    if r > i16::MAX as f64 {
        (i16::MAX, true)
    } else if r < i16::MIN as f64 {
        (i16::MIN, true)
    } else {
        (r as i16, false)
    }
}
