//! Pipeline configuration file (JSON).

use std::path::Path;

use serde::Deserialize;
use sopnav_core::correlator::FrequencyGrid;
use sopnav_core::estimator::Threshold;
use sopnav_core::kf::KFConfig;
use sopnav_core::nav::SolveMode;
use sopnav_core::sim::ScenarioConfig;

#[derive(Debug, Clone, Deserialize)]
pub struct PipelineConfig {
    /// Master seed; `--seed` overrides. The estimation scenario runs with
    /// this seed and the acquisition scenario with seed + 1.
    pub seed: u64,
    /// Contiguous-frame capture used for beacon estimation.
    pub estimation_scenario: ScenarioConfig,
    /// Strided capture used for Doppler acquisition.
    pub acquisition_scenario: ScenarioConfig,
    pub estimator: EstimatorSection,
    pub resolve: ResolveSection,
    pub acquisition: AcquisitionSection,
    pub association: AssociationSection,
    pub nav: NavSection,
    #[serde(default)]
    pub report: ReportSection,
    #[serde(default)]
    pub paths: PathsSection,
}

#[derive(Debug, Clone, Deserialize)]
pub struct EstimatorSection {
    pub max_frames: usize,
    pub threshold: Threshold,
    pub grid: FrequencyGrid,
    #[serde(default)]
    pub kf: Option<KFConfig>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ResolveSection {
    pub grid_coarse: FrequencyGrid,
    #[serde(default = "default_metric_threshold")]
    pub metric_threshold: f64,
    #[serde(default = "default_preamble_segment")]
    pub preamble_segment: usize,
}

fn default_metric_threshold() -> f64 {
    0.1
}

fn default_preamble_segment() -> usize {
    32
}

#[derive(Debug, Clone, Deserialize)]
pub struct AcquisitionSection {
    pub cadence_s: f64,
    pub wide_grid: FrequencyGrid,
    pub coarse_step_hz: f64,
    pub fine_window_hz: f64,
    pub gate_normalized: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct AssociationSection {
    pub gate_hz: f64,
    pub margin_hz: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct NavSection {
    pub epsilon: f64,
    pub max_iters: usize,
    pub mode: SolveMode,
    pub lambda: f64,
    #[serde(default = "default_condition_limit")]
    pub condition_limit: f64,
    /// LS initialization point.
    pub initial_position_ecef_m: [f64; 3],
}

fn default_condition_limit() -> f64 {
    1e10
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct ReportSection {
    /// Samples of beacon magnitude emitted for the head and tail plots.
    pub head_tail_len: usize,
    pub lambda_sweep: Vec<f64>,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            head_tail_len: 512,
            lambda_sweep: (0..15).map(|i| 0.3 + 0.05 * i as f64).collect(),
        }
    }
}

/// Artifact names inside the output directory.
#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct PathsSection {
    pub est_capture: String,
    pub acq_capture: String,
    pub est_truth: String,
    pub acq_truth: String,
    pub beacon: String,
    pub measurements: String,
    pub solution: String,
    pub residuals: String,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            est_capture: "est_capture.iq".into(),
            acq_capture: "acq_capture.iq".into(),
            est_truth: "est_truth.csv".into(),
            acq_truth: "acq_truth.csv".into(),
            beacon: "beacon.iq".into(),
            measurements: "measurements.csv".into(),
            solution: "solution.json".into(),
            residuals: "residuals.csv".into(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| anyhow::anyhow!("config {}: {e}", path.display()))?;
        Ok(cfg)
    }

    /// Apply a `--seed` override: estimation scenario gets `seed`,
    /// acquisition scenario `seed + 1`.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.estimation_scenario.seed = seed;
        self.acquisition_scenario.seed = seed.wrapping_add(1);
    }
}
