//! Astrocyte self-repair: the rate controller, fault-tolerance metrics and
//! stress/recovery classification of threshold traces.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RepairError {
    #[error("fault tolerance is undefined for a zero fault-free output")]
    ZeroOriginal,
    #[error("non-finite metric input")]
    NonFinite,
    #[error("rate window {window} ms is shorter than 10 steps of {dt} ms")]
    WindowTooShort { window: f64, dt: f64 },
    #[error("invalid repair policy: {0}")]
    InvalidPolicy(String),
    #[error("recovery record is empty")]
    EmptyRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RepairPolicy {
    /// Target mean firing rate of covered neurons (Hz).
    pub target_rate_hz: f64,
    /// Measurement window and control period (ms).
    pub rate_window_ms: f64,
    /// Tolerated relative rate error.
    pub max_reconstruction_error: f64,
    /// Integral gain on the release drive, in drive units per Hz of error.
    pub repair_gain: f64,
    /// |ΔV_th| at or above which a window counts as stressed.
    pub stress_threshold_delta: f64,
    /// Consecutive non-falling stressed windows before a window is a failure.
    pub failure_dwell: usize,
    /// Hold the drive while the reconstruction error is within tolerance.
    pub hold_within_tolerance: bool,
}

impl Default for RepairPolicy {
    fn default() -> Self {
        Self {
            target_rate_hz: 2.17,
            rate_window_ms: 500.0,
            max_reconstruction_error: 0.10,
            repair_gain: 0.1,
            stress_threshold_delta: 0.1,
            failure_dwell: 6,
            hold_within_tolerance: true,
        }
    }
}

impl RepairPolicy {
    pub fn validate(&self, dt: f64) -> Result<(), RepairError> {
        if !(self.target_rate_hz > 0.0 && self.target_rate_hz.is_finite()) {
            return Err(RepairError::InvalidPolicy("target_rate_hz must be > 0".into()));
        }
        if !(self.max_reconstruction_error > 0.0 && self.max_reconstruction_error < 1.0) {
            return Err(RepairError::InvalidPolicy("max_reconstruction_error must lie in (0, 1)".into()));
        }
        if !(self.repair_gain >= 0.0 && self.repair_gain.is_finite()) {
            return Err(RepairError::InvalidPolicy("repair_gain must be finite and >= 0".into()));
        }
        if !(self.stress_threshold_delta >= 0.0) {
            return Err(RepairError::InvalidPolicy("stress_threshold_delta must be >= 0".into()));
        }
        if self.rate_window_ms < 10.0 * dt {
            return Err(RepairError::WindowTooShort { window: self.rate_window_ms, dt });
        }
        Ok(())
    }

    /// Number of simulation steps per control window.
    pub fn window_steps(&self, dt: f64) -> u64 {
        (self.rate_window_ms / dt).round().max(1.0) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepairUpdate {
    pub drive: f64,
    pub measured_hz: f64,
    /// `|r̂ - target| / target`.
    pub reconstruction_error: f64,
    /// The controller was pushing release up against a deficit beyond tolerance.
    pub activated: bool,
    /// The zero floor on the drive was binding.
    pub saturated: bool,
}

/// One control update: `r_g <- max(0, r_g + gain * (target - r̂))`, skipped
/// inside the tolerance band when `hold_within_tolerance` is set.
pub fn monitor_and_repair(drive: f64, measured_hz: f64, policy: &RepairPolicy) -> RepairUpdate {
    let error = policy.target_rate_hz - measured_hz;
    let in_band = error.abs() <= policy.max_reconstruction_error * policy.target_rate_hz;
    let raw = if policy.hold_within_tolerance && in_band { drive } else { drive + policy.repair_gain * error };
    RepairUpdate {
        drive: raw.max(0.0),
        measured_hz,
        reconstruction_error: error.abs() / policy.target_rate_hz,
        activated: policy.repair_gain > 0.0 && error > policy.max_reconstruction_error * policy.target_rate_hz,
        saturated: raw < 0.0,
    }
}

/// Population form: one measured rate per astrocyte.
pub fn monitor_and_repair_all(
    drives: &[f64],
    measured_hz: &[f64],
    policy: &RepairPolicy,
    dt: f64,
) -> Result<Vec<RepairUpdate>, RepairError> {
    policy.validate(dt)?;
    Ok(drives.iter().zip(measured_hz).map(|(&d, &r)| monitor_and_repair(d, r, policy)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultToleranceMetric {
    pub o_original: f64,
    pub o_fault: f64,
    /// `(o_fault - o_original) / o_original * 100`.
    pub ft_percent: f64,
    /// `100 * min(o_fault, o_original) / o_original`; the column comparable to
    /// published fault-tolerance rates.
    pub retained_percent: f64,
}

pub fn fault_tolerance(o_original: f64, o_fault: f64) -> Result<FaultToleranceMetric, RepairError> {
    if !o_original.is_finite() || !o_fault.is_finite() {
        return Err(RepairError::NonFinite);
    }
    if o_original == 0.0 {
        return Err(RepairError::ZeroOriginal);
    }
    Ok(FaultToleranceMetric {
        o_original,
        o_fault,
        ft_percent: (o_fault - o_original) / o_original * 100.0,
        retained_percent: 100.0 * o_fault.min(o_original) / o_original,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkRecovery {
    /// `100 - ft_astro`.
    pub complement_percent: f64,
    /// `ft_astro - ft_baseline`.
    pub difference_percent: f64,
}

pub fn network_recovery(ft_baseline_percent: f64, ft_astro_percent: f64) -> Result<NetworkRecovery, RepairError> {
    if !ft_baseline_percent.is_finite() || !ft_astro_percent.is_finite() {
        return Err(RepairError::NonFinite);
    }
    Ok(NetworkRecovery {
        complement_percent: 100.0 - ft_astro_percent,
        difference_percent: ft_astro_percent - ft_baseline_percent,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Normal,
    Stress,
    Recovery,
    Failure,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Normal => "normal",
            Stage::Stress => "stress",
            Stage::Recovery => "recovery",
            Stage::Failure => "failure",
        }
    }
}

/// Per-window samples of one astrocyte.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AstrocyteTrace {
    pub astrocyte_id: usize,
    pub steps: Vec<u64>,
    /// Mean effective-threshold excursion of the covered neurons.
    pub delta_vth: Vec<f64>,
    pub g: Vec<f64>,
    pub rate_hz: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RecoveryRecord {
    pub traces: Vec<AstrocyteTrace>,
}

impl RecoveryRecord {
    pub fn is_empty(&self) -> bool {
        self.traces.iter().all(|t| t.steps.is_empty())
    }
}

/// Labels each sample of a ΔV_th series.
///
/// Below the stress level a window is normal. Above it, a window whose
/// magnitude is not falling is stress, turning into failure once it has
/// stayed above and non-falling for `failure_dwell` consecutive windows; a
/// falling window is recovery.
pub fn classify_series(delta_vth: &[f64], policy: &RepairPolicy) -> Vec<Stage> {
    let mut out = Vec::with_capacity(delta_vth.len());
    let mut run = 0usize;
    let mut prev: Option<f64> = None;
    for &d in delta_vth {
        let mag = d.abs();
        let stage = if mag < policy.stress_threshold_delta {
            run = 0;
            Stage::Normal
        } else {
            let falling = prev.is_some_and(|p| mag < p);
            if falling {
                run = 0;
                Stage::Recovery
            } else {
                run += 1;
                if run > policy.failure_dwell {
                    Stage::Failure
                } else {
                    Stage::Stress
                }
            }
        };
        prev = Some(mag);
        out.push(stage);
    }
    out
}

pub fn classify_windows(record: &RecoveryRecord, policy: &RepairPolicy) -> Result<Vec<Vec<Stage>>, RepairError> {
    if record.is_empty() {
        return Err(RepairError::EmptyRecord);
    }
    Ok(record.traces.iter().map(|t| classify_series(&t.delta_vth, policy)).collect())
}

/// CSV rows `step, astrocyte_id, delta_vth, g, stage`.
pub fn write_recovery_csv<W: std::io::Write>(
    record: &RecoveryRecord,
    policy: &RepairPolicy,
    out: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "astrocyte_id", "delta_vth", "g", "stage"])?;
    for trace in &record.traces {
        let stages = classify_series(&trace.delta_vth, policy);
        for (i, stage) in stages.iter().enumerate() {
            w.write_record([
                trace.steps[i].to_string(),
                trace.astrocyte_id.to_string(),
                format!("{:.9}", trace.delta_vth[i]),
                format!("{:.9}", trace.g[i]),
                stage.as_str().to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn controller_examples() {
        let p = RepairPolicy::default();
        let on_target = monitor_and_repair(0.4, p.target_rate_hz, &p);
        assert_eq!(on_target.drive, 0.4);
        assert_eq!(on_target.reconstruction_error, 0.0);
        assert!(!on_target.activated);

        let silent = monitor_and_repair(0.4, 0.0, &p);
        assert!((silent.drive - (0.4 + 0.1 * 2.17)).abs() < 1e-15);
        assert!(silent.activated);

        let off = RepairPolicy { repair_gain: 0.0, ..p };
        assert_eq!(monitor_and_repair(0.4, 0.0, &off).drive, 0.4);

        let hot = monitor_and_repair(0.0, 50.0, &p);
        assert_eq!(hot.drive, 0.0);
        assert!(hot.saturated);
    }

    #[test]
    fn tolerance_band_holds_drive() {
        let p = RepairPolicy::default();
        // 2.0 Hz is 7.8% below target: inside the 10% band.
        assert_eq!(monitor_and_repair(0.3, 2.0, &p).drive, 0.3);
        let strict = RepairPolicy { hold_within_tolerance: false, ..p };
        assert!((monitor_and_repair(0.3, 2.0, &strict).drive - (0.3 + 0.1 * 0.17)).abs() < 1e-12);
        // 1.9 Hz is outside the band.
        assert!((monitor_and_repair(0.3, 1.9, &p).drive - (0.3 + 0.1 * 0.27)).abs() < 1e-12);
    }

    #[test]
    fn controller_window_guard() {
        let p = RepairPolicy { rate_window_ms: 5.0, ..RepairPolicy::default() };
        assert!(matches!(monitor_and_repair_all(&[0.0], &[1.0], &p, 1.0), Err(RepairError::WindowTooShort { .. })));
        assert_eq!(monitor_and_repair_all(&[0.0], &[1.0], &RepairPolicy::default(), 1.0).unwrap().len(), 1);
    }

    #[test]
    fn fault_tolerance_examples() {
        let same = fault_tolerance(0.8, 0.8).unwrap();
        assert_eq!((same.ft_percent, same.retained_percent), (0.0, 100.0));
        let half = fault_tolerance(1.0, 0.5).unwrap();
        assert_eq!((half.ft_percent, half.retained_percent), (-50.0, 50.0));
        assert!(matches!(fault_tolerance(0.0, 0.5), Err(RepairError::ZeroOriginal)));
    }

    #[test]
    fn network_recovery_examples() {
        assert!((network_recovery(63.11, 81.10).unwrap().complement_percent - 18.90).abs() < 1e-9);
        assert_eq!(network_recovery(50.0, 100.0).unwrap().complement_percent, 0.0);
        assert!((network_recovery(63.11, 81.10).unwrap().difference_percent - 17.99).abs() < 1e-9);
    }

    #[test]
    fn classification_examples() {
        let p = RepairPolicy { stress_threshold_delta: 0.1, failure_dwell: 3, ..RepairPolicy::default() };
        assert!(classify_series(&[0.0; 8], &p).iter().all(|&s| s == Stage::Normal));

        let ramp = [0.0, 0.2, 0.4, 0.6, 0.5, 0.3, 0.15, 0.05];
        let labels = classify_series(&ramp, &p);
        let first_stress = labels.iter().position(|&s| s == Stage::Stress).unwrap();
        let first_recovery = labels.iter().position(|&s| s == Stage::Recovery).unwrap();
        assert!(first_stress < first_recovery);
        assert_eq!(labels[7], Stage::Normal);
        assert!(!labels.contains(&Stage::Failure));

        let saturated = [0.8; 8];
        let labels = classify_series(&saturated, &p);
        assert_eq!(&labels[..3], &[Stage::Stress; 3]);
        assert!(labels[3..].iter().all(|&s| s == Stage::Failure));

        assert!(matches!(classify_windows(&RecoveryRecord::default(), &p), Err(RepairError::EmptyRecord)));
    }

    #[test]
    fn recovery_csv_has_expected_columns() {
        let record = RecoveryRecord {
            traces: vec![AstrocyteTrace {
                astrocyte_id: 2,
                steps: vec![100, 200],
                delta_vth: vec![0.0, 0.3],
                g: vec![0.1, 0.2],
                rate_hz: vec![1.0, 2.0],
            }],
        };
        let mut buf = Vec::new();
        write_recovery_csv(&record, &RepairPolicy::default(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("step,astrocyte_id,delta_vth,g,stage"));
        assert!(lines.next().unwrap().ends_with(",normal"));
        assert!(lines.next().unwrap().ends_with(",stress"));
    }

    proptest! {
        #[test]
        fn fault_tolerance_scale_invariant(o in 0.01f64..10.0, f in 0.0f64..10.0, c in 0.01f64..100.0) {
            let a = fault_tolerance(o, f).unwrap();
            let b = fault_tolerance(o * c, f * c).unwrap();
            prop_assert!((a.ft_percent - b.ft_percent).abs() <= 1e-9 * (1.0 + a.ft_percent.abs()));
        }

        #[test]
        fn one_label_per_window(series in proptest::collection::vec(-2.0f64..2.0, 1..100)) {
            let labels = classify_series(&series, &RepairPolicy::default());
            prop_assert_eq!(labels.len(), series.len());
        }
    }
}
