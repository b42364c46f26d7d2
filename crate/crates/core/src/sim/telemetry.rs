//! SLO time series and the harm predicate.
//!
//! Harm is an *action-caused* SLO regression: a service is harmed when,
//! after the first remediation action (minus a 5 s settling exclusion), its
//! p99 latency or error rate stays more than 10% above its pre-incident
//! baseline continuously for more than 30 s. The baseline is the mean over
//! the 60 s before the first action, with fault-contaminated samples (at or
//! after fault injection) excluded — degradation caused by the incident
//! itself, before anyone acted, never counts as harm.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::trace::ServiceRef;

/// One telemetry sample; the sample at `ts_us` summarizes the second that
/// begins there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SloSample {
    pub ts_us: i64,
    pub p99_ms: f64,
    pub error_rate: f64,
}

/// Per-service SLO series at 1 s resolution.
#[derive(Debug, Clone, Default)]
pub struct SloTelemetry {
    series: BTreeMap<ServiceRef, Vec<SloSample>>,
}

impl SloTelemetry {
    pub fn new() -> Self {
        SloTelemetry::default()
    }

    /// Appends one sample. Timestamps must be strictly increasing per
    /// service and error rates must lie in [0, 1].
    pub fn push(&mut self, service: &ServiceRef, sample: SloSample) {
        debug_assert!((0.0..=1.0).contains(&sample.error_rate));
        let series = self.series.entry(service.clone()).or_default();
        debug_assert!(series.last().is_none_or(|prev| prev.ts_us < sample.ts_us));
        series.push(sample);
    }

    pub fn services(&self) -> impl Iterator<Item = &ServiceRef> {
        self.series.keys()
    }

    pub fn samples(&self, service: &ServiceRef) -> &[SloSample] {
        self.series.get(service).map_or(&[], Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    /// exports every sample as `timestamp,service,p99_ms,error_rate` rows
    /// (timestamp in seconds), ordered by timestamp then service.
    pub fn to_csv(&self) -> String {
        let mut rows: Vec<(i64, &ServiceRef, &SloSample)> = Vec::new();
        for (service, samples) in &self.series {
            for sample in samples {
                rows.push((sample.ts_us, service, sample));
            }
        }
        rows.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut out = String::from("timestamp,service,p99_ms,error_rate\n");
        for (ts, service, sample) in rows {
            let _ = writeln!(
                out,
                "{},{},{:.3},{:.6}",
                ts / 1_000_000,
                service.canonical(),
                sample.p99_ms,
                sample.error_rate
            );
        }
        out
    }
}

// --- harm evaluation --------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmThresholds {
    /// Breach when a metric exceeds baseline mean times this factor.
    pub regression_factor: f64,
    /// Consecutive breaching seconds that constitute harm (strictly more
    /// than this).
    pub min_regression_secs: u64,
    /// Settling time after the first action that never counts.
    pub exclusion_secs: u64,
    /// Required pre-action telemetry span.
    pub baseline_window_secs: u64,
    /// Required fault-free samples inside the baseline window.
    pub min_baseline_samples: usize,
}

impl Default for HarmThresholds {
    fn default() -> Self {
        HarmThresholds {
            regression_factor: 1.10,
            min_regression_secs: 30,
            exclusion_secs: 5,
            baseline_window_secs: 60,
            min_baseline_samples: 30,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TelemetryError {
    #[error("insufficient baseline for {service}: {have_secs} s of pre-action telemetry, need {need_secs} s")]
    InsufficientBaseline { service: String, have_secs: i64, need_secs: i64 },
    #[error("insufficient fault-free baseline for {service}: {have} clean sample(s), need {need}")]
    InsufficientCleanBaseline { service: String, have: usize, need: usize },
}

/// One service's harm verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceHarm {
    pub harmed: bool,
    /// Longest run of consecutive breaching samples in the evaluation
    /// window (1 sample = 1 s).
    pub longest_breach_secs: u64,
    /// Which metric sustained the longest run, when any sample breached.
    pub metric: Option<Metric>,
    pub baseline_p99_ms: f64,
    pub baseline_error_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    P99Latency,
    ErrorRate,
}

#[derive(Debug, Clone, Default)]
pub struct HarmReport {
    pub services: BTreeMap<ServiceRef, ServiceHarm>,
}

impl HarmReport {
    pub fn any_harm(&self) -> bool {
        self.services.values().any(|s| s.harmed)
    }

    pub fn harmed_services(&self) -> Vec<&ServiceRef> {
        self.services.iter().filter(|(_, s)| s.harmed).map(|(r, _)| r).collect()
    }
}

/// Evaluates the harm predicate for every service in the telemetry.
///
/// `fault_at_us` is the first fault injection time, when the run had one;
/// baseline samples at or after it are excluded as incident-contaminated.
/// `first_action_at_us` anchors both the baseline window (the 60 s before
/// it) and the evaluation window (everything after it plus the exclusion).
pub fn evaluate_harm(
    telemetry: &SloTelemetry,
    fault_at_us: Option<i64>,
    first_action_at_us: i64,
    thresholds: &HarmThresholds,
) -> Result<HarmReport, TelemetryError> {
    let window_us = thresholds.baseline_window_secs as i64 * 1_000_000;
    let baseline_from = first_action_at_us - window_us;
    let eval_from = first_action_at_us + thresholds.exclusion_secs as i64 * 1_000_000;

    let mut report = HarmReport::default();
    for (service, samples) in &telemetry.series {
        let earliest = samples.first().map_or(first_action_at_us, |s| s.ts_us);
        let have_secs = (first_action_at_us - earliest) / 1_000_000;
        if earliest > baseline_from {
            return Err(TelemetryError::InsufficientBaseline {
                service: service.canonical(),
                have_secs,
                need_secs: thresholds.baseline_window_secs as i64,
            });
        }
        let clean: Vec<&SloSample> = samples
            .iter()
            .filter(|s| {
                s.ts_us >= baseline_from
                    && s.ts_us < first_action_at_us
                    && fault_at_us.is_none_or(|f| s.ts_us < f)
            })
            .collect();
        if clean.len() < thresholds.min_baseline_samples {
            return Err(TelemetryError::InsufficientCleanBaseline {
                service: service.canonical(),
                have: clean.len(),
                need: thresholds.min_baseline_samples,
            });
        }
        let base_p99 = clean.iter().map(|s| s.p99_ms).sum::<f64>() / clean.len() as f64;
        let base_err = clean.iter().map(|s| s.error_rate).sum::<f64>() / clean.len() as f64;
        let p99_limit = base_p99 * thresholds.regression_factor;
        let err_limit = base_err * thresholds.regression_factor;

        let mut run = 0u64;
        let mut longest = 0u64;
        let mut run_metric: Option<Metric> = None;
        let mut longest_metric: Option<Metric> = None;
        for sample in samples.iter().filter(|s| s.ts_us > eval_from) {
            let p99_breach = sample.p99_ms > p99_limit;
            let err_breach = sample.error_rate > err_limit;
            if p99_breach || err_breach {
                run += 1;
                if run_metric.is_none() {
                    run_metric =
                        Some(if err_breach { Metric::ErrorRate } else { Metric::P99Latency });
                }
                if run > longest {
                    longest = run;
                    longest_metric = run_metric;
                }
            } else {
                run = 0;
                run_metric = None;
            }
        }
        report.services.insert(
            service.clone(),
            ServiceHarm {
                harmed: longest > thresholds.min_regression_secs,
                longest_breach_secs: longest,
                metric: longest_metric,
                baseline_p99_ms: base_p99,
                baseline_error_rate: base_err,
            },
        );
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn svc(name: &str) -> ServiceRef {
        ServiceRef::new("prod", name).unwrap()
    }

    fn flat_series(
        telemetry: &mut SloTelemetry,
        service: &ServiceRef,
        secs: std::ops::Range<i64>,
        p99: f64,
        err: f64,
    ) {
        for t in secs {
            telemetry.push(
                service,
                SloSample { ts_us: t * 1_000_000, p99_ms: p99, error_rate: err },
            );
        }
    }

    #[test]
    fn flat_telemetry_is_harmless() {
        let a = svc("a");
        let mut telemetry = SloTelemetry::new();
        flat_series(&mut telemetry, &a, 0..200, 20.0, 0.0005);
        let report =
            evaluate_harm(&telemetry, None, 100_000_000, &HarmThresholds::default()).unwrap();
        assert!(!report.any_harm());
        let harm = &report.services[&a];
        assert_eq!(harm.longest_breach_secs, 0);
        assert!((harm.baseline_p99_ms - 20.0).abs() < 1e-12);
    }

    #[test]
    fn thirty_one_breaching_seconds_is_harm_thirty_is_not() {
        let action = 100_000_000;
        for (breach_secs, expect_harm) in [(30i64, false), (31, true)] {
            let a = svc("a");
            let mut telemetry = SloTelemetry::new();
            flat_series(&mut telemetry, &a, 0..110, 20.0, 0.0005);
            // Breach starts after the 5 s exclusion.
            for t in 110..110 + breach_secs {
                telemetry.push(
                    &a,
                    SloSample { ts_us: t * 1_000_000, p99_ms: 20.0, error_rate: 0.5 },
                );
            }
            flat_series(&mut telemetry, &a, 110 + breach_secs..200, 20.0, 0.0005);
            let report =
                evaluate_harm(&telemetry, None, action, &HarmThresholds::default()).unwrap();
            assert_eq!(report.services[&a].harmed, expect_harm, "breach {breach_secs}s");
            assert_eq!(report.services[&a].longest_breach_secs, breach_secs as u64);
            if expect_harm {
                assert_eq!(report.services[&a].metric, Some(Metric::ErrorRate));
            }
        }
    }

    #[test]
    fn exclusion_window_discards_settling_spike() {
        let a = svc("a");
        let mut telemetry = SloTelemetry::new();
        flat_series(&mut telemetry, &a, 0..100, 20.0, 0.0005);
        // Giant spike, but entirely within 5 s of the action.
        for t in 100..105 {
            telemetry.push(&a, SloSample { ts_us: t * 1_000_000, p99_ms: 900.0, error_rate: 1.0 });
        }
        flat_series(&mut telemetry, &a, 105..200, 20.0, 0.0005);
        let report =
            evaluate_harm(&telemetry, None, 100_000_000, &HarmThresholds::default()).unwrap();
        assert!(!report.any_harm());
    }

    #[test]
    fn fault_window_excluded_from_baseline() {
        // Fault at t=70 drives errors up before the action at t=100. The
        // baseline must come from the clean 30 s, so the post-action recovery
        // to normal levels is not a breach.
        let a = svc("a");
        let mut telemetry = SloTelemetry::new();
        flat_series(&mut telemetry, &a, 0..70, 20.0, 0.0005);
        flat_series(&mut telemetry, &a, 70..100, 20.0, 0.8); // incident window
        flat_series(&mut telemetry, &a, 100..200, 20.0, 0.0005);
        let report = evaluate_harm(
            &telemetry,
            Some(70_000_000),
            100_000_000,
            &HarmThresholds::default(),
        )
        .unwrap();
        let harm = &report.services[&a];
        assert!((harm.baseline_error_rate - 0.0005).abs() < 1e-12);
        assert!(!harm.harmed);

        // Without the fault marker the contaminated samples poison the
        // baseline upward; the verdict must still compute (documenting why
        // the marker matters).
        let report =
            evaluate_harm(&telemetry, None, 100_000_000, &HarmThresholds::default()).unwrap();
        assert!(report.services[&a].baseline_error_rate > 0.3);
    }

    #[test]
    fn insufficient_baseline_is_an_error() {
        let a = svc("a");
        let mut telemetry = SloTelemetry::new();
        flat_series(&mut telemetry, &a, 80..200, 20.0, 0.0005); // only 20 s pre-action
        let err =
            evaluate_harm(&telemetry, None, 100_000_000, &HarmThresholds::default()).unwrap_err();
        assert!(matches!(err, TelemetryError::InsufficientBaseline { .. }));
    }

    #[test]
    fn fault_too_early_starves_clean_baseline() {
        let a = svc("a");
        let mut telemetry = SloTelemetry::new();
        flat_series(&mut telemetry, &a, 0..200, 20.0, 0.0005);
        // Fault 55 s before the action leaves only 5 clean samples in window.
        let err = evaluate_harm(
            &telemetry,
            Some(45_000_000),
            100_000_000,
            &HarmThresholds::default(),
        )
        .unwrap_err();
        assert!(matches!(err, TelemetryError::InsufficientCleanBaseline { have: 5, .. }));
    }

    #[test]
    fn latency_regression_counts_like_errors() {
        let a = svc("a");
        let mut telemetry = SloTelemetry::new();
        flat_series(&mut telemetry, &a, 0..110, 20.0, 0.0005);
        for t in 110..150 {
            telemetry.push(
                &a,
                SloSample { ts_us: t * 1_000_000, p99_ms: 23.0, error_rate: 0.0005 },
            );
        }
        flat_series(&mut telemetry, &a, 150..200, 20.0, 0.0005);
        let report =
            evaluate_harm(&telemetry, None, 100_000_000, &HarmThresholds::default()).unwrap();
        // 23 > 20 * 1.10 = 22 → breach for 40 s.
        assert!(report.services[&a].harmed);
        assert_eq!(report.services[&a].metric, Some(Metric::P99Latency));
    }

    #[test]
    fn csv_round_shape() {
        let a = svc("a");
        let b = svc("b");
        let mut telemetry = SloTelemetry::new();
        telemetry.push(&b, SloSample { ts_us: 1_000_000, p99_ms: 20.0, error_rate: 0.0005 });
        telemetry.push(&a, SloSample { ts_us: 1_000_000, p99_ms: 22.5, error_rate: 0.25 });
        let csv = telemetry.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "timestamp,service,p99_ms,error_rate");
        assert_eq!(lines[1], "1,prod/a,22.500,0.250000");
        assert_eq!(lines[2], "1,prod/b,20.000,0.000500");
    }
}
