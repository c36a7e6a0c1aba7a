//! Synthetic SCADA pipeline telemetry and a class-conditioned oscillation
//! generator.
//!
//! The pipeline model is deliberately simple. Every channel is a slow
//! sinusoidal operating trend plus AR(1) noise. Throughput demand drives the
//! flows, pressures and compressor discharge temperatures; ambient
//! temperature adds a weaker second cycle. A leak event at onset `e` with
//! severity `s` has three phases:
//!
//! * precursor, steps `e-N..e`: downstream pressures drift down linearly over
//!   the first `PRECURSOR_RAMP` share of the span, then hold at
//!   `0.5 * s * PRESSURE_DROP` until the onset; their noise variance is
//!   scaled by `1 + s`;
//! * leak, steps `e..e+duration`: downstream pressures sit `s * PRESSURE_DROP`
//!   below baseline and the two flow meters diverge by `s * FLOW_DIVERGENCE`;
//! * afterwards the line returns to its baseline.
//!
//! Every perturbation scales with severity, so a zero-severity event leaves
//! the channels bit-identical to an event-free run with the same seed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{TimeSeriesFrame, CLASS_ABNORMAL, CLASS_DOUBTFUL, CLASS_NORMAL};
use crate::tensor::{Rng, Tensor};

pub const AR_COEFFICIENT: f64 = 0.9;
/// Downstream pressure loss of a severity-1 leak, in MPa.
pub const PRESSURE_DROP: f64 = 0.6;
/// Flow-meter divergence of a severity-1 leak.
pub const FLOW_DIVERGENCE: f64 = 15.0;
/// Share of the precursor span over which the pressure drift builds up.
pub const PRECURSOR_RAMP: f64 = 0.25;

/// Normal : abnormal sample ratio of the reference field data set.
pub const REFERENCE_NORMAL: usize = 364_613;
pub const REFERENCE_ABNORMAL: usize = 12_244;

/// One period of the operating-demand cycle: a day at 20 s sampling.
const DEMAND_PERIOD: f64 = 4320.0;
const AMBIENT_PERIOD: f64 = 6170.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeakEvent {
    pub onset: usize,
    /// In `[0, 1]`; zero leaves the signals untouched.
    pub severity: f64,
    /// Number of abnormal steps starting at `onset`.
    pub duration: usize,
}

impl LeakEvent {
    pub fn end(&self) -> usize {
        self.onset + self.duration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub n_stations: usize,
    /// Seconds between samples.
    pub sample_interval: i64,
    pub total_steps: usize,
    pub leak_events: Vec<LeakEvent>,
    /// Precursor length `N` in steps; also the doubtful-label horizon.
    pub horizon_n: usize,
    /// Per-channel noise standard deviations; `None` uses defaults by sensor kind.
    pub noise_std: Option<Vec<f64>>,
    /// Pressure points with index `>= leak_segment` lie downstream of the leak.
    pub leak_segment: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig::ngpod_like(40_000, 6, 200, 0)
    }
}

impl PipelineConfig {
    /// Evenly spread leak events with seeded jitter and severities, sized so the
    /// abnormal share matches the reference field data.
    pub fn ngpod_like(total_steps: usize, n_events: usize, horizon_n: usize, seed: u64) -> Self {
        let mut rng = Rng::new(seed).fork(0x1eac);
        let abnormal_total = (total_steps as f64 * REFERENCE_ABNORMAL as f64
            / (REFERENCE_NORMAL + REFERENCE_ABNORMAL) as f64)
            .round() as usize;
        let duration = abnormal_total.checked_div(n_events).map_or(0, |d| d.max(1));
        let spacing = total_steps as f64 / (n_events as f64 + 1.0);
        let jitter = (spacing * 0.15).floor();
        let leak_events = (0..n_events)
            .map(|i| {
                let centre = spacing * (i as f64 + 1.0);
                let offset = rng.uniform_range(-jitter, jitter);
                LeakEvent {
                    onset: (centre + offset).round().max(0.0) as usize,
                    severity: rng.uniform_range(0.6, 1.0),
                    duration,
                }
            })
            .collect();
        PipelineConfig {
            n_stations: 4,
            sample_interval: 20,
            total_steps,
            leak_events,
            horizon_n,
            noise_std: None,
            leak_segment: 3,
            seed,
        }
    }

    /// Full-size variant matching the reference record count.
    pub fn ngpod_full_size(horizon_n: usize, seed: u64) -> Self {
        let total = REFERENCE_NORMAL + REFERENCE_ABNORMAL;
        let events = (6.0 * total as f64 / 40_000.0).round() as usize;
        PipelineConfig::ngpod_like(total, events, horizon_n, seed)
    }

    pub fn channel_names(&self) -> Vec<String> {
        sensor_layout(self.n_stations).into_iter().map(|s| s.name).collect()
    }

    pub fn n_channels(&self) -> usize {
        sensor_layout(self.n_stations).len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_stations < 2 {
            return Err(Error::Config("a pipeline needs at least two stations".into()));
        }
        if self.sample_interval <= 0 {
            return Err(Error::Config("sample interval must be positive".into()));
        }
        let n_pressure = 2 * (self.n_stations - 1);
        if self.leak_segment == 0 || self.leak_segment >= n_pressure {
            return Err(Error::Config(format!(
                "leak segment must lie in 1..{n_pressure}, got {}",
                self.leak_segment
            )));
        }
        if let Some(noise) = &self.noise_std {
            if noise.len() != self.n_channels() {
                return Err(Error::Config(format!(
                    "{} noise levels for {} channels",
                    noise.len(),
                    self.n_channels()
                )));
            }
            if noise.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
                return Err(Error::Config("noise levels must be finite and >= 0".into()));
            }
        }
        let mut prev_end = 0usize;
        for (i, ev) in self.leak_events.iter().enumerate() {
            if !(0.0..=1.0).contains(&ev.severity) {
                return Err(Error::Config(format!(
                    "event {i}: severity {} outside [0, 1]",
                    ev.severity
                )));
            }
            if ev.onset < self.horizon_n {
                return Err(Error::Config(format!(
                    "event {i}: onset {} leaves no room for a {}-step precursor",
                    ev.onset, self.horizon_n
                )));
            }
            if i > 0 {
                let prev = &self.leak_events[i - 1];
                if ev.onset <= prev.onset {
                    return Err(Error::Config("leak onsets must be strictly increasing".into()));
                }
                if ev.onset - self.horizon_n < prev_end {
                    return Err(Error::Config(format!(
                        "event {i}: precursor window starting at {} overlaps the event ending at {prev_end}",
                        ev.onset - self.horizon_n
                    )));
                }
            }
            if ev.onset >= self.total_steps {
                return Err(Error::Config(format!("event {i}: onset beyond the series end")));
            }
            prev_end = ev.end();
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SensorKind {
    Temperature,
    /// Position of the pressure point along the line.
    Pressure(usize),
    FlowUpstream,
    FlowDownstream,
}

#[derive(Debug, Clone)]
struct Sensor {
    name: String,
    kind: SensorKind,
    /// Position along the line, used for the static gradient.
    position: usize,
}

/// Temperature and pressure at each station inlet and outlet (the first
/// station has only an outlet, the last only an inlet), then the two flow meters.
fn sensor_layout(n_stations: usize) -> Vec<Sensor> {
    let mut sensors = Vec::new();
    let mut point = 0;
    for st in 1..=n_stations {
        let mut ends = Vec::new();
        if st > 1 {
            ends.push("in");
        }
        if st < n_stations {
            ends.push("out");
        }
        for end in ends {
            sensors.push(Sensor {
                name: format!("st{st}_{end}_temp"),
                kind: SensorKind::Temperature,
                position: point,
            });
            sensors.push(Sensor {
                name: format!("st{st}_{end}_pres"),
                kind: SensorKind::Pressure(point),
                position: point,
            });
            point += 1;
        }
    }
    sensors.push(Sensor {
        name: "flow_st1_out".into(),
        kind: SensorKind::FlowUpstream,
        position: 0,
    });
    sensors.push(Sensor {
        name: format!("flow_st{n_stations}_in"),
        kind: SensorKind::FlowDownstream,
        position: point.saturating_sub(1),
    });
    sensors
}

fn default_noise(kind: SensorKind) -> f64 {
    match kind {
        SensorKind::Temperature => 0.08,
        SensorKind::Pressure(_) => 0.012,
        SensorKind::FlowUpstream | SensorKind::FlowDownstream => 0.6,
    }
}

/// Assigns classes: abnormal during each event, doubtful for the `horizon`
/// steps before each onset (cut short at the previous event's end), normal
/// elsewhere.
pub fn label_events(total_steps: usize, events: &[LeakEvent], horizon: usize) -> Vec<usize> {
    let mut labels = vec![CLASS_NORMAL; total_steps];
    let mut prev_end = 0;
    for ev in events {
        let start = ev.onset.saturating_sub(horizon).max(prev_end).min(total_steps);
        let onset = ev.onset.min(total_steps);
        labels[start..onset].fill(CLASS_DOUBTFUL);
        labels[onset..ev.end().min(total_steps)].fill(CLASS_ABNORMAL);
        prev_end = ev.end();
    }
    labels
}

/// Recovers `(onset, end)` of each contiguous abnormal segment.
pub fn abnormal_segments(labels: &[usize]) -> Vec<(usize, usize)> {
    let mut segments = Vec::new();
    let mut start = None;
    for (t, &l) in labels.iter().enumerate() {
        match (l == CLASS_ABNORMAL, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                segments.push((s, t));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        segments.push((s, labels.len()));
    }
    segments
}

/// Relabels doubtful steps for a different horizon. Abnormal segments are
/// kept; previous doubtful labels are cleared first.
pub fn relabel_horizon(labels: &[usize], horizon: usize) -> Vec<usize> {
    let events: Vec<LeakEvent> = abnormal_segments(labels)
        .into_iter()
        .map(|(onset, end)| LeakEvent {
            onset,
            severity: 1.0,
            duration: end - onset,
        })
        .collect();
    let mut out = label_events(labels.len(), &events, horizon);
    // Classes other than the three pipeline classes pass through untouched.
    for (o, &l) in out.iter_mut().zip(labels) {
        if l > CLASS_DOUBTFUL {
            *o = l;
        }
    }
    out
}

/// Generates the synthetic pipeline telemetry described in the module docs.
pub fn generate_pipeline(config: &PipelineConfig) -> Result<TimeSeriesFrame> {
    config.validate()?;
    let sensors = sensor_layout(config.n_stations);
    let n = sensors.len();
    let t_total = config.total_steps;
    let noise_std: Vec<f64> = match &config.noise_std {
        Some(v) => v.clone(),
        None => sensors.iter().map(|s| default_noise(s.kind)).collect(),
    };

    let root = Rng::new(config.seed);
    let mut phase_rng = root.fork(1);
    // Phase bounds are arbitrary; kept as literals so existing seeds reproduce the same data.
    #[allow(clippy::approx_constant)]
    let demand_phase = [phase_rng.uniform_range(0.0, 6.283), phase_rng.uniform_range(0.0, 6.283)];
    #[allow(clippy::approx_constant)]
    let ambient_phase = phase_rng.uniform_range(0.0, 6.283);

    // Leak perturbations per step: (pressure offset, pressure noise factor, flow divergence).
    let mut pressure_offset = vec![0.0; t_total];
    let mut noise_factor = vec![1.0; t_total];
    let mut flow_offset = vec![0.0; t_total];
    for ev in &config.leak_events {
        let start = ev.onset - config.horizon_n;
        for t in start..ev.onset.min(t_total) {
            let frac = ((t - start + 1) as f64 / (PRECURSOR_RAMP * config.horizon_n as f64)).min(1.0);
            pressure_offset[t] = -0.5 * ev.severity * PRESSURE_DROP * frac;
            noise_factor[t] = (1.0 + ev.severity).sqrt();
        }
        for t in ev.onset..ev.end().min(t_total) {
            pressure_offset[t] = -ev.severity * PRESSURE_DROP;
            flow_offset[t] = ev.severity * FLOW_DIVERGENCE;
        }
    }

    let innovation = (1.0 - AR_COEFFICIENT * AR_COEFFICIENT).sqrt();
    let mut data = vec![0.0; t_total * n];
    for (c, sensor) in sensors.iter().enumerate() {
        let mut rng = root.fork(100 + c as u64);
        let mut ar = rng.standard_normal();
        let downstream = matches!(sensor.kind, SensorKind::Pressure(p) if p >= config.leak_segment);
        for t in 0..t_total {
            if t > 0 {
                ar = AR_COEFFICIENT * ar + innovation * rng.standard_normal();
            }
            let tf = t as f64;
            let demand = (std::f64::consts::TAU * tf / DEMAND_PERIOD + demand_phase[0]).sin()
                + 0.5 * (std::f64::consts::TAU * tf / (DEMAND_PERIOD / 3.1) + demand_phase[1]).sin();
            let ambient = (std::f64::consts::TAU * tf / AMBIENT_PERIOD + ambient_phase).sin();
            let pos = sensor.position as f64;
            let mut noise = noise_std[c] * ar;
            let value = match sensor.kind {
                SensorKind::Temperature => 24.0 - 0.6 * pos + 1.5 * demand + 0.2 * ambient + noise,
                SensorKind::Pressure(_) => {
                    let mut p = 6.0 - 0.15 * pos + 0.12 * demand;
                    if downstream {
                        p += pressure_offset[t];
                        noise *= noise_factor[t];
                    }
                    p + noise
                }
                SensorKind::FlowUpstream => 120.0 + 12.0 * demand + flow_offset[t] + noise,
                SensorKind::FlowDownstream => 120.0 + 12.0 * demand - flow_offset[t] + noise,
            };
            data[t * n + c] = value;
        }
    }

    let timestamps = (0..t_total as i64).map(|t| t * config.sample_interval).collect();
    let labels = label_events(t_total, &config.leak_events, config.horizon_n);
    TimeSeriesFrame::new(
        timestamps,
        Tensor::new(vec![t_total, n], data)?,
        labels,
        sensors.into_iter().map(|s| s.name).collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassConfig {
    pub seed: u64,
    pub n_classes: usize,
    /// Number of segments generated for each class.
    pub samples_per_class: Vec<usize>,
    /// Steps per segment.
    pub length: usize,
    pub n_channels: usize,
    pub noise_std: f64,
}

impl MulticlassConfig {
    /// Ten balanced classes, a small stand-in for a bearing-fault benchmark.
    pub fn ten_class(seed: u64) -> Self {
        MulticlassConfig {
            seed,
            n_classes: 10,
            samples_per_class: vec![20; 10],
            length: 200,
            n_channels: 3,
            noise_std: 0.1,
        }
    }

    /// Frequency in cycles per step of the class signature.
    pub fn frequency(class: usize) -> f64 {
        0.02 + 0.021 * class as f64
    }

    pub fn amplitude(class: usize) -> f64 {
        1.0 + 0.15 * class as f64
    }
}

/// Concatenates shuffled segments, each a class-specific sinusoid per channel plus noise.
pub fn generate_multiclass(config: &MulticlassConfig) -> Result<TimeSeriesFrame> {
    if config.samples_per_class.is_empty() {
        return Err(Error::Parameter("empty class list".into()));
    }
    if config.n_classes < 2 {
        return Err(Error::Parameter(format!(
            "need at least two classes, got {}",
            config.n_classes
        )));
    }
    if config.samples_per_class.len() != config.n_classes {
        return Err(Error::Parameter(format!(
            "{} segment counts for {} classes",
            config.samples_per_class.len(),
            config.n_classes
        )));
    }
    if config.n_channels == 0 || config.length == 0 || !(config.noise_std >= 0.0) {
        return Err(Error::Parameter("channels, length and noise must be positive".into()));
    }
    let mut rng = Rng::new(config.seed);
    let mut order: Vec<usize> = config
        .samples_per_class
        .iter()
        .enumerate()
        .flat_map(|(c, &k)| std::iter::repeat(c).take(k))
        .collect();
    rng.shuffle(&mut order);

    let n = config.n_channels;
    let total = order.len() * config.length;
    let mut data = Vec::with_capacity(total * n);
    let mut labels = Vec::with_capacity(total);
    for &class in &order {
        let f = MulticlassConfig::frequency(class);
        let a = MulticlassConfig::amplitude(class);
        let phase = rng.uniform_range(0.0, std::f64::consts::TAU);
        for t in 0..config.length {
            for ch in 0..n {
                let arg = std::f64::consts::TAU * f * t as f64 + phase + 0.7 * ch as f64;
                data.push(a * arg.sin() + config.noise_std * rng.standard_normal());
            }
            labels.push(class);
        }
    }
    TimeSeriesFrame::new(
        (0..total as i64).collect(),
        Tensor::new(vec![total, n], data)?,
        labels,
        (0..n).map(|c| format!("vib{c}")).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(severity: f64) -> PipelineConfig {
        PipelineConfig {
            total_steps: 2000,
            leak_events: vec![LeakEvent {
                onset: 1000,
                severity,
                duration: 150,
            }],
            horizon_n: 200,
            ..PipelineConfig::ngpod_like(2000, 0, 200, 11)
        }
    }

    #[test]
    fn layout_has_fourteen_channels_for_four_stations() {
        let names = PipelineConfig::default().channel_names();
        assert_eq!(names.len(), 14);
        assert_eq!(names[0], "st1_out_temp");
        assert!(!names.iter().any(|n| n.starts_with("st1_in")));
        assert!(!names.iter().any(|n| n.starts_with("st4_out")));
        assert_eq!(&names[12..], &["flow_st1_out", "flow_st4_in"]);
    }

    #[test]
    fn labels_follow_onset_and_horizon() {
        let f = generate_pipeline(&small(0.8)).unwrap();
        assert!(f.labels[..800].iter().all(|&l| l == CLASS_NORMAL));
        assert!(f.labels[800..1000].iter().all(|&l| l == CLASS_DOUBTFUL));
        assert!(f.labels[1000..1150].iter().all(|&l| l == CLASS_ABNORMAL));
        assert!(f.labels[1150..].iter().all(|&l| l == CLASS_NORMAL));
    }

    #[test]
    fn zero_severity_matches_event_free_run() {
        let with = generate_pipeline(&small(0.0)).unwrap();
        let mut cfg = small(0.0);
        cfg.leak_events.clear();
        let without = generate_pipeline(&cfg).unwrap();
        assert_eq!(with.channels, without.channels);
    }

    #[test]
    fn same_seed_same_frame() {
        let a = generate_pipeline(&small(0.7)).unwrap();
        let b = generate_pipeline(&small(0.7)).unwrap();
        assert_eq!(a, b);
        let mut other = small(0.7);
        other.seed += 1;
        assert_ne!(generate_pipeline(&other).unwrap().channels, a.channels);
    }

    #[test]
    fn doubtful_deviation_is_intermediate() {
        let cfg = small(0.9);
        let f = generate_pipeline(&cfg).unwrap();
        let mut base_cfg = cfg.clone();
        base_cfg.leak_events[0].severity = 0.0;
        let base = generate_pipeline(&base_cfg).unwrap();
        let n = f.n_channels();
        let mut sums = [0.0; 3];
        let mut counts = [0usize; 3];
        for t in 0..f.len() {
            let dev: f64 = (0..n)
                .map(|c| (f.channels.data()[t * n + c] - base.channels.data()[t * n + c]).abs())
                .sum::<f64>()
                / n as f64;
            sums[f.labels[t]] += dev;
            counts[f.labels[t]] += 1;
        }
        let mean: Vec<f64> = (0..3).map(|k| sums[k] / counts[k] as f64).collect();
        assert!(mean[CLASS_NORMAL] < mean[CLASS_DOUBTFUL], "{mean:?}");
        assert!(mean[CLASS_DOUBTFUL] < mean[CLASS_ABNORMAL], "{mean:?}");
    }

    #[test]
    fn overlapping_precursors_are_rejected() {
        let mut cfg = small(0.5);
        cfg.leak_events.push(LeakEvent {
            onset: 1250,
            severity: 0.5,
            duration: 10,
        });
        assert!(matches!(generate_pipeline(&cfg), Err(Error::Config(_))));
        cfg.leak_events[1].onset = 1350;
        assert!(generate_pipeline(&cfg).is_ok());
    }

    #[test]
    fn early_onset_is_rejected() {
        let mut cfg = small(0.5);
        cfg.leak_events[0].onset = 100;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn default_preset_mimics_reference_imbalance() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let labels = label_events(cfg.total_steps, &cfg.leak_events, cfg.horizon_n);
        let abnormal = labels.iter().filter(|&&l| l == CLASS_ABNORMAL).count() as f64;
        let doubtful = labels.iter().filter(|&&l| l == CLASS_DOUBTFUL).count();
        let share = abnormal / labels.len() as f64;
        let reference = REFERENCE_ABNORMAL as f64 / (REFERENCE_NORMAL + REFERENCE_ABNORMAL) as f64;
        assert!((share - reference).abs() < 0.002, "abnormal share {share}");
        assert_eq!(doubtful, cfg.horizon_n * cfg.leak_events.len());
    }

    #[test]
    fn relabel_moves_only_doubtful_steps() {
        let cfg = PipelineConfig::default();
        let labels = label_events(cfg.total_steps, &cfg.leak_events, 200);
        let wider = relabel_horizon(&labels, 350);
        assert_eq!(wider, label_events(cfg.total_steps, &cfg.leak_events, 350));
        assert_eq!(relabel_horizon(&wider, 200), labels);
    }

    #[test]
    fn relabel_truncates_at_previous_event() {
        let mut labels = vec![0; 100];
        labels[10..20].fill(CLASS_ABNORMAL);
        labels[30..40].fill(CLASS_ABNORMAL);
        let out = relabel_horizon(&labels, 15);
        assert!(out[0..10].iter().all(|&l| l == CLASS_DOUBTFUL));
        assert!(out[20..30].iter().all(|&l| l == CLASS_DOUBTFUL));
        assert_eq!(out[19], CLASS_ABNORMAL);
    }

    #[test]
    fn multiclass_errors() {
        let mut cfg = MulticlassConfig::ten_class(1);
        cfg.samples_per_class.clear();
        assert!(matches!(generate_multiclass(&cfg), Err(Error::Parameter(_))));
        let mut cfg = MulticlassConfig::ten_class(1);
        cfg.n_classes = 1;
        cfg.samples_per_class = vec![3];
        assert!(generate_multiclass(&cfg).is_err());
    }

    #[test]
    fn multiclass_is_deterministic_and_balanced() {
        let cfg = MulticlassConfig::ten_class(5);
        let a = generate_multiclass(&cfg).unwrap();
        assert_eq!(a, generate_multiclass(&cfg).unwrap());
        assert_eq!(a.class_counts(10), vec![20 * 200; 10]);
    }

    #[test]
    fn noiseless_two_class_segments_separate_by_matched_filter() {
        let cfg = MulticlassConfig {
            seed: 3,
            n_classes: 2,
            samples_per_class: vec![15, 15],
            length: 200,
            n_channels: 1,
            noise_std: 0.0,
        };
        let f = generate_multiclass(&cfg).unwrap();
        for seg in 0..30 {
            let rows = seg * 200..(seg + 1) * 200;
            let truth = f.labels[rows.start];
            assert!(f.labels[rows.clone()].iter().all(|&l| l == truth));
            let power = |class: usize| {
                let freq = MulticlassConfig::frequency(class);
                let (mut re, mut im) = (0.0, 0.0);
                for (i, t) in rows.clone().enumerate() {
                    let arg = std::f64::consts::TAU * freq * i as f64;
                    re += f.channels.data()[t] * arg.cos();
                    im += f.channels.data()[t] * arg.sin();
                }
                (re * re + im * im) / MulticlassConfig::amplitude(class).powi(2)
            };
            let predicted = if power(0) > power(1) { 0 } else { 1 };
            assert_eq!(predicted, truth, "segment {seg}");
        }
    }
}
