//! Per-layer cost accounting.
//!
//! A row's `events` is the mean number of nonzero messages a layer emits per
//! step (for ANN execution, its activation count). A row's `synops` is the
//! work those messages trigger downstream, charged to the receiving layer:
//! `upstream events * kh * kw * C_out / (sh * sw)`. For ANN rows the same
//! product is the MAC count. The input layer receives nothing and has no
//! synops entry.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::layers::ConvSpec;
use crate::network::{Mode, NetworkConfig, Trace, LAYER_NAMES};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    /// `(height, width, channels)`.
    pub shape: (usize, usize, usize),
    /// Mean events (ANN: activations) per step.
    pub events: f64,
    /// Mean synops (ANN: MACs) per step; `None` for the input layer.
    pub synops: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub events: f64,
    pub synops: f64,
}

/// ANN total over mode total. Infinite when the mode is silent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    #[serde(with = "inf_sentinel")]
    pub events: f64,
    #[serde(with = "inf_sentinel")]
    pub synops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: Mode,
    pub layers: Vec<LayerCost>,
    pub totals: Totals,
    /// Present when the report also holds an ANN column.
    pub ratios: Option<Ratios>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub schema_version: u32,
    pub modes: Vec<ModeReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(Self::Table),
            "json" => Ok(Self::Json),
            other => Err(Error::invalid(format!("unknown report format '{other}'"))),
        }
    }
}

/// Mean nonzero messages per step for every layer of a trace.
pub fn count_events(trace: &Trace) -> Result<Vec<f64>> {
    if trace.layers.is_empty() {
        return Err(Error::Empty("trace has no layers"));
    }
    let steps = trace.steps();
    if steps == 0 {
        return Err(Error::Empty("trace has no steps"));
    }
    trace
        .layers
        .iter()
        .map(|layer| {
            if layer.events_per_step.len() != steps {
                return Err(Error::shape(format!("layer {} has a ragged trace", layer.name)));
            }
            Ok(match trace.mode {
                Mode::Ann => {
                    let (h, w, c) = layer.shape;
                    (h * w * c) as f64
                }
                _ => layer.events_per_step.iter().sum::<usize>() as f64 / steps as f64,
            })
        })
        .collect()
}

/// Mean synapses touched per input event, ignoring borders.
pub fn fanout(spec: &ConvSpec) -> f64 {
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    (kh * kw * spec.out_channels) as f64 / (sh * sw) as f64
}

pub fn layer_synops(upstream_events: f64, spec: &ConvSpec) -> f64 {
    upstream_events * fanout(spec)
}

/// `(events, synops)` ratios of ANN totals over mode totals.
pub fn sparsity_ratios(ann: &Totals, mode: &Totals) -> (f64, f64) {
    let ratio = |num: f64, den: f64| if den == 0.0 { f64::INFINITY } else { num / den };
    (ratio(ann.events, mode.events), ratio(ann.synops, mode.synops))
}

impl ModeReport {
    /// Builds the rows for one mode from per-layer event counts.
    pub fn from_events(config: &NetworkConfig, mode: Mode, events: &[f64]) -> Result<Self> {
        let shapes = config.shapes()?;
        if events.len() != shapes.len() {
            return Err(Error::shape(format!("{} event counts for {} layers", events.len(), shapes.len())));
        }
        if let Some(bad) = events.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
            return Err(Error::invalid(format!("event count {bad} is not a finite non-negative number")));
        }
        let specs = [&config.c1, &config.ct, &config.c2];
        let layers: Vec<LayerCost> = shapes
            .iter()
            .enumerate()
            .map(|(i, &(c, h, w))| LayerCost {
                name: LAYER_NAMES[i].to_string(),
                shape: (h, w, c),
                events: events[i],
                synops: (i > 0).then(|| layer_synops(events[i - 1], specs[i - 1])),
            })
            .collect();
        let totals = Totals {
            events: layers.iter().map(|l| l.events).sum(),
            synops: layers.iter().filter_map(|l| l.synops).sum(),
        };
        Ok(Self {
            mode,
            layers,
            totals,
            ratios: None,
        })
    }

    /// The ANN column: every neuron active at every step.
    pub fn structural(config: &NetworkConfig) -> Result<Self> {
        let events: Vec<f64> = config.shapes()?.iter().map(|&(c, h, w)| (c * h * w) as f64).collect();
        Self::from_events(config, Mode::Ann, &events)
    }

    pub fn from_trace(config: &NetworkConfig, trace: &Trace) -> Result<Self> {
        Self::from_events(config, trace.mode, &count_events(trace)?)
    }
}

impl ComplexityReport {
    /// Collects mode columns and fills in ratios against the ANN column, if any.
    pub fn new(mut modes: Vec<ModeReport>) -> Self {
        let ann = modes.iter().find(|m| m.mode == Mode::Ann).map(|m| m.totals);
        for m in &mut modes {
            m.ratios = ann.map(|a| {
                let (events, synops) = sparsity_ratios(&a, &m.totals);
                Ratios { events, synops }
            });
        }
        Self {
            schema_version: SCHEMA_VERSION,
            modes,
        }
    }

    /// Data-independent report holding only the ANN column.
    pub fn structural(config: &NetworkConfig) -> Result<Self> {
        Ok(Self::new(vec![ModeReport::structural(config)?]))
    }

    pub fn mode(&self, mode: Mode) -> Option<&ModeReport> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

/// Averages several reports of the same modes layer by layer.
pub fn mean_report(config: &NetworkConfig, reports: &[ComplexityReport]) -> Result<ComplexityReport> {
    let first = reports.first().ok_or(Error::Empty("no reports to average"))?;
    let n = reports.len() as f64;
    let mut modes = Vec::with_capacity(first.modes.len());
    for (k, column) in first.modes.iter().enumerate() {
        let mut events = vec![0.0; column.layers.len()];
        for r in reports {
            let other = r
                .modes
                .get(k)
                .filter(|m| m.mode == column.mode && m.layers.len() == events.len())
                .ok_or_else(|| Error::shape("reports disagree on modes or layers"))?;
            for (acc, l) in events.iter_mut().zip(&other.layers) {
                *acc += l.events / n;
            }
        }
        modes.push(ModeReport::from_events(config, column.mode, &events)?);
    }
    Ok(ComplexityReport::new(modes))
}

fn fmt_num(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

pub fn emit_report(report: &ComplexityReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(report)?),
        ReportFormat::Table => Ok(render_table(report)),
    }
}

fn render_table(report: &ComplexityReport) -> String {
    let mut header = vec!["layer".to_string(), "shape".to_string()];
    for m in &report.modes {
        let (ev, sy) = match m.mode {
            Mode::Ann => ("activations", "MACs"),
            _ => ("events", "synops"),
        };
        header.push(format!("{} {ev}", m.mode.as_str().to_uppercase()));
        header.push(format!("{} {sy}", m.mode.as_str().to_uppercase()));
    }
    let mut rows = vec![header];
    let n_layers = report.modes.first().map_or(0, |m| m.layers.len());
    for i in 0..n_layers {
        let first = &report.modes[0].layers[i];
        let (h, w, c) = first.shape;
        let mut row = vec![first.name.clone(), format!("({h}, {w}, {c})")];
        for m in &report.modes {
            let l = &m.layers[i];
            row.push(fmt_num(l.events));
            row.push(l.synops.map_or("-".to_string(), fmt_num));
        }
        rows.push(row);
    }
    if !report.modes.is_empty() {
        let mut total = vec!["total".to_string(), String::new()];
        for m in &report.modes {
            total.push(fmt_num(m.totals.events));
            total.push(fmt_num(m.totals.synops));
        }
        rows.push(total);
        if report.modes.iter().any(|m| m.ratios.is_some()) {
            let mut ratio = vec!["ANN ratio".to_string(), String::new()];
            for m in &report.modes {
                match m.ratios {
                    Some(r) => {
                        ratio.push(format!("{}x", fmt_ratio(r.events)));
                        ratio.push(format!("{}x", fmt_ratio(r.synops)));
                    }
                    None => ratio.extend([String::new(), String::new()]),
                }
            }
            rows.push(ratio);
        }
    }
    let cols = rows[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|j| rows.iter().map(|r| r[j].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(j, cell)| {
                if j < 2 {
                    format!("{cell:<width$}", width = widths[j])
                } else {
                    format!("{cell:>width$}", width = widths[j])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

fn fmt_ratio(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.2}")
    }
}

mod inf_sentinel {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = f64;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a number or \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
                Ok(v)
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
                Ok(v as f64)
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
                Ok(v as f64)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
                match v {
                    "inf" => Ok(f64::INFINITY),
                    _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::LayerTrace;

    #[test]
    fn fanout_matches_table_rows() {
        let cfg = NetworkConfig::nmnist(Mode::Ann);
        assert_eq!(fanout(&cfg.c1), 200.0);
        assert_eq!(fanout(&cfg.ct), 2.0);
        assert_eq!(fanout(&cfg.c2), 2.0);
    }

    #[test]
    fn ann_count_ignores_trace_values() {
        let trace = Trace {
            mode: Mode::Ann,
            layers: vec![LayerTrace {
                name: "layer-0".into(),
                shape: (17, 17, 2),
                events_per_step: vec![0, 3],
            }],
        };
        assert_eq!(count_events(&trace).unwrap(), vec![578.0]);
    }

    #[test]
    fn empty_trace_is_an_error() {
        let trace = Trace {
            mode: Mode::Sdnn,
            layers: vec![],
        };
        assert!(count_events(&trace).is_err());
    }

    #[test]
    fn silent_mode_has_infinite_ratio() {
        let cfg = NetworkConfig::nmnist(Mode::Sdnn);
        let silent = ModeReport::from_events(&cfg, Mode::Sdnn, &[0.0; 4]).unwrap();
        let report = ComplexityReport::new(vec![silent, ModeReport::structural(&cfg).unwrap()]);
        let r = report.modes[0].ratios.unwrap();
        assert!(r.events.is_infinite());
        let json = emit_report(&report, ReportFormat::Json).unwrap();
        assert!(json.contains("\"inf\""));
        let back: ComplexityReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn empty_report_renders_header_only() {
        let text = emit_report(&ComplexityReport::new(vec![]), ReportFormat::Table).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("layer"));
    }
}
