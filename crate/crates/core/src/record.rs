//! Detection records and their on-disk format.
//!
//! A record is a CSV body with header `t,label` (one event per line, `.`
//! radix, LF endings) plus a JSON sidecar holding the horizon, seed, optional
//! generating parameters and the schema version.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{MaserError, Result};
use crate::model::{Channel, ModelParams};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub t: f64,
    pub channel: Channel,
}

impl Event {
    pub fn new(t: f64, channel: Channel) -> Self {
        Event { t, channel }
    }
}

/// Provenance carried alongside a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordMeta {
    pub seed: Option<u64>,
    pub params: Option<ModelParams>,
    pub schema_version: u32,
}

impl Default for RecordMeta {
    fn default() -> Self {
        RecordMeta {
            seed: None,
            params: None,
            schema_version: SCHEMA_VERSION,
        }
    }
}

/// Atom detections on `[0, horizon]`, labels restricted to the two atom
/// channels.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    horizon: f64,
    events: Vec<Event>,
    pub meta: RecordMeta,
}

fn check_events(horizon: f64, events: &[Event], allow: impl Fn(Channel) -> bool) -> Result<()> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(MaserError::Domain(format!("horizon must be positive, got {horizon}")));
    }
    let mut last = 0.0;
    for (k, e) in events.iter().enumerate() {
        if !(e.t > last) {
            return Err(MaserError::format(format!(
                "event {k} at t = {} is not after the previous time {last}",
                e.t
            )));
        }
        if e.t > horizon {
            return Err(MaserError::format(format!(
                "event {k} at t = {} lies beyond the horizon {horizon}",
                e.t
            )));
        }
        if !allow(e.channel) {
            return Err(MaserError::format(format!(
                "event {k} has label {} not allowed in this record",
                e.channel.label()
            )));
        }
        last = e.t;
    }
    Ok(())
}

impl DetectionRecord {
    pub fn new(horizon: f64, events: Vec<Event>, meta: RecordMeta) -> Result<Self> {
        check_events(horizon, &events, Channel::is_atom)?;
        Ok(DetectionRecord {
            horizon,
            events,
            meta,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn count(&self, channel: Channel) -> usize {
        self.events.iter().filter(|e| e.channel == channel).count()
    }

    /// Copy with the generating parameters removed from the metadata.
    pub fn without_params(&self) -> Self {
        let mut r = self.clone();
        r.meta.params = None;
        r
    }

    pub fn write(&self, csv_path: &Path) -> Result<()> {
        write_events(csv_path, &self.events)?;
        let sidecar = Sidecar {
            horizon: self.horizon,
            seed: self.meta.seed,
            params: self.meta.params,
            schema_version: self.meta.schema_version,
            initial_level: None,
        };
        write_sidecar(csv_path, &sidecar)
    }

    pub fn read(csv_path: &Path) -> Result<Self> {
        let events = read_events(csv_path)?;
        let sidecar = read_sidecar(csv_path)?;
        check_labels_and_horizon(&events, sidecar.horizon, Channel::is_atom)?;
        DetectionRecord::new(sidecar.horizon, strip_lines(events), sidecar.meta())
    }
}

/// Record with photon events and the cavity path, as produced when every
/// environment channel is monitored.
#[derive(Debug, Clone, PartialEq)]
pub struct FullRecord {
    horizon: f64,
    events: Vec<Event>,
    initial_level: usize,
    /// `(jump time, new level)` for each change of the photon number.
    path: Vec<(f64, usize)>,
    pub meta: RecordMeta,
}

impl FullRecord {
    /// Builds a record from its events; the cavity path is reconstructed
    /// from the labels (ground-state atoms and absorptions raise the level,
    /// emissions lower it).
    pub fn new(horizon: f64, initial_level: usize, events: Vec<Event>, meta: RecordMeta) -> Result<Self> {
        check_events(horizon, &events, |_| true)?;
        let mut path = Vec::new();
        let mut level = initial_level;
        let top = meta.params.map(|p| p.n_max);
        for (k, e) in events.iter().enumerate() {
            match e.channel {
                Channel::Ground | Channel::Absorption => level += 1,
                Channel::Emission => {
                    if level == 0 {
                        return Err(MaserError::format(format!(
                            "event {k}: emission from the empty cavity"
                        )));
                    }
                    level -= 1;
                }
                Channel::Excited => continue,
            }
            if let Some(top) = top {
                if level > top {
                    return Err(MaserError::format(format!(
                        "event {k}: level {level} exceeds n_max = {top}"
                    )));
                }
            }
            path.push((e.t, level));
        }
        Ok(FullRecord {
            horizon,
            events,
            initial_level,
            path,
            meta,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn initial_level(&self) -> usize {
        self.initial_level
    }

    pub fn path(&self) -> &[(f64, usize)] {
        &self.path
    }

    pub fn count(&self, channel: Channel) -> usize {
        self.events.iter().filter(|e| e.channel == channel).count()
    }

    /// Time average of the photon number over `[0, horizon]`.
    pub fn mean_level(&self) -> f64 {
        let mut t_prev = 0.0;
        let mut level = self.initial_level;
        let mut area = 0.0;
        for &(t, l) in &self.path {
            area += level as f64 * (t - t_prev);
            t_prev = t;
            level = l;
        }
        area += level as f64 * (self.horizon - t_prev);
        area / self.horizon
    }

    /// Keeps only the atom detections, in order.
    pub fn atoms_only(&self) -> DetectionRecord {
        DetectionRecord {
            horizon: self.horizon,
            events: self
                .events
                .iter()
                .copied()
                .filter(|e| e.channel.is_atom())
                .collect(),
            meta: self.meta.clone(),
        }
    }

    pub fn write(&self, csv_path: &Path) -> Result<()> {
        write_events(csv_path, &self.events)?;
        let sidecar = Sidecar {
            horizon: self.horizon,
            seed: self.meta.seed,
            params: self.meta.params,
            schema_version: self.meta.schema_version,
            initial_level: Some(self.initial_level),
        };
        write_sidecar(csv_path, &sidecar)
    }

    pub fn read(csv_path: &Path) -> Result<Self> {
        let events = read_events(csv_path)?;
        let sidecar = read_sidecar(csv_path)?;
        let initial_level = sidecar.initial_level.ok_or_else(|| {
            MaserError::format("sidecar lacks initial_level; not a full record")
        })?;
        check_labels_and_horizon(&events, sidecar.horizon, |_| true)?;
        FullRecord::new(sidecar.horizon, initial_level, strip_lines(events), sidecar.meta())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    horizon: f64,
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    params: Option<ModelParams>,
    schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial_level: Option<usize>,
}

impl Sidecar {
    fn meta(&self) -> RecordMeta {
        RecordMeta {
            seed: self.seed,
            params: self.params,
            schema_version: self.schema_version,
        }
    }
}

/// Path of the JSON sidecar belonging to a record CSV.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

fn write_sidecar(csv_path: &Path, sidecar: &Sidecar) -> Result<()> {
    let json = serde_json::to_string_pretty(sidecar).map_err(|e| MaserError::Io(e.to_string()))?;
    fs::write(sidecar_path(csv_path), json + "\n")?;
    Ok(())
}

fn read_sidecar(csv_path: &Path) -> Result<Sidecar> {
    let path = sidecar_path(csv_path);
    let text = fs::read_to_string(&path)
        .map_err(|e| MaserError::Io(format!("record sidecar {}: {e}", path.display())))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| MaserError::Format {
        line: Some(e.line() as u64),
        message: format!("{}: {e}", path.display()),
    })?;
    if sidecar.schema_version != SCHEMA_VERSION {
        return Err(MaserError::format(format!(
            "unsupported schema version {}",
            sidecar.schema_version
        )));
    }
    Ok(sidecar)
}

/// Formats a time with its shortest round-trip representation, padded with
/// trailing zeros to at least 12 significant digits.
pub fn format_time(t: f64) -> String {
    let mut s = format!("{t}");
    if !s.contains('.') {
        s.push('.');
    }
    let significant = s
        .chars()
        .filter(|c| c.is_ascii_digit())
        .skip_while(|&c| c == '0')
        .count();
    for _ in significant..12 {
        s.push('0');
    }
    s
}

fn write_events(csv_path: &Path, events: &[Event]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(csv_path)
        .map_err(|e| MaserError::Io(e.to_string()))?;
    w.write_record(["t", "label"]).map_err(|e| MaserError::Io(e.to_string()))?;
    for e in events {
        w.write_record([format_time(e.t), e.channel.label().to_string()])
            .map_err(|e| MaserError::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

struct LinedEvent {
    line: u64,
    event: Event,
}

fn strip_lines(events: Vec<LinedEvent>) -> Vec<Event> {
    events.into_iter().map(|e| e.event).collect()
}

fn read_events(csv_path: &Path) -> Result<Vec<LinedEvent>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::None)
        .from_path(csv_path)
        .map_err(|e| MaserError::Io(format!("{}: {e}", csv_path.display())))?;
    let headers = r
        .headers()
        .map_err(|e| MaserError::format_at(1, e.to_string()))?
        .clone();
    if headers.len() != 2 || &headers[0] != "t" || &headers[1] != "label" {
        return Err(MaserError::format_at(1, "expected header `t,label`"));
    }
    let mut out = Vec::new();
    let mut last = 0.0;
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            MaserError::format_at(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 2 {
            return Err(MaserError::format_at(line, "expected two fields"));
        }
        let t: f64 = rec[0]
            .parse()
            .map_err(|_| MaserError::format_at(line, format!("invalid time `{}`", &rec[0])))?;
        let label: u8 = rec[1]
            .parse()
            .map_err(|_| MaserError::format_at(line, format!("invalid label `{}`", &rec[1])))?;
        let channel = Channel::try_from(label).map_err(|m| MaserError::format_at(line, m))?;
        if !(t.is_finite() && t > last) {
            return Err(MaserError::format_at(
                line,
                format!("time {t} is not strictly after the previous time {last}"),
            ));
        }
        last = t;
        out.push(LinedEvent {
            line,
            event: Event::new(t, channel),
        });
    }
    Ok(out)
}

fn check_labels_and_horizon(
    events: &[LinedEvent],
    horizon: f64,
    allow: impl Fn(Channel) -> bool,
) -> Result<()> {
    for e in events {
        if e.event.t > horizon {
            return Err(MaserError::format_at(
                e.line,
                format!("time {} lies beyond the horizon {horizon}", e.event.t),
            ));
        }
        if !allow(e.event.channel) {
            return Err(MaserError::format_at(
                e.line,
                format!("label {} is not an atom detection", e.event.channel.label()),
            ));
        }
    }
    Ok(())
}
