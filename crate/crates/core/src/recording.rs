//! The YAML session file: schema, streaming writer, loader and validator.
//!
//! A session file has exactly two top-level keys. `meta` holds the rig
//! (camera, extrinsic, table, zone, chain, monitor tuning) and `samples` is
//! a block sequence with one flow map per frame, so a recording can be
//! appended to line by line and read with any text viewer:
//!
//! ```yaml
//! samples:
//!   - {t: 0.0, joints_rad: [0.0, 0.5], wrist_px: [320.0, 240.0], wrist_depth_m: 1.9, wrist_conf: 0.9, safety_flag: false}
//!   - {t: 0.05, joints_rad: [0.0, 0.5], wrist_px: null, wrist_depth_m: null, wrist_conf: 0.0, safety_flag: false}
//! ```
//!
//! Floats are written in their shortest round-trip form, so a file always
//! reads back bit-exactly.

use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, PixelPoint, RigidTransform, TablePlane};
use crate::kinematics::KinematicChain;
use crate::monitor::{MonitorTuning, SafetyMonitor, SafetyPeriod, SafetyZone, WristObservation};

pub const FORMAT_VERSION: u32 = 1;

/// Maximum relative deviation of an inter-sample gap from the nominal period
/// before a jitter warning is raised.
pub const JITTER_TOLERANCE: f64 = 0.5;

const COUNT_FIELD_WIDTH: usize = 20;

#[derive(Debug, Error)]
pub enum RecordingError {
    #[error("malformed YAML{}: {message}", line_suffix(*line))]
    Parse { line: Option<usize>, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("validation failed{}{}: {message}", sample_suffix(*sample), line_suffix(*line))]
    Validation {
        sample: Option<usize>,
        line: Option<usize>,
        message: String,
        report: ValidationReport,
    },
    #[error("sample timestamp {t} does not advance past {previous}")]
    NonMonotonicTimestamp { previous: f64, t: f64 },
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

fn line_suffix(line: Option<usize>) -> String {
    line.map(|l| format!(" at line {l}")).unwrap_or_default()
}

fn sample_suffix(sample: Option<usize>) -> String {
    sample.map(|s| format!(" (sample {s})")).unwrap_or_default()
}

/// Session header. `sample_count` is `None` only for a file whose writer was
/// never finalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionMeta {
    pub version: u32,
    pub rate_hz: f64,
    pub created_unix: i64,
    #[serde(deserialize_with = "required_option")]
    pub sample_count: Option<u64>,
    pub camera: CameraIntrinsics,
    pub extrinsic: RigidTransform,
    pub table: TablePlane,
    pub zone: SafetyZone,
    pub monitor: MonitorTuning,
    #[serde(deserialize_with = "crate::kinematics::chain_inline_or_named")]
    pub chain: KinematicChain,
}

impl SessionMeta {
    pub fn nominal_period(&self) -> f64 {
        1.0 / self.rate_hz
    }

    pub fn safety_monitor(&self) -> SafetyMonitor {
        SafetyMonitor {
            zone: self.zone,
            camera: self.camera,
            extrinsic: self.extrinsic,
            table: self.table,
            tuning: self.monitor,
        }
    }
}

/// Option field that must still be present in the file (possibly as `null`).
fn required_option<'de, D, T>(d: D) -> Result<Option<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    Option::<T>::deserialize(d)
}

/// One tick of the live loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSample {
    pub t: f64,
    pub joints_rad: Vec<f64>,
    #[serde(deserialize_with = "required_option")]
    pub wrist_px: Option<PixelPoint>,
    #[serde(deserialize_with = "required_option")]
    pub wrist_depth_m: Option<f64>,
    pub wrist_conf: f64,
    pub safety_flag: bool,
}

impl FrameSample {
    pub fn observation(&self) -> WristObservation {
        WristObservation {
            t: self.t,
            px: self.wrist_px,
            depth: self.wrist_depth_m,
            confidence: self.wrist_conf,
        }
    }

    /// Same frame on a clock shifted by `-offset`.
    pub fn rebased(&self, offset: f64) -> FrameSample {
        FrameSample {
            t: self.t - offset,
            ..self.clone()
        }
    }

    fn check(&self, dof: usize) -> Result<(), String> {
        if !self.t.is_finite() || self.t < 0.0 {
            return Err(format!("timestamp {} must be finite and non-negative", self.t));
        }
        if self.joints_rad.len() != dof {
            return Err(format!(
                "{} joint angles for a {}-joint chain",
                self.joints_rad.len(),
                dof
            ));
        }
        if !self.joints_rad.iter().all(|a| a.is_finite()) {
            return Err("non-finite joint angle".into());
        }
        if let Some(px) = self.wrist_px {
            if !px.is_finite() {
                return Err("non-finite wrist pixel".into());
            }
        } else if self.wrist_depth_m.is_some() {
            return Err("wrist depth present without a wrist pixel".into());
        }
        if let Some(d) = self.wrist_depth_m {
            if !(d.is_finite() && d > 0.0) {
                return Err(format!("wrist depth {d} must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.wrist_conf) {
            return Err(format!("wrist confidence {} outside [0, 1]", self.wrist_conf));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionRecording {
    pub meta: SessionMeta,
    #[serde(deserialize_with = "samples_or_empty")]
    pub samples: Vec<FrameSample>,
}

fn samples_or_empty<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<FrameSample>, D::Error> {
    Ok(Option::<Vec<FrameSample>>::deserialize(d)?.unwrap_or_default())
}

impl SessionRecording {
    pub fn duration(&self) -> f64 {
        self.samples.last().map(|s| s.t).unwrap_or(0.0)
    }

    pub fn observations(&self) -> impl Iterator<Item = WristObservation> + '_ {
        self.samples.iter().map(FrameSample::observation)
    }

    /// Safety periods recomputed from the wrist observations.
    pub fn safety_periods(&self) -> Result<Vec<SafetyPeriod>, crate::monitor::MonitorError> {
        self.meta
            .safety_monitor()
            .segment_periods(self.observations(), self.meta.nominal_period())
    }

    /// Index of the last sample with `t <= at`, or `None` when empty.
    pub fn index_at_or_before(&self, at: f64) -> Option<usize> {
        if self.samples.is_empty() {
            return None;
        }
        let after = self.samples.partition_point(|s| s.t <= at);
        Some(after.saturating_sub(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    Version,
    Rate,
    SampleCount,
    Timestamp,
    Sample,
    RateJitter,
    JointLimit,
    Unfinalized,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Issue {
    pub kind: IssueKind,
    pub sample: Option<usize>,
    pub t: Option<f64>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<Issue>,
    pub warnings: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.errors.is_empty() && self.warnings.is_empty()
    }

    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }

    fn error(&mut self, kind: IssueKind, sample: Option<usize>, t: Option<f64>, message: String) {
        self.errors.push(Issue {
            kind,
            sample,
            t,
            message,
        });
    }

    fn warn(&mut self, kind: IssueKind, sample: Option<usize>, t: Option<f64>, message: String) {
        self.warnings.push(Issue {
            kind,
            sample,
            t,
            message,
        });
    }
}

impl std::fmt::Display for Issue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if let Some(i) = self.sample {
            write!(f, "sample {i}: ")?;
        }
        f.write_str(&self.message)
    }
}

/// One line per issue, errors first.
impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_empty() {
            return f.write_str("no issues");
        }
        let errors = self.errors.iter().map(|i| ("error", i));
        let warnings = self.warnings.iter().map(|i| ("warning", i));
        for (n, (level, issue)) in errors.chain(warnings).enumerate() {
            if n > 0 {
                f.write_str("\n")?;
            }
            write!(f, "{level}: {issue}")?;
        }
        Ok(())
    }
}

/// Checks every recording invariant. Breaches are errors; rate jitter,
/// joint-limit excursions and a missing sample count are warnings.
pub fn validate(rec: &SessionRecording) -> ValidationReport {
    let mut report = ValidationReport::default();
    let meta = &rec.meta;
    if meta.version != FORMAT_VERSION {
        report.error(IssueKind::Version, None, None, format!("version {} is not supported", meta.version));
    }
    let rate_ok = meta.rate_hz.is_finite() && meta.rate_hz > 0.0;
    if !rate_ok {
        report.error(IssueKind::Rate, None, None, format!("rate_hz {} must be positive", meta.rate_hz));
    }
    match meta.sample_count {
        Some(n) if n as usize != rec.samples.len() => report.error(
            IssueKind::SampleCount,
            None,
            None,
            format!("meta.sample_count is {n} but the file holds {} samples", rec.samples.len()),
        ),
        None => report.warn(
            IssueKind::Unfinalized,
            None,
            None,
            "sample_count is null; the recording was not finalized".into(),
        ),
        _ => {}
    }

    let dof = meta.chain.dof();
    let period = meta.nominal_period();
    let mut previous: Option<f64> = None;
    for (i, s) in rec.samples.iter().enumerate() {
        if let Err(msg) = s.check(dof) {
            report.error(IssueKind::Sample, Some(i), Some(s.t), msg);
            continue;
        }
        if i == 0 && s.t != 0.0 {
            report.error(IssueKind::Timestamp, Some(0), Some(s.t), format!("first sample at t={} instead of 0", s.t));
        }
        if let Some(prev) = previous {
            if !(s.t > prev) {
                report.error(
                    IssueKind::Timestamp,
                    Some(i),
                    Some(s.t),
                    format!("timestamp {} does not increase past {prev}", s.t),
                );
            } else if rate_ok && ((s.t - prev) - period).abs() > JITTER_TOLERANCE * period {
                report.warn(
                    IssueKind::RateJitter,
                    Some(i),
                    Some(s.t),
                    format!("gap of {:.4} s before t={} (nominal {:.4} s)", s.t - prev, s.t, period),
                );
            }
        }
        previous = Some(s.t);
        for j in meta.chain.limit_violations(&s.joints_rad) {
            let joint = &meta.chain.joints()[j];
            report.warn(
                IssueKind::JointLimit,
                Some(i),
                Some(s.t),
                format!(
                    "{} = {} rad outside limits {:?}",
                    joint.name(),
                    s.joints_rad[j],
                    joint.limits()
                ),
            );
        }
    }
    report
}

/// Shortest representation that parses back to the same bits.
pub fn format_float(x: f64) -> String {
    format!("{x:?}")
}

fn float_list(values: &[f64]) -> String {
    let items: Vec<String> = values.iter().map(|v| format_float(*v)).collect();
    format!("[{}]", items.join(", "))
}

fn transform_flow(t: &RigidTransform) -> String {
    format!(
        "{{rotation_rowmajor: {}, translation_m: {}}}",
        float_list(&t.rotation_rowmajor()),
        float_list(&t.translation_array())
    )
}

/// Double-quoted YAML scalar.
fn quoted(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if (c as u32) < 0x20 || c == '\u{7f}' => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn count_field(count: Option<u64>) -> String {
    let value = count.map_or_else(|| "null".to_string(), |n| n.to_string());
    format!("{value:<COUNT_FIELD_WIDTH$}")
}

/// Renders the header up to and including the `samples:` line. Also returns
/// the byte offset of the fixed-width sample count field.
fn render_header(meta: &SessionMeta, count: Option<u64>) -> (String, usize) {
    let mut out = String::new();
    out.push_str("# cobot-safety session recording\n");
    out.push_str("meta:\n");
    let _ = writeln!(out, "  version: {}", meta.version);
    let _ = writeln!(out, "  rate_hz: {}", format_float(meta.rate_hz));
    let _ = writeln!(out, "  created_unix: {}", meta.created_unix);
    out.push_str("  sample_count: ");
    let offset = out.len();
    out.push_str(&count_field(count));
    out.push('\n');
    let c = &meta.camera;
    let _ = writeln!(
        out,
        "  camera: {{fx: {}, fy: {}, cx: {}, cy: {}, width: {}, height: {}}}",
        format_float(c.fx()),
        format_float(c.fy()),
        format_float(c.cx()),
        format_float(c.cy()),
        format_float(c.width()),
        format_float(c.height())
    );
    let _ = writeln!(out, "  extrinsic: {}", transform_flow(&meta.extrinsic));
    let _ = writeln!(out, "  table: {{z0_m: {}}}", format_float(meta.table.z0));
    let _ = writeln!(
        out,
        "  zone: {{min_m: {}, max_m: {}}}",
        float_list(&<[f64; 3]>::from(meta.zone.min_corner())),
        float_list(&<[f64; 3]>::from(meta.zone.max_corner()))
    );
    let m = &meta.monitor;
    let _ = writeln!(
        out,
        "  monitor: {{exit_debounce_frames: {}, missing_failsafe_frames: {}, confidence_min: {}, projection_mode: {}}}",
        m.exit_debounce_frames,
        m.missing_failsafe_frames,
        format_float(m.confidence_min),
        match m.projection_mode {
            crate::monitor::ProjectionMode::Depth => "depth",
            crate::monitor::ProjectionMode::Plane => "plane",
        }
    );
    out.push_str("  chain:\n");
    let _ = writeln!(out, "    base_name: {}", quoted(meta.chain.base_name()));
    let _ = writeln!(out, "    tool_offset: {}", transform_flow(meta.chain.tool_offset()));
    out.push_str("    joints:\n");
    for j in meta.chain.joints() {
        let a = j.axis();
        let _ = writeln!(
            out,
            "      - {{name: {}, axis: {}, origin: {}, limits_rad: {}}}",
            quoted(j.name()),
            float_list(&[a.x, a.y, a.z]),
            transform_flow(j.origin()),
            float_list(&j.limits())
        );
    }
    out.push_str("samples:\n");
    (out, offset)
}

fn render_sample(s: &FrameSample) -> String {
    let px = s
        .wrist_px
        .map_or_else(|| "null".to_string(), |p| float_list(&[p.u, p.v]));
    let depth = s
        .wrist_depth_m
        .map_or_else(|| "null".to_string(), format_float);
    format!(
        "  - {{t: {}, joints_rad: {}, wrist_px: {}, wrist_depth_m: {}, wrist_conf: {}, safety_flag: {}}}\n",
        format_float(s.t),
        float_list(&s.joints_rad),
        px,
        depth,
        format_float(s.wrist_conf),
        s.safety_flag
    )
}

/// Serializes a complete recording. `meta.sample_count` is replaced by the
/// actual number of samples, exactly as a finalized writer would leave it.
pub fn to_yaml_string(rec: &SessionRecording) -> String {
    let (mut out, _) = render_header(&rec.meta, Some(rec.samples.len() as u64));
    for s in &rec.samples {
        out.push_str(&render_sample(s));
    }
    out
}

/// Streams samples to a session file as they arrive.
#[derive(Debug)]
pub struct SessionWriter {
    file: File,
    path: PathBuf,
    count_offset: u64,
    count: u64,
    last_t: Option<f64>,
    dof: usize,
}

impl SessionWriter {
    pub fn create(path: impl AsRef<Path>, meta: &SessionMeta) -> Result<Self, RecordingError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)?;
        let (header, offset) = render_header(meta, None);
        file.write_all(header.as_bytes())?;
        file.flush()?;
        Ok(Self {
            file,
            path,
            count_offset: offset as u64,
            count: 0,
            last_t: None,
            dof: meta.chain.dof(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn append(&mut self, sample: &FrameSample) -> Result<(), RecordingError> {
        if let Some(previous) = self.last_t {
            if !(sample.t > previous) {
                return Err(RecordingError::NonMonotonicTimestamp {
                    previous,
                    t: sample.t,
                });
            }
        } else if sample.t != 0.0 {
            return Err(RecordingError::InvalidSample(format!(
                "first sample must be at t=0, got {}",
                sample.t
            )));
        }
        sample.check(self.dof).map_err(RecordingError::InvalidSample)?;
        self.file.write_all(render_sample(sample).as_bytes())?;
        self.file.flush()?;
        self.last_t = Some(sample.t);
        self.count += 1;
        Ok(())
    }

    /// Writes the sample count into the header and syncs the file.
    pub fn finalize(mut self) -> Result<(PathBuf, u64), RecordingError> {
        self.file.seek(SeekFrom::Start(self.count_offset))?;
        self.file.write_all(count_field(Some(self.count)).as_bytes())?;
        self.file.seek(SeekFrom::End(0))?;
        self.file.sync_all()?;
        Ok((self.path, self.count))
    }
}

/// Writes a whole recording through the streaming writer.
pub fn write_session(path: impl AsRef<Path>, rec: &SessionRecording) -> Result<PathBuf, RecordingError> {
    let mut w = SessionWriter::create(path, &rec.meta)?;
    for s in &rec.samples {
        w.append(s)?;
    }
    Ok(w.finalize()?.0)
}

pub fn load(path: impl AsRef<Path>) -> Result<SessionRecording, RecordingError> {
    let bytes = std::fs::read(path)?;
    parse_bytes(&bytes)
}

/// Parses and fully validates a session file held in memory.
pub fn parse_bytes(bytes: &[u8]) -> Result<SessionRecording, RecordingError> {
    let text = std::str::from_utf8(bytes).map_err(|e| RecordingError::Parse {
        line: None,
        message: format!("not UTF-8: {e}"),
    })?;
    parse_str(text)
}

pub fn parse_str(text: &str) -> Result<SessionRecording, RecordingError> {
    let value: serde_yaml::Value = serde_yaml::from_str(text).map_err(|e| RecordingError::Parse {
        line: e.location().map(|l| l.line()),
        message: e.to_string(),
    })?;
    check_envelope(&value)?;
    let rec: SessionRecording =
        serde_yaml::from_value(value).map_err(|e| RecordingError::Schema(e.to_string()))?;
    let report = validate(&rec);
    // Point at a concrete sample when one is to blame.
    let located = report.errors.iter().find(|e| e.sample.is_some());
    if let Some(first) = located.or(report.errors.first()) {
        return Err(RecordingError::Validation {
            sample: first.sample,
            line: first.sample.and_then(|i| sample_line(text, i)),
            message: first.message.clone(),
            report,
        });
    }
    Ok(rec)
}

fn check_envelope(value: &serde_yaml::Value) -> Result<(), RecordingError> {
    let schema = |m: &str| Err(RecordingError::Schema(m.to_string()));
    let Some(top) = value.as_mapping() else {
        return schema("top level must be a mapping with `meta` and `samples`");
    };
    for key in top.keys() {
        match key.as_str() {
            Some("meta") | Some("samples") => {}
            _ => return schema(&format!("unexpected top-level key {key:?}")),
        }
    }
    let Some(meta) = top.get("meta").and_then(|m| m.as_mapping()) else {
        return schema("missing `meta` mapping");
    };
    if !top.contains_key("samples") {
        return schema("missing `samples`");
    }
    match meta.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => Ok(()),
        Some(v) => schema(&format!("unsupported version {v} (expected {FORMAT_VERSION})")),
        None => schema("meta.version missing or not an integer"),
    }
}

/// 1-based line of the `index`-th sample entry, assuming one entry per line
/// as written by [`SessionWriter`].
fn sample_line(text: &str, index: usize) -> Option<usize> {
    let mut lines = text.lines().enumerate();
    lines.find(|(_, l)| l.trim_end() == "samples:")?;
    lines
        .filter(|(_, l)| l.trim_start().starts_with("- ") || l.trim() == "-")
        .nth(index)
        .map(|(n, _)| n + 1)
}

pub fn session_file_name(created_unix: i64) -> String {
    format!("session-{created_unix}.yaml")
}

/// A fresh path in `dir` for a session created at `created_unix`. A numeric
/// suffix is added if a file of that name already exists.
pub fn new_session_path(dir: &Path, created_unix: i64) -> PathBuf {
    let first = dir.join(session_file_name(created_unix));
    if !first.exists() {
        return first;
    }
    (1..)
        .map(|n| dir.join(format!("session-{created_unix}-{n}.yaml")))
        .find(|p| !p.exists())
        .expect("unbounded suffix search")
}

/// Session files in `dir`, oldest first (by `created_unix` parsed from the name,
/// then by suffix).
pub fn list_sessions(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut found: Vec<((i64, u64), PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(key) = parse_session_name(name) {
            found.push((key, path));
        }
    }
    found.sort();
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

pub fn latest_session(dir: &Path) -> std::io::Result<Option<PathBuf>> {
    Ok(list_sessions(dir)?.pop())
}

fn parse_session_name(name: &str) -> Option<(i64, u64)> {
    let stem = name.strip_prefix("session-")?.strip_suffix(".yaml")?;
    match stem.split_once('-') {
        None => Some((stem.parse().ok()?, 0)),
        Some((created, n)) => Some((created.parse().ok()?, n.parse().ok()?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BasePoint;
    use crate::monitor::ProjectionMode;

    pub(crate) fn meta() -> SessionMeta {
        SessionMeta {
            version: FORMAT_VERSION,
            rate_hz: 20.0,
            created_unix: 1_700_000_000,
            sample_count: None,
            camera: CameraIntrinsics::new(525.0, 525.0, 319.5, 239.5, 640.0, 480.0).unwrap(),
            extrinsic: RigidTransform::from_rowmajor(
                [1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0],
                [0.5, 0.0, 2.0],
            )
            .unwrap(),
            table: TablePlane::new(0.0),
            zone: SafetyZone::new(BasePoint::new(0.3, -0.3, 0.0), BasePoint::new(0.7, 0.3, 0.6))
                .unwrap(),
            monitor: MonitorTuning {
                projection_mode: ProjectionMode::Depth,
                ..MonitorTuning::default()
            },
            chain: KinematicChain::reference_arm(),
        }
    }

    fn sample(t: f64) -> FrameSample {
        FrameSample {
            t,
            joints_rad: vec![0.1, -0.2, 0.3, 0.0, 1e-7, -0.0],
            wrist_px: Some(PixelPoint::new(300.25, 200.0 + t)),
            wrist_depth_m: Some(1.9),
            wrist_conf: 0.8,
            safety_flag: t > 0.5,
        }
    }

    fn rec(n: usize) -> SessionRecording {
        let mut m = meta();
        m.sample_count = Some(n as u64);
        SessionRecording {
            meta: m,
            samples: (0..n).map(|k| sample(k as f64 * 0.05)).collect(),
        }
    }

    #[test]
    fn empty_session_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.yaml");
        let w = SessionWriter::create(&path, &meta()).unwrap();
        w.finalize().unwrap();
        let back = load(&path).unwrap();
        assert!(back.samples.is_empty());
        assert_eq!(back.meta.sample_count, Some(0));
    }

    #[test]
    fn append_requires_strictly_increasing_t() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = SessionWriter::create(dir.path().join("s.yaml"), &meta()).unwrap();
        w.append(&sample(0.0)).unwrap();
        w.append(&sample(0.05)).unwrap();
        assert!(matches!(
            w.append(&sample(0.05)),
            Err(RecordingError::NonMonotonicTimestamp { .. })
        ));
    }

    #[test]
    fn writer_refuses_to_clobber() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.yaml");
        std::fs::write(&path, "x").unwrap();
        assert!(matches!(SessionWriter::create(&path, &meta()), Err(RecordingError::Io(_))));
    }

    #[test]
    fn streaming_and_whole_file_writes_are_identical() {
        let dir = tempfile::tempdir().unwrap();
        let r = rec(50);
        let path = write_session(dir.path().join("a.yaml"), &r).unwrap();
        assert_eq!(std::fs::read_to_string(path).unwrap(), to_yaml_string(&r));
    }

    #[test]
    fn round_trip_is_exact() {
        let r = rec(200);
        let back = parse_str(&to_yaml_string(&r)).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.samples[3].joints_rad[5].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn version_two_is_a_schema_error() {
        let text = to_yaml_string(&rec(2)).replace("version: 1", "version: 2");
        assert!(matches!(parse_str(&text), Err(RecordingError::Schema(_))));
    }

    #[test]
    fn unknown_and_missing_fields_are_schema_errors() {
        let text = to_yaml_string(&rec(2)).replacen("safety_flag: false}", "safety_flag: false, extra: 1}", 1);
        assert!(matches!(parse_str(&text), Err(RecordingError::Schema(_))));
        let text = to_yaml_string(&rec(2)).replacen(", wrist_depth_m: 1.9", "", 1);
        assert!(matches!(parse_str(&text), Err(RecordingError::Schema(_))));
        let text = format!("{}extra: 1\n", to_yaml_string(&rec(0)));
        assert!(matches!(parse_str(&text), Err(RecordingError::Schema(_))));
    }

    #[test]
    fn decreasing_t_names_the_sample() {
        let mut r = rec(5);
        r.samples[3].t = 0.01;
        let text = to_yaml_string(&r);
        match parse_str(&text) {
            Err(RecordingError::Validation { sample, line, .. }) => {
                assert_eq!(sample, Some(3));
                let line = line.unwrap();
                assert!(text.lines().nth(line - 1).unwrap().contains("t: 0.01,"));
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn garbage_is_a_parse_error() {
        assert!(matches!(parse_str("meta: [unclosed"), Err(RecordingError::Parse { .. })));
        assert!(matches!(parse_bytes(&[0xff, 0xfe]), Err(RecordingError::Parse { .. })));
        assert!(matches!(parse_str("42"), Err(RecordingError::Schema(_))));
    }

    #[test]
    fn validation_report_cases() {
        let perfect = rec(40);
        assert!(validate(&perfect).is_empty(), "{:?}", validate(&perfect));

        let mut gap = rec(40);
        for s in gap.samples.iter_mut().skip(10) {
            s.t += 0.15;
        }
        let report = validate(&gap);
        assert!(report.errors.is_empty());
        assert_eq!(report.warnings.len(), 1);
        assert_eq!(report.warnings[0].kind, IssueKind::RateJitter);
        assert_eq!(report.warnings[0].sample, Some(10));

        let mut limits = rec(3);
        limits.samples[1].joints_rad[0] = 4.0;
        let report = validate(&limits);
        assert!(report.errors.is_empty());
        assert_eq!(report.warnings[0].kind, IssueKind::JointLimit);

        let mut bad = rec(3);
        bad.samples[2].wrist_px = None;
        assert_eq!(validate(&bad).errors[0].kind, IssueKind::Sample);
        let mut count = rec(3);
        count.meta.sample_count = Some(4);
        assert_eq!(validate(&count).errors[0].kind, IssueKind::SampleCount);
    }

    #[test]
    fn named_chain_is_accepted() {
        let text = to_yaml_string(&rec(1));
        let start = text.find("  chain:\n").unwrap();
        let end = text.find("samples:\n").unwrap();
        let named = format!("{}  chain: reference_arm\n{}", &text[..start], &text[end..]);
        assert_eq!(parse_str(&named).unwrap(), rec(1));
    }

    #[test]
    fn session_names_sort_by_creation() {
        let dir = tempfile::tempdir().unwrap();
        for created in [30, 4, 100] {
            std::fs::write(dir.path().join(session_file_name(created)), "").unwrap();
        }
        let dup = new_session_path(dir.path(), 100);
        assert_eq!(dup.file_name().unwrap(), "session-100-1.yaml");
        std::fs::write(&dup, "").unwrap();
        std::fs::write(dir.path().join("notes.txt"), "").unwrap();
        let names: Vec<_> = list_sessions(dir.path())
            .unwrap()
            .iter()
            .map(|p| p.file_name().unwrap().to_str().unwrap().to_string())
            .collect();
        assert_eq!(
            names,
            ["session-4.yaml", "session-30.yaml", "session-100.yaml", "session-100-1.yaml"]
        );
    }

    #[test]
    fn snap_before_lookup() {
        let r = rec(3);
        assert_eq!(r.index_at_or_before(0.07), Some(1));
        assert_eq!(r.index_at_or_before(0.0), Some(0));
        assert_eq!(r.index_at_or_before(1e9), Some(2));
        assert_eq!(rec(0).index_at_or_before(1.0), None);
    }
}
