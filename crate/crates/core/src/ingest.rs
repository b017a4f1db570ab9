//! Raw pen-stream parsing and cleaning.
//!
//! The `csv-v1` layout is a sequence of blocks. Each block opens with a
//! record line `subject_id,task_id,label` and continues with sample lines
//! `t_ms,x,y,p`. Blocks are separated by blank lines. Empty or unparseable
//! sample fields are read as missing values.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{io_err, HsdaError, Result};

pub const CHANNELS: [&str; 3] = ["x", "y", "p"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Hc = 0,
    Ad = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Hc),
            1 => Some(Label::Ad),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Hc => "HC",
            Label::Ad => "AD",
        })
    }
}

impl FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_uppercase().as_str() {
            "AD" => Ok(Label::Ad),
            "HC" => Ok(Label::Hc),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RawFormat {
    #[default]
    CsvV1,
}

impl fmt::Display for RawFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("csv-v1")
    }
}

impl FromStr for RawFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv-v1" => Ok(RawFormat::CsvV1),
            other => Err(format!("unsupported raw format {other:?}")),
        }
    }
}

/// One pen sample; `t` is in milliseconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RawSample {
    pub t: f64,
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub p: Option<f64>,
}

impl RawSample {
    pub fn dense(t: f64, x: f64, y: f64, p: f64) -> Self {
        RawSample {
            t,
            x: Some(x),
            y: Some(y),
            p: Some(p),
        }
    }

    fn channel(&self, c: usize) -> Option<f64> {
        [self.x, self.y, self.p][c]
    }

    fn set_channel(&mut self, c: usize, v: f64) {
        *[&mut self.x, &mut self.y, &mut self.p][c] = Some(v);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawRecord {
    pub subject_id: String,
    pub task_id: u8,
    pub label: Label,
    pub samples: Vec<RawSample>,
}

impl RawRecord {
    pub fn is_dense(&self) -> bool {
        self.samples
            .iter()
            .all(|s| s.x.is_some() && s.y.is_some() && s.p.is_some())
    }

    fn column(&self, c: usize) -> Vec<Option<f64>> {
        self.samples.iter().map(|s| s.channel(c)).collect()
    }

    fn dense_column(&self, c: usize) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| s.channel(c).expect("dense record"))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

/// A cleaned recording: dense, time-ordered, with x, y and p z-scored.
#[derive(Clone, Debug, PartialEq)]
pub struct StrokeSequence {
    pub subject_id: String,
    pub task_id: u8,
    pub label: Label,
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub p: Vec<f64>,
    /// Statistics for x, y, p in that order.
    pub stats: [ChannelStats; 3],
}

impl StrokeSequence {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn unscale(v: &[f64], s: ChannelStats) -> Vec<f64> {
        v.iter().map(|&z| z * s.std + s.mean).collect()
    }

    pub fn raw_x(&self) -> Vec<f64> {
        Self::unscale(&self.x, self.stats[0])
    }

    pub fn raw_y(&self) -> Vec<f64> {
        Self::unscale(&self.y, self.stats[1])
    }

    pub fn raw_p(&self) -> Vec<f64> {
        Self::unscale(&self.p, self.stats[2])
    }

    /// Pen-down mask from raw pressure, tolerant of round-off in the
    /// standardisation round trip.
    pub fn pen_down(&self) -> Vec<bool> {
        let tol = 1e-9 * self.stats[2].std.max(self.stats[2].mean.abs()).max(1.0);
        self.raw_p().iter().map(|&p| p > tol).collect()
    }

    /// Rebuilds a raw record in original units.
    pub fn to_raw(&self) -> RawRecord {
        let (x, y, p) = (self.raw_x(), self.raw_y(), self.raw_p());
        RawRecord {
            subject_id: self.subject_id.clone(),
            task_id: self.task_id,
            label: self.label,
            samples: (0..self.len())
                .map(|i| RawSample::dense(self.t[i], x[i], y[i], p[i]))
                .collect(),
        }
    }
}

fn parse_field(s: &str) -> Option<f64> {
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn is_column_names(fields: &[&str]) -> bool {
    fields
        .first()
        .is_some_and(|f| f.trim().eq_ignore_ascii_case("subject_id") || f.trim().eq_ignore_ascii_case("t_ms"))
}

fn parse_header(fields: &[&str], line: usize) -> Result<(String, u8, Label)> {
    let err = |msg: String| HsdaError::Parse { line, msg };
    let subject = fields[0].trim();
    if subject.is_empty() {
        return Err(err("empty subject id".into()));
    }
    let task: u8 = fields[1]
        .trim()
        .parse()
        .map_err(|_| err(format!("bad task id {:?}", fields[1])))?;
    if !(1..=25).contains(&task) {
        return Err(err(format!("task id {task} outside 1..25")));
    }
    let label = fields[2].parse::<Label>().map_err(err)?;
    Ok((subject.to_string(), task, label))
}

/// Parses `csv-v1` text. Records sharing a (subject, task) key are merged,
/// samples are stably sorted by timestamp and rows without a usable
/// timestamp are dropped.
pub fn parse_raw_str(text: &str) -> Result<Vec<RawRecord>> {
    let mut order: Vec<(String, u8)> = Vec::new();
    let mut records: BTreeMap<(String, u8), RawRecord> = BTreeMap::new();
    let mut current: Option<(String, u8)> = None;
    let mut expect_header = true;
    let mut dropped_rows = 0usize;

    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw_line.trim();
        if line.is_empty() {
            expect_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if is_column_names(&fields) {
            continue;
        }
        match fields.len() {
            3 => {
                let (subject, task, label) = parse_header(&fields, line_no)?;
                let key = (subject.clone(), task);
                if let Some(existing) = records.get(&key) {
                    if existing.label != label {
                        return Err(HsdaError::Parse {
                            line: line_no,
                            msg: format!("subject {subject} task {task} relabelled"),
                        });
                    }
                } else {
                    order.push(key.clone());
                    records.insert(
                        key.clone(),
                        RawRecord {
                            subject_id: subject,
                            task_id: task,
                            label,
                            samples: Vec::new(),
                        },
                    );
                }
                current = Some(key);
                expect_header = false;
            }
            4 if !expect_header => {
                let key = current.as_ref().expect("header seen");
                let Some(t) = parse_field(fields[0]) else {
                    dropped_rows += 1;
                    continue;
                };
                let sample = RawSample {
                    t,
                    x: parse_field(fields[1]),
                    y: parse_field(fields[2]),
                    p: parse_field(fields[3]),
                };
                records.get_mut(key).expect("record exists").samples.push(sample);
            }
            _ if expect_header => {
                return Err(HsdaError::Parse {
                    line: line_no,
                    msg: format!("expected `subject_id,task_id,label`, found {} fields", fields.len()),
                });
            }
            n => {
                return Err(HsdaError::Parse {
                    line: line_no,
                    msg: format!("expected 4 sample fields, found {n}"),
                });
            }
        }
    }
    if order.is_empty() {
        return Err(HsdaError::EmptyInput("no records found".into()));
    }
    if dropped_rows > 0 {
        log::warn!("dropped {dropped_rows} rows without a timestamp");
    }
    Ok(order
        .into_iter()
        .map(|k| {
            let mut r = records.remove(&k).expect("record exists");
            r.samples.sort_by(|a, b| a.t.total_cmp(&b.t));
            r
        })
        .collect())
}

pub fn parse_raw(path: &Path, format: RawFormat) -> Result<Vec<RawRecord>> {
    let RawFormat::CsvV1 = format;
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    if text.trim().is_empty() {
        return Err(HsdaError::EmptyInput(path.display().to_string()));
    }
    parse_raw_str(&text)
}

/// Writes records in `csv-v1` layout. Missing values become empty fields.
pub fn write_raw_str(records: &[RawRecord]) -> String {
    let fmt = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_default();
    let mut out = String::new();
    for (i, r) in records.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("{},{},{}\n", r.subject_id, r.task_id, r.label));
        for s in &r.samples {
            out.push_str(&format!("{:.3},{},{},{}\n", s.t, fmt(s.x), fmt(s.y), fmt(s.p)));
        }
    }
    out
}

/// Linear interpolation of the gaps in `v` along `t`; ends take the nearest
/// valid value. Returns `None` with fewer than two valid entries.
pub fn interpolate_gaps(t: &[f64], v: &[Option<f64>]) -> Option<Vec<f64>> {
    let valid: Vec<usize> = (0..v.len()).filter(|&i| v[i].is_some()).collect();
    if valid.len() < 2 {
        return None;
    }
    let (first, last) = (valid[0], *valid.last().unwrap());
    let mut out = Vec::with_capacity(v.len());
    let mut k = 0;
    for i in 0..v.len() {
        if let Some(x) = v[i] {
            out.push(x);
            continue;
        }
        if i < first {
            out.push(v[first].unwrap());
        } else if i > last {
            out.push(v[last].unwrap());
        } else {
            while valid[k + 1] < i {
                k += 1;
            }
            let (a, b) = (valid[k], valid[k + 1]);
            let (va, vb) = (v[a].unwrap(), v[b].unwrap());
            let span = t[b] - t[a];
            let w = if span > 0.0 { (t[i] - t[a]) / span } else { 0.5 };
            out.push(va + w * (vb - va));
        }
    }
    Some(out)
}

fn times(r: &RawRecord) -> Vec<f64> {
    r.samples.iter().map(|s| s.t).collect()
}

/// Fills missing x, y, p by linear interpolation on the timestamp axis.
pub fn impute_missing(r: &RawRecord) -> Result<RawRecord> {
    if r.is_dense() {
        return Ok(r.clone());
    }
    let t = times(r);
    let mut out = r.clone();
    for (c, name) in CHANNELS.iter().enumerate() {
        let filled = interpolate_gaps(&t, &r.column(c)).ok_or_else(|| HsdaError::Imputation {
            subject: r.subject_id.clone(),
            task: r.task_id,
            channel: name,
        })?;
        for (s, v) in out.samples.iter_mut().zip(filled) {
            s.set_channel(c, v);
        }
    }
    Ok(out)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OutlierReport {
    pub replaced: usize,
    pub per_channel: [usize; 3],
    pub warning: bool,
}

/// Replaces samples whose robust z-score exceeds `z_max` on any channel.
/// The whole sample is treated as missing and re-interpolated.
pub fn remove_outliers(r: &RawRecord, z_max: f64) -> Result<(RawRecord, OutlierReport)> {
    if !r.is_dense() {
        return Err(HsdaError::Usage("remove_outliers needs a dense record".into()));
    }
    let n = r.samples.len();
    let mut flagged = vec![false; n];
    let mut report = OutlierReport::default();
    for c in 0..3 {
        let v = r.dense_column(c);
        if v.is_empty() {
            continue;
        }
        let med = median(&v);
        let dev: Vec<f64> = v.iter().map(|x| (x - med).abs()).collect();
        let mad = median(&dev);
        if mad == 0.0 {
            continue;
        }
        let scale = 1.4826 * mad;
        for i in 0..n {
            if dev[i] / scale > z_max {
                flagged[i] = true;
                report.per_channel[c] += 1;
            }
        }
    }
    report.replaced = flagged.iter().filter(|&&f| f).count();
    if report.replaced == 0 {
        return Ok((r.clone(), report));
    }
    if report.replaced * 5 > n {
        report.warning = true;
        log::warn!(
            "subject {} task {}: {} of {} samples flagged as outliers",
            r.subject_id,
            r.task_id,
            report.replaced,
            n
        );
    }
    let t = times(r);
    let mut out = r.clone();
    for (c, &channel) in CHANNELS.iter().enumerate() {
        let masked: Vec<Option<f64>> = r
            .dense_column(c)
            .into_iter()
            .zip(&flagged)
            .map(|(v, &f)| (!f).then_some(v))
            .collect();
        let Some(filled) = interpolate_gaps(&t, &masked) else {
            return Err(HsdaError::Imputation {
                subject: r.subject_id.clone(),
                task: r.task_id,
                channel,
            });
        };
        for (s, v) in out.samples.iter_mut().zip(filled) {
            s.set_channel(c, v);
        }
    }
    Ok((out, report))
}

/// Population mean and standard deviation; a zero deviation becomes 1.
pub fn channel_stats(v: &[f64]) -> ChannelStats {
    let n = v.len().max(1) as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    ChannelStats {
        mean,
        std: if std > 1e-12 * mean.abs().max(1.0) { std } else { 1.0 },
    }
}

pub fn zscore(v: &[f64]) -> (Vec<f64>, ChannelStats) {
    let s = channel_stats(v);
    (v.iter().map(|x| (x - s.mean) / s.std).collect(), s)
}

pub fn standardize(r: &RawRecord) -> Result<StrokeSequence> {
    if !r.is_dense() {
        return Err(HsdaError::Usage("standardize needs a dense record".into()));
    }
    let (x, sx) = zscore(&r.dense_column(0));
    let (y, sy) = zscore(&r.dense_column(1));
    let (p, sp) = zscore(&r.dense_column(2));
    Ok(StrokeSequence {
        subject_id: r.subject_id.clone(),
        task_id: r.task_id,
        label: r.label,
        t: times(r),
        x,
        y,
        p,
        stats: [sx, sy, sp],
    })
}

/// Averages samples sharing a timestamp so time is strictly increasing.
pub fn collapse_duplicate_times(r: &RawRecord) -> RawRecord {
    let mut out = r.clone();
    out.samples.clear();
    let mut i = 0;
    while i < r.samples.len() {
        let mut j = i + 1;
        while j < r.samples.len() && r.samples[j].t == r.samples[i].t {
            j += 1;
        }
        if j - i == 1 {
            out.samples.push(r.samples[i]);
        } else {
            let group = &r.samples[i..j];
            let avg = |c: usize| {
                let vals: Vec<f64> = group.iter().filter_map(|s| s.channel(c)).collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            };
            out.samples.push(RawSample {
                t: r.samples[i].t,
                x: avg(0),
                y: avg(1),
                p: avg(2),
            });
        }
        i = j;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dropped {
    pub subject_id: String,
    pub task_id: u8,
    pub reason: String,
}

fn salvage_problem(r: &RawRecord) -> Option<String> {
    if r.samples.is_empty() {
        return Some("no samples".into());
    }
    (0..3).find_map(|c| {
        let valid = r.samples.iter().filter(|s| s.channel(c).is_some()).count();
        (valid < 2).then(|| format!("channel {} has {valid} valid values", CHANNELS[c]))
    })
}

/// Removes records that cannot be salvaged and reports, for every task seen
/// in the input, the subjects that have no usable recording of it. Other
/// tasks of the same subject are kept.
pub fn drop_incomplete(records: Vec<RawRecord>) -> (Vec<RawRecord>, Vec<Dropped>) {
    let subjects: BTreeSet<String> = records.iter().map(|r| r.subject_id.clone()).collect();
    let tasks: BTreeSet<u8> = records.iter().map(|r| r.task_id).collect();
    let present: BTreeSet<(String, u8)> = records
        .iter()
        .map(|r| (r.subject_id.clone(), r.task_id))
        .collect();
    let mut dropped = Vec::new();
    let mut kept = Vec::with_capacity(records.len());
    for r in records {
        match salvage_problem(&r) {
            Some(reason) => dropped.push(Dropped {
                subject_id: r.subject_id,
                task_id: r.task_id,
                reason,
            }),
            None => kept.push(r),
        }
    }
    for s in &subjects {
        for &t in &tasks {
            if !present.contains(&(s.clone(), t)) {
                dropped.push(Dropped {
                    subject_id: s.clone(),
                    task_id: t,
                    reason: "not recorded".into(),
                });
            }
        }
    }
    (kept, dropped)
}

#[derive(Clone, Debug)]
pub struct Cleaned {
    pub sequence: StrokeSequence,
    pub outliers: OutlierReport,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CleanOptions {
    pub z_max: f64,
    pub drop_pen_up: bool,
}

impl Default for CleanOptions {
    fn default() -> Self {
        CleanOptions {
            z_max: 6.0,
            drop_pen_up: false,
        }
    }
}

/// Full cleaning chain for one record: duplicate timestamps, imputation,
/// outlier replacement and standardisation.
pub fn clean_record(r: &RawRecord, opts: &CleanOptions) -> Result<Cleaned> {
    let mut r = collapse_duplicate_times(r);
    r = impute_missing(&r)?;
    if opts.drop_pen_up {
        r.samples.retain(|s| s.p.is_some_and(|p| p > 0.0));
    }
    let (r, outliers) = remove_outliers(&r, opts.z_max)?;
    Ok(Cleaned {
        sequence: standardize(&r)?,
        outliers,
    })
}

/// Cleans every record, moving records that fail into the dropped list.
pub fn clean_all(records: Vec<RawRecord>, opts: &CleanOptions) -> (Vec<Cleaned>, Vec<Dropped>) {
    let (kept, mut dropped) = drop_incomplete(records);
    let mut out = Vec::with_capacity(kept.len());
    for r in &kept {
        match clean_record(r, opts) {
            Ok(c) => out.push(c),
            Err(e) => dropped.push(Dropped {
                subject_id: r.subject_id.clone(),
                task_id: r.task_id,
                reason: e.to_string(),
            }),
        }
    }
    (out, dropped)
}
