//! Watch-event parsing and per-video engagement aggregation.
//!
//! Partial aggregates form a commutative monoid: view and threshold counts are
//! integers and watch-time sums are kept as exact floating-point expansions,
//! so any sharding of the event stream merges to bit-identical records.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default engagement-continuation threshold in seconds.
pub const ECR_THRESHOLD_S: f64 = 5.0;

/// Watch times longer than this multiple of the duration are reported.
pub const OUTLIER_DURATION_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatchEvent {
    pub video_id: String,
    pub watch_time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub liked: Option<bool>,
}

impl WatchEvent {
    pub fn validate(&self) -> Result<()> {
        if self.video_id.is_empty() {
            return Err(Error::invalid("empty video_id"));
        }
        if !self.watch_time_s.is_finite() {
            return Err(Error::invalid("non-finite watch time"));
        }
        if self.watch_time_s < 0.0 {
            return Err(Error::invalid(format!("negative watch time {}", self.watch_time_s)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub video_id: String,
    pub duration_s: f64,
    pub frame_rate: f64,
}

impl VideoMeta {
    pub fn validate(&self) -> Result<()> {
        if self.video_id.is_empty() {
            return Err(Error::invalid("empty video_id"));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::invalid(format!("{}: duration must be positive", self.video_id)));
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(Error::invalid(format!("{}: frame rate must be positive", self.video_id)));
        }
        Ok(())
    }
}

/// Per-video engagement statistics. Field order is the serialized key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: String,
    pub duration_s: f64,
    pub views: u64,
    pub awt_s: f64,
    pub awp: f64,
    pub ecr: f64,
    pub like_rate: Option<f64>,
    pub nawp: Option<f64>,
}

/// Exact running sum of floats as a non-overlapping expansion
/// (Shewchuk's algorithm). [`ExactSum::value`] is the correctly rounded
/// total, independent of insertion order and grouping.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, mut x: f64) {
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    pub fn merge(&mut self, other: &ExactSum) {
        for &p in &other.partials {
            self.add(p);
        }
    }

    /// Correctly rounded value of the exact sum (round half to even).
    pub fn value(&self) -> f64 {
        let p = &self.partials;
        let mut n = p.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        // Half-way case: the remaining partials decide the rounding direction.
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
        hi
    }
}

impl FromIterator<f64> for ExactSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = ExactSum::new();
        iter.into_iter().for_each(|x| s.add(x));
        s
    }
}

/// Mergeable partial aggregate for one video.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VideoAccumulator {
    pub views: u64,
    pub watch_sum: ExactSum,
    pub above_threshold: u64,
    pub like_flags: u64,
    pub likes: u64,
    pub outliers: u64,
    pub max_watch_s: f64,
}

impl VideoAccumulator {
    pub fn push(&mut self, event: &WatchEvent, meta: &VideoMeta, ecr_threshold_s: f64) {
        self.views += 1;
        self.watch_sum.add(event.watch_time_s);
        if event.watch_time_s > ecr_threshold_s {
            self.above_threshold += 1;
        }
        if let Some(liked) = event.liked {
            self.like_flags += 1;
            self.likes += u64::from(liked);
        }
        if event.watch_time_s > OUTLIER_DURATION_FACTOR * meta.duration_s {
            self.outliers += 1;
        }
        self.max_watch_s = self.max_watch_s.max(event.watch_time_s);
    }

    pub fn merge(&mut self, other: &VideoAccumulator) {
        self.views += other.views;
        self.watch_sum.merge(&other.watch_sum);
        self.above_threshold += other.above_threshold;
        self.like_flags += other.like_flags;
        self.likes += other.likes;
        self.outliers += other.outliers;
        self.max_watch_s = self.max_watch_s.max(other.max_watch_s);
    }

    pub fn finish(&self, meta: &VideoMeta) -> Result<VideoRecord> {
        if self.views == 0 {
            return Err(Error::invalid(format!("{}: no watch events", meta.video_id)));
        }
        let views = self.views as f64;
        // The correctly rounded mean can exceed the largest sample by an ulp.
        let awt_s = (self.watch_sum.value() / views).min(self.max_watch_s);
        Ok(VideoRecord {
            video_id: meta.video_id.clone(),
            duration_s: meta.duration_s,
            views: self.views,
            awt_s,
            awp: awt_s / meta.duration_s,
            ecr: self.above_threshold as f64 / views,
            like_rate: (self.like_flags > 0).then(|| self.likes as f64 / views),
            nawp: None,
        })
    }
}

/// Aggregates the events of a single video.
pub fn aggregate_video(
    events: &[WatchEvent],
    meta: &VideoMeta,
    ecr_threshold_s: f64,
) -> Result<VideoRecord> {
    meta.validate()?;
    if events.is_empty() {
        return Err(Error::invalid(format!("{}: empty event set", meta.video_id)));
    }
    let mut acc = VideoAccumulator::default();
    for e in events {
        e.validate()?;
        if e.video_id != meta.video_id {
            return Err(Error::invalid(format!(
                "event for {} passed with meta for {}",
                e.video_id, meta.video_id
            )));
        }
        acc.push(e, meta, ecr_threshold_s);
    }
    acc.finish(meta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateConfig {
    pub ecr_threshold_s: f64,
    pub min_views: u64,
    pub duration_range_s: (f64, f64),
}

impl Default for AggregateConfig {
    fn default() -> Self {
        AggregateConfig {
            ecr_threshold_s: ECR_THRESHOLD_S,
            min_views: 2000,
            duration_range_s: (10.0, 60.0),
        }
    }
}

impl AggregateConfig {
    pub fn accepts(&self, record: &VideoRecord) -> bool {
        let (lo, hi) = self.duration_range_s;
        record.views >= self.min_views && record.duration_s >= lo && record.duration_s <= hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutlierWarning {
    pub video_id: String,
    /// Views whose watch time exceeded ten times the video duration.
    pub views_over_10x_duration: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusAggregate {
    pub records: Vec<VideoRecord>,
    pub excluded_by_filter: usize,
    pub unknown_video_events: u64,
    pub warnings: Vec<OutlierWarning>,
}

/// Streaming corpus aggregator; one instance per shard.
#[derive(Debug, Clone)]
pub struct Aggregator<'m> {
    metas: &'m BTreeMap<String, VideoMeta>,
    threshold: f64,
    partials: BTreeMap<String, VideoAccumulator>,
    unknown: u64,
}

/// Validates metas and indexes them by id.
pub fn index_metas(metas: impl IntoIterator<Item = VideoMeta>) -> Result<BTreeMap<String, VideoMeta>> {
    let mut out = BTreeMap::new();
    for m in metas {
        m.validate()?;
        if out.contains_key(&m.video_id) {
            return Err(Error::invalid(format!("duplicate meta for {}", m.video_id)));
        }
        out.insert(m.video_id.clone(), m);
    }
    Ok(out)
}

impl<'m> Aggregator<'m> {
    pub fn new(metas: &'m BTreeMap<String, VideoMeta>, ecr_threshold_s: f64) -> Self {
        Aggregator { metas, threshold: ecr_threshold_s, partials: BTreeMap::new(), unknown: 0 }
    }

    /// Adds one event; events for unknown videos are counted and skipped.
    pub fn push(&mut self, event: &WatchEvent) {
        let Some(meta) = self.metas.get(&event.video_id) else {
            self.unknown += 1;
            return;
        };
        self.partials.entry(event.video_id.clone()).or_default().push(event, meta, self.threshold);
    }

    pub fn merge(&mut self, other: Aggregator<'_>) {
        self.unknown += other.unknown;
        for (id, acc) in other.partials {
            self.partials.entry(id).or_default().merge(&acc);
        }
    }

    /// Produces records sorted by video id; filters apply after aggregation.
    pub fn finish(self, config: &AggregateConfig) -> Result<CorpusAggregate> {
        let mut records = Vec::with_capacity(self.partials.len());
        let mut warnings = Vec::new();
        let mut excluded = 0;
        for (id, acc) in &self.partials {
            let record = acc.finish(&self.metas[id])?;
            if acc.outliers > 0 {
                warnings.push(OutlierWarning {
                    video_id: id.clone(),
                    views_over_10x_duration: acc.outliers,
                });
            }
            if config.accepts(&record) {
                records.push(record);
            } else {
                excluded += 1;
            }
        }
        Ok(CorpusAggregate {
            records,
            excluded_by_filter: excluded,
            unknown_video_events: self.unknown,
            warnings,
        })
    }
}

pub fn aggregate_corpus<'e>(
    events: impl IntoIterator<Item = &'e WatchEvent>,
    metas: &BTreeMap<String, VideoMeta>,
    config: &AggregateConfig,
) -> Result<CorpusAggregate> {
    let mut agg = Aggregator::new(metas, config.ecr_threshold_s);
    for e in events {
        agg.push(e);
    }
    agg.finish(config)
}

/// Aggregates contiguous shards on separate threads and merges them in shard
/// order. Output is identical to [`aggregate_corpus`] for any shard count.
pub fn aggregate_sharded(
    events: &[WatchEvent],
    metas: &BTreeMap<String, VideoMeta>,
    config: &AggregateConfig,
    shards: usize,
) -> Result<CorpusAggregate> {
    let shards = shards.max(1);
    let chunk = events.len().div_ceil(shards).max(1);
    let partials: Vec<Aggregator<'_>> = std::thread::scope(|s| {
        let handles: Vec<_> = events
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    let mut agg = Aggregator::new(metas, config.ecr_threshold_s);
                    part.iter().for_each(|e| agg.push(e));
                    agg
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("aggregation shard panicked")).collect()
    });
    let mut total = Aggregator::new(metas, config.ecr_threshold_s);
    for p in partials {
        total.merge(p);
    }
    total.finish(config)
}

/// Parses JSON-lines, yielding one result per non-blank line. Errors carry
/// the 1-based line number and do not stop the stream.
pub fn parse_jsonl<T, R>(reader: R) -> impl Iterator<Item = Result<T>>
where
    T: for<'de> Deserialize<'de>,
    R: BufRead,
{
    parse_validated(reader, |_: &T| Ok(()))
}

fn parse_validated<T, R>(
    reader: R,
    validate: impl Fn(&T) -> Result<()>,
) -> impl Iterator<Item = Result<T>>
where
    T: for<'de> Deserialize<'de>,
    R: BufRead,
{
    reader.lines().enumerate().filter_map(move |(i, line)| {
        let at = |message: String| Error::Parse { line: i + 1, message };
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(at(e.to_string()))),
        };
        if line.trim().is_empty() {
            return None;
        }
        Some(
            serde_json::from_str::<T>(&line)
                .map_err(|e| at(e.to_string()))
                .and_then(|v| validate(&v).map(|()| v).map_err(|e| at(e.to_string()))),
        )
    })
}

/// Parses an event log; malformed and invalid lines become positional errors.
pub fn parse_events<R: BufRead>(reader: R) -> impl Iterator<Item = Result<WatchEvent>> {
    parse_validated(reader, WatchEvent::validate)
}

/// Parses a meta table.
pub fn parse_metas<R: BufRead>(reader: R) -> impl Iterator<Item = Result<VideoMeta>> {
    parse_validated(reader, VideoMeta::validate)
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize, W: Write>(mut w: W, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
