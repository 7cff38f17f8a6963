//! Input discovery: scans the two channel directories, pairs frames across
//! channels by acquisition time, applies the hour/day filters, and splits
//! the result into regularly spaced sessions the pipeline can process.
//!
//! Frames are discovered through their JSON sidecars; the pixel grid lives
//! next to each sidecar as `<stem>.png` or `<stem>.f32`. Only timestamps are
//! read at scan time — pixels load lazily, one session at a time.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use chrono::{DateTime, Datelike, Duration, Timelike, Utc};
use serde::Deserialize;
use stormflow::geo_imaging::{load_frame, Channel, FramePair, FrameSequence};

use crate::config::PipelineConfig;
use crate::{data_error, CliResult};

/// A discovered frame: paths plus the sidecar timestamp.
#[derive(Clone, Debug)]
pub struct FrameRef {
    pub image: PathBuf,
    pub sidecar: PathBuf,
    pub timestamp: DateTime<Utc>,
}

/// A (Ch3, Ch4) frame pair matched by timestamp, not yet loaded.
#[derive(Clone, Debug)]
pub struct ScannedPair {
    pub ch3: FrameRef,
    pub ch4: FrameRef,
}

impl ScannedPair {
    /// Acquisition time of the pair (the Ch4 scan time, matching the
    /// convention used for descriptor timestamps).
    pub fn timestamp(&self) -> DateTime<Utc> {
        self.ch4.timestamp
    }

    /// Loads both frames from disk.
    pub fn load(&self) -> CliResult<FramePair> {
        let ch3 = load_frame(&self.ch3.image, &self.ch3.sidecar).map_err(data_error)?;
        let ch4 = load_frame(&self.ch4.image, &self.ch4.sidecar).map_err(data_error)?;
        FramePair::new(ch3, ch4).map_err(data_error)
    }
}

/// A maximal run of pairs at the nominal cadence (within ±10%).
pub type Session = Vec<ScannedPair>;

/// Result of input discovery.
pub struct Discovery {
    /// Sessions of at least two pairs, in time order.
    pub sessions: Vec<Session>,
    /// Pairs dropped because they had no cadence-compatible neighbor.
    pub isolated_pairs: usize,
    /// Matched pairs surviving the hour/day filters (before isolation).
    pub matched_pairs: usize,
}

/// Only the sidecar fields needed during the scan.
#[derive(Deserialize)]
struct ScanMeta {
    channel: Channel,
    timestamp: DateTime<Utc>,
}

/// Scans one channel directory: every `*.json` sidecar must name this
/// channel and sit next to exactly one pixel grid.
fn scan_channel(dir: &Path, expect: Channel) -> CliResult<Vec<FrameRef>> {
    let mut sidecars: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))
        .map_err(data_error)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    sidecars.sort();

    let mut frames = Vec::with_capacity(sidecars.len());
    for sidecar in sidecars {
        let text = fs::read_to_string(&sidecar)
            .with_context(|| format!("cannot read sidecar {}", sidecar.display()))
            .map_err(data_error)?;
        let meta: ScanMeta = serde_json::from_str(&text)
            .with_context(|| format!("invalid sidecar {}", sidecar.display()))
            .map_err(data_error)?;
        if meta.channel != expect {
            return Err(data_error(anyhow!(
                "{} declares channel {}, but sits in the {expect} directory",
                sidecar.display(),
                meta.channel
            )));
        }
        let png = sidecar.with_extension("png");
        let f32 = sidecar.with_extension("f32");
        let image = match (png.is_file(), f32.is_file()) {
            (true, false) => png,
            (false, true) => f32,
            (true, true) => {
                return Err(data_error(anyhow!(
                    "both {} and {} exist; keep exactly one grid per sidecar",
                    png.display(),
                    f32.display()
                )))
            }
            (false, false) => {
                return Err(data_error(anyhow!(
                    "no pixel grid next to {} (expected .png or .f32)",
                    sidecar.display()
                )))
            }
        };
        frames.push(FrameRef {
            image,
            sidecar,
            timestamp: meta.timestamp,
        });
    }

    frames.sort_by_key(|f| f.timestamp);
    for w in frames.windows(2) {
        if w[0].timestamp == w[1].timestamp {
            return Err(data_error(anyhow!(
                "duplicate {expect} timestamp {}: {} and {}",
                w[0].timestamp,
                w[0].sidecar.display(),
                w[1].sidecar.display()
            )));
        }
    }
    Ok(frames)
}

/// Matches the two channel streams by time. Every frame must find a partner
/// within the skew tolerance; a leftover frame is a data error, because it
/// means the archive is incomplete rather than merely filtered.
fn pair_channels(
    ch3: Vec<FrameRef>,
    ch4: Vec<FrameRef>,
    max_skew: Duration,
) -> CliResult<Vec<ScannedPair>> {
    let mut pairs = Vec::with_capacity(ch3.len().min(ch4.len()));
    let mut a = ch3.into_iter().peekable();
    let mut b = ch4.into_iter().peekable();
    loop {
        match (a.peek(), b.peek()) {
            (Some(f3), Some(f4)) => {
                let skew = f3.timestamp - f4.timestamp;
                if skew.abs() <= max_skew {
                    pairs.push(ScannedPair {
                        ch3: a.next().unwrap(),
                        ch4: b.next().unwrap(),
                    });
                } else {
                    let (frame, channel) = if f3.timestamp < f4.timestamp {
                        (f3, Channel::Ch3)
                    } else {
                        (f4, Channel::Ch4)
                    };
                    return Err(unmatched(frame, channel, max_skew));
                }
            }
            (Some(f3), None) => return Err(unmatched(f3, Channel::Ch3, max_skew)),
            (None, Some(f4)) => return Err(unmatched(f4, Channel::Ch4, max_skew)),
            (None, None) => break,
        }
    }
    Ok(pairs)
}

fn unmatched(frame: &FrameRef, channel: Channel, max_skew: Duration) -> crate::CliError {
    data_error(anyhow!(
        "{channel} frame at {} ({}) has no partner in the other channel within {} min",
        frame.timestamp,
        frame.sidecar.display(),
        max_skew.num_minutes()
    ))
}

/// True when both channel gaps between consecutive pairs sit within ±10% of
/// the nominal cadence — the same rule the sequence constructor enforces.
fn cadence_compatible(prev: &ScannedPair, next: &ScannedPair, nominal: Duration) -> bool {
    let nominal_ms = nominal.num_milliseconds() as f64;
    [
        (prev.ch3.timestamp, next.ch3.timestamp),
        (prev.ch4.timestamp, next.ch4.timestamp),
    ]
    .into_iter()
    .all(|(t0, t1)| {
        t1 > t0 && ((t1 - t0).num_milliseconds() as f64 - nominal_ms).abs() <= 0.1 * nominal_ms
    })
}

/// Scans both channel directories and produces processable sessions.
///
/// `day_range` restricts to days of the month (inclusive); the configured
/// GMT-hour window restricts to clock times within `[start:00, end:00]`.
/// Gaps, filtered-out frames, and overnight breaks split the stream into
/// separate sessions so each one keeps a regular cadence.
pub fn discover_sessions(
    cfg: &PipelineConfig,
    day_range: Option<(u32, u32)>,
) -> CliResult<Discovery> {
    let ch3 = scan_channel(&cfg.ch3_dir, Channel::Ch3)?;
    let ch4 = scan_channel(&cfg.ch4_dir, Channel::Ch4)?;
    log::info!(
        "scanned {} ch3 and {} ch4 frames",
        ch3.len(),
        ch4.len()
    );

    let skew = Duration::minutes(cfg.max_channel_skew_minutes);
    let mut pairs = pair_channels(ch3, ch4, skew)?;

    if let Some((start_h, end_h)) = cfg.hours_gmt {
        let (lo, hi) = (start_h * 60, end_h * 60);
        pairs.retain(|p| {
            let t = p.timestamp();
            let minutes = t.hour() * 60 + t.minute();
            (lo..=hi).contains(&minutes)
        });
    }
    if let Some((first, last)) = day_range {
        pairs.retain(|p| (first..=last).contains(&p.timestamp().day()));
    }

    let matched_pairs = pairs.len();
    let nominal = Duration::minutes(cfg.nominal_spacing_minutes);
    let mut sessions: Vec<Session> = Vec::new();
    let mut current: Session = Vec::new();
    for pair in pairs {
        if let Some(prev) = current.last() {
            if !cadence_compatible(prev, &pair, nominal) {
                sessions.push(std::mem::take(&mut current));
            }
        }
        current.push(pair);
    }
    if !current.is_empty() {
        sessions.push(current);
    }

    let isolated_pairs = sessions.iter().filter(|s| s.len() < 2).map(Vec::len).sum();
    if isolated_pairs > 0 {
        log::warn!(
            "dropping {isolated_pairs} frame pair(s) without a cadence-compatible neighbor"
        );
    }
    sessions.retain(|s| s.len() >= 2);

    Ok(Discovery {
        sessions,
        isolated_pairs,
        matched_pairs,
    })
}

/// Loads one session's frames and wraps them in a validated sequence.
pub fn load_session(session: &Session, cfg: &PipelineConfig) -> CliResult<FrameSequence> {
    let mut loaded = Vec::with_capacity(session.len());
    for pair in session {
        loaded.push(pair.load()?);
    }
    FrameSequence::new(loaded, Duration::minutes(cfg.nominal_spacing_minutes))
        .map_err(data_error)
}
