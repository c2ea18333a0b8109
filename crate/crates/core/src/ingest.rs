//! Ping parsing and home/work anchor inference.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;
use std::str::FromStr;

use chrono::{Datelike, NaiveDateTime, NaiveTime, Weekday};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TowerId;

pub const PINGS_HEADER: [&str; 3] = ["user_id", "tower_id", "timestamp"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PingRecord {
    pub user_id: String,
    pub tower_id: TowerId,
    pub timestamp: NaiveDateTime,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedPings {
    pub records: Vec<PingRecord>,
    pub malformed: usize,
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
    ];
    let s = s.trim();
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// Reads a `user_id,tower_id,timestamp` CSV. Lines with the wrong field
/// count, empty ids or unparseable timestamps are skipped and counted.
pub fn parse_pings<R: Read>(reader: R) -> Result<ParsedPings> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header_ok = match records.next() {
        Some(Ok(h)) => h.iter().eq(PINGS_HEADER.iter().copied()),
        Some(Err(e)) => return Err(csv_error(e)),
        None => false,
    };
    if !header_ok {
        return Err(Error::MissingHeader {
            expected: PINGS_HEADER.join(","),
        });
    }
    let mut out = ParsedPings::default();
    for rec in records {
        let rec = match rec {
            Ok(r) => r,
            Err(e) if e.is_io_error() => return Err(csv_error(e)),
            Err(_) => {
                out.malformed += 1;
                continue;
            }
        };
        if rec.len() != 3 || rec[0].is_empty() || rec[1].is_empty() {
            out.malformed += 1;
            continue;
        }
        match parse_timestamp(&rec[2]) {
            Some(timestamp) => out.records.push(PingRecord {
                user_id: rec[0].to_owned(),
                tower_id: TowerId(rec[1].to_owned()),
                timestamp,
            }),
            None => out.malformed += 1,
        }
    }
    Ok(out)
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Stream(io),
        other => Error::Format(format!("{other:?}")),
    }
}

/// Half-open time-of-day window `[start, end)`; wraps midnight when
/// `start > end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeWindow {
    pub start: NaiveTime,
    pub end: NaiveTime,
}

impl TimeWindow {
    pub fn new(start: NaiveTime, end: NaiveTime) -> Self {
        TimeWindow { start, end }
    }

    pub fn hours(start: u32, end: u32) -> Self {
        TimeWindow {
            start: NaiveTime::from_hms_opt(start, 0, 0).expect("hour < 24"),
            end: NaiveTime::from_hms_opt(end, 0, 0).expect("hour < 24"),
        }
    }

    pub fn contains(&self, t: NaiveTime) -> bool {
        if self.start <= self.end {
            self.start <= t && t < self.end
        } else {
            t >= self.start || t < self.end
        }
    }
}

impl FromStr for TimeWindow {
    type Err = Error;

    /// Parses `HH:MM-HH:MM`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad time window `{s}`, expected HH:MM-HH:MM"));
        let (a, b) = s.split_once('-').ok_or_else(bad)?;
        let parse = |x: &str| NaiveTime::parse_from_str(x.trim(), "%H:%M").map_err(|_| bad());
        let w = TimeWindow::new(parse(a)?, parse(b)?);
        if w.start == w.end {
            return Err(bad());
        }
        Ok(w)
    }
}

impl std::fmt::Display for TimeWindow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.start.format("%H:%M"), self.end.format("%H:%M"))
    }
}

/// How the anchor-share criterion combines the two anchors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShareRule {
    /// Pings at the home or work tower, together, exceed the share.
    #[default]
    Combined,
    /// Pings at the home tower and pings at the work tower each exceed the
    /// share on their own.
    PerAnchor,
}

impl FromStr for ShareRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "combined" => Ok(ShareRule::Combined),
            "per_anchor" => Ok(ShareRule::PerAnchor),
            _ => Err(Error::Config(format!(
                "share_rule must be combined or per_anchor, got `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferConfig {
    pub home_window: TimeWindow,
    pub work_window: TimeWindow,
    pub min_anchor_pings: u32,
    pub anchor_share: f64,
    pub share_rule: ShareRule,
    /// Only pings dated Monday to Friday count toward the windows.
    pub weekdays_only: bool,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            home_window: TimeWindow::hours(22, 7),
            work_window: TimeWindow::hours(9, 17),
            min_anchor_pings: 5,
            anchor_share: 0.5,
            share_rule: ShareRule::Combined,
            weekdays_only: true,
        }
    }
}

impl InferConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.anchor_share) {
            return Err(Error::Config(format!(
                "anchor_share {} outside [0, 1)",
                self.anchor_share
            )));
        }
        Ok(())
    }
}

pub fn is_weekday(d: Weekday) -> bool {
    !matches!(d, Weekday::Sat | Weekday::Sun)
}

/// Bit for `d` in [`UserAnchor::days_observed`] (Monday = bit 0).
pub fn weekday_bit(d: Weekday) -> u8 {
    1 << d.num_days_from_monday()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserAnchor {
    pub user_id: String,
    pub home_tower: TowerId,
    pub work_tower: TowerId,
    pub n_pings_total: u32,
    /// Home-window pings at the home tower.
    pub n_home_pings: u32,
    /// Work-window pings at the work tower.
    pub n_work_pings: u32,
    /// Pings at the home or work tower at any hour.
    pub n_anchor_pings: u32,
    /// Weekdays with at least one in-window ping, Monday = bit 0.
    pub days_observed: u8,
    pub community: Option<usize>,
}

impl UserAnchor {
    /// Anchor without ping statistics, for callers that already know the
    /// home and work towers.
    pub fn new(user_id: impl Into<String>, home: impl Into<TowerId>, work: impl Into<TowerId>) -> Self {
        UserAnchor {
            user_id: user_id.into(),
            home_tower: home.into(),
            work_tower: work.into(),
            n_pings_total: 0,
            n_home_pings: 0,
            n_work_pings: 0,
            n_anchor_pings: 0,
            days_observed: 0x1f,
            community: None,
        }
    }

    pub fn is_self_loop(&self) -> bool {
        self.home_tower == self.work_tower
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionLog {
    pub accepted: usize,
    pub too_few_home: usize,
    pub too_few_work: usize,
    pub low_anchor_share: usize,
    pub no_pings_in_windows: usize,
    /// Users whose every ping hit a tower outside the kept set.
    pub dropped_tower: usize,
    /// Individual pings discarded for referencing a tower outside the kept set.
    pub dropped_pings: usize,
}

impl RejectionLog {
    pub fn rejected(&self) -> usize {
        self.too_few_home
            + self.too_few_work
            + self.low_anchor_share
            + self.no_pings_in_windows
            + self.dropped_tower
    }

    pub fn users_observed(&self) -> usize {
        self.accepted + self.rejected()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    TooFewHome,
    TooFewWork,
    LowAnchorShare,
    NoPingsInWindows,
    DroppedTower,
}

fn argmax<'a>(counts: &BTreeMap<&'a TowerId, u32>) -> Option<(&'a TowerId, u32)> {
    // ascending id order + strict comparison keeps the lowest id on ties
    let mut best: Option<(&TowerId, u32)> = None;
    for (&t, &c) in counts {
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((t, c));
        }
    }
    best
}

/// Applies the anchor rules to one user's pings, all at kept towers.
pub fn infer_user(
    user_id: &str,
    pings: &[&PingRecord],
    cfg: &InferConfig,
) -> std::result::Result<UserAnchor, Rejection> {
    if pings.is_empty() {
        return Err(Rejection::DroppedTower);
    }
    let mut home_counts: BTreeMap<&TowerId, u32> = BTreeMap::new();
    let mut work_counts: BTreeMap<&TowerId, u32> = BTreeMap::new();
    let mut all_counts: BTreeMap<&TowerId, u32> = BTreeMap::new();
    let mut days = 0u8;
    for p in pings {
        *all_counts.entry(&p.tower_id).or_default() += 1;
        let day = p.timestamp.weekday();
        if cfg.weekdays_only && !is_weekday(day) {
            continue;
        }
        let t = p.timestamp.time();
        let mut in_window = false;
        if cfg.home_window.contains(t) {
            *home_counts.entry(&p.tower_id).or_default() += 1;
            in_window = true;
        }
        if cfg.work_window.contains(t) {
            *work_counts.entry(&p.tower_id).or_default() += 1;
            in_window = true;
        }
        if in_window {
            days |= weekday_bit(day);
        }
    }
    let home = argmax(&home_counts);
    let work = argmax(&work_counts);
    if home.is_none() && work.is_none() {
        return Err(Rejection::NoPingsInWindows);
    }
    let (home, n_home) = match home {
        Some(h) if h.1 >= cfg.min_anchor_pings => h,
        _ => return Err(Rejection::TooFewHome),
    };
    let (work, n_work) = match work {
        Some(w) if w.1 >= cfg.min_anchor_pings => w,
        _ => return Err(Rejection::TooFewWork),
    };
    let total = pings.len() as u32;
    let at_home = all_counts[home];
    let at_work = all_counts[work];
    let n_anchor = if home == work { at_home } else { at_home + at_work };
    let share = |n: u32| f64::from(n) / f64::from(total) > cfg.anchor_share;
    let ok = match cfg.share_rule {
        ShareRule::Combined => share(n_anchor),
        ShareRule::PerAnchor => share(at_home) && share(at_work),
    };
    if !ok {
        return Err(Rejection::LowAnchorShare);
    }
    Ok(UserAnchor {
        user_id: user_id.to_owned(),
        home_tower: home.clone(),
        work_tower: work.clone(),
        n_pings_total: total,
        n_home_pings: n_home,
        n_work_pings: n_work,
        n_anchor_pings: n_anchor,
        days_observed: days,
        community: None,
    })
}

/// Infers anchors for every user seen in `pings`. Pings at towers outside
/// `kept` are dropped first. Output is sorted by user id and independent of
/// input order.
pub fn infer_home_work(
    pings: &[PingRecord],
    kept: &HashSet<TowerId>,
    cfg: &InferConfig,
) -> (Vec<UserAnchor>, RejectionLog) {
    let mut log = RejectionLog::default();
    let mut by_user: BTreeMap<&str, Vec<&PingRecord>> = BTreeMap::new();
    for p in pings {
        let v = by_user.entry(p.user_id.as_str()).or_default();
        if kept.contains(&p.tower_id) {
            v.push(p);
        } else {
            log.dropped_pings += 1;
        }
    }
    let users: Vec<(&str, Vec<&PingRecord>)> = by_user.into_iter().collect();
    let outcomes: Vec<_> = users
        .par_iter()
        .map(|(u, ps)| infer_user(u, ps, cfg))
        .collect();
    let mut anchors = Vec::new();
    for o in outcomes {
        match o {
            Ok(a) => {
                log.accepted += 1;
                anchors.push(a);
            }
            Err(Rejection::TooFewHome) => log.too_few_home += 1,
            Err(Rejection::TooFewWork) => log.too_few_work += 1,
            Err(Rejection::LowAnchorShare) => log.low_anchor_share += 1,
            Err(Rejection::NoPingsInWindows) => log.no_pings_in_windows += 1,
            Err(Rejection::DroppedTower) => log.dropped_tower += 1,
        }
    }
    (anchors, log)
}

/// Pings dated on `day`, for per-weekday networks.
pub fn pings_on(pings: &[PingRecord], day: Weekday) -> Vec<PingRecord> {
    pings
        .iter()
        .filter(|p| p.timestamp.weekday() == day)
        .cloned()
        .collect()
}
