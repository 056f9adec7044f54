//! Event sequences, spike trains and the line-delimited event file format.
//!
//! An event file is UTF-8, one JSON record per line. The first record is a
//! header `{"num_types": E, "horizon": T}`; every following record is an
//! event `{"t": <seconds>, "e": <type>}`. Blank lines are ignored.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Offset applied to the later of two same-type events at one instant so the
/// resulting spike train stays strictly increasing.
pub const TIE_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub e: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    num_types: usize,
    horizon: f64,
}

/// A validated, time-ordered multivariate event stream on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSequence {
    events: Vec<Event>,
    num_types: usize,
    horizon: f64,
}

impl EventSequence {
    /// Validates and sorts `events` (stable on equal timestamps).
    pub fn new(mut events: Vec<Event>, num_types: usize, horizon: f64) -> Result<Self> {
        if num_types == 0 {
            return Err(Error::Validation("num_types must be at least 1".into()));
        }
        if !horizon.is_finite() || horizon < 0.0 {
            return Err(Error::Validation(format!("horizon {horizon} is not a finite non-negative value")));
        }
        for (i, ev) in events.iter().enumerate() {
            check_event(ev, num_types, horizon).map_err(|m| Error::Validation(format!("event {i}: {m}")))?;
        }
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
        Ok(Self { events, num_types, horizon })
    }

    pub fn empty(num_types: usize, horizon: f64) -> Result<Self> {
        Self::new(Vec::new(), num_types, horizon)
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

    pub fn num_types(&self) -> usize {
        self.num_types
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Events strictly before `t` (the history H_t).
    pub fn history(&self, t: f64) -> &[Event] {
        let end = self.events.partition_point(|ev| ev.t < t);
        &self.events[..end]
    }

    /// Event counts per type.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_types];
        for ev in &self.events {
            counts[ev.e] += 1;
        }
        counts
    }

    /// Events with `t` in `[start, end)`, shifted so `start` maps to zero.
    pub fn slice(&self, start: f64, end: f64) -> Result<Self> {
        let lo = self.events.partition_point(|ev| ev.t < start);
        let hi = self.events.partition_point(|ev| ev.t < end);
        let events = self.events[lo..hi].iter().map(|ev| Event { t: ev.t - start, e: ev.e }).collect();
        Self::new(events, self.num_types, end - start)
    }
}

fn check_event(ev: &Event, num_types: usize, horizon: f64) -> std::result::Result<(), String> {
    if !ev.t.is_finite() {
        return Err(format!("timestamp {} is not finite", ev.t));
    }
    if ev.t < 0.0 || ev.t > horizon {
        return Err(format!("timestamp {} outside [0, {horizon}]", ev.t));
    }
    if ev.e >= num_types {
        return Err(format!("event type {} not below num_types {num_types}", ev.e));
    }
    Ok(())
}

/// Reads an event file. Line numbers in errors are 1-based.
pub fn parse_event_file<R: BufRead>(source: R) -> Result<EventSequence> {
    let mut header: Option<Header> = None;
    let mut events = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        match header {
            None => {
                let h: Header = serde_json::from_str(trimmed)
                    .map_err(|e| Error::Parse { line: line_no, message: format!("bad header: {e}") })?;
                if h.num_types == 0 || !h.horizon.is_finite() || h.horizon < 0.0 {
                    return Err(Error::Validation(format!(
                        "line {line_no}: header needs num_types >= 1 and a finite horizon >= 0"
                    )));
                }
                header = Some(h);
            }
            Some(h) => {
                let ev: Event = serde_json::from_str(trimmed)
                    .map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
                check_event(&ev, h.num_types, h.horizon)
                    .map_err(|m| Error::Validation(format!("line {line_no}: {m}")))?;
                events.push(ev);
            }
        }
    }
    let h = header.ok_or(Error::Parse { line: 0, message: "missing header record".into() })?;
    EventSequence::new(events, h.num_types, h.horizon)
}

pub fn write_event_file<W: Write>(seq: &EventSequence, mut out: W) -> Result<()> {
    let header = Header { num_types: seq.num_types, horizon: seq.horizon };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for ev in &seq.events {
        serde_json::to_writer(&mut out, ev)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Splits at `t* = fraction * horizon`. The test half is shifted to start at 0.
pub fn split_train_test(seq: &EventSequence, fraction: f64) -> Result<(EventSequence, EventSequence)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Validation(format!("split fraction {fraction} outside (0, 1]")));
    }
    let cut = fraction * seq.horizon;
    let train = seq.slice(0.0, cut)?;
    let idx = seq.events.partition_point(|ev| ev.t < cut);
    let test_events = seq.events[idx..].iter().map(|ev| Event { t: ev.t - cut, e: ev.e }).collect();
    let test = EventSequence::new(test_events, seq.num_types, seq.horizon - cut)?;
    Ok((train, test))
}

/// Strictly increasing spike times of one neuron.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SpikeTrain {
    pub neuron_id: usize,
    times: Vec<f64>,
}

impl SpikeTrain {
    pub fn new(neuron_id: usize, times: Vec<f64>) -> Result<Self> {
        if let Some(w) = times.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::Validation(format!(
                "spike train {neuron_id} not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::Validation(format!("spike train {neuron_id} has a non-finite time")));
        }
        Ok(Self { neuron_id, times })
    }

    pub fn empty(neuron_id: usize) -> Self {
        Self { neuron_id, times: Vec::new() }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Appends a spike; the caller guarantees monotonicity.
    pub(crate) fn push_unchecked(&mut self, t: f64) {
        debug_assert!(self.times.last().is_none_or(|&last| t > last));
        self.times.push(t);
    }

    /// Spikes in `[start, end)`.
    pub fn window(&self, start: f64, end: f64) -> &[f64] {
        let lo = self.times.partition_point(|&t| t < start);
        let hi = self.times.partition_point(|&t| t < end);
        &self.times[lo..hi]
    }

    /// Union of several trains under a new id. Coincident spikes are jittered.
    pub fn merge(neuron_id: usize, trains: &[&SpikeTrain]) -> Self {
        let mut all: Vec<f64> = trains.iter().flat_map(|s| s.times.iter().copied()).collect();
        all.sort_by(f64::total_cmp);
        Self { neuron_id, times: dejitter(all) }
    }
}

fn dejitter(mut times: Vec<f64>) -> Vec<f64> {
    for i in 1..times.len() {
        if times[i] <= times[i - 1] {
            times[i] = times[i - 1] + TIE_EPSILON;
        }
    }
    times
}

/// One spike train per event type holding exactly that type's event times.
pub fn encode_as_spikes(seq: &EventSequence) -> Vec<SpikeTrain> {
    let mut per_type: Vec<Vec<f64>> = vec![Vec::new(); seq.num_types];
    for ev in &seq.events {
        per_type[ev.e].push(ev.t);
    }
    per_type
        .into_iter()
        .enumerate()
        .map(|(e, times)| SpikeTrain { neuron_id: e, times: dejitter(times) })
        .collect()
}
