//! Append-only trace log.
//!
//! Records are kept in memory and, optionally, appended to a CSV file with
//! the fixed columns `session_id, seq, stage, at, payload`. A single mutex
//! serializes all appends, so per-session sequence numbers stay gapless.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, SecondsFormat, Utc};
use serde_json::Value;

use crate::canonical::Validate;
use crate::domain::{SessionId, TraceRecord, TraceStage};

pub const CSV_HEADER: [&str; 5] = ["session_id", "seq", "stage", "at", "payload"];

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("session {session}: expected seq {expected}, got {got}")]
    SeqOutOfOrder { session: SessionId, expected: u64, got: u64 },
    #[error("invalid trace record: {0}")]
    Invalid(String),
    #[error("trace file {path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("malformed trace CSV: {0}")]
    Csv(String),
}

pub fn format_at(at: &DateTime<Utc>) -> String {
    at.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

fn csv_err(e: impl std::fmt::Display) -> TraceError {
    TraceError::Csv(e.to_string())
}

/// Writes records, header first. The payload column is always quoted.
pub fn write_csv<W: Write>(out: W, records: &[TraceRecord], header: bool) -> Result<(), TraceError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .quote_style(csv::QuoteStyle::NonNumeric)
        .from_writer(out);
    if header {
        w.write_record(CSV_HEADER).map_err(csv_err)?;
    }
    for r in records {
        w.write_record([
            r.session_id.as_str(),
            &r.seq.to_string(),
            r.stage.label(),
            &format_at(&r.at),
            &r.payload,
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<TraceRecord>, TraceError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(TraceError::Csv(format!("unexpected header {headers:?}")));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(i).ok_or_else(|| TraceError::Csv(format!("line {line}: missing column {i}")));
        let rec = TraceRecord {
            session_id: SessionId::new(field(0)?),
            seq: field(1)?.parse().map_err(|e| TraceError::Csv(format!("line {line}: seq: {e}")))?,
            stage: field(2)?.parse().map_err(|e| TraceError::Csv(format!("line {line}: {e}")))?,
            at: DateTime::parse_from_rfc3339(field(3)?)
                .map_err(|e| TraceError::Csv(format!("line {line}: at: {e}")))?
                .with_timezone(&Utc),
            payload: field(4)?.to_string(),
        };
        out.push(rec);
    }
    Ok(out)
}

struct State {
    last_seq: HashMap<SessionId, u64>,
    records: Vec<TraceRecord>,
    file: Option<(PathBuf, File)>,
}

/// The trace sink shared by every pipeline run.
pub struct TraceLog {
    state: Mutex<State>,
    durable: bool,
}

impl TraceLog {
    pub fn in_memory() -> Self {
        Self {
            state: Mutex::new(State { last_seq: HashMap::new(), records: Vec::new(), file: None }),
            durable: false,
        }
    }

    /// Opens (or creates) a CSV log; existing rows are loaded so sequence
    /// numbers continue where they stopped. Each append is fsynced.
    pub fn open_csv(path: &Path) -> Result<Self, TraceError> {
        let io = |e: std::io::Error| TraceError::Io { path: path.to_path_buf(), reason: e.to_string() };
        let existing = if path.exists() && std::fs::metadata(path).map_err(io)?.len() > 0 {
            read_csv(File::open(path).map_err(io)?)?
        } else {
            Vec::new()
        };
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        if existing.is_empty() && file.metadata().map_err(io)?.len() == 0 {
            write_csv(&mut file, &[], true)?;
        }
        let log = Self {
            state: Mutex::new(State { last_seq: HashMap::new(), records: Vec::new(), file: None }),
            durable: true,
        };
        {
            let mut st = log.lock();
            for r in existing {
                check_next(&st.last_seq, &r)?;
                st.last_seq.insert(r.session_id.clone(), r.seq);
                st.records.push(r);
            }
            st.file = Some((path.to_path_buf(), file));
        }
        Ok(log)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Appends a record whose seq must be exactly one past the session's last.
    pub fn record_trace(&self, rec: TraceRecord) -> Result<(), TraceError> {
        let mut st = self.lock();
        self.append_locked(&mut st, rec)
    }

    /// Assigns the next seq for the session and appends.
    pub fn append(&self, session: &SessionId, stage: TraceStage, at: DateTime<Utc>, payload: String) -> Result<u64, TraceError> {
        let mut st = self.lock();
        let seq = st.last_seq.get(session).copied().unwrap_or(0) + 1;
        let rec = TraceRecord { session_id: session.clone(), seq, stage, at, payload };
        self.append_locked(&mut st, rec)?;
        Ok(seq)
    }

    fn append_locked(&self, st: &mut State, rec: TraceRecord) -> Result<(), TraceError> {
        rec.validate().map_err(|e| TraceError::Invalid(e.to_string()))?;
        check_next(&st.last_seq, &rec)?;
        if let Some((path, file)) = st.file.as_mut() {
            let io = |e: std::io::Error| TraceError::Io { path: path.clone(), reason: e.to_string() };
            let mut buf = Vec::new();
            write_csv(&mut buf, std::slice::from_ref(&rec), false)?;
            file.write_all(&buf).map_err(io)?;
            if self.durable {
                file.sync_data().map_err(io)?;
            }
        }
        st.last_seq.insert(rec.session_id.clone(), rec.seq);
        st.records.push(rec);
        Ok(())
    }

    pub fn last_seq(&self, session: &SessionId) -> u64 {
        self.lock().last_seq.get(session).copied().unwrap_or(0)
    }

    pub fn records(&self) -> Vec<TraceRecord> {
        self.lock().records.clone()
    }

    pub fn session_records(&self, session: &SessionId) -> Vec<TraceRecord> {
        self.lock().records.iter().filter(|r| &r.session_id == session).cloned().collect()
    }

    pub fn write_csv_to<W: Write>(&self, out: W) -> Result<(), TraceError> {
        write_csv(out, &self.lock().records, true)
    }
}

fn check_next(last: &HashMap<SessionId, u64>, rec: &TraceRecord) -> Result<(), TraceError> {
    let expected = last.get(&rec.session_id).copied().unwrap_or(0) + 1;
    if rec.seq != expected {
        return Err(TraceError::SeqOutOfOrder { session: rec.session_id.clone(), expected, got: rec.seq });
    }
    Ok(())
}

/// Looks up a dotted path (`verdict.passed`) in a JSON payload.
pub fn payload_field(payload: &str, path: &str) -> Option<Value> {
    let mut v: Value = serde_json::from_str(payload).ok()?;
    for key in path.split('.') {
        v = v.get_mut(key)?.take();
    }
    Some(v)
}

pub fn verdict_passed(rec: &TraceRecord) -> Option<bool> {
    (rec.stage == TraceStage::ComplianceVerdict)
        .then(|| payload_field(&rec.payload, "verdict.passed").and_then(|v| v.as_bool()))
        .flatten()
}

/// Sessions whose seq column is not exactly 1..n, in log order.
pub fn check_gapless(records: &[TraceRecord]) -> Result<(), String> {
    let mut last: HashMap<&SessionId, u64> = HashMap::new();
    for r in records {
        let e = last.entry(&r.session_id).or_insert(0);
        if r.seq != *e + 1 {
            return Err(format!("session {}: seq {} follows {}", r.session_id, r.seq, e));
        }
        *e = r.seq;
    }
    Ok(())
}

/// Every Delivery must directly follow, within its session, a passed
/// ComplianceVerdict.
pub fn check_interceptor(records: &[TraceRecord]) -> Result<(), String> {
    let mut prev: HashMap<&SessionId, &TraceRecord> = HashMap::new();
    for r in records {
        if r.stage == TraceStage::Delivery {
            let ok = prev.get(&r.session_id).is_some_and(|p| verdict_passed(p) == Some(true));
            if !ok {
                return Err(format!("session {} seq {}: delivery without a passed verdict before it", r.session_id, r.seq));
            }
        }
        prev.insert(&r.session_id, r);
    }
    Ok(())
}

/// Within each run (RawSignals up to Delivery or the next RawSignals), stage
/// order never goes backwards, except that a failed verdict may return to
/// NudgeDraft or StrategySelection.
pub fn check_run_order(records: &[TraceRecord]) -> Result<(), String> {
    let mut cur: HashMap<&SessionId, (TraceStage, Option<bool>)> = HashMap::new();
    for r in records.iter().filter(|r| r.stage.is_run_stage()) {
        if r.stage == TraceStage::RawSignals {
            cur.insert(&r.session_id, (r.stage, None));
            continue;
        }
        let Some((last, last_passed)) = cur.get(&r.session_id).copied() else {
            return Err(format!("session {} seq {}: {} outside a run", r.session_id, r.seq, r.stage));
        };
        let retry = last == TraceStage::ComplianceVerdict
            && last_passed == Some(false)
            && matches!(r.stage, TraceStage::NudgeDraft | TraceStage::StrategySelection);
        if r.stage.order() < last.order() && !retry {
            return Err(format!("session {} seq {}: {} after {}", r.session_id, r.seq, r.stage, last));
        }
        cur.insert(&r.session_id, (r.stage, verdict_passed(r)));
    }
    Ok(())
}
