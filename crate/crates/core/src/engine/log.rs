use std::fs::{File, OpenOptions};
use std::io::{BufWriter, ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use super::dispatch::DispatchList;
use super::state::{DelayAlert, FinishedGoodsRecord, WipTransition};
use super::EngineError;

/// One entry of the engine's append-only log. Engine state is a fold of
/// these records; nothing else mutates it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Dispatch(DispatchList),
    Transition(WipTransition),
    /// A read that changed no step status but refreshed presence.
    Seen { ticket_id: u64, data_point_id: String, at_us: u64 },
    Alert(DelayAlert),
    FinishedGood(FinishedGoodsRecord),
}

/// Writes records framed as a big-endian u32 length, the single-line JSON
/// body, and a newline, so the file is both seekable and greppable.
#[derive(Debug)]
pub struct LogWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl LogWriter {
    pub fn open_append(path: impl AsRef<Path>) -> Result<Self, EngineError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| EngineError::Log(format!("{}: {e}", path.display())))?;
        Ok(LogWriter { path, out: BufWriter::new(file) })
    }

    pub fn append(&mut self, record: &LogRecord) -> Result<(), EngineError> {
        let body = serde_json::to_vec(record).map_err(|e| EngineError::Log(e.to_string()))?;
        let len = u32::try_from(body.len()).map_err(|_| EngineError::Log("record too large".into()))?;
        let io = |e: std::io::Error| EngineError::Log(format!("{}: {e}", self.path.display()));
        self.out.write_all(&len.to_be_bytes()).map_err(io)?;
        self.out.write_all(&body).map_err(io)?;
        self.out.write_all(b"\n").map_err(io)
    }

    pub fn flush(&mut self) -> Result<(), EngineError> {
        self.out.flush().map_err(|e| EngineError::Log(format!("{}: {e}", self.path.display())))
    }
}

/// Reads a log file. A torn final record (crash during append) is dropped
/// with a warning; damage anywhere else is an error. A missing file is an
/// empty log.
pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<LogRecord>, EngineError> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    match File::open(path) {
        Ok(mut f) => f.read_to_end(&mut bytes).map_err(|e| EngineError::Log(format!("{}: {e}", path.display())))?,
        Err(e) if e.kind() == ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(EngineError::Log(format!("{}: {e}", path.display()))),
    };
    decode_log(&bytes)
}

pub fn decode_log(bytes: &[u8]) -> Result<Vec<LogRecord>, EngineError> {
    let mut records = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let rest = &bytes[pos..];
        if rest.len() < 4 {
            warn!("event log: dropping torn record header at offset {pos}");
            break;
        }
        let len = u32::from_be_bytes(rest[..4].try_into().expect("4 octets")) as usize;
        if rest.len() < 4 + len + 1 {
            warn!("event log: dropping torn record at offset {pos}");
            break;
        }
        let body = &rest[4..4 + len];
        if rest[4 + len] != b'\n' {
            return Err(EngineError::Log(format!("record at offset {pos} is not newline terminated")));
        }
        let record = serde_json::from_slice(body)
            .map_err(|e| EngineError::Log(format!("record at offset {pos}: {e}")))?;
        records.push(record);
        pos += 4 + len + 1;
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::state::TransitionKind;

    fn rec(at: u64) -> LogRecord {
        LogRecord::Transition(WipTransition {
            ticket_id: 1,
            kind: TransitionKind::Arrived,
            seq: Some(1),
            data_point_id: Some("DP2".into()),
            at_us: at,
            detail: String::new(),
        })
    }

    #[test]
    fn round_trip_and_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.log");
        let mut w = LogWriter::open_append(&path).unwrap();
        for at in 0..3 {
            w.append(&rec(at)).unwrap();
        }
        w.flush().unwrap();
        drop(w);
        assert_eq!(read_log(&path).unwrap(), vec![rec(0), rec(1), rec(2)]);

        let mut bytes = std::fs::read(&path).unwrap();
        let full = bytes.len();
        bytes.truncate(full - 5);
        assert_eq!(decode_log(&bytes).unwrap().len(), 2);

        let line = std::fs::read(&path).unwrap();
        let text = String::from_utf8_lossy(&line[4..]);
        assert!(text.starts_with("{\"record\":\"transition\""), "{text}");
    }

    #[test]
    fn corruption_in_the_middle_is_an_error() {
        let mut bytes = Vec::new();
        for at in 0..2 {
            let body = serde_json::to_vec(&rec(at)).unwrap();
            bytes.extend_from_slice(&(body.len() as u32).to_be_bytes());
            bytes.extend_from_slice(&body);
            bytes.push(b'\n');
        }
        let n = bytes.iter().position(|&b| b == b'\n').unwrap();
        bytes[n] = b' ';
        assert!(decode_log(&bytes).is_err());
    }

    #[test]
    fn missing_file_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        assert!(read_log(dir.path().join("nope.log")).unwrap().is_empty());
    }
}
