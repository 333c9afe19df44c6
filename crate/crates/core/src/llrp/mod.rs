//! Encoder, decoder and stream framer for the Low-Level Reader Protocol
//! subset used between the SFC controller and data-point readers.
//!
//! Covered: reader-management handshake, the ROSpec lifecycle, tag reports,
//! keepalives and connection close. Access (tag write) commands are not.

mod codec;
mod framer;
mod report;
mod types;

use thiserror::Error;

pub use codec::{decode_message, encode_message, validate_lengths};
pub use framer::{Framer, MAX_FRAME_LEN};
pub use report::{build_tag_report, parse_tag_report, DEFAULT_RSSI};
pub use types::{
    tlv, tv, Encoding, LlrpMessage, MessageType, Parameter, ReadEvent, DEFAULT_READER_PORT, HEADER_LEN,
    LLRP_VERSION,
};


#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlrpError {
    #[error("truncated: need {needed} octets, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("unsupported LLRP version {0}")]
    BadVersion(u8),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("unknown TV parameter type {0}")]
    UnknownTvType(u8),
    #[error("message of {0} octets exceeds the frame limit")]
    Oversized(usize),
    #[error("cannot encode parameter type {param_type}: {reason}")]
    UnencodableParameter { param_type: u16, reason: String },
    #[error("message type {0} does not fit in 10 bits")]
    UnencodableMessageType(u16),
    #[error("stream poisoned by an earlier framing error")]
    StreamPoisoned,
    #[error("message type {0} is not RO_ACCESS_REPORT")]
    NotATagReport(u16),
    #[error("TagReportData without EPC-96 or EPCData")]
    MissingEpc,
}
