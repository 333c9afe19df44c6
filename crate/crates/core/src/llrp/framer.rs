use super::codec::{decode_message, parse_header};
use super::types::{LlrpMessage, HEADER_LEN};
use super::LlrpError;

/// Refuse frames above this size instead of buffering without bound.
pub const MAX_FRAME_LEN: usize = 1 << 20;

/// Reassembles LLRP messages from an arbitrarily chunked byte stream.
///
/// One framer per connection. After any framing error the framer is
/// poisoned; the connection must be dropped and re-established.
#[derive(Debug, Default)]
pub struct Framer {
    buf: Vec<u8>,
    poisoned: bool,
}

impl Framer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_poisoned(&self) -> bool {
        self.poisoned
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    pub fn feed(&mut self, chunk: &[u8]) -> Result<Vec<LlrpMessage>, LlrpError> {
        if self.poisoned {
            return Err(LlrpError::StreamPoisoned);
        }
        self.buf.extend_from_slice(chunk);
        let mut out = Vec::new();
        let mut start = 0;
        let result = loop {
            let rest = &self.buf[start..];
            if rest.len() < HEADER_LEN {
                break Ok(());
            }
            let header = match parse_header(rest) {
                Ok(h) => h,
                Err(e) => break Err(e),
            };
            if header.length > MAX_FRAME_LEN {
                break Err(LlrpError::Oversized(header.length));
            }
            if rest.len() < header.length {
                break Ok(());
            }
            match decode_message(rest) {
                Ok((msg, used)) => {
                    out.push(msg);
                    start += used;
                }
                Err(e) => break Err(e),
            }
        };
        self.buf.drain(..start);
        match result {
            Ok(()) => Ok(out),
            Err(e) => {
                self.poisoned = true;
                self.buf.clear();
                Err(e)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const KEEPALIVE_7: [u8; 10] = [0x04, 0x3E, 0, 0, 0, 0x0A, 0, 0, 0, 0x07];

    #[test]
    fn one_octet_chunks_emit_at_message_boundaries() {
        let mut stream = KEEPALIVE_7.to_vec();
        stream.extend_from_slice(&KEEPALIVE_7);
        let mut f = Framer::new();
        let mut emitted_at = Vec::new();
        for (i, b) in stream.iter().enumerate() {
            let msgs = f.feed(std::slice::from_ref(b)).unwrap();
            if !msgs.is_empty() {
                assert_eq!(msgs.len(), 1);
                emitted_at.push(i + 1);
            }
        }
        assert_eq!(emitted_at, vec![10, 20]);
    }

    #[test]
    fn empty_chunk_is_a_no_op() {
        let mut f = Framer::new();
        f.feed(&KEEPALIVE_7[..4]).unwrap();
        assert!(f.feed(&[]).unwrap().is_empty());
        assert_eq!(f.buffered(), 4);
    }

    #[test]
    fn bad_version_poisons() {
        let mut f = Framer::new();
        let mut bad = KEEPALIVE_7;
        bad[0] = 0x08; // version 2
        assert_eq!(f.feed(&bad), Err(LlrpError::BadVersion(2)));
        assert!(f.is_poisoned());
        assert_eq!(f.feed(&KEEPALIVE_7), Err(LlrpError::StreamPoisoned));
    }

    #[test]
    fn oversized_frame_rejected_before_buffering() {
        let mut f = Framer::new();
        let huge = [0x04, 0x3E, 0x7F, 0, 0, 0, 0, 0, 0, 1];
        assert!(matches!(f.feed(&huge), Err(LlrpError::Oversized(_))));
    }
}
