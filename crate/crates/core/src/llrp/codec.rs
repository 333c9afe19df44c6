use super::types::{tlv, tv, LlrpMessage, MessageType, Parameter, HEADER_LEN, LLRP_VERSION};
use super::LlrpError;

/// Largest TLV type number (10 bits).
const MAX_TLV_TYPE: u16 = 0x03FF;

pub fn encode_message(msg: &LlrpMessage) -> Result<Vec<u8>, LlrpError> {
    if msg.msg_type.0 > MAX_TLV_TYPE {
        return Err(LlrpError::UnencodableMessageType(msg.msg_type.0));
    }
    let mut out = Vec::with_capacity(64);
    out.extend_from_slice(&(u16::from(LLRP_VERSION) << 10 | msg.msg_type.0).to_be_bytes());
    out.extend_from_slice(&[0; 4]);
    out.extend_from_slice(&msg.msg_id.to_be_bytes());
    for p in &msg.parameters {
        encode_parameter(p, &mut out)?;
    }
    let len = u32::try_from(out.len()).map_err(|_| LlrpError::Oversized(out.len()))?;
    out[2..6].copy_from_slice(&len.to_be_bytes());
    Ok(out)
}

fn unencodable(param_type: u16, reason: impl Into<String>) -> LlrpError {
    LlrpError::UnencodableParameter { param_type, reason: reason.into() }
}

fn encode_parameter(p: &Parameter, out: &mut Vec<u8>) -> Result<(), LlrpError> {
    let tv_head = |ty: u8| 0x80 | ty;
    match p {
        Parameter::AntennaId(v) => {
            out.push(tv_head(tv::ANTENNA_ID));
            out.extend_from_slice(&v.to_be_bytes());
        }
        Parameter::FirstSeenTimestampUtc(v) => {
            out.push(tv_head(tv::FIRST_SEEN_TIMESTAMP_UTC));
            out.extend_from_slice(&v.to_be_bytes());
        }
        Parameter::PeakRssi(v) => {
            out.push(tv_head(tv::PEAK_RSSI));
            out.extend_from_slice(&v.to_be_bytes());
        }
        Parameter::TagSeenCount(v) => {
            out.push(tv_head(tv::TAG_SEEN_COUNT));
            out.extend_from_slice(&v.to_be_bytes());
        }
        Parameter::RoSpecId(v) => {
            out.push(tv_head(tv::RO_SPEC_ID));
            out.extend_from_slice(&v.to_be_bytes());
        }
        Parameter::Epc96(epc) => {
            out.push(tv_head(tv::EPC_96));
            out.extend_from_slice(epc);
        }
        tlv_param => encode_tlv(tlv_param, out)?,
    }
    Ok(())
}

fn encode_tlv(p: &Parameter, out: &mut Vec<u8>) -> Result<(), LlrpError> {
    let ty = p.param_type();
    if ty > MAX_TLV_TYPE {
        return Err(unencodable(ty, "TLV type exceeds 10 bits"));
    }
    let start = out.len();
    out.extend_from_slice(&ty.to_be_bytes());
    out.extend_from_slice(&[0, 0]);
    match p {
        Parameter::UtcTimestamp(us) => out.extend_from_slice(&us.to_be_bytes()),
        Parameter::RoSpec { rospec_id, priority, current_state, children } => {
            out.extend_from_slice(&rospec_id.to_be_bytes());
            out.push(*priority);
            out.push(*current_state);
            for c in children {
                encode_parameter(c, out)?;
            }
        }
        Parameter::TagReportData(children) | Parameter::ReaderEventNotificationData(children) => {
            for c in children {
                encode_parameter(c, out)?;
            }
        }
        Parameter::EpcData { bit_len, epc } => {
            if usize::from(*bit_len).div_ceil(8) != epc.len() {
                return Err(unencodable(ty, format!("bit length {bit_len} does not match {} EPC octets", epc.len())));
            }
            out.extend_from_slice(&bit_len.to_be_bytes());
            out.extend_from_slice(epc);
        }
        Parameter::ConnectionAttemptEvent { status } => out.extend_from_slice(&status.to_be_bytes()),
        Parameter::LlrpStatus { code, description } => {
            let len = u16::try_from(description.len()).map_err(|_| unencodable(ty, "status description too long"))?;
            out.extend_from_slice(&code.to_be_bytes());
            out.extend_from_slice(&len.to_be_bytes());
            out.extend_from_slice(description.as_bytes());
        }
        Parameter::Opaque { param_type, body } => {
            if tlv::KNOWN.contains(param_type) {
                return Err(unencodable(*param_type, "opaque body for a known TLV type"));
            }
            out.extend_from_slice(body);
        }
        _ => unreachable!("TV parameters are encoded by encode_parameter"),
    }
    let len = out.len() - start;
    let len = u16::try_from(len).map_err(|_| unencodable(ty, format!("TLV length {len} exceeds u16")))?;
    out[start + 2..start + 4].copy_from_slice(&len.to_be_bytes());
    Ok(())
}

/// Parsed fixed header fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Header {
    pub msg_type: MessageType,
    pub length: usize,
    pub msg_id: u32,
}

pub(crate) fn parse_header(buf: &[u8]) -> Result<Header, LlrpError> {
    if buf.len() < HEADER_LEN {
        return Err(LlrpError::Truncated { needed: HEADER_LEN, available: buf.len() });
    }
    let word = u16::from_be_bytes([buf[0], buf[1]]);
    let version = ((word >> 10) & 0x7) as u8;
    if version != LLRP_VERSION {
        return Err(LlrpError::BadVersion(version));
    }
    let length = u32::from_be_bytes(buf[2..6].try_into().expect("4 octets")) as usize;
    if length < HEADER_LEN {
        return Err(LlrpError::LengthMismatch(format!("message length {length} shorter than header")));
    }
    Ok(Header {
        msg_type: MessageType(word & MAX_TLV_TYPE),
        length,
        msg_id: u32::from_be_bytes(buf[6..10].try_into().expect("4 octets")),
    })
}

/// Decodes one message from the front of `buf`, returning it together with
/// the number of octets consumed.
pub fn decode_message(buf: &[u8]) -> Result<(LlrpMessage, usize), LlrpError> {
    let header = parse_header(buf)?;
    if buf.len() < header.length {
        return Err(LlrpError::Truncated { needed: header.length, available: buf.len() });
    }
    let parameters = decode_parameters(&buf[HEADER_LEN..header.length])?;
    Ok((LlrpMessage { msg_type: header.msg_type, msg_id: header.msg_id, parameters }, header.length))
}

fn decode_parameters(mut buf: &[u8]) -> Result<Vec<Parameter>, LlrpError> {
    let mut out = Vec::new();
    while !buf.is_empty() {
        let (p, used) = decode_parameter(buf)?;
        out.push(p);
        buf = &buf[used..];
    }
    Ok(out)
}

fn be<const N: usize>(b: &[u8]) -> [u8; N] {
    b[..N].try_into().expect("length checked by caller")
}

fn decode_parameter(buf: &[u8]) -> Result<(Parameter, usize), LlrpError> {
    let first = buf[0];
    if first & 0x80 != 0 {
        let ty = first & 0x7F;
        let n = tv::body_len(ty).ok_or(LlrpError::UnknownTvType(ty))?;
        if buf.len() < 1 + n {
            return Err(LlrpError::LengthMismatch(format!("TV type {ty} needs {n} octets, {} left", buf.len() - 1)));
        }
        let b = &buf[1..1 + n];
        let p = match ty {
            tv::ANTENNA_ID => Parameter::AntennaId(u16::from_be_bytes(be(b))),
            tv::FIRST_SEEN_TIMESTAMP_UTC => Parameter::FirstSeenTimestampUtc(u64::from_be_bytes(be(b))),
            tv::PEAK_RSSI => Parameter::PeakRssi(b[0] as i8),
            tv::TAG_SEEN_COUNT => Parameter::TagSeenCount(u16::from_be_bytes(be(b))),
            tv::RO_SPEC_ID => Parameter::RoSpecId(u32::from_be_bytes(be(b))),
            tv::EPC_96 => Parameter::Epc96(be(b)),
            _ => unreachable!("body_len covers the TV table"),
        };
        return Ok((p, 1 + n));
    }

    if buf.len() < 4 {
        return Err(LlrpError::LengthMismatch(format!("{} octets left, TLV header needs 4", buf.len())));
    }
    let ty = u16::from_be_bytes([buf[0], buf[1]]) & MAX_TLV_TYPE;
    let len = usize::from(u16::from_be_bytes([buf[2], buf[3]]));
    if len < 4 || len > buf.len() {
        return Err(LlrpError::LengthMismatch(format!(
            "TLV type {ty} declares length {len} with {} octets available",
            buf.len()
        )));
    }
    let body = &buf[4..len];
    let short = |need: usize| -> Result<(), LlrpError> {
        if body.len() < need {
            Err(LlrpError::LengthMismatch(format!("TLV type {ty} body {} octets, needs {need}", body.len())))
        } else {
            Ok(())
        }
    };
    let exact = |need: usize| -> Result<(), LlrpError> {
        if body.len() != need {
            Err(LlrpError::LengthMismatch(format!("TLV type {ty} body {} octets, expected {need}", body.len())))
        } else {
            Ok(())
        }
    };
    let p = match ty {
        tlv::UTC_TIMESTAMP => {
            exact(8)?;
            Parameter::UtcTimestamp(u64::from_be_bytes(be(body)))
        }
        tlv::RO_SPEC => {
            short(6)?;
            Parameter::RoSpec {
                rospec_id: u32::from_be_bytes(be(body)),
                priority: body[4],
                current_state: body[5],
                children: decode_parameters(&body[6..])?,
            }
        }
        tlv::TAG_REPORT_DATA => Parameter::TagReportData(decode_parameters(body)?),
        tlv::READER_EVENT_NOTIFICATION_DATA => Parameter::ReaderEventNotificationData(decode_parameters(body)?),
        tlv::EPC_DATA => {
            short(2)?;
            let bit_len = u16::from_be_bytes(be(body));
            exact(2 + usize::from(bit_len).div_ceil(8))?;
            Parameter::EpcData { bit_len, epc: body[2..].to_vec() }
        }
        tlv::CONNECTION_ATTEMPT_EVENT => {
            exact(2)?;
            Parameter::ConnectionAttemptEvent { status: u16::from_be_bytes(be(body)) }
        }
        tlv::LLRP_STATUS => {
            short(4)?;
            let code = u16::from_be_bytes(be(body));
            let dlen = usize::from(u16::from_be_bytes([body[2], body[3]]));
            exact(4 + dlen)?;
            let description = String::from_utf8(body[4..].to_vec())
                .map_err(|_| LlrpError::LengthMismatch("LLRPStatus description is not UTF-8".into()))?;
            Parameter::LlrpStatus { code, description }
        }
        _ => Parameter::Opaque { param_type: ty, body: body.to_vec() },
    };
    Ok((p, len))
}

/// Walks an encoded message and checks that the header length and every
/// nested TLV length add up. Independent of the decoder's data model.
pub fn validate_lengths(buf: &[u8]) -> Result<(), String> {
    if buf.len() < HEADER_LEN {
        return Err("short header".into());
    }
    let declared = u32::from_be_bytes(buf[2..6].try_into().unwrap()) as usize;
    if declared != buf.len() {
        return Err(format!("header length {declared} != actual {}", buf.len()));
    }
    fn walk(mut b: &[u8]) -> Result<(), String> {
        while !b.is_empty() {
            if b[0] & 0x80 != 0 {
                let n = tv::body_len(b[0] & 0x7F).ok_or("unknown TV")?;
                if b.len() < 1 + n {
                    return Err("TV overrun".into());
                }
                b = &b[1 + n..];
                continue;
            }
            if b.len() < 4 {
                return Err("TLV header overrun".into());
            }
            let ty = u16::from_be_bytes([b[0], b[1]]) & MAX_TLV_TYPE;
            let len = usize::from(u16::from_be_bytes([b[2], b[3]]));
            if len < 4 || len > b.len() {
                return Err(format!("TLV {ty} length {len} overruns {}", b.len()));
            }
            let body = &b[4..len];
            match ty {
                tlv::TAG_REPORT_DATA | tlv::READER_EVENT_NOTIFICATION_DATA => walk(body)?,
                tlv::RO_SPEC if body.len() >= 6 => walk(&body[6..])?,
                _ => {}
            }
            b = &b[len..];
        }
        Ok(())
    }
    walk(&buf[HEADER_LEN..])
}
