use super::types::{LlrpMessage, MessageType, Parameter, ReadEvent};
use super::LlrpError;

pub const DEFAULT_RSSI: i8 = -128;

/// Builds an RO_ACCESS_REPORT with one TagReportData per read. Children are
/// ordered EPC, AntennaID, PeakRSSI, FirstSeenTimestampUTC, TagSeenCount.
pub fn build_tag_report(reads: &[ReadEvent], msg_id: u32) -> LlrpMessage {
    let params = reads
        .iter()
        .map(|r| {
            let epc = match <[u8; 12]>::try_from(r.epc.as_slice()) {
                Ok(epc96) => Parameter::Epc96(epc96),
                Err(_) => Parameter::EpcData { bit_len: (r.epc.len() * 8) as u16, epc: r.epc.clone() },
            };
            Parameter::TagReportData(vec![
                epc,
                Parameter::AntennaId(r.antenna_id),
                Parameter::PeakRssi(r.peak_rssi),
                Parameter::FirstSeenTimestampUtc(r.first_seen_utc_us),
                Parameter::TagSeenCount(r.seen_count),
            ])
        })
        .collect();
    LlrpMessage::new(MessageType::RO_ACCESS_REPORT, msg_id, params)
}

/// Extracts reads from an RO_ACCESS_REPORT. Optional fields that are absent
/// default to RSSI -128, timestamp 0, count 1, antenna 1. Unknown children
/// are ignored.
pub fn parse_tag_report(msg: &LlrpMessage) -> Result<Vec<ReadEvent>, LlrpError> {
    if msg.msg_type != MessageType::RO_ACCESS_REPORT {
        return Err(LlrpError::NotATagReport(msg.msg_type.0));
    }
    let mut out = Vec::new();
    for p in &msg.parameters {
        let Parameter::TagReportData(children) = p else { continue };
        let mut read = ReadEvent {
            epc: Vec::new(),
            data_point_id: None,
            antenna_id: 1,
            first_seen_utc_us: 0,
            peak_rssi: DEFAULT_RSSI,
            seen_count: 1,
        };
        let mut have_epc = false;
        for c in children {
            match c {
                Parameter::Epc96(epc) => {
                    read.epc = epc.to_vec();
                    have_epc = true;
                }
                Parameter::EpcData { epc, .. } => {
                    read.epc = epc.clone();
                    have_epc = true;
                }
                Parameter::AntennaId(a) => read.antenna_id = *a,
                Parameter::PeakRssi(r) => read.peak_rssi = *r,
                Parameter::FirstSeenTimestampUtc(t) => read.first_seen_utc_us = *t,
                Parameter::TagSeenCount(n) => read.seen_count = *n,
                _ => {}
            }
        }
        if !have_epc {
            return Err(LlrpError::MissingEpc);
        }
        out.push(read);
    }
    Ok(out)
}
