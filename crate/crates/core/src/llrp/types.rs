use serde::{Deserialize, Serialize};

/// LLRP protocol version carried in every header (v1.0.1).
pub const LLRP_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 10;
/// Controllers connect to readers on this port unless configured otherwise.
pub const DEFAULT_READER_PORT: u16 = 5084;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MessageType(pub u16);

impl MessageType {
    pub const GET_READER_CAPABILITIES: Self = Self(1);
    pub const SET_READER_CONFIG: Self = Self(3);
    pub const CLOSE_CONNECTION_RESPONSE: Self = Self(4);
    pub const GET_READER_CAPABILITIES_RESPONSE: Self = Self(11);
    pub const SET_READER_CONFIG_RESPONSE: Self = Self(13);
    pub const CLOSE_CONNECTION: Self = Self(14);
    pub const ADD_ROSPEC: Self = Self(20);
    pub const DELETE_ROSPEC: Self = Self(21);
    pub const START_ROSPEC: Self = Self(22);
    pub const ENABLE_ROSPEC: Self = Self(24);
    pub const ADD_ROSPEC_RESPONSE: Self = Self(30);
    pub const DELETE_ROSPEC_RESPONSE: Self = Self(31);
    pub const START_ROSPEC_RESPONSE: Self = Self(32);
    pub const ENABLE_ROSPEC_RESPONSE: Self = Self(34);
    pub const RO_ACCESS_REPORT: Self = Self(61);
    pub const KEEPALIVE: Self = Self(62);
    pub const READER_EVENT_NOTIFICATION: Self = Self(63);
    pub const KEEPALIVE_ACK: Self = Self(72);
    pub const ERROR_MESSAGE: Self = Self(100);

    pub const SUBSET: [Self; 19] = [
        Self::GET_READER_CAPABILITIES,
        Self::SET_READER_CONFIG,
        Self::CLOSE_CONNECTION_RESPONSE,
        Self::GET_READER_CAPABILITIES_RESPONSE,
        Self::SET_READER_CONFIG_RESPONSE,
        Self::CLOSE_CONNECTION,
        Self::ADD_ROSPEC,
        Self::DELETE_ROSPEC,
        Self::START_ROSPEC,
        Self::ENABLE_ROSPEC,
        Self::ADD_ROSPEC_RESPONSE,
        Self::DELETE_ROSPEC_RESPONSE,
        Self::START_ROSPEC_RESPONSE,
        Self::ENABLE_ROSPEC_RESPONSE,
        Self::RO_ACCESS_REPORT,
        Self::KEEPALIVE,
        Self::READER_EVENT_NOTIFICATION,
        Self::KEEPALIVE_ACK,
        Self::ERROR_MESSAGE,
    ];

    /// False for types outside the supported subset; such messages still
    /// decode and re-encode, but nothing acts on them.
    pub fn is_known(self) -> bool {
        Self::SUBSET.contains(&self)
    }

    /// The response type paired with a request, if any.
    pub fn response(self) -> Option<Self> {
        match self {
            Self::GET_READER_CAPABILITIES => Some(Self::GET_READER_CAPABILITIES_RESPONSE),
            Self::SET_READER_CONFIG => Some(Self::SET_READER_CONFIG_RESPONSE),
            Self::CLOSE_CONNECTION => Some(Self::CLOSE_CONNECTION_RESPONSE),
            Self::ADD_ROSPEC => Some(Self::ADD_ROSPEC_RESPONSE),
            Self::DELETE_ROSPEC => Some(Self::DELETE_ROSPEC_RESPONSE),
            Self::START_ROSPEC => Some(Self::START_ROSPEC_RESPONSE),
            Self::ENABLE_ROSPEC => Some(Self::ENABLE_ROSPEC_RESPONSE),
            Self::KEEPALIVE => Some(Self::KEEPALIVE_ACK),
            _ => None,
        }
    }
}

/// TLV parameter type numbers.
pub mod tlv {
    pub const UTC_TIMESTAMP: u16 = 128;
    pub const RO_SPEC: u16 = 177;
    pub const TAG_REPORT_DATA: u16 = 240;
    pub const EPC_DATA: u16 = 241;
    pub const READER_EVENT_NOTIFICATION_DATA: u16 = 246;
    pub const CONNECTION_ATTEMPT_EVENT: u16 = 256;
    pub const LLRP_STATUS: u16 = 287;

    pub const KNOWN: [u16; 7] = [
        UTC_TIMESTAMP,
        RO_SPEC,
        TAG_REPORT_DATA,
        EPC_DATA,
        READER_EVENT_NOTIFICATION_DATA,
        CONNECTION_ATTEMPT_EVENT,
        LLRP_STATUS,
    ];
}

/// TV parameter type numbers (7-bit).
pub mod tv {
    pub const ANTENNA_ID: u8 = 1;
    pub const FIRST_SEEN_TIMESTAMP_UTC: u8 = 2;
    pub const PEAK_RSSI: u8 = 6;
    pub const TAG_SEEN_COUNT: u8 = 8;
    pub const RO_SPEC_ID: u8 = 9;
    pub const EPC_96: u8 = 13;

    /// Body length (excluding the type octet) for each known TV type.
    pub fn body_len(ty: u8) -> Option<usize> {
        match ty {
            ANTENNA_ID => Some(2),
            FIRST_SEEN_TIMESTAMP_UTC => Some(8),
            PEAK_RSSI => Some(1),
            TAG_SEEN_COUNT => Some(2),
            RO_SPEC_ID => Some(4),
            EPC_96 => Some(12),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Encoding {
    Tlv,
    Tv,
}

/// One LLRP parameter. Known types decode into typed variants; unknown TLV
/// types are kept as opaque bodies so they re-encode octet-identically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    AntennaId(u16),
    FirstSeenTimestampUtc(u64),
    PeakRssi(i8),
    TagSeenCount(u16),
    RoSpecId(u32),
    Epc96([u8; 12]),

    UtcTimestamp(u64),
    RoSpec { rospec_id: u32, priority: u8, current_state: u8, children: Vec<Parameter> },
    TagReportData(Vec<Parameter>),
    EpcData { bit_len: u16, epc: Vec<u8> },
    ReaderEventNotificationData(Vec<Parameter>),
    ConnectionAttemptEvent { status: u16 },
    LlrpStatus { code: u16, description: String },
    Opaque { param_type: u16, body: Vec<u8> },
}

impl Parameter {
    pub fn encoding(&self) -> Encoding {
        match self {
            Parameter::AntennaId(_)
            | Parameter::FirstSeenTimestampUtc(_)
            | Parameter::PeakRssi(_)
            | Parameter::TagSeenCount(_)
            | Parameter::RoSpecId(_)
            | Parameter::Epc96(_) => Encoding::Tv,
            _ => Encoding::Tlv,
        }
    }

    /// 7-bit type for TV parameters, 10-bit type for TLV parameters.
    pub fn param_type(&self) -> u16 {
        match self {
            Parameter::AntennaId(_) => tv::ANTENNA_ID.into(),
            Parameter::FirstSeenTimestampUtc(_) => tv::FIRST_SEEN_TIMESTAMP_UTC.into(),
            Parameter::PeakRssi(_) => tv::PEAK_RSSI.into(),
            Parameter::TagSeenCount(_) => tv::TAG_SEEN_COUNT.into(),
            Parameter::RoSpecId(_) => tv::RO_SPEC_ID.into(),
            Parameter::Epc96(_) => tv::EPC_96.into(),
            Parameter::UtcTimestamp(_) => tlv::UTC_TIMESTAMP,
            Parameter::RoSpec { .. } => tlv::RO_SPEC,
            Parameter::TagReportData(_) => tlv::TAG_REPORT_DATA,
            Parameter::EpcData { .. } => tlv::EPC_DATA,
            Parameter::ReaderEventNotificationData(_) => tlv::READER_EVENT_NOTIFICATION_DATA,
            Parameter::ConnectionAttemptEvent { .. } => tlv::CONNECTION_ATTEMPT_EVENT,
            Parameter::LlrpStatus { .. } => tlv::LLRP_STATUS,
            Parameter::Opaque { param_type, .. } => *param_type,
        }
    }

    pub fn children(&self) -> &[Parameter] {
        match self {
            Parameter::RoSpec { children, .. }
            | Parameter::TagReportData(children)
            | Parameter::ReaderEventNotificationData(children) => children,
            _ => &[],
        }
    }

    pub fn success_status() -> Self {
        Parameter::LlrpStatus { code: 0, description: String::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlrpMessage {
    pub msg_type: MessageType,
    pub msg_id: u32,
    pub parameters: Vec<Parameter>,
}

impl LlrpMessage {
    pub fn new(msg_type: MessageType, msg_id: u32, parameters: Vec<Parameter>) -> Self {
        LlrpMessage { msg_type, msg_id, parameters }
    }

    pub fn version(&self) -> u8 {
        LLRP_VERSION
    }

    /// First LLRPStatus parameter, as `(code, description)`.
    pub fn status(&self) -> Option<(u16, &str)> {
        self.parameters.iter().find_map(|p| match p {
            Parameter::LlrpStatus { code, description } => Some((*code, description.as_str())),
            _ => None,
        })
    }
}

/// One tag observation as reported by a reader.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadEvent {
    #[serde(with = "hex_bytes")]
    pub epc: Vec<u8>,
    /// Filled in by whoever owns the reader connection; never on the wire.
    pub data_point_id: Option<String>,
    pub antenna_id: u16,
    pub first_seen_utc_us: u64,
    pub peak_rssi: i8,
    pub seen_count: u16,
}

pub(crate) mod hex_bytes {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        let hex: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
        s.serialize_str(&hex)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let hex = String::deserialize(d)?;
        decode(&hex).map_err(D::Error::custom)
    }

    pub fn decode(hex: &str) -> Result<Vec<u8>, String> {
        if hex.len() % 2 != 0 {
            return Err(format!("odd-length hex string ({} chars)", hex.len()));
        }
        (0..hex.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&hex[i..i + 2], 16).map_err(|e| format!("bad hex at {i}: {e}")))
            .collect()
    }
}
