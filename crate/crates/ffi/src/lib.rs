//! C interface to the tag codec, the LLRP stream framer and the WIP engine.
//!
//! Every entry point returns an [`SfcStatus`]. On failure the message is kept
//! per thread and read with [`sfc_last_error`]. Handles are opaque and owned
//! by the caller until passed to their `_free` function. Strings handed out
//! by the library are released with [`sfc_string_free`].

use std::cell::RefCell;
use std::collections::{BTreeMap, VecDeque};
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use serde::Deserialize;
use sfc_core::engine::{Engine, EngineConfig, EngineError};
use sfc_core::erp::parse_dispatch_xml;
use sfc_core::llrp::{Framer, LlrpError, LlrpMessage, ReadEvent};
use sfc_core::tag::{
    crc16, decode_tag, encode_build_ticket, encode_product_tag, BuildTicketData, DecodedTag, OrderKind, OrderRef,
    ProductTagData, TagError, TAG_MEMORY_OCTETS,
};

/// Size of a tag memory image in octets.
pub const SFC_TAG_OCTETS: usize = 64;
const _: () = assert!(SFC_TAG_OCTETS == TAG_MEMORY_OCTETS);
pub const SFC_TAG_BUILD_TICKET: u8 = 0;
pub const SFC_TAG_PRODUCT: u8 = 1;
pub const SFC_ORDER_CUSTOMER: u8 = 0;
pub const SFC_ORDER_MAKE_TO_STOCK: u8 = 1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Bad length, magic, version or kind.
    TagInvalid = 3,
    TagCrcMismatch = 4,
    LlrpMalformed = 5,
    /// The framer saw an error earlier and accepts no more input.
    StreamPoisoned = 6,
    /// Nothing queued.
    Empty = 7,
    DispatchInvalid = 8,
    InFlightConflict = 9,
    UnknownOrder = 10,
    UnknownDataPoint = 11,
    ReadRejected = 12,
    Engine = 13,
    Panic = 99,
}

/// Decoded tag contents. Fields that do not apply to `kind` are zero.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SfcTag {
    /// `SFC_TAG_BUILD_TICKET` or `SFC_TAG_PRODUCT`
    pub kind: u8,
    /// `SFC_ORDER_CUSTOMER` or `SFC_ORDER_MAKE_TO_STOCK`
    pub order_kind: u8,
    pub order_id: u64,
    pub product_id: u64,
    pub route_id: u32,
    pub ticket_id: u64,
    pub serial: u64,
}

/// Opaque LLRP stream reassembler.
pub struct SfcFramer {
    framer: Framer,
    ready: VecDeque<LlrpMessage>,
}

/// Opaque WIP engine.
pub struct SfcEngine {
    engine: Engine,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SfcStatus, String);

impl Failure {
    fn null(what: &str) -> Self {
        Failure(SfcStatus::NullPointer, format!("{what} is null"))
    }
}

impl From<TagError> for Failure {
    fn from(e: TagError) -> Self {
        let status = match e {
            TagError::CrcMismatch { .. } => SfcStatus::TagCrcMismatch,
            _ => SfcStatus::TagInvalid,
        };
        Failure(status, e.to_string())
    }
}

impl From<LlrpError> for Failure {
    fn from(e: LlrpError) -> Self {
        let status = match e {
            LlrpError::StreamPoisoned => SfcStatus::StreamPoisoned,
            _ => SfcStatus::LlrpMalformed,
        };
        Failure(status, e.to_string())
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let status = match &e {
            EngineError::UnknownOrder(_) => SfcStatus::UnknownOrder,
            EngineError::UnknownDataPoint(_) => SfcStatus::UnknownDataPoint,
            EngineError::InFlightConflict(_) => SfcStatus::InFlightConflict,
            EngineError::DuplicateTicket(_) | EngineError::UnknownRouteRef { .. } | EngineError::InvalidDispatch(_) => {
                SfcStatus::DispatchInvalid
            }
            EngineError::UndecodableTag(_) | EngineError::NotProductTag | EngineError::ProductOffExit(_) => {
                SfcStatus::ReadRejected
            }
            _ => SfcStatus::Engine,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(msg: Option<String>) {
    let c = msg.map(|m| CString::new(m.replace('\0', " ")).expect("no interior nul"));
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

/// Runs `f`, records any failure for `sfc_last_error`, and never unwinds.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SfcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(None);
            SfcStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(Some(msg));
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_last_error(Some(format!("internal panic: {msg}")));
            SfcStatus::Panic
        }
    }
}

unsafe fn bytes<'a>(data: *const u8, len: usize, what: &str) -> Result<&'a [u8], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn text<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(Failure::null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Failure(SfcStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::null(what))
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s).map_or(ptr::null_mut(), CString::into_raw)
}

fn order_ref(kind: u8, order_id: u64) -> Result<OrderRef, Failure> {
    match kind {
        SFC_ORDER_CUSTOMER => Ok(OrderRef::customer(order_id)),
        SFC_ORDER_MAKE_TO_STOCK => Ok(OrderRef::make_to_stock(order_id)),
        k => Err(Failure(SfcStatus::InvalidArgument, format!("order kind {k} is neither 0 nor 1"))),
    }
}

fn order_kind_code(k: OrderKind) -> u8 {
    match k {
        OrderKind::CustomerSalesOrder => SFC_ORDER_CUSTOMER,
        OrderKind::InternalMakeToStock => SFC_ORDER_MAKE_TO_STOCK,
    }
}

/// Message of the last failed call on this thread, or NULL after a
/// successful one. Valid until the next call into the library on this
/// thread; do not free.
#[no_mangle]
pub extern "C" fn sfc_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sfc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// CRC-16/CCITT-FALSE of `len` octets.
///
/// # Safety
/// `data` must point to `len` readable octets (or be NULL when `len` is 0).
#[no_mangle]
pub unsafe extern "C" fn sfc_crc16(data: *const u8, len: usize, crc_out: *mut u16) -> SfcStatus {
    guard(|| {
        let d = bytes(data, len, "data")?;
        *out(crc_out, "crc_out")? = crc16(d);
        Ok(())
    })
}

/// Writes a 64-octet build ticket image to `image_out`.
///
/// # Safety
/// `image_out` must point to `SFC_TAG_OCTETS` writable octets.
#[no_mangle]
pub unsafe extern "C" fn sfc_tag_encode_build_ticket(
    order_kind: u8,
    order_id: u64,
    product_id: u64,
    route_id: u32,
    ticket_id: u64,
    image_out: *mut u8,
) -> SfcStatus {
    guard(|| {
        if image_out.is_null() {
            return Err(Failure::null("image_out"));
        }
        let order = order_ref(order_kind, order_id)?;
        let img = encode_build_ticket(&BuildTicketData { order, product_id, route_id, ticket_id });
        ptr::copy_nonoverlapping(img.as_bytes().as_ptr(), image_out, SFC_TAG_OCTETS);
        Ok(())
    })
}

/// Writes a 64-octet product tag image to `image_out`.
///
/// # Safety
/// `image_out` must point to `SFC_TAG_OCTETS` writable octets.
#[no_mangle]
pub unsafe extern "C" fn sfc_tag_encode_product(
    order_kind: u8,
    order_id: u64,
    product_id: u64,
    serial: u64,
    image_out: *mut u8,
) -> SfcStatus {
    guard(|| {
        if image_out.is_null() {
            return Err(Failure::null("image_out"));
        }
        let order = order_ref(order_kind, order_id)?;
        let img = encode_product_tag(&ProductTagData { order, product_id, serial });
        ptr::copy_nonoverlapping(img.as_bytes().as_ptr(), image_out, SFC_TAG_OCTETS);
        Ok(())
    })
}

/// Decodes and checks a tag image.
///
/// # Safety
/// `image` must point to `len` readable octets; `tag_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sfc_tag_decode(image: *const u8, len: usize, tag_out: *mut SfcTag) -> SfcStatus {
    guard(|| {
        let d = bytes(image, len, "image")?;
        let slot = out(tag_out, "tag_out")?;
        *slot = match decode_tag(d)? {
            DecodedTag::BuildTicket(b) => SfcTag {
                kind: SFC_TAG_BUILD_TICKET,
                order_kind: order_kind_code(b.order.kind),
                order_id: b.order.order_id,
                product_id: b.product_id,
                route_id: b.route_id,
                ticket_id: b.ticket_id,
                serial: 0,
            },
            DecodedTag::Product(p) => SfcTag {
                kind: SFC_TAG_PRODUCT,
                order_kind: order_kind_code(p.order.kind),
                order_id: p.order.order_id,
                product_id: p.product_id,
                route_id: 0,
                ticket_id: 0,
                serial: p.serial,
            },
        };
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn sfc_framer_new() -> *mut SfcFramer {
    Box::into_raw(Box::new(SfcFramer { framer: Framer::new(), ready: VecDeque::new() }))
}

/// Frees a framer. NULL is ignored.
///
/// # Safety
/// `f` must come from `sfc_framer_new` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sfc_framer_free(f: *mut SfcFramer) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// Feeds a chunk of the TCP stream. `ready_out`, when not NULL, receives the
/// number of whole messages now queued.
///
/// # Safety
/// `f` must be a live framer; `data` must point to `len` readable octets.
#[no_mangle]
pub unsafe extern "C" fn sfc_framer_feed(
    f: *mut SfcFramer,
    data: *const u8,
    len: usize,
    ready_out: *mut usize,
) -> SfcStatus {
    guard(|| {
        let f = out(f, "framer")?;
        let chunk = bytes(data, len, "data")?;
        let msgs = f.framer.feed(chunk)?;
        f.ready.extend(msgs);
        if let Some(n) = ready_out.as_mut() {
            *n = f.ready.len();
        }
        Ok(())
    })
}

/// Takes the oldest queued message as JSON. Returns `Empty` when nothing is
/// queued. Free the string with `sfc_string_free`.
///
/// # Safety
/// `f` must be a live framer; `json_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sfc_framer_pop_json(f: *mut SfcFramer, json_out: *mut *mut c_char) -> SfcStatus {
    guard(|| {
        let f = out(f, "framer")?;
        let slot = out(json_out, "json_out")?;
        *slot = ptr::null_mut();
        let m = f.ready.pop_front().ok_or_else(|| Failure(SfcStatus::Empty, "no message queued".into()))?;
        *slot = owned_string(serde_json::to_string(&m).expect("message json"));
        Ok(())
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EngineConfigJson {
    exit_data_point_id: String,
    /// data point id to work center id
    data_points: BTreeMap<String, String>,
    #[serde(default)]
    presence_timeout_s: Option<u64>,
    #[serde(default)]
    delay_grace_s: Option<u64>,
}

/// Creates an engine from a JSON config:
/// `{"exit_data_point_id": "DP7", "data_points": {"DP1": "WC-IN", ...},
/// "presence_timeout_s": 10, "delay_grace_s": 300}` (the last two optional).
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `engine_out` writable.
#[no_mangle]
pub unsafe extern "C" fn sfc_engine_new(config_json: *const c_char, engine_out: *mut *mut SfcEngine) -> SfcStatus {
    guard(|| {
        let slot = out(engine_out, "engine_out")?;
        *slot = ptr::null_mut();
        let raw: EngineConfigJson = serde_json::from_str(text(config_json, "config_json")?)
            .map_err(|e| Failure(SfcStatus::InvalidArgument, format!("config: {e}")))?;
        let mut cfg = EngineConfig::new(raw.exit_data_point_id, raw.data_points);
        if let Some(s) = raw.presence_timeout_s {
            cfg = cfg.with_presence_timeout_s(s);
        }
        if let Some(s) = raw.delay_grace_s {
            cfg = cfg.with_delay_grace_s(s);
        }
        cfg.validate().map_err(|e| Failure(SfcStatus::InvalidArgument, format!("config: {e}")))?;
        *slot = Box::into_raw(Box::new(SfcEngine { engine: Engine::new(cfg) }));
        Ok(())
    })
}

/// Frees an engine. NULL is ignored.
///
/// # Safety
/// `e` must come from `sfc_engine_new` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sfc_engine_free(e: *mut SfcEngine) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// Imports a dispatch list document.
///
/// # Safety
/// `e` must be a live engine; `xml` must point to `len` readable octets.
#[no_mangle]
pub unsafe extern "C" fn sfc_engine_import_dispatch_xml(e: *mut SfcEngine, xml: *const u8, len: usize) -> SfcStatus {
    guard(|| {
        let e = out(e, "engine")?;
        let list =
            parse_dispatch_xml(bytes(xml, len, "xml")?).map_err(|err| Failure(SfcStatus::DispatchInvalid, err.to_string()))?;
        e.engine.import_dispatch(list)?;
        Ok(())
    })
}

/// Applies one tag read seen at `data_point_id`. A `first_seen_us` of zero
/// means the reader gave no timestamp and `now_us` is used.
///
/// # Safety
/// `e` must be a live engine; `data_point_id` NUL-terminated; `epc` must
/// point to `epc_len` readable octets.
#[no_mangle]
pub unsafe extern "C" fn sfc_engine_apply_read(
    e: *mut SfcEngine,
    data_point_id: *const c_char,
    epc: *const u8,
    epc_len: usize,
    first_seen_us: u64,
    now_us: u64,
) -> SfcStatus {
    guard(|| {
        let e = out(e, "engine")?;
        let ev = ReadEvent {
            epc: bytes(epc, epc_len, "epc")?.to_vec(),
            data_point_id: Some(text(data_point_id, "data_point_id")?.to_string()),
            antenna_id: 1,
            first_seen_utc_us: first_seen_us,
            peak_rssi: 0,
            seen_count: 1,
        };
        e.engine.apply_read(&ev, now_us)?;
        Ok(())
    })
}

/// Advances the engine clock, expiring presence.
///
/// # Safety
/// `e` must be a live engine.
#[no_mangle]
pub unsafe extern "C" fn sfc_engine_tick(e: *mut SfcEngine, now_us: u64) -> SfcStatus {
    guard(|| {
        out(e, "engine")?.engine.tick(now_us)?;
        Ok(())
    })
}

/// Raises delay alerts due at `now_us`. `raised_out`, when not NULL,
/// receives how many are new.
///
/// # Safety
/// `e` must be a live engine.
#[no_mangle]
pub unsafe extern "C" fn sfc_engine_detect_delays(e: *mut SfcEngine, now_us: u64, raised_out: *mut usize) -> SfcStatus {
    guard(|| {
        let raised = out(e, "engine")?.engine.detect_delays(now_us)?;
        if let Some(n) = raised_out.as_mut() {
            *n = raised.len();
        }
        Ok(())
    })
}

/// Order status as the JSON document the HTTP API serves. Free the string
/// with `sfc_string_free`.
///
/// # Safety
/// `e` must be a live engine; `order` NUL-terminated; `json_out` writable.
#[no_mangle]
pub unsafe extern "C" fn sfc_engine_order_status_json(
    e: *const SfcEngine,
    order: *const c_char,
    json_out: *mut *mut c_char,
) -> SfcStatus {
    guard(|| {
        let slot = out(json_out, "json_out")?;
        *slot = ptr::null_mut();
        let e = e.as_ref().ok_or_else(|| Failure::null("engine"))?;
        let status = e.engine.order_status(text(order, "order")?)?;
        *slot = owned_string(serde_json::to_string(&status).expect("status json"));
        Ok(())
    })
}
