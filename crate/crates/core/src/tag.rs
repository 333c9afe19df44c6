//! Build-ticket and product tag payloads.
//!
//! A low-cost UHF tag holds 512 bits. Both payload kinds share one fixed
//! big-endian layout:
//!
//! | octets  | field                                              |
//! |---------|----------------------------------------------------|
//! | 0       | magic `0x5F`                                       |
//! | 1       | high nibble version `1`, low nibble kind (1/2)     |
//! | 2       | order kind (`0` customer, `1` make-to-stock)       |
//! | 3..11   | order id `u64`                                     |
//! | 11..19  | product id `u64`                                   |
//! | 19..23  | route id `u32` (zero on product tags)              |
//! | 23..31  | ticket id `u64` (serial on product tags)           |
//! | 31..33  | CRC-16/CCITT-FALSE over octets 0..31               |
//! | 33..64  | zero                                               |
//!
//! Detailed routing never lives on the tag; it is resolved from the
//! dispatch list by route id.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TAG_MEMORY_OCTETS: usize = 64;
pub const TAG_MAGIC: u8 = 0x5F;
pub const TAG_VERSION: u8 = 0x1;

const KIND_BUILD_TICKET: u8 = 0x1;
const KIND_PRODUCT: u8 = 0x2;
const CRC_OFFSET: usize = 31;
const USED_OCTETS: usize = 33;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderKind {
    CustomerSalesOrder,
    InternalMakeToStock,
}

impl OrderKind {
    fn code(self) -> u8 {
        match self {
            OrderKind::CustomerSalesOrder => 0x00,
            OrderKind::InternalMakeToStock => 0x01,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0x00 => Some(OrderKind::CustomerSalesOrder),
            0x01 => Some(OrderKind::InternalMakeToStock),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OrderRef {
    pub kind: OrderKind,
    pub order_id: u64,
}

impl OrderRef {
    pub fn customer(order_id: u64) -> Self {
        OrderRef { kind: OrderKind::CustomerSalesOrder, order_id }
    }

    pub fn make_to_stock(order_id: u64) -> Self {
        OrderRef { kind: OrderKind::InternalMakeToStock, order_id }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BuildTicketData {
    pub order: OrderRef,
    pub product_id: u64,
    pub route_id: u32,
    pub ticket_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProductTagData {
    pub order: OrderRef,
    pub product_id: u64,
    pub serial: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecodedTag {
    BuildTicket(BuildTicketData),
    Product(ProductTagData),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TagError {
    #[error("tag image must be {TAG_MEMORY_OCTETS} octets, got {0}")]
    BadLength(usize),
    #[error("bad magic octet 0x{0:02X}")]
    BadMagic(u8),
    #[error("unsupported tag layout version {0}")]
    BadVersion(u8),
    #[error("unknown tag kind {0}")]
    BadKind(u8),
    #[error("CRC mismatch: stored 0x{stored:04X}, computed 0x{computed:04X}")]
    CrcMismatch { stored: u16, computed: u16 },
}

/// The 512-bit tag memory. There is no way to build one of any other size.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct TagMemoryImage([u8; TAG_MEMORY_OCTETS]);

impl TagMemoryImage {
    pub fn as_bytes(&self) -> &[u8; TAG_MEMORY_OCTETS] {
        &self.0
    }

    pub fn into_bytes(self) -> [u8; TAG_MEMORY_OCTETS] {
        self.0
    }

    /// Wraps raw octets without validating header or CRC; use [`decode_tag`]
    /// for that.
    pub fn from_slice(bytes: &[u8]) -> Result<Self, TagError> {
        let arr: [u8; TAG_MEMORY_OCTETS] =
            bytes.try_into().map_err(|_| TagError::BadLength(bytes.len()))?;
        Ok(TagMemoryImage(arr))
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl std::fmt::Debug for TagMemoryImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "TagMemoryImage({})", hex_prefix(&self.0[..USED_OCTETS]))
    }
}

fn hex_prefix(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

const fn crc16_table() -> [u16; 256] {
    let mut table = [0u16; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = (i as u16) << 8;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 0x8000 != 0 { (crc << 1) ^ 0x1021 } else { crc << 1 };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

static CRC16_TABLE: [u16; 256] = crc16_table();

/// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no final xor.
pub fn crc16(data: &[u8]) -> u16 {
    data.iter().fold(0xFFFF, |crc, &b| {
        (crc << 8) ^ CRC16_TABLE[usize::from((crc >> 8) as u8 ^ b)]
    })
}

fn pack(kind: u8, order: OrderRef, product_id: u64, route_id: u32, ticket_id: u64) -> TagMemoryImage {
    let mut b = [0u8; TAG_MEMORY_OCTETS];
    b[0] = TAG_MAGIC;
    b[1] = (TAG_VERSION << 4) | kind;
    b[2] = order.kind.code();
    b[3..11].copy_from_slice(&order.order_id.to_be_bytes());
    b[11..19].copy_from_slice(&product_id.to_be_bytes());
    b[19..23].copy_from_slice(&route_id.to_be_bytes());
    b[23..31].copy_from_slice(&ticket_id.to_be_bytes());
    let crc = crc16(&b[..CRC_OFFSET]);
    b[CRC_OFFSET..USED_OCTETS].copy_from_slice(&crc.to_be_bytes());
    TagMemoryImage(b)
}

pub fn encode_build_ticket(ticket: &BuildTicketData) -> TagMemoryImage {
    pack(KIND_BUILD_TICKET, ticket.order, ticket.product_id, ticket.route_id, ticket.ticket_id)
}

pub fn encode_product_tag(product: &ProductTagData) -> TagMemoryImage {
    pack(KIND_PRODUCT, product.order, product.product_id, 0, product.serial)
}

fn be_u64(b: &[u8]) -> u64 {
    u64::from_be_bytes(b.try_into().expect("8 octets"))
}

/// Decodes a raw tag payload. Checks run in layout order (length, magic,
/// version, kind, CRC) and the first failure is reported.
pub fn decode_tag(bytes: &[u8]) -> Result<DecodedTag, TagError> {
    if bytes.len() != TAG_MEMORY_OCTETS {
        return Err(TagError::BadLength(bytes.len()));
    }
    if bytes[0] != TAG_MAGIC {
        return Err(TagError::BadMagic(bytes[0]));
    }
    let version = bytes[1] >> 4;
    if version != TAG_VERSION {
        return Err(TagError::BadVersion(version));
    }
    let kind = bytes[1] & 0x0F;
    if kind != KIND_BUILD_TICKET && kind != KIND_PRODUCT {
        return Err(TagError::BadKind(kind));
    }
    let stored = u16::from_be_bytes([bytes[CRC_OFFSET], bytes[CRC_OFFSET + 1]]);
    let computed = crc16(&bytes[..CRC_OFFSET]);
    if stored != computed {
        return Err(TagError::CrcMismatch { stored, computed });
    }
    // The order-kind octet is CRC-covered, so an unknown value here means a
    // writer bug rather than corruption.
    let order_kind = OrderKind::from_code(bytes[2]).ok_or(TagError::BadKind(bytes[2]))?;
    let order = OrderRef { kind: order_kind, order_id: be_u64(&bytes[3..11]) };
    let product_id = be_u64(&bytes[11..19]);
    let id = be_u64(&bytes[23..31]);
    Ok(match kind {
        KIND_BUILD_TICKET => DecodedTag::BuildTicket(BuildTicketData {
            order,
            product_id,
            route_id: u32::from_be_bytes(bytes[19..23].try_into().expect("4 octets")),
            ticket_id: id,
        }),
        _ => DecodedTag::Product(ProductTagData { order, product_id, serial: id }),
    })
}

impl TagMemoryImage {
    pub fn decode(&self) -> Result<DecodedTag, TagError> {
        decode_tag(&self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Bit-at-a-time reference, kept independent of the table.
    fn crc16_bitwise(data: &[u8]) -> u16 {
        let mut crc: u16 = 0xFFFF;
        for &byte in data {
            for i in (0..8).rev() {
                let bit = (byte >> i) & 1 == 1;
                let top = crc & 0x8000 != 0;
                crc <<= 1;
                if bit ^ top {
                    crc ^= 0x1021;
                }
            }
        }
        crc
    }

    /// Hand-packer that writes each field octet by octet.
    fn hand_pack(kind: u8, order_kind: u8, order_id: u64, product: u64, route: u32, ticket: u64) -> Vec<u8> {
        let mut v = vec![0x5F, 0x10 | kind, order_kind];
        for shift in (0..8).rev() {
            v.push((order_id >> (shift * 8)) as u8);
        }
        for shift in (0..8).rev() {
            v.push((product >> (shift * 8)) as u8);
        }
        for shift in (0..4).rev() {
            v.push((route >> (shift * 8)) as u8);
        }
        for shift in (0..8).rev() {
            v.push((ticket >> (shift * 8)) as u8);
        }
        let crc = crc16_bitwise(&v);
        v.push((crc >> 8) as u8);
        v.push(crc as u8);
        v.resize(64, 0);
        v
    }

    fn random_ticket(rng: &mut ChaCha8Rng) -> BuildTicketData {
        let kind = if rng.gen() { OrderKind::CustomerSalesOrder } else { OrderKind::InternalMakeToStock };
        BuildTicketData {
            order: OrderRef { kind, order_id: rng.gen() },
            product_id: rng.gen(),
            route_id: rng.gen(),
            ticket_id: rng.gen(),
        }
    }

    #[test]
    fn crc_reference_values() {
        assert_eq!(crc16(b""), 0xFFFF);
        assert_eq!(crc16_bitwise(b"123456789"), 0x29B1);
        assert_eq!(crc16(b"123456789"), 0x29B1);
    }

    #[test]
    fn crc_table_matches_bitwise_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for len in 0..80 {
            let data: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            assert_eq!(crc16(&data), crc16_bitwise(&data));
        }
    }

    #[test]
    fn crc_detects_every_single_bit_flip_of_31_octets() {
        let sample: Vec<u8> = (0..31u8).map(|i| i.wrapping_mul(37).wrapping_add(11)).collect();
        let base = crc16(&sample);
        for bit in 0..31 * 8 {
            let mut flipped = sample.clone();
            flipped[bit / 8] ^= 0x80 >> (bit % 8);
            assert_ne!(crc16(&flipped), base, "bit {bit}");
        }
    }

    #[test]
    fn zero_build_ticket_layout() {
        let t = BuildTicketData { order: OrderRef::customer(0), product_id: 0, route_id: 0, ticket_id: 0 };
        let img = encode_build_ticket(&t);
        let b = img.as_bytes();
        assert_eq!(&b[..3], &[0x5F, 0x11, 0x00]);
        assert!(b[3..31].iter().all(|&x| x == 0));
        assert_eq!(u16::from_be_bytes([b[31], b[32]]), crc16_bitwise(&b[..31]));
        assert!(b[33..].iter().all(|&x| x == 0));
    }

    #[test]
    fn make_to_stock_ticket_hand_packed() {
        let t = BuildTicketData {
            order: OrderRef::make_to_stock(0x0102030405060708),
            product_id: 0x4D,
            route_id: 0x01,
            ticket_id: 0x2A,
        };
        let b = encode_build_ticket(&t).into_bytes();
        assert_eq!(b[2], 0x01);
        assert_eq!(&b[3..11], &[1, 2, 3, 4, 5, 6, 7, 8]);
        assert_eq!(b[18], 0x4D);
        assert_eq!(b[22], 0x01);
        assert_eq!(b[30], 0x2A);
        assert_eq!(b.to_vec(), hand_pack(1, 1, 0x0102030405060708, 0x4D, 1, 0x2A));
    }

    #[test]
    fn product_tag_layout() {
        let zero = encode_product_tag(&ProductTagData { order: OrderRef::customer(0), product_id: 0, serial: 0 });
        assert_eq!(&zero.as_bytes()[..3], &[0x5F, 0x12, 0x00]);
        assert!(zero.as_bytes()[19..23].iter().all(|&x| x == 0));

        let p = ProductTagData { order: OrderRef::customer(1001), product_id: 77, serial: 5 };
        let b = encode_product_tag(&p).into_bytes();
        assert_eq!(&b[3..11], &1001u64.to_be_bytes());
        assert_eq!(b[18], 0x4D);
        assert_eq!(&b[23..31], &5u64.to_be_bytes());
        assert_eq!(b.to_vec(), hand_pack(2, 0, 1001, 77, 0, 5));
    }

    #[test]
    fn sampled_tickets_match_hand_packer() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..3 {
            let t = random_ticket(&mut rng);
            let expected = hand_pack(1, t.order.kind.code(), t.order.order_id, t.product_id, t.route_id, t.ticket_id);
            assert_eq!(encode_build_ticket(&t).as_bytes().to_vec(), expected);
        }
    }

    #[test]
    fn round_trips_seeded_payloads() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5FC0);
        for _ in 0..1000 {
            let t = random_ticket(&mut rng);
            assert_eq!(decode_tag(encode_build_ticket(&t).as_bytes()), Ok(DecodedTag::BuildTicket(t)));
            let p = ProductTagData { order: t.order, product_id: t.product_id, serial: t.ticket_id };
            assert_eq!(decode_tag(encode_product_tag(&p).as_bytes()), Ok(DecodedTag::Product(p)));
        }
    }

    #[test]
    fn decode_errors() {
        assert_eq!(decode_tag(&[0u8; 64]), Err(TagError::BadMagic(0)));
        assert_eq!(decode_tag(&[0u8; 63]), Err(TagError::BadLength(63)));
        let mut b = encode_build_ticket(&BuildTicketData {
            order: OrderRef::customer(9),
            product_id: 1,
            route_id: 2,
            ticket_id: 3,
        })
        .into_bytes();
        b[1] = 0x21;
        assert_eq!(decode_tag(&b), Err(TagError::BadVersion(2)));
        b[1] = 0x13;
        assert_eq!(decode_tag(&b), Err(TagError::BadKind(3)));
    }

    #[test]
    fn every_single_bit_flip_is_rejected() {
        let t = BuildTicketData { order: OrderRef::customer(1001), product_id: 77, route_id: 1, ticket_id: 1 };
        let img = encode_build_ticket(&t).into_bytes();
        let mut rejected = 0;
        for bit in 0..31 * 8 {
            let mut b = img;
            b[bit / 8] ^= 0x80 >> (bit % 8);
            match decode_tag(&b) {
                Err(TagError::CrcMismatch { .. } | TagError::BadMagic(_) | TagError::BadVersion(_) | TagError::BadKind(_)) => {
                    rejected += 1
                }
                other => panic!("bit {bit} decoded as {other:?}"),
            }
        }
        assert_eq!(rejected, 248);
    }

    #[test]
    fn encoding_is_deterministic() {
        let t = BuildTicketData { order: OrderRef::customer(5), product_id: 6, route_id: 7, ticket_id: 8 };
        assert_eq!(encode_build_ticket(&t), encode_build_ticket(&t));
    }
}
