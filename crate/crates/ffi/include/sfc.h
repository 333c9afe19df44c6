#ifndef SFC_H
#define SFC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Size of a tag memory image in octets.
#define SFC_TAG_OCTETS 64

#define SFC_TAG_BUILD_TICKET 0

#define SFC_TAG_PRODUCT 1

#define SFC_ORDER_CUSTOMER 0

#define SFC_ORDER_MAKE_TO_STOCK 1

typedef enum SfcStatus {
  SFC_STATUS_OK = 0,
  SFC_STATUS_NULL_POINTER = 1,
  SFC_STATUS_INVALID_ARGUMENT = 2,
  // Bad length, magic, version or kind.
  SFC_STATUS_TAG_INVALID = 3,
  SFC_STATUS_TAG_CRC_MISMATCH = 4,
  SFC_STATUS_LLRP_MALFORMED = 5,
  // The framer saw an error earlier and accepts no more input.
  SFC_STATUS_STREAM_POISONED = 6,
  // Nothing queued.
  SFC_STATUS_EMPTY = 7,
  SFC_STATUS_DISPATCH_INVALID = 8,
  SFC_STATUS_IN_FLIGHT_CONFLICT = 9,
  SFC_STATUS_UNKNOWN_ORDER = 10,
  SFC_STATUS_UNKNOWN_DATA_POINT = 11,
  SFC_STATUS_READ_REJECTED = 12,
  SFC_STATUS_ENGINE = 13,
  SFC_STATUS_PANIC = 99,
} SfcStatus;

// Opaque WIP engine.
typedef struct SfcEngine SfcEngine;

// Opaque LLRP stream reassembler.
typedef struct SfcFramer SfcFramer;

// Decoded tag contents. Fields that do not apply to `kind` are zero.
typedef struct SfcTag {
  // `SFC_TAG_BUILD_TICKET` or `SFC_TAG_PRODUCT`
  uint8_t kind;
  // `SFC_ORDER_CUSTOMER` or `SFC_ORDER_MAKE_TO_STOCK`
  uint8_t order_kind;
  uint64_t order_id;
  uint64_t product_id;
  uint32_t route_id;
  uint64_t ticket_id;
  uint64_t serial;
} SfcTag;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL after a
// successful one. Valid until the next call into the library on this
// thread; do not free.
const char *sfc_last_error(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void sfc_string_free(char *s);

// CRC-16/CCITT-FALSE of `len` octets.
//
// # Safety
// `data` must point to `len` readable octets (or be NULL when `len` is 0).
enum SfcStatus sfc_crc16(const uint8_t *data, uintptr_t len, uint16_t *crc_out);

// Writes a 64-octet build ticket image to `image_out`.
//
// # Safety
// `image_out` must point to `SFC_TAG_OCTETS` writable octets.
enum SfcStatus sfc_tag_encode_build_ticket(uint8_t order_kind,
                                           uint64_t order_id,
                                           uint64_t product_id,
                                           uint32_t route_id,
                                           uint64_t ticket_id,
                                           uint8_t *image_out);

// Writes a 64-octet product tag image to `image_out`.
//
// # Safety
// `image_out` must point to `SFC_TAG_OCTETS` writable octets.
enum SfcStatus sfc_tag_encode_product(uint8_t order_kind,
                                      uint64_t order_id,
                                      uint64_t product_id,
                                      uint64_t serial,
                                      uint8_t *image_out);

// Decodes and checks a tag image.
//
// # Safety
// `image` must point to `len` readable octets; `tag_out` must be writable.
enum SfcStatus sfc_tag_decode(const uint8_t *image, uintptr_t len, struct SfcTag *tag_out);

struct SfcFramer *sfc_framer_new(void);

// Frees a framer. NULL is ignored.
//
// # Safety
// `f` must come from `sfc_framer_new` and not have been freed.
void sfc_framer_free(struct SfcFramer *f);

// Feeds a chunk of the TCP stream. `ready_out`, when not NULL, receives the
// number of whole messages now queued.
//
// # Safety
// `f` must be a live framer; `data` must point to `len` readable octets.
enum SfcStatus sfc_framer_feed(struct SfcFramer *f,
                               const uint8_t *data,
                               uintptr_t len,
                               uintptr_t *ready_out);

// Takes the oldest queued message as JSON. Returns `Empty` when nothing is
// queued. Free the string with `sfc_string_free`.
//
// # Safety
// `f` must be a live framer; `json_out` must be writable.
enum SfcStatus sfc_framer_pop_json(struct SfcFramer *f, char **json_out);

// Creates an engine from a JSON config:
// `{"exit_data_point_id": "DP7", "data_points": {"DP1": "WC-IN", ...},
// "presence_timeout_s": 10, "delay_grace_s": 300}` (the last two optional).
//
// # Safety
// `config_json` must be a NUL-terminated string; `engine_out` writable.
enum SfcStatus sfc_engine_new(const char *config_json, struct SfcEngine **engine_out);

// Frees an engine. NULL is ignored.
//
// # Safety
// `e` must come from `sfc_engine_new` and not have been freed.
void sfc_engine_free(struct SfcEngine *e);

// Imports a dispatch list document.
//
// # Safety
// `e` must be a live engine; `xml` must point to `len` readable octets.
enum SfcStatus sfc_engine_import_dispatch_xml(struct SfcEngine *e,
                                              const uint8_t *xml,
                                              uintptr_t len);

// Applies one tag read seen at `data_point_id`. A `first_seen_us` of zero
// means the reader gave no timestamp and `now_us` is used.
//
// # Safety
// `e` must be a live engine; `data_point_id` NUL-terminated; `epc` must
// point to `epc_len` readable octets.
enum SfcStatus sfc_engine_apply_read(struct SfcEngine *e,
                                     const char *data_point_id,
                                     const uint8_t *epc,
                                     uintptr_t epc_len,
                                     uint64_t first_seen_us,
                                     uint64_t now_us);

// Advances the engine clock, expiring presence.
//
// # Safety
// `e` must be a live engine.
enum SfcStatus sfc_engine_tick(struct SfcEngine *e, uint64_t now_us);

// Raises delay alerts due at `now_us`. `raised_out`, when not NULL,
// receives how many are new.
//
// # Safety
// `e` must be a live engine.
enum SfcStatus sfc_engine_detect_delays(struct SfcEngine *e,
                                        uint64_t now_us,
                                        uintptr_t *raised_out);

// Order status as the JSON document the HTTP API serves. Free the string
// with `sfc_string_free`.
//
// # Safety
// `e` must be a live engine; `order` NUL-terminated; `json_out` writable.
enum SfcStatus sfc_engine_order_status_json(const struct SfcEngine *e,
                                            const char *order,
                                            char **json_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SFC_H */
