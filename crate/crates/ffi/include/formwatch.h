#ifndef FORMWATCH_H
#define FORMWATCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FwStatus {
  FW_STATUS_OK = 0,
  FW_STATUS_NULL_ARG = 1,
  FW_STATUS_INVALID_UTF8 = 2,
  FW_STATUS_PARSE = 3,
  FW_STATUS_VALIDATION = 4,
  FW_STATUS_NOT_FOUND = 5,
  FW_STATUS_IO = 6,
  FW_STATUS_NO_STRUCTURE = 7,
  FW_STATUS_INTERNAL = 8,
} FwStatus;

/**
 * A monitor instance with its own event log and counters.
 */
typedef struct FwMonitor FwMonitor;

/**
 * A loaded application structure.
 */
typedef struct FwStructure FwStructure;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version; static, do not free.
 */
const char *fw_version(void);

/**
 * Message for the last failed call on this thread, or null after a success.
 * Valid until the next call into this library on the same thread.
 */
const char *fw_last_error_message(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void fw_string_free(char *s);

/**
 * Loads and validates a structure file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum FwStatus fw_structure_load(const char *path, struct FwStructure **out);

/**
 * Parses and validates a structure document.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum FwStatus fw_structure_from_json(const char *json, struct FwStructure **out);

/**
 * # Safety
 * `structure` must be a live handle; `out` must be writable.
 */
enum FwStatus fw_structure_to_json(const struct FwStructure *structure, char **out);

/**
 * Number of destination groups; 0 for a null handle.
 *
 * # Safety
 * `structure` must be null or a live handle.
 */
size_t fw_structure_group_count(const struct FwStructure *structure);

/**
 * # Safety
 * `structure` must be null or a handle from this library, not yet freed.
 */
void fw_structure_free(struct FwStructure *structure);

/**
 * Classifies one capture line and writes its verdict record as JSON.
 *
 * # Safety
 * `structure` must be a live handle, `line` a NUL-terminated string, `out` writable.
 */
enum FwStatus fw_classify_line(const struct FwStructure *structure, const char *line, char **out);

/**
 * Creates a monitor keeping at most `retention` events; 0 selects the default.
 *
 * # Safety
 * `out` must be writable.
 */
enum FwStatus fw_monitor_new(size_t retention, struct FwMonitor **out);

/**
 * # Safety
 * `monitor` must be null or a handle from this library, not yet freed.
 */
void fw_monitor_free(struct FwMonitor *monitor);

/**
 * Installs a copy of `structure` as the monitor's current snapshot.
 *
 * # Safety
 * Both handles must be live.
 */
enum FwStatus fw_monitor_set_structure(const struct FwMonitor *monitor,
                                       const struct FwStructure *structure);

/**
 * Ingests newline-separated capture lines; writes `{"accepted":..,"rejected":[..]}`.
 *
 * # Safety
 * `monitor` must be live, `lines` a NUL-terminated string, `out` writable.
 */
enum FwStatus fw_monitor_ingest(const struct FwMonitor *monitor, const char *lines, char **out);

/**
 * # Safety
 * `monitor` must be live and `out` writable.
 */
enum FwStatus fw_monitor_overview(const struct FwMonitor *monitor, char **out);

/**
 * Overview scene of one destination group, as a scene document.
 *
 * # Safety
 * `monitor` must be live, `group_id` a NUL-terminated string, `out` writable.
 */
enum FwStatus fw_monitor_group_scene(const struct FwMonitor *monitor,
                                     const char *group_id,
                                     char **out);

/**
 * Form lane scene of one request, as a scene document.
 *
 * # Safety
 * `monitor` must be live, the ids NUL-terminated strings, `out` writable.
 */
enum FwStatus fw_monitor_form_scene(const struct FwMonitor *monitor,
                                    const char *form_id,
                                    const char *request_id,
                                    char **out);

/**
 * Control detail scene of one request, as a scene document.
 *
 * # Safety
 * `monitor` must be live, the ids NUL-terminated strings, `out` writable.
 */
enum FwStatus fw_monitor_control_scene(const struct FwMonitor *monitor,
                                       const char *form_id,
                                       const char *request_id,
                                       size_t order_index,
                                       char **out);

/**
 * Renders a scene document to SVG.
 *
 * # Safety
 * `scene_json` must be a NUL-terminated string; `out` must be writable.
 */
enum FwStatus fw_render_svg(const char *scene_json, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FORMWATCH_H */
