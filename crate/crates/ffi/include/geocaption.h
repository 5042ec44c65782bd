#ifndef GEOCAPTION_H
#define GEOCAPTION_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GcRefineAction {
  GC_REFINE_ACTION_KEPT = 0,
  GC_REFINE_ACTION_FIXED = 1,
  GC_REFINE_ACTION_DELETED = 2,
} GcRefineAction;

typedef enum GcStatus {
  GC_STATUS_OK = 0,
  GC_STATUS_NULL_POINTER = 1,
  GC_STATUS_INVALID_UTF8 = 2,
  GC_STATUS_INVALID_ARGUMENT = 3,
  GC_STATUS_IO = 4,
  GC_STATUS_STORE = 5,
  // The requested value is undefined for this input.
  GC_STATUS_UNDEFINED = 6,
  GC_STATUS_PANIC = 99,
} GcStatus;

// Pipeline store handle.
typedef struct GcStore GcStore;

// Tag-wiki handle.
typedef struct GcWiki GcWiki;

typedef struct GcPoint {
  double x;
  double y;
} GcPoint;

// Patch counts per status.
typedef struct GcStatusCounts {
  uint64_t new_;
  uint64_t osm_fetched;
  uint64_t unusable;
  uint64_t captioned;
  uint64_t done;
} GcStatusCounts;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. Free with
// `gc_string_free`.
char *gc_last_error(void);

// # Safety
// `s` must be NULL or a string returned by this library, freed once.
void gc_string_free(char *s);

// Library version as a static string; do not free.
const char *gc_version(void);

// Douglas-Peucker simplification of `n` points. `out` must hold `n`
// points; the kept count is written to `out_len`.
//
// # Safety
// `points` must point to `n` readable points and `out` to `n` writable ones.
enum GcStatus gc_simplify_dp(const struct GcPoint *points,
                             size_t n,
                             double epsilon,
                             struct GcPoint *out,
                             size_t *out_len);

// MTLD of `text` after tokenizing and lower-casing. Returns
// `Undefined` when no factor completes and `InvalidArgument` for text
// without tokens.
//
// # Safety
// `text` must be a NUL-terminated string, `out` a writable double.
enum GcStatus gc_mtld(const char *text, double threshold, double *out);

// Cleans one caption. `out_text` receives the cleaned text, or NULL when
// the caption is deleted.
//
// # Safety
// `text` must be a NUL-terminated string; the out-pointers must be writable.
enum GcStatus gc_fix_caption(const char *text, enum GcRefineAction *out_action, char **out_text);

// Loads a tag-wiki TSV file.
//
// # Safety
// `path` must be a NUL-terminated string, `out` writable.
enum GcStatus gc_wiki_load(const char *path, struct GcWiki **out);

// Interprets one `key=value` tag. Free the result with `gc_string_free`.
//
// # Safety
// `wiki` must come from `gc_wiki_load`; strings NUL-terminated; `out` writable.
enum GcStatus gc_wiki_interpret(const struct GcWiki *wiki,
                                const char *key,
                                const char *value,
                                char **out);

// # Safety
// `wiki` must be NULL or come from `gc_wiki_load`, freed once.
void gc_wiki_free(struct GcWiki *wiki);

// Opens (creating if needed) a pipeline store.
//
// # Safety
// `path` must be a NUL-terminated string, `out` writable.
enum GcStatus gc_store_open(const char *path, struct GcStore **out);

// # Safety
// `store` must come from `gc_store_open`; `out` writable.
enum GcStatus gc_store_status_counts(const struct GcStore *store, struct GcStatusCounts *out);

// # Safety
// `store` must be NULL or come from `gc_store_open`, freed once.
void gc_store_free(struct GcStore *store);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GEOCAPTION_H */
