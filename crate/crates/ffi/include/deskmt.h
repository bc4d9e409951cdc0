#ifndef DESKMT_H
#define DESKMT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DeskmtStatus {
  DESKMT_STATUS_OK = 0,
  DESKMT_STATUS_NULL_POINTER = 1,
  DESKMT_STATUS_INVALID_UTF8 = 2,
  DESKMT_STATUS_INVALID_ARGUMENT = 3,
  DESKMT_STATUS_IO = 4,
  DESKMT_STATUS_FORMAT = 5,
  DESKMT_STATUS_TRANSLATION = 6,
  DESKMT_STATUS_PANIC = 7,
} DeskmtStatus;

/**
 * A loaded BPE merge table.
 */
typedef struct DeskmtBpe DeskmtBpe;

/**
 * One model or an ensemble with its vocabularies and optional BPE and unk
 * dictionary.
 */
typedef struct DeskmtTranslator DeskmtTranslator;

/**
 * Options for [`deskmt_translator_open`]. Null paths are absent.
 */
typedef struct DeskmtTranslatorOptions {
  /**
   * Checkpoint paths; more than one forms an ensemble.
   */
  const char *const *models;
  size_t model_count;
  const char *source_vocab;
  const char *target_vocab;
  /**
   * Merge table for systems trained on BPE pieces.
   */
  const char *merges;
  /**
   * Enables unk replacement by dictionary lookup with copy backoff.
   */
  const char *dictionary;
  /**
   * Enables copy-only unk replacement when no dictionary is given.
   */
  bool copy_unks;
  /**
   * 0 selects the default beam.
   */
  size_t beam;
} DeskmtTranslatorOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (always NUL
 * terminated when `len > 0`) and returns the full message length plus one.
 * Returns 0 when no error is recorded.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t deskmt_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *deskmt_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void deskmt_string_free(char *s);

/**
 * Loads a merge table file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DeskmtStatus deskmt_bpe_load(const char *path, struct DeskmtBpe **out);

/**
 * Segments a whitespace-tokenized sentence; pieces are space separated.
 *
 * # Safety
 * `bpe` must be a live handle, `sentence` NUL-terminated, `out` writable.
 */
enum DeskmtStatus deskmt_bpe_segment(const struct DeskmtBpe *bpe, const char *sentence, char **out);

/**
 * Joins space-separated pieces back into words.
 *
 * # Safety
 * `pieces` must be NUL-terminated and `out` writable.
 */
enum DeskmtStatus deskmt_bpe_join(const char *pieces, char **out);

/**
 * # Safety
 * `bpe` must be null or a handle not yet freed.
 */
void deskmt_bpe_free(struct DeskmtBpe *bpe);

/**
 * Loads checkpoints and vocabularies into a translator.
 *
 * # Safety
 * `options` must point to a valid struct whose non-null strings are
 * NUL-terminated and whose `models` holds `model_count` entries.
 */
enum DeskmtStatus deskmt_translator_open(const struct DeskmtTranslatorOptions *options,
                                         struct DeskmtTranslator **out);

/**
 * Translates one whitespace-tokenized sentence.
 *
 * # Safety
 * `translator` must be a live handle, `sentence` NUL-terminated, `out`
 * writable; `score` may be null.
 */
enum DeskmtStatus deskmt_translator_translate(const struct DeskmtTranslator *translator,
                                              const char *sentence,
                                              char **out,
                                              double *score);

/**
 * # Safety
 * `translator` must be null or a handle not yet freed.
 */
void deskmt_translator_free(struct DeskmtTranslator *translator);

/**
 * Corpus BLEU (0 to 100) of newline-separated hypotheses against references.
 *
 * # Safety
 * Both strings must be NUL-terminated; `out` must be writable.
 */
enum DeskmtStatus deskmt_bleu(const char *hypotheses, const char *references, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DESKMT_H */
