#ifndef TREX_H
#define TREX_H

#include <stdint.h>

typedef enum TrexStatus {
  TREX_STATUS_OK = 0,
  TREX_STATUS_NULL_ARGUMENT = 1,
  TREX_STATUS_INVALID_UTF8 = 2,
  TREX_STATUS_MALFORMED_SMILES = 3,
  TREX_STATUS_CONFIG = 4,
  TREX_STATUS_IO = 5,
  TREX_STATUS_MISSING_UPSTREAM = 6,
  TREX_STATUS_MISSING_DESCRIPTION = 7,
  TREX_STATUS_EMPTY_SPLIT = 8,
  TREX_STATUS_MODEL = 9,
  TREX_STATUS_PANIC = 10,
  TREX_STATUS_OTHER = 11,
} TrexStatus;

// Run configuration.
typedef struct TrexConfig TrexConfig;

// Loaded checkpoints of a run.
typedef struct TrexPredictor TrexPredictor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next failing call on the same thread.
const char *trex_last_error(void);

// # Safety
// `s` must come from this library and not have been freed.
void trex_string_free(char *s);

// Default configuration, or the defaults overlaid with a `key = value`
// file when `path` is non-null.
//
// # Safety
// `path` is null or a NUL-terminated string; `config` is writable.
enum TrexStatus trex_config_new(const char *path, struct TrexConfig **config);

// Sets one field by dotted key, e.g. `epochs.center` or `run_dir`.
//
// # Safety
// `config` is a live handle; `key` and `value` are NUL-terminated strings.
enum TrexStatus trex_config_set(struct TrexConfig *config, const char *key, const char *value);

// The configuration as `key = value` lines.
//
// # Safety
// `config` is a live handle; `text_out` is writable.
enum TrexStatus trex_config_text(struct TrexConfig *config, char **text_out);

// # Safety
// `config` is null or a handle not yet freed.
void trex_config_free(struct TrexConfig *config);

// Canonical SMILES of `smiles`, with stereo marks kept when `stereo` is non-zero.
//
// # Safety
// `smiles` is a NUL-terminated string; `canonical` is writable.
enum TrexStatus trex_canonicalize(const char *smiles, int32_t stereo, char **canonical);

// Splits the configured corpus (`data.path`, and `data.cross_path` when
// set) into the run directory.
//
// # Safety
// `config` is a live handle.
enum TrexStatus trex_ingest(struct TrexConfig *config);

// Trains `stage` (`center`, `completion`, `rerank` or `pipeline`) on the
// splits in the configured run directory.
//
// # Safety
// `config` is a live handle; `stage` is a NUL-terminated string.
enum TrexStatus trex_train(struct TrexConfig *config, const char *stage);

// Evaluates the run and returns the summary as JSON.
//
// # Safety
// `config` is a live handle; `json` is writable.
enum TrexStatus trex_evaluate(struct TrexConfig *config, char **json);

// Loads the checkpoints of the configured run.
//
// # Safety
// `config` is a live handle; `predictor` is writable.
enum TrexStatus trex_predictor_open(struct TrexConfig *config, struct TrexPredictor **predictor);

// Ranked reactant sets for `product` as one JSON object. `reaction_type`
// is 1 to 10, or 0 when unknown.
//
// # Safety
// `predictor` is a live handle; `product` is a NUL-terminated string;
// `json` is writable.
enum TrexStatus trex_predict(struct TrexPredictor *predictor,
                             const char *product,
                             uint8_t reaction_type,
                             char **json);

// # Safety
// `predictor` is null or a handle not yet freed.
void trex_predictor_free(struct TrexPredictor *predictor);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TREX_H */
