#ifndef ODCAST_H
#define ODCAST_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stddef.h>

/**
 * Result code of every fallible call.
 */
typedef enum OdcastStatus {
  ODCAST_STATUS_OK = 0,
  ODCAST_STATUS_NULL_POINTER = 1,
  ODCAST_STATUS_INVALID_UTF8 = 2,
  ODCAST_STATUS_INVALID_ARGUMENT = 3,
  ODCAST_STATUS_PARSE = 4,
  ODCAST_STATUS_CONFIG = 5,
  ODCAST_STATUS_NETWORK = 6,
  ODCAST_STATUS_NUMERICAL = 7,
  ODCAST_STATUS_CHECKPOINT = 8,
  ODCAST_STATUS_IO = 9,
  ODCAST_STATUS_PANIC = 10,
} OdcastStatus;

/**
 * Trained FL-GCN checkpoint.
 */
typedef struct OdcastModel OdcastModel;

/**
 * Directed highway network.
 */
typedef struct OdcastNetwork OdcastNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a
 * successful call. Release with [`odcast_string_free`].
 */
char *odcast_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and must not be used afterwards.
 */
void odcast_string_free(char *s);

/**
 * Library version as a static NUL-terminated string.
 */
const char *odcast_version(void);

/**
 * Straight corridor of `n_d` interchanges `spacing_miles` apart.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum OdcastStatus odcast_network_turnpike(size_t n_d,
                                          double spacing_miles,
                                          struct OdcastNetwork **out);

/**
 * Parses the text form written by `odcast simulate` (`network.txt`).
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum OdcastStatus odcast_network_from_text(const char *text, struct OdcastNetwork **out);

/**
 * Text form of the network. Release with [`odcast_string_free`].
 *
 * # Safety
 * `net` must be a live handle; `out` must be writable.
 */
enum OdcastStatus odcast_network_to_text(const struct OdcastNetwork *net, char **out);

/**
 * Node, sensor-link and O-D pair counts.
 *
 * # Safety
 * `net` must be a live handle; each output pointer may be null.
 */
enum OdcastStatus odcast_network_dims(const struct OdcastNetwork *net,
                                      size_t *nodes,
                                      size_t *sensors,
                                      size_t *od_pairs);

/**
 * # Safety
 * `net` must be null or a handle not yet freed.
 */
void odcast_network_free(struct OdcastNetwork *net);

/**
 * Loads a checkpoint written by `odcast train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum OdcastStatus odcast_model_load(const char *path, struct OdcastModel **out);

/**
 * Interchange count and link lag count the model was trained with.
 *
 * # Safety
 * `model` must be a live handle; each output pointer may be null.
 */
enum OdcastStatus odcast_model_dims(const struct OdcastModel *model,
                                    size_t *n_d,
                                    size_t *k_link_lags);

/**
 * One O-D forecast in vehicles.
 *
 * `z` is the row-major `sensors x 2k` link matrix (current lags, then the
 * historical lags), `x_hist` the row-major `n_d x (n_d - 1)` historical O-D
 * matrix. Writes `n_d * (n_d - 1)` values to `out`.
 *
 * # Safety
 * Handles must be live and each buffer must hold the stated length.
 */
enum OdcastStatus odcast_model_predict(const struct OdcastModel *model,
                                       const struct OdcastNetwork *net,
                                       const double *z,
                                       size_t z_len,
                                       const double *x_hist,
                                       size_t x_hist_len,
                                       double *out,
                                       size_t out_len);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void odcast_model_free(struct OdcastModel *model);

/**
 * Root mean squared error over `len` cells.
 *
 * # Safety
 * `truth` and `pred` must hold `len` values; `out` must be writable.
 */
enum OdcastStatus odcast_rmse(const double *truth, const double *pred, size_t len, double *out);

/**
 * RMSE normalized by total true flow.
 *
 * # Safety
 * `truth` and `pred` must hold `len` values; `out` must be writable.
 */
enum OdcastStatus odcast_rmsn(const double *truth, const double *pred, size_t len, double *out);

/**
 * SHA-256 digest of a TOML run configuration after defaults are applied.
 * Release with [`odcast_string_free`].
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum OdcastStatus odcast_config_digest(const char *toml, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ODCAST_H */
