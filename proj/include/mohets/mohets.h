#ifndef MOHETS_H
#define MOHETS_H

/* Public C interface of the MoHETS forecasting engine.
 *
 * Conventions
 * -----------
 * Every fallible function returns a status code (MOHETS_OK on success) and
 * reports results via out-parameters, which are written only on success.  The
 * message for the most recent failure on the calling thread is available via
 * mohets_last_error().  Strings returned through `char**` out-parameters are
 * heap-allocated; release them with mohets_string_free().  Handles are opaque
 * and single-owner; close functions tolerate NULL.
 *
 * Structured inputs and outputs cross the boundary as JSON text: the schemas
 * are documented at each function and mirror the on-disk config files, so a
 * CLI flag set, a config file, and an embedding host all speak one dialect.
 */

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes.  The CLI uses the first four as process exit codes and folds
 * MOHETS_ERR_IO / MOHETS_ERR_INTERNAL into the data-error exit. */
enum {
  MOHETS_OK = 0,
  MOHETS_ERR_USAGE = 2,    /* invalid arguments, config keys, or JSON */
  MOHETS_ERR_DATA = 3,     /* unusable input: shapes, gaps, corrupt files */
  MOHETS_ERR_NUMERIC = 4,  /* non-finite values; training divergence */
  MOHETS_ERR_IO = 5,       /* unreadable or unwritable paths */
  MOHETS_ERR_INTERNAL = 6  /* invariant violation inside the library */
};

/* Library version ("0.1.0"); the same string is stamped into manifests and
 * checkpoint sidecars. */
const char* mohets_version(void);

/* Message for the most recent failure on this thread; "" after a success.
 * The pointer stays valid until the next mohets_* call on the same thread. */
const char* mohets_last_error(void);

/* Releases a string returned through any `char**` out-parameter. */
void mohets_string_free(char* text);

/* ---- datasets ------------------------------------------------------------ */

/* A loaded multivariate series: variate names, values, and an evenly spaced
 * timestamp column. */
typedef struct mohets_dataset mohets_dataset;

/* Reads a CSV with a "date" timestamp column and one column per variate.
 * Gaps or unparsable cells are data errors naming the offending row. */
int mohets_dataset_open(const char* csv_path, mohets_dataset** out);

/* Deterministic synthetic benchmark stand-in: per-variate mixtures of daily,
 * weekly, and incommensurate cycles plus mild noise, hourly by default. */
int mohets_dataset_synthetic(int64_t length, int64_t variates, uint64_t seed,
                             mohets_dataset** out);

/* JSON description: {"name", "variates", "length", "frequency_seconds",
 * "variate_names": [...], "start", "end"} (timestamps in epoch seconds). */
int mohets_dataset_info(const mohets_dataset* dataset, char** info_json);

void mohets_dataset_close(mohets_dataset* dataset);

/* ---- models -------------------------------------------------------------- */

/* A trained model restored from a checkpoint: parameters plus the scaler and
 * covariate spec it was trained with. */
typedef struct mohets_model mohets_model;

/* Loads `<path>` (binary snapshot) and its JSON sidecar (`<path>` with the
 * extension swapped to .json).  Mismatches between the two are data errors
 * naming the file. */
int mohets_model_open(const char* checkpoint_path, mohets_model** out);

/* JSON description: {"config": {...}, "covariates": {...}, "dataset", "seed",
 * "total_params", "activated_params"}. */
int mohets_model_info(const mohets_model* model, char** info_json);

void mohets_model_close(mohets_model* model);

/* Forecasts `horizon` steps past the end of `dataset`, rolling the model in
 * chunks of its native output length.  `predictions` must hold
 * variates * horizon doubles and is filled variate-major in the data's
 * original units.  `per_chunk_norm` != 0 re-normalizes each chunk's input
 * window (the default policy); 0 freezes the first window's statistics.
 * Fails with a data error if the series is shorter than the model's
 * look-back or its variate count differs from the model's. */
int mohets_forecast(mohets_model* model, const mohets_dataset* dataset, int64_t horizon,
                    int per_chunk_norm, double* predictions);

/* ---- runs ----------------------------------------------------------------
 *
 * One call = one reproducible run: each writes its artifacts under the
 * options' "out" directory plus exactly one manifest.json recording the
 * resolved configuration, seed, code version, timings, and output paths.
 * `result_json` summarizes what happened and where everything was written.
 *
 * Common option keys:
 *   "out"       directory for artifacts (created if missing; required
 *               except for gradcheck, where it is optional)
 *   "seed"      integer, default 0
 *   "data"      CSV path; omit to use "synthetic"
 *   "synthetic" {"length", "variates", "frequency_seconds"?} when no "data"
 *   "split"     {"train", "val", "test"} row counts; defaults to the
 *               benchmark split for recognized dataset names, else 70/10/20
 */

/* Trains a model and writes model.moht (+ model.json sidecar), steps.jsonl,
 * and manifest.json.  Further options:
 *   "preset"     "tiny" | "small" | "base" | "large" (default "tiny")
 *   "model"      config overrides merged over the preset (same keys as the
 *                checkpoint sidecar's "model" object)
 *   "train"      optimizer/schedule settings (max_lr, epochs, batch_size, ...)
 *   "covariates" six calendar-component flags; defaults to all six
 * Result: {"checkpoint", "manifest", "best_epoch", "best_val_mse",
 *          "epochs_run", "steps_run", "diverged", "abort_reason",
 *          "total_params", "activated_params", "seconds"}. */
int mohets_run_train(const char* options_json, char** result_json);

/* Evaluates a checkpoint on the dataset's test split and writes metrics.csv
 * (model rows plus repeat-last and seasonal-naive baselines) and
 * manifest.json.  Options: "checkpoint" (required), "horizons" (default
 * [96,192,336,720]), "stride" (0 = the model's output chunk), "per_chunk_norm"
 * (default true), "baselines" (default true).
 * Result: {"metrics_csv", "manifest", "rows": [{"horizon", "mse", "mae",
 *          "windows", "skipped"}...], "avg_mse", "avg_mae", "baselines"}. */
int mohets_run_eval(const char* options_json, char** result_json);

/* Rolls a forecast off the end of the dataset and writes forecast.csv (one
 * row per timestamp x variate, original units) and manifest.json.  Options:
 * "checkpoint" (required), "horizon" (required), "per_chunk_norm", "plot"
 * (emit forecast_<variate>.svg per variate).
 * Result: {"forecast_csv", "manifest", "plots": [...], "iterations",
 *          "seconds"}. */
int mohets_run_forecast(const char* options_json, char** result_json);

/* Trains and evaluates every variant along one ablation axis under a shared
 * seed and writes ablation.csv plus manifest.json.  Options: "axis" of
 *   "experts"     mohets | all_mlp | all_fa | conv_mlp | conv_fa | dwconv_mlp
 *   "norm"        mixed | layernorm | rmsnorm
 *   "head"        conv_head | mlp_head
 *   "covariates"  with_covariates | without_covariates
 * plus the training options above ("preset", "model", "train", "horizons",
 * "stride").
 * Result: {"ablation_csv", "manifest", "variants": [{"label", "avg_mse",
 *          "avg_mae", "total_params", "activated_params", "fourier_params",
 *          "seconds"}...]}. */
int mohets_run_ablate(const char* options_json, char** result_json);

/* Probes analytic gradients against 64-bit central differences in two
 * stages: a battery over the tensor primitives, then the full model.
 * Options: "preset" (default "tiny"), "seed", "probes" (default 64, minimum
 * 50, for the model stage), "h" (default 1e-5), optional "out" for
 * gradcheck.json + manifest.json.  Returns MOHETS_OK whether or not the check
 * passes; the verdict lives in the result.
 * Result: {"pass", "probes", "h", "max_rel_error", "worst_parameter",
 *          "ops": {...}, "model": {...}, "seconds"}, where the top-level
 *          numbers combine both stages. */
int mohets_run_gradcheck(const char* options_json, char** result_json);

#ifdef __cplusplus
}
#endif

#endif /* MOHETS_H */
