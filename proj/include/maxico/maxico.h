/* SPDX-License-Identifier: Apache-2.0
 *
 * maxico: multi-scale text-aware segmentation with multi-axis consistency
 * training. C interface to the shared library: opaque handles, integer
 * error codes, thread-local error messages.
 *
 * Conventions:
 *   - Functions returning int return 0 on success and a nonzero error code
 *     (see MXC_ERR_*) on failure; call mxc_last_error() for the message.
 *   - Functions returning a pointer return NULL on failure.
 *   - Every created handle is released with its matching *_destroy().
 *   - Strings returned as char* are owned by the caller; free them with
 *     mxc_string_free().
 */
#ifndef MAXICO_MAXICO_H
#define MAXICO_MAXICO_H

#include <stdint.h>

#if defined(_WIN32)
#define MAXICO_API __declspec(dllexport)
#else
#define MAXICO_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

enum {
  MXC_OK = 0,
  MXC_ERR_INVALID_ARGUMENT = 1,
  MXC_ERR_IO = 2,
  MXC_ERR_STATE = 3,
  MXC_ERR_NUMERIC = 4
};

typedef struct mxc_config mxc_config;
typedef struct mxc_dataset mxc_dataset;
typedef struct mxc_trainer mxc_trainer;

/* Message for the most recent failure on this thread ("" if none). The
 * pointer stays valid until the next failing call on the same thread. */
MAXICO_API const char* mxc_last_error(void);

MAXICO_API const char* mxc_version(void);
MAXICO_API void mxc_string_free(char* s);

/* ---- configuration ------------------------------------------------- */

/* A config starts at the documented defaults. */
MAXICO_API mxc_config* mxc_config_create(void);
MAXICO_API void mxc_config_destroy(mxc_config* cfg);

/* Sets one dotted key (e.g. "train.seed", "fusion.mode"); unknown keys are
 * rejected with a message listing the valid ones. */
MAXICO_API int mxc_config_set(mxc_config* cfg, const char* key,
                              const char* value);

/* Applies a flat key-value config file ('#' comments, `key = value`). */
MAXICO_API int mxc_config_load_file(mxc_config* cfg, const char* path);

/* Canonical serialization (sorted keys); parsing it back reproduces the
 * config exactly. */
MAXICO_API char* mxc_config_to_text(const mxc_config* cfg);

MAXICO_API uint64_t mxc_config_fingerprint(const mxc_config* cfg);

/* Overrides train.seed from the MAXICO_SEED environment variable when set.
 * Returns MXC_OK whether or not the variable exists. */
MAXICO_API int mxc_config_apply_seed_env(mxc_config* cfg);

/* ---- datasets ------------------------------------------------------ */

MAXICO_API mxc_dataset* mxc_dataset_generate(int n, uint64_t seed);
MAXICO_API mxc_dataset* mxc_dataset_load(const char* dir);
MAXICO_API int mxc_dataset_export(const mxc_dataset* ds, const char* dir);
MAXICO_API int mxc_dataset_size(const mxc_dataset* ds);
MAXICO_API void mxc_dataset_destroy(mxc_dataset* ds);

/* Seeded label split: first ceil(fraction*n) of a shuffle keep their masks,
 * the rest become unlabeled. */
MAXICO_API int mxc_dataset_split_semi(const mxc_dataset* ds, double fraction,
                                      uint64_t seed, mxc_dataset** labeled,
                                      mxc_dataset** unlabeled);

/* Seeded holdout split for evaluation; both halves keep their masks. */
MAXICO_API int mxc_dataset_split_holdout(const mxc_dataset* ds,
                                         double eval_fraction, uint64_t seed,
                                         mxc_dataset** train,
                                         mxc_dataset** eval);

/* Mean foreground fraction and grid size, for summaries. */
MAXICO_API int mxc_dataset_stats(const mxc_dataset* ds, double* mean_fg,
                                 int* height, int* width);

/* ---- training ------------------------------------------------------ */

/* n_labeled/n_unlabeled size the samplers; pass 0 for n_unlabeled in a
 * fully supervised run. */
MAXICO_API mxc_trainer* mxc_trainer_create(const mxc_config* cfg,
                                           int n_labeled, int n_unlabeled);
MAXICO_API mxc_trainer* mxc_trainer_load(const char* checkpoint_path);
MAXICO_API int mxc_trainer_save(const mxc_trainer* t, const char* path);
MAXICO_API void mxc_trainer_destroy(mxc_trainer* t);

MAXICO_API int64_t mxc_trainer_step_index(const mxc_trainer* t);
MAXICO_API uint64_t mxc_trainer_fingerprint(const mxc_trainer* t);

/* Runs the remaining steps of the schedule. `unlabeled` NULL or empty
 * selects supervised training; `eval_set` enables periodic and final
 * evaluation; `log_csv` appends the metric log; `checkpoint_out` saves the
 * final state. Outputs (nullable): final held-out Dice/mIoU in percent. */
MAXICO_API int mxc_train_run(mxc_trainer* t, const mxc_dataset* labeled,
                             const mxc_dataset* unlabeled,
                             const mxc_dataset* eval_set, const char* log_csv,
                             const char* checkpoint_out, int verbose,
                             double* final_dice, double* final_miou);

/* Deterministic evaluation. beta >= 0 overrides the configured inference
 * blend; fusion_levels > 0 overrides the configured fusion cutoff. Writes
 * a flat report plus per-sample CSV when report_path is non-NULL. */
MAXICO_API int mxc_evaluate(mxc_trainer* t, const mxc_dataset* eval_set,
                            double beta, int fusion_levels,
                            const char* report_path, double* dice_percent,
                            double* miou_percent);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* MAXICO_MAXICO_H */
