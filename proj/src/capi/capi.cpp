// SPDX-License-Identifier: Apache-2.0
#include "maxico/maxico.h"

#include <cstring>
#include <fstream>
#include <new>
#include <string>

#include "config/config.hpp"
#include "data/dataset.hpp"
#include "train/evaluate.hpp"
#include "train/trainer.hpp"

using namespace maxico;

struct mxc_config {
  TrainConfig cfg;
};
struct mxc_dataset {
  Dataset ds;
};
struct mxc_trainer {
  Trainer<float> trainer;
};

namespace {

thread_local std::string g_last_error;

int set_error(const Error& e) {
  g_last_error = e.what();
  return static_cast<int>(e.code());
}

int set_error(const std::exception& e) {
  g_last_error = e.what();
  return MXC_ERR_STATE;
}

template <typename F>
int guarded(F&& f) {
  try {
    f();
    return MXC_OK;
  } catch (const Error& e) {
    return set_error(e);
  } catch (const std::exception& e) {
    return set_error(e);
  }
}

template <typename F>
auto* guarded_ptr(F&& f) {
  using R = decltype(f());
  try {
    return f();
  } catch (const Error& e) {
    set_error(e);
  } catch (const std::exception& e) {
    set_error(e);
  }
  return static_cast<R>(nullptr);
}

void require(bool ok, const char* msg) {
  check_arg(ok, msg);
}

}  // namespace

extern "C" {

const char* mxc_last_error(void) { return g_last_error.c_str(); }

const char* mxc_version(void) { return "0.1.0"; }

void mxc_string_free(char* s) { delete[] s; }

/* ---- configuration ------------------------------------------------- */

mxc_config* mxc_config_create(void) {
  return guarded_ptr([] { return new mxc_config(); });
}

void mxc_config_destroy(mxc_config* cfg) { delete cfg; }

int mxc_config_set(mxc_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    require(cfg && key && value, "null argument");
    set_config_key(cfg->cfg, key, value);
  });
}

int mxc_config_load_file(mxc_config* cfg, const char* path) {
  return guarded([&] {
    require(cfg && path, "null argument");
    apply_config_file(cfg->cfg, path);
  });
}

char* mxc_config_to_text(const mxc_config* cfg) {
  return guarded_ptr([&]() -> char* {
    require(cfg != nullptr, "null argument");
    const std::string text = config_to_text(cfg->cfg);
    char* out = new char[text.size() + 1];
    std::memcpy(out, text.c_str(), text.size() + 1);
    return out;
  });
}

uint64_t mxc_config_fingerprint(const mxc_config* cfg) {
  if (!cfg) return 0;
  return config_fingerprint(cfg->cfg);
}

int mxc_config_apply_seed_env(mxc_config* cfg) {
  return guarded([&] {
    require(cfg != nullptr, "null argument");
    apply_seed_env(cfg->cfg);
  });
}

/* ---- datasets ------------------------------------------------------ */

mxc_dataset* mxc_dataset_generate(int n, uint64_t seed) {
  return guarded_ptr([&] {
    return new mxc_dataset{generate_synthetic(n, seed)};
  });
}

mxc_dataset* mxc_dataset_load(const char* dir) {
  return guarded_ptr([&]() -> mxc_dataset* {
    require(dir != nullptr, "null argument");
    return new mxc_dataset{load_directory(dir)};
  });
}

int mxc_dataset_export(const mxc_dataset* ds, const char* dir) {
  return guarded([&] {
    require(ds && dir, "null argument");
    export_dataset(ds->ds, dir);
  });
}

int mxc_dataset_size(const mxc_dataset* ds) {
  return ds ? static_cast<int>(ds->ds.size()) : 0;
}

void mxc_dataset_destroy(mxc_dataset* ds) { delete ds; }

int mxc_dataset_split_semi(const mxc_dataset* ds, double fraction,
                           uint64_t seed, mxc_dataset** labeled,
                           mxc_dataset** unlabeled) {
  return guarded([&] {
    require(ds && labeled && unlabeled, "null argument");
    auto [lab, unlab] = split_semi(ds->ds, fraction, seed);
    *labeled = new mxc_dataset{std::move(lab)};
    *unlabeled = new mxc_dataset{std::move(unlab)};
  });
}

int mxc_dataset_split_holdout(const mxc_dataset* ds, double eval_fraction,
                              uint64_t seed, mxc_dataset** train,
                              mxc_dataset** eval) {
  return guarded([&] {
    require(ds && train && eval, "null argument");
    auto [tr, ev] = split_holdout(ds->ds, eval_fraction, seed);
    *train = new mxc_dataset{std::move(tr)};
    *eval = new mxc_dataset{std::move(ev)};
  });
}

int mxc_dataset_stats(const mxc_dataset* ds, double* mean_fg, int* height,
                      int* width) {
  return guarded([&] {
    require(ds != nullptr, "null argument");
    require(!ds->ds.empty(), "dataset is empty");
    double fg = 0;
    int n_masked = 0;
    for (const auto& s : ds->ds) {
      if (!s.has_mask) continue;
      int64_t c = 0;
      for (int64_t i = 0; i < s.mask.size(); ++i) c += s.mask[i] != 0;
      fg += static_cast<double>(c) / static_cast<double>(s.mask.size());
      ++n_masked;
    }
    if (mean_fg) *mean_fg = n_masked ? fg / n_masked : 0.0;
    if (height) *height = ds->ds[0].image.dim(0);
    if (width) *width = ds->ds[0].image.dim(1);
  });
}

/* ---- training ------------------------------------------------------ */

mxc_trainer* mxc_trainer_create(const mxc_config* cfg, int n_labeled,
                                int n_unlabeled) {
  return guarded_ptr([&]() -> mxc_trainer* {
    require(cfg != nullptr, "null argument");
    return new mxc_trainer{Trainer<float>(cfg->cfg, n_labeled, n_unlabeled)};
  });
}

mxc_trainer* mxc_trainer_load(const char* checkpoint_path) {
  return guarded_ptr([&]() -> mxc_trainer* {
    require(checkpoint_path != nullptr, "null argument");
    return new mxc_trainer{Trainer<float>::load(checkpoint_path)};
  });
}

int mxc_trainer_save(const mxc_trainer* t, const char* path) {
  return guarded([&] {
    require(t && path, "null argument");
    t->trainer.save(path);
  });
}

void mxc_trainer_destroy(mxc_trainer* t) { delete t; }

int64_t mxc_trainer_step_index(const mxc_trainer* t) {
  return t ? t->trainer.step_index() : -1;
}

uint64_t mxc_trainer_fingerprint(const mxc_trainer* t) {
  return t ? config_fingerprint(t->trainer.config()) : 0;
}

int mxc_train_run(mxc_trainer* t, const mxc_dataset* labeled,
                  const mxc_dataset* unlabeled, const mxc_dataset* eval_set,
                  const char* log_csv, const char* checkpoint_out, int verbose,
                  double* final_dice, double* final_miou) {
  return guarded([&] {
    require(t && labeled, "null argument");
    static const Dataset empty;
    const Dataset& unlab = unlabeled ? unlabeled->ds : empty;
    const Dataset& eval_ds = eval_set ? eval_set->ds : empty;
    const TrainResult r = run_training(
        t->trainer, labeled->ds, unlab, eval_ds,
        log_csv ? std::string(log_csv) : std::string(),
        checkpoint_out ? std::string(checkpoint_out) : std::string(),
        verbose != 0);
    if (final_dice) *final_dice = r.final_eval.dice_percent;
    if (final_miou) *final_miou = r.final_eval.miou_percent;
  });
}

int mxc_evaluate(mxc_trainer* t, const mxc_dataset* eval_set, double beta,
                 int fusion_levels, const char* report_path,
                 double* dice_percent, double* miou_percent) {
  return guarded([&] {
    require(t && eval_set, "null argument");
    ModelConfig model = t->trainer.config().model;
    if (beta >= 0) {
      require(beta <= 1.0, "beta must lie in [0,1]");
      model.fusion.beta_infer = beta;
    }
    if (fusion_levels > 0) model.fusion.levels = fusion_levels;
    const EvalReport report =
        evaluate(t->trainer.store(), model, eval_set->ds,
                 t->trainer.config().seed,
                 config_fingerprint(t->trainer.config()));
    if (report_path) {
      std::ofstream os(report_path);
      check(os.good(), ErrorCode::io,
            std::string("cannot write report '") + report_path + "'");
      os << "dice_percent = " << report.dice_percent << "\n"
         << "miou_percent = " << report.miou_percent << "\n"
         << "config_fingerprint = " << report.config_fingerprint << "\n"
         << "seed = " << report.seed << "\n"
         << "samples = " << report.per_sample.size() << "\n";
      os << "\nid,dice,miou\n";
      for (const auto& s : report.per_sample)
        os << s.id << ',' << s.dice << ',' << s.miou << '\n';
      check(os.good(), ErrorCode::io, "report write failed");
    }
    if (dice_percent) *dice_percent = report.dice_percent;
    if (miou_percent) *miou_percent = report.miou_percent;
  });
}

} /* extern "C" */
