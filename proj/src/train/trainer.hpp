// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "config/config.hpp"
#include "core/autodiff.hpp"
#include "core/params.hpp"
#include "core/rng.hpp"
#include "core/serialize.hpp"
#include "data/dataset.hpp"
#include "model/consistency.hpp"
#include "model/losses.hpp"
#include "model/network.hpp"
#include "model/vocab.hpp"
#include "train/evaluate.hpp"
#include "train/optimizer.hpp"

namespace maxico {

struct StepStats {
  int64_t step = 0;  // index of the step just taken
  double l_sup = 0;
  double l_unsup = 0;
  double lambda = 0;
  double beta = 0;
  double lr = 0;
  double grad_norm = 0;
};

inline constexpr char kCheckpointMagic[4] = {'M', 'X', 'C', 'K'};
inline constexpr uint32_t kCheckpointVersion = 1;

// Owns everything a run needs: parameters, optimizer, the named RNG
// streams, batch samplers, and the temporal buffer. All randomness flows
// through the named streams, so a supervised run and a lambda_max=0
// semi-supervised run consume identical values.
template <typename T>
class Trainer {
 public:
  Trainer(TrainConfig cfg, int n_labeled, int n_unlabeled)
      : cfg_(std::move(cfg)),
        store_(mix_seed(cfg_.seed, "init")),
        buffer_(cfg_.axes.buffer_depth) {
    cfg_.validate();
    configure_frozen(store_, cfg_.model);
    beta_rng_ = named_stream(cfg_.seed, "beta");
    aug_labeled_rng_ = named_stream(cfg_.seed, "augment.labeled");
    aug_unlabeled_rng_ = named_stream(cfg_.seed, "augment.unlabeled");
    labeled_sampler_ =
        BatchSampler(n_labeled, named_stream(cfg_.seed, "data.labeled"));
    if (n_unlabeled > 0) {
      unlabeled_sampler_ =
          BatchSampler(n_unlabeled, named_stream(cfg_.seed, "data.unlabeled"));
      has_unlabeled_sampler_ = true;
    }
  }

  const TrainConfig& config() const { return cfg_; }
  ParamStore<T>& store() { return store_; }
  const ParamStore<T>& store() const { return store_; }
  int64_t step_index() const { return step_; }
  const TemporalBuffer<T>& buffer() const { return buffer_; }

  // One supervised step over a labeled batch (Adam + cosine schedule).
  StepStats step_supervised(const Dataset& labeled) {
    StepStats st = begin_step();
    std::map<std::string, Tensor<T>> grads;
    st.l_sup = labeled_half(labeled, st.beta, grads);
    finish_step(st, grads);
    return st;
  }

  // One semi-supervised step: labeled half as above; unlabeled half builds
  // the pseudo-label by hardening + voting the condition set (no-gradient
  // path) and pulls current contributors toward it, weighted by the
  // warm-up lambda. With lambda_max = 0 the unlabeled path is skipped
  // entirely and the step is bit-identical to step_supervised.
  StepStats step_semi(const Dataset& labeled, const Dataset& unlabeled) {
    check_arg(!unlabeled.empty(), "step_semi requires unlabeled samples");
    check(has_unlabeled_sampler_, ErrorCode::state,
          "trainer was constructed without an unlabeled sampler");
    check_arg(static_cast<int>(unlabeled.size()) == unlabeled_sampler_.size(),
              "unlabeled dataset size does not match the trainer's sampler");
    StepStats st = begin_step();
    std::map<std::string, Tensor<T>> grads;
    st.l_sup = labeled_half(labeled, st.beta, grads);
    st.lambda = lambda_schedule(step_, cfg_.loss);
    if (cfg_.loss.lambda_max != 0.0) {
      const D4 sigma = sample_d4(aug_unlabeled_rng_);
      const auto idx = unlabeled_sampler_.next(cfg_.batch_size);
      double l_unsup_sum = 0;
      // Buffer writes are deferred past the batch loop: a sample drawn twice
      // in one batch (epoch boundary) must not vote on its own prediction
      // from earlier in the same step.
      std::map<std::string, Tensor<T>> pending_store;
      for (const int i : idx) {
        const Sample& s = unlabeled[static_cast<size_t>(i)];
        ad::Graph<T> g;
        Ctx<T> ctx{g, store_, /*training=*/true};
        auto bundle = forward_network(
            ctx, d4_apply(s.image, sigma).template cast<T>(),
            tokenize_caption(s.caption), cfg_.model, st.beta);
        // Buffered labels live in the canonical frame; bring them into this
        // step's augmentation frame before they join the vote.
        std::vector<Tensor<T>> hist;
        if (cfg_.axes.temporal)
          for (const auto& h : buffer_.fetch(s.id, step_))
            hist.push_back(d4_apply(h, sigma));
        auto theta = enumerate_conditions(cfg_.axes, bundle, hist);
        auto pseudo = pseudo_label(theta);
        auto l_u = unsupervised_loss(current_outputs(theta), pseudo);
        const double lv = static_cast<double>(l_u.val()[0]);
        check(!std::isnan(lv), ErrorCode::numeric,
              "NaN unsupervised loss at step " + std::to_string(step_));
        l_unsup_sum += lv;
        ad::backward(ad::scale(
            l_u, static_cast<T>(st.lambda / cfg_.batch_size)));
        ctx.accumulate_grads(grads);
        if (cfg_.axes.temporal)
          pending_store[s.id] = d4_apply_inverse(bundle.p.val(), sigma);
      }
      if (cfg_.axes.temporal)
        for (auto& [id, probs] : pending_store)
          buffer_.store(id, std::move(probs), step_);
      st.l_unsup = l_unsup_sum / cfg_.batch_size;
    }
    finish_step(st, grads);
    return st;
  }

  EvalReport evaluate_now(const Dataset& eval_set) {
    return evaluate(store_, cfg_.model, eval_set, cfg_.seed,
                    config_fingerprint(cfg_));
  }

  // ------------------------------------------------------------------
  // Checkpointing: single binary file, versioned, bit-exact round-trip.
  // Layout (little-endian): magic "MXCK", version u32, fingerprint u64,
  // canonical config text, step i64, parameters, Adam state, RNG streams,
  // samplers, temporal buffer.
  // ------------------------------------------------------------------
  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    check(os.good(), ErrorCode::io, "cannot write checkpoint '" + path + "'");
    os.write(kCheckpointMagic, 4);
    io::write_pod<uint32_t>(os, kCheckpointVersion);
    io::write_pod<uint64_t>(os, config_fingerprint(cfg_));
    io::write_string(os, config_to_text(cfg_));
    io::write_pod<int64_t>(os, step_);
    io::write_pod<uint64_t>(os, store_.entries().size());
    for (const auto& [name, e] : store_.entries()) {
      io::write_string(os, name);
      io::write_pod<uint8_t>(os, e.trainable ? 1 : 0);
      io::write_tensor(os, e.value);
    }
    adam_.serialize(os);
    io::write_string(os, beta_rng_.serialize());
    io::write_string(os, aug_labeled_rng_.serialize());
    io::write_string(os, aug_unlabeled_rng_.serialize());
    labeled_sampler_.serialize(os);
    io::write_pod<uint8_t>(os, has_unlabeled_sampler_ ? 1 : 0);
    if (has_unlabeled_sampler_) unlabeled_sampler_.serialize(os);
    buffer_.serialize(os);
    check(os.good(), ErrorCode::io, "write failed for '" + path + "'");
  }

  static Trainer load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check(is.good(), ErrorCode::io, "cannot read checkpoint '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    check(is.good() && std::equal(magic, magic + 4, kCheckpointMagic),
          ErrorCode::io, "'" + path + "' is not a checkpoint file");
    const auto version = io::read_pod<uint32_t>(is);
    check(version == kCheckpointVersion, ErrorCode::io,
          "checkpoint version " + std::to_string(version) +
              " unsupported (expected " + std::to_string(kCheckpointVersion) +
              ")");
    const auto fingerprint = io::read_pod<uint64_t>(is);
    TrainConfig cfg;
    apply_config_text(cfg, io::read_string(is), path);
    check(config_fingerprint(cfg) == fingerprint, ErrorCode::io,
          "checkpoint fingerprint does not match its embedded config");
    Trainer t(cfg, /*n_labeled=*/1, /*n_unlabeled=*/0);
    t.step_ = io::read_pod<int64_t>(is);
    const auto n_params = io::read_pod<uint64_t>(is);
    for (uint64_t i = 0; i < n_params; ++i) {
      const std::string name = io::read_string(is);
      const bool trainable = io::read_pod<uint8_t>(is) != 0;
      Tensor<T> value = io::read_tensor<T>(is);
      auto& e = t.store_.fetch(name, value.shape(), Init::zeros());
      e.value = std::move(value);
      e.trainable = trainable;
    }
    t.adam_.deserialize(is);
    t.beta_rng_.deserialize(io::read_string(is));
    t.aug_labeled_rng_.deserialize(io::read_string(is));
    t.aug_unlabeled_rng_.deserialize(io::read_string(is));
    t.labeled_sampler_.deserialize(is);
    t.has_unlabeled_sampler_ = io::read_pod<uint8_t>(is) != 0;
    if (t.has_unlabeled_sampler_) t.unlabeled_sampler_.deserialize(is);
    t.buffer_ = TemporalBuffer<T>::deserialize(is);
    return t;
  }

  bool state_equal(const Trainer& o) const {
    if (step_ != o.step_ || !adam_.state_equal(o.adam_)) return false;
    if (store_.entries().size() != o.store_.entries().size()) return false;
    for (const auto& [name, e] : store_.entries()) {
      auto it = o.store_.entries().find(name);
      if (it == o.store_.entries().end()) return false;
      if (e.trainable != it->second.trainable) return false;
      if (!bit_equal(e.value, it->second.value)) return false;
    }
    return beta_rng_.serialize() == o.beta_rng_.serialize() &&
           aug_labeled_rng_.serialize() == o.aug_labeled_rng_.serialize() &&
           aug_unlabeled_rng_.serialize() == o.aug_unlabeled_rng_.serialize() &&
           buffer_ == o.buffer_;
  }

 private:
  StepStats begin_step() {
    check(step_ < cfg_.total_steps, ErrorCode::state,
          "training already ran for total_steps");
    StepStats st;
    st.step = step_;
    st.lr = cosine_lr(cfg_.learning_rate, step_, cfg_.total_steps,
                      cfg_.cosine_cycles);
    st.beta = cfg_.model.fusion.mode == FusionMode::npf
                  ? sample_beta(cfg_.model.fusion, beta_rng_)
                  : cfg_.model.fusion.beta_infer;
    return st;
  }

  double labeled_half(const Dataset& labeled, double beta,
                      std::map<std::string, Tensor<T>>& grads) {
    check_arg(static_cast<int>(labeled.size()) == labeled_sampler_.size(),
              "labeled dataset size does not match the trainer's sampler");
    const auto idx = labeled_sampler_.next(cfg_.batch_size);
    double l_sum = 0;
    for (const int i : idx) {
      const Sample& s = labeled[static_cast<size_t>(i)];
      check_arg(s.has_mask, "labeled sample '" + s.id + "' has no mask");
      const Sample aug = augment(s, aug_labeled_rng_);
      ad::Graph<T> g;
      Ctx<T> ctx{g, store_, /*training=*/true};
      auto bundle =
          forward_network(ctx, aug.image.template cast<T>(),
                          tokenize_caption(aug.caption), cfg_.model, beta);
      auto loss =
          multiscale_supervised_loss(bundle, aug.mask, cfg_.loss, cfg_.ms_loss);
      const double lv = static_cast<double>(loss.val()[0]);
      check(!std::isnan(lv), ErrorCode::numeric,
            "NaN supervised loss at step " + std::to_string(step_));
      l_sum += lv;
      ad::backward(ad::scale(loss, T(1) / static_cast<T>(cfg_.batch_size)));
      ctx.accumulate_grads(grads);
    }
    return l_sum / cfg_.batch_size;
  }

  void finish_step(StepStats& st, std::map<std::string, Tensor<T>>& grads) {
    st.grad_norm = adam_.step(store_, grads, st.lr, cfg_.clip_norm);
    ++step_;
  }

  TrainConfig cfg_;
  ParamStore<T> store_;
  Adam<T> adam_;
  int64_t step_ = 0;
  Rng beta_rng_, aug_labeled_rng_, aug_unlabeled_rng_;
  BatchSampler labeled_sampler_, unlabeled_sampler_;
  bool has_unlabeled_sampler_ = false;
  TemporalBuffer<T> buffer_;
};

// ---------------------------------------------------------------------------
// Run loops: CSV metric log (step,l_sup,l_unsup,lambda,beta,dice_eval,
// miou_eval; eval columns filled on eval steps only) plus a final
// checkpoint. Returns the last evaluation report.
// ---------------------------------------------------------------------------

struct TrainResult {
  EvalReport final_eval;
  double first_loss = 0, last_loss = 0;
};

namespace detail {

class MetricLog {
 public:
  MetricLog() = default;
  explicit MetricLog(const std::string& path) {
    if (path.empty()) return;
    const bool fresh = !std::ifstream(path).good();
    os_.open(path, std::ios::app);
    check(os_.good(), ErrorCode::io, "cannot open metric log '" + path + "'");
    if (fresh)
      os_ << "step,l_sup,l_unsup,lambda,beta,dice_eval,miou_eval\n";
  }
  void row(const StepStats& st, const EvalReport* eval) {
    if (!os_.is_open()) return;
    os_ << st.step << ',' << st.l_sup << ',' << st.l_unsup << ',' << st.lambda
        << ',' << st.beta << ',';
    if (eval) os_ << eval->dice_percent;
    os_ << ',';
    if (eval) os_ << eval->miou_percent;
    os_ << '\n';
    os_.flush();
  }

 private:
  std::ofstream os_;
};

}  // namespace detail

template <typename T>
TrainResult run_training(Trainer<T>& trainer, const Dataset& labeled,
                         const Dataset& unlabeled, const Dataset& eval_set,
                         const std::string& log_path = "",
                         const std::string& checkpoint_path = "",
                         bool verbose = false) {
  const TrainConfig& cfg = trainer.config();
  check(trainer.step_index() < cfg.total_steps, ErrorCode::state,
        "training already ran for total_steps");
  const bool semi = !unlabeled.empty();
  detail::MetricLog log(log_path);
  TrainResult result;
  for (int64_t s = trainer.step_index(); s < cfg.total_steps; ++s) {
    const StepStats st = semi ? trainer.step_semi(labeled, unlabeled)
                              : trainer.step_supervised(labeled);
    if (st.step == 0) result.first_loss = st.l_sup;
    result.last_loss = st.l_sup;
    const bool eval_now =
        !eval_set.empty() &&
        ((cfg.eval_every > 0 && (st.step + 1) % cfg.eval_every == 0) ||
         st.step + 1 == cfg.total_steps);
    EvalReport report;
    if (eval_now) report = trainer.evaluate_now(eval_set);
    log.row(st, eval_now ? &report : nullptr);
    if (eval_now) result.final_eval = report;
    if (verbose && (eval_now || st.step % 10 == 0)) {
      std::cerr << "step " << st.step << " l_sup " << st.l_sup;
      if (semi) std::cerr << " l_unsup " << st.l_unsup << " lambda " << st.lambda;
      if (eval_now)
        std::cerr << " dice " << report.dice_percent << " miou "
                  << report.miou_percent;
      std::cerr << "\n";
    }
  }
  if (!checkpoint_path.empty()) trainer.save(checkpoint_path);
  return result;
}

template <typename T>
TrainResult train_supervised(const TrainConfig& cfg, const Dataset& labeled,
                             const Dataset& eval_set,
                             const std::string& log_path = "",
                             const std::string& checkpoint_path = "",
                             bool verbose = false) {
  Trainer<T> trainer(cfg, static_cast<int>(labeled.size()), 0);
  return run_training(trainer, labeled, Dataset{}, eval_set, log_path,
                      checkpoint_path, verbose);
}

template <typename T>
TrainResult train_semi(const TrainConfig& cfg, const Dataset& labeled,
                       const Dataset& unlabeled, const Dataset& eval_set,
                       const std::string& log_path = "",
                       const std::string& checkpoint_path = "",
                       bool verbose = false) {
  check_arg(!labeled.empty() && !unlabeled.empty(),
            "train_semi requires both labeled and unlabeled samples");
  Trainer<T> trainer(cfg, static_cast<int>(labeled.size()),
                     static_cast<int>(unlabeled.size()));
  return run_training(trainer, labeled, unlabeled, eval_set, log_path,
                      checkpoint_path, verbose);
}

}  // namespace maxico
