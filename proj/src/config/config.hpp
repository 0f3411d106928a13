// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "core/error.hpp"
#include "core/rng.hpp"
#include "model/model_config.hpp"

namespace maxico {

// Everything a training run needs. Defaults are the documented desk-scale
// configuration; every field is reachable from the flat key-value config
// format below.
struct TrainConfig {
  ModelConfig model;  // architecture + fusion + ablation flags
  LossWeights loss;
  AxisToggles axes;
  bool ms_loss = true;  // deep-supervision terms of the supervised loss
  int batch_size = 4;
  double learning_rate = 1e-3;
  int total_steps = 300;
  int cosine_cycles = 1;  // 1 = single annealing cycle; >1 = cyclic restarts
  double clip_norm = 5.0;
  int eval_every = 50;  // 0 disables periodic evaluation
  double label_fraction = 1.0;
  uint64_t seed = 1;

  void validate() const {
    model.validate();
    model.fusion.validate();
    loss.validate();
    check_arg(batch_size >= 1, "batch_size must be >= 1");
    check_arg(learning_rate > 0, "learning_rate must be positive");
    check_arg(total_steps >= 1, "total_steps must be >= 1");
    check_arg(total_steps >= loss.warmup_steps,
              "total_steps must be >= warmup_steps");
    check_arg(cosine_cycles >= 1, "cosine_cycles must be >= 1");
    check_arg(clip_norm > 0, "clip_norm must be positive");
    check_arg(eval_every >= 0, "eval_every must be >= 0");
    check_arg(label_fraction > 0 && label_fraction <= 1,
              "label_fraction must be in (0,1]");
  }
};

namespace detail {

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw Error(ErrorCode::invalid_argument,
              "expected a boolean, got '" + v + "'");
}

inline int parse_int(const std::string& v) {
  try {
    size_t pos = 0;
    const int r = std::stoi(v, &pos);
    check_arg(pos == v.size(), "expected an integer, got '" + v + "'");
    return r;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    throw Error(ErrorCode::invalid_argument,
                "expected an integer, got '" + v + "'");
  }
}

inline double parse_real(const std::string& v) {
  try {
    size_t pos = 0;
    const double r = std::stod(v, &pos);
    check_arg(pos == v.size(), "expected a number, got '" + v + "'");
    return r;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    throw Error(ErrorCode::invalid_argument,
                "expected a number, got '" + v + "'");
  }
}

inline uint64_t parse_u64(const std::string& v) {
  try {
    // stoull silently wraps negative inputs, so reject them up front.
    check_arg(v.find('-') == std::string::npos,
              "expected an unsigned integer, got '" + v + "'");
    size_t pos = 0;
    const unsigned long long r = std::stoull(v, &pos);
    check_arg(pos == v.size(), "expected an unsigned integer, got '" + v + "'");
    return static_cast<uint64_t>(r);
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    throw Error(ErrorCode::invalid_argument,
                "expected an unsigned integer, got '" + v + "'");
  }
}

inline std::vector<int> parse_int_list(const std::string& v) {
  std::vector<int> out;
  std::istringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int(item));
  check_arg(!out.empty(), "expected a comma-separated integer list, got '" +
                              v + "'");
  return out;
}

inline std::string int_list_str(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i)
    s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

inline std::string real_str(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// The full key table. Every configurable field appears here once; the same
// table drives parsing, canonical serialization, and the fingerprint.
inline const std::map<std::string, Field>& config_fields() {
  static const std::map<std::string, Field> fields = {
      {"model.num_classes",
       {[](TrainConfig& c, const std::string& v) {
          c.model.num_classes = parse_int(v);
        },
        [](const TrainConfig& c) { return std::to_string(c.model.num_classes); }}},
      {"model.n_levels",
       {[](TrainConfig& c, const std::string& v) {
          c.model.n_levels = parse_int(v);
        },
        [](const TrainConfig& c) { return std::to_string(c.model.n_levels); }}},
      {"model.patch",
       {[](TrainConfig& c, const std::string& v) { c.model.patch = parse_int(v); },
        [](const TrainConfig& c) { return std::to_string(c.model.patch); }}},
      {"model.d_vit",
       {[](TrainConfig& c, const std::string& v) { c.model.d_vit = parse_int(v); },
        [](const TrainConfig& c) { return std::to_string(c.model.d_vit); }}},
      {"model.d_align",
       {[](TrainConfig& c, const std::string& v) {
          c.model.d_align = parse_int(v);
        },
        [](const TrainConfig& c) { return std::to_string(c.model.d_align); }}},
      {"model.d_text",
       {[](TrainConfig& c, const std::string& v) { c.model.d_text = parse_int(v); },
        [](const TrainConfig& c) { return std::to_string(c.model.d_text); }}},
      {"model.text_embed_dim",
       {[](TrainConfig& c, const std::string& v) {
          c.model.text_embed_dim = parse_int(v);
        },
        [](const TrainConfig& c) {
          return std::to_string(c.model.text_embed_dim);
        }}},
      {"model.channels",
       {[](TrainConfig& c, const std::string& v) {
          c.model.channels = parse_int_list(v);
        },
        [](const TrainConfig& c) { return int_list_str(c.model.channels); }}},
      {"model.vit_heads",
       {[](TrainConfig& c, const std::string& v) {
          c.model.vit_heads = parse_int(v);
        },
        [](const TrainConfig& c) { return std::to_string(c.model.vit_heads); }}},
      {"model.vit_frozen",
       {[](TrainConfig& c, const std::string& v) {
          c.model.vit_frozen = parse_bool(v);
        },
        [](const TrainConfig& c) {
          return c.model.vit_frozen ? "true" : "false";
        }}},
      {"model.text_frozen",
       {[](TrainConfig& c, const std::string& v) {
          c.model.text_frozen = parse_bool(v);
        },
        [](const TrainConfig& c) {
          return c.model.text_frozen ? "true" : "false";
        }}},
      {"model.multi_scale_arch",
       {[](TrainConfig& c, const std::string& v) {
          c.model.multi_scale_arch = parse_bool(v);
        },
        [](const TrainConfig& c) {
          return c.model.multi_scale_arch ? "true" : "false";
        }}},
      {"model.text_enabled",
       {[](TrainConfig& c, const std::string& v) {
          c.model.text_enabled = parse_bool(v);
        },
        [](const TrainConfig& c) {
          return c.model.text_enabled ? "true" : "false";
        }}},
      {"model.vit_cnn_fusion",
       {[](TrainConfig& c, const std::string& v) {
          c.model.vit_cnn_fusion = parse_bool(v);
        },
        [](const TrainConfig& c) {
          return c.model.vit_cnn_fusion ? "true" : "false";
        }}},
      {"fusion.mode",
       {[](TrainConfig& c, const std::string& v) {
          if (v == "npf")
            c.model.fusion.mode = FusionMode::npf;
          else if (v == "pf")
            c.model.fusion.mode = FusionMode::pf;
          else
            throw Error(ErrorCode::invalid_argument,
                        "fusion.mode must be 'npf' or 'pf', got '" + v + "'");
        },
        [](const TrainConfig& c) {
          return c.model.fusion.mode == FusionMode::npf ? "npf" : "pf";
        }}},
      {"fusion.r1",
       {[](TrainConfig& c, const std::string& v) {
          c.model.fusion.r1 = parse_real(v);
        },
        [](const TrainConfig& c) { return real_str(c.model.fusion.r1); }}},
      {"fusion.r2",
       {[](TrainConfig& c, const std::string& v) {
          c.model.fusion.r2 = parse_real(v);
        },
        [](const TrainConfig& c) { return real_str(c.model.fusion.r2); }}},
      {"fusion.beta_infer",
       {[](TrainConfig& c, const std::string& v) {
          c.model.fusion.beta_infer = parse_real(v);
        },
        [](const TrainConfig& c) { return real_str(c.model.fusion.beta_infer); }}},
      {"fusion.levels",
       {[](TrainConfig& c, const std::string& v) {
          c.model.fusion.levels = parse_int(v);
        },
        [](const TrainConfig& c) { return std::to_string(c.model.fusion.levels); }}},
      {"loss.alpha1",
       {[](TrainConfig& c, const std::string& v) { c.loss.alpha1 = parse_real(v); },
        [](const TrainConfig& c) { return real_str(c.loss.alpha1); }}},
      {"loss.alpha2",
       {[](TrainConfig& c, const std::string& v) { c.loss.alpha2 = parse_real(v); },
        [](const TrainConfig& c) { return real_str(c.loss.alpha2); }}},
      {"loss.alpha3",
       {[](TrainConfig& c, const std::string& v) { c.loss.alpha3 = parse_real(v); },
        [](const TrainConfig& c) { return real_str(c.loss.alpha3); }}},
      {"loss.lambda_max",
       {[](TrainConfig& c, const std::string& v) {
          c.loss.lambda_max = parse_real(v);
        },
        [](const TrainConfig& c) { return real_str(c.loss.lambda_max); }}},
      {"loss.warmup_steps",
       {[](TrainConfig& c, const std::string& v) {
          c.loss.warmup_steps = parse_int(v);
        },
        [](const TrainConfig& c) { return std::to_string(c.loss.warmup_steps); }}},
      {"axes.intra_model",
       {[](TrainConfig& c, const std::string& v) {
          c.axes.intra_model = parse_bool(v);
        },
        [](const TrainConfig& c) {
          return c.axes.intra_model ? "true" : "false";
        }}},
      {"axes.inter_model",
       {[](TrainConfig& c, const std::string& v) {
          c.axes.inter_model = parse_bool(v);
        },
        [](const TrainConfig& c) {
          return c.axes.inter_model ? "true" : "false";
        }}},
      {"axes.temporal",
       {[](TrainConfig& c, const std::string& v) {
          c.axes.temporal = parse_bool(v);
        },
        [](const TrainConfig& c) { return c.axes.temporal ? "true" : "false"; }}},
      {"axes.buffer_depth",
       {[](TrainConfig& c, const std::string& v) {
          c.axes.buffer_depth = parse_int(v);
        },
        [](const TrainConfig& c) { return std::to_string(c.axes.buffer_depth); }}},
      {"train.ms_loss",
       {[](TrainConfig& c, const std::string& v) { c.ms_loss = parse_bool(v); },
        [](const TrainConfig& c) { return c.ms_loss ? "true" : "false"; }}},
      {"train.batch_size",
       {[](TrainConfig& c, const std::string& v) { c.batch_size = parse_int(v); },
        [](const TrainConfig& c) { return std::to_string(c.batch_size); }}},
      {"train.learning_rate",
       {[](TrainConfig& c, const std::string& v) {
          c.learning_rate = parse_real(v);
        },
        [](const TrainConfig& c) { return real_str(c.learning_rate); }}},
      {"train.total_steps",
       {[](TrainConfig& c, const std::string& v) { c.total_steps = parse_int(v); },
        [](const TrainConfig& c) { return std::to_string(c.total_steps); }}},
      {"train.cosine_cycles",
       {[](TrainConfig& c, const std::string& v) {
          c.cosine_cycles = parse_int(v);
        },
        [](const TrainConfig& c) { return std::to_string(c.cosine_cycles); }}},
      {"train.clip_norm",
       {[](TrainConfig& c, const std::string& v) { c.clip_norm = parse_real(v); },
        [](const TrainConfig& c) { return real_str(c.clip_norm); }}},
      {"train.eval_every",
       {[](TrainConfig& c, const std::string& v) { c.eval_every = parse_int(v); },
        [](const TrainConfig& c) { return std::to_string(c.eval_every); }}},
      {"train.label_fraction",
       {[](TrainConfig& c, const std::string& v) {
          c.label_fraction = parse_real(v);
        },
        [](const TrainConfig& c) { return real_str(c.label_fraction); }}},
      {"train.seed",
       {[](TrainConfig& c, const std::string& v) { c.seed = parse_u64(v); },
        [](const TrainConfig& c) { return std::to_string(c.seed); }}},
  };
  return fields;
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : detail::config_fields()) keys.push_back(k);
  return keys;
}

inline void set_config_key(TrainConfig& cfg, const std::string& key,
                           const std::string& value) {
  const auto& fields = detail::config_fields();
  auto it = fields.find(key);
  if (it == fields.end()) {
    std::string msg = "unknown config key '" + key + "'; valid keys:";
    for (const auto& [k, _] : fields) msg += "\n  " + k;
    throw Error(ErrorCode::invalid_argument, msg);
  }
  it->second.set(cfg, value);
}

// Flat `key = value` text; '#' starts a comment, blank lines ignored,
// unknown keys rejected.
inline void apply_config_text(TrainConfig& cfg, const std::string& text,
                              const std::string& origin = "<config>") {
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    line = strip(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    check_arg(eq != std::string::npos,
              origin + ":" + std::to_string(line_no) +
                  ": expected 'key = value'");
    set_config_key(cfg, strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
  }
}

inline void apply_config_file(TrainConfig& cfg, const std::string& path) {
  std::ifstream f(path);
  check(f.good(), ErrorCode::io, "cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  apply_config_text(cfg, ss.str(), path);
}

// Canonical serialization: every key in sorted order. Parsing this text
// back reproduces the config exactly.
inline std::string config_to_text(const TrainConfig& cfg) {
  std::ostringstream os;
  for (const auto& [k, f] : detail::config_fields())
    os << k << " = " << f.get(cfg) << "\n";
  return os.str();
}

inline uint64_t config_fingerprint(const TrainConfig& cfg) {
  return fnv1a(config_to_text(cfg));
}

// MAXICO_SEED overrides the configured seed when set.
inline void apply_seed_env(TrainConfig& cfg) {
  if (const char* env = std::getenv("MAXICO_SEED"))
    cfg.seed = detail::parse_u64(env);
}

}  // namespace maxico
