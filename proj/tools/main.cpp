// maxico command-line tool: dataset generation, training, evaluation,
// ablation grids, and inference-time sweeps. Talks to the engine purely
// through the C API in maxico/maxico.h.
//
// Exit codes: 0 success, 2 usage/config error, 1 runtime failure.
#include <maxico/maxico.h>

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace fs = std::filesystem;

namespace {

// ---- error plumbing --------------------------------------------------

// Bad invocation or bad config input -> exit 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Failure while doing the work -> exit 1.
struct RuntimeFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

[[noreturn]] void fail_api(const std::string& what) {
  throw RuntimeFailure(what + ": " + mxc_last_error());
}

// ---- RAII over the C handles ------------------------------------------

struct ConfigDeleter {
  void operator()(mxc_config* p) const { mxc_config_destroy(p); }
};
struct DatasetDeleter {
  void operator()(mxc_dataset* p) const { mxc_dataset_destroy(p); }
};
struct TrainerDeleter {
  void operator()(mxc_trainer* p) const { mxc_trainer_destroy(p); }
};
using ConfigPtr = std::unique_ptr<mxc_config, ConfigDeleter>;
using DatasetPtr = std::unique_ptr<mxc_dataset, DatasetDeleter>;
using TrainerPtr = std::unique_ptr<mxc_trainer, TrainerDeleter>;

// ---- small utilities ---------------------------------------------------

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

std::string hex64(uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "0x%016llx",
                static_cast<unsigned long long>(v));
  return buf;
}

std::vector<uint64_t> parse_seed_list(const std::string& text) {
  std::vector<uint64_t> seeds;
  std::istringstream in(text);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) continue;
    try {
      size_t used = 0;
      seeds.push_back(std::stoull(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw UsageError("--seeds expects comma-separated integers, got '" +
                       tok + "'");
    }
  }
  if (seeds.empty()) throw UsageError("--seeds parsed to an empty list");
  return seeds;
}

double mean_of(const std::vector<double>& xs) {
  double s = 0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

double sample_sd(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double mu = mean_of(xs);
  double acc = 0;
  for (double x : xs) acc += (x - mu) * (x - mu);
  return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

// Re-assembles the invocation for the manifest (naively quoting args that
// contain whitespace); the manifest alone is enough to replay a command.
std::string replay_line(int argc, char** argv) {
  std::string out;
  for (int i = 1; i < argc; ++i) {
    if (i > 1) out += ' ';
    const std::string a = argv[i];
    if (a.find_first_of(" \t") != std::string::npos)
      out += '\'' + a + '\'';
    else
      out += a;
  }
  return out;
}

// ---- config helpers ------------------------------------------------------

std::string config_text(const mxc_config* cfg) {
  char* s = mxc_config_to_text(cfg);
  if (!s) fail_api("serializing config");
  std::string text(s);
  mxc_string_free(s);
  return text;
}

// Reads one value back out of the canonical serialization.
std::string config_get(const mxc_config* cfg, const std::string& key) {
  std::istringstream in(config_text(cfg));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    if (trim(line.substr(0, eq)) == key) return trim(line.substr(eq + 1));
  }
  throw RuntimeFailure("key '" + key + "' missing from config serialization");
}

void set_key(mxc_config* cfg, const std::string& key,
             const std::string& value) {
  if (mxc_config_set(cfg, key.c_str(), value.c_str()) != MXC_OK)
    throw UsageError(mxc_last_error());
}

struct ConfigArgs {
  std::string file;               // --config
  std::vector<std::string> sets;  // --set key=value (applied in order)
};

// Resolution order: defaults -> --config file -> --set pairs -> MAXICO_SEED
// -> per-command overrides (label fraction, grid row flags, per-run seed).
ConfigPtr resolve_config(
    const ConfigArgs& args,
    const std::vector<std::pair<std::string, std::string>>& overrides) {
  ConfigPtr cfg(mxc_config_create());
  if (!cfg) fail_api("creating config");
  if (!args.file.empty() &&
      mxc_config_load_file(cfg.get(), args.file.c_str()) != MXC_OK)
    throw UsageError(mxc_last_error());
  for (const auto& kv : args.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw UsageError("--set expects key=value, got '" + kv + "'");
    set_key(cfg.get(), trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  if (mxc_config_apply_seed_env(cfg.get()) != MXC_OK)
    throw UsageError(mxc_last_error());
  for (const auto& [k, v] : overrides) set_key(cfg.get(), k, v);
  return cfg;
}

// ---- artifacts ----------------------------------------------------------

void write_manifest(const fs::path& dir, const std::string& replay,
                    const mxc_config* cfg, const std::string& seeds) {
  fs::create_directories(dir);
  std::ofstream os(dir / "manifest.txt");
  if (!os) throw RuntimeFailure("cannot write manifest under " + dir.string());
  os << "# maxico experiment manifest; replay with:\n"
     << "#   maxico " << replay << "\n"
     << "command = " << replay << "\n";
  if (!seeds.empty()) os << "seeds = " << seeds << "\n";
  if (cfg) {
    os << "config_fingerprint = " << hex64(mxc_config_fingerprint(cfg))
       << "\n\n# resolved configuration\n"
       << config_text(cfg);
  }
  if (!os.good()) throw RuntimeFailure("manifest write failed");
}

// Minimal deterministic SVG line chart: one x axis, named series, legend.
void write_line_chart_svg(
    const fs::path& path, const std::string& title, const std::string& x_label,
    const std::vector<double>& xs,
    const std::vector<std::pair<std::string, std::vector<double>>>& series) {
  const double width = 640, height = 420;
  const double ml = 70, mr = 30, mt = 48, mb = 56;
  const double pw = width - ml - mr, ph = height - mt - mb;

  double x_lo = xs.front(), x_hi = xs.front();
  for (double x : xs) {
    x_lo = std::min(x_lo, x);
    x_hi = std::max(x_hi, x);
  }
  if (x_hi - x_lo < 1e-12) {
    x_lo -= 0.5;
    x_hi += 0.5;
  }
  double y_lo = series.front().second.front(), y_hi = y_lo;
  for (const auto& [name, ys] : series)
    for (double y : ys) {
      y_lo = std::min(y_lo, y);
      y_hi = std::max(y_hi, y);
    }
  const double pad = std::max(1e-3, (y_hi - y_lo) * 0.08);
  y_lo -= pad;
  y_hi += pad;

  const auto px = [&](double x) {
    return ml + (x - x_lo) / (x_hi - x_lo) * pw;
  };
  const auto py = [&](double y) {
    return mt + ph - (y - y_lo) / (y_hi - y_lo) * ph;
  };
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};

  std::ofstream os(path);
  if (!os) throw RuntimeFailure("cannot write plot '" + path.string() + "'");
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
     << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
     << height << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" "
        "font-family=\"sans-serif\" font-size=\"15\">"
     << title << "</text>\n";

  for (int i = 0; i <= 4; ++i) {
    const double fx = x_lo + (x_hi - x_lo) * i / 4.0;
    const double fy = y_lo + (y_hi - y_lo) * i / 4.0;
    const double gx = px(fx), gy = py(fy);
    os << "<line x1=\"" << gx << "\" y1=\"" << mt << "\" x2=\"" << gx
       << "\" y2=\"" << mt + ph << "\" stroke=\"#dddddd\"/>\n"
       << "<line x1=\"" << ml << "\" y1=\"" << gy << "\" x2=\"" << ml + pw
       << "\" y2=\"" << gy << "\" stroke=\"#dddddd\"/>\n"
       << "<text x=\"" << gx << "\" y=\"" << mt + ph + 18
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
          "font-size=\"11\">"
       << fmt("%.4g", fx) << "</text>\n"
       << "<text x=\"" << ml - 8 << "\" y=\"" << gy + 4
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
          "font-size=\"11\">"
       << fmt("%.4g", fy) << "</text>\n";
  }
  os << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw
     << "\" height=\"" << ph << "\" fill=\"none\" stroke=\"#333333\"/>\n"
     << "<text x=\"" << ml + pw / 2 << "\" y=\"" << height - 14
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        "font-size=\"13\">"
     << x_label << "</text>\n";

  for (size_t s = 0; s < series.size(); ++s) {
    const auto& [name, ys] = series[s];
    const char* color = colors[s % 4];
    os << "<polyline fill=\"none\" stroke=\"" << color
       << "\" stroke-width=\"2\" points=\"";
    for (size_t i = 0; i < xs.size(); ++i)
      os << px(xs[i]) << ',' << py(ys[i]) << ' ';
    os << "\"/>\n";
    for (size_t i = 0; i < xs.size(); ++i)
      os << "<circle cx=\"" << px(xs[i]) << "\" cy=\"" << py(ys[i])
         << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    const double ly = mt + 16 + 16 * static_cast<double>(s);
    os << "<line x1=\"" << ml + pw - 120 << "\" y1=\"" << ly << "\" x2=\""
       << ml + pw - 96 << "\" y2=\"" << ly << "\" stroke=\"" << color
       << "\" stroke-width=\"2\"/>\n"
       << "<text x=\"" << ml + pw - 90 << "\" y=\"" << ly + 4
       << "\" font-family=\"sans-serif\" font-size=\"12\">" << name
       << "</text>\n";
  }
  os << "</svg>\n";
  if (!os.good()) throw RuntimeFailure("plot write failed");
}

// ---- shared run plumbing -------------------------------------------------

DatasetPtr load_dataset(const std::string& dir) {
  DatasetPtr ds(mxc_dataset_load(dir.c_str()));
  if (!ds) fail_api("loading dataset '" + dir + "'");
  return ds;
}

int dataset_size(const mxc_dataset* ds) {
  const int n = mxc_dataset_size(ds);
  if (n < 0) fail_api("querying dataset size");
  return n;
}

struct RunResult {
  double dice = 0;
  double miou = 0;
};

// One training run: optional holdout split, label split, train, final eval.
// All artifacts (config.txt, metrics.csv, checkpoint.mxc) land in out_dir.
RunResult run_one_training(const mxc_config* cfg, const mxc_dataset* data,
                           const mxc_dataset* eval_override,
                           double eval_fraction, bool semi,
                           const fs::path& out_dir, bool verbose) {
  const uint64_t seed = std::stoull(config_get(cfg, "train.seed"));
  const double label_fraction =
      std::stod(config_get(cfg, "train.label_fraction"));

  DatasetPtr train_own, eval_own;
  const mxc_dataset* train_part = data;
  const mxc_dataset* eval_part = eval_override;
  if (!eval_part) {
    mxc_dataset *tr = nullptr, *ev = nullptr;
    if (mxc_dataset_split_holdout(data, eval_fraction, seed, &tr, &ev) !=
        MXC_OK)
      fail_api("holdout split");
    train_own.reset(tr);
    eval_own.reset(ev);
    train_part = tr;
    eval_part = ev;
  }

  mxc_dataset *lab = nullptr, *unlab = nullptr;
  if (mxc_dataset_split_semi(train_part, label_fraction, seed, &lab, &unlab) !=
      MXC_OK)
    fail_api("label split");
  DatasetPtr labeled(lab), unlabeled(unlab);

  TrainerPtr trainer(mxc_trainer_create(
      cfg, dataset_size(labeled.get()),
      semi ? dataset_size(unlabeled.get()) : 0));
  if (!trainer) fail_api("creating trainer");

  fs::create_directories(out_dir);
  {
    std::ofstream os(out_dir / "config.txt");
    os << config_text(cfg);
    if (!os.good())
      throw RuntimeFailure("cannot write " + (out_dir / "config.txt").string());
  }
  const std::string log = (out_dir / "metrics.csv").string();
  const std::string ckpt = (out_dir / "checkpoint.mxc").string();

  RunResult r;
  if (mxc_train_run(trainer.get(), labeled.get(),
                    semi ? unlabeled.get() : nullptr, eval_part, log.c_str(),
                    ckpt.c_str(), verbose ? 1 : 0, &r.dice, &r.miou) != MXC_OK)
    fail_api("training");
  return r;
}

double label_fraction_from_percent(int labels) {
  return static_cast<double>(labels) / 100.0;
}

// ---- commands -------------------------------------------------------------

struct GenerateOpts {
  int n = 0;
  uint64_t seed = 1;
  std::string out;
  bool force = false;
};

int cmd_generate(const GenerateOpts& o, const std::string& replay) {
  const fs::path out(o.out);
  if (fs::exists(out) && fs::is_directory(out) && !fs::is_empty(out) &&
      !o.force)
    throw RuntimeFailure("output directory '" + o.out +
                         "' is not empty; pass --force to write anyway");
  DatasetPtr ds(mxc_dataset_generate(o.n, o.seed));
  if (!ds) fail_api("generating dataset");
  fs::create_directories(out);
  if (mxc_dataset_export(ds.get(), o.out.c_str()) != MXC_OK)
    fail_api("exporting dataset");
  double mean_fg = 0;
  int h = 0, w = 0;
  if (mxc_dataset_stats(ds.get(), &mean_fg, &h, &w) != MXC_OK)
    fail_api("computing dataset stats");
  write_manifest(out, replay, nullptr, "");
  std::cout << "wrote " << o.n << " samples (" << h << "x" << w << ") to "
            << o.out << "; mean foreground fraction "
            << fmt("%.4f", mean_fg) << "\n";
  return 0;
}

struct TrainOpts {
  std::string data, out, eval_data;
  ConfigArgs config;
  int labels = 0;  // 0 = use config label_fraction
  std::string mode = "full";
  double eval_fraction = 0.25;
  bool quiet = false;
};

int cmd_train(const TrainOpts& o, const std::string& replay) {
  std::vector<std::pair<std::string, std::string>> overrides;
  if (o.labels > 0)
    overrides.emplace_back(
        "train.label_fraction",
        fmt("%.17g", label_fraction_from_percent(o.labels)));
  ConfigPtr cfg = resolve_config(o.config, overrides);

  DatasetPtr data = load_dataset(o.data);
  DatasetPtr eval_ds;
  if (!o.eval_data.empty()) eval_ds = load_dataset(o.eval_data);

  write_manifest(o.out, replay, cfg.get(), config_get(cfg.get(), "train.seed"));
  const RunResult r =
      run_one_training(cfg.get(), data.get(), eval_ds.get(), o.eval_fraction,
                       o.mode == "semi", o.out, !o.quiet);
  std::cout << "final: dice=" << fmt("%.4f", r.dice)
            << " miou=" << fmt("%.4f", r.miou)
            << " (percent); checkpoint=" << (fs::path(o.out) / "checkpoint.mxc").string()
            << "\n";
  return 0;
}

struct EvalOpts {
  std::string checkpoint, data, out;
  ConfigArgs config;
  double beta = -1.0;
  int fusion_levels = 0;
};

int cmd_eval(const EvalOpts& o, const std::string& replay) {
  TrainerPtr trainer(mxc_trainer_load(o.checkpoint.c_str()));
  if (!trainer) fail_api("loading checkpoint '" + o.checkpoint + "'");

  if (!o.config.file.empty() || !o.config.sets.empty()) {
    ConfigPtr expect = resolve_config(o.config, {});
    const uint64_t want = mxc_config_fingerprint(expect.get());
    const uint64_t got = mxc_trainer_fingerprint(trainer.get());
    if (want != got)
      throw RuntimeFailure("config fingerprint mismatch: checkpoint has " +
                           hex64(got) + ", supplied config resolves to " +
                           hex64(want));
  }

  DatasetPtr data = load_dataset(o.data);
  std::string report_path;
  if (!o.out.empty()) {
    write_manifest(o.out, replay, nullptr, "");
    report_path = (fs::path(o.out) / "report.txt").string();
  }
  double dice = 0, miou = 0;
  if (mxc_evaluate(trainer.get(), data.get(), o.beta, o.fusion_levels,
                   report_path.empty() ? nullptr : report_path.c_str(), &dice,
                   &miou) != MXC_OK)
    fail_api("evaluating");
  std::cout << "dice=" << fmt("%.4f", dice) << " miou=" << fmt("%.4f", miou)
            << " (percent, " << dataset_size(data.get()) << " samples)\n";
  return 0;
}

struct AblateOpts {
  std::string study, data, out;
  ConfigArgs config;
  std::string seeds = "1,2,3";
  int labels = 0;  // 0 = per-study default
  double eval_fraction = 0.25;
  bool quiet = false;
};

struct GridRow {
  std::string name;
  std::vector<std::pair<std::string, std::string>> flags;
  std::vector<int> flag_bits;
  bool semi = false;
};

int cmd_ablate(const AblateOpts& o, const std::string& replay) {
  std::vector<GridRow> rows;
  std::vector<std::string> flag_columns;
  int default_labels = 100;

  if (o.study == "modules") {
    flag_columns = {"multi_scale", "text", "fusion", "ms_loss"};
    const auto row = [](std::string name, bool ms, bool text, bool fus,
                        bool msl) {
      const auto b = [](bool v) { return std::string(v ? "true" : "false"); };
      return GridRow{std::move(name),
                     {{"model.multi_scale_arch", b(ms)},
                      {"model.text_enabled", b(text)},
                      {"model.vit_cnn_fusion", b(fus)},
                      {"train.ms_loss", b(msl)}},
                     {ms, text, fus, msl},
                     false};
    };
    rows = {row("baseline", false, false, false, false),
            row("+multi_scale", true, false, false, false),
            row("+text", true, true, false, false),
            row("+fusion", true, true, true, false),
            row("+ms_loss", true, true, true, true)};
  } else if (o.study == "axes") {
    flag_columns = {"intra", "inter", "temporal"};
    default_labels = 50;
    const auto row = [](std::string name, bool i1, bool i2, bool tp) {
      const auto b = [](bool v) { return std::string(v ? "true" : "false"); };
      GridRow r{std::move(name),
                {{"axes.intra_model", b(i1)},
                 {"axes.inter_model", b(i2)},
                 {"axes.temporal", b(tp)}},
                {i1, i2, tp},
                i1 || i2 || tp};
      if (!r.semi) r.flags.emplace_back("loss.lambda_max", "0");
      return r;
    };
    rows = {row("sup_only", false, false, false),
            row("intra", true, false, false),
            row("inter", false, true, false),
            row("temporal", false, false, true),
            row("intra+inter", true, true, false),
            row("intra+temporal", true, false, true),
            row("inter+temporal", false, true, true),
            row("all", true, true, true)};
  } else {
    throw UsageError("unknown study '" + o.study +
                     "' (expected 'modules' or 'axes')");
  }

  const std::vector<uint64_t> seeds = parse_seed_list(o.seeds);
  const int labels = o.labels > 0 ? o.labels : default_labels;
  const std::string fraction =
      fmt("%.17g", label_fraction_from_percent(labels));

  DatasetPtr data = load_dataset(o.data);
  const fs::path out(o.out);
  {
    ConfigPtr base =
        resolve_config(o.config, {{"train.label_fraction", fraction}});
    write_manifest(out, replay, base.get(), o.seeds);
  }

  const fs::path csv_path = out / ("ablation_" + o.study + ".csv");
  std::ofstream csv(csv_path);
  if (!csv) throw RuntimeFailure("cannot write " + csv_path.string());
  csv << "row";
  for (const auto& c : flag_columns) csv << ',' << c;
  csv << ",labels_percent,n_seeds,dice_mean,dice_sd,miou_mean,miou_sd\n";

  for (const auto& row : rows) {
    std::vector<double> dices, mious;
    for (uint64_t seed : seeds) {
      auto overrides = row.flags;
      overrides.emplace_back("train.label_fraction", fraction);
      overrides.emplace_back("train.seed", std::to_string(seed));
      ConfigPtr cfg = resolve_config(o.config, overrides);
      const fs::path run_dir =
          out / "runs" / row.name / ("seed" + std::to_string(seed));
      const RunResult r =
          run_one_training(cfg.get(), data.get(), nullptr, o.eval_fraction,
                           row.semi, run_dir, false);
      dices.push_back(r.dice);
      mious.push_back(r.miou);
      if (!o.quiet)
        std::cout << o.study << " / " << row.name << " / seed " << seed
                  << ": dice=" << fmt("%.4f", r.dice)
                  << " miou=" << fmt("%.4f", r.miou) << "\n";
    }
    csv << row.name;
    for (int bit : row.flag_bits) csv << ',' << bit;
    csv << ',' << labels << ',' << seeds.size() << ','
        << fmt("%.6f", mean_of(dices)) << ',' << fmt("%.6f", sample_sd(dices))
        << ',' << fmt("%.6f", mean_of(mious)) << ','
        << fmt("%.6f", sample_sd(mious)) << "\n";
  }
  csv.flush();
  if (!csv.good()) throw RuntimeFailure("CSV write failed");
  std::cout << "wrote " << rows.size() << "-row grid to " << csv_path.string()
            << "\n";
  return 0;
}

struct SweepOpts {
  std::string param, values, data, out, checkpoint;
  ConfigArgs config;
  double step = 0;
  double eval_fraction = 0.25;
  bool quiet = false;
};

std::vector<double> parse_values(const SweepOpts& o) {
  const bool is_beta = o.param == "beta_infer";
  std::vector<double> vals;
  if (o.values.empty()) {
    vals = is_beta ? std::vector<double>{0.2, 0.4, 0.6, 0.8}
                   : std::vector<double>{1, 2, 3, 4};
  } else if (o.values.find("..") != std::string::npos) {
    const auto dots = o.values.find("..");
    double lo = 0, hi = 0;
    try {
      lo = std::stod(trim(o.values.substr(0, dots)));
      hi = std::stod(trim(o.values.substr(dots + 2)));
    } catch (const std::exception&) {
      throw UsageError("--values range must look like '0.2..0.8', got '" +
                       o.values + "'");
    }
    const double step = o.step > 0 ? o.step : (is_beta ? 0.2 : 1.0);
    if (lo > hi) throw UsageError("--values range is empty");
    for (double v = lo; v <= hi + 1e-9; v += step) vals.push_back(v);
  } else {
    std::istringstream in(o.values);
    std::string tok;
    while (std::getline(in, tok, ',')) {
      tok = trim(tok);
      if (tok.empty()) continue;
      try {
        vals.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw UsageError("--values entry '" + tok + "' is not a number");
      }
    }
  }
  if (vals.empty()) throw UsageError("--values parsed to an empty list");
  for (double v : vals) {
    if (is_beta && (v < 0.0 || v > 1.0))
      throw UsageError("beta value " + fmt("%.4g", v) +
                       " outside [0,1]");
    if (!is_beta &&
        (v < 1.0 || std::fabs(v - std::round(v)) > 1e-9))
      throw UsageError("fusion level value " + fmt("%.4g", v) +
                       " must be a positive integer");
  }
  return vals;
}

int cmd_sweep(const SweepOpts& o, const std::string& replay) {
  const std::vector<double> vals = parse_values(o);
  const fs::path out(o.out);

  DatasetPtr data = load_dataset(o.data);
  DatasetPtr train_part, eval_part;
  TrainerPtr trainer;

  ConfigPtr cfg = resolve_config(o.config, {});
  write_manifest(out, replay, cfg.get(), config_get(cfg.get(), "train.seed"));

  if (!o.checkpoint.empty()) {
    // Evaluate an existing model across the grid on the whole --data set.
    trainer.reset(mxc_trainer_load(o.checkpoint.c_str()));
    if (!trainer) fail_api("loading checkpoint '" + o.checkpoint + "'");
    eval_part = std::move(data);
  } else {
    // Train once, then sweep inference settings on the holdout.
    const uint64_t seed = std::stoull(config_get(cfg.get(), "train.seed"));
    mxc_dataset *tr = nullptr, *ev = nullptr;
    if (mxc_dataset_split_holdout(data.get(), o.eval_fraction, seed, &tr,
                                  &ev) != MXC_OK)
      fail_api("holdout split");
    train_part.reset(tr);
    eval_part.reset(ev);
    run_one_training(cfg.get(), train_part.get(), eval_part.get(),
                     o.eval_fraction, false, out / "train", !o.quiet);
    trainer.reset(
        mxc_trainer_load((out / "train" / "checkpoint.mxc").string().c_str()));
    if (!trainer) fail_api("re-loading trained checkpoint");
  }

  const fs::path csv_path = out / ("sweep_" + o.param + ".csv");
  std::ofstream csv(csv_path);
  if (!csv) throw RuntimeFailure("cannot write " + csv_path.string());
  csv << "param,value,dice,miou\n";

  std::vector<double> dice_curve, miou_curve;
  for (double v : vals) {
    double dice = 0, miou = 0;
    const double beta = o.param == "beta_infer" ? v : -1.0;
    const int levels =
        o.param == "fusion_levels" ? static_cast<int>(std::lround(v)) : 0;
    if (mxc_evaluate(trainer.get(), eval_part.get(), beta, levels, nullptr,
                     &dice, &miou) != MXC_OK)
      fail_api("evaluating at " + o.param + "=" + fmt("%.4g", v));
    dice_curve.push_back(dice);
    miou_curve.push_back(miou);
    csv << o.param << ',' << fmt("%.6g", v) << ',' << fmt("%.6f", dice) << ','
        << fmt("%.6f", miou) << "\n";
    if (!o.quiet)
      std::cout << o.param << "=" << fmt("%.4g", v)
                << ": dice=" << fmt("%.4f", dice)
                << " miou=" << fmt("%.4f", miou) << "\n";
  }
  csv.flush();
  if (!csv.good()) throw RuntimeFailure("CSV write failed");

  write_line_chart_svg(out / ("sweep_" + o.param + ".svg"),
                       "held-out metrics vs " + o.param, o.param, vals,
                       {{"dice", dice_curve}, {"miou", miou_curve}});
  std::cout << "wrote " << vals.size() << "-point curve to "
            << csv_path.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "maxico: multi-scale text-aware segmentation with multi-axis "
      "consistency training"};
  app.require_subcommand(1);
  const std::string replay = replay_line(argc, argv);

  GenerateOpts gen;
  auto* cg = app.add_subcommand(
      "generate", "Generate a synthetic dataset (images, masks, captions)");
  cg->add_option("--n", gen.n, "number of samples")
      ->required()
      ->check(CLI::PositiveNumber);
  cg->add_option("--seed", gen.seed, "generator seed (default 1)");
  cg->add_option("--out", gen.out, "output directory")->required();
  cg->add_flag("--force", gen.force, "write into a non-empty directory");

  TrainOpts tr;
  auto* ct = app.add_subcommand("train", "Train a model on a dataset");
  ct->add_option("--data", tr.data, "dataset directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  ct->add_option("--out", tr.out, "output directory")->required();
  ct->add_option("--config", tr.config.file, "config file (key = value)")
      ->check(CLI::ExistingFile);
  ct->add_option("--set", tr.config.sets,
                 "config override key=value (repeatable)");
  ct->add_option("--labels", tr.labels, "labeled share in percent")
      ->check(CLI::IsMember({25, 50, 100}));
  ct->add_option("--mode", tr.mode, "full (supervised) or semi")
      ->check(CLI::IsMember({"full", "semi"}));
  ct->add_option("--eval-data", tr.eval_data,
                 "evaluation dataset (default: holdout split of --data)")
      ->check(CLI::ExistingDirectory);
  ct->add_option("--eval-fraction", tr.eval_fraction,
                 "holdout fraction when no --eval-data (default 0.25)")
      ->check(CLI::Range(0.01, 0.9));
  ct->add_flag("--quiet", tr.quiet, "suppress per-eval progress lines");

  EvalOpts ev;
  auto* ce = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  ce->add_option("--checkpoint", ev.checkpoint, "checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  ce->add_option("--data", ev.data, "fully labeled dataset directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  ce->add_option("--beta", ev.beta,
                 "override inference blend in [0,1] (default: config)")
      ->check(CLI::Range(0.0, 1.0));
  ce->add_option("--fusion-levels", ev.fusion_levels,
                 "override fused-level cutoff (default: config)")
      ->check(CLI::PositiveNumber);
  ce->add_option("--config", ev.config.file,
                 "expected config; fingerprint-checked against checkpoint")
      ->check(CLI::ExistingFile);
  ce->add_option("--set", ev.config.sets,
                 "expected config override key=value (repeatable)");
  ce->add_option("--out", ev.out, "optional report directory");

  AblateOpts ab;
  auto* ca = app.add_subcommand(
      "ablate", "Run an ablation grid (modules or consistency axes)");
  ca->add_option("--study", ab.study, "modules | axes")->required();
  ca->add_option("--data", ab.data, "dataset directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  ca->add_option("--out", ab.out, "output directory")->required();
  ca->add_option("--seeds", ab.seeds, "comma-separated seeds (default 1,2,3)");
  ca->add_option("--labels", ab.labels,
                 "labeled share in percent (default: 100 modules, 50 axes)")
      ->check(CLI::IsMember({25, 50, 100}));
  ca->add_option("--config", ab.config.file, "config file")
      ->check(CLI::ExistingFile);
  ca->add_option("--set", ab.config.sets,
                 "config override key=value (repeatable)");
  ca->add_option("--eval-fraction", ab.eval_fraction,
                 "holdout fraction (default 0.25)")
      ->check(CLI::Range(0.01, 0.9));
  ca->add_flag("--quiet", ab.quiet, "suppress per-run result lines");

  SweepOpts sw;
  auto* cs = app.add_subcommand(
      "sweep", "Sweep an inference-time setting and plot the curve");
  cs->add_option("--param", sw.param, "beta_infer | fusion_levels")
      ->required()
      ->check(CLI::IsMember({"beta_infer", "fusion_levels"}));
  cs->add_option("--values", sw.values,
                 "comma list '0.2,0.4' or range '0.2..0.8' (defaults: "
                 "0.2..0.8 for beta, 1..4 for levels)");
  cs->add_option("--step", sw.step, "range step (default 0.2 beta / 1 levels)")
      ->check(CLI::PositiveNumber);
  cs->add_option("--data", sw.data, "dataset directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  cs->add_option("--out", sw.out, "output directory")->required();
  cs->add_option("--checkpoint", sw.checkpoint,
                 "evaluate this checkpoint instead of training first")
      ->check(CLI::ExistingFile);
  cs->add_option("--config", sw.config.file, "config file")
      ->check(CLI::ExistingFile);
  cs->add_option("--set", sw.config.sets,
                 "config override key=value (repeatable)");
  cs->add_option("--eval-fraction", sw.eval_fraction,
                 "holdout fraction when training here (default 0.25)")
      ->check(CLI::Range(0.01, 0.9));
  cs->add_flag("--quiet", sw.quiet, "suppress per-point result lines");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (cg->parsed()) return cmd_generate(gen, replay);
    if (ct->parsed()) return cmd_train(tr, replay);
    if (ce->parsed()) return cmd_eval(ev, replay);
    if (ca->parsed()) return cmd_ablate(ab, replay);
    if (cs->parsed()) return cmd_sweep(sw, replay);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
