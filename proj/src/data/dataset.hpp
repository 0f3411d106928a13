// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "core/error.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"
#include "data/augment.hpp"
#include "data/png_io.hpp"

namespace maxico {

// One image/caption/mask triplet. Unlabeled samples carry no mask; the
// caption is always present. Pixel values are 8-bit-quantized reals in
// [0,1] so PNG round-trips are exact.
struct Sample {
  std::string id;
  Tensor<float> image;  // {H,W,3}
  Tensor<int> mask;     // {H,W} class ids; empty when unlabeled
  bool has_mask = false;
  std::string caption;
};

using Dataset = std::vector<Sample>;

struct GenConfig {
  int height = 64, width = 64;
  int min_blobs = 1, max_blobs = 12;
  double min_axis = 2.5, max_axis = 7.0;  // ellipse semi-axes, pixels
  double bg_base = 0.35, bg_amp = 0.10;   // textured background band
  double fg_base = 0.62, fg_amp = 0.10;   // blob intensity band
  double noise_sigma = 0.06;              // additive per-pixel noise

  void validate() const {
    check_arg(height > 0 && width > 0, "image dims must be positive");
    check_arg(1 <= min_blobs && min_blobs <= max_blobs,
              "blob count range invalid");
    check_arg(0 < min_axis && min_axis <= max_axis, "axis range invalid");
  }
};

// Generation metadata kept for oracle cross-checks (caption vs geometry).
struct SampleMeta {
  int blob_count = 0;
  double mean_radius = 0;  // mean sqrt(a*b) over blobs
  double centroid_y = 0, centroid_x = 0;
};

namespace detail {

inline std::string count_bucket(int n) {
  if (n <= 1) return "one";
  if (n <= 4) return "few";
  if (n <= 8) return "several";
  return "many";
}

inline std::string size_bucket(double mean_radius, const GenConfig& cfg) {
  const double step = (cfg.max_axis - cfg.min_axis) / 4.0;
  if (mean_radius < cfg.min_axis + step) return "tiny";
  if (mean_radius < cfg.min_axis + 2 * step) return "small";
  if (mean_radius < cfg.min_axis + 3 * step) return "medium";
  return "large";
}

inline std::string location_bucket(double cy, double cx, int h, int w) {
  const double dy = cy - (h - 1) / 2.0;
  const double dx = cx - (w - 1) / 2.0;
  if (std::hypot(dy, dx) <= 4.0) return "centered";
  return std::string(dy < 0 ? "upper" : "lower") + " " +
         (dx < 0 ? "left" : "right");
}

inline std::string sample_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", index);
  return buf;
}

}  // namespace detail

// Deterministic synthetic sample: textured background, 1..max_blobs bright
// elliptical blobs, exact-union binary mask, and a caption from a fixed
// grammar: "<count> <size> nuclei <location>".
inline Sample generate_sample(uint64_t seed, int index, const GenConfig& cfg,
                              SampleMeta* meta_out = nullptr) {
  cfg.validate();
  Rng rng(mix_seed(seed, "gen.sample." + std::to_string(index)));
  const int h = cfg.height, w = cfg.width;

  const int count = cfg.min_blobs +
                    static_cast<int>(rng.uniform_int(
                        cfg.max_blobs - cfg.min_blobs + 1));
  struct Blob {
    double cy, cx, a, b, cphi, sphi;
  };
  std::vector<Blob> blobs;
  double radius_sum = 0;
  const double margin = cfg.max_axis + 1.0;
  for (int i = 0; i < count; ++i) {
    Blob e{};
    e.cy = rng.uniform(margin, h - margin);
    e.cx = rng.uniform(margin, w - margin);
    e.a = rng.uniform(cfg.min_axis, cfg.max_axis);
    e.b = rng.uniform(cfg.min_axis, cfg.max_axis);
    const double phi = rng.uniform(0.0, M_PI);
    e.cphi = std::cos(phi);
    e.sphi = std::sin(phi);
    radius_sum += std::sqrt(e.a * e.b);
    blobs.push_back(e);
  }

  Tensor<int> mask({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      for (const auto& e : blobs) {
        const double dy = y - e.cy, dx = x - e.cx;
        const double u = (e.cphi * dx + e.sphi * dy) / e.a;
        const double v = (-e.sphi * dx + e.cphi * dy) / e.b;
        if (u * u + v * v <= 1.0) {
          mask.at(y, x) = 1;
          break;
        }
      }
    }

  // Low-frequency sinusoidal texture for both regions, plus pixel noise.
  const double fx1 = rng.uniform(1.0, 3.0), fy1 = rng.uniform(1.0, 3.0);
  const double px1 = rng.uniform(0.0, 2 * M_PI), py1 = rng.uniform(0.0, 2 * M_PI);
  const double fx2 = rng.uniform(1.0, 3.0), fy2 = rng.uniform(1.0, 3.0);
  const double px2 = rng.uniform(0.0, 2 * M_PI), py2 = rng.uniform(0.0, 2 * M_PI);
  Tensor<float> image({h, w, 3});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v;
      if (mask.at(y, x)) {
        v = cfg.fg_base + cfg.fg_amp * std::sin(2 * M_PI * fx2 * x / w + px2) *
                              std::sin(2 * M_PI * fy2 * y / h + py2);
      } else {
        v = cfg.bg_base + cfg.bg_amp * std::sin(2 * M_PI * fx1 * x / w + px1) *
                              std::sin(2 * M_PI * fy1 * y / h + py1);
      }
      v += cfg.noise_sigma * rng.normal();
      const int q = static_cast<int>(
          std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      for (int c = 0; c < 3; ++c)
        image.at(y, x, c) = static_cast<float>(q) / 255.0f;
    }

  int64_t fg = 0;
  double sy = 0, sx = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (mask.at(y, x)) {
        ++fg;
        sy += y;
        sx += x;
      }
  check(fg > 0, ErrorCode::numeric, "generated sample has empty mask");
  SampleMeta meta;
  meta.blob_count = count;
  meta.mean_radius = radius_sum / count;
  meta.centroid_y = sy / static_cast<double>(fg);
  meta.centroid_x = sx / static_cast<double>(fg);
  if (meta_out) *meta_out = meta;

  Sample s;
  s.id = detail::sample_id(index);
  s.image = std::move(image);
  s.mask = std::move(mask);
  s.has_mask = true;
  s.caption = detail::count_bucket(count) + " " +
              detail::size_bucket(meta.mean_radius, cfg) + " nuclei " +
              detail::location_bucket(meta.centroid_y, meta.centroid_x, h, w);
  return s;
}

inline Dataset generate_synthetic(int n, uint64_t seed,
                                  const GenConfig& cfg = {}) {
  check_arg(n >= 1, "dataset size must be >= 1");
  Dataset ds;
  ds.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) ds.push_back(generate_sample(seed, i, cfg));
  return ds;
}

// Seeded shuffle; the first ceil(fraction*n) samples keep their masks, the
// rest have them stripped. Partition is disjoint and exhaustive.
inline std::pair<Dataset, Dataset> split_semi(const Dataset& ds,
                                              double fraction, uint64_t seed) {
  check_arg(!ds.empty(), "split_semi requires a non-empty dataset");
  check_arg(fraction > 0.0 && fraction <= 1.0, "fraction must be in (0,1]");
  const int n = static_cast<int>(ds.size());
  const int n_labeled =
      static_cast<int>(std::ceil(fraction * static_cast<double>(n)));
  check_arg(n_labeled >= 1, "split produced zero labeled samples");
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, "split"));
  rng.shuffle(order);
  Dataset labeled, unlabeled;
  for (int i = 0; i < n; ++i) {
    Sample s = ds[static_cast<size_t>(order[static_cast<size_t>(i)])];
    if (i >= n_labeled) {
      s.mask = Tensor<int>();
      s.has_mask = false;
    }
    (i < n_labeled ? labeled : unlabeled).push_back(std::move(s));
  }
  return {std::move(labeled), std::move(unlabeled)};
}

// Seeded holdout partition (e.g. a training/evaluation split); both sides
// keep their masks.
inline std::pair<Dataset, Dataset> split_holdout(const Dataset& ds,
                                                 double eval_fraction,
                                                 uint64_t seed) {
  check_arg(!ds.empty(), "split_holdout requires a non-empty dataset");
  check_arg(eval_fraction >= 0.0 && eval_fraction < 1.0,
            "eval fraction must be in [0,1)");
  const int n = static_cast<int>(ds.size());
  const int n_eval =
      static_cast<int>(std::ceil(eval_fraction * static_cast<double>(n)));
  check_arg(n_eval < n, "holdout would leave no training samples");
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, "holdout"));
  rng.shuffle(order);
  Dataset train, eval;
  for (int i = 0; i < n; ++i) {
    const Sample& s = ds[static_cast<size_t>(order[static_cast<size_t>(i)])];
    (i < n - n_eval ? train : eval).push_back(s);
  }
  return {std::move(train), std::move(eval)};
}

// Flip/rotation augmentation: image and mask move together, caption stays.
inline Sample augment(const Sample& s, Rng& rng) {
  const D4 t = sample_d4(rng);
  Sample out = s;
  out.image = d4_apply(s.image, t);
  if (s.has_mask) out.mask = d4_apply(s.mask, t);
  return out;
}

// ---------------------------------------------------------------------------
// Directory layout: images/<id>.png (8-bit RGB), masks/<id>.png (8-bit gray,
// pixel value = class id; absent for unlabeled), captions.tsv (id <TAB>
// caption).
// ---------------------------------------------------------------------------

inline void export_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");
  std::ofstream tsv(fs::path(dir) / "captions.tsv");
  check(tsv.good(), ErrorCode::io, "cannot write captions.tsv in " + dir);
  for (const auto& s : ds) {
    const int h = s.image.dim(0), w = s.image.dim(1);
    Tensor<uint8_t> rgb({h, w, 3});
    for (int64_t i = 0; i < rgb.size(); ++i)
      rgb[i] = static_cast<uint8_t>(
          std::lround(std::clamp(s.image[i], 0.0f, 1.0f) * 255.0f));
    write_png((fs::path(dir) / "images" / (s.id + ".png")).string(), rgb);
    if (s.has_mask) {
      Tensor<uint8_t> m({h, w, 1});
      for (int64_t i = 0; i < m.size(); ++i) {
        check_arg(s.mask[i] >= 0 && s.mask[i] <= 255,
                  "mask id out of 8-bit range");
        m[i] = static_cast<uint8_t>(s.mask[i]);
      }
      write_png((fs::path(dir) / "masks" / (s.id + ".png")).string(), m);
    }
    tsv << s.id << '\t' << s.caption << '\n';
  }
  check(tsv.good(), ErrorCode::io, "write failed for captions.tsv");
}

inline Dataset load_directory(const std::string& dir) {
  namespace fs = std::filesystem;
  check(fs::is_directory(dir), ErrorCode::io,
        "'" + dir + "' is not a directory");
  const fs::path images = fs::path(dir) / "images";
  const fs::path masks = fs::path(dir) / "masks";
  const fs::path tsv_path = fs::path(dir) / "captions.tsv";
  if (!fs::exists(images) && !fs::exists(tsv_path)) {
    std::cerr << "warning: '" << dir << "' contains no dataset; returning "
              << "an empty one\n";
    return {};
  }

  std::map<std::string, std::string> captions;
  std::ifstream tsv(tsv_path);
  check(tsv.good(), ErrorCode::io, "cannot read " + tsv_path.string());
  std::string line;
  int line_no = 0;
  while (std::getline(tsv, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    check(tab != std::string::npos, ErrorCode::io,
          tsv_path.string() + ":" + std::to_string(line_no) +
              ": expected '<id>\\t<caption>'");
    captions[line.substr(0, tab)] = line.substr(tab + 1);
  }

  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(images)) {
    if (entry.path().extension() != ".png") continue;
    ids.push_back(entry.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());

  for (const auto& [id, _] : captions)
    check(std::binary_search(ids.begin(), ids.end(), id), ErrorCode::io,
          "caption entry '" + id + "' has no image file");

  Dataset ds;
  for (const auto& id : ids) {
    auto cap = captions.find(id);
    check(cap != captions.end(), ErrorCode::io,
          "image '" + id + ".png' has no caption entry");
    Sample s;
    s.id = id;
    Tensor<uint8_t> rgb = read_png((images / (id + ".png")).string());
    check(rgb.dim(2) == 3, ErrorCode::io,
          "image '" + id + ".png' is not RGB");
    s.image = Tensor<float>(rgb.shape());
    for (int64_t i = 0; i < rgb.size(); ++i)
      s.image[i] = static_cast<float>(rgb[i]) / 255.0f;
    const fs::path mask_path = masks / (id + ".png");
    if (fs::exists(mask_path)) {
      Tensor<uint8_t> m = read_png(mask_path.string());
      check(m.dim(2) == 1, ErrorCode::io,
            "mask '" + id + ".png' is not single-channel");
      check(m.dim(0) == rgb.dim(0) && m.dim(1) == rgb.dim(1), ErrorCode::io,
            "mask '" + id + ".png' does not match its image size");
      s.mask = Tensor<int>({m.dim(0), m.dim(1)});
      for (int64_t i = 0; i < m.size(); ++i) s.mask[i] = m[i];
      s.has_mask = true;
    }
    s.caption = cap->second;
    ds.push_back(std::move(s));
  }
  return ds;
}

}  // namespace maxico
