// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "core/error.hpp"

namespace maxico {

enum class FusionMode { npf, pf };

struct FusionConfig {
  FusionMode mode = FusionMode::npf;
  double r1 = 0.0;  // NPF sampling range [r1, r2]
  double r2 = 1.0;
  double beta_infer = 0.5;  // fixed blend at evaluation time
  int levels = 4;           // levels 1..levels are fused; deeper pass CNN through

  void validate() const {
    check_arg(r1 >= 0.0 && r1 < r2 && r2 <= 1.0,
              "fusion range must satisfy 0 <= r1 < r2 <= 1");
    check_arg(beta_infer >= 0.0 && beta_infer <= 1.0,
              "beta_infer must lie in [0,1]");
    check_arg(levels >= 0, "fusion levels must be non-negative");
  }
};

struct LossWeights {
  double alpha1 = 1.0;
  double alpha2 = 1.0;
  double alpha3 = 0.6;
  double lambda_max = 1.0;
  int warmup_steps = 1;

  void validate() const {
    check_arg(alpha1 >= 0 && alpha2 >= 0 && alpha3 >= 0,
              "loss weights must be non-negative");
    check_arg(warmup_steps >= 1, "warmup_steps must be positive");
  }
};

struct AxisToggles {
  bool intra_model = true;
  bool inter_model = true;
  bool temporal = true;
  int buffer_depth = 1;

  bool any() const { return intra_model || inter_model || temporal; }
};

struct ModelConfig {
  int num_classes = 2;
  int n_levels = 4;  // N: CNN pyramid depth, 2..4
  int d_vit = 64;
  int d_align = 64;
  int d_text = 64;
  int text_embed_dim = 32;
  int vit_layers = 12;
  int vit_heads = 4;
  int patch = 8;
  std::vector<int> channels = {16, 32, 64, 128};  // C_1..C_N ladder
  bool vit_frozen = false;   // toy ViT learns from scratch by default
  bool text_frozen = true;   // stand-in for a frozen pretrained text encoder
  FusionConfig fusion;

  // Module ablation flags; each strictly adds computation when enabled.
  bool multi_scale_arch = true;  // all taps/levels vs deepest-tap-only
  bool text_enabled = true;      // dense text alignment vs pass-through
  bool vit_cnn_fusion = true;    // CNN branch + fusion + R vs ViT-only

  void validate() const {
    check_arg(num_classes >= 2, "num_classes must be >= 2");
    check_arg(n_levels >= 2 && n_levels <= 4, "n_levels must be in [2,4]");
    check_arg(static_cast<int>(channels.size()) >= n_levels,
              "channel ladder shorter than n_levels");
    check_arg(vit_layers == 12, "the toy ViT is fixed at 12 layers");
    check_arg(d_vit % vit_heads == 0, "d_vit must divide by vit_heads");
    check_arg(d_align % vit_heads == 0, "d_align must divide by vit_heads");
  }

  // Validates an input size against patching and pooling divisibility.
  void validate_image(int h, int w) const {
    check_arg(h > 0 && w > 0, "image dims must be positive");
    const int pool = 1 << (n_levels - 1);
    check_arg(h % patch == 0 && w % patch == 0,
              "image size " + std::to_string(h) + "x" + std::to_string(w) +
                  " not divisible by patch size " + std::to_string(patch));
    check_arg(h % pool == 0 && w % pool == 0,
              "image size " + std::to_string(h) + "x" + std::to_string(w) +
                  " not divisible by 2^(n_levels-1) = " + std::to_string(pool));
  }
};

}  // namespace maxico
