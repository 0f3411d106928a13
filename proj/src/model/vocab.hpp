// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "core/error.hpp"

namespace maxico {

// Fixed vocabulary shared by the caption grammar and the text encoder.
// Id 0 is reserved for unknown tokens.
inline const std::vector<std::string>& caption_vocabulary() {
  static const std::vector<std::string> words = {
      "<unk>",  "one",    "few",   "several", "many",  "tiny",
      "small",  "medium", "large", "nuclei",  "upper", "lower",
      "left",   "right",  "centered"};
  return words;
}

constexpr int kUnkTokenId = 0;

// Whitespace tokenization onto vocabulary ids; unknown words map to UNK.
inline std::vector<int> tokenize_caption(const std::string& caption) {
  static const std::map<std::string, int> index = [] {
    std::map<std::string, int> m;
    const auto& words = caption_vocabulary();
    for (size_t i = 0; i < words.size(); ++i)
      m.emplace(words[i], static_cast<int>(i));
    return m;
  }();
  std::vector<int> ids;
  std::istringstream ss(caption);
  std::string tok;
  while (ss >> tok) {
    auto it = index.find(tok);
    ids.push_back(it == index.end() ? kUnkTokenId : it->second);
  }
  check_arg(!ids.empty(), "caption must contain at least one token");
  return ids;
}

}  // namespace maxico
