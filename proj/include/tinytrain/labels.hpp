#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>

#include "tinytrain/error.hpp"

namespace tinytrain {

inline constexpr std::size_t kNumClasses = 15;
inline constexpr std::size_t kNoFindingIndex = 14;

// Vector index order: the 14 pathologies alphabetically, then "No Finding"
// as the 15th entry.
inline constexpr std::array<const char*, kNumClasses> kClassNames = {
    "Atelectasis",  "Cardiomegaly", "Consolidation", "Edema",
    "Effusion",     "Emphysema",    "Fibrosis",      "Hernia",
    "Infiltration", "Mass",         "Nodule",        "Pleural Thickening",
    "Pneumonia",    "Pneumothorax", "No Finding"};

// Report row order (fully alphabetical, which places "No Finding" between
// Mass and Nodule), expressed as indices into kClassNames.
inline constexpr std::array<std::size_t, kNumClasses> kReportOrder = {
    0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 14, 10, 11, 12, 13};

inline std::optional<std::size_t> class_index(std::string_view name) {
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    if (name == kClassNames[i]) return i;
  }
  return std::nullopt;
}

// k-hot label vector: entry 14 set means entries 0-13 are all clear, and at
// least one entry is always set.
struct LabelVector {
  std::array<std::uint8_t, kNumClasses> bits{};

  bool operator==(const LabelVector&) const = default;
  bool any() const {
    for (auto b : bits) {
      if (b) return true;
    }
    return false;
  }
};

inline LabelVector encode_khot(const std::set<std::string>& labels) {
  if (labels.empty()) throw ValidationError("labels: label set must be nonempty");
  LabelVector v;
  for (const auto& name : labels) {
    auto idx = class_index(name);
    if (!idx) throw ValidationError("labels: unknown class '" + name + "'");
    v.bits[*idx] = 1;
  }
  if (v.bits[kNoFindingIndex] && labels.size() > 1) {
    throw ValidationError("labels: 'No Finding' cannot be combined with pathologies");
  }
  return v;
}

inline std::set<std::string> decode_khot(const LabelVector& v) {
  std::set<std::string> out;
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    if (v.bits[i]) out.insert(kClassNames[i]);
  }
  if (out.empty()) throw ValidationError("labels: empty label vector");
  return out;
}

}  // namespace tinytrain
