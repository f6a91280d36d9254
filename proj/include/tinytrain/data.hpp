#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tinytrain/error.hpp"
#include "tinytrain/image.hpp"
#include "tinytrain/labels.hpp"
#include "tinytrain/rng.hpp"
#include "tinytrain/tensor.hpp"

namespace tinytrain {

struct ManifestRecord {
  std::string image_id;
  std::string patient_id;
  std::set<std::string> labels;
};

namespace detail {

inline std::vector<std::string> split_on(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.emplace_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

}  // namespace detail

inline constexpr const char* kManifestHeader = "image_id,patient_id,labels";

// Manifest grammar: one header line, then one record per line as
// "image_id,patient_id,Label|Label|...". "No Finding" must stand alone.
inline std::vector<ManifestRecord> parse_manifest(std::string_view text) {
  std::vector<ManifestRecord> records;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    start = end + 1;
    ++line_no;
    if (line_no == 1) {
      if (line != kManifestHeader) {
        throw ValidationError("manifest line 1: expected header '" +
                              std::string(kManifestHeader) + "', got '" + std::string(line) +
                              "'");
      }
      continue;
    }
    if (line.empty()) continue;
    auto fields = detail::split_on(line, ',');
    if (fields.size() != 3) {
      throw ValidationError("manifest line " + std::to_string(line_no) + ": expected 3 fields, got " +
                            std::to_string(fields.size()));
    }
    if (fields[0].empty() || fields[1].empty()) {
      throw ValidationError("manifest line " + std::to_string(line_no) +
                            ": empty image_id or patient_id");
    }
    if (fields[2].empty()) {
      throw ValidationError("manifest line " + std::to_string(line_no) + ": empty label field");
    }
    ManifestRecord rec;
    rec.image_id = fields[0];
    rec.patient_id = fields[1];
    for (const auto& label : detail::split_on(fields[2], '|')) {
      if (!class_index(label)) {
        throw ValidationError("manifest line " + std::to_string(line_no) + ": unknown class '" +
                              label + "'");
      }
      rec.labels.insert(label);
    }
    if (rec.labels.count(kClassNames[kNoFindingIndex]) && rec.labels.size() > 1) {
      throw ValidationError("manifest line " + std::to_string(line_no) +
                            ": 'No Finding' cannot be combined with pathologies");
    }
    records.push_back(std::move(rec));
  }
  return records;
}

// Labels are rendered in class-index order so rendering is deterministic.
inline std::string render_manifest(const std::vector<ManifestRecord>& records) {
  std::string out = std::string(kManifestHeader) + "\n";
  for (const auto& rec : records) {
    out += rec.image_id + "," + rec.patient_id + ",";
    bool first = true;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      if (rec.labels.count(kClassNames[c])) {
        if (!first) out += "|";
        out += kClassNames[c];
        first = false;
      }
    }
    out += "\n";
  }
  return out;
}

enum class Split { Train, Val, Test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    default: return "test";
  }
}

struct SplitAssignment {
  std::map<std::string, Split> by_patient;
  std::array<double, 3> fractions{0.7, 0.1, 0.2};
  std::uint64_t seed = 0;

  Split of(const std::string& patient_id) const {
    auto it = by_patient.find(patient_id);
    if (it == by_patient.end()) {
      throw ValidationError("split: patient '" + patient_id + "' has no assignment");
    }
    return it->second;
  }
};

// Patient-level split: unique patient ids are shuffled by the seeded stream
// and partitioned by largest-remainder rounding, so every count is within
// one of fraction * total and no patient appears in two splits.
inline SplitAssignment group_split(const std::vector<ManifestRecord>& records,
                                   std::array<double, 3> fractions, std::uint64_t seed) {
  double sum = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(sum - 1.0) > 1e-9 || fractions[0] < 0 || fractions[1] < 0 || fractions[2] < 0) {
    throw ValidationError("split: fractions must be nonnegative and sum to 1");
  }
  std::set<std::string> unique;
  for (const auto& r : records) unique.insert(r.patient_id);
  if (unique.size() < 3) {
    throw ValidationError("split: need at least 3 patients, got " +
                          std::to_string(unique.size()));
  }
  std::vector<std::string> patients(unique.begin(), unique.end());
  Rng rng(seed);
  shuffle(patients, rng);

  std::size_t total = patients.size();
  std::array<std::size_t, 3> counts;
  std::array<double, 3> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    double quota = fractions[i] * static_cast<double>(total);
    counts[i] = static_cast<std::size_t>(quota);
    remainders[i] = quota - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  while (assigned < total) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < 3; ++i) {
      if (remainders[i] > remainders[best]) best = i;
    }
    ++counts[best];
    remainders[best] = -1.0;
    ++assigned;
  }

  SplitAssignment out;
  out.fractions = fractions;
  out.seed = seed;
  std::size_t idx = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t k = 0; k < counts[s]; ++k) {
      out.by_patient[patients[idx++]] = static_cast<Split>(s);
    }
  }
  return out;
}

inline std::string render_split_csv(const SplitAssignment& a) {
  std::string out = "patient_id,split\n";
  for (const auto& [patient, split] : a.by_patient) {
    out += patient + "," + split_name(split) + "\n";
  }
  return out;
}

inline SplitAssignment parse_split_csv(std::string_view text) {
  SplitAssignment a;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    start = end + 1;
    ++line_no;
    if (line_no == 1) {
      if (line != "patient_id,split") {
        throw ValidationError("split csv line 1: expected header 'patient_id,split'");
      }
      continue;
    }
    if (line.empty()) continue;
    auto fields = detail::split_on(line, ',');
    if (fields.size() != 2) {
      throw ValidationError("split csv line " + std::to_string(line_no) + ": expected 2 fields");
    }
    Split s;
    if (fields[1] == "train") s = Split::Train;
    else if (fields[1] == "val") s = Split::Val;
    else if (fields[1] == "test") s = Split::Test;
    else {
      throw ValidationError("split csv line " + std::to_string(line_no) + ": unknown split '" +
                            fields[1] + "'");
    }
    a.by_patient[fields[0]] = s;
  }
  return a;
}

// Loads PGM images from <dir>/<image_id>.pgm and caches them. Reads can be
// attributed to a phase label for data-access auditing.
class ImageStore {
 public:
  explicit ImageStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

  const ImageBuffer& get(const std::string& image_id) const {
    auto it = cache_.find(image_id);
    if (it == cache_.end()) {
      std::filesystem::path p = dir_ / (image_id + ".pgm");
      if (!std::filesystem::exists(p)) {
        throw IoError("image '" + image_id + "': file not found at " + p.string());
      }
      it = cache_.emplace(image_id, read_pgm(p)).first;
    }
    if (!phase_.empty()) access_log_[phase_].insert(image_id);
    return it->second;
  }

  void set_phase(std::string phase) const { phase_ = std::move(phase); }
  const std::map<std::string, std::set<std::string>>& access_log() const { return access_log_; }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  mutable std::map<std::string, ImageBuffer> cache_;
  mutable std::string phase_;
  mutable std::map<std::string, std::set<std::string>> access_log_;
};

struct Normalization {
  double mean = 0.0;
  double stddev = 1.0;
};

inline Normalization compute_normalization(const std::vector<ManifestRecord>& records,
                                           const ImageStore& store) {
  if (records.empty()) throw ValidationError("normalization: empty record set");
  double sum = 0.0, sumsq = 0.0;
  std::size_t n = 0;
  for (const auto& rec : records) {
    const ImageBuffer& img = store.get(rec.image_id);
    for (double v : img.pixels) {
      sum += v;
      sumsq += v * v;
    }
    n += img.pixels.size();
  }
  Normalization norm;
  norm.mean = sum / static_cast<double>(n);
  double var = sumsq / static_cast<double>(n) - norm.mean * norm.mean;
  norm.stddev = var > 1e-24 ? std::sqrt(var) : 1.0;
  return norm;
}

struct Batch {
  Tensor images;   // [B,1,side,side], normalized
  Tensor targets;  // [B,15], k-hot
  std::vector<std::string> image_ids;
};

// Deterministic epoch of batches over one split: the order is a seeded
// Fisher-Yates shuffle keyed by seed XOR epoch, chunked into batch_size
// groups with the final partial batch kept.
class BatchStream {
 public:
  BatchStream(const std::vector<ManifestRecord>& records, const ImageStore& store,
              std::size_t batch_size, std::size_t side, Normalization norm,
              std::uint64_t seed, std::size_t epoch, bool shuffled)
      : records_(&records), store_(&store), batch_size_(batch_size), side_(side), norm_(norm) {
    if (records.empty()) throw ValidationError("batches: split is empty");
    if (batch_size == 0) throw ValidationError("batches: batch_size must be positive");
    order_.resize(records.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    if (shuffled) {
      Rng rng(seed ^ static_cast<std::uint64_t>(epoch));
      shuffle(order_, rng);
    }
  }

  std::size_t num_batches() const {
    return (order_.size() + batch_size_ - 1) / batch_size_;
  }

  Batch get(std::size_t batch_index) const {
    std::size_t begin = batch_index * batch_size_;
    std::size_t end = std::min(begin + batch_size_, order_.size());
    if (begin >= end) throw ValidationError("batches: batch index out of range");
    std::size_t b = end - begin;
    Batch batch;
    batch.images = Tensor::zeros({b, 1, side_, side_});
    batch.targets = Tensor::zeros({b, kNumClasses});
    for (std::size_t i = 0; i < b; ++i) {
      const ManifestRecord& rec = (*records_)[order_[begin + i]];
      const ImageBuffer& raw = store_->get(rec.image_id);
      ImageBuffer img = (raw.height == side_ && raw.width == side_) ? raw
                                                                    : resize_bilinear(raw, side_);
      double* dst = batch.images.data.data() + i * side_ * side_;
      for (std::size_t p = 0; p < img.pixels.size(); ++p) {
        dst[p] = (img.pixels[p] - norm_.mean) / norm_.stddev;
      }
      LabelVector lv = encode_khot(rec.labels);
      for (std::size_t c = 0; c < kNumClasses; ++c) {
        batch.targets.data[i * kNumClasses + c] = lv.bits[c];
      }
      batch.image_ids.push_back(rec.image_id);
    }
    return batch;
  }

 private:
  const std::vector<ManifestRecord>* records_;
  const ImageStore* store_;
  std::size_t batch_size_;
  std::size_t side_;
  Normalization norm_;
  std::vector<std::size_t> order_;
};

inline std::vector<ManifestRecord> records_in_split(const std::vector<ManifestRecord>& records,
                                                    const SplitAssignment& assignment,
                                                    Split split) {
  std::vector<ManifestRecord> out;
  for (const auto& rec : records) {
    if (assignment.of(rec.patient_id) == split) out.push_back(rec);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic dataset
//
// Each pathology class owns one cell of a 4x4 grid: class k sits at grid row
// k/4, column k%4. Its glyph is drawn inside that cell only, with the kind
// cycling disc / square / horizontal bar by k%3. Images carrying no glyph
// are labeled "No Finding". One synthetic patient covers five consecutive
// images so patient grouping is exercised.
// ---------------------------------------------------------------------------

struct SynthSpec {
  std::size_t n_images = 1000;
  std::size_t side = 64;
  double noise_std = 0.1;
  std::array<double, 14> class_priors = [] {
    std::array<double, 14> p{};
    p.fill(0.1);
    return p;
  }();
  std::uint64_t seed = 0;
};

inline constexpr double kSynthBackground = 0.12;
inline constexpr double kSynthGlyphBoost = 0.65;
inline constexpr std::size_t kSynthImagesPerPatient = 5;

namespace detail {

inline void stamp_glyph(ImageBuffer& img, std::size_t klass) {
  double cs = static_cast<double>(img.width) / 4.0;
  double cy = (static_cast<double>(klass / 4) + 0.5) * cs;
  double cx = (static_cast<double>(klass % 4) + 0.5) * cs;
  std::size_t kind = klass % 3;
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      double dy = (static_cast<double>(y) + 0.5) - cy;
      double dx = (static_cast<double>(x) + 0.5) - cx;
      bool inside = false;
      if (kind == 0) {
        inside = dy * dy + dx * dx <= (0.30 * cs) * (0.30 * cs);
      } else if (kind == 1) {
        inside = std::abs(dy) <= 0.30 * cs && std::abs(dx) <= 0.30 * cs;
      } else {
        inside = std::abs(dy) <= 0.15 * cs && std::abs(dx) <= 0.38 * cs;
      }
      if (inside) img.at(y, x) += kSynthGlyphBoost;
    }
  }
}

}  // namespace detail

inline std::string synth_image_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "synth_%06zu", index);
  return buf;
}

inline std::string synth_patient_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "P%05zu", index / kSynthImagesPerPatient);
  return buf;
}

// Pure function of (spec, index): the image raster and its label set.
inline std::pair<ImageBuffer, std::set<std::string>> synthesize_image(const SynthSpec& spec,
                                                                      std::size_t index) {
  if (spec.side < 32) throw ValidationError("synth: side must be at least 32");
  Rng rng(mix_seed(spec.seed, index));
  std::set<std::string> labels;
  ImageBuffer img;
  img.height = spec.side;
  img.width = spec.side;
  img.pixels.assign(spec.side * spec.side, kSynthBackground);
  for (std::size_t c = 0; c < 14; ++c) {
    if (rng.uniform() < spec.class_priors[c]) {
      detail::stamp_glyph(img, c);
      labels.insert(kClassNames[c]);
    }
  }
  if (labels.empty()) labels.insert(kClassNames[kNoFindingIndex]);
  if (spec.noise_std > 0.0) {
    for (double& v : img.pixels) v += rng.normal() * spec.noise_std;
  }
  for (double& v : img.pixels) v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return {std::move(img), std::move(labels)};
}

// Writes <out_dir>/images/<id>.pgm for every image plus <out_dir>/manifest.csv
// and returns the manifest records.
inline std::vector<ManifestRecord> generate_synthetic(const SynthSpec& spec,
                                                      const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir / "images");
  std::vector<ManifestRecord> records;
  records.reserve(spec.n_images);
  for (std::size_t i = 0; i < spec.n_images; ++i) {
    auto [img, labels] = synthesize_image(spec, i);
    ManifestRecord rec;
    rec.image_id = synth_image_id(i);
    rec.patient_id = synth_patient_id(i);
    rec.labels = std::move(labels);
    write_pgm(img, out_dir / "images" / (rec.image_id + ".pgm"));
    records.push_back(std::move(rec));
  }
  std::ofstream f(out_dir / "manifest.csv", std::ios::binary);
  if (!f) throw IoError("synth: cannot write manifest at " + (out_dir / "manifest.csv").string());
  f << render_manifest(records);
  return records;
}

}  // namespace tinytrain
