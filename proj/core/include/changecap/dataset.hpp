// SPDX-License-Identifier: Apache-2.0
//
// Visual inputs, training samples, the synthetic bi-temporal generator and
// JSONL manifests.
//
// Manifest lines (paths relative to the manifest's directory):
//   {"id", "f1": "x.btf", "f2": "y.btf", "caption",
//    "change": {"quadrant", "kind"}}
// Optional keys: "prompt" (task instruction) and "qtype" (question type).
// Single-image records omit "f2".
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "changecap/change_extraction.hpp"
#include "changecap/tensor.hpp"

namespace changecap {

enum class Provenance : std::uint8_t { file, synthetic };

struct ImageData {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::string bytes;
};

/// One or two images (k = 1 or 2), carried either as raw image payloads or as
/// precomputed [L_V, D_V] feature tensors, never both.
class VisualInput {
 public:
  static VisualInput from_images(std::vector<ImageData> images, Provenance provenance,
                                 std::string key = {});
  static VisualInput from_features(std::vector<Tensor> features, Provenance provenance,
                                   std::string key = {});

  std::size_t k() const noexcept { return has_features() ? features_.size() : images_.size(); }
  bool has_features() const noexcept { return !features_.empty(); }
  const std::vector<ImageData> &images() const noexcept { return images_; }
  const std::vector<Tensor> &features() const noexcept { return features_; }
  Provenance provenance() const noexcept { return provenance_; }

  /// Bytes sent to a base model per image: raw image bytes, or the BTF
  /// encoding of each feature tensor.
  std::vector<std::string> payloads() const;
  /// The explicit key if one was given, else content_hash(payloads()).
  std::string lookup_key() const;

 private:
  std::vector<ImageData> images_;
  std::vector<Tensor> features_;
  Provenance provenance_ = Provenance::file;
  std::string key_;
};

/// 16 hex digits of FNV-1a 64 over each payload preceded by its length as a
/// little-endian u64.
std::string content_hash(const std::vector<std::string> &payloads);

/// A training or evaluation example. `f2` is undefined for single images.
struct Sample {
  std::string id;
  Tensor f1;
  Tensor f2;
  std::string prompt;
  std::string target;
  std::optional<std::string> qtype;

  bool bitemporal() const { return f2.defined(); }
};

enum class ChangeKind : std::uint8_t { none, appear, disappear };

std::string_view change_kind_name(ChangeKind kind) noexcept;
ChangeKind parse_change_kind(std::string_view name);

struct ChangeSpec {
  int quadrant = 0;  // 0 top left, 1 top right, 2 bottom left, 3 bottom right
  ChangeKind kind = ChangeKind::none;
};

/// Fixed caption grammar: "a structure appears in the <quadrant>",
/// "a structure disappears from the <quadrant>", "no change is observed".
std::string caption_for(const ChangeSpec &change);
std::string_view quadrant_name(int quadrant);

/// additive: the quadrant gains +/- amplitude * (u + 0.25 jitter).
/// replace: the quadrant's f2 entries become fresh amplitude * N(0, 1) draws,
/// so the feature norm is unchanged and only the direction moves.
enum class ChangeStyle : std::uint8_t { additive, replace };

std::string_view change_style_name(ChangeStyle style) noexcept;
ChangeStyle parse_change_style(std::string_view name);

struct SyntheticSample {
  std::string id;
  FeaturePair features;
  std::string caption;
  ChangeSpec change;
};

struct SynthOptions {
  std::size_t count = 32;
  std::size_t patches = 16;
  std::size_t width = 8;
  std::uint64_t seed = 0;
  std::vector<ChangeKind> kinds = {ChangeKind::none, ChangeKind::appear, ChangeKind::disappear};
  double noise = 0.01;      // |f2 - f1| bound outside the changed quadrant
  double amplitude = 1.0;   // scale of the structure signature
  ChangeStyle style = ChangeStyle::additive;
};

inline constexpr std::string_view kDefaultChangePrompt = "describe the changes between the two images";

/// Sample i draws from Rng(mix_seed(seed, i)): kind, quadrant, f1 ~ N(0, 1),
/// uniform noise in [-noise, noise] on every element of f2 - f1, and for
/// appear/disappear +/- amplitude * (u + 0.25 jitter) on the patches of the
/// quadrant, where u is a structure signature fixed for all datasets (see
/// ChangeStyle for the replace variant).
/// Throws ConfigError unless sqrt(patches) is an even integer.
std::vector<SyntheticSample> synth_dataset(const SynthOptions &options);

/// Single-image presence questions ("is there a structure in the top left")
/// answered "yes"/"no", qtype "presence". Used for multi-task mixing.
std::vector<Sample> synth_presence_vqa(const SynthOptions &options);

std::vector<Sample> to_samples(const std::vector<SyntheticSample> &synthetic,
                               std::string_view prompt = kDefaultChangePrompt);

struct ManifestRecord {
  std::string id;
  std::filesystem::path f1;  // resolved against the manifest directory
  std::optional<std::filesystem::path> f2;
  std::string caption;
  std::optional<ChangeSpec> change;
  std::optional<std::string> prompt;
  std::optional<std::string> qtype;
};

/// Writes <dir>/manifest.jsonl and one BTF file per feature tensor.
std::filesystem::path write_synth_manifest(const std::vector<SyntheticSample> &samples,
                                           const std::filesystem::path &dir);
std::vector<ManifestRecord> read_manifest(const std::filesystem::path &manifest);
std::vector<Sample> load_samples(const std::filesystem::path &manifest,
                                 std::string_view default_prompt = kDefaultChangePrompt);

}  // namespace changecap
