// SPDX-License-Identifier: Apache-2.0
#include "changecap/dataset.hpp"

#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "changecap/btf.hpp"
#include "changecap/error.hpp"
#include "changecap/rng.hpp"

namespace changecap {

namespace {

constexpr std::uint64_t kStructureSeed = 0x57A7C0DEULL;

VisualInput checked(VisualInput in) {
  if (in.k() < 1 || in.k() > 2) {
    throw ConfigError("visual input must hold 1 or 2 images, got " + std::to_string(in.k()));
  }
  return in;
}

}  // namespace

VisualInput VisualInput::from_images(std::vector<ImageData> images, Provenance provenance,
                                     std::string key) {
  VisualInput in;
  in.images_ = std::move(images);
  in.provenance_ = provenance;
  in.key_ = std::move(key);
  return checked(std::move(in));
}

VisualInput VisualInput::from_features(std::vector<Tensor> features, Provenance provenance,
                                       std::string key) {
  VisualInput in;
  in.features_ = std::move(features);
  in.provenance_ = provenance;
  in.key_ = std::move(key);
  return checked(std::move(in));
}

std::vector<std::string> VisualInput::payloads() const {
  std::vector<std::string> out;
  if (has_features()) {
    for (const Tensor &t : features_) out.push_back(encode_btf(t));
  } else {
    for (const ImageData &img : images_) out.push_back(img.bytes);
  }
  return out;
}

std::string VisualInput::lookup_key() const {
  return key_.empty() ? content_hash(payloads()) : key_;
}

std::string content_hash(const std::vector<std::string> &payloads) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](unsigned char byte) {
    h ^= byte;
    h *= 0x100000001b3ULL;
  };
  for (const std::string &p : payloads) {
    const std::uint64_t len = p.size();
    for (int i = 0; i < 8; ++i) feed(static_cast<unsigned char>((len >> (8 * i)) & 0xFF));
    for (char c : p) feed(static_cast<unsigned char>(c));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string_view change_kind_name(ChangeKind kind) noexcept {
  switch (kind) {
    case ChangeKind::appear: return "appear";
    case ChangeKind::disappear: return "disappear";
    case ChangeKind::none: break;
  }
  return "none";
}

ChangeKind parse_change_kind(std::string_view name) {
  if (name == "none") return ChangeKind::none;
  if (name == "appear") return ChangeKind::appear;
  if (name == "disappear") return ChangeKind::disappear;
  throw ConfigError("unknown change kind '" + std::string(name) + "'");
}

std::string_view change_style_name(ChangeStyle style) noexcept {
  return style == ChangeStyle::replace ? "replace" : "additive";
}

ChangeStyle parse_change_style(std::string_view name) {
  if (name == "additive") return ChangeStyle::additive;
  if (name == "replace") return ChangeStyle::replace;
  throw ConfigError("unknown change style '" + std::string(name) + "'");
}

std::string_view quadrant_name(int quadrant) {
  switch (quadrant) {
    case 0: return "top left";
    case 1: return "top right";
    case 2: return "bottom left";
    case 3: return "bottom right";
    default: throw ConfigError("quadrant must be in 0..3, got " + std::to_string(quadrant));
  }
}

std::string caption_for(const ChangeSpec &change) {
  switch (change.kind) {
    case ChangeKind::appear:
      return "a structure appears in the " + std::string(quadrant_name(change.quadrant));
    case ChangeKind::disappear:
      return "a structure disappears from the " + std::string(quadrant_name(change.quadrant));
    case ChangeKind::none: break;
  }
  return "no change is observed";
}

namespace {

std::size_t even_grid(std::size_t patches) {
  std::size_t side = 0;
  try {
    side = grid_side(patches);
  } catch (const InvalidGeometryError &e) {
    throw ConfigError(e.what());
  }
  if (side % 2 != 0) throw ConfigError("grid side must be even for quadrant changes");
  return side;
}

bool in_quadrant(std::size_t patch, std::size_t side, int quadrant) {
  const std::size_t row = patch / side;
  const std::size_t col = patch % side;
  const bool bottom = row >= side / 2;
  const bool right = col >= side / 2;
  return static_cast<int>(bottom) * 2 + static_cast<int>(right) == quadrant;
}

std::vector<double> structure_signature(std::size_t width) {
  Rng rng(kStructureSeed);
  std::vector<double> u(width);
  for (double &v : u) v = rng.normal();
  return u;
}

std::vector<double> normal_field(Rng &rng, std::size_t n) {
  std::vector<double> v(n);
  for (double &x : v) x = rng.normal();
  return v;
}

}  // namespace

std::vector<SyntheticSample> synth_dataset(const SynthOptions &options) {
  const std::size_t side = even_grid(options.patches);
  if (options.width == 0) throw ConfigError("feature width must be positive");
  if (options.kinds.empty()) throw ConfigError("at least one change kind is required");
  const std::vector<double> signature = structure_signature(options.width);
  const std::size_t n = options.patches * options.width;

  std::vector<SyntheticSample> out;
  out.reserve(options.count);
  for (std::size_t i = 0; i < options.count; ++i) {
    Rng rng(mix_seed(options.seed, i));
    ChangeSpec change;
    change.kind = options.kinds[rng.uniform_below(options.kinds.size())];
    change.quadrant = static_cast<int>(rng.uniform_below(4));
    std::vector<double> f1 = normal_field(rng, n);
    std::vector<double> f2(f1);
    for (double &v : f2) v += options.noise * (2.0 * rng.uniform01() - 1.0);
    if (change.kind != ChangeKind::none) {
      const double sign = change.kind == ChangeKind::appear ? 1.0 : -1.0;
      for (std::size_t p = 0; p < options.patches; ++p) {
        if (!in_quadrant(p, side, change.quadrant)) continue;
        for (std::size_t c = 0; c < options.width; ++c) {
          double &v = f2[p * options.width + c];
          if (options.style == ChangeStyle::replace) {
            v = options.amplitude * rng.normal();
          } else {
            v += sign * options.amplitude * (signature[c] + 0.25 * rng.normal());
          }
        }
      }
    }
    char id[32];
    std::snprintf(id, sizeof id, "s%05zu", i);
    out.push_back({id,
                   FeaturePair::make(Tensor::from_data({options.patches, options.width}, std::move(f1)),
                                     Tensor::from_data({options.patches, options.width}, std::move(f2))),
                   caption_for(change), change});
  }
  return out;
}

std::vector<Sample> synth_presence_vqa(const SynthOptions &options) {
  const std::size_t side = even_grid(options.patches);
  const std::vector<double> signature = structure_signature(options.width);
  const std::size_t n = options.patches * options.width;
  std::vector<Sample> out;
  for (std::size_t i = 0; i < options.count; ++i) {
    Rng rng(mix_seed(options.seed ^ 0x51A61EULL, i));
    const int placed = static_cast<int>(rng.uniform_below(4));
    const int asked = static_cast<int>(rng.uniform_below(4));
    const bool present = rng.uniform_below(2) == 1;
    std::vector<double> f = normal_field(rng, n);
    if (present) {
      for (std::size_t p = 0; p < options.patches; ++p) {
        if (!in_quadrant(p, side, placed)) continue;
        for (std::size_t c = 0; c < options.width; ++c) {
          f[p * options.width + c] += options.amplitude * (signature[c] + 0.25 * rng.normal());
        }
      }
    }
    char id[32];
    std::snprintf(id, sizeof id, "q%05zu", i);
    Sample s;
    s.id = id;
    s.f1 = Tensor::from_data({options.patches, options.width}, std::move(f));
    s.prompt = "is there a structure in the " + std::string(quadrant_name(asked));
    s.target = present && placed == asked ? "yes" : "no";
    s.qtype = "presence";
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> to_samples(const std::vector<SyntheticSample> &synthetic,
                               std::string_view prompt) {
  std::vector<Sample> out;
  out.reserve(synthetic.size());
  for (const SyntheticSample &s : synthetic) {
    out.push_back({s.id, s.features.f1, s.features.f2, std::string(prompt), s.caption, std::nullopt});
  }
  return out;
}

std::filesystem::path write_synth_manifest(const std::vector<SyntheticSample> &samples,
                                           const std::filesystem::path &dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  const std::filesystem::path manifest = dir / "manifest.jsonl";
  std::string lines;
  for (const SyntheticSample &s : samples) {
    const std::string f1 = s.id + "_f1.btf";
    const std::string f2 = s.id + "_f2.btf";
    write_btf(s.features.f1, dir / f1);
    write_btf(s.features.f2, dir / f2);
    nlohmann::ordered_json line = {
        {"id", s.id},
        {"f1", f1},
        {"f2", f2},
        {"caption", s.caption},
        {"change", {{"quadrant", s.change.quadrant}, {"kind", change_kind_name(s.change.kind)}}}};
    lines += line.dump() + "\n";
  }
  write_file_bytes(manifest, lines);
  return manifest;
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path &manifest) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open manifest '" + manifest.string() + "'");
  const std::filesystem::path base = manifest.parent_path();
  std::vector<ManifestRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestRecord rec;
      rec.id = j.at("id").get<std::string>();
      rec.f1 = base / j.at("f1").get<std::string>();
      if (j.contains("f2")) rec.f2 = base / j.at("f2").get<std::string>();
      rec.caption = j.value("caption", std::string{});
      if (j.contains("change")) {
        const auto &c = j.at("change");
        rec.change = ChangeSpec{c.at("quadrant").get<int>(),
                                parse_change_kind(c.at("kind").get<std::string>())};
      }
      if (j.contains("prompt")) rec.prompt = j.at("prompt").get<std::string>();
      if (j.contains("qtype")) rec.qtype = j.at("qtype").get<std::string>();
      out.push_back(std::move(rec));
    } catch (const nlohmann::json::exception &e) {
      throw ConfigError(manifest.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<Sample> load_samples(const std::filesystem::path &manifest,
                                 std::string_view default_prompt) {
  std::vector<Sample> out;
  for (ManifestRecord &rec : read_manifest(manifest)) {
    Sample s;
    s.id = rec.id;
    s.f1 = read_btf(rec.f1);
    if (rec.f2) {
      FeaturePair pair = FeaturePair::make(s.f1, read_btf(*rec.f2));
      s.f2 = pair.f2;
    }
    s.prompt = rec.prompt.value_or(std::string(default_prompt));
    s.target = rec.caption;
    s.qtype = rec.qtype;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace changecap
