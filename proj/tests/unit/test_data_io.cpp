// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "changecap/btf.hpp"
#include "changecap/checkpoint.hpp"
#include "changecap/dataset.hpp"
#include "changecap/error.hpp"
#include "changecap/trainer.hpp"

using namespace changecap;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  explicit TempDir(const std::string &name) : path_(fs::temp_directory_path() / ("changecap_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path &path() const { return path_; }

 private:
  fs::path path_;
};

std::string le64(std::uint64_t v) {
  std::string s(8, '\0');
  for (int i = 0; i < 8; ++i) s[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  return s;
}

std::string le_double(double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  return le64(bits);
}

std::string dir_bytes(const fs::path &dir) {
  std::string all;
  std::vector<fs::path> files;
  for (const auto &e : fs::directory_iterator(dir)) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const fs::path &f : files) all += f.filename().string() + '\0' + read_file_bytes(f);
  return all;
}

Model small_model() {
  const std::vector<std::string> texts{"describe the changes between the two images",
                                       "a structure appears in the top left", "no change is observed"};
  ModelConfig c;
  c.blocks = 1;
  c.seed = 3;
  return Model::init(c, Vocab::build(texts));
}

}  // namespace

// -- BTF ---------------------------------------------------------------------

TEST(Btf, ByteLayout) {
  const Tensor t = Tensor::from_data({2, 1}, {1.5, -2.0});
  const std::string expect = std::string("BTF1") + '\x01' + '\x02' + le64(2) + le64(1) + le_double(1.5) +
                             le_double(-2.0);
  EXPECT_EQ(encode_btf(t), expect);
}

TEST(Btf, RoundTripIsBitwise) {
  const std::vector<double> v{0.0, -0.0, 1e-308, std::numeric_limits<double>::denorm_min(), 3.141592653589793,
                              -1e300};
  const Tensor t = Tensor::from_data({3, 2}, v);
  const Tensor back = decode_btf(encode_btf(t));
  EXPECT_EQ(back.shape(), t.shape());
  EXPECT_EQ(std::memcmp(back.data().data(), t.data().data(), v.size() * 8), 0);

  TempDir dir("btf");
  write_btf(t, dir.path() / "t.btf");
  EXPECT_EQ(encode_btf(read_btf(dir.path() / "t.btf")), encode_btf(t));
  EXPECT_THROW(read_btf(dir.path() / "missing.btf"), IoError);
}

TEST(Btf, RejectsNonFinite) {
  EXPECT_THROW(encode_btf(Tensor::from_data({1}, {std::nan("")})), ContractError);
  EXPECT_THROW(encode_btf(Tensor::from_data({1}, {INFINITY})), ContractError);
}

TEST(Btf, ErrorOffsets) {
  const std::string good = encode_btf(Tensor::from_data({2}, {1.0, 2.0}));
  auto offset_of = [](const std::string &bytes) -> std::uint64_t {
    try {
      decode_btf(bytes);
    } catch (const FormatError &e) {
      return e.offset();
    }
    ADD_FAILURE() << "no FormatError";
    return 0;
  };
  std::string bad = good;
  bad[0] = 'X';
  EXPECT_EQ(offset_of(bad), 0u);
  bad = good;
  bad[4] = '\x02';
  EXPECT_EQ(offset_of(bad), 4u);
  bad = good;
  bad[5] = '\0';
  EXPECT_EQ(offset_of(bad), 5u);
  bad = good;
  bad.replace(6, 8, le64(0));
  EXPECT_EQ(offset_of(bad), 6u);
  EXPECT_EQ(offset_of(good + "x"), good.size());
  EXPECT_EQ(offset_of(good.substr(0, 10)), 10u);
  EXPECT_EQ(offset_of(good.substr(0, 20)), 20u);
}

TEST(Btf, EveryProperPrefixIsRejected) {
  const std::string good = encode_btf(Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}));
  for (std::size_t n = 0; n < good.size(); ++n) {
    EXPECT_THROW(decode_btf(std::string_view(good).substr(0, n)), FormatError) << n;
  }
  EXPECT_NO_THROW(decode_btf(good));
}

// -- visual inputs -----------------------------------------------------------------

TEST(VisualInput, ImageCountAndKinds) {
  const ImageData img{1, 1, 1, "x"};
  EXPECT_THROW(VisualInput::from_images({}, Provenance::file), ConfigError);
  EXPECT_THROW(VisualInput::from_images({img, img, img}, Provenance::file), ConfigError);
  const VisualInput one = VisualInput::from_images({img}, Provenance::file);
  EXPECT_EQ(one.k(), 1u);
  EXPECT_FALSE(one.has_features());
  const VisualInput feats =
      VisualInput::from_features({create({4, 2}), create({4, 2})}, Provenance::synthetic, "k");
  EXPECT_EQ(feats.k(), 2u);
  EXPECT_EQ(feats.lookup_key(), "k");
  EXPECT_EQ(feats.payloads()[0], encode_btf(create({4, 2})));
}

TEST(VisualInput, ContentHashIsFnv1aOverLengthPrefixedPayloads) {
  auto oracle = [](const std::vector<std::string> &payloads) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const std::string &p : payloads) {
      for (unsigned char c : le64(p.size()) + p) {
        h ^= c;
        h *= 0x100000001b3ULL;
      }
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
  };
  EXPECT_EQ(content_hash({"ab", "c"}), oracle({"ab", "c"}));
  EXPECT_NE(content_hash({"ab", "c"}), content_hash({"a", "bc"}));
  EXPECT_EQ(content_hash({}), "cbf29ce484222325");
  const ImageData a{1, 1, 1, "ab"}, b{1, 1, 1, "c"};
  EXPECT_EQ(VisualInput::from_images({a, b}, Provenance::file).lookup_key(), oracle({"ab", "c"}));
}

// -- synthetic data -------------------------------------------------------------------

TEST(Synth, NoneKindStaysWithinNoise) {
  SynthOptions o;
  o.count = 20;
  o.kinds = {ChangeKind::none};
  for (const SyntheticSample &s : synth_dataset(o)) {
    EXPECT_EQ(s.caption, "no change is observed");
    for (std::size_t i = 0; i < s.features.f1.numel(); ++i) {
      EXPECT_LE(std::abs(s.features.f2.data()[i] - s.features.f1.data()[i]), o.noise);
    }
  }
}

TEST(Synth, ChangesStayInTheirQuadrant) {
  for (ChangeStyle style : {ChangeStyle::additive, ChangeStyle::replace}) {
    SynthOptions o;
    o.count = 24;
    o.patches = 64;
    o.kinds = {ChangeKind::appear, ChangeKind::disappear};
    o.style = style;
    for (const SyntheticSample &s : synth_dataset(o)) {
      const std::size_t side = 8;
      for (std::size_t p = 0; p < 64; ++p) {
        const int q = static_cast<int>(p / side >= side / 2) * 2 + static_cast<int>(p % side >= side / 2);
        double max_diff = 0.0;
        for (std::size_t c = 0; c < o.width; ++c) {
          max_diff = std::max(max_diff, std::abs(s.features.f2.at({p, c}) - s.features.f1.at({p, c})));
        }
        if (q == s.change.quadrant) {
          EXPECT_GT(max_diff, o.noise) << s.id << ' ' << p;
        } else {
          EXPECT_LE(max_diff, o.noise) << s.id << ' ' << p;
        }
      }
      EXPECT_EQ(s.caption, caption_for(s.change));
    }
  }
}

TEST(Synth, DeterministicAndSeedSensitive) {
  SynthOptions o;
  o.count = 6;
  const auto a = synth_dataset(o), b = synth_dataset(o);
  o.seed = 1;
  const auto c = synth_dataset(o);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(encode_btf(a[i].features.f2), encode_btf(b[i].features.f2));
    EXPECT_NE(encode_btf(a[i].features.f1), encode_btf(c[i].features.f1));
  }
  o.patches = 9;
  EXPECT_THROW(synth_dataset(o), ConfigError);
}

TEST(Synth, CaptionsAndPresenceQuestions) {
  EXPECT_EQ(caption_for({1, ChangeKind::appear}), "a structure appears in the top right");
  EXPECT_EQ(caption_for({2, ChangeKind::disappear}), "a structure disappears from the bottom left");
  SynthOptions o;
  o.count = 30;
  for (const Sample &s : synth_presence_vqa(o)) {
    EXPECT_FALSE(s.bitemporal());
    EXPECT_EQ(s.qtype, "presence");
    EXPECT_TRUE(s.target == "yes" || s.target == "no");
    EXPECT_EQ(s.prompt.rfind("is there a structure in the ", 0), 0u);
  }
}

TEST(Manifest, RoundTrip) {
  TempDir dir("manifest");
  SynthOptions o;
  o.count = 5;
  const auto synth = synth_dataset(o);
  const fs::path manifest = write_synth_manifest(synth, dir.path());
  EXPECT_EQ(manifest, dir.path() / "manifest.jsonl");
  const auto records = read_manifest(manifest);
  ASSERT_EQ(records.size(), 5u);
  EXPECT_EQ(records[2].caption, synth[2].caption);
  EXPECT_EQ(records[2].change->quadrant, synth[2].change.quadrant);
  EXPECT_TRUE(records[2].f1.is_absolute() || records[2].f1.parent_path() == dir.path());
  const auto samples = load_samples(manifest);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(samples[i].id, synth[i].id);
    EXPECT_EQ(samples[i].prompt, kDefaultChangePrompt);
    EXPECT_EQ(encode_btf(samples[i].f2), encode_btf(synth[i].features.f2));
  }
  std::ofstream(dir.path() / "bad.jsonl") << "{\"id\": \"x\"}\n";
  EXPECT_THROW(read_manifest(dir.path() / "bad.jsonl"), ConfigError);
  EXPECT_THROW(read_manifest(dir.path() / "none.jsonl"), IoError);
}

// -- checkpoints ---------------------------------------------------------------------

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  TempDir a("ckpt_a"), b("ckpt_b");
  const Model m = small_model();
  save_checkpoint(m, a.path());
  save_checkpoint(load_checkpoint(a.path()), b.path());
  EXPECT_EQ(dir_bytes(a.path()), dir_bytes(b.path()));
}

TEST(Checkpoint, LossReproducedBitwise) {
  TempDir dir("ckpt_loss");
  SynthOptions o;
  o.count = 4;
  const auto samples = to_samples(synth_dataset(o));
  Model m = small_model();
  StagePlan plan{"s", {"change-extraction", "decoder"}, 1e-3, 1, 2};
  run_stage(plan, m, samples);
  save_checkpoint(m, dir.path());
  const Model back = load_checkpoint(dir.path());
  for (const Sample &s : samples) EXPECT_EQ(back.sample_loss(s).item(), m.sample_loss(s).item());
  EXPECT_EQ(back.vocab().tokens(), m.vocab().tokens());
  EXPECT_EQ(model_config_json(back.config()), model_config_json(m.config()));
}

TEST(Checkpoint, IncompatibleIndexes) {
  TempDir dir("ckpt_bad");
  save_checkpoint(small_model(), dir.path());
  const fs::path index = dir.path() / "index.json";
  const auto original = nlohmann::json::parse(read_file_bytes(index));

  auto j = original;
  j["modules"].erase("projector");
  write_file_bytes(index, j.dump());
  try {
    load_checkpoint(dir.path());
    ADD_FAILURE() << "expected IncompatibleError";
  } catch (const IncompatibleError &e) {
    EXPECT_NE(std::string(e.what()).find("projector"), std::string::npos) << e.what();
  }

  j = original;
  j["version"] = kCheckpointVersion + 1;
  write_file_bytes(index, j.dump());
  EXPECT_THROW(load_checkpoint(dir.path()), IncompatibleError);

  j = original;
  j["format"] = "other";
  write_file_bytes(index, j.dump());
  EXPECT_THROW(load_checkpoint(dir.path()), IncompatibleError);

  write_file_bytes(index, original.dump());
  write_btf(create({3}), dir.path() / "decoder.head.btf");
  EXPECT_THROW(load_checkpoint(dir.path()), IncompatibleError);

  fs::remove(index);
  EXPECT_THROW(load_checkpoint(dir.path()), IoError);
}
