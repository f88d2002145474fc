// SPDX-License-Identifier: Apache-2.0
//
// changecap: synthetic data, gradient checks, training, captioning, metric
// evaluation and prompt augmentation from the command line.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error. Failures print one
// line to stderr: "error <kind>: <message>".
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "changecap/btf.hpp"
#include "changecap/checkpoint.hpp"
#include "changecap/dataset.hpp"
#include "changecap/error.hpp"
#include "changecap/gradcheck.hpp"
#include "changecap/metrics.hpp"
#include "changecap/model.hpp"
#include "changecap/ops.hpp"
#include "changecap/prompt_augmentation.hpp"
#include "changecap/rng.hpp"
#include "changecap/trainer.hpp"

namespace fs = std::filesystem;
using namespace changecap;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string one_line(std::string s) {
  for (char &c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

std::vector<std::string> split_csv(const std::string &s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// synth-data ---------------------------------------------------------------

struct SynthArgs {
  std::size_t n = 32;
  std::size_t lv = 16;
  std::size_t dv = 8;
  std::uint64_t seed = 0;
  std::string out;
  std::string kinds = "none,appear,disappear";
  std::string style = "additive";
};

int cmd_synth(const SynthArgs &a) {
  SynthOptions opts;
  opts.count = a.n;
  opts.patches = a.lv;
  opts.width = a.dv;
  opts.seed = a.seed;
  opts.style = parse_change_style(a.style);
  opts.kinds.clear();
  for (const std::string &k : split_csv(a.kinds)) opts.kinds.push_back(parse_change_kind(k));
  const fs::path manifest = write_synth_manifest(synth_dataset(opts), a.out);
  std::cout << manifest.string() << "\n";
  std::cerr << "wrote " << a.n << " samples to " << a.out << "\n";
  return 0;
}

// gradcheck ------------------------------------------------------------------

struct GradcheckArgs {
  std::string module = "all";
  std::uint64_t seed = 0;
};

Tensor random_tensor(const Shape &shape, std::uint64_t seed) {
  return create(shape, Init::normal(1.0, seed), false);
}

struct CheckLine {
  std::string module;
  double error;
  double tolerance;
};

int cmd_gradcheck(const GradcheckArgs &a) {
  constexpr std::size_t kPatches = 16;
  constexpr std::size_t kWidth = 8;
  constexpr std::size_t kEmbed = 32;
  const bool all = a.module == "all";
  if (!all && a.module != "change-extraction" && a.module != "projector" && a.module != "decoder") {
    throw UsageError("--module must be change-extraction, projector, decoder or all");
  }

  const FeaturePair pair = FeaturePair::make(random_tensor({kPatches, kWidth}, mix_seed(a.seed, 1)),
                                             random_tensor({kPatches, kWidth}, mix_seed(a.seed, 2)));
  CEParams ce = CEParams::init(kPatches, kWidth, mix_seed(a.seed, 3), 0.3);
  ProjectorParams proj = ProjectorParams::init(kWidth, kEmbed, kEmbed, mix_seed(a.seed, 4), 0.3);
  DecoderConfig dc;
  dc.vocab_size = 12;
  dc.width = kEmbed;
  DecoderParams dec = DecoderParams::init(dc, mix_seed(a.seed, 5), 0.3);
  const std::vector<std::int64_t> prompt = {4, 5, 6};
  const std::vector<std::int64_t> target = {7, 8, 9, 10};

  std::vector<CheckLine> lines;
  if (all || a.module == "change-extraction") {
    const Tensor probe = random_tensor({kPatches, kWidth}, mix_seed(a.seed, 6));
    std::vector<Tensor> params;
    for (const NamedTensor &p : ce.named_parameters()) params.push_back(p.tensor);
    const double err = finite_diff_check([&] { return sum(mul(ce_forward(pair, ce), probe)); }, params);
    lines.push_back({"change-extraction", err, 1e-4});
  }
  if (all || a.module == "projector") {
    const Tensor x = random_tensor({kPatches, kWidth}, mix_seed(a.seed, 7));
    const Tensor probe = random_tensor({kPatches / 4, kEmbed}, mix_seed(a.seed, 8));
    std::vector<Tensor> params;
    for (const NamedTensor &p : proj.named_parameters()) params.push_back(p.tensor);
    const double err =
        finite_diff_check([&] { return sum(mul(project(x, proj).tokens, probe)); }, params);
    lines.push_back({"projector", err, 1e-4});
  }
  if (all || a.module == "decoder") {
    std::vector<CheckedParam> params;
    std::uint64_t salt = 100;
    for (const NamedTensor &p : ce.named_parameters()) params.push_back({p.tensor, {}});
    for (const NamedTensor &p : proj.named_parameters()) params.push_back({p.tensor, {}});
    for (const NamedTensor &p : dec.named_parameters()) {
      params.push_back({p.tensor, random_coordinates(p.tensor, 5, mix_seed(a.seed, salt++))});
    }
    const double err = finite_diff_check(
        [&] { return forward_loss(project(ce_forward(pair, ce), proj), prompt, target, dec); },
        params);
    lines.push_back({"full-chain", err, 1e-3});
  }

  bool ok = true;
  for (const CheckLine &l : lines) {
    const bool pass = l.error < l.tolerance;
    ok = ok && pass;
    std::printf("%-18s max_rel_err=%.3e tol=%.0e %s\n", l.module.c_str(), l.error, l.tolerance,
                pass ? "ok" : "FAIL");
  }
  return ok ? 0 : 1;
}

// train ----------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string out;
};

int cmd_train(const TrainArgs &a) {
  const fs::path config_path(a.config);
  const TrainConfig cfg = parse_train_config(read_file_bytes(config_path), config_path.parent_path());

  std::vector<Sample> stage1 = cfg.manifest ? load_samples(*cfg.manifest, cfg.model.task_prompt)
                                            : to_samples(synth_dataset(cfg.synthetic), cfg.model.task_prompt);
  std::vector<Sample> stage2 = stage1;
  if (cfg.presence_vqa > 0) {
    SynthOptions q = cfg.synthetic;
    q.count = cfg.presence_vqa;
    q.patches = cfg.model.patches;
    q.width = cfg.model.visual_width;
    for (Sample &s : synth_presence_vqa(q)) stage2.push_back(std::move(s));
  }

  std::vector<std::string> texts{cfg.model.task_prompt};
  for (const std::vector<Sample> *set : {&stage1, &stage2}) {
    for (const Sample &s : *set) {
      texts.push_back(s.prompt);
      texts.push_back(s.target);
    }
  }
  Model model = Model::init(cfg.model, Vocab::build(texts));
  std::cerr << "training on " << stage1.size() << " (stage 1) / " << stage2.size()
            << " (stage 2) samples\n";

  std::ostringstream log;
  auto on_step = [&](const StepRecord &r) {
    const std::string line = step_record_json(r);
    std::cout << line << "\n";
    log << line << "\n";
  };
  train_two_stage(cfg.recipe, model, stage1, stage2, on_step);
  save_checkpoint(model, a.out);
  write_file_bytes(fs::path(a.out) / "metrics.jsonl", log.str());
  std::cerr << "final mean loss " << mean_loss(model, stage1) << ", checkpoint " << a.out << "\n";
  return 0;
}

// caption --------------------------------------------------------------------

struct CaptionArgs {
  std::string ckpt;
  std::string manifest;
  std::string pa_endpoint;
  std::string pa_mock;
  std::string pt;
  std::size_t max_new = 32;
};

std::unique_ptr<BaseModelClient> make_client(const std::string &endpoint, const std::string &mock) {
  if (!endpoint.empty()) return std::make_unique<HttpClient>(endpoint);
  if (!mock.empty()) return std::make_unique<MockClient>(MockClient::from_file(mock));
  return nullptr;
}

int cmd_caption(const CaptionArgs &a) {
  const Model model = load_checkpoint(a.ckpt);
  const std::string default_prompt = a.pt.empty() ? model.config().task_prompt : a.pt;
  const std::vector<Sample> samples = load_samples(a.manifest, default_prompt);
  const std::unique_ptr<BaseModelClient> client = make_client(a.pa_endpoint, a.pa_mock);

  for (const Sample &s : samples) {
    const std::string task = a.pt.empty() ? s.prompt : a.pt;
    std::string prompt = task;
    if (client) {
      std::vector<Tensor> features{s.f1};
      if (s.bitemporal()) features.push_back(s.f2);
      const VisualInput input = VisualInput::from_features(features, Provenance::file, s.id);
      prompt = augment_prompt(input, task, *client).assembled;
    }
    nlohmann::ordered_json line{{"id", s.id}, {"caption", model.generate(s, prompt, a.max_new)},
                                {"prompt", prompt}};
    std::cout << line.dump() << "\n";
  }
  std::cerr << "captioned " << samples.size() << " samples\n";
  return 0;
}

// eval-captions --------------------------------------------------------------

struct EvalArgs {
  std::string pred;
  std::string refs;
};

std::vector<nlohmann::json> read_jsonl(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception &e) {
      throw ConfigError(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

int cmd_eval(const EvalArgs &a) {
  std::map<std::string, EvalRecord> by_id;
  std::vector<std::string> order;
  for (const nlohmann::json &j : read_jsonl(a.refs)) {
    EvalRecord rec;
    rec.id = j.at("id").get<std::string>();
    if (j.contains("references")) {
      for (const auto &r : j.at("references")) rec.references.push_back(tokenize(r.get<std::string>()));
    } else {
      rec.references.push_back(tokenize(j.at("caption").get<std::string>()));
    }
    if (j.contains("qtype")) rec.qtype = j.at("qtype").get<std::string>();
    if (by_id.count(rec.id) == 0) order.push_back(rec.id);
    by_id[rec.id] = std::move(rec);
  }
  std::vector<EvalRecord> records;
  for (const nlohmann::json &j : read_jsonl(a.pred)) {
    const std::string id = j.at("id").get<std::string>();
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw ConfigError("prediction '" + id + "' has no reference");
    EvalRecord rec = it->second;
    rec.candidate = tokenize(j.contains("caption") ? j.at("caption").get<std::string>()
                                                   : j.at("candidate").get<std::string>());
    records.push_back(std::move(rec));
  }
  if (records.empty()) throw ConfigError("no predictions to evaluate");
  const CaptionReport report = evaluate_corpus(records);
  for (const std::string &w : report.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << report_to_json(report) << "\n";
  return 0;
}

// augment --------------------------------------------------------------------

struct AugmentArgs {
  std::string pt;
  std::string pa_mock;
  std::string pa_endpoint;
  std::string image_id;
  std::vector<std::string> features;
};

int cmd_augment(const AugmentArgs &a) {
  if (a.pt.empty()) throw UsageError("--pt must not be empty");
  if (a.pa_mock.empty() == a.pa_endpoint.empty()) {
    throw UsageError("exactly one of --pa-mock or --pa-endpoint is required");
  }
  const std::unique_ptr<BaseModelClient> client = make_client(a.pa_endpoint, a.pa_mock);
  VisualInput input = [&] {
    if (a.features.empty()) {
      if (a.image_id.empty()) throw UsageError("--image-id or --features is required");
      return VisualInput::from_images({ImageData{}}, Provenance::file, a.image_id);
    }
    std::vector<Tensor> feats;
    for (const std::string &f : a.features) feats.push_back(read_btf(f));
    return VisualInput::from_features(feats, Provenance::file, a.image_id);
  }();
  const PromptBundle bundle = augment_prompt(input, a.pt, *client);
  if (bundle.clues.empty()) std::cerr << "no clues available; using the bare instruction\n";
  std::cout << bundle.assembled << "\n";
  return 0;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"changecap: bi-temporal change captioning toolkit"};
  app.require_subcommand(1, 1);

  SynthArgs synth;
  auto *s = app.add_subcommand("synth-data", "write a synthetic change-captioning manifest");
  s->add_option("--n", synth.n, "number of samples")->capture_default_str();
  s->add_option("--lv", synth.lv, "patches per image (square of an even number)")->capture_default_str();
  s->add_option("--dv", synth.dv, "feature width")->capture_default_str();
  s->add_option("--seed", synth.seed)->capture_default_str();
  s->add_option("--kinds", synth.kinds, "comma-separated change kinds")->capture_default_str();
  s->add_option("--style", synth.style, "additive or replace")->capture_default_str();
  s->add_option("--out", synth.out, "output directory")->required();

  GradcheckArgs grad;
  auto *g = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  g->add_option("--module", grad.module, "change-extraction, projector, decoder or all")->capture_default_str();
  g->add_option("--seed", grad.seed)->capture_default_str();

  TrainArgs train;
  auto *t = app.add_subcommand("train", "two-stage training from a JSON config");
  t->add_option("--config", train.config)->required();
  t->add_option("--out", train.out, "checkpoint directory")->required();

  CaptionArgs cap;
  auto *c = app.add_subcommand("caption", "greedy captions for a manifest");
  c->add_option("--ckpt", cap.ckpt)->required();
  c->add_option("--manifest", cap.manifest)->required();
  auto *endpoint = c->add_option("--pa-endpoint", cap.pa_endpoint, "base model URL for prompt augmentation");
  auto *mock = c->add_option("--pa-mock", cap.pa_mock, "JSON file of canned clues");
  endpoint->excludes(mock);
  c->add_option("--pt", cap.pt, "task instruction overriding the manifest prompts");
  c->add_option("--max-new", cap.max_new)->capture_default_str();

  EvalArgs ev;
  auto *e = app.add_subcommand("eval-captions", "score predictions against references");
  e->add_option("--pred", ev.pred)->required();
  e->add_option("--refs", ev.refs)->required();

  AugmentArgs aug;
  auto *a = app.add_subcommand("augment", "print the augmented prompt");
  a->add_option("--pt", aug.pt, "task instruction")->required();
  a->add_option("--pa-mock", aug.pa_mock);
  a->add_option("--pa-endpoint", aug.pa_endpoint);
  a->add_option("--image-id", aug.image_id, "lookup key for the mock");
  a->add_option("--features", aug.features, "one or two BTF feature files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &err) {
    if (err.get_exit_code() == 0) return app.exit(err);
    std::cerr << "error usage: " << one_line(err.what()) << "\n";
    return 2;
  }

  try {
    if (*s) return cmd_synth(synth);
    if (*g) return cmd_gradcheck(grad);
    if (*t) return cmd_train(train);
    if (*c) return cmd_caption(cap);
    if (*e) return cmd_eval(ev);
    if (*a) return cmd_augment(aug);
  } catch (const UsageError &err) {
    std::cerr << "error usage: " << one_line(err.what()) << "\n";
    return 2;
  } catch (const Error &err) {
    std::cerr << "error " << error_kind_name(err.kind()) << ": " << one_line(err.what()) << "\n";
    return 1;
  } catch (const nlohmann::json::exception &err) {
    std::cerr << "error config: " << one_line(err.what()) << "\n";
    return 1;
  } catch (const std::exception &err) {
    std::cerr << "error internal: " << one_line(err.what()) << "\n";
    return 1;
  }
  return 2;
}
