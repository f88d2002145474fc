// SPDX-License-Identifier: Apache-2.0
#include "changecap/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include "changecap/btf.hpp"
#include "changecap/error.hpp"

namespace changecap {

namespace {

using nlohmann::ordered_json;

ordered_json config_to_json(const ModelConfig &c) {
  return ordered_json{{"patches", c.patches},
                      {"visual_width", c.visual_width},
                      {"embed_width", c.embed_width},
                      {"projector_hidden", c.projector_hidden},
                      {"heads", c.heads},
                      {"blocks", c.blocks},
                      {"max_len", c.max_len},
                      {"fusion", fusion_kind_name(c.fusion)},
                      {"concat_hidden", c.concat_hidden},
                      {"init_sigma", c.init_sigma},
                      {"seed", c.seed},
                      {"task_prompt", c.task_prompt}};
}

ModelConfig config_from_json(const ordered_json &j) {
  ModelConfig c;
  c.patches = j.at("patches").get<std::size_t>();
  c.visual_width = j.at("visual_width").get<std::size_t>();
  c.embed_width = j.at("embed_width").get<std::size_t>();
  c.projector_hidden = j.at("projector_hidden").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.blocks = j.at("blocks").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.fusion = parse_fusion_kind(j.at("fusion").get<std::string>());
  c.concat_hidden = j.at("concat_hidden").get<std::size_t>();
  c.init_sigma = j.at("init_sigma").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.task_prompt = j.at("task_prompt").get<std::string>();
  return c;
}

}  // namespace

std::string model_config_json(const ModelConfig &config) { return config_to_json(config).dump(); }

void save_checkpoint(const Model &model, const std::filesystem::path &dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());

  ordered_json modules = ordered_json::object();
  for (std::string_view module : kModuleNames) {
    ordered_json entries = ordered_json::object();
    for (const NamedTensor &p : model.module_parameters(module)) {
      const std::string file = std::string(module) + "." + p.name + ".btf";
      write_btf(p.tensor, dir / file);
      entries[p.name] = file;
    }
    modules[std::string(module)] = std::move(entries);
  }
  ordered_json index{{"format", kCheckpointFormat},
                     {"version", kCheckpointVersion},
                     {"config", config_to_json(model.config())},
                     {"vocab", model.vocab().tokens()},
                     {"modules", std::move(modules)}};
  write_file_bytes(dir / "index.json", index.dump(2) + "\n");
}

Model load_checkpoint(const std::filesystem::path &dir) {
  const std::string text = read_file_bytes(dir / "index.json");
  ordered_json index;
  try {
    index = ordered_json::parse(text);
  } catch (const nlohmann::json::exception &e) {
    throw IncompatibleError("checkpoint index is not valid JSON: " + std::string(e.what()));
  }
  if (!index.is_object() || index.value("format", std::string{}) != kCheckpointFormat) {
    throw IncompatibleError("not a changecap checkpoint: " + dir.string());
  }
  if (!index.contains("version") || !index.at("version").is_number_integer() ||
      index.at("version").get<int>() != kCheckpointVersion) {
    throw IncompatibleError("checkpoint version " +
                            (index.contains("version") ? index.at("version").dump() : "missing") +
                            " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }

  ModelConfig config;
  std::vector<std::string> tokens;
  try {
    config = config_from_json(index.at("config"));
    tokens = index.at("vocab").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception &e) {
    throw IncompatibleError("checkpoint index is malformed: " + std::string(e.what()));
  }
  Model model = Model::init(config, Vocab::from_tokens(tokens));

  const ordered_json &modules = index.contains("modules") ? index.at("modules") : ordered_json::object();
  for (std::string_view module : kModuleNames) {
    const std::string key(module);
    if (!modules.contains(key)) throw IncompatibleError("checkpoint is missing module '" + key + "'");
    const ordered_json &entries = modules.at(key);
    for (NamedTensor &p : model.module_parameters(module)) {
      if (!entries.contains(p.name)) {
        throw IncompatibleError("checkpoint module '" + key + "' is missing tensor '" + p.name + "'");
      }
      const Tensor stored = read_btf(dir / entries.at(p.name).get<std::string>());
      if (stored.shape() != p.tensor.shape()) {
        throw IncompatibleError("tensor '" + key + "." + p.name + "' has shape " +
                                shape_to_string(stored.shape()) + ", model expects " +
                                shape_to_string(p.tensor.shape()));
      }
      std::span<double> dst = p.tensor.mutable_data();
      std::span<const double> src = stored.data();
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }
  return model;
}

}  // namespace changecap
