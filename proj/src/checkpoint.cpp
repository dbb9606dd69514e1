#include "stepcast/checkpoint.hpp"

#include "stepcast/errors.hpp"

#include <fstream>
#include <set>

namespace stepcast {

nlohmann::json matrix_to_json(const Matrix& m) {
  return {{"rows", m.rows()},
          {"cols", m.cols()},
          {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<ad::Index>();
  const auto cols = j.at("cols").get<ad::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || data.size() != static_cast<std::size_t>(rows * cols)) {
    throw DataError("matrix entry has inconsistent size");
  }
  return Eigen::Map<const Matrix>(data.data(), rows, cols);
}

nlohmann::json model_state(Model& model) {
  nlohmann::json params = nlohmann::json::object();
  for (const ad::Parameter* p : model.trainable()) {
    if (params.contains(p->name)) {
      throw std::logic_error("duplicate parameter name " + p->name);
    }
    params[p->name] = matrix_to_json(p->value);
  }
  const FrozenEncoder& e = model.encoder;
  return {{"kind", std::string(model_kind_name(model.kind))},
          {"parameters", std::move(params)},
          {"encoder",
           {{"seed", e.seed()},
            {"modality", std::string(modality_name(e.modality()))},
            {"noise_sigma", e.noise_sigma()},
            {"embed_table", matrix_to_json(e.embed_table())},
            {"mix_matrix", matrix_to_json(e.mix_matrix())}}}};
}

void load_model_state(Model& model, const nlohmann::json& j) {
  try {
    if (parse_model_kind(j.at("kind").get<std::string>()) != model.kind) {
      throw DataError("checkpoint model kind does not match the configuration");
    }
    const auto& params = j.at("parameters");
    std::set<std::string> seen;
    for (ad::Parameter* p : model.trainable()) {
      if (!params.contains(p->name)) {
        throw DataError("checkpoint lacks parameter '" + p->name + "'");
      }
      Matrix v = matrix_from_json(params.at(p->name));
      if (v.rows() != p->value.rows() || v.cols() != p->value.cols()) {
        throw DataError("parameter '" + p->name + "' has shape " + std::to_string(v.rows()) + "x" +
                        std::to_string(v.cols()) + ", model expects " +
                        std::to_string(p->value.rows()) + "x" + std::to_string(p->value.cols()));
      }
      p->value = std::move(v);
      seen.insert(p->name);
    }
    if (seen.size() != params.size()) {
      throw DataError("checkpoint holds parameters the model does not have");
    }
    const auto& e = j.at("encoder");
    model.encoder = FrozenEncoder(matrix_from_json(e.at("embed_table")),
                                  matrix_from_json(e.at("mix_matrix")),
                                  e.at("seed").get<std::uint64_t>(),
                                  parse_modality(e.at("modality").get<std::string>()),
                                  e.at("noise_sigma").get<double>());
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("malformed model state: ") + ex.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (!ckpt.model) {
    throw std::invalid_argument("save_checkpoint: no model");
  }
  nlohmann::json j = {{"format_version", kCheckpointFormatVersion},
                      {"config", ckpt.config.to_json()},
                      {"grammar", ckpt.grammar.to_json()},
                      {"model", model_state(*ckpt.model)},
                      {"optimizer", ckpt.adam.to_json()},
                      {"progress",
                       {{"stage", ckpt.progress.stage},
                        {"stage_step", ckpt.progress.stage_step},
                        {"stage_total", ckpt.progress.stage_total}}},
                      {"history", ckpt.history}};
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) {
      throw DataError("cannot write checkpoint " + path.string());
    }
    out << j.dump();
    if (!out) {
      throw DataError("failed writing checkpoint " + path.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError("cannot open checkpoint " + path.string());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  Checkpoint c;
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
      throw DataError("unsupported checkpoint format_version " + std::to_string(version));
    }
    c.config = ExperimentConfig::from_json(j.at("config"));
    c.grammar = Grammar::from_json(j.at("grammar"));
    c.model = std::make_unique<Model>(c.config, c.grammar);
    load_model_state(*c.model, j.at("model"));
    c.adam = AdamState::from_json(j.at("optimizer"));
    const auto& p = j.at("progress");
    c.progress.stage = p.at("stage").get<std::string>();
    c.progress.stage_step = p.at("stage_step").get<long>();
    c.progress.stage_total = p.at("stage_total").get<long>();
    c.history = j.value("history", nlohmann::json::array());
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + path.string() + ": " + e.what());
  }
  return c;
}

}  // namespace stepcast
