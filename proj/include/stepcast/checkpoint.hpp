#pragma once

#include "stepcast/config.hpp"
#include "stepcast/corpus.hpp"
#include "stepcast/model.hpp"
#include "stepcast/objectives.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <memory>
#include <string>

namespace stepcast {

inline constexpr int kCheckpointFormatVersion = 1;

struct TrainProgress {
  std::string stage = "init";  // init | pretrain | finetune
  long stage_step = 0;         // optimizer steps taken in the current stage
  long stage_total = 0;        // scheduled steps of the current stage
};

struct Checkpoint {
  ExperimentConfig config;
  Grammar grammar;
  std::unique_ptr<Model> model;
  AdamState adam;
  TrainProgress progress;
  nlohmann::json history = nlohmann::json::array();  // validation records
};

nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

/// Every parameter by name plus the frozen encoder tables.
nlohmann::json model_state(Model& model);
/// Throws DataError when a parameter is missing or has the wrong shape.
void load_model_state(Model& model, const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws DataError on unreadable files, unknown format versions or
/// parameter mismatches.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace stepcast
