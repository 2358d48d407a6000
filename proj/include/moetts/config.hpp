#pragma once

#include <cstdint>
#include <string>

#include "moetts/model.hpp"
#include "moetts/synthdata.hpp"
#include "moetts/train.hpp"
#include "nlohmann/json_fwd.hpp"

namespace moetts {

struct PhaseSettings {
  int epochs = 1;
  int batch_size = 8;
  int max_steps = -1;
  int seq_cap = 4096;
};

// One declarative document covering the whole pipeline.
struct RunConfig {
  ModelConfig model;
  Schedule schedule;          // total_steps filled per phase at run time
  AdamWConfig optim;
  CorpusSpec data;
  PhaseSettings base_phase;
  PhaseSettings tts_phase;
  PhaseSettings finetune_phase;
  std::uint64_t seed = 1234;
  int eval_max_len = 160;

  static RunConfig desk_default();
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);
  nlohmann::json to_json() const;
};

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace moetts
