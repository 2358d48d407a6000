#pragma once

#include <string>

#include "moetts/config.hpp"
#include "moetts/eval.hpp"
#include "moetts/synthdata.hpp"

namespace moetts {

// On-disk layout of one experiment directory.
struct PipelineArtifacts {
  CorpusPaths corpus;
  std::string base_ckpt;
  std::string converted_ckpt;
  std::string tts_ckpt;
  std::string final_ckpt;
  std::string final_full_ft_ckpt;
  std::string base_log;
  std::string tts_log;
  std::string finetune_log;
  std::string finetune_full_ft_log;
  std::string report;
  std::string report_full_ft;
};

PipelineArtifacts pipeline_paths(const std::string& out_dir);

void stage_gen_data(const RunConfig& cfg, const std::string& out_dir);
void stage_train_base(const RunConfig& cfg, const std::string& out_dir);
void stage_convert(const RunConfig& cfg, const std::string& out_dir);
void stage_train_tts(const RunConfig& cfg, const std::string& out_dir);
void stage_finetune(const RunConfig& cfg, const std::string& out_dir, bool full_finetune);
EvalReport stage_eval(const RunConfig& cfg, const std::string& out_dir, bool full_finetune);

// gen-data -> train-base -> convert -> train-tts -> finetune -> eval, all
// from one config and seed. Stages communicate via checkpoints, so the run
// is identical to invoking the stages as separate processes.
EvalReport run_pipeline(const RunConfig& cfg, const std::string& out_dir, bool full_finetune);

}  // namespace moetts
