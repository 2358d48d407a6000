#include "moetts/pipeline.hpp"

#include <filesystem>
#include <fstream>

#include "moetts/digest.hpp"
#include "moetts/rng.hpp"
#include "moetts/store.hpp"
#include "moetts/train.hpp"
#include "nlohmann/json.hpp"

namespace moetts {

namespace fs = std::filesystem;

PipelineArtifacts pipeline_paths(const std::string& out_dir) {
  PipelineArtifacts a;
  a.corpus = corpus_paths(out_dir + "/corpus");
  a.base_ckpt = out_dir + "/ckpt/base.ckpt";
  a.converted_ckpt = out_dir + "/ckpt/converted.ckpt";
  a.tts_ckpt = out_dir + "/ckpt/tts.ckpt";
  a.final_ckpt = out_dir + "/ckpt/final.ckpt";
  a.final_full_ft_ckpt = out_dir + "/ckpt/final_full_ft.ckpt";
  a.base_log = out_dir + "/logs/base_text.jsonl";
  a.tts_log = out_dir + "/logs/tts_pretrain.jsonl";
  a.finetune_log = out_dir + "/logs/description_finetune.jsonl";
  a.finetune_full_ft_log = out_dir + "/logs/description_finetune_full_ft.jsonl";
  a.report = out_dir + "/report.json";
  a.report_full_ft = out_dir + "/report_full_ft.json";
  return a;
}

namespace {

void ensure_dirs(const std::string& out_dir) {
  fs::create_directories(out_dir + "/corpus");
  fs::create_directories(out_dir + "/ckpt");
  fs::create_directories(out_dir + "/logs");
}

TrainPhase make_phase(PhaseKind kind, const std::string& corpus, const PhaseSettings& s,
                      bool full_finetune = false) {
  TrainPhase p;
  p.kind = kind;
  p.corpus_path = corpus;
  p.epochs = s.epochs;
  p.batch_size = s.batch_size;
  p.max_steps = s.max_steps;
  p.seq_cap = s.seq_cap;
  p.full_finetune = full_finetune;
  return p;
}

}  // namespace

void stage_gen_data(const RunConfig& cfg, const std::string& out_dir) {
  ensure_dirs(out_dir);
  generate_corpus(cfg.data, out_dir + "/corpus");
}

void stage_train_base(const RunConfig& cfg, const std::string& out_dir) {
  ensure_dirs(out_dir);
  const auto art = pipeline_paths(out_dir);
  auto model = init_base(cfg.model, cfg.seed);
  std::ofstream log(art.base_log);
  run_phase(*model, make_phase(PhaseKind::BaseText, art.corpus.base_text, cfg.base_phase),
            cfg.schedule, cfg.optim, cfg.seed, &log);
  save_checkpoint(*model, art.base_ckpt, "base_text", cfg.seed);
}

void stage_convert(const RunConfig& cfg, const std::string& out_dir) {
  const auto art = pipeline_paths(out_dir);
  auto base = load_checkpoint(art.base_ckpt);
  auto moe = convert_to_moe(*base.model,
                            Vocabulary::extended(cfg.model.text_vocab, cfg.model.speech_vocab),
                            Rng::derive(cfg.seed, "convert"));
  save_checkpoint(*moe, art.converted_ckpt, "converted", cfg.seed);
}

void stage_train_tts(const RunConfig& cfg, const std::string& out_dir) {
  const auto art = pipeline_paths(out_dir);
  auto ckpt = load_checkpoint(art.converted_ckpt);
  std::ofstream log(art.tts_log);
  run_phase(*ckpt.model, make_phase(PhaseKind::TtsPretrain, art.corpus.tts, cfg.tts_phase),
            cfg.schedule, cfg.optim, cfg.seed, &log);
  save_checkpoint(*ckpt.model, art.tts_ckpt, "tts_pretrain", cfg.seed);
}

void stage_finetune(const RunConfig& cfg, const std::string& out_dir, bool full_finetune) {
  const auto art = pipeline_paths(out_dir);
  auto ckpt = load_checkpoint(art.tts_ckpt);
  std::ofstream log(full_finetune ? art.finetune_full_ft_log : art.finetune_log);
  run_phase(*ckpt.model,
            make_phase(PhaseKind::DescriptionFinetune, art.corpus.finetune, cfg.finetune_phase,
                       full_finetune),
            cfg.schedule, cfg.optim, cfg.seed, &log);
  save_checkpoint(*ckpt.model, full_finetune ? art.final_full_ft_ckpt : art.final_ckpt,
                  "description_finetune", cfg.seed);
}

EvalReport stage_eval(const RunConfig& cfg, const std::string& out_dir, bool full_finetune) {
  const auto art = pipeline_paths(out_dir);
  auto base = load_checkpoint(art.base_ckpt);
  auto converted = load_checkpoint(art.converted_ckpt);
  auto final_ckpt = load_checkpoint(full_finetune ? art.final_full_ft_ckpt : art.final_ckpt);
  Model& model = *final_ckpt.model;

  EvalReport report;
  report.phase = final_ckpt.meta.phase + (full_finetune ? " (full-finetune ablation)" : "");

  const auto texts = load_text_corpus(art.corpus.text_eval);
  report.base_perplexity = perplexity(*base.model, texts);
  report.text_perplexity = perplexity(model, texts);
  report.max_text_logit_delta = text_logit_delta(*base.model, model, texts);
  report.frozen_digest = param_digest(frozen_set(model));
  report.frozen_digest_match = report.frozen_digest == param_digest(frozen_set(*converted.model));

  SamplingConfig greedy;
  report.in_domain = attribute_accuracy(model, read_corpus(art.corpus.test_in), greedy,
                                        cfg.eval_max_len, Rng::derive(cfg.seed, "eval-in"));
  report.ood = attribute_accuracy(model, read_corpus(art.corpus.test_ood), greedy,
                                  cfg.eval_max_len, Rng::derive(cfg.seed, "eval-ood"));

  std::ofstream out(full_finetune ? art.report_full_ft : art.report);
  out << report.to_json().dump(2) << '\n';
  return report;
}

EvalReport run_pipeline(const RunConfig& cfg, const std::string& out_dir, bool full_finetune) {
  stage_gen_data(cfg, out_dir);
  stage_train_base(cfg, out_dir);
  stage_convert(cfg, out_dir);
  stage_train_tts(cfg, out_dir);
  stage_finetune(cfg, out_dir, full_finetune);
  return stage_eval(cfg, out_dir, full_finetune);
}

}  // namespace moetts
