#include "moetts/config.hpp"

#include <fstream>

#include "nlohmann/json.hpp"

namespace moetts {

namespace {

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

PhaseSettings phase_from_json(const nlohmann::json& j) {
  PhaseSettings p;
  maybe(j, "epochs", p.epochs);
  maybe(j, "batch_size", p.batch_size);
  maybe(j, "max_steps", p.max_steps);
  maybe(j, "seq_cap", p.seq_cap);
  return p;
}

nlohmann::json phase_to_json(const PhaseSettings& p) {
  return {{"epochs", p.epochs},
          {"batch_size", p.batch_size},
          {"max_steps", p.max_steps},
          {"seq_cap", p.seq_cap}};
}

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return {{"layers", cfg.layers},       {"d_model", cfg.d_model},
          {"heads", cfg.heads},         {"head_dim", cfg.head_dim},
          {"ffn_dim", cfg.ffn_dim},     {"rope_base", cfg.rope_base},
          {"norm_eps", cfg.norm_eps},   {"text_vocab", cfg.text_vocab},
          {"speech_vocab", cfg.speech_vocab}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  maybe(j, "layers", cfg.layers);
  maybe(j, "d_model", cfg.d_model);
  maybe(j, "heads", cfg.heads);
  maybe(j, "head_dim", cfg.head_dim);
  maybe(j, "ffn_dim", cfg.ffn_dim);
  maybe(j, "rope_base", cfg.rope_base);
  maybe(j, "norm_eps", cfg.norm_eps);
  maybe(j, "text_vocab", cfg.text_vocab);
  maybe(j, "speech_vocab", cfg.speech_vocab);
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::desk_default() {
  RunConfig c;
  c.model.layers = 4;
  c.model.d_model = 128;
  c.model.heads = 4;
  c.model.head_dim = 32;
  c.model.ffn_dim = 512;
  c.model.text_vocab = 64;
  c.model.speech_vocab = SpeechTokenGrammar::kVocabSize;
  return c;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c = desk_default();
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    maybe(s, "peak_lr", c.schedule.peak_lr);
    maybe(s, "final_lr", c.schedule.final_lr);
    maybe(s, "warmup_ratio", c.schedule.warmup_ratio);
  }
  if (j.contains("optim")) {
    const auto& o = j.at("optim");
    maybe(o, "beta1", c.optim.beta1);
    maybe(o, "beta2", c.optim.beta2);
    maybe(o, "eps", c.optim.eps);
    maybe(o, "weight_decay", c.optim.weight_decay);
    maybe(o, "clip_norm", c.optim.clip_norm);
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    maybe(d, "base_text_sentences", c.data.base_text_sentences);
    maybe(d, "text_eval_sentences", c.data.text_eval_sentences);
    maybe(d, "tts_examples", c.data.tts_examples);
    maybe(d, "finetune_examples", c.data.finetune_examples);
    maybe(d, "test_in_count", c.data.test_in_count);
    maybe(d, "test_ood_count", c.data.test_ood_count);
    maybe(d, "min_words", c.data.min_words);
    maybe(d, "max_words", c.data.max_words);
  }
  if (j.contains("phases")) {
    const auto& p = j.at("phases");
    if (p.contains("base")) c.base_phase = phase_from_json(p.at("base"));
    if (p.contains("tts")) c.tts_phase = phase_from_json(p.at("tts"));
    if (p.contains("finetune")) c.finetune_phase = phase_from_json(p.at("finetune"));
  }
  maybe(j, "seed", c.seed);
  maybe(j, "eval_max_len", c.eval_max_len);
  c.data.seed = c.seed;
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  nlohmann::json j;
  in >> j;
  return from_json(j);
}

nlohmann::json RunConfig::to_json() const {
  return {{"model", model_config_to_json(model)},
          {"schedule",
           {{"peak_lr", schedule.peak_lr},
            {"final_lr", schedule.final_lr},
            {"warmup_ratio", schedule.warmup_ratio}}},
          {"optim",
           {{"beta1", optim.beta1},
            {"beta2", optim.beta2},
            {"eps", optim.eps},
            {"weight_decay", optim.weight_decay},
            {"clip_norm", optim.clip_norm}}},
          {"data",
           {{"base_text_sentences", data.base_text_sentences},
            {"text_eval_sentences", data.text_eval_sentences},
            {"tts_examples", data.tts_examples},
            {"finetune_examples", data.finetune_examples},
            {"test_in_count", data.test_in_count},
            {"test_ood_count", data.test_ood_count},
            {"min_words", data.min_words},
            {"max_words", data.max_words}}},
          {"phases",
           {{"base", phase_to_json(base_phase)},
            {"tts", phase_to_json(tts_phase)},
            {"finetune", phase_to_json(finetune_phase)}}},
          {"seed", seed},
          {"eval_max_len", eval_max_len}};
}

}  // namespace moetts
