#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "moetts/pipeline.hpp"
#include "moetts/rng.hpp"
#include "moetts/store.hpp"
#include "moetts/verify.hpp"
#include "nlohmann/json.hpp"

namespace {

using namespace moetts;

RunConfig load_config(const std::string& config_path, std::uint64_t seed_override,
                      bool has_seed) {
  RunConfig cfg = config_path.empty() ? RunConfig::desk_default() : RunConfig::load(config_path);
  if (has_seed) {
    cfg.seed = seed_override;
    cfg.data.seed = seed_override;
  }
  return cfg;
}

void print_accuracy(const char* label, const AttributeAccuracy& a) {
  std::printf("%s: gender=%.3f pitch=%.3f speed=%.3f style=%.3f  decode_fail=%.3f cer=%.3f\n",
              label, a.gender, a.pitch, a.speed, a.style, a.decode_failure_rate,
              a.transcript_error_rate);
}

void print_report(const EvalReport& r) {
  std::printf("phase: %s\n", r.phase.c_str());
  print_accuracy("in-domain", r.in_domain);
  print_accuracy("ood      ", r.ood);
  std::printf("perplexity: base=%.6f model=%.6f\n", r.base_perplexity, r.text_perplexity);
  std::printf("max text-logit delta: %.3e\n", r.max_text_logit_delta);
  std::printf("frozen digest match: %s\n", r.frozen_digest_match ? "yes" : "no");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"modality-routed MoE speech-token language model"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::string out_dir = "run";
  std::uint64_t seed = 0;
  bool has_seed = false;
  std::string ablation;
  std::string sampling_mode = "greedy";
  int max_len = 160;

  app.add_option("--config", config_path, "JSON config file (defaults to the desk-scale config)");
  app.add_option("--seed", seed, "global seed override")->each([&](const std::string&) {
    has_seed = true;
  });
  app.add_option("--out", out_dir, "output directory for artifacts");
  app.add_option("--ablation", ablation, "ablation mode: full-finetune")
      ->check(CLI::IsMember({"full-finetune"}));
  app.add_option("--sampling", sampling_mode, "decoding mode")
      ->check(CLI::IsMember({"greedy", "topk"}));
  app.add_option("--max-len", max_len, "maximum generated speech tokens");

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpora");
  auto* train_base = app.add_subcommand("train-base", "train the base text model");
  auto* convert = app.add_subcommand("convert", "convert the base model into the MoE model");
  auto* train_tts = app.add_subcommand("train-tts", "speech pre-training phase");
  auto* finetune = app.add_subcommand("finetune", "description fine-tuning phase");
  auto* eval_cmd = app.add_subcommand("eval", "evaluate the final checkpoint");
  auto* verify_cmd = app.add_subcommand("verify", "run the invariant suite on a fresh conversion");
  auto* infer = app.add_subcommand("infer", "generate speech tokens for one input");
  auto* pipeline_cmd = app.add_subcommand("pipeline", "run all stages end to end");

  std::string description, transcript, ckpt_path;
  infer->add_option("--description", description, "voice description text");
  infer->add_option("--transcript", transcript, "text to synthesize")->required();
  infer->add_option("--ckpt", ckpt_path, "checkpoint (defaults to <out>/ckpt/final.ckpt)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const bool full_ft = ablation == "full-finetune";
  try {
    const RunConfig cfg = load_config(config_path, seed, has_seed);
    if (gen->parsed()) {
      stage_gen_data(cfg, out_dir);
      std::printf("corpora written under %s/corpus\n", out_dir.c_str());
    } else if (train_base->parsed()) {
      stage_train_base(cfg, out_dir);
      std::printf("base checkpoint: %s\n", pipeline_paths(out_dir).base_ckpt.c_str());
    } else if (convert->parsed()) {
      stage_convert(cfg, out_dir);
      std::printf("converted checkpoint: %s\n", pipeline_paths(out_dir).converted_ckpt.c_str());
    } else if (train_tts->parsed()) {
      stage_train_tts(cfg, out_dir);
      std::printf("tts checkpoint: %s\n", pipeline_paths(out_dir).tts_ckpt.c_str());
    } else if (finetune->parsed()) {
      stage_finetune(cfg, out_dir, full_ft);
      const auto art = pipeline_paths(out_dir);
      std::printf("final checkpoint: %s\n",
                  (full_ft ? art.final_full_ft_ckpt : art.final_ckpt).c_str());
    } else if (eval_cmd->parsed()) {
      print_report(stage_eval(cfg, out_dir, full_ft));
    } else if (pipeline_cmd->parsed()) {
      print_report(run_pipeline(cfg, out_dir, full_ft));
    } else if (verify_cmd->parsed()) {
      auto base = init_base(cfg.model, cfg.seed);
      auto moe = convert_to_moe(*base,
                                Vocabulary::extended(cfg.model.text_vocab, cfg.model.speech_vocab),
                                Rng::derive(cfg.seed, "convert"));
      bool ok = true;
      for (const auto& r : run_invariant_suite(*moe, *base, cfg.seed)) {
        std::printf("[%s] %s: %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(),
                    r.detail.c_str());
        if (!r.passed) {
          ok = false;
          std::fprintf(stderr, "invariant failed: %s\n", r.name.c_str());
        }
      }
      return ok ? 0 : 1;
    } else if (infer->parsed()) {
      const auto art = pipeline_paths(out_dir);
      auto ckpt = load_checkpoint(ckpt_path.empty() ? art.final_ckpt : ckpt_path);
      ChatExample ex;
      ex.system = TextCodec::encode("you are a speech assistant.");
      ex.description = TextCodec::encode(description);
      ex.transcript = TextCodec::encode(transcript);
      const auto prefix = assemble_example(ex, ckpt.model->vocab(), false);
      SamplingConfig sampling;
      sampling.greedy = sampling_mode == "greedy";
      const auto tokens =
          ckpt.model->generate(prefix, sampling, max_len, Rng::derive(cfg.seed, "infer"), true);
      nlohmann::json out;
      out["tokens"] = tokens;
      try {
        const auto dec = oracle_decode(tokens, true);
        out["decoded"] = nlohmann::json::parse(dec.attrs.attrs_json());
        out["decoded"]["transcript"] = dec.transcript;
        out["decoded"]["strict_valid"] = dec.strict_valid;
      } catch (const DecodeError& e) {
        out["decode_error"] = e.what();
      }
      std::printf("%s\n", out.dump(2).c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
