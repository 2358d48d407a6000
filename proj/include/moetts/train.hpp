#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "moetts/model.hpp"

namespace moetts {

struct Schedule {
  double peak_lr = 3e-4;
  double final_lr = 0.0;
  double warmup_ratio = 0.08;
  int total_steps = 0;

  void validate() const;
  int warmup_steps() const;
};

// Linear warmup to the peak, then cosine decay to final_lr. Steps beyond
// total_steps clamp to final_lr.
double lr_at(int step, const Schedule& sched);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double clip_norm = 1.0;
};

// Decoupled-weight-decay Adam over an explicit tensor list. Moment state is
// allocated only for the tensors handed in, so frozen parameters never own
// optimizer state.
class AdamW {
 public:
  AdamW(std::vector<Tensor*> params, const AdamWConfig& cfg);

  // Applies one update from the tensors' accumulated gradients. Throws
  // TrainError on NaN/Inf gradients. Global-norm clipping at cfg.clip_norm
  // (<= 0 disables).
  void step(double lr);

  int step_count() const { return step_count_; }
  const std::vector<Tensor*>& params() const { return params_; }

 private:
  std::vector<Tensor*> params_;
  AdamWConfig cfg_;
  std::vector<Matrix> m_, v_;
  int step_count_ = 0;
};

// Mean masked next-token NLL. targets[i] pairs with logits row i; mask is
// aligned to targets. Throws TrainError when the mask is all zero.
double masked_nll(const Matrix& logits, const std::vector<int>& targets,
                  const std::vector<std::uint8_t>& mask);

// The trainable parameters of a model: everything for a base model, the
// speech experts plus speech/SPEECH_EOS table rows for a MoE model. The
// full_finetune flag (ablation) selects every parameter regardless of
// frozen flags.
std::vector<Tensor*> trainable_set(Model& m, bool full_finetune = false);
std::vector<const Tensor*> frozen_set(const Model& m);

enum class PhaseKind { BaseText, TtsPretrain, DescriptionFinetune };

const char* phase_name(PhaseKind kind);

struct TrainPhase {
  PhaseKind kind = PhaseKind::BaseText;
  std::string corpus_path;
  int epochs = 1;
  int batch_size = 8;
  int max_steps = -1;   // caps epochs * ceil(N/B) when >= 0
  int seq_cap = 4096;   // sequences longer than this are skipped
  bool full_finetune = false;
};

struct StepMetric {
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::string phase;
};

struct PhaseResult {
  std::vector<StepMetric> metrics;
  std::string frozen_digest_before;
  std::string frozen_digest_after;
};

// Runs one phase in place: deterministic shuffle per epoch, per-batch AdamW
// step under the warmup+cosine schedule. MoE phases digest the frozen set
// before and after and abort on any mismatch. Metrics are streamed to
// `log` (JSONL) when provided.
PhaseResult run_phase(Model& model, const TrainPhase& phase, const Schedule& base_sched,
                      const AdamWConfig& opt_cfg, std::uint64_t seed, std::ostream* log);

// Training sequences for a phase: chat-template assemblies for the MoE
// phases, raw text lines (loss on every next-token position) for BaseText.
std::vector<EncodedSequence> load_phase_sequences(const TrainPhase& phase, const Vocabulary& vocab);

}  // namespace moetts
