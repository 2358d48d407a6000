#include "moetts/train.hpp"

#include <cmath>
#include <numeric>
#include <ostream>

#include "moetts/digest.hpp"
#include "moetts/rng.hpp"
#include "nlohmann/json.hpp"

namespace moetts {

void Schedule::validate() const {
  if (warmup_ratio < 0.0 || warmup_ratio >= 1.0) throw ConfigError("warmup_ratio must be in [0,1)");
  if (final_lr > peak_lr) throw ConfigError("final_lr must not exceed peak_lr");
  if (total_steps < 0) throw ConfigError("total_steps must be >= 0");
}

int Schedule::warmup_steps() const {
  return static_cast<int>(std::ceil(warmup_ratio * total_steps));
}

double lr_at(int step, const Schedule& sched) {
  sched.validate();
  if (step < 0) throw ConfigError("negative step");
  if (step >= sched.total_steps) return sched.final_lr;
  const int warmup = sched.warmup_steps();
  if (step < warmup) {
    return sched.peak_lr * static_cast<double>(step) / warmup;
  }
  const double progress =
      sched.total_steps == warmup
          ? 1.0
          : static_cast<double>(step - warmup) / (sched.total_steps - warmup);
  return sched.final_lr + (sched.peak_lr - sched.final_lr) * 0.5 * (1.0 + std::cos(M_PI * progress));
}

AdamW::AdamW(std::vector<Tensor*> params, const AdamWConfig& cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor* t : params_) {
    m_.push_back(Matrix::Zero(t->w.rows(), t->w.cols()));
    v_.push_back(Matrix::Zero(t->w.rows(), t->w.cols()));
  }
}

void AdamW::step(double lr) {
  double sq_norm = 0.0;
  for (const Tensor* t : params_) {
    if (!t->g.allFinite()) {
      throw TrainError("non-finite gradient in " + t->name + "; aborting step " +
                       std::to_string(step_count_ + 1));
    }
    sq_norm += t->g.squaredNorm();
  }
  double scale = 1.0;
  if (cfg_.clip_norm > 0.0) {
    const double norm = std::sqrt(sq_norm);
    if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
  }
  ++step_count_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, step_count_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, step_count_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = *params_[i];
    const Matrix g = t.g * scale;
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    const Matrix m_hat = m_[i] / bc1;
    const Matrix v_hat = v_[i] / bc2;
    const Matrix denom = (v_hat.array().sqrt() + cfg_.eps).matrix();
    t.w -= lr * (m_hat.cwiseQuotient(denom) + cfg_.weight_decay * t.w);
  }
}

double masked_nll(const Matrix& logits, const std::vector<int>& targets,
                  const std::vector<std::uint8_t>& mask) {
  if (static_cast<int>(targets.size()) != logits.rows() || targets.size() != mask.size()) {
    throw ShapeError("masked_nll: logits/targets/mask length mismatch");
  }
  double sum = 0.0;
  int count = 0;
  for (int i = 0; i < logits.rows(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    const auto row = logits.row(i);
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    sum += lse - row(targets[static_cast<std::size_t>(i)]);
    ++count;
  }
  if (count == 0) throw TrainError("masked_nll: all-zero loss mask");
  return sum / count;
}

std::vector<Tensor*> trainable_set(Model& m, bool full_finetune) {
  std::vector<Tensor*> out;
  if (m.kind() == ModelKind::Base || full_finetune) {
    for (Tensor* t : m.tensors()) out.push_back(t);
    return out;
  }
  if (m.kind() != ModelKind::Moe) {
    throw ContractError("trainable_set: model has no frozen/trainable partition");
  }
  for (Tensor* t : m.tensors()) {
    if (!t->frozen && t->role == Role::Speech) out.push_back(t);
  }
  return out;
}

std::vector<const Tensor*> frozen_set(const Model& m) {
  std::vector<const Tensor*> out;
  for (const Tensor* t : m.tensors()) {
    if (t->frozen) out.push_back(t);
  }
  return out;
}

const char* phase_name(PhaseKind kind) {
  switch (kind) {
    case PhaseKind::BaseText: return "base_text";
    case PhaseKind::TtsPretrain: return "tts_pretrain";
    case PhaseKind::DescriptionFinetune: return "description_finetune";
  }
  return "?";
}

std::vector<EncodedSequence> load_phase_sequences(const TrainPhase& phase,
                                                  const Vocabulary& vocab) {
  std::vector<EncodedSequence> seqs;
  if (phase.kind == PhaseKind::BaseText) {
    for (const auto& line : read_lines(phase.corpus_path)) {
      EncodedSequence s;
      s.ids = TextCodec::encode(line);
      if (static_cast<int>(s.ids.size()) < 2 ||
          static_cast<int>(s.ids.size()) > phase.seq_cap) {
        continue;
      }
      s.modality_mask.assign(s.ids.size(), Modality::Text);
      s.loss_mask.assign(s.ids.size(), 1);
      seqs.push_back(std::move(s));
    }
  } else {
    for (const auto& rec : read_corpus(phase.corpus_path)) {
      EncodedSequence s = assemble_example(rec.to_chat_example(true), vocab, true);
      if (s.length() > phase.seq_cap) continue;
      seqs.push_back(std::move(s));
    }
  }
  if (seqs.empty()) throw TrainError("no usable sequences in " + phase.corpus_path);
  return seqs;
}

PhaseResult run_phase(Model& model, const TrainPhase& phase, const Schedule& base_sched,
                      const AdamWConfig& opt_cfg, std::uint64_t seed, std::ostream* log) {
  const bool is_moe_phase = phase.kind != PhaseKind::BaseText;
  if (is_moe_phase && model.kind() != ModelKind::Moe) {
    throw ContractError("MoE training phase requires a converted model");
  }
  if (!is_moe_phase && model.kind() != ModelKind::Base) {
    throw ContractError("base text phase requires a base model");
  }

  PhaseResult result;
  const bool check_frozen = is_moe_phase && !phase.full_finetune;
  if (check_frozen) result.frozen_digest_before = param_digest(frozen_set(model));

  auto seqs = load_phase_sequences(phase, model.vocab());
  auto trainable = trainable_set(model, phase.full_finetune);
  AdamW opt(trainable, opt_cfg);

  const int n = static_cast<int>(seqs.size());
  const int batches_per_epoch = (n + phase.batch_size - 1) / phase.batch_size;
  int total_steps = phase.epochs * batches_per_epoch;
  if (phase.max_steps >= 0) total_steps = std::min(total_steps, phase.max_steps);
  Schedule sched = base_sched;
  sched.total_steps = total_steps;
  sched.validate();

  Rng order_rng(Rng::derive(seed, std::string("order:") + phase_name(phase.kind)));
  int step = 0;
  for (int epoch = 0; epoch < phase.epochs && step < total_steps; ++epoch) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (int i = n - 1; i > 0; --i) {
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(order_rng.uniform_int(0, i))]);
    }
    for (int b = 0; b < batches_per_epoch && step < total_steps; ++b) {
      model.zero_grad();
      double loss_sum = 0.0;
      int count = 0;
      const int lo = b * phase.batch_size;
      const int hi = std::min(n, lo + phase.batch_size);
      for (int i = lo; i < hi; ++i) {
        const auto [ls, c] = model.loss_backward(seqs[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
        loss_sum += ls;
        count += c;
      }
      if (count == 0) throw TrainError("batch with all-zero loss mask");
      for (Tensor* t : trainable) t->g /= static_cast<double>(count);

      // step counts from 1 so the first update uses a nonzero warmup lr
      const double lr = lr_at(std::min(step + 1, total_steps), sched);
      opt.step(lr);
      ++step;
      StepMetric m{step, lr, loss_sum / count, phase_name(phase.kind)};
      if (log) {
        nlohmann::json j{{"step", m.step}, {"lr", m.lr}, {"loss", m.loss}, {"phase", m.phase}};
        (*log) << j.dump() << '\n';
      }
      result.metrics.push_back(std::move(m));
    }
  }

  if (check_frozen) {
    result.frozen_digest_after = param_digest(frozen_set(model));
    if (result.frozen_digest_after != result.frozen_digest_before) {
      throw TrainError("frozen-parameter digest changed during " +
                       std::string(phase_name(phase.kind)));
    }
  }
  return result;
}

}  // namespace moetts
