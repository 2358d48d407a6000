#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "moetts/digest.hpp"
#include "moetts/synthdata.hpp"
#include "moetts/train.hpp"
#include "moetts/verify.hpp"

using namespace moetts;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.layers = 1;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.head_dim = 8;
  cfg.ffn_dim = 32;
  cfg.text_vocab = 64;
  cfg.speech_vocab = 64;
  return cfg;
}

Tensor scalar_tensor(double w, double g) {
  Tensor t;
  t.name = "scalar";
  t.w = Matrix::Constant(1, 1, w);
  t.g = Matrix::Constant(1, 1, g);
  return t;
}

std::filesystem::path make_tiny_corpus(const char* name, int examples) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::vector<CorpusRecord> records;
  const auto combos = VoiceAttributes::all_combinations();
  for (int i = 0; i < examples; ++i) {
    CorpusRecord r;
    r.system = "s";
    r.description = i % 2 ? std::optional<std::string>("a calm voice") : std::nullopt;
    r.transcript = std::string(1, static_cast<char>('a' + i % 26));
    const auto& attrs = combos[static_cast<std::size_t>(i) % combos.size()];
    r.speech = speech_encode(attrs, r.transcript);
    r.attrs_json = attrs.attrs_json();
    r.domain = "in";
    records.push_back(std::move(r));
  }
  write_corpus(path.string(), records);
  return path;
}

}  // namespace

TEST_CASE("masked nll basics") {
  Matrix logits = Matrix::Zero(3, 5);  // uniform over 5 ids
  std::vector<int> targets = {1, 2, 3};
  std::vector<std::uint8_t> mask = {0, 1, 0};
  CHECK(masked_nll(logits, targets, mask) == doctest::Approx(std::log(5.0)).epsilon(1e-12));

  // Unmasked targets are irrelevant.
  std::vector<int> other_targets = {4, 2, 0};
  CHECK(masked_nll(logits, targets, mask) == masked_nll(logits, other_targets, mask));

  // Mean over two masked positions.
  Matrix l2 = Matrix::Zero(2, 4);
  l2(1, 0) = 3.0;
  std::vector<int> t2 = {0, 0};
  std::vector<std::uint8_t> m2 = {1, 1};
  const double a = std::log(4.0);
  const double b = std::log(std::exp(3.0) + 3.0) - 3.0;
  CHECK(masked_nll(l2, t2, m2) == doctest::Approx((a + b) / 2).epsilon(1e-12));

  CHECK_THROWS_AS(masked_nll(logits, targets, {0, 0, 0}), TrainError);
  CHECK_THROWS_AS(masked_nll(logits, {1, 2}, {1, 1}), ShapeError);
}

TEST_CASE("schedule endpoints and shape") {
  Schedule s;
  s.peak_lr = 3e-4;
  s.final_lr = 0.0;
  s.warmup_ratio = 0.08;
  s.total_steps = 250;
  const int w = s.warmup_steps();
  CHECK(w == 20);
  CHECK(lr_at(0, s) == 0.0);
  CHECK(lr_at(w, s) == doctest::Approx(3e-4).epsilon(1e-15));
  CHECK(lr_at(s.total_steps, s) == s.final_lr);
  CHECK(lr_at(s.total_steps + 100, s) == s.final_lr);

  // Non-decreasing through warmup, non-increasing after; continuous-ish.
  for (int i = 1; i <= w; ++i) CHECK(lr_at(i, s) >= lr_at(i - 1, s));
  for (int i = w + 1; i <= s.total_steps; ++i) {
    CHECK(lr_at(i, s) <= lr_at(i - 1, s));
    CHECK(std::abs(lr_at(i, s) - lr_at(i - 1, s)) < 3e-6);
  }
  Schedule bad = s;
  bad.warmup_ratio = 1.0;
  CHECK_THROWS_AS(lr_at(0, bad), ConfigError);
}

TEST_CASE("adamw matches a hand-computed two-step scalar trace") {
  AdamWConfig cfg;
  cfg.beta1 = 0.9;
  cfg.beta2 = 0.98;
  cfg.eps = 1e-8;
  cfg.weight_decay = 0.01;
  cfg.clip_norm = 0.0;  // keep the oracle free of clipping
  Tensor t = scalar_tensor(1.0, 1.0);
  AdamW opt({&t}, cfg);
  const double lr = 0.1;

  // Independent recurrence, written out term by term.
  double w = 1.0, m = 0.0, v = 0.0;
  for (int step = 1; step <= 2; ++step) {
    const double g = 0.5 * step;  // gradients 0.5 then 1.0
    m = 0.9 * m + 0.1 * g;
    v = 0.98 * v + 0.02 * g * g;
    const double m_hat = m / (1.0 - std::pow(0.9, step));
    const double v_hat = v / (1.0 - std::pow(0.98, step));
    w -= lr * (m_hat / (std::sqrt(v_hat) + 1e-8) + 0.01 * w);
  }

  t.g.setConstant(0.5);
  opt.step(lr);
  t.g.setConstant(1.0);
  opt.step(lr);
  CHECK(t.w(0, 0) == doctest::Approx(w).epsilon(1e-12));
}

TEST_CASE("adamw edge behavior") {
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  Tensor t = scalar_tensor(2.5, 0.0);
  AdamW opt({&t}, cfg);
  opt.step(0.1);
  CHECK(t.w(0, 0) == 2.5);  // zero grad + zero decay -> untouched

  t.g.setConstant(std::nan(""));
  CHECK_THROWS_AS(opt.step(0.1), TrainError);

  // Gradient clipping rescales to the requested global norm.
  AdamWConfig clip_cfg;
  clip_cfg.weight_decay = 0.0;
  clip_cfg.clip_norm = 1.0;
  Tensor a = scalar_tensor(0.0, 30.0);
  Tensor b = scalar_tensor(0.0, 40.0);  // global norm 50 -> scaled by 1/50
  AdamW opt2({&a, &b}, clip_cfg);
  opt2.step(1.0);
  // First step: m_hat = g_clipped, v_hat = g_clipped^2, so the update is
  // -lr * g/( |g| + eps ) = -lr * sign within eps.
  CHECK(a.w(0, 0) == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(b.w(0, 0) == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("optimizer state exists only for the handed-in tensors") {
  auto base = init_base(tiny_config(), 3);
  auto moe = convert_to_moe(*base, Vocabulary::extended(64, 64), 4);
  auto trainable = trainable_set(*moe);
  for (const Tensor* t : trainable) CHECK_FALSE(t->frozen);
  const auto frozen = frozen_set(*moe);
  // Frozen and trainable partition the converted model's tensors exactly.
  CHECK(trainable.size() + frozen.size() == moe->tensors().size());
}

TEST_CASE("training a moe phase leaves frozen parameters bitwise intact") {
  const auto corpus = make_tiny_corpus("moetts_train_tiny.jsonl", 24);
  auto base = init_base(tiny_config(), 3);
  auto moe = convert_to_moe(*base, Vocabulary::extended(64, 64), 4);

  const auto frozen_before = param_digest(frozen_set(*moe));
  TrainPhase phase;
  phase.kind = PhaseKind::TtsPretrain;
  phase.corpus_path = corpus.string();
  phase.epochs = 2;
  phase.batch_size = 4;
  Schedule sched;
  AdamWConfig opt;
  const auto result = run_phase(*moe, phase, sched, opt, 7, nullptr);
  CHECK(result.frozen_digest_before == frozen_before);
  CHECK(result.frozen_digest_after == frozen_before);
  CHECK(param_digest(frozen_set(*moe)) == frozen_before);
  CHECK_FALSE(result.metrics.empty());
  std::filesystem::remove(corpus);
}

TEST_CASE("run_phase is deterministic and honors step caps") {
  const auto corpus = make_tiny_corpus("moetts_train_det.jsonl", 24);
  Schedule sched;
  AdamWConfig optc;
  TrainPhase phase;
  phase.kind = PhaseKind::DescriptionFinetune;
  phase.corpus_path = corpus.string();
  phase.epochs = 3;
  phase.batch_size = 4;

  auto run_once = [&](int max_steps) {
    auto base = init_base(tiny_config(), 3);
    auto moe = convert_to_moe(*base, Vocabulary::extended(64, 64), 4);
    TrainPhase p = phase;
    p.max_steps = max_steps;
    std::ostringstream log;
    const auto res = run_phase(*moe, p, sched, optc, 7, &log);
    return std::make_tuple(param_digest(moe->tensors()), log.str(), res.metrics.size());
  };
  const auto [d1, l1, n1] = run_once(-1);
  const auto [d2, l2, n2] = run_once(-1);
  CHECK(d1 == d2);
  CHECK(l1 == l2);
  CHECK(n1 == 18);  // 3 epochs x ceil(24/4)

  const auto [d3, l3, n3] = run_once(5);
  CHECK(n3 == 5);
  CHECK(d3 != d1);

  // 0 steps: parameters bitwise unchanged.
  auto base = init_base(tiny_config(), 3);
  auto moe = convert_to_moe(*base, Vocabulary::extended(64, 64), 4);
  const auto before = param_digest(moe->tensors());
  TrainPhase p0 = phase;
  p0.max_steps = 0;
  run_phase(*moe, p0, sched, optc, 7, nullptr);
  CHECK(param_digest(moe->tensors()) == before);
  std::filesystem::remove(corpus);
}

TEST_CASE("phase/model kind mismatches are contract errors") {
  const auto corpus = make_tiny_corpus("moetts_train_kind.jsonl", 8);
  auto base = init_base(tiny_config(), 3);
  TrainPhase phase;
  phase.kind = PhaseKind::TtsPretrain;
  phase.corpus_path = corpus.string();
  Schedule sched;
  AdamWConfig optc;
  CHECK_THROWS_AS(run_phase(*base, phase, sched, optc, 7, nullptr), ContractError);

  auto moe = convert_to_moe(*base, Vocabulary::extended(64, 64), 4);
  phase.kind = PhaseKind::BaseText;
  CHECK_THROWS_AS(run_phase(*moe, phase, sched, optc, 7, nullptr), ContractError);
  std::filesystem::remove(corpus);
}

TEST_CASE("base text sequences put loss on every position") {
  const auto path = std::filesystem::temp_directory_path() / "moetts_train_lines.txt";
  write_lines(path.string(), {"a calm voice", "x"});
  TrainPhase phase;
  phase.kind = PhaseKind::BaseText;
  phase.corpus_path = path.string();
  const auto seqs = load_phase_sequences(phase, Vocabulary::text_only(64));
  REQUIRE(seqs.size() == 1);  // single-char line dropped (< 2 tokens)
  CHECK(seqs[0].ids.size() == 12);
  for (auto m : seqs[0].loss_mask) CHECK(m == 1);
  std::filesystem::remove(path);
}

TEST_CASE("every trainable tensor receives gradient on the tiny corpus") {
  const auto corpus = make_tiny_corpus("moetts_train_flow.jsonl", 72);
  auto base = init_base(tiny_config(), 3);
  auto moe = convert_to_moe(*base, Vocabulary::extended(64, 64), 4);
  TrainPhase phase;
  phase.kind = PhaseKind::DescriptionFinetune;
  phase.corpus_path = corpus.string();
  const auto seqs = load_phase_sequences(phase, moe->vocab());
  const auto res = check_gradient_flow(*moe, seqs);
  CHECK_MESSAGE(res.passed, res.detail);
  std::filesystem::remove(corpus);
}
