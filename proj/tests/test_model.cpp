#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "moetts/digest.hpp"
#include "moetts/model.hpp"
#include "moetts/rng.hpp"
#include "moetts/train.hpp"
#include "moetts/verify.hpp"

using namespace moetts;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.head_dim = 8;
  cfg.ffn_dim = 32;
  cfg.text_vocab = 64;
  cfg.speech_vocab = 64;
  return cfg;
}

EncodedSequence text_sequence(const Vocabulary& vocab, const std::vector<int>& ids) {
  EncodedSequence seq;
  seq.ids = ids;
  for (int id : ids) seq.modality_mask.push_back(vocab.modality_of(id));
  seq.loss_mask.assign(ids.size(), 0);
  return seq;
}

double silu_ref(double x) { return x / (1.0 + std::exp(-x)); }

Matrix rms_ref(const Matrix& x, const Eigen::RowVectorXd& scale, double eps) {
  Matrix y = x;
  for (int i = 0; i < x.rows(); ++i) {
    const double inv = 1.0 / std::sqrt(x.row(i).squaredNorm() / x.cols() + eps);
    y.row(i) = (x.row(i) * inv).cwiseProduct(scale);
  }
  return y;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig cfg = small_config();
  cfg.d_model = 17;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.head_dim = 7;
  cfg.d_model = 14;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.text_vocab = 45;  // must fit the 45-char alphabet plus the separator
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_NOTHROW(small_config().validate());
}

TEST_CASE("base initialization is deterministic per seed") {
  const auto cfg = small_config();
  auto a = init_base(cfg, 5);
  auto b = init_base(cfg, 5);
  auto c = init_base(cfg, 6);
  CHECK(param_digest(a->tensors()) == param_digest(b->tensors()));
  CHECK(param_digest(a->tensors()) != param_digest(c->tensors()));
  // Norm scales start at ones.
  CHECK(a->layers()[0].ln1.text.w.isOnes());
  CHECK(a->final_norm().text.w.isOnes());
}

TEST_CASE("conversion copies experts bitwise and freezes the text side") {
  const auto cfg = small_config();
  auto base = init_base(cfg, 11);
  auto moe = convert_to_moe(*base, Vocabulary::extended(cfg.text_vocab, cfg.speech_vocab), 12);

  for (auto& lw : moe->layers()) {
    for (ExpertPair* p : {&lw.ln1, &lw.wq, &lw.wk, &lw.wv, &lw.wo, &lw.ln2, &lw.w1, &lw.w2}) {
      REQUIRE(p->routed());
      CHECK(p->text.w == p->speech->w);
      CHECK(p->text.frozen);
      CHECK_FALSE(p->speech->frozen);
      CHECK(p->text.role == Role::Text);
      CHECK(p->speech->role == Role::Speech);
    }
  }

  // Text-side weights are byte-identical to the base model's.
  auto base_q = base->find_tensor("layer0.wq");
  auto moe_q = moe->find_tensor("layer0.wq.text");
  REQUIRE(base_q != nullptr);
  REQUIRE(moe_q != nullptr);
  CHECK(base_q->w == moe_q->w);

  CHECK(moe->embedding().text.frozen);
  CHECK(moe->head().text.frozen);
  CHECK_FALSE(moe->embedding().speech->frozen);
  CHECK_FALSE(moe->embedding().speech_eos.frozen);
  CHECK(moe->embedding().speech_eos.role == Role::Speech);

  // New table rows: mean of the text rows plus small noise.
  const Eigen::RowVectorXd mean = moe->embedding().text.w.colwise().mean();
  const double dev = (moe->embedding().speech->w.rowwise() - mean).cwiseAbs().maxCoeff();
  CHECK(dev > 0.0);
  CHECK(dev < 1e-2);
}

TEST_CASE("trainable selector size matches the shape arithmetic") {
  const auto cfg = small_config();
  auto base = init_base(cfg, 11);
  auto moe = convert_to_moe(*base, Vocabulary::extended(cfg.text_vocab, cfg.speech_vocab), 12);

  const auto trainable = trainable_set(*moe);
  std::int64_t n = 0;
  for (const Tensor* t : trainable) {
    CHECK_FALSE(t->frozen);
    CHECK(t->role == Role::Speech);
    n += t->w.size();
  }
  const std::int64_t d = cfg.d_model;
  const std::int64_t per_layer = 2 * d + 4 * d * d + 2 * d * cfg.ffn_dim;
  const std::int64_t routed_base = cfg.layers * per_layer + d;  // + final norm
  const std::int64_t new_rows = 2 * (cfg.speech_vocab + 1) * d;  // embedding + head
  CHECK(n == routed_base + new_rows);

  // Full-finetune ablation selects every parameter.
  std::int64_t all = 0;
  for (const Tensor* t : trainable_set(*moe, true)) all += t->w.size();
  CHECK(all == moe->parameter_count());
}

TEST_CASE("routed application: degenerate and mixed masks") {
  const auto cfg = small_config();
  auto base = init_base(cfg, 3);
  auto moe = convert_to_moe(*base, Vocabulary::extended(cfg.text_vocab, cfg.speech_vocab), 4);
  auto& pair = moe->layers()[0].wq;

  Rng rng(9);
  Matrix x(3, cfg.d_model);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.normal(0.0, 1.0);

  const std::vector<Modality> all_text(3, Modality::Text);
  const std::vector<Modality> mixed = {Modality::Text, Modality::Speech, Modality::Text};

  // All-Text routing is exactly the dense text map.
  CHECK(moe_apply(pair, "linear", x, all_text) == Matrix(x * pair.text.w));

  // Equal experts: mixed routing equals dense application.
  const Matrix dense = x * pair.text.w;
  CHECK((moe_apply(pair, "linear", x, mixed) - dense).cwiseAbs().maxCoeff() < 1e-12);

  // Perturbing the speech expert moves only the speech row.
  const Matrix before = moe_apply(pair, "linear", x, mixed);
  pair.speech->w.array() += 0.5;
  const Matrix after = moe_apply(pair, "linear", x, mixed);
  CHECK(before.row(0) == after.row(0));
  CHECK(before.row(2) == after.row(2));
  CHECK((before.row(1) - after.row(1)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("routed norm matches the reference formula") {
  const auto cfg = small_config();
  auto base = init_base(cfg, 3);
  auto& pair = base->layers()[0].ln1;
  pair.text.w = Eigen::RowVectorXd::LinSpaced(cfg.d_model, 0.5, 2.0);

  Rng rng(10);
  Matrix x(2, cfg.d_model);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.normal(0.0, 1.0);
  const std::vector<Modality> mask(2, Modality::Text);
  const Matrix got = moe_apply(pair, "norm", x, mask, cfg.norm_eps);
  const Matrix want = rms_ref(x, pair.text.w.row(0), cfg.norm_eps);
  CHECK((got - want).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("single-token forward matches a manual recomputation") {
  const auto cfg = small_config();
  auto m = init_base(cfg, 21);
  const auto seq = text_sequence(m->vocab(), {7});
  const Matrix logits = m->forward(seq);

  // At T=1 rotary encoding is the identity (position 0) and softmax over one
  // position is 1, so attention reduces to wo(v).
  Matrix x = m->embedding().text.w.row(7);
  for (auto& lw : m->layers()) {
    const Matrix n1 = rms_ref(x, lw.ln1.text.w.row(0), cfg.norm_eps);
    const Matrix v = n1 * lw.wv.text.w;
    const Matrix x_mid = x + v * lw.wo.text.w;
    const Matrix n2 = rms_ref(x_mid, lw.ln2.text.w.row(0), cfg.norm_eps);
    const Matrix h1 = (n2 * lw.w1.text.w).unaryExpr([](double t) { return silu_ref(t); });
    x = x_mid + h1 * lw.w2.text.w;
  }
  const Matrix nf = rms_ref(x, m->final_norm().text.w.row(0), cfg.norm_eps);
  Matrix want = Matrix::Zero(1, m->vocab().total_size());
  want.leftCols(cfg.text_vocab) = nf * m->head().text.w.transpose();
  want.middleCols(cfg.text_vocab, 8) = nf * m->head().special_pre.w.transpose();
  want.middleCols(cfg.text_vocab + 8, 1) = nf * m->head().speech_eos.w.transpose();
  want.rightCols(1) = nf * m->head().pad.w.transpose();
  CHECK((logits - want).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("zeroed queries give prefix-mean attention") {
  ModelConfig cfg = small_config();
  cfg.layers = 1;
  auto m = init_base(cfg, 33);
  m->layers()[0].wq.text.w.setZero();
  const auto seq = text_sequence(m->vocab(), {3, 9, 27});
  const Matrix logits = m->forward(seq);

  auto& lw = m->layers()[0];
  Matrix x(3, cfg.d_model);
  for (int i = 0; i < 3; ++i) x.row(i) = m->embedding().text.w.row(seq.ids[i]);
  const Matrix n1 = rms_ref(x, lw.ln1.text.w.row(0), cfg.norm_eps);
  const Matrix v = n1 * lw.wv.text.w;
  Matrix att(3, cfg.d_model);
  for (int i = 0; i < 3; ++i) att.row(i) = v.topRows(i + 1).colwise().mean();
  Matrix xo = x + att * lw.wo.text.w;
  const Matrix n2 = rms_ref(xo, lw.ln2.text.w.row(0), cfg.norm_eps);
  xo += (n2 * lw.w1.text.w).unaryExpr([](double t) { return silu_ref(t); }) * lw.w2.text.w;
  const Matrix nf = rms_ref(xo, m->final_norm().text.w.row(0), cfg.norm_eps);
  const Matrix want_text = nf * m->head().text.w.transpose();
  CHECK((logits.leftCols(cfg.text_vocab) - want_text).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("forward is bitwise deterministic and softmax rows normalize") {
  const auto cfg = small_config();
  auto base = init_base(cfg, 11);
  auto moe = convert_to_moe(*base, Vocabulary::extended(cfg.text_vocab, cfg.speech_vocab), 12);
  const auto seq = random_mixed_sequence(moe->vocab(), 12, 55);
  const Matrix a = moe->forward(seq);
  const Matrix b = moe->forward(seq);
  CHECK(a == b);
  for (int i = 0; i < a.rows(); ++i) {
    const double mx = a.row(i).maxCoeff();
    const double sum = (a.row(i).array() - mx).exp().sum();
    const double total = ((a.row(i).array() - mx).exp() / sum).sum();
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("pure-text logits agree exactly with the base model") {
  const auto cfg = small_config();
  auto base = init_base(cfg, 11);
  auto moe = convert_to_moe(*base, Vocabulary::extended(cfg.text_vocab, cfg.speech_vocab), 12);
  const std::vector<int> ids = {1, 5, 44, 30, 12};
  const Matrix lb = base->forward(text_sequence(base->vocab(), ids));
  const Matrix lm = moe->forward(text_sequence(moe->vocab(), ids));
  CHECK(Matrix(lb.leftCols(cfg.text_vocab)) == Matrix(lm.leftCols(cfg.text_vocab)));
}

TEST_CASE("invariant checks pass on a 2-layer d=16 model") {
  const auto cfg = small_config();
  auto base = init_base(cfg, 11);
  auto moe = convert_to_moe(*base, Vocabulary::extended(cfg.text_vocab, cfg.speech_vocab), 12);
  for (const auto& r : {check_init_equivalence(*moe, 100, 1),
                        check_routing_partition(*moe, 2),
                        check_causality(*moe, 20, 3),
                        check_frozen_text_invariance(*moe, *base, 4)}) {
    CHECK_MESSAGE(r.passed, r.name, ": ", r.detail);
  }
}

TEST_CASE("generation contract and determinism") {
  const auto cfg = small_config();
  auto base = init_base(cfg, 17);
  auto moe = convert_to_moe(*base, Vocabulary::extended(cfg.text_vocab, cfg.speech_vocab), 18);
  ChatExample ex;
  ex.system = TextCodec::encode("sys");
  ex.description = TextCodec::encode("a calm voice");
  ex.transcript = TextCodec::encode("hello");
  const auto prefix = assemble_example(ex, moe->vocab(), false);

  SamplingConfig greedy;
  CHECK(moe->generate(prefix, greedy, 0, 1).empty());
  const auto a = moe->generate(prefix, greedy, 24, 1);
  const auto b = moe->generate(prefix, greedy, 24, 2);  // greedy ignores the seed
  CHECK(a == b);
  CHECK(a == moe->generate(prefix, greedy, 24, 1, false));  // cache vs full re-forward

  SamplingConfig topk;
  topk.greedy = false;
  topk.top_k = 8;
  CHECK(moe->generate(prefix, topk, 24, 7) == moe->generate(prefix, topk, 24, 7));

  const auto res = check_generation_cache(*moe, prefix, 24);
  CHECK_MESSAGE(res.passed, res.detail);

  // Prefix must end at THINK_CLOSE.
  auto bad = prefix;
  bad.ids.push_back(moe->vocab().speech_begin());
  bad.modality_mask.push_back(Modality::Speech);
  bad.loss_mask.push_back(0);
  CHECK_THROWS_AS(moe->generate(bad, greedy, 4, 1), ContractError);
}

TEST_CASE("gradient check on a tiny trainable model") {
  ModelConfig tiny;
  tiny.layers = 1;
  tiny.d_model = 8;
  tiny.heads = 2;
  tiny.head_dim = 4;
  tiny.ffn_dim = 16;
  tiny.text_vocab = 46;
  tiny.speech_vocab = 8;
  auto base = init_base(tiny, 41);
  auto moe = convert_to_moe(*base, Vocabulary::extended(46, 8), 42);
  CHECK(moe->parameter_count() <= 10000);

  ChatExample ex;
  ex.system = TextCodec::encode("s");
  ex.transcript = TextCodec::encode("ab");
  ex.speech = {1, 4, 2};
  const auto seq = assemble_example(ex, moe->vocab(), true);
  const auto r = gradient_check(*moe, seq, 200, 99);
  CHECK_MESSAGE(r.passed, r.detail);
}
