#include "moetts/model.hpp"

#include <algorithm>
#include <cmath>

#include "moetts/rng.hpp"

namespace moetts {

namespace {

void split_rows(const std::vector<Modality>& mask, std::vector<int>* text_rows,
                std::vector<int>* speech_rows) {
  text_rows->clear();
  speech_rows->clear();
  for (int i = 0; i < static_cast<int>(mask.size()); ++i) {
    (mask[i] == Modality::Text ? text_rows : speech_rows)->push_back(i);
  }
}

Matrix gather_rows(const Matrix& x, const std::vector<int>& rows) {
  Matrix out(static_cast<int>(rows.size()), x.cols());
  for (int i = 0; i < out.rows(); ++i) out.row(i) = x.row(rows[static_cast<std::size_t>(i)]);
  return out;
}

void scatter_rows(Matrix& dst, const Matrix& src, const std::vector<int>& rows) {
  for (int i = 0; i < src.rows(); ++i) dst.row(rows[static_cast<std::size_t>(i)]) = src.row(i);
}

// y = x * W per routed row. All-one-modality inputs take the dense gemm path
// so a pure-text sequence is arithmetically identical to the dense model.
Matrix routed_linear(const ExpertPair& pair, const Matrix& x, const std::vector<int>& text_rows,
                     const std::vector<int>& speech_rows) {
  if (speech_rows.empty() || !pair.routed()) return x * pair.text.w;
  if (text_rows.empty()) return x * pair.speech->w;
  Matrix y(x.rows(), pair.text.w.cols());
  scatter_rows(y, gather_rows(x, text_rows) * pair.text.w, text_rows);
  scatter_rows(y, gather_rows(x, speech_rows) * pair.speech->w, speech_rows);
  return y;
}

Matrix routed_linear_bwd(ExpertPair& pair, const Matrix& x, const Matrix& dy,
                         const std::vector<int>& text_rows, const std::vector<int>& speech_rows) {
  if (speech_rows.empty() || !pair.routed()) {
    pair.text.g.noalias() += x.transpose() * dy;
    return dy * pair.text.w.transpose();
  }
  if (text_rows.empty()) {
    pair.speech->g.noalias() += x.transpose() * dy;
    return dy * pair.speech->w.transpose();
  }
  Matrix dx(x.rows(), x.cols());
  {
    const Matrix xt = gather_rows(x, text_rows);
    const Matrix dyt = gather_rows(dy, text_rows);
    pair.text.g.noalias() += xt.transpose() * dyt;
    scatter_rows(dx, dyt * pair.text.w.transpose(), text_rows);
  }
  {
    const Matrix xs = gather_rows(x, speech_rows);
    const Matrix dys = gather_rows(dy, speech_rows);
    pair.speech->g.noalias() += xs.transpose() * dys;
    scatter_rows(dx, dys * pair.speech->w.transpose(), speech_rows);
  }
  return dx;
}

const Matrix& route_scale(const ExpertPair& pair, Modality m) { return pair.expert(m).w; }

Matrix routed_rmsnorm(const ExpertPair& pair, const Matrix& x,
                      const std::vector<Modality>& mask, double eps, Vector* inv_rms) {
  const int t = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());
  Matrix y(t, d);
  if (inv_rms) inv_rms->resize(t);
  for (int i = 0; i < t; ++i) {
    const double inv = 1.0 / std::sqrt(x.row(i).squaredNorm() / d + eps);
    if (inv_rms) (*inv_rms)(i) = inv;
    y.row(i) = (x.row(i) * inv).cwiseProduct(route_scale(pair, mask[static_cast<std::size_t>(i)]));
  }
  return y;
}

Matrix routed_rmsnorm_bwd(ExpertPair& pair, const Matrix& x, const Matrix& dy,
                          const std::vector<Modality>& mask, const Vector& inv_rms) {
  const int t = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());
  Matrix dx(t, d);
  for (int i = 0; i < t; ++i) {
    const Modality m = mask[static_cast<std::size_t>(i)];
    const auto& s = route_scale(pair, m);
    Tensor& st = pair.expert(m);
    const double inv = inv_rms(i);
    const Eigen::RowVectorXd dys = dy.row(i).cwiseProduct(s);
    const double dot = dys.cwiseProduct(x.row(i)).sum();
    dx.row(i) = dys * inv - x.row(i) * (dot * inv * inv * inv / d);
    st.g.row(0) += dy.row(i).cwiseProduct(x.row(i) * inv);
  }
  return dx;
}

void apply_rope(Matrix& x, int heads, int head_dim, double base, int pos0) {
  const int half = head_dim / 2;
  for (int i = 0; i < x.rows(); ++i) {
    const double pos = static_cast<double>(pos0 + i);
    for (int h = 0; h < heads; ++h) {
      const int off = h * head_dim;
      for (int j = 0; j < half; ++j) {
        const double theta = pos * std::pow(base, -2.0 * j / head_dim);
        const double c = std::cos(theta), s = std::sin(theta);
        const double a = x(i, off + j), b = x(i, off + j + half);
        x(i, off + j) = a * c - b * s;
        x(i, off + j + half) = a * s + b * c;
      }
    }
  }
}

void apply_rope_bwd(Matrix& dx, int heads, int head_dim, double base) {
  const int half = head_dim / 2;
  for (int i = 0; i < dx.rows(); ++i) {
    const double pos = static_cast<double>(i);
    for (int h = 0; h < heads; ++h) {
      const int off = h * head_dim;
      for (int j = 0; j < half; ++j) {
        const double theta = pos * std::pow(base, -2.0 * j / head_dim);
        const double c = std::cos(theta), s = std::sin(theta);
        const double a = dx(i, off + j), b = dx(i, off + j + half);
        dx(i, off + j) = a * c + b * s;
        dx(i, off + j + half) = -a * s + b * c;
      }
    }
  }
}

inline double silu(double x) {
  const double sig = 1.0 / (1.0 + std::exp(-x));
  return x * sig;
}

inline double silu_grad(double x) {
  const double sig = 1.0 / (1.0 + std::exp(-x));
  return sig * (1.0 + x * (1.0 - sig));
}

Eigen::RowVectorXd softmax_row(const Eigen::RowVectorXd& x) {
  const double m = x.maxCoeff();
  Eigen::RowVectorXd e = (x.array() - m).exp();
  return e / e.sum();
}

}  // namespace

void ModelConfig::validate() const {
  if (layers < 1 || d_model < 1 || heads < 1 || head_dim < 1 || ffn_dim < 1) {
    throw ConfigError("model dimensions must be >= 1");
  }
  if (d_model != heads * head_dim) throw ConfigError("d_model must equal heads * head_dim");
  if (head_dim % 2 != 0) throw ConfigError("head_dim must be even for rotary embedding");
  if (norm_eps <= 0) throw ConfigError("norm_epsilon must be positive");
  if (text_vocab < TextCodec::required_text_vocab()) {
    throw ConfigError("text_vocab smaller than the text codec alphabet");
  }
  if (speech_vocab < 1) throw ConfigError("speech_vocab must be >= 1");
}

Model::Model(ModelKind kind, const ModelConfig& cfg)
    : kind_(kind),
      cfg_(cfg),
      vocab_(kind == ModelKind::Base ? Vocabulary::text_only(cfg.text_vocab)
                                     : Vocabulary::extended(cfg.text_vocab, cfg.speech_vocab)) {
  cfg_.validate();
  build_tables();
}

void Model::build_tables() {
  const int d = cfg_.d_model;
  auto make = [&](Tensor& t, const std::string& name, int rows, int cols) {
    t.name = name;
    t.w = Matrix::Zero(rows, cols);
    t.g = Matrix::Zero(rows, cols);
  };
  auto make_table = [&](VocabTable& tab, const std::string& prefix) {
    make(tab.text, prefix + ".text", cfg_.text_vocab, d);
    if (vocab_.has_speech_block()) {
      tab.speech = std::make_unique<Tensor>();
      make(*tab.speech, prefix + ".speech", cfg_.speech_vocab, d);
    }
    make(tab.special_pre, prefix + ".special", 8, d);
    make(tab.speech_eos, prefix + ".speech_eos", 1, d);
    make(tab.pad, prefix + ".pad", 1, d);
  };
  make_table(embedding_, "embedding");
  make_table(head_, "head");

  const bool routed = kind_ == ModelKind::Moe;
  auto make_pair = [&](ExpertPair& p, const std::string& name, int rows, int cols) {
    make(p.text, name + (routed ? ".text" : ""), rows, cols);
    if (routed) {
      p.speech = std::make_unique<Tensor>();
      make(*p.speech, name + ".speech", rows, cols);
    }
  };
  layers_.resize(static_cast<std::size_t>(cfg_.layers));
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l);
    auto& lw = layers_[static_cast<std::size_t>(l)];
    make_pair(lw.ln1, p + ".ln1", 1, d);
    make_pair(lw.wq, p + ".wq", d, d);
    make_pair(lw.wk, p + ".wk", d, d);
    make_pair(lw.wv, p + ".wv", d, d);
    make_pair(lw.wo, p + ".wo", d, d);
    make_pair(lw.ln2, p + ".ln2", 1, d);
    make_pair(lw.w1, p + ".w1", d, cfg_.ffn_dim);
    make_pair(lw.w2, p + ".w2", cfg_.ffn_dim, d);
  }
  make_pair(final_norm_, "final_norm", 1, d);
}

std::vector<Tensor*> Model::tensors() {
  std::vector<Tensor*> out;
  auto add_table = [&](VocabTable& t) {
    out.push_back(&t.text);
    if (t.speech) out.push_back(t.speech.get());
    out.push_back(&t.special_pre);
    out.push_back(&t.speech_eos);
    out.push_back(&t.pad);
  };
  auto add_pair = [&](ExpertPair& p) {
    out.push_back(&p.text);
    if (p.speech) out.push_back(p.speech.get());
  };
  add_table(embedding_);
  for (auto& l : layers_) {
    add_pair(l.ln1);
    add_pair(l.wq);
    add_pair(l.wk);
    add_pair(l.wv);
    add_pair(l.wo);
    add_pair(l.ln2);
    add_pair(l.w1);
    add_pair(l.w2);
  }
  add_pair(final_norm_);
  add_table(head_);
  return out;
}

std::vector<const Tensor*> Model::tensors() const {
  auto mutable_list = const_cast<Model*>(this)->tensors();
  return {mutable_list.begin(), mutable_list.end()};
}

Tensor* Model::find_tensor(const std::string& name) {
  for (Tensor* t : tensors()) {
    if (t->name == name) return t;
  }
  return nullptr;
}

std::int64_t Model::parameter_count() const {
  std::int64_t n = 0;
  for (const Tensor* t : tensors()) n += t->w.size();
  return n;
}

void Model::zero_grad() {
  for (Tensor* t : tensors()) t->zero_grad();
}

const Tensor& Model::emb_region(int id, int* row) const {
  if (vocab_.is_text_content(id)) {
    *row = id;
    return embedding_.text;
  }
  if (vocab_.is_speech_content(id)) {
    *row = id - vocab_.speech_begin();
    return *embedding_.speech;
  }
  if (!vocab_.is_special(id)) throw TokenError("id " + std::to_string(id) + " out of range");
  const int idx = id - vocab_.specials_begin();
  if (idx < 8) {
    *row = idx;
    return embedding_.special_pre;
  }
  *row = 0;
  return idx == 8 ? embedding_.speech_eos : embedding_.pad;
}

Matrix Model::embed(const EncodedSequence& seq) const {
  Matrix e(seq.length(), cfg_.d_model);
  for (int i = 0; i < seq.length(); ++i) {
    int row = 0;
    const Tensor& region = emb_region(seq.ids[i], &row);
    e.row(i) = region.w.row(row);
  }
  return e;
}

Matrix Model::head_logits(const Matrix& x) const {
  Matrix logits(x.rows(), vocab_.total_size());
  int col = 0;
  auto block = [&](const Tensor& region) {
    logits.middleCols(col, region.w.rows()).noalias() = x * region.w.transpose();
    col += static_cast<int>(region.w.rows());
  };
  block(head_.text);
  if (head_.speech) block(*head_.speech);
  block(head_.special_pre);
  block(head_.speech_eos);
  block(head_.pad);
  return logits;
}

Matrix Model::forward(const EncodedSequence& seq) const { return forward(seq, nullptr); }

Matrix Model::forward(const EncodedSequence& seq, ForwardCache* cache) const {
  const int t = seq.length();
  if (t == 0) throw ContractError("forward on empty sequence");
  if (static_cast<int>(seq.modality_mask.size()) != t) throw ShapeError("modality mask length");
  const int d = cfg_.d_model;
  const int dk = cfg_.head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  std::vector<int> text_rows, speech_rows;
  split_rows(seq.modality_mask, &text_rows, &speech_rows);

  Matrix x = embed(seq);
  if (cache) {
    cache->seq = seq;
    cache->emb = x;
    cache->layers.assign(static_cast<std::size_t>(cfg_.layers), {});
  }

  for (int l = 0; l < cfg_.layers; ++l) {
    const auto& lw = layers_[static_cast<std::size_t>(l)];
    LayerCache* lc = cache ? &cache->layers[static_cast<std::size_t>(l)] : nullptr;
    if (lc) {
      lc->text_rows = text_rows;
      lc->speech_rows = speech_rows;
      lc->x_in = x;
    }
    Vector inv1;
    Matrix n1 = routed_rmsnorm(lw.ln1, x, seq.modality_mask, cfg_.norm_eps, &inv1);
    Matrix q = routed_linear(lw.wq, n1, text_rows, speech_rows);
    Matrix k = routed_linear(lw.wk, n1, text_rows, speech_rows);
    Matrix v = routed_linear(lw.wv, n1, text_rows, speech_rows);
    apply_rope(q, cfg_.heads, dk, cfg_.rope_base, 0);
    apply_rope(k, cfg_.heads, dk, cfg_.rope_base, 0);

    Matrix att(t, d);
    std::vector<Matrix> probs;
    if (lc) probs.reserve(static_cast<std::size_t>(cfg_.heads));
    for (int h = 0; h < cfg_.heads; ++h) {
      const int off = h * dk;
      Matrix p = Matrix::Zero(t, t);
      for (int i = 0; i < t; ++i) {
        Eigen::RowVectorXd s =
            (q.row(i).segment(off, dk) * k.middleRows(0, i + 1).middleCols(off, dk).transpose()) *
            scale;
        p.row(i).head(i + 1) = softmax_row(s);
      }
      att.middleCols(off, dk).noalias() = p * v.middleCols(off, dk);
      if (lc) probs.push_back(std::move(p));
    }
    Matrix o = routed_linear(lw.wo, att, text_rows, speech_rows);
    Matrix x_mid = x + o;

    Vector inv2;
    Matrix n2 = routed_rmsnorm(lw.ln2, x_mid, seq.modality_mask, cfg_.norm_eps, &inv2);
    Matrix f1 = routed_linear(lw.w1, n2, text_rows, speech_rows);
    Matrix h1 = f1.unaryExpr([](double v_) { return silu(v_); });
    Matrix f2 = routed_linear(lw.w2, h1, text_rows, speech_rows);
    if (lc) {
      lc->n1 = std::move(n1);
      lc->q = std::move(q);
      lc->k = std::move(k);
      lc->v = std::move(v);
      lc->att = std::move(att);
      lc->x_mid = x_mid;
      lc->n2 = std::move(n2);
      lc->f1 = std::move(f1);
      lc->h1 = std::move(h1);
      lc->inv_rms1 = std::move(inv1);
      lc->inv_rms2 = std::move(inv2);
      lc->probs = std::move(probs);
    }
    x = x_mid + f2;
  }

  Vector inv_f;
  Matrix nf = routed_rmsnorm(final_norm_, x, seq.modality_mask, cfg_.norm_eps, &inv_f);
  Matrix logits = head_logits(nf);
  if (cache) {
    cache->x_last = x;
    cache->n_final = std::move(nf);
    cache->inv_rms_final = std::move(inv_f);
    cache->logits = logits;
  }
  return logits;
}

std::pair<double, int> Model::loss_backward(const EncodedSequence& seq) {
  ForwardCache cache;
  forward(seq, &cache);
  const int t = seq.length();
  const int v = vocab_.total_size();
  const int dk = cfg_.head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  Matrix dlogits = Matrix::Zero(t, v);
  double loss_sum = 0.0;
  int count = 0;
  for (int i = 0; i + 1 < t; ++i) {
    if (!seq.loss_mask[static_cast<std::size_t>(i + 1)]) continue;
    const int target = seq.ids[static_cast<std::size_t>(i + 1)];
    Eigen::RowVectorXd p = softmax_row(cache.logits.row(i));
    loss_sum += -std::log(std::max(p(target), 1e-300));
    p(target) -= 1.0;
    dlogits.row(i) = p;
    ++count;
  }

  // Head backward.
  Matrix dnf = Matrix::Zero(t, cfg_.d_model);
  {
    int col = 0;
    auto block = [&](Tensor& region) {
      const int rows = static_cast<int>(region.w.rows());
      const auto dl = dlogits.middleCols(col, rows);
      region.g.noalias() += dl.transpose() * cache.n_final;
      dnf.noalias() += dl * region.w;
      col += rows;
    };
    block(head_.text);
    if (head_.speech) block(*head_.speech);
    block(head_.special_pre);
    block(head_.speech_eos);
    block(head_.pad);
  }

  Matrix dx = routed_rmsnorm_bwd(final_norm_, cache.x_last, dnf, seq.modality_mask,
                                 cache.inv_rms_final);

  for (int l = cfg_.layers - 1; l >= 0; --l) {
    auto& lw = layers_[static_cast<std::size_t>(l)];
    LayerCache& lc = cache.layers[static_cast<std::size_t>(l)];

    // FFN branch.
    Matrix dh1 = routed_linear_bwd(lw.w2, lc.h1, dx, lc.text_rows, lc.speech_rows);
    Matrix df1 = dh1.binaryExpr(lc.f1, [](double g, double x_) { return g * silu_grad(x_); });
    Matrix dn2 = routed_linear_bwd(lw.w1, lc.n2, df1, lc.text_rows, lc.speech_rows);
    Matrix dx_mid = dx + routed_rmsnorm_bwd(lw.ln2, lc.x_mid, dn2, seq.modality_mask, lc.inv_rms2);

    // Attention branch.
    Matrix datt = routed_linear_bwd(lw.wo, lc.att, dx_mid, lc.text_rows, lc.speech_rows);
    Matrix dq = Matrix::Zero(t, cfg_.d_model);
    Matrix dk_ = Matrix::Zero(t, cfg_.d_model);
    Matrix dv = Matrix::Zero(t, cfg_.d_model);
    for (int h = 0; h < cfg_.heads; ++h) {
      const int off = h * dk;
      const Matrix& p = lc.probs[static_cast<std::size_t>(h)];
      const auto da = datt.middleCols(off, dk);
      dv.middleCols(off, dk).noalias() = p.transpose() * da;
      Matrix dp = da * lc.v.middleCols(off, dk).transpose();
      // softmax backward, rows independent; masked entries have p == 0.
      Matrix ds(t, t);
      for (int i = 0; i < t; ++i) {
        const double dot = dp.row(i).head(i + 1).cwiseProduct(p.row(i).head(i + 1)).sum();
        ds.row(i).setZero();
        ds.row(i).head(i + 1) =
            (p.row(i).head(i + 1).array() * (dp.row(i).head(i + 1).array() - dot)).matrix();
      }
      dq.middleCols(off, dk).noalias() = ds * lc.k.middleCols(off, dk) * scale;
      dk_.middleCols(off, dk).noalias() = ds.transpose() * lc.q.middleCols(off, dk) * scale;
    }
    apply_rope_bwd(dq, cfg_.heads, dk, cfg_.rope_base);
    apply_rope_bwd(dk_, cfg_.heads, dk, cfg_.rope_base);

    Matrix dn1 = routed_linear_bwd(lw.wq, lc.n1, dq, lc.text_rows, lc.speech_rows);
    dn1 += routed_linear_bwd(lw.wk, lc.n1, dk_, lc.text_rows, lc.speech_rows);
    dn1 += routed_linear_bwd(lw.wv, lc.n1, dv, lc.text_rows, lc.speech_rows);
    dx = dx_mid + routed_rmsnorm_bwd(lw.ln1, lc.x_in, dn1, seq.modality_mask, lc.inv_rms1);
  }

  // Embedding backward.
  for (int i = 0; i < t; ++i) {
    int row = 0;
    const Tensor& region = emb_region(seq.ids[static_cast<std::size_t>(i)], &row);
    const_cast<Tensor&>(region).g.row(row) += dx.row(i);
  }
  return {loss_sum, count};
}

Vector Model::step_logits(GenState& state, int id, Modality modality) const {
  const int d = cfg_.d_model;
  const int dk = cfg_.head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  const int pos = state.filled;
  const std::vector<Modality> mask1 = {modality};
  const std::vector<int> all = {0};
  const std::vector<int> none;
  const auto& rows_t = modality == Modality::Text ? all : none;
  const auto& rows_s = modality == Modality::Text ? none : all;

  if (state.k.empty()) {
    state.k.assign(static_cast<std::size_t>(cfg_.layers), Matrix(0, d));
    state.v.assign(static_cast<std::size_t>(cfg_.layers), Matrix(0, d));
  }

  int row = 0;
  const Tensor& region = emb_region(id, &row);
  Matrix x = region.w.row(row);

  for (int l = 0; l < cfg_.layers; ++l) {
    const auto& lw = layers_[static_cast<std::size_t>(l)];
    Matrix& kc = state.k[static_cast<std::size_t>(l)];
    Matrix& vc = state.v[static_cast<std::size_t>(l)];
    if (kc.rows() <= pos) {
      const int grow = std::max(64, pos + 1);
      kc.conservativeResize(kc.rows() + grow, d);
      vc.conservativeResize(vc.rows() + grow, d);
    }
    Matrix n1 = routed_rmsnorm(lw.ln1, x, mask1, cfg_.norm_eps, nullptr);
    Matrix q = routed_linear(lw.wq, n1, rows_t, rows_s);
    Matrix k = routed_linear(lw.wk, n1, rows_t, rows_s);
    Matrix v = routed_linear(lw.wv, n1, rows_t, rows_s);
    apply_rope(q, cfg_.heads, dk, cfg_.rope_base, pos);
    apply_rope(k, cfg_.heads, dk, cfg_.rope_base, pos);
    kc.row(pos) = k.row(0);
    vc.row(pos) = v.row(0);

    Matrix att(1, d);
    for (int h = 0; h < cfg_.heads; ++h) {
      const int off = h * dk;
      Eigen::RowVectorXd s =
          (q.row(0).segment(off, dk) * kc.middleRows(0, pos + 1).middleCols(off, dk).transpose()) *
          scale;
      const Eigen::RowVectorXd p = softmax_row(s);
      att.row(0).segment(off, dk).noalias() = p * vc.middleRows(0, pos + 1).middleCols(off, dk);
    }
    Matrix o = routed_linear(lw.wo, att, rows_t, rows_s);
    Matrix x_mid = x + o;
    Matrix n2 = routed_rmsnorm(lw.ln2, x_mid, mask1, cfg_.norm_eps, nullptr);
    Matrix f1 = routed_linear(lw.w1, n2, rows_t, rows_s);
    Matrix h1 = f1.unaryExpr([](double v_) { return silu(v_); });
    x = x_mid + routed_linear(lw.w2, h1, rows_t, rows_s);
  }
  state.filled = pos + 1;
  Matrix nf = routed_rmsnorm(final_norm_, x, mask1, cfg_.norm_eps, nullptr);
  return head_logits(nf).row(0).transpose();
}

std::vector<int> Model::generate(const EncodedSequence& prefix, const SamplingConfig& sampling,
                                 int max_len, std::uint64_t seed, bool use_cache) const {
  if (!vocab_.has_speech_block()) throw ContractError("generation requires a speech vocabulary");
  if (prefix.length() == 0 ||
      prefix.ids.back() != vocab_.special_id(Special::ThinkClose)) {
    throw ContractError("generation prefix must end at THINK_CLOSE");
  }
  Rng rng(seed);
  const int eos = vocab_.special_id(Special::SpeechEos);

  std::vector<int> allowed;
  allowed.reserve(static_cast<std::size_t>(vocab_.speech_size()) + 1);
  for (int s = 0; s < vocab_.speech_size(); ++s) allowed.push_back(vocab_.speech_begin() + s);
  allowed.push_back(eos);

  auto pick_next = [&](const Vector& logits) {
    if (sampling.greedy) {
      int best = allowed[0];
      for (int id : allowed) {
        if (logits(id) > logits(best)) best = id;
      }
      return best;
    }
    std::vector<std::pair<double, int>> cand;
    cand.reserve(allowed.size());
    for (int id : allowed) cand.emplace_back(logits(id), id);
    const int k = std::min<int>(sampling.top_k, static_cast<int>(cand.size()));
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end(),
                      [](const auto& a, const auto& b) { return a.first > b.first; });
    const double temp = std::max(sampling.temperature, 1e-6);
    double m = cand[0].first;
    double total = 0.0;
    std::vector<double> p(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
      p[static_cast<std::size_t>(i)] = std::exp((cand[static_cast<std::size_t>(i)].first - m) / temp);
      total += p[static_cast<std::size_t>(i)];
    }
    double u = rng.uniform() * total;
    for (int i = 0; i < k; ++i) {
      u -= p[static_cast<std::size_t>(i)];
      if (u <= 0.0) return cand[static_cast<std::size_t>(i)].second;
    }
    return cand[static_cast<std::size_t>(k - 1)].second;
  };

  std::vector<int> out;
  if (use_cache) {
    GenState state;
    Vector logits;
    for (int i = 0; i < prefix.length(); ++i) {
      logits = step_logits(state, prefix.ids[static_cast<std::size_t>(i)],
                           prefix.modality_mask[static_cast<std::size_t>(i)]);
    }
    for (int n = 0; n < max_len; ++n) {
      const int next = pick_next(logits);
      if (next == eos) break;
      out.push_back(vocab_.rebase_speech(next));
      logits = step_logits(state, next, Modality::Speech);
    }
  } else {
    EncodedSequence seq = prefix;
    for (int n = 0; n < max_len; ++n) {
      const Matrix logits = forward(seq);
      const Vector last = logits.row(logits.rows() - 1).transpose();
      const int next = pick_next(last);
      if (next == eos) break;
      out.push_back(vocab_.rebase_speech(next));
      seq.ids.push_back(next);
      seq.modality_mask.push_back(Modality::Speech);
      seq.loss_mask.push_back(0);
    }
  }
  return out;
}

void init_base_weights(Model& m, std::uint64_t seed) {
  Rng rng(seed);
  const double std_base = 0.02;
  const double std_proj = 0.02 / std::sqrt(2.0 * m.config().layers);
  for (Tensor* t : m.tensors()) {
    const bool is_norm = t->name.find("ln") != std::string::npos ||
                         t->name.find("final_norm") != std::string::npos;
    const bool is_proj = t->name.find(".wo") != std::string::npos ||
                         t->name.find(".w2") != std::string::npos;
    if (is_norm) {
      t->w.setOnes();
      continue;
    }
    const double std = is_proj ? std_proj : std_base;
    for (int i = 0; i < t->w.rows(); ++i) {
      for (int j = 0; j < t->w.cols(); ++j) t->w(i, j) = rng.normal(0.0, std);
    }
  }
}

std::unique_ptr<Model> init_base(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  auto m = std::make_unique<Model>(ModelKind::Base, cfg);
  init_base_weights(*m, seed);
  return m;
}

namespace {

void copy_tensor(Tensor& dst, const Tensor& src) {
  if (dst.w.rows() != src.w.rows() || dst.w.cols() != src.w.cols()) {
    throw ShapeError("tensor shape mismatch copying " + src.name + " into " + dst.name);
  }
  dst.w = src.w;
}

void fill_mean_plus_noise(Tensor& dst, const Matrix& source_rows, double noise_std, Rng& rng) {
  const Eigen::RowVectorXd mean = source_rows.colwise().mean();
  for (int i = 0; i < dst.w.rows(); ++i) {
    for (int j = 0; j < dst.w.cols(); ++j) {
      dst.w(i, j) = mean(j) + rng.normal(0.0, noise_std);
    }
  }
}

}  // namespace

std::unique_ptr<Model> convert_to_moe(const Model& base, const Vocabulary& vocab,
                                      std::uint64_t seed) {
  if (base.kind() != ModelKind::Base) throw ContractError("convert_to_moe expects a base model");
  if (!vocab.has_speech_block() || vocab.text_size() != base.vocab().text_size()) {
    throw ConfigError("target vocabulary does not extend the base vocabulary");
  }
  ModelConfig cfg = base.config();
  cfg.speech_vocab = vocab.speech_size();
  auto moe = std::make_unique<Model>(ModelKind::Moe, cfg);

  auto base_tensors = base.tensors();
  auto by_name = [&](const std::string& name) -> const Tensor& {
    for (const Tensor* t : base_tensors) {
      if (t->name == name) return *t;
    }
    throw ContractError("base model lacks tensor " + name);
  };

  auto convert_pair = [&](ExpertPair& p, const std::string& base_name) {
    const Tensor& src = by_name(base_name);
    copy_tensor(p.text, src);
    copy_tensor(*p.speech, src);  // speech expert starts as a bitwise copy
    p.text.role = Role::Text;
    p.text.frozen = true;
    p.speech->role = Role::Speech;
  };
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string pfx = "layer" + std::to_string(l);
    auto& lw = moe->layers()[static_cast<std::size_t>(l)];
    convert_pair(lw.ln1, pfx + ".ln1");
    convert_pair(lw.wq, pfx + ".wq");
    convert_pair(lw.wk, pfx + ".wk");
    convert_pair(lw.wv, pfx + ".wv");
    convert_pair(lw.wo, pfx + ".wo");
    convert_pair(lw.ln2, pfx + ".ln2");
    convert_pair(lw.w1, pfx + ".w1");
    convert_pair(lw.w2, pfx + ".w2");
  }
  convert_pair(moe->final_norm(), "final_norm");

  auto convert_table = [&](VocabTable& tab, const std::string& prefix, std::uint64_t sub_seed) {
    copy_tensor(tab.text, by_name(prefix + ".text"));
    copy_tensor(tab.special_pre, by_name(prefix + ".special"));
    copy_tensor(tab.speech_eos, by_name(prefix + ".speech_eos"));
    copy_tensor(tab.pad, by_name(prefix + ".pad"));
    tab.text.role = Role::Text;
    tab.text.frozen = true;
    tab.special_pre.role = Role::Text;
    tab.special_pre.frozen = true;
    tab.pad.role = Role::Text;
    tab.pad.frozen = true;
    tab.speech_eos.role = Role::Speech;  // trainable: the stop token must be learned
    Rng rng(sub_seed);
    fill_mean_plus_noise(*tab.speech, tab.text.w, 1e-3, rng);
    tab.speech->role = Role::Speech;
  };
  convert_table(moe->embedding(), "embedding", Rng::derive(seed, "embedding"));
  convert_table(moe->head(), "head", Rng::derive(seed, "head"));

  // Warm-start the chat-frame specials: map each of them onto the trained
  // embedding of an ordinary character so the frozen text tower reads the
  // assembled frame as familiar text (the base corpus contains the matching
  // " ok " cue lines). Chars by special slot: BOS_SYSTEM/EOS_SYSTEM/BOS_USER
  // and EOS_USER are spaces, BOS_ASSISTANT 'o', EOS_ASSISTANT '.',
  // THINK_OPEN 'k', THINK_CLOSE ' '.
  {
    static constexpr char kSpecialWarm[8] = {' ', ' ', ' ', ' ', 'o', '.', 'k', ' '};
    auto& emb = moe->embedding();
    for (int i = 0; i < 8; ++i) {
      const int row = TextCodec::encode(std::string(1, kSpecialWarm[i]))[0];
      emb.special_pre.w.row(i) = emb.text.w.row(row);
    }
  }
  return moe;
}

std::unique_ptr<Model> to_dense_extended(const Model& moe) {
  if (moe.kind() != ModelKind::Moe) throw ContractError("to_dense_extended expects a MoE model");
  auto dense = std::make_unique<Model>(ModelKind::DenseExtended, moe.config());
  auto dst = dense->tensors();
  auto src = moe.tensors();
  for (Tensor* d : dst) {
    bool found = false;
    for (const Tensor* s : src) {
      // Dense components carry the text-expert name without the suffix.
      if (s->name == d->name || s->name == d->name + ".text") {
        copy_tensor(*d, *s);
        found = true;
        break;
      }
    }
    if (!found) throw ContractError("no source tensor for " + d->name);
  }
  return dense;
}

std::unique_ptr<Model> clone_model(const Model& m) {
  auto out = std::make_unique<Model>(m.kind(), m.config());
  auto dst = out->tensors();
  auto src = m.tensors();
  if (dst.size() != src.size()) throw ContractError("clone tensor count mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i]->w = src[i]->w;
    dst[i]->role = src[i]->role;
    dst[i]->frozen = src[i]->frozen;
  }
  return out;
}

Matrix moe_apply(const ExpertPair& pair, const std::string& kind, const Matrix& x,
                 const std::vector<Modality>& mask, double norm_eps) {
  if (static_cast<int>(mask.size()) != x.rows()) throw ShapeError("mask length != row count");
  if (kind == "norm") {
    if (pair.text.w.cols() != x.cols()) throw ShapeError("norm scale width mismatch");
    return routed_rmsnorm(pair, x, mask, norm_eps, nullptr);
  }
  if (kind == "linear") {
    if (pair.text.w.rows() != x.cols()) throw ShapeError("linear input width mismatch");
    std::vector<int> rows_t, rows_s;
    split_rows(mask, &rows_t, &rows_s);
    return routed_linear(pair, x, rows_t, rows_s);
  }
  throw ContractError("unknown moe_apply kind " + kind);
}

}  // namespace moetts
