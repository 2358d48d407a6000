#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "moetts/seqfmt.hpp"
#include "moetts/vocab.hpp"

namespace moetts {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct ModelConfig {
  int layers = 4;
  int d_model = 128;
  int heads = 4;
  int head_dim = 32;
  int ffn_dim = 512;
  double rope_base = 10000.0;
  double norm_eps = 1e-6;
  int text_vocab = 64;
  int speech_vocab = 64;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class Role { Text, Speech, Shared };

struct Tensor {
  std::string name;
  Role role = Role::Shared;
  bool frozen = false;
  Matrix w;
  Matrix g;  // same shape, zero-initialized

  void zero_grad() { g.setZero(); }
};

// A routed component: the frozen original weights plus, once converted, a
// trainable speech-side copy. Non-routed (dense/base) models leave `speech`
// unset and apply `text` to every position.
struct ExpertPair {
  Tensor text;
  std::unique_ptr<Tensor> speech;

  bool routed() const { return speech != nullptr; }
  const Tensor& expert(Modality m) const {
    return (routed() && m == Modality::Speech) ? *speech : text;
  }
  Tensor& expert(Modality m) { return (routed() && m == Modality::Speech) ? *speech : text; }
};

struct LayerWeights {
  ExpertPair ln1, wq, wk, wv, wo, ln2, w1, w2;
};

// Embedding / output-head tables are split by id region so frozen-vs-trainable
// is a whole-tensor property. Row order follows the vocabulary layout.
struct VocabTable {
  Tensor text;                     // Vt x d
  std::unique_ptr<Tensor> speech;  // Vs x d, present in extended layouts
  Tensor special_pre;              // 8 x d, specials before SPEECH_EOS
  Tensor speech_eos;               // 1 x d
  Tensor pad;                      // 1 x d
};

enum class ModelKind { Base, DenseExtended, Moe };

// Cached activations for one forward pass, consumed by backward().
struct LayerCache {
  std::vector<int> text_rows, speech_rows;
  Matrix x_in, n1, q, k, v, att, x_mid, n2, f1, h1;
  Vector inv_rms1, inv_rms2;
  std::vector<Matrix> probs;  // per head, T x T lower-triangular
};

struct ForwardCache {
  EncodedSequence seq;
  Matrix emb;
  std::vector<LayerCache> layers;
  Matrix x_last;
  Matrix n_final;
  Vector inv_rms_final;
  Matrix logits;
};

// Incremental decoding state: per-layer rotary-encoded keys and values.
struct GenState {
  std::vector<Matrix> k, v;  // layers x (capacity x d), `filled` rows valid
  int filled = 0;
};

struct SamplingConfig {
  bool greedy = true;
  int top_k = 8;
  double temperature = 1.0;
};

class Model {
 public:
  Model(ModelKind kind, const ModelConfig& cfg);

  ModelKind kind() const { return kind_; }
  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }

  VocabTable& embedding() { return embedding_; }
  VocabTable& head() { return head_; }
  std::vector<LayerWeights>& layers() { return layers_; }
  ExpertPair& final_norm() { return final_norm_; }
  const ExpertPair& final_norm() const { return final_norm_; }
  const std::vector<LayerWeights>& layers() const { return layers_; }

  // All parameter tensors in a fixed construction order.
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  Tensor* find_tensor(const std::string& name);
  std::int64_t parameter_count() const;

  void zero_grad();

  // Full forward over an encoded sequence; logits are T x total_vocab.
  // Deterministic given parameters and input (single-threaded Eigen path).
  Matrix forward(const EncodedSequence& seq) const;
  Matrix forward(const EncodedSequence& seq, ForwardCache* cache) const;

  // Masked next-token loss over the sequence; accumulates parameter
  // gradients (unnormalized sums). Returns (sum of masked NLL, mask count).
  std::pair<double, int> loss_backward(const EncodedSequence& seq);

  // Autoregressive sampling of the assistant body. The prefix must end at
  // THINK_CLOSE. Output ids are rebased grammar ids; SPEECH_EOS stops.
  std::vector<int> generate(const EncodedSequence& prefix, const SamplingConfig& sampling,
                            int max_len, std::uint64_t seed, bool use_cache = true) const;

  // Next-token logits for a growing sequence without re-running the prefix.
  Vector step_logits(GenState& state, int id, Modality modality) const;

 private:
  void build_tables();
  const Tensor& emb_region(int id, int* row) const;
  Matrix embed(const EncodedSequence& seq) const;
  Matrix head_logits(const Matrix& x) const;

  ModelKind kind_;
  ModelConfig cfg_;
  Vocabulary vocab_;
  VocabTable embedding_;
  VocabTable head_;
  std::vector<LayerWeights> layers_;
  ExpertPair final_norm_;
};

void init_base_weights(Model& m, std::uint64_t seed);

// Builds the base (dense, text-only-vocabulary) model.
std::unique_ptr<Model> init_base(const ModelConfig& cfg, std::uint64_t seed);

// Converts a base model into the routed model: speech experts are bitwise
// copies of the text experts, new embedding/head rows are the mean of the
// text rows plus seeded noise (std 1e-3), text-side weights become frozen.
std::unique_ptr<Model> convert_to_moe(const Model& base, const Vocabulary& vocab,
                                      std::uint64_t seed);

// The un-routed reference with identical weights (text experts + full
// tables); used by the init-equivalence check.
std::unique_ptr<Model> to_dense_extended(const Model& moe);

std::unique_ptr<Model> clone_model(const Model& m);

// Routed application of a single component, exposed for the invariant tests.
// kind "norm" = RMS norm with learned scale; "linear" = affine map, no bias.
Matrix moe_apply(const ExpertPair& pair, const std::string& kind, const Matrix& x,
                 const std::vector<Modality>& mask, double norm_eps = 1e-6);

}  // namespace moetts
