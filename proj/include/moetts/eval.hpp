#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "moetts/model.hpp"
#include "moetts/synthdata.hpp"
#include "nlohmann/json_fwd.hpp"

namespace moetts {

// Maximum absolute difference of shared text-row logits between two models on
// pure-text sequences (text content ids only). Throws ContractError on
// non-text input or on corpora the models cannot both score.
double text_logit_delta(const Model& reference, const Model& candidate,
                        const std::vector<std::vector<int>>& texts);

// exp(mean NLL) with logits renormalized over text content rows only.
double perplexity(const Model& m, const std::vector<std::vector<int>>& texts);

std::vector<std::vector<int>> load_text_corpus(const std::string& path);

struct AttributeAccuracy {
  double gender = 0.0;
  double pitch = 0.0;
  double speed = 0.0;
  double style = 0.0;
  double decode_failure_rate = 0.0;
  double transcript_error_rate = 0.0;  // mean normalized edit distance
  int total = 0;
  int decodable = 0;
};

using SpeechGenerator = std::function<std::vector<int>(const CorpusRecord&)>;

// Generates for every record, decodes with the tolerant oracle, and scores
// each attribute against ground truth. Undecodable outputs only feed the
// failure rate.
AttributeAccuracy attribute_accuracy(const Model& m, const std::vector<CorpusRecord>& testset,
                                     const SamplingConfig& sampling, int max_len,
                                     std::uint64_t seed);
// Same metric pipeline with an arbitrary generator (harness soundness checks).
AttributeAccuracy attribute_accuracy_with(const SpeechGenerator& gen,
                                          const std::vector<CorpusRecord>& testset);

struct EvalReport {
  std::string phase;
  AttributeAccuracy in_domain;
  AttributeAccuracy ood;
  double text_perplexity = 0.0;
  double base_perplexity = 0.0;
  double max_text_logit_delta = 0.0;
  bool frozen_digest_match = false;
  std::string frozen_digest;

  nlohmann::json to_json() const;
};

double normalized_edit_distance(const std::string& a, const std::string& b);

}  // namespace moetts
