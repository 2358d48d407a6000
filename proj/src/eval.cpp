#include "moetts/eval.hpp"

#include <algorithm>
#include <cmath>

#include "nlohmann/json.hpp"

namespace moetts {

namespace {

EncodedSequence text_sequence(const std::vector<int>& ids, const Vocabulary& vocab) {
  EncodedSequence s;
  s.ids = ids;
  for (int id : ids) {
    if (!vocab.is_text_content(id)) {
      throw ContractError("non-text id " + std::to_string(id) + " in text corpus");
    }
  }
  s.modality_mask.assign(ids.size(), Modality::Text);
  s.loss_mask.assign(ids.size(), 1);
  return s;
}

}  // namespace

double text_logit_delta(const Model& reference, const Model& candidate,
                        const std::vector<std::vector<int>>& texts) {
  const int vt = reference.vocab().text_size();
  if (candidate.vocab().text_size() != vt) {
    throw ContractError("models do not share a text vocabulary");
  }
  double max_delta = 0.0;
  for (const auto& ids : texts) {
    if (ids.size() < 1) continue;
    const Matrix a = reference.forward(text_sequence(ids, reference.vocab()));
    const Matrix b = candidate.forward(text_sequence(ids, candidate.vocab()));
    // Text content columns share indices in both layouts; non-SPEECH_EOS
    // special columns are compared through the layout mapping.
    max_delta = std::max(max_delta,
                         (a.leftCols(vt) - b.leftCols(vt)).cwiseAbs().maxCoeff());
    for (int k = 0; k < kNumSpecials; ++k) {
      if (static_cast<Special>(k) == Special::SpeechEos) continue;
      const int ca = reference.vocab().specials_begin() + k;
      const int cb = candidate.vocab().specials_begin() + k;
      max_delta = std::max(max_delta, (a.col(ca) - b.col(cb)).cwiseAbs().maxCoeff());
    }
  }
  return max_delta;
}

double perplexity(const Model& m, const std::vector<std::vector<int>>& texts) {
  const int vt = m.vocab().text_size();
  double nll = 0.0;
  long count = 0;
  for (const auto& ids : texts) {
    if (ids.size() < 2) continue;
    const Matrix logits = m.forward(text_sequence(ids, m.vocab()));
    for (int i = 0; i + 1 < static_cast<int>(ids.size()); ++i) {
      const auto row = logits.row(i).head(vt);
      const double mx = row.maxCoeff();
      const double lse = mx + std::log((row.array() - mx).exp().sum());
      nll += lse - row(ids[static_cast<std::size_t>(i + 1)]);
      ++count;
    }
  }
  if (count == 0) throw ContractError("perplexity: empty text corpus");
  return std::exp(nll / count);
}

std::vector<std::vector<int>> load_text_corpus(const std::string& path) {
  std::vector<std::vector<int>> out;
  for (const auto& line : read_lines(path)) out.push_back(TextCodec::encode(line));
  return out;
}

double normalized_edit_distance(const std::string& a, const std::string& b) {
  const std::size_t n = a.size(), m = b.size();
  if (n == 0 && m == 0) return 0.0;
  std::vector<int> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return static_cast<double>(prev[m]) / static_cast<double>(std::max(n, m));
}

AttributeAccuracy attribute_accuracy_with(const SpeechGenerator& gen,
                                          const std::vector<CorpusRecord>& testset) {
  AttributeAccuracy acc;
  acc.total = static_cast<int>(testset.size());
  int g = 0, p = 0, s = 0, st = 0;
  double edit_sum = 0.0;
  for (const auto& rec : testset) {
    std::vector<int> tokens = gen(rec);
    OracleDecodeResult dec;
    try {
      dec = oracle_decode(tokens, /*tolerant=*/true);
    } catch (const DecodeError&) {
      continue;
    }
    const auto truth = VoiceAttributes::from_attrs_json(rec.attrs_json);
    ++acc.decodable;
    g += dec.attrs.gender == truth.gender;
    p += dec.attrs.pitch == truth.pitch;
    s += dec.attrs.speed == truth.speed;
    st += dec.attrs.style == truth.style;
    edit_sum += normalized_edit_distance(dec.transcript, rec.transcript);
  }
  if (acc.decodable > 0) {
    acc.gender = static_cast<double>(g) / acc.decodable;
    acc.pitch = static_cast<double>(p) / acc.decodable;
    acc.speed = static_cast<double>(s) / acc.decodable;
    acc.style = static_cast<double>(st) / acc.decodable;
    acc.transcript_error_rate = edit_sum / acc.decodable;
  } else {
    acc.transcript_error_rate = 1.0;
  }
  acc.decode_failure_rate =
      acc.total == 0 ? 0.0 : static_cast<double>(acc.total - acc.decodable) / acc.total;
  return acc;
}

AttributeAccuracy attribute_accuracy(const Model& m, const std::vector<CorpusRecord>& testset,
                                     const SamplingConfig& sampling, int max_len,
                                     std::uint64_t seed) {
  std::uint64_t i = 0;
  return attribute_accuracy_with(
      [&](const CorpusRecord& rec) {
        const EncodedSequence prefix =
            assemble_example(rec.to_chat_example(false), m.vocab(), false);
        return m.generate(prefix, sampling, max_len, seed + (i++), true);
      },
      testset);
}

nlohmann::json EvalReport::to_json() const {
  auto acc = [](const AttributeAccuracy& a) {
    return nlohmann::json{{"gender", a.gender},
                          {"pitch", a.pitch},
                          {"speed", a.speed},
                          {"style", a.style},
                          {"decode_failure_rate", a.decode_failure_rate},
                          {"transcript_error_rate", a.transcript_error_rate},
                          {"total", a.total},
                          {"decodable", a.decodable}};
  };
  return {{"phase", phase},
          {"in_domain", acc(in_domain)},
          {"ood", acc(ood)},
          {"text_perplexity", text_perplexity},
          {"base_perplexity", base_perplexity},
          {"max_text_logit_delta", max_text_logit_delta},
          {"frozen_digest_match", frozen_digest_match},
          {"frozen_digest", frozen_digest}};
}

}  // namespace moetts
