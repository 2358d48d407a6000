#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "moetts/seqfmt.hpp"

namespace moetts {

enum class Gender : int { Female = 0, Male = 1 };
enum class Pitch : int { Low = 0, Mid = 1, High = 2 };
enum class Speed : int { Slow = 0, Mid = 1, Fast = 2 };
enum class Style : int { Calm = 0, Excited = 1 };

struct VoiceAttributes {
  Gender gender = Gender::Female;
  Pitch pitch = Pitch::Mid;
  Speed speed = Speed::Mid;
  Style style = Style::Calm;

  bool operator==(const VoiceAttributes&) const = default;

  static std::vector<VoiceAttributes> all_combinations();  // 36 entries
  std::string attrs_json() const;
  static VoiceAttributes from_attrs_json(const std::string& json_text);
};

// Synthetic discrete speech grammar over 64 ids:
//   header: [gender, 2+pitch, 5+speed, 8+style]
//   body:   per transcript char with alphabet index x,
//           token 16 + ((x + 3*pitch) mod 27), repeated 3/2/1 times
//           for slow/mid/fast.
// The body alphabet is a-z plus space (27 symbols).
struct SpeechTokenGrammar {
  static constexpr int kVocabSize = 64;
  static constexpr int kGenderBase = 0;
  static constexpr int kPitchBase = 2;
  static constexpr int kSpeedBase = 5;
  static constexpr int kStyleBase = 8;
  static constexpr int kBodyBase = 16;
  static constexpr int kBodyAlphabet = 27;

  static int repetition(Speed s) { return 3 - static_cast<int>(s); }
  static int body_char_index(char c);  // throws EncodeError outside a-z/space
  static char body_char(int index);
};

std::vector<int> speech_encode(const VoiceAttributes& attrs, const std::string& transcript);

struct OracleDecodeResult {
  VoiceAttributes attrs;
  std::string transcript;
  bool strict_valid = true;  // false when tolerant mode repaired repetitions
};

// Exact inverse of speech_encode on its image. In tolerant mode a body run
// whose length is off by one repetition is accepted by majority vote and
// flagged. Throws DecodeError (with position) otherwise.
OracleDecodeResult oracle_decode(const std::vector<int>& tokens, bool tolerant = false);

enum class FamilyKind { InDomain, OodProxy };

// Per-attribute-value keyword lexicon plus sentence frames. The two families
// have disjoint keyword sets so out-of-domain generalization is measurable.
struct TemplateFamily {
  FamilyKind kind = FamilyKind::InDomain;
  std::map<std::string, std::vector<std::string>> lexicon;  // "gender:female" -> words
  std::vector<std::string> frames;  // use {g} {p} {s} {st} placeholders

  static const TemplateFamily& in_domain();
  static const TemplateFamily& ood_proxy();

  std::vector<std::string> keywords() const;
  const std::vector<std::string>& words_for(const VoiceAttributes& attrs,
                                            const std::string& field) const;
};

std::string render_description(const VoiceAttributes& attrs, const TemplateFamily& family,
                               std::uint64_t seed);

struct CorpusSpec {
  int base_text_sentences = 3000;
  int text_eval_sentences = 200;
  int tts_examples = 2000;
  int finetune_examples = 2000;
  int test_in_count = 20;
  int test_ood_count = 40;
  int min_words = 3;
  int max_words = 6;
  std::uint64_t seed = 1234;
};

struct CorpusPaths {
  std::string base_text;
  std::string text_eval;
  std::string tts;
  std::string finetune;
  std::string test_in;
  std::string test_ood;
};

CorpusPaths corpus_paths(const std::string& dir);

// Writes all splits under `dir` (deterministic given the spec + seed):
//   base_text.txt    description sentences of both families + bridges
//   text_eval.txt    held-out text sentences for perplexity / logit deltas
//   tts.jsonl        no descriptions (pre-training phase)
//   finetune.jsonl   in-domain descriptions only
//   test_in.jsonl    20 in-domain records, held-out transcripts
//   test_ood.jsonl   40 ood-proxy records, held-out transcripts
CorpusPaths generate_corpus(const CorpusSpec& spec, const std::string& dir);

}  // namespace moetts
