#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "moetts/errors.hpp"

namespace moetts {

enum class Modality { Text, Speech };

// Ordered control tokens appended after the content id blocks.
enum class Special : int {
  BosSystem = 0,
  EosSystem,
  BosUser,
  EosUser,
  BosAssistant,
  EosAssistant,
  ThinkOpen,
  ThinkClose,
  SpeechEos,
  Pad,
};

inline constexpr int kNumSpecials = 10;

const char* special_name(Special s);

// Partitioned id space: text ids in [0, Vt), speech ids in [Vt, Vt+Vs),
// specials contiguously after. A text-only layout (no speech block) is used
// by the base model before conversion.
class Vocabulary {
 public:
  static Vocabulary extended(int text_size, int speech_size);
  static Vocabulary text_only(int text_size);

  int text_size() const { return text_size_; }
  int speech_size() const { return speech_size_; }
  bool has_speech_block() const { return speech_size_ > 0; }
  int total_size() const { return text_size_ + speech_size_ + kNumSpecials; }

  int speech_begin() const { return text_size_; }
  int specials_begin() const { return text_size_ + speech_size_; }
  int special_id(Special s) const { return specials_begin() + static_cast<int>(s); }

  bool is_special(int id) const { return id >= specials_begin() && id < total_size(); }
  bool is_text_content(int id) const { return id >= 0 && id < text_size_; }
  bool is_speech_content(int id) const { return id >= speech_begin() && id < specials_begin(); }

  // Throws TokenError on out-of-range ids. SPEECH_EOS is the single special
  // with Speech modality; the model has to learn to emit it.
  Modality modality_of(int id) const;

  // Speech content id -> grammar id in [0, Vs).
  int rebase_speech(int id) const;

  std::vector<std::pair<std::string, int>> special_tokens() const;

 private:
  Vocabulary(int text_size, int speech_size) : text_size_(text_size), speech_size_(speech_size) {}
  int text_size_ = 0;
  int speech_size_ = 0;
};

Vocabulary build_vocabulary(int text_vocab_size, int speech_vocab_size);

// Character-level text tokenization over a fixed alphabet, plus one reserved
// separator id used between description and transcript in the user segment.
class TextCodec {
 public:
  static constexpr std::string_view kAlphabet = "abcdefghijklmnopqrstuvwxyz 0123456789.,;:!?'-";

  static int alphabet_size() { return static_cast<int>(kAlphabet.size()); }
  static int sep_id() { return alphabet_size(); }
  static int required_text_vocab() { return alphabet_size() + 1; }

  static std::vector<int> encode(std::string_view text);
  static std::string decode(const std::vector<int>& ids);
};

}  // namespace moetts
