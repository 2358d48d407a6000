#include "moetts/vocab.hpp"

#include <array>

namespace moetts {

const char* special_name(Special s) {
  static constexpr std::array<const char*, kNumSpecials> kNames = {
      "BOS_SYSTEM", "EOS_SYSTEM",    "BOS_USER",   "EOS_USER",   "BOS_ASSISTANT",
      "EOS_ASSISTANT", "THINK_OPEN", "THINK_CLOSE", "SPEECH_EOS", "PAD"};
  return kNames[static_cast<int>(s)];
}

Vocabulary Vocabulary::extended(int text_size, int speech_size) {
  if (text_size < 1 || speech_size < 1) {
    throw ConfigError("vocabulary sizes must be >= 1");
  }
  return Vocabulary(text_size, speech_size);
}

Vocabulary Vocabulary::text_only(int text_size) {
  if (text_size < 1) throw ConfigError("vocabulary sizes must be >= 1");
  return Vocabulary(text_size, 0);
}

Modality Vocabulary::modality_of(int id) const {
  if (id < 0 || id >= total_size()) {
    throw TokenError("id " + std::to_string(id) + " outside vocabulary of size " +
                     std::to_string(total_size()));
  }
  if (is_speech_content(id)) return Modality::Speech;
  if (id == special_id(Special::SpeechEos)) return Modality::Speech;
  return Modality::Text;
}

int Vocabulary::rebase_speech(int id) const {
  if (!is_speech_content(id)) {
    throw TokenError("id " + std::to_string(id) + " is not a speech content id");
  }
  return id - speech_begin();
}

std::vector<std::pair<std::string, int>> Vocabulary::special_tokens() const {
  std::vector<std::pair<std::string, int>> out;
  out.reserve(kNumSpecials);
  for (int i = 0; i < kNumSpecials; ++i) {
    const auto s = static_cast<Special>(i);
    out.emplace_back(special_name(s), special_id(s));
  }
  return out;
}

Vocabulary build_vocabulary(int text_vocab_size, int speech_vocab_size) {
  return Vocabulary::extended(text_vocab_size, speech_vocab_size);
}

std::vector<int> TextCodec::encode(std::string_view text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (char c : text) {
    const auto pos = kAlphabet.find(c);
    if (pos == std::string_view::npos) {
      throw EncodeError(std::string("character '") + c + "' outside text alphabet");
    }
    ids.push_back(static_cast<int>(pos));
  }
  return ids;
}

std::string TextCodec::decode(const std::vector<int>& ids) {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || id >= alphabet_size()) {
      throw DecodeError("id " + std::to_string(id) + " outside text alphabet");
    }
    out.push_back(kAlphabet[static_cast<std::size_t>(id)]);
  }
  return out;
}

}  // namespace moetts
