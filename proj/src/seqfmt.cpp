#include "moetts/seqfmt.hpp"

#include <fstream>

#include "nlohmann/json.hpp"

namespace moetts {

namespace {

void push_id(EncodedSequence& seq, int id, const Vocabulary& vocab, bool loss) {
  seq.ids.push_back(id);
  seq.modality_mask.push_back(vocab.modality_of(id));
  seq.loss_mask.push_back(loss ? 1 : 0);
}

void push_text_content(EncodedSequence& seq, const std::vector<int>& ids,
                       const Vocabulary& vocab) {
  for (int id : ids) {
    if (!vocab.is_text_content(id)) {
      throw TokenError("content id " + std::to_string(id) + " outside text range");
    }
    push_id(seq, id, vocab, false);
  }
}

}  // namespace

EncodedSequence assemble_example(const ChatExample& ex, const Vocabulary& vocab,
                                 bool include_target) {
  if (!include_target && !ex.speech.empty()) {
    throw ContractError("speech must be empty when include_target is false");
  }
  EncodedSequence seq;
  push_id(seq, vocab.special_id(Special::BosSystem), vocab, false);
  push_text_content(seq, ex.system, vocab);
  push_id(seq, vocab.special_id(Special::EosSystem), vocab, false);

  push_id(seq, vocab.special_id(Special::BosUser), vocab, false);
  push_text_content(seq, ex.description, vocab);
  if (TextCodec::sep_id() >= vocab.text_size()) {
    throw ConfigError("text vocabulary too small for the separator id");
  }
  push_id(seq, TextCodec::sep_id(), vocab, false);
  push_text_content(seq, ex.transcript, vocab);
  push_id(seq, vocab.special_id(Special::EosUser), vocab, false);

  push_id(seq, vocab.special_id(Special::BosAssistant), vocab, false);
  push_id(seq, vocab.special_id(Special::ThinkOpen), vocab, false);
  push_id(seq, vocab.special_id(Special::ThinkClose), vocab, false);

  if (include_target) {
    for (int s : ex.speech) {
      if (s < 0 || s >= vocab.speech_size()) {
        throw TokenError("speech id " + std::to_string(s) +
                         " outside speech range (mixed modality)");
      }
      push_id(seq, vocab.speech_begin() + s, vocab, true);
    }
    push_id(seq, vocab.special_id(Special::SpeechEos), vocab, true);
    push_id(seq, vocab.special_id(Special::EosAssistant), vocab, false);
  }
  return seq;
}

std::vector<int> decode_assistant(const EncodedSequence& seq, const Vocabulary& vocab) {
  const int bos = vocab.special_id(Special::BosAssistant);
  const int think_close = vocab.special_id(Special::ThinkClose);
  const int speech_eos = vocab.special_id(Special::SpeechEos);

  int i = 0;
  const int n = seq.length();
  while (i < n && seq.ids[i] != bos) ++i;
  if (i == n) throw ParseError("no assistant segment (BOS_ASSISTANT missing)");
  while (i < n && seq.ids[i] != think_close) ++i;
  if (i == n) throw ParseError("assistant segment lacks THINK_CLOSE");
  ++i;

  std::vector<int> speech;
  for (; i < n; ++i) {
    const int id = seq.ids[i];
    if (id == speech_eos) return speech;
    if (!vocab.is_speech_content(id)) {
      throw ParseError("non-speech id " + std::to_string(id) + " in assistant body at position " +
                       std::to_string(i));
    }
    speech.push_back(vocab.rebase_speech(id));
  }
  // No SPEECH_EOS: accept an open body (generation may hit max_len first).
  return speech;
}

nlohmann::json CorpusRecord::attrs() const {
  return attrs_json.empty() ? nlohmann::json::object() : nlohmann::json::parse(attrs_json);
}

ChatExample CorpusRecord::to_chat_example(bool with_target) const {
  ChatExample ex;
  ex.system = TextCodec::encode(system);
  if (description.has_value()) ex.description = TextCodec::encode(*description);
  ex.transcript = TextCodec::encode(transcript);
  if (with_target) ex.speech = speech;
  return ex;
}

std::vector<CorpusRecord> read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file " + path);
  std::vector<CorpusRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    CorpusRecord r;
    r.system = j.at("system").get<std::string>();
    if (!j.at("description").is_null()) r.description = j.at("description").get<std::string>();
    r.transcript = j.at("transcript").get<std::string>();
    r.speech = j.at("speech").get<std::vector<int>>();
    r.attrs_json = j.value("attrs", nlohmann::json::object()).dump();
    r.domain = j.value("domain", "in");
    records.push_back(std::move(r));
  }
  return records;
}

void write_corpus(const std::string& path, const std::vector<CorpusRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write corpus file " + path);
  for (const auto& r : records) {
    nlohmann::json j;
    j["system"] = r.system;
    if (r.description.has_value()) {
      j["description"] = *r.description;
    } else {
      j["description"] = nullptr;
    }
    j["transcript"] = r.transcript;
    j["speech"] = r.speech;
    j["attrs"] = r.attrs();
    j["domain"] = r.domain;
    out << j.dump() << '\n';
  }
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open text file " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write text file " + path);
  for (const auto& l : lines) out << l << '\n';
}

}  // namespace moetts
