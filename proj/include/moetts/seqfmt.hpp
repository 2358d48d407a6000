#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "moetts/vocab.hpp"
#include "nlohmann/json_fwd.hpp"

namespace moetts {

// Token ids plus the two per-position masks everything downstream keys on:
// which expert a position routes to, and whether it contributes to the loss.
struct EncodedSequence {
  std::vector<int> ids;
  std::vector<Modality> modality_mask;
  std::vector<std::uint8_t> loss_mask;

  int length() const { return static_cast<int>(ids.size()); }
};

// One training/inference example before template assembly. `speech` holds
// grammar ids in [0, Vs); it stays empty at inference time.
struct ChatExample {
  std::vector<int> system;
  std::vector<int> description;
  std::vector<int> transcript;
  std::vector<int> speech;
};

// Fixed chat template:
//   BOS_SYSTEM system EOS_SYSTEM
//   BOS_USER description SEP transcript EOS_USER
//   BOS_ASSISTANT THINK_OPEN THINK_CLOSE [speech SPEECH_EOS EOS_ASSISTANT]
// The assistant tail is emitted only when include_target is set. Loss mask is
// 1 exactly on the speech body and SPEECH_EOS.
EncodedSequence assemble_example(const ChatExample& ex, const Vocabulary& vocab,
                                 bool include_target);

// Extracts the speech ids strictly between THINK_CLOSE and SPEECH_EOS,
// rebased to [0, Vs). Throws ParseError on malformed sequences.
std::vector<int> decode_assistant(const EncodedSequence& seq, const Vocabulary& vocab);

// One line of the JSONL corpus files.
struct CorpusRecord {
  std::string system;
  std::optional<std::string> description;
  std::string transcript;
  std::vector<int> speech;  // grammar ids
  nlohmann::json attrs() const;
  std::string attrs_json;  // serialized attribute object ("{}" if absent)
  std::string domain;      // "in" | "ood"

  ChatExample to_chat_example(bool with_target) const;
};

std::vector<CorpusRecord> read_corpus(const std::string& path);
void write_corpus(const std::string& path, const std::vector<CorpusRecord>& records);

// Plain-text corpora (one sentence per line) used by the base text phase.
std::vector<std::string> read_lines(const std::string& path);
void write_lines(const std::string& path, const std::vector<std::string>& lines);

}  // namespace moetts
