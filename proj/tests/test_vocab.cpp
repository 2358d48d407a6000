#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "moetts/vocab.hpp"

using namespace moetts;

TEST_CASE("layout is partitioned and contiguous") {
  const auto v = build_vocabulary(64, 64);
  CHECK(v.text_size() == 64);
  CHECK(v.speech_size() == 64);
  CHECK(v.speech_begin() == 64);
  CHECK(v.specials_begin() == 128);
  CHECK(v.total_size() == 64 + 64 + kNumSpecials);
  CHECK(v.modality_of(100) == Modality::Speech);
}

TEST_CASE("minimal layout") {
  const auto v = build_vocabulary(1, 1);
  CHECK(v.total_size() == 2 + kNumSpecials);
  CHECK(v.modality_of(0) == Modality::Text);
  CHECK(v.modality_of(1) == Modality::Speech);
}

TEST_CASE("large text block keeps speech ids right after it") {
  const auto v = build_vocabulary(151936, 6561);
  CHECK(v.speech_begin() == 151936);
  CHECK(v.is_speech_content(151936));
  CHECK(v.is_speech_content(151936 + 6560));
  CHECK_FALSE(v.is_speech_content(151936 + 6561));
}

TEST_CASE("zero sizes are rejected") {
  CHECK_THROWS_AS(build_vocabulary(0, 64), ConfigError);
  CHECK_THROWS_AS(build_vocabulary(64, 0), ConfigError);
}

TEST_CASE("special token order is fixed") {
  const auto v = build_vocabulary(64, 64);
  const auto specials = v.special_tokens();
  REQUIRE(specials.size() == kNumSpecials);
  const char* expected[] = {"BOS_SYSTEM",    "EOS_SYSTEM",    "BOS_USER",   "EOS_USER",
                            "BOS_ASSISTANT", "EOS_ASSISTANT", "THINK_OPEN", "THINK_CLOSE",
                            "SPEECH_EOS",    "PAD"};
  for (int i = 0; i < kNumSpecials; ++i) {
    CHECK(specials[static_cast<std::size_t>(i)].first == expected[i]);
    CHECK(specials[static_cast<std::size_t>(i)].second == v.specials_begin() + i);
  }
}

TEST_CASE("modality boundaries and errors") {
  const auto v = build_vocabulary(64, 64);
  CHECK(v.modality_of(0) == Modality::Text);
  CHECK(v.modality_of(63) == Modality::Text);
  CHECK(v.modality_of(64) == Modality::Speech);
  CHECK(v.modality_of(v.special_id(Special::SpeechEos)) == Modality::Speech);
  CHECK(v.modality_of(v.special_id(Special::Pad)) == Modality::Text);
  CHECK_THROWS_AS(v.modality_of(-1), TokenError);
  CHECK_THROWS_AS(v.modality_of(v.total_size()), TokenError);
}

TEST_CASE("exhaustive modality partition over the whole id space") {
  const auto v = build_vocabulary(46, 8);
  int text = 0, speech = 0;
  for (int id = 0; id < v.total_size(); ++id) {
    (v.modality_of(id) == Modality::Text ? text : speech) += 1;
  }
  CHECK(text + speech == v.total_size());
  // Speech ids plus SPEECH_EOS; everything else is text.
  CHECK(speech == v.speech_size() + 1);
  CHECK(text == v.text_size() + kNumSpecials - 1);
}

TEST_CASE("rebase maps speech ids onto grammar ids") {
  const auto v = build_vocabulary(64, 64);
  CHECK(v.rebase_speech(64) == 0);
  CHECK(v.rebase_speech(127) == 63);
  CHECK_THROWS_AS(v.rebase_speech(63), TokenError);
  CHECK_THROWS_AS(v.rebase_speech(128), TokenError);
}

TEST_CASE("text-only layout has no speech block") {
  const auto v = Vocabulary::text_only(64);
  CHECK_FALSE(v.has_speech_block());
  CHECK(v.total_size() == 64 + kNumSpecials);
  CHECK(v.specials_begin() == 64);
}

TEST_CASE("text codec round trip and separator") {
  CHECK(TextCodec::alphabet_size() == 45);
  CHECK(TextCodec::sep_id() == 45);
  CHECK(TextCodec::required_text_vocab() == 46);
  const std::string s = "hello world 42, ok!";
  CHECK(TextCodec::decode(TextCodec::encode(s)) == s);
  CHECK(TextCodec::encode("a") == std::vector<int>{0});
  CHECK(TextCodec::encode(" ")[0] == 26);
  CHECK_THROWS_AS(TextCodec::encode("UPPER"), EncodeError);
}
