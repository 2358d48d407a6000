#include "moetts/synthdata.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "moetts/rng.hpp"
#include "nlohmann/json.hpp"

namespace moetts {

namespace {

const char* kGenderNames[] = {"female", "male"};
const char* kPitchNames[] = {"low", "mid", "high"};
const char* kSpeedNames[] = {"slow", "mid", "fast"};
const char* kStyleNames[] = {"calm", "excited"};

constexpr const char* kSystemPrompt = "you are a speech assistant.";

// 50-word transcript vocabulary, a-z only.
const std::vector<std::string>& word_bank() {
  static const std::vector<std::string> kWords = {
      "time",  "world", "house", "river", "stone", "light", "sound", "plant", "glass", "cloud",
      "green", "small", "quiet", "early", "round", "paper", "table", "water", "night", "dream",
      "road",  "bird",  "wind",  "tree",  "song",  "door",  "fire",  "rain",  "snow",  "leaf",
      "moon",  "star",  "ship",  "wave",  "sand",  "hill",  "lake",  "path",  "gate",  "wall",
      "book",  "face",  "hand",  "gold",  "iron",  "silk",  "wool",  "corn",  "milk",  "salt"};
  return kWords;
}

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& v) {
  return v[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(v.size()) - 1))];
}

std::string substitute(std::string frame, const std::string& key, const std::string& value) {
  for (auto pos = frame.find(key); pos != std::string::npos; pos = frame.find(key)) {
    frame.replace(pos, key.size(), value);
  }
  return frame;
}

std::string make_transcript(Rng& rng, int min_words, int max_words) {
  const int n = rng.uniform_int(min_words, max_words);
  std::string out;
  for (int i = 0; i < n; ++i) {
    if (i > 0) out += ' ';
    out += pick(rng, word_bank());
  }
  return out;
}

int positive_mod(int a, int m) { return ((a % m) + m) % m; }

}  // namespace

std::vector<VoiceAttributes> VoiceAttributes::all_combinations() {
  std::vector<VoiceAttributes> out;
  out.reserve(36);
  for (int g = 0; g < 2; ++g)
    for (int p = 0; p < 3; ++p)
      for (int s = 0; s < 3; ++s)
        for (int st = 0; st < 2; ++st) {
          out.push_back({static_cast<Gender>(g), static_cast<Pitch>(p), static_cast<Speed>(s),
                         static_cast<Style>(st)});
        }
  return out;
}

std::string VoiceAttributes::attrs_json() const {
  nlohmann::json j;
  j["gender"] = kGenderNames[static_cast<int>(gender)];
  j["pitch"] = kPitchNames[static_cast<int>(pitch)];
  j["speed"] = kSpeedNames[static_cast<int>(speed)];
  j["style"] = kStyleNames[static_cast<int>(style)];
  return j.dump();
}

VoiceAttributes VoiceAttributes::from_attrs_json(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text);
  auto find = [](const char* const* names, int n, const std::string& v) {
    for (int i = 0; i < n; ++i)
      if (v == names[i]) return i;
    throw ParseError("unknown attribute value '" + v + "'");
  };
  VoiceAttributes a;
  a.gender = static_cast<Gender>(find(kGenderNames, 2, j.at("gender")));
  a.pitch = static_cast<Pitch>(find(kPitchNames, 3, j.at("pitch")));
  a.speed = static_cast<Speed>(find(kSpeedNames, 3, j.at("speed")));
  a.style = static_cast<Style>(find(kStyleNames, 2, j.at("style")));
  return a;
}

int SpeechTokenGrammar::body_char_index(char c) {
  if (c >= 'a' && c <= 'z') return c - 'a';
  if (c == ' ') return 26;
  throw EncodeError(std::string("character '") + c + "' outside the body alphabet");
}

char SpeechTokenGrammar::body_char(int index) {
  if (index < 0 || index >= kBodyAlphabet) throw DecodeError("body char index out of range");
  return index == 26 ? ' ' : static_cast<char>('a' + index);
}

std::vector<int> speech_encode(const VoiceAttributes& attrs, const std::string& transcript) {
  using G = SpeechTokenGrammar;
  std::vector<int> tokens;
  tokens.push_back(G::kGenderBase + static_cast<int>(attrs.gender));
  tokens.push_back(G::kPitchBase + static_cast<int>(attrs.pitch));
  tokens.push_back(G::kSpeedBase + static_cast<int>(attrs.speed));
  tokens.push_back(G::kStyleBase + static_cast<int>(attrs.style));
  const int shift = 3 * static_cast<int>(attrs.pitch);
  const int rep = G::repetition(attrs.speed);
  for (char c : transcript) {
    const int tok = G::kBodyBase + (G::body_char_index(c) + shift) % G::kBodyAlphabet;
    for (int r = 0; r < rep; ++r) tokens.push_back(tok);
  }
  return tokens;
}

OracleDecodeResult oracle_decode(const std::vector<int>& tokens, bool tolerant) {
  using G = SpeechTokenGrammar;
  if (tokens.size() < 4) {
    throw DecodeError("truncated header at position " + std::to_string(tokens.size()));
  }
  auto in_range = [](int v, int lo, int hi) { return v >= lo && v < hi; };
  if (!in_range(tokens[0], G::kGenderBase, G::kGenderBase + 2)) {
    throw DecodeError("bad gender token at position 0");
  }
  if (!in_range(tokens[1], G::kPitchBase, G::kPitchBase + 3)) {
    throw DecodeError("bad pitch token at position 1");
  }
  if (!in_range(tokens[2], G::kSpeedBase, G::kSpeedBase + 3)) {
    throw DecodeError("bad speed token at position 2");
  }
  if (!in_range(tokens[3], G::kStyleBase, G::kStyleBase + 2)) {
    throw DecodeError("bad style token at position 3");
  }
  OracleDecodeResult out;
  out.attrs.gender = static_cast<Gender>(tokens[0] - G::kGenderBase);
  out.attrs.pitch = static_cast<Pitch>(tokens[1] - G::kPitchBase);
  out.attrs.speed = static_cast<Speed>(tokens[2] - G::kSpeedBase);
  out.attrs.style = static_cast<Style>(tokens[3] - G::kStyleBase);

  const int shift = 3 * static_cast<int>(out.attrs.pitch);
  const int rep = G::repetition(out.attrs.speed);
  std::size_t i = 4;
  while (i < tokens.size()) {
    const int tok = tokens[i];
    if (!in_range(tok, G::kBodyBase, G::kBodyBase + G::kBodyAlphabet)) {
      throw DecodeError("bad body token at position " + std::to_string(i));
    }
    std::size_t j = i;
    while (j < tokens.size() && tokens[j] == tok) ++j;
    const int run = static_cast<int>(j - i);
    int count = (2 * run + rep) / (2 * rep);  // nearest integer of run/rep
    if (count < 1) count = 1;
    if (run != count * rep) {
      if (!tolerant || std::abs(run - count * rep) > 1) {
        throw DecodeError("inconsistent repetition at position " + std::to_string(i));
      }
      out.strict_valid = false;
    }
    const char c = G::body_char(positive_mod(tok - G::kBodyBase - shift, G::kBodyAlphabet));
    out.transcript.append(static_cast<std::size_t>(count), c);
    i = j;
  }
  return out;
}

const TemplateFamily& TemplateFamily::in_domain() {
  static const TemplateFamily f = [] {
    TemplateFamily t;
    t.kind = FamilyKind::InDomain;
    t.lexicon = {
        {"gender:female", {"female", "girl"}},
        {"gender:male", {"guy", "boy"}},
        {"pitch:low", {"low", "deep"}},
        {"pitch:mid", {"medium", "middling"}},
        {"pitch:high", {"high", "sharp"}},
        {"speed:slow", {"slow", "leisurely"}},
        {"speed:mid", {"moderate", "measured"}},
        {"speed:fast", {"fast", "quick"}},
        {"style:calm", {"calm", "relaxed"}},
        {"style:excited", {"excited", "energetic"}},
    };
    t.frames = {
        "a speaker with a {p} pitch at a {s} pace in a {st} tone, a {g} voice.",
        "the {st} voice has a {p} pitch and a {s} pace, from a {g} speaker.",
        "{p} pitch, {s} pace, {st} tone, a {g} voice.",
        "this speaker sounds {st}, with a {p} pitch and a {s} pace, clearly {g}.",
    };
    return t;
  }();
  return f;
}

const TemplateFamily& TemplateFamily::ood_proxy() {
  static const TemplateFamily f = [] {
    TemplateFamily t;
    t.kind = FamilyKind::OodProxy;
    t.lexicon = {
        {"gender:female", {"lady", "gal"}},
        {"gender:male", {"fellow", "mister"}},
        {"pitch:low", {"rumbling", "growling"}},
        {"pitch:mid", {"plain register", "unremarkable register"}},
        {"pitch:high", {"squeaky", "piping"}},
        {"speed:slow", {"dragging", "unhurried"}},
        {"speed:mid", {"steady", "even tempo"}},
        {"speed:fast", {"rapid", "like a machine gun"}},
        {"style:calm", {"serene", "placid"}},
        {"style:excited", {"bubbling", "fired up"}},
    };
    t.frames = {
        "voice {p}, words {s}, altogether {st}, picture a {g} of sorts.",
        "a {p} sound, pacing {s}, mood {st}, so speaks a {g}.",
        "a {st} presence, {p} in register, {s} in delivery, clearly a {g}.",
        "imagine a {p} tone, words coming {s}, feeling {st}, a {g} talking.",
    };
    return t;
  }();
  return f;
}

std::vector<std::string> TemplateFamily::keywords() const {
  std::vector<std::string> out;
  for (const auto& [key, words] : lexicon) {
    out.insert(out.end(), words.begin(), words.end());
  }
  return out;
}

const std::vector<std::string>& TemplateFamily::words_for(const VoiceAttributes& attrs,
                                                          const std::string& field) const {
  std::string key;
  if (field == "gender") key = std::string("gender:") + kGenderNames[static_cast<int>(attrs.gender)];
  else if (field == "pitch") key = std::string("pitch:") + kPitchNames[static_cast<int>(attrs.pitch)];
  else if (field == "speed") key = std::string("speed:") + kSpeedNames[static_cast<int>(attrs.speed)];
  else if (field == "style") key = std::string("style:") + kStyleNames[static_cast<int>(attrs.style)];
  else throw ContractError("unknown attribute field " + field);
  const auto it = lexicon.find(key);
  if (it == lexicon.end() || it->second.empty()) {
    throw ParseError("template family lacks lexicon entry " + key);
  }
  return it->second;
}

std::string render_description(const VoiceAttributes& attrs, const TemplateFamily& family,
                               std::uint64_t seed) {
  Rng rng(seed);
  std::string text = pick(rng, family.frames);
  text = substitute(text, "{g}", pick(rng, family.words_for(attrs, "gender")));
  text = substitute(text, "{p}", pick(rng, family.words_for(attrs, "pitch")));
  text = substitute(text, "{s}", pick(rng, family.words_for(attrs, "speed")));
  text = substitute(text, "{st}", pick(rng, family.words_for(attrs, "style")));
  return text;
}

CorpusPaths corpus_paths(const std::string& dir) {
  CorpusPaths p;
  p.base_text = dir + "/base_text.txt";
  p.text_eval = dir + "/text_eval.txt";
  p.tts = dir + "/tts.jsonl";
  p.finetune = dir + "/finetune.jsonl";
  p.test_in = dir + "/test_in.jsonl";
  p.test_ood = dir + "/test_ood.jsonl";
  return p;
}

namespace {

// Sentences that tie the ood lexicon to the in-domain lexicon. The base text
// phase learns these associations; the MoE phases never see ood wording.
std::vector<std::string> bridge_sentences() {
  const auto& in = TemplateFamily::in_domain();
  const auto& ood = TemplateFamily::ood_proxy();
  std::vector<std::string> out;
  for (const auto& [key, ood_words] : ood.lexicon) {
    const auto& in_words = in.lexicon.at(key);
    for (const auto& wo : ood_words) {
      for (const auto& wi : in_words) {
        out.push_back(wo + " means " + wi + ".");
        out.push_back("a voice that is " + wo + " is " + wi + ".");
        out.push_back("when people say " + wo + " they mean " + wi + ".");
      }
    }
  }
  return out;
}

// The four attribute values spelled with their canonical names, in the same
// order the speech grammar encodes them (gender pitch speed style).
std::string canonical_attrs(const VoiceAttributes& a) {
  return std::string(kGenderNames[static_cast<int>(a.gender)]) + " " +
         kPitchNames[static_cast<int>(a.pitch)] + " " +
         kSpeedNames[static_cast<int>(a.speed)] + " " +
         kStyleNames[static_cast<int>(a.style)];
}

std::string base_text_sentence(Rng& rng, const std::vector<std::string>& bridges,
                               const std::vector<VoiceAttributes>& combos) {
  const double u = rng.uniform();
  const auto& attrs = combos[static_cast<std::size_t>(rng.uniform_int(0, 35))];
  const auto& family = rng.uniform() < 0.5 ? TemplateFamily::in_domain()
                                           : TemplateFamily::ood_proxy();
  if (u < 0.05) {
    return render_description(attrs, TemplateFamily::in_domain(), rng.next_u64());
  }
  if (u < 0.10) {
    return render_description(attrs, TemplateFamily::ood_proxy(), rng.next_u64());
  }
  if (u < 0.26) {
    return pick(rng, bridges);
  }
  if (u < 0.34) {
    // Paraphrase pair: the same attributes described in both families.
    const std::string a = render_description(attrs, TemplateFamily::ood_proxy(), rng.next_u64());
    const std::string b = render_description(attrs, TemplateFamily::in_domain(), rng.next_u64());
    return a + " that is, " + b;
  }
  // Half of the echo/combined lines carry the fixed system sentence as a
  // prefix so the skills survive that leading context.
  const std::string sys = rng.uniform() < 0.5 ? std::string(kSystemPrompt) + " " : "";
  if (u < 0.56) {
    // Echo line: a description followed by noise words, then the canonical
    // gender name after the "ok" cue. Teaches the language model to carry
    // the hardest long-range attribute across intervening content words.
    const std::string desc = render_description(attrs, family, rng.next_u64());
    const std::string filler = make_transcript(rng, 2, 5);
    return sys + desc + "-" + filler + " ok " +
           kGenderNames[static_cast<int>(attrs.gender)] + ".";
  }
  if (u < 0.82) {
    // Duplication line: a word sequence repeats verbatim after the "ok" cue.
    // Teaches a copy circuit over the content-word bank.
    const std::string filler = make_transcript(rng, 2, 5);
    return filler + " ok " + filler + ".";
  }
  // Combined: description, noise words, then attribute summary and the same
  // noise words recited after the cue — the text-only analogue of the whole
  // speech task.
  const std::string desc = render_description(attrs, family, rng.next_u64());
  const std::string filler = make_transcript(rng, 2, 5);
  return sys + desc + "-" + filler + " ok " + canonical_attrs(attrs) + " " + filler + ".";
}

}  // namespace

CorpusPaths generate_corpus(const CorpusSpec& spec, const std::string& dir) {
  if (spec.tts_examples < 1 || spec.finetune_examples < 1 || spec.base_text_sentences < 1 ||
      spec.test_in_count < 1 || spec.test_ood_count < 1) {
    throw ConfigError("corpus spec counts must be >= 1");
  }
  if (spec.min_words < 1 || spec.max_words < spec.min_words) {
    throw ConfigError("corpus spec word counts inconsistent");
  }
  const auto paths = corpus_paths(dir);
  const auto combos = VoiceAttributes::all_combinations();
  const auto bridges = bridge_sentences();

  // Base text + held-out text eval.
  {
    Rng rng(Rng::derive(spec.seed, "base_text"));
    std::vector<std::string> lines;
    lines.reserve(static_cast<std::size_t>(spec.base_text_sentences));
    for (int i = 0; i < spec.base_text_sentences; ++i) {
      lines.push_back(base_text_sentence(rng, bridges, combos));
    }
    write_lines(paths.base_text, lines);

    Rng ev(Rng::derive(spec.seed, "text_eval"));
    std::vector<std::string> eval_lines;
    for (int i = 0; i < spec.text_eval_sentences; ++i) {
      eval_lines.push_back(base_text_sentence(ev, bridges, combos));
    }
    write_lines(paths.text_eval, eval_lines);
  }

  std::set<std::string> train_transcripts;
  auto make_record = [&](Rng& rng, const VoiceAttributes& attrs, bool with_description,
                         FamilyKind family, const std::string& transcript,
                         const std::string& domain) {
    CorpusRecord r;
    r.system = kSystemPrompt;
    if (with_description) {
      const auto& fam = family == FamilyKind::InDomain ? TemplateFamily::in_domain()
                                                       : TemplateFamily::ood_proxy();
      r.description = render_description(attrs, fam, rng.next_u64());
    }
    r.transcript = transcript;
    r.speech = speech_encode(attrs, transcript);
    r.attrs_json = attrs.attrs_json();
    r.domain = domain;
    return r;
  };

  // Attribute values are balanced by cycling all 36 combinations.
  {
    Rng rng(Rng::derive(spec.seed, "tts"));
    std::vector<CorpusRecord> records;
    for (int i = 0; i < spec.tts_examples; ++i) {
      const auto& attrs = combos[static_cast<std::size_t>(i) % combos.size()];
      const std::string tr = make_transcript(rng, spec.min_words, spec.max_words);
      train_transcripts.insert(tr);
      records.push_back(make_record(rng, attrs, false, FamilyKind::InDomain, tr, "in"));
    }
    write_corpus(paths.tts, records);
  }
  {
    Rng rng(Rng::derive(spec.seed, "finetune"));
    std::vector<CorpusRecord> records;
    for (int i = 0; i < spec.finetune_examples; ++i) {
      const auto& attrs = combos[static_cast<std::size_t>(i) % combos.size()];
      const std::string tr = make_transcript(rng, spec.min_words, spec.max_words);
      train_transcripts.insert(tr);
      records.push_back(make_record(rng, attrs, true, FamilyKind::InDomain, tr, "in"));
    }
    write_corpus(paths.finetune, records);
  }

  auto held_out_transcript = [&](Rng& rng, std::set<std::string>& used) {
    for (int attempt = 0; attempt < 10000; ++attempt) {
      std::string tr = make_transcript(rng, spec.min_words, spec.max_words);
      if (!train_transcripts.count(tr) && !used.count(tr)) {
        used.insert(tr);
        return tr;
      }
    }
    throw ConfigError("could not draw a held-out transcript; enlarge the word range");
  };

  std::set<std::string> test_used;
  {
    Rng rng(Rng::derive(spec.seed, "test_in"));
    std::vector<CorpusRecord> records;
    for (int i = 0; i < spec.test_in_count; ++i) {
      const auto& attrs = combos[static_cast<std::size_t>(i * 7) % combos.size()];
      const std::string tr = held_out_transcript(rng, test_used);
      records.push_back(make_record(rng, attrs, true, FamilyKind::InDomain, tr, "in"));
    }
    write_corpus(paths.test_in, records);
  }
  {
    Rng rng(Rng::derive(spec.seed, "test_ood"));
    std::vector<CorpusRecord> records;
    for (int i = 0; i < spec.test_ood_count; ++i) {
      const auto& attrs = combos[static_cast<std::size_t>(i * 5) % combos.size()];
      const std::string tr = held_out_transcript(rng, test_used);
      records.push_back(make_record(rng, attrs, true, FamilyKind::OodProxy, tr, "ood"));
    }
    write_corpus(paths.test_ood, records);
  }
  return paths;
}

}  // namespace moetts
