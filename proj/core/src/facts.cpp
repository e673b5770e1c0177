#include "kvedit/dataset.hpp"

#include "json.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

namespace kvedit {

namespace {

void check_template(const Tokens& t, const char* field) {
  if (std::count(t.begin(), t.end(), kSubjectSlot) != 1) {
    throw FactFieldError(field, "needs exactly one subject slot");
  }
}

void check_plain(const Tokens& t, const char* field) {
  if (t.empty()) throw FactFieldError(field, "is empty");
  if (std::any_of(t.begin(), t.end(), [](int x) { return x < 0; })) {
    throw FactFieldError(field, "has a negative token");
  }
}

}  // namespace

void Fact::validate() const {
  check_plain(subject, "subject");
  check_template(prompt, "prompt");
  check_plain(old_object, "old");
  check_plain(new_object, "new");
  if (old_object == new_object) throw FactFieldError("new", "equals old");
  for (const auto& p : paraphrases) check_template(p, "paraphrases");
  for (const auto& n : neighborhood) {
    check_plain(n.prompt, "neighborhood.prompt");
    check_plain(n.object, "neighborhood.object");
  }
}

Tokens fill_template(const Tokens& templ, const Tokens& subject) {
  if (std::count(templ.begin(), templ.end(), kSubjectSlot) != 1) {
    throw std::invalid_argument("template needs exactly one subject slot");
  }
  Tokens out;
  out.reserve(templ.size() + subject.size());
  for (int t : templ) {
    if (t == kSubjectSlot) {
      out.insert(out.end(), subject.begin(), subject.end());
    } else {
      out.push_back(t);
    }
  }
  return out;
}

Index subject_last_position(const Tokens& templ, const Tokens& subject) {
  const auto slot = std::find(templ.begin(), templ.end(), kSubjectSlot);
  if (slot == templ.end()) throw std::invalid_argument("template has no subject slot");
  if (subject.empty()) throw std::invalid_argument("empty subject");
  return static_cast<Index>(slot - templ.begin() + static_cast<std::ptrdiff_t>(subject.size())) - 1;
}

Tokens kl_prompt(const Tokens& subject) {
  Tokens out = subject;
  out.push_back(kIsToken);
  out.push_back(kAToken);
  return out;
}

FactParseError::FactParseError(std::size_t line, const std::string& field,
                               const std::string& reason)
    : std::runtime_error("line " + std::to_string(line) + ": field '" + field + "': " + reason),
      line_(line),
      field_(field) {}

Tokens parse_tokens(const std::string& text) {
  Tokens out;
  std::istringstream in(text);
  std::string word;
  while (in >> word) {
    if (word == "{}") {
      out.push_back(kSubjectSlot);
      continue;
    }
    std::size_t used = 0;
    int value = 0;
    try {
      value = std::stoi(word, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != word.size() || value < 0) {
      throw std::invalid_argument("bad token '" + word + "'");
    }
    out.push_back(value);
  }
  return out;
}

std::string format_tokens(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i] == kSubjectSlot ? std::string("{}") : std::to_string(tokens[i]);
  }
  return out;
}

namespace {

using nlohmann::json;

Tokens tokens_field(const json& obj, const char* field, std::size_t line) {
  if (!obj.contains(field)) throw FactParseError(line, field, "missing");
  const json& v = obj.at(field);
  if (!v.is_string()) throw FactParseError(line, field, "expected a string");
  try {
    return parse_tokens(v.get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw FactParseError(line, field, e.what());
  }
}

Fact parse_record(const std::string& text, std::size_t line) {
  json obj;
  try {
    obj = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FactParseError(line, "<record>", e.what());
  }
  if (!obj.is_object()) throw FactParseError(line, "<record>", "expected an object");
  Fact f;
  if (!obj.contains("id")) throw FactParseError(line, "id", "missing");
  if (!obj["id"].is_number_unsigned()) throw FactParseError(line, "id", "expected an unsigned integer");
  f.id = obj["id"].get<std::uint64_t>();
  f.subject = tokens_field(obj, "subject", line);
  f.prompt = tokens_field(obj, "prompt", line);
  f.old_object = tokens_field(obj, "old", line);
  f.new_object = tokens_field(obj, "new", line);
  if (obj.contains("paraphrases")) {
    const json& arr = obj["paraphrases"];
    if (!arr.is_array()) throw FactParseError(line, "paraphrases", "expected an array");
    for (const auto& p : arr) {
      if (!p.is_string()) throw FactParseError(line, "paraphrases", "expected strings");
      try {
        f.paraphrases.push_back(parse_tokens(p.get<std::string>()));
      } catch (const std::invalid_argument& e) {
        throw FactParseError(line, "paraphrases", e.what());
      }
    }
  }
  if (obj.contains("neighborhood")) {
    const json& arr = obj["neighborhood"];
    if (!arr.is_array()) throw FactParseError(line, "neighborhood", "expected an array");
    for (const auto& n : arr) {
      if (!n.is_object()) throw FactParseError(line, "neighborhood", "expected objects");
      f.neighborhood.push_back({tokens_field(n, "prompt", line), tokens_field(n, "object", line)});
    }
  }
  try {
    f.validate();
  } catch (const FactFieldError& e) {
    std::string field = e.field();
    if (field.rfind("neighborhood", 0) == 0) field = "neighborhood";
    throw FactParseError(line, field, e.what());
  }
  return f;
}

}  // namespace

std::vector<Fact> parse_facts(std::istream& in) {
  std::vector<Fact> facts;
  std::unordered_set<std::uint64_t> seen;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    Fact f = parse_record(text, line);
    if (!seen.insert(f.id).second) {
      throw FactParseError(line, "id", "duplicate id " + std::to_string(f.id));
    }
    facts.push_back(std::move(f));
  }
  return facts;
}

std::vector<Fact> load_facts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open fact file " + path.string());
  return parse_facts(in);
}

std::string format_fact(const Fact& fact) {
  json obj;
  obj["id"] = fact.id;
  obj["subject"] = format_tokens(fact.subject);
  obj["prompt"] = format_tokens(fact.prompt);
  obj["old"] = format_tokens(fact.old_object);
  obj["new"] = format_tokens(fact.new_object);
  obj["paraphrases"] = json::array();
  for (const auto& p : fact.paraphrases) obj["paraphrases"].push_back(format_tokens(p));
  obj["neighborhood"] = json::array();
  for (const auto& n : fact.neighborhood) {
    obj["neighborhood"].push_back(
        {{"prompt", format_tokens(n.prompt)}, {"object", format_tokens(n.object)}});
  }
  return obj.dump();
}

void save_facts(const std::filesystem::path& path, const std::vector<Fact>& facts) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write fact file " + path.string());
  for (const auto& f : facts) out << format_fact(f) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

namespace {

int argmax(const DenseVector& v) {
  Index i = 0;
  v.maxCoeff(&i);
  return static_cast<int>(i);
}

}  // namespace

std::vector<Fact> synth_facts(int count, const ToyModel& model, std::uint64_t seed,
                              const SynthConfig& cfg) {
  if (count < 1) throw std::invalid_argument("synth_facts: count must be >= 1");
  constexpr int kFirstContent = 32;
  constexpr int kFirstRelation = 3;
  constexpr std::size_t kMinSpareTokens = 64;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> content(kFirstContent, model.vocab() - 1);
  std::uniform_int_distribution<int> relation_token(kFirstRelation, kFirstContent - 1);

  std::vector<Tokens> relations;
  for (int i = 0; i < cfg.relations; ++i) {
    relations.push_back({kSubjectSlot, relation_token(rng), relation_token(rng)});
  }
  std::uniform_int_distribution<std::size_t> pick_relation(0, relations.size() - 1);

  // Each edited subject ends in its own token when the vocabulary allows it.
  // Those tokens appear nowhere else; every other token comes from the rest.
  std::vector<int> pool(static_cast<std::size_t>(model.vocab() - kFirstContent));
  std::iota(pool.begin(), pool.end(), kFirstContent);
  std::shuffle(pool.begin(), pool.end(), rng);
  const auto reserved = static_cast<std::size_t>(count);
  const bool distinct = cfg.distinct_last_tokens && reserved + kMinSpareTokens <= pool.size();
  const std::vector<int> spare =
      distinct ? std::vector<int>(pool.begin() + static_cast<std::ptrdiff_t>(reserved), pool.end())
               : pool;
  std::uniform_int_distribution<std::size_t> pick_spare(0, spare.size() - 1);

  auto random_tokens = [&](int n) {
    Tokens t(static_cast<std::size_t>(n));
    for (auto& x : t) x = spare[pick_spare(rng)];
    return t;
  };

  std::set<Tokens> used;
  auto fresh_subject = [&] {
    for (;;) {
      Tokens s = random_tokens(cfg.subject_length);
      if (used.insert(s).second) return s;
    }
  };
  std::size_t next_reserved = 0;
  auto edited_subject = [&] {
    if (!distinct) return fresh_subject();
    Tokens s = random_tokens(cfg.subject_length - 1);
    s.push_back(pool[next_reserved++]);
    used.insert(s);
    return s;
  };

  std::vector<Fact> facts;
  facts.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Fact f;
    f.id = static_cast<std::uint64_t>(i);
    f.subject = edited_subject();
    f.prompt = relations[pick_relation(rng)];
    facts.push_back(std::move(f));
  }

  for (auto& f : facts) {
    const DenseVector logits = next_token_logits(model, fill_template(f.prompt, f.subject));
    const int old_token = argmax(logits);
    f.old_object = {old_token};
    int best = -1;
    for (int c = 0; c < cfg.new_object_candidates || best < 0; ++c) {
      const int cand = content(rng);
      if (cand == old_token) continue;
      if (best < 0 || logits(cand) < logits(best)) best = cand;
    }
    f.new_object = {best};

    for (int p = 0; p < cfg.paraphrases; ++p) {
      Tokens para = random_tokens(cfg.paraphrase_prefix);
      para.insert(para.end(), f.prompt.begin(), f.prompt.end());
      f.paraphrases.push_back(std::move(para));
    }
    for (int n = 0; n < cfg.neighbors; ++n) {
      const Tokens prompt = fill_template(f.prompt, fresh_subject());
      f.neighborhood.push_back({prompt, {argmax(next_token_logits(model, prompt))}});
    }
  }
  return facts;
}

}  // namespace kvedit
