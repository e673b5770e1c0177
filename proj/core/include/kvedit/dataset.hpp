#pragma once

// Fact files and synthetic fact suites.
//
// A fact file holds one JSON object per line:
//   {"id": 1, "subject": "34 77 120", "prompt": "{} 5 9", "old": "200",
//    "new": "13", "paraphrases": ["250 251 {} 5 9"],
//    "neighborhood": [{"prompt": "40 41 42 5 9", "object": "88"}]}
// Token sequences are space-separated ids; "{}" marks the subject slot.
// Blank lines are ignored.

#include "kvedit/fact.hpp"
#include "kvedit/toy_model.hpp"

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace kvedit {

class FactParseError : public std::runtime_error {
 public:
  FactParseError(std::size_t line, const std::string& field, const std::string& reason);
  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

std::vector<Fact> parse_facts(std::istream& in);
std::vector<Fact> load_facts(const std::filesystem::path& path);

std::string format_fact(const Fact& fact);
void save_facts(const std::filesystem::path& path, const std::vector<Fact>& facts);

/// Token sequence <-> text ("{}" for the subject slot).
Tokens parse_tokens(const std::string& text);
std::string format_tokens(const Tokens& tokens);

struct SynthConfig {
  int paraphrases = 2;
  int neighbors = 2;
  /// Tokens prepended to the prompt to make each paraphrase.
  int paraphrase_prefix = 2;
  int subject_length = 3;
  /// Candidates scanned for the least likely new object.
  int new_object_candidates = 16;
  int relations = 8;
  /// Give every edited subject a last token used nowhere else in the suite,
  /// provided the vocabulary has room for it.
  bool distinct_last_tokens = true;
};

/// Deterministic facts whose old objects are the model's argmax answers and
/// whose new objects are low-probability tokens. Subjects are unique.
std::vector<Fact> synth_facts(int count, const ToyModel& model, std::uint64_t seed,
                              const SynthConfig& cfg = {});

}  // namespace kvedit
