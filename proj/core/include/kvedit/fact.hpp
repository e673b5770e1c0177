#pragma once

#include "kvedit/tensor.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace kvedit {

using Tokens = std::vector<int>;

/// A Fact field failed validation.
class FactFieldError : public std::invalid_argument {
 public:
  FactFieldError(std::string field, const std::string& reason)
      : std::invalid_argument("Fact: " + field + ": " + reason), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// Marks where the subject goes inside a prompt template.
inline constexpr int kSubjectSlot = -1;

/// Token ids of the "{subject} is a" probe used by the KL term.
inline constexpr int kIsToken = 1;
inline constexpr int kAToken = 2;

struct NeighborhoodPrompt {
  Tokens prompt;  ///< complete prompt, no subject slot
  Tokens object;  ///< object the unedited model should keep producing
};

/// One edit request (s, r, o -> ô) with its evaluation prompts.
struct Fact {
  std::uint64_t id = 0;
  Tokens subject;
  Tokens prompt;  ///< template with exactly one kSubjectSlot
  Tokens old_object;
  Tokens new_object;
  std::vector<Tokens> paraphrases;  ///< templates with exactly one kSubjectSlot
  std::vector<NeighborhoodPrompt> neighborhood;

  /// Throws FactFieldError naming the offending field.
  void validate() const;
};

/// Replaces the subject slot of a template with the subject tokens. Throws
/// std::invalid_argument unless there is exactly one slot.
Tokens fill_template(const Tokens& templ, const Tokens& subject);

/// Index of the subject's last token once the template is filled.
Index subject_last_position(const Tokens& templ, const Tokens& subject);

/// subject followed by "is a".
Tokens kl_prompt(const Tokens& subject);

}  // namespace kvedit
