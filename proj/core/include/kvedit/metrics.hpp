#pragma once

// Edit metrics over a model with attachments. Each metric keeps the per-item
// outcome log it was counted from.

#include "kvedit/fact.hpp"
#include "kvedit/kvdb.hpp"
#include "kvedit/toy_model.hpp"

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace kvedit {

/// kPreference compares probabilities of two objects; kTop1 checks the
/// greedy continuation. A report never mixes the two.
enum class MetricMode { kPreference, kTop1 };

std::string to_string(MetricMode mode);
MetricMode parse_metric_mode(const std::string& text);

struct ItemOutcome {
  std::uint64_t fact = 0;
  std::size_t probe = 0;  ///< paraphrase / neighbor index, 0 for efficacy
  bool success = false;
};

struct MetricResult {
  std::size_t successes = 0;
  std::size_t attempts = 0;
  /// Facts without any probe for this metric; not in the denominator.
  std::size_t skipped = 0;
  std::vector<ItemOutcome> items;

  /// successes / attempts, 0 when there were no attempts.
  double fraction() const;
};

struct EditedModel {
  const ToyModel* model = nullptr;
  std::vector<EditAttachment> attachments;
};

/// log P(object | prompt), teacher-forced over the object tokens.
double sequence_logprob(const EditedModel& m, const Tokens& prompt, const Tokens& object);

/// True when greedy decoding from prompt reproduces every object token.
bool greedy_matches(const EditedModel& m, const Tokens& prompt, const Tokens& object);

/// New object preferred over the old one (or produced) on the edit prompt.
MetricResult eval_efficacy(const EditedModel& m, std::span<const Fact> facts, MetricMode mode,
                           int jobs = 1);

/// Same test on every paraphrase prompt.
MetricResult eval_generalization(const EditedModel& m, std::span<const Fact> facts,
                                 MetricMode mode, int jobs = 1);

/// Neighborhood prompts keep their original object over the new one (or
/// still produce it).
MetricResult eval_specificity(const EditedModel& m, std::span<const Fact> facts, MetricMode mode,
                              int jobs = 1);

struct MetricReport {
  MetricMode mode = MetricMode::kTop1;
  MetricResult efficacy;
  MetricResult generalization;
  MetricResult specificity;
  /// Effective settings echoed into the outputs, in insertion order.
  std::vector<std::pair<std::string, std::string>> config;

  std::string to_csv() const;
  std::string to_json() const;
  /// fact,metric,probe,success rows for every item.
  std::string items_csv() const;
};

MetricReport evaluate(const EditedModel& m, std::span<const Fact> facts, MetricMode mode,
                      int jobs = 1);

/// A key standing in for a paraphrase prompt: a controlled perturbation of a
/// stored key together with the fact it should retrieve.
struct KeyProbe {
  DenseVector key;
  FactId expected;
  double cosine = 0.0;  ///< constructed cosine to the expected key
};

/// count probes, each at a cosine drawn uniformly from [cos_lo, cos_hi] to a
/// uniformly chosen stored key.
std::vector<KeyProbe> make_key_probes(const NeuralKVDatabase& db, std::size_t count, double cos_lo,
                                      double cos_hi, std::uint64_t seed);

/// Success when the gate fires and returns the expected fact.
MetricResult eval_key_probes(const NeuralKVDatabase& db, std::span<const KeyProbe> probes,
                             int jobs = 1);

}  // namespace kvedit
