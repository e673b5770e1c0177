#pragma once

// Weighted-score pools: how strongly each probe key selects each edited fact.

#include "kvedit/kvdb.hpp"
#include "kvedit/solvers.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace kvedit {

struct ScoreDiagnostics {
  /// Score of the labeled fact, one per labeled probe.
  std::vector<double> positive;
  /// Every other score: off-label entries of labeled probes and all entries
  /// of unlabeled probes.
  std::vector<double> negative;
  double positive_mean = 0.0;
  double positive_std = 0.0;
  double negative_mean = 0.0;
  double negative_std = 0.0;
  /// Largest |score| over all probes.
  double max_abs = 0.0;
  /// Linear solutions only: max over probes of ‖Δk − R1ω‖ / (‖Δ‖_F·‖k‖).
  std::optional<double> reconstruction_error;

  std::string summary_csv() const;
  /// pool,score rows.
  std::string pools_csv() const;
};

/// labels[i] is the edited-fact column probe i belongs to, or nullopt for an
/// unrelated probe. Linear solutions score with ω = K1ᵀ·S·k.
ScoreDiagnostics diagnose_scores(const EditSolution& solution, const DenseMatrix& probes,
                                 std::span<const std::optional<std::size_t>> labels);

/// Gated databases score with per-entry cosine similarity.
ScoreDiagnostics diagnose_scores(const NeuralKVDatabase& db, const DenseMatrix& probes,
                                 std::span<const std::optional<std::size_t>> labels);

}  // namespace kvedit
