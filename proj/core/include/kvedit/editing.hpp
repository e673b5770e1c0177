#pragma once

// Turning facts into edits on a ToyModel: key extraction, residual fitting,
// single-layer NeuralDB / linear edits and the two multi-layer schedules.

#include "kvedit/fact.hpp"
#include "kvedit/solvers.hpp"
#include "kvedit/toy_model.hpp"

#include <optional>
#include <stdexcept>
#include <vector>

namespace kvedit {

struct ResidualFitConfig {
  int steps = 100;
  double learning_rate = 0.1;
  double kl_weight = 0.0625;
  /// Prompts x_j + p in the likelihood term; x_0 is the empty prefix.
  int prefix_count = 3;
  int prefix_length = 3;
  std::optional<double> clamp_norm;
  /// Stop once every prompt's NLL is below this (probability > e^-x).
  double early_stop_nll = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

/// A fact laid out for one model: filled prompt, subject position, target.
struct EditTarget {
  Tokens prompt;
  Index subject_last = 0;
  Tokens target;
  Tokens kl_prompt;
  Index kl_subject_last = 0;

  static EditTarget from_fact(const Fact& fact);
};

struct ObjectiveTerms {
  double total = 0.0;
  std::vector<double> nll;  ///< one per prompt x_j + p
  double kl = 0.0;
};

/// Mean over prompts of −log P(target | x_j + p) plus kl_weight × KL between
/// the perturbed and unperturbed next-token distributions on "subject is a".
/// The perturbation r is added to the FFN output of `layer` at the subject's
/// last token. Activations up to `layer` are cached at construction.
class ResidualObjective {
 public:
  ResidualObjective(const ToyModel& model, std::vector<EditAttachment> attachments,
                    const EditTarget& target, int layer, const std::vector<Tokens>& prefixes,
                    double kl_weight);

  /// Value, and the analytic gradient w.r.t. r when gradient != nullptr.
  ObjectiveTerms evaluate(const DenseVector& r, DenseVector* gradient = nullptr) const;
  double value(const DenseVector& r) const { return evaluate(r).total; }

  int layer() const { return layer_; }
  Index dim() const { return model_->d_model(); }

 private:
  struct Prompt {
    DenseMatrix hidden;  // output of `layer`, d_model x T
    Index position = 0;
    std::vector<Index> columns;
    Tokens targets;
  };

  const ToyModel* model_;
  std::vector<EditAttachment> attachments_;
  int layer_;
  double kl_weight_;
  std::vector<Prompt> prompts_;
  Prompt kl_prompt_;
  DenseVector kl_reference_;  // log-probs of the unperturbed model
};

class ResidualDivergenceError : public std::runtime_error {
 public:
  ResidualDivergenceError(const std::string& what, std::vector<double> trace)
      : std::runtime_error(what), trace_(std::move(trace)) {}
  const std::vector<double>& trace() const { return trace_; }

 private:
  std::vector<double> trace_;
};

struct ResidualFit {
  DenseVector residual;
  std::vector<double> losses;
  int steps_taken = 0;
  bool converged = false;
};

/// Fits r by Adam on the ResidualObjective starting from r = 0.
ResidualFit optimize_residual(const ToyModel& model, const Fact& fact, int layer,
                              const ResidualFitConfig& cfg,
                              std::span<const EditAttachment> attachments = {});

struct EditConfig {
  int layer = 2;
  double gamma = kDefaultGamma;
  double beta = kDefaultBeta;
  ResidualFitConfig fit;
  /// Prefixes averaged into each stored key. 1 keeps exact-replay keys.
  int key_prefixes = 1;
  std::uint64_t key_seed = 0;
  int jobs = 1;
};

/// d_ffn x m keys at `layer`, one column per fact.
DenseMatrix compute_keys(const ToyModel& model, std::span<const Fact> facts, int layer,
                         const EditConfig& cfg, std::span<const EditAttachment> attachments = {});

/// d_model x m fitted residuals at `layer`.
DenseMatrix compute_residuals(const ToyModel& model, std::span<const Fact> facts, int layer,
                              const EditConfig& cfg,
                              std::span<const EditAttachment> attachments = {});

/// Keys of unrelated prompts standing in for preserved knowledge K0.
DenseMatrix preserved_keys(const ToyModel& model, int layer, Index count, std::uint64_t seed);

struct LayerEdit {
  EditAttachment attachment;
  DenseMatrix keys;
  DenseMatrix residuals;
  /// Divisor applied to the residuals (multi-layer old method), else 1.
  double divisor = 1.0;
};

/// Builds a gated database of (key, residual) per fact at cfg.layer.
LayerEdit neuraldb_edit(const ToyModel& model, std::span<const Fact> facts, const EditConfig& cfg,
                        std::span<const EditAttachment> attachments = {});

struct LinearEdit {
  LayerEdit layer;
  EditSolution solution;
};

/// MEMIT or AlphaEdit update of W_out at cfg.layer against the given K0.
LinearEdit linear_edit(const ToyModel& model, std::span<const Fact> facts, EditMethod method,
                       const DenseMatrix& k0, const EditConfig& cfg);

/// Residual fitted once at the last layer; layer l receives the remaining
/// residual divided by (l_n − l + 1), re-measured after earlier edits.
std::vector<LayerEdit> multilayer_edit_old(const ToyModel& model, std::span<const int> layers,
                                           std::span<const Fact> facts, const EditConfig& cfg);

/// Keys and residuals recomputed from scratch at every layer.
std::vector<LayerEdit> multilayer_edit_new(const ToyModel& model, std::span<const int> layers,
                                           std::span<const Fact> facts, const EditConfig& cfg);

std::vector<EditAttachment> attachments_of(const std::vector<LayerEdit>& edits);

}  // namespace kvedit
