#pragma once

// A small randomly initialized transformer stack used as the model to edit.
//
// Per layer l and position t:
//   a_t = A_l · mean_{s<=t} h_s^{l-1}           (attention stub)
//   k_t = gelu(W_in^l · LN_l(h_t^{l-1} + a_t))  (FFN key)
//   h_t^l = h_t^{l-1} + a_t + W_out^l · k_t
// followed by a final layer norm and a linear decoder head.
//
// Edits attach to a layer's FFN value: a gated database adds g(k_t), a linear
// edit adds Δ·k_t. A model is immutable after construction.

#include "kvedit/kvdb.hpp"
#include "kvedit/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <variant>
#include <vector>

namespace kvedit {

using Tokens = std::vector<int>;

struct ToyModelConfig {
  int vocab = 2560;
  int d_model = 128;
  int d_ffn = 256;
  int layers = 4;
  int max_context = 32;
  std::uint64_t seed = 42;
  /// Std-dev multipliers for the random initialization.
  double embedding_scale = 0.02;
  double position_scale = 0.002;
  double attention_scale = 0.5;
  double ffn_in_scale = 0.3;
  double ffn_out_scale = 0.02;
  double head_scale = 2.0;

  void validate() const;
};

struct ToyLayer {
  DenseMatrix w_in;       ///< d_ffn x d_model
  DenseMatrix w_out;      ///< d_model x d_ffn
  DenseMatrix attention;  ///< d_model x d_model
  DenseVector ln_gain;
  DenseVector ln_bias;
};

/// Default edit layer: the middle of the stack.
int default_edit_layer(int layers);

class ToyModel {
 public:
  /// Deterministic random initialization from config.seed.
  static ToyModel random(const ToyModelConfig& config);

  ToyModel(ToyModelConfig config, DenseMatrix embedding, DenseMatrix positions,
           std::vector<ToyLayer> layers, DenseVector final_gain, DenseVector final_bias,
           DenseMatrix head);

  const ToyModelConfig& config() const { return config_; }
  int vocab() const { return config_.vocab; }
  int d_model() const { return config_.d_model; }
  int d_ffn() const { return config_.d_ffn; }
  int layer_count() const { return static_cast<int>(layers_.size()); }
  int max_context() const { return config_.max_context; }

  const DenseMatrix& embedding() const { return embedding_; }  ///< d_model x vocab
  const DenseMatrix& positions() const { return positions_; }  ///< d_model x max_context
  const ToyLayer& layer(int l) const { return layers_.at(static_cast<std::size_t>(l)); }
  const std::vector<ToyLayer>& layers() const { return layers_; }
  const DenseVector& final_gain() const { return final_gain_; }
  const DenseVector& final_bias() const { return final_bias_; }
  const DenseMatrix& head() const { return head_; }  ///< vocab x d_model

  void save(const std::filesystem::path& path) const;
  static ToyModel load(const std::filesystem::path& path);

  friend bool operator==(const ToyModel&, const ToyModel&);

 private:
  ToyModelConfig config_;
  DenseMatrix embedding_;
  DenseMatrix positions_;
  std::vector<ToyLayer> layers_;
  DenseVector final_gain_;
  DenseVector final_bias_;
  DenseMatrix head_;
};

/// An edit bound to one layer: either a gated database or a linear Δ.
struct EditAttachment {
  int layer = 0;
  std::variant<std::shared_ptr<const NeuralKVDatabase>, DenseMatrix> edit;

  static EditAttachment gated(std::shared_ptr<const NeuralKVDatabase> db);
  static EditAttachment gated(int layer, std::shared_ptr<const NeuralKVDatabase> db);
  static EditAttachment linear(int layer, DenseMatrix delta);

  const NeuralKVDatabase* database() const;
  const DenseMatrix* delta() const;
};

/// Throws DimensionError / std::invalid_argument on a bad attachment set.
void validate_attachments(const ToyModel& model, std::span<const EditAttachment> attachments);

/// Adds delta to the FFN output of `layer` at `position` (the h += r of
/// residual fitting).
struct Perturbation {
  int layer = 0;
  Index position = 0;
  DenseVector delta;
};

struct GateEvent {
  int layer = 0;
  Index position = 0;
  std::size_t entry = 0;
  FactId fact;
  double similarity = 0.0;
};

struct ForwardResult {
  std::vector<DenseMatrix> hidden;  ///< layers+1 entries, d_model x T; [0] = embeddings
  std::vector<DenseMatrix> keys;    ///< one per layer, d_ffn x T
  std::vector<DenseMatrix> values;  ///< FFN outputs incl. edits, d_model x T
  DenseMatrix logits;               ///< vocab x T
  std::vector<GateEvent> gate_hits;
};

class TokenError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

ForwardResult forward(const ToyModel& model, std::span<const int> tokens,
                      std::span<const EditAttachment> attachments = {},
                      const std::optional<Perturbation>& perturbation = std::nullopt);

/// Logits at the last position only.
DenseVector next_token_logits(const ToyModel& model, std::span<const int> tokens,
                              std::span<const EditAttachment> attachments = {});

double gelu(double z);
double gelu_derivative(double z);

/// Log-softmax of a logit vector.
DenseVector log_softmax(const DenseVector& logits);

/// Prefixes sampled from the model itself. Prefix 0 is always empty; the
/// rest start from a uniform random content token and continue by sampling
/// the model's next-token distribution.
std::vector<Tokens> generate_prefixes(const ToyModel& model, int count, std::uint64_t seed,
                                      int length = 3);

/// Mean key at `layer` at the subject's last token over the given prefixes.
DenseVector extract_key_with_prefixes(const ToyModel& model, std::span<const int> subject,
                                      int layer, std::span<const Tokens> prefixes,
                                      std::span<const EditAttachment> attachments = {});

/// extract_key_with_prefixes over generate_prefixes(model, count, seed).
DenseVector extract_key(const ToyModel& model, std::span<const int> subject, int layer,
                        int count, std::uint64_t seed,
                        std::span<const EditAttachment> attachments = {});

}  // namespace kvedit
