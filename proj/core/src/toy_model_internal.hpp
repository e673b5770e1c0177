#pragma once

// Layer-stack evaluation with caches for reverse-mode gradients. Shared by
// the forward pass and residual fitting.

#include "kvedit/toy_model.hpp"

namespace kvedit::detail {

struct LayerCache {
  DenseMatrix xhat;   // normalized LN input, d_model x T
  DenseVector rstd;   // 1/sqrt(var + eps) per position
  DenseMatrix z;      // FFN pre-activation, d_ffn x T
};

struct StackCache {
  int first_layer = 0;
  std::vector<LayerCache> layers;  // layers first_layer .. L-1
};

struct FinalCache {
  DenseMatrix xhat;  // d_model x P
  DenseVector rstd;
};

inline constexpr double kLayerNormEps = 1e-5;

DenseMatrix embed(const ToyModel& model, std::span<const int> tokens);

struct StackOutputs {
  std::vector<DenseMatrix>* hidden = nullptr;
  std::vector<DenseMatrix>* keys = nullptr;
  std::vector<DenseMatrix>* values = nullptr;
  std::vector<GateEvent>* gate_hits = nullptr;
  StackCache* cache = nullptr;
};

/// Runs layers [first, last) on h (the output of layer first-1).
DenseMatrix run_layers(const ToyModel& model, DenseMatrix h, int first, int last,
                       std::span<const EditAttachment> attachments,
                       const Perturbation* perturbation, const StackOutputs& out);

/// Final LN on the selected columns of h^L.
DenseMatrix final_norm(const ToyModel& model, const DenseMatrix& h_final,
                       std::span<const Index> columns, FinalCache* cache);

/// d(loss)/d(h^L) from d(loss)/d(final LN output), scattered to d_model x T.
DenseMatrix final_norm_backward(const ToyModel& model, const FinalCache& cache,
                                const DenseMatrix& dy, std::span<const Index> columns,
                                Index total_columns);

/// Final LN and head on the selected columns of h^L.
DenseMatrix decode_columns(const ToyModel& model, const DenseMatrix& h_final,
                           std::span<const Index> columns, FinalCache* cache);

/// d(loss)/d(h^L) for the selected columns, scattered into a d_model x T matrix.
DenseMatrix backward_decode(const ToyModel& model, const FinalCache& cache,
                            const DenseMatrix& d_logits, std::span<const Index> columns,
                            Index total_columns);

/// Given d(loss)/d(h^L), returns d(loss)/d(h^{first-1}).
DenseMatrix backward_layers(const ToyModel& model, const StackCache& cache,
                            std::span<const EditAttachment> attachments, DenseMatrix d_h);

}  // namespace kvedit::detail
