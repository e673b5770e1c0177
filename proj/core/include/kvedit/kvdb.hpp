#pragma once

// Explicit key-value store of edited facts with a thresholded cosine gate.
//
// Each entry holds a unit-normalized key (plus the raw norm it came from) and
// a residual. A query returns the residual of the most similar key if that
// similarity strictly exceeds gamma, and the exact zero vector otherwise.
//
// Thread safety follows the usual container contract: any number of
// concurrent const calls, or a single mutating call.

#include "kvedit/tensor.hpp"

#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace kvedit {

inline constexpr double kDefaultGamma = 0.65;

struct FactId {
  std::uint64_t value = 0;
  auto operator<=>(const FactId&) const = default;
};

struct RetrievalResult {
  bool hit = false;
  std::optional<FactId> fact;
  /// Position of the best entry, set whenever the database is non-empty.
  std::optional<std::size_t> entry;
  /// Best cosine similarity found (0 for an empty database).
  double similarity = 0.0;
  /// r_j on a hit, exactly zero on a miss.
  DenseVector residual;
};

class NeuralKVDatabase {
 public:
  NeuralKVDatabase(Index d1, Index d2, double gamma = kDefaultGamma, int layer = 0);

  /// One entry per column of keys/residuals, FactIds 0..m-1 in column order.
  static NeuralKVDatabase build(const DenseMatrix& keys, const DenseMatrix& residuals,
                                double gamma = kDefaultGamma, int layer = 0);

  RetrievalResult query(const Eigen::Ref<const DenseVector>& k) const;

  /// Cosine of k against every stored key, in entry order.
  DenseVector similarities(const Eigen::Ref<const DenseVector>& k) const;

  FactId insert(const Eigen::Ref<const DenseVector>& key,
                const Eigen::Ref<const DenseVector>& residual, std::string meta = {});
  bool remove(FactId id);
  bool update(FactId id, const Eigen::Ref<const DenseVector>& residual,
              const std::optional<DenseVector>& key = std::nullopt);

  void save(const std::filesystem::path& path) const;
  static NeuralKVDatabase load(const std::filesystem::path& path);

  Index d1() const { return d1_; }
  Index d2() const { return d2_; }
  double gamma() const { return gamma_; }
  void set_gamma(double gamma);
  int layer() const { return layer_; }
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }

  std::optional<std::size_t> find(FactId id) const;
  FactId id_at(std::size_t entry) const { return ids_.at(entry); }
  std::span<const FactId> ids() const { return ids_; }

  /// Unit key, raw key (unit × stored norm), residual and metadata of an entry.
  Eigen::Map<const DenseVector> unit_key(std::size_t entry) const;
  DenseVector key(std::size_t entry) const;
  double key_norm(std::size_t entry) const { return norms_.at(entry); }
  Eigen::Map<const DenseVector> residual(std::size_t entry) const;
  const std::string& meta(std::size_t entry) const { return meta_.at(entry); }

  /// d1 x m matrix of unit keys, viewed in place.
  Eigen::Map<const DenseMatrix> unit_keys() const;
  Eigen::Map<const DenseMatrix> residuals() const;

  /// Heap bytes held by the entry buffers (capacity based).
  std::size_t memory_bytes() const;

  friend bool operator==(const NeuralKVDatabase&, const NeuralKVDatabase&);

 private:
  void append(const Eigen::Ref<const DenseVector>& key,
              const Eigen::Ref<const DenseVector>& residual, FactId id, std::string meta);
  void check_key(const Eigen::Ref<const DenseVector>& key, std::string_view what) const;
  void check_residual(const Eigen::Ref<const DenseVector>& residual, std::string_view what) const;

  Index d1_;
  Index d2_;
  double gamma_;
  int layer_;
  std::uint64_t next_id_ = 0;
  std::vector<double> unit_keys_;  // d1 per entry, contiguous
  std::vector<double> norms_;
  std::vector<double> residuals_;  // d2 per entry, contiguous
  std::vector<FactId> ids_;
  std::vector<std::string> meta_;
};

}  // namespace kvedit
