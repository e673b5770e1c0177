#include "kvedit/diagnostics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace kvedit {

namespace {

void check_labels(const DenseMatrix& probes, std::span<const std::optional<std::size_t>> labels,
                  std::size_t entries) {
  if (static_cast<std::size_t>(probes.cols()) != labels.size()) {
    throw std::invalid_argument("diagnose_scores: " + std::to_string(probes.cols()) +
                                " probes but " + std::to_string(labels.size()) + " labels");
  }
  for (const auto& l : labels) {
    if (l && *l >= entries) throw std::out_of_range("diagnose_scores: label out of range");
  }
}

void summarize(std::vector<double>& pool, double& mean, double& stddev) {
  if (pool.empty()) return;
  double sum = 0.0;
  for (double v : pool) sum += v;
  mean = sum / static_cast<double>(pool.size());
  double sq = 0.0;
  for (double v : pool) sq += (v - mean) * (v - mean);
  stddev = std::sqrt(sq / static_cast<double>(pool.size()));
}

// scores(:, i) holds the per-entry scores of probe i.
ScoreDiagnostics pool(const DenseMatrix& scores,
                      std::span<const std::optional<std::size_t>> labels) {
  ScoreDiagnostics d;
  for (Index i = 0; i < scores.cols(); ++i) {
    const auto& label = labels[static_cast<std::size_t>(i)];
    for (Index j = 0; j < scores.rows(); ++j) {
      const double s = scores(j, i);
      d.max_abs = std::max(d.max_abs, std::abs(s));
      if (label && static_cast<Index>(*label) == j) {
        d.positive.push_back(s);
      } else {
        d.negative.push_back(s);
      }
    }
  }
  summarize(d.positive, d.positive_mean, d.positive_std);
  summarize(d.negative, d.negative_mean, d.negative_std);
  return d;
}

std::string number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

ScoreDiagnostics diagnose_scores(const EditSolution& solution, const DenseMatrix& probes,
                                 std::span<const std::optional<std::size_t>> labels) {
  check_labels(probes, labels, static_cast<std::size_t>(solution.keys.cols()));
  require_same_rows(probes.rows(), solution.scores.cols(), "diagnose_scores: probe dimension");
  const DenseMatrix omega = solution.scores * probes;
  const double delta_norm = solution.delta.norm();
  ScoreDiagnostics d = pool(omega, labels);
  const DenseMatrix direct = solution.delta * probes;
  const DenseMatrix via_scores = solution.residuals * omega;
  double worst = 0.0;
  for (Index i = 0; i < probes.cols(); ++i) {
    const double scale = std::max(delta_norm * probes.col(i).norm(), 1e-300);
    worst = std::max(worst, (direct.col(i) - via_scores.col(i)).norm() / scale);
  }
  d.reconstruction_error = worst;
  return d;
}

ScoreDiagnostics diagnose_scores(const NeuralKVDatabase& db, const DenseMatrix& probes,
                                 std::span<const std::optional<std::size_t>> labels) {
  check_labels(probes, labels, db.size());
  require_same_rows(probes.rows(), db.d1(), "diagnose_scores: probe dimension");
  DenseMatrix sims(static_cast<Index>(db.size()), probes.cols());
  for (Index i = 0; i < probes.cols(); ++i) sims.col(i) = db.similarities(probes.col(i));
  return pool(sims, labels);
}

std::string ScoreDiagnostics::summary_csv() const {
  std::ostringstream os;
  os << "pool,count,mean,std\n";
  os << "positive," << positive.size() << ',' << number(positive_mean) << ','
     << number(positive_std) << '\n';
  os << "negative," << negative.size() << ',' << number(negative_mean) << ','
     << number(negative_std) << '\n';
  return os.str();
}

std::string ScoreDiagnostics::pools_csv() const {
  std::ostringstream os;
  os << "pool,score\n";
  for (double v : positive) os << "positive," << number(v) << '\n';
  for (double v : negative) os << "negative," << number(v) << '\n';
  return os.str();
}

}  // namespace kvedit
