#include "kvedit/kvdb.hpp"

#include "kvedit/binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace kvedit {

namespace {

constexpr Magic kDbMagic = {'K', 'V', 'E', 'D', 'I', 'T', 'D', 'B'};
constexpr std::uint32_t kDbVersion = 1;
constexpr std::uint32_t kFlagHasMeta = 1u;

void check_gamma(double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) {
    std::ostringstream os;
    os << "gamma must lie in (0, 1), got " << gamma;
    throw std::invalid_argument(os.str());
  }
}

}  // namespace

NeuralKVDatabase::NeuralKVDatabase(Index d1, Index d2, double gamma, int layer)
    : d1_(d1), d2_(d2), gamma_(gamma), layer_(layer) {
  if (d1 < 1 || d2 < 1) {
    throw DimensionError("NeuralKVDatabase: d1 and d2 must be positive");
  }
  check_gamma(gamma);
}

NeuralKVDatabase NeuralKVDatabase::build(const DenseMatrix& keys, const DenseMatrix& residuals,
                                         double gamma, int layer) {
  require_same_rows(keys.cols(), residuals.cols(), "build: key vs residual column count");
  NeuralKVDatabase db(keys.rows(), residuals.rows(), gamma, layer);
  require_finite(keys, "build keys");
  require_finite(residuals, "build residuals");
  const auto m = static_cast<std::size_t>(keys.cols());
  db.unit_keys_.reserve(m * static_cast<std::size_t>(db.d1_));
  db.residuals_.reserve(m * static_cast<std::size_t>(db.d2_));
  db.norms_.reserve(m);
  db.ids_.reserve(m);
  db.meta_.reserve(m);
  for (Index j = 0; j < keys.cols(); ++j) {
    db.check_key(keys.col(j), "build");
    db.append(keys.col(j), residuals.col(j), FactId{db.next_id_++}, {});
  }
  return db;
}

void NeuralKVDatabase::check_key(const Eigen::Ref<const DenseVector>& key,
                                 std::string_view what) const {
  require_same_rows(key.size(), d1_, std::string(what) + ": key dimension");
  require_finite(key, std::string(what) + " key");
  if (key.norm() < kCosineZeroNorm) {
    throw std::invalid_argument(std::string(what) + ": zero-norm key");
  }
}

void NeuralKVDatabase::check_residual(const Eigen::Ref<const DenseVector>& residual,
                                      std::string_view what) const {
  require_same_rows(residual.size(), d2_, std::string(what) + ": residual dimension");
  require_finite(residual, std::string(what) + " residual");
}

void NeuralKVDatabase::append(const Eigen::Ref<const DenseVector>& key,
                              const Eigen::Ref<const DenseVector>& residual, FactId id,
                              std::string meta) {
  check_residual(residual, "append");
  const double norm = key.norm();
  for (Index i = 0; i < d1_; ++i) {
    unit_keys_.push_back(key(i) / norm);
  }
  norms_.push_back(norm);
  residuals_.insert(residuals_.end(), residual.data(), residual.data() + d2_);
  ids_.push_back(id);
  meta_.push_back(std::move(meta));
}

DenseVector NeuralKVDatabase::similarities(const Eigen::Ref<const DenseVector>& k) const {
  require_same_rows(k.size(), d1_, "query: key dimension");
  require_finite(k, "query key");
  const double norm = k.norm();
  if (empty() || norm < kCosineZeroNorm) {
    return DenseVector::Zero(static_cast<Index>(size()));
  }
  const DenseVector unit = k / norm;
  return unit_keys().transpose() * unit;
}

RetrievalResult NeuralKVDatabase::query(const Eigen::Ref<const DenseVector>& k) const {
  const DenseVector sims = similarities(k);
  RetrievalResult out;
  out.residual = DenseVector::Zero(d2_);
  if (sims.size() == 0) {
    return out;
  }
  // First maximum wins, so duplicate keys resolve to the earliest entry.
  Index best = 0;
  for (Index i = 1; i < sims.size(); ++i) {
    if (sims(i) > sims(best)) best = i;
  }
  const auto entry = static_cast<std::size_t>(best);
  out.entry = entry;
  out.similarity = sims(best);
  if (sims(best) > gamma_) {
    out.hit = true;
    out.fact = ids_[entry];
    out.residual = residual(entry);
  }
  return out;
}

FactId NeuralKVDatabase::insert(const Eigen::Ref<const DenseVector>& key,
                                const Eigen::Ref<const DenseVector>& residual, std::string meta) {
  check_key(key, "insert");
  check_residual(residual, "insert");
  const FactId id{next_id_++};
  append(key, residual, id, std::move(meta));
  return id;
}

std::optional<std::size_t> NeuralKVDatabase::find(FactId id) const {
  const auto it = std::find(ids_.begin(), ids_.end(), id);
  if (it == ids_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - ids_.begin());
}

bool NeuralKVDatabase::remove(FactId id) {
  const auto pos = find(id);
  if (!pos) return false;
  const std::size_t e = *pos;
  const auto kd = static_cast<std::size_t>(d1_);
  const auto rd = static_cast<std::size_t>(d2_);
  unit_keys_.erase(unit_keys_.begin() + static_cast<std::ptrdiff_t>(e * kd),
                   unit_keys_.begin() + static_cast<std::ptrdiff_t>((e + 1) * kd));
  residuals_.erase(residuals_.begin() + static_cast<std::ptrdiff_t>(e * rd),
                   residuals_.begin() + static_cast<std::ptrdiff_t>((e + 1) * rd));
  norms_.erase(norms_.begin() + static_cast<std::ptrdiff_t>(e));
  ids_.erase(ids_.begin() + static_cast<std::ptrdiff_t>(e));
  meta_.erase(meta_.begin() + static_cast<std::ptrdiff_t>(e));
  return true;
}

bool NeuralKVDatabase::update(FactId id, const Eigen::Ref<const DenseVector>& residual,
                              const std::optional<DenseVector>& key) {
  check_residual(residual, "update");
  if (key) check_key(*key, "update");
  const auto pos = find(id);
  if (!pos) return false;
  const std::size_t e = *pos;
  std::copy(residual.data(), residual.data() + d2_,
            residuals_.begin() + static_cast<std::ptrdiff_t>(e * static_cast<std::size_t>(d2_)));
  if (key) {
    const double norm = key->norm();
    auto dst = unit_keys_.begin() + static_cast<std::ptrdiff_t>(e * static_cast<std::size_t>(d1_));
    for (Index i = 0; i < d1_; ++i) {
      dst[i] = (*key)(i) / norm;
    }
    norms_[e] = norm;
  }
  return true;
}

void NeuralKVDatabase::set_gamma(double gamma) {
  check_gamma(gamma);
  gamma_ = gamma;
}

Eigen::Map<const DenseVector> NeuralKVDatabase::unit_key(std::size_t entry) const {
  if (entry >= size()) throw std::out_of_range("unit_key: entry out of range");
  return {unit_keys_.data() + entry * static_cast<std::size_t>(d1_), d1_};
}

DenseVector NeuralKVDatabase::key(std::size_t entry) const {
  return unit_key(entry) * norms_[entry];
}

Eigen::Map<const DenseVector> NeuralKVDatabase::residual(std::size_t entry) const {
  if (entry >= size()) throw std::out_of_range("residual: entry out of range");
  return {residuals_.data() + entry * static_cast<std::size_t>(d2_), d2_};
}

Eigen::Map<const DenseMatrix> NeuralKVDatabase::unit_keys() const {
  return {unit_keys_.data(), d1_, static_cast<Index>(size())};
}

Eigen::Map<const DenseMatrix> NeuralKVDatabase::residuals() const {
  return {residuals_.data(), d2_, static_cast<Index>(size())};
}

std::size_t NeuralKVDatabase::memory_bytes() const {
  std::size_t bytes = (unit_keys_.capacity() + norms_.capacity() + residuals_.capacity()) *
                      sizeof(double);
  bytes += ids_.capacity() * sizeof(FactId);
  bytes += meta_.capacity() * sizeof(std::string);
  for (const auto& s : meta_) {
    if (s.capacity() > std::string().capacity()) bytes += s.capacity();
  }
  return bytes;
}

bool operator==(const NeuralKVDatabase& a, const NeuralKVDatabase& b) {
  return a.d1_ == b.d1_ && a.d2_ == b.d2_ && a.gamma_ == b.gamma_ && a.layer_ == b.layer_ &&
         a.next_id_ == b.next_id_ && a.unit_keys_ == b.unit_keys_ && a.norms_ == b.norms_ &&
         a.residuals_ == b.residuals_ && a.ids_ == b.ids_ && a.meta_ == b.meta_;
}

void NeuralKVDatabase::save(const std::filesystem::path& path) const {
  const bool has_meta = std::any_of(meta_.begin(), meta_.end(),
                                    [](const std::string& s) { return !s.empty(); });
  ByteWriter w;
  w.put_u64(static_cast<std::uint64_t>(d1_));
  w.put_u64(static_cast<std::uint64_t>(d2_));
  w.put_u64(size());
  w.put_f64(gamma_);
  w.put_i64(layer_);
  w.put_u64(next_id_);
  w.put_f64s(unit_keys_);
  w.put_f64s(norms_);
  w.put_f64s(residuals_);
  for (FactId id : ids_) w.put_u64(id.value);
  if (has_meta) {
    for (const auto& s : meta_) w.put_string(s);
  }
  write_frame(path, kDbMagic, kDbVersion, has_meta ? kFlagHasMeta : 0u, w.bytes());
}

NeuralKVDatabase NeuralKVDatabase::load(const std::filesystem::path& path) {
  const Frame frame = read_frame(path, kDbMagic, kDbVersion);
  ByteReader r(frame.payload);
  const auto d1 = static_cast<Index>(r.get_u64());
  const auto d2 = static_cast<Index>(r.get_u64());
  const std::uint64_t m = r.get_u64();
  const double gamma = r.get_f64();
  const auto layer = static_cast<int>(r.get_i64());
  const std::uint64_t next_id = r.get_u64();

  const std::uint64_t scalars = m * static_cast<std::uint64_t>(d1 + d2 + 1) + m;
  if (d1 < 1 || d2 < 1 || scalars * 8 > r.remaining()) {
    throw FormatError(path.string() + ": header dimensions disagree with payload size");
  }

  NeuralKVDatabase db(d1, d2, gamma, layer);
  db.next_id_ = next_id;
  db.unit_keys_.resize(m * static_cast<std::size_t>(d1));
  db.norms_.resize(m);
  db.residuals_.resize(m * static_cast<std::size_t>(d2));
  r.get_f64s(db.unit_keys_);
  r.get_f64s(db.norms_);
  r.get_f64s(db.residuals_);
  db.ids_.resize(m);
  for (auto& id : db.ids_) id.value = r.get_u64();
  db.meta_.resize(m);
  if (frame.flags & kFlagHasMeta) {
    for (auto& s : db.meta_) s = r.get_string();
  }
  if (r.remaining() != 0) {
    throw FormatError(path.string() + ": unexpected bytes after database contents");
  }
  return db;
}

}  // namespace kvedit
