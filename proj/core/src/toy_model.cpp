#include "kvedit/toy_model.hpp"

#include "kvedit/binary_io.hpp"
#include "toy_model_internal.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

namespace kvedit {

namespace {

constexpr Magic kModelMagic = {'K', 'V', 'E', 'D', 'I', 'T', 'M', 'D'};
constexpr std::uint32_t kModelVersion = 1;

// First token id that may appear in generated prefixes and subjects; ids
// below it are reserved for relation templates.
constexpr int kFirstContentToken = 32;

DenseMatrix gaussian(std::mt19937_64& rng, Index rows, Index cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  DenseMatrix m(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) {
      m(i, j) = dist(rng);
    }
  }
  return m;
}

void put_matrix(ByteWriter& w, const DenseMatrix& m) {
  w.put_u64(static_cast<std::uint64_t>(m.rows()));
  w.put_u64(static_cast<std::uint64_t>(m.cols()));
  w.put_f64s({m.data(), static_cast<std::size_t>(m.size())});
}

DenseMatrix get_matrix(ByteReader& r) {
  const auto rows = static_cast<Index>(r.get_u64());
  const auto cols = static_cast<Index>(r.get_u64());
  if (rows < 0 || cols < 0 ||
      static_cast<std::uint64_t>(rows) * static_cast<std::uint64_t>(cols) * 8 > r.remaining()) {
    throw FormatError("model checkpoint: matrix block exceeds payload");
  }
  DenseMatrix m(rows, cols);
  r.get_f64s({m.data(), static_cast<std::size_t>(m.size())});
  return m;
}

void layer_norm(const DenseMatrix& x, const DenseVector& gain, const DenseVector& bias,
                DenseMatrix& y, DenseMatrix& xhat, DenseVector& rstd) {
  const Index d = x.rows();
  const Index t = x.cols();
  y.resize(d, t);
  xhat.resize(d, t);
  rstd.resize(t);
  for (Index j = 0; j < t; ++j) {
    const double mu = x.col(j).mean();
    const double var = (x.col(j).array() - mu).square().mean();
    const double rs = 1.0 / std::sqrt(var + detail::kLayerNormEps);
    rstd(j) = rs;
    xhat.col(j) = (x.col(j).array() - mu) * rs;
    y.col(j) = gain.cwiseProduct(xhat.col(j)) + bias;
  }
}

// dL/dx for y = gain ⊙ xhat + bias, xhat = (x - mean)·rstd.
DenseMatrix layer_norm_backward(const DenseMatrix& dy, const DenseMatrix& xhat,
                                const DenseVector& rstd, const DenseVector& gain) {
  const double d = static_cast<double>(dy.rows());
  DenseMatrix dx(dy.rows(), dy.cols());
  for (Index j = 0; j < dy.cols(); ++j) {
    const DenseVector dxhat = gain.cwiseProduct(dy.col(j));
    const double mean_d = dxhat.sum() / d;
    const double mean_dx = dxhat.dot(xhat.col(j)) / d;
    dx.col(j) = rstd(j) * (dxhat.array() - mean_d - xhat.col(j).array() * mean_dx).matrix();
  }
  return dx;
}

}  // namespace

void ToyModelConfig::validate() const {
  if (vocab < kFirstContentToken + 2 || d_model < 2 || d_ffn < 1 || layers < 1 ||
      max_context < 2) {
    std::ostringstream os;
    os << "ToyModelConfig: invalid dims (vocab " << vocab << ", d_model " << d_model
       << ", d_ffn " << d_ffn << ", layers " << layers << ", context " << max_context
       << "); vocab must be at least " << kFirstContentToken + 2;
    throw std::invalid_argument(os.str());
  }
}

int default_edit_layer(int layers) { return layers / 2; }

ToyModel ToyModel::random(const ToyModelConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const Index d = config.d_model;
  const Index f = config.d_ffn;
  DenseMatrix embedding = gaussian(rng, d, config.vocab, config.embedding_scale);
  DenseMatrix positions = gaussian(rng, d, config.max_context, config.position_scale);
  std::vector<ToyLayer> layers;
  layers.reserve(static_cast<std::size_t>(config.layers));
  for (int l = 0; l < config.layers; ++l) {
    ToyLayer layer;
    layer.w_in = gaussian(rng, f, d, config.ffn_in_scale / std::sqrt(static_cast<double>(d)));
    layer.w_out = gaussian(rng, d, f, config.ffn_out_scale / std::sqrt(static_cast<double>(f)));
    layer.attention =
        gaussian(rng, d, d, config.attention_scale / std::sqrt(static_cast<double>(d)));
    layer.ln_gain = DenseVector::Ones(d) + gaussian(rng, d, 1, 0.1);
    layer.ln_bias = gaussian(rng, d, 1, 0.1);
    layers.push_back(std::move(layer));
  }
  DenseVector final_gain = DenseVector::Ones(d);
  DenseVector final_bias = DenseVector::Zero(d);
  DenseMatrix head =
      gaussian(rng, config.vocab, d, config.head_scale / std::sqrt(static_cast<double>(d)));
  return ToyModel(config, std::move(embedding), std::move(positions), std::move(layers),
                  std::move(final_gain), std::move(final_bias), std::move(head));
}

ToyModel::ToyModel(ToyModelConfig config, DenseMatrix embedding, DenseMatrix positions,
                   std::vector<ToyLayer> layers, DenseVector final_gain,
                   DenseVector final_bias, DenseMatrix head)
    : config_(config),
      embedding_(std::move(embedding)),
      positions_(std::move(positions)),
      layers_(std::move(layers)),
      final_gain_(std::move(final_gain)),
      final_bias_(std::move(final_bias)),
      head_(std::move(head)) {
  config_.layers = static_cast<int>(layers_.size());
  config_.validate();
  const Index d = config_.d_model;
  const Index f = config_.d_ffn;
  auto expect = [](const DenseMatrix& m, Index rows, Index cols, const char* what) {
    if (m.rows() != rows || m.cols() != cols) {
      std::ostringstream os;
      os << "ToyModel: " << what << " is " << m.rows() << "x" << m.cols() << ", expected "
         << rows << "x" << cols;
      throw DimensionError(os.str());
    }
    require_finite(m, what);
  };
  expect(embedding_, d, config_.vocab, "embedding");
  expect(positions_, d, config_.max_context, "positions");
  expect(final_gain_, d, 1, "final gain");
  expect(final_bias_, d, 1, "final bias");
  expect(head_, config_.vocab, d, "head");
  for (const auto& layer : layers_) {
    expect(layer.w_in, f, d, "w_in");
    expect(layer.w_out, d, f, "w_out");
    expect(layer.attention, d, d, "attention");
    expect(layer.ln_gain, d, 1, "ln gain");
    expect(layer.ln_bias, d, 1, "ln bias");
  }
}

bool operator==(const ToyModel& a, const ToyModel& b) {
  if (a.layers_.size() != b.layers_.size()) return false;
  for (std::size_t l = 0; l < a.layers_.size(); ++l) {
    const auto& x = a.layers_[l];
    const auto& y = b.layers_[l];
    if (x.w_in != y.w_in || x.w_out != y.w_out || x.attention != y.attention ||
        x.ln_gain != y.ln_gain || x.ln_bias != y.ln_bias) {
      return false;
    }
  }
  return a.config_.vocab == b.config_.vocab && a.config_.seed == b.config_.seed &&
         a.embedding_ == b.embedding_ && a.positions_ == b.positions_ &&
         a.final_gain_ == b.final_gain_ && a.final_bias_ == b.final_bias_ && a.head_ == b.head_;
}

void ToyModel::save(const std::filesystem::path& path) const {
  ByteWriter w;
  w.put_u64(static_cast<std::uint64_t>(config_.vocab));
  w.put_u64(static_cast<std::uint64_t>(config_.d_model));
  w.put_u64(static_cast<std::uint64_t>(config_.d_ffn));
  w.put_u64(static_cast<std::uint64_t>(config_.layers));
  w.put_u64(static_cast<std::uint64_t>(config_.max_context));
  w.put_u64(config_.seed);
  w.put_f64(config_.embedding_scale);
  w.put_f64(config_.position_scale);
  w.put_f64(config_.attention_scale);
  w.put_f64(config_.ffn_in_scale);
  w.put_f64(config_.ffn_out_scale);
  w.put_f64(config_.head_scale);
  put_matrix(w, embedding_);
  put_matrix(w, positions_);
  for (const auto& layer : layers_) {
    put_matrix(w, layer.w_in);
    put_matrix(w, layer.w_out);
    put_matrix(w, layer.attention);
    put_matrix(w, layer.ln_gain);
    put_matrix(w, layer.ln_bias);
  }
  put_matrix(w, final_gain_);
  put_matrix(w, final_bias_);
  put_matrix(w, head_);
  write_frame(path, kModelMagic, kModelVersion, 0, w.bytes());
}

ToyModel ToyModel::load(const std::filesystem::path& path) {
  const Frame frame = read_frame(path, kModelMagic, kModelVersion);
  ByteReader r(frame.payload);
  ToyModelConfig config;
  config.vocab = static_cast<int>(r.get_u64());
  config.d_model = static_cast<int>(r.get_u64());
  config.d_ffn = static_cast<int>(r.get_u64());
  config.layers = static_cast<int>(r.get_u64());
  config.max_context = static_cast<int>(r.get_u64());
  config.seed = r.get_u64();
  config.embedding_scale = r.get_f64();
  config.position_scale = r.get_f64();
  config.attention_scale = r.get_f64();
  config.ffn_in_scale = r.get_f64();
  config.ffn_out_scale = r.get_f64();
  config.head_scale = r.get_f64();
  config.validate();
  DenseMatrix embedding = get_matrix(r);
  DenseMatrix positions = get_matrix(r);
  std::vector<ToyLayer> layers(static_cast<std::size_t>(config.layers));
  for (auto& layer : layers) {
    layer.w_in = get_matrix(r);
    layer.w_out = get_matrix(r);
    layer.attention = get_matrix(r);
    layer.ln_gain = get_matrix(r);
    layer.ln_bias = get_matrix(r);
  }
  DenseVector final_gain = get_matrix(r);
  DenseVector final_bias = get_matrix(r);
  DenseMatrix head = get_matrix(r);
  if (r.remaining() != 0) {
    throw FormatError(path.string() + ": unexpected bytes after model weights");
  }
  return ToyModel(config, std::move(embedding), std::move(positions), std::move(layers),
                  std::move(final_gain), std::move(final_bias), std::move(head));
}

EditAttachment EditAttachment::gated(std::shared_ptr<const NeuralKVDatabase> db) {
  if (!db) throw std::invalid_argument("EditAttachment: null database");
  const int layer = db->layer();
  return gated(layer, std::move(db));
}

EditAttachment EditAttachment::gated(int layer, std::shared_ptr<const NeuralKVDatabase> db) {
  if (!db) throw std::invalid_argument("EditAttachment: null database");
  EditAttachment a;
  a.layer = layer;
  a.edit = std::move(db);
  return a;
}

EditAttachment EditAttachment::linear(int layer, DenseMatrix delta) {
  EditAttachment a;
  a.layer = layer;
  a.edit = std::move(delta);
  return a;
}

const NeuralKVDatabase* EditAttachment::database() const {
  const auto* p = std::get_if<std::shared_ptr<const NeuralKVDatabase>>(&edit);
  return p ? p->get() : nullptr;
}

const DenseMatrix* EditAttachment::delta() const { return std::get_if<DenseMatrix>(&edit); }

void validate_attachments(const ToyModel& model, std::span<const EditAttachment> attachments) {
  std::vector<bool> used(static_cast<std::size_t>(model.layer_count()), false);
  for (const auto& a : attachments) {
    if (a.layer < 0 || a.layer >= model.layer_count()) {
      throw std::invalid_argument("attachment layer out of range");
    }
    if (used[static_cast<std::size_t>(a.layer)]) {
      throw std::invalid_argument("two attachments on the same layer");
    }
    used[static_cast<std::size_t>(a.layer)] = true;
    if (const auto* db = a.database()) {
      if (db->d1() != model.d_ffn() || db->d2() != model.d_model()) {
        throw DimensionError("gated attachment dims do not match the layer");
      }
    } else if (const auto* delta = a.delta()) {
      if (delta->rows() != model.d_model() || delta->cols() != model.d_ffn()) {
        throw DimensionError("linear attachment dims do not match the layer");
      }
      require_finite(*delta, "linear attachment");
    } else {
      throw std::invalid_argument("attachment holds neither a database nor a delta");
    }
  }
}

double gelu(double z) { return 0.5 * z * (1.0 + std::erf(z * std::numbers::sqrt2 / 2.0)); }

double gelu_derivative(double z) {
  const double cdf = 0.5 * (1.0 + std::erf(z * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + z * pdf;
}

DenseVector log_softmax(const DenseVector& logits) {
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return (logits.array() - lse).matrix();
}

namespace detail {

DenseMatrix embed(const ToyModel& model, std::span<const int> tokens) {
  const auto t = static_cast<Index>(tokens.size());
  if (t == 0) throw TokenError("forward: empty token sequence");
  if (t > model.max_context()) {
    std::ostringstream os;
    os << "forward: " << t << " tokens exceed context " << model.max_context();
    throw TokenError(os.str());
  }
  DenseMatrix h(model.d_model(), t);
  for (Index j = 0; j < t; ++j) {
    const int tok = tokens[static_cast<std::size_t>(j)];
    if (tok < 0 || tok >= model.vocab()) {
      std::ostringstream os;
      os << "forward: token " << tok << " outside vocab of " << model.vocab();
      throw TokenError(os.str());
    }
    h.col(j) = model.embedding().col(tok) + model.positions().col(j);
  }
  return h;
}

DenseMatrix run_layers(const ToyModel& model, DenseMatrix h, int first, int last,
                       std::span<const EditAttachment> attachments,
                       const Perturbation* perturbation, const StackOutputs& out) {
  const Index t = h.cols();
  if (out.cache) {
    out.cache->first_layer = first;
    out.cache->layers.clear();
  }
  DenseMatrix context(h.rows(), t);
  DenseMatrix normed;
  DenseMatrix xhat;
  DenseVector rstd;
  for (int l = first; l < last; ++l) {
    const ToyLayer& layer = model.layer(l);

    DenseVector running = DenseVector::Zero(h.rows());
    for (Index j = 0; j < t; ++j) {
      running += h.col(j);
      context.col(j) = running / static_cast<double>(j + 1);
    }
    DenseMatrix x = h + layer.attention * context;

    layer_norm(x, layer.ln_gain, layer.ln_bias, normed, xhat, rstd);
    DenseMatrix z = layer.w_in * normed;
    DenseMatrix k = z.unaryExpr([](double v) { return gelu(v); });
    DenseMatrix v = layer.w_out * k;

    for (const auto& a : attachments) {
      if (a.layer != l) continue;
      if (const auto* db = a.database()) {
        for (Index j = 0; j < t; ++j) {
          const RetrievalResult res = db->query(k.col(j));
          if (res.hit) {
            v.col(j) += res.residual;
            if (out.gate_hits) {
              out.gate_hits->push_back({l, j, *res.entry, *res.fact, res.similarity});
            }
          }
        }
      } else if (const auto* delta = a.delta()) {
        v.noalias() += *delta * k;
      }
    }
    if (perturbation && perturbation->layer == l) {
      v.col(perturbation->position) += perturbation->delta;
    }

    h = x + v;
    if (out.hidden) out.hidden->push_back(h);
    if (out.keys) out.keys->push_back(k);
    if (out.values) out.values->push_back(v);
    if (out.cache) out.cache->layers.push_back({xhat, rstd, std::move(z)});
  }
  return h;
}

DenseMatrix final_norm(const ToyModel& model, const DenseMatrix& h_final,
                       std::span<const Index> columns, FinalCache* cache) {
  DenseMatrix picked(h_final.rows(), static_cast<Index>(columns.size()));
  for (std::size_t i = 0; i < columns.size(); ++i) {
    picked.col(static_cast<Index>(i)) = h_final.col(columns[i]);
  }
  DenseMatrix y;
  DenseMatrix xhat;
  DenseVector rstd;
  layer_norm(picked, model.final_gain(), model.final_bias(), y, xhat, rstd);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

DenseMatrix decode_columns(const ToyModel& model, const DenseMatrix& h_final,
                           std::span<const Index> columns, FinalCache* cache) {
  return model.head() * final_norm(model, h_final, columns, cache);
}

DenseMatrix final_norm_backward(const ToyModel& model, const FinalCache& cache,
                                const DenseMatrix& dy, std::span<const Index> columns,
                                Index total_columns) {
  const DenseMatrix dx = layer_norm_backward(dy, cache.xhat, cache.rstd, model.final_gain());
  DenseMatrix d_h = DenseMatrix::Zero(model.d_model(), total_columns);
  for (std::size_t i = 0; i < columns.size(); ++i) {
    d_h.col(columns[i]) += dx.col(static_cast<Index>(i));
  }
  return d_h;
}

DenseMatrix backward_decode(const ToyModel& model, const FinalCache& cache,
                            const DenseMatrix& d_logits, std::span<const Index> columns,
                            Index total_columns) {
  return final_norm_backward(model, cache, model.head().transpose() * d_logits, columns,
                             total_columns);
}

DenseMatrix backward_layers(const ToyModel& model, const StackCache& cache,
                            std::span<const EditAttachment> attachments, DenseMatrix d_h) {
  const Index t = d_h.cols();
  for (int idx = static_cast<int>(cache.layers.size()) - 1; idx >= 0; --idx) {
    const int l = cache.first_layer + idx;
    const ToyLayer& layer = model.layer(l);
    const LayerCache& lc = cache.layers[static_cast<std::size_t>(idx)];

    // Gated residuals are piecewise constant in k, so only a linear Δ adds
    // to the value Jacobian.
    DenseMatrix d_k = layer.w_out.transpose() * d_h;
    for (const auto& a : attachments) {
      if (a.layer != l) continue;
      if (const auto* delta = a.delta()) d_k.noalias() += delta->transpose() * d_h;
    }
    const DenseMatrix d_z =
        d_k.cwiseProduct(lc.z.unaryExpr([](double v) { return gelu_derivative(v); }));
    const DenseMatrix d_norm = layer.w_in.transpose() * d_z;
    DenseMatrix d_x = layer_norm_backward(d_norm, lc.xhat, lc.rstd, layer.ln_gain);
    d_x += d_h;

    const DenseMatrix d_context = layer.attention.transpose() * d_x;
    DenseMatrix d_in = d_x;
    DenseVector acc = DenseVector::Zero(d_h.rows());
    for (Index j = t - 1; j >= 0; --j) {
      acc += d_context.col(j) / static_cast<double>(j + 1);
      d_in.col(j) += acc;
    }
    d_h = std::move(d_in);
  }
  return d_h;
}

}  // namespace detail

ForwardResult forward(const ToyModel& model, std::span<const int> tokens,
                      std::span<const EditAttachment> attachments,
                      const std::optional<Perturbation>& perturbation) {
  validate_attachments(model, attachments);
  ForwardResult res;
  DenseMatrix h = detail::embed(model, tokens);
  if (perturbation) {
    if (perturbation->layer < 0 || perturbation->layer >= model.layer_count() ||
        perturbation->position < 0 || perturbation->position >= h.cols() ||
        perturbation->delta.size() != model.d_model()) {
      throw DimensionError("forward: perturbation out of range");
    }
  }
  res.hidden.reserve(static_cast<std::size_t>(model.layer_count()) + 1);
  res.hidden.push_back(h);
  detail::StackOutputs out;
  out.hidden = &res.hidden;
  out.keys = &res.keys;
  out.values = &res.values;
  out.gate_hits = &res.gate_hits;
  const DenseMatrix h_final = detail::run_layers(model, std::move(h), 0, model.layer_count(),
                                                 attachments, perturbation ? &*perturbation : nullptr, out);
  std::vector<Index> all(static_cast<std::size_t>(h_final.cols()));
  for (Index j = 0; j < h_final.cols(); ++j) all[static_cast<std::size_t>(j)] = j;
  res.logits = detail::decode_columns(model, h_final, all, nullptr);
  return res;
}

DenseVector next_token_logits(const ToyModel& model, std::span<const int> tokens,
                              std::span<const EditAttachment> attachments) {
  validate_attachments(model, attachments);
  DenseMatrix h = detail::embed(model, tokens);
  const DenseMatrix h_final =
      detail::run_layers(model, std::move(h), 0, model.layer_count(), attachments, nullptr, {});
  const Index last = h_final.cols() - 1;
  return detail::decode_columns(model, h_final, std::span<const Index>(&last, 1), nullptr).col(0);
}

std::vector<Tokens> generate_prefixes(const ToyModel& model, int count, std::uint64_t seed,
                                      int length) {
  if (count < 1) throw std::invalid_argument("generate_prefixes: count must be >= 1");
  if (length < 1 || length >= model.max_context()) {
    throw std::invalid_argument("generate_prefixes: bad prefix length");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> first(kFirstContentToken, model.vocab() - 1);
  std::vector<Tokens> prefixes;
  prefixes.reserve(static_cast<std::size_t>(count));
  prefixes.emplace_back();
  for (int p = 1; p < count; ++p) {
    Tokens prefix{first(rng)};
    while (static_cast<int>(prefix.size()) < length) {
      const DenseVector logp = log_softmax(next_token_logits(model, prefix));
      const DenseVector probs = logp.array().exp().matrix();
      std::discrete_distribution<int> next(probs.data(), probs.data() + probs.size());
      prefix.push_back(next(rng));
    }
    prefixes.push_back(std::move(prefix));
  }
  return prefixes;
}

DenseVector extract_key_with_prefixes(const ToyModel& model, std::span<const int> subject,
                                      int layer, std::span<const Tokens> prefixes,
                                      std::span<const EditAttachment> attachments) {
  if (layer < 0 || layer >= model.layer_count()) {
    throw std::out_of_range("extract_key: layer out of range");
  }
  if (subject.empty()) throw TokenError("extract_key: empty subject");
  if (prefixes.empty()) throw std::invalid_argument("extract_key: need at least one prefix");
  validate_attachments(model, attachments);
  DenseVector sum = DenseVector::Zero(model.d_ffn());
  for (const auto& prefix : prefixes) {
    Tokens tokens(prefix.begin(), prefix.end());
    tokens.insert(tokens.end(), subject.begin(), subject.end());
    DenseMatrix h = detail::embed(model, tokens);
    std::vector<DenseMatrix> keys;
    detail::StackOutputs out;
    out.keys = &keys;
    detail::run_layers(model, std::move(h), 0, layer + 1, attachments, nullptr, out);
    sum += keys.back().col(static_cast<Index>(tokens.size()) - 1);
  }
  return sum / static_cast<double>(prefixes.size());
}

DenseVector extract_key(const ToyModel& model, std::span<const int> subject, int layer,
                        int count, std::uint64_t seed,
                        std::span<const EditAttachment> attachments) {
  const auto prefixes = generate_prefixes(model, count, seed);
  return extract_key_with_prefixes(model, subject, layer, prefixes, attachments);
}

}  // namespace kvedit
