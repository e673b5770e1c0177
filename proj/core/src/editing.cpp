#include "kvedit/editing.hpp"

#include "kvedit/parallel.hpp"
#include "toy_model_internal.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <string>

namespace kvedit {

void ResidualFitConfig::validate() const {
  if (steps < 0) throw std::invalid_argument("ResidualFitConfig: steps must be >= 0");
  if (!(learning_rate > 0.0)) {
    throw std::invalid_argument("ResidualFitConfig: learning_rate must be positive");
  }
  if (!(kl_weight >= 0.0)) throw std::invalid_argument("ResidualFitConfig: kl_weight < 0");
  if (prefix_count < 1) throw std::invalid_argument("ResidualFitConfig: prefix_count < 1");
  if (prefix_length < 1) throw std::invalid_argument("ResidualFitConfig: prefix_length < 1");
  if (clamp_norm && !(*clamp_norm > 0.0)) {
    throw std::invalid_argument("ResidualFitConfig: clamp_norm must be positive");
  }
}

EditTarget EditTarget::from_fact(const Fact& fact) {
  fact.validate();
  EditTarget t;
  t.prompt = fill_template(fact.prompt, fact.subject);
  t.subject_last = subject_last_position(fact.prompt, fact.subject);
  t.target = fact.new_object;
  t.kl_prompt = kvedit::kl_prompt(fact.subject);
  t.kl_subject_last = static_cast<Index>(fact.subject.size()) - 1;
  return t;
}

ResidualObjective::ResidualObjective(const ToyModel& model,
                                     std::vector<EditAttachment> attachments,
                                     const EditTarget& target, int layer,
                                     const std::vector<Tokens>& prefixes, double kl_weight)
    : model_(&model), attachments_(std::move(attachments)), layer_(layer), kl_weight_(kl_weight) {
  if (layer < 0 || layer >= model.layer_count()) {
    throw std::out_of_range("ResidualObjective: layer out of range");
  }
  if (prefixes.empty()) throw std::invalid_argument("ResidualObjective: no prompts");
  if (target.target.empty()) throw std::invalid_argument("ResidualObjective: empty target");
  validate_attachments(model, attachments_);

  auto lower = [&](const Tokens& tokens) {
    DenseMatrix h = detail::embed(model, tokens);
    return detail::run_layers(model, std::move(h), 0, layer + 1, attachments_, nullptr, {});
  };

  for (const auto& prefix : prefixes) {
    Tokens tokens = prefix;
    tokens.insert(tokens.end(), target.prompt.begin(), target.prompt.end());
    const auto prompt_end = static_cast<Index>(tokens.size());
    tokens.insert(tokens.end(), target.target.begin(), target.target.end() - 1);
    Prompt p;
    p.hidden = lower(tokens);
    p.position = static_cast<Index>(prefix.size()) + target.subject_last;
    for (std::size_t k = 0; k < target.target.size(); ++k) {
      p.columns.push_back(prompt_end - 1 + static_cast<Index>(k));
    }
    p.targets = target.target;
    prompts_.push_back(std::move(p));
  }

  kl_prompt_.hidden = lower(target.kl_prompt);
  kl_prompt_.position = target.kl_subject_last;
  kl_prompt_.columns = {static_cast<Index>(target.kl_prompt.size()) - 1};
  const DenseMatrix h_final = detail::run_layers(model, kl_prompt_.hidden, layer + 1,
                                                 model.layer_count(), attachments_, nullptr, {});
  kl_reference_ = log_softmax(detail::decode_columns(model, h_final, kl_prompt_.columns, nullptr).col(0));
}

ObjectiveTerms ResidualObjective::evaluate(const DenseVector& r, DenseVector* gradient) const {
  require_same_rows(r.size(), model_->d_model(), "ResidualObjective: r dimension");
  const ToyModel& model = *model_;
  const int first = layer_ + 1;
  const int last = model.layer_count();
  ObjectiveTerms terms;
  if (gradient) *gradient = DenseVector::Zero(r.size());

  // All prompts run the upper stack separately, then share one pass through
  // the decoder head in each direction.
  std::vector<const Prompt*> all;
  for (const auto& p : prompts_) all.push_back(&p);
  if (kl_weight_ > 0.0) all.push_back(&kl_prompt_);

  struct Pass {
    detail::StackCache stack;
    detail::FinalCache final;
    Index total = 0;
    Index offset = 0;
  };
  std::vector<Pass> passes(all.size());
  std::vector<DenseMatrix> normed(all.size());
  Index width = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const Prompt& p = *all[i];
    DenseMatrix h = p.hidden;
    h.col(p.position) += r;
    passes[i].total = h.cols();
    passes[i].offset = width;
    detail::StackOutputs out;
    out.cache = gradient ? &passes[i].stack : nullptr;
    const DenseMatrix h_final =
        detail::run_layers(model, std::move(h), first, last, attachments_, nullptr, out);
    normed[i] = detail::final_norm(model, h_final, p.columns, gradient ? &passes[i].final : nullptr);
    width += normed[i].cols();
  }
  DenseMatrix y(model.d_model(), width);
  for (std::size_t i = 0; i < all.size(); ++i) {
    y.middleCols(passes[i].offset, normed[i].cols()) = normed[i];
  }
  const DenseMatrix logits = model.head() * y;
  DenseMatrix d_logits(logits.rows(), gradient ? width : 0);

  const double weight = 1.0 / static_cast<double>(prompts_.size());
  for (std::size_t i = 0; i < prompts_.size(); ++i) {
    const Prompt& p = prompts_[i];
    double nll = 0.0;
    for (std::size_t c = 0; c < p.columns.size(); ++c) {
      const Index col = passes[i].offset + static_cast<Index>(c);
      const DenseVector logp = log_softmax(logits.col(col));
      const int tok = p.targets[c];
      nll -= logp(tok);
      if (gradient) {
        d_logits.col(col) = logp.array().exp().matrix() * weight;
        d_logits(tok, col) -= weight;
      }
    }
    terms.nll.push_back(nll);
    terms.total += weight * nll;
  }

  if (kl_weight_ > 0.0) {
    const Index col = passes.back().offset;
    const DenseVector logp = log_softmax(logits.col(col));
    const DenseVector prob = logp.array().exp().matrix();
    const DenseVector log_ratio = logp - kl_reference_;
    terms.kl = prob.dot(log_ratio);
    terms.total += kl_weight_ * terms.kl;
    if (gradient) {
      d_logits.col(col) = kl_weight_ * prob.cwiseProduct((log_ratio.array() - terms.kl).matrix());
    }
  }

  if (gradient) {
    const DenseMatrix dy = model.head().transpose() * d_logits;
    for (std::size_t i = 0; i < all.size(); ++i) {
      const Prompt& p = *all[i];
      DenseMatrix d_h = detail::final_norm_backward(
          model, passes[i].final, dy.middleCols(passes[i].offset, normed[i].cols()), p.columns,
          passes[i].total);
      if (first < last) {
        d_h = detail::backward_layers(model, passes[i].stack, attachments_, std::move(d_h));
      }
      *gradient += d_h.col(p.position);
    }
  }
  return terms;
}

ResidualFit optimize_residual(const ToyModel& model, const Fact& fact, int layer,
                              const ResidualFitConfig& cfg,
                              std::span<const EditAttachment> attachments) {
  cfg.validate();
  ResidualFit fit;
  fit.residual = DenseVector::Zero(model.d_model());
  if (cfg.steps == 0) return fit;

  const EditTarget target = EditTarget::from_fact(fact);
  const auto prefixes = generate_prefixes(model, cfg.prefix_count, cfg.seed, cfg.prefix_length);
  const ResidualObjective objective(
      model, std::vector<EditAttachment>(attachments.begin(), attachments.end()), target, layer,
      prefixes, cfg.kl_weight);

  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  DenseVector& r = fit.residual;
  DenseVector m1 = DenseVector::Zero(r.size());
  DenseVector m2 = DenseVector::Zero(r.size());
  DenseVector grad;

  auto done = [&](const ObjectiveTerms& terms) {
    if (!std::isfinite(terms.total)) {
      std::ostringstream os;
      os << "optimize_residual: loss became non-finite at step " << fit.losses.size() - 1
         << " for fact " << fact.id;
      throw ResidualDivergenceError(os.str(), fit.losses);
    }
    return *std::max_element(terms.nll.begin(), terms.nll.end()) < cfg.early_stop_nll;
  };

  for (int step = 0; step < cfg.steps; ++step) {
    const ObjectiveTerms terms = objective.evaluate(r, &grad);
    fit.losses.push_back(terms.total);
    if (done(terms)) {
      fit.converged = true;
      return fit;
    }
    if (!grad.allFinite()) {
      throw ResidualDivergenceError("optimize_residual: non-finite gradient", fit.losses);
    }
    m1 = kBeta1 * m1 + (1.0 - kBeta1) * grad;
    m2 = kBeta2 * m2 + (1.0 - kBeta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(kBeta1, step + 1);
    const double c2 = 1.0 - std::pow(kBeta2, step + 1);
    r.array() -= cfg.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + kEps);
    if (cfg.clamp_norm && r.norm() > *cfg.clamp_norm) {
      r *= *cfg.clamp_norm / r.norm();
    }
    fit.steps_taken = step + 1;
  }
  const ObjectiveTerms terms = objective.evaluate(r);
  fit.losses.push_back(terms.total);
  fit.converged = done(terms);
  return fit;
}

DenseMatrix compute_keys(const ToyModel& model, std::span<const Fact> facts, int layer,
                         const EditConfig& cfg, std::span<const EditAttachment> attachments) {
  DenseMatrix keys(model.d_ffn(), static_cast<Index>(facts.size()));
  const auto prefixes = generate_prefixes(model, cfg.key_prefixes, cfg.key_seed, cfg.fit.prefix_length);
  parallel_for(facts.size(), cfg.jobs, [&](std::size_t i) {
    keys.col(static_cast<Index>(i)) =
        extract_key_with_prefixes(model, facts[i].subject, layer, prefixes, attachments);
  });
  return keys;
}

DenseMatrix compute_residuals(const ToyModel& model, std::span<const Fact> facts, int layer,
                              const EditConfig& cfg, std::span<const EditAttachment> attachments) {
  DenseMatrix residuals(model.d_model(), static_cast<Index>(facts.size()));
  parallel_for(facts.size(), cfg.jobs, [&](std::size_t i) {
    residuals.col(static_cast<Index>(i)) =
        optimize_residual(model, facts[i], layer, cfg.fit, attachments).residual;
  });
  return residuals;
}

DenseMatrix preserved_keys(const ToyModel& model, int layer, Index count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> token(32, model.vocab() - 1);
  std::uniform_int_distribution<int> length(3, 6);
  DenseMatrix keys(model.d_ffn(), count);
  for (Index j = 0; j < count; ++j) {
    Tokens prompt(static_cast<std::size_t>(length(rng)));
    for (auto& t : prompt) t = token(rng);
    keys.col(j) = forward(model, prompt).keys.at(static_cast<std::size_t>(layer)).col(
        static_cast<Index>(prompt.size()) - 1);
  }
  return keys;
}

namespace {

std::shared_ptr<const NeuralKVDatabase> make_database(const DenseMatrix& keys,
                                                      const DenseMatrix& residuals,
                                                      std::span<const Fact> facts, double gamma,
                                                      int layer) {
  auto db = std::make_shared<NeuralKVDatabase>(keys.rows(), residuals.rows(), gamma, layer);
  for (std::size_t i = 0; i < facts.size(); ++i) {
    db->insert(keys.col(static_cast<Index>(i)), residuals.col(static_cast<Index>(i)),
               std::to_string(facts[i].id));
  }
  return db;
}

void check_layers(const ToyModel& model, std::span<const int> layers) {
  if (layers.empty()) throw std::invalid_argument("multi-layer edit: empty layer list");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i] < 0 || layers[i] >= model.layer_count()) {
      throw std::out_of_range("multi-layer edit: layer out of range");
    }
    if (i > 0 && layers[i] <= layers[i - 1]) {
      throw std::invalid_argument("multi-layer edit: layers must be strictly ascending");
    }
  }
}

// Hidden state after `layer` at each fact's subject position.
DenseMatrix subject_hidden(const ToyModel& model, std::span<const Fact> facts, int layer,
                           std::span<const EditAttachment> attachments, int jobs) {
  DenseMatrix out(model.d_model(), static_cast<Index>(facts.size()));
  parallel_for(facts.size(), jobs, [&](std::size_t i) {
    const Fact& f = facts[i];
    const Tokens prompt = fill_template(f.prompt, f.subject);
    const ForwardResult res = forward(model, prompt, attachments);
    out.col(static_cast<Index>(i)) = res.hidden[static_cast<std::size_t>(layer) + 1].col(
        subject_last_position(f.prompt, f.subject));
  });
  return out;
}

}  // namespace

LayerEdit neuraldb_edit(const ToyModel& model, std::span<const Fact> facts, const EditConfig& cfg,
                        std::span<const EditAttachment> attachments) {
  LayerEdit edit;
  edit.keys = compute_keys(model, facts, cfg.layer, cfg, attachments);
  edit.residuals = compute_residuals(model, facts, cfg.layer, cfg, attachments);
  edit.attachment =
      EditAttachment::gated(make_database(edit.keys, edit.residuals, facts, cfg.gamma, cfg.layer));
  return edit;
}

LinearEdit linear_edit(const ToyModel& model, std::span<const Fact> facts, EditMethod method,
                       const DenseMatrix& k0, const EditConfig& cfg) {
  LinearEdit out;
  out.layer.keys = compute_keys(model, facts, cfg.layer, cfg);
  out.layer.residuals = compute_residuals(model, facts, cfg.layer, cfg);
  EditProblem problem;
  problem.w = model.layer(cfg.layer).w_out;
  problem.k1 = out.layer.keys;
  problem.vhat1 = problem.w * problem.k1 + out.layer.residuals;
  problem.k0 = k0;
  problem.beta = cfg.beta;
  out.solution = method == EditMethod::kMemit ? memit_delta(problem) : alphaedit_delta(problem);
  out.layer.attachment = EditAttachment::linear(cfg.layer, out.solution.delta);
  return out;
}

std::vector<LayerEdit> multilayer_edit_old(const ToyModel& model, std::span<const int> layers,
                                           std::span<const Fact> facts, const EditConfig& cfg) {
  check_layers(model, layers);
  const int last = layers.back();
  const DenseMatrix target = compute_residuals(model, facts, last, cfg);
  const DenseMatrix pristine = subject_hidden(model, facts, last, {}, cfg.jobs);

  std::vector<LayerEdit> edits;
  std::vector<EditAttachment> attached;
  for (const int l : layers) {
    LayerEdit edit;
    edit.keys = compute_keys(model, facts, l, cfg, attached);
    const DenseMatrix current = subject_hidden(model, facts, last, attached, cfg.jobs);
    edit.divisor = static_cast<double>(last - l + 1);
    edit.residuals = (target - (current - pristine)) / edit.divisor;
    edit.attachment = EditAttachment::gated(make_database(edit.keys, edit.residuals, facts, cfg.gamma, l));
    attached.push_back(edit.attachment);
    edits.push_back(std::move(edit));
  }
  return edits;
}

std::vector<LayerEdit> multilayer_edit_new(const ToyModel& model, std::span<const int> layers,
                                           std::span<const Fact> facts, const EditConfig& cfg) {
  check_layers(model, layers);
  std::vector<LayerEdit> edits;
  std::vector<EditAttachment> attached;
  for (const int l : layers) {
    EditConfig layer_cfg = cfg;
    layer_cfg.layer = l;
    LayerEdit edit = neuraldb_edit(model, facts, layer_cfg, attached);
    attached.push_back(edit.attachment);
    edits.push_back(std::move(edit));
  }
  return edits;
}

std::vector<EditAttachment> attachments_of(const std::vector<LayerEdit>& edits) {
  std::vector<EditAttachment> out;
  out.reserve(edits.size());
  for (const auto& e : edits) out.push_back(e.attachment);
  return out;
}

}  // namespace kvedit
