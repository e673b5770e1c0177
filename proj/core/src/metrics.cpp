#include "kvedit/metrics.hpp"

#include "kvedit/parallel.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>
#include <stdexcept>

namespace kvedit {

std::string to_string(MetricMode mode) {
  return mode == MetricMode::kPreference ? "preference" : "top1";
}

MetricMode parse_metric_mode(const std::string& text) {
  if (text == "preference") return MetricMode::kPreference;
  if (text == "top1") return MetricMode::kTop1;
  throw std::invalid_argument("unknown metric mode '" + text + "'");
}

double MetricResult::fraction() const {
  return attempts == 0 ? 0.0 : static_cast<double>(successes) / static_cast<double>(attempts);
}

namespace {

// Logits at every position that predicts an object token.
DenseMatrix object_logits(const EditedModel& m, const Tokens& prompt, const Tokens& object) {
  if (object.empty()) throw std::invalid_argument("empty object");
  Tokens tokens = prompt;
  tokens.insert(tokens.end(), object.begin(), object.end() - 1);
  const ForwardResult res = forward(*m.model, tokens, m.attachments);
  return res.logits.rightCols(static_cast<Index>(object.size()));
}

}  // namespace

double sequence_logprob(const EditedModel& m, const Tokens& prompt, const Tokens& object) {
  const DenseMatrix logits = object_logits(m, prompt, object);
  double total = 0.0;
  for (std::size_t i = 0; i < object.size(); ++i) {
    total += log_softmax(logits.col(static_cast<Index>(i)))(object[i]);
  }
  return total;
}

bool greedy_matches(const EditedModel& m, const Tokens& prompt, const Tokens& object) {
  const DenseMatrix logits = object_logits(m, prompt, object);
  for (std::size_t i = 0; i < object.size(); ++i) {
    Index best = 0;
    logits.col(static_cast<Index>(i)).maxCoeff(&best);
    if (best != object[i]) return false;
  }
  return true;
}

namespace {

// Runs probe(fact) -> outcomes for every fact and gathers them in fact order.
template <class Probe>
MetricResult collect(std::span<const Fact> facts, int jobs, Probe&& probe) {
  std::vector<std::vector<ItemOutcome>> per_fact(facts.size());
  parallel_for(facts.size(), jobs, [&](std::size_t i) { per_fact[i] = probe(facts[i]); });
  MetricResult out;
  for (auto& items : per_fact) {
    if (items.empty()) {
      ++out.skipped;
      continue;
    }
    for (const auto& item : items) {
      ++out.attempts;
      out.successes += item.success ? 1 : 0;
      out.items.push_back(item);
    }
  }
  return out;
}

bool prefers_new(const EditedModel& m, const Fact& f, const Tokens& prompt, MetricMode mode) {
  if (mode == MetricMode::kTop1) return greedy_matches(m, prompt, f.new_object);
  return sequence_logprob(m, prompt, f.new_object) > sequence_logprob(m, prompt, f.old_object);
}

}  // namespace

MetricResult eval_efficacy(const EditedModel& m, std::span<const Fact> facts, MetricMode mode,
                           int jobs) {
  return collect(facts, jobs, [&](const Fact& f) {
    return std::vector<ItemOutcome>{
        {f.id, 0, prefers_new(m, f, fill_template(f.prompt, f.subject), mode)}};
  });
}

MetricResult eval_generalization(const EditedModel& m, std::span<const Fact> facts,
                                 MetricMode mode, int jobs) {
  return collect(facts, jobs, [&](const Fact& f) {
    std::vector<ItemOutcome> items;
    for (std::size_t p = 0; p < f.paraphrases.size(); ++p) {
      items.push_back({f.id, p, prefers_new(m, f, fill_template(f.paraphrases[p], f.subject), mode)});
    }
    return items;
  });
}

MetricResult eval_specificity(const EditedModel& m, std::span<const Fact> facts, MetricMode mode,
                              int jobs) {
  return collect(facts, jobs, [&](const Fact& f) {
    std::vector<ItemOutcome> items;
    for (std::size_t p = 0; p < f.neighborhood.size(); ++p) {
      const auto& n = f.neighborhood[p];
      const bool kept = mode == MetricMode::kTop1
                            ? greedy_matches(m, n.prompt, n.object)
                            : sequence_logprob(m, n.prompt, n.object) >
                                  sequence_logprob(m, n.prompt, f.new_object);
      items.push_back({f.id, p, kept});
    }
    return items;
  });
}

MetricReport evaluate(const EditedModel& m, std::span<const Fact> facts, MetricMode mode,
                      int jobs) {
  MetricReport r;
  r.mode = mode;
  r.efficacy = eval_efficacy(m, facts, mode, jobs);
  r.generalization = eval_generalization(m, facts, mode, jobs);
  r.specificity = eval_specificity(m, facts, mode, jobs);
  return r;
}

namespace {

std::string number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string MetricReport::to_csv() const {
  std::ostringstream os;
  os << "metric,mode,fraction,successes,attempts,skipped\n";
  const std::pair<const char*, const MetricResult*> rows[] = {
      {"efficacy", &efficacy}, {"generalization", &generalization}, {"specificity", &specificity}};
  for (const auto& [name, res] : rows) {
    os << name << ',' << kvedit::to_string(mode) << ',' << number(res->fraction()) << ','
       << res->successes << ',' << res->attempts << ',' << res->skipped << '\n';
  }
  return os.str();
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["mode"] = kvedit::to_string(mode);
  auto put = [&](const char* name, const MetricResult& res) {
    j[name] = {{"fraction", res.fraction()},
               {"successes", res.successes},
               {"attempts", res.attempts},
               {"skipped", res.skipped}};
  };
  put("efficacy", efficacy);
  put("generalization", generalization);
  put("specificity", specificity);
  nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
  for (const auto& [k, v] : config) cfg[k] = v;
  j["config"] = cfg;
  return j.dump(2) + "\n";
}

std::string MetricReport::items_csv() const {
  std::ostringstream os;
  os << "fact,metric,probe,success\n";
  const std::pair<const char*, const MetricResult*> rows[] = {
      {"efficacy", &efficacy}, {"generalization", &generalization}, {"specificity", &specificity}};
  for (const auto& [name, res] : rows) {
    for (const auto& item : res->items) {
      os << item.fact << ',' << name << ',' << item.probe << ',' << (item.success ? 1 : 0) << '\n';
    }
  }
  return os.str();
}

std::vector<KeyProbe> make_key_probes(const NeuralKVDatabase& db, std::size_t count, double cos_lo,
                                      double cos_hi, std::uint64_t seed) {
  if (db.empty()) throw std::invalid_argument("make_key_probes: empty database");
  if (!(cos_lo >= -1.0 && cos_lo <= cos_hi && cos_hi <= 1.0)) {
    throw std::invalid_argument("make_key_probes: bad cosine range");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, db.size() - 1);
  std::uniform_real_distribution<double> cosine(cos_lo, cos_hi);
  std::normal_distribution<double> gauss;
  std::vector<KeyProbe> probes;
  probes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t entry = pick(rng);
    const DenseVector u = db.unit_key(entry);
    DenseVector v(db.d1());
    for (auto& x : v) x = gauss(rng);
    v -= u.dot(v) * u;
    v.normalize();
    const double c = cosine(rng);
    KeyProbe p;
    p.key = db.key_norm(entry) * (c * u + std::sqrt(1.0 - c * c) * v);
    p.expected = db.id_at(entry);
    p.cosine = c;
    probes.push_back(std::move(p));
  }
  return probes;
}

MetricResult eval_key_probes(const NeuralKVDatabase& db, std::span<const KeyProbe> probes,
                             int jobs) {
  std::vector<char> ok(probes.size(), 0);
  parallel_for(probes.size(), jobs, [&](std::size_t i) {
    const RetrievalResult r = db.query(probes[i].key);
    ok[i] = r.hit && r.fact == probes[i].expected;
  });
  MetricResult out;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    ++out.attempts;
    out.successes += ok[i] ? 1 : 0;
    out.items.push_back({probes[i].expected.value, i, ok[i] != 0});
  }
  return out;
}

}  // namespace kvedit
