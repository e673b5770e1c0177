#include "support.hpp"

#include "kvedit/dataset.hpp"
#include "kvedit/editing.hpp"
#include "kvedit/metrics.hpp"

#include "json.hpp"

#include <gtest/gtest.h>

using namespace kvedit;
using namespace kvedit::testing;

namespace {

const ToyModel& model() {
  static const ToyModel m = ToyModel::random(ToyModelConfig{});
  return m;
}

const std::vector<Fact>& facts() {
  static const std::vector<Fact> f = synth_facts(10, model(), 17);
  return f;
}

}  // namespace

TEST(Metrics, PristineModelFailsEditsAndKeepsNeighbors) {
  const EditedModel pristine{&model(), {}};
  for (MetricMode mode : {MetricMode::kTop1, MetricMode::kPreference}) {
    const MetricReport r = evaluate(pristine, facts(), mode);
    EXPECT_EQ(r.efficacy.successes, 0u);
    EXPECT_EQ(r.efficacy.attempts, facts().size());
    EXPECT_EQ(r.generalization.attempts, 2 * facts().size());
    EXPECT_EQ(r.specificity.fraction(), 1.0);
    EXPECT_EQ(r.efficacy.items.size(), r.efficacy.attempts);
  }
}

TEST(Metrics, NeuralDbEditPassesAllThree) {
  EditConfig cfg;
  const LayerEdit e = neuraldb_edit(model(), facts(), cfg);
  const EditedModel em{&model(), {e.attachment}};
  const MetricReport r = evaluate(em, facts(), MetricMode::kTop1, 2);
  EXPECT_EQ(r.efficacy.fraction(), 1.0);
  EXPECT_EQ(r.specificity.fraction(), 1.0);
  // Jobs do not change results.
  const MetricReport serial = evaluate(em, facts(), MetricMode::kTop1, 1);
  EXPECT_EQ(serial.items_csv(), r.items_csv());
}

TEST(Metrics, SequenceLogprobIsTeacherForced) {
  const EditedModel em{&model(), {}};
  const Tokens prompt = {40, 41};
  const Tokens object = {50, 51};
  const DenseVector first = log_softmax(next_token_logits(model(), prompt));
  const DenseVector second = log_softmax(next_token_logits(model(), Tokens{40, 41, 50}));
  EXPECT_NEAR(sequence_logprob(em, prompt, object), first(50) + second(51), 1e-10);

  Index top = 0;
  first.maxCoeff(&top);
  EXPECT_TRUE(greedy_matches(em, prompt, Tokens{static_cast<int>(top)}));
  EXPECT_FALSE(greedy_matches(em, prompt, Tokens{static_cast<int>(top == 3 ? 4 : 3)}));
}

TEST(Metrics, SkippedFactsStayOutOfTheDenominator) {
  std::vector<Fact> f(facts().begin(), facts().begin() + 3);
  f[1].paraphrases.clear();
  f[2].neighborhood.clear();
  const EditedModel em{&model(), {}};
  const MetricReport r = evaluate(em, f, MetricMode::kTop1);
  EXPECT_EQ(r.generalization.skipped, 1u);
  EXPECT_EQ(r.generalization.attempts, 4u);
  EXPECT_EQ(r.specificity.skipped, 1u);
  EXPECT_EQ(MetricResult{}.fraction(), 0.0);
}

TEST(Report, CsvAndJsonAgree) {
  const EditedModel em{&model(), {}};
  MetricReport r = evaluate(em, facts(), MetricMode::kPreference);
  r.config.emplace_back("gamma", "0.65");
  const auto j = nlohmann::json::parse(r.to_json());
  EXPECT_EQ(j["mode"], "preference");
  EXPECT_EQ(j["specificity"]["attempts"], r.specificity.attempts);
  EXPECT_EQ(j["config"]["gamma"], "0.65");
  const std::string csv = r.to_csv();
  EXPECT_NE(csv.find("specificity,preference,1,"), std::string::npos);
  const std::string items = r.items_csv();
  EXPECT_EQ(std::count(items.begin(), items.end(), '\n'),
            static_cast<long>(1 + r.efficacy.attempts + r.generalization.attempts +
                              r.specificity.attempts));
  EXPECT_EQ(parse_metric_mode("top1"), MetricMode::kTop1);
  EXPECT_THROW(parse_metric_mode("both"), std::invalid_argument);
}

TEST(KeyProbes, HaveTheRequestedCosine) {
  std::mt19937_64 rng(1);
  const NeuralKVDatabase db = NeuralKVDatabase::build(gaussian(64, 200, rng), gaussian(8, 200, rng));
  const auto probes = make_key_probes(db, 300, 0.70, 0.80, 5);
  for (const auto& p : probes) {
    const auto entry = db.find(p.expected);
    ASSERT_TRUE(entry.has_value());
    EXPECT_NEAR(cosine(p.key, db.key(*entry)), p.cosine, 1e-12);
    EXPECT_GE(p.cosine, 0.70);
    EXPECT_LE(p.cosine, 0.80);
    EXPECT_NEAR(p.key.norm(), db.key_norm(*entry), 1e-9);
  }
  EXPECT_EQ(eval_key_probes(db, probes).fraction(), 1.0);
  // Below the gate nothing is retrieved.
  const auto weak = make_key_probes(db, 50, 0.3, 0.5, 6);
  EXPECT_EQ(eval_key_probes(db, weak).successes, 0u);
  EXPECT_THROW(make_key_probes(db, 1, 0.9, 0.8, 1), std::invalid_argument);
}
