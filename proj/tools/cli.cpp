#include "cli.hpp"

#include "kvedit/bench.hpp"
#include "kvedit/dataset.hpp"
#include "kvedit/diagnostics.hpp"
#include "kvedit/matrix_io.hpp"
#include "kvedit/metrics.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#ifndef KVEDIT_VERSION
#define KVEDIT_VERSION "unknown"
#endif

namespace kvedit::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

const std::set<std::string> kCommands = {"build-db", "edit", "query", "eval",
                                         "diagnose", "bench", "crud"};

bool needs_facts(const RunConfig& c) {
  if (c.command == "crud") return c.op == "add" || c.op == "update";
  return c.command == "build-db" || c.command == "edit" || c.command == "eval" ||
         c.command == "diagnose";
}

bool is_linear(const std::string& method) { return method == "memit" || method == "alphaedit"; }

}  // namespace

void RunConfig::validate() const {
  auto fail = [](const std::string& why) { throw UsageError(why); };
  if (!kCommands.count(command)) fail("unknown command '" + command + "'");
  if (method != "neuraldb" && !is_linear(method)) fail("unknown method '" + method + "'");
  if (schedule != "old" && schedule != "new") fail("schedule must be old or new");
  if (mode != "top1" && mode != "preference") fail("mode must be top1 or preference");
  if (jobs < 1) fail("jobs must be >= 1");
  if (!(gamma > 0.0 && gamma < 1.0)) fail("gamma must lie in (0, 1)");
  if (!(beta > 0.0)) fail("beta must be positive");
  if (key_prefixes < 1) fail("key-prefixes must be >= 1");
  if (preserved < 0) fail("preserved must be >= 0");
  if (out.empty()) fail("empty output directory");
  try {
    fit.validate();
    if (!model_path) model.validate();
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i] < 0 || (!model_path && layers[i] >= model.layers)) fail("layer out of range");
    if (i > 0 && layers[i] <= layers[i - 1]) fail("layers must be strictly ascending");
  }

  const bool has_facts = facts_path.has_value();
  const bool has_synth = synth.has_value();
  if (needs_facts(*this)) {
    if (has_facts == has_synth) fail("give exactly one fact source: --facts or --synth");
  } else if (has_facts || has_synth) {
    fail("command '" + command + "' takes no fact source");
  }
  if (has_synth && *synth < 1) fail("synth must be >= 1");

  if (command == "build-db" && method != "neuraldb") fail("build-db requires method neuraldb");
  if (is_linear(method) && layers.size() > 1) fail(method + " edits a single layer");
  if ((command == "query" || command == "crud") && !db) fail(command + " requires --db");
  if (db && command != "query" && command != "crud" && command != "eval") {
    fail("--db is only used by query, crud and eval");
  }
  if (command == "eval" && db && method != "neuraldb") fail("eval --db requires method neuraldb");
  if (command == "query" && prompt.empty()) fail("query requires --prompt");
  if (command == "crud") {
    static const std::set<std::string> ops = {"list", "add", "remove", "update"};
    if (!ops.count(op)) fail("crud requires --op list|add|remove|update");
    if (op == "remove" && ids.empty()) fail("crud remove requires --ids");
  }
  if (command == "bench") {
    for (std::size_t i = 1; i < sizes.size(); ++i) {
      if (sizes[i] < sizes[i - 1]) fail("sizes must be ascending");
    }
    if (queries < 1) fail("queries must be >= 1");
  }
}

std::string default_out(const std::optional<std::string>& explicit_out) {
  if (explicit_out) return *explicit_out;
  if (const char* env = std::getenv("KVEDIT_OUT"); env && *env) return env;
  return "kvedit-out";
}

namespace {

// ---------------------------------------------------------------- settings

std::string normalize_key(std::string key) {
  for (auto& c : key) {
    if (c == '-') c = '_';
  }
  return key;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T v{};
  in >> v;
  if (!in || !in.eof()) throw UsageError("option " + key + ": bad value '" + text + "'");
  return v;
}

// A setting from either the config file (any JSON scalar/array) or a flag
// (always a string).
struct Settings {
  std::map<std::string, json> values;

  bool has(const std::string& k) const { return values.count(k) > 0; }

  std::string text(const std::string& k) const {
    const json& v = values.at(k);
    if (v.is_string()) return v.get<std::string>();
    if (v.is_array()) {
      std::string joined;
      for (const auto& x : v) {
        if (!joined.empty()) joined += ',';
        joined += x.is_string() ? x.get<std::string>() : x.dump();
      }
      return joined;
    }
    return v.dump();
  }

  template <class T>
  void get(const std::string& k, T& dst) const {
    if (has(k)) dst = parse_number<T>(k, text(k));
  }
  void get(const std::string& k, std::string& dst) const {
    if (has(k)) dst = text(k);
  }
  template <class T>
  void get_list(const std::string& k, std::vector<T>& dst) const {
    if (!has(k)) return;
    dst.clear();
    for (const auto& item : split_list(text(k))) dst.push_back(parse_number<T>(k, item));
  }
};

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = {
      "model",        "vocab",   "d_model",  "d_ffn",    "model_layers", "model_seed",
      "facts",        "synth",   "seed",     "method",   "schedule",     "gamma",
      "beta",         "layers",  "mode",     "steps",    "lr",           "kl_weight",
      "prefixes",     "clamp",   "key_prefixes", "preserved", "out",      "jobs",
      "db",           "prompt",  "op",       "ids",      "sizes",        "queries"};
  return keys;
}

RunConfig from_settings(const std::string& command, const Settings& s) {
  RunConfig c;
  c.command = command;
  if (s.has("model")) c.model_path = s.text("model");
  s.get("vocab", c.model.vocab);
  s.get("d_model", c.model.d_model);
  s.get("d_ffn", c.model.d_ffn);
  s.get("model_layers", c.model.layers);
  s.get("model_seed", c.model.seed);
  if (s.has("facts")) c.facts_path = s.text("facts");
  if (s.has("synth")) {
    int n = 0;
    s.get("synth", n);
    c.synth = n;
  }
  s.get("seed", c.seed);
  s.get("method", c.method);
  s.get("schedule", c.schedule);
  s.get("gamma", c.gamma);
  s.get("beta", c.beta);
  s.get_list("layers", c.layers);
  s.get("mode", c.mode);
  s.get("steps", c.fit.steps);
  s.get("lr", c.fit.learning_rate);
  s.get("kl_weight", c.fit.kl_weight);
  s.get("prefixes", c.fit.prefix_count);
  if (s.has("clamp")) {
    double clamp = 0.0;
    s.get("clamp", clamp);
    c.fit.clamp_norm = clamp;
  }
  s.get("key_prefixes", c.key_prefixes);
  s.get("preserved", c.preserved);
  std::optional<std::string> out;
  if (s.has("out")) out = s.text("out");
  c.out = default_out(out);
  s.get("jobs", c.jobs);
  if (s.has("db")) c.db = s.text("db");
  s.get("prompt", c.prompt);
  s.get("op", c.op);
  s.get_list("ids", c.ids);
  s.get_list("sizes", c.sizes);
  s.get("queries", c.queries);
  c.fit.seed = c.seed;
  if (c.command == "bench" && c.sizes.empty()) c.sizes = {1000, 2000, 4000, 8000};
  return c;
}

json to_json(const RunConfig& c, const ToyModelConfig& model) {
  json j;
  j["command"] = c.command;
  j["model"] = c.model_path ? json(*c.model_path) : json(nullptr);
  j["vocab"] = model.vocab;
  j["d_model"] = model.d_model;
  j["d_ffn"] = model.d_ffn;
  j["model_layers"] = model.layers;
  j["model_seed"] = model.seed;
  j["facts"] = c.facts_path ? json(*c.facts_path) : json(nullptr);
  j["synth"] = c.synth ? json(*c.synth) : json(nullptr);
  j["seed"] = c.seed;
  j["method"] = c.method;
  j["schedule"] = c.schedule;
  j["gamma"] = c.gamma;
  j["beta"] = c.beta;
  j["layers"] = c.layers;
  j["mode"] = c.mode;
  j["steps"] = c.fit.steps;
  j["lr"] = c.fit.learning_rate;
  j["kl_weight"] = c.fit.kl_weight;
  j["prefixes"] = c.fit.prefix_count;
  j["prefix_length"] = c.fit.prefix_length;
  j["early_stop_nll"] = c.fit.early_stop_nll;
  j["clamp"] = c.fit.clamp_norm ? json(*c.fit.clamp_norm) : json(nullptr);
  j["key_prefixes"] = c.key_prefixes;
  j["preserved"] = c.preserved;
  j["out"] = c.out;
  j["jobs"] = c.jobs;
  j["db"] = c.db ? json(*c.db) : json(nullptr);
  j["prompt"] = c.prompt;
  j["op"] = c.op;
  j["ids"] = c.ids;
  j["sizes"] = c.sizes;
  j["queries"] = c.queries;
  return j;
}

}  // namespace

RunConfig parse_args(int argc, const char* const* argv) {
  CLI::App app{"Fact editing with a gated neural key-value database", "kvedit"};
  app.fallthrough();
  app.require_subcommand(1, 1);
  for (const auto& name : kCommands) app.add_subcommand(name);
  app.get_subcommand("build-db")->description("fit residuals and write a database");
  app.get_subcommand("edit")->description("edit facts with neuraldb, memit or alphaedit");
  app.get_subcommand("query")->description("run gated retrieval on a prompt's keys");
  app.get_subcommand("eval")->description("edit, then report efficacy/generalization/specificity");
  app.get_subcommand("diagnose")->description("weighted-score pools for edited and unrelated keys");
  app.get_subcommand("bench")->description("database build/query/memory scaling table");
  app.get_subcommand("crud")->description("list, add, remove or update database entries");

  std::string config_path;
  app.add_option("--config", config_path, "JSON file of settings; flags override it");
  std::map<std::string, std::string> flags;
  for (const auto& key : known_keys()) {
    std::string flag = "--" + key;
    for (auto& ch : flag) {
      if (ch == '_') ch = '-';
    }
    app.add_option(flag, flags[key]);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    throw;
  } catch (const CLI::ParseError& e) {
    throw UsageError(std::string(e.what()) + "\n" + app.help());
  }

  Settings settings;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw UsageError("cannot read config file " + config_path);
    json file;
    try {
      file = json::parse(in);
    } catch (const json::parse_error& e) {
      throw UsageError("config file " + config_path + ": " + e.what());
    }
    if (!file.is_object()) throw UsageError("config file must hold a JSON object");
    const auto& keys = known_keys();
    for (const auto& [k, v] : file.items()) {
      const std::string key = normalize_key(k);
      if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
        throw UsageError("config file: unknown setting '" + k + "'");
      }
      settings.values[key] = v;
    }
  }
  for (const auto& key : known_keys()) {
    std::string flag = "--" + key;
    for (auto& ch : flag) {
      if (ch == '_') ch = '-';
    }
    if (app.get_option(flag)->count() > 0) settings.values[key] = flags[key];
  }

  const std::string command = app.get_subcommands().front()->get_name();
  RunConfig c = from_settings(command, settings);
  c.validate();
  return c;
}

namespace {

// ----------------------------------------------------------------- outputs

// Files written by one run; removed again if the run fails.
class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) {
    if (!fs::exists(dir_)) {
      fs::create_directories(dir_);
      created_dir_ = true;
    }
  }
  Outputs(const Outputs&) = delete;
  Outputs& operator=(const Outputs&) = delete;
  ~Outputs() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& p : files_) fs::remove(p, ec);
    if (created_dir_ && fs::is_empty(dir_, ec)) fs::remove(dir_, ec);
  }

  fs::path claim(const std::string& name) {
    fs::path p = dir_ / name;
    files_.push_back(p);
    names_.push_back(name);
    return p;
  }
  void write_text(const std::string& name, const std::string& text) {
    const fs::path p = claim(name);
    std::ofstream out(p, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error("write failed: " + p.string());
  }
  const std::vector<std::string>& names() const { return names_; }
  void commit() { committed_ = true; }

 private:
  fs::path dir_;
  bool created_dir_ = false;
  bool committed_ = false;
  std::vector<fs::path> files_;
  std::vector<std::string> names_;
};

struct Context {
  const RunConfig& cfg;
  std::ostream& log;
  Outputs& outputs;
  std::optional<ToyModel> model;
  std::vector<Fact> facts;
  json extra = json::object();
};

ToyModel make_model(const RunConfig& c) {
  return c.model_path ? ToyModel::load(*c.model_path) : ToyModel::random(c.model);
}

std::vector<int> edit_layers(const RunConfig& c, const ToyModel& m) {
  std::vector<int> layers = c.layers;
  if (layers.empty()) layers.push_back(default_edit_layer(m.layer_count()));
  for (int l : layers) {
    if (l >= m.layer_count()) throw UsageError("layer " + std::to_string(l) + " out of range");
  }
  return layers;
}

EditConfig edit_config(const RunConfig& c, int layer) {
  EditConfig e;
  e.layer = layer;
  e.gamma = c.gamma;
  e.beta = c.beta;
  e.fit = c.fit;
  e.key_prefixes = c.key_prefixes;
  e.key_seed = c.seed;
  e.jobs = c.jobs;
  return e;
}

std::uint64_t preserved_seed(const RunConfig& c) { return c.seed + 0x9e3779b97f4a7c15ULL; }

struct EditOutcome {
  std::vector<LayerEdit> layers;
  std::optional<EditSolution> solution;
  DenseMatrix k0;
};

EditOutcome perform_edit(Context& ctx) {
  const RunConfig& c = ctx.cfg;
  const ToyModel& model = *ctx.model;
  const std::vector<int> layers = edit_layers(c, model);
  EditOutcome out;
  if (is_linear(c.method)) {
    const int layer = layers.front();
    out.k0 = preserved_keys(model, layer, c.preserved, preserved_seed(c));
    LinearEdit e = linear_edit(model, ctx.facts,
                               c.method == "memit" ? EditMethod::kMemit : EditMethod::kAlphaEdit,
                               out.k0, edit_config(c, layer));
    out.layers.push_back(std::move(e.layer));
    out.solution = std::move(e.solution);
  } else if (layers.size() == 1) {
    out.layers.push_back(neuraldb_edit(model, ctx.facts, edit_config(c, layers.front())));
  } else {
    const EditConfig ec = edit_config(c, layers.back());
    out.layers = c.schedule == "old" ? multilayer_edit_old(model, layers, ctx.facts, ec)
                                     : multilayer_edit_new(model, layers, ctx.facts, ec);
  }
  return out;
}

// --------------------------------------------------------------- commands

void cmd_build_db(Context& ctx) {
  EditOutcome e = perform_edit(ctx);
  const NeuralKVDatabase& db = *e.layers.front().attachment.database();
  db.save(ctx.outputs.claim("db.kvdb"));
  save_facts(ctx.outputs.claim("facts.jsonl"), ctx.facts);
  ctx.log << "database: " << db.size() << " entries at layer " << db.layer() << "\n";
}

void cmd_edit(Context& ctx) {
  EditOutcome e = perform_edit(ctx);
  json layers = json::array();
  for (const auto& le : e.layers) {
    const int l = le.attachment.layer;
    if (const auto* db = le.attachment.database()) {
      db->save(ctx.outputs.claim("db_layer" + std::to_string(l) + ".kvdb"));
    } else {
      save_matrix(ctx.outputs.claim("delta_layer" + std::to_string(l) + ".kvmx"), *le.attachment.delta());
    }
    layers.push_back({{"layer", l},
                      {"divisor", le.divisor},
                      {"mean_residual_norm", le.residuals.colwise().norm().mean()}});
  }
  ctx.extra["layers"] = layers;
  if (e.solution) {
    ctx.extra["ridge_applied"] = e.solution->provenance.solve.ridge_applied;
    ctx.extra["projector_rank"] = e.solution->provenance.projector_rank;
  }
  save_facts(ctx.outputs.claim("facts.jsonl"), ctx.facts);
  ctx.log << "edited " << ctx.facts.size() << " facts with " << ctx.cfg.method << " on "
          << e.layers.size() << " layer(s)\n";
}

void cmd_eval(Context& ctx) {
  EditedModel em;
  em.model = &*ctx.model;
  if (ctx.cfg.db) {
    auto db = std::make_shared<NeuralKVDatabase>(NeuralKVDatabase::load(*ctx.cfg.db));
    db->set_gamma(ctx.cfg.gamma);
    em.attachments.push_back(EditAttachment::gated(std::move(db)));
  } else {
    for (auto& le : perform_edit(ctx).layers) em.attachments.push_back(std::move(le.attachment));
  }
  MetricReport report = evaluate(em, ctx.facts, parse_metric_mode(ctx.cfg.mode), ctx.cfg.jobs);
  const json echo = to_json(ctx.cfg, ctx.model->config());
  for (const auto& [k, v] : echo.items()) {
    if (k == "out" || k == "jobs") continue;
    report.config.emplace_back(k, v.is_string() ? v.get<std::string>() : v.dump());
  }
  ctx.outputs.write_text("report.json", report.to_json());
  ctx.outputs.write_text("report.csv", report.to_csv());
  ctx.outputs.write_text("items.csv", report.items_csv());
  ctx.log << report.to_csv();
}

void cmd_query(Context& ctx) {
  const NeuralKVDatabase db = NeuralKVDatabase::load(*ctx.cfg.db);
  const Tokens prompt = parse_tokens(ctx.cfg.prompt);
  const ForwardResult res = forward(*ctx.model, prompt);
  if (db.layer() >= ctx.model->layer_count() || db.d1() != ctx.model->d_ffn()) {
    throw std::runtime_error("database does not fit the model");
  }
  std::ostringstream csv;
  csv << "position,token,hit,fact,meta,similarity\n";
  for (Index t = 0; t < static_cast<Index>(prompt.size()); ++t) {
    const RetrievalResult r = db.query(res.keys[static_cast<std::size_t>(db.layer())].col(t));
    csv << t << ',' << prompt[static_cast<std::size_t>(t)] << ',' << (r.hit ? 1 : 0) << ',';
    if (r.hit) csv << r.fact->value << ',' << db.meta(*r.entry);
    else csv << ',';
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", r.similarity);
    csv << ',' << buf << '\n';
  }
  ctx.outputs.write_text("query.csv", csv.str());
  const auto shared = std::make_shared<NeuralKVDatabase>(db);
  const std::vector<EditAttachment> att{EditAttachment::gated(shared)};
  Index before = 0;
  Index after = 0;
  res.logits.col(res.logits.cols() - 1).maxCoeff(&before);
  next_token_logits(*ctx.model, prompt, att).maxCoeff(&after);
  ctx.extra["next_token_pristine"] = before;
  ctx.extra["next_token_edited"] = after;
  ctx.log << csv.str() << "next token: " << before << " -> " << after << "\n";
}

void cmd_diagnose(Context& ctx) {
  const RunConfig& c = ctx.cfg;
  ScoreDiagnostics d;
  if (is_linear(c.method)) {
    EditOutcome e = perform_edit(ctx);
    const EditSolution& sol = *e.solution;
    DenseMatrix probes(sol.keys.rows(), sol.keys.cols() + e.k0.cols());
    probes << sol.keys, e.k0;
    std::vector<std::optional<std::size_t>> labels(static_cast<std::size_t>(probes.cols()));
    for (Index j = 0; j < sol.keys.cols(); ++j) labels[static_cast<std::size_t>(j)] = j;
    d = diagnose_scores(sol, probes, labels);
  } else {
    if (edit_layers(c, *ctx.model).size() != 1) throw UsageError("diagnose uses a single layer");
    EditOutcome e = perform_edit(ctx);
    const LayerEdit& le = e.layers.front();
    const DenseMatrix k0 = preserved_keys(*ctx.model, le.attachment.layer, c.preserved, preserved_seed(c));
    DenseMatrix probes(le.keys.rows(), le.keys.cols() + k0.cols());
    probes << le.keys, k0;
    std::vector<std::optional<std::size_t>> labels(static_cast<std::size_t>(probes.cols()));
    for (Index j = 0; j < le.keys.cols(); ++j) labels[static_cast<std::size_t>(j)] = j;
    d = diagnose_scores(*le.attachment.database(), probes, labels);
  }
  ctx.outputs.write_text("scores_summary.csv", d.summary_csv());
  ctx.outputs.write_text("scores.csv", d.pools_csv());
  ctx.extra["positive_mean"] = d.positive_mean;
  ctx.extra["negative_mean"] = d.negative_mean;
  if (d.reconstruction_error) ctx.extra["reconstruction_error"] = *d.reconstruction_error;
  ctx.log << d.summary_csv();
}

void cmd_bench(Context& ctx) {
  ScalingConfig sc;
  sc.sizes = ctx.cfg.sizes;
  sc.queries = ctx.cfg.queries;
  sc.seed = ctx.cfg.seed;
  const auto rows = bench_scaling(sc);
  ctx.outputs.write_text("scaling.csv", scaling_csv(rows));
  ctx.log << scaling_csv(rows);
}

void cmd_crud(Context& ctx) {
  const RunConfig& c = ctx.cfg;
  NeuralKVDatabase db = NeuralKVDatabase::load(*c.db);
  std::ostringstream log;
  log << "op,fact,meta,result\n";
  if (c.op == "add" || c.op == "update") {
    const ToyModel& model = *ctx.model;
    if (db.d1() != model.d_ffn() || db.d2() != model.d_model() || db.layer() >= model.layer_count()) {
      throw std::runtime_error("database does not fit the model");
    }
    const EditConfig ec = edit_config(c, db.layer());
    const DenseMatrix keys = compute_keys(model, ctx.facts, db.layer(), ec);
    const DenseMatrix residuals = compute_residuals(model, ctx.facts, db.layer(), ec);
    for (std::size_t i = 0; i < ctx.facts.size(); ++i) {
      const std::string meta = std::to_string(ctx.facts[i].id);
      const auto col = static_cast<Index>(i);
      if (c.op == "add") {
        const FactId id = db.insert(keys.col(col), residuals.col(col), meta);
        log << "add," << id.value << ',' << meta << ",ok\n";
        continue;
      }
      std::optional<FactId> target;
      for (std::size_t e = 0; e < db.size(); ++e) {
        if (db.meta(e) == meta) target = db.id_at(e);
      }
      if (!target) throw std::runtime_error("update: no entry for fact " + meta);
      db.update(*target, residuals.col(col), DenseVector(keys.col(col)));
      log << "update," << target->value << ',' << meta << ",ok\n";
    }
  } else if (c.op == "remove") {
    for (const auto id : c.ids) {
      const auto entry = db.find(FactId{id});
      if (!entry) throw std::runtime_error("remove: unknown fact id " + std::to_string(id));
      const std::string meta = db.meta(*entry);
      db.remove(FactId{id});
      log << "remove," << id << ',' << meta << ",ok\n";
    }
  }
  if (c.op == "list") {
    std::ostringstream entries;
    entries << "fact,meta,key_norm,residual_norm\n";
    for (std::size_t e = 0; e < db.size(); ++e) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.17g,%.17g", db.key_norm(e), db.residual(e).norm());
      entries << db.id_at(e).value << ',' << db.meta(e) << ',' << buf << '\n';
    }
    ctx.outputs.write_text("entries.csv", entries.str());
  } else {
    db.save(ctx.outputs.claim("db.kvdb"));
    ctx.outputs.write_text("crud.csv", log.str());
  }
  ctx.extra["entries"] = db.size();
  ctx.log << c.op << ": database now has " << db.size() << " entries\n";
}

void write_manifest(Context& ctx) {
  json m;
  m["tool"] = "kvedit";
  m["version"] = KVEDIT_VERSION;
  m["command"] = ctx.cfg.command;
  m["config"] = to_json(ctx.cfg, ctx.model ? ctx.model->config() : ctx.cfg.model);
  m["seeds"] = {{"seed", ctx.cfg.seed},
                {"model_seed", ctx.model ? ctx.model->config().seed : ctx.cfg.model.seed},
                {"preserved_seed", preserved_seed(ctx.cfg)}};
  m["formats"] = {{"database", 1}, {"model", 1}, {"matrix", 1}};
  m["build"] = {{"compiler", __VERSION__},
                {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                              std::to_string(EIGEN_MAJOR_VERSION) + "." +
                              std::to_string(EIGEN_MINOR_VERSION)}};
  m["facts"] = ctx.facts.size();
  m["result"] = ctx.extra;
  json outputs = ctx.outputs.names();
  outputs.push_back("manifest.json");
  m["outputs"] = outputs;
  ctx.outputs.write_text("manifest.json", m.dump(2) + "\n");
}

}  // namespace

int run(const RunConfig& config, std::ostream& log) {
  config.validate();
  Outputs outputs(config.out);
  Context ctx{config, log, outputs, std::nullopt, {}, json::object()};
  if (config.command != "bench" && !(config.command == "crud" && config.op != "add" &&
                                     config.op != "update")) {
    ctx.model = make_model(config);
  }
  if (config.facts_path) {
    ctx.facts = load_facts(*config.facts_path);
  } else if (config.synth) {
    ctx.facts = synth_facts(*config.synth, *ctx.model, config.seed);
  }

  const std::string& cmd = config.command;
  if (cmd == "build-db") cmd_build_db(ctx);
  else if (cmd == "edit") cmd_edit(ctx);
  else if (cmd == "eval") cmd_eval(ctx);
  else if (cmd == "query") cmd_query(ctx);
  else if (cmd == "diagnose") cmd_diagnose(ctx);
  else if (cmd == "bench") cmd_bench(ctx);
  else if (cmd == "crud") cmd_crud(ctx);

  write_manifest(ctx);
  outputs.commit();
  return 0;
}

namespace {

std::string one_line(std::string s) {
  const auto nl = s.find('\n');
  if (nl != std::string::npos) s.resize(nl);
  return s;
}

}  // namespace

int main_entry(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig config;
  try {
    config = parse_args(argc, argv);
  } catch (const CLI::CallForHelp&) {
    CLI::App help_app{"kvedit"};
    out << "usage: kvedit <build-db|edit|query|eval|diagnose|bench|crud> [options]\n"
           "options: --method --gamma --beta --layers --facts --synth --seed --out --jobs\n"
           "         --db --config --model --mode --schedule --steps --lr --kl-weight\n"
           "         --prefixes --clamp --key-prefixes --preserved --prompt --op --ids\n"
           "         --sizes --queries --vocab --d-model --d-ffn --model-layers --model-seed\n";
    return 0;
  } catch (const UsageError& e) {
    const std::string what = e.what();
    err << "error: usage: " << one_line(what) << "\n";
    const auto nl = what.find('\n');
    if (nl != std::string::npos) err << what.substr(nl + 1);
    return 2;
  }
  try {
    return run(config, out);
  } catch (const UsageError& e) {
    err << "error: usage: " << one_line(e.what()) << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: runtime: " << one_line(e.what()) << "\n";
    return 1;
  }
}

}  // namespace kvedit::cli
