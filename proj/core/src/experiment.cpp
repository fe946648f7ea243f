#include "advlat/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace advlat {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// files

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  const fs::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed for " + path);
}

// ---------------------------------------------------------------------------
// config

namespace {

std::string resolve(const std::string& p, const std::string& base) {
  if (p.empty() || base.empty() || fs::path(p).is_absolute()) return p;
  return (fs::path(base) / p).lexically_normal().string();
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [k, v] : j.items()) {
    (void)v;
    if (!known.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

Arch default_arch(Domain d) {
  switch (d) {
    case Domain::vector: return Arch::mlp;
    case Domain::image: return Arch::cnn;
    case Domain::text: return Arch::lstm;
    case Domain::graph: return Arch::gcn;
  }
  return Arch::mlp;
}

std::string to_string(SplitReading r) { return r == SplitReading::of_all ? "of_all" : "of_labeled"; }

SplitReading reading_from_string(const std::string& s) {
  if (s == "of_all") return SplitReading::of_all;
  if (s == "of_labeled") return SplitReading::of_labeled;
  throw ConfigError("unknown split reading '" + s + "' (expected of_all or of_labeled)");
}

}  // namespace

void ExperimentConfig::validate() const {
  const auto& m = attack.method;
  if (m != "gen-vae" && m != "gen-ae" && m != "pgd" && m != "fgsm") {
    throw ConfigError("unknown attack method '" + m + "' (expected gen-vae, gen-ae, pgd or fgsm)");
  }
  const int sources = !data.synthetic.empty() + !data.path.empty() + !data.content.empty();
  if (sources != 1) throw ConfigError("data needs exactly one of synthetic, path or content/cites");
  if (!data.content.empty() && data.cites.empty()) throw ConfigError("citation data needs a cites file");
  if (eval.seeds.empty()) throw ConfigError("eval.seeds must not be empty");
  if (eval.splits.empty()) throw ConfigError("eval.splits must not be empty");
  if (eval.workers == 0) throw ConfigError("eval.workers must be positive");
  if (!target.checkpoint.empty() && !fs::exists(target.checkpoint)) {
    throw ConfigError("target checkpoint " + target.checkpoint + " does not exist");
  }
  if (!attack.checkpoint.empty() && !fs::exists(attack.checkpoint)) {
    throw ConfigError("attacker checkpoint " + attack.checkpoint + " does not exist");
  }
  if (!attack.generative() && domain != Domain::vector && domain != Domain::image) {
    throw ConfigError("baseline " + m + " attacks vector and image domains only");
  }
  try {
    attack.generator.validate();
    if (!attack.generative()) attack.pgd.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

json ExperimentConfig::to_json() const {
  json d = json::object();
  if (!data.synthetic.empty()) d = {{"synthetic", data.synthetic}, {"params", data.params}, {"seed", data.seed}};
  if (!data.path.empty()) d = {{"path", data.path}};
  if (!data.content.empty()) {
    d = {{"content", data.content}, {"cites", data.cites}, {"split_seed", data.split_seed}, {"split_reading", to_string(data.reading)}};
  }
  json t = {{"arch", advlat::to_string(target.spec.arch)}, {"hidden", target.spec.hidden},
            {"embed_dim", target.spec.embed_dim}, {"conv_channels", target.spec.conv_channels},
            {"epochs", target.train.epochs}, {"lr", target.train.lr}, {"batch_size", target.train.batch_size},
            {"seed", target.train.seed}};
  if (!target.checkpoint.empty()) t = {{"checkpoint", target.checkpoint}};
  if (!target.save.empty()) t["save"] = target.save;
  json a = attack.generator.to_json();
  a.erase("variational");
  a["method"] = attack.method;
  const json pgd = attack.pgd.to_json();
  for (const auto& [k, v] : pgd.items()) a[k] = v;
  a["seed"] = attack.generator.seed;
  a["graph_mode"] = advlat::to_string(attack.graph_mode);
  a["influencers"] = attack.influencers;
  a["mask_seed"] = attack.mask_seed;
  if (!attack.checkpoint.empty()) a["checkpoint"] = attack.checkpoint;
  if (!attack.save.empty()) a["save"] = attack.save;
  json splits = json::array();
  for (Split s : eval.splits) splits.push_back(advlat::to_string(s));
  json e = {{"splits", splits},         {"resample", eval.resample},
            {"seeds", eval.seeds},       {"retrain_per_seed", eval.retrain_per_seed},
            {"workers", eval.workers},   {"store_tensors", eval.store_tensors}};
  json o = json::object();
  if (!output.json.empty()) o["json"] = output.json;
  if (!output.csv.empty()) o["csv"] = output.csv;
  if (!output.markdown.empty()) o["markdown"] = output.markdown;
  return {{"v", 1}, {"name", name}, {"domain", advlat::to_string(domain)}, {"data", d}, {"target", t},
          {"attack", a}, {"eval", e}, {"output", o}};
}

ExperimentConfig ExperimentConfig::parse(const std::string& text, const std::string& base_dir) {
  ExperimentConfig c;
  c.source_text = text;
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw ConfigError("config must be a json object");
    reject_unknown(j, {"v", "name", "domain", "data", "target", "attack", "eval", "output"}, "config");
    if (!j.contains("v")) throw ConfigError("config lacks the format version field \"v\"");
    if (j.at("v") != 1) throw ConfigError("config version " + j.at("v").dump() + " is not supported (expected 1)");
    c.name = j.value("name", c.name);
    c.domain = domain_from_string(j.at("domain").get<std::string>());

    const json& d = j.at("data");
    reject_unknown(d, {"synthetic", "params", "seed", "path", "content", "cites", "split_seed", "split_reading"}, "data");
    c.data.synthetic = d.value("synthetic", std::string{});
    c.data.params = d.value("params", json::object());
    c.data.seed = d.value("seed", c.data.seed);
    c.data.path = resolve(d.value("path", std::string{}), base_dir);
    c.data.content = resolve(d.value("content", std::string{}), base_dir);
    c.data.cites = resolve(d.value("cites", std::string{}), base_dir);
    c.data.split_seed = d.value("split_seed", c.data.split_seed);
    c.data.reading = reading_from_string(d.value("split_reading", std::string("of_all")));

    const json t = j.value("target", json::object());
    reject_unknown(t, {"checkpoint", "arch", "hidden", "embed_dim", "conv_channels", "epochs", "lr", "batch_size", "seed", "save"}, "target");
    c.target.checkpoint = resolve(t.value("checkpoint", std::string{}), base_dir);
    c.target.spec.arch = t.contains("arch") ? arch_from_string(t.at("arch").get<std::string>()) : default_arch(c.domain);
    c.target.spec.hidden = t.value("hidden", c.target.spec.hidden);
    c.target.spec.embed_dim = t.value("embed_dim", c.target.spec.embed_dim);
    c.target.spec.conv_channels = t.value("conv_channels", c.target.spec.conv_channels);
    c.target.train.epochs = t.value("epochs", c.target.train.epochs);
    c.target.train.lr = t.value("lr", c.target.train.lr);
    c.target.train.batch_size = t.value("batch_size", c.target.train.batch_size);
    c.target.train.seed = t.value("seed", c.target.train.seed);
    c.target.save = resolve(t.value("save", std::string{}), base_dir);

    const json a = j.value("attack", json::object());
    reject_unknown(a, {"method", "lambda", "latent_dim", "tau", "lr", "epochs", "batch_size", "resample", "seed", "hidden",
                       "epsilon", "step", "steps", "random_start", "graph_mode", "influencers", "mask_seed", "checkpoint", "save"},
                   "attack");
    c.attack.method = a.value("method", c.attack.method);
    GeneratorConfig g;
    g.lambda = a.value("lambda", g.lambda);
    g.latent_dim = a.value("latent_dim", g.latent_dim);
    g.tau = a.value("tau", g.tau);
    g.lr = a.value("lr", g.lr);
    g.epochs = a.value("epochs", g.epochs);
    g.batch_size = a.value("batch_size", g.batch_size);
    g.resample = a.value("resample", g.resample);
    g.seed = a.value("seed", g.seed);
    g.hidden = a.value("hidden", g.hidden);
    g.variational = c.attack.method != "gen-ae";
    c.attack.generator = g;
    PgdConfig& p = c.attack.pgd;
    p.epsilon = a.value("epsilon", p.epsilon);
    p.step = a.value("step", p.step);
    p.steps = a.value("steps", p.steps);
    p.random_start = a.value("random_start", p.random_start);
    p.seed = g.seed;
    c.attack.graph_mode = graph_attack_from_string(a.value("graph_mode", std::string("direct")));
    c.attack.influencers = a.value("influencers", c.attack.influencers);
    c.attack.mask_seed = a.value("mask_seed", c.attack.mask_seed);
    c.attack.checkpoint = resolve(a.value("checkpoint", std::string{}), base_dir);
    c.attack.save = resolve(a.value("save", std::string{}), base_dir);

    const json e = j.value("eval", json::object());
    reject_unknown(e, {"splits", "resample", "seeds", "retrain_per_seed", "workers", "store_tensors"}, "eval");
    if (e.contains("splits")) {
      c.eval.splits.clear();
      for (const auto& s : e.at("splits")) c.eval.splits.push_back(split_from_string(s.get<std::string>()));
    }
    c.eval.resample = e.value("resample", g.resample);
    c.eval.seeds = e.value("seeds", c.eval.seeds);
    c.eval.retrain_per_seed = e.value("retrain_per_seed", c.eval.retrain_per_seed);
    c.eval.workers = e.value("workers", c.eval.workers);
    c.eval.store_tensors = e.value("store_tensors", c.eval.store_tensors);

    const json o = j.value("output", json::object());
    reject_unknown(o, {"json", "csv", "markdown"}, "output");
    c.output.json = resolve(o.value("json", std::string{}), base_dir);
    c.output.csv = resolve(o.value("csv", std::string{}), base_dir);
    c.output.markdown = resolve(o.value("markdown", std::string{}), base_dir);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  return parse(read_text_file(path), fs::path(path).parent_path().string());
}

// ---------------------------------------------------------------------------
// context

AnyDataset prepare_data(const DataSpec& spec) {
  if (!spec.synthetic.empty()) return gen_synthetic(spec.synthetic, spec.params, spec.seed);
  if (!spec.path.empty()) return load_dataset(spec.path);
  GraphDataset g = load_citation_graph(spec.content, spec.cites);
  SeededRng rng(spec.split_seed);
  g.splits = split_nodes(g.num_nodes(), rng, spec.reading);
  return g;
}

TargetModel prepare_target(const TargetSetup& setup, const AnyDataset& data) {
  if (!setup.checkpoint.empty()) return TargetModel::load(setup.checkpoint);
  SeededRng rng(setup.train.seed);
  TargetModel t;
  if (const auto* d = std::get_if<Dataset>(&data)) {
    t = TargetModel::create(setup.spec, d->input_shape, d->num_classes, d->vocab_size, rng);
    train_target(t, *d, setup.train);
  } else {
    const auto& g = std::get<GraphDataset>(data);
    t = TargetModel::create(setup.spec, {g.features.extent(1)}, g.num_classes, 0, rng);
    train_target(t, g, setup.train);
  }
  if (!setup.save.empty()) t.save(setup.save);
  return t;
}

std::unique_ptr<AttackProblem> make_problem(const ExperimentConfig& config, const AnyDataset& data, const TargetModel& target) {
  DomainAdapter adapter = DomainAdapter::for_domain(config.domain);
  adapter.tau = config.attack.generator.tau;
  if (const auto* d = std::get_if<Dataset>(&data)) {
    if (d->domain != config.domain) {
      throw ConfigError("config domain " + to_string(config.domain) + " does not match data domain " + to_string(d->domain));
    }
    return std::make_unique<AttackProblem>(target, *d, adapter);
  }
  if (config.domain != Domain::graph) throw ConfigError("config domain " + to_string(config.domain) + " given graph data");
  return std::make_unique<AttackProblem>(target, std::get<GraphDataset>(data), adapter, config.attack.graph_mode,
                                         config.attack.influencers, config.attack.mask_seed);
}

ExperimentContext prepare_context(const ExperimentConfig& config) {
  ExperimentContext ctx;
  ctx.data = std::make_unique<AnyDataset>(prepare_data(config.data));
  ctx.target = std::make_unique<TargetModel>(prepare_target(config.target, *ctx.data));
  ctx.problem = make_problem(config, *ctx.data, *ctx.target);
  return ctx;
}

// ---------------------------------------------------------------------------
// summaries

Stat mean_std(const std::vector<double>& v) {
  Stat s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

SplitSummary summarize(const std::vector<AdversarialRecord>& records, Split split) {
  SplitSummary s;
  s.split = split;
  std::vector<double> dist;
  for (const auto& r : records) {
    if (r.split != split) continue;
    ++s.examples;
    s.success_rate += r.success;
    s.mean_distance += r.distance;
    s.mean_samples += static_cast<double>(r.samples_consumed);
    s.token_change_rate += r.token_change_rate;
    dist.push_back(r.distance);
  }
  if (s.examples == 0) return s;
  const auto n = static_cast<double>(s.examples);
  s.success_rate /= n;
  s.mean_distance /= n;
  s.mean_samples /= n;
  s.token_change_rate /= n;
  std::sort(dist.begin(), dist.end());
  const std::size_t m = dist.size() / 2;
  s.median_distance = dist.size() % 2 ? dist[m] : 0.5 * (dist[m - 1] + dist[m]);
  return s;
}

void summarize_report(AttackReport& report, const std::vector<Split>& splits) {
  for (SeedRun& run : report.runs) {
    run.summaries.clear();
    for (Split s : splits) run.summaries.push_back(summarize(run.records, s));
  }
  report.aggregates.clear();
  for (std::size_t k = 0; k < splits.size(); ++k) {
    std::vector<double> sr, md, med, ms, tc;
    for (const SeedRun& run : report.runs) {
      const SplitSummary& s = run.summaries[k];
      sr.push_back(s.success_rate);
      md.push_back(s.mean_distance);
      med.push_back(s.median_distance);
      ms.push_back(s.mean_samples);
      tc.push_back(s.token_change_rate);
    }
    report.aggregates.push_back({splits[k], mean_std(sr), mean_std(md), mean_std(med), mean_std(ms), mean_std(tc)});
  }
}

void check_aggregates(const AttackReport& report) {
  std::vector<Split> splits;
  for (const auto& a : report.aggregates) splits.push_back(a.split);
  AttackReport copy = report;
  summarize_report(copy, splits);
  if (copy.aggregates != report.aggregates) throw std::logic_error("report aggregates disagree with its records");
  for (std::size_t i = 0; i < copy.runs.size(); ++i) {
    if (copy.runs[i].summaries != report.runs[i].summaries) {
      throw std::logic_error("per-seed summaries disagree with records of seed " + std::to_string(report.runs[i].seed));
    }
  }
}

// ---------------------------------------------------------------------------
// json

namespace {

json tensor_json(const Tensor& t) { return {{"shape", t.shape()}, {"data", t.values()}}; }

Tensor tensor_from(const json& j) {
  return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

json record_json(const AdversarialRecord& r) {
  return {{"example_id", r.example_id},
          {"split", to_string(r.split)},
          {"label", r.label},
          {"predicted", r.predicted},
          {"success", r.success},
          {"distance", r.distance},
          {"token_change_rate", r.token_change_rate},
          {"samples_consumed", r.samples_consumed},
          {"first_success", r.first_success ? json(*r.first_success) : json(nullptr)},
          {"attackers", r.attackers},
          {"original", tensor_json(r.original)},
          {"perturbed", tensor_json(r.perturbed)}};
}

AdversarialRecord record_from(const json& j) {
  AdversarialRecord r;
  r.example_id = j.at("example_id");
  r.split = split_from_string(j.at("split").get<std::string>());
  r.label = j.at("label");
  r.predicted = j.at("predicted");
  r.success = j.at("success");
  r.distance = j.at("distance");
  r.token_change_rate = j.at("token_change_rate");
  r.samples_consumed = j.at("samples_consumed");
  if (!j.at("first_success").is_null()) r.first_success = j.at("first_success").get<std::size_t>();
  r.attackers = j.at("attackers").get<std::vector<std::size_t>>();
  r.original = tensor_from(j.at("original"));
  r.perturbed = tensor_from(j.at("perturbed"));
  return r;
}

json stat_json(const Stat& s) { return {{"mean", s.mean}, {"std", s.std}}; }
Stat stat_from(const json& j) { return {j.at("mean"), j.at("std")}; }

json summary_json(const SplitSummary& s) {
  return {{"split", to_string(s.split)},         {"examples", s.examples},
          {"success_rate", s.success_rate},       {"mean_distance", s.mean_distance},
          {"median_distance", s.median_distance}, {"mean_samples", s.mean_samples},
          {"token_change_rate", s.token_change_rate}};
}

SplitSummary summary_from(const json& j) {
  SplitSummary s;
  s.split = split_from_string(j.at("split").get<std::string>());
  s.examples = j.at("examples");
  s.success_rate = j.at("success_rate");
  s.mean_distance = j.at("mean_distance");
  s.median_distance = j.at("median_distance");
  s.mean_samples = j.at("mean_samples");
  s.token_change_rate = j.at("token_change_rate");
  return s;
}

}  // namespace

json AttackReport::to_json() const {
  json aggs = json::array();
  for (const auto& a : aggregates) {
    aggs.push_back({{"split", advlat::to_string(a.split)},
                    {"success_rate", stat_json(a.success_rate)},
                    {"mean_distance", stat_json(a.mean_distance)},
                    {"median_distance", stat_json(a.median_distance)},
                    {"mean_samples", stat_json(a.mean_samples)},
                    {"token_change_rate", stat_json(a.token_change_rate)}});
  }
  json rs = json::array();
  for (const auto& run : runs) {
    json sums = json::array(), recs = json::array();
    for (const auto& s : run.summaries) sums.push_back(summary_json(s));
    for (const auto& r : run.records) recs.push_back(record_json(r));
    rs.push_back({{"seed", run.seed}, {"summaries", sums}, {"records", recs}});
  }
  return {{"v", 1},
          {"name", name},
          {"method", method},
          {"domain", advlat::to_string(domain)},
          {"resample", resample},
          {"config_echo", config_echo},
          {"target_accuracy", target_accuracy},
          {"attacker", attacker},
          {"aggregates", aggs},
          {"runs", rs},
          {"wall_time_seconds", wall_time_seconds}};
}

AttackReport AttackReport::from_json(const json& j) {
  try {
    if (j.at("v") != 1) throw FormatError("report version " + j.at("v").dump() + " is not supported (expected 1)");
    AttackReport r;
    r.name = j.at("name");
    r.method = j.at("method");
    r.domain = domain_from_string(j.at("domain").get<std::string>());
    r.resample = j.at("resample");
    r.config_echo = j.at("config_echo");
    r.target_accuracy = j.at("target_accuracy");
    r.attacker = j.at("attacker");
    for (const auto& a : j.at("aggregates")) {
      r.aggregates.push_back({split_from_string(a.at("split").get<std::string>()), stat_from(a.at("success_rate")),
                              stat_from(a.at("mean_distance")), stat_from(a.at("median_distance")),
                              stat_from(a.at("mean_samples")), stat_from(a.at("token_change_rate"))});
    }
    for (const auto& run : j.at("runs")) {
      SeedRun s;
      s.seed = run.at("seed");
      for (const auto& x : run.at("summaries")) s.summaries.push_back(summary_from(x));
      for (const auto& x : run.at("records")) s.records.push_back(record_from(x));
      r.runs.push_back(std::move(s));
    }
    r.wall_time_seconds = j.at("wall_time_seconds");
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad report: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// running

namespace {

std::vector<std::size_t> split_ids(const AttackProblem& problem, const std::vector<Split>& splits) {
  std::vector<std::size_t> ids;
  for (Split s : splits) {
    const auto part = problem.examples(s);
    ids.insert(ids.end(), part.begin(), part.end());
  }
  return ids;
}

json accuracy_json(const AnyDataset& data, const TargetModel& target) {
  json out = json::object();
  for (Split s : {Split::train, Split::validation, Split::test}) {
    const AccuracyResult a = std::visit(
        [&](const auto& d) { return accuracy(target, d, d.indices(s)); }, data);
    out[to_string(s)] = a.empty ? json(nullptr) : json(a.accuracy);
  }
  return out;
}

void check_finite(const std::vector<AdversarialRecord>& recs) {
  for (const auto& r : recs) {
    if (!std::isfinite(r.distance)) throw NumericError("non-finite perturbation size for example " + std::to_string(r.example_id));
  }
}

/// Prepared context plus the current attacker.
class Runner {
 public:
  explicit Runner(const ExperimentConfig& config) : config_(config), ctx_(prepare_context(config)) {}

  const AttackProblem& problem() const { return *ctx_.problem; }
  const ExperimentContext& context() const { return ctx_; }

  /// Trains (or loads) the attacker for `gc`; no-op for baselines.
  void prepare_attacker(const GeneratorConfig& gc) {
    if (!config_.attack.generative()) return;
    if (!config_.attack.checkpoint.empty()) {
      gen_.emplace(AttackGenerator::load(config_.attack.checkpoint));
      if (gen_->domain() != config_.domain) throw ConfigError("attacker checkpoint was trained for another domain");
      if (gen_->variational() != (config_.attack.method == "gen-vae")) {
        throw ConfigError("attacker checkpoint variant does not match method " + config_.attack.method);
      }
      summary_ = {{"source", "checkpoint"}};
      return;
    }
    SeededRng rng(gc.seed);
    gen_.emplace(AttackGenerator::create(*ctx_.problem, gc, rng));
    const AttackerHistory h = train_attacker(*gen_, *ctx_.problem, gc);
    summary_ = {{"source", "trained"},
                {"epochs", h.loss.size()},
                {"seed", gc.seed},
                {"lambda", gc.lambda},
                {"final_loss", h.loss.empty() ? 0.0 : h.loss.back()},
                {"final_train_success", h.success_rate.empty() ? 0.0 : h.success_rate.back()}};
    if (!config_.attack.save.empty()) gen_->save(config_.attack.save);
  }

  GeneratorConfig generator_config(std::uint64_t seed) const {
    GeneratorConfig gc = config_.attack.generator;
    gc.variational = config_.attack.method == "gen-vae";
    if (config_.eval.retrain_per_seed) gc.seed = seed;
    return gc;
  }

  std::vector<AdversarialRecord> evaluate(std::uint64_t seed, std::size_t budget) const {
    const auto ids = split_ids(*ctx_.problem, config_.eval.splits);
    std::vector<AdversarialRecord> recs;
    if (config_.attack.generative()) {
      recs = attack_examples(*gen_, *ctx_.problem, ids, budget, seed, config_.eval.workers);
    } else {
      PgdConfig pc = config_.attack.pgd;
      pc.seed = seed;
      recs = run_baseline(baseline_method_from_string(config_.attack.method), *ctx_.problem, ids, pc);
    }
    check_finite(recs);
    return recs;
  }

  const json& attacker_summary() const { return summary_; }
  bool variational() const { return config_.attack.method == "gen-vae"; }

 private:
  const ExperimentConfig& config_;
  ExperimentContext ctx_;
  std::optional<AttackGenerator> gen_;
  json summary_ = json::object();
};

}  // namespace

AttackReport run_experiment(const ExperimentConfig& config) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  Runner runner(config);

  AttackReport report;
  report.name = config.name;
  report.method = config.attack.method;
  report.domain = config.domain;
  report.resample = config.eval.resample;
  report.config_echo = config.source_text.empty() ? config.to_json().dump(2) : config.source_text;
  report.target_accuracy = accuracy_json(*runner.context().data, *runner.context().target);

  const bool retrain = config.eval.retrain_per_seed && config.attack.generative() && config.attack.checkpoint.empty();
  if (!retrain) runner.prepare_attacker(runner.generator_config(0));
  json attackers = json::array();
  for (std::uint64_t seed : config.eval.seeds) {
    if (retrain) {
      runner.prepare_attacker(runner.generator_config(seed));
      attackers.push_back(runner.attacker_summary());
    }
    SeedRun run;
    run.seed = seed;
    run.records = runner.evaluate(seed, config.eval.resample);
    if (!config.eval.store_tensors) {
      for (auto& r : run.records) r.original = r.perturbed = Tensor();
    }
    report.runs.push_back(std::move(run));
  }
  report.attacker = retrain ? json{{"per_seed", attackers}} : runner.attacker_summary();
  summarize_report(report, config.eval.splits);
  report.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

ResampleSweep resample_sweep(const ExperimentConfig& config, const std::vector<std::size_t>& budgets) {
  config.validate();
  if (budgets.empty()) throw ConfigError("resample sweep needs at least one budget");
  if (!std::is_sorted(budgets.begin(), budgets.end())) throw ConfigError("resample budgets must be sorted ascending");
  if (!config.attack.generative()) throw ConfigError("resample sweeps apply to generator attacks only");
  Runner runner(config);
  const bool retrain = config.eval.retrain_per_seed && config.attack.checkpoint.empty();
  if (!retrain) runner.prepare_attacker(runner.generator_config(0));

  ResampleSweep sweep;
  sweep.seeds = config.eval.seeds;
  for (Split s : config.eval.splits) sweep.series.push_back({s, budgets, {}, {}, {}});
  std::vector<std::vector<std::vector<double>>> samples(config.eval.splits.size());
  for (std::uint64_t seed : config.eval.seeds) {
    if (retrain) runner.prepare_attacker(runner.generator_config(seed));
    const auto recs = runner.evaluate(seed, budgets.back());
    for (std::size_t k = 0; k < config.eval.splits.size(); ++k) {
      std::vector<double> rates, used;
      for (std::size_t b : budgets) {
        double hit = 0.0, consumed = 0.0, n = 0.0;
        for (const auto& r : recs) {
          if (r.split != config.eval.splits[k]) continue;
          hit += succeeds_within(r, b);
          consumed += static_cast<double>(samples_within(r, b, runner.variational()));
          n += 1.0;
        }
        rates.push_back(n > 0 ? hit / n : 0.0);
        used.push_back(n > 0 ? consumed / n : 0.0);
      }
      sweep.series[k].per_seed.push_back(rates);
      samples[k].push_back(used);
    }
  }
  for (std::size_t k = 0; k < sweep.series.size(); ++k) {
    auto& series = sweep.series[k];
    for (std::size_t b = 0; b < budgets.size(); ++b) {
      std::vector<double> r, u;
      for (std::size_t s = 0; s < series.per_seed.size(); ++s) {
        r.push_back(series.per_seed[s][b]);
        u.push_back(samples[k][s][b]);
      }
      series.success_rate.push_back(mean_std(r));
      series.mean_samples.push_back(mean_std(u));
    }
  }
  return sweep;
}

LambdaSweep lambda_sweep(const ExperimentConfig& config, const std::vector<double>& lambdas) {
  config.validate();
  if (!config.attack.generative()) throw ConfigError("lambda sweeps apply to generator attacks only");
  if (!config.attack.checkpoint.empty()) throw ConfigError("lambda sweeps train their own attackers; drop attack.checkpoint");
  for (double l : lambdas)
    if (!(l >= 0.0)) throw ConfigError("lambda values must be >= 0");
  Runner runner(config);
  LambdaSweep sweep;
  for (double lambda : lambdas) {
    // shared attacker across seeds unless each seed retrains its own
    auto train_for = [&](std::uint64_t seed) {
      GeneratorConfig gc = runner.generator_config(seed);
      gc.lambda = lambda;
      runner.prepare_attacker(gc);
    };
    if (!config.eval.retrain_per_seed) train_for(0);
    std::vector<LambdaPoint> points;
    for (Split s : config.eval.splits) points.push_back({lambda, s, {}, {}, {}, {}, {}});
    std::vector<std::vector<double>> change(points.size());
    for (std::uint64_t seed : config.eval.seeds) {
      if (config.eval.retrain_per_seed) train_for(seed);
      const auto recs = runner.evaluate(seed, config.eval.resample);
      for (std::size_t k = 0; k < points.size(); ++k) {
        const SplitSummary s = summarize(recs, points[k].split);
        points[k].per_seed_success.push_back(s.success_rate);
        points[k].per_seed_distance.push_back(s.mean_distance);
        change[k].push_back(s.token_change_rate);
      }
    }
    for (std::size_t k = 0; k < points.size(); ++k) {
      points[k].success_rate = mean_std(points[k].per_seed_success);
      points[k].mean_distance = mean_std(points[k].per_seed_distance);
      points[k].token_change_rate = mean_std(change[k]);
      sweep.points.push_back(std::move(points[k]));
    }
  }
  return sweep;
}

json ResampleSweep::to_json() const {
  json series_j = json::array();
  for (const auto& s : series) {
    json rates = json::array(), used = json::array();
    for (const auto& r : s.success_rate) rates.push_back(stat_json(r));
    for (const auto& u : s.mean_samples) used.push_back(stat_json(u));
    series_j.push_back({{"split", advlat::to_string(s.split)}, {"budgets", s.budgets}, {"per_seed", s.per_seed},
                        {"success_rate", rates}, {"mean_samples", used}});
  }
  return {{"v", 1}, {"seeds", seeds}, {"series", series_j}};
}

json LambdaSweep::to_json() const {
  json pts = json::array();
  for (const auto& p : points) {
    pts.push_back({{"lambda", p.lambda},
                   {"split", advlat::to_string(p.split)},
                   {"success_rate", stat_json(p.success_rate)},
                   {"mean_distance", stat_json(p.mean_distance)},
                   {"token_change_rate", stat_json(p.token_change_rate)},
                   {"per_seed_success", p.per_seed_success},
                   {"per_seed_distance", p.per_seed_distance}});
  }
  return {{"v", 1}, {"points", pts}};
}

// ---------------------------------------------------------------------------
// rendering

ReportFormat report_format_from_string(const std::string& s) {
  if (s == "json") return ReportFormat::json;
  if (s == "csv") return ReportFormat::csv;
  if (s == "markdown" || s == "md") return ReportFormat::markdown;
  throw ConfigError("unknown report format '" + s + "' (expected json, csv or markdown)");
}

namespace {

std::string num(double v, int precision = 17) {
  std::ostringstream ss;
  ss << std::setprecision(precision) << v;
  return ss.str();
}

std::string pct(const Stat& s) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(2) << 100.0 * s.mean << "% ± " << 100.0 * s.std << "%";
  return ss.str();
}

std::string fixed(const Stat& s, int precision = 4) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(precision) << s.mean << " ± " << s.std;
  return ss.str();
}

std::string render_csv(const AttackReport& report) {
  std::string out = "example_id,split,success,delta,samples_consumed,seed\n";
  for (const auto& run : report.runs) {
    for (const auto& r : run.records) {
      out += std::to_string(r.example_id) + ',' + to_string(r.split) + ',' + (r.success ? "1" : "0") + ',' +
             num(r.distance) + ',' + std::to_string(r.samples_consumed) + ',' + std::to_string(run.seed) + '\n';
    }
  }
  return out;
}

std::string render_markdown(const AttackReport& report) {
  std::ostringstream md;
  md << "# " << report.name << "\n\n";
  md << "Method `" << report.method << "` on the " << to_string(report.domain) << " domain, resample budget "
     << report.resample << ", " << report.runs.size() << " seed(s).\n\n";
  md << "| Method | Split | Examples | Success (mean ± std) | Mean Δ | Median Δ | Mean samples |";
  const bool text = report.domain == Domain::text;
  if (text) md << " Token change |";
  md << "\n|---|---|---|---|---|---|---|" << (text ? "---|" : "") << "\n";
  for (std::size_t k = 0; k < report.aggregates.size(); ++k) {
    const auto& a = report.aggregates[k];
    const std::size_t n = report.runs.empty() ? 0 : report.runs.front().summaries.at(k).examples;
    md << "| " << report.method << " | " << to_string(a.split) << " | " << n << " | " << pct(a.success_rate) << " | "
       << fixed(a.mean_distance) << " | " << fixed(a.median_distance) << " | " << fixed(a.mean_samples, 3) << " |";
    if (text) md << ' ' << pct(a.token_change_rate) << " |";
    md << '\n';
  }
  if (!report.target_accuracy.empty()) {
    md << "\nTarget accuracy:";
    for (const auto& [k, v] : report.target_accuracy.items()) md << ' ' << k << '=' << (v.is_null() ? "n/a" : num(v.get<double>(), 4));
    md << "\n";
  }
  md << "\nsuccess_rate_exact: ";
  for (std::size_t k = 0; k < report.aggregates.size(); ++k) {
    md << (k ? ", " : "") << to_string(report.aggregates[k].split) << '=' << num(report.aggregates[k].success_rate.mean);
  }
  md << "\n";
  return md.str();
}

}  // namespace

std::string render_report(const AttackReport& report, ReportFormat format) {
  switch (format) {
    case ReportFormat::json: return report.to_json().dump(2) + "\n";
    case ReportFormat::csv: return render_csv(report);
    case ReportFormat::markdown: return render_markdown(report);
  }
  return {};
}

void emit_report(const AttackReport& report, ReportFormat format, const std::string& path) {
  check_aggregates(report);
  write_text_file(path, render_report(report, format));
}

std::string render_sweep_csv(const ResampleSweep& sweep) {
  std::string out = "split,budget,success_mean,success_std,samples_mean,samples_std\n";
  for (const auto& s : sweep.series) {
    for (std::size_t b = 0; b < s.budgets.size(); ++b) {
      out += to_string(s.split) + ',' + std::to_string(s.budgets[b]) + ',' + num(s.success_rate[b].mean) + ',' +
             num(s.success_rate[b].std) + ',' + num(s.mean_samples[b].mean) + ',' + num(s.mean_samples[b].std) + '\n';
    }
  }
  return out;
}

std::string render_sweep_csv(const LambdaSweep& sweep) {
  std::string out = "lambda,split,success_mean,success_std,delta_mean,delta_std,token_change_mean\n";
  for (const auto& p : sweep.points) {
    out += num(p.lambda) + ',' + to_string(p.split) + ',' + num(p.success_rate.mean) + ',' + num(p.success_rate.std) + ',' +
           num(p.mean_distance.mean) + ',' + num(p.mean_distance.std) + ',' + num(p.token_change_rate.mean) + '\n';
  }
  return out;
}

}  // namespace advlat
