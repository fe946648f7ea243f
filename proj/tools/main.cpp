// advlat command-line runner.
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>

#include "advlat/experiment.hpp"

using namespace advlat;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kIoError = 3;
constexpr int kNumericError = 4;

Domain domain_of(const AnyDataset& d) {
  if (const auto* x = std::get_if<Dataset>(&d)) return x->domain;
  return Domain::graph;
}

Domain check_domain(const AnyDataset& data, const std::string& requested) {
  const Domain actual = domain_of(data);
  if (!requested.empty() && domain_from_string(requested) != actual) {
    throw ConfigError("--domain " + requested + " does not match the data's " + to_string(actual) + " domain");
  }
  return actual;
}

std::vector<Split> parse_splits(const std::vector<std::string>& names) {
  std::vector<Split> out;
  for (const auto& n : names) out.push_back(split_from_string(n));
  return out;
}

/// Shared attack-side options of attack-train, attack-eval and baseline-attack.
struct GraphOpts {
  std::string mode = "direct";
  std::size_t influencers = 5;
  std::uint64_t mask_seed = 0;

  void add(CLI::App* cmd) {
    cmd->add_option("--graph-mode", mode, "direct or influencer")->check(CLI::IsMember({"direct", "influencer"}));
    cmd->add_option("--influencers", influencers, "attacker nodes per target");
    cmd->add_option("--mask-seed", mask_seed, "seed for influencer sets");
  }
  void apply(AttackSpec& a) const {
    a.graph_mode = graph_attack_from_string(mode);
    a.influencers = influencers;
    a.mask_seed = mask_seed;
  }
};

struct ReportOpts {
  std::string json_path, csv_path, md_path;

  void add(CLI::App* cmd) {
    cmd->add_option("--report", json_path, "json report path")->required();
    cmd->add_option("--csv", csv_path, "per-example csv path");
    cmd->add_option("--markdown", md_path, "aggregate table path");
  }
};

void emit_all(const AttackReport& r, const std::string& json_path, const std::string& csv_path, const std::string& md_path) {
  if (!json_path.empty()) emit_report(r, ReportFormat::json, json_path);
  if (!csv_path.empty()) emit_report(r, ReportFormat::csv, csv_path);
  if (!md_path.empty()) emit_report(r, ReportFormat::markdown, md_path);
  std::cout << render_report(r, ReportFormat::markdown);
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Latent-variable adversarial attack generators and baselines"};
  app.require_subcommand(1);

  // gen-data
  std::string gd_kind, gd_params = "{}", gd_out, gd_content, gd_cites, gd_reading = "of_all";
  std::uint64_t gd_seed = 0, gd_split_seed = 0;
  auto* gen_data = app.add_subcommand("gen-data", "generate a synthetic dataset or import a citation graph");
  gen_data->add_option("--kind", gd_kind, "blobs, rings, images, tokens or sbm-graph");
  gen_data->add_option("--params", gd_params, "generator parameters as json");
  gen_data->add_option("--seed", gd_seed);
  gen_data->add_option("--content", gd_content, "planetoid .content file");
  gen_data->add_option("--cites", gd_cites, "planetoid .cites file");
  gen_data->add_option("--split-seed", gd_split_seed);
  gen_data->add_option("--split-reading", gd_reading)->check(CLI::IsMember({"of_all", "of_labeled"}));
  gen_data->add_option("--out", gd_out)->required();

  // train-target
  std::string tt_arch, tt_data, tt_out;
  TargetSpec tt_spec;
  TrainConfig tt_train;
  auto* train_target_cmd = app.add_subcommand("train-target", "train a target classifier");
  train_target_cmd->add_option("--arch", tt_arch, "mlp, cnn, lstm or gcn")->required();
  train_target_cmd->add_option("--data", tt_data)->required();
  train_target_cmd->add_option("--epochs", tt_train.epochs);
  train_target_cmd->add_option("--lr", tt_train.lr);
  train_target_cmd->add_option("--batch-size", tt_train.batch_size);
  train_target_cmd->add_option("--seed", tt_train.seed);
  train_target_cmd->add_option("--hidden", tt_spec.hidden);
  train_target_cmd->add_option("--embed-dim", tt_spec.embed_dim);
  train_target_cmd->add_option("--conv-channels", tt_spec.conv_channels);
  train_target_cmd->add_option("--out", tt_out)->required();

  // attack-train
  std::string at_target, at_data, at_domain, at_method = "gen-vae", at_out;
  GeneratorConfig at_cfg;
  GraphOpts at_graph;
  auto* attack_train = app.add_subcommand("attack-train", "train an attack generator against a frozen target");
  attack_train->add_option("--target", at_target)->required();
  attack_train->add_option("--data", at_data)->required();
  attack_train->add_option("--domain", at_domain, "vector, image, text or graph (checked against the data)");
  attack_train->add_option("--method", at_method)->check(CLI::IsMember({"gen-vae", "gen-ae"}));
  attack_train->add_option("--lambda", at_cfg.lambda);
  attack_train->add_option("--latent-d", at_cfg.latent_dim);
  attack_train->add_option("--tau", at_cfg.tau);
  attack_train->add_option("--epochs", at_cfg.epochs);
  attack_train->add_option("--lr", at_cfg.lr);
  attack_train->add_option("--batch-size", at_cfg.batch_size);
  attack_train->add_option("--hidden", at_cfg.hidden);
  attack_train->add_option("--seed", at_cfg.seed);
  at_graph.add(attack_train);
  attack_train->add_option("--out", at_out)->required();

  // attack-eval
  std::string ae_attacker, ae_target, ae_data, ae_domain;
  std::vector<std::string> ae_splits = {"test"};
  std::vector<std::uint64_t> ae_seeds = {0};
  std::size_t ae_resample = 0, ae_workers = 1;
  double ae_tau = 0.0;  // 0 keeps the attacker's training temperature
  GraphOpts ae_graph;
  ReportOpts ae_report;
  auto* attack_eval = app.add_subcommand("attack-eval", "evaluate a trained generator");
  attack_eval->add_option("--attacker", ae_attacker)->required();
  attack_eval->add_option("--target", ae_target)->required();
  attack_eval->add_option("--data", ae_data)->required();
  attack_eval->add_option("--domain", ae_domain);
  attack_eval->add_option("--split", ae_splits, "train, validation or test (repeatable)");
  attack_eval->add_option("--resample", ae_resample);
  attack_eval->add_option("--seeds", ae_seeds)->delimiter(',');
  attack_eval->add_option("--workers", ae_workers);
  attack_eval->add_option("--tau", ae_tau, "soft mixture temperature (text)");
  ae_graph.add(attack_eval);
  ae_report.add(attack_eval);

  // baseline-attack
  std::string ba_method, ba_target, ba_data, ba_domain;
  std::vector<std::string> ba_splits = {"train", "test"};
  PgdConfig ba_cfg;
  ReportOpts ba_report;
  auto* baseline = app.add_subcommand("baseline-attack", "run FGSM or l2 PGD");
  baseline->add_option("--method", ba_method)->required()->check(CLI::IsMember({"fgsm", "pgd"}));
  baseline->add_option("--eps", ba_cfg.epsilon);
  baseline->add_option("--steps", ba_cfg.steps);
  baseline->add_option("--step-size", ba_cfg.step);
  baseline->add_flag("--random-start", ba_cfg.random_start);
  baseline->add_option("--seed", ba_cfg.seed);
  baseline->add_option("--target", ba_target)->required();
  baseline->add_option("--data", ba_data)->required();
  baseline->add_option("--domain", ba_domain);
  baseline->add_option("--split", ba_splits);
  ba_report.add(baseline);

  // run / sweeps / report
  std::string run_config;
  auto* run = app.add_subcommand("run", "run an experiment config");
  run->add_option("--config", run_config)->required()->check(CLI::ExistingFile);

  std::string rs_config, rs_out, rs_csv;
  std::vector<std::size_t> rs_budgets = {0, 1, 2, 5, 10, 20, 50, 100};
  auto* rsweep = app.add_subcommand("resample-sweep", "success rate against resample budget");
  rsweep->add_option("--config", rs_config)->required()->check(CLI::ExistingFile);
  rsweep->add_option("--budgets", rs_budgets)->delimiter(',');
  rsweep->add_option("--out", rs_out, "json output");
  rsweep->add_option("--csv", rs_csv);

  std::string ls_config, ls_out, ls_csv;
  std::vector<double> ls_lambdas = {0.01, 0.1, 1.0};
  auto* lsweep = app.add_subcommand("lambda-sweep", "success and perturbation size against lambda");
  lsweep->add_option("--config", ls_config)->required()->check(CLI::ExistingFile);
  lsweep->add_option("--lambdas", ls_lambdas)->delimiter(',');
  lsweep->add_option("--out", ls_out, "json output");
  lsweep->add_option("--csv", ls_csv);

  std::string rp_in, rp_format = "markdown", rp_out;
  auto* report = app.add_subcommand("report", "re-render a json report");
  report->add_option("--in", rp_in)->required();
  report->add_option("--format", rp_format)->check(CLI::IsMember({"json", "csv", "markdown", "md"}));
  report->add_option("--out", rp_out, "output path; stdout when omitted");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  if (*gen_data) {
    AnyDataset d;
    if (!gd_content.empty()) {
      if (gd_cites.empty()) throw ConfigError("--content needs --cites");
      DataSpec spec;
      spec.content = gd_content;
      spec.cites = gd_cites;
      spec.split_seed = gd_split_seed;
      spec.reading = gd_reading == "of_all" ? SplitReading::of_all : SplitReading::of_labeled;
      d = prepare_data(spec);
    } else {
      if (gd_kind.empty()) throw ConfigError("gen-data needs --kind or --content/--cites");
      json params;
      try {
        params = json::parse(gd_params);
      } catch (const json::exception& e) {
        throw ConfigError(std::string("--params is not valid json: ") + e.what());
      }
      d = gen_synthetic(gd_kind, params, gd_seed);
    }
    std::visit([&](const auto& x) { save_dataset(gd_out, x); }, d);
    std::cout << "wrote " << gd_out << '\n';
    return kOk;
  }

  if (*train_target_cmd) {
    TargetSetup setup;
    setup.spec = tt_spec;
    setup.spec.arch = arch_from_string(tt_arch);
    setup.train = tt_train;
    setup.save = tt_out;
    const AnyDataset data = load_dataset(tt_data);
    const TargetModel t = prepare_target(setup, data);
    for (Split s : {Split::train, Split::validation, Split::test}) {
      const AccuracyResult a = std::visit([&](const auto& d) { return accuracy(t, d, d.indices(s)); }, data);
      std::cout << to_string(s) << "_accuracy " << (a.empty ? std::string("n/a") : std::to_string(a.accuracy)) << '\n';
    }
    std::cout << "wrote " << tt_out << '\n';
    return kOk;
  }

  if (*attack_train) {
    ExperimentConfig c;
    c.data.path = at_data;
    const AnyDataset data = load_dataset(at_data);
    c.domain = check_domain(data, at_domain);
    c.target.checkpoint = at_target;
    c.attack.method = at_method;
    c.attack.generator = at_cfg;
    c.attack.generator.variational = at_method == "gen-vae";
    at_graph.apply(c.attack);
    c.validate();
    const TargetModel target = TargetModel::load(at_target);
    const auto problem = make_problem(c, data, target);
    SeededRng rng(c.attack.generator.seed);
    AttackGenerator g = AttackGenerator::create(*problem, c.attack.generator, rng);
    const AttackerHistory h = train_attacker(g, *problem, c.attack.generator);
    g.save(at_out);
    std::cout << "epochs " << h.loss.size() << "\nfinal_loss " << (h.loss.empty() ? 0.0 : h.loss.back())
              << "\nfinal_train_success " << (h.success_rate.empty() ? 0.0 : h.success_rate.back()) << "\nwrote " << at_out
              << '\n';
    return kOk;
  }

  if (*attack_eval) {
    ExperimentConfig c;
    c.name = "attack-eval";
    c.data.path = ae_data;
    c.domain = check_domain(load_dataset(ae_data), ae_domain);
    c.target.checkpoint = ae_target;
    c.attack.checkpoint = ae_attacker;
    const AttackGenerator g = AttackGenerator::load(ae_attacker);
    c.attack.method = g.variational() ? "gen-vae" : "gen-ae";
    c.attack.generator = g.config();
    if (ae_tau > 0.0) c.attack.generator.tau = ae_tau;
    ae_graph.apply(c.attack);
    c.eval.splits = parse_splits(ae_splits);
    c.eval.resample = ae_resample;
    c.eval.seeds = ae_seeds;
    c.eval.workers = ae_workers;
    c.eval.store_tensors = c.domain != Domain::graph;
    emit_all(run_experiment(c), ae_report.json_path, ae_report.csv_path, ae_report.md_path);
    return kOk;
  }

  if (*baseline) {
    ExperimentConfig c;
    c.name = "baseline-" + ba_method;
    c.data.path = ba_data;
    c.domain = check_domain(load_dataset(ba_data), ba_domain);
    c.target.checkpoint = ba_target;
    c.attack.method = ba_method;
    c.attack.pgd = ba_cfg;
    c.eval.splits = parse_splits(ba_splits);
    c.eval.seeds = {ba_cfg.seed};
    emit_all(run_experiment(c), ba_report.json_path, ba_report.csv_path, ba_report.md_path);
    return kOk;
  }

  if (*run) {
    const ExperimentConfig c = ExperimentConfig::load(run_config);
    emit_all(run_experiment(c), c.output.json, c.output.csv, c.output.markdown);
    return kOk;
  }

  if (*rsweep) {
    const ResampleSweep s = resample_sweep(ExperimentConfig::load(rs_config), rs_budgets);
    if (!rs_out.empty()) write_text_file(rs_out, s.to_json().dump(2) + "\n");
    if (!rs_csv.empty()) write_text_file(rs_csv, render_sweep_csv(s));
    std::cout << render_sweep_csv(s);
    return kOk;
  }

  if (*lsweep) {
    const LambdaSweep s = lambda_sweep(ExperimentConfig::load(ls_config), ls_lambdas);
    if (!ls_out.empty()) write_text_file(ls_out, s.to_json().dump(2) + "\n");
    if (!ls_csv.empty()) write_text_file(ls_csv, render_sweep_csv(s));
    std::cout << render_sweep_csv(s);
    return kOk;
  }

  if (*report) {
    json j;
    try {
      j = json::parse(read_text_file(rp_in));
    } catch (const json::exception& e) {
      throw FormatError(rp_in + ": " + e.what());
    }
    const AttackReport r = AttackReport::from_json(j);
    check_aggregates(r);
    const std::string text = render_report(r, report_format_from_string(rp_format));
    if (rp_out.empty()) {
      std::cout << text;
    } else {
      write_text_file(rp_out, text);
    }
    return kOk;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumericError;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIoError;
  } catch (const FormatError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIoError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::out_of_range& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
