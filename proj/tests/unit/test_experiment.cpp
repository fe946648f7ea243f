#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "advlat/experiment.hpp"

using namespace advlat;
using nlohmann::json;

namespace {

json blob_config(const std::string& method) {
  return {{"v", 1},
          {"name", "blobs-" + method},
          {"domain", "vector"},
          {"data", {{"synthetic", "blobs"}, {"params", {{"classes", 2}, {"samples", 200}, {"dim", 4}, {"separation", 2.0}, {"spread", 0.4}}}, {"seed", 5}}},
          {"target", {{"arch", "mlp"}, {"hidden", 16}, {"epochs", 40}, {"lr", 0.01}, {"seed", 1}}},
          {"attack", {{"method", method}, {"lambda", 0.1}, {"latent_dim", 4}, {"hidden", 16}, {"epochs", 20}, {"lr", 0.01}, {"seed", 3}}},
          {"eval", {{"splits", {"train", "test"}}, {"resample", 0}, {"seeds", {0, 1, 2}}}}};
}

ExperimentConfig parse(const json& j) { return ExperimentConfig::parse(j.dump(2)); }

json without_wall_time(const AttackReport& r) {
  json j = r.to_json();
  j.erase("wall_time_seconds");
  return j;
}

std::filesystem::path scratch() {
  const auto dir = std::filesystem::temp_directory_path() / "advlat_experiment_tests";
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE("experiment") {
  TEST_CASE("config validation") {
    json j = blob_config("pgd");
    CHECK_NOTHROW(parse(j));
    j.erase("v");
    CHECK_THROWS_AS(parse(j), ConfigError);
    j["v"] = 2;
    CHECK_THROWS_AS(parse(j), ConfigError);
    j = blob_config("pgd");
    j["surprise"] = 1;
    CHECK_THROWS_AS(parse(j), ConfigError);
    j = blob_config("pgd");
    j["eval"]["seeds"] = json::array();
    CHECK_THROWS_AS(parse(j), ConfigError);
    j = blob_config("cw");
    CHECK_THROWS_AS(parse(j), ConfigError);
    j = blob_config("pgd");
    j["target"] = {{"checkpoint", "/nonexistent/target.json"}};
    CHECK_THROWS_AS(parse(j), ConfigError);
    j = blob_config("pgd");
    j["attack"]["epsilon"] = -1.0;
    CHECK_THROWS_AS(parse(j), ConfigError);
    j = blob_config("pgd");
    j["domain"] = "text";
    CHECK_THROWS_AS(parse(j), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse("{not json"), ConfigError);
  }

  TEST_CASE("config json round trip and defaults") {
    const ExperimentConfig c = parse(blob_config("gen-ae"));
    CHECK_FALSE(c.attack.generator.variational);
    CHECK(c.attack.generator.lambda == 0.1);
    CHECK(c.eval.seeds.size() == 3);
    const ExperimentConfig back = ExperimentConfig::parse(c.to_json().dump());
    CHECK(back.to_json() == c.to_json());
  }

  TEST_CASE("pgd baseline experiment reaches high train success") {
    ExperimentConfig c = parse(blob_config("pgd"));
    const AttackReport r = run_experiment(c);
    CHECK(r.target_accuracy.at("test").get<double>() >= 0.95);
    REQUIRE(r.aggregates.size() == 2);
    CHECK(r.aggregates[0].split == Split::train);
    CHECK(r.aggregates[0].success_rate.mean >= 0.95);
    CHECK(r.config_echo == c.source_text);
    CHECK_NOTHROW(check_aggregates(r));
  }

  TEST_CASE("deterministic variant consumes exactly one sample at any budget") {
    json j = blob_config("gen-ae");
    j["eval"]["resample"] = 25;
    const AttackReport r = run_experiment(parse(j));
    for (const auto& a : r.aggregates) {
      CHECK(a.mean_samples.mean == 1.0);
      CHECK(a.mean_samples.std == 0.0);
      CHECK(a.success_rate.std == 0.0);  // sampling seeds change nothing
    }
  }

  TEST_CASE("reports: json round trip, csv rows, markdown agrees with csv") {
    json j = blob_config("gen-vae");
    j["eval"]["resample"] = 3;
    const AttackReport r = run_experiment(parse(j));
    CHECK(AttackReport::from_json(json::parse(render_report(r, ReportFormat::json))) == r);

    const std::string csv = render_report(r, ReportFormat::csv);
    std::istringstream in(csv);
    std::size_t lines = 0, records = 0;
    double hits = 0.0;
    std::vector<double> per_split_hits(2, 0.0), per_split_n(2, 0.0);
    for (std::string line; std::getline(in, line); ++lines) {
      if (lines == 0) {
        CHECK(line.rfind("example_id,split,success,delta,samples_consumed", 0) == 0);
        continue;
      }
      std::istringstream row(line);
      std::string id, split, success;
      std::getline(row, id, ',');
      std::getline(row, split, ',');
      std::getline(row, success, ',');
      const std::size_t k = split == "train" ? 0 : 1;
      per_split_hits[k] += success == "1";
      per_split_n[k] += 1.0;
      hits += success == "1";
    }
    for (const auto& run : r.runs) records += run.records.size();
    CHECK(lines == records + 1);

    const std::string md = render_report(r, ReportFormat::markdown);
    for (std::size_t k = 0; k < 2; ++k) {
      const double csv_mean = per_split_hits[k] / per_split_n[k];
      const std::string key = std::string(k == 0 ? "train" : "test") + "=";
      const auto pos = md.find(key, md.find("success_rate_exact:"));
      REQUIRE(pos != std::string::npos);
      CHECK(std::stod(md.substr(pos + key.size())) == doctest::Approx(csv_mean).epsilon(1e-12));
    }

    const auto dir = scratch();
    emit_report(r, ReportFormat::csv, (dir / "r.csv").string());
    CHECK(read_text_file((dir / "r.csv").string()) == csv);
    AttackReport tampered = r;
    tampered.aggregates[0].success_rate.mean += 0.01;
    CHECK_THROWS_AS(emit_report(tampered, ReportFormat::json, (dir / "bad.json").string()), std::logic_error);
    tampered = r;
    tampered.runs[0].records[0].success = !tampered.runs[0].records[0].success;
    CHECK_THROWS_AS(check_aggregates(tampered), std::logic_error);
  }

  TEST_CASE("identical config and seed give identical report bytes, for any worker count") {
    json j = blob_config("gen-vae");
    j["eval"]["resample"] = 4;
    const json a = without_wall_time(run_experiment(parse(j)));
    const json b = without_wall_time(run_experiment(parse(j)));
    CHECK(a.dump() == b.dump());
    j["eval"]["workers"] = 3;
    json c = without_wall_time(run_experiment(parse(j)));
    c["config_echo"] = a["config_echo"];
    CHECK(a.dump() == c.dump());
  }

  TEST_CASE("retraining per seed re-seeds the attacker") {
    json j = blob_config("gen-vae");
    j["eval"]["retrain_per_seed"] = true;
    j["eval"]["seeds"] = {4, 5};
    const AttackReport r = run_experiment(parse(j));
    REQUIRE(r.attacker.contains("per_seed"));
    CHECK(r.attacker.at("per_seed").size() == 2);
    CHECK(r.attacker.at("per_seed")[1].at("seed") == 5);
  }

  TEST_CASE("resample sweep") {
    json j = blob_config("gen-vae");
    j["attack"]["epochs"] = 5;
    const ExperimentConfig c = parse(j);
    const ResampleSweep single = resample_sweep(c, {0});
    const AttackReport shot = run_experiment(c);
    for (std::size_t k = 0; k < 2; ++k)
      for (std::size_t s = 0; s < 3; ++s) CHECK(single.series[k].per_seed[s][0] == shot.runs[s].summaries[k].success_rate);

    const ResampleSweep sweep = resample_sweep(c, {0, 1, 2, 5, 10, 20});
    for (const auto& series : sweep.series)
      for (const auto& per_seed : series.per_seed)
        for (std::size_t b = 1; b < per_seed.size(); ++b) CHECK(per_seed[b] >= per_seed[b - 1]);

    const ResampleSweep ae = resample_sweep(parse(blob_config("gen-ae")), {0, 5, 50});
    for (const auto& series : ae.series) {
      for (const auto& per_seed : series.per_seed) {
        CHECK(per_seed[1] == per_seed[0]);
        CHECK(per_seed[2] == per_seed[0]);
      }
      for (const auto& s : series.mean_samples) CHECK(s.mean == 1.0);
    }
    CHECK_THROWS_AS(resample_sweep(c, {5, 1}), ConfigError);
    CHECK_THROWS_AS(resample_sweep(parse(blob_config("pgd")), {0}), ConfigError);
    CHECK(render_sweep_csv(sweep).find("test,20,") != std::string::npos);
  }

  TEST_CASE("lambda sweep shape") {
    json j = blob_config("gen-vae");
    j["attack"]["epochs"] = 3;
    j["eval"]["splits"] = {"test"};
    const LambdaSweep s = lambda_sweep(parse(j), {0.0, 0.5, 2.0});
    REQUIRE(s.points.size() == 3);
    CHECK(s.points[0].lambda == 0.0);
    CHECK(s.points[1].lambda == 0.5);
    CHECK(s.points[2].lambda == 2.0);
    for (const auto& p : s.points) CHECK(p.per_seed_success.size() == 3);
    CHECK_THROWS_AS(lambda_sweep(parse(j), {-1.0}), ConfigError);
  }

  TEST_CASE("lambda sweep: lambda 0 has the highest success in at least 4 of 5 seeds") {
    json j = {{"v", 1},
              {"domain", "text"},
              {"data", {{"synthetic", "tokens"}, {"params", {{"samples", 240}, {"seq_len", 20}, {"vocab", 40}}}, {"seed", 4}}},
              {"target", {{"embed_dim", 8}, {"hidden", 16}, {"epochs", 10}, {"seed", 4}}},
              {"attack", {{"method", "gen-vae"}, {"epochs", 20}, {"latent_dim", 8}, {"hidden", 32}, {"tau", 0.5}, {"lr", 3e-3}}},
              {"eval", {{"splits", {"test"}}, {"seeds", {0, 1, 2, 3, 4}}, {"retrain_per_seed", true}}}};
    const LambdaSweep s = lambda_sweep(parse(j), {0.0, 0.1, 1.0});
    REQUIRE(s.points.size() == 3);
    int top = 0;
    std::ostringstream rates;
    for (std::size_t seed = 0; seed < 5; ++seed) {
      const double at_zero = s.points[0].per_seed_success[seed];
      rates << " [" << at_zero << " " << s.points[1].per_seed_success[seed] << " " << s.points[2].per_seed_success[seed] << "]";
      top += at_zero >= s.points[1].per_seed_success[seed] && at_zero >= s.points[2].per_seed_success[seed];
    }
    INFO("per-seed success at lambda 0, 0.1, 1:" << rates.str());
    CHECK(top >= 4);
  }

  TEST_CASE("text and graph experiments run end to end") {
    json t = {{"v", 1},
              {"domain", "text"},
              {"data", {{"synthetic", "tokens"}, {"params", {{"samples", 120}, {"seq_len", 8}, {"vocab", 16}, {"indicators_per_class", 3}}}, {"seed", 2}}},
              {"target", {{"embed_dim", 6}, {"hidden", 8}, {"epochs", 5}}},
              {"attack", {{"method", "gen-vae"}, {"epochs", 2}, {"latent_dim", 3}, {"hidden", 8}, {"tau", 0.5}}},
              {"eval", {{"seeds", {0}}, {"resample", 2}}}};
    const AttackReport rt = run_experiment(parse(t));
    for (const auto& run : rt.runs)
      for (const auto& r : run.records) CHECK(r.token_change_rate <= 1.0 / 8.0 + 1e-12);

    json g = {{"v", 1},
              {"domain", "graph"},
              {"data", {{"synthetic", "sbm-graph"}, {"params", {{"nodes", 60}, {"features", 10}}}, {"seed", 2}}},
              {"target", {{"epochs", 30}}},
              {"attack", {{"method", "gen-ae"}, {"epochs", 2}, {"latent_dim", 3}, {"hidden", 8}, {"graph_mode", "influencer"}}},
              {"eval", {{"seeds", {0, 1}}, {"store_tensors", false}}}};
    const AttackReport rg = run_experiment(parse(g));
    for (const auto& run : rg.runs) {
      for (const auto& r : run.records) {
        CHECK(r.attackers.size() == 5);
        CHECK(std::find(r.attackers.begin(), r.attackers.end(), r.example_id) == r.attackers.end());
        CHECK(r.perturbed.numel() == 1);
      }
    }
    CHECK(AttackReport::from_json(rg.to_json()) == rg);
  }

  TEST_CASE("checkpoints feed later runs") {
    const auto dir = scratch();
    json j = blob_config("gen-vae");
    j["target"]["save"] = (dir / "target.json").string();
    j["attack"]["save"] = (dir / "attacker.json").string();
    j["attack"]["epochs"] = 3;
    const AttackReport first = run_experiment(parse(j));
    json k = blob_config("gen-vae");
    k["target"] = {{"checkpoint", (dir / "target.json").string()}};
    k["attack"]["checkpoint"] = (dir / "attacker.json").string();
    const AttackReport second = run_experiment(parse(k));
    CHECK(second.attacker.at("source") == "checkpoint");
    for (std::size_t s = 0; s < first.runs.size(); ++s) CHECK(first.runs[s].records == second.runs[s].records);
    k["attack"]["method"] = "gen-ae";
    CHECK_THROWS_AS(run_experiment(parse(k)), ConfigError);
  }
}
