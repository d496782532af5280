// Copyright 2026 The LossForge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// lossforge command-line driver.
//
// Exit codes: 0 success, 1 scenario or computation error, 2 bad config or
// arguments.

#include "lossforge/harness.hpp"
#include "lossforge/oracle.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace {

using namespace lossforge;

constexpr int kOk = 0;
constexpr int kScenarioError = 1;
constexpr int kConfigError = 2;

// "lo:hi,lo:hi,..." with a bare value pinning a coordinate, or the path of a
// JSON file {"lo": [...], "hi": [...]}.
Hypercube parse_feasible(const std::string& spec) {
  if (std::ifstream file(spec); file) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(file);
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument("feasible: " + spec + ": " + e.what());
    }
    require(j.contains("lo") && j.contains("hi"), "feasible: file needs 'lo' and 'hi'");
    return Hypercube(detail::vector_from_json(j["lo"], "lo"), detail::vector_from_json(j["hi"], "hi"));
  }
  std::vector<double> lo, hi;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    const std::string a = item.substr(0, colon);
    const std::string b = colon == std::string::npos ? a : item.substr(colon + 1);
    lo.push_back(harness::parse_double(a));
    hi.push_back(harness::parse_double(b));
  }
  require(!lo.empty(), "feasible: empty spec");
  return Hypercube(Eigen::Map<Vector>(lo.data(), static_cast<Index>(lo.size())),
                   Eigen::Map<Vector>(hi.data(), static_cast<Index>(hi.size())));
}

std::vector<Observation> load_observations(const std::string& path) {
  std::vector<Observation> obs = read_observations_file(path);
  require(!obs.empty(), "observations: " + path + " is empty");
  return obs;
}

int run_command(const std::string& config_path, const std::string& out_dir) {
  harness::ScenarioConfig config;
  try {
    config = harness::load_config(config_path);
  } catch (const InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  }
  harness::RunReport report;
  try {
    report = harness::run_scenario(config);
    harness::emit_report(report, out_dir);
  } catch (const InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "scenario error: " << e.what() << '\n';
    return kScenarioError;
  }
  for (const harness::SummaryRow& r : harness::summarize(report))
    std::cout << r.algorithm << " step " << r.step << ": median best val "
              << format_double(r.median_val) << ", median best test "
              << format_double(r.median_test) << '\n';
  for (const harness::SeedError& e : report.errors)
    std::cerr << "seed " << e.seed << " (" << e.algorithm << "): " << e.message << '\n';
  std::cout << "wrote " << out_dir << '\n';
  return report.errors.empty() ? kOk : kScenarioError;
}

int learn_command(const std::string& path, const std::string& feasible, const std::string& epsilon,
                  double alpha_min) {
  std::vector<Observation> obs;
  Hypercube box;
  CostParams params;
  try {
    obs = load_observations(path);
    box = parse_feasible(feasible);
    if (epsilon == "auto") {
      params.epsilon = all_have_gradients(obs) ? default_epsilon(obs) : 0.0;
    } else {
      params.epsilon = harness::parse_double(epsilon);
      require(params.epsilon >= 0.0, "epsilon must be >= 0");
    }
    params.alpha_min = alpha_min;
    params.validate();
  } catch (const InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  }
  try {
    const LearnLossResult r = learn_loss(obs, box, params);
    nlohmann::json j = to_json(r);
    j["epsilon"] = params.epsilon;
    std::cout << j.dump(2) << '\n';
  } catch (const InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kScenarioError;
  }
  return kOk;
}

int oracle_finite_command(const std::string& path, const std::string& feasible) {
  oracle::FiniteBilevelInstance inst;
  try {
    inst.observations = load_observations(path);
    inst.feasible = feasible.empty() ? Hypercube::unit(inst.observations.front().num_features())
                                     : parse_feasible(feasible);
    inst.validate();
  } catch (const InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  }
  try {
    const oracle::OracleResult r = oracle::optimal_lambda_finite(inst);
    nlohmann::json j;
    j["lambda"] = detail::to_json_array(r.lambda);
    j["achieved_ve"] = r.achieved_ve;
    j["argmin_source"] = r.argmin_source;
    std::cout << j.dump(2) << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kScenarioError;
  }
  return kOk;
}

int report_command(const std::string& dir) {
  harness::RunReport report;
  try {
    report = harness::read_report_dir(dir);
  } catch (const InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  }
  report.scenario = report.scenario.empty() ? "unknown" : report.scenario;
  harness::write_summary(std::cout, report);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learn linear loss functions from trained models"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "lossforge_out";
  auto* run = app.add_subcommand("run", "Run a scenario config and write a report directory");
  run->add_option("config", config_path, "Scenario config (JSON)")->required();
  run->add_option("-o,--out", out_dir, "Output directory");

  std::string obs_path, feasible, epsilon = "auto";
  double alpha_min = CostParams{}.alpha_min;
  auto* learn = app.add_subcommand("learn", "Learn a linear loss from observations");
  learn->add_option("observations", obs_path, "Observations (JSONL)")->required();
  learn->add_option("--feasible", feasible, "lo:hi,... or a JSON file with lo/hi")->required();
  learn->add_option("--epsilon", epsilon, "auto or a non-negative value");
  learn->add_option("--alpha-min", alpha_min, "Lower bound on the scale multiplier");

  std::string oracle_path, oracle_feasible;
  auto* oracle_cmd = app.add_subcommand("oracle", "Ground-truth engines");
  oracle_cmd->require_subcommand(1);
  auto* finite = oracle_cmd->add_subcommand("finite", "Optimal lambda over a finite model set");
  finite->add_option("observations", oracle_path, "Observations (JSONL)")->required();
  finite->add_option("--feasible", oracle_feasible, "lo:hi,...; defaults to [0,1]^k");

  std::string report_dir;
  auto* report = app.add_subcommand("report", "Summarize a report directory");
  report->add_option("dir", report_dir, "Directory written by run")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }
  if (*run) return run_command(config_path, out_dir);
  if (*learn) return learn_command(obs_path, feasible, epsilon, alpha_min);
  if (*finite) return oracle_finite_command(oracle_path, oracle_feasible);
  if (*report) return report_command(report_dir);
  return kConfigError;
}
