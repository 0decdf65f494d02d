#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "afu/gradcheck.hpp"
#include "afu/maxq.hpp"
#include "afu/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumeric = 2;

using afu::trainer::AfuConfig;
using afu::trainer::Variant;

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

std::vector<int> parse_hidden(const std::string& text) {
  std::vector<int> widths;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) widths.push_back(std::stoi(item));
  return widths;
}

struct TrainArgs {
  std::string config_path;
  std::string preset = "desk";
  std::string env = "sfm";
  std::string variant = "beta";
  std::string hidden;
  std::string out;
  std::optional<double> rho;
  std::optional<long> steps;
  std::optional<long> warmup;
  std::optional<long> eval_interval;
  std::optional<int> eval_rollouts;
  std::optional<int> batch;
  std::optional<std::uint64_t> seed;
};

AfuConfig build_config(const TrainArgs& a, const CLI::App& cmd) {
  const Variant variant = afu::trainer::parse_variant(a.variant);
  AfuConfig c;
  if (a.preset == "desk") {
    c = afu::trainer::desk_config(a.env, variant, 0);
  } else {
    c.env = a.env;
    c.variant = variant;
  }
  if (!a.config_path.empty()) {
    std::ifstream in(a.config_path);
    if (!in) throw afu::ConfigError("cannot read config " + a.config_path);
    c = afu::trainer::config_from_json(nlohmann::json::parse(in), c);
  }
  // Explicit flags win over the file.
  if (cmd.count("--env")) c.env = a.env;
  if (cmd.count("--variant")) c.variant = variant;
  if (a.rho) c.rho = *a.rho;
  if (a.steps) c.total_steps = *a.steps;
  if (a.warmup) c.warmup_steps = *a.warmup;
  if (a.eval_interval) c.eval_interval = *a.eval_interval;
  if (a.eval_rollouts) c.eval_rollouts = *a.eval_rollouts;
  if (a.batch) c.batch_size = *a.batch;
  if (a.seed) c.seed = *a.seed;
  if (!a.hidden.empty()) c.hidden = parse_hidden(a.hidden);
  if (c.warmup_steps > c.total_steps) c.warmup_steps = c.total_steps;
  c.validate();
  return c;
}

int run_train(const TrainArgs& a, const CLI::App& cmd) {
  const AfuConfig config = build_config(a, cmd);
  std::vector<afu::trainer::EvalRecord> records;
  int code = kExitOk;
  try {
    records = afu::trainer::train(config);
  } catch (const afu::trainer::TrainingAborted& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    records = e.records();
    code = kExitNumeric;
  }
  if (a.out.empty()) {
    afu::trainer::write_records_csv(std::cout, records);
  } else {
    auto csv = open_out(a.out + ".csv");
    afu::trainer::write_records_csv(csv, records);
    open_out(a.out + ".config.json") << afu::trainer::to_json(config).dump(2) << '\n';
  }
  return code;
}

struct ToyArgs {
  std::string method = "afu";
  double hyper = 0.3;
  int steps = 3000;
  int batch = 256;
  std::uint64_t seed = 0;
  std::string hidden;
  std::string out;
};

int run_toyq(const ToyArgs& a) {
  afu::maxq::ToyOptions o;
  o.method = afu::maxq::parse_toy_method(a.method);
  o.hyper = a.hyper;
  o.steps = a.steps;
  o.batch = a.batch;
  o.seed = a.seed;
  if (!a.hidden.empty()) o.hidden = parse_hidden(a.hidden);
  const auto r = afu::maxq::run_toy_benchmark(o);

  std::ostringstream csv;
  csv << std::setprecision(17) << "s,v_estimate,true_max,residual\n";
  for (std::size_t i = 0; i < r.states.size(); ++i) {
    csv << r.states[i] << ',' << r.estimates[i] << ',' << r.true_max[i] << ',' << r.residuals[i]
        << '\n';
  }
  const nlohmann::json summary = {{"method", afu::maxq::to_string(o.method)},
                                  {"hyper", o.hyper},
                                  {"seed", o.seed},
                                  {"steps", o.steps},
                                  {"batch", o.batch},
                                  {"mean_abs_residual", r.mean_abs_residual},
                                  {"mean_residual", r.mean_residual},
                                  {"max_abs_residual", r.max_abs_residual}};
  if (a.out.empty()) {
    std::cout << csv.str();
    std::cerr << summary.dump() << '\n';
  } else {
    open_out(a.out + ".csv") << csv.str();
    open_out(a.out + ".json") << summary.dump(2) << '\n';
  }
  return kExitOk;
}

int run_gradcheck(int instances, std::uint64_t seed) {
  bool ok = true;
  std::cout << std::left << std::setw(20) << "check" << std::setw(11) << "instances"
            << "worst_rel_error  status\n";
  for (const auto& r : afu::gradcheck::run_all(instances, seed)) {
    std::cout << std::setw(20) << r.name << std::setw(11) << r.instances << std::setw(17)
              << std::scientific << std::setprecision(3) << r.worst_relative_error
              << std::defaultfloat << (r.passed ? "PASS" : "FAIL") << '\n';
    ok = ok && r.passed;
  }
  return ok ? kExitOk : kExitNumeric;
}

struct SuiteArgs {
  int seeds = 10;
  long steps = 20'000;
  std::string hidden;
  std::string out;
};

int run_sfm_suite(const SuiteArgs& a) {
  std::ostringstream table;
  table << "variant,seed,final_smoothed_return,tail_entropy,final_alpha\n";
  int code = kExitOk;
  for (Variant v : {Variant::kAlpha, Variant::kBeta}) {
    for (int seed = 0; seed < a.seeds; ++seed) {
      AfuConfig c = afu::trainer::desk_config("sfm", v, static_cast<std::uint64_t>(seed));
      c.total_steps = a.steps;
      if (c.warmup_steps > c.total_steps) c.warmup_steps = c.total_steps;
      if (!a.hidden.empty()) c.hidden = parse_hidden(a.hidden);
      try {
        const auto records = afu::trainer::train(c);
        table << afu::trainer::to_string(v) << ',' << seed << ','
              << afu::trainer::final_smoothed_return(records) << ','
              << afu::trainer::tail_mean_entropy(records) << ',' << records.back().alpha << '\n';
        if (!a.out.empty()) {
          auto csv = open_out(a.out + "/sfm_" + std::string(afu::trainer::to_string(v)) + "_seed" +
                              std::to_string(seed) + ".csv");
          afu::trainer::write_records_csv(csv, records);
        }
      } catch (const afu::trainer::TrainingAborted& e) {
        table << afu::trainer::to_string(v) << ',' << seed << ",nan,nan,nan\n";
        std::cerr << "seed " << seed << ": " << e.what() << '\n';
        code = kExitNumeric;
      }
      std::cerr << "done " << afu::trainer::to_string(v) << " seed " << seed << '\n';
    }
  }
  std::cout << table.str();
  if (!a.out.empty()) open_out(a.out + "/sfm_suite.csv") << table.str();
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AFU reinforcement learning experiments"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train an agent and write its learning curve");
  train->add_option("--config", train_args.config_path, "Flat JSON config file");
  train->add_option("--preset", train_args.preset, "desk: shortened runs; full: the published defaults")
      ->check(CLI::IsMember({"desk", "full"}));
  train->add_option("--env", train_args.env, "sfm | point_reach | toy");
  train->add_option("--variant", train_args.variant, "alpha | beta")
      ->check(CLI::IsMember({"alpha", "beta"}));
  train->add_option("--rho", train_args.rho);
  train->add_option("--steps", train_args.steps, "Total environment steps");
  train->add_option("--warmup", train_args.warmup, "Random-action steps before training");
  train->add_option("--eval-interval", train_args.eval_interval);
  train->add_option("--eval-rollouts", train_args.eval_rollouts);
  train->add_option("--batch", train_args.batch);
  train->add_option("--seed", train_args.seed);
  train->add_option("--hidden", train_args.hidden, "Comma-separated hidden widths, e.g. 256,256");
  train->add_option("--out", train_args.out, "Output prefix for <out>.csv and <out>.config.json");

  ToyArgs toy_args;
  auto* toyq = app.add_subcommand("toyq", "Toy max-Q regression benchmark");
  toyq->add_option("--method", toy_args.method, "afu | expectile")
      ->check(CLI::IsMember({"afu", "expectile"}));
  toyq->add_option("--rho,--tau,--hyper", toy_args.hyper, "rho (afu) or expectile tau");
  toyq->add_option("--steps", toy_args.steps);
  toyq->add_option("--batch", toy_args.batch);
  toyq->add_option("--seed", toy_args.seed);
  toyq->add_option("--hidden", toy_args.hidden);
  toyq->add_option("--out", toy_args.out, "Output prefix for <out>.csv and <out>.json");

  int gc_instances = 20;
  std::uint64_t gc_seed = 0;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference checks of every loss");
  gradcheck->add_option("--instances", gc_instances);
  gradcheck->add_option("--seed", gc_seed);

  SuiteArgs suite_args;
  auto* suite = app.add_subcommand("sfm-suite", "AFU-alpha vs AFU-beta on SFM across seeds");
  suite->add_option("--seeds", suite_args.seeds);
  suite->add_option("--steps", suite_args.steps);
  suite->add_option("--hidden", suite_args.hidden);
  suite->add_option("--out", suite_args.out, "Directory for per-seed curves and the table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*train) return run_train(train_args, *train);
    if (*toyq) return run_toyq(toy_args);
    if (*gradcheck) return run_gradcheck(gc_instances, gc_seed);
    if (*suite) return run_sfm_suite(suite_args);
  } catch (const afu::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const afu::NumericError& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
