#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "app/commands.hpp"
#include "compose/errors.hpp"

namespace {

std::optional<std::size_t> env_workers() {
  const char* v = std::getenv("COMPOSE_LAB_WORKERS");
  if (!v || !*v) return std::nullopt;
  try {
    std::size_t used = 0;
    const unsigned long n = std::stoul(v, &used);
    if (used != std::string(v).size() || n == 0) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw app::ConfigError(std::string("COMPOSE_LAB_WORKERS must be a positive integer, got '") + v + "'");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Slot-based compositional few-shot experiment runner"};
  cli.require_subcommand(1);

  app::CommandOptions opts;
  std::string config, out, model, parameter, values;
  std::uint64_t seed = 0;
  std::size_t workers = 0, episodes = 0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "JSON experiment config")->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory");
    sub->add_option("--seed", seed, "override config seed");
    sub->add_option("--workers", workers, "evaluation threads")->check(CLI::PositiveNumber);
    sub->add_option("--episodes", episodes, "evaluation episodes per split")->check(CLI::PositiveNumber);
  };

  CLI::App* train = cli.add_subcommand("train", "continual episodic training; writes model.bin and logs");
  CLI::App* eval = cli.add_subcommand("eval", "per-split few-shot accuracy of a saved model");
  CLI::App* gradlab = cli.add_subcommand("gradlab", "gradient-geometry checks with a pass/fail summary");
  CLI::App* sweep = cli.add_subcommand("sweep", "accuracy across values of one parameter");
  CLI::App* purity = cli.add_subcommand("purity", "slot purity of the frozen backbone");
  for (CLI::App* s : {train, eval, gradlab, sweep, purity}) common(s);
  eval->add_option("--model", model, "model file (default: <out>/model.bin)");
  gradlab->add_flag("--corrupt-gradient", opts.corrupt_gradient, "perturb the analytic holistic gradient");
  sweep->add_option("--parameter", parameter, "lambda_d|gamma_blend|shots|matcher_kind|beta|epsilon");
  sweep->add_option("--values", values, "comma-separated values");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = cli.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    CLI::App* sub = cli.get_subcommands().front();
    auto given = [&](const char* name) { return sub->count(name) > 0; };
    if (given("--config")) opts.config_path = config;
    if (given("--out")) opts.out_dir = out;
    if (given("--seed")) opts.seed = seed;
    if (given("--episodes")) opts.episodes = episodes;
    opts.workers = given("--workers") ? std::optional<std::size_t>(workers) : env_workers();
    if (sub == eval && given("--model")) opts.model_path = model;
    if (sub == sweep && given("--parameter")) opts.sweep_parameter = parameter;
    if (sub == sweep && given("--values")) opts.sweep_values = values;

    if (sub == train) return app::cmd_train(opts);
    if (sub == eval) return app::cmd_eval(opts);
    if (sub == gradlab) return app::cmd_gradlab(opts);
    if (sub == sweep) return app::cmd_sweep(opts);
    return app::cmd_purity(opts);
  } catch (const app::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const compose::InvalidArgument& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return 2;
  } catch (const compose::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const compose::DegenerateVector& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "filesystem error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
