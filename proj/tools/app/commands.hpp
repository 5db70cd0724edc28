#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "app/config.hpp"

namespace app {

struct CommandOptions {
  std::optional<std::string> config_path;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;  // already resolved against the environment
  std::optional<std::size_t> episodes;
  std::optional<std::string> model_path;
  std::optional<std::string> sweep_parameter;
  std::optional<std::string> sweep_values;  // comma separated
  bool corrupt_gradient = false;
};

// Config file (or defaults) with command-line overrides applied and validated.
ExperimentConfig resolve_config(const CommandOptions& opts);

// Each returns the process exit code; errors propagate as exceptions.
int cmd_train(const CommandOptions& opts);
int cmd_eval(const CommandOptions& opts);
int cmd_gradlab(const CommandOptions& opts);
int cmd_sweep(const CommandOptions& opts);
int cmd_purity(const CommandOptions& opts);

inline const std::vector<std::string> kSweepParameters = {"lambda_d", "gamma_blend", "shots",
                                                          "matcher_kind", "beta", "epsilon"};

}  // namespace app
