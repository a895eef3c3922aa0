#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "boxseg/graph.hpp"
#include "boxseg/param_set.hpp"

namespace boxseg {

struct GradCheckResult {
  std::string name;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;  // |analytic - fd| / max(1, |fd|)
  bool passed = false;
  std::size_t skipped_kinks = 0;  // coordinates straddling a relu kink
};

struct GradCheckOptions {
  std::size_t coordinates = 100;
  double step = 1e-5;
  double tolerance = 1e-4;
};

// Builds a scalar loss from named leaves.
using LossBuilder = std::function<Var(Graph&, const std::map<std::string, Var>&)>;

// Compares reverse-mode gradients with central finite differences on
// randomly drawn coordinates of the inputs.
GradCheckResult check_gradient(const std::string& name, const LossBuilder& build,
                               const ParamSet& inputs, std::uint64_t seed,
                               const GradCheckOptions& options = {});

// Registered checks: every differentiable op and every composed loss.
std::vector<std::string> gradcheck_names();
// `which` is "all" or one registered name.
std::vector<GradCheckResult> run_gradcheck(const std::string& which, std::uint64_t seed,
                                           const GradCheckOptions& options = {});

}  // namespace boxseg
