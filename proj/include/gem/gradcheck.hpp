#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace gem {

struct GradcheckConfig {
  std::uint64_t seed = 0;
  std::size_t instances = 100;  // per suite
  double step = 1e-5;
  double component_tolerance = 1e-4;
  double composed_tolerance = 1e-3;
  // Test hook: perturbs the analytic gradient of the named suite so the
  // check must fail.
  std::optional<std::string> corrupt_suite;
};

struct SuiteResult {
  std::string name;
  std::size_t instances = 0;
  std::size_t components = 0;  // gradient entries compared
  double max_relative_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_relative_error < tolerance; }
};

struct GradcheckReport {
  std::vector<SuiteResult> suites;

  bool passed() const;
  std::string to_text() const;
};

// Suite names, in run order.
const std::vector<std::string>& gradcheck_suites();

GradcheckReport run_gradcheck(const GradcheckConfig& cfg);

}  // namespace gem
