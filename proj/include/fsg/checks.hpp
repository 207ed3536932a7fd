#pragma once

#include <functional>
#include <string>
#include <vector>

namespace fsg {

struct CheckResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct CheckInfo {
  int id;
  const char* name;
};

/// The ten acceptance properties, in id order.
const std::vector<CheckInfo>& check_catalog();

/// Runs the checks in `ids` (all when empty). `progress` sees each result as
/// soon as it is available.
std::vector<CheckResult> run_checks(const std::vector<int>& ids,
                                    const std::function<void(const CheckResult&)>& progress = {});

/// "[PASS] 3 momentum identity (0.01 s): detail"
std::string format_check(const CheckResult& r);

// Individual properties.
CheckResult check_gradients();
CheckResult check_ssm_duality();
CheckResult check_momentum_identity();
CheckResult check_degeneracy();
CheckResult check_binarization();
CheckResult check_history_buffer();
CheckResult check_toy_training();
CheckResult check_convergence_rate();
CheckResult check_pk_recursion();
CheckResult check_determinism();

}  // namespace fsg
