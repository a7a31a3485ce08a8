#pragma once

#include <string>
#include <vector>

namespace unidd::verify {

struct CheckResult {
  std::string name;
  bool pass = false;
  double worst = 0.0;      // largest observed error / violation measure
  double tolerance = 0.0;  // bound the check enforces
  int instances = 0;       // number of random instances exercised
  std::string note;
};

struct Report {
  std::vector<CheckResult> checks;
  bool all_pass = false;
  double seconds = 0.0;
};

// Full derivation-oracle battery. `seeds` scales the number of random
// instances per check (default 100).
Report run_battery(int seeds = 100);

std::string report_json(const Report& report);

}  // namespace unidd::verify
