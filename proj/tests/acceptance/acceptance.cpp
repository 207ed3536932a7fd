// Prints one line per acceptance property. Exit status is the number of
// failed properties (capped at 100).
#include <cstdio>
#include <cstring>
#include <iostream>
#include <string>
#include <vector>

#include "fsg/checks.hpp"

int main(int argc, char** argv) {
  std::vector<int> ids;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
      ids.push_back(std::stoi(argv[++i]));
    } else {
      std::cerr << "usage: fsg_acceptance [--only N]...\n";
      return 100;
    }
  }
  int failed = 0;
  fsg::run_checks(ids, [&](const fsg::CheckResult& r) {
    std::printf("criterion %d: %s  %s (%.2f s)  %s\n", r.id, r.passed ? "PASS" : "FAIL", r.name.c_str(), r.seconds,
                r.detail.c_str());
    std::fflush(stdout);
    failed += !r.passed;
  });
  return failed > 100 ? 100 : failed;
}
