#pragma once

// Finite-difference gradient checks over every graph op and a small complete
// network built from Dual-FNO blocks.

#include <cstdint>
#include <string>
#include <vector>

#include "dfu/gradcheck.hpp"

namespace dfu {

struct GradSuiteCase {
  std::string name;
  GradCheckReport report;
};

std::vector<GradSuiteCase> gradient_suite(std::uint64_t seed = 7, double step = 1e-5);

}  // namespace dfu
