#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dfu/graph.hpp"

namespace dfu {

struct GradCheckEntry {
  std::string name;
  bool is_input = false;
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  bool has_nan = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double worst() const;  // NaN if any entry has NaN
  bool passed(double tol) const;
  std::string summary() const;
};

struct GradCheckOptions {
  double step = 1e-5;
  bool check_inputs = true;
  // 0 checks every element; otherwise a seeded subset of at most this many per tensor.
  std::size_t max_elements = 0;
  std::uint64_t seed = 7;
};

// Scalarizes `out` as sum(w * out) with fixed random weights w and compares the
// reverse-mode gradient against central differences for every parameter (and
// optionally every input). The relative error of one element is
// |a - n| / max(|a|, |n|, 1e-3 * max|a| over the tensor, 1e-12).
GradCheckReport grad_check(Graph& g, NodeId out, const TensorMap& inputs, const TensorMap& params,
                           const GradCheckOptions& opt = {});

}  // namespace dfu
