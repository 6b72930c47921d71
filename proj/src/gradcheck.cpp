#include "dfu/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "dfu/rng.hpp"

namespace dfu {

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& e : entries) {
    if (e.has_nan) return std::numeric_limits<double>::quiet_NaN();
    w = std::max(w, e.max_rel_err);
  }
  return w;
}

bool GradCheckReport::passed(double tol) const {
  const double w = worst();
  return !std::isnan(w) && w < tol;
}

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  for (const auto& e : entries) {
    os << (e.is_input ? "input " : "param ") << e.name << ": max rel err " << e.max_rel_err << " at [" << e.worst_index
       << "] analytic " << e.analytic << " numeric " << e.numeric << (e.has_nan ? " (NaN)" : "") << "\n";
  }
  return os.str();
}

namespace {

double scalarize(const Tensor& y, const Tensor& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * y[i];
  return s;
}

std::vector<std::size_t> pick(std::size_t n, std::size_t max_elems, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (max_elems == 0 || n <= max_elems) return idx;
  for (std::size_t i = 0; i < max_elems; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform() * static_cast<double>(n - i));
    std::swap(idx[i], idx[std::min(j, n - 1)]);
  }
  idx.resize(max_elems);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradCheckReport grad_check(Graph& g, NodeId out, const TensorMap& inputs, const TensorMap& params,
                           const GradCheckOptions& opt) {
  Rng rng(opt.seed);
  TensorMap in = inputs, pr = params;
  g.forward(in, pr);
  Tensor w(g.shape(out));
  for (auto& v : w.vec()) v = rng.normal();
  g.backward(out, w);
  const TensorMap pgrad = g.param_grads();
  const TensorMap igrad = g.input_grads();

  auto eval = [&] {
    g.forward(in, pr);
    return scalarize(g.value(out), w);
  };

  GradCheckReport rep;
  auto check = [&](TensorMap& bag, const std::string& name, const Tensor& analytic, bool is_input) {
    GradCheckEntry e{.name = name, .is_input = is_input};
    Tensor& t = bag.at(name);
    double amax = 0.0;
    for (double a : analytic.vec()) amax = std::max(amax, std::abs(a));
    for (std::size_t i : pick(t.size(), opt.max_elements, rng)) {
      const double orig = t[i];
      t[i] = orig + opt.step;
      const double fp = eval();
      t[i] = orig - opt.step;
      const double fm = eval();
      t[i] = orig;
      const double num = (fp - fm) / (2.0 * opt.step);
      const double a = analytic[i];
      if (std::isnan(num) || std::isnan(a)) {
        if (!e.has_nan) {
          e.worst_index = i;
          e.analytic = a;
          e.numeric = num;
        }
        e.has_nan = true;
        continue;
      }
      const double denom = std::max({std::abs(a), std::abs(num), 1e-3 * amax, 1e-12});
      const double err = std::abs(a - num) / denom;
      if (err > e.max_rel_err || (e.max_rel_err == 0.0 && i == 0)) {
        e.max_rel_err = std::max(err, e.max_rel_err);
        e.worst_index = i;
        e.analytic = a;
        e.numeric = num;
      }
    }
    rep.entries.push_back(e);
  };

  for (const auto& [name, grad] : pgrad) check(pr, name, grad, false);
  if (opt.check_inputs)
    for (const auto& [name, grad] : igrad) check(in, name, grad, true);
  g.forward(inputs, params);
  return rep;
}

}  // namespace dfu
