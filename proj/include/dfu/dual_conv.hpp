#pragma once

// Dual convolution: a k x k circular convolution whose discrete weights are
// used verbatim at every resolution, plus a spectral convolution acting on the
// Fourier modes |m1| <= cutoff, 0 <= m2 <= cutoff of the half spectrum.

#include <cstddef>
#include <string>

#include "dfu/graph.hpp"
#include "dfu/grid.hpp"
#include "dfu/rng.hpp"

namespace dfu {

std::size_t spectral_modes(int cutoff);

struct DualConvParams {
  Tensor spatial;   // [cout, cin, k, k]
  Tensor spectral;  // [cout, cin, modes, 2] as (re, im)
  Tensor bias;      // [cout]
  int cutoff = 0;

  std::size_t cin() const { return spatial.dim(1); }
  std::size_t cout() const { return spatial.dim(0); }
  std::size_t k() const { return spatial.dim(2); }
};

// Spatial weights ~ N(0, 1/(cin k^2)); spectral coefficients complex Gaussian with variance 1/(cin modes).
DualConvParams init_dual_conv(std::size_t cin, std::size_t cout, std::size_t k, int cutoff, Rng& rng);
void init_spatial(Tensor& w, Rng& rng);
void init_spectral(Tensor& w, Rng& rng);

GridFunction spatial_conv(const GridFunction& g, const Tensor& kernel);
GridFunction spectral_conv(const GridFunction& g, const Tensor& coeffs, int cutoff);
GridFunction dual_conv(const GridFunction& g, const DualConvParams& p);

// Graph building block. Declares parameters "<name>.spatial", "<name>.spectral"
// (when cutoff >= 0) and "<name>.bias"; pass cutoff < 0 for a purely spatial convolution.
NodeId dual_conv_node(Graph& g, NodeId x, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                      int cutoff);

}  // namespace dfu
