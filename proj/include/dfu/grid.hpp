#pragma once

// Functions on the unit square sampled at cell centres ((j+1/2)/r, (i+1/2)/r),
// where i is the row and j the column; x runs along columns.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dfu/rng.hpp"
#include "dfu/tensor.hpp"

namespace dfu {

class GridFunction {
 public:
  GridFunction() = default;
  // values laid out [channel][row][col]; throws ShapeError/ConfigError on bad input.
  GridFunction(std::size_t channels, std::size_t resolution, std::vector<double> values);

  static GridFunction constant(std::size_t channels, std::size_t r, double v);
  static GridFunction from_function(std::size_t channels, std::size_t r,
                                    const std::function<double(std::size_t ch, double x, double y)>& f);

  std::size_t channels() const { return channels_; }
  std::size_t resolution() const { return r_; }
  std::size_t size() const { return values_ ? values_->size() : 0; }
  std::span<const double> values() const { return values_ ? std::span<const double>(*values_) : std::span<const double>(); }
  double at(std::size_t ch, std::size_t i, std::size_t j) const { return (*values_)[(ch * r_ + i) * r_ + j]; }
  static double node(std::size_t i, std::size_t r) { return (static_cast<double>(i) + 0.5) / static_cast<double>(r); }

  bool operator==(const GridFunction& o) const;

 private:
  std::size_t channels_ = 0, r_ = 0;
  std::shared_ptr<const std::vector<double>> values_;
};

// Arithmetic requires matching channels and resolution.
GridFunction operator+(const GridFunction& a, const GridFunction& b);
GridFunction operator-(const GridFunction& a, const GridFunction& b);
GridFunction operator*(double s, const GridFunction& a);

enum class ResampleMethod { bilinear, area, spectral };

GridFunction resample(const GridFunction& g, std::size_t r_target, ResampleMethod method);

// Stacks a batch of same-shape grid functions into a [C, N, r, r] tensor and back.
Tensor stack(std::span<const GridFunction> batch);
std::vector<GridFunction> unstack(const Tensor& t);

// ---- synthetic sources ----

enum class SyntheticKind { band_limited_fourier, gaussian_process, edge_plus_smooth };

SyntheticKind synthetic_kind_from_string(const std::string& s);
std::string to_string(SyntheticKind k);

struct SyntheticDistributionSpec {
  SyntheticKind kind = SyntheticKind::gaussian_process;
  std::size_t channels = 1;
  int cutoff = 7;             // largest |m| per axis in the Fourier sum
  double alpha = 2.0;         // eigenvalue decay for gaussian-process
  double amplitude = 1.0;
  double sharpness = 40.0;    // inverse edge width for edge-plus-smooth
  std::uint64_t seed = 0;
};

// One random draw of a continuous field, evaluable anywhere.
class ContinuousField {
 public:
  struct Term {
    int m1, m2;  // frequencies along y and x
    double a, b; // a cos(2 pi (m1 y + m2 x)) + b sin(...)
  };
  struct Edge {
    double cx, cy, radius, sharpness, weight;
  };

  std::size_t channels() const { return terms_.size(); }
  double operator()(std::size_t ch, double x, double y) const;

  std::vector<std::vector<Term>> terms_;
  std::vector<Edge> edges_;  // per channel; empty weight 0 when unused
};

ContinuousField draw_field(const SyntheticDistributionSpec& spec, Rng& rng);

// rng is taken by value: the same state at two resolutions samples the same field.
GridFunction sample_on_grid(const SyntheticDistributionSpec& spec, std::size_t r, Rng rng);

// Per-mode variance lambda(m) = (1 + |m|^2)^(-alpha) used by the gaussian-process source.
double gp_eigenvalue(int m1, int m2, double alpha);

// ---- datasets ----

struct Normalization {
  std::vector<double> scale, shift;  // normalized = raw * scale + shift
  double denormalize(std::size_t ch, double v) const { return (v - shift.at(ch)) / scale.at(ch); }
};

struct MultiResDataset {
  using Pyramid = std::map<std::size_t, GridFunction>;
  std::vector<Pyramid> entries;
  std::vector<std::size_t> resolutions;
  std::size_t channels = 0;
  Normalization normalization;

  std::size_t size() const { return entries.size(); }
  const GridFunction& at(std::size_t entry, std::size_t r) const;
  bool has_resolution(std::size_t r) const;
  void validate() const;
};

MultiResDataset build_dataset(const std::filesystem::path& image_dir, std::vector<std::size_t> resolutions,
                              std::size_t count);
MultiResDataset build_dataset(const SyntheticDistributionSpec& spec, std::vector<std::size_t> resolutions,
                              std::size_t count);

// Adds level R to every pyramid by bilinear upsampling of the largest existing level.
MultiResDataset with_upsampled_level(MultiResDataset ds, std::size_t R);

}  // namespace dfu
