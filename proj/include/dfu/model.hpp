#pragma once

// UNet score networks built from dual convolutions, and the EDM-preconditioned
// denoiser D(x; sigma) = c_skip x + c_out F(c_in x, c_noise).

#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dfu/graph.hpp"
#include "dfu/grid.hpp"
#include "dfu/rng.hpp"

namespace dfu {

enum class Arch { dfu, fno_unet, multires_unet, singleres_unet };
Arch arch_from_string(const std::string& s);
std::string to_string(Arch a);

struct ModelSpec {
  Arch arch = Arch::dfu;
  std::size_t levels = 4;
  std::size_t blocks = 4;  // per level, on the encoder and on the decoder path
  std::size_t base_channels = 64;
  std::vector<std::size_t> multipliers{1, 2, 2, 2};
  std::size_t spatial_k = 3;
  int modes = 16;  // lowest modes kept per axis at the top level, halved per level
  std::size_t embedding_dim = 0;  // 0 -> 4 * base_channels
  std::size_t image_channels = 1;
  std::size_t groups = 8;
  std::size_t fixed_resolution = 0;  // singleres-unet only

  static ModelSpec full();  // 4 levels, 64 base channels, 4 blocks per level
  static ModelSpec desk();

  void validate() const;  // throws ConfigError
  std::size_t channels(std::size_t level) const { return base_channels * multipliers.at(level); }
  // Spectral cutoff at a level, or -1 for architectures without a spectral branch.
  int cutoff(std::size_t level) const;
  std::size_t kernel_size() const;
  std::size_t emb_dim() const { return embedding_dim ? embedding_dim : 4 * base_channels; }
  std::size_t feature_dim() const { return base_channels; }
  bool has_spectral() const { return arch == Arch::dfu || arch == Arch::fno_unet; }
};

// Throws ResolutionError naming admissible alternatives when r cannot be processed.
void check_resolution(const ModelSpec& spec, std::size_t r);
bool resolution_admissible(const ModelSpec& spec, std::size_t r);
std::vector<std::size_t> admissible_resolutions(const ModelSpec& spec, std::size_t lo, std::size_t hi);

enum class ParamKind { spatial, spectral, bias, norm, mix, embed };
std::string to_string(ParamKind k);

struct ParamInfo {
  Shape shape;
  ParamKind kind;
  int level;  // -1 for the shared noise embedding
};

struct ModelState {
  ModelSpec spec;
  TensorMap params;
  std::map<std::string, bool> frozen;
  std::map<std::string, ParamInfo> info;

  std::size_t parameter_count() const;
  std::vector<std::string> names_of(ParamKind k) const;
};

// Parameter names and shapes; independent of resolution by construction.
std::map<std::string, ParamInfo> parameter_layout(const ModelSpec& spec);

ModelState build(const ModelSpec& spec, Rng& rng);

// Freezes every spatial kernel with k > 1 except those at the listed levels.
ModelState freeze_spatial(ModelState m, const std::set<std::size_t>& except_levels);

// EDM preconditioning constants.
struct Precond {
  static constexpr double sigma_data = 0.5;
  static double c_skip(double s) { return sigma_data * sigma_data / (s * s + sigma_data * sigma_data); }
  static double c_out(double s);
  static double c_in(double s);
  static double c_noise(double s);
};

// Sinusoidal features of c_noise(sigma) for a batch, laid out [feature_dim, N, 1, 1].
Tensor noise_features(const ModelSpec& spec, std::span<const double> sigmas);

// The raw network F as a graph over inputs "x" [C, N, r, r] (already scaled by c_in)
// and "noise" [feature_dim, N, 1, 1].
struct NetGraph {
  Graph graph;
  NodeId x = 0, noise = 0, out = 0;
  std::size_t resolution = 0, batch = 0;
};
void build_net(NetGraph& net, const ModelSpec& spec, std::size_t r, std::size_t batch);

// Batched denoiser on [C, N, r, r] with one sigma per item. `params` defaults to m.params.
Tensor denoise_batch(const ModelState& m, const Tensor& x, std::span<const double> sigmas,
                     const TensorMap* params = nullptr);
GridFunction denoise(const ModelState& m, const GridFunction& x, double sigma, const TensorMap* params = nullptr);

}  // namespace dfu
