#pragma once

// Run configuration as a JSON tree. Parsing is strict: every key must be known,
// and errors name the offending key path. to_json emits every field, so the
// resolved config (defaults expanded) is what gets written and hashed.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "dfu/diffusion.hpp"
#include "dfu/evalkit.hpp"
#include "dfu/model.hpp"
#include "dfu/trainer.hpp"

namespace dfu {

using Json = nlohmann::json;

struct DataConfig {
  std::string source = "synthetic";  // synthetic | images | cache
  SyntheticDistributionSpec synthetic;
  std::string image_dir, cache;
  std::vector<std::size_t> resolutions{16, 24, 32};
  std::size_t count = 1024;
};

struct MixtureConfig {
  std::string kind = "uniform";  // uniform | weighted | single
  std::map<std::size_t, double> fixed;
  double ratio = 0.5;
  std::size_t resolution = 0;  // for single
};

struct ScheduleConfig {
  std::size_t steps = 18;
  double sigma_min = 0.002, sigma_max = 80.0, rho = 7.0;
  DiffusionSchedule make() const { return DiffusionSchedule::make(steps, sigma_min, sigma_max, rho); }
};

struct SampleConfig {
  std::vector<std::size_t> resolutions{32};
  std::size_t count = 16;
  std::size_t cols = 4;
  bool use_ema = true;
  double noise_alpha = 0.0;  // 0 -> white noise
  std::uint64_t seed = 0;
};

struct EvalConfig {
  std::vector<std::string> metrics{"score-error"};  // score-error | fid | spectrum
  std::vector<std::size_t> resolutions{32};
  std::string model = "checkpoint";  // checkpoint | oracle
  std::size_t samples = 256;
  std::size_t probes_per_sigma = 8;
  std::vector<double> probe_sigmas = default_probe_sigmas();
  std::string features = "flatten-lowres";
  std::uint64_t feature_seed = 0;
  std::size_t train_resolution = 0;  // coherence split; 0 -> largest data resolution
  bool use_ema = true;
  std::uint64_t seed = 0;
};

struct RunConfig {
  ModelSpec model = ModelSpec::desk();
  TrainConfig train;
  MixtureConfig mixture;
  DataConfig data;
  FinetuneConfig finetune;  // nested train block unused; `train` applies
  ScheduleConfig schedule;
  SampleConfig sample;
  EvalConfig eval;
  std::string output_dir = "run";
  std::string checkpoint;

  void validate() const;
};

RunConfig parse_config(const Json& j);
RunConfig load_config(const std::filesystem::path& path);
Json to_json(const RunConfig& c);
Json to_json(const ModelSpec& s);
ModelSpec model_spec_from_json(const Json& j);

// FNV-1a over the canonical dump without output_dir, as 16 hex digits.
std::string config_hash(const Json& resolved);

ResolutionMixture make_mixture(const MixtureConfig& m, const std::vector<std::size_t>& resolutions);

// Writes <dir>/config.json containing {"config": resolved, "config_hash": ...}.
void write_resolved_config(const std::filesystem::path& dir, const Json& resolved);

// One writer per output directory. The lock file holds the owner's pid.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::filesystem::path path_;
};

}  // namespace dfu
