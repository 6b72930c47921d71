#include "dfu/config.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "dfu/errors.hpp"

namespace dfu {

namespace {

// Strict reader over one JSON object; remembers which keys were consumed.
class Reader {
 public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(where(key) + ": wrong type (" + std::string(it->type_name()) + ")");
    }
  }

  bool has(const char* key) {
    if (!j_.contains(key)) return false;
    seen_.insert(key);
    return true;
  }
  const Json& at(const char* key) const { return j_.at(key); }
  std::string where(const std::string& key = "") const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown config key: " + where(it.key()));
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class F>
void section(Reader& parent, const char* key, F&& f) {
  if (!parent.has(key)) return;
  Reader r(parent.at(key), parent.where(key));
  f(r);
  r.finish();
}

// Re-raises ConfigErrors from semantic validation with the section path when missing.
template <class F>
void checked(const std::string& path, F&& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    if (msg.rfind(path, 0) == 0) throw;
    throw ConfigError(path + ": " + msg);
  }
}

void read_spec(Reader& r, ModelSpec& s) {
  std::string arch = to_string(s.arch);
  r.get("arch", arch);
  checked(r.where("arch"), [&] { s.arch = arch_from_string(arch); });
  r.get("levels", s.levels);
  r.get("blocks", s.blocks);
  r.get("base_channels", s.base_channels);
  r.get("multipliers", s.multipliers);
  r.get("spatial_k", s.spatial_k);
  r.get("modes", s.modes);
  r.get("embedding_dim", s.embedding_dim);
  r.get("image_channels", s.image_channels);
  r.get("groups", s.groups);
  r.get("fixed_resolution", s.fixed_resolution);
}

void read_train(Reader& r, TrainConfig& t) {
  r.get("steps", t.steps);
  r.get("batch", t.batch);
  r.get("lr", t.lr);
  r.get("beta1", t.beta1);
  r.get("beta2", t.beta2);
  r.get("eps", t.eps);
  r.get("p_mean", t.p_mean);
  r.get("p_std", t.p_std);
  r.get("ema_decay", t.ema_decay);
  r.get("clip_norm", t.clip_norm);
  r.get("seed", t.seed);
  r.get("fp32_gemm", t.fp32_gemm);
  r.get("deterministic", t.deterministic);
  r.get("dry_run", t.dry_run);
}

Json train_json(const TrainConfig& t) {
  return {{"steps", t.steps},         {"batch", t.batch},
          {"lr", t.lr},               {"beta1", t.beta1},
          {"beta2", t.beta2},         {"eps", t.eps},
          {"p_mean", t.p_mean},       {"p_std", t.p_std},
          {"ema_decay", t.ema_decay}, {"clip_norm", t.clip_norm},
          {"seed", t.seed},           {"fp32_gemm", t.fp32_gemm},
          {"deterministic", t.deterministic}, {"dry_run", t.dry_run}};
}

}  // namespace

Json to_json(const ModelSpec& s) {
  return {{"arch", to_string(s.arch)},   {"levels", s.levels},
          {"blocks", s.blocks},          {"base_channels", s.base_channels},
          {"multipliers", s.multipliers}, {"spatial_k", s.spatial_k},
          {"modes", s.modes},            {"embedding_dim", s.embedding_dim},
          {"image_channels", s.image_channels}, {"groups", s.groups},
          {"fixed_resolution", s.fixed_resolution}};
}

ModelSpec model_spec_from_json(const Json& j) {
  ModelSpec s;
  Reader r(j, "model");
  read_spec(r, s);
  r.finish();
  return s;
}

RunConfig parse_config(const Json& j) {
  RunConfig c;
  Reader root(j, "");
  section(root, "model", [&](Reader& r) { read_spec(r, c.model); });
  section(root, "train", [&](Reader& r) { read_train(r, c.train); });
  section(root, "mixture", [&](Reader& r) {
    r.get("kind", c.mixture.kind);
    std::map<std::string, double> fixed;
    r.get("fixed", fixed);
    for (const auto& [k, w] : fixed) {
      std::size_t pos = 0;
      unsigned long v = 0;
      try {
        v = std::stoul(k, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos != k.size() || v == 0) throw ConfigError(r.where("fixed." + k) + ": key must be a resolution");
      c.mixture.fixed[v] = w;
    }
    r.get("ratio", c.mixture.ratio);
    r.get("resolution", c.mixture.resolution);
  });
  section(root, "data", [&](Reader& r) {
    r.get("source", c.data.source);
    r.get("image_dir", c.data.image_dir);
    r.get("cache", c.data.cache);
    r.get("resolutions", c.data.resolutions);
    r.get("count", c.data.count);
    section(r, "synthetic", [&](Reader& s) {
      auto& d = c.data.synthetic;
      std::string kind = to_string(d.kind);
      s.get("kind", kind);
      checked(s.where("kind"), [&] { d.kind = synthetic_kind_from_string(kind); });
      s.get("channels", d.channels);
      s.get("cutoff", d.cutoff);
      s.get("alpha", d.alpha);
      s.get("amplitude", d.amplitude);
      s.get("sharpness", d.sharpness);
      s.get("seed", d.seed);
    });
  });
  section(root, "finetune", [&](Reader& r) {
    r.get("R", c.finetune.R);
    r.get("w_R", c.finetune.w_R);
    r.get("except_levels", c.finetune.except_levels);
    r.get("batch_conditional", c.finetune.batch_conditional);
    r.get("freeze_all", c.finetune.freeze_all);
  });
  section(root, "schedule", [&](Reader& r) {
    r.get("steps", c.schedule.steps);
    r.get("sigma_min", c.schedule.sigma_min);
    r.get("sigma_max", c.schedule.sigma_max);
    r.get("rho", c.schedule.rho);
  });
  section(root, "sample", [&](Reader& r) {
    r.get("resolutions", c.sample.resolutions);
    r.get("count", c.sample.count);
    r.get("cols", c.sample.cols);
    r.get("use_ema", c.sample.use_ema);
    r.get("noise_alpha", c.sample.noise_alpha);
    r.get("seed", c.sample.seed);
  });
  section(root, "eval", [&](Reader& r) {
    r.get("metrics", c.eval.metrics);
    r.get("resolutions", c.eval.resolutions);
    r.get("model", c.eval.model);
    r.get("samples", c.eval.samples);
    r.get("probes_per_sigma", c.eval.probes_per_sigma);
    r.get("probe_sigmas", c.eval.probe_sigmas);
    r.get("features", c.eval.features);
    r.get("feature_seed", c.eval.feature_seed);
    r.get("train_resolution", c.eval.train_resolution);
    r.get("use_ema", c.eval.use_ema);
    r.get("seed", c.eval.seed);
  });
  root.get("output_dir", c.output_dir);
  root.get("checkpoint", c.checkpoint);
  root.finish();
  c.validate();
  return c;
}

void RunConfig::validate() const {
  checked("model", [&] { model.validate(); });
  checked("train", [&] { train.validate(); });
  checked("schedule", [&] { schedule.make().validate(); });
  if (data.source != "synthetic" && data.source != "images" && data.source != "cache")
    throw ConfigError("data.source: expected synthetic, images or cache, got '" + data.source + "'");
  if (data.source == "images" && data.image_dir.empty()) throw ConfigError("data.image_dir: required for images");
  if (data.source == "cache" && data.cache.empty()) throw ConfigError("data.cache: required for cache");
  if (data.resolutions.empty()) throw ConfigError("data.resolutions: must not be empty");
  if (data.count == 0) throw ConfigError("data.count: must be positive");
  if (mixture.kind != "uniform" && mixture.kind != "weighted" && mixture.kind != "single")
    throw ConfigError("mixture.kind: expected uniform, weighted or single, got '" + mixture.kind + "'");
  if (!(finetune.w_R >= 0.0 && finetune.w_R <= 1.0)) throw ConfigError("finetune.w_R: must be in [0, 1]");
  if (sample.count == 0) throw ConfigError("sample.count: must be positive");
  for (const auto& m : eval.metrics)
    if (m != "score-error" && m != "fid" && m != "spectrum")
      throw ConfigError("eval.metrics: unknown metric '" + m + "'");
  if (eval.model != "checkpoint" && eval.model != "oracle")
    throw ConfigError("eval.model: expected checkpoint or oracle, got '" + eval.model + "'");
  checked("eval.features", [&] { feature_kind_from_string(eval.features); });
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open config");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j);
}

Json to_json(const RunConfig& c) {
  Json fixed = Json::object();
  for (const auto& [r, w] : c.mixture.fixed) fixed[std::to_string(r)] = w;
  const auto& d = c.data.synthetic;
  return {
      {"model", to_json(c.model)},
      {"train", train_json(c.train)},
      {"mixture", {{"kind", c.mixture.kind}, {"fixed", fixed}, {"ratio", c.mixture.ratio},
                   {"resolution", c.mixture.resolution}}},
      {"data",
       {{"source", c.data.source},
        {"image_dir", c.data.image_dir},
        {"cache", c.data.cache},
        {"resolutions", c.data.resolutions},
        {"count", c.data.count},
        {"synthetic",
         {{"kind", to_string(d.kind)}, {"channels", d.channels}, {"cutoff", d.cutoff}, {"alpha", d.alpha},
          {"amplitude", d.amplitude}, {"sharpness", d.sharpness}, {"seed", d.seed}}}}},
      {"finetune",
       {{"R", c.finetune.R}, {"w_R", c.finetune.w_R}, {"except_levels", c.finetune.except_levels},
        {"batch_conditional", c.finetune.batch_conditional}, {"freeze_all", c.finetune.freeze_all}}},
      {"schedule", {{"steps", c.schedule.steps}, {"sigma_min", c.schedule.sigma_min},
                    {"sigma_max", c.schedule.sigma_max}, {"rho", c.schedule.rho}}},
      {"sample", {{"resolutions", c.sample.resolutions}, {"count", c.sample.count}, {"cols", c.sample.cols},
                  {"use_ema", c.sample.use_ema}, {"noise_alpha", c.sample.noise_alpha}, {"seed", c.sample.seed}}},
      {"eval",
       {{"metrics", c.eval.metrics}, {"resolutions", c.eval.resolutions}, {"model", c.eval.model},
        {"samples", c.eval.samples}, {"probes_per_sigma", c.eval.probes_per_sigma},
        {"probe_sigmas", c.eval.probe_sigmas}, {"features", c.eval.features},
        {"feature_seed", c.eval.feature_seed}, {"train_resolution", c.eval.train_resolution},
        {"use_ema", c.eval.use_ema}, {"seed", c.eval.seed}}},
      {"output_dir", c.output_dir},
      {"checkpoint", c.checkpoint},
  };
}

std::string config_hash(const Json& resolved) {
  Json key = resolved;
  if (key.is_object()) key.erase("output_dir");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : key.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ResolutionMixture make_mixture(const MixtureConfig& m, const std::vector<std::size_t>& resolutions) {
  if (m.kind == "uniform") return ResolutionMixture::uniform(resolutions);
  if (m.kind == "single") {
    if (m.resolution == 0) throw ConfigError("mixture.resolution: required for a single-resolution mixture");
    return ResolutionMixture::single(m.resolution);
  }
  return ResolutionMixture::weighted(resolutions, m.fixed, m.ratio);
}

void write_resolved_config(const std::filesystem::path& dir, const Json& resolved) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "config.json");
  if (!out) throw ConfigError((dir / "config.json").string() + ": cannot write");
  out << Json{{"config", resolved}, {"config_hash", config_hash(resolved)}}.dump(2) << "\n";
}

OutputLock::OutputLock(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  path_ = dir / ".lock";
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0)
    throw StateError(dir.string() + " is locked by another writer (remove " + path_.string() +
                     " if no run is active)");
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

OutputLock::~OutputLock() {
  std::error_code ec;
  std::filesystem::remove(path_, ec);
}

}  // namespace dfu
