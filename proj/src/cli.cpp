#include "dfu/cli.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "dfu/checkpoint.hpp"
#include "dfu/config.hpp"
#include "dfu/errors.hpp"
#include "dfu/evalkit.hpp"
#include "dfu/gradsuite.hpp"
#include "dfu/image_io.hpp"
#include "dfu/kernels.hpp"
#include "dfu/oracles.hpp"

namespace dfu {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::vector<std::string> sets;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "JSON run configuration");
  app->add_option("-o,--out", c.out, "output directory (overrides output_dir)");
  app->add_option("--set", c.sets, "override a config key, e.g. --set train.lr=2e-4")->take_all();
}

void set_path(Json& root, const std::string& path, Json value) {
  Json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("--set: malformed key path '" + path + "'");
    if (!node->is_object()) throw ConfigError("--set: '" + path + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[key] = std::move(value);
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = Json::object();
    start = dot + 1;
  }
}

std::vector<std::size_t> parse_list(const std::string& s, const std::string& key) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size() || item.empty()) throw ConfigError(key + ": '" + s + "' is not a list of positive integers");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

// Config file, then --set overrides, then command flags; parsed strictly.
struct Resolved {
  RunConfig cfg;
  Json json;
  std::string hash;
};

Resolved resolve(const Common& c, const std::vector<std::pair<std::string, Json>>& flags) {
  Json j = Json::object();
  if (!c.config.empty()) {
    std::ifstream in(c.config);
    if (!in) throw ConfigError(c.config + ": cannot open config");
    try {
      j = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(c.config + ": " + e.what());
    }
  }
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    const std::string key = s.substr(0, eq), raw = s.substr(eq + 1);
    Json v;
    try {
      v = Json::parse(raw);
    } catch (const nlohmann::json::parse_error&) {
      v = raw;
    }
    set_path(j, key, std::move(v));
  }
  for (const auto& [key, v] : flags) set_path(j, key, v);
  if (!c.out.empty()) j["output_dir"] = c.out;
  Resolved r;
  r.cfg = parse_config(j);
  r.json = to_json(r.cfg);
  r.hash = config_hash(r.json);
  return r;
}

MultiResDataset load_data(const RunConfig& c) {
  if (c.data.source == "cache") return load_dataset(c.data.cache);
  if (c.data.source == "images") return build_dataset(fs::path(c.data.image_dir), c.data.resolutions, c.data.count);
  return build_dataset(c.data.synthetic, c.data.resolutions, c.data.count);
}

Json normalization_json(const Normalization& n) { return {{"scale", n.scale}, {"shift", n.shift}}; }

Normalization normalization_from(const Checkpoint& ck) {
  Normalization n;
  if (ck.extra.contains("normalization")) {
    n.scale = ck.extra["normalization"].at("scale").get<std::vector<double>>();
    n.shift = ck.extra["normalization"].at("shift").get<std::vector<double>>();
  } else {
    n.scale.assign(ck.state.model.spec.image_channels, 1.0 / 127.5);
    n.shift.assign(ck.state.model.spec.image_channels, -1.0);
  }
  return n;
}

CovarianceOperator sample_noise(double alpha) {
  return alpha == 0.0 ? CovarianceOperator::white() : CovarianceOperator::power_law(alpha);
}

std::vector<GridFunction> draw_samples(const BatchDenoiser& den, std::size_t r, std::size_t count, std::size_t channels,
                                       const RunConfig& c, std::uint64_t seed) {
  Rng rng(splitmix64(seed ^ (0x73616d70ULL + r)));
  return generate(den, r, count, channels, c.schedule.make(), sample_noise(c.sample.noise_alpha), rng);
}

Json report(const std::string& metric, std::size_t r, double value, const std::string& hash) {
  return {{"metric", metric}, {"resolution", r}, {"value", value}, {"config_hash", hash}};
}

// ---- commands ----

int cmd_prepare(const Resolved& R, std::ostream& out) {
  const fs::path dir = R.cfg.output_dir;
  OutputLock lock(dir);
  write_resolved_config(dir, R.json);
  auto ds = load_data(R.cfg);
  save_dataset(dir / "dataset.dfu", ds, R.json);
  out << "dataset: " << ds.size() << " entries at";
  for (auto r : ds.resolutions) out << " " << r;
  out << " -> " << (dir / "dataset.dfu").string() << "\n";
  return 0;
}

void write_metrics_header(std::ostream& os, const std::string& hash) {
  os << Json{{"kind", "header"}, {"config_hash", hash}}.dump() << "\n";
}

int cmd_train(const Resolved& R, std::ostream& out) {
  const auto& c = R.cfg;
  const fs::path dir = c.output_dir;
  OutputLock lock(dir);
  write_resolved_config(dir, R.json);
  auto ds = load_data(c);
  TrainState st;
  if (!c.checkpoint.empty()) {
    auto ck = load_checkpoint(c.checkpoint);
    if (to_json(ck.state.model.spec) != to_json(c.model))
      throw ConfigError("model: differs from the model stored in checkpoint " + c.checkpoint);
    st = std::move(ck.state);
  } else {
    Rng init(c.train.seed);
    st = init_train_state(build(c.model, init), c.train.seed);
  }
  auto mix = make_mixture(c.mixture, ds.resolutions);
  mix.validate(&c.model, &ds);
  std::ofstream metrics(dir / "metrics.ndjson");
  write_metrics_header(metrics, R.hash);
  TrainHooks hooks;
  hooks.metrics = &metrics;
  const auto start = st.step;
  train(st, ds, mix, c.train, {}, hooks);
  save_checkpoint(dir / "checkpoint.dfu", st, R.json, {{"normalization", normalization_json(ds.normalization)}});
  out << "trained steps " << start << ".." << st.step << " -> " << (dir / "checkpoint.dfu").string() << "\n";
  return 0;
}

int cmd_finetune(const Resolved& R, std::ostream& out, std::ostream& err) {
  const auto& c = R.cfg;
  if (c.checkpoint.empty()) throw ConfigError("checkpoint: required for finetune");
  const fs::path dir = c.output_dir;
  OutputLock lock(dir);
  write_resolved_config(dir, R.json);
  auto ck = load_checkpoint(c.checkpoint);
  auto ds = load_data(c);
  if (!ds.has_resolution(c.finetune.R)) ds = with_upsampled_level(std::move(ds), c.finetune.R);
  FinetuneConfig fc = c.finetune;
  fc.train = c.train;

  // Audit: parameters reported as held must not move on that step.
  TensorMap prev = ck.state.model.params;
  std::size_t violations = 0, held_steps = 0;
  std::ofstream metrics(dir / "metrics.ndjson");
  write_metrics_header(metrics, R.hash);
  TrainHooks hooks;
  hooks.metrics = &metrics;
  hooks.on_step = [&](const StepInfo& s) {
    if (!s.held.empty()) ++held_steps;
    for (const auto& name : s.held)
      if (s.state.model.params.at(name) != prev.at(name)) {
        if (violations++ < 5) err << "finetune: held parameter " << name << " changed at step " << s.step << "\n";
      }
    prev = s.state.model.params;
  };
  auto st = finetune(ck.state.model, ds, fc, hooks);
  save_checkpoint(dir / "checkpoint.dfu", st, R.json, {{"normalization", normalization_json(ds.normalization)}});
  out << "finetuned to R=" << fc.R << " for " << st.step << " steps (" << held_steps
      << " steps with frozen kernels, " << violations << " violations) -> " << (dir / "checkpoint.dfu").string()
      << "\n";
  return violations ? 1 : 0;
}

int cmd_sample(const Resolved& R, std::ostream& out) {
  const auto& c = R.cfg;
  if (c.checkpoint.empty()) throw ConfigError("checkpoint: required for sample");
  auto ck = load_checkpoint(c.checkpoint);
  const ModelState& m = ck.state.model;
  for (auto r : c.sample.resolutions) check_resolution(m.spec, r);
  const fs::path dir = c.output_dir;
  OutputLock lock(dir);
  write_resolved_config(dir, R.json);
  const auto norm = normalization_from(ck);
  const TensorMap* params = c.sample.use_ema ? &ck.state.ema : nullptr;
  auto den = batch_model_denoiser(m, params);
  for (auto r : c.sample.resolutions) {
    auto imgs = draw_samples(den, r, c.sample.count, m.spec.image_channels, c, c.sample.seed);
    RawImage img = to_image_grid(imgs, norm, c.sample.cols);
    img.text = {{"config_hash", R.hash}, {"checkpoint_config_hash", ck.config_hash}, {"resolution", std::to_string(r)}};
    const fs::path png = dir / ("samples_r" + std::to_string(r) + ".png");
    write_png(png, img);
    Container raw;
    raw.metadata = {{"kind", "samples"}, {"resolution", r}, {"config_hash", R.hash}};
    raw.tensors.emplace_back("samples", stack(imgs));
    write_container(dir / ("samples_r" + std::to_string(r) + ".dfu"), raw);
    out << "r=" << r << " -> " << png.string() << "\n";
  }
  return 0;
}

int cmd_eval(const Resolved& R, std::ostream& out) {
  const auto& c = R.cfg;
  const auto& e = c.eval;
  const bool oracle_model = e.model == "oracle";
  std::unique_ptr<Checkpoint> ck;
  if (!oracle_model) {
    if (c.checkpoint.empty()) throw ConfigError("checkpoint: required unless eval.model is oracle");
    ck = std::make_unique<Checkpoint>(load_checkpoint(c.checkpoint));
    for (auto r : e.resolutions) check_resolution(ck->state.model.spec, r);
  }
  const bool gp = c.data.source == "synthetic" && c.data.synthetic.kind == SyntheticKind::gaussian_process;
  if (oracle_model && !gp) throw ConfigError("eval.model: the oracle needs a gaussian-process synthetic source");
  const bool wants_score = std::count(e.metrics.begin(), e.metrics.end(), "score-error") > 0;
  if (wants_score && !gp) throw ConfigError("eval.metrics: score-error needs a gaussian-process synthetic source");

  const fs::path dir = c.output_dir;
  OutputLock lock(dir);
  write_resolved_config(dir, R.json);
  std::ofstream log(dir / "eval.ndjson");
  auto emit = [&](Json j) {
    log << j.dump() << "\n";
    out << j.dump() << "\n";
  };
  const TensorMap* params = ck && e.use_ema ? &ck->state.ema : nullptr;
  const std::size_t channels = ck ? ck->state.model.spec.image_channels : c.data.synthetic.channels;
  std::size_t r_train = e.train_resolution;
  if (!r_train) r_train = *std::max_element(c.data.resolutions.begin(), c.data.resolutions.end());

  for (auto r : e.resolutions) {
    if (wants_score) {
      Rng rng(splitmix64(e.seed ^ (0x70726f62ULL + r)));
      auto probes = make_probes(c.data.synthetic, r, e.probe_sigmas, e.probes_per_sigma, rng);
      auto oracle = gaussian_item_denoiser(c.data.synthetic, r);
      auto rep = score_error(oracle_model ? oracle : model_denoiser(ck->state.model, params), oracle, probes);
      auto j = report("score-error", r, rep.mean, R.hash);
      j["probes"] = rep.used;
      emit(j);
    }
    const bool wants_fid = std::count(e.metrics.begin(), e.metrics.end(), "fid") > 0;
    const bool wants_spec = std::count(e.metrics.begin(), e.metrics.end(), "spectrum") > 0;
    if (!wants_fid && !wants_spec) continue;

    BatchDenoiser den;
    std::shared_ptr<GaussianDenoiser> exact;
    if (oracle_model) {
      exact = std::make_shared<GaussianDenoiser>(GaussianData::from_synthetic(c.data.synthetic, r),
                                                 sample_noise(c.sample.noise_alpha));
      den = [exact](const Tensor& x, double s) { return (*exact)(x, s); };
    } else {
      den = batch_model_denoiser(ck->state.model, params);
    }
    auto gen = draw_samples(den, r, e.samples, channels, c, e.seed);
    std::vector<GridFunction> ref;
    if (c.data.source == "synthetic") {
      auto spec = c.data.synthetic;
      spec.seed = splitmix64(spec.seed ^ e.seed ^ 0x68656c64ULL);
      auto held = build_dataset(spec, {r}, e.samples);
      for (std::size_t i = 0; i < held.size(); ++i) ref.push_back(held.at(i, r));
    } else {
      auto ds = load_data(c);
      if (!ds.has_resolution(r)) throw ConfigError("eval.resolutions: dataset has no reference level at " + std::to_string(r));
      for (std::size_t i = 0; i < ds.size(); ++i) ref.push_back(ds.at(i, r));
    }
    if (wants_fid) {
      FeatureExtractor fx(feature_kind_from_string(e.features), channels, e.feature_seed);
      auto j = report("fid", r, frechet_gaussian(extract(fx, gen), extract(fx, ref)), R.hash);
      j["extractor"] = fx.descriptor();
      j["samples_a"] = gen.size();
      j["samples_b"] = ref.size();
      emit(j);
    }
    if (wants_spec) {
      auto s = spectrum_scores(mean_spectrum(gen), mean_spectrum(ref), r_train);
      auto j1 = report("spectrum-coherence", r, s.coherence, R.hash);
      auto j2 = report("spectrum-fidelity", r, s.fidelity, R.hash);
      j1["split_bin"] = j2["split_bin"] = s.split_bin;
      emit(j1);
      emit(j2);
    }
  }
  return 0;
}

int cmd_gradcheck(double tol, std::uint64_t seed, std::ostream& out) {
  bool ok = true;
  for (const auto& c : gradient_suite(seed)) {
    const bool pass = c.report.passed(tol);
    ok = ok && pass;
    out << (pass ? "PASS " : "FAIL ") << c.name << " max_rel_err=" << c.report.worst() << "\n";
    if (!pass) out << c.report.summary() << "\n";
  }
  return ok ? 0 : 1;
}

int cmd_oracles(std::uint64_t seed, std::ostream& out) {
  bool ok = true;
  for (const auto& c : oracle_suite(seed)) {
    ok = ok && c.passed;
    out << (c.passed ? "PASS " : "FAIL ") << c.name << " value=" << c.value << " (" << c.criterion << ")";
    if (!c.detail.empty()) out << " " << c.detail;
    out << "\n";
  }
  return ok ? 0 : 1;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dual-FNO UNet diffusion toolkit", "dfu"};
  app.require_subcommand(1);

  Common prep_c, train_c, ft_c, samp_c, eval_c;
  auto* prep = app.add_subcommand("prepare-data", "build a multi-resolution dataset cache");
  add_common(prep, prep_c);

  auto* tr = app.add_subcommand("train", "train a model; writes checkpoint.dfu and metrics.ndjson");
  add_common(tr, train_c);
  std::optional<std::size_t> steps;
  std::optional<std::uint64_t> seed;
  std::string resume;
  tr->add_option("--steps", steps, "training steps");
  tr->add_option("--seed", seed, "training seed");
  tr->add_option("--resume", resume, "checkpoint to continue from");

  auto* ft = app.add_subcommand("finetune", "fine-tune at a resolution above the training range");
  add_common(ft, ft_c);
  std::string ft_ckpt;
  std::optional<std::size_t> ft_R, ft_steps;
  std::optional<double> ft_w;
  ft->add_option("--checkpoint", ft_ckpt, "pre-trained checkpoint");
  ft->add_option("--R", ft_R, "target resolution");
  ft->add_option("--w-R", ft_w, "probability of drawing a batch at R");
  ft->add_option("--steps", ft_steps, "fine-tuning steps");

  auto* sm = app.add_subcommand("sample", "write PNG grids of samples at several resolutions");
  add_common(sm, samp_c);
  std::string sm_ckpt, sm_res;
  std::optional<std::size_t> sm_count;
  sm->add_option("--checkpoint", sm_ckpt, "checkpoint to sample from");
  sm->add_option("--resolutions", sm_res, "comma-separated list, e.g. 32,64,128");
  sm->add_option("--count", sm_count, "samples per resolution");

  auto* ev = app.add_subcommand("eval", "proxy-FID, spectrum and score-error reports");
  add_common(ev, eval_c);
  std::string ev_ckpt, ev_res, ev_model;
  std::vector<std::string> ev_metrics;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint to evaluate");
  ev->add_option("--metric", ev_metrics, "score-error, fid or spectrum (repeatable)");
  ev->add_option("--model", ev_model, "checkpoint or oracle");
  ev->add_option("--resolutions", ev_res, "comma-separated list");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference checks of every op and a full network");
  double tol = 1e-4;
  std::uint64_t gc_seed = 7;
  gc->add_option("--tol", tol, "max relative error");
  gc->add_option("--seed", gc_seed, "seed");

  auto* orc = app.add_subcommand("oracle-suite", "Gaussian closed-form checks of score, noise and sampler");
  std::uint64_t orc_seed = 1;
  orc->add_option("--seed", orc_seed, "seed");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*prep) return cmd_prepare(resolve(prep_c, {}), out);
    if (*tr) {
      std::vector<std::pair<std::string, Json>> f;
      if (steps) f.emplace_back("train.steps", *steps);
      if (seed) f.emplace_back("train.seed", *seed);
      if (!resume.empty()) f.emplace_back("checkpoint", resume);
      return cmd_train(resolve(train_c, f), out);
    }
    if (*ft) {
      std::vector<std::pair<std::string, Json>> f;
      if (!ft_ckpt.empty()) f.emplace_back("checkpoint", ft_ckpt);
      if (ft_R) f.emplace_back("finetune.R", *ft_R);
      if (ft_w) f.emplace_back("finetune.w_R", *ft_w);
      if (ft_steps) f.emplace_back("train.steps", *ft_steps);
      return cmd_finetune(resolve(ft_c, f), out, err);
    }
    if (*sm) {
      std::vector<std::pair<std::string, Json>> f;
      if (!sm_ckpt.empty()) f.emplace_back("checkpoint", sm_ckpt);
      if (!sm_res.empty()) f.emplace_back("sample.resolutions", parse_list(sm_res, "sample.resolutions"));
      if (sm_count) f.emplace_back("sample.count", *sm_count);
      return cmd_sample(resolve(samp_c, f), out);
    }
    if (*ev) {
      std::vector<std::pair<std::string, Json>> f;
      if (!ev_ckpt.empty()) f.emplace_back("checkpoint", ev_ckpt);
      if (!ev_metrics.empty()) f.emplace_back("eval.metrics", ev_metrics);
      if (!ev_model.empty()) f.emplace_back("eval.model", ev_model);
      if (!ev_res.empty()) f.emplace_back("eval.resolutions", parse_list(ev_res, "eval.resolutions"));
      return cmd_eval(resolve(eval_c, f), out);
    }
    if (*gc) return cmd_gradcheck(tol, gc_seed, out);
    if (*orc) return cmd_oracles(orc_seed, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const ResolutionError& e) {
    err << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}

}  // namespace dfu
