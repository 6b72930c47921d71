#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>
#include <zlib.h>

#include "doctest.h"
#include "dfu/checkpoint.hpp"
#include "dfu/config.hpp"
#include "dfu/errors.hpp"

using namespace dfu;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int n = 0;
    path = fs::temp_directory_path() / ("dfu_persist_" + std::to_string(::getpid()) + "_" + std::to_string(n++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ModelSpec tiny() {
  ModelSpec s;
  s.levels = 2;
  s.blocks = 1;
  s.base_channels = 4;
  s.multipliers = {1, 2};
  s.modes = 4;
  s.groups = 2;
  s.embedding_dim = 16;
  return s;
}

SyntheticDistributionSpec gp() {
  SyntheticDistributionSpec s;
  s.cutoff = 3;
  s.amplitude = 0.4;
  return s;
}

TrainConfig quick(std::size_t steps) {
  TrainConfig c;
  c.steps = steps;
  c.batch = 4;
  c.seed = 5;
  return c;
}

TrainState trained(std::size_t steps, const MultiResDataset& ds) {
  Rng init(3);
  auto st = init_train_state(build(tiny(), init), 5);
  train(st, ds, ResolutionMixture::uniform(ds.resolutions), quick(steps));
  return st;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

void check_same(const TrainState& a, const TrainState& b) {
  CHECK(to_json(a.model.spec) == to_json(b.model.spec));
  CHECK(a.model.params == b.model.params);
  CHECK(a.model.frozen == b.model.frozen);
  CHECK(a.model.info.size() == b.model.info.size());
  CHECK(a.ema == b.ema);
  CHECK(a.adam.m == b.adam.m);
  CHECK(a.adam.v == b.adam.v);
  CHECK(a.adam.t == b.adam.t);
  CHECK(a.step == b.step);
  CHECK(a.mix_rng.state() == b.mix_rng.state());
  CHECK(a.data_rng.state() == b.data_rng.state());
}

}  // namespace

TEST_CASE("config: defaults resolve, round trip and hash") {
  RunConfig c = parse_config(Json::object());
  Json j = to_json(c);
  CHECK(to_json(parse_config(j)) == j);
  CHECK(config_hash(j).size() == 16);
  CHECK(config_hash(j) == config_hash(to_json(parse_config(j))));
  Json k = j;
  k["train"]["lr"] = 2e-4;
  CHECK(config_hash(k) != config_hash(j));
  k = j;
  k["output_dir"] = "elsewhere";
  CHECK(config_hash(k) == config_hash(j));
  CHECK(j.at("train").at("steps") == c.train.steps);
  CHECK(j.at("model").at("arch") == "dfu");
}

TEST_CASE("config: unknown keys and bad values name the key path") {
  CHECK(error_of([] { parse_config(Json::parse(R"({"train": {"lrr": 1}})")); }).find("train.lrr") != std::string::npos);
  CHECK(error_of([] { parse_config(Json::parse(R"({"data": {"synthetic": {"colour": 1}}})")); })
            .find("data.synthetic.colour") != std::string::npos);
  CHECK(error_of([] { parse_config(Json::parse(R"({"bogus": 1})")); }).find("bogus") != std::string::npos);
  CHECK(error_of([] { parse_config(Json::parse(R"({"train": {"steps": "many"}})")); }).find("train.steps") !=
        std::string::npos);
  CHECK(error_of([] { parse_config(Json::parse(R"({"model": {"levels": 0}})")); }).rfind("model", 0) == 0);
  CHECK(error_of([] { parse_config(Json::parse(R"({"mixture": {"fixed": {"x": 0.5}}})")); }).find("mixture.fixed.x") !=
        std::string::npos);
  CHECK_THROWS_AS(parse_config(Json::parse(R"({"eval": {"metrics": ["is"]}})")), ConfigError);
  CHECK_THROWS_AS(parse_config(Json::parse(R"({"model": {"arch": "resnet"}})")), ConfigError);
}

TEST_CASE("config: weighted mixture from keys") {
  RunConfig c = parse_config(Json::parse(R"({"mixture": {"kind": "weighted", "fixed": {"96": 0.4, "80": 0.3}}})"));
  auto mix = make_mixture(c.mixture, {32, 48, 64, 80, 96});
  CHECK(mix.weights.at(96) == doctest::Approx(0.4));
  CHECK(mix.weights.at(80) == doctest::Approx(0.3));
  double sum = 0.0;
  for (auto& [r, w] : mix.weights) sum += w;
  CHECK(sum == doctest::Approx(1.0));
}

TEST_CASE("output lock admits one writer") {
  TempDir t;
  {
    OutputLock a(t.path);
    CHECK(fs::exists(t.path / ".lock"));
    CHECK_THROWS_AS(OutputLock(t.path), StateError);
  }
  CHECK_FALSE(fs::exists(t.path / ".lock"));
  OutputLock again(t.path);
}

TEST_CASE("checkpoint round trip is bit-exact and re-saving is byte-identical") {
  TempDir t;
  auto ds = build_dataset(gp(), {8, 12}, 8);
  auto st = trained(3, ds);
  st.model.frozen.begin()->second = true;
  const Json cfg = to_json(parse_config(Json::object()));
  save_checkpoint(t.path / "a.dfu", st, cfg, {{"note", 1}});
  auto ck = load_checkpoint(t.path / "a.dfu");
  check_same(st, ck.state);
  CHECK(ck.config == cfg);
  CHECK(ck.config_hash == config_hash(cfg));
  CHECK(ck.extra.at("note") == 1);
  save_checkpoint(t.path / "b.dfu", ck.state, ck.config, ck.extra);
  CHECK(slurp(t.path / "a.dfu") == slurp(t.path / "b.dfu"));
  CHECK(slurp(t.path / "a.dfu").substr(0, 4) == "DFU1");
}

TEST_CASE("corrupt, truncated and foreign containers are rejected") {
  TempDir t;
  auto ds = build_dataset(gp(), {8}, 4);
  auto st = trained(1, ds);
  save_checkpoint(t.path / "ok.dfu", st, Json::object());
  const std::string bytes = slurp(t.path / "ok.dfu");

  spit(t.path / "trunc.dfu", bytes.substr(0, bytes.size() / 2));
  CHECK(error_of([&] { load_checkpoint(t.path / "trunc.dfu"); }).find("checksum") != std::string::npos);
  CHECK_THROWS_AS(load_checkpoint(t.path / "trunc.dfu"), CheckpointError);

  std::string flip = bytes;
  flip[bytes.size() / 3] ^= 0x10;
  spit(t.path / "flip.dfu", flip);
  CHECK(error_of([&] { load_checkpoint(t.path / "flip.dfu"); }).find("checksum") != std::string::npos);

  spit(t.path / "magic.dfu", "PNG1" + bytes.substr(4));
  CHECK(error_of([&] { load_checkpoint(t.path / "magic.dfu"); }).find("magic") != std::string::npos);

  // A well-formed container of a newer version: checksum valid, version rejected.
  std::string v2 = bytes.substr(0, bytes.size() - 4);
  const std::uint32_t two = 2;
  std::memcpy(v2.data() + 4, &two, 4);
  const auto crc = static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(v2.data()), v2.size()));
  v2.append(reinterpret_cast<const char*>(&crc), 4);
  spit(t.path / "v2.dfu", v2);
  const std::string msg = error_of([&] { load_checkpoint(t.path / "v2.dfu"); });
  CHECK(msg.find("version 2") != std::string::npos);
  CHECK(msg.find("version 1") != std::string::npos);

  CHECK_THROWS_AS(load_checkpoint(t.path / "missing.dfu"), CheckpointError);
}

TEST_CASE("checkpoint tables must match the model exactly") {
  TempDir t;
  auto ds = build_dataset(gp(), {8}, 4);
  auto st = trained(1, ds);
  save_checkpoint(t.path / "ok.dfu", st, Json::object());
  Container c = read_container(t.path / "ok.dfu");

  Container missing = c;
  missing.tensors.erase(missing.tensors.begin());
  write_container(t.path / "missing.dfu", missing);
  CHECK(error_of([&] { load_checkpoint(t.path / "missing.dfu"); }).find("missing") != std::string::npos);

  Container extra = c;
  extra.tensors.emplace_back("param/stray", Tensor({2}));
  write_container(t.path / "extra.dfu", extra);
  CHECK(error_of([&] { load_checkpoint(t.path / "extra.dfu"); }).find("stray") != std::string::npos);

  Container dup = c;
  dup.tensors.push_back(dup.tensors.front());
  write_container(t.path / "dup.dfu", dup);
  CHECK(error_of([&] { load_checkpoint(t.path / "dup.dfu"); }).find("twice") != std::string::npos);

  Container shape = c;
  shape.tensors.front().second = Tensor({1});
  write_container(t.path / "shape.dfu", shape);
  CHECK(error_of([&] { load_checkpoint(t.path / "shape.dfu"); }).find("shape") != std::string::npos);
}

TEST_CASE("resuming from a checkpoint continues the exact trajectory") {
  TempDir t;
  auto ds = build_dataset(gp(), {8, 12}, 8);
  auto full = trained(4, ds);
  auto half = trained(2, ds);
  save_checkpoint(t.path / "half.dfu", half, Json::object());
  auto resumed = load_checkpoint(t.path / "half.dfu").state;
  train(resumed, ds, ResolutionMixture::uniform(ds.resolutions), quick(2));
  check_same(full, resumed);
}

TEST_CASE("dataset cache round trip") {
  TempDir t;
  auto ds = build_dataset(gp(), {8, 12, 16}, 5);
  save_dataset(t.path / "ds.dfu", ds, Json::object());
  auto back = load_dataset(t.path / "ds.dfu");
  CHECK(back.resolutions == ds.resolutions);
  CHECK(back.channels == ds.channels);
  CHECK(back.normalization.scale == ds.normalization.scale);
  CHECK(back.normalization.shift == ds.normalization.shift);
  REQUIRE(back.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (auto r : ds.resolutions) CHECK(back.at(i, r) == ds.at(i, r));
  CHECK_THROWS_AS(load_checkpoint(t.path / "ds.dfu"), CheckpointError);
}
