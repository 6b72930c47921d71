#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "dfu/errors.hpp"
#include "dfu/grid.hpp"
#include "dfu/image_io.hpp"

using namespace dfu;

namespace {

GridFunction random_grid(std::size_t c, std::size_t r, Rng& rng) {
  std::vector<double> v(c * r * r);
  for (auto& x : v) x = rng.normal();
  return GridFunction(c, r, std::move(v));
}

// Independent per-pixel bilinear oracle with edge clamping.
double bilinear_oracle(const GridFunction& g, std::size_t ch, std::size_t i, std::size_t j, std::size_t rt) {
  const double rs = static_cast<double>(g.resolution());
  auto src = [&](double t) { return (t + 0.5) * rs / static_cast<double>(rt) - 0.5; };
  const double sy = src(static_cast<double>(i)), sx = src(static_cast<double>(j));
  auto clampi = [&](long k) { return static_cast<std::size_t>(std::max(0L, std::min(k, static_cast<long>(rs) - 1))); };
  const long y0 = static_cast<long>(std::floor(sy)), x0 = static_cast<long>(std::floor(sx));
  const double fy = sy - y0, fx = sx - x0;
  return (1 - fy) * (1 - fx) * g.at(ch, clampi(y0), clampi(x0)) + (1 - fy) * fx * g.at(ch, clampi(y0), clampi(x0 + 1)) +
         fy * (1 - fx) * g.at(ch, clampi(y0 + 1), clampi(x0)) + fy * fx * g.at(ch, clampi(y0 + 1), clampi(x0 + 1));
}

}  // namespace

TEST_CASE("constant function samples to constant") {
  SyntheticDistributionSpec s;
  for (std::size_t r : {1, 3, 16}) {
    auto g = GridFunction::from_function(2, r, [](std::size_t, double, double) { return 0.5; });
    for (double v : g.values()) CHECK(v == 0.5);
  }
}

TEST_CASE("sin(2 pi x) at r=4 varies across columns") {
  auto g = GridFunction::from_function(1, 4, [](std::size_t, double x, double) { return std::sin(2 * M_PI * x); });
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(g.at(0, i, j) == doctest::Approx(std::sin(2 * M_PI * (j + 0.5) / 4)));
}

TEST_CASE("band-limited draw is consistent across resolutions") {
  SyntheticDistributionSpec s{.kind = SyntheticKind::band_limited_fourier, .cutoff = 3, .seed = 5};
  Rng rng(42);
  auto a = sample_on_grid(s, 16, rng);
  auto b = sample_on_grid(s, 32, rng);
  auto b16 = resample(b, 16, ResampleMethod::spectral);
  CHECK(max_abs_diff(a.values(), b16.values()) < 1e-6);
  CHECK(max_abs_diff(resample(a, 32, ResampleMethod::spectral).values(), b.values()) < 1e-10);
}

TEST_CASE("unknown synthetic kind is a configuration error") {
  CHECK_THROWS_AS(synthetic_kind_from_string("plaid"), ConfigError);
}

TEST_CASE("resampling preserves constants") {
  auto g = GridFunction::constant(3, 7, -0.25);
  for (auto m : {ResampleMethod::bilinear, ResampleMethod::area, ResampleMethod::spectral})
    for (std::size_t r : {1, 5, 7, 13, 40}) {
      auto h = resample(g, r, m);
      CHECK(h.resolution() == r);
      for (double v : h.values()) CHECK(v == doctest::Approx(-0.25).epsilon(1e-12));
    }
}

TEST_CASE("resample to the same resolution is bit-identical") {
  Rng rng(1);
  auto g = random_grid(2, 9, rng);
  for (auto m : {ResampleMethod::bilinear, ResampleMethod::area, ResampleMethod::spectral}) CHECK(resample(g, 9, m) == g);
}

TEST_CASE("area downsampling conserves mass of an impulse") {
  std::vector<double> v(256 * 256, 0.0);
  v[123 * 256 + 77] = 255.0;
  GridFunction g(1, 256, v);
  auto h = resample(g, 96, ResampleMethod::area);
  double m0 = 0, m1 = 0;
  for (double x : g.values()) m0 += x / (256.0 * 256.0);
  for (double x : h.values()) m1 += x / (96.0 * 96.0);
  CHECK(std::abs(m1 - m0) / m0 < 1e-6);
}

TEST_CASE("bilinear upsampling matches a per-pixel oracle") {
  Rng rng(2);
  auto g = random_grid(1, 96, rng);
  auto h = resample(g, 160, ResampleMethod::bilinear);
  double worst = 0;
  for (std::size_t i = 0; i < 160; ++i)
    for (std::size_t j = 0; j < 160; ++j) worst = std::max(worst, std::abs(h.at(0, i, j) - bilinear_oracle(g, 0, i, j, 160)));
  CHECK(worst < 1e-12);
}

TEST_CASE("area downsampling composes through divisible intermediates") {
  Rng rng(3);
  auto g = random_grid(1, 256, rng);
  auto direct = resample(g, 32, ResampleMethod::area);
  auto two = resample(resample(g, 128, ResampleMethod::area), 32, ResampleMethod::area);
  CHECK(max_abs_diff(direct.values(), two.values()) < 1e-4);
}

TEST_CASE("band-limited round trip through spectral interpolation") {
  SyntheticDistributionSpec s{.kind = SyntheticKind::band_limited_fourier, .cutoff = 4, .seed = 9};
  Rng rng(9);
  const auto a = sample_on_grid(s, 11, rng);
  for (std::size_t r : {9, 12, 17, 24}) {
    auto b = resample(a, r, ResampleMethod::spectral);
    CHECK(max_abs_diff(b.values(), sample_on_grid(s, r, rng).values()) < 1e-6);
    CHECK(max_abs_diff(resample(b, 11, ResampleMethod::spectral).values(), a.values()) < 1e-6);
  }
}

TEST_CASE("synthetic datasets and their upsampled level") {
  SyntheticDistributionSpec s{.kind = SyntheticKind::gaussian_process, .seed = 4};
  auto ds = build_dataset(s, {32, 16, 24}, 3);
  CHECK(ds.resolutions == std::vector<std::size_t>{16, 24, 32});
  CHECK(ds.size() == 3);
  ds.validate();
  auto up = with_upsampled_level(ds, 48);
  CHECK(up.at(1, 48) == resample(ds.at(1, 32), 48, ResampleMethod::bilinear));
  CHECK_THROWS_AS(with_upsampled_level(ds, 32), ConfigError);
  auto empty = build_dataset(s, {16}, 0);
  CHECK(empty.size() == 0);
  for (const auto& e : empty.entries) (void)e;
}

TEST_CASE("image directories: ingestion and errors") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "dfu_grid_test_images";
  fs::remove_all(dir);
  fs::create_directories(dir);
  RawImage img{.width = 64, .height = 64, .channels = 3};
  img.pixels.resize(64 * 64 * 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>((i * 37) % 256);
  write_png(dir / "a.png", img);
  auto back = read_png(dir / "a.png");
  CHECK(back.pixels == img.pixels);
  auto ds = build_dataset(dir, {16, 32}, 1);
  CHECK(ds.channels == 3);
  for (double v : ds.at(0, 16).values()) CHECK((v >= -1.0 && v <= 1.0));
  CHECK_THROWS_AS(build_dataset(dir, {128}, 1), IngestionError);
  CHECK_THROWS_AS(build_dataset(dir, {16}, 2), IngestionError);
  RawImage wide{.width = 40, .height = 32, .channels = 1};
  wide.pixels.resize(40 * 32);
  write_png(dir / "b.png", wide);
  try {
    build_dataset(dir, {16}, 2);
    FAIL("expected IngestionError");
  } catch (const IngestionError& e) {
    CHECK(std::string(e.what()).find("b.png") != std::string::npos);
  }
  CHECK_THROWS_AS(build_dataset(dir / "missing", {16}, 1), IngestionError);
  fs::remove_all(dir);
}
