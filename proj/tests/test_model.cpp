#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "feddet/model.hpp"
#include "feddet/rng.hpp"

using namespace feddet;

namespace {

std::vector<double> random_image(const ModelConfig& cfg, Rng& rng) {
  std::vector<double> img(static_cast<std::size_t>(cfg.input_pixels()));
  for (double& p : img) p = rng.uniform();
  return img;
}

ParamVector random_params(const ModelConfig& cfg, Rng& rng) {
  ParamVector p(param_count(cfg));
  for (double& v : p) v = rng.normal(0.0, 0.5);
  return p;
}

GridPrediction random_upstream(const ModelConfig& cfg, Rng& rng) {
  GridPrediction g;
  g.grid_size = cfg.grid_size;
  g.boxes_per_cell = cfg.boxes_per_cell;
  g.num_classes = cfg.num_classes;
  g.values.resize(static_cast<std::size_t>(cfg.output_size()));
  for (double& v : g.values) v = rng.normal(0.0, 1.0);
  return g;
}

double inner(const GridPrediction& upstream, const GridPrediction& pred) {
  double s = 0.0;
  for (std::size_t i = 0; i < pred.values.size(); ++i)
    s += upstream.values[i] * pred.values[i];
  return s;
}

// Central finite differences of f(theta) = <upstream, forward(theta, img)>.
// Returns the largest relative error against the analytic gradient, with an
// absolute floor so near-zero coordinates do not blow up the ratio.
double max_fd_error(const ModelConfig& cfg, const ParamVector& params,
                    const std::vector<double>& img, const GridPrediction& upstream,
                    double step = 1e-4, double abs_floor = 1e-8) {
  const ParamVector analytic = backward(cfg, params, img, upstream);
  ParamVector theta = params;
  double worst = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double keep = theta[i];
    theta[i] = keep + step;
    const double hi = inner(upstream, forward(cfg, theta, img));
    theta[i] = keep - step;
    const double lo = inner(upstream, forward(cfg, theta, img));
    theta[i] = keep;
    const double numeric = (hi - lo) / (2.0 * step);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), abs_floor});
    worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
  }
  return worst;
}

ModelConfig random_small_config(Rng& rng, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.input_height = 2 + static_cast<int>(rng.uniform_index(7));  // 2..8
  cfg.input_width = 2 + static_cast<int>(rng.uniform_index(7));
  cfg.grid_size = 1 + static_cast<int>(rng.uniform_index(
                          static_cast<std::size_t>(std::min(cfg.input_height,
                                                            cfg.input_width))));
  cfg.boxes_per_cell = 1 + static_cast<int>(rng.uniform_index(2));
  cfg.num_classes = 1 + static_cast<int>(rng.uniform_index(3));
  cfg.hidden_width = 1 + static_cast<int>(rng.uniform_index(6));
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("parameter count matches layer enumeration") {
  ModelConfig tiny;
  tiny.input_height = 2;
  tiny.input_width = 2;
  tiny.grid_size = 1;
  tiny.boxes_per_cell = 1;
  tiny.num_classes = 1;
  tiny.hidden_width = 1;
  CHECK(param_count(tiny) == 17);  // (4*1+1) + (1*6+6)

  Rng rng(101);
  for (int t = 0; t < 50; ++t) {
    const ModelConfig cfg = random_small_config(rng, t);
    const std::size_t in = static_cast<std::size_t>(cfg.input_pixels());
    const std::size_t h = static_cast<std::size_t>(cfg.hidden_width);
    const std::size_t out = static_cast<std::size_t>(cfg.output_size());
    CHECK(param_count(cfg) == in * h + h + h * out + out);
    CHECK(init_params(cfg).size() == param_count(cfg));
  }
}

TEST_CASE("config validation rejects nonsense") {
  ModelConfig cfg;
  cfg.grid_size = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = ModelConfig{};
  cfg.input_height = 2;  // smaller than grid_size 4
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = ModelConfig{};
  cfg.hidden_width = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  CHECK_NOTHROW(ModelConfig{}.validate());
}

TEST_CASE("init is deterministic in the seed, biases zero, weights bounded") {
  ModelConfig cfg;
  cfg.input_height = 8;
  cfg.input_width = 8;
  cfg.grid_size = 2;
  cfg.hidden_width = 5;
  cfg.seed = 77;

  const ParamVector a = init_params(cfg);
  const ParamVector b = init_params(cfg);
  CHECK(a == b);

  cfg.seed = 78;
  const ParamVector c = init_params(cfg);
  CHECK(a != c);

  const std::size_t in = 64, h = 5;
  const std::size_t out = static_cast<std::size_t>(cfg.output_size());
  const double a1 = std::sqrt(6.0 / (static_cast<double>(in) + h));
  const double a2 = std::sqrt(6.0 / (static_cast<double>(h) + out));
  for (std::size_t i = 0; i < in * h; ++i) CHECK(std::abs(a[i]) <= a1);
  for (std::size_t i = in * h; i < in * h + h; ++i) CHECK(a[i] == 0.0);
  for (std::size_t i = in * h + h; i < in * h + h + h * out; ++i)
    CHECK(std::abs(a[i]) <= a2);
  for (std::size_t i = in * h + h + h * out; i < a.size(); ++i) CHECK(a[i] == 0.0);
}

TEST_CASE("all-zero parameters squash every output to 0.5") {
  ModelConfig cfg;
  cfg.input_height = 4;
  cfg.input_width = 4;
  cfg.grid_size = 2;
  cfg.hidden_width = 3;
  const ParamVector zeros(param_count(cfg), 0.0);
  Rng rng(5);
  const auto img = random_image(cfg, rng);
  const GridPrediction pred = forward(cfg, zeros, img);
  CHECK(pred.values.size() == static_cast<std::size_t>(cfg.output_size()));
  for (double v : pred.values) CHECK(v == 0.5);
}

TEST_CASE("forward is pure and stays inside the open unit interval") {
  Rng rng(11);
  for (int t = 0; t < 20; ++t) {
    const ModelConfig cfg = random_small_config(rng, 1000 + t);
    const auto img = random_image(cfg, rng);
    const auto params = random_params(cfg, rng);
    const GridPrediction p1 = forward(cfg, params, img);
    const GridPrediction p2 = forward(cfg, params, img);
    CHECK(p1.values == p2.values);
    for (double v : p1.values) {
      CHECK(std::isfinite(v));
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
}

TEST_CASE("forward rejects shape mismatches and non-finite pixels") {
  ModelConfig cfg;
  cfg.input_height = 4;
  cfg.input_width = 4;
  cfg.grid_size = 2;
  cfg.hidden_width = 2;
  const ParamVector params = init_params(cfg);
  std::vector<double> img(16, 0.5);

  std::vector<double> short_img(15, 0.5);
  CHECK_THROWS_AS(forward(cfg, params, short_img), std::invalid_argument);

  ParamVector short_params(params.begin(), params.end() - 1);
  CHECK_THROWS_AS(forward(cfg, short_params, img), std::invalid_argument);

  img[3] = std::nan("");
  CHECK_THROWS_AS(forward(cfg, params, img), std::invalid_argument);
}

TEST_CASE("backward: zero upstream gives zero gradient, linear in upstream") {
  Rng rng(23);
  const ModelConfig cfg = random_small_config(rng, 42);
  const auto img = random_image(cfg, rng);
  const auto params = random_params(cfg, rng);

  GridPrediction zero_up = GridPrediction::zeros_like(forward(cfg, params, img));
  for (double g : backward(cfg, params, img, zero_up)) CHECK(g == 0.0);

  const GridPrediction g1 = random_upstream(cfg, rng);
  const GridPrediction g2 = random_upstream(cfg, rng);
  GridPrediction g12 = g1;
  for (std::size_t i = 0; i < g12.values.size(); ++i) g12.values[i] += g2.values[i];

  const ParamVector b1 = backward(cfg, params, img, g1);
  const ParamVector b2 = backward(cfg, params, img, g2);
  const ParamVector b12 = backward(cfg, params, img, g12);
  for (std::size_t i = 0; i < b12.size(); ++i)
    CHECK(std::abs(b12[i] - (b1[i] + b2[i])) < 1e-9);
}

TEST_CASE("analytic gradient matches central finite differences") {
  Rng rng(314159);
  int instances = 0;
  double worst = 0.0;
  while (instances < 110) {
    const ModelConfig cfg = random_small_config(rng, 9000 + instances);
    const auto img = random_image(cfg, rng);
    const auto params = random_params(cfg, rng);
    const GridPrediction upstream = random_upstream(cfg, rng);
    worst = std::max(worst, max_fd_error(cfg, params, img, upstream));
    ++instances;
  }
  INFO("worst relative error ", worst);
  CHECK(worst < 1e-4);
}

TEST_CASE("backward is bit-reproducible") {
  Rng rng(99);
  const ModelConfig cfg = random_small_config(rng, 7);
  const auto img = random_image(cfg, rng);
  const auto params = random_params(cfg, rng);
  const GridPrediction upstream = random_upstream(cfg, rng);
  CHECK(backward(cfg, params, img, upstream) ==
        backward(cfg, params, img, upstream));
}
