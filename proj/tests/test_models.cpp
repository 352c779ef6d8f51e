#include "doctest.h"
#include "oars/models.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

using namespace oars;

namespace {

DenseLayer make_layer(int rows, int cols, std::vector<double> w, std::vector<double> b) {
  return DenseLayer{rows, cols, std::move(w), std::move(b)};
}

std::filesystem::path temp_file(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("zero-weight linear model predicts uniformly") {
  LinearModel m(make_layer(4, 3, std::vector<double>(12, 0.0), std::vector<double>(4, 0.0)));
  auto p = m.soft_predict(Sample::flat({0.3, 0.6, 0.9}));
  for (double v : p) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("identity linear model matches hand softmax") {
  LinearModel m(make_layer(2, 2, {1, 0, 0, 1}, {0, 0}));
  auto p = m.soft_predict(Sample::flat({1.0, 0.0}));
  const double e = std::exp(1.0);
  CHECK(p[0] == doctest::Approx(e / (e + 1)));
  CHECK(p[1] == doctest::Approx(1 / (e + 1)));
}

TEST_CASE("hard prediction is the argmax with low-index ties") {
  LinearModel m(make_layer(3, 1, {1, 1, 0}, {0, 0, 0}));
  CHECK(m.hard_predict(Sample::flat({0.7})) == 0);
}

TEST_CASE("attack losses match the contract") {
  CHECK(loss_from_probs({0.5, 0.5}, LossKind::targeted(0)) == doctest::Approx(std::log(0.5)));
  CHECK(loss_from_probs({0.9, 0.1}, LossKind::untargeted(0)) == doctest::Approx(0.8));
  CHECK_THROWS_AS(loss_from_probs({0.5, 0.5}, LossKind::targeted(7)), std::invalid_argument);
}

TEST_CASE("negative margin iff misclassified, two-class brute force") {
  RngStream rng(Seed{21});
  LinearModel m(make_layer(2, 4, {0.4, -0.2, 0.3, 0.1, -0.1, 0.5, -0.3, 0.2}, {0.05, -0.05}));
  for (int i = 0; i < 500; ++i) {
    std::vector<double> v(4);
    for (double& x : v) x = rng.uniform();
    auto s = Sample::flat(v);
    const int y = 0;
    const double margin = attack_loss(m, s, LossKind::untargeted(y));
    CHECK((margin < 0) == (m.hard_predict(s) != y));
  }
}

TEST_CASE("targeted log-prob rises with the target probability") {
  double prev = -1e9;
  for (double p : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    const double l = loss_from_probs({p, 1 - p}, LossKind::targeted(0));
    CHECK(l > prev);
    prev = l;
  }
}

TEST_CASE("weights round-trip through the file format") {
  std::vector<DenseLayer> layers;
  RngStream rng(Seed{77});
  layers.push_back(make_layer(3, 4, rng.gaussian_vec(12), rng.gaussian_vec(3)));
  layers.push_back(make_layer(2, 3, rng.gaussian_vec(6), rng.gaussian_vec(2)));
  const auto path = temp_file("oars_test_weights.json");
  save_weights(layers, path);

  auto loaded = load_weights(path);
  CHECK(loaded->input_dim() == 4);
  CHECK(loaded->num_classes() == 2);

  MlpModel reference(layers);
  RngStream xr(Seed{78});
  for (int i = 0; i < 20; ++i) {
    auto x = Sample::flat(xr.gaussian_vec(4));
    auto a = reference.soft_predict(x);
    auto b = loaded->soft_predict(x);
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-9));
  }
  // loading twice gives identical predictions
  auto loaded2 = load_weights(path);
  auto x = Sample::flat(xr.gaussian_vec(4));
  CHECK(loaded->soft_predict(x) == loaded2->soft_predict(x));
  std::filesystem::remove(path);
}

TEST_CASE("malformed and truncated weight files fail to parse") {
  const auto path = temp_file("oars_test_truncated.json");
  {
    std::ofstream out(path);
    out << "{\"activation\": \"relu\", \"layers\": [{\"rows\": 2, \"cols\": 2, \"wei";
  }
  CHECK_THROWS_AS(load_weights(path), std::runtime_error);
  {
    std::ofstream out(path);
    out << "{\"activation\": \"relu\", \"final\": \"softmax\", \"layers\": "
           "[{\"rows\": 2, \"cols\": 2, \"weights\": [1, 2, 3], \"bias\": [0, 0]}]}";
  }
  CHECK_THROWS_AS(load_weights(path), std::runtime_error);  // weight count mismatch
  std::filesystem::remove(path);
}

TEST_CASE("layer shapes propagate 4 -> 3 -> 2") {
  std::vector<DenseLayer> layers;
  layers.push_back(make_layer(3, 4, std::vector<double>(12, 0.1), std::vector<double>(3, 0.0)));
  layers.push_back(make_layer(2, 3, std::vector<double>(6, 0.1), std::vector<double>(2, 0.0)));
  const auto path = temp_file("oars_test_chain.json");
  save_weights(layers, path);
  auto m = load_weights(path);
  CHECK(m->input_dim() == 4);
  CHECK(m->num_classes() == 2);
  CHECK_NOTHROW(m->soft_predict(Sample::flat({0.1, 0.2, 0.3, 0.4})));
  std::filesystem::remove(path);
}

TEST_CASE("mismatched layer chain is rejected") {
  std::vector<DenseLayer> layers;
  layers.push_back(make_layer(3, 4, std::vector<double>(12, 0.1), std::vector<double>(3, 0.0)));
  layers.push_back(make_layer(2, 5, std::vector<double>(10, 0.1), std::vector<double>(2, 0.0)));
  CHECK_THROWS_AS(MlpModel(std::move(layers)), std::runtime_error);
}

TEST_CASE("synthetic task is reproducible") {
  auto t1 = generate_task(Seed{7}, 10, Shape{16, 16, 1});
  auto t2 = generate_task(Seed{7}, 10, Shape{16, 16, 1});
  RngStream r1(Seed{3}), r2(Seed{3});
  auto [x1, y1] = t1.draw(r1);
  auto [x2, y2] = t2.draw(r2);
  CHECK(y1 == y2);
  CHECK(x1 == x2);
}

TEST_CASE("reference task model reaches 95% accuracy on fresh draws") {
  auto task = generate_task(Seed{7}, 10, Shape{16, 16, 1});
  RngStream rng(Seed{123});
  int correct = 0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    auto [x, y] = task.draw(rng);
    correct += task.model().hard_predict(x) == y ? 1 : 0;
  }
  CHECK(correct >= 950);
}

TEST_CASE("ten classes all appear in a thousand draws") {
  auto task = generate_task(Seed{7}, 10, Shape{16, 16, 1});
  RngStream rng(Seed{55});
  std::set<int> seen;
  for (int i = 0; i < 1000; ++i) seen.insert(task.draw(rng).second);
  CHECK(seen.size() == 10);
}

TEST_CASE("argmax consistency over many random samples") {
  auto task = generate_task(Seed{11}, 4, Shape{8, 8, 1});
  RngStream rng(Seed{99});
  for (int i = 0; i < 10000; ++i) {
    std::vector<double> v(64);
    for (double& x : v) x = rng.uniform();
    auto s = Sample::flat(v);
    auto p = task.model().soft_predict(s);
    const int argmax = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    CHECK(task.model().hard_predict(s) == argmax);
  }
}
