#include "doctest.h"
#include "oars/core.hpp"

#include <cmath>

using namespace oars;

TEST_CASE("distance identity and simple cases") {
  auto a = Sample::flat({0, 0, 0, 0});
  auto b = Sample::flat({1, 1, 1, 1});
  CHECK(distance(a, a, NormKind::L2) == 0.0);
  CHECK(distance(a, a, NormKind::LInf) == 0.0);
  CHECK(distance(a, b, NormKind::LInf) == doctest::Approx(1.0));
  // normalized L2: sqrt(4)/sqrt(4) = 1
  PerturbationBudget budget{NormKind::L2, 1.0, true};
  CHECK(budget_distance(a, b, budget) == doctest::Approx(1.0));
}

TEST_CASE("distance rejects shape mismatch") {
  auto a = Sample::flat({0, 0});
  auto b = Sample::flat({0, 0, 0});
  CHECK_THROWS_AS(distance(a, b, NormKind::L2), std::invalid_argument);
}

TEST_CASE("distance symmetry and triangle inequality on random triples") {
  RngStream rng(Seed{11});
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> av(8), bv(8), cv(8);
    for (auto* v : {&av, &bv, &cv})
      for (double& x : *v) x = rng.uniform();
    auto a = Sample::flat(av), b = Sample::flat(bv), c = Sample::flat(cv);
    for (auto norm : {NormKind::L2, NormKind::LInf}) {
      CHECK(distance(a, b, norm) == doctest::Approx(distance(b, a, norm)).epsilon(1e-12));
      CHECK(distance(a, c, norm) <= distance(a, b, norm) + distance(b, c, norm) + 1e-9);
    }
  }
}

TEST_CASE("project clamps into the linf ball then the box") {
  auto center = Sample::flat(std::vector<double>(4, 0.5));
  auto x = Sample::flat(std::vector<double>(4, 0.9));
  PerturbationBudget budget{NormKind::LInf, 0.1, false};
  auto p = project(x, center, budget);
  for (double v : p.data) CHECK(v == doctest::Approx(0.6));

  // inside the ball: unchanged
  auto inside = Sample::flat(std::vector<double>(4, 0.55));
  CHECK(project(inside, center, budget) == inside);
}

TEST_CASE("project scales l2 overshoot back onto the sphere") {
  auto center = Sample::flat(std::vector<double>(4, 0.0));
  const double eps = 0.1;
  auto x = Sample::flat(std::vector<double>(4, eps));  // norm 2*eps
  PerturbationBudget budget{NormKind::L2, eps, false};
  auto p = project(x, center, budget);
  CHECK(distance(p, center, NormKind::L2) == doctest::Approx(eps).epsilon(1e-12));
  // same ray: all coordinates equal
  for (double v : p.data) CHECK(v == doctest::Approx(p.data[0]));
  CHECK(in_unit_box(p));
}

TEST_CASE("project is exactly idempotent") {
  RngStream rng(Seed{5});
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> cv(10), xv(10);
    for (double& v : cv) v = rng.uniform();
    for (double& v : xv) v = rng.uniform(-0.5, 1.5);
    auto center = Sample::flat(cv);
    auto x = Sample::flat(xv);
    for (auto norm : {NormKind::L2, NormKind::LInf}) {
      PerturbationBudget budget{norm, 0.2, false};
      auto once = project(x, center, budget);
      auto twice = project(once, center, budget);
      CHECK(once == twice);  // bit-identical
    }
  }
}

TEST_CASE("rng streams are deterministic and seed-sensitive") {
  RngStream a(Seed{42}), b(Seed{42}), c(Seed{43});
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 100; ++i) {
    const double va = a.uniform(), vb = b.uniform(), vc = c.uniform();
    all_equal = all_equal && va == vb;
    any_diff = any_diff || va != vc;
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("gaussian draws have near-zero mean at large n") {
  RngStream rng(Seed{314});
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) sum += rng.gaussian();
  CHECK(std::abs(sum / n) < 0.02);
}

TEST_CASE("forked streams are reproducible") {
  RngStream a(Seed{9}), b(Seed{9});
  auto fa = a.fork(3);
  auto fb = b.fork(3);
  for (int i = 0; i < 10; ++i) CHECK(fa.uniform() == fb.uniform());
}

TEST_CASE("soft outcome sanity") {
  auto o = QueryOutcome::soft({0.25, 0.75});
  CHECK(o.answered());
  CHECK(o.answered_label() == 1);
  CHECK(QueryOutcome::rejected().actioned());
  CHECK(QueryOutcome::banned().actioned());
  // argmax ties break to the lowest index
  CHECK(QueryOutcome::soft({0.5, 0.5}).answered_label() == 0);
}
