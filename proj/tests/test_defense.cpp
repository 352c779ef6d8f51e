#include "doctest.h"
#include "oars/defense.hpp"

#include <atomic>
#include <cmath>
#include <thread>

using namespace oars;

namespace {

Sample random_sample(RngStream& rng, Shape shape) {
  Sample s = Sample::constant(shape, 0.0);
  for (double& v : s.data) v = rng.uniform();
  return s;
}

LinearModel tiny_model(int dim, int classes) {
  RngStream rng(Seed{5150});
  DenseLayer l;
  l.rows = classes;
  l.cols = dim;
  l.weights = rng.gaussian_vec(classes * dim);
  l.bias = rng.gaussian_vec(classes);
  return LinearModel(std::move(l));
}

}  // namespace

TEST_CASE("pixel hash is deterministic and carries the sketch size") {
  RngStream rng(Seed{1});
  auto x = random_sample(rng, Shape{16, 16, 1});
  PixelHashConfig cfg;
  auto a = pixel_hash(x, cfg);
  auto b = pixel_hash(x, cfg);
  CHECK(a.hashes == b.hashes);
  CHECK(a.hashes.size() == 50);
  CHECK(std::is_sorted(a.hashes.begin(), a.hashes.end()));
}

TEST_CASE("pixel hash ignores perturbations that stay inside quantization buckets") {
  PixelHashConfig cfg;  // quantization 50: buckets are 50/255 wide
  Shape shape{16, 16, 1};
  // park every pixel mid-bucket, then wiggle by less than half a bucket
  Sample x = Sample::constant(shape, 0.0);
  RngStream rng(Seed{2});
  for (double& v : x.data) {
    const int bucket = rng.uniform_int(0, 4);
    v = (bucket * 50.0 + 5.0) / 255.0;
  }
  Sample y = x;
  for (double& v : y.data) v += 20.0 / 255.0;  // stays inside the same bucket
  // verify bucket-for-bucket equality as the independent check
  for (std::size_t i = 0; i < x.data.size(); ++i)
    REQUIRE(std::floor(x.data[i] * 255.0 / 50.0) == std::floor(y.data[i] * 255.0 / 50.0));
  CHECK(fingerprint_distance(pixel_hash(x, cfg), pixel_hash(y, cfg)) == 0.0);
}

TEST_CASE("pixel hash rejects samples shorter than a window") {
  PixelHashConfig cfg;
  CHECK_THROWS_AS(pixel_hash(Sample::flat({0.1, 0.2}), cfg), std::invalid_argument);
}

TEST_CASE("piha signature is deterministic and constant images all agree") {
  PihaConfig cfg;
  auto a = Sample::constant(Shape{16, 16, 1}, 0.3);
  auto b = Sample::constant(Shape{16, 16, 1}, 0.8);
  auto sa = piha_hash(a, cfg);
  CHECK(sa.words == piha_hash(a, cfg).words);
  CHECK(bit_distance(sa, piha_hash(b, cfg)) == 0.0);
  CHECK(sa.nbits == 4 * 256);  // two 7x7 blocks per side on 16x16
}

TEST_CASE("piha needs an image") {
  CHECK_THROWS_AS(piha_hash(Sample::flat({0.1, 0.2, 0.3}), PihaConfig{}), std::invalid_argument);
}

TEST_CASE("encoder output is unit norm, deterministic, and scale invariant") {
  EncoderConfig cfg;
  FeatureEncoder enc(cfg, 64);
  RngStream rng(Seed{3});
  Sample x = random_sample(rng, Shape{8, 8, 1});
  for (double& v : x.data) v *= 0.5;  // keep 2x inside the box
  auto e1 = enc.encode(x);
  auto e2 = enc.encode(x);
  CHECK(e1.values == e2.values);
  CHECK(e1.values.size() == 32);
  double n = 0;
  for (double v : e1.values) n += v * v;
  CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));

  Sample x2 = x;
  for (double& v : x2.data) v *= 2.0;
  auto e3 = enc.encode(x2);
  for (std::size_t i = 0; i < e1.values.size(); ++i)
    CHECK(e1.values[i] == doctest::Approx(e3.values[i]).epsilon(1e-9));
}

TEST_CASE("store scores follow the knn contract") {
  SimilarityProcedure l2{SimilarityProcedure::Metric::KnnL2, 2, 0.5};
  QueryStore store(StoreScope::Global, 100);
  Embedding q{{1.0, 0.0}};
  CHECK(!store.score(0, Feature{q}, l2).has_value());  // empty store

  // distances 1 and 3 from the query, k=2 -> mean 2
  store.insert(0, Feature{Embedding{{0.0, 0.0}}});
  store.insert(0, Feature{Embedding{{-2.0, 0.0}}});
  auto s = store.score(0, Feature{q}, l2);
  REQUIRE(s.has_value());
  CHECK(*s == doctest::Approx(2.0));

  // fewer entries than k: mean over those present
  QueryStore store1(StoreScope::Global, 100);
  store1.insert(0, Feature{Embedding{{0.0, 0.0}}});
  auto s1 = store1.score(0, Feature{q},
                         SimilarityProcedure{SimilarityProcedure::Metric::KnnL2, 5, 0.5});
  REQUIRE(s1.has_value());
  CHECK(*s1 == doctest::Approx(1.0));
}

TEST_CASE("fingerprint store finds exact duplicates at distance zero") {
  RngStream rng(Seed{4});
  auto x = random_sample(rng, Shape{16, 16, 1});
  auto fp = pixel_hash(x, PixelHashConfig{});
  QueryStore store(StoreScope::Global, 100);
  store.insert(0, Feature{fp});
  auto s = store.score(0, Feature{fp},
                       SimilarityProcedure{SimilarityProcedure::Metric::KnnHamming, 1, 0.5});
  REQUIRE(s.has_value());
  CHECK(*s == 0.0);
}

TEST_CASE("defended endpoint answers fresh queries and rejects duplicates") {
  auto model = tiny_model(256, 4);
  SdmInstance sdm(SdmConfig::blacklight(), 256);
  RngStream rng(Seed{6});
  auto x = random_sample(rng, Shape{16, 16, 1});
  auto first = sdm.query(1, x, model, LabelMode::Soft);
  CHECK(first.kind == QueryOutcome::Kind::Soft);
  auto second = sdm.query(1, x, model, LabelMode::Soft);
  CHECK(second.kind == QueryOutcome::Kind::Rejected);
  CHECK(sdm.collisions_observed() == 1);
  CHECK(sdm.queries_observed() == 2);

  SUBCASE("reset empties the store and the duplicate is answered again") {
    sdm.reset_store();
    CHECK(sdm.store_size(1) == 0);
    auto third = sdm.query(1, x, model, LabelMode::Soft);
    CHECK(third.kind == QueryOutcome::Kind::Soft);
  }
}

TEST_CASE("banning defense isolates accounts") {
  auto model = tiny_model(256, 4);
  SdmInstance sdm(SdmConfig::osd(), 256);
  RngStream rng(Seed{7});
  auto x = random_sample(rng, Shape{16, 16, 1});
  CHECK(sdm.query(1, x, model, LabelMode::Soft).kind == QueryOutcome::Kind::Soft);
  // second near-duplicate on the same account: mean distance over present ~ 0
  auto second = sdm.query(1, x, model, LabelMode::Soft);
  CHECK(second.kind == QueryOutcome::Kind::Banned);
  CHECK(sdm.is_banned(1));
  // the banned account stays banned, with no model evaluation
  CHECK(sdm.query(1, x, model, LabelMode::Soft).kind == QueryOutcome::Kind::Banned);
  // a fresh account sees an empty store and is answered
  CHECK(sdm.query(2, x, model, LabelMode::Soft).kind == QueryOutcome::Kind::Soft);
}

TEST_CASE("fifo eviction keeps the store bounded and forgets the oldest entry") {
  auto model = tiny_model(256, 4);
  SdmConfig cfg = SdmConfig::blacklight();
  cfg.capacity = 3;
  SdmInstance sdm(cfg, 256);
  RngStream rng(Seed{8});
  auto oldest = random_sample(rng, Shape{16, 16, 1});
  sdm.query(1, oldest, model, LabelMode::Soft);
  for (int i = 0; i < 3; ++i)
    sdm.query(1, random_sample(rng, Shape{16, 16, 1}), model, LabelMode::Soft);
  CHECK(sdm.store_size(1) == 3);
  // the oldest fingerprint was evicted, so its duplicate is answered
  CHECK(sdm.query(1, oldest, model, LabelMode::Soft).kind == QueryOutcome::Kind::Soft);
}

TEST_CASE("threshold monotonicity: raising the threshold keeps collisions") {
  RngStream rng(Seed{9});
  Shape shape{16, 16, 1};
  QueryStore store(StoreScope::Global, 1000);
  for (int i = 0; i < 20; ++i)
    store.insert(0, Feature{pixel_hash(random_sample(rng, shape), PixelHashConfig{})});
  for (int trial = 0; trial < 50; ++trial) {
    auto f = Feature{pixel_hash(random_sample(rng, shape), PixelHashConfig{})};
    auto score = store.score(
        0, f, SimilarityProcedure{SimilarityProcedure::Metric::KnnHamming, 1, 0.5});
    REQUIRE(score.has_value());
    for (double t1 : {0.1, 0.3, 0.5, 0.7}) {
      for (double t2 : {0.1, 0.3, 0.5, 0.7}) {
        if (t1 > t2) continue;
        const bool c1 = *score <= t1, c2 = *score <= t2;
        CHECK((!c1 || c2));  // collision at t1 implies collision at the larger t2
      }
    }
  }
}

TEST_CASE("pixel hash distance grows with perturbation scale on average") {
  Shape shape{16, 16, 1};
  PixelHashConfig cfg;
  const std::vector<double> sigmas{0.005, 0.01, 0.02, 0.04, 0.08, 0.16, 0.32};
  std::vector<double> means;
  for (double sigma : sigmas) {
    double acc = 0.0;
    RngStream pair_rng(Seed{11});  // same (x, u) pairs for every sigma
    for (int k = 0; k < 100; ++k) {
      auto x = random_sample(pair_rng, shape);
      auto u = pair_rng.gaussian_vec(shape.flat());
      Sample y = x;
      for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += sigma * u[i];
      clamp_box(y);
      acc += fingerprint_distance(pixel_hash(x, cfg), pixel_hash(y, cfg));
    }
    means.push_back(acc / 100.0);
  }
  int inversions = 0;
  for (std::size_t i = 1; i < means.size(); ++i)
    if (means[i] < means[i - 1] - 1e-9) ++inversions;
  CHECK(inversions == 0);
  CHECK(means.back() > means.front());
}

TEST_CASE("ensemble with a single member behaves like the member") {
  auto model = tiny_model(256, 4);
  SdmConfig ens;
  ens.name = "ensemble";
  ens.members.push_back(SdmConfig::blacklight());
  EnsembleDefense ensemble(ens, 256);
  SdmInstance single(SdmConfig::blacklight(), 256);
  RngStream rng(Seed{12});
  for (int i = 0; i < 10; ++i) {
    auto x = random_sample(rng, Shape{16, 16, 1});
    auto a = ensemble.query(1, x, model, LabelMode::Soft);
    auto b = single.query(1, x, model, LabelMode::Soft);
    CHECK(a.kind == b.kind);
  }
  auto dup = random_sample(rng, Shape{16, 16, 1});
  ensemble.query(1, dup, model, LabelMode::Soft);
  CHECK(ensemble.query(1, dup, model, LabelMode::Soft).kind == QueryOutcome::Kind::Rejected);
}

TEST_CASE("a query colliding under only one member still trips the ensemble") {
  auto model = tiny_model(256, 4);
  SdmConfig ens;
  ens.name = "ensemble";
  ens.members.push_back(SdmConfig::blacklight());
  ens.members.push_back(SdmConfig::piha());
  EnsembleDefense ensemble(ens, 256);

  // constant image, then a +0.2 global shift: every quantization bucket moves
  // (pixel-hash distance 1) but all LBP codes stay equal (piha distance 0)
  auto base = Sample::constant(Shape{16, 16, 1}, 0.3);
  Sample shifted = base;
  for (double& v : shifted.data) v += 0.2;
  CHECK(fingerprint_distance(pixel_hash(base, PixelHashConfig{}),
                             pixel_hash(shifted, PixelHashConfig{})) > 0.5);
  CHECK(bit_distance(piha_hash(base, PihaConfig{}), piha_hash(shifted, PihaConfig{})) == 0.0);

  CHECK(ensemble.query(1, base, model, LabelMode::Soft).kind == QueryOutcome::Kind::Soft);
  CHECK(ensemble.query(1, shifted, model, LabelMode::Soft).kind ==
        QueryOutcome::Kind::Rejected);
}

TEST_CASE("concurrent duplicate submissions: exactly one answered") {
  auto model = tiny_model(256, 4);
  RngStream rng(Seed{13});
  auto x = random_sample(rng, Shape{16, 16, 1});
  for (int round = 0; round < 5; ++round) {
    SdmInstance sdm(SdmConfig::blacklight(), 256);
    std::atomic<int> answered{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < 8; ++t)
      pool.emplace_back([&] {
        if (sdm.query(1, x, model, LabelMode::Soft).answered()) answered.fetch_add(1);
      });
    for (auto& th : pool) th.join();
    CHECK(answered.load() == 1);
  }
}

TEST_CASE("config presets parse and round-trip through json") {
  for (const char* type : {"blacklight", "piha", "osd", "iiot"}) {
    nlohmann::json j{{"type", type}};
    auto cfg = SdmConfig::from_json(j);
    auto echo = SdmConfig::from_json(cfg.to_json());
    CHECK(echo.to_json() == cfg.to_json());
  }
  auto bl = SdmConfig::from_json({{"type", "blacklight"}, {"window", 50}, {"threshold", 0.7}});
  CHECK(bl.extractor.pixel.window == 50);
  CHECK(bl.similarity.threshold == 0.7);
  CHECK_THROWS_AS(SdmConfig::from_json({{"type", "bogus"}}), std::runtime_error);

  nlohmann::json ens{{"type", "ensemble"},
                     {"members", nlohmann::json::array({{{"type", "blacklight"}},
                                                        {{"type", "piha"}}})}};
  auto e = SdmConfig::from_json(ens);
  CHECK(e.is_ensemble());
  CHECK(e.members.size() == 2);
}

TEST_CASE("mismatched extractor and similarity families are rejected") {
  SdmConfig bad = SdmConfig::blacklight();
  bad.similarity.metric = SimilarityProcedure::Metric::KnnL2;
  CHECK_THROWS_AS(SdmInstance(bad, 256), std::invalid_argument);
}
