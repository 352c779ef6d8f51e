#include "oars/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace oars {

Sample Sample::flat(std::vector<double> values) {
  Sample s;
  s.shape = Shape{1, static_cast<int>(values.size()), 1};
  s.data = std::move(values);
  return s;
}

Sample Sample::image(int h, int w, int c, std::vector<double> values) {
  if (static_cast<int>(values.size()) != h * w * c)
    throw std::invalid_argument("sample data length does not match shape");
  Sample s;
  s.shape = Shape{h, w, c};
  s.data = std::move(values);
  return s;
}

Sample Sample::constant(Shape shape, double value) {
  Sample s;
  s.shape = shape;
  s.data.assign(static_cast<std::size_t>(shape.flat()), value);
  return s;
}

void clamp_box(Sample& x) {
  for (double& v : x.data) v = std::clamp(v, 0.0, 1.0);
}

bool in_unit_box(const Sample& x, double tol) {
  return std::all_of(x.data.begin(), x.data.end(),
                     [tol](double v) { return v >= -tol && v <= 1.0 + tol; });
}

QueryOutcome QueryOutcome::soft(std::vector<double> p) {
  QueryOutcome o;
  o.kind = Kind::Soft;
  o.probs = std::move(p);
  return o;
}

QueryOutcome QueryOutcome::hard(int label) {
  QueryOutcome o;
  o.kind = Kind::Hard;
  o.label = label;
  return o;
}

int QueryOutcome::answered_label() const {
  if (kind == Kind::Hard) return label;
  if (kind == Kind::Soft)
    return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  throw std::logic_error("outcome carries no label");
}

int RngStream::uniform_int(int lo, int hi) {
  std::uniform_int_distribution<int> dist(lo, hi);
  return dist(engine_);
}

std::vector<double> RngStream::gaussian_vec(int n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) x = gaussian();
  return v;
}

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream_id) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = base + 0x9e3779b97f4a7c15ull * (stream_id + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

RngStream RngStream::fork(std::uint64_t stream_id) const {
  // Hash the engine's current state signature with the id; cheap and stable.
  std::mt19937_64 copy = engine_;
  return RngStream(Seed{mix_seed(copy(), stream_id)});
}

static void require_same_shape(const Sample& a, const Sample& b) {
  if (!(a.shape == b.shape)) throw std::invalid_argument("sample shape mismatch");
}

double distance(const Sample& a, const Sample& b, NormKind norm) {
  require_same_shape(a, b);
  if (norm == NormKind::LInf) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
      m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double budget_distance(const Sample& a, const Sample& b, const PerturbationBudget& budget) {
  double d = distance(a, b, budget.norm);
  if (budget.norm == NormKind::L2 && budget.normalized)
    d /= std::sqrt(static_cast<double>(a.dim()));
  return d;
}

bool within_budget(const Sample& x, const Sample& center, const PerturbationBudget& budget,
                   double tol) {
  return budget_distance(x, center, budget) <= budget.epsilon + tol;
}

Sample project(const Sample& x, const Sample& center, const PerturbationBudget& budget) {
  require_same_shape(x, center);
  Sample y = x;
  if (budget.norm == NormKind::LInf) {
    for (std::size_t i = 0; i < y.data.size(); ++i) {
      const double c = center.data[i];
      y.data[i] = std::clamp(y.data[i], c - budget.epsilon, c + budget.epsilon);
    }
    clamp_box(y);
    return y;
  }
  const double radius =
      budget.normalized ? budget.epsilon * std::sqrt(static_cast<double>(x.dim()))
                        : budget.epsilon;
  auto raw_dist = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < y.data.size(); ++i) {
      const double d = y.data[i] - center.data[i];
      s += d * d;
    }
    return std::sqrt(s);
  };
  // Ball, then box. The scale can land one ulp outside the sphere, so nudge the
  // offsets down until the radius check holds exactly; re-projection is then a
  // bit-identical no-op. The box clamp afterwards only shrinks deviations from
  // the in-box center, so it cannot leave the ball.
  const double d0 = raw_dist();
  if (d0 > radius) {
    const double s = radius / d0;
    for (std::size_t i = 0; i < y.data.size(); ++i)
      y.data[i] = center.data[i] + (y.data[i] - center.data[i]) * s;
    // two ulps down so rounding cannot stall the shrink
    constexpr double kShrink = 0.9999999999999996;
    while (raw_dist() > radius)
      for (std::size_t i = 0; i < y.data.size(); ++i)
        y.data[i] = center.data[i] + (y.data[i] - center.data[i]) * kShrink;
  }
  clamp_box(y);
  return y;
}

}  // namespace oars
