// Shared domain types: samples, norms, budgets, projections, seeded randomness.
#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace oars {

struct Shape {
  int height = 1;
  int width = 1;
  int channels = 1;

  int flat() const { return height * width * channels; }
  bool is_image() const { return height > 1 && width > 1; }
  bool operator==(const Shape&) const = default;
};

// A point in [0,1]^d, optionally carrying image layout (row-major, channel-last).
struct Sample {
  std::vector<double> data;
  Shape shape;

  static Sample flat(std::vector<double> values);
  static Sample image(int h, int w, int c, std::vector<double> values);
  static Sample constant(Shape s, double value);

  int dim() const { return static_cast<int>(data.size()); }
  double& at(int i, int j, int ch = 0) {
    return data[(static_cast<std::size_t>(i) * shape.width + j) * shape.channels + ch];
  }
  double at(int i, int j, int ch = 0) const {
    return data[(static_cast<std::size_t>(i) * shape.width + j) * shape.channels + ch];
  }
  bool operator==(const Sample&) const = default;
};

// Clamp every element into [0,1] in place.
void clamp_box(Sample& x);
bool in_unit_box(const Sample& x, double tol = 0.0);

enum class NormKind { L2, LInf };

struct PerturbationBudget {
  NormKind norm = NormKind::LInf;
  double epsilon = 0.0;
  // When set, the L2 budget check divides by sqrt(d) so one epsilon spans input sizes.
  bool normalized = false;
};

struct Seed {
  std::uint64_t value = 0;
};

// What a defended endpoint returns for one query.
struct QueryOutcome {
  enum class Kind { Soft, Hard, Rejected, Banned };

  Kind kind = Kind::Rejected;
  std::vector<double> probs;  // Soft only; nonnegative, sums to 1
  int label = -1;             // Hard only

  static QueryOutcome soft(std::vector<double> p);
  static QueryOutcome hard(int label);
  static QueryOutcome rejected() { return QueryOutcome{Kind::Rejected, {}, -1}; }
  static QueryOutcome banned() { return QueryOutcome{Kind::Banned, {}, -1}; }

  bool answered() const { return kind == Kind::Soft || kind == Kind::Hard; }
  bool actioned() const { return !answered(); }
  // Label of an answered outcome (argmax for soft).
  int answered_label() const;
};

// Deterministic random source; all randomness in the project flows through this.
class RngStream {
 public:
  explicit RngStream(Seed seed) : engine_(seed.value) {}

  double uniform() { return unit_(engine_); }                    // [0,1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double gaussian() { return normal_(engine_); }
  int uniform_int(int lo, int hi);  // inclusive bounds
  std::uint64_t next_u64() { return engine_(); }
  bool coin() { return (engine_() & 1u) != 0; }

  std::vector<double> gaussian_vec(int n);
  // Derive an independent stream; same (seed, id) always yields the same child.
  RngStream fork(std::uint64_t stream_id) const;

 private:
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

// Stateless seed mixing for deriving per-unit seeds (victims, attacks, ...).
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream_id);

double distance(const Sample& a, const Sample& b, NormKind norm);
// Distance in the budget's metric, applying sqrt(d) normalization when declared.
double budget_distance(const Sample& a, const Sample& b, const PerturbationBudget& budget);
bool within_budget(const Sample& x, const Sample& center, const PerturbationBudget& budget,
                   double tol = 1e-12);

// Project x into the epsilon-ball around center, then into [0,1]^d. Idempotent.
Sample project(const Sample& x, const Sample& center, const PerturbationBudget& budget);

}  // namespace oars
