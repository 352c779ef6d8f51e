#include "oars/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

#include "oars/adaptive.hpp"

namespace oars {

std::string attack_name(AttackKind kind) {
  switch (kind) {
    case AttackKind::Nes: return "nes";
    case AttackKind::Square: return "square";
    case AttackKind::Hsja: return "hsja";
    case AttackKind::Qeba: return "qeba";
    case AttackKind::SurFree: return "surfree";
    case AttackKind::Boundary: return "boundary";
  }
  throw std::logic_error("unreachable");
}

AttackKind attack_from_name(const std::string& name) {
  if (name == "nes") return AttackKind::Nes;
  if (name == "square") return AttackKind::Square;
  if (name == "hsja") return AttackKind::Hsja;
  if (name == "qeba") return AttackKind::Qeba;
  if (name == "surfree") return AttackKind::SurFree;
  if (name == "boundary") return AttackKind::Boundary;
  throw std::invalid_argument("unknown attack: " + name);
}

bool attack_uses_soft_labels(AttackKind kind) {
  return kind == AttackKind::Nes || kind == AttackKind::Square;
}

std::string reason_name(TerminationReason r) {
  switch (r) {
    case TerminationReason::Success: return "success";
    case TerminationReason::BudgetExhausted: return "budget_exhausted";
    case TerminationReason::Collision: return "collision";
    case TerminationReason::Banned: return "banned";
  }
  throw std::logic_error("unreachable");
}

// ---- oracles ----

QueryOutcome ModelOracle::query(const Sample& x) {
  QueryOutcome out = mode_ == LabelMode::Soft ? QueryOutcome::soft(model_.soft_predict(x))
                                              : QueryOutcome::hard(model_.hard_predict(x));
  note_outcome(out);
  return out;
}

QueryOutcome DefendedOracle::query(const Sample& x) {
  for (;;) {
    QueryOutcome out = defense_.query(account_, x, model_, mode_);
    note_outcome(out);
    if (out.kind != QueryOutcome::Kind::Banned || accounts_ >= max_accounts_) return out;
    account_ = next_account_++;
    ++accounts_;
  }
}

QueryOutcome BlindingOracle::query(const Sample& x) {
  return inner_.query(query_blind(x, strength_, rng_));
}

// ---- shared helpers ----

namespace {

struct CollisionAbort {};
struct BudgetAbort {};

// Counted query that enforces the budget and the standard-baseline policy of
// stopping at the first rejection or ban.
class StrictOracle {
 public:
  StrictOracle(QueryOracle& oracle, std::uint64_t budget) : oracle_(oracle), budget_(budget) {}

  QueryOutcome operator()(const Sample& x) {
    if (oracle_.queries() >= budget_) throw BudgetAbort{};
    QueryOutcome out = oracle_.query(x);
    if (out.actioned()) throw CollisionAbort{};
    return out;
  }

 private:
  QueryOracle& oracle_;
  std::uint64_t budget_;
};

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

void scale(std::vector<double>& a, double s) {
  for (double& v : a) v *= s;
}

Sample displaced(const Sample& x, const std::vector<double>& dir, double step) {
  Sample y = x;
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += step * dir[i];
  clamp_box(y);
  return y;
}

Sample uniform_sample(RngStream& rng, Shape shape) {
  Sample s = Sample::constant(shape, 0.0);
  for (double& v : s.data) v = rng.uniform();
  return s;
}

int sgn(double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); }

}  // namespace

// ---- building blocks ----

std::vector<double> nes_gradient(const Sample& x, double sigma,
                                 std::span<const std::vector<double>> dirs, const LossFn& loss) {
  const int d = x.dim();
  std::vector<double> grad(static_cast<std::size_t>(d), 0.0);
  int accepted = 0;
  for (const auto& u : dirs) {
    const auto lp = loss(displaced(x, u, sigma));
    if (lp) {
      ++accepted;
      for (int i = 0; i < d; ++i)
        grad[static_cast<std::size_t>(i)] += *lp * u[static_cast<std::size_t>(i)];
    }
    const auto lm = loss(displaced(x, u, -sigma));
    if (lm) {
      ++accepted;
      for (int i = 0; i < d; ++i)
        grad[static_cast<std::size_t>(i)] -= *lm * u[static_cast<std::size_t>(i)];
    }
  }
  if (accepted == 0) return grad;
  const double denom = sigma * accepted;
  for (double& g : grad) g /= denom;
  return grad;
}

Sample nes_step(const Sample& x, const std::vector<double>& grad, double step,
                const Sample& center, const PerturbationBudget& budget) {
  Sample y = x;
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += step * sgn(grad[i]);
  return project(y, center, budget);
}

std::vector<double> hsja_gradient(const Sample& x, double zeta,
                                  std::span<const std::vector<double>> dirs, const PhiFn& phi) {
  const int d = x.dim();
  std::vector<const std::vector<double>*> used;
  std::vector<double> vals;
  for (const auto& u : dirs) {
    const auto a = phi(displaced(x, u, zeta));
    if (!a) continue;
    used.push_back(&u);
    vals.push_back(*a ? 1.0 : -1.0);
  }
  std::vector<double> grad(static_cast<std::size_t>(d), 0.0);
  if (used.empty()) return grad;
  const double mean = std::accumulate(vals.begin(), vals.end(), 0.0) / vals.size();
  const bool degenerate = std::abs(std::abs(mean) - 1.0) < 1e-12;
  for (std::size_t k = 0; k < used.size(); ++k) {
    const double w = degenerate ? mean : (vals[k] - mean);
    for (int i = 0; i < d; ++i)
      grad[static_cast<std::size_t>(i)] += w * (*used[k])[static_cast<std::size_t>(i)];
  }
  const double denom = degenerate ? static_cast<double>(used.size())
                                  : zeta * static_cast<double>(used.size());
  for (double& g : grad) g /= denom;
  return grad;
}

double hsja_initial_step(const Sample& x_t, const Sample& x_vic, int iteration, NormKind norm) {
  if (iteration < 1) throw std::invalid_argument("iteration must be >= 1");
  return distance(x_t, x_vic, norm) / std::sqrt(static_cast<double>(iteration));
}

Sample locate_boundary_vanilla(const Sample& x_adv, const Sample& x_vic, const PhiFn& phi,
                               double tol, bool verify_endpoints) {
  if (verify_endpoints) {
    const auto a = phi(x_adv);
    const auto b = phi(x_vic);
    if (!a || !b || !*a || *b)
      throw std::invalid_argument("boundary search endpoints on the same side");
  }
  Sample lo = x_vic;  // non-adversarial end
  Sample hi = x_adv;  // adversarial end
  while (distance(hi, lo, NormKind::L2) > tol) {
    Sample mid = lo;
    for (std::size_t i = 0; i < mid.data.size(); ++i)
      mid.data[i] = 0.5 * (lo.data[i] + hi.data[i]);
    const auto a = phi(mid);
    if (!a) throw std::runtime_error("boundary search query was not answered");
    if (*a) hi = std::move(mid);
    else lo = std::move(mid);
  }
  return hi;
}

std::vector<double> gaussian_direction(RngStream& rng, int dim) {
  return rng.gaussian_vec(dim);
}

std::vector<double> unit_sphere_direction(RngStream& rng, int dim) {
  auto v = rng.gaussian_vec(dim);
  const double n = norm2(v);
  if (n > 1e-12) scale(v, 1.0 / n);
  else v[0] = 1.0;
  return v;
}

std::vector<double> bilinear_resize(const std::vector<double>& src, int sh, int sw, int channels,
                                    int dh, int dw) {
  std::vector<double> dst(static_cast<std::size_t>(dh) * dw * channels);
  const double ry = static_cast<double>(sh) / dh;
  const double rx = static_cast<double>(sw) / dw;
  for (int i = 0; i < dh; ++i) {
    double sy = (i + 0.5) * ry - 0.5;
    sy = std::clamp(sy, 0.0, static_cast<double>(sh - 1));
    const int y0 = static_cast<int>(std::floor(sy));
    const int y1 = std::min(y0 + 1, sh - 1);
    const double wy = sy - y0;
    for (int j = 0; j < dw; ++j) {
      double sx = (j + 0.5) * rx - 0.5;
      sx = std::clamp(sx, 0.0, static_cast<double>(sw - 1));
      const int x0 = static_cast<int>(std::floor(sx));
      const int x1 = std::min(x0 + 1, sw - 1);
      const double wx = sx - x0;
      for (int c = 0; c < channels; ++c) {
        auto at = [&](int y, int x) {
          return src[(static_cast<std::size_t>(y) * sw + x) * channels + c];
        };
        const double top = at(y0, x0) * (1.0 - wx) + at(y0, x1) * wx;
        const double bot = at(y1, x0) * (1.0 - wx) + at(y1, x1) * wx;
        dst[(static_cast<std::size_t>(i) * dw + j) * channels + c] =
            top * (1.0 - wy) + bot * wy;
      }
    }
  }
  return dst;
}

std::vector<double> qeba_direction(RngStream& rng, Shape shape, int factor) {
  if (factor < 1) throw std::invalid_argument("subspace factor must be >= 1");
  const int lh = (shape.height + factor - 1) / factor;
  const int lw = (shape.width + factor - 1) / factor;
  auto low = rng.gaussian_vec(lh * lw * shape.channels);
  auto up = bilinear_resize(low, lh, lw, shape.channels, shape.height, shape.width);
  const double n = norm2(up);
  if (n > 1e-12) scale(up, 1.0 / n);
  else up[0] = 1.0;
  return up;
}

// ---- drivers ----

namespace {

struct Goal {
  bool targeted;
  int target;
  int true_label;

  bool adversarial_label(int label) const { return targeted ? label == target : label != true_label; }
};

// NES: estimate the loss gradient from Gaussian samples, then signed projected steps.
std::optional<Sample> drive_nes(const AttackConfig& cfg, const Sample& x_vic, const Goal& goal,
                                StrictOracle& q, RngStream& rng) {
  const LossKind loss_kind = goal.targeted ? LossKind::targeted(goal.target)
                                           : LossKind::untargeted(goal.true_label);
  LossFn loss = [&](const Sample& s) -> std::optional<double> {
    return loss_from_probs(q(s).probs, loss_kind);
  };
  Sample x_t = project(x_vic, x_vic, cfg.budget);
  const int pairs = std::max(1, cfg.nes_samples / 2);
  for (;;) {
    std::vector<std::vector<double>> dirs;
    dirs.reserve(static_cast<std::size_t>(pairs));
    for (int i = 0; i < pairs; ++i) dirs.push_back(gaussian_direction(rng, x_vic.dim()));
    std::vector<double> grad = nes_gradient(x_t, cfg.nes_sigma, dirs, loss);
    if (!goal.targeted) scale(grad, -1.0);  // margin is minimized
    x_t = nes_step(x_t, grad, cfg.nes_step, x_vic, cfg.budget);
    const QueryOutcome out = q(x_t);
    if (goal.adversarial_label(out.answered_label())) return x_t;
  }
}

// Square: random-search over epsilon-filled squares, keeping loss improvements.
std::optional<Sample> drive_square(const AttackConfig& cfg, const Sample& x_vic, const Goal& goal,
                                   StrictOracle& q, RngStream& rng) {
  const int h = x_vic.shape.height, w = x_vic.shape.width, c = x_vic.shape.channels;
  const double eps = cfg.budget.epsilon;
  const LossKind margin = LossKind::untargeted(goal.true_label);

  Sample x_best = x_vic;
  for (int j = 0; j < w; ++j)
    for (int ch = 0; ch < c; ++ch) {
      const double s = rng.coin() ? eps : -eps;
      for (int i = 0; i < h; ++i) x_best.at(i, j, ch) = x_vic.at(i, j, ch) + s;
    }
  clamp_box(x_best);
  QueryOutcome out = q(x_best);
  double best = loss_from_probs(out.probs, margin);
  if (goal.adversarial_label(out.answered_label())) return x_best;

  std::uint64_t iter = 0;
  const double budget = static_cast<double>(cfg.query_budget);
  for (;; ++iter) {
    // piecewise-decaying fraction of perturbed pixels, as in the original schedule
    const double frac = static_cast<double>(iter) / std::max(1.0, budget);
    static constexpr double kStops[] = {0.001, 0.005, 0.02, 0.1, 0.2, 0.4, 0.6, 0.8};
    int stage = 0;
    for (double s : kStops) stage += frac >= s ? 1 : 0;
    const double p = cfg.square_p_init / static_cast<double>(1 << stage);
    int side = std::max(1, static_cast<int>(std::lround(std::sqrt(p * h * w))));
    side = std::min({side, h, w});

    const int i0 = rng.uniform_int(0, h - side);
    const int j0 = rng.uniform_int(0, w - side);
    Sample cand = x_best;
    for (int ch = 0; ch < c; ++ch) {
      const double s = rng.coin() ? eps : -eps;
      for (int i = i0; i < i0 + side; ++i)
        for (int j = j0; j < j0 + side; ++j)
          cand.at(i, j, ch) = x_vic.at(i, j, ch) + s;
    }
    clamp_box(cand);
    out = q(cand);
    const double l = loss_from_probs(out.probs, margin);
    if (l < best) {
      best = l;
      x_best = std::move(cand);
      if (goal.adversarial_label(out.answered_label())) return x_best;
    }
  }
}

Sample find_adversarial_init(const AttackConfig& cfg, const Sample& x_vic,
                             const PhiFn& phi, RngStream& rng) {
  if (cfg.init_adversarial) {
    const auto ok = phi(*cfg.init_adversarial);
    if (!ok || !*ok) throw std::invalid_argument("provided starting point is not adversarial");
    return *cfg.init_adversarial;
  }
  for (int i = 0; i < cfg.init_draw_cap; ++i) {
    Sample s = uniform_sample(rng, x_vic.shape);
    const auto ok = phi(s);
    if (ok && *ok) return s;
  }
  throw std::runtime_error("no adversarial starting point found within the draw cap");
}

// HSJA / QEBA: boundary location, sphere-sample gradient, geometric step halving.
std::optional<Sample> drive_hsja(const AttackConfig& cfg, const Sample& x_vic, const Goal& goal,
                                 StrictOracle& q, RngStream& rng, bool subspace_dirs) {
  PhiFn phi = [&](const Sample& s) -> std::optional<bool> {
    return goal.adversarial_label(q(s).answered_label());
  };
  Sample x_adv = find_adversarial_init(cfg, x_vic, phi, rng);
  Sample x_t = locate_boundary_vanilla(x_adv, x_vic, phi, cfg.hsja_tol, false);

  for (int t = 1;; ++t) {
    if (within_budget(x_t, x_vic, cfg.budget)) return x_t;
    const double dist = distance(x_t, x_vic, NormKind::L2);
    const double zeta = std::max(1e-9, cfg.hsja_zeta_rel * dist);
    std::vector<std::vector<double>> dirs;
    dirs.reserve(static_cast<std::size_t>(cfg.hsja_samples));
    for (int i = 0; i < cfg.hsja_samples; ++i)
      dirs.push_back(subspace_dirs ? qeba_direction(rng, x_vic.shape, cfg.qeba_factor)
                                   : unit_sphere_direction(rng, x_vic.dim()));
    std::vector<double> g = hsja_gradient(x_t, zeta, dirs, phi);
    const double gn = norm2(g);
    if (gn > 1e-12) scale(g, 1.0 / gn);
    else g = unit_sphere_direction(rng, x_vic.dim());

    double step = hsja_initial_step(x_t, x_vic, t, NormKind::L2);
    Sample z = x_t;
    bool moved = false;
    for (int halving = 0; halving < cfg.hsja_max_halvings; ++halving) {
      Sample cand = displaced(x_t, g, step);
      const auto ok = phi(cand);
      if (ok && *ok) {
        z = std::move(cand);
        moved = true;
        break;
      }
      step /= 2.0;
    }
    x_t = moved ? locate_boundary_vanilla(z, x_vic, phi, cfg.hsja_tol, false) : x_t;
    if (!moved) {
      // stuck: re-tighten toward the victim to change the local geometry
      x_t = locate_boundary_vanilla(x_t, x_vic, phi, cfg.hsja_tol, false);
    }
  }
}

std::vector<double> orthonormalize(std::vector<double> v,
                                   const std::deque<std::vector<double>>& basis) {
  for (const auto& b : basis) {
    const double c = dot(v, b);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * b[i];
  }
  const double n = norm2(v);
  if (n < 1e-9) return {};
  scale(v, 1.0 / n);
  return v;
}

// SurFree: polar sweeps along random orthogonal directions, no gradient estimate.
std::optional<Sample> drive_surfree(const AttackConfig& cfg, const Sample& x_vic, const Goal& goal,
                                    StrictOracle& q, RngStream& rng) {
  PhiFn phi = [&](const Sample& s) -> std::optional<bool> {
    return goal.adversarial_label(q(s).answered_label());
  };
  Sample x_adv = find_adversarial_init(cfg, x_vic, phi, rng);
  Sample x_t = locate_boundary_vanilla(x_adv, x_vic, phi, cfg.hsja_tol, false);

  constexpr double kGolden = 0.6180339887498949;
  std::deque<std::vector<double>> history;
  for (;;) {
    if (within_budget(x_t, x_vic, cfg.budget)) return x_t;
    const double r = distance(x_t, x_vic, NormKind::L2);
    std::vector<double> u(static_cast<std::size_t>(x_vic.dim()));
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = x_t.data[i] - x_vic.data[i];
    scale(u, 1.0 / r);

    std::deque<std::vector<double>> against = history;
    against.push_front(u);
    std::vector<double> v = orthonormalize(gaussian_direction(rng, x_vic.dim()), against);
    if (v.empty()) continue;
    history.push_back(v);
    if (static_cast<int>(history.size()) > cfg.surfree_dir_history) history.pop_front();

    bool accepted = false;
    for (int j = 0; j < cfg.surfree_angles && !accepted; ++j) {
      const double mag = cfg.surfree_theta_max * std::pow(kGolden, j / 2);
      const double alpha = (j % 2 == 0) ? mag : -mag;
      Sample cand = x_vic;
      const double ca = std::cos(alpha), sa = std::sin(alpha);
      for (std::size_t i = 0; i < cand.data.size(); ++i)
        cand.data[i] += r * ca * (ca * u[i] + sa * v[i]);
      clamp_box(cand);
      if (distance(cand, x_vic, NormKind::L2) >= r) continue;
      const auto ok = phi(cand);
      if (ok && *ok) {
        x_t = locate_boundary_vanilla(cand, x_vic, phi, cfg.hsja_tol, false);
        accepted = true;
      }
    }
  }
}

// Boundary: random walk along the sphere around the victim with trust-region
// style adjustment of the orthogonal and inward step scales.
std::optional<Sample> drive_boundary(const AttackConfig& cfg, const Sample& x_vic,
                                     const Goal& goal, StrictOracle& q, RngStream& rng) {
  PhiFn phi = [&](const Sample& s) -> std::optional<bool> {
    return goal.adversarial_label(q(s).answered_label());
  };
  Sample x_t = find_adversarial_init(cfg, x_vic, phi, rng);

  double eta_d = cfg.boundary_eta_delta;
  double eta_e = cfg.boundary_eta_eps;
  int orth_tries = 0, orth_hits = 0, in_tries = 0, in_hits = 0;
  for (;;) {
    if (within_budget(x_t, x_vic, cfg.budget)) return x_t;
    const double dist = distance(x_t, x_vic, NormKind::L2);
    std::vector<double> radial(static_cast<std::size_t>(x_vic.dim()));
    for (std::size_t i = 0; i < radial.size(); ++i) radial[i] = x_t.data[i] - x_vic.data[i];
    scale(radial, 1.0 / dist);

    std::vector<double> delta = gaussian_direction(rng, x_vic.dim());
    const double along = dot(delta, radial);
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] -= along * radial[i];
    const double dn = norm2(delta);
    if (dn < 1e-12) continue;
    scale(delta, eta_d * dist / dn);

    Sample orth = x_t;
    for (std::size_t i = 0; i < orth.data.size(); ++i) orth.data[i] += delta[i];
    // re-project onto the sphere of the current distance
    const double od = distance(orth, x_vic, NormKind::L2);
    for (std::size_t i = 0; i < orth.data.size(); ++i)
      orth.data[i] = x_vic.data[i] + (orth.data[i] - x_vic.data[i]) * (dist / od);
    clamp_box(orth);

    ++orth_tries;
    const auto ok = phi(orth);
    if (ok && *ok) {
      ++orth_hits;
      Sample inward = orth;
      for (std::size_t i = 0; i < inward.data.size(); ++i)
        inward.data[i] += eta_e * (x_vic.data[i] - inward.data[i]);
      clamp_box(inward);
      ++in_tries;
      const auto ok_in = phi(inward);
      if (ok_in && *ok_in) {
        ++in_hits;
        x_t = std::move(inward);
      } else {
        x_t = std::move(orth);
      }
    }

    if (orth_tries >= cfg.boundary_window) {
      const double ratio = static_cast<double>(orth_hits) / orth_tries;
      if (ratio > 0.75) eta_d = std::min(1.0, eta_d * 1.5);
      else if (ratio < 0.25) eta_d *= 0.5;
      orth_tries = orth_hits = 0;
    }
    if (in_tries >= cfg.boundary_window) {
      const double ratio = static_cast<double>(in_hits) / in_tries;
      if (ratio > 0.75) eta_e = std::min(0.95, eta_e * 1.5);
      else if (ratio < 0.25) eta_e = std::max(1e-4, eta_e * 0.5);
      in_tries = in_hits = 0;
    }
  }
}

}  // namespace

bool label_is_adversarial(const AttackConfig& cfg, int true_label, int label) {
  return cfg.targeted ? label == cfg.target_label : label != true_label;
}

AttackOutcome finalize_outcome(const AttackConfig& cfg, const Sample& x_vic, int true_label,
                               QueryOracle& oracle, std::optional<Sample> found,
                               TerminationReason fallback) {
  AttackOutcome out;
  out.reason = fallback;
  out.queries_used = oracle.queries();
  out.collisions_seen = oracle.collisions();
  out.accounts_used = oracle.accounts_used();
  if (found) {
    // reference check against the raw model; not counted
    const int ref = oracle.reference_hard_label(*found);
    const bool flipped = label_is_adversarial(cfg, true_label, ref);
    const bool inside = within_budget(*found, x_vic, cfg.budget);
    out.adversarial = std::move(found);
    out.final_norm = budget_distance(*out.adversarial, x_vic, cfg.budget);
    out.success = flipped && inside;
    out.reason = out.success ? TerminationReason::Success : TerminationReason::BudgetExhausted;
  }
  return out;
}

AttackOutcome run_attack(const AttackConfig& cfg, const Sample& x_vic, int true_label,
                         QueryOracle& oracle) {
  if (cfg.targeted &&
      (cfg.kind == AttackKind::Square || cfg.kind == AttackKind::SurFree ||
       cfg.kind == AttackKind::Boundary))
    throw std::invalid_argument("this attack only runs untargeted");
  if (cfg.targeted && cfg.target_label < 0) throw std::invalid_argument("missing target label");

  const Goal goal{cfg.targeted, cfg.target_label, true_label};
  RngStream rng(cfg.seed);
  StrictOracle q(oracle, cfg.query_budget);

  TerminationReason fallback = TerminationReason::BudgetExhausted;
  std::optional<Sample> found;
  try {
    switch (cfg.kind) {
      case AttackKind::Nes: found = drive_nes(cfg, x_vic, goal, q, rng); break;
      case AttackKind::Square: found = drive_square(cfg, x_vic, goal, q, rng); break;
      case AttackKind::Hsja: found = drive_hsja(cfg, x_vic, goal, q, rng, false); break;
      case AttackKind::Qeba: found = drive_hsja(cfg, x_vic, goal, q, rng, true); break;
      case AttackKind::SurFree: found = drive_surfree(cfg, x_vic, goal, q, rng); break;
      case AttackKind::Boundary: found = drive_boundary(cfg, x_vic, goal, q, rng); break;
    }
  } catch (const CollisionAbort&) {
    fallback = TerminationReason::Collision;
  } catch (const BudgetAbort&) {
    fallback = TerminationReason::BudgetExhausted;
  }
  return finalize_outcome(cfg, x_vic, true_label, oracle, std::move(found), fallback);
}

AttackOutcome run_vanilla(const AttackConfig& cfg, const Sample& x_vic, int true_label,
                          Defense* defense, const BlackBoxModel& model) {
  const LabelMode mode = attack_uses_soft_labels(cfg.kind) ? LabelMode::Soft : LabelMode::Hard;
  if (model.hard_predict(x_vic) != true_label)
    throw std::invalid_argument("victim sample is misclassified; not a valid victim");

  std::unique_ptr<QueryOracle> base;
  if (defense != nullptr)
    base = std::make_unique<DefendedOracle>(*defense, model, mode);
  else
    base = std::make_unique<ModelOracle>(model, mode);

  if (cfg.blinding_strength > 0.0) {
    BlindingOracle blinded(*base, cfg.blinding_strength, Seed{mix_seed(cfg.seed.value, 0xb11d)});
    return run_attack(cfg, x_vic, true_label, blinded);
  }
  return run_attack(cfg, x_vic, true_label, *base);
}

}  // namespace oars
