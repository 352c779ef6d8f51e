#include "oars/adaptive.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

namespace oars {

namespace {

struct BudgetSignal {};
struct ElementFailure {
  const char* element;
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

std::vector<double> unit_dir(RngStream& rng, int dim) {
  auto v = rng.gaussian_vec(dim);
  const double n = norm2(v);
  if (n > 1e-12) scale(v, 1.0 / n);
  else v[0] = 1.0;
  return v;
}

// Enforces the episode budget on top of an existing oracle.
class BudgetedOracle : public QueryOracle {
 public:
  BudgetedOracle(QueryOracle& inner, std::uint64_t budget) : inner_(inner), budget_(budget) {}
  QueryOutcome query(const Sample& x) override {
    if (inner_.queries() >= budget_) throw BudgetSignal{};
    return inner_.query(x);
  }
  int reference_hard_label(const Sample& x) const override {
    return inner_.reference_hard_label(x);
  }
  std::uint64_t queries() const override { return inner_.queries(); }
  std::uint64_t collisions() const override { return inner_.collisions(); }
  std::uint64_t accounts_used() const override { return inner_.accounts_used(); }
  bool has_room(std::uint64_t n) const { return inner_.queries() + n <= budget_; }

 private:
  QueryOracle& inner_;
  std::uint64_t budget_;
};

}  // namespace

AdaptResult adapt_proposal(const ProposalSpec& spec, const AdaptConfig& cfg,
                           const CandidateGen& gen, QueryOracle& probe) {
  if (spec.lo > spec.hi) throw std::invalid_argument("proposal bounds out of order");
  AdaptResult res;
  if (spec.lo == spec.hi) {  // degenerate range: pinned constant, nothing to search
    res.theta_opt = spec.hi;
    return res;
  }
  double lo = spec.lo, hi = spec.hi;
  for (int s = 0; s < cfg.stps; ++s) {
    const double mid = spec.family == ProposalFamily::SquareCount
                           ? std::ceil((lo + hi) / 2.0)
                           : (lo + hi) / 2.0;
    int collided = 0;
    for (int i = 0; i < cfg.sam; ++i) {
      const QueryOutcome out = probe.query(gen(mid));
      ++res.queries;
      if (out.actioned()) ++collided;
    }
    const double rate = static_cast<double>(collided) / cfg.sam;
    if (rate > cfg.cr) lo = mid;
    else hi = mid;
  }
  res.theta_opt = hi;
  return res;
}

ResampleResult resample_queries(const CandidateGen& gen, double theta, int n, int retries,
                                QueryOracle& oracle, const std::function<double()>& readapt) {
  if (n < 1) throw std::invalid_argument("need at least one sample");
  ResampleResult res;
  const std::uint64_t cap =
      static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(1 + std::max(0, retries));
  for (int round = 0; round < 2; ++round) {
    std::uint64_t draws_this_round = 0;
    while (static_cast<int>(res.accepted.size()) < n && draws_this_round < cap) {
      Sample cand = gen(theta);
      QueryOutcome out = oracle.query(cand);
      ++res.draws;
      ++draws_this_round;
      if (out.answered()) {
        res.accepted.push_back(std::move(cand));
        res.outcomes.push_back(std::move(out));
      }
    }
    if (!res.accepted.empty() || !readapt || round == 1) break;
    theta = readapt();
    res.readapted = true;
  }
  return res;
}

BoundarySearchResult oars_locate_boundary(const Sample& x_adv, const Sample& x_vic,
                                          double termination, const OutcomePhi& phi) {
  if (termination <= 0.0) throw std::invalid_argument("termination distance must be positive");
  BoundarySearchResult res{x_adv, false, false};
  Sample lo = x_vic;
  Sample hi = x_adv;
  while (distance(hi, lo, NormKind::L2) > termination) {
    Sample mid = lo;
    for (std::size_t i = 0; i < mid.data.size(); ++i)
      mid.data[i] = 0.5 * (lo.data[i] + hi.data[i]);
    const auto a = phi(mid);
    if (!a) {  // collision: settle for the penultimate accepted point
      res.collided_early = true;
      res.point = hi;
      return res;
    }
    res.any_accepted = true;
    if (*a) hi = std::move(mid);
    else lo = std::move(mid);
  }
  res.point = hi;
  return res;
}

Sample query_blind(const Sample& x, double strength, RngStream& rng) {
  if (strength <= 0.0) return x;
  if (!x.shape.is_image())
    throw std::invalid_argument("query blinding needs an image-shaped sample");
  const int h = x.shape.height, w = x.shape.width, c = x.shape.channels;
  const double angle = rng.uniform(-1.0, 1.0) * strength * (10.0 * 3.14159265358979 / 180.0);
  const double dx = rng.uniform(-1.0, 1.0) * strength * 0.1 * w;
  const double dy = rng.uniform(-1.0, 1.0) * strength * 0.1 * h;
  const double zoom = 1.0 + rng.uniform(-1.0, 1.0) * strength * 0.1;

  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  const double ca = std::cos(angle), sa = std::sin(angle);
  Sample out = x;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      // invert: un-translate, un-rotate, un-zoom about the center
      const double px = j - cx - dx, py = i - cy - dy;
      double sx = (ca * px + sa * py) / zoom + cx;
      double sy = (-sa * px + ca * py) / zoom + cy;
      sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
      sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double fx = sx - x0, fy = sy - y0;
      for (int ch = 0; ch < c; ++ch) {
        const double top = x.at(y0, x0, ch) * (1 - fx) + x.at(y0, x1, ch) * fx;
        const double bot = x.at(y1, x0, ch) * (1 - fx) + x.at(y1, x1, ch) * fx;
        out.at(i, j, ch) = top * (1 - fy) + bot * fy;
      }
    }
  return out;
}

std::string diagnosis_name(StoreDiagnosis d) {
  switch (d) {
    case StoreDiagnosis::BanPerAccount: return "ban / per-account";
    case StoreDiagnosis::BanGlobal: return "ban / global";
    case StoreDiagnosis::RejectGlobal: return "reject / global";
    case StoreDiagnosis::RejectPerAccount: return "reject / per-account";
    case StoreDiagnosis::NoDefenseDetected: return "no defense detected";
  }
  throw std::logic_error("unreachable");
}

DiagnoseResult diagnose_store(Defense* defense, const BlackBoxModel& model, const Sample& x,
                              LabelMode mode, std::uint64_t limit, AccountId first_account,
                              AccountId second_account) {
  DiagnoseResult res;
  auto submit = [&](AccountId account) {
    if (defense == nullptr)
      return mode == LabelMode::Soft ? QueryOutcome::soft(model.soft_predict(x))
                                     : QueryOutcome::hard(model.hard_predict(x));
    return defense->query(account, x, model, mode);
  };

  bool actioned = false;
  bool action_was_ban = false;
  for (std::uint64_t i = 0; i < limit; ++i) {
    const QueryOutcome out = submit(first_account);
    ++res.queries_on_first_account;
    if (out.actioned()) {
      actioned = true;
      action_was_ban = out.kind == QueryOutcome::Kind::Banned;
      break;
    }
  }
  const QueryOutcome out_b = submit(second_account);
  res.actioned_on_second = out_b.actioned();
  res.total_queries = res.queries_on_first_account + 1;
  res.extra_accounts = 1;

  if (!actioned) {
    res.classification = StoreDiagnosis::NoDefenseDetected;
  } else if (action_was_ban) {
    res.classification = res.actioned_on_second ? StoreDiagnosis::BanGlobal
                                                : StoreDiagnosis::BanPerAccount;
  } else {
    res.classification = res.actioned_on_second ? StoreDiagnosis::RejectGlobal
                                                : StoreDiagnosis::RejectPerAccount;
  }
  return res;
}

OarsConfig OarsConfig::from_json(const nlohmann::json& j) {
  OarsConfig c;
  auto element = [](const nlohmann::json& je, OarsElementConfig base) {
    OarsElementConfig e = base;
    e.stps = je.value("stps", e.stps);
    e.sam = je.value("sam", e.sam);
    e.cr = je.value("cr", e.cr);
    e.lo = je.value("lo", e.lo);
    e.hi = je.value("hi", e.hi);
    if (e.stps < 1 || e.sam < 1 || e.cr < 0.0 || e.cr >= 1.0 || e.lo > e.hi)
      throw std::runtime_error("bad adaptation element config");
    return e;
  };
  c.adapt = j.value("adapt", c.adapt);
  if (j.contains("gradient")) c.gradient = element(j["gradient"], c.gradient);
  if (j.contains("step")) c.step = element(j["step"], c.step);
  if (j.contains("boundary")) c.boundary = element(j["boundary"], c.boundary);
  if (j.contains("squares")) c.squares = element(j["squares"], c.squares);
  c.ge_tries = j.value("ge_tries", c.ge_tries);
  c.steps_tries = j.value("steps_tries", c.steps_tries);
  c.diagnose = j.value("diagnose", c.diagnose);
  c.diagnose_limit = j.value("diagnose_limit", c.diagnose_limit);
  c.max_accounts = j.value("max_accounts", c.max_accounts);
  if (j.contains("pin_sigma")) c.pin_sigma = j["pin_sigma"].get<double>();
  if (j.contains("pin_step")) c.pin_step = j["pin_step"].get<double>();
  return c;
}

nlohmann::json OarsConfig::to_json() const {
  auto element = [](const OarsElementConfig& e) {
    return nlohmann::json{{"stps", e.stps}, {"sam", e.sam}, {"cr", e.cr},
                          {"lo", e.lo},     {"hi", e.hi}};
  };
  nlohmann::json j;
  j["adapt"] = adapt;
  j["gradient"] = element(gradient);
  j["step"] = element(step);
  j["boundary"] = element(boundary);
  j["squares"] = element(squares);
  j["ge_tries"] = ge_tries;
  j["steps_tries"] = steps_tries;
  j["diagnose"] = diagnose;
  j["diagnose_limit"] = diagnose_limit;
  j["max_accounts"] = max_accounts;
  if (pin_sigma) j["pin_sigma"] = *pin_sigma;
  if (pin_step) j["pin_step"] = *pin_step;
  return j;
}

// ---- adaptive drivers ----

namespace {

struct Ctx {
  const AttackConfig& cfg;
  const OarsConfig& oc;
  BudgetedOracle& q;
  RngStream rng;
  AttackOutcome& rec;
  int true_label;

  bool adversarial_label(int label) const {
    return label_is_adversarial(cfg, true_label, label);
  }
  std::optional<bool> phi_outcome(const QueryOutcome& out) const {
    if (!out.answered()) return std::nullopt;
    return adversarial_label(out.answered_label());
  }
};

// Adapt unless disabled or pinned; charges stps*sam probe queries.
double tuned_parameter(Ctx& c, const OarsElementConfig& e, ProposalFamily family,
                       const CandidateGen& gen, std::optional<double> pin, double fallback,
                       std::vector<double>* record) {
  double value = fallback;
  if (pin) {
    value = *pin;
  } else if (!c.oc.adapt) {
    value = fallback;
  } else if (e.lo == e.hi) {
    value = e.hi;
  } else {
    if (!c.q.has_room(static_cast<std::uint64_t>(e.stps) * e.sam)) throw BudgetSignal{};
    const AdaptResult r =
        adapt_proposal({family, e.lo, e.hi}, {e.stps, e.sam, e.cr}, gen, c.q);
    value = r.theta_opt;
  }
  if (record) record->push_back(value);
  return value;
}

struct NesGradientElement {
  std::vector<double> grad;
  int accepted = 0;
};

// Antithetic-pair rejection sampling for the finite-difference estimate.
NesGradientElement oars_nes_gradient(Ctx& c, const Sample& x_t, double sigma, LossKind lk) {
  const int d = x_t.dim();
  NesGradientElement el;
  el.grad.assign(static_cast<std::size_t>(d), 0.0);
  const int n = std::max(2, c.cfg.nes_samples);
  const std::uint64_t cap =
      static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(1 + std::max(0, c.oc.ge_tries));
  std::uint64_t spent = 0;
  while (el.accepted < n && spent < cap) {
    const auto u = c.rng.gaussian_vec(d);
    const QueryOutcome op = c.q.query(displaced(x_t, u, sigma));
    ++spent;
    if (!op.answered()) continue;
    if (spent >= cap) break;
    const QueryOutcome om = c.q.query(displaced(x_t, u, -sigma));
    ++spent;
    if (!om.answered()) continue;
    const double lp = loss_from_probs(op.probs, lk);
    const double lm = loss_from_probs(om.probs, lk);
    for (int i = 0; i < d; ++i)
      el.grad[static_cast<std::size_t>(i)] += (lp - lm) * u[static_cast<std::size_t>(i)];
    el.accepted += 2;
  }
  if (el.accepted > 0) {
    const double denom = sigma * el.accepted;
    for (double& g : el.grad) g /= denom;
  }
  return el;
}

std::optional<Sample> oars_nes(Ctx& c, const Sample& x_vic) {
  const LossKind lk = c.cfg.targeted ? LossKind::targeted(c.cfg.target_label)
                                     : LossKind::untargeted(c.true_label);
  Sample x_t = project(x_vic, x_vic, c.cfg.budget);
  const int d = x_vic.dim();

  std::optional<double> sigma, lambda;
  auto sigma_gen = [&](double th) {
    return displaced(x_t, c.rng.gaussian_vec(d), th);
  };
  auto lambda_gen = [&](double th) {
    std::vector<double> r(static_cast<std::size_t>(d));
    for (double& v : r) v = c.rng.coin() ? 1.0 : -1.0;
    Sample cand = x_t;
    for (std::size_t i = 0; i < cand.data.size(); ++i) cand.data[i] += th * r[i];
    return project(cand, x_vic, c.cfg.budget);
  };
  auto ensure_params = [&] {
    if (!sigma)
      sigma = tuned_parameter(c, c.oc.gradient, ProposalFamily::GaussianSigma, sigma_gen,
                              c.oc.pin_sigma, c.cfg.nes_sigma, &c.rec.adapted_sigmas);
    if (!lambda)
      lambda = tuned_parameter(c, c.oc.step, ProposalFamily::RademacherScale, lambda_gen,
                               c.oc.pin_step, c.cfg.nes_step, &c.rec.adapted_steps);
  };

  bool step_readapted = false;
  for (;;) {
    ensure_params();
    NesGradientElement el = oars_nes_gradient(c, x_t, *sigma, lk);
    if (el.accepted == 0) {
      if (c.oc.adapt && !c.oc.pin_sigma) {
        sigma.reset();
        ensure_params();  // one re-adaptation round
        el = oars_nes_gradient(c, x_t, *sigma, lk);
      }
      if (el.accepted == 0) throw ElementFailure{"gradient"};
    }
    if (!c.cfg.targeted) scale(el.grad, -1.0);

    bool stepped = false;
    for (int attempt = 0; attempt <= c.oc.steps_tries && !stepped; ++attempt) {
      Sample cand = x_t;
      for (std::size_t i = 0; i < cand.data.size(); ++i) {
        double s = el.grad[i] > 0 ? 1.0 : (el.grad[i] < 0 ? -1.0 : 0.0);
        // retries move along partially re-randomized sign patterns
        if (attempt > 0 && c.rng.uniform() < 0.1) s = c.rng.coin() ? 1.0 : -1.0;
        cand.data[i] += *lambda * s;
      }
      cand = project(cand, x_vic, c.cfg.budget);
      const QueryOutcome out = c.q.query(cand);
      if (!out.answered()) continue;
      x_t = std::move(cand);
      stepped = true;
      if (c.adversarial_label(out.answered_label())) return x_t;
    }
    if (!stepped) {
      if (c.oc.adapt && !c.oc.pin_step && !step_readapted) {
        step_readapted = true;
        lambda.reset();
        continue;
      }
      throw ElementFailure{"step"};
    }
  }
}

std::optional<Sample> oars_square(Ctx& c, const Sample& x_vic) {
  const int h = x_vic.shape.height, w = x_vic.shape.width, ch_n = x_vic.shape.channels;
  const double eps = c.cfg.budget.epsilon;
  const LossKind margin = LossKind::untargeted(c.true_label);

  auto stage_side = [&](std::uint64_t iter) {
    const double frac = static_cast<double>(iter) / std::max<double>(1.0, c.cfg.query_budget);
    static constexpr double kStops[] = {0.001, 0.005, 0.02, 0.1, 0.2, 0.4, 0.6, 0.8};
    int stage = 0;
    for (double s : kStops) stage += frac >= s ? 1 : 0;
    const double p = c.cfg.square_p_init / static_cast<double>(1 << stage);
    int side = std::max(1, static_cast<int>(std::lround(std::sqrt(p * h * w))));
    return std::pair<int, int>(stage, std::min({side, h, w}));
  };

  Sample x_best = x_vic;
  auto paint_squares = [&](const Sample& base, int count, int side) {
    Sample cand = base;
    for (int s = 0; s < count; ++s) {
      const int i0 = c.rng.uniform_int(0, h - side);
      const int j0 = c.rng.uniform_int(0, w - side);
      for (int ch = 0; ch < ch_n; ++ch) {
        const double v = c.rng.coin() ? eps : -eps;
        for (int i = i0; i < i0 + side; ++i)
          for (int j = j0; j < j0 + side; ++j) cand.at(i, j, ch) = x_vic.at(i, j, ch) + v;
      }
    }
    clamp_box(cand);
    return cand;
  };

  // stripe init, retried through fresh draws if it collides
  double best = 0.0;
  {
    bool ok = false;
    for (int attempt = 0; attempt <= c.oc.steps_tries && !ok; ++attempt) {
      Sample init = x_vic;
      for (int j = 0; j < w; ++j)
        for (int ch = 0; ch < ch_n; ++ch) {
          const double s = c.rng.coin() ? eps : -eps;
          for (int i = 0; i < h; ++i) init.at(i, j, ch) = x_vic.at(i, j, ch) + s;
        }
      clamp_box(init);
      const QueryOutcome out = c.q.query(init);
      if (!out.answered()) continue;
      x_best = std::move(init);
      best = loss_from_probs(out.probs, margin);
      if (c.adversarial_label(out.answered_label())) return x_best;
      ok = true;
    }
    if (!ok) throw ElementFailure{"init"};
  }

  int last_stage = -1;
  double m_opt = 1.0;
  for (std::uint64_t iter = 0;; ++iter) {
    const auto [stage, side] = stage_side(c.q.queries());
    if (stage != last_stage) {
      last_stage = stage;
      auto m_gen = [&](double th) {
        return paint_squares(x_best, static_cast<int>(std::lround(th)), side);
      };
      m_opt = tuned_parameter(c, c.oc.squares, ProposalFamily::SquareCount, m_gen,
                              c.oc.pin_step, c.oc.squares.lo, &c.rec.adapted_steps);
    }
    bool advanced = false;
    for (int attempt = 0; attempt <= c.oc.steps_tries && !advanced; ++attempt) {
      Sample cand = paint_squares(x_best, static_cast<int>(std::lround(m_opt)), side);
      const QueryOutcome out = c.q.query(cand);
      if (!out.answered()) continue;
      advanced = true;
      const double l = loss_from_probs(out.probs, margin);
      if (l < best) {
        best = l;
        x_best = std::move(cand);
        if (c.adversarial_label(out.answered_label())) return x_best;
      }
    }
    if (!advanced) {
      // all retries collided at this square count; push the bracket up once
      auto m_gen = [&](double th) {
        return paint_squares(x_best, static_cast<int>(std::lround(th)), side);
      };
      OarsElementConfig wider = c.oc.squares;
      wider.lo = m_opt;
      m_opt = tuned_parameter(c, wider, ProposalFamily::SquareCount, m_gen, std::nullopt,
                              wider.hi, &c.rec.adapted_steps);
    }
  }
}

// Shared boundary-location element: termination distance drawn from U(0, a_opt),
// collisions fall back to the penultimate accepted point.
struct BoundaryElement {
  std::optional<double> a_opt;

  Sample locate(Ctx& c, const Sample& x_adv, const Sample& x_vic, const OutcomePhi& phi) {
    const double dist = distance(x_adv, x_vic, NormKind::L2);
    if (dist < 1e-12) return x_adv;
    if (!a_opt) adapt(c, x_adv, x_vic, dist);
    for (int attempt = 0; attempt < 2; ++attempt) {
      const double upper = std::min(*a_opt, dist);
      const double r = std::max(1e-9, c.rng.uniform(0.0, upper));
      const BoundarySearchResult res = oars_locate_boundary(x_adv, x_vic, r, phi);
      if (res.any_accepted || !res.collided_early) return res.point;
      // nothing in this search was answered: re-adapt once, then give up
      if (attempt == 0 && c.oc.adapt) {
        a_opt.reset();
        adapt(c, x_adv, x_vic, dist);
      } else {
        throw ElementFailure{"boundary"};
      }
    }
    return x_adv;
  }

 private:
  void adapt(Ctx& c, const Sample& x_adv, const Sample& x_vic, double dist) {
    if (!c.oc.adapt) {
      a_opt = std::max(1e-6, c.oc.boundary.lo * dist);
      return;
    }
    // chained probes along the segment: each candidate sits at a drawn gap from
    // the previous one, reflecting at the ends
    auto dir = std::vector<double>(x_adv.data.size());
    for (std::size_t i = 0; i < dir.size(); ++i) dir[i] = (x_vic.data[i] - x_adv.data[i]) / dist;
    auto pos = std::make_shared<double>(dist / 2.0);  // arc position from x_adv
    auto sign = std::make_shared<double>(1.0);
    CandidateGen gen = [&, dir, pos, sign](double th) {
      const double r = c.rng.uniform(0.0, th);
      double p = *pos + *sign * r;
      if (p > dist) { p = std::max(0.0, 2.0 * dist - p); *sign = -1.0; }
      if (p < 0.0) { p = std::min(dist, -p); *sign = 1.0; }
      *pos = p;
      Sample s = x_adv;
      for (std::size_t i = 0; i < s.data.size(); ++i) s.data[i] += p * dir[i];
      clamp_box(s);
      return s;
    };
    OarsElementConfig e = c.oc.boundary;
    ProposalSpec spec{ProposalFamily::UniformTermination, e.lo * dist, e.hi * dist};
    if (!c.q.has_room(static_cast<std::uint64_t>(e.stps) * e.sam)) throw BudgetSignal{};
    const AdaptResult res = adapt_proposal(spec, {e.stps, e.sam, e.cr}, gen, c.q);
    a_opt = res.theta_opt;
  }
};

Sample adaptive_adversarial_init(Ctx& c, const Sample& x_vic, const OutcomePhi& phi) {
  if (c.cfg.init_adversarial) {
    for (int attempt = 0; attempt <= c.oc.steps_tries; ++attempt) {
      Sample cand = *c.cfg.init_adversarial;
      if (attempt > 0) {  // nudge a rejected start with mild noise
        for (double& v : cand.data) v += 0.01 * c.rng.gaussian();
        clamp_box(cand);
      }
      const auto ok = phi(cand);
      if (ok && *ok) return cand;
      if (ok && !*ok && attempt == 0)
        throw std::invalid_argument("provided starting point is not adversarial");
    }
    throw ElementFailure{"init"};
  }
  for (int i = 0; i < c.cfg.init_draw_cap; ++i) {
    Sample s = Sample::constant(x_vic.shape, 0.0);
    for (double& v : s.data) v = c.rng.uniform();
    const auto ok = phi(s);
    if (ok && *ok) return s;
  }
  throw std::runtime_error("no adversarial starting point found within the draw cap");
}

std::optional<Sample> oars_hsja(Ctx& c, const Sample& x_vic, bool subspace) {
  OutcomePhi phi = [&](const Sample& s) { return c.phi_outcome(c.q.query(s)); };
  const int d = x_vic.dim();
  BoundaryElement boundary;

  Sample x_t = boundary.locate(c, adaptive_adversarial_init(c, x_vic, phi), x_vic, phi);

  std::optional<double> zeta;
  auto draw_dir = [&] {
    return subspace ? qeba_direction(c.rng, x_vic.shape, c.cfg.qeba_factor)
                    : unit_dir(c.rng, d);
  };
  for (int t = 1;; ++t) {
    if (within_budget(x_t, x_vic, c.cfg.budget)) return x_t;
    if (!zeta) {
      auto zeta_gen = [&](double th) { return displaced(x_t, draw_dir(), th); };
      zeta = tuned_parameter(c, c.oc.gradient, ProposalFamily::SphereRadius, zeta_gen,
                             c.oc.pin_sigma, c.cfg.hsja_zeta_rel, &c.rec.adapted_sigmas);
    }

    // gradient element: rejection-sample sphere directions
    std::vector<std::vector<double>> used;
    std::vector<double> vals;
    const int n = std::max(2, c.cfg.hsja_samples);
    const std::uint64_t cap = static_cast<std::uint64_t>(n) *
                              static_cast<std::uint64_t>(1 + std::max(0, c.oc.ge_tries));
    for (int round = 0; round < 2 && used.empty(); ++round) {
      std::uint64_t spent = 0;
      while (static_cast<int>(used.size()) < n && spent < cap) {
        auto u = draw_dir();
        const QueryOutcome out = c.q.query(displaced(x_t, u, *zeta));
        ++spent;
        const auto a = c.phi_outcome(out);
        if (!a) continue;
        used.push_back(std::move(u));
        vals.push_back(*a ? 1.0 : -1.0);
      }
      if (used.empty() && round == 0 && c.oc.adapt && !c.oc.pin_sigma) zeta.reset();
      if (!zeta) {
        auto zeta_gen = [&](double th) { return displaced(x_t, draw_dir(), th); };
        zeta = tuned_parameter(c, c.oc.gradient, ProposalFamily::SphereRadius, zeta_gen,
                               c.oc.pin_sigma, c.cfg.hsja_zeta_rel, &c.rec.adapted_sigmas);
      }
    }
    if (used.empty()) throw ElementFailure{"gradient"};

    const double mean = std::accumulate(vals.begin(), vals.end(), 0.0) / vals.size();
    const bool degenerate = std::abs(std::abs(mean) - 1.0) < 1e-12;
    std::vector<double> g(static_cast<std::size_t>(d), 0.0);
    for (std::size_t k = 0; k < used.size(); ++k) {
      const double wgt = degenerate ? mean : (vals[k] - mean);
      for (int i = 0; i < d; ++i)
        g[static_cast<std::size_t>(i)] += wgt * used[k][static_cast<std::size_t>(i)];
    }
    const double gn = norm2(g);
    if (gn > 1e-12) scale(g, 1.0 / gn);
    else g = unit_dir(c.rng, d);

    // step element: geometric halving with direction resampling on collisions
    double step = hsja_initial_step(x_t, x_vic, t, NormKind::L2);
    Sample z = x_t;
    bool moved = false;
    for (int halving = 0; halving < c.cfg.hsja_max_halvings && !moved; ++halving) {
      for (int attempt = 0; attempt <= c.oc.steps_tries; ++attempt) {
        std::vector<double> dir = g;
        if (attempt > 0) {  // different gradient directions: cone around g
          auto fresh = unit_dir(c.rng, d);
          for (std::size_t i = 0; i < dir.size(); ++i) dir[i] = g[i] + 0.5 * fresh[i];
          const double nn = norm2(dir);
          scale(dir, 1.0 / nn);
        }
        const Sample cand = displaced(x_t, dir, step);
        const QueryOutcome out = c.q.query(cand);
        const auto a = c.phi_outcome(out);
        if (!a) continue;       // collision: resample the direction
        if (*a) { z = cand; moved = true; }
        break;                  // answered: either accept or halve
      }
      if (!moved) step /= 2.0;
    }
    x_t = boundary.locate(c, moved ? z : x_t, x_vic, phi);
  }
}

std::optional<Sample> oars_surfree(Ctx& c, const Sample& x_vic) {
  OutcomePhi phi = [&](const Sample& s) { return c.phi_outcome(c.q.query(s)); };
  const int d = x_vic.dim();
  BoundaryElement boundary;
  Sample x_t = boundary.locate(c, adaptive_adversarial_init(c, x_vic, phi), x_vic, phi);

  constexpr double kGolden = 0.6180339887498949;
  std::deque<std::vector<double>> history;
  std::optional<double> lambda;
  for (;;) {
    if (within_budget(x_t, x_vic, c.cfg.budget)) return x_t;
    const double r = distance(x_t, x_vic, NormKind::L2);
    if (!lambda) {
      auto gen = [&](double th) { return displaced(x_t, unit_dir(c.rng, d), th); };
      lambda = tuned_parameter(c, c.oc.step, ProposalFamily::SphereRadius, gen,
                               c.oc.pin_step, 0.0, &c.rec.adapted_steps);
    }

    std::vector<double> u(static_cast<std::size_t>(d));
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = x_t.data[i] - x_vic.data[i];
    scale(u, 1.0 / r);
    std::deque<std::vector<double>> against = history;
    against.push_front(u);
    std::vector<double> v = c.rng.gaussian_vec(d);
    for (const auto& b : against) {
      const double comp = dot(v, b);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= comp * b[i];
    }
    const double vn = norm2(v);
    if (vn < 1e-9) continue;
    scale(v, 1.0 / vn);
    history.push_back(v);
    if (static_cast<int>(history.size()) > c.cfg.surfree_dir_history) history.pop_front();

    for (int pass = 0; pass < 2; ++pass) {
      bool queried_any = false;
      bool accepted = false;
      for (int j = 0; j < c.cfg.surfree_angles && !accepted; ++j) {
        const double mag = c.cfg.surfree_theta_max * std::pow(kGolden, j / 2);
        const double alpha = (j % 2 == 0) ? mag : -mag;
        Sample cand = x_vic;
        const double ca = std::cos(alpha), sa = std::sin(alpha);
        for (std::size_t i = 0; i < cand.data.size(); ++i)
          cand.data[i] += r * ca * (ca * u[i] + sa * v[i]);
        clamp_box(cand);
        if (distance(cand, x_vic, NormKind::L2) >= r) continue;
        // first pass skips steps smaller than the tuned minimum
        if (pass == 0 && *lambda > 0.0 && distance(cand, x_t, NormKind::L2) < *lambda)
          continue;
        queried_any = true;
        const auto ok = phi(cand);
        if (ok && *ok) {
          x_t = boundary.locate(c, cand, x_vic, phi);
          accepted = true;
        }
      }
      if (accepted || queried_any) break;
      // every angle was below the tuned step: sweep once more without the skip
    }
  }
}

std::optional<Sample> oars_boundary(Ctx& c, const Sample& x_vic) {
  OutcomePhi phi = [&](const Sample& s) { return c.phi_outcome(c.q.query(s)); };
  const int d = x_vic.dim();
  Sample x_t = adaptive_adversarial_init(c, x_vic, phi);

  auto orth_candidate = [&](const Sample& from, double scale_abs) {
    const double dist = distance(from, x_vic, NormKind::L2);
    std::vector<double> radial(static_cast<std::size_t>(d));
    for (std::size_t i = 0; i < radial.size(); ++i) radial[i] = from.data[i] - x_vic.data[i];
    scale(radial, 1.0 / dist);
    std::vector<double> delta = c.rng.gaussian_vec(d);
    const double along = dot(delta, radial);
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] -= along * radial[i];
    const double dn = norm2(delta);
    Sample cand = from;
    if (dn < 1e-12) return cand;
    for (std::size_t i = 0; i < cand.data.size(); ++i)
      cand.data[i] += delta[i] * (scale_abs / dn);
    const double nd = distance(cand, x_vic, NormKind::L2);
    for (std::size_t i = 0; i < cand.data.size(); ++i)
      cand.data[i] = x_vic.data[i] + (cand.data[i] - x_vic.data[i]) * (dist / nd);
    clamp_box(cand);
    return cand;
  };

  std::optional<double> lambda;   // orthogonal step scale
  std::optional<double> a_in;     // inward move upper bound
  bool lambda_readapted = false;
  for (;;) {
    if (within_budget(x_t, x_vic, c.cfg.budget)) return x_t;
    const double dist = distance(x_t, x_vic, NormKind::L2);
    if (!lambda) {
      auto gen = [&](double th) { return orth_candidate(x_t, th); };
      OarsElementConfig e = c.oc.step;
      e.lo *= dist;
      e.hi *= dist;
      lambda = tuned_parameter(c, e, ProposalFamily::SphereRadius, gen, c.oc.pin_step,
                               c.cfg.boundary_eta_delta * dist, &c.rec.adapted_steps);
    }
    if (!a_in) {
      auto gen = [&](double th) {
        const double r = c.rng.uniform(0.0, th);
        Sample cand = x_t;
        for (std::size_t i = 0; i < cand.data.size(); ++i)
          cand.data[i] += (r / dist) * (x_vic.data[i] - cand.data[i]);
        clamp_box(cand);
        return cand;
      };
      OarsElementConfig e = c.oc.boundary;
      e.lo *= dist;
      e.hi *= dist;
      a_in = tuned_parameter(c, e, ProposalFamily::UniformTermination, gen, std::nullopt,
                             c.cfg.boundary_eta_eps * dist, nullptr);
    }

    bool advanced = false;
    for (int attempt = 0; attempt <= c.oc.steps_tries && !advanced; ++attempt) {
      const Sample orth = orth_candidate(x_t, *lambda);
      const QueryOutcome out = c.q.query(orth);
      const auto a = c.phi_outcome(out);
      if (!a) continue;
      advanced = true;
      if (!*a) break;  // fresh direction next round
      // inward move with a drawn magnitude; a collision keeps the orthogonal point
      const double od = distance(orth, x_vic, NormKind::L2);
      const double r = std::min(od * 0.9, c.rng.uniform(0.0, std::min(*a_in, od)));
      Sample in_cand = orth;
      for (std::size_t i = 0; i < in_cand.data.size(); ++i)
        in_cand.data[i] += (r / od) * (x_vic.data[i] - in_cand.data[i]);
      clamp_box(in_cand);
      const QueryOutcome out2 = c.q.query(in_cand);
      const auto a2 = c.phi_outcome(out2);
      if (a2 && *a2) x_t = std::move(in_cand);
      else x_t = orth;
    }
    if (!advanced) {
      if (c.oc.adapt && !lambda_readapted) {
        lambda_readapted = true;
        lambda.reset();
        continue;
      }
      throw ElementFailure{"step"};
    }
  }
}

}  // namespace

AttackOutcome run_oars(const AttackConfig& cfg, const OarsConfig& oars, const Sample& x_vic,
                       int true_label, Defense& defense, const BlackBoxModel& model) {
  const LabelMode mode = attack_uses_soft_labels(cfg.kind) ? LabelMode::Soft : LabelMode::Hard;
  if (model.hard_predict(x_vic) != true_label)
    throw std::invalid_argument("victim sample is misclassified; not a valid victim");

  DiagnoseResult diag;
  std::uint64_t diag_queries = 0;
  std::uint64_t diag_accounts = 0;
  bool ban_based = false;
  if (oars.diagnose) {
    // the throwaway account eats the repeated probes; the second account carries
    // the attack so its one probe doubles as the attack's first stored query
    diag = diagnose_store(&defense, model, x_vic, mode, oars.diagnose_limit,
                          /*first_account=*/900001, /*second_account=*/1);
    diag_queries = diag.total_queries;
    diag_accounts = 1;
    ban_based = diag.classification == StoreDiagnosis::BanPerAccount ||
                diag.classification == StoreDiagnosis::BanGlobal;
  }

  DefendedOracle oracle(defense, model, mode, /*account=*/1);
  AttackOutcome out;
  if (ban_based) {
    // per-account banning defense: the standard attack under account rotation
    oracle.set_rotate_on_ban(oars.max_accounts);
    AttackConfig inner = cfg;
    inner.query_budget = cfg.query_budget > diag_queries ? cfg.query_budget - diag_queries : 0;
    out = run_attack(inner, x_vic, true_label, oracle);
    if (out.reason == TerminationReason::Collision) out.reason = TerminationReason::Banned;
  } else {
    BudgetedOracle budgeted(oracle,
                            cfg.query_budget > diag_queries ? cfg.query_budget - diag_queries : 0);
    AttackOutcome rec;  // collects adapted parameters during the run
    Ctx ctx{cfg, oars, budgeted, RngStream(cfg.seed), rec, true_label};
    std::optional<Sample> found;
    TerminationReason fallback = TerminationReason::BudgetExhausted;
    std::string note;
    try {
      switch (cfg.kind) {
        case AttackKind::Nes: found = oars_nes(ctx, x_vic); break;
        case AttackKind::Square: found = oars_square(ctx, x_vic); break;
        case AttackKind::Hsja: found = oars_hsja(ctx, x_vic, false); break;
        case AttackKind::Qeba: found = oars_hsja(ctx, x_vic, true); break;
        case AttackKind::SurFree: found = oars_surfree(ctx, x_vic); break;
        case AttackKind::Boundary: found = oars_boundary(ctx, x_vic); break;
      }
    } catch (const BudgetSignal&) {
      fallback = TerminationReason::BudgetExhausted;
    } catch (const ElementFailure& e) {
      fallback = TerminationReason::BudgetExhausted;
      note = std::string("element failure: ") + e.element;
    }
    out = finalize_outcome(cfg, x_vic, true_label, oracle, std::move(found), fallback);
    out.adapted_sigmas = std::move(rec.adapted_sigmas);
    out.adapted_steps = std::move(rec.adapted_steps);
    out.note = std::move(note);
  }
  out.queries_used += diag_queries;
  out.accounts_used += diag_accounts;
  if (oars.diagnose && !out.note.empty()) out.note += "; ";
  if (oars.diagnose) out.note += "diagnosis: " + diagnosis_name(diag.classification);
  return out;
}

}  // namespace oars
