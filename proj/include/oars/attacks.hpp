// Query-based black-box attacks written against the defended-endpoint outcome
// interface: NES, Square, HopSkipJump, QEBA, SurFree, Boundary.
#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>

#include "oars/core.hpp"
#include "oars/defense.hpp"
#include "oars/models.hpp"

namespace oars {

enum class AttackKind { Nes, Square, Hsja, Qeba, SurFree, Boundary };

std::string attack_name(AttackKind kind);
AttackKind attack_from_name(const std::string& name);
bool attack_uses_soft_labels(AttackKind kind);

struct AttackConfig {
  AttackKind kind = AttackKind::Nes;
  bool targeted = false;
  int target_label = -1;
  PerturbationBudget budget{NormKind::LInf, 0.05, false};
  std::uint64_t query_budget = 100000;
  Seed seed{1};

  // Hard-label attacks start from an adversarial point; the harness provides one
  // for targeted runs (a sample of the target class).
  std::optional<Sample> init_adversarial;

  int nes_samples = 20;        // per gradient estimate, even (antithetic pairs)
  double nes_sigma = 0.001;
  double nes_step = 0.01;

  double square_p_init = 0.1;

  int hsja_samples = 20;
  double hsja_zeta_rel = 0.1;  // gradient probe radius, relative to current distance
  double hsja_tol = 0.01;      // boundary search termination distance (raw L2)
  int hsja_max_halvings = 10;

  int qeba_factor = 4;

  int surfree_angles = 8;
  double surfree_theta_max = 1.0;  // radians
  int surfree_dir_history = 12;

  double boundary_eta_delta = 0.1;
  double boundary_eta_eps = 0.1;
  int boundary_window = 10;    // proposals per trust-region adjustment

  int init_draw_cap = 1000;
  double blinding_strength = 0.0;  // >0 applies a random affine transform per query
};

enum class TerminationReason { Success, BudgetExhausted, Collision, Banned };

std::string reason_name(TerminationReason r);

struct AttackOutcome {
  bool success = false;
  std::optional<Sample> adversarial;
  std::uint64_t queries_used = 0;
  std::uint64_t collisions_seen = 0;
  TerminationReason reason = TerminationReason::BudgetExhausted;
  std::uint64_t accounts_used = 1;
  double final_norm = std::numeric_limits<double>::quiet_NaN();
  // Parameters picked by oracle-guided adaptation, when the adaptive runner is used.
  std::vector<double> adapted_sigmas;
  std::vector<double> adapted_steps;
  std::string note;
};

// Counting endpoint handle owned by one attack episode. Every query issued by
// the attack flows through here, so accounting is exact by construction.
class QueryOracle {
 public:
  virtual ~QueryOracle() = default;
  virtual QueryOutcome query(const Sample& x) = 0;
  // Ground-truth check against the raw model; never counted.
  virtual int reference_hard_label(const Sample& x) const = 0;

  virtual std::uint64_t queries() const { return queries_; }
  virtual std::uint64_t collisions() const { return collisions_; }
  virtual std::uint64_t accounts_used() const { return accounts_; }

 protected:
  void note_outcome(const QueryOutcome& o) {
    ++queries_;
    if (o.actioned()) ++collisions_;
  }
  std::uint64_t queries_ = 0;
  std::uint64_t collisions_ = 0;
  std::uint64_t accounts_ = 1;
};

class ModelOracle : public QueryOracle {
 public:
  ModelOracle(const BlackBoxModel& model, LabelMode mode) : model_(model), mode_(mode) {}
  QueryOutcome query(const Sample& x) override;
  int reference_hard_label(const Sample& x) const override { return model_.hard_predict(x); }

 private:
  const BlackBoxModel& model_;
  LabelMode mode_;
};

class DefendedOracle : public QueryOracle {
 public:
  DefendedOracle(Defense& defense, const BlackBoxModel& model, LabelMode mode,
                 AccountId account = 1)
      : defense_(defense), model_(model), mode_(mode), account_(account),
        next_account_(account + 1) {}
  QueryOutcome query(const Sample& x) override;
  int reference_hard_label(const Sample& x) const override { return model_.hard_predict(x); }
  AccountId account() const { return account_; }
  // Retry banned submissions on fresh accounts, up to the given total.
  void set_rotate_on_ban(std::uint64_t max_accounts) { max_accounts_ = max_accounts; }
  void charge_accounts(std::uint64_t n) { accounts_ += n; }

 private:
  Defense& defense_;
  const BlackBoxModel& model_;
  LabelMode mode_;
  AccountId account_;
  AccountId next_account_;
  std::uint64_t max_accounts_ = 1;
};

// Applies a random affine transform to every query before forwarding it.
class BlindingOracle : public QueryOracle {
 public:
  BlindingOracle(QueryOracle& inner, double strength, Seed seed)
      : inner_(inner), strength_(strength), rng_(seed) {}
  QueryOutcome query(const Sample& x) override;
  int reference_hard_label(const Sample& x) const override {
    return inner_.reference_hard_label(x);
  }
  std::uint64_t queries() const override { return inner_.queries(); }
  std::uint64_t collisions() const override { return inner_.collisions(); }
  std::uint64_t accounts_used() const override { return inner_.accounts_used(); }

 private:
  QueryOracle& inner_;
  double strength_;
  RngStream rng_;
};

// ---- attack building blocks ----

using LossFn = std::function<std::optional<double>(const Sample&)>;  // nullopt: rejected
using PhiFn = std::function<std::optional<bool>(const Sample&)>;     // adversarial predicate

// Finite-difference estimate over antithetic pairs +-u_i; rejected queries
// contribute nothing and shrink the averaging denominator.
std::vector<double> nes_gradient(const Sample& x, double sigma,
                                 std::span<const std::vector<double>> dirs, const LossFn& loss);

Sample nes_step(const Sample& x, const std::vector<double>& grad, double step,
                const Sample& center, const PerturbationBudget& budget);

// Variance-reduced direction estimate from sphere samples; when every phi agrees
// the fall-back direction is sign * mean(u_i).
std::vector<double> hsja_gradient(const Sample& x, double zeta,
                                  std::span<const std::vector<double>> dirs, const PhiFn& phi);

double hsja_initial_step(const Sample& x_t, const Sample& x_vic, int iteration, NormKind norm);

// Bisect the segment [x_vic, x_adv] until the endpoints are within tol (raw L2);
// returns the adversarial end.
Sample locate_boundary_vanilla(const Sample& x_adv, const Sample& x_vic, const PhiFn& phi,
                               double tol, bool verify_endpoints = true);

std::vector<double> gaussian_direction(RngStream& rng, int dim);
std::vector<double> unit_sphere_direction(RngStream& rng, int dim);
// Noise drawn on a (ceil(H/f), ceil(W/f)) grid and bilinearly upsampled; f=1 is
// exactly the full-resolution draw.
std::vector<double> qeba_direction(RngStream& rng, Shape shape, int factor);

std::vector<double> bilinear_resize(const std::vector<double>& src, int sh, int sw, int channels,
                                    int dh, int dw);

bool label_is_adversarial(const AttackConfig& cfg, int true_label, int label);

// Fills counters from the oracle and re-verifies the candidate against the raw
// model (not counted) before declaring success.
AttackOutcome finalize_outcome(const AttackConfig& cfg, const Sample& x_vic, int true_label,
                               QueryOracle& oracle, std::optional<Sample> found,
                               TerminationReason fallback);

// Run an attack to completion against an already-constructed oracle.
AttackOutcome run_attack(const AttackConfig& cfg, const Sample& x_vic, int true_label,
                         QueryOracle& oracle);

// Standard (non-adaptive) runner: first rejection or ban terminates the episode.
AttackOutcome run_vanilla(const AttackConfig& cfg, const Sample& x_vic, int true_label,
                          Defense* defense, const BlackBoxModel& model);

}  // namespace oars
