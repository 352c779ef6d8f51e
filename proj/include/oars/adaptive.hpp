// Adapt-and-resample attack strategy: oracle-guided proposal tuning, rejection
// sampling of attack queries, query blinding, the store diagnostic, and the
// adaptive runners for all six attacks.
#pragma once

#include <functional>
#include <optional>

#include "json.hpp"
#include "oars/attacks.hpp"

namespace oars {

enum class ProposalFamily {
  GaussianSigma,       // N(0, theta^2 I) noise around the anchor
  SphereRadius,        // uniform on the sphere of radius theta
  RademacherScale,     // theta-scaled +-1 signs
  UniformTermination,  // binary-search termination distance ~ U(0, theta)
  SquareCount          // integer number of simultaneously perturbed squares
};

struct ProposalSpec {
  ProposalFamily family = ProposalFamily::GaussianSigma;
  double lo = 0.0;
  double hi = 1.0;
};

struct AdaptConfig {
  int stps = 10;
  int sam = 20;
  double cr = 0.0;  // max tolerated collision rate
};

// Draws one candidate query for a given parameter value.
using CandidateGen = std::function<Sample(double theta)>;

struct AdaptResult {
  double theta_opt = 0.0;
  std::uint64_t queries = 0;
};

// Bisection over theta: probe `sam` candidates at the midpoint; a collision rate
// above cr moves the lower bound up, otherwise the upper bound down. Returns the
// upper end of the final bracket. Degenerate bounds are treated as pinned.
AdaptResult adapt_proposal(const ProposalSpec& spec, const AdaptConfig& cfg,
                           const CandidateGen& gen, QueryOracle& probe);

struct ResampleResult {
  std::vector<Sample> accepted;
  std::vector<QueryOutcome> outcomes;
  std::uint64_t draws = 0;
  bool readapted = false;
};

// Rejection sampling from the tuned proposal: actioned draws are discarded and
// redrawn, stopping at n accepted or n*(1+retries) total draws. If nothing is
// accepted the optional readapt hook runs once and the draw budget restarts.
ResampleResult resample_queries(const CandidateGen& gen, double theta, int n, int retries,
                                QueryOracle& oracle, const std::function<double()>& readapt = {});

// Outcome-aware adversarial predicate: nullopt when the query was actioned.
using OutcomePhi = std::function<std::optional<bool>(const Sample&)>;

struct BoundarySearchResult {
  Sample point;
  bool collided_early = false;  // a collision ended the search; point is the last accepted
  bool any_accepted = false;
};

// Binary search with an explicit termination distance; a collision mid-search
// returns the penultimate accepted adversarial point instead of failing.
BoundarySearchResult oars_locate_boundary(const Sample& x_adv, const Sample& x_vic,
                                          double termination, const OutcomePhi& phi);

// Random affine transform (rotation up to 10 degrees, shift up to 10%, zoom up
// to 10%, all scaled by strength) with bilinear resampling and edge replication.
Sample query_blind(const Sample& x, double strength, RngStream& rng);

enum class StoreDiagnosis {
  BanPerAccount,
  BanGlobal,
  RejectGlobal,
  RejectPerAccount,
  NoDefenseDetected
};

std::string diagnosis_name(StoreDiagnosis d);

struct DiagnoseResult {
  StoreDiagnosis classification = StoreDiagnosis::NoDefenseDetected;
  std::uint64_t queries_on_first_account = 0;
  bool actioned_on_second = false;
  std::uint64_t total_queries = 0;  // queries on A + the one query on B
  int extra_accounts = 1;
};

// Two-step probe: repeat x on one account until an action (or the limit), then
// submit x once from a fresh account to separate global from per-account stores.
DiagnoseResult diagnose_store(Defense* defense, const BlackBoxModel& model, const Sample& x,
                              LabelMode mode, std::uint64_t limit, AccountId first_account,
                              AccountId second_account);

struct OarsElementConfig {
  int stps = 10;
  int sam = 20;
  double cr = 0.0;
  double lo = 0.0;
  double hi = 1.0;
};

struct OarsConfig {
  bool adapt = true;  // false: resample-only, proposals stay at the vanilla constants
  OarsElementConfig gradient{10, 20, 0.0, 0.05, 0.5};
  OarsElementConfig step{10, 20, 0.0, 0.01, 0.01};
  OarsElementConfig boundary{8, 10, 0.0, 0.002, 1.0};  // bounds relative to current distance
  OarsElementConfig squares{6, 5, 0.0, 1.0, 32.0};
  int ge_tries = 5;
  int steps_tries = 20;
  bool diagnose = true;
  std::uint64_t diagnose_limit = 200;
  std::uint64_t max_accounts = 64;
  // Test hooks: skip adaptation and pin the proposal parameter.
  std::optional<double> pin_sigma;
  std::optional<double> pin_step;

  static OarsConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// Adaptive runner. Diagnoses the store first (when enabled); ban-action defenses
// get the standard attack under account rotation, everything else the full
// adapt-and-resample attack on a single account.
AttackOutcome run_oars(const AttackConfig& cfg, const OarsConfig& oars, const Sample& x_vic,
                       int true_label, Defense& defense, const BlackBoxModel& model);

}  // namespace oars
