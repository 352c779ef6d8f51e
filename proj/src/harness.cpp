#include "oars/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace oars {

std::optional<Sample> TaskProvider::draw_of_class(int label, RngStream& rng, int cap) const {
  for (int i = 0; i < cap; ++i) {
    auto [x, y] = draw(rng);
    if (y == label && model().hard_predict(x) == label) return x;
  }
  return std::nullopt;
}

std::optional<Sample> SyntheticTaskProvider::draw_of_class(int label, RngStream& rng,
                                                           int cap) const {
  for (int i = 0; i < cap; ++i) {
    Sample x = task_.sample_of_class(label, rng);
    if (task_.model().hard_predict(x) == label) return x;
  }
  return std::nullopt;
}

std::pair<Sample, int> WeightsTaskProvider::draw(RngStream& rng) const {
  Sample s = Sample::constant(shape_, 0.0);
  for (double& v : s.data) v = rng.uniform();
  return {s, model_->hard_predict(s)};
}

std::unique_ptr<TaskProvider> make_task(const nlohmann::json& spec) {
  const std::string kind = spec.value("kind", "synthetic");
  if (kind == "synthetic") {
    const auto shape_arr = spec.value("shape", std::vector<int>{16, 16, 1});
    if (shape_arr.size() != 3) throw std::runtime_error("task shape needs [h, w, c]");
    Shape shape{shape_arr[0], shape_arr[1], shape_arr[2]};
    return std::make_unique<SyntheticTaskProvider>(
        generate_task(Seed{spec.value("seed", std::uint64_t{7})},
                      spec.value("classes", 10), shape));
  }
  if (kind == "weights") {
    const std::string path = spec.at("path");
    auto model = load_weights(path);
    Shape shape{1, model->input_dim(), 1};
    if (spec.contains("shape")) {
      const auto arr = spec["shape"].get<std::vector<int>>();
      if (arr.size() != 3) throw std::runtime_error("task shape needs [h, w, c]");
      shape = Shape{arr[0], arr[1], arr[2]};
      if (shape.flat() != model->input_dim())
        throw std::runtime_error("task shape does not match model input dim");
    }
    return std::make_unique<WeightsTaskProvider>(std::move(model), shape);
  }
  throw std::runtime_error("unknown task kind: " + kind);
}

// ---- config parsing ----

AttackConfig attack_config_from_json(const nlohmann::json& j) {
  AttackConfig c;
  c.kind = attack_from_name(j.at("kind").get<std::string>());
  c.targeted = j.value("targeted", false);
  c.target_label = j.value("target_label", -1);
  if (j.contains("budget")) {
    const auto& b = j["budget"];
    const std::string norm = b.value("norm", "linf");
    c.budget.norm = norm == "l2" ? NormKind::L2 : NormKind::LInf;
    c.budget.epsilon = b.value("epsilon", 0.05);
    c.budget.normalized = b.value("normalized", c.budget.norm == NormKind::L2);
  }
  c.query_budget = j.value("query_budget", c.query_budget);
  c.seed = Seed{j.value("seed", c.seed.value)};
  c.nes_samples = j.value("nes_samples", c.nes_samples);
  c.nes_sigma = j.value("nes_sigma", c.nes_sigma);
  c.nes_step = j.value("nes_step", c.nes_step);
  c.square_p_init = j.value("square_p_init", c.square_p_init);
  c.hsja_samples = j.value("hsja_samples", c.hsja_samples);
  c.hsja_zeta_rel = j.value("hsja_zeta_rel", c.hsja_zeta_rel);
  c.hsja_tol = j.value("hsja_tol", c.hsja_tol);
  c.hsja_max_halvings = j.value("hsja_max_halvings", c.hsja_max_halvings);
  c.qeba_factor = j.value("qeba_factor", c.qeba_factor);
  c.surfree_angles = j.value("surfree_angles", c.surfree_angles);
  c.surfree_theta_max = j.value("surfree_theta_max", c.surfree_theta_max);
  c.surfree_dir_history = j.value("surfree_dir_history", c.surfree_dir_history);
  c.boundary_eta_delta = j.value("boundary_eta_delta", c.boundary_eta_delta);
  c.boundary_eta_eps = j.value("boundary_eta_eps", c.boundary_eta_eps);
  c.boundary_window = j.value("boundary_window", c.boundary_window);
  c.init_draw_cap = j.value("init_draw_cap", c.init_draw_cap);
  c.blinding_strength = j.value("blinding_strength", c.blinding_strength);
  if (c.query_budget < 1) throw std::runtime_error("query budget must be >= 1");
  if (c.targeted && (c.kind == AttackKind::Square || c.kind == AttackKind::SurFree ||
                     c.kind == AttackKind::Boundary))
    throw std::runtime_error("targeted mode is only available for nes/hsja/qeba");
  return c;
}

nlohmann::json attack_config_to_json(const AttackConfig& c) {
  nlohmann::json j;
  j["kind"] = attack_name(c.kind);
  j["targeted"] = c.targeted;
  j["budget"] = {{"norm", c.budget.norm == NormKind::L2 ? "l2" : "linf"},
                 {"epsilon", c.budget.epsilon},
                 {"normalized", c.budget.normalized}};
  j["query_budget"] = c.query_budget;
  j["nes_samples"] = c.nes_samples;
  j["nes_sigma"] = c.nes_sigma;
  j["nes_step"] = c.nes_step;
  j["square_p_init"] = c.square_p_init;
  j["hsja_samples"] = c.hsja_samples;
  j["hsja_zeta_rel"] = c.hsja_zeta_rel;
  j["hsja_tol"] = c.hsja_tol;
  j["hsja_max_halvings"] = c.hsja_max_halvings;
  j["qeba_factor"] = c.qeba_factor;
  j["surfree_angles"] = c.surfree_angles;
  j["surfree_theta_max"] = c.surfree_theta_max;
  j["surfree_dir_history"] = c.surfree_dir_history;
  j["boundary_eta_delta"] = c.boundary_eta_delta;
  j["boundary_eta_eps"] = c.boundary_eta_eps;
  j["boundary_window"] = c.boundary_window;
  j["init_draw_cap"] = c.init_draw_cap;
  j["blinding_strength"] = c.blinding_strength;
  return j;
}

AttackRunConfig AttackRunConfig::from_json(const nlohmann::json& j) {
  AttackRunConfig c;
  c.attack = attack_config_from_json(j.at("attack"));
  c.mode = j.value("mode", "vanilla");
  if (c.mode != "vanilla" && c.mode != "blinding" && c.mode != "resample" && c.mode != "oars")
    throw std::runtime_error("unknown attack mode: " + c.mode);
  if (j.contains("oars")) c.oars = OarsConfig::from_json(j["oars"]);
  c.label = j.value("label", attack_name(c.attack.kind) + "-" + c.mode);
  return c;
}

nlohmann::json AttackRunConfig::to_json() const {
  nlohmann::json j;
  j["label"] = label;
  j["attack"] = attack_config_to_json(attack);
  j["mode"] = mode;
  j["oars"] = oars.to_json();
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.task = j.value("task", nlohmann::json{{"kind", "synthetic"}});
  if (j.contains("sdm") && !j["sdm"].is_null()) c.sdm = SdmConfig::from_json(j["sdm"]);
  if (!j.contains("attacks") || !j["attacks"].is_array() || j["attacks"].empty())
    throw std::runtime_error("config needs a non-empty attacks array");
  for (const auto& ja : j["attacks"]) c.attacks.push_back(AttackRunConfig::from_json(ja));
  c.victims = j.value("victims", c.victims);
  if (c.victims < 1) throw std::runtime_error("victim count must be >= 1");
  c.seed = j.value("seed", c.seed);
  c.jobs = j.value("jobs", c.jobs);
  c.out_path = j.value("out", c.out_path);
  c.sweep = j.value("sweep", nlohmann::json{});
  return c;
}

ExperimentConfig ExperimentConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["task"] = task;
  j["sdm"] = sdm ? sdm->to_json() : nlohmann::json(nullptr);
  j["attacks"] = nlohmann::json::array();
  for (const auto& a : attacks) j["attacks"].push_back(a.to_json());
  j["victims"] = victims;
  j["seed"] = seed;
  j["jobs"] = jobs;
  j["out"] = out_path;
  if (!sweep.is_null() && !sweep.empty()) j["sweep"] = sweep;
  return j;
}

// ---- records and metrics ----

static nlohmann::json num_or_null(double v) {
  if (std::isnan(v)) return nullptr;
  return v;
}

nlohmann::json RunRecord::to_json() const {
  nlohmann::json j;
  j["victim"] = victim;
  j["seed"] = seed;
  j["success"] = success;
  j["queries"] = queries;
  j["collisions"] = collisions;
  j["accounts"] = accounts;
  j["final_norm"] = num_or_null(final_norm);
  j["reason"] = reason;
  j["mean_sigma_opt"] = num_or_null(mean_sigma_opt);
  j["mean_step_opt"] = num_or_null(mean_step_opt);
  j["note"] = note;
  return j;
}

RunRecord RunRecord::from_json(const nlohmann::json& j) {
  RunRecord r;
  r.victim = j.at("victim").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.success = j.at("success").get<bool>();
  r.queries = j.at("queries").get<std::uint64_t>();
  r.collisions = j.at("collisions").get<std::uint64_t>();
  r.accounts = j.at("accounts").get<std::uint64_t>();
  r.final_norm = j.at("final_norm").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                              : j.at("final_norm").get<double>();
  r.reason = j.at("reason").get<std::string>();
  r.mean_sigma_opt = j.at("mean_sigma_opt").is_null()
                         ? std::numeric_limits<double>::quiet_NaN()
                         : j.at("mean_sigma_opt").get<double>();
  r.mean_step_opt = j.at("mean_step_opt").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                    : j.at("mean_step_opt").get<double>();
  r.note = j.value("note", "");
  return r;
}

nlohmann::json Metrics::to_json() const {
  nlohmann::json j;
  j["attack"] = attack_label;
  j["asr"] = asr;
  j["mean_queries_success"] =
      mean_queries_success ? nlohmann::json(*mean_queries_success) : nlohmann::json(nullptr);
  j["mean_accounts"] = mean_accounts ? nlohmann::json(*mean_accounts) : nlohmann::json(nullptr);
  j["mean_sigma_opt"] = mean_sigma_opt ? nlohmann::json(*mean_sigma_opt) : nlohmann::json(nullptr);
  j["records"] = nlohmann::json::array();
  for (const auto& r : records) j["records"].push_back(r.to_json());
  return j;
}

Metrics Metrics::from_json(const nlohmann::json& j) {
  Metrics m;
  m.attack_label = j.at("attack").get<std::string>();
  m.asr = j.at("asr").get<double>();
  if (!j.at("mean_queries_success").is_null())
    m.mean_queries_success = j["mean_queries_success"].get<double>();
  if (!j.at("mean_accounts").is_null()) m.mean_accounts = j["mean_accounts"].get<double>();
  if (!j.at("mean_sigma_opt").is_null()) m.mean_sigma_opt = j["mean_sigma_opt"].get<double>();
  for (const auto& jr : j.at("records")) m.records.push_back(RunRecord::from_json(jr));
  return m;
}

// ---- experiment runner ----

namespace {

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

RunRecord run_one_victim(const ExperimentConfig& cfg, const AttackRunConfig& arc,
                         const TaskProvider& task, int victim_index, int attack_index) {
  const std::uint64_t vseed =
      mix_seed(mix_seed(cfg.seed, 0x1000 + static_cast<std::uint64_t>(attack_index)),
               static_cast<std::uint64_t>(victim_index));
  RngStream rng{Seed{vseed}};

  // victims are correctly classified draws from the task distribution
  Sample x_vic = Sample::constant(task.shape(), 0.5);
  int label = 0;
  bool found = false;
  for (int tries = 0; tries < 500 && !found; ++tries) {
    auto [x, y] = task.draw(rng);
    if (task.model().hard_predict(x) == y) {
      x_vic = std::move(x);
      label = y;
      found = true;
    }
  }
  if (!found) throw std::runtime_error("could not draw a correctly classified victim");

  AttackConfig attack = arc.attack;
  attack.seed = Seed{mix_seed(vseed, 0xa77ac)};
  if (attack.targeted) {
    attack.target_label = rng.uniform_int(0, task.classes() - 2);
    if (attack.target_label >= label) ++attack.target_label;  // uniform over labels != y
    if (!attack_uses_soft_labels(attack.kind)) {
      auto init = task.draw_of_class(attack.target_label, rng, 2000);
      if (!init)
        throw std::runtime_error("no sample of the target class found for the starting point");
      attack.init_adversarial = std::move(init);
    }
  }

  std::unique_ptr<Defense> defense;  // fresh per victim: runs are isolated
  if (cfg.sdm) defense = make_defense(*cfg.sdm, task.shape().flat());

  AttackOutcome out;
  if (arc.mode == "vanilla") {
    out = run_vanilla(attack, x_vic, label, defense.get(), task.model());
  } else if (arc.mode == "blinding") {
    AttackConfig blinded = attack;
    if (blinded.blinding_strength <= 0.0) blinded.blinding_strength = 1.0;
    out = run_vanilla(blinded, x_vic, label, defense.get(), task.model());
  } else {
    OarsConfig oc = arc.oars;
    if (arc.mode == "resample") oc.adapt = false;
    if (defense) {
      out = run_oars(attack, oc, x_vic, label, *defense, task.model());
    } else {
      out = run_vanilla(attack, x_vic, label, nullptr, task.model());
    }
  }

  RunRecord rec;
  rec.victim = victim_index;
  rec.seed = vseed;
  rec.success = out.success;
  rec.queries = out.queries_used;
  rec.collisions = out.collisions_seen;
  rec.accounts = out.accounts_used;
  rec.final_norm = out.final_norm;
  rec.reason = reason_name(out.reason);
  rec.mean_sigma_opt = mean_of(out.adapted_sigmas);
  rec.mean_step_opt = mean_of(out.adapted_steps);
  rec.note = out.note;
  return rec;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress) {
  const auto t0 = std::chrono::steady_clock::now();
  auto task = make_task(cfg.task);

  ExperimentResult result;
  result.config_echo = cfg.to_json();
  result.config_hash = config_hash_hex(result.config_echo);

  for (int ai = 0; ai < static_cast<int>(cfg.attacks.size()); ++ai) {
    const AttackRunConfig& arc = cfg.attacks[static_cast<std::size_t>(ai)];
    std::vector<RunRecord> records(static_cast<std::size_t>(cfg.victims));

    const int jobs = std::max(1, cfg.jobs);
    if (jobs == 1) {
      for (int v = 0; v < cfg.victims; ++v) {
        records[static_cast<std::size_t>(v)] = run_one_victim(cfg, arc, *task, v, ai);
        if (progress)
          progress(arc.label + ": victim " + std::to_string(v + 1) + "/" +
                   std::to_string(cfg.victims) +
                   (records[static_cast<std::size_t>(v)].success ? " success" : " fail"));
      }
    } else {
      std::atomic<int> next{0};
      std::mutex err_mu;
      std::exception_ptr first_error;
      auto worker = [&] {
        for (;;) {
          const int v = next.fetch_add(1);
          if (v >= cfg.victims) return;
          try {
            records[static_cast<std::size_t>(v)] = run_one_victim(cfg, arc, *task, v, ai);
          } catch (...) {
            std::lock_guard<std::mutex> lock(err_mu);
            if (!first_error) first_error = std::current_exception();
            return;
          }
        }
      };
      std::vector<std::thread> pool;
      for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
      for (auto& th : pool) th.join();
      if (first_error) std::rethrow_exception(first_error);
      if (progress) progress(arc.label + ": " + std::to_string(cfg.victims) + " victims done");
    }

    Metrics m;
    m.attack_label = arc.label;
    int successes = 0;
    std::vector<double> q_success, accounts, sigma_means;
    for (const auto& r : records) {
      if (r.success) {
        ++successes;
        q_success.push_back(static_cast<double>(r.queries));
      }
      accounts.push_back(static_cast<double>(r.accounts));
      if (!std::isnan(r.mean_sigma_opt)) sigma_means.push_back(r.mean_sigma_opt);
    }
    m.asr = static_cast<double>(successes) / static_cast<double>(cfg.victims);
    if (successes > 0) m.mean_queries_success = mean_of(q_success);
    m.mean_accounts = mean_of(accounts);
    if (!sigma_means.empty()) m.mean_sigma_opt = mean_of(sigma_means);
    m.records = std::move(records);
    result.per_attack.push_back(std::move(m));
  }

  result.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

double measure_fpr(Defense& defense, const TaskProvider& task, int n, AccountPolicy policy,
                   Seed seed) {
  RngStream rng(seed);
  std::uint64_t actioned = 0;
  for (int i = 0; i < n; ++i) {
    auto [x, y] = task.draw(rng);
    (void)y;
    const AccountId account = policy == AccountPolicy::SingleAccount
                                  ? AccountId{7}
                                  : AccountId{10000 + static_cast<AccountId>(i)};
    const QueryOutcome out = defense.query(account, x, task.model(), LabelMode::Hard);
    if (out.actioned()) ++actioned;
  }
  return static_cast<double>(actioned) / static_cast<double>(n);
}

CalibrationResult calibrate_threshold(const SdmConfig& family, double target_fpr,
                                      const TaskProvider& task, int n, Seed seed) {
  if (family.is_ensemble())
    throw std::invalid_argument("calibration works on a single defense, not an ensemble");
  // Replay the stream once, recording each query's similarity score. Inserting
  // regardless of collisions makes the store evolution threshold-independent,
  // so FPR(T) can be evaluated exactly from the recorded scores.
  SdmInstance extractor_holder(family, task.shape().flat());
  QueryStore store(family.scope, family.capacity);
  RngStream rng(seed);
  std::vector<double> scores;
  scores.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto [x, y] = task.draw(rng);
    (void)y;
    const Feature f = extractor_holder.extract(x);
    const auto s = store.score(AccountId{7}, f, family.similarity);
    if (s) scores.push_back(*s);
    store.insert(AccountId{7}, f);
  }
  auto fpr_at = [&](double threshold) {
    std::size_t hits = 0;
    for (double s : scores) hits += s <= threshold ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(n);
  };
  const double max_range =
      family.similarity.metric == SimilarityProcedure::Metric::KnnHamming ? 1.0 : 2.0;
  CalibrationResult res;
  if (fpr_at(0.0) > target_fpr) {
    res.threshold = 0.0;
    res.attainable = false;
    res.achieved_fpr = fpr_at(0.0);
    return res;
  }
  double lo = 0.0, hi = max_range;
  if (fpr_at(max_range) <= target_fpr) {
    res.threshold = max_range;
    res.achieved_fpr = fpr_at(max_range);
    return res;
  }
  for (int step = 0; step < 40; ++step) {
    const double mid = (lo + hi) / 2.0;
    if (fpr_at(mid) <= target_fpr) lo = mid;
    else hi = mid;
  }
  res.threshold = lo;
  res.achieved_fpr = fpr_at(lo);
  return res;
}

SweepResult reconfiguration_sweep(const ExperimentConfig& base, const std::vector<SweepCell>& cells,
                                  const ProgressFn& progress) {
  if (cells.empty()) throw std::invalid_argument("sweep needs at least one cell");
  SweepResult result;
  for (const auto& cell : cells) {
    ExperimentConfig cfg = base;
    cfg.sdm = cell.sdm;
    if (progress) progress("sweep cell: " + cell.label);
    result.cells.emplace_back(cell.label, run_experiment(cfg, progress));
  }
  return result;
}

std::string config_hash_hex(const nlohmann::json& canonical) {
  const std::string dump = canonical.dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : dump) h = (h ^ ch) * 0x100000001b3ull;
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

void persist_result(const ExperimentResult& result, const std::filesystem::path& path) {
  nlohmann::json doc;
  doc["schema_version"] = 1;
  doc["config_hash"] = result.config_hash;
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  char buf[64];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&tt));
  // the one nondeterministic field; determinism checks drop it wholesale
  doc["timestamp"] = {{"written_at", buf}, {"runtime_seconds", result.runtime_seconds}};
  doc["config"] = result.config_echo;
  doc["results"] = nlohmann::json::array();
  for (const auto& m : result.per_attack) doc["results"].push_back(m.to_json());
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write results to " + path.string());
  out << doc.dump(2) << "\n";
}

ExperimentResult load_result(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open results file: " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed results file " + path.string() + ": " + e.what());
  }
  if (doc.value("schema_version", -1) != 1)
    throw std::runtime_error("unsupported results schema version in " + path.string());
  ExperimentResult res;
  res.config_hash = doc.value("config_hash", "");
  res.config_echo = doc.value("config", nlohmann::json{});
  if (doc.contains("timestamp") && doc["timestamp"].contains("runtime_seconds"))
    res.runtime_seconds = doc["timestamp"]["runtime_seconds"].get<double>();
  for (const auto& jm : doc.at("results")) res.per_attack.push_back(Metrics::from_json(jm));
  return res;
}

}  // namespace oars
