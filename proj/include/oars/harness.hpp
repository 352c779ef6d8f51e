// Experiment orchestration: victim selection, attack-vs-defense runs, ASR and
// query metrics, FPR measurement, threshold calibration, result persistence.
#pragma once

#include <filesystem>
#include <functional>
#include <memory>

#include "oars/adaptive.hpp"

namespace oars {

// Source of victims, benign traffic, and the protected model.
class TaskProvider {
 public:
  virtual ~TaskProvider() = default;
  virtual const BlackBoxModel& model() const = 0;
  virtual Shape shape() const = 0;
  virtual int classes() const = 0;
  virtual std::pair<Sample, int> draw(RngStream& rng) const = 0;
  // A sample the model assigns to `label`; nullopt if none found within the cap.
  virtual std::optional<Sample> draw_of_class(int label, RngStream& rng, int cap) const;
};

class SyntheticTaskProvider : public TaskProvider {
 public:
  explicit SyntheticTaskProvider(SyntheticTask task) : task_(std::move(task)) {}
  const BlackBoxModel& model() const override { return task_.model(); }
  Shape shape() const override { return task_.shape(); }
  int classes() const override { return task_.classes(); }
  std::pair<Sample, int> draw(RngStream& rng) const override { return task_.draw(rng); }
  std::optional<Sample> draw_of_class(int label, RngStream& rng, int cap) const override;
  const SyntheticTask& task() const { return task_; }

 private:
  SyntheticTask task_;
};

// Model loaded from a weights file; victims are uniform draws labeled by the
// model itself, benign traffic likewise.
class WeightsTaskProvider : public TaskProvider {
 public:
  WeightsTaskProvider(std::unique_ptr<BlackBoxModel> model, Shape shape)
      : model_(std::move(model)), shape_(shape) {}
  const BlackBoxModel& model() const override { return *model_; }
  Shape shape() const override { return shape_; }
  int classes() const override { return model_->num_classes(); }
  std::pair<Sample, int> draw(RngStream& rng) const override;

 private:
  std::unique_ptr<BlackBoxModel> model_;
  Shape shape_;
};

std::unique_ptr<TaskProvider> make_task(const nlohmann::json& spec);

AttackConfig attack_config_from_json(const nlohmann::json& j);
nlohmann::json attack_config_to_json(const AttackConfig& cfg);

struct AttackRunConfig {
  std::string label;
  AttackConfig attack;
  std::string mode = "vanilla";  // vanilla | blinding | resample | oars
  OarsConfig oars;

  static AttackRunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct ExperimentConfig {
  nlohmann::json task;
  std::optional<SdmConfig> sdm;
  std::vector<AttackRunConfig> attacks;
  int victims = 20;
  std::uint64_t seed = 1;
  int jobs = 1;
  std::string out_path = "results.json";
  nlohmann::json sweep;  // optional grid spec for the sweep command

  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig from_file(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

struct RunRecord {
  int victim = 0;
  std::uint64_t seed = 0;
  bool success = false;
  std::uint64_t queries = 0;
  std::uint64_t collisions = 0;
  std::uint64_t accounts = 1;
  double final_norm = std::numeric_limits<double>::quiet_NaN();
  std::string reason;
  double mean_sigma_opt = std::numeric_limits<double>::quiet_NaN();
  double mean_step_opt = std::numeric_limits<double>::quiet_NaN();
  std::string note;

  nlohmann::json to_json() const;
  static RunRecord from_json(const nlohmann::json& j);
};

struct Metrics {
  std::string attack_label;
  double asr = 0.0;
  std::optional<double> mean_queries_success;
  std::optional<double> mean_accounts;
  std::optional<double> mean_sigma_opt;
  std::vector<RunRecord> records;

  nlohmann::json to_json() const;
  static Metrics from_json(const nlohmann::json& j);
};

struct ExperimentResult {
  nlohmann::json config_echo;
  std::string config_hash;
  std::vector<Metrics> per_attack;
  double runtime_seconds = 0.0;
};

using ProgressFn = std::function<void(const std::string&)>;

ExperimentResult run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress = {});

enum class AccountPolicy { SingleAccount, AccountPerQuery };

double measure_fpr(Defense& defense, const TaskProvider& task, int n, AccountPolicy policy,
                   Seed seed);

struct CalibrationResult {
  double threshold = 0.0;
  bool attainable = true;
  double achieved_fpr = 0.0;
};

// Largest threshold whose measured FPR on the benign stream stays at or below
// the target; bisection over the metric's range against recorded stream scores.
CalibrationResult calibrate_threshold(const SdmConfig& family, double target_fpr,
                                      const TaskProvider& task, int n, Seed seed);

struct SweepCell {
  std::string label;
  SdmConfig sdm;
};

struct SweepResult {
  std::vector<std::pair<std::string, ExperimentResult>> cells;
};

SweepResult reconfiguration_sweep(const ExperimentConfig& base, const std::vector<SweepCell>& cells,
                                  const ProgressFn& progress = {});

std::string config_hash_hex(const nlohmann::json& canonical);
void persist_result(const ExperimentResult& result, const std::filesystem::path& path);
ExperimentResult load_result(const std::filesystem::path& path);

}  // namespace oars
