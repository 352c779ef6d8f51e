// Black-box classifier endpoints: linear / MLP models, losses, weight files,
// and the seeded synthetic classification task used by the experiments.
#pragma once

#include <filesystem>
#include <memory>
#include <vector>

#include "oars/core.hpp"

namespace oars {

std::vector<double> softmax(const std::vector<double>& logits);

// Queryable classifier. hard_predict is argmax of soft_predict, lowest index wins ties.
class BlackBoxModel {
 public:
  virtual ~BlackBoxModel() = default;
  virtual int input_dim() const = 0;
  virtual int num_classes() const = 0;
  virtual std::vector<double> soft_predict(const Sample& x) const = 0;
  int hard_predict(const Sample& x) const;
};

struct DenseLayer {
  int rows = 0;  // output dim
  int cols = 0;  // input dim
  std::vector<double> weights;  // row-major rows x cols
  std::vector<double> bias;     // rows
};

class LinearModel : public BlackBoxModel {
 public:
  explicit LinearModel(DenseLayer layer);
  int input_dim() const override { return layer_.cols; }
  int num_classes() const override { return layer_.rows; }
  std::vector<double> soft_predict(const Sample& x) const override;
  const DenseLayer& layer() const { return layer_; }

 private:
  DenseLayer layer_;
};

// Dense layers with ReLU between them and a softmax on the last layer's logits.
class MlpModel : public BlackBoxModel {
 public:
  explicit MlpModel(std::vector<DenseLayer> layers);
  int input_dim() const override { return layers_.front().cols; }
  int num_classes() const override { return layers_.back().rows; }
  std::vector<double> soft_predict(const Sample& x) const override;
  std::vector<double> logits(const Sample& x) const;
  const std::vector<DenseLayer>& layers() const { return layers_; }

 private:
  std::vector<DenseLayer> layers_;
};

struct LossKind {
  enum class Kind { TargetedLogProb, UntargetedMargin };
  Kind kind = Kind::UntargetedMargin;
  int label = 0;  // target class, or the true class for the margin

  static LossKind targeted(int target) { return {Kind::TargetedLogProb, target}; }
  static LossKind untargeted(int true_label) { return {Kind::UntargetedMargin, true_label}; }
};

// TargetedLogProb: log F(x)_target, to be maximized.
// UntargetedMargin: F(x)_y - max_{i!=y} F(x)_i, to be driven below zero.
double loss_from_probs(const std::vector<double>& probs, LossKind loss);
double attack_loss(const BlackBoxModel& model, const Sample& x, LossKind loss);

// Weights file: JSON with layers [{rows, cols, weights, bias}], activation, final.
std::vector<DenseLayer> load_layers(const std::filesystem::path& path);
std::unique_ptr<BlackBoxModel> load_weights(const std::filesystem::path& path);
void save_weights(const std::vector<DenseLayer>& layers, const std::filesystem::path& path);

// Procedurally generated task: class templates (stripes + blobs) plus per-sample
// Gaussian pixel noise, bundled with a nearest-template MLP built from the templates.
class SyntheticTask {
 public:
  SyntheticTask(Seed seed, int classes, Shape shape);

  const MlpModel& model() const { return *model_; }
  int classes() const { return classes_; }
  Shape shape() const { return shape_; }
  Seed seed() const { return seed_; }

  Sample sample_of_class(int label, RngStream& rng) const;
  std::pair<Sample, int> draw(RngStream& rng) const;  // uniform label
  const Sample& class_template(int label) const { return templates_.at(label); }

 private:
  Seed seed_;
  int classes_;
  Shape shape_;
  std::vector<Sample> templates_;
  std::unique_ptr<MlpModel> model_;
};

SyntheticTask generate_task(Seed seed, int classes, Shape shape);

}  // namespace oars
