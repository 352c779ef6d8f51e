#include "oars/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace oars {

std::vector<double> softmax(const std::vector<double>& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

int BlackBoxModel::hard_predict(const Sample& x) const {
  const auto p = soft_predict(x);
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

static void apply_layer(const DenseLayer& layer, const std::vector<double>& in,
                        std::vector<double>& out) {
  out.assign(static_cast<std::size_t>(layer.rows), 0.0);
  for (int r = 0; r < layer.rows; ++r) {
    const double* w = layer.weights.data() + static_cast<std::size_t>(r) * layer.cols;
    double acc = layer.bias[static_cast<std::size_t>(r)];
    for (int c = 0; c < layer.cols; ++c) acc += w[c] * in[static_cast<std::size_t>(c)];
    out[static_cast<std::size_t>(r)] = acc;
  }
}

static void validate_layer(const DenseLayer& layer) {
  if (layer.rows <= 0 || layer.cols <= 0)
    throw std::runtime_error("layer with nonpositive dimensions");
  if (layer.weights.size() != static_cast<std::size_t>(layer.rows) * layer.cols)
    throw std::runtime_error("layer weight count does not match rows*cols");
  if (layer.bias.size() != static_cast<std::size_t>(layer.rows))
    throw std::runtime_error("layer bias count does not match rows");
}

LinearModel::LinearModel(DenseLayer layer) : layer_(std::move(layer)) { validate_layer(layer_); }

std::vector<double> LinearModel::soft_predict(const Sample& x) const {
  if (x.dim() != layer_.cols) throw std::invalid_argument("input dim mismatch");
  std::vector<double> logits;
  apply_layer(layer_, x.data, logits);
  return softmax(logits);
}

MlpModel::MlpModel(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw std::runtime_error("model needs at least one layer");
  for (const auto& l : layers_) validate_layer(l);
  for (std::size_t i = 1; i < layers_.size(); ++i)
    if (layers_[i].cols != layers_[i - 1].rows)
      throw std::runtime_error("layer input dim does not match previous layer output dim");
}

std::vector<double> MlpModel::logits(const Sample& x) const {
  if (x.dim() != input_dim()) throw std::invalid_argument("input dim mismatch");
  std::vector<double> cur = x.data;
  std::vector<double> next;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    apply_layer(layers_[i], cur, next);
    if (i + 1 < layers_.size())
      for (double& v : next) v = std::max(0.0, v);
    cur.swap(next);
  }
  return cur;
}

std::vector<double> MlpModel::soft_predict(const Sample& x) const { return softmax(logits(x)); }

double loss_from_probs(const std::vector<double>& probs, LossKind loss) {
  if (loss.label < 0 || loss.label >= static_cast<int>(probs.size()))
    throw std::invalid_argument("loss label out of range");
  if (loss.kind == LossKind::Kind::TargetedLogProb)
    return std::log(std::max(probs[static_cast<std::size_t>(loss.label)], 1e-300));
  double other = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < probs.size(); ++i)
    if (static_cast<int>(i) != loss.label) other = std::max(other, probs[i]);
  return probs[static_cast<std::size_t>(loss.label)] - other;
}

double attack_loss(const BlackBoxModel& model, const Sample& x, LossKind loss) {
  return loss_from_probs(model.soft_predict(x), loss);
}

// ---- weights file ----

static nlohmann::json layer_to_json(const DenseLayer& l) {
  return nlohmann::json{{"rows", l.rows}, {"cols", l.cols}, {"weights", l.weights}, {"bias", l.bias}};
}

void save_weights(const std::vector<DenseLayer>& layers, const std::filesystem::path& path) {
  nlohmann::json doc;
  doc["activation"] = "relu";
  doc["final"] = "softmax";
  doc["layers"] = nlohmann::json::array();
  for (const auto& l : layers) doc["layers"].push_back(layer_to_json(l));
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open weights file for writing: " + path.string());
  out << doc.dump(2) << "\n";
}

std::vector<DenseLayer> load_layers(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open weights file: " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed weights file " + path.string() + ": " + e.what());
  }
  if (!doc.contains("layers") || !doc["layers"].is_array() || doc["layers"].empty())
    throw std::runtime_error("weights file has no layers: " + path.string());
  if (doc.value("activation", "relu") != "relu" || doc.value("final", "softmax") != "softmax")
    throw std::runtime_error("unsupported activation/final in weights file");
  std::vector<DenseLayer> layers;
  try {
    for (const auto& jl : doc["layers"]) {
      DenseLayer l;
      l.rows = jl.at("rows").get<int>();
      l.cols = jl.at("cols").get<int>();
      l.weights = jl.at("weights").get<std::vector<double>>();
      l.bias = jl.at("bias").get<std::vector<double>>();
      validate_layer(l);
      layers.push_back(std::move(l));
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed layer in weights file " + path.string() + ": " + e.what());
  }
  for (std::size_t i = 1; i < layers.size(); ++i)
    if (layers[i].cols != layers[i - 1].rows)
      throw std::runtime_error("layer shape chain mismatch in " + path.string());
  return layers;
}

std::unique_ptr<BlackBoxModel> load_weights(const std::filesystem::path& path) {
  auto layers = load_layers(path);
  if (layers.size() == 1) return std::make_unique<LinearModel>(std::move(layers.front()));
  return std::make_unique<MlpModel>(std::move(layers));
}

// ---- synthetic task ----

namespace {

// Amplitude of the class templates and the logit scale of the bundled model.
// Chosen so victims sit close enough to class boundaries that budget-bounded
// attacks can cross them, while clean accuracy stays far above 95%.
constexpr double kTemplateAmplitude = 0.045;
constexpr double kLogitScale = 10.0;
// Per-sample noise std is log-uniform over this range; the low end produces the
// occasional near-duplicate pair, as a natural image stream would.
constexpr double kNoiseLo = 0.002;
constexpr double kNoiseHi = 0.035;

Sample make_template(int label, Shape shape, RngStream& rng) {
  const int h = shape.height, w = shape.width, c = shape.channels;
  const double theta = rng.uniform(0.0, 3.14159265358979323846);
  const double freq = rng.uniform(1.5, 4.5);
  const double phase = rng.uniform(0.0, 6.2831853);
  const double ci = rng.uniform(0.2, 0.8) * h;
  const double cj = rng.uniform(0.2, 0.8) * w;
  const double width = rng.uniform(0.12, 0.3) * std::max(h, w);
  const double blob_sign = rng.coin() ? 1.0 : -1.0;
  const double chan_shift = rng.uniform(0.0, 1.0);

  Sample t = Sample::constant(shape, 0.0);
  const double scale = 6.2831853 * freq / std::max(h, w);
  double sq = 0.0;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int ch = 0; ch < c; ++ch) {
        const double stripe =
            std::sin(scale * (i * std::cos(theta) + j * std::sin(theta)) + phase +
                     chan_shift * ch);
        const double di = (i - ci) / width, dj = (j - cj) / width;
        const double blob = blob_sign * 1.5 * std::exp(-0.5 * (di * di + dj * dj));
        const double v = stripe + blob;
        t.at(i, j, ch) = v;
        sq += v * v;
      }
  const double rms = std::sqrt(sq / t.dim());
  for (double& v : t.data) v = 0.5 + kTemplateAmplitude * (v / rms);
  clamp_box(t);
  (void)label;
  return t;
}

}  // namespace

SyntheticTask::SyntheticTask(Seed seed, int classes, Shape shape)
    : seed_(seed), classes_(classes), shape_(shape) {
  if (classes < 2) throw std::invalid_argument("task needs at least 2 classes");
  RngStream rng(Seed{mix_seed(seed.value, 0x7a5c0deull)});
  templates_.reserve(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) {
    RngStream trng = rng.fork(static_cast<std::uint64_t>(c));
    templates_.push_back(make_template(c, shape, trng));
  }
  // Nearest-template classifier as a two-layer MLP: hidden_c = relu(beta*(<x,t_c> - |t_c|^2/2)),
  // logits = identity(hidden). Linear in the operating region, clipped far outside it.
  const int d = shape.flat();
  DenseLayer l1;
  l1.rows = classes;
  l1.cols = d;
  l1.weights.resize(static_cast<std::size_t>(classes) * d);
  l1.bias.resize(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) {
    double sq = 0.0;
    for (int i = 0; i < d; ++i) {
      const double v = templates_[static_cast<std::size_t>(c)].data[static_cast<std::size_t>(i)];
      l1.weights[static_cast<std::size_t>(c) * d + i] = kLogitScale * v;
      sq += v * v;
    }
    l1.bias[static_cast<std::size_t>(c)] = -kLogitScale * sq / 2.0;
  }
  DenseLayer l2;
  l2.rows = classes;
  l2.cols = classes;
  l2.weights.assign(static_cast<std::size_t>(classes) * classes, 0.0);
  for (int c = 0; c < classes; ++c) l2.weights[static_cast<std::size_t>(c) * classes + c] = 1.0;
  l2.bias.assign(static_cast<std::size_t>(classes), 0.0);
  model_ = std::make_unique<MlpModel>(std::vector<DenseLayer>{std::move(l1), std::move(l2)});
}

Sample SyntheticTask::sample_of_class(int label, RngStream& rng) const {
  if (label < 0 || label >= classes_) throw std::invalid_argument("label out of range");
  const double sigma = std::exp(rng.uniform(std::log(kNoiseLo), std::log(kNoiseHi)));
  Sample x = templates_[static_cast<std::size_t>(label)];
  for (double& v : x.data) v += sigma * rng.gaussian();
  clamp_box(x);
  return x;
}

std::pair<Sample, int> SyntheticTask::draw(RngStream& rng) const {
  const int label = rng.uniform_int(0, classes_ - 1);
  return {sample_of_class(label, rng), label};
}

SyntheticTask generate_task(Seed seed, int classes, Shape shape) {
  return SyntheticTask(seed, classes, shape);
}

}  // namespace oars
