#include "oars/defense.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

namespace oars {

// ---- extractors ----

static HashVal sha256_window(std::uint64_t salt, const std::uint8_t* data, std::size_t len) {
  std::array<std::uint8_t, 8> salt_bytes;
  for (int i = 0; i < 8; ++i) salt_bytes[static_cast<std::size_t>(i)] =
      static_cast<std::uint8_t>(salt >> (8 * i));
  std::vector<std::uint8_t> buf(8 + len);
  std::memcpy(buf.data(), salt_bytes.data(), 8);
  std::memcpy(buf.data() + 8, data, len);
  std::array<std::uint8_t, 32> digest{};
  unsigned int dlen = 0;
  EVP_Digest(buf.data(), buf.size(), digest.data(), &dlen, EVP_sha256(), nullptr);
  HashVal h;
  for (int wi = 0; wi < 4; ++wi) {
    std::uint64_t w = 0;
    for (int b = 0; b < 8; ++b) w = (w << 8) | digest[static_cast<std::size_t>(wi * 8 + b)];
    h.words[static_cast<std::size_t>(wi)] = w;  // big-endian: compare == numeric order
  }
  return h;
}

Fingerprint pixel_hash(const Sample& x, const PixelHashConfig& cfg) {
  if (cfg.window < 1 || cfg.quantization < 1 || cfg.stride < 1 || cfg.sketch_size < 1)
    throw std::invalid_argument("bad pixel hash config");
  const int n = x.dim();
  if (n < cfg.window) throw std::invalid_argument("sample shorter than one window");
  std::vector<std::uint8_t> q(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    q[static_cast<std::size_t>(i)] =
        static_cast<std::uint8_t>(std::floor(x.data[static_cast<std::size_t>(i)] * 255.0 /
                                             cfg.quantization));
  const int windows = (n - cfg.window) / cfg.stride + 1;
  if (windows < cfg.sketch_size)
    throw std::invalid_argument("sample too short for the sketch size");
  std::vector<HashVal> hashes;
  hashes.reserve(static_cast<std::size_t>(windows));
  for (int wstart = 0; wstart + cfg.window <= n; wstart += cfg.stride)
    hashes.push_back(sha256_window(cfg.salt, q.data() + wstart,
                                   static_cast<std::size_t>(cfg.window)));
  std::nth_element(hashes.begin(), hashes.begin() + cfg.sketch_size - 1, hashes.end());
  hashes.resize(static_cast<std::size_t>(cfg.sketch_size));
  std::sort(hashes.begin(), hashes.end());
  Fingerprint fp;
  fp.hashes = std::move(hashes);
  return fp;
}

double fingerprint_distance(const Fingerprint& a, const Fingerprint& b) {
  if (a.hashes.size() != b.hashes.size())
    throw std::invalid_argument("fingerprint sketch sizes differ");
  std::size_t matches = 0, i = 0, j = 0;
  while (i < a.hashes.size() && j < b.hashes.size()) {
    if (a.hashes[i] < b.hashes[j]) ++i;
    else if (b.hashes[j] < a.hashes[i]) ++j;
    else { ++matches; ++i; ++j; }
  }
  return 1.0 - static_cast<double>(matches) / static_cast<double>(a.hashes.size());
}

namespace {

std::vector<double> to_luminance(const Sample& x) {
  const int h = x.shape.height, w = x.shape.width, c = x.shape.channels;
  std::vector<double> lum(static_cast<std::size_t>(h) * w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double v;
      if (c == 3)
        v = 0.299 * x.at(i, j, 0) + 0.587 * x.at(i, j, 1) + 0.114 * x.at(i, j, 2);
      else if (c == 1)
        v = x.at(i, j, 0);
      else {
        v = 0.0;
        for (int ch = 0; ch < c; ++ch) v += x.at(i, j, ch);
        v /= c;
      }
      lum[static_cast<std::size_t>(i) * w + j] = v;
    }
  return lum;
}

std::vector<double> mean_filter3(const std::vector<double>& img, int h, int w) {
  std::vector<double> out(img.size());
  auto px = [&](int i, int j) {
    i = std::clamp(i, 0, h - 1);
    j = std::clamp(j, 0, w - 1);
    return img[static_cast<std::size_t>(i) * w + j];
  };
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double s = 0.0;
      for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj) s += px(i + di, j + dj);
      out[static_cast<std::size_t>(i) * w + j] = s / 9.0;
    }
  return out;
}

}  // namespace

BitSignature piha_hash(const Sample& x, const PihaConfig& cfg) {
  const int h = x.shape.height, w = x.shape.width;
  if (!x.shape.is_image()) throw std::invalid_argument("piha hash needs an image-shaped sample");
  if (h < cfg.block || w < cfg.block)
    throw std::invalid_argument("image smaller than one block");
  std::vector<double> img = to_luminance(x);
  if (cfg.low_pass) img = mean_filter3(img, h, w);

  // 8-neighbor local binary pattern, replicate border.
  static constexpr int kOff[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, 1},
                                     {1, 1},   {1, 0},  {1, -1}, {0, -1}};
  auto px = [&](int i, int j) {
    i = std::clamp(i, 0, h - 1);
    j = std::clamp(j, 0, w - 1);
    return img[static_cast<std::size_t>(i) * w + j];
  };
  std::vector<std::uint8_t> codes(static_cast<std::size_t>(h) * w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const double c = px(i, j);
      unsigned code = 0;
      for (int k = 0; k < 8; ++k)
        if (px(i + kOff[k][0], j + kOff[k][1]) > c) code |= 1u << k;
      codes[static_cast<std::size_t>(i) * w + j] = static_cast<std::uint8_t>(code);
    }

  const int bh = h / cfg.block, bw = w / cfg.block;
  const std::size_t nbits = static_cast<std::size_t>(bh) * bw * 256;
  BitSignature sig;
  sig.nbits = nbits;
  sig.words.assign((nbits + 63) / 64, 0);
  std::size_t bit = 0;
  for (int bi = 0; bi < bh; ++bi)
    for (int bj = 0; bj < bw; ++bj) {
      std::array<std::uint32_t, 256> hist{};
      for (int i = bi * cfg.block; i < (bi + 1) * cfg.block; ++i)
        for (int j = bj * cfg.block; j < (bj + 1) * cfg.block; ++j)
          hist[codes[static_cast<std::size_t>(i) * w + j]]++;
      std::array<std::uint32_t, 256> sorted = hist;
      std::nth_element(sorted.begin(), sorted.begin() + 128, sorted.end());
      const std::uint32_t median = sorted[128];
      for (int bin = 0; bin < 256; ++bin, ++bit)
        if (hist[static_cast<std::size_t>(bin)] > median)
          sig.words[bit / 64] |= 1ull << (bit % 64);
    }
  return sig;
}

double bit_distance(const BitSignature& a, const BitSignature& b) {
  if (a.nbits != b.nbits) throw std::invalid_argument("bit signature lengths differ");
  std::uint64_t diff = 0;
  for (std::size_t i = 0; i < a.words.size(); ++i)
    diff += static_cast<std::uint64_t>(std::popcount(a.words[i] ^ b.words[i]));
  return static_cast<double>(diff) / static_cast<double>(a.nbits);
}

double embedding_distance(const Embedding& a, const Embedding& b) {
  if (a.values.size() != b.values.size())
    throw std::invalid_argument("embedding dims differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    s += d * d;
  }
  return std::sqrt(s);
}

FeatureEncoder::FeatureEncoder(const EncoderConfig& cfg, int input_dim)
    : input_dim_(input_dim), out_dim_(cfg.out_dim) {
  if (!cfg.weights_path.empty()) {
    network_ = std::make_unique<MlpModel>(load_layers(cfg.weights_path));
    if (network_->input_dim() != input_dim)
      throw std::invalid_argument("encoder weights do not match input dim");
    out_dim_ = network_->num_classes();
    return;
  }
  RngStream rng(Seed{cfg.seed});
  projection_.resize(static_cast<std::size_t>(out_dim_) * input_dim_);
  for (double& v : projection_) v = rng.gaussian();
}

Embedding FeatureEncoder::encode(const Sample& x) const {
  if (x.dim() != input_dim_) throw std::invalid_argument("encoder input dim mismatch");
  std::vector<double> v;
  if (network_) {
    v = network_->logits(x);
  } else {
    v.assign(static_cast<std::size_t>(out_dim_), 0.0);
    for (int r = 0; r < out_dim_; ++r) {
      const double* row = projection_.data() + static_cast<std::size_t>(r) * input_dim_;
      double acc = 0.0;
      for (int c = 0; c < input_dim_; ++c) acc += row[c] * x.data[static_cast<std::size_t>(c)];
      v[static_cast<std::size_t>(r)] = acc;
    }
  }
  double norm = 0.0;
  for (double e : v) norm += e * e;
  norm = std::sqrt(norm);
  if (norm < 1e-12) {
    v.assign(v.size(), 0.0);
    v[0] = 1.0;
  } else {
    for (double& e : v) e /= norm;
  }
  return Embedding{std::move(v)};
}

// ---- query store ----

QueryStore::QueryStore(StoreScope scope, std::size_t capacity)
    : scope_(scope), capacity_(capacity) {
  if (capacity_ == 0) throw std::invalid_argument("store capacity must be positive");
}

std::size_t QueryStore::Slot::size() const {
  return fingerprints.size() + signatures.size() + embeddings.size();
}

const QueryStore::Slot* QueryStore::find_slot(AccountId account) const {
  auto it = slots_.find(scope_ == StoreScope::Global ? AccountId{0} : account);
  return it == slots_.end() ? nullptr : &it->second;
}

QueryStore::Slot& QueryStore::slot_for(AccountId account) {
  return slots_[scope_ == StoreScope::Global ? AccountId{0} : account];
}

void QueryStore::evict_if_full(Slot& s) {
  while (s.size() >= capacity_) {
    if (!s.fingerprints.empty()) {
      auto [id, fp] = std::move(s.fingerprints.front());
      s.fingerprints.pop_front();
      for (std::size_t i = 0; i < fp.hashes.size();) {
        std::size_t j = i;
        while (j < fp.hashes.size() && fp.hashes[j] == fp.hashes[i]) ++j;
        auto it = s.postings.find(fp.hashes[i]);
        if (it != s.postings.end()) {
          auto& vec = it->second;
          std::erase_if(vec, [id](const auto& p) { return p.first == id; });
          if (vec.empty()) s.postings.erase(it);
        }
        i = j;
      }
    } else if (!s.signatures.empty()) {
      s.signatures.pop_front();
    } else {
      s.embeddings.pop_front();
    }
  }
}

void QueryStore::insert(AccountId account, const Feature& f) {
  Slot& s = slot_for(account);
  evict_if_full(s);
  if (const auto* fp = std::get_if<Fingerprint>(&f)) {
    const std::uint64_t id = s.next_id++;
    for (std::size_t i = 0; i < fp->hashes.size();) {
      std::size_t j = i;
      while (j < fp->hashes.size() && fp->hashes[j] == fp->hashes[i]) ++j;
      s.postings[fp->hashes[i]].emplace_back(id, static_cast<std::uint32_t>(j - i));
      i = j;
    }
    s.fingerprints.emplace_back(id, *fp);
  } else if (const auto* sig = std::get_if<BitSignature>(&f)) {
    s.signatures.push_back(*sig);
  } else {
    s.embeddings.push_back(std::get<Embedding>(f));
  }
}

std::optional<double> QueryStore::score(AccountId account, const Feature& f,
                                        const SimilarityProcedure& proc) const {
  const Slot* s = find_slot(account);
  if (s == nullptr || s->size() == 0) return std::nullopt;

  std::vector<double> dists;
  if (const auto* fp = std::get_if<Fingerprint>(&f)) {
    if (proc.metric != SimilarityProcedure::Metric::KnnHamming)
      throw std::invalid_argument("fingerprints need a Hamming procedure");
    std::unordered_map<std::uint64_t, std::uint32_t> matches;
    for (std::size_t i = 0; i < fp->hashes.size();) {
      std::size_t j = i;
      while (j < fp->hashes.size() && fp->hashes[j] == fp->hashes[i]) ++j;
      const auto mq = static_cast<std::uint32_t>(j - i);
      auto it = s->postings.find(fp->hashes[i]);
      if (it != s->postings.end())
        for (const auto& [id, ms] : it->second) matches[id] += std::min(mq, ms);
      i = j;
    }
    const double sketch = static_cast<double>(fp->hashes.size());
    dists.reserve(matches.size());
    for (const auto& [id, m] : matches) dists.push_back(1.0 - m / sketch);
    // entries sharing no hash sit at distance 1
    const std::size_t unmatched = s->fingerprints.size() - matches.size();
    const int k = std::min<std::size_t>(proc.k, s->fingerprints.size());
    std::sort(dists.begin(), dists.end());
    while (dists.size() < static_cast<std::size_t>(k)) dists.push_back(1.0);
    (void)unmatched;
    dists.resize(static_cast<std::size_t>(k));
  } else if (const auto* sig = std::get_if<BitSignature>(&f)) {
    if (proc.metric != SimilarityProcedure::Metric::KnnHamming)
      throw std::invalid_argument("bit signatures need a Hamming procedure");
    dists.reserve(s->signatures.size());
    for (const auto& other : s->signatures) dists.push_back(bit_distance(*sig, other));
    const int k = std::min<std::size_t>(proc.k, dists.size());
    std::partial_sort(dists.begin(), dists.begin() + k, dists.end());
    dists.resize(static_cast<std::size_t>(k));
  } else {
    const auto& emb = std::get<Embedding>(f);
    if (proc.metric != SimilarityProcedure::Metric::KnnL2)
      throw std::invalid_argument("embeddings need an L2 procedure");
    dists.reserve(s->embeddings.size());
    for (const auto& other : s->embeddings) dists.push_back(embedding_distance(emb, other));
    const int k = std::min<std::size_t>(proc.k, dists.size());
    std::partial_sort(dists.begin(), dists.begin() + k, dists.end());
    dists.resize(static_cast<std::size_t>(k));
  }
  double sum = 0.0;
  for (double d : dists) sum += d;
  return sum / static_cast<double>(dists.size());
}

std::size_t QueryStore::size(AccountId account) const {
  const Slot* s = find_slot(account);
  return s == nullptr ? 0 : s->size();
}

std::size_t QueryStore::total_entries() const {
  std::size_t n = 0;
  for (const auto& [k, s] : slots_) n += s.size();
  return n;
}

void QueryStore::reset() { slots_.clear(); }

// ---- configs ----

SdmConfig SdmConfig::blacklight(int window, int quantization, double threshold) {
  SdmConfig c;
  c.name = "blacklight";
  c.extractor.kind = ExtractorConfig::Kind::PixelHash;
  c.extractor.pixel.window = window;
  c.extractor.pixel.quantization = quantization;
  c.similarity = {SimilarityProcedure::Metric::KnnHamming, 1, threshold};
  c.action = ActionKind::RejectQuery;
  c.scope = StoreScope::Global;
  return c;
}

SdmConfig SdmConfig::piha(int block, double threshold) {
  SdmConfig c;
  c.name = "piha";
  c.extractor.kind = ExtractorConfig::Kind::Piha;
  c.extractor.piha.block = block;
  c.similarity = {SimilarityProcedure::Metric::KnnHamming, 1, threshold};
  c.action = ActionKind::RejectQuery;
  c.scope = StoreScope::Global;
  return c;
}

SdmConfig SdmConfig::osd(int k, double threshold) {
  SdmConfig c;
  c.name = "osd";
  c.extractor.kind = ExtractorConfig::Kind::Encoder;
  c.similarity = {SimilarityProcedure::Metric::KnnL2, k, threshold};
  c.action = ActionKind::BanAccount;
  c.scope = StoreScope::PerAccount;
  return c;
}

SdmConfig SdmConfig::iiot(int k, double threshold) {
  SdmConfig c = osd(k, threshold);
  c.name = "iiot";
  c.action = ActionKind::RejectQuery;
  return c;
}

SdmConfig SdmConfig::from_json(const nlohmann::json& j) {
  const std::string type = j.value("type", "custom");
  SdmConfig c;
  if (type == "blacklight") c = blacklight();
  else if (type == "piha") c = piha();
  else if (type == "osd") c = osd();
  else if (type == "iiot") c = iiot();
  else if (type == "ensemble") {
    c.name = "ensemble";
    if (!j.contains("members") || !j["members"].is_array() || j["members"].empty())
      throw std::runtime_error("ensemble defense needs a non-empty members array");
    for (const auto& jm : j["members"]) c.members.push_back(from_json(jm));
    return c;
  } else if (type == "custom") {
    c.name = "custom";
  } else {
    throw std::runtime_error("unknown defense type: " + type);
  }
  if (j.contains("window")) c.extractor.pixel.window = j["window"].get<int>();
  if (j.contains("quantization")) c.extractor.pixel.quantization = j["quantization"].get<int>();
  if (j.contains("stride")) c.extractor.pixel.stride = j["stride"].get<int>();
  if (j.contains("salt")) c.extractor.pixel.salt = j["salt"].get<std::uint64_t>();
  if (j.contains("block")) c.extractor.piha.block = j["block"].get<int>();
  if (j.contains("encoder_dim")) c.extractor.encoder.out_dim = j["encoder_dim"].get<int>();
  if (j.contains("encoder_seed")) c.extractor.encoder.seed = j["encoder_seed"].get<std::uint64_t>();
  if (j.contains("encoder_weights")) c.extractor.encoder.weights_path = j["encoder_weights"];
  if (j.contains("extractor")) {
    const std::string e = j["extractor"];
    if (e == "pixel_hash") c.extractor.kind = ExtractorConfig::Kind::PixelHash;
    else if (e == "piha") c.extractor.kind = ExtractorConfig::Kind::Piha;
    else if (e == "encoder") c.extractor.kind = ExtractorConfig::Kind::Encoder;
    else throw std::runtime_error("unknown extractor: " + e);
  }
  if (j.contains("k")) c.similarity.k = j["k"].get<int>();
  if (j.contains("threshold")) c.similarity.threshold = j["threshold"].get<double>();
  if (j.contains("metric"))
    c.similarity.metric = j["metric"] == "l2" ? SimilarityProcedure::Metric::KnnL2
                                              : SimilarityProcedure::Metric::KnnHamming;
  if (j.contains("action")) {
    const std::string a = j["action"];
    if (a == "reject") c.action = ActionKind::RejectQuery;
    else if (a == "ban") c.action = ActionKind::BanAccount;
    else throw std::runtime_error("unknown action: " + a);
  }
  if (j.contains("scope")) {
    const std::string s = j["scope"];
    if (s == "global") c.scope = StoreScope::Global;
    else if (s == "per_account") c.scope = StoreScope::PerAccount;
    else throw std::runtime_error("unknown scope: " + s);
  }
  if (j.contains("capacity")) c.capacity = j["capacity"].get<std::size_t>();
  if (c.similarity.k < 1) throw std::runtime_error("similarity k must be >= 1");
  return c;
}

nlohmann::json SdmConfig::to_json() const {
  nlohmann::json j;
  j["type"] = name;
  if (is_ensemble()) {
    j["members"] = nlohmann::json::array();
    for (const auto& m : members) j["members"].push_back(m.to_json());
    return j;
  }
  switch (extractor.kind) {
    case ExtractorConfig::Kind::PixelHash:
      j["extractor"] = "pixel_hash";
      j["window"] = extractor.pixel.window;
      j["quantization"] = extractor.pixel.quantization;
      j["stride"] = extractor.pixel.stride;
      j["salt"] = extractor.pixel.salt;
      break;
    case ExtractorConfig::Kind::Piha:
      j["extractor"] = "piha";
      j["block"] = extractor.piha.block;
      break;
    case ExtractorConfig::Kind::Encoder:
      j["extractor"] = "encoder";
      j["encoder_dim"] = extractor.encoder.out_dim;
      j["encoder_seed"] = extractor.encoder.seed;
      if (!extractor.encoder.weights_path.empty())
        j["encoder_weights"] = extractor.encoder.weights_path;
      break;
  }
  j["metric"] = similarity.metric == SimilarityProcedure::Metric::KnnL2 ? "l2" : "hamming";
  j["k"] = similarity.k;
  j["threshold"] = similarity.threshold;
  j["action"] = action == ActionKind::BanAccount ? "ban" : "reject";
  j["scope"] = scope == StoreScope::Global ? "global" : "per_account";
  j["capacity"] = capacity;
  return j;
}

// ---- composed defense ----

SdmInstance::SdmInstance(SdmConfig cfg, int input_dim)
    : cfg_(std::move(cfg)), store_(cfg_.scope, cfg_.capacity) {
  if (cfg_.is_ensemble())
    throw std::invalid_argument("SdmInstance cannot hold an ensemble config");
  if (cfg_.extractor.kind == ExtractorConfig::Kind::Encoder)
    encoder_ = std::make_unique<FeatureEncoder>(cfg_.extractor.encoder, input_dim);
  const bool hash_family = cfg_.extractor.kind != ExtractorConfig::Kind::Encoder;
  const bool hamming = cfg_.similarity.metric == SimilarityProcedure::Metric::KnnHamming;
  if (hash_family != hamming)
    throw std::invalid_argument("extractor family does not match similarity metric");
}

Feature SdmInstance::extract(const Sample& x) const {
  switch (cfg_.extractor.kind) {
    case ExtractorConfig::Kind::PixelHash: return pixel_hash(x, cfg_.extractor.pixel);
    case ExtractorConfig::Kind::Piha: return piha_hash(x, cfg_.extractor.piha);
    case ExtractorConfig::Kind::Encoder: return encoder_->encode(x);
  }
  throw std::logic_error("unreachable");
}

SdmInstance::Verdict SdmInstance::observe(AccountId account, const Sample& x) {
  // Extraction is pure; do it outside the lock. Check-then-insert stays atomic.
  Feature f = extract(x);
  std::lock_guard<std::mutex> lock(mu_);
  ++queries_;
  if (banned_.count(account) != 0) return Verdict::AlreadyBanned;
  const auto score = store_.score(account, f, cfg_.similarity);
  store_.insert(account, f);
  const bool collided = score.has_value() && *score <= cfg_.similarity.threshold;
  if (!collided) return Verdict::Answer;
  ++collisions_;
  if (cfg_.action == ActionKind::BanAccount) {
    banned_.insert(account);
    return Verdict::Ban;
  }
  return Verdict::Reject;
}

static QueryOutcome model_answer(const Sample& x, const BlackBoxModel& model, LabelMode mode) {
  if (mode == LabelMode::Soft) return QueryOutcome::soft(model.soft_predict(x));
  return QueryOutcome::hard(model.hard_predict(x));
}

QueryOutcome SdmInstance::query(AccountId account, const Sample& x, const BlackBoxModel& model,
                                LabelMode mode) {
  switch (observe(account, x)) {
    case Verdict::AlreadyBanned:
    case Verdict::Ban: return QueryOutcome::banned();
    case Verdict::Reject: return QueryOutcome::rejected();
    case Verdict::Answer: return model_answer(x, model, mode);
  }
  throw std::logic_error("unreachable");
}

void SdmInstance::reset_store() {
  std::lock_guard<std::mutex> lock(mu_);
  store_.reset();
}

bool SdmInstance::is_banned(AccountId account) const {
  std::lock_guard<std::mutex> lock(mu_);
  return banned_.count(account) != 0;
}

std::size_t SdmInstance::store_size(AccountId account) const {
  std::lock_guard<std::mutex> lock(mu_);
  return store_.size(account);
}

EnsembleDefense::EnsembleDefense(const SdmConfig& cfg, int input_dim) {
  if (!cfg.is_ensemble()) throw std::invalid_argument("config is not an ensemble");
  for (const auto& m : cfg.members)
    members_.push_back(std::make_unique<SdmInstance>(m, input_dim));
}

QueryOutcome EnsembleDefense::query(AccountId account, const Sample& x,
                                    const BlackBoxModel& model, LabelMode mode) {
  std::lock_guard<std::mutex> lock(mu_);
  ++queries_;
  bool banned = false, rejected = false, was_banned = false;
  for (auto& m : members_) {
    switch (m->observe(account, x)) {
      case SdmInstance::Verdict::AlreadyBanned: was_banned = true; break;
      case SdmInstance::Verdict::Ban: banned = true; break;
      case SdmInstance::Verdict::Reject: rejected = true; break;
      case SdmInstance::Verdict::Answer: break;
    }
  }
  if (banned || rejected) ++collisions_;
  if (banned || was_banned) return QueryOutcome::banned();
  if (rejected) return QueryOutcome::rejected();
  return model_answer(x, model, mode);
}

void EnsembleDefense::reset_store() {
  std::lock_guard<std::mutex> lock(mu_);
  for (auto& m : members_) m->reset_store();
}

bool EnsembleDefense::is_banned(AccountId account) const {
  for (const auto& m : members_)
    if (m->is_banned(account)) return true;
  return false;
}

std::unique_ptr<Defense> make_defense(const SdmConfig& cfg, int input_dim) {
  if (cfg.is_ensemble()) return std::make_unique<EnsembleDefense>(cfg, input_dim);
  return std::make_unique<SdmInstance>(cfg, input_dim);
}

}  // namespace oars
