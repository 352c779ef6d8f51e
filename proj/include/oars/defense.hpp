// Stateful defense pipeline: feature extractors, query store, similarity
// procedures, action functions, and the composed defended endpoint.
#pragma once

#include <array>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <unordered_map>
#include <variant>
#include <vector>

#include "json.hpp"
#include "oars/core.hpp"
#include "oars/models.hpp"

namespace oars {

// 256-bit hash value; word 0 is most significant so lexicographic compare is numeric.
struct HashVal {
  std::array<std::uint64_t, 4> words{};
  auto operator<=>(const HashVal&) const = default;
};

struct HashValHasher {
  std::size_t operator()(const HashVal& h) const {
    std::uint64_t acc = 0xcbf29ce484222325ull;
    for (std::uint64_t w : h.words) acc = (acc ^ w) * 0x100000001b3ull;
    return static_cast<std::size_t>(acc);
  }
};

// Sliding-window sketch: the numerically smallest hashes of salted quantized windows.
struct Fingerprint {
  std::vector<HashVal> hashes;  // sorted ascending, sketch_size entries
};

// Packed bit string; length fixed by image shape and block config.
struct BitSignature {
  std::vector<std::uint64_t> words;
  std::size_t nbits = 0;
};

struct Embedding {
  std::vector<double> values;  // unit L2 norm
};

using Feature = std::variant<Fingerprint, BitSignature, Embedding>;

struct PixelHashConfig {
  int window = 20;
  int quantization = 50;
  int stride = 1;
  std::uint64_t salt = 0;
  int sketch_size = 50;
};

struct PihaConfig {
  int block = 7;
  bool low_pass = true;
};

struct EncoderConfig {
  int out_dim = 32;
  std::uint64_t seed = 9001;
  std::string weights_path;  // empty: seeded random projection
};

Fingerprint pixel_hash(const Sample& x, const PixelHashConfig& cfg);
BitSignature piha_hash(const Sample& x, const PihaConfig& cfg);

double fingerprint_distance(const Fingerprint& a, const Fingerprint& b);  // 1 - |match|/sketch
double bit_distance(const BitSignature& a, const BitSignature& b);        // mismatch fraction
double embedding_distance(const Embedding& a, const Embedding& b);

class FeatureEncoder {
 public:
  explicit FeatureEncoder(const EncoderConfig& cfg, int input_dim);
  Embedding encode(const Sample& x) const;
  int input_dim() const { return input_dim_; }

 private:
  int input_dim_;
  int out_dim_;
  std::vector<double> projection_;      // out_dim x input_dim, empty when MLP-backed
  std::unique_ptr<MlpModel> network_;
};

enum class StoreScope { Global, PerAccount };
enum class ActionKind { RejectQuery, BanAccount };
enum class LabelMode { Soft, Hard };

using AccountId = std::uint64_t;

struct SimilarityProcedure {
  enum class Metric { KnnHamming, KnnL2 };
  Metric metric = Metric::KnnHamming;
  int k = 1;
  double threshold = 0.5;  // collision iff score <= threshold
};

// Bounded FIFO collection of extracted features, global or per account.
class QueryStore {
 public:
  QueryStore(StoreScope scope, std::size_t capacity);

  void insert(AccountId account, const Feature& f);
  // Distance to the stored neighborhood per the procedure; nullopt on an empty slot.
  std::optional<double> score(AccountId account, const Feature& f,
                              const SimilarityProcedure& proc) const;
  std::size_t size(AccountId account) const;
  std::size_t total_entries() const;
  void reset();
  StoreScope scope() const { return scope_; }

 private:
  struct Slot {
    std::deque<std::pair<std::uint64_t, Fingerprint>> fingerprints;
    std::unordered_map<HashVal, std::vector<std::pair<std::uint64_t, std::uint32_t>>,
                       HashValHasher>
        postings;  // hash -> (entry id, multiplicity)
    std::deque<BitSignature> signatures;
    std::deque<Embedding> embeddings;
    std::uint64_t next_id = 0;

    std::size_t size() const;
  };

  const Slot* find_slot(AccountId account) const;
  Slot& slot_for(AccountId account);
  void evict_if_full(Slot& s);

  StoreScope scope_;
  std::size_t capacity_;
  std::map<AccountId, Slot> slots_;  // Global scope uses a single slot keyed 0
};

struct ExtractorConfig {
  enum class Kind { PixelHash, Piha, Encoder };
  Kind kind = Kind::PixelHash;
  PixelHashConfig pixel;
  PihaConfig piha;
  EncoderConfig encoder;
};

struct SdmConfig {
  std::string name = "custom";
  ExtractorConfig extractor;
  SimilarityProcedure similarity;
  ActionKind action = ActionKind::RejectQuery;
  StoreScope scope = StoreScope::Global;
  std::size_t capacity = 1000000;
  std::vector<SdmConfig> members;  // non-empty: ensemble of these configs

  bool is_ensemble() const { return !members.empty(); }

  static SdmConfig blacklight(int window = 20, int quantization = 50, double threshold = 0.5);
  static SdmConfig piha(int block = 7, double threshold = 0.05);
  static SdmConfig osd(int k = 50, double threshold = 1.44);
  static SdmConfig iiot(int k = 11, double threshold = 0.21);

  static SdmConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// Common interface for a single SDM and for an ensemble treated as one endpoint.
class Defense {
 public:
  virtual ~Defense() = default;
  virtual QueryOutcome query(AccountId account, const Sample& x, const BlackBoxModel& model,
                             LabelMode mode) = 0;
  virtual void reset_store() = 0;
  virtual std::uint64_t queries_observed() const = 0;
  virtual std::uint64_t collisions_observed() const = 0;
  virtual bool is_banned(AccountId account) const = 0;
};

class SdmInstance : public Defense {
 public:
  // Outcome of the atomic check-then-insert step, before any model evaluation.
  enum class Verdict { Answer, Reject, Ban, AlreadyBanned };

  explicit SdmInstance(SdmConfig cfg, int input_dim);

  // Runs extraction, similarity check and insertion; linearizable.
  Verdict observe(AccountId account, const Sample& x);
  QueryOutcome query(AccountId account, const Sample& x, const BlackBoxModel& model,
                     LabelMode mode) override;
  void reset_store() override;
  std::uint64_t queries_observed() const override { return queries_; }
  std::uint64_t collisions_observed() const override { return collisions_; }
  bool is_banned(AccountId account) const override;

  const SdmConfig& config() const { return cfg_; }
  Feature extract(const Sample& x) const;
  std::size_t store_size(AccountId account) const;

 private:
  SdmConfig cfg_;
  std::unique_ptr<FeatureEncoder> encoder_;
  QueryStore store_;
  std::set<AccountId> banned_;
  std::uint64_t queries_ = 0;
  std::uint64_t collisions_ = 0;
  mutable std::mutex mu_;
};

// Collision if any member collides; every member store sees every query.
class EnsembleDefense : public Defense {
 public:
  EnsembleDefense(const SdmConfig& cfg, int input_dim);

  QueryOutcome query(AccountId account, const Sample& x, const BlackBoxModel& model,
                     LabelMode mode) override;
  void reset_store() override;
  std::uint64_t queries_observed() const override { return queries_; }
  std::uint64_t collisions_observed() const override { return collisions_; }
  bool is_banned(AccountId account) const override;
  std::size_t member_count() const { return members_.size(); }

 private:
  std::vector<std::unique_ptr<SdmInstance>> members_;
  std::uint64_t queries_ = 0;
  std::uint64_t collisions_ = 0;
  mutable std::mutex mu_;
};

std::unique_ptr<Defense> make_defense(const SdmConfig& cfg, int input_dim);

}  // namespace oars
