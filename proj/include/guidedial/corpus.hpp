#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace guidedial {

enum class Speaker { user, system };

std::string_view to_string(Speaker s);

/// A (keyword-type, keyword-topic) pair, stored as inventory indices.
struct IntentKeyword {
  int type_id = 0;
  int topic_id = 0;
  friend bool operator==(const IntentKeyword&, const IntentKeyword&) = default;
};

struct Turn {
  Speaker speaker = Speaker::user;
  std::string text;
  std::optional<IntentKeyword> keyword;
  friend bool operator==(const Turn&, const Turn&) = default;
};

struct KnowledgeTriple {
  std::string subject;
  std::string relation;
  std::string object;
  friend bool operator==(const KnowledgeTriple&, const KnowledgeTriple&) = default;
};

using Profile = std::vector<std::pair<std::string, std::string>>;

/// One system turn to be generated, with everything it is conditioned on.
struct DialogueSample {
  std::vector<Turn> history;
  IntentKeyword target;
  Profile profile;
  std::vector<KnowledgeTriple> knowledge;
  /// Gold keywords from the reference turn onward; bridge[0] belongs to `reference`.
  std::vector<IntentKeyword> bridge;
  std::string reference;
  friend bool operator==(const DialogueSample&, const DialogueSample&) = default;
};

/// Keyword-type and keyword-topic name tables. Position in each list is the id.
class KeywordInventory {
 public:
  KeywordInventory() = default;
  KeywordInventory(std::vector<std::string> types, std::vector<std::string> topics);

  int num_types() const { return static_cast<int>(types_.size()); }
  int num_topics() const { return static_cast<int>(topics_.size()); }
  int num_labels() const { return num_types() + num_topics(); }

  const std::vector<std::string>& types() const { return types_; }
  const std::vector<std::string>& topics() const { return topics_; }
  const std::string& type_name(int id) const { return types_.at(static_cast<size_t>(id)); }
  const std::string& topic_name(int id) const { return topics_.at(static_cast<size_t>(id)); }

  std::optional<int> find_type(std::string_view name) const;
  std::optional<int> find_topic(std::string_view name) const;
  /// Throws SchemaError naming the unknown string.
  IntentKeyword resolve(std::string_view type, std::string_view topic) const;

  nlohmann::json to_json() const;
  static KeywordInventory from_json(const nlohmann::json& j);

  friend bool operator==(const KeywordInventory& a, const KeywordInventory& b) {
    return a.types_ == b.types_ && a.topics_ == b.topics_;
  }

 private:
  std::vector<std::string> types_;
  std::vector<std::string> topics_;
  std::unordered_map<std::string, int> type_index_;
  std::unordered_map<std::string, int> topic_index_;
};

struct DatasetSplit {
  std::vector<DialogueSample> train;
  std::vector<DialogueSample> dev;
  std::vector<DialogueSample> test_id;
  std::vector<DialogueSample> test_ood;

  const std::vector<DialogueSample>& by_name(std::string_view name) const;
};

inline constexpr std::string_view kSplitNames[] = {"train", "dev", "test_id", "test_ood"};

struct LoadedDataset {
  DatasetSplit split;
  KeywordInventory inventory;
};

// ---------------------------------------------------------------------------
// Raw records: keyword strings not yet resolved against an inventory.

struct RawKeyword {
  std::string type;
  std::string topic;
};

struct RawTurn {
  Speaker speaker = Speaker::user;
  std::string text;
  std::optional<RawKeyword> keyword;
};

struct RawSample {
  std::vector<RawTurn> history;
  RawKeyword target;
  Profile profile;
  std::vector<KnowledgeTriple> knowledge;
  std::vector<RawKeyword> bridge;
  std::string reference;
};

/// Parses one JSONL record. Throws ParseError (with `line`) on schema violations.
RawSample parse_record(std::string_view line_text, long line = 0);
std::vector<RawSample> read_jsonl(const std::filesystem::path& file);
nlohmann::ordered_json to_json(const RawSample& s);

DialogueSample resolve(const RawSample& raw, const KeywordInventory& inventory);
RawSample unresolve(const DialogueSample& s, const KeywordInventory& inventory);

struct RawSplit {
  std::vector<RawSample> train;
  std::vector<RawSample> dev;
  std::vector<RawSample> test_id;
  std::vector<RawSample> test_ood;
};

/// Resolves every split; without a fixed inventory one is built from train+dev.
/// Errors are rethrown as SchemaError naming the split file and 1-based record.
LoadedDataset resolve_dataset(const RawSplit& raw, const KeywordInventory* fixed = nullptr);

/// Loads train/dev/test_id/test_ood.jsonl from `dir`. Without a fixed inventory one
/// is built from train+dev; every split is then resolved against it.
LoadedDataset load_dataset(const std::filesystem::path& dir, const KeywordInventory* fixed = nullptr);
void write_dataset(const std::filesystem::path& dir, const DatasetSplit& split, const KeywordInventory& inventory);

/// Sorted, deduplicated keyword strings from bridges and targets.
KeywordInventory build_inventory(const std::vector<RawSample>& samples);
KeywordInventory build_inventory(const std::vector<DialogueSample>& samples, const KeywordInventory& names);

/// Checks `sample` against the structural invariants; throws ValidationError.
void validate(const DialogueSample& sample, const KeywordInventory& inventory, bool training_data);

struct OodReport {
  bool disjoint = true;
  std::vector<std::string> offending_topics;
};

/// Target topics of test_ood must not appear among train targets.
OodReport verify_ood(const DatasetSplit& split, const KeywordInventory& inventory);

// ---------------------------------------------------------------------------
// Tokens and vocabulary.

/// Lowercases ASCII, splits on whitespace, and emits each ASCII punctuation
/// character as its own token. Bytes >= 0x80 are treated as word characters.
std::vector<std::string> tokenize(std::string_view text);
std::string join_tokens(const std::vector<std::string>& tokens);
/// Case-folded, whitespace-collapsed form used for target matching.
std::string normalize_text(std::string_view text);

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kSep = 4;
  static constexpr int kNumReserved = 5;

  Vocabulary();

  /// Counts tokens over `streams`; tokens seen fewer than `min_count` times are left out.
  static Vocabulary build(const std::vector<std::vector<std::string>>& streams, int min_count);
  static Vocabulary from_texts(const std::vector<std::string>& texts, int min_count);

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(std::string_view token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<size_t>(id)); }
  bool is_reserved(int id) const { return id < kNumReserved; }

  std::vector<int> to_ids(const std::vector<std::string>& tokens) const;
  /// Text tokens up to the first end marker; reserved ids are dropped.
  std::vector<std::string> to_tokens(const std::vector<int>& ids) const;
  std::string detokenize(const std::vector<int>& ids) const { return join_tokens(to_tokens(ids)); }

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

inline constexpr std::string_view kSepToken = "<sep>";

/// Token streams as the encoder sees them; "<sep>" marks segment boundaries.
std::vector<std::string> render_knowledge(const DialogueSample& s);
std::vector<std::string> render_profile(const DialogueSample& s);
std::vector<std::string> render_turn(const Turn& t);
std::vector<std::string> render_target(const DialogueSample& s, const KeywordInventory& inventory);

Vocabulary build_vocabulary(const std::vector<DialogueSample>& samples, const KeywordInventory& inventory,
                            int min_count);

struct EncodeLimits {
  int max_src_len = 256;
  int max_tgt_len = 64;
};

/// Model-ready view of a DialogueSample.
struct TrainingExample {
  std::vector<int> knowledge_ids;
  std::vector<int> profile_ids;
  std::vector<int> context_ids;
  /// Reference tokens followed by the end marker.
  std::vector<int> reference_ids;
  /// Multi-hot over [types | topics]; length num_types + num_topics.
  std::vector<float> keyword_targets;
  int num_types = 0;
  int num_topics = 0;
  int history_turns_kept = 0;

  int positives() const;
};

TrainingExample encode_sample(const DialogueSample& sample, const Vocabulary& vocab, const KeywordInventory& inventory,
                              int m, const EncodeLimits& limits = {});

}  // namespace guidedial
