#include "guidedial/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "guidedial/errors.hpp"

namespace guidedial {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::string_view to_string(Speaker s) { return s == Speaker::user ? "user" : "system"; }

// ---------------------------------------------------------------------------
// KeywordInventory

KeywordInventory::KeywordInventory(std::vector<std::string> types, std::vector<std::string> topics)
    : types_(std::move(types)), topics_(std::move(topics)) {
  for (size_t i = 0; i < types_.size(); ++i) {
    if (!type_index_.emplace(types_[i], static_cast<int>(i)).second) {
      throw ValidationError("duplicate keyword-type '" + types_[i] + "'");
    }
  }
  for (size_t i = 0; i < topics_.size(); ++i) {
    if (!topic_index_.emplace(topics_[i], static_cast<int>(i)).second) {
      throw ValidationError("duplicate keyword-topic '" + topics_[i] + "'");
    }
  }
}

std::optional<int> KeywordInventory::find_type(std::string_view name) const {
  auto it = type_index_.find(std::string(name));
  if (it == type_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<int> KeywordInventory::find_topic(std::string_view name) const {
  auto it = topic_index_.find(std::string(name));
  if (it == topic_index_.end()) return std::nullopt;
  return it->second;
}

IntentKeyword KeywordInventory::resolve(std::string_view type, std::string_view topic) const {
  auto t = find_type(type);
  if (!t) throw SchemaError("unknown keyword-type '" + std::string(type) + "'");
  auto k = find_topic(topic);
  if (!k) throw SchemaError("unknown keyword-topic '" + std::string(topic) + "'");
  return IntentKeyword{*t, *k};
}

nlohmann::json KeywordInventory::to_json() const { return {{"types", types_}, {"topics", topics_}}; }

KeywordInventory KeywordInventory::from_json(const nlohmann::json& j) {
  return KeywordInventory(j.at("types").get<std::vector<std::string>>(),
                          j.at("topics").get<std::vector<std::string>>());
}

const std::vector<DialogueSample>& DatasetSplit::by_name(std::string_view name) const {
  if (name == "train") return train;
  if (name == "dev") return dev;
  if (name == "test_id") return test_id;
  if (name == "test_ood") return test_ood;
  throw std::invalid_argument("unknown split '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// JSONL

namespace {

std::string require_string(const ojson& j, const char* key, long line) {
  if (!j.is_object() || !j.contains(key)) throw ParseError(std::string("missing field '") + key + "'", line);
  const auto& v = j.at(key);
  if (!v.is_string()) throw ParseError(std::string("field '") + key + "' must be a string", line);
  return v.get<std::string>();
}

RawKeyword parse_keyword(const ojson& j, long line) {
  if (!j.is_object()) throw ParseError("keyword must be an object", line);
  return RawKeyword{require_string(j, "type", line), require_string(j, "topic", line)};
}

ojson keyword_json(const RawKeyword& k) { return ojson{{"type", k.type}, {"topic", k.topic}}; }

}  // namespace

RawSample parse_record(std::string_view line_text, long line) {
  ojson j;
  try {
    j = ojson::parse(line_text);
  } catch (const ojson::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what(), line);
  }
  if (!j.is_object()) throw ParseError("record must be a JSON object", line);

  RawSample s;
  if (!j.contains("history") || !j["history"].is_array()) throw ParseError("missing array 'history'", line);
  for (const auto& t : j["history"]) {
    RawTurn turn;
    std::string speaker = require_string(t, "speaker", line);
    if (speaker == "user") {
      turn.speaker = Speaker::user;
    } else if (speaker == "system") {
      turn.speaker = Speaker::system;
    } else {
      throw ParseError("speaker must be 'user' or 'system', got '" + speaker + "'", line);
    }
    turn.text = require_string(t, "text", line);
    if (t.contains("keyword") && !t["keyword"].is_null()) turn.keyword = parse_keyword(t["keyword"], line);
    s.history.push_back(std::move(turn));
  }

  if (!j.contains("target")) throw ParseError("missing field 'target'", line);
  s.target = parse_keyword(j["target"], line);

  if (!j.contains("profile") || !j["profile"].is_object()) throw ParseError("missing object 'profile'", line);
  for (const auto& [key, value] : j["profile"].items()) {
    if (!value.is_string()) throw ParseError("profile value for '" + key + "' must be a string", line);
    s.profile.emplace_back(key, value.get<std::string>());
  }

  if (!j.contains("knowledge") || !j["knowledge"].is_array()) throw ParseError("missing array 'knowledge'", line);
  for (const auto& k : j["knowledge"]) {
    if (!k.is_array() || k.size() != 3 || !k[0].is_string() || !k[1].is_string() || !k[2].is_string()) {
      throw ParseError("knowledge entries must be [subject, relation, object] string triples", line);
    }
    s.knowledge.push_back({k[0].get<std::string>(), k[1].get<std::string>(), k[2].get<std::string>()});
  }

  if (!j.contains("bridge") || !j["bridge"].is_array()) throw ParseError("missing array 'bridge'", line);
  for (const auto& b : j["bridge"]) s.bridge.push_back(parse_keyword(b, line));

  s.reference = require_string(j, "reference", line);
  return s;
}

ojson to_json(const RawSample& s) {
  ojson j;
  ojson history = ojson::array();
  for (const auto& t : s.history) {
    ojson turn{{"speaker", std::string(to_string(t.speaker))}, {"text", t.text}};
    if (t.keyword) turn["keyword"] = keyword_json(*t.keyword);
    history.push_back(std::move(turn));
  }
  j["history"] = std::move(history);
  j["target"] = keyword_json(s.target);
  ojson profile = ojson::object();
  for (const auto& [k, v] : s.profile) profile[k] = v;
  j["profile"] = std::move(profile);
  ojson knowledge = ojson::array();
  for (const auto& k : s.knowledge) knowledge.push_back(ojson::array({k.subject, k.relation, k.object}));
  j["knowledge"] = std::move(knowledge);
  ojson bridge = ojson::array();
  for (const auto& b : s.bridge) bridge.push_back(keyword_json(b));
  j["bridge"] = std::move(bridge);
  j["reference"] = s.reference;
  return j;
}

std::vector<RawSample> read_jsonl(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open " + file.string());
  std::vector<RawSample> out;
  std::string line;
  long n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    try {
      out.push_back(parse_record(line, n));
    } catch (const ParseError& e) {
      throw ParseError(file.filename().string() + ": " + e.what(), e.line());
    }
  }
  return out;
}

DialogueSample resolve(const RawSample& raw, const KeywordInventory& inventory) {
  DialogueSample s;
  for (const auto& t : raw.history) {
    Turn turn{t.speaker, t.text, std::nullopt};
    if (t.keyword) turn.keyword = inventory.resolve(t.keyword->type, t.keyword->topic);
    s.history.push_back(std::move(turn));
  }
  s.target = inventory.resolve(raw.target.type, raw.target.topic);
  s.profile = raw.profile;
  s.knowledge = raw.knowledge;
  for (const auto& b : raw.bridge) s.bridge.push_back(inventory.resolve(b.type, b.topic));
  s.reference = raw.reference;
  return s;
}

RawSample unresolve(const DialogueSample& s, const KeywordInventory& inventory) {
  auto name = [&](const IntentKeyword& k) {
    return RawKeyword{inventory.type_name(k.type_id), inventory.topic_name(k.topic_id)};
  };
  RawSample raw;
  for (const auto& t : s.history) {
    RawTurn turn{t.speaker, t.text, std::nullopt};
    if (t.keyword) turn.keyword = name(*t.keyword);
    raw.history.push_back(std::move(turn));
  }
  raw.target = name(s.target);
  raw.profile = s.profile;
  raw.knowledge = s.knowledge;
  for (const auto& b : s.bridge) raw.bridge.push_back(name(b));
  raw.reference = s.reference;
  return raw;
}

KeywordInventory build_inventory(const std::vector<RawSample>& samples) {
  if (samples.empty()) throw ValidationError("build_inventory: no samples");
  std::set<std::string> types;
  std::set<std::string> topics;
  for (const auto& s : samples) {
    if (s.bridge.empty()) throw ValidationError("build_inventory: sample with empty bridge");
    for (const auto& b : s.bridge) {
      types.insert(b.type);
      topics.insert(b.topic);
    }
    types.insert(s.target.type);
    topics.insert(s.target.topic);
  }
  return KeywordInventory({types.begin(), types.end()}, {topics.begin(), topics.end()});
}

KeywordInventory build_inventory(const std::vector<DialogueSample>& samples, const KeywordInventory& names) {
  std::vector<RawSample> raw;
  raw.reserve(samples.size());
  for (const auto& s : samples) raw.push_back(unresolve(s, names));
  return build_inventory(raw);
}

void validate(const DialogueSample& s, const KeywordInventory& inventory, bool training_data) {
  auto check_kw = [&](const IntentKeyword& k, const char* what) {
    if (k.type_id < 0 || k.type_id >= inventory.num_types() || k.topic_id < 0 ||
        k.topic_id >= inventory.num_topics()) {
      throw ValidationError(std::string(what) + " keyword outside the inventory");
    }
  };
  if (s.bridge.empty()) throw ValidationError("bridge must contain at least one keyword");
  if (s.knowledge.empty()) throw ValidationError("knowledge must contain at least one triple");
  if (normalize_text(s.reference).empty()) throw ValidationError("reference is empty");
  check_kw(s.target, "target");
  for (const auto& b : s.bridge) check_kw(b, "bridge");
  for (const auto& t : s.history) {
    if (normalize_text(t.text).empty()) throw ValidationError("history turn with empty text");
    if (t.keyword) check_kw(*t.keyword, "history");
    if (training_data && t.speaker == Speaker::system && !t.keyword) {
      throw ValidationError("system turn without an intent keyword");
    }
  }
}

LoadedDataset resolve_dataset(const RawSplit& raw, const KeywordInventory* fixed) {
  LoadedDataset out;
  if (fixed) {
    out.inventory = *fixed;
  } else {
    std::vector<RawSample> pool = raw.train;
    pool.insert(pool.end(), raw.dev.begin(), raw.dev.end());
    out.inventory = build_inventory(pool);
  }

  auto convert = [&](const std::string& name, const std::vector<RawSample>& records, std::vector<DialogueSample>& dst) {
    dst.reserve(records.size());
    for (size_t i = 0; i < records.size(); ++i) {
      try {
        dst.push_back(resolve(records[i], out.inventory));
        validate(dst.back(), out.inventory, name == "train" || name == "dev");
      } catch (const std::exception& e) {
        throw SchemaError(name + ".jsonl record " + std::to_string(i + 1) + ": " + e.what());
      }
    }
  };
  convert("train", raw.train, out.split.train);
  convert("dev", raw.dev, out.split.dev);
  convert("test_id", raw.test_id, out.split.test_id);
  convert("test_ood", raw.test_ood, out.split.test_ood);
  return out;
}

LoadedDataset load_dataset(const fs::path& dir, const KeywordInventory* fixed) {
  RawSplit raw;
  std::vector<RawSample>* slots[] = {&raw.train, &raw.dev, &raw.test_id, &raw.test_ood};
  for (size_t i = 0; i < std::size(kSplitNames); ++i) {
    fs::path file = dir / (std::string(kSplitNames[i]) + ".jsonl");
    if (!fs::exists(file)) throw std::runtime_error("missing split file " + file.string());
    *slots[i] = read_jsonl(file);
  }
  return resolve_dataset(raw, fixed);
}

void write_dataset(const fs::path& dir, const DatasetSplit& split, const KeywordInventory& inventory) {
  fs::create_directories(dir);
  for (auto name : kSplitNames) {
    std::ofstream out(dir / (std::string(name) + ".jsonl"));
    if (!out) throw std::runtime_error("cannot write into " + dir.string());
    for (const auto& s : split.by_name(name)) out << to_json(unresolve(s, inventory)).dump() << '\n';
  }
}

OodReport verify_ood(const DatasetSplit& split, const KeywordInventory& inventory) {
  std::set<int> train_targets;
  for (const auto& s : split.train) train_targets.insert(s.target.topic_id);
  std::set<int> offenders;
  for (const auto& s : split.test_ood) {
    if (train_targets.count(s.target.topic_id)) offenders.insert(s.target.topic_id);
  }
  OodReport report;
  report.disjoint = offenders.empty();
  for (int id : offenders) report.offending_topics.push_back(inventory.topic_name(id));
  return report;
}

// ---------------------------------------------------------------------------
// Tokens

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

std::string normalize_text(std::string_view text) { return join_tokens(tokenize(text)); }

Vocabulary::Vocabulary() {
  tokens_ = {"<pad>", "<bos>", "<eos>", "<unk>", std::string(kSepToken)};
  for (int i = 0; i < kNumReserved; ++i) index_.emplace(tokens_[i], i);
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& streams, int min_count) {
  std::map<std::string, long> counts;
  for (const auto& stream : streams) {
    for (const auto& t : stream) ++counts[t];
  }
  Vocabulary v;
  std::vector<std::pair<std::string, long>> kept;
  for (const auto& [tok, n] : counts) {
    if (n >= min_count && !v.index_.count(tok)) kept.emplace_back(tok, n);
  }
  // Frequent first; ties in lexical order (the map already iterates lexically).
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [tok, n] : kept) {
    v.index_.emplace(tok, v.size());
    v.tokens_.push_back(tok);
  }
  return v;
}

Vocabulary Vocabulary::from_texts(const std::vector<std::string>& texts, int min_count) {
  std::vector<std::vector<std::string>> streams;
  streams.reserve(texts.size());
  for (const auto& t : texts) streams.push_back(tokenize(t));
  return build(streams, min_count);
}

int Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> Vocabulary::to_ids(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocabulary::to_tokens(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  for (int id : ids) {
    if (id == kEos) break;
    if (id < kNumReserved || id >= size()) continue;
    out.push_back(tokens_[static_cast<size_t>(id)]);
  }
  return out;
}

nlohmann::json Vocabulary::to_json() const { return nlohmann::json(tokens_); }

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  auto tokens = j.get<std::vector<std::string>>();
  Vocabulary v;
  if (tokens.size() < static_cast<size_t>(kNumReserved) ||
      !std::equal(v.tokens_.begin(), v.tokens_.end(), tokens.begin())) {
    throw ParseError("vocabulary does not start with the reserved tokens");
  }
  for (size_t i = kNumReserved; i < tokens.size(); ++i) {
    if (!v.index_.emplace(tokens[i], static_cast<int>(i)).second) {
      throw ParseError("duplicate vocabulary token '" + tokens[i] + "'");
    }
    v.tokens_.push_back(tokens[i]);
  }
  return v;
}

// ---------------------------------------------------------------------------
// Rendering and encoding

namespace {

void append(std::vector<std::string>& dst, std::vector<std::string> src) {
  dst.insert(dst.end(), std::make_move_iterator(src.begin()), std::make_move_iterator(src.end()));
}

}  // namespace

std::vector<std::string> render_knowledge(const DialogueSample& s) {
  std::vector<std::string> out;
  for (const auto& k : s.knowledge) {
    out.emplace_back(kSepToken);
    append(out, tokenize(k.subject));
    append(out, tokenize(k.relation));
    append(out, tokenize(k.object));
  }
  if (out.empty()) out.emplace_back(kSepToken);
  return out;
}

std::vector<std::string> render_profile(const DialogueSample& s) {
  std::vector<std::string> out;
  for (const auto& [key, value] : s.profile) {
    out.emplace_back(kSepToken);
    append(out, tokenize(key));
    append(out, tokenize(value));
  }
  if (out.empty()) out.emplace_back(kSepToken);
  return out;
}

std::vector<std::string> render_turn(const Turn& t) {
  std::vector<std::string> out{std::string(kSepToken), std::string(to_string(t.speaker))};
  append(out, tokenize(t.text));
  return out;
}

std::vector<std::string> render_target(const DialogueSample& s, const KeywordInventory& inventory) {
  std::vector<std::string> out{std::string(kSepToken), "target"};
  append(out, tokenize(inventory.type_name(s.target.type_id)));
  out.emplace_back(kSepToken);
  append(out, tokenize(inventory.topic_name(s.target.topic_id)));
  return out;
}

Vocabulary build_vocabulary(const std::vector<DialogueSample>& samples, const KeywordInventory& inventory,
                            int min_count) {
  std::vector<std::vector<std::string>> streams;
  for (const auto& s : samples) {
    streams.push_back(render_knowledge(s));
    streams.push_back(render_profile(s));
    for (const auto& t : s.history) streams.push_back(render_turn(t));
    streams.push_back(render_target(s, inventory));
    streams.push_back(tokenize(s.reference));
  }
  return Vocabulary::build(streams, min_count);
}

int TrainingExample::positives() const {
  return static_cast<int>(std::count_if(keyword_targets.begin(), keyword_targets.end(), [](float v) { return v > 0.5f; }));
}

TrainingExample encode_sample(const DialogueSample& sample, const Vocabulary& vocab, const KeywordInventory& inventory,
                              int m, const EncodeLimits& limits) {
  if (m < 1) throw ValidationError("encode_sample: m must be >= 1");
  if (sample.bridge.empty()) throw ValidationError("encode_sample: empty bridge");

  TrainingExample ex;
  ex.num_types = inventory.num_types();
  ex.num_topics = inventory.num_topics();

  auto capped = [&](std::vector<int> ids) {
    if (static_cast<int>(ids.size()) > limits.max_src_len) ids.resize(static_cast<size_t>(limits.max_src_len));
    return ids;
  };
  ex.knowledge_ids = capped(vocab.to_ids(render_knowledge(sample)));
  ex.profile_ids = capped(vocab.to_ids(render_profile(sample)));

  std::vector<int> target_ids = vocab.to_ids(render_target(sample, inventory));
  if (static_cast<int>(target_ids.size()) > limits.max_src_len) {
    throw EncodingError("target segment alone exceeds max_src_len");
  }
  // Newest turns first until the cap is reached; older turns are dropped.
  std::vector<std::vector<int>> kept;
  size_t used = target_ids.size();
  for (auto it = sample.history.rbegin(); it != sample.history.rend(); ++it) {
    auto ids = vocab.to_ids(render_turn(*it));
    if (used + ids.size() > static_cast<size_t>(limits.max_src_len)) break;
    used += ids.size();
    kept.push_back(std::move(ids));
  }
  ex.history_turns_kept = static_cast<int>(kept.size());
  for (auto it = kept.rbegin(); it != kept.rend(); ++it) {
    ex.context_ids.insert(ex.context_ids.end(), it->begin(), it->end());
  }
  ex.context_ids.insert(ex.context_ids.end(), target_ids.begin(), target_ids.end());

  ex.reference_ids = vocab.to_ids(tokenize(sample.reference));
  ex.reference_ids.push_back(Vocabulary::kEos);
  if (static_cast<int>(ex.reference_ids.size()) > limits.max_tgt_len) {
    throw EncodingError("reference of " + std::to_string(ex.reference_ids.size() - 1) +
                        " tokens does not fit max_tgt_len " + std::to_string(limits.max_tgt_len));
  }

  ex.keyword_targets.assign(static_cast<size_t>(inventory.num_labels()), 0.0f);
  size_t window = std::min<size_t>(static_cast<size_t>(m), sample.bridge.size());
  for (size_t i = 0; i < window; ++i) {
    const auto& k = sample.bridge[i];
    ex.keyword_targets.at(static_cast<size_t>(k.type_id)) = 1.0f;
    ex.keyword_targets.at(static_cast<size_t>(inventory.num_types() + k.topic_id)) = 1.0f;
  }
  return ex;
}

}  // namespace guidedial
