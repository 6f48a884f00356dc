#include "guidedial/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "guidedial/errors.hpp"

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace guidedial {

namespace {

[[noreturn]] void bad_value(const std::string& field, const std::string& expected, const std::string& got) {
  throw ValidationError(field + ": expected " + expected + ", got '" + got + "'");
}

template <typename Int>
Int to_int(const std::string& field, const std::string& s) {
  Int v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) bad_value(field, "an integer", s);
  return v;
}

double to_double(const std::string& field, const std::string& s) {
  std::istringstream in(s);
  double v = 0.0;
  in >> v;
  if (in.fail() || !in.eof() || !std::isfinite(v)) bad_value(field, "a finite number", s);
  return v;
}

bool to_bool(const std::string& field, const std::string& s) {
  if (s == "true" || s == "yes" || s == "on" || s == "1") return true;
  if (s == "false" || s == "no" || s == "off" || s == "0") return false;
  bad_value(field, "true or false", s);
}

using Setter = std::function<void(RunConfig&, const std::string& field, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    t["run.seed"] = [](RunConfig& c, auto& f, auto& v) { c.seed = to_int<std::uint64_t>(f, v); };
    t["run.output_dir"] = [](RunConfig& c, auto&, auto& v) { c.output_dir = v; };
    t["data.dir"] = [](RunConfig& c, auto&, auto& v) { c.data_dir = v; };
    t["data.min_count"] = [](RunConfig& c, auto& f, auto& v) { c.min_count = to_int<int>(f, v); };
    t["model.d"] = [](RunConfig& c, auto& f, auto& v) { c.model.d = to_int<int>(f, v); };
    t["model.n_layers"] = [](RunConfig& c, auto& f, auto& v) { c.model.n_layers = to_int<int>(f, v); };
    t["model.n_heads"] = [](RunConfig& c, auto& f, auto& v) { c.model.n_heads = to_int<int>(f, v); };
    t["model.ffn_width"] = [](RunConfig& c, auto& f, auto& v) { c.model.ffn_width = to_int<int>(f, v); };
    t["model.max_src_len"] = [](RunConfig& c, auto& f, auto& v) { c.model.max_src_len = to_int<int>(f, v); };
    t["model.max_tgt_len"] = [](RunConfig& c, auto& f, auto& v) { c.model.max_tgt_len = to_int<int>(f, v); };
    t["model.dropout"] = [](RunConfig& c, auto& f, auto& v) { c.model.dropout = to_double(f, v); };
    t["optimizer.lr"] = [](RunConfig& c, auto& f, auto& v) { c.optimizer.learning_rate = to_double(f, v); };
    t["optimizer.batch_size"] = [](RunConfig& c, auto& f, auto& v) { c.optimizer.batch_size = to_int<int>(f, v); };
    t["optimizer.epochs"] = [](RunConfig& c, auto& f, auto& v) { c.optimizer.epochs = to_int<int>(f, v); };
    t["optimizer.warmup_steps"] = [](RunConfig& c, auto& f, auto& v) { c.optimizer.warmup_steps = to_int<long>(f, v); };
    t["optimizer.warmup_fraction"] = [](RunConfig& c, auto& f, auto& v) {
      c.optimizer.warmup_fraction = to_double(f, v);
    };
    t["optimizer.clip_norm"] = [](RunConfig& c, auto& f, auto& v) { c.optimizer.clip_norm = to_double(f, v); };
    t["optimizer.weight_decay"] = [](RunConfig& c, auto& f, auto& v) { c.optimizer.weight_decay = to_double(f, v); };
    t["optimizer.beta1"] = [](RunConfig& c, auto& f, auto& v) { c.optimizer.beta1 = to_double(f, v); };
    t["optimizer.beta2"] = [](RunConfig& c, auto& f, auto& v) { c.optimizer.beta2 = to_double(f, v); };
    t["optimizer.epsilon"] = [](RunConfig& c, auto& f, auto& v) { c.optimizer.epsilon = to_double(f, v); };
    t["bridging.mode"] = [](RunConfig& c, auto& f, auto& v) {
      if (v != "hard" && v != "soft") bad_value(f, "hard or soft", v);
      c.inference.mode = parse_selection_mode(v);
    };
    t["bridging.m"] = [](RunConfig& c, auto& f, auto& v) { c.inference.m = to_int<int>(f, v); };
    t["bridging.delta"] = [](RunConfig& c, auto& f, auto& v) { c.inference.delta = to_double(f, v); };
    t["bridging.switch_epoch"] = [](RunConfig& c, auto& f, auto& v) { c.bridge_switch_epoch = to_int<int>(f, v); };
    t["scenario.lambda"] = [](RunConfig& c, auto& f, auto& v) { c.inference.lambda = to_double(f, v); };
    t["ablation.use_csm"] = [](RunConfig& c, auto& f, auto& v) { c.inference.use_csm = to_bool(f, v); };
    t["ablation.use_ikb"] = [](RunConfig& c, auto& f, auto& v) { c.inference.use_ikb = to_bool(f, v); };
    t["ablation.drop_knowledge"] = [](RunConfig& c, auto& f, auto& v) { c.inference.drop_knowledge = to_bool(f, v); };
    t["ablation.drop_profile"] = [](RunConfig& c, auto& f, auto& v) { c.inference.drop_profile = to_bool(f, v); };
    t["generation.max_decode_len"] = [](RunConfig& c, auto& f, auto& v) {
      c.inference.max_decode_len = to_int<int>(f, v);
    };
    return t;
  }();
  return table;
}

bool known_section(const std::string& section) {
  for (const auto& [field, setter] : setters()) {
    if (field.compare(0, section.size() + 1, section + ".") == 0) return true;
  }
  return false;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ValidationError(message);
}

}  // namespace

void RunConfig::validate() const {
  require(!data_dir.empty(), "data.dir: must be set");
  require(min_count >= 1, "data.min_count: must be >= 1");
  require(!output_dir.empty(), "run.output_dir: must be set");

  require(model.d > 0, "model.d: must be positive");
  require(model.n_layers > 0, "model.n_layers: must be positive");
  require(model.n_heads > 0, "model.n_heads: must be positive");
  require(model.d % model.n_heads == 0, "model.n_heads: must divide model.d");
  require(model.ffn_width > 0, "model.ffn_width: must be positive");
  require(model.max_src_len > 0, "model.max_src_len: must be positive");
  require(model.max_tgt_len > 1, "model.max_tgt_len: must be >= 2");
  require(model.dropout >= 0.0 && model.dropout < 1.0, "model.dropout: must be in [0, 1)");

  require(optimizer.learning_rate > 0.0, "optimizer.lr: must be > 0");
  require(optimizer.batch_size >= 1, "optimizer.batch_size: must be >= 1");
  require(optimizer.epochs >= 0, "optimizer.epochs: must be >= 0");
  require(optimizer.warmup_fraction >= 0.0 && optimizer.warmup_fraction <= 1.0,
          "optimizer.warmup_fraction: must be in [0, 1]");
  require(optimizer.weight_decay >= 0.0, "optimizer.weight_decay: must be >= 0");
  require(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0, "optimizer.beta1: must be in [0, 1)");
  require(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0, "optimizer.beta2: must be in [0, 1)");
  require(optimizer.epsilon > 0.0, "optimizer.epsilon: must be > 0");

  require(inference.m >= 1, "bridging.m: must be >= 1");
  require(inference.delta >= 0.0 && inference.delta <= 1.0,
          "bridging.delta: must be in [0, 1], got " + std::to_string(inference.delta));
  require(std::isfinite(inference.lambda), "scenario.lambda: must be finite");
  require(inference.max_decode_len >= 1, "generation.max_decode_len: must be >= 1");
  require(inference.use_csm || !inference.drop_knowledge, "ablation.drop_knowledge: requires use_csm = true");
  require(inference.use_csm || !inference.drop_profile, "ablation.drop_profile: requires use_csm = true");
}

ObjectiveOptions RunConfig::objective() const {
  ObjectiveOptions o;
  o.use_csm = inference.use_csm;
  o.use_ikb = inference.use_ikb;
  o.drop_knowledge = inference.drop_knowledge;
  o.drop_profile = inference.drop_profile;
  o.lambda = inference.lambda;
  o.m = inference.m;
  return o;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json model_json = model.to_json();
  model_json.erase("vocab_size");
  model_json.erase("seed");
  nlohmann::json opt = optimizer.to_json();
  opt.erase("seed");
  return {{"run", {{"seed", seed}, {"output_dir", output_dir.string()}}},
          {"data", {{"dir", data_dir.string()}, {"min_count", min_count}}},
          {"model", model_json},
          {"optimizer", opt},
          {"bridging",
           {{"mode", std::string(to_string(inference.mode))},
            {"m", inference.m},
            {"delta", inference.delta},
            {"switch_epoch", bridge_switch_epoch}}},
          {"scenario", {{"lambda", inference.lambda}}},
          {"ablation",
           {{"use_csm", inference.use_csm},
            {"use_ikb", inference.use_ikb},
            {"drop_knowledge", inference.drop_knowledge},
            {"drop_profile", inference.drop_profile}}},
          {"generation", {{"max_decode_len", inference.max_decode_len}}}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  const auto& table = setters();
  for (const auto& [section, entries] : j.items()) {
    for (const auto& [key, value] : entries.items()) {
      const std::string field = section + "." + key;
      auto it = table.find(field);
      if (it == table.end()) throw ValidationError(field + ": unknown key");
      it->second(c, field, value.is_string() ? value.get<std::string>() : value.dump());
    }
  }
  c.model.seed = c.seed;
  c.optimizer.seed = c.seed;
  return c;
}

RunConfig parse_run_config(const std::string& text, const fs::path& base_dir) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(e.message(), static_cast<long>(e.line()));
  }

  RunConfig c;
  const auto& table = setters();
  for (const auto& [section, entries] : tree) {
    if (entries.empty() && !entries.data().empty()) throw ValidationError(section + ": key outside of any section");
    if (entries.empty() && !known_section(section)) throw ValidationError(section + ": unknown section");
    for (const auto& [key, node] : entries) {
      const std::string field = section + "." + key;
      auto it = table.find(field);
      if (it == table.end()) throw ValidationError(field + ": unknown key");
      it->second(c, field, node.data());
    }
  }
  c.model.seed = c.seed;
  c.optimizer.seed = c.seed;
  if (!base_dir.empty()) {
    if (c.data_dir.is_relative() && !c.data_dir.empty()) c.data_dir = base_dir / c.data_dir;
    if (c.output_dir.is_relative()) c.output_dir = base_dir / c.output_dir;
  }
  c.data_dir = c.data_dir.lexically_normal();
  c.output_dir = c.output_dir.lexically_normal();
  c.validate();
  return c;
}

RunConfig load_run_config(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot read config " + file.string());
  std::stringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str(), fs::absolute(file).parent_path());
}

}  // namespace guidedial
