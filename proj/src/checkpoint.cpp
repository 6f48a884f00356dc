#include "guidedial/checkpoint.hpp"

#include <bit>
#include <chrono>
#include <fstream>
#include <stdexcept>

#include "guidedial/errors.hpp"

namespace fs = std::filesystem;

namespace guidedial {

static_assert(std::endian::native == std::endian::little, "tensor files are written in host byte order");

namespace {

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + file.string());
}

nlohmann::json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot read " + file.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(file.string() + ": " + e.what());
  }
}

std::vector<NamedTensor> param_tensors(const ParamStore<float>& params) {
  std::vector<NamedTensor> out;
  for (int i = 0; i < params.size(); ++i) out.push_back({params.name(i), params.value(i)});
  return out;
}

void assign(ParamStore<float>& params, const std::vector<NamedTensor>& tensors, const std::string& prefix,
            std::vector<Matrix<float>>* dest) {
  std::unordered_map<std::string, const Matrix<float>*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t.value;
  if (dest) dest->clear();
  for (int i = 0; i < params.size(); ++i) {
    const std::string key = prefix + params.name(i);
    auto it = by_name.find(key);
    if (it == by_name.end()) throw SchemaError("checkpoint is missing tensor '" + key + "'");
    const auto& v = *it->second;
    if (v.rows() != params.value(i).rows() || v.cols() != params.value(i).cols()) {
      throw SchemaError("tensor '" + key + "' has shape " + std::to_string(v.rows()) + "x" + std::to_string(v.cols()) +
                        ", expected " + std::to_string(params.value(i).rows()) + "x" +
                        std::to_string(params.value(i).cols()));
    }
    if (dest) {
      dest->push_back(v);
    } else {
      params.value(i) = v;
    }
  }
}

}  // namespace

void write_tensors(const fs::path& dir, const std::string& stem, const std::vector<NamedTensor>& tensors) {
  const fs::path bin = dir / (stem + ".bin");
  std::ofstream out(bin, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + bin.string());
  nlohmann::json manifest = nlohmann::json::array();
  long offset = 0;
  for (const auto& t : tensors) {
    const auto bytes = static_cast<long>(t.value.size() * sizeof(float));
    out.write(reinterpret_cast<const char*>(t.value.data()), bytes);
    manifest.push_back({{"name", t.name}, {"shape", {t.value.rows(), t.value.cols()}}, {"dtype", "float32"},
                        {"offset", offset}});
    offset += bytes;
  }
  if (!out) throw std::runtime_error("write failed: " + bin.string());
  write_text(dir / (stem + ".json"), nlohmann::json{{"tensors", manifest}}.dump(1));
}

std::vector<NamedTensor> read_tensors(const fs::path& dir, const std::string& stem) {
  const nlohmann::json manifest = read_json(dir / (stem + ".json"));
  const fs::path bin = dir / (stem + ".bin");
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + bin.string());
  const auto file_size = static_cast<long>(fs::file_size(bin));
  std::vector<NamedTensor> out;
  try {
    for (const auto& entry : manifest.at("tensors")) {
      if (entry.at("dtype").get<std::string>() != "float32") {
        throw SchemaError(bin.string() + ": unsupported dtype for '" + entry.at("name").get<std::string>() + "'");
      }
      NamedTensor t;
      t.name = entry.at("name").get<std::string>();
      const long rows = entry.at("shape").at(0).get<long>();
      const long cols = entry.at("shape").at(1).get<long>();
      const long offset = entry.at("offset").get<long>();
      const long bytes = rows * cols * static_cast<long>(sizeof(float));
      if (rows < 0 || cols < 0 || offset < 0 || offset + bytes > file_size) {
        throw SchemaError(bin.string() + ": tensor '" + t.name + "' lies outside the data file");
      }
      t.value.resize(rows, cols);
      in.seekg(offset);
      in.read(reinterpret_cast<char*>(t.value.data()), bytes);
      if (!in) throw std::runtime_error("read failed: " + bin.string());
      out.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(dir.string() + "/" + stem + ".json: " + e.what());
  }
  return out;
}

void save_checkpoint(const fs::path& dir, const DialogueModel<float>& model, const Vocabulary& vocab,
                     const KeywordInventory& inventory, const nlohmann::json& settings,
                     const OptimizerState<float>* optimizer, const TrainState* state) {
  const fs::path target = fs::absolute(dir);
  const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
  const fs::path tmp = target.parent_path() / (target.filename().string() + ".tmp-" + std::to_string(stamp));
  fs::create_directories(tmp);

  nlohmann::json config = model.config().to_json();
  config["num_types"] = model.num_types();
  config["num_topics"] = model.num_topics();
  write_text(tmp / "config.json", config.dump(2));
  write_text(tmp / "vocab.json", vocab.to_json().dump());
  write_text(tmp / "inventory.json", inventory.to_json().dump(1));
  write_text(tmp / "settings.json", settings.dump(2));
  write_tensors(tmp, "weights", param_tensors(model.params()));
  if (optimizer) {
    std::vector<NamedTensor> moments;
    const auto& params = model.params();
    for (int i = 0; i < params.size(); ++i) {
      moments.push_back({"first/" + params.name(i), optimizer->first.at(static_cast<size_t>(i))});
      moments.push_back({"second/" + params.name(i), optimizer->second.at(static_cast<size_t>(i))});
    }
    write_tensors(tmp, "optimizer", moments);
  }
  if (state) {
    nlohmann::json s = state->to_json();
    if (optimizer) s["optimizer_step"] = optimizer->step;
    write_text(tmp / "train_state.json", s.dump(2));
  }

  const fs::path old = target.parent_path() / (target.filename().string() + ".old-" + std::to_string(stamp));
  if (fs::exists(target)) fs::rename(target, old);
  fs::rename(tmp, target);
  if (fs::exists(old)) fs::remove_all(old);
}

Checkpoint load_checkpoint(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("checkpoint directory not found: " + dir.string());
  Checkpoint ck;
  const nlohmann::json config = read_json(dir / "config.json");
  ModelConfig mc = ModelConfig::from_json(config);
  ck.model = std::make_unique<DialogueModel<float>>(mc, config.at("num_types").get<int>(),
                                                    config.at("num_topics").get<int>());
  ck.vocab = Vocabulary::from_json(read_json(dir / "vocab.json"));
  ck.inventory = KeywordInventory::from_json(read_json(dir / "inventory.json"));
  if (ck.vocab.size() != mc.vocab_size) throw SchemaError("vocab.json size does not match config vocab_size");
  if (ck.inventory.num_types() != ck.model->num_types() || ck.inventory.num_topics() != ck.model->num_topics()) {
    throw SchemaError("inventory.json does not match the model's keyword heads");
  }
  ck.settings = fs::exists(dir / "settings.json") ? read_json(dir / "settings.json") : nlohmann::json::object();
  assign(ck.model->params(), read_tensors(dir, "weights"), "", nullptr);

  if (fs::exists(dir / "optimizer.json")) {
    auto moments = read_tensors(dir, "optimizer");
    OptimizerState<float> opt;
    assign(ck.model->params(), moments, "first/", &opt.first);
    assign(ck.model->params(), moments, "second/", &opt.second);
    ck.optimizer = std::move(opt);
  }
  if (fs::exists(dir / "train_state.json")) {
    const nlohmann::json s = read_json(dir / "train_state.json");
    ck.state = TrainState::from_json(s);
    if (ck.optimizer) ck.optimizer->step = s.value("optimizer_step", ck.state->step);
  }
  return ck;
}

}  // namespace guidedial
