#include "guidedial/commands.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include "guidedial/checkpoint.hpp"
#include "guidedial/errors.hpp"

namespace fs = std::filesystem;

namespace guidedial {

namespace {

struct LoadedRun {
  Checkpoint checkpoint;
  RunConfig config;
  LoadedDataset data;
};

LoadedRun load_run(const fs::path& checkpoint, const std::optional<fs::path>& data_dir) {
  LoadedRun run;
  run.checkpoint = load_checkpoint(checkpoint);
  if (!run.checkpoint.settings.contains("config")) {
    throw SchemaError(checkpoint.string() + ": settings.json has no run config");
  }
  run.config = RunConfig::from_json(run.checkpoint.settings.at("config"));
  if (data_dir) run.config.data_dir = *data_dir;
  run.data = load_dataset(run.config.data_dir, &run.checkpoint.inventory);
  return run;
}

const std::vector<DialogueSample>& pick_split(const LoadedRun& run, const std::string& split, bool allow_train) {
  const bool known = split == "dev" || split == "test_id" || split == "test_ood" || (allow_train && split == "train");
  if (!known) {
    throw ValidationError("split: unknown split '" + split + "' (expected " +
                          std::string(allow_train ? "train, " : "") + "dev, test_id or test_ood)");
  }
  return run.data.split.by_name(split);
}

std::ofstream open_out(const fs::path& file, std::ios::openmode mode = std::ios::trunc) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::out | mode);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  return out;
}

nlohmann::json keyword_json(const IntentKeyword& k, const KeywordInventory& inventory) {
  return {{"type", inventory.type_name(k.type_id)}, {"topic", inventory.topic_name(k.topic_id)}};
}

std::vector<TrainingExample> encode_all(const std::vector<DialogueSample>& samples, const Vocabulary& vocab,
                                        const KeywordInventory& inventory, const RunConfig& config,
                                        const std::string& split) {
  std::vector<TrainingExample> out;
  out.reserve(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    try {
      out.push_back(encode_sample(samples[i], vocab, inventory, config.inference.m, config.limits()));
    } catch (const EncodingError& e) {
      throw EncodingError(split + " sample " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

void InferenceOverrides::apply(InferenceOptions& options) const {
  if (mode) options.mode = *mode;
  if (m) options.m = *m;
  if (delta) options.delta = *delta;
  if (lambda) options.lambda = *lambda;
  if (no_csm) options.use_csm = false;
  if (no_ikb) options.use_ikb = false;
  if (drop_knowledge) options.drop_knowledge = true;
  if (drop_profile) options.drop_profile = true;
}

TrainOutcome cmd_train(const TrainCommand& command, std::ostream& progress) {
  RunConfig config = load_run_config(command.config);
  if (command.out) config.output_dir = *command.out;
  if (command.seed) {
    config.seed = *command.seed;
    config.model.seed = *command.seed;
    config.optimizer.seed = *command.seed;
  }
  command.overrides.apply(config.inference);
  config.validate();

  const LoadedDataset data = load_dataset(config.data_dir);
  const Vocabulary vocab = build_vocabulary(data.split.train, data.inventory, config.min_count);
  config.model.vocab_size = vocab.size();
  const auto train = encode_all(data.split.train, vocab, data.inventory, config, "train");
  const auto dev = encode_all(data.split.dev, vocab, data.inventory, config, "dev");

  const fs::path out_dir = config.output_dir;
  const fs::path ckpt_dir = out_dir / "checkpoint";
  fs::create_directories(ckpt_dir);
  const nlohmann::json settings{{"config", config.to_json()}};
  open_out(out_dir / "run_config.json") << settings.dump(2) << '\n';

  DialogueModel<float> model(config.model, data.inventory.num_types(), data.inventory.num_topics());
  FitOptions<float> fo;
  fo.objective = config.objective();
  fo.bridge_switch_epoch = config.bridge_switch_epoch;

  const bool resuming = command.resume && fs::exists(ckpt_dir / "last");
  if (resuming) {
    Checkpoint last = load_checkpoint(ckpt_dir / "last");
    if (!(last.vocab == vocab) || !(last.inventory == data.inventory)) {
      throw SchemaError("cannot resume: checkpoint vocabulary or inventory differs from the data");
    }
    if (!(last.model->config() == config.model)) throw SchemaError("cannot resume: model config differs");
    model.params() = last.model->params();
    fo.resume_optimizer = std::move(last.optimizer);
    fo.resume_state = last.state;
    if (fo.resume_state) progress << "resuming after epoch " << fo.resume_state->epoch << '\n';
  }

  const auto mode = resuming ? std::ios::app : std::ios::trunc;
  std::ofstream log = open_out(out_dir / "train_log.jsonl", mode);
  std::ofstream epochs = open_out(out_dir / "epochs.jsonl", mode);
  fo.log = &log;
  fo.checkpoint = [&](std::string_view name, const OptimizerState<float>& opt, const TrainState& state) {
    save_checkpoint(ckpt_dir / std::string(name), model, vocab, data.inventory, settings, &opt, &state);
  };
  fo.on_epoch = [&](const EpochSummary& e) {
    epochs << nlohmann::json{{"epoch", e.epoch}, {"step", e.step}, {"train_loss", e.train_loss},
                             {"dev_loss", e.dev_loss}, {"improved", e.improved}}
                  .dump()
           << '\n'
           << std::flush;
    progress << "epoch " << e.epoch << " step " << e.step << " train " << e.train_loss << " dev " << e.dev_loss
             << (e.improved ? " *" : "") << '\n'
             << std::flush;
  };
  progress << "train " << train.size() << " dev " << dev.size() << " vocab " << vocab.size() << " types "
           << data.inventory.num_types() << " topics " << data.inventory.num_topics() << " params "
           << model.params().scalar_count() << '\n';

  TrainOutcome outcome;
  outcome.output_dir = out_dir;
  outcome.fit = fit(model, train, dev, config.optimizer, fo);
  return outcome;
}

EvalReport cmd_evaluate(const EvalCommand& command, std::ostream& table) {
  if (command.split != "dev" && command.split != "test_id" && command.split != "test_ood") {
    throw ValidationError("split: unknown split '" + command.split + "' (expected dev, test_id or test_ood)");
  }
  LoadedRun run = load_run(command.checkpoint, command.data_dir);
  const auto& samples = pick_split(run, command.split, false);
  if (command.split == "test_ood") {
    const OodReport ood = verify_ood(run.data.split, run.checkpoint.inventory);
    if (!ood.disjoint) {
      std::string names;
      for (const auto& t : ood.offending_topics) names += (names.empty() ? "" : ", ") + t;
      throw ValidationError("test_ood: targets also appear as train targets: " + names);
    }
  }
  InferenceOptions options = run.config.inference;
  command.overrides.apply(options);

  std::vector<SamplePrediction> predictions;
  EvalReport report = evaluate_split(samples, *run.checkpoint.model, run.checkpoint.vocab, run.checkpoint.inventory,
                                     options, run.config.limits(), command.split, &predictions);
  table << EvalReport::table_header() << '\n' << report.table_row() << '\n';
  if (command.out) {
    nlohmann::json j = report.to_json();
    j["checkpoint"] = fs::absolute(command.checkpoint).lexically_normal().string();
    open_out(*command.out) << j.dump(2) << '\n';
  }
  if (command.predictions) {
    std::ofstream out = open_out(*command.predictions);
    for (const auto& p : predictions) {
      out << nlohmann::json{{"index", p.index}, {"generated", p.generated}, {"reference", p.reference},
                            {"final_turn", p.final_turn}, {"achieved", p.achieved}}
                 .dump()
          << '\n';
    }
  }
  return report;
}

void cmd_generate(const GenerateCommand& command, std::ostream& out) {
  LoadedRun run = load_run(command.checkpoint, command.data_dir);
  const auto& samples = pick_split(run, command.split, true);
  InferenceOptions options = run.config.inference;
  command.overrides.apply(options);
  if (command.first < 0 || command.first >= static_cast<long>(samples.size())) {
    throw std::out_of_range("index " + std::to_string(command.first) + " out of range for " + command.split +
                            " (" + std::to_string(samples.size()) + " samples)");
  }
  const long end = std::min<long>(static_cast<long>(samples.size()), command.first + std::max(1L, command.count));
  const auto& ck = run.checkpoint;
  for (long i = command.first; i < end; ++i) {
    const auto& s = samples[static_cast<size_t>(i)];
    const auto ex = encode_sample(s, ck.vocab, ck.inventory, options.m, run.config.limits());
    const auto result = generate(*ck.model, prepare_context(*ck.model, ex, options));
    const std::string text = ck.vocab.detokenize(result.tokens);
    out << nlohmann::json{{"index", i},
                          {"target", keyword_json(s.target, ck.inventory)},
                          {"generated", text},
                          {"reference", s.reference},
                          {"achieved", target_achieved(text, ck.inventory.topic_name(s.target.topic_id))}}
               .dump()
        << '\n';
  }
}

nlohmann::json cmd_inspect(const InspectCommand& command) {
  if (command.top_k < 1) throw ValidationError("top_k: must be >= 1");
  LoadedRun run = load_run(command.checkpoint, command.data_dir);
  const auto& samples = pick_split(run, command.split, true);
  if (command.index < 0 || command.index >= static_cast<long>(samples.size())) {
    throw std::out_of_range("index " + std::to_string(command.index) + " out of range for " + command.split + " (" +
                            std::to_string(samples.size()) + " samples)");
  }
  InferenceOptions options = run.config.inference;
  command.overrides.apply(options);
  const auto& ck = run.checkpoint;
  const auto& s = samples[static_cast<size_t>(command.index)];
  const auto ex = encode_sample(s, ck.vocab, ck.inventory, options.m, run.config.limits());
  const auto ctx = prepare_context(*ck.model, ex, options);
  const auto result = generate(*ck.model, ctx, true);

  ScenarioBias bias;
  if (ctx.bias) {
    bias = *ctx.bias;
  } else {
    bias.logits = Eigen::VectorXd::Zero(ck.vocab.size());
    bias.normalized = softmax(bias.logits);
  }
  nlohmann::json bias_top = nlohmann::json::array();
  for (const auto& [token, prob] : bias.top(command.top_k)) {
    bias_top.push_back({{"token", ck.vocab.token(token)}, {"prob", prob}});
  }

  nlohmann::json keywords = nullptr;
  nlohmann::json selection = nullptr;
  if (ctx.keywords && ctx.selection) {
    keywords = prediction_json(*ctx.keywords, *ctx.selection, ck.inventory);
    auto picks = [](const std::vector<Pick>& v, const std::vector<std::string>& names) {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& p : v) arr.push_back({{"name", names[static_cast<size_t>(p.id)]}, {"weight", p.weight}});
      return arr;
    };
    selection = {{"mode", std::string(to_string(ctx.selection->mode))},
                 {"type", picks(ctx.selection->type_picks, ck.inventory.types())},
                 {"topic", picks(ctx.selection->topic_picks, ck.inventory.topics())},
                 {"type_fallback", ctx.selection->type_fallback},
                 {"topic_fallback", ctx.selection->topic_fallback}};
  }

  nlohmann::json history = nlohmann::json::array();
  for (const auto& t : s.history) history.push_back({{"speaker", std::string(to_string(t.speaker))}, {"text", t.text}});
  const std::string text = ck.vocab.detokenize(result.tokens);
  return {{"split", command.split},
          {"index", command.index},
          {"options",
           {{"use_csm", options.use_csm},
            {"use_ikb", options.use_ikb},
            {"drop_knowledge", options.drop_knowledge},
            {"drop_profile", options.drop_profile},
            {"mode", std::string(to_string(options.mode))},
            {"m", options.m},
            {"delta", options.delta},
            {"lambda", options.lambda}}},
          {"target", keyword_json(s.target, ck.inventory)},
          {"history", history},
          {"bias", {{"uniform", !ctx.bias.has_value()}, {"top", bias_top}}},
          {"keywords", keywords},
          {"selection", selection},
          {"generated", text},
          {"reference", s.reference},
          {"achieved", target_achieved(text, ck.inventory.topic_name(s.target.topic_id))},
          {"trace", trace_json(result, ck.vocab)}};
}

void cmd_synth(const SynthOptions& options, const fs::path& out) { write_corpus(out, synthesize(options)); }

}  // namespace guidedial
