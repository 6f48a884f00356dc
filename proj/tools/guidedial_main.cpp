#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "guidedial/checkpoint.hpp"
#include "guidedial/commands.hpp"
#include "guidedial/errors.hpp"
#include "guidedial/server.hpp"

using namespace guidedial;

namespace {

void add_inference_flags(CLI::App* cmd, InferenceOverrides& o, std::string& mode) {
  cmd->add_option("--mode", mode, "keyword selection: hard or soft")->check(CLI::IsMember({"hard", "soft"}));
  cmd->add_option("--m", o.m, "number of keywords picked in hard mode")->check(CLI::PositiveNumber);
  cmd->add_option("--delta", o.delta, "soft-mode probability threshold")->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--lambda", o.lambda, "scale of the scenario bias");
  cmd->add_flag("--no-csm", o.no_csm, "disable the scenario bias");
  cmd->add_flag("--no-ikb", o.no_ikb, "disable keyword bridging");
  cmd->add_flag("--drop-k", o.drop_knowledge, "zero the pooled knowledge summary");
  cmd->add_flag("--drop-u", o.drop_profile, "zero the pooled profile summary");
}

void finish_mode(InferenceOverrides& o, const std::string& mode) {
  if (!mode.empty()) o.mode = parse_selection_mode(mode);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Target-guided proactive dialogue: training, evaluation and serving"};
  app.require_subcommand(1);

  // synth
  SynthOptions synth;
  std::string synth_out;
  bool synth_full = false;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic corpus");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--seed", synth.seed);
  synth_cmd->add_option("--train", synth.train_dialogues, "training dialogues");
  synth_cmd->add_option("--dev", synth.dev_dialogues, "dev dialogues");
  synth_cmd->add_option("--test-id", synth.test_id_dialogues, "in-domain test dialogues");
  synth_cmd->add_option("--test-ood", synth.test_ood_dialogues, "out-of-domain test dialogues");
  synth_cmd->add_option("--topics-per-kind", synth.topics_per_kind);
  synth_cmd->add_option("--max-path", synth.max_path);
  synth_cmd->add_flag("--full-inventory", synth_full, "640 topics, all of them present in train");

  // train
  TrainCommand train;
  std::string train_mode;
  std::string train_out;
  auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
  train_cmd->add_option("--config", train.config, "INI run config")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", train_out, "output directory (overrides run.output_dir)");
  train_cmd->add_option("--seed", train.seed);
  train_cmd->add_flag("--resume", train.resume, "continue from <out>/checkpoint/last");
  add_inference_flags(train_cmd, train.overrides, train_mode);

  // evaluate
  EvalCommand eval;
  std::string eval_mode, eval_data, eval_out, eval_pred;
  auto* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint on a split");
  eval_cmd->add_option("--checkpoint", eval.checkpoint)->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--split", eval.split)->check(CLI::IsMember({"dev", "test_id", "test_ood"}));
  eval_cmd->add_option("--data", eval_data, "dataset directory (default: the one used for training)");
  eval_cmd->add_option("--out", eval_out, "JSON report path");
  eval_cmd->add_option("--predictions", eval_pred, "JSONL with one generated reply per sample");
  add_inference_flags(eval_cmd, eval.overrides, eval_mode);

  // generate
  GenerateCommand gen;
  std::string gen_mode, gen_data;
  auto* gen_cmd = app.add_subcommand("generate", "generate replies for samples of a split");
  gen_cmd->add_option("--checkpoint", gen.checkpoint)->required()->check(CLI::ExistingDirectory);
  gen_cmd->add_option("--split", gen.split)->check(CLI::IsMember({"train", "dev", "test_id", "test_ood"}));
  gen_cmd->add_option("--data", gen_data);
  gen_cmd->add_option("--index", gen.first, "first sample")->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--count", gen.count, "number of samples")->check(CLI::PositiveNumber);
  add_inference_flags(gen_cmd, gen.overrides, gen_mode);

  // inspect
  InspectCommand insp;
  std::string insp_mode, insp_data, insp_out;
  auto* insp_cmd = app.add_subcommand("inspect", "dump bias, keyword predictions and trace for one sample");
  insp_cmd->add_option("--checkpoint", insp.checkpoint)->required()->check(CLI::ExistingDirectory);
  insp_cmd->add_option("--split", insp.split)->check(CLI::IsMember({"train", "dev", "test_id", "test_ood"}));
  insp_cmd->add_option("--data", insp_data);
  insp_cmd->add_option("--index", insp.index)->check(CLI::NonNegativeNumber);
  insp_cmd->add_option("--top-k", insp.top_k)->check(CLI::PositiveNumber);
  insp_cmd->add_option("--out", insp_out, "write JSON here instead of stdout");
  add_inference_flags(insp_cmd, insp.overrides, insp_mode);

  // serve
  std::string serve_ckpt, serve_host = "127.0.0.1", serve_mode;
  int serve_port = 8080;
  int idle_minutes = 30;
  InferenceOverrides serve_over;
  auto* serve_cmd = app.add_subcommand("serve", "serve guided-chat sessions over HTTP");
  serve_cmd->add_option("--checkpoint", serve_ckpt)->required()->check(CLI::ExistingDirectory);
  serve_cmd->add_option("--host", serve_host);
  serve_cmd->add_option("--port", serve_port)->check(CLI::Range(1, 65535));
  serve_cmd->add_option("--idle-minutes", idle_minutes, "drop sessions idle this long")->check(CLI::PositiveNumber);
  add_inference_flags(serve_cmd, serve_over, serve_mode);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth_cmd) {
      if (synth_full) {
        synth.topics_per_kind = kDurecdialTopicsPerKind;
        synth.cover_all_topics = true;
      }
      cmd_synth(synth, synth_out);
      std::cout << "wrote " << synth_out << '\n';
    } else if (*train_cmd) {
      finish_mode(train.overrides, train_mode);
      if (!train_out.empty()) train.out = train_out;
      auto outcome = cmd_train(train, std::cout);
      std::cout << "checkpoints in " << (outcome.output_dir / "checkpoint").string() << '\n';
    } else if (*eval_cmd) {
      finish_mode(eval.overrides, eval_mode);
      if (!eval_data.empty()) eval.data_dir = eval_data;
      if (!eval_out.empty()) eval.out = eval_out;
      if (!eval_pred.empty()) eval.predictions = eval_pred;
      cmd_evaluate(eval, std::cout);
    } else if (*gen_cmd) {
      finish_mode(gen.overrides, gen_mode);
      if (!gen_data.empty()) gen.data_dir = gen_data;
      cmd_generate(gen, std::cout);
    } else if (*insp_cmd) {
      finish_mode(insp.overrides, insp_mode);
      if (!insp_data.empty()) insp.data_dir = insp_data;
      const auto j = cmd_inspect(insp);
      if (insp_out.empty()) {
        std::cout << j.dump(2) << '\n';
      } else {
        std::ofstream(insp_out) << j.dump(2) << '\n';
      }
    } else if (*serve_cmd) {
      finish_mode(serve_over, serve_mode);
      Checkpoint ck = load_checkpoint(serve_ckpt);
      ServiceOptions so;
      if (ck.settings.contains("config")) {
        const RunConfig rc = RunConfig::from_json(ck.settings["config"]);
        so.inference = rc.inference;
        so.limits = rc.limits();
      }
      serve_over.apply(so.inference);
      so.idle_timeout = std::chrono::minutes(idle_minutes);
      ChatService service(*ck.model, ck.vocab, ck.inventory, so);
      std::cout << "listening on http://" << serve_host << ":" << serve_port << '\n' << std::flush;
      if (!run_server(service, serve_host, serve_port)) {
        std::cerr << "error: cannot bind " << serve_host << ":" << serve_port << '\n';
        return 1;
      }
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
