// Command-line front end for the QA pre-training pipeline: data synthesis,
// teacher training, relabeling, distillation, task evaluations, and the
// gradient-check harness.

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "qap/gradcheck_harness.hpp"
#include "qap/pipeline.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  long seed = -1;
};

qap::RunConfig effective_config(const CommonArgs& args) {
  qap::RunConfig config = args.config_path.empty()
                              ? qap::RunConfig{}
                              : qap::RunConfig::from_file(args.config_path);
  if (args.seed >= 0)
    config.apply_override("seed", std::to_string(args.seed));
  config.validate();
  return config;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "Run configuration file");
  cmd->add_option("--seed", args.seed, "Override the config seed");
  cmd->add_option("--out", args.out_dir, "Output directory");
}

void print_metrics(const nlohmann::json& j) { std::cout << j.dump(2) << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bi-encoder QA pre-training pipeline"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string generator_override;
  std::string labels_override;
  std::string loss_override;
  std::string prompts_override;

  CLI::App* synth = app.add_subcommand("synth-data", "Generate the corpus and evaluation sets");
  add_common(synth, args);
  synth->add_option("--generator", generator_override, "rule|cloze");

  CLI::App* teach = app.add_subcommand("train-teacher", "Train the cross-encoder teacher");
  add_common(teach, args);

  CLI::App* relabel = app.add_subcommand("relabel", "Relabel generated questions with the teacher");
  add_common(relabel, args);

  CLI::App* distill = app.add_subcommand("distill", "Train the bi-encoder student");
  add_common(distill, args);
  distill->add_option("--labels", labels_override, "teacher|gold|generated");
  distill->add_option("--loss", loss_override, "soft|hard");

  CLI::App* eval_qa = app.add_subcommand("eval-qa", "Evaluate extractive QA (EM/F1)");
  add_common(eval_qa, args);

  CLI::App* eval_para = app.add_subcommand("eval-paraphrase", "Evaluate paraphrase ranking and classification");
  add_common(eval_para, args);

  CLI::App* eval_ner = app.add_subcommand("eval-ner", "Evaluate few-shot NER");
  add_common(eval_ner, args);

  CLI::App* eval_sent = app.add_subcommand("eval-sentiment", "Evaluate zero-shot sentiment");
  add_common(eval_sent, args);
  eval_sent->add_option("--prompts", prompts_override, "Sentiment prompt file");

  CLI::App* gradcheck = app.add_subcommand("grad-check", "Verify gradients of every training objective");
  add_common(gradcheck, args);

  CLI::App* run_all = app.add_subcommand("run-all", "Run the full pipeline end to end");
  add_common(run_all, args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp")
      return app.exit(e);
    std::cerr << e.what() << "\n\n" << app.help() << "\n";
    return 2;
  }

  try {
    if (gradcheck->parsed()) {
      const bool ok = qap::run_gradient_check_harness(std::cout);
      return ok ? 0 : 1;
    }

    qap::RunConfig config = effective_config(args);
    if (!generator_override.empty())
      config.apply_override("generator.kind", generator_override);
    if (!labels_override.empty())
      config.apply_override("distill.labels", labels_override);
    if (!loss_override.empty())
      config.apply_override("distill.loss", loss_override);
    if (!prompts_override.empty())
      config.apply_override("prompts.sentiment", prompts_override);
    config.validate();

    qap::Pipeline pipeline(config, args.out_dir);
    if (synth->parsed()) {
      pipeline.run_synth();
    } else if (teach->parsed()) {
      pipeline.run_teacher();
    } else if (relabel->parsed()) {
      pipeline.run_relabel();
    } else if (distill->parsed()) {
      pipeline.run_distill();
    } else if (eval_qa->parsed()) {
      print_metrics(pipeline.run_eval_qa());
    } else if (eval_para->parsed()) {
      print_metrics(pipeline.run_eval_paraphrase());
    } else if (eval_ner->parsed()) {
      print_metrics(pipeline.run_eval_ner());
    } else if (eval_sent->parsed()) {
      const nlohmann::json metrics = pipeline.run_eval_sentiment();
      std::cout << "mean_accuracy " << metrics["mean_accuracy"].get<double>()
                << "\n";
      for (const auto& p : metrics["per_prompt"])
        std::cout << "prompt " << p["prompt"].get<int>() << " accuracy "
                  << p["accuracy"].get<double>() << "\n";
    } else if (run_all->parsed()) {
      const nlohmann::json report = pipeline.run_all();
      std::cout << "report written to "
                << (std::filesystem::path(args.out_dir) / "report.json").string()
                << "\n";
      print_metrics(report["metrics"]);
    }
  } catch (const qap::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const qap::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const qap::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
