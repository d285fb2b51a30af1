// metairnet: command-line front end for generation, meta-training,
// evaluation and diversity analysis.
//
// Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical failure.

#include <CLI11.hpp>
#include <iostream>

#include "metairnet/commands.hpp"

namespace {

using namespace metairnet;

constexpr int kConfigExit = 1;
constexpr int kDataExit = 2;
constexpr int kNumericalExit = 3;

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string log_level = "info";
};

ExperimentConfig read_config(const GlobalOptions& g) {
  ExperimentConfig c = g.config_path.empty() ? parse_config(nlohmann::json::object()) : load_config(g.config_path);
  if (g.seed) c.seed = *g.seed;
  return c;
}

void print_report(const std::string& label, const EvalReport& r) {
  std::cout << label << ": " << std::fixed << std::setprecision(2) << r.mean_accuracy << " +- " << r.ci95 << " ("
            << r.episode_count << " episodes)\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"One-shot fine-grained classification with generator-based support augmentation"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("-c,--config", g.config_path, "Experiment config (JSON)");
  app.add_option("--seed", g.seed, "Master seed; overrides the config");
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error"}));

  std::string out_path;
  auto* make_toy = app.add_subcommand("make-toy-dataset", "Render the synthetic bird dataset to a PNG tree");
  make_toy->add_option("output", out_path, "Output directory")->required();

  std::string generator_out;
  auto* train_gen = app.add_subcommand("train-toy-generator", "Train a scratch generator on the base classes");
  train_gen->add_option("-o,--output", generator_out, "Checkpoint path (default: generator.checkpoint)");

  auto* finetune = app.add_subcommand("finetune-gan", "Adapt the generator to every image and fill the cache");

  auto* meta_train = app.add_subcommand("meta-train", "Train the classifier (and fusion network) on base classes");

  std::string checkpoint;
  std::string mode_name;
  std::string dump_path;
  auto* evaluate = app.add_subcommand("evaluate", "Test episodes on the novel classes");
  evaluate->add_option("--checkpoint", checkpoint, "Model checkpoint (default: <output_dir>/model.ckpt)");
  evaluate->add_option("--mode", mode_name, "Augmentation mode at test time (default: train.mode)");
  evaluate->add_option("--dump-weights", dump_path, "Write predicted weight grids to this TSV file");

  auto* probes = app.add_subcommand("evaluate-probes", "Frozen-feature probes on the novel classes");
  probes->add_option("--checkpoint", checkpoint, "Model checkpoint");

  auto* sweep = app.add_subcommand("sweep-naug", "Evaluate each n_aug value in eval.naug_values");
  sweep->add_option("--checkpoint", checkpoint, "Model checkpoint");

  std::string embedder_checkpoint;
  std::vector<std::string> set_specs;
  bool no_labels = false;
  auto* analyze = app.add_subcommand("analyze-diversity", "Pairwise-distance and PCA analysis of image sets");
  analyze->add_option("--checkpoint", checkpoint, "Model checkpoint for the embedder and fusion network");
  analyze->add_option("--embedder", embedder_checkpoint, "Checkpoint whose classifier embeds the sets");
  analyze->add_option("--set", set_specs, "name=directory; repeat for each set (default: derive from the cache)");
  analyze->add_flag("--no-labels", no_labels, "Skip the intra/inter-class split");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kConfigExit;
  }
  spdlog::set_level(spdlog::level::from_str(g.log_level));

  try {
    ExperimentConfig config = read_config(g);
    if (make_toy->parsed()) {
      std::cout << "wrote " << cmd_make_toy_dataset(config, out_path) << " images to " << out_path << "\n";
      return 0;
    }
    Session s = open_session(config);
    const std::filesystem::path ckpt = checkpoint.empty() ? s.config.checkpoint_path() : std::filesystem::path(checkpoint);
    if (train_gen->parsed()) {
      const std::string path = generator_out.empty() ? s.config.generator_checkpoint : generator_out;
      if (path.empty()) throw ConfigError("no output path: pass --output or set generator.checkpoint");
      auto report = cmd_train_toy_generator(s, path);
      std::cout << "generator written to " << path << ", final loss " << report.epoch_loss.back() << "\n";
    } else if (finetune->parsed()) {
      auto r = cmd_finetune_gan(s);
      std::cout << "adapted " << r.generated << " images, " << r.skipped << " already cached\n";
    } else if (meta_train->parsed()) {
      auto r = cmd_meta_train(s);
      std::cout << "best epoch " << r.best_epoch << ", validation " << r.val_accuracy[r.best_epoch - 1] << "\n";
    } else if (evaluate->parsed()) {
      EvaluateOptions opt;
      if (!mode_name.empty()) opt.mode = parse_augmentation_mode(mode_name);
      if (!dump_path.empty()) opt.weight_dump = dump_path;
      print_report("accuracy", cmd_evaluate(s, ckpt, opt));
    } else if (probes->parsed()) {
      for (const auto& r : cmd_evaluate_probes(s, ckpt)) print_report(to_string(r.kind), r.report);
    } else if (sweep->parsed()) {
      const auto reports = cmd_sweep_naug(s, ckpt);
      for (std::size_t i = 0; i < reports.size(); ++i) {
        print_report("n_aug=" + std::to_string(s.config.eval.naug_values[i]), reports[i]);
      }
    } else if (analyze->parsed()) {
      AnalyzeOptions opt;
      opt.labels = !no_labels;
      if (std::filesystem::exists(ckpt)) opt.checkpoint = ckpt;
      if (!embedder_checkpoint.empty()) opt.embedder_checkpoint = embedder_checkpoint;
      for (const auto& spec : set_specs) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects name=directory, got '" + spec + "'");
        opt.sets.emplace_back(spec.substr(0, eq), spec.substr(eq + 1));
      }
      const auto report = cmd_analyze_diversity(s, opt);
      for (const auto& a : report.sets) {
        std::cout << a.name << ": mean " << a.stats.mean << " std " << a.stats.stddev << "\n";
      }
      std::cout << report.artifacts.size() << " artifacts in " << s.config.output_dir << "/diversity\n";
    }
    return 0;
  } catch (const ConfigError& e) {
    spdlog::error("configuration error: {}", e.what());
    return kConfigExit;
  } catch (const DataError& e) {
    spdlog::error("data error: {}", e.what());
    return kDataExit;
  } catch (const NumericalError& e) {
    spdlog::error("numerical failure: {}", e.what());
    return kNumericalExit;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kDataExit;
  }
}
