// Command-line front end: train, eval, generate, inspect, make-synthetic.
//
// Every config key is also a flag (`--optim.lr 3e-4`). Precedence, lowest to
// highest: built-in defaults, the checkpoint's stored config (eval and
// generate), the --config file, flags.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ukan/ukan.hpp"

namespace fs = std::filesystem;
using ukan::TrainConfig;

namespace {

struct CommandArgs {
  std::string config_file;
  std::map<std::string, std::string> values;  // key -> flag text
  std::vector<std::pair<std::string, CLI::Option*>> options;
};

void add_config_flags(CLI::App* cmd, CommandArgs& args) {
  cmd->add_option("-c,--config", args.config_file, "Config file ([section] key = value)");
  for (const auto& k : TrainConfig::keys()) {
    auto* opt = cmd->add_option("--" + k.name, args.values[k.name], k.help);
    args.options.emplace_back(k.name, opt);
  }
}

// Short aliases for the keys used most on the command line.
void add_alias(CLI::App* cmd, CommandArgs& args, const std::string& flag, const std::string& key,
               const std::string& help) {
  auto* opt = cmd->add_option(flag, args.values["alias:" + key], help);
  args.options.emplace_back("alias:" + key, opt);
}

void apply_file_and_flags(TrainConfig& cfg, const CommandArgs& args) {
  if (!args.config_file.empty()) cfg.load_file(args.config_file);
  for (const auto& [name, opt] : args.options) {
    if (opt->count() == 0) continue;
    const auto key = name.rfind("alias:", 0) == 0 ? name.substr(6) : name;
    cfg.set(key, args.values.at(name));
  }
}

TrainConfig build_config(const CommandArgs& args, bool from_checkpoint) {
  TrainConfig cfg;
  apply_file_and_flags(cfg, args);
  if (!from_checkpoint) return cfg;
  TrainConfig probe = cfg;
  probe.resolve();
  if (!fs::exists(probe.run.checkpoint)) return cfg;
  const auto ck = ukan::Checkpoint::load(probe.run.checkpoint);
  TrainConfig base;
  base.load_text(ck.meta_at("config"), probe.run.checkpoint + " (stored config)");
  // The stored paths belong to the training run; only model and data
  // settings are inherited unless overridden below.
  base.run.checkpoint = probe.run.checkpoint;
  base.run.resume.clear();
  base.generate = TrainConfig{}.generate;
  base.eval = TrainConfig{}.eval;
  apply_file_and_flags(base, args);
  return base;
}

template <class F>
void dispatch_dtype(const TrainConfig& cfg, F&& f) {
  if (cfg.run.dtype == "f64") {
    f(double{});
  } else {
    f(float{});
  }
}

int cmd_train(const CommandArgs& args) {
  auto cfg = build_config(args, false);
  cfg.resolve();
  dispatch_dtype(cfg, [&](auto tag) {
    using T = decltype(tag);
    ukan::Trainer<T> trainer(cfg, &std::cerr);
    trainer.run();
    const auto& h = trainer.history();
    if (!h.empty()) {
      std::cout << "epochs\t" << trainer.epochs_done() << "\nsteps\t" << trainer.steps_done()
                << "\nfinal_train_loss\t" << ukan::detail::format_g17(h.back().train_loss) << '\n';
      if (!cfg.diffuse())
        std::cout << "final_val_iou\t" << ukan::detail::format_g17(h.back().val_iou) << '\n';
    }
    std::cout << "output_dir\t" << trainer.output_dir().string() << '\n';
  });
  return 0;
}

int cmd_eval(const CommandArgs& args) {
  auto cfg = build_config(args, true);
  cfg.resolve();
  dispatch_dtype(cfg, [&](auto tag) {
    using T = decltype(tag);
    auto r = ukan::evaluate_checkpoint<T>(cfg, &std::cerr);
    std::cout << "split\t" << cfg.eval.split << "\nimages\t" << r.ids.size() << "\niou\t"
              << ukan::detail::format_g17(r.metrics.mean_iou) << "\nf1\t"
              << ukan::detail::format_g17(r.metrics.mean_f1) << '\n';
  });
  return 0;
}

int cmd_generate(const CommandArgs& args) {
  auto cfg = build_config(args, true);
  cfg.resolve();
  dispatch_dtype(cfg, [&](auto tag) {
    using T = decltype(tag);
    auto files = ukan::generate_samples<T>(cfg, &std::cerr);
    std::cout << "generated\t" << files.size() << "\nout_dir\t" << cfg.generate.out_dir << '\n';
  });
  return 0;
}

int cmd_inspect(const CommandArgs& args) {
  auto cfg = build_config(args, false);
  cfg.resolve();
  dispatch_dtype(cfg, [&](auto tag) {
    using T = decltype(tag);
    auto model = ukan::UKan<T>::init(cfg.model_config(), cfg.run.seed);
    const auto stats = ukan::count_params_flops(model, cfg.data.height, cfg.data.width);
    std::map<std::string, std::size_t> groups;
    std::vector<std::string> order;
    for (const auto& p : model.parameters()) {
      if (!p.trainable) continue;
      const auto first = p.name.find('.');
      const auto second = first == std::string::npos ? first : p.name.find('.', first + 1);
      const auto g = p.name.substr(0, second);
      if (!groups.count(g)) order.push_back(g);
      groups[g] += p.tensor.numel();
    }
    const auto mc = cfg.model_config();
    std::cout << "task\t" << cfg.run.task << "\ninput\t" << mc.in_channels << 'x' << cfg.data.height
              << 'x' << cfg.data.width << "\nblock_kind\t" << cfg.model.block_kind
              << "\nlayers_per_block\t" << cfg.model.layers_per_block << "\nparams\t" << stats.params
              << "\nflops\t" << stats.flops << "\ngflops\t"
              << ukan::detail::format_g17(static_cast<double>(stats.flops) / 1e9) << '\n';
    for (const auto& g : order) std::cout << "params." << g << '\t' << groups[g] << '\n';
  });
  return 0;
}

struct SyntheticArgs {
  std::string kind = "blobs";
  std::string out;
  std::size_t count = 8;
  std::size_t size = 32;
  std::uint64_t seed = 0;
  double split_ratio = 0.8;
};

int cmd_make_synthetic(const SyntheticArgs& a) {
  ukan::data::SyntheticOptions opt{a.count, a.size, a.seed};
  ukan::data::Manifest m;
  if (a.kind == "blobs") {
    m = ukan::data::make_blobs(a.out, opt, a.split_ratio);
  } else if (a.kind == "two-mode") {
    m = ukan::data::make_two_mode(a.out, opt);
  } else {
    throw ukan::ConfigError("make-synthetic: --kind must be blobs or two-mode");
  }
  for (const auto& w : m.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << "images\t" << m.rows.size() << "\ntrain\t" << m.rows_in(ukan::data::Split::train).size()
            << "\nval\t" << m.rows_in(ukan::data::Split::val).size() << "\nmanifest\t"
            << (fs::path(a.out) / "manifest.tsv").string() << '\n';
  return 0;
}

// One line on stderr: `error<TAB>kind=<kind><TAB>message=<text>`.
int report_error(const std::string& kind, const std::string& what, int code) {
  std::string msg = what;
  for (auto& ch : msg)
    if (ch == '\n' || ch == '\t') ch = ' ';
  std::cerr << "error\tkind=" << kind << "\tmessage=" << msg << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  ukan::tune_allocator();
  CLI::App app{"U-KAN segmentation and diffusion toolkit"};
  app.require_subcommand(1);

  CommandArgs train_args, eval_args, gen_args, inspect_args;
  auto* train = app.add_subcommand("train", "Train a model");
  add_config_flags(train, train_args);
  auto* eval = app.add_subcommand("eval", "Evaluate a segmentation checkpoint");
  add_config_flags(eval, eval_args);
  add_alias(eval, eval_args, "--checkpoint", "run.checkpoint", "Checkpoint to evaluate");
  add_alias(eval, eval_args, "--split", "eval.split", "train or val");
  auto* gen = app.add_subcommand("generate", "Sample images from a diffusion checkpoint");
  add_config_flags(gen, gen_args);
  add_alias(gen, gen_args, "--checkpoint", "run.checkpoint", "Diffusion checkpoint");
  add_alias(gen, gen_args, "-n,--num-samples", "generate.num_samples", "Number of images");
  add_alias(gen, gen_args, "--seed", "generate.seed", "Sampling seed");
  add_alias(gen, gen_args, "-o,--out", "generate.out_dir", "Output directory");
  auto* inspect = app.add_subcommand("inspect", "Print parameter and FLOP counts");
  add_config_flags(inspect, inspect_args);
  SyntheticArgs syn;
  auto* make = app.add_subcommand("make-synthetic", "Write a toy dataset");
  make->add_option("--kind", syn.kind, "blobs (segmentation) or two-mode (generation)")
      ->capture_default_str();
  make->add_option("-o,--out", syn.out, "Dataset root")->required();
  make->add_option("--count", syn.count, "Number of images")->capture_default_str();
  make->add_option("--size", syn.size, "Image side length")->capture_default_str();
  make->add_option("--seed", syn.seed, "Generator and split seed")->capture_default_str();
  make->add_option("--split-ratio", syn.split_ratio, "Training fraction (blobs)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what(), 2);
  }

  try {
    if (train->parsed()) return cmd_train(train_args);
    if (eval->parsed()) return cmd_eval(eval_args);
    if (gen->parsed()) return cmd_generate(gen_args);
    if (inspect->parsed()) return cmd_inspect(inspect_args);
    if (make->parsed()) return cmd_make_synthetic(syn);
  } catch (const ukan::ConfigError& e) {
    return report_error("config", e.what(), 2);
  } catch (const ukan::data::DataError& e) {
    return report_error("data", e.what(), 3);
  } catch (const ukan::CheckpointError& e) {
    return report_error("checkpoint", e.what(), 4);
  } catch (const ukan::TrainingError& e) {
    return report_error("training", e.what(), 5);
  } catch (const std::exception& e) {
    return report_error("internal", e.what(), 1);
  }
  return 1;
}
