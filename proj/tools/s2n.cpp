#include <CLI11.hpp>

#include <iostream>

#include "s2n/cli.hpp"

int main(int argc, char** argv) {
  using namespace s2n;
  CLI::App app{"Waveform-domain cycle-consistent voice conversion toolkit"};
  app.require_subcommand(1);

  TrainOptions train_opt;
  std::string preset, direction = "x2y";
  std::uint64_t seed = 0, iters = 0;
  std::string out;
  auto* train = app.add_subcommand("train", "train both generators and discriminators");
  train->add_option("--config", train_opt.config_path, "YAML run config (omit to use the preset)");
  train->add_option("--preset", preset, "defaults for unset keys")->check(CLI::IsMember({"desk", "paper"}));
  train->add_option("--seed", seed, "override training.seed");
  train->add_option("--iters", iters, "override training.total_iters (schedule keeps its shape)");
  train->add_option("--out", out, "override output_dir");
  train->add_flag("--resume", train_opt.resume, "continue from the newest checkpoint in the output dir");
  train->add_option("--resume-from", train_opt.resume_from, "continue from this checkpoint");
  train->add_option("--stop-after", train_opt.stop_after, "stop once this many iterations are complete");

  ConvertOptions conv_opt;
  auto* convert = app.add_subcommand("convert", "convert one waveform with a trained generator");
  convert->add_option("--checkpoint", conv_opt.checkpoint)->required();
  convert->add_option("--in", conv_opt.input)->required();
  convert->add_option("--out", conv_opt.output)->required();
  convert->add_option("--direction", direction)->check(CLI::IsMember({"x2y", "y2x"}));

  EvaluateOptions eval_opt;
  std::string eval_manifest;
  auto* evaluate = app.add_subcommand("evaluate", "average modulation spectra of two sets and their distance");
  evaluate->add_option("--a", eval_opt.set_a, "WAV files of set A");
  evaluate->add_option("--b", eval_opt.set_b, "WAV files of set B");
  evaluate->add_option("--manifest", eval_manifest, "use a manifest's X rows as A and Y rows as B");
  evaluate->add_option("--k-bins", eval_opt.k_bins, "modulation bins compared")->capture_default_str();
  evaluate->add_option("--out", eval_opt.output_dir, "directory for ms_a.tsv and ms_b.tsv")->capture_default_str();

  std::size_t gradcheck_cases = 100;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  gradcheck->add_option("--cases", gradcheck_cases, "random cases per op")->capture_default_str();

  ToyDomainSpec toy;
  std::string toy_out = "toy";
  auto* gentoy = app.add_subcommand("gentoy", "write the synthetic two-domain corpus");
  gentoy->add_option("--seed", toy.seed)->capture_default_str();
  gentoy->add_option("--utterances", toy.utterances, "per domain")->capture_default_str();
  gentoy->add_option("--seconds", toy.seconds)->capture_default_str();
  gentoy->add_option("--harmonics", toy.harmonics)->capture_default_str();
  gentoy->add_option("--detail-level", toy.detail_level)->capture_default_str();
  gentoy->add_option("--noise-level", toy.noise_level)->capture_default_str();
  gentoy->add_option("--out", toy_out)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;  // --help is a success, anything else a usage error
  }

  retain_tensor_memory();
  const Console con{std::cout, std::cerr, log_level_from_env()};
  if (*train) {
    if (!preset.empty()) train_opt.overrides.preset = parse_preset(preset);
    if (train->count("--seed") != 0) train_opt.overrides.seed = seed;
    if (train->count("--iters") != 0) train_opt.overrides.iters = iters;
    if (!out.empty()) train_opt.overrides.output_dir = out;
    return cmd_train(train_opt, con);
  }
  if (*convert) {
    conv_opt.direction = parse_direction(direction);
    return cmd_convert(conv_opt, con);
  }
  if (*evaluate) {
    if (!eval_manifest.empty()) {
      try {
        eval_opt.set_a = manifest_paths(eval_manifest, Domain::X);
        eval_opt.set_b = manifest_paths(eval_manifest, Domain::Y);
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
      }
    }
    return cmd_evaluate(eval_opt, con);
  }
  if (*gradcheck) return cmd_gradcheck(con, gradcheck_cases);
  return cmd_gentoy(toy, toy_out, con);
}
