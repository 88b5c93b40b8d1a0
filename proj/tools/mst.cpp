// mst extract|train|eval|bench --config <file> [options]

#include <iostream>

#include <CLI11.hpp>

#include "mst/mst.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Multiset Transformer over persistence diagrams"};
  app.require_subcommand(1);

  mst::CommandOptions opt;
  std::uint64_t seed = 0;
  std::string checkpoint;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "run configuration file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the configured seed");
    sub->add_flag("--no-mult", opt.no_mult, "drop multiplicities (all ones, no bias)");
    sub->add_flag("--no-cluster", opt.no_cluster, "use the raw diagrams even if Eps is set");
    sub->add_option("--out", opt.out, "report directory")->capture_default_str();
  };

  CLI::App* extract = app.add_subcommand("extract", "compute and cache persistence diagrams");
  CLI::App* train = app.add_subcommand("train", "cross-validated training");
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on run 0 / fold 0");
  CLI::App* bench = app.add_subcommand("bench", "attention block and compact-input timings");
  for (CLI::App* sub : {extract, train, eval, bench}) add_common(sub);
  for (CLI::App* sub : {train, eval}) sub->add_option("--checkpoint", checkpoint, "checkpoint path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  CLI::App* chosen = app.get_subcommands().front();
  if (chosen->count("--seed") > 0) opt.seed = seed;
  if (!checkpoint.empty()) opt.checkpoint = checkpoint;

  try {
    if (chosen == extract) mst::cmd_extract(opt, std::cerr);
    if (chosen == train) mst::cmd_train(opt, std::cerr);
    if (chosen == eval) mst::cmd_eval(opt, std::cerr);
    if (chosen == bench) mst::cmd_bench(opt, std::cerr);
  } catch (const mst::Error& e) {
    std::cerr << "error[" << mst::to_string(e.kind()) << "]: " << e.what() << "\n";
    return mst::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error[io]: " << e.what() << "\n";
    return mst::exit_code(mst::ErrorKind::io);
  }
  return 0;
}
