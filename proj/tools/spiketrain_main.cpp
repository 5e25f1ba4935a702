#include <exception>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "spiketrain/commands.hpp"

// Exit codes:
//   0  success
//   1  usage (bad flags, unknown subcommand)
//   2  configuration or network-spec error
//   3  file format, interchange, or discretization error
//   4  numeric contract violation (shapes, arguments, tape misuse)
//   5  filesystem trouble

namespace {

struct FlagOverrides {
  std::string config;
  std::string out;
  bool has_seed = false;
  std::uint64_t seed = 0;
  bool has_trials = false;
  std::size_t trials = 0;
  bool has_warmup = false;
  std::size_t warmup = 0;
  bool has_unroll = false;
  std::size_t unroll = 0;
  bool has_batch = false;
  std::size_t batch_size = 0;
};

void add_common_flags(CLI::App* cmd, FlagOverrides& fo) {
  cmd->add_option("--config", fo.config, "run configuration file");
  cmd->add_option("--out", fo.out, "output path (overrides config)");
  cmd->add_option("--seed", fo.seed, "rng seed (overrides config)")
      ->each([&fo](const std::string&) { fo.has_seed = true; });
  cmd->add_option("--trials", fo.trials, "measured bench trials")
      ->each([&fo](const std::string&) { fo.has_trials = true; });
  cmd->add_option("--warmup", fo.warmup, "unmeasured bench runs")
      ->each([&fo](const std::string&) { fo.has_warmup = true; });
  cmd->add_option("--unroll", fo.unroll, "time steps fused per block")
      ->each([&fo](const std::string&) { fo.has_unroll = true; });
  cmd->add_option("--batch-size", fo.batch_size, "examples per batch")
      ->each([&fo](const std::string&) { fo.has_batch = true; });
}

spiketrain::RunConfig load_config(const FlagOverrides& fo) {
  spiketrain::RunConfig cfg;
  if (!fo.config.empty()) cfg = spiketrain::read_config(fo.config);
  if (!fo.out.empty()) cfg.out = fo.out;
  if (fo.has_seed) cfg.seed = fo.seed;
  if (fo.has_trials) cfg.trials = fo.trials;
  if (fo.has_warmup) cfg.warmup = fo.warmup;
  if (fo.has_unroll) {
    if (fo.unroll == 0) throw spiketrain::ConfigError("unroll must be >= 1");
    cfg.unroll = fo.unroll;
  }
  if (fo.has_batch) cfg.batch_size = fo.batch_size;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spiketrain: train, package, and exchange spiking networks"};
  app.require_subcommand(1);

  FlagOverrides fo;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic "
                                                "rate-coded dataset");
  CLI::App* train = app.add_subcommand("train", "train a network on a "
                                                "packed container");
  CLI::App* eval = app.add_subcommand("eval", "accuracy of a checkpoint "
                                              "over a container");
  CLI::App* exp = app.add_subcommand("export", "lower a checkpoint to a "
                                               "graph file");
  CLI::App* imp = app.add_subcommand("import", "build a checkpoint from a "
                                               "graph file");
  CLI::App* bench = app.add_subcommand("bench", "timing protocol over batch "
                                                "sizes and unrolls");
  CLI::App* rast = app.add_subcommand("rasterize", "bin an event listing "
                                                   "into a container");
  CLI::App* pack = app.add_subcommand("pack", "pack a raw binary spike "
                                              "tensor into a container");
  for (CLI::App* cmd : {synth, train, eval, exp, imp, bench, rast, pack})
    add_common_flags(cmd, fo);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    const spiketrain::RunConfig cfg = load_config(fo);
    if (synth->parsed()) {
      spiketrain::cmd_synth(cfg, std::cout);
    } else if (train->parsed()) {
      spiketrain::cmd_train(cfg, std::cout);
    } else if (eval->parsed()) {
      spiketrain::cmd_eval(cfg, std::cout);
    } else if (exp->parsed()) {
      spiketrain::cmd_export(cfg, std::cout);
    } else if (imp->parsed()) {
      spiketrain::cmd_import(cfg, std::cout);
    } else if (bench->parsed()) {
      if (cfg.out.empty()) {
        spiketrain::cmd_bench(cfg, std::cout, std::cerr);
      } else {
        std::ofstream csv(cfg.out, std::ios::trunc);
        if (!csv) throw spiketrain::IoError("cannot open for writing: " +
                                            cfg.out);
        spiketrain::cmd_bench(cfg, csv, std::cerr);
        std::cout << "wrote " << cfg.out << "\n";
      }
    } else if (rast->parsed()) {
      spiketrain::cmd_rasterize(cfg, std::cout);
    } else if (pack->parsed()) {
      spiketrain::cmd_pack(cfg, std::cout);
    }
  } catch (const spiketrain::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const spiketrain::SpecError& e) {
    std::cerr << "spec error: " << e.what() << "\n";
    return 2;
  } catch (const spiketrain::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 3;
  } catch (const spiketrain::UnsupportedError& e) {
    std::cerr << "unsupported: " << e.what() << "\n";
    return 3;
  } catch (const spiketrain::DiscretizationError& e) {
    std::cerr << "discretization error: " << e.what() << "\n";
    return 3;
  } catch (const spiketrain::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 5;
  } catch (const spiketrain::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
