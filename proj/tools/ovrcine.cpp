// ovrcine: command line front end for the staged pipeline.
//
// Every subcommand maps onto one Pipeline stage (pddl-train and pddl-recon pick
// among the training variants); `run` drives the whole graph.

#include "ovrcine/error.hpp"
#include "ovrcine/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

using namespace ovrcine;

namespace {

struct Common
{
  std::string config;
  std::string workspace;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

void add_common(CLI::App *cmd, Common &c)
{
  cmd->add_option("--config", c.config, "pipeline config (JSON)");
  cmd->add_option("--workspace", c.workspace, "artifact directory");
  cmd->add_option("--seed", c.seed, "override the global seed");
}

PipelineConfig config_of(Common const &c)
{
  PipelineConfig cfg = c.config.empty() ? PipelineConfig{} : load_config(c.config);
  if (c.seed) { cfg.seed = *c.seed; }
  validate(cfg);
  return cfg;
}

Pipeline make_pipeline(PipelineConfig cfg, Common const &c)
{
  auto ws = resolve_workspace(cfg, c.workspace);
  return Pipeline(std::move(cfg), ws, [](std::string const &m) { std::cerr << m << "\n"; });
}

// Upstream stages are brought up to date first; the named stage always reruns.
void run_one(Common const &c, std::string const &stage, PipelineConfig cfg)
{
  Pipeline p = make_pipeline(std::move(cfg), c);
  p.run_with_dependencies(stage);
}

} // namespace

int main(int argc, char **argv)
{
  CLI::App app{"OVR real-time cine reconstruction on synthetic phantoms"};
  app.require_subcommand(1);
  Common common;

  std::vector<std::pair<std::string, std::string>> const simple{
    {"simulate", "generate train/test phantoms and their k-space"},
    {"composite", "form per-frame composite coil images"},
    {"ghost-oracle", "exact ghost/background decomposition and ghost labels"},
    {"ghost-train", "train the ghost estimation network"},
    {"ghost-detect", "estimate ghosts, backgrounds and the ROI mask"},
    {"ovr-subtract", "subtract the outer-volume background from k-space"},
    {"recon-tgrappa", "TGRAPPA reference reconstructions"},
    {"recon-cgsense", "CG-SENSE reconstructions (with and without OVR)"},
    {"pddl-recon", "reconstruct the test series with every trained PD-DL model"},
    {"evaluate", "metrics.csv, summary.json and PNG panels"},
  };
  std::map<CLI::App *, std::string> stage_of;
  for (auto const &[name, help] : simple) {
    auto *cmd = app.add_subcommand(name, help);
    add_common(cmd, common);
    stage_of[cmd] = name;
  }

  auto *train = app.add_subcommand("pddl-train", "train an unrolled PD-DL network with SSDU");
  add_common(train, common);
  bool masked = false, full = false, baseline = false;
  std::optional<double> lambda;
  auto *opt_masked = train->add_flag("--masked-maps", masked, "ROI-masked maps on OVR k-space");
  auto *opt_full = train->add_flag("--full-maps", full, "full maps on OVR k-space");
  auto *opt_base = train->add_flag("--baseline", baseline, "full maps on raw k-space (no OVR)");
  opt_masked->excludes(opt_full)->excludes(opt_base);
  opt_full->excludes(opt_base);
  train->add_option("--consistency", lambda, "weight of the masked-consistency term (0 = naive)")
    ->check(CLI::NonNegativeNumber)
    ->needs(opt_full);

  auto *run = app.add_subcommand("run", "run the full pipeline, reusing current stages");
  add_common(run, common);
  std::string only;
  run->add_option("--stage", only, "regenerate only this stage")
    ->check(CLI::IsMember(stage_names()));
  run->add_flag("--force", common.force, "rerun every stage");

  try {
    app.parse(argc, argv);
  } catch (CLI::ParseError const &e) {
    int const rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    PipelineConfig cfg = config_of(common);
    for (auto const &[cmd, stage] : stage_of) {
      if (cmd->parsed()) { run_one(common, stage, cfg); }
    }
    if (train->parsed()) {
      if (!masked && !full && !baseline) { throw ConfigError("pddl-train needs --masked-maps, --full-maps or --baseline"); }
      std::string stage = "pddl-train-masked";
      if (baseline) { stage = "pddl-train-baseline"; }
      if (full) {
        if (lambda) { cfg.pddl.train.lambda = *lambda; }
        stage = cfg.pddl.train.lambda == 0.0 ? "pddl-train-naive" : "pddl-train-full";
      }
      run_one(common, stage, cfg);
    }
    if (run->parsed()) {
      Pipeline p = make_pipeline(cfg, common);
      if (only.empty()) {
        p.run_all(common.force);
      } else {
        p.run_with_dependencies(only);
      }
    }
  } catch (ConfigError const &e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (NumericalError const &e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (StageError const &e) {
    std::cerr << "stage failure: " << e.what() << "\n";
    return 4;
  } catch (std::exception const &e) {
    std::cerr << "stage failure: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
