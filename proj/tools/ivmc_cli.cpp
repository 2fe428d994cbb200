// Command-line front end for the manipulation pipeline: demonstration
// generation, policy training, threshold calibration, foresight distillation,
// paired evaluation, and reporting. Every stage is deterministic given
// --seed and records its artifacts in a per-run manifest.

#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "ivmc/harness/pipeline.hpp"

using namespace ivmc;
using namespace ivmc::harness;

namespace {

int run_selftest() {
  int failures = 0;
  auto check = [&](const char* name, bool ok) {
    std::printf("%-44s %s\n", name, ok ? "ok" : "FAIL");
    failures += ok ? 0 : 1;
  };

  // calibration transform on a unit vector
  {
    const auto t = unc::transform_action({1.0, 0.0, 0.0}, 0.3);
    check("action transform, unit input",
          std::abs(t[0] - 0.3) < 1e-12 && std::abs(t[1] - 0.7) < 1e-12 &&
              t[2] == 0.0 && t[3] == 0.0);
    const auto z = unc::transform_action({0.0, 0.0, 0.0}, 0.3);
    check("action transform, degenerate input",
          z[0] == 0.0 && z[1] == 0.0 && z[2] == 0.0 && z[3] == 0.0);
  }

  // spread of two samples: unbiased trace
  {
    unc::ActionSampleSet set;
    policy::HeadOutputs a, b;
    a.delta_ee = {1.0, 0.0, 0.0};
    b.delta_ee = {-1.0, 0.0, 0.0};
    a.grp_logits = b.grp_logits = {0.0, 0.0, 0.0};
    a.q_obj = b.q_obj = a.q_ee = b.q_ee = {0.0, 0.0, 0.0};
    set.samples = {a, b};
    const double u = unc::uncertainty_from_samples(set, 0.0);
    check("two-sample spread", std::abs(u - 2.0) < 1e-12);
  }

  // threshold scan on the canonical four-episode example
  {
    std::vector<unc::ValidationRecord> rec = {
        {0, 1.0, true}, {1, 2.0, true}, {2, 3.0, false}, {3, 4.0, false}};
    const auto th = unc::pick_threshold(rec);
    check("threshold scan worked example",
          !th.degenerate && th.i_star == 2 && std::abs(th.threshold - 2.0) < 1e-12);
  }

  // recovery gate: strict backoff and window comparisons
  {
    recovery::ControllerState cs;
    recovery::ControllerConfig cfg;
    cfg.mode = recovery::Mode::Rand;
    cfg.threshold = 1.0;
    cs.trace.push(2.0);
    cs.tick = 40;
    const bool closed = recovery::should_recover(cs, cfg);
    cs.tick = 41;
    const bool open = recovery::should_recover(cs, cfg);
    check("recovery gate strictness", !closed && open);
  }

  // statistics used by the report
  check("standard error at p=0.5, n=100",
        std::abs(se_percent(0.5, 100) - 5.0) < 1e-12);
  check("spearman of a monotone series",
        std::abs(spearman({1, 2, 3}, {2, 4, 8}) - 1.0) < 1e-12);

  std::printf("%s\n", failures == 0 ? "selftest passed" : "selftest FAILED");
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"introspective visuomotor control pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "run";
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  app.add_option("--config", config_path, "flat key = value configuration file");
  app.add_option("--seed", seed, "root seed for the stage");
  app.add_option("--out", out_dir, "run directory for artifacts and the manifest");
  app.add_option("--workers", workers, "episode-level worker threads")
      ->check(CLI::PositiveNumber);

  auto* c_demos = app.add_subcommand("gen-demos", "generate expert demonstrations");
  auto* c_train = app.add_subcommand("train", "behavioural cloning on the demos");
  auto* c_thresh =
      app.add_subcommand("pick-threshold", "calibrate the failure-detection threshold");
  auto* c_collect =
      app.add_subcommand("collect-foresight", "distill per-action uncertainty targets");
  auto* c_ftrain = app.add_subcommand("train-foresight", "fit the uncertainty scorer");
  auto* c_eval = app.add_subcommand("evaluate", "paired evaluation across control modes");
  auto* c_report = app.add_subcommand("report", "summary tables from stored artifacts");
  auto* c_self = app.add_subcommand("selftest", "quick built-in consistency checks");
  for (auto* sub : {c_demos, c_train, c_thresh, c_collect, c_ftrain, c_eval, c_report,
                    c_self})
    sub->fallthrough();  // global flags may follow the subcommand

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_self->parsed()) return run_selftest();

    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    cfg.seed = seed;
    cfg.out = out_dir;
    cfg.workers = workers;

    if (c_demos->parsed()) {
      const auto ds = cmd_gen_demos(cfg);
      std::printf("wrote %zu demonstrations to %s/%s\n", ds.records.size(),
                  cfg.out.c_str(), kDemoFile);
    } else if (c_train->parsed()) {
      const auto res = cmd_train(cfg);
      std::printf("trained %zu epochs, final validation loss %.6f\n",
                  res.curves.size(), res.final_val_loss);
    } else if (c_thresh->parsed()) {
      const auto th = cmd_pick_threshold(cfg);
      if (th.degenerate)
        std::printf(
            "warning: validation outcomes are one-sided; threshold disabled "
            "(set to infinity)\n");
      else
        std::printf("threshold %.6f at scan index %zu (base success rate %.3f)\n",
                    th.threshold, th.i_star, th.r_bar);
    } else if (c_collect->parsed()) {
      const auto ds = cmd_collect_foresight(cfg);
      std::printf("collected %zu uncertainty samples from %zu episodes\n",
                  ds.samples.size(), ds.header.count);
    } else if (c_ftrain->parsed()) {
      const auto res = cmd_train_foresight(cfg);
      std::printf("foresight fit: held-out R^2 %.4f, mse %.6g (%zu train / %zu val)\n",
                  res.r_squared, res.held_out_mse, res.n_train, res.n_val);
    } else if (c_eval->parsed()) {
      const auto rep = cmd_evaluate(cfg);
      for (const auto& mr : rep.modes)
        std::printf("%-8s task %5.1f%%  reach %5.1f%%  (n=%zu)\n", mr.mode.c_str(),
                    100.0 * mr.rate(&EpisodeSummary::task),
                    100.0 * mr.rate(&EpisodeSummary::reach), mr.episodes.size());
    } else if (c_report->parsed()) {
      const auto rr = cmd_report(cfg);
      std::fputs(rr.text.c_str(), stdout);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
