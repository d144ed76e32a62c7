#include <CLI11.hpp>
#include <iostream>
#include <map>

#include "dacl/eval.hpp"
#include "dacl/pipeline.hpp"

// exit codes: 0 success, 1 usage, 2 data problems, 3 numeric failure
int main(int argc, char** argv) {
  using namespace dacl;
  CLI::App app{"two-stage unsupervised domain adaptation on procedural scenes"};

  auto* gen = app.add_subcommand("gen-data", "write a two-domain dataset");
  std::string gen_out;
  uint64_t gen_seed = 1;
  int64_t gen_train = 0, gen_test = 0;
  gen->add_option("--out", gen_out, "dataset directory")->required();
  gen->add_option("--seed", gen_seed, "master seed (default 1)");
  gen->add_option("--train", gen_train, "training scenes per domain")->required();
  gen->add_option("--test", gen_test, "test scenes per domain")->required();

  std::map<std::string, std::pair<std::string, std::string>> train_args;
  for (const char* verb : {"train-style", "train-contrastive", "train-task"}) {
    auto* t = app.add_subcommand(verb, "run one training stage");
    auto& slot = train_args[verb];
    t->add_option("--config", slot.first, "config file")->required();
    t->add_option("--resume", slot.second, "checkpoint to continue from");
  }

  auto* ev = app.add_subcommand("eval", "score a task checkpoint on the target test split");
  std::string ev_task, ev_ckpt, ev_data, ev_out;
  double ev_cap = 80.0;
  bool ev_dump = false;
  ev->add_option("--task", ev_task, "depth or seg")->required();
  ev->add_option("--ckpt", ev_ckpt, "task checkpoint")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--cap", ev_cap, "depth cap in meters, 50 or 80")
      ->check(CLI::IsMember({50.0, 80.0}));
  ev->add_option("--out", ev_out, "metrics report to write")->required();
  ev->add_flag("--dump-images", ev_dump, "also write <out>.images/ prediction panels");

  auto* rp = app.add_subcommand("report", "render a metrics table");
  std::string rp_metrics, rp_baseline;
  rp->add_option("--metrics", rp_metrics, "metrics report")->required();
  rp->add_option("--baseline", rp_baseline, "baseline report for comparison columns");

  app.require_subcommand(1);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;  // fold CLI11's error-code zoo into the usage code
  }

  try {
    if (gen->parsed()) {
      write_dataset(gen_out, gen_seed, gen_train, gen_test);
      std::cerr << "wrote dataset to " << gen_out << "\n";
    } else if (app.got_subcommand("train-style")) {
      const auto& [cfg_path, resume] = train_args["train-style"];
      train_style(load_config(cfg_path), &std::cout, resume);
    } else if (app.got_subcommand("train-contrastive")) {
      const auto& [cfg_path, resume] = train_args["train-contrastive"];
      train_contrastive(load_config(cfg_path), &std::cout, resume);
    } else if (app.got_subcommand("train-task")) {
      const auto& [cfg_path, resume] = train_args["train-task"];
      train_task(load_config(cfg_path), &std::cout, resume);
    } else if (ev->parsed()) {
      auto r = evaluate(task_from_name(ev_task), ev_ckpt, ev_data, "test", ev_cap,
                        ev_dump ? ev_out + ".images" : std::string());
      save_report(ev_out, r);
      std::cerr << "wrote metrics to " << ev_out << "\n";
    } else if (rp->parsed()) {
      auto ours = load_report(rp_metrics);
      if (rp_baseline.empty()) {
        std::cout << render_report(ours, nullptr);
      } else {
        auto base = load_report(rp_baseline);
        std::cout << render_report(ours, &base);
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {  // data, contract, dimension: broken inputs/artifacts
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
