#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fleetchurn/error.hpp"
#include "fleetchurn/pipeline.hpp"
#include "fleetchurn/toml_lite.hpp"

namespace {

using fleetchurn::StageContext;

struct GlobalOptions {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 1;
  std::string out_dir = "out";
  std::string format = "csv";
};

nlohmann::json load_config_or_empty(const GlobalOptions& g) {
  nlohmann::json cfg = nlohmann::json::object();
  if (!g.config_path.empty()) cfg = fleetchurn::load_config(g.config_path);
  if (g.seed_set) cfg["seed"] = g.seed;
  if (!cfg.contains("seed")) cfg["seed"] = 1;
  cfg["format"] = g.format;
  return cfg;
}

StageContext make_context(const nlohmann::json& cfg, const GlobalOptions& g,
                          const std::string& stage_subdir) {
  StageContext ctx;
  ctx.config = &cfg;
  ctx.seed = cfg.at("seed").get<std::uint64_t>();
  ctx.threads = g.threads;
  ctx.out_dir = std::filesystem::path(g.out_dir) / stage_subdir;
  return ctx;
}

void add_global_options(CLI::App* cmd, GlobalOptions& g) {
  cmd->add_option("--config", g.config_path, "TOML or JSON configuration file");
  cmd->add_option("--seed", g.seed, "Global seed (overrides the config)")
      ->each([&g](const std::string&) { g.seed_set = true; });
  cmd->add_option("--threads", g.threads, "Worker thread cap (does not change results)");
  cmd->add_option("--out-dir", g.out_dir, "Output directory");
  cmd->add_option("--format", g.format, "Report format: csv or json")
      ->check(CLI::IsMember({"csv", "json"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vehicle transaction modeling pipeline"};
  app.require_subcommand(1);

  GlobalOptions g;

  std::string vehicles_path, households_path, data_path, model_path, spec_path, explain_dir;
  std::vector<std::string> model_specs, metrics_paths;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic panel with known truth");
  add_global_options(synth, g);

  auto* label = app.add_subcommand("label", "Derive transaction outcomes from a raw panel");
  add_global_options(label, g);
  label->add_option("--vehicles", vehicles_path, "vehicles.csv")->required();
  label->add_option("--households", households_path, "households.csv")->required();

  auto* train = app.add_subcommand("train", "Train the gradient-boosted tree model");
  add_global_options(train, g);
  train->add_option("--data", data_path, "labeled.csv")->required();

  auto* explain = app.add_subcommand("explain", "Compute attributions and interaction rankings");
  add_global_options(explain, g);
  explain->add_option("--model", model_path, "model.json")->required();
  explain->add_option("--data", data_path, "labeled.csv")->required();

  auto* specgen = app.add_subcommand("specgen", "Derive an improved utility specification");
  add_global_options(specgen, g);
  specgen->add_option("--explain-dir", explain_dir, "explain stage output directory")->required();
  specgen->add_option("--data", data_path, "labeled.csv")->required();

  auto* fit = app.add_subcommand("fit", "Fit a multinomial logit specification");
  add_global_options(fit, g);
  fit->add_option("--data", data_path, "labeled.csv")->required();
  fit->add_option("--spec", spec_path, "spec.json")->required();

  auto* evaluate = app.add_subcommand("evaluate", "Score models on in-sample and holdout rows");
  add_global_options(evaluate, g);
  evaluate->add_option("--data", data_path, "labeled.csv")->required();
  evaluate->add_option("--model", model_specs, "name=path (repeatable)")->required();

  auto* report = app.add_subcommand("report", "Merge metrics files into a comparison table");
  add_global_options(report, g);
  report->add_option("--metrics", metrics_paths, "metrics.json (repeatable)")->required();

  auto* pipeline = app.add_subcommand("pipeline", "Run the full chain on synthetic data");
  add_global_options(pipeline, g);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const nlohmann::json cfg = load_config_or_empty(g);
    if (synth->parsed()) {
      fleetchurn::run_synth_stage(make_context(cfg, g, "synth"));
    } else if (label->parsed()) {
      fleetchurn::run_label_stage(make_context(cfg, g, "label"), vehicles_path, households_path);
    } else if (train->parsed()) {
      fleetchurn::run_train_stage(make_context(cfg, g, "train"), data_path);
    } else if (explain->parsed()) {
      fleetchurn::run_explain_stage(make_context(cfg, g, "explain"), model_path, data_path);
    } else if (specgen->parsed()) {
      fleetchurn::run_specgen_stage(make_context(cfg, g, "specgen"), explain_dir, data_path);
    } else if (fit->parsed()) {
      fleetchurn::run_fit_stage(make_context(cfg, g, "fit"), data_path, spec_path);
    } else if (evaluate->parsed()) {
      std::vector<std::pair<std::string, std::filesystem::path>> models;
      for (const auto& spec : model_specs) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos)
          throw fleetchurn::make_error("Usage", "--model expects name=path, got '" + spec + "'");
        models.emplace_back(spec.substr(0, eq), spec.substr(eq + 1));
      }
      fleetchurn::run_evaluate_stage(make_context(cfg, g, "evaluate"), data_path, models);
    } else if (report->parsed()) {
      std::vector<std::filesystem::path> files(metrics_paths.begin(), metrics_paths.end());
      fleetchurn::run_report_stage(files, std::filesystem::path(g.out_dir), g.format);
    } else if (pipeline->parsed()) {
      StageContext ctx = make_context(cfg, g, "");
      ctx.out_dir = g.out_dir;
      fleetchurn::run_full_pipeline(ctx);
    }
  } catch (const fleetchurn::Error& e) {
    nlohmann::json err;
    err["error"] = e.code();
    err["message"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    nlohmann::json err;
    err["error"] = "Internal";
    err["message"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}
