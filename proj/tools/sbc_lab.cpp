#include <CLI11.hpp>

#include <iostream>

#include <sbc/cli.hpp>

namespace cli = sbc::cli;

namespace {

struct Options {
  std::string config, out, precision;
  int threads = 0;
};

int run_kind(const std::string& kind, const Options& o) {
  cli::ExperimentConfig cfg;
  try {
    std::ifstream in(o.config);
    if (!in) throw cli::ConfigError("<file>", "cannot open " + o.config);
    cli::json j;
    try {
      j = cli::json::parse(in);
    } catch (const cli::json::parse_error& e) {
      throw cli::ConfigError("<file>", std::string("invalid JSON: ") + e.what());
    }
    if (j.is_object() && j.contains("kind") && j["kind"] != kind)
      throw cli::ConfigError("kind", "config is for '" + j["kind"].dump() + "', not '" + kind + "'");
    if (j.is_object()) j["kind"] = kind;
    cfg = cli::from_json(j);
    if (!o.precision.empty()) cfg.precision = o.precision;
    if (o.threads > 0) cfg.threads = o.threads;
    if (!o.out.empty()) cfg.out = o.out;
  } catch (const cli::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return cli::kConfigError;
  }
  try {
    auto r = cli::run(cfg, cfg.out);
    for (const auto& f : r.files) std::cout << "wrote " << f << "\n";
    std::cout << r.summary.dump(2) << "\n";
    return r.exit_code;
  } catch (const cli::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return cli::kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "experiment failed: " << e.what() << "\n";
    return cli::kTotalFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Numerical lab for the planar four-body simultaneous binary collision"};
  app.require_subcommand(1);
  Options opt;
  std::string chosen;
  for (const auto& kind : cli::kinds()) {
    auto* sub = app.add_subcommand(kind, "run a " + kind + " experiment");
    sub->add_option("--config", opt.config, "experiment config (JSON)")->required();
    sub->add_option("--out", opt.out, "output directory (overrides the config)");
    sub->add_option("--precision", opt.precision, "standard or extended")->check(CLI::IsMember({"standard", "extended"}));
    sub->add_option("--threads", opt.threads, "worker threads")->check(CLI::PositiveNumber);
    sub->callback([&chosen, kind] { chosen = kind; });
  }
  std::string preset_out;
  auto* list = app.add_subcommand("list-presets", "print the preset catalogue");
  list->add_option("--out", preset_out, "also write each preset as <dir>/<name>.json");
  list->callback([&chosen] { chosen = "list-presets"; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : cli::kConfigError;
  }

  if (chosen == "list-presets") {
    cli::json cat = cli::json::array();
    for (const auto& p : cli::presets()) {
      cat.push_back({{"name", p.name}, {"kind", p.config.kind}, {"description", p.description}});
      if (!preset_out.empty()) {
        std::filesystem::create_directories(preset_out);
        std::ofstream f(std::filesystem::path(preset_out) / (p.name + ".json"));
        f << cli::to_json(p.config).dump(2) << "\n";
      }
    }
    std::cout << cli::json({{"schema_version", cli::kSchemaVersion}, {"presets", cat}}).dump(2) << "\n";
    return cli::kOk;
  }
  return run_kind(chosen, opt);
}
