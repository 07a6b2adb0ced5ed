// vu: phantom -> segment -> flatten -> sample -> label -> train -> predict -> composite -> eval
#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "vu/error.hpp"
#include "vu/parallel.hpp"
#include "vu/pipeline.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kStageError = 3;

struct Options {
  std::string config;
  std::string out;
  unsigned threads = 0;
  bool verbose = false;
};

void add_common(CLI::App* cmd, Options& opt) {
  cmd->add_option("--config", opt.config, "run configuration (key = value)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", opt.out, "output root; the run goes to <out>/<config hash>");
  cmd->add_option("--threads", opt.threads, "worker cap, 0 = all cores");
  cmd->add_flag("--verbose", opt.verbose, "stage progress on stderr");
}

int run(const std::string& stage, const Options& opt) {
  using namespace vu;
  pipeline::PipelineConfig cfg;
  try {
    cfg = pipeline::load_config(opt.config);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  set_thread_count(opt.threads);
  try {
    const auto root = pipeline::resolve_output_root(opt.out.empty() ? std::nullopt
                                                                    : std::optional<std::filesystem::path>(opt.out));
    pipeline::Runner runner(cfg, root, opt.verbose ? &std::cerr : nullptr);
    if (stage == "pipeline") runner.run_all();
    else runner.run_stage(stage);
    std::cout << runner.run_dir().string() << "\n";
    if (stage == "pipeline" || stage == "eval") {
      const auto& m = runner.manifest()["metrics"];
      if (m.contains("eval") && m["eval"].contains("pixel")) {
        const auto& p = m["eval"]["pixel"];
        std::cout << "pooled dice " << p["dice"].get<double>() << "  fpr " << p["fpr"].get<double>() << "\n";
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << stage << " failed: " << e.what() << "\n";
    return kStageError;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Virtual unwrapping with learned ink detection, on synthetic phantoms"};
  app.require_subcommand(1);
  Options opt;
  std::string chosen;
  for (const auto& name : vu::pipeline::stage_names()) {
    auto* cmd = app.add_subcommand(name, "run the " + name + " stage");
    add_common(cmd, opt);
    cmd->callback([&chosen, name] { chosen = name; });
  }
  auto* all = app.add_subcommand("pipeline", "run every stage in order, skipping the ones already up to date");
  add_common(all, opt);
  all->callback([&chosen] { chosen = "pipeline"; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }
  return run(chosen, opt);
}
