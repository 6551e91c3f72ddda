// oodlab: command-line front end for the single-source robustness lab.

#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "oodlab/binary_io.hpp"
#include "oodlab/errors.hpp"
#include "oodlab/pipeline.hpp"

namespace {

using namespace oodlab;

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("oodlab");
  logger->set_pattern("[%H:%M:%S] [%l] %v");
  spdlog::set_default_logger(logger);
  const char* env = std::getenv("OODLAB_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    if (level != "info") std::cerr << "OODLAB_LOG: unknown level '" << level << "', using info\n";
    spdlog::set_level(spdlog::level::info);
  }
}

struct Overrides {
  std::string config;
  std::string out;
  std::vector<std::uint64_t> seed;
  std::string models;
  int jobs = 0;
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

RunConfig resolve(const Overrides& o) {
  RunConfig c = o.config.empty() ? reference_config() : load_run_config(o.config);
  if (!o.out.empty()) c.output_dir = o.out;
  if (!o.seed.empty()) c.seeds = o.seed;
  if (!o.models.empty()) c.models = split_list(o.models);
  if (o.jobs > 0) c.jobs = o.jobs;
  c.validate();
  return c;
}

void print_summary(const EvalReport& r) {
  std::vector<std::string> cells = {"clean"};
  for (const auto& [name, stats] : r.summary) {
    for (const auto& [cell, st] : stats) {
      if (std::find(cells.begin(), cells.end(), cell) == cells.end()) cells.push_back(cell);
    }
  }
  std::cout << std::left << std::setw(16) << "model";
  for (const auto& c : cells) std::cout << std::setw(18) << c;
  std::cout << '\n' << std::fixed << std::setprecision(3);
  for (const auto& [name, stats] : r.summary) {
    std::cout << std::setw(16) << name;
    for (const auto& c : cells) {
      auto it = stats.find(c);
      std::ostringstream v;
      v << std::fixed << std::setprecision(3);
      if (it != stats.end()) v << it->second.mean << "+-" << it->second.std;
      std::cout << std::setw(18) << (it == stats.end() ? "-" : v.str());
    }
    std::cout << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Single-source adversarial robustness lab for multimodal fusion"};
  app.require_subcommand(1);
  Overrides o;
  auto add_common = [&o](CLI::App* cmd) {
    cmd->add_option("--config", o.config, "Run configuration (JSON); defaults to the reference config")
        ->check(CLI::ExistingFile);
    cmd->add_option("--out", o.out, "Run directory (overrides output_dir)");
    cmd->add_option("--seed", o.seed, "Seed(s) to run instead of the configured list");
    cmd->add_option("--models", o.models, "Comma-separated model subset");
    cmd->add_option("--jobs", o.jobs, "Evaluation worker threads")->check(CLI::PositiveNumber);
  };
  auto* gen = app.add_subcommand("generate-data", "Generate the synthetic datasets");
  auto* train = app.add_subcommand("train", "Train the selected models");
  auto* attack = app.add_subcommand("attack", "Run adaptive attacks and store the results");
  auto* evaluate = app.add_subcommand("evaluate", "Score every model and write report.json / tables.csv");
  auto* reproduce = app.add_subcommand("reproduce", "Run every stage end to end");
  auto* report = app.add_subcommand("report", "Rebuild and print the report of a finished run");
  for (auto* cmd : {gen, train, attack, evaluate, reproduce, report}) add_common(cmd);

  CLI11_PARSE(app, argc, argv);
  configure_logging();

  try {
    Pipeline pipeline(resolve(o));
    if (gen->parsed()) {
      pipeline.generate_data();
    } else if (train->parsed()) {
      pipeline.train();
    } else if (attack->parsed()) {
      pipeline.attack();
    } else if (evaluate->parsed()) {
      pipeline.evaluate();
      const ReportFiles files = pipeline.report();
      std::cout << "report " << files.json.string() << " sha256 " << files.json_sha256 << '\n';
    } else if (reproduce->parsed()) {
      const ReportFiles files = pipeline.reproduce();
      std::cout << "report " << files.json.string() << " sha256 " << files.json_sha256 << '\n';
    } else if (report->parsed()) {
      const ReportFiles files = pipeline.report();
      const auto bytes = read_file_bytes(files.json);
      print_summary(report_from_json(Json::parse(std::string(bytes.begin(), bytes.end()))));
      std::cout << "sha256 " << files.json_sha256 << '\n';
    }
  } catch (const StageError& e) {
    spdlog::error("stage {}: {}", e.stage(), e.what());
    return 3;
  } catch (const ValidationError& e) {
    spdlog::error("invalid input: {}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
