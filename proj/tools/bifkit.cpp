#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "bifkit/archive.hpp"
#include "bifkit/runner.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"bifkit: continuation and bifurcation analysis"};
  app.require_subcommand(1);

  std::string spec_file, run_id, csv_path, run_label, as_problem;
  std::string overrides_file, root = ".";
  app.add_option("--root", root, "archive root directory (default: cwd)");

  auto* cmd_run = app.add_subcommand("run", "execute a run specification");
  cmd_run->add_option("spec", spec_file, "RunSpec JSON file")->required();

  auto* cmd_table = app.add_subcommand("table", "print a run's table");
  cmd_table->add_option("run-id", run_id, "archived run id")->required();

  auto* cmd_export = app.add_subcommand("export", "export branch data as CSV");
  cmd_export->add_option("run-id", run_id)->required();
  cmd_export->add_option("--csv", csv_path, "output file")->required();

  auto* cmd_restart =
      app.add_subcommand("restart", "continue from an archived solution");
  cmd_restart->add_option("label", run_label, "run-id/label")->required();
  cmd_restart->add_option("--as", as_problem, "target problem type")
      ->required();
  cmd_restart->add_option("--spec", overrides_file, "override RunSpec JSON")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*cmd_run) {
      auto spec = bifkit::load_runspec(spec_file);
      auto out = bifkit::run(spec, root);
      std::cout << out.table;
    } else if (*cmd_table) {
      std::cout << bifkit::archive_table(fs::path(root) / run_id);
    } else if (*cmd_export) {
      bifkit::write_file_atomic(csv_path,
                                bifkit::archive_csv(fs::path(root) / run_id));
    } else if (*cmd_restart) {
      nlohmann::json overrides;
      {
        std::ifstream f(overrides_file);
        if (!f) throw std::runtime_error("cannot open " + overrides_file);
        f >> overrides;
      }
      auto spec =
          bifkit::make_restart_spec(root, run_label, as_problem, overrides);
      auto out = bifkit::run(spec, root);
      std::cout << out.table;
    }
  } catch (const bifkit::SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
