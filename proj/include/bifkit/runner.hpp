#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bifkit/contin.hpp"

namespace bifkit {

struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Display scaling for one parameter, e.g. lambda = 1000 eps.
struct ParamScale {
  std::string display;
  double factor = 1.0;
};

/// A parsed, validated run specification. Unknown keys are rejected.
struct RunSpec {
  std::string output;
  std::string model;
  std::map<std::string, double> params;  // may be partial when restarting
  std::map<std::string, ParamScale> scales;

  std::string problem;  // ep sn hopf dh po po_sn po_pd po_tr po_fixT
                        // eqv_hopf symbreak
  std::vector<std::string> free_names;
  std::vector<std::pair<std::string, double>> pins;  // "y=2" entries

  // start: exactly one of state / restart / from_hopf
  std::vector<double> start_state;
  std::string restart;    // "run-id/label"
  std::string from_hopf;  // "run-id/label" -> small-amplitude orbit starter

  std::string symmetry;  // cycle notation, e.g. "(1 2 4 3)_4"
  std::vector<double> symmetry_times;

  int mesh_L = 10;
  int mesh_ndeg = 4;
  bool mesh_adapt = true;
  double mesh_tol = 1e-4;
  int mesh_L_min = 5;
  int mesh_L_max = 400;

  double po_radius = -1.0;  // from_hopf starter radius (<0: default)
  int amp_coord = 0;        // coordinate used for the amplitude column
  std::optional<double> fixed_T;

  std::map<std::string, std::vector<double>> uz;  // column -> UZ values
  double ncs_threshold = -0.05;
  std::optional<bool> slowpoint_on, floquet_on, bp_on;
  std::string fold;        // column name; "" = kind default, "none" = off
  std::string fold_label;  // "" = kind default
  // amplitude collapse stop: unset = kind default ("auto" for from_hopf)
  std::optional<double> hb_stop;
  bool hb_stop_auto = false;
  bool hb_stop_off = false;
  std::map<std::string, std::pair<std::optional<double>, std::optional<double>>>
      bounds;

  ContinuationSettings settings;
  std::vector<std::string> columns;  // empty = kind default

  nlohmann::json raw;
};

RunSpec parse_runspec(const nlohmann::json& j);
RunSpec load_runspec(const std::filesystem::path& file);

struct RunOutcome {
  Branch branch;
  std::vector<std::string> columns;
  std::string table;
  std::filesystem::path dir;
};

/// Executes the spec and writes the archive under root/<output>/:
/// runspec.json, branch.json, sol_<LABEL>.json per labeled event, table.txt.
RunOutcome run(const RunSpec& spec, const std::filesystem::path& root = ".");

/// Rendered table.txt of an existing archive.
std::string archive_table(const std::filesystem::path& run_dir);

/// RFC-4180 CSV over all accepted points of an existing archive.
std::string archive_csv(const std::filesystem::path& run_dir);

/// Builds a restart RunSpec: overrides merged with metadata of the archived
/// solution `run_label` ("run-id/<label>"), targeting problem `as_problem`.
RunSpec make_restart_spec(const std::filesystem::path& root,
                          const std::string& run_label,
                          const std::string& as_problem,
                          const nlohmann::json& overrides);

}  // namespace bifkit
