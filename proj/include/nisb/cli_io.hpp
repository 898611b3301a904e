#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nisb/bayes.hpp"
#include "nisb/proxy.hpp"
#include "nisb/simstudy.hpp"
#include "nisb/statcore.hpp"

namespace nisb::io {

// ---- CSV (RFC 4180) --------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  /// Physical line on which each row starts (header is line 1).
  std::vector<std::size_t> lines;
};

/// Quoted fields may contain commas, doubled quotes and line breaks. Ragged
/// rows and unterminated quotes are parse errors naming the line.
CsvTable read_csv(std::istream& in, const std::string& source = "<input>");
CsvTable read_csv_file(const std::filesystem::path& path);

std::string csv_field(const std::string& value);
void write_csv_row(std::ostream& out, const std::vector<std::string>& fields);

/// Shortest decimal text that reads back to the same double; "NA" for NaN.
std::string format_number(double v);

// ---- Microdata roles -------------------------------------------------------

enum class OutcomeKind { automatic, continuous, binary };

OutcomeKind parse_outcome_kind(const std::string& text);

/// Columns not named here are ignored (and listed in the report).
struct RoleMapping {
  std::string y;
  std::vector<std::string> z;
  std::vector<std::string> a;
  std::vector<std::string> ignore;
};

struct EncodedSample {
  SelectedSample sample;
  bool binary = false;
  /// "column -> reference level" for every one-hot encoded column.
  std::vector<std::string> encodings;
  std::vector<std::string> ignored_columns;
};

/// Maps columns to roles and converts them to numbers. A Z or A column with
/// any non-numeric entry is one-hot encoded as `column:level` with the
/// lexicographically first level as reference. Rows with empty or "NA"
/// cells make the whole input invalid.
EncodedSample encode_sample(const CsvTable& table, const RoleMapping& roles, OutcomeKind kind);

// ---- Summary files ---------------------------------------------------------

/// Reads {variables, n, means, cov, cov_divisor}. Covariances are converted
/// to the n-1 divisor; "population" input without n has no count.
SummaryStats parse_summary_json(const std::string& text, const std::string& source = "<summary>");
SummaryStats parse_summary_file(const std::filesystem::path& path);

nlohmann::json summary_to_json(const SummaryStats& stats);
void write_summary_file(const std::filesystem::path& path, const SummaryStats& stats);

/// Relative asymmetry accepted (and symmetrized) when reading covariances.
inline constexpr double kSymmetryTolerance = 1e-6;

// ---- analyze ---------------------------------------------------------------

inline constexpr const char* kReportSchema = "nisb.analysis/1";
inline constexpr const char* kManifestSchema = "nisb.simulation/1";

struct AnalysisRequest {
  std::filesystem::path selected_data;
  std::filesystem::path nonselected_summary;
  RoleMapping roles;
  OutcomeKind outcome_kind = OutcomeKind::automatic;
  std::vector<double> phi_grid = kDefaultPhiGrid;
  PhiPrior prior = PhiPrior::uniform();
  int n_draws = kDefaultDraws;
  std::optional<double> nonselection_rate;
  std::uint64_t seed = 1;
  RescaleMode rescale_mode = RescaleMode::sqrt;
  /// Unset: resample when the summary carries a count, fixed otherwise.
  std::optional<AggregateMode> aggregate_mode;
};

/// Full analysis as a JSON report. Throws nisb::Error on unusable input.
nlohmann::json run_analysis(const AnalysisRequest& request);
nlohmann::json analyze_sample(const EncodedSample& data, const SummaryStats& nonsel, const AnalysisRequest& request);

/// Human-readable projection of the report; every number shown is in the JSON.
std::string render_report(const nlohmann::json& report);

// ---- simulate --------------------------------------------------------------

struct SimulationRequest {
  bool full = false;
  /// Defaults to 100 (desk grid) or 1000 (full grid).
  std::optional<int> replicates;
  int bayes_draws = 500;
  int threads = 0;
  std::uint64_t seed = 20240101;
  std::vector<double> phi_grid = kDefaultPhiGrid;
  bool write_replicates = false;
  std::filesystem::path out_dir = "simulation";
};

/// Tidy rows: cell, population and selection parameters, coefficient, phi,
/// metric, value.
void write_results_csv(std::ostream& out, const std::vector<sim::SimResult>& results,
                       const std::vector<double>& phi_grid);
void write_replicates_csv(std::ostream& out, const std::vector<sim::SimResult>& results,
                          const std::vector<double>& phi_grid);

nlohmann::json simulation_manifest(const SimulationRequest& request, int replicates,
                                   const std::vector<sim::SimResult>& results);

/// Exit status of a simulation run.
enum class RunStatus { clean = 0, partial = 2, failed = 3 };
RunStatus run_status(const std::vector<sim::SimResult>& results);

/// Runs the grid and writes results.csv, manifest.json and timing.json into
/// the output directory (plus replicates.csv on request).
RunStatus run_simulation(const SimulationRequest& request, std::ostream& log);

}  // namespace nisb::io
