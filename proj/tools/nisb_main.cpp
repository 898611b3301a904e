#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nisb/cli_io.hpp"
#include "nisb/error.hpp"

namespace {

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size())
      throw nisb::Error(nisb::ErrorCode::invalid_argument, "bad phi value '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw nisb::Error(nisb::ErrorCode::invalid_argument, "empty phi grid");
  return out;
}

nisb::RescaleMode parse_rescale(const std::string& s) {
  return s == "variance" ? nisb::RescaleMode::variance : nisb::RescaleMode::sqrt;
}

nisb::AggregateMode parse_aggregate(const std::string& s) {
  return s == "resample" ? nisb::AggregateMode::resample : nisb::AggregateMode::fixed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Indices of non-ignorable selection bias for regression coefficients"};
  app.require_subcommand(1);

  std::string phi_text = "0,0.5,1";
  std::string prior_text = "uniform";
  std::string rescale_text = "sqrt";
  std::string aggregate_text;
  std::string kind_text = "auto";
  std::uint64_t seed = 1;
  int draws = nisb::kDefaultDraws;
  std::optional<double> rate;
  std::string out_dir;
  bool print_json = false;
  nisb::io::AnalysisRequest req;

  auto* analyze = app.add_subcommand("analyze", "Bias indices for one selected sample");
  analyze->add_option("--data", req.selected_data, "Selected-sample microdata (CSV)")->required()->check(CLI::ExistingFile);
  analyze->add_option("--summary", req.nonselected_summary, "Non-selected summary statistics (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  analyze->add_option("--y", req.roles.y, "Outcome column")->required();
  analyze->add_option("--z", req.roles.z, "Predictor columns")->delimiter(',');
  analyze->add_option("--a", req.roles.a, "Auxiliary columns")->required()->delimiter(',');
  analyze->add_option("--ignore", req.roles.ignore, "Columns to ignore")->delimiter(',');
  analyze->add_option("--outcome-kind", kind_text, "auto, continuous or binary")
      ->check(CLI::IsMember({"auto", "continuous", "binary"}));
  analyze->add_option("--phi", phi_text, "Comma-separated phi grid");
  analyze->add_option("--prior", prior_text, "uniform, discrete or point=V");
  analyze->add_option("--draws", draws, "Posterior draws")->check(CLI::Range(100, 100000000));
  analyze->add_option("--seed", seed, "Random seed");
  analyze->add_option("--rate", rate, "Non-selection rate Pr(S=0)")->check(CLI::Range(0.0, 1.0));
  analyze->add_option("--rescale-mode", rescale_text, "Latent rescaling for binary outcomes")
      ->check(CLI::IsMember({"sqrt", "variance"}));
  analyze->add_option("--aggregate-mode", aggregate_text, "fixed or resample (default: resample when the summary has a count)")
      ->check(CLI::IsMember({"fixed", "resample"}));
  analyze->add_option("--out", out_dir, "Directory for report.json and report.txt");
  analyze->add_flag("--json", print_json, "Print the JSON report instead of the table");

  nisb::io::SimulationRequest sim;
  std::uint64_t sim_seed = sim.seed;
  int sim_reps = 0;
  std::string sim_phi = "0,0.5,1";
  std::string sim_out = "simulation";
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo evaluation over the population/selection grid");
  simulate->add_flag("--full", sim.full, "Full 81 x 24 grid with 1000 replicates");
  simulate->add_option("--reps", sim_reps, "Replicates per cell (default 100, or 1000 with --full)")
      ->check(CLI::PositiveNumber);
  simulate->add_option("--draws", sim.bayes_draws, "Posterior draws per replicate on Bayesian cells (0 = off)")
      ->check(CLI::NonNegativeNumber);
  simulate->add_option("--threads", sim.threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  simulate->add_option("--seed", sim_seed, "Base seed");
  simulate->add_option("--phi", sim_phi, "Comma-separated phi grid");
  simulate->add_flag("--replicates", sim.write_replicates, "Also write per-replicate rows");
  simulate->add_option("--out", sim_out, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*analyze) {
      req.outcome_kind = nisb::io::parse_outcome_kind(kind_text);
      req.phi_grid = parse_grid(phi_text);
      req.prior = nisb::PhiPrior::parse(prior_text);
      req.n_draws = draws;
      req.seed = seed;
      req.nonselection_rate = rate;
      req.rescale_mode = parse_rescale(rescale_text);
      if (!aggregate_text.empty()) req.aggregate_mode = parse_aggregate(aggregate_text);
      const auto report = nisb::io::run_analysis(req);
      const std::string text = nisb::io::render_report(report);
      if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream(std::filesystem::path(out_dir) / "report.json", std::ios::binary) << report.dump(2) << "\n";
        std::ofstream(std::filesystem::path(out_dir) / "report.txt", std::ios::binary) << text;
      }
      std::cout << (print_json ? report.dump(2) + "\n" : text);
      return 0;
    }
    sim.seed = sim_seed;
    if (sim_reps > 0) sim.replicates = sim_reps;
    sim.phi_grid = parse_grid(sim_phi);
    sim.out_dir = sim_out;
    return static_cast<int>(nisb::io::run_simulation(sim, std::cerr));
  } catch (const nisb::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
