#pragma once

// Command-line front end: run, train, eval, plot.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "neon/bo.hpp"
#include "neon/config.hpp"

namespace neon {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// `directory / name`, refusing names that would escape the directory.
std::filesystem::path output_file(const std::filesystem::path& directory, const std::string& name);

// One BO run per seed; writes seed_<s>.jsonl and seed_<s>_summary.csv.
int cmd_run(const RunConfig& config, std::ostream& log);

// Fits a surrogate to the problem's file data (or an initial design) per seed
// and writes seed_<s>_model.bin and seed_<s>_loss.csv.
int cmd_train(const RunConfig& config, std::ostream& log);

// Reads rows of u (optional header) and prints u,objective rows.
int cmd_eval(const Problem& problem, std::istream& in, std::ostream& out, std::ostream& err);

struct CurveBand {
  std::vector<int> iterations;
  std::vector<double> mean;
  std::vector<double> half_width;  // 0.2 std across runs (population)
};

// Runs of different lengths are truncated to the shortest, with a warning.
CurveBand aggregate_curves(const std::vector<std::vector<SummaryRow>>& runs, std::ostream* warn);
std::string render_svg(const CurveBand& band, const std::string& title);

int cmd_plot(const std::vector<std::filesystem::path>& inputs, const std::filesystem::path& output,
             std::ostream& err);

}  // namespace neon
