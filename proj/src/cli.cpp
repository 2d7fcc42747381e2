#include "neon/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "neon/checkpoint.hpp"
#include "neon/error.hpp"

namespace neon {
namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw std::runtime_error("cannot create output directory " + dir.string());
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

bool parse_number(std::string s, double& v) {
  const auto first = s.find_first_not_of(" \t\r");
  const auto last = s.find_last_not_of(" \t\r");
  if (first == std::string::npos) return false;
  s = s.substr(first, last - first + 1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return ec == std::errc() && ptr == s.data() + s.size();
}

Dataset training_data(const Problem& problem, const RunConfig& config, std::uint64_t seed) {
  Dataset raw;
  raw.queries = problem.grid;
  raw.inputs.resize(0, problem.domain.dim());
  Matrix inputs;
  if (problem.discrete()) {
    inputs = problem.candidates;
  } else {
    const BoSettings s = config.settings();
    inputs = initial_design(problem.domain, s.initial_points(problem.domain.dim()), seed);
  }
  for (Index i = 0; i < inputs.rows(); ++i) {
    const Vector u = inputs.row(i).transpose();
    raw.add(u, problem.field(u));
  }
  return raw;
}

void write_loss_csv(const fs::path& path, const FitResult& r) {
  auto out = open_output(path);
  out << "step,loss\n";
  for (std::size_t i = 0; i < r.loss_history.size(); ++i)
    out << i << ',' << num(r.loss_history[i]) << '\n';
}

std::vector<SummaryRow> read_summary(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  return read_summary_csv(in);
}

}  // namespace

fs::path output_file(const fs::path& directory, const std::string& name) {
  const fs::path leaf(name);
  if (name.empty() || leaf.has_parent_path() || leaf.is_absolute() || name == "." || name == "..")
    throw ConfigError("output name '" + name + "' must be a plain file name");
  const fs::path base = fs::weakly_canonical(fs::absolute(directory));
  const fs::path target = fs::weakly_canonical(base / leaf);
  if (target.parent_path() != base)
    throw ConfigError("output '" + name + "' would leave " + base.string());
  return target;
}

int cmd_run(const RunConfig& config, std::ostream& log) {
  config.validate();
  const Problem problem = make_problem(config.problem, config.problem_options());
  const BoSettings settings = config.settings();
  ensure_directory(config.output_directory);
  int status = kExitOk;
  for (const std::uint64_t seed : config.seeds) {
    const std::string stem = "seed_" + std::to_string(seed);
    BoHooks hooks;
    hooks.on_record = [&](const RunRecord& r) {
      log << problem.id << " seed " << seed << " iter " << r.iteration << " f " << num(r.objective)
          << " best " << num(r.best_so_far) << '\n';
    };
    const RunLog result = run_bo(problem, settings, seed, hooks);
    {
      auto out = open_output(output_file(config.output_directory, stem + ".jsonl"));
      write_jsonl(out, result);
    }
    {
      auto out = open_output(output_file(config.output_directory, stem + "_summary.csv"));
      write_summary_csv(out, result, config.record_wall_time);
    }
    if (result.error) {
      log << "seed " << seed << " failed at iteration " << result.error_iteration << ": "
          << *result.error << '\n';
      status = kExitRuntime;
    }
  }
  return status;
}

int cmd_train(const RunConfig& config, std::ostream& log) {
  config.validate();
  const Problem problem = make_problem(config.problem, config.problem_options());
  ensure_directory(config.output_directory);
  for (const std::uint64_t seed : config.seeds) {
    const std::string stem = "seed_" + std::to_string(seed);
    const Dataset raw = training_data(problem, config, seed);
    const Normalizer norm = Normalizer::fit(raw, problem.domain, problem.grid_box);
    const Dataset data = norm.normalize(raw);
    TrainConfig train = config.train;
    train.seed = seed;
    FitResult r;
    if (config.surrogate == SurrogateKind::kNeon) {
      NeonModel model = NeonModel::create(config.model, raw.input_dim(), raw.query_dim(),
                                          raw.output_dim(), seed);
      r = fit(model, data, train);
      save_model(output_file(config.output_directory, stem + "_model.bin"), model);
    } else {
      EnsembleEnn ens = EnsembleEnn::create(config.model, raw.input_dim(), raw.query_dim(),
                                            raw.output_dim(), config.ensemble_size, seed);
      r = fit(ens, data, train);
      for (std::size_t i = 0; i < ens.size(); ++i)
        save_param_tree(
            output_file(config.output_directory, stem + "_member_" + std::to_string(i) + ".bin"),
            ens.member(i));
    }
    write_loss_csv(output_file(config.output_directory, stem + "_loss.csv"), r);
    log << problem.id << " seed " << seed << ": " << raw.size() << " instances, final loss "
        << num(r.loss_history.back()) << '\n';
  }
  return kExitOk;
}

int cmd_eval(const Problem& problem, std::istream& in, std::ostream& out, std::ostream& err) {
  const Index d = problem.domain.dim();
  for (Index j = 0; j < d; ++j) out << "u_" << j + 1 << ',';
  out << "objective\n";

  int status = kExitOk;
  std::string line;
  bool first = true;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto cells = split_csv(line);
    Vector u(static_cast<Index>(cells.size()));
    bool numeric = true;
    for (std::size_t i = 0; i < cells.size(); ++i)
      numeric = numeric && parse_number(cells[i], u(static_cast<Index>(i)));
    if (first && !numeric) {
      first = false;
      continue;
    }
    first = false;
    std::string error;
    double f = std::numeric_limits<double>::quiet_NaN();
    if (!numeric) {
      error = "row is not numeric";
    } else if (u.size() != d) {
      error = "expected " + std::to_string(d) + " values, got " + std::to_string(u.size());
    } else if (!problem.domain.contains(u)) {
      error = "u is outside the domain";
    } else {
      try {
        f = problem.evaluate(u);
      } catch (const std::exception& e) {
        error = e.what();
      }
    }
    if (error.empty()) {
      for (Index j = 0; j < d; ++j) out << num(u(j)) << ',';
      out << num(f) << '\n';
    } else {
      out << line << ",error: " << error << '\n';
      err << "line " << line_no << ": " << error << '\n';
      status = kExitRuntime;
    }
  }
  return status;
}

CurveBand aggregate_curves(const std::vector<std::vector<SummaryRow>>& runs, std::ostream* warn) {
  if (runs.empty()) throw ConfigError("plot needs at least one summary");
  std::size_t n = runs.front().size();
  for (const auto& r : runs) n = std::min(n, r.size());
  const bool ragged = std::any_of(runs.begin(), runs.end(),
                                  [n](const auto& r) { return r.size() != n; });
  if (ragged && warn)
    *warn << "warning: runs have different lengths; truncating to " << n << " iterations\n";

  CurveBand band;
  const auto k = static_cast<double>(runs.size());
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (const auto& r : runs) mean += r[i].best_so_far;
    mean /= k;
    double var = 0.0;
    for (const auto& r : runs) var += (r[i].best_so_far - mean) * (r[i].best_so_far - mean);
    band.iterations.push_back(runs.front()[i].iteration);
    band.mean.push_back(mean);
    band.half_width.push_back(0.2 * std::sqrt(var / k));
  }
  return band;
}

std::string render_svg(const CurveBand& band, const std::string& title) {
  constexpr double W = 640, H = 400, L = 70, R = 20, T = 40, B = 50;
  const std::size_t n = band.mean.size();
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (n > 0) {
    x0 = band.iterations.front();
    x1 = band.iterations.back();
    y0 = std::numeric_limits<double>::infinity();
    y1 = -y0;
    for (std::size_t i = 0; i < n; ++i) {
      y0 = std::min(y0, band.mean[i] - band.half_width[i]);
      y1 = std::max(y1, band.mean[i] + band.half_width[i]);
    }
  }
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  const auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << W << ' ' << H << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"14\">"
    << title << "</text>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  s << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">iteration</text>\n";
  s << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" transform=\"rotate(-90 16 "
    << (T + H - B) / 2
    << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">best so far</text>\n";
  for (int t = 0; t <= 4; ++t) {
    const double y = y0 + (y1 - y0) * t / 4.0;
    s << "<text x=\"" << L - 6 << "\" y=\"" << py(y) + 4
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << num(y)
      << "</text>\n";
  }
  if (n > 0) {
    s << "<polygon fill=\"steelblue\" fill-opacity=\"0.25\" stroke=\"none\" points=\"";
    for (std::size_t i = 0; i < n; ++i)
      s << px(band.iterations[i]) << ',' << py(band.mean[i] + band.half_width[i]) << ' ';
    for (std::size_t i = n; i-- > 0;)
      s << px(band.iterations[i]) << ',' << py(band.mean[i] - band.half_width[i]) << ' ';
    s << "\"/>\n";
    s << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < n; ++i) s << px(band.iterations[i]) << ',' << py(band.mean[i]) << ' ';
    s << "\"/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

int cmd_plot(const std::vector<fs::path>& inputs, const fs::path& output, std::ostream& err) {
  std::vector<std::vector<SummaryRow>> runs;
  for (const auto& p : inputs) runs.push_back(read_summary(p));
  const CurveBand band = aggregate_curves(runs, &err);
  std::ofstream out(output, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + output.string());
  out << render_svg(band, "best so far (" + std::to_string(runs.size()) + " runs)");
  return kExitOk;
}

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Composite Bayesian optimisation with NEON surrogates", "neon"};
  app.require_subcommand(1);

  std::string config_path;
  auto* run = app.add_subcommand("run", "Run BO for every seed in a config");
  run->add_option("config", config_path, "INI config")->required();

  auto* train = app.add_subcommand("train", "Fit the surrogate once per seed");
  train->add_option("config", config_path, "INI config")->required();

  std::string problem_id;
  std::string u_csv;
  std::string field_file;
  auto* eval = app.add_subcommand("eval", "Evaluate g(h(u)) for rows of u");
  eval->add_option("problem", problem_id, "Problem id")->required();
  eval->add_option("csv", u_csv, "CSV of u rows ('-' for stdin)")->required();
  eval->add_option("--fields", field_file, "Dataset CSV for file-backed problems");

  std::vector<std::string> csvs;
  std::string svg;
  auto* plot = app.add_subcommand("plot", "Plot best-so-far curves from summary CSVs");
  plot->add_option("csv", csvs, "Summary CSVs")->required();
  plot->add_option("-o,--output", svg, "SVG output")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (run->parsed()) return cmd_run(load_config(config_path), out);
    if (train->parsed()) return cmd_train(load_config(config_path), out);
    if (eval->parsed()) {
      ProblemOptions options;
      options.field_file = field_file;
      const Problem problem = make_problem(problem_id, options);
      if (u_csv == "-") return cmd_eval(problem, std::cin, out, err);
      std::ifstream in(u_csv);
      if (!in) throw ConfigError("cannot read " + u_csv);
      return cmd_eval(problem, in, out, err);
    }
    if (plot->parsed()) {
      std::vector<fs::path> paths(csvs.begin(), csvs.end());
      return cmd_plot(paths, svg, err);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace neon
