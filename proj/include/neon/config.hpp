#pragma once

// INI run configuration.
//
//   [problem]     id, field_file, resolution
//   [model]       encoder_hidden, latent_dim, decoder, decoder_hidden, fourier,
//                 fourier_features, fourier_scale, epinet_hidden, index_dim,
//                 prior_hidden, prior_scale
//   [train]       steps, batch_size, index_samples, schedule, learning_rate,
//                 decay_rate, decay_steps, warmup_steps
//   [acquisition] kind, delta, beta, spread, samples, q
//   [bo]          budget, n0, n_reset, threads, seeds, surrogate, ensemble_size
//   [output]      directory, record_wall_time
//
// Lists are comma separated. Missing keys take the problem's defaults.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "neon/bo.hpp"

namespace neon {

struct RunConfig {
  std::string problem = "env_model";
  std::filesystem::path field_file;
  // Brusselator grid size; 0 keeps the default.
  Index resolution = 0;

  NeonConfig model;
  TrainConfig train;
  SurrogateKind surrogate = SurrogateKind::kNeon;
  std::size_t ensemble_size = 8;
  AcquisitionSpec acquisition;

  Index budget = 30;
  Index n0 = 0;
  int n_reset = 500;
  unsigned threads = 0;
  std::vector<std::uint64_t> seeds{0};

  std::filesystem::path output_directory = "runs";
  bool record_wall_time = false;

  void validate() const;
  BoSettings settings() const;
  ProblemOptions problem_options() const;

  friend bool operator==(const RunConfig& a, const RunConfig& b);
};

// Defaults for a registered problem id.
RunConfig default_config(std::string_view problem);

RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);
std::string to_ini(const RunConfig& config);

}  // namespace neon
