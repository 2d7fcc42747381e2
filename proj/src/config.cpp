#include "neon/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "neon/error.hpp"

namespace neon {
namespace {

namespace pt = boost::property_tree;

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::string key_error(std::string_view key, std::string_view value, std::string_view what) {
  return "config: " + std::string(key) + " = '" + std::string(value) + "' is not " +
         std::string(what);
}

double parse_double(std::string_view key, const std::string& raw) {
  const std::string s = trim(raw);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw ConfigError(key_error(key, raw, "a number"));
  return v;
}

template <class Int>
Int parse_int(std::string_view key, const std::string& raw) {
  const std::string s = trim(raw);
  Int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw ConfigError(key_error(key, raw, "an integer"));
  return v;
}

bool parse_bool(std::string_view key, const std::string& raw) {
  std::string s = trim(raw);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(key_error(key, raw, "a boolean"));
}

template <class Int>
std::vector<Int> parse_list(std::string_view key, const std::string& raw) {
  std::vector<Int> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (trim(item).empty()) continue;
    out.push_back(parse_int<Int>(key, item));
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <class T>
std::string fmt_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

DecoderKind parse_decoder(std::string_view key, const std::string& raw) {
  const std::string s = trim(raw);
  if (s == "split") return DecoderKind::kSplit;
  if (s == "concat") return DecoderKind::kConcat;
  throw ConfigError(key_error(key, raw, "a decoder kind (split, concat)"));
}

std::string_view decoder_name(DecoderKind kind) {
  return kind == DecoderKind::kSplit ? "split" : "concat";
}

nn::LrSchedule::Kind parse_schedule(std::string_view key, const std::string& raw) {
  const std::string s = trim(raw);
  if (s == "exponential") return nn::LrSchedule::Kind::kExponentialDecay;
  if (s == "warmup_cosine") return nn::LrSchedule::Kind::kWarmupCosine;
  throw ConfigError(key_error(key, raw, "a schedule (exponential, warmup_cosine)"));
}

std::string_view schedule_name(nn::LrSchedule::Kind kind) {
  return kind == nn::LrSchedule::Kind::kExponentialDecay ? "exponential" : "warmup_cosine";
}

template <class F>
F wrap(std::string_view key, const std::string& raw, F (*parse)(std::string_view)) {
  try {
    return parse(trim(raw));
  } catch (const std::exception& e) {
    throw ConfigError("config: " + std::string(key) + ": " + e.what());
  }
}

using Setter = void (*)(RunConfig&, std::string_view, const std::string&);

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"problem.field_file",
       [](RunConfig& c, std::string_view, const std::string& v) { c.field_file = trim(v); }},
      {"problem.resolution",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.resolution = parse_int<Index>(k, v);
       }},
      {"model.encoder_hidden",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.model.encoder_hidden = parse_list<int>(k, v);
       }},
      {"model.latent_dim",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.model.latent_dim = parse_int<Index>(k, v);
       }},
      {"model.decoder",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.model.decoder = parse_decoder(k, v);
       }},
      {"model.decoder_hidden",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.model.decoder_hidden = parse_list<int>(k, v);
       }},
      {"model.fourier",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.model.fourier = parse_bool(k, v);
       }},
      {"model.fourier_features",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.model.n_freq = parse_int<Index>(k, v);
       }},
      {"model.fourier_scale",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.model.fourier_scale = parse_double(k, v);
       }},
      {"model.epinet_hidden",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.model.epinet.hidden = parse_list<int>(k, v);
       }},
      {"model.index_dim",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.model.epinet.index_dim = parse_int<Index>(k, v);
       }},
      {"model.prior_hidden",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.model.epinet.prior_hidden = parse_list<int>(k, v);
       }},
      {"model.prior_scale",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.model.epinet.prior_scale = parse_double(k, v);
       }},
      {"train.steps",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.train.steps = parse_int<std::int64_t>(k, v);
       }},
      {"train.batch_size",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.train.batch_size = parse_int<Index>(k, v);
       }},
      {"train.index_samples",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.train.index_samples = parse_int<Index>(k, v);
       }},
      {"train.schedule",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.train.schedule.kind = parse_schedule(k, v);
       }},
      {"train.learning_rate",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.train.schedule.base_rate = parse_double(k, v);
       }},
      {"train.decay_rate",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.train.schedule.decay_rate = parse_double(k, v);
       }},
      {"train.decay_steps",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.train.schedule.decay_steps = parse_int<std::int64_t>(k, v);
       }},
      {"train.warmup_steps",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.train.schedule.warmup_steps = parse_int<std::int64_t>(k, v);
       }},
      {"acquisition.kind",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.acquisition.kind = wrap(k, v, &parse_acquisition_kind);
       }},
      {"acquisition.delta",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.acquisition.delta = parse_double(k, v);
       }},
      {"acquisition.beta",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.acquisition.beta = parse_double(k, v);
       }},
      {"acquisition.spread",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.acquisition.spread = wrap(k, v, &parse_spread);
       }},
      {"acquisition.samples",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.acquisition.samples = parse_int<Index>(k, v);
       }},
      {"acquisition.q",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.acquisition.q = parse_int<Index>(k, v);
       }},
      {"bo.budget",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.budget = parse_int<Index>(k, v);
       }},
      {"bo.n0",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.n0 = parse_int<Index>(k, v);
       }},
      {"bo.n_reset",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.n_reset = parse_int<int>(k, v);
       }},
      {"bo.threads",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.threads = parse_int<unsigned>(k, v);
       }},
      {"bo.seeds",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.seeds = parse_list<std::uint64_t>(k, v);
       }},
      {"bo.surrogate",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.surrogate = wrap(k, v, &parse_surrogate_kind);
       }},
      {"bo.ensemble_size",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.ensemble_size = parse_int<std::size_t>(k, v);
       }},
      {"output.directory",
       [](RunConfig& c, std::string_view, const std::string& v) { c.output_directory = trim(v); }},
      {"output.record_wall_time",
       [](RunConfig& c, std::string_view k, const std::string& v) {
         c.record_wall_time = parse_bool(k, v);
       }},
  };
  return table;
}

}  // namespace

RunConfig default_config(std::string_view problem) {
  const auto& ids = problem_ids();
  if (std::find(ids.begin(), ids.end(), problem) == ids.end()) {
    std::string known;
    for (const auto& id : ids) known += (known.empty() ? "" : ", ") + id;
    throw ConfigError("unknown problem '" + std::string(problem) + "' (known: " + known + ")");
  }
  RunConfig c;
  c.problem = std::string(problem);
  if (problem == "env_model") c.model.epinet.prior_scale = 0.75;
  return c;
}

void RunConfig::validate() const {
  default_config(problem);
  if (seeds.empty()) throw ConfigError("config: at least one seed is required");
  if (budget < 0) throw ConfigError("config: budget must be >= 0");
  if (n_reset < 1) throw ConfigError("config: n_reset must be >= 1");
  if (resolution < 0) throw ConfigError("config: resolution must be >= 0");
  if (output_directory.empty()) throw ConfigError("config: output directory is empty");
  if (acquisition.q > 1 && acquisition.kind != AcquisitionKind::kQLEI)
    throw ConfigError("config: q > 1 requires the qlei acquisition");
  settings().validate();
}

BoSettings RunConfig::settings() const {
  BoSettings s;
  s.model = model;
  s.train = train;
  s.surrogate = surrogate;
  s.ensemble_size = ensemble_size;
  s.acquisition = acquisition;
  s.restarts.n_reset = n_reset;
  s.restarts.threads = threads;
  s.iterations = budget;
  s.n0 = n0;
  return s;
}

ProblemOptions RunConfig::problem_options() const {
  ProblemOptions o;
  o.field_file = field_file;
  if (resolution > 0) {
    o.brusselator.resolution = resolution;
    o.brusselator.noise_lattice = std::min(o.brusselator.noise_lattice, resolution);
  }
  return o;
}

bool operator==(const RunConfig& a, const RunConfig& b) {
  const auto train_eq = [](const TrainConfig& x, const TrainConfig& y) {
    return x.steps == y.steps && x.batch_size == y.batch_size &&
           x.index_samples == y.index_samples && x.schedule == y.schedule && x.seed == y.seed;
  };
  return a.problem == b.problem && a.field_file == b.field_file &&
         a.resolution == b.resolution && a.model == b.model && train_eq(a.train, b.train) &&
         a.surrogate == b.surrogate && a.ensemble_size == b.ensemble_size &&
         a.acquisition == b.acquisition && a.budget == b.budget && a.n0 == b.n0 &&
         a.n_reset == b.n_reset && a.threads == b.threads && a.seeds == b.seeds &&
         a.output_directory == b.output_directory && a.record_wall_time == b.record_wall_time;
}

RunConfig parse_config(std::string_view text) {
  pt::ptree tree;
  try {
    std::istringstream in{std::string(text)};
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config: line " + std::to_string(e.line()) + ": " + e.message());
  }

  const auto problem = tree.get_optional<std::string>("problem.id");
  if (!problem) throw ConfigError("config: [problem] id is required");
  RunConfig config = default_config(trim(*problem));

  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ConfigError("config: key '" + section + "' is outside any section");
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      if (full == "problem.id") continue;
      const auto it = setters().find(full);
      if (it == setters().end()) throw ConfigError("config: unknown key [" + section + "] " + key);
      it->second(config, full, value.data());
    }
  }
  config.validate();
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_ini(const RunConfig& c) {
  std::ostringstream out;
  out << "[problem]\n"
      << "id = " << c.problem << "\n";
  if (!c.field_file.empty()) out << "field_file = " << c.field_file.string() << "\n";
  out << "resolution = " << c.resolution << "\n\n";

  out << "[model]\n"
      << "encoder_hidden = " << fmt_list(c.model.encoder_hidden) << "\n"
      << "latent_dim = " << c.model.latent_dim << "\n"
      << "decoder = " << decoder_name(c.model.decoder) << "\n"
      << "decoder_hidden = " << fmt_list(c.model.decoder_hidden) << "\n"
      << "fourier = " << (c.model.fourier ? "true" : "false") << "\n"
      << "fourier_features = " << c.model.n_freq << "\n"
      << "fourier_scale = " << fmt_double(c.model.fourier_scale) << "\n"
      << "epinet_hidden = " << fmt_list(c.model.epinet.hidden) << "\n"
      << "index_dim = " << c.model.epinet.index_dim << "\n"
      << "prior_hidden = " << fmt_list(c.model.epinet.prior_hidden) << "\n"
      << "prior_scale = " << fmt_double(c.model.epinet.prior_scale) << "\n\n";

  const auto& s = c.train.schedule;
  out << "[train]\n"
      << "steps = " << c.train.steps << "\n"
      << "batch_size = " << c.train.batch_size << "\n"
      << "index_samples = " << c.train.index_samples << "\n"
      << "schedule = " << schedule_name(s.kind) << "\n"
      << "learning_rate = " << fmt_double(s.base_rate) << "\n"
      << "decay_rate = " << fmt_double(s.decay_rate) << "\n"
      << "decay_steps = " << s.decay_steps << "\n"
      << "warmup_steps = " << s.warmup_steps << "\n\n";

  const auto& a = c.acquisition;
  out << "[acquisition]\n"
      << "kind = " << to_string(a.kind) << "\n"
      << "delta = " << fmt_double(a.delta) << "\n"
      << "beta = " << fmt_double(a.beta) << "\n"
      << "spread = " << to_string(a.spread) << "\n"
      << "samples = " << a.samples << "\n"
      << "q = " << a.q << "\n\n";

  out << "[bo]\n"
      << "budget = " << c.budget << "\n"
      << "n0 = " << c.n0 << "\n"
      << "n_reset = " << c.n_reset << "\n"
      << "threads = " << c.threads << "\n"
      << "seeds = " << fmt_list(c.seeds) << "\n"
      << "surrogate = " << to_string(c.surrogate) << "\n"
      << "ensemble_size = " << c.ensemble_size << "\n\n";

  out << "[output]\n"
      << "directory = " << c.output_directory.string() << "\n"
      << "record_wall_time = " << (c.record_wall_time ? "true" : "false") << "\n";
  return out.str();
}

}  // namespace neon
