#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "neon/cli.hpp"
#include "neon/error.hpp"

using namespace neon;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("neon_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string tiny_config(const fs::path& out, Index budget = 2) {
  std::ostringstream s;
  s << "[problem]\nid = env_model\n"
    << "[model]\nencoder_hidden = 8\nlatent_dim = 4\ndecoder_hidden = 8\nfourier_features = 4\n"
    << "epinet_hidden = 4\nindex_dim = 3\nprior_hidden = 3\n"
    << "[train]\nsteps = 20\nindex_samples = 2\n"
    << "[acquisition]\nkind = lei\ndelta = 0.01\nsamples = 8\n"
    << "[bo]\nbudget = " << budget << "\nn_reset = 3\nseeds = 4, 9\n"
    << "[output]\ndirectory = " << out.string() << "\n";
  return s.str();
}

int run_cli(std::vector<std::string> args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  args.insert(args.begin(), "neon");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return code;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> v;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) v.push_back(l);
  return v;
}

std::vector<SummaryRow> rows_of(std::initializer_list<double> best) {
  std::vector<SummaryRow> rows;
  int t = 0;
  for (double b : best) {
    SummaryRow r;
    r.iteration = t;
    r.points_evaluated = 5 + t;
    r.best_so_far = b;
    r.acquired_f = b;
    rows.push_back(r);
    ++t;
  }
  return rows;
}

}  // namespace

TEST_CASE("problem defaults") {
  const RunConfig env = default_config("env_model");
  CHECK(env.problem == "env_model");
  CHECK(env.model.epinet.prior_scale == 0.75);
  CHECK(env.acquisition.kind == AcquisitionKind::kLEI);
  CHECK(env.n_reset == 500);
  for (const auto& id : {"brusselator", "interferometer_g", "cell_towers_g"})
    CHECK(default_config(id).problem == id);
  CHECK_THROWS_AS(default_config("nope"), ConfigError);
}

TEST_CASE("config round trip") {
  for (const auto& id : problem_ids()) {
    const RunConfig c = default_config(id);
    const RunConfig back = parse_config(to_ini(c));
    CHECK(back == c);
    CHECK(to_ini(back) == to_ini(c));
  }
  RunConfig c = default_config("brusselator");
  c.resolution = 32;
  c.model.decoder = DecoderKind::kConcat;
  c.model.encoder_hidden = {7, 9, 11};
  c.model.fourier_scale = 0.1 + 0.2;
  c.train.schedule.base_rate = 1.0 / 3.0;
  c.train.schedule.kind = nn::LrSchedule::Kind::kWarmupCosine;
  c.train.schedule.warmup_steps = 17;
  c.acquisition.kind = AcquisitionKind::kQLEI;
  c.acquisition.q = 3;
  c.acquisition.delta = 1e-7;
  c.surrogate = SurrogateKind::kEnsemble;
  c.ensemble_size = 5;
  c.seeds = {3, 1, 18446744073709551615ULL};
  c.output_directory = "out dir/x";
  c.record_wall_time = true;
  const RunConfig back = parse_config(to_ini(c));
  CHECK(back == c);
  CHECK(parse_config(to_ini(back)) == back);
}

TEST_CASE("config parse errors") {
  CHECK_THROWS_AS(parse_config("[problem]\nid = env_model\n[bo]\nbudgte = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("budget = 3\n[problem]\nid = env_model\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[problem]\nid = rosenbrock\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[bo]\nbudget = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[problem]\nid = env_model\n[bo]\nseeds =\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[problem]\nid = env_model\n[bo]\nbudget = many\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[problem]\nid = env_model\n[acquisition]\nkind = ucb\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[problem]\nid = env_model\n[model]\ndecoder = zigzag\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[problem]\nid = env_model\n[mystery]\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/neon.ini"), ConfigError);
  const RunConfig c = parse_config("[problem]\nid = env_model\n[bo]\nbudget = 4\n");
  CHECK(c.budget == 4);
  CHECK(c.model.epinet.prior_scale == 0.75);
}

TEST_CASE("output paths stay inside the directory") {
  const fs::path d = "/tmp/neon_out";
  CHECK(output_file(d, "seed_0.jsonl") == d / "seed_0.jsonl");
  CHECK_THROWS_AS(output_file(d, "../escape.csv"), ConfigError);
  CHECK_THROWS_AS(output_file(d, "/etc/passwd"), ConfigError);
  CHECK_THROWS_AS(output_file(d, "a/../../b"), ConfigError);
  CHECK_THROWS_AS(output_file(d, ""), ConfigError);
}

TEST_CASE("run writes n0 + budget records per seed and reruns are byte identical") {
  const fs::path dir = fresh_dir("run");
  const fs::path cfg = dir / "run.ini";
  const fs::path out = dir / "out";
  std::ofstream(cfg) << tiny_config(out);
  REQUIRE(run_cli({"run", cfg.string()}) == kExitOk);
  for (const char* seed : {"4", "9"}) {
    const auto jsonl = lines(slurp(out / ("seed_" + std::string(seed) + ".jsonl")));
    CHECK(jsonl.size() == 8 + 2);
    const auto csv = lines(slurp(out / ("seed_" + std::string(seed) + "_summary.csv")));
    CHECK(csv.size() == 1 + 3);
  }
  const std::string first = slurp(out / "seed_4_summary.csv");
  REQUIRE(run_cli({"run", cfg.string()}) == kExitOk);
  CHECK(slurp(out / "seed_4_summary.csv") == first);

  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    const auto rel = fs::relative(e.path(), dir);
    CHECK(!rel.empty());
    CHECK(rel.begin()->string() != "..");
  }
  std::size_t outputs = 0;
  for (const auto& e : fs::directory_iterator(out)) {
    CHECK(e.path().parent_path() == out);
    ++outputs;
  }
  CHECK(outputs == 4);
}

TEST_CASE("run exit codes") {
  const fs::path dir = fresh_dir("codes");
  const fs::path cfg = dir / "bad.ini";
  std::ofstream(cfg) << "[problem]\nid = not_a_problem\n";
  std::string err;
  CHECK(run_cli({"run", cfg.string()}, nullptr, &err) == kExitUsage);
  CHECK(err.find("not_a_problem") != std::string::npos);
  CHECK(run_cli({"run", (dir / "missing.ini").string()}) == kExitUsage);
  CHECK(run_cli({}) == kExitUsage);
  CHECK(run_cli({"frobnicate"}) == kExitUsage);
  CHECK(run_cli({"--help"}) == kExitOk);

  // A file-backed problem whose file lacks the admissible inputs fails at run time.
  const fs::path fields = dir / "fields.csv";
  std::ofstream(fields) << "id,u_1,y_1,y_2,s_1,s_2\n0,1,0,0,1,0\n";
  std::ofstream(cfg) << "[problem]\nid = cell_towers_g\nfield_file = " << fields.string()
                     << "\n[output]\ndirectory = " << (dir / "o").string() << "\n";
  CHECK(run_cli({"run", cfg.string()}) != kExitOk);
}

TEST_CASE("train writes a model and a loss curve") {
  const fs::path dir = fresh_dir("train");
  const fs::path cfg = dir / "train.ini";
  const fs::path out = dir / "out";
  std::ofstream(cfg) << tiny_config(out);
  REQUIRE(run_cli({"train", cfg.string()}) == kExitOk);
  CHECK(fs::exists(out / "seed_4_model.bin"));
  const auto loss = lines(slurp(out / "seed_9_loss.csv"));
  CHECK(loss.size() == 1 + 20);
  const NeonModel m = load_model(out / "seed_4_model.bin");
  CHECK(m.prior_scale() == 0.75);
}

TEST_CASE("eval at the true environment parameters is zero") {
  std::istringstream in("M,D,L,tau\n10,0.07,1.505,30.1525\n7.5,0.05,1.0,30.1\n");
  std::ostringstream out, err;
  CHECK(cmd_eval(make_problem("env_model"), in, out, err) == kExitOk);
  const auto l = lines(out.str());
  REQUIRE(l.size() == 3);
  CHECK(l[0] == "u_1,u_2,u_3,u_4,objective");
  CHECK(l[1] == "10,0.07,1.505,30.1525,0");
  const double f = std::stod(l[2].substr(l[2].rfind(',') + 1));
  CHECK(f < 0.0);
  CHECK(f == make_problem("env_model").evaluate(Vector{{7.5, 0.05, 1.0, 30.1}}));
}

TEST_CASE("eval of empty input prints the header only") {
  std::istringstream in("");
  std::ostringstream out, err;
  CHECK(cmd_eval(make_problem("env_model"), in, out, err) == kExitOk);
  CHECK(out.str() == "u_1,u_2,u_3,u_4,objective\n");
}

TEST_CASE("eval flags out-of-bounds rows") {
  std::istringstream in("10,0.07,1.505,30.1525\n99,0.07,1.505,30.1525\n10,0.07,1.505\n");
  std::ostringstream out, err;
  CHECK(cmd_eval(make_problem("env_model"), in, out, err) == kExitRuntime);
  const auto l = lines(out.str());
  REQUIRE(l.size() == 4);
  CHECK(l[1] == "10,0.07,1.505,30.1525,0");
  CHECK(l[2].rfind("99,0.07,1.505,30.1525,error:", 0) == 0);
  CHECK(l[3].rfind("10,0.07,1.505,error:", 0) == 0);
  CHECK(err.str().find("line 2") != std::string::npos);
  CHECK(err.str().find("line 3") != std::string::npos);
}

TEST_CASE("eval reproduces the brusselator reference value") {
  const fs::path dir = fresh_dir("eval");
  std::ofstream(dir / "u.csv") << "1,2.5,0.01,0.1\n";
  std::string out;
  REQUIRE(run_cli({"eval", "brusselator", (dir / "u.csv").string()}, &out) == kExitOk);
  const auto l = lines(out);
  REQUIRE(l.size() == 2);
  const double f = std::stod(l[1].substr(l[1].rfind(',') + 1));
  CHECK(f == doctest::Approx(1.2216782084158389).epsilon(1e-9));
}

TEST_CASE("plot band of a single seed and of identical seeds is zero") {
  const auto one = rows_of({-5.0, -3.0, -2.5, -1.0});
  for (const auto& runs : std::vector<std::vector<std::vector<SummaryRow>>>{{one}, {one, one, one}}) {
    const CurveBand b = aggregate_curves(runs, nullptr);
    REQUIRE(b.mean.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(b.half_width[i] == 0.0);
      CHECK(b.mean[i] == one[i].best_so_far);
    }
  }
}

TEST_CASE("plot mean and band spot checks") {
  const std::vector runs{rows_of({-6.0, -4.0, -2.0, -1.0}), rows_of({-3.0, -3.0, -1.0, -0.5}),
                         rows_of({-9.0, -2.0, -0.0, -0.0})};
  const CurveBand b = aggregate_curves(runs, nullptr);
  // Hand averages at iterations 0, 2, 3.
  CHECK(b.mean[0] == doctest::Approx(-6.0));
  CHECK(b.mean[2] == doctest::Approx(-1.0));
  CHECK(b.mean[3] == doctest::Approx(-0.5));
  // Population std at iteration 0: sqrt(((0)^2 + 3^2 + 3^2) / 3) = sqrt(6).
  CHECK(b.half_width[0] == doctest::Approx(0.2 * std::sqrt(6.0)));
  CHECK(b.iterations == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("ragged runs are truncated with a warning") {
  std::ostringstream warn;
  const CurveBand b = aggregate_curves({rows_of({-3.0, -2.0, -1.0}), rows_of({-5.0, -4.0})}, &warn);
  CHECK(b.mean.size() == 2);
  CHECK(b.mean[1] == doctest::Approx(-3.0));
  CHECK(!warn.str().empty());
  CHECK_THROWS(aggregate_curves({}, nullptr));
}

TEST_CASE("plot command writes an svg") {
  const fs::path dir = fresh_dir("plot");
  for (int s = 0; s < 2; ++s) {
    RunLog log;
    log.seed = static_cast<std::uint64_t>(s);
    std::ofstream f(dir / ("s" + std::to_string(s) + ".csv"));
    f << "iteration,points_evaluated,best_so_far,acquired_f,wall_seconds\n"
      << "0,8,-3,-3,0\n1,9,-2,-2,0\n2,10," << -1 - s << ",-1,0\n";
  }
  std::string err;
  REQUIRE(run_cli({"plot", (dir / "s0.csv").string(), (dir / "s1.csv").string(), "-o",
                   (dir / "curve.svg").string()},
                  nullptr, &err) == kExitOk);
  const std::string svg = slurp(dir / "curve.svg");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(run_cli({"plot", (dir / "none.csv").string(), "-o", (dir / "x.svg").string()}) != kExitOk);
  CHECK(run_cli({"plot", (dir / "s0.csv").string()}) == kExitUsage);
}
