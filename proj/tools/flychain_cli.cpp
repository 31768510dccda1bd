// flychain: simulate flights, run estimators on recorded streams and
// produce RMSE / timing reports.
//
//   flychain simulate [--config c.json] [--seed s] [--out dir]
//   flychain estimate --kind bme [--stream dir/stream.csv] [--out dir]
//   flychain bench known|mc|timing [--trials N] [--workers W] [--format csv|json]
//
// Exit codes: 0 success, 1 configuration error, 2 runtime or numerical error.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

#include "flychain/bench.hpp"

namespace {

using namespace flychain;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> workers;
  std::string format = "csv";
  std::optional<int> trials;
  std::string kind;
  std::string stream;
};

RunConfig resolve(const Options& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) c.world.seed = *o.seed;
  if (!o.out.empty()) c.output_dir = o.out;
  if (o.workers) c.workers = *o.workers;
  if (o.trials) c.trials = *o.trials;
  c.validate();
  return c;
}

ReportFormat format_of(const Options& o) {
  try {
    return parse_report_format(o.format);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

void write_report(const MetricsReport& report, const RunConfig& c, const Options& o,
                  const std::string& name) {
  const ReportFormat format = format_of(o);
  const auto path =
      c.output_dir / (name + (format == ReportFormat::kCsv ? ".csv" : ".json"));
  emit_report(report, format, path);
  std::cout << render_report(report, ReportFormat::kCsv);
  std::cerr << "wrote " << path.string() << '\n';
}

void cmd_simulate(const Options& o) {
  const RunConfig c = resolve(o);
  const auto truth = simulate_truth(c.chain, c.trajectory, c.world);
  Rng rng = make_rng(c.seed(), 0, Stream::kSensorNoise);
  const auto sensors = sample_stream(c.chain, truth, c.world.noise, rng);
  std::filesystem::create_directories(c.output_dir);
  const auto path = c.output_dir / "stream.csv";
  write_stream_csv(path, truth, sensors);
  std::cerr << "wrote " << path.string() << " (" << truth.size() << " samples)\n";
}

void cmd_estimate(const Options& o) {
  const RunConfig c = resolve(o);
  EstimatorKind kind;
  try {
    kind = parse_estimator_kind(o.kind);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const std::filesystem::path stream_path =
      o.stream.empty() ? c.output_dir / "stream.csv" : std::filesystem::path(o.stream);
  if (!std::filesystem::exists(stream_path)) {
    throw ConfigError("stream file " + stream_path.string() + " does not exist");
  }
  const RecordedStream stream = read_stream_csv(stream_path);
  std::vector<Eigen::VectorXd> torques;
  for (const auto& r : stream.truth) torques.push_back(r.tau);
  EstimatorConfig est = c.estimator;
  est.dt = c.world.estimator_step;
  const EstimateRun run = estimate_run(kind, stream.sensors, torques,
                                       InitialState::from(stream.truth.front()),
                                       c.chain, est);
  std::filesystem::create_directories(c.output_dir);
  const auto path = c.output_dir / ("estimates_" + std::string(to_string(kind)) + ".csv");
  write_estimates_csv(path, {run});
  std::cerr << "wrote " << path.string() << '\n';
}

void add_common(CLI::App* app, Options& o) {
  app->add_option("--config", o.config, "JSON run configuration");
  app->add_option("--seed", o.seed, "master seed");
  app->add_option("--out", o.out, "output directory");
  app->add_option("--workers", o.workers, "worker threads for Monte-Carlo trials (0: all)");
  app->add_option("--format", o.format, "report format")->check(CLI::IsMember({"csv", "json"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Free-flying chain simulation and state-estimator benchmarks"};
  app.require_subcommand(1);
  Options o;

  auto* simulate = app.add_subcommand("simulate", "emit truth and sensor CSV");
  add_common(simulate, o);

  auto* estimate = app.add_subcommand("estimate", "run one estimator on a recorded stream");
  add_common(estimate, o);
  estimate->add_option("--kind", o.kind, "full-ekf, full-ukf, de-ekf, de-ukf or bme")->required();
  estimate->add_option("--stream", o.stream, "stream CSV (default <out>/stream.csv)");

  auto* bench = app.add_subcommand("bench", "RMSE and timing reports");
  bench->require_subcommand(1);
  auto* known = bench->add_subcommand("known", "single run with known parameters");
  add_common(known, o);
  auto* mc = bench->add_subcommand("mc", "Monte-Carlo run over parameter uncertainty");
  add_common(mc, o);
  mc->add_option("--trials", o.trials, "number of trials");
  auto* timing = bench->add_subcommand("timing", "mean step time per estimator");
  add_common(timing, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*simulate) {
      cmd_simulate(o);
    } else if (*estimate) {
      cmd_estimate(o);
    } else if (*known) {
      const RunConfig c = resolve(o);
      write_report(run_known_params(c), c, o, "known_report");
    } else if (*mc) {
      const RunConfig c = resolve(o);
      write_report(run_monte_carlo(c), c, o, "mc_report");
    } else if (*timing) {
      const RunConfig c = resolve(o);
      write_report(time_estimators(c), c, o, "timing_report");
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
