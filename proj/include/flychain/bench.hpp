#pragma once

// Scenario configuration, known-parameter and Monte-Carlo runs, RMSE and
// timing reports.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "flychain/estimators.hpp"

namespace flychain {

// Invalid or unreadable configuration (CLI exit code 1).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  ChainParameters chain = ChainParameters::two_link_acrobat();
  ParameterUncertainty uncertainty = ParameterUncertainty::acrobat_tolerances();
  TrajectorySpec trajectory = TrajectorySpec::back_somersault();
  WorldConfig world;
  EstimatorConfig estimator;  // dt follows world.estimator_step
  std::vector<EstimatorKind> kinds{kAllEstimatorKinds.begin(), kAllEstimatorKinds.end()};
  int trials = 100;
  std::filesystem::path output_dir = "out";
  int workers = 0;  // 0: OpenMP default
  int timing_repeats = 5;

  std::uint64_t seed() const { return world.seed; }
  // Throws ConfigError.
  void validate() const;
};

// Missing keys keep their defaults; unknown keys are rejected. Throws
// ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& config);

// FNV-1a of the canonical JSON form, ignoring output_dir and workers, which
// do not affect results.
std::string config_digest(const RunConfig& config);

// Per-component errors (alpha..., alpha_dot..., d, h, d_dot, h_dot).
Eigen::VectorXd estimate_error(const FullEstimate& estimate, const TruthRecord& truth);

struct SquaredErrorSum {
  Eigen::VectorXd sum;
  long count = 0;

  void add(const Eigen::VectorXd& error);
  void merge(const SquaredErrorSum& other);
  Eigen::VectorXd rmse() const;
};

// Throws std::invalid_argument if lengths or timestamps disagree.
SquaredErrorSum squared_errors(const std::vector<FullEstimate>& estimates,
                               const std::vector<TruthRecord>& truth);
Eigen::VectorXd compute_rmse(const std::vector<FullEstimate>& estimates,
                             const std::vector<TruthRecord>& truth);

std::vector<std::string> metric_names(int links);
std::vector<std::string> metric_units(int links);

struct MetricsReport {
  std::vector<std::string> metrics;
  std::vector<std::string> units;
  std::vector<EstimatorKind> kinds;
  std::vector<Eigen::VectorXd> rmse;                // one per kind
  std::vector<std::optional<double>> step_time_us;  // one per kind
  int trials = 1;
  std::uint64_t seed = 0;
  std::string config_digest;

  const Eigen::VectorXd& rmse_of(EstimatorKind kind) const;
  double rmse_of(EstimatorKind kind, const std::string& metric) const;
  std::optional<double> step_time_of(EstimatorKind kind) const;
};

MetricsReport run_known_params(const RunConfig& config);
// Trials run on config.workers OpenMP threads; the result does not depend on
// the worker count.
MetricsReport run_monte_carlo(const RunConfig& config);
MetricsReport run_monte_carlo_serial(const RunConfig& config);
// Known-parameter run repeated timing_repeats times, all kinds stepped in
// lockstep; each step time is the lowest per-run mean over the repeats.
MetricsReport time_estimators(const RunConfig& config);

enum class ReportFormat { kCsv, kJson };
ReportFormat parse_report_format(const std::string& name);

std::string render_report(const MetricsReport& report, ReportFormat format);
MetricsReport parse_json_report(const std::string& text);
void emit_report(const MetricsReport& report, ReportFormat format,
                 const std::filesystem::path& path);

// %.6g rounding applied to every reported number.
double round_significant(double value);

}  // namespace flychain
