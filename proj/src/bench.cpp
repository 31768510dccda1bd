#include "flychain/bench.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>

namespace flychain {
namespace {

using nlohmann::json;

// --- config parsing -------------------------------------------------------

void reject_unknown(const json& j, const std::string& section,
                    std::initializer_list<const char*> known) {
  if (!j.is_object()) throw ConfigError("'" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown key '" + section + "." + key + "'");
  }
}

template <class T>
void read(const json& j, const char* key, const std::string& section, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("'" + section + "." + key + "' has the wrong type");
  }
}

void read_vector(const json& j, const char* key, const std::string& section,
                 Eigen::VectorXd& out) {
  std::vector<double> v;
  if (!j.contains(key)) return;
  read(j, key, section, v);
  out = Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

UncertainValue uncertain_from_json(const json& j, const std::string& where) {
  if (j.is_number()) return {j.get<double>(), 0.0};
  if (j.is_object() && j.contains("nominal") && j.at("nominal").is_number()) {
    const json hw = j.value("half_width", json(0.0));
    if (!hw.is_number()) throw ConfigError(where + ".half_width must be a number");
    return {j.at("nominal").get<double>(), hw.get<double>()};
  }
  if (j.is_string()) {
    try {
      return parse_uncertain_value(j.get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  throw ConfigError(where + " must be a number, a string like \"1.5790(76)\" or {nominal, half_width}");
}

void read_chain(const json& j, ChainParameters& c) {
  const std::string s = "chain";
  reject_unknown(j, s, {"mass", "inertia", "com_x", "com_y", "link_length",
                        "damping", "imu_offset", "gravity"});
  read(j, "mass", s, c.mass);
  read(j, "inertia", s, c.inertia);
  read(j, "com_x", s, c.com_x);
  read(j, "com_y", s, c.com_y);
  read(j, "link_length", s, c.link_length);
  read(j, "damping", s, c.damping);
  read(j, "gravity", s, c.gravity);
  if (j.contains("imu_offset")) {
    std::vector<double> r;
    read(j, "imu_offset", s, r);
    if (r.size() != 2) throw ConfigError("'chain.imu_offset' must have two entries");
    c.imu_offset = {r[0], r[1]};
  }
}

void read_uncertainty(const json& j, ParameterUncertainty& u) {
  reject_unknown(j, "uncertainty", {"mass", "inertia", "com_x", "com_y", "damping"});
  const std::pair<const char*, std::vector<UncertainValue>*> fields[] = {
      {"mass", &u.mass}, {"inertia", &u.inertia}, {"com_x", &u.com_x},
      {"com_y", &u.com_y}, {"damping", &u.damping}};
  for (const auto& [key, field] : fields) {
    if (!j.contains(key)) continue;
    const json& arr = j.at(key);
    if (!arr.is_array()) throw ConfigError(std::string("'uncertainty.") + key + "' must be an array");
    field->clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      field->push_back(uncertain_from_json(
          arr[i], std::string("uncertainty.") + key + "[" + std::to_string(i) + "]"));
    }
  }
}

void read_trajectory(const json& j, TrajectorySpec& t) {
  const std::string s = "trajectory";
  reject_unknown(j, s, {"q0", "qdot0", "joints", "kp", "kd"});
  read_vector(j, "q0", s, t.q0);
  read_vector(j, "qdot0", s, t.qdot0);
  read(j, "kp", s, t.kp);
  read(j, "kd", s, t.kd);
  if (j.contains("joints")) {
    if (!j.at("joints").is_array()) throw ConfigError("'trajectory.joints' must be an array");
    t.joints.clear();
    for (const json& m : j.at("joints")) {
      reject_unknown(m, "trajectory.joints[]", {"amplitude", "period", "phase"});
      JointMotion motion;
      read(m, "amplitude", "trajectory.joints[]", motion.amplitude);
      read(m, "period", "trajectory.joints[]", motion.period);
      read(m, "phase", "trajectory.joints[]", motion.phase);
      t.joints.push_back(motion);
    }
  }
}

void read_noise(const json& j, const std::string& section, NoiseSpec& n) {
  reject_unknown(j, section, {"sigma_gyro", "sigma_accel", "sigma_enc_pos", "sigma_enc_vel"});
  read(j, "sigma_gyro", section, n.sigma_gyro);
  read(j, "sigma_accel", section, n.sigma_accel);
  read(j, "sigma_enc_pos", section, n.sigma_enc_pos);
  read(j, "sigma_enc_vel", section, n.sigma_enc_vel);
}

json noise_to_json(const NoiseSpec& n) {
  return {{"sigma_gyro", n.sigma_gyro}, {"sigma_accel", n.sigma_accel},
          {"sigma_enc_pos", n.sigma_enc_pos}, {"sigma_enc_vel", n.sigma_enc_vel}};
}

std::vector<double> to_std(const Eigen::VectorXd& v) {
  return {v.data(), v.data() + v.size()};
}

// --- runs -----------------------------------------------------------------

struct Scenario {
  std::vector<TruthRecord> truth;
  std::vector<SensorSample> sensors;
  std::vector<Eigen::VectorXd> torques;
};

Scenario make_scenario(const RunConfig& config, const ChainParameters& truth_params,
                       Rng& noise_rng) {
  Scenario s;
  s.truth = simulate_truth(truth_params, config.trajectory, config.world);
  s.sensors = sample_stream(truth_params, s.truth, config.world.noise, noise_rng);
  s.torques.reserve(s.truth.size());
  for (const auto& r : s.truth) s.torques.push_back(r.tau);
  return s;
}

EstimatorConfig estimator_config(const RunConfig& config) {
  EstimatorConfig e = config.estimator;
  e.dt = config.world.estimator_step;
  return e;
}

// One squared-error sum per requested kind; every estimator sees the same
// stream and the nominal parameters.
std::vector<SquaredErrorSum> scenario_errors(const RunConfig& config,
                                             const Scenario& s) {
  const EstimatorConfig est = estimator_config(config);
  const InitialState init = InitialState::from(s.truth.front());
  std::vector<SquaredErrorSum> out;
  for (EstimatorKind kind : config.kinds) {
    const EstimateRun run = estimate_run(kind, s.sensors, s.torques, init, config.chain, est);
    out.push_back(squared_errors(run.estimates, s.truth));
  }
  return out;
}

std::vector<SquaredErrorSum> trial_errors(const RunConfig& config, int trial) {
  Rng param_rng = make_rng(config.seed(), static_cast<std::uint64_t>(trial), Stream::kParameters);
  Rng noise_rng = make_rng(config.seed(), static_cast<std::uint64_t>(trial), Stream::kSensorNoise);
  const ChainParameters truth_params =
      perturb_parameters(config.chain, config.uncertainty, param_rng);
  return scenario_errors(config, make_scenario(config, truth_params, noise_rng));
}

MetricsReport blank_report(const RunConfig& config, int trials) {
  MetricsReport r;
  const int n = config.chain.links();
  r.metrics = metric_names(n);
  r.units = metric_units(n);
  r.kinds = config.kinds;
  r.step_time_us.assign(config.kinds.size(), std::nullopt);
  r.trials = trials;
  r.seed = config.seed();
  r.config_digest = config_digest(config);
  return r;
}

MetricsReport report_from_sums(const RunConfig& config, int trials,
                               const std::vector<SquaredErrorSum>& sums) {
  MetricsReport r = blank_report(config, trials);
  for (const auto& s : sums) r.rmse.push_back(s.rmse());
  return r;
}

std::string trial_failure(const RunConfig& config, int trial, const char* what) {
  return "trial " + std::to_string(trial) + " (seed " + std::to_string(config.seed()) +
         ") failed: " + what;
}

std::vector<SquaredErrorSum> pool(const std::vector<std::vector<SquaredErrorSum>>& per_trial) {
  std::vector<SquaredErrorSum> total = per_trial.front();
  for (std::size_t t = 1; t < per_trial.size(); ++t) {
    for (std::size_t k = 0; k < total.size(); ++k) total[k].merge(per_trial[t][k]);
  }
  return total;
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

void RunConfig::validate() const {
  try {
    chain.validate();
    trajectory.validate(chain.links());
    world.validate();
    EstimatorConfig e = estimator;
    e.dt = world.estimator_step;
    e.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const int n = chain.links();
  const std::pair<const char*, std::size_t> sizes[] = {
      {"mass", uncertainty.mass.size()},       {"inertia", uncertainty.inertia.size()},
      {"com_x", uncertainty.com_x.size()},     {"com_y", uncertainty.com_y.size()},
      {"damping", uncertainty.damping.size()}};
  for (const auto& [name, size] : sizes) {
    const std::size_t expected = std::string(name) == "damping" ? n - 1 : n;
    if (size != 0 && size != expected) {
      throw ConfigError(std::string("uncertainty.") + name + " has " + std::to_string(size) +
                        " entries, expected " + std::to_string(expected));
    }
  }
  if (trials < 1) throw ConfigError("run.trials must be >= 1");
  if (kinds.empty()) throw ConfigError("run.kinds must not be empty");
  if (workers < 0) throw ConfigError("run.workers must be >= 0");
  if (timing_repeats < 1) throw ConfigError("run.timing_repeats must be >= 1");
}

RunConfig run_config_from_json(const json& j) {
  reject_unknown(j, "config", {"chain", "uncertainty", "trajectory", "world", "estimator", "run"});
  RunConfig c;
  if (j.contains("chain")) read_chain(j.at("chain"), c.chain);
  if (j.contains("uncertainty")) read_uncertainty(j.at("uncertainty"), c.uncertainty);
  if (j.contains("trajectory")) read_trajectory(j.at("trajectory"), c.trajectory);

  bool estimator_noise = false;
  if (j.contains("world")) {
    const json& w = j.at("world");
    reject_unknown(w, "world", {"truth_step", "estimator_step", "duration", "noise"});
    read(w, "truth_step", "world", c.world.truth_step);
    read(w, "estimator_step", "world", c.world.estimator_step);
    read(w, "duration", "world", c.world.duration);
    if (w.contains("noise")) read_noise(w.at("noise"), "world.noise", c.world.noise);
  }
  if (j.contains("estimator")) {
    const json& e = j.at("estimator");
    reject_unknown(e, "estimator", {"initial_variance", "q_position", "q_rate",
                                    "q_acceleration", "sigma_axis_jerk",
                                    "sigma_com_jerk", "noise", "ukf"});
    read(e, "initial_variance", "estimator", c.estimator.initial_variance);
    read(e, "q_position", "estimator", c.estimator.q_position);
    read(e, "q_rate", "estimator", c.estimator.q_rate);
    read(e, "q_acceleration", "estimator", c.estimator.q_acceleration);
    read(e, "sigma_axis_jerk", "estimator", c.estimator.sigma_axis_jerk);
    read(e, "sigma_com_jerk", "estimator", c.estimator.sigma_com_jerk);
    if (e.contains("noise")) {
      read_noise(e.at("noise"), "estimator.noise", c.estimator.noise);
      estimator_noise = true;
    }
    if (e.contains("ukf")) {
      const json& u = e.at("ukf");
      reject_unknown(u, "estimator.ukf", {"alpha", "beta", "kappa"});
      read(u, "alpha", "estimator.ukf", c.estimator.ukf.alpha);
      read(u, "beta", "estimator.ukf", c.estimator.ukf.beta);
      read(u, "kappa", "estimator.ukf", c.estimator.ukf.kappa);
    }
  }
  if (!estimator_noise) c.estimator.noise = c.world.noise;

  if (j.contains("run")) {
    const json& r = j.at("run");
    reject_unknown(r, "run", {"kinds", "trials", "output_dir", "workers", "seed",
                              "timing_repeats"});
    if (r.contains("kinds")) {
      std::vector<std::string> names;
      read(r, "kinds", "run", names);
      c.kinds.clear();
      for (const auto& name : names) {
        try {
          c.kinds.push_back(parse_estimator_kind(name));
        } catch (const std::invalid_argument& e) {
          throw ConfigError(e.what());
        }
      }
    }
    read(r, "trials", "run", c.trials);
    read(r, "workers", "run", c.workers);
    read(r, "seed", "run", c.world.seed);
    read(r, "timing_repeats", "run", c.timing_repeats);
    std::string dir;
    read(r, "output_dir", "run", dir);
    if (!dir.empty()) c.output_dir = dir;
  }
  c.estimator.dt = c.world.estimator_step;
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

json to_json(const RunConfig& c) {
  json uncertainty = json::object();
  const std::pair<const char*, const std::vector<UncertainValue>*> fields[] = {
      {"mass", &c.uncertainty.mass}, {"inertia", &c.uncertainty.inertia},
      {"com_x", &c.uncertainty.com_x}, {"com_y", &c.uncertainty.com_y},
      {"damping", &c.uncertainty.damping}};
  for (const auto& [key, field] : fields) {
    json arr = json::array();
    for (const auto& v : *field) arr.push_back({{"nominal", v.nominal}, {"half_width", v.half_width}});
    uncertainty[key] = arr;
  }
  json joints = json::array();
  for (const auto& m : c.trajectory.joints) {
    joints.push_back({{"amplitude", m.amplitude}, {"period", m.period}, {"phase", m.phase}});
  }
  json kinds = json::array();
  for (auto k : c.kinds) kinds.push_back(std::string(to_string(k)));

  return {
      {"chain",
       {{"mass", c.chain.mass},
        {"inertia", c.chain.inertia},
        {"com_x", c.chain.com_x},
        {"com_y", c.chain.com_y},
        {"link_length", c.chain.link_length},
        {"damping", c.chain.damping},
        {"imu_offset", {c.chain.imu_offset.x(), c.chain.imu_offset.y()}},
        {"gravity", c.chain.gravity}}},
      {"uncertainty", uncertainty},
      {"trajectory",
       {{"q0", to_std(c.trajectory.q0)},
        {"qdot0", to_std(c.trajectory.qdot0)},
        {"joints", joints},
        {"kp", c.trajectory.kp},
        {"kd", c.trajectory.kd}}},
      {"world",
       {{"truth_step", c.world.truth_step},
        {"estimator_step", c.world.estimator_step},
        {"duration", c.world.duration},
        {"noise", noise_to_json(c.world.noise)}}},
      {"estimator",
       {{"initial_variance", c.estimator.initial_variance},
        {"q_position", c.estimator.q_position},
        {"q_rate", c.estimator.q_rate},
        {"q_acceleration", c.estimator.q_acceleration},
        {"sigma_axis_jerk", c.estimator.sigma_axis_jerk},
        {"sigma_com_jerk", c.estimator.sigma_com_jerk},
        {"noise", noise_to_json(c.estimator.noise)},
        {"ukf",
         {{"alpha", c.estimator.ukf.alpha},
          {"beta", c.estimator.ukf.beta},
          {"kappa", c.estimator.ukf.kappa}}}}},
      {"run",
       {{"kinds", kinds},
        {"trials", c.trials},
        {"output_dir", c.output_dir.string()},
        {"workers", c.workers},
        {"seed", c.seed()},
        {"timing_repeats", c.timing_repeats}}},
  };
}

std::string config_digest(const RunConfig& config) {
  json j = to_json(config);
  j["run"].erase("output_dir");
  j["run"].erase("workers");
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    hash ^= ch;
    hash *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, hash);
  return buf;
}

Eigen::VectorXd estimate_error(const FullEstimate& e, const TruthRecord& t) {
  const auto dim = t.q.size();
  const auto n = dim - 2;
  if (e.q.size() != dim || e.qdot.size() != dim) {
    throw std::invalid_argument("estimate and truth have different dimensions");
  }
  Eigen::VectorXd err(2 * n + 4);
  err << e.q.head(n) - t.q.head(n), e.qdot.head(n) - t.qdot.head(n),
      e.q.tail(2) - t.q.tail(2), e.qdot.tail(2) - t.qdot.tail(2);
  return err;
}

void SquaredErrorSum::add(const Eigen::VectorXd& error) {
  if (count == 0) sum = Eigen::VectorXd::Zero(error.size());
  sum += error.cwiseAbs2();
  ++count;
}

void SquaredErrorSum::merge(const SquaredErrorSum& other) {
  if (other.count == 0) return;
  if (count == 0) {
    *this = other;
    return;
  }
  sum += other.sum;
  count += other.count;
}

Eigen::VectorXd SquaredErrorSum::rmse() const {
  if (count == 0) throw std::invalid_argument("RMSE of an empty sequence");
  return (sum / static_cast<double>(count)).cwiseSqrt();
}

SquaredErrorSum squared_errors(const std::vector<FullEstimate>& estimates,
                               const std::vector<TruthRecord>& truth) {
  if (estimates.size() != truth.size()) {
    throw std::invalid_argument("compute_rmse: " + std::to_string(estimates.size()) +
                                " estimates for " + std::to_string(truth.size()) +
                                " truth records");
  }
  SquaredErrorSum s;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    if (std::abs(estimates[k].t - truth[k].t) > 1e-9) {
      throw std::invalid_argument("compute_rmse: timestamps differ at index " +
                                  std::to_string(k));
    }
    s.add(estimate_error(estimates[k], truth[k]));
  }
  return s;
}

Eigen::VectorXd compute_rmse(const std::vector<FullEstimate>& estimates,
                             const std::vector<TruthRecord>& truth) {
  return squared_errors(estimates, truth).rmse();
}

std::vector<std::string> metric_names(int links) {
  std::vector<std::string> names;
  for (int i = 0; i < links; ++i) names.push_back("alpha_" + std::to_string(i));
  for (int i = 0; i < links; ++i) names.push_back("alpha_" + std::to_string(i) + "_dot");
  for (const char* s : {"d", "h", "d_dot", "h_dot"}) names.emplace_back(s);
  return names;
}

std::vector<std::string> metric_units(int links) {
  std::vector<std::string> units(links, "rad");
  units.insert(units.end(), links, "rad/s");
  for (const char* s : {"m", "m", "m/s", "m/s"}) units.emplace_back(s);
  return units;
}

const Eigen::VectorXd& MetricsReport::rmse_of(EstimatorKind kind) const {
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    if (kinds[i] == kind) return rmse.at(i);
  }
  throw std::out_of_range("report has no column for " + std::string(to_string(kind)));
}

double MetricsReport::rmse_of(EstimatorKind kind, const std::string& metric) const {
  for (std::size_t m = 0; m < metrics.size(); ++m) {
    if (metrics[m] == metric) return rmse_of(kind)(static_cast<Eigen::Index>(m));
  }
  throw std::out_of_range("report has no metric " + metric);
}

std::optional<double> MetricsReport::step_time_of(EstimatorKind kind) const {
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    if (kinds[i] == kind) return step_time_us.at(i);
  }
  throw std::out_of_range("report has no column for " + std::string(to_string(kind)));
}

MetricsReport run_known_params(const RunConfig& config) {
  config.validate();
  Rng noise_rng = make_rng(config.seed(), 0, Stream::kSensorNoise);
  const Scenario s = make_scenario(config, config.chain, noise_rng);
  return report_from_sums(config, 1, scenario_errors(config, s));
}

MetricsReport run_monte_carlo_serial(const RunConfig& config) {
  config.validate();
  std::vector<std::vector<SquaredErrorSum>> per_trial;
  for (int t = 0; t < config.trials; ++t) {
    try {
      per_trial.push_back(trial_errors(config, t));
    } catch (const std::exception& e) {
      throw NumericalError(trial_failure(config, t, e.what()));
    }
  }
  return report_from_sums(config, config.trials, pool(per_trial));
}

MetricsReport run_monte_carlo(const RunConfig& config) {
  config.validate();
  std::vector<std::vector<SquaredErrorSum>> per_trial(static_cast<std::size_t>(config.trials));
  std::vector<std::string> errors(per_trial.size());
  const int threads = config.workers > 0 ? config.workers : omp_get_max_threads();
  bool failed = false;

#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (int t = 0; t < config.trials; ++t) {
    bool skip;
#pragma omp atomic read
    skip = failed;
    if (skip) continue;
    try {
      per_trial[static_cast<std::size_t>(t)] = trial_errors(config, t);
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(t)] = e.what();
#pragma omp atomic write
      failed = true;
    }
  }

  for (std::size_t t = 0; t < errors.size(); ++t) {
    if (!errors[t].empty()) {
      throw NumericalError(trial_failure(config, static_cast<int>(t), errors[t].c_str()));
    }
  }
  return report_from_sums(config, config.trials, pool(per_trial));
}

MetricsReport time_estimators(const RunConfig& config) {
  config.validate();
  Rng noise_rng = make_rng(config.seed(), 0, Stream::kSensorNoise);
  const Scenario s = make_scenario(config, config.chain, noise_rng);
  const EstimatorConfig est = estimator_config(config);
  const InitialState init = InitialState::from(s.truth.front());

  MetricsReport r = blank_report(config, 1);
  const std::size_t count = config.kinds.size();
  std::vector<double> best(count, std::numeric_limits<double>::infinity());
  using Clock = std::chrono::steady_clock;
  for (int rep = 0; rep < config.timing_repeats; ++rep) {
    // All kinds advance in lockstep, starting kind rotated every step, so
    // they share whatever the machine is doing at that moment.
    std::vector<std::unique_ptr<Estimator>> estimators;
    std::vector<EstimateRun> runs(count);
    for (std::size_t i = 0; i < count; ++i) {
      estimators.push_back(make_estimator(config.kinds[i], config.chain, est, init));
      runs[i].kind = config.kinds[i];
      runs[i].estimates.push_back(estimators[i]->estimate(s.sensors.front().t));
      runs[i].step_us.push_back(0.0);
    }
    for (std::size_t k = 1; k < s.sensors.size(); ++k) {
      for (std::size_t j = 0; j < count; ++j) {
        const std::size_t i = (k + j) % count;
        try {
          const auto start = Clock::now();
          FullEstimate e = estimators[i]->step(s.torques[k - 1], s.torques[k], s.sensors[k]);
          const auto stop = Clock::now();
          runs[i].estimates.push_back(std::move(e));
          runs[i].step_us.push_back(std::chrono::duration<double, std::micro>(stop - start).count());
        } catch (const std::exception& e) {
          throw NumericalError(std::string(to_string(config.kinds[i])) + " failed at step " +
                               std::to_string(k) + ": " + e.what());
        }
      }
    }
    for (std::size_t i = 0; i < count; ++i) {
      best[i] = std::min(best[i], runs[i].mean_step_us());
      if (rep == 0) r.rmse.push_back(compute_rmse(runs[i].estimates, s.truth));
    }
  }
  for (std::size_t i = 0; i < count; ++i) r.step_time_us[i] = best[i];
  return r;
}

ReportFormat parse_report_format(const std::string& name) {
  if (name == "csv") return ReportFormat::kCsv;
  if (name == "json") return ReportFormat::kJson;
  throw std::invalid_argument("unknown report format '" + name + "' (expected csv or json)");
}

double round_significant(double value) { return std::stod(format_number(value)); }

std::string render_report(const MetricsReport& r, ReportFormat format) {
  if (format == ReportFormat::kCsv) {
    std::ostringstream out;
    out << "metric,unit";
    for (auto k : r.kinds) out << ',' << to_string(k);
    out << '\n';
    for (std::size_t m = 0; m < r.metrics.size(); ++m) {
      out << r.metrics[m] << ',' << r.units[m];
      for (const auto& col : r.rmse) out << ',' << format_number(col(static_cast<Eigen::Index>(m)));
      out << '\n';
    }
    out << "step_time_us,us";
    for (const auto& t : r.step_time_us) out << ',' << (t ? format_number(*t) : "");
    out << '\n';
    return out.str();
  }

  json metrics = json::array();
  for (std::size_t m = 0; m < r.metrics.size(); ++m) {
    json values = json::object();
    for (std::size_t k = 0; k < r.kinds.size(); ++k) {
      values[std::string(to_string(r.kinds[k]))] =
          round_significant(r.rmse[k](static_cast<Eigen::Index>(m)));
    }
    metrics.push_back({{"name", r.metrics[m]}, {"unit", r.units[m]}, {"rmse", values}});
  }
  json timing = json::object();
  for (std::size_t k = 0; k < r.kinds.size(); ++k) {
    const auto& t = r.step_time_us[k];
    timing[std::string(to_string(r.kinds[k]))] =
        t ? json(round_significant(*t)) : json(nullptr);
  }
  json kinds = json::array();
  for (auto k : r.kinds) kinds.push_back(std::string(to_string(k)));
  const json doc = {
      {"metrics", metrics},
      {"timing", {{"unit", "us"}, {"step_time", timing}}},
      {"config_digest", r.config_digest},
      {"seed", r.seed},
      {"trials", r.trials},
      {"kinds", kinds},
      {"rmse_pooling", "all timesteps of all trials"},
  };
  return doc.dump(2) + "\n";
}

MetricsReport parse_json_report(const std::string& text) {
  const json doc = json::parse(text);
  MetricsReport r;
  for (const auto& name : doc.at("kinds")) {
    r.kinds.push_back(parse_estimator_kind(name.get<std::string>()));
  }
  const json& metrics = doc.at("metrics");
  r.rmse.assign(r.kinds.size(), Eigen::VectorXd(static_cast<Eigen::Index>(metrics.size())));
  for (std::size_t m = 0; m < metrics.size(); ++m) {
    r.metrics.push_back(metrics[m].at("name").get<std::string>());
    r.units.push_back(metrics[m].at("unit").get<std::string>());
    for (std::size_t k = 0; k < r.kinds.size(); ++k) {
      r.rmse[k](static_cast<Eigen::Index>(m)) =
          metrics[m].at("rmse").at(std::string(to_string(r.kinds[k]))).get<double>();
    }
  }
  for (auto kind : r.kinds) {
    const json& t = doc.at("timing").at("step_time").at(std::string(to_string(kind)));
    r.step_time_us.push_back(t.is_null() ? std::nullopt
                                         : std::optional<double>(t.get<double>()));
  }
  r.config_digest = doc.at("config_digest").get<std::string>();
  r.seed = doc.at("seed").get<std::uint64_t>();
  r.trials = doc.at("trials").get<int>();
  return r;
}

void emit_report(const MetricsReport& report, ReportFormat format,
                 const std::filesystem::path& path) {
  const std::string text = render_report(report, format);
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw std::runtime_error("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace flychain
