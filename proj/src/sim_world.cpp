#include "flychain/sim_world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <regex>
#include <sstream>

namespace flychain {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

void check_finite_vector(const Eigen::VectorXd& v, int size, const char* what) {
  if (v.size() != size) {
    throw std::invalid_argument(std::string(what) + " has size " +
                                std::to_string(v.size()) + ", expected " +
                                std::to_string(size));
  }
  if (!v.allFinite()) throw std::invalid_argument(std::string(what) + " is not finite");
}

TruthRecord make_record(const ChainParameters& params, double t,
                        const Eigen::VectorXd& x, const Eigen::VectorXd& tau) {
  const int dim = params.links() + 2;
  TruthRecord rec;
  rec.t = t;
  rec.q = x.head(dim);
  rec.qdot = x.tail(dim);
  rec.tau = tau;
  rec.qddot = forward_dynamics(params, rec.q, rec.qdot, tau, Coordinates::kFull);
  complete_com_fields(params, rec);
  return rec;
}

std::vector<std::string> stream_header(int n) {
  std::vector<std::string> cols{"t"};
  auto coords = [n](const std::string& suffix) {
    std::vector<std::string> out;
    for (int i = 0; i < n; ++i) out.push_back("alpha_" + std::to_string(i) + suffix);
    out.push_back("d" + suffix);
    out.push_back("h" + suffix);
    return out;
  };
  for (const char* suffix : {"", "_dot", "_ddot"}) {
    const auto c = coords(suffix);
    cols.insert(cols.end(), c.begin(), c.end());
  }
  for (int i = 1; i < n; ++i) cols.push_back("tau_" + std::to_string(i));
  cols.insert(cols.end(), {"z_g", "z_ax", "z_ay"});
  for (int i = 1; i < n; ++i) {
    cols.push_back("z_e" + std::to_string(i) + "_pos");
    cols.push_back("z_e" + std::to_string(i) + "_vel");
  }
  return cols;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

void check_bound(const std::vector<UncertainValue>& bounds,
                 const std::vector<double>& nominal, const char* name,
                 double lower_limit, bool strict) {
  if (bounds.empty()) return;
  if (bounds.size() != nominal.size()) {
    throw std::invalid_argument(std::string("uncertainty for ") + name + " has " +
                                std::to_string(bounds.size()) + " entries, expected " +
                                std::to_string(nominal.size()));
  }
  for (std::size_t i = 0; i < bounds.size(); ++i) {
    const auto& b = bounds[i];
    if (!(b.half_width >= 0.0)) {
      throw std::invalid_argument(std::string("negative half-width for ") + name);
    }
    if (std::abs(b.nominal - nominal[i]) > 1e-12 * std::max(1.0, std::abs(nominal[i]))) {
      throw std::invalid_argument(std::string("uncertainty nominal for ") + name + "[" +
                                  std::to_string(i) + "] disagrees with chain parameters");
    }
    const double low = b.nominal - b.half_width;
    if (strict ? !(low > lower_limit) : !(low >= lower_limit)) {
      throw std::invalid_argument(std::string("uncertainty interval for ") + name + "[" +
                                  std::to_string(i) + "] admits non-physical values");
    }
  }
}

void draw_into(const std::vector<UncertainValue>& bounds, std::vector<double>& out,
               Rng& rng) {
  for (std::size_t i = 0; i < bounds.size(); ++i) {
    const auto& b = bounds[i];
    if (b.half_width == 0.0) {
      out[i] = b.nominal;
      continue;
    }
    std::uniform_real_distribution<double> dist(b.nominal - b.half_width,
                                                b.nominal + b.half_width);
    out[i] = dist(rng);
  }
}

}  // namespace

void NoiseSpec::validate() const {
  for (double s : {sigma_gyro, sigma_accel, sigma_enc_pos, sigma_enc_vel}) {
    if (!(s >= 0.0) || !std::isfinite(s)) {
      throw std::invalid_argument("noise standard deviations must be >= 0");
    }
  }
}

int WorldConfig::substeps() const {
  const double ratio = estimator_step / truth_step;
  const double rounded = std::round(ratio);
  if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-9 * ratio) {
    throw std::invalid_argument(
        "estimator step must be an integer multiple of the truth step");
  }
  return static_cast<int>(rounded);
}

int WorldConfig::estimator_steps() const {
  return static_cast<int>(std::llround(duration / estimator_step));
}

void WorldConfig::validate() const {
  if (!(truth_step > 0.0)) throw std::invalid_argument("truth_step must be > 0");
  if (!(estimator_step > 0.0)) throw std::invalid_argument("estimator_step must be > 0");
  if (!(duration > 0.0)) throw std::invalid_argument("duration must be > 0");
  substeps();
  if (estimator_steps() < 1) throw std::invalid_argument("duration shorter than one step");
  noise.validate();
}

void TrajectorySpec::validate(int links) const {
  check_finite_vector(q0, links + 2, "initial coordinates");
  check_finite_vector(qdot0, links + 2, "initial rates");
  if (!joints.empty() && static_cast<int>(joints.size()) != links - 1) {
    throw std::invalid_argument("trajectory needs one motion per joint");
  }
  for (const auto& j : joints) {
    if (!(j.period > 0.0)) throw std::invalid_argument("joint period must be > 0");
    if (!std::isfinite(j.amplitude) || !std::isfinite(j.phase)) {
      throw std::invalid_argument("joint motion must be finite");
    }
  }
}

TrajectorySpec TrajectorySpec::back_somersault() {
  TrajectorySpec traj;
  traj.q0 = Eigen::VectorXd::Zero(4);
  traj.qdot0 = Eigen::VectorXd::Zero(4);
  traj.qdot0 << -kTwoPi, 0.0, 0.5, 3.0;
  traj.joints = {JointMotion{0.8, 0.5, 0.0}};
  // Start the joint on its reference rate so the tracker has no transient.
  const auto& j = traj.joints.front();
  traj.qdot0(1) = j.amplitude * kTwoPi / j.period * std::cos(j.phase);
  return traj;
}

TrajectorySpec TrajectorySpec::passive(const Eigen::VectorXd& q0,
                                       const Eigen::VectorXd& qdot0) {
  TrajectorySpec traj;
  traj.q0 = q0;
  traj.qdot0 = qdot0;
  return traj;
}

UncertainValue parse_uncertain_value(const std::string& text) {
  static const std::regex pattern(R"(^\s*([+-]?)(\d*)(?:\.(\d*))?\s*\(\s*(\d+)\s*\)\s*$)");
  std::smatch m;
  if (!std::regex_match(text, m, pattern) || (m[2].length() == 0 && m[3].length() == 0)) {
    throw std::invalid_argument("malformed uncertain value '" + text +
                                "', expected e.g. 1.5790(76)");
  }
  const std::string number = m[1].str() + (m[2].length() ? m[2].str() : "0") + "." +
                             (m[3].length() ? m[3].str() : "0");
  const auto decimals = static_cast<int>(m[3].length());
  UncertainValue v;
  v.nominal = std::stod(number);
  v.half_width = std::stod(m[4].str()) * std::pow(10.0, -decimals);
  return v;
}

ParameterUncertainty ParameterUncertainty::acrobat_tolerances() {
  auto p = [](const char* s) { return parse_uncertain_value(s); };
  ParameterUncertainty u;
  u.mass = {p("1.5790(76)"), p("1.4370(400)")};
  u.com_x = {p("0.1443(51)"), p("0.1268(34)")};
  u.com_y = {p("-0.0055(5)"), p("0.0001(2)")};
  u.inertia = {p("0.0375(13)"), p("0.0237(9)")};
  u.damping = {p("0.20(4)")};
  return u;
}

ParameterUncertainty ParameterUncertainty::without_spread() const {
  ParameterUncertainty u = *this;
  for (auto* field : {&u.mass, &u.inertia, &u.com_x, &u.com_y, &u.damping}) {
    for (auto& v : *field) v.half_width = 0.0;
  }
  return u;
}

Eigen::VectorXd rk4_step(const Derivative& derivative, const Eigen::VectorXd& x,
                         double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("rk4_step: dt must be > 0");
  auto eval = [&](const Eigen::VectorXd& at) {
    Eigen::VectorXd d = derivative(at);
    if (!d.allFinite()) throw NumericalError("rk4_step: non-finite derivative");
    return d;
  };
  const Eigen::VectorXd k1 = eval(x);
  const Eigen::VectorXd k2 = eval(x + 0.5 * dt * k1);
  const Eigen::VectorXd k3 = eval(x + 0.5 * dt * k2);
  const Eigen::VectorXd k4 = eval(x + dt * k3);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Eigen::VectorXd commanded_torques(const ChainParameters& params,
                                  const TrajectorySpec& traj, double t,
                                  const Eigen::VectorXd& qbar,
                                  const Eigen::VectorXd& qbardot) {
  const int n = params.links();
  if (traj.joints.empty()) return Eigen::VectorXd::Zero(n - 1);

  constexpr auto kMode = Coordinates::kReduced;
  Eigen::VectorXd accel = Eigen::VectorXd::Zero(n);
  for (int j = 1; j < n; ++j) {
    const JointMotion& m = traj.joints[j - 1];
    const double w = kTwoPi / m.period;
    const double arg = w * t + m.phase;
    const double ref = traj.q0(j) + m.amplitude * (std::sin(arg) - std::sin(m.phase));
    const double ref_rate = m.amplitude * w * std::cos(arg);
    const double ref_accel = -m.amplitude * w * w * std::sin(arg);
    accel(j) = ref_accel + traj.kd * (ref_rate - qbardot(j)) + traj.kp * (ref - qbar(j));
  }

  // The base is unactuated: pick its acceleration so the first row of the
  // reduced equations balances with zero generalized force.
  const Eigen::MatrixXd m = mass_matrix(params, qbar, kMode);
  const Eigen::VectorXd bias = coriolis_matrix(params, qbar, qbardot, kMode) * qbardot +
                               damping_matrix(params, kMode) * qbardot +
                               gravity_vector(params, qbar, kMode);
  accel(0) = -(m.row(0).tail(n - 1).dot(accel.tail(n - 1)) + bias(0)) / m(0, 0);

  const Eigen::VectorXd ubar = inverse_dynamics_reduced(params, qbar, qbardot, accel);
  if (std::abs(ubar(0)) > 1e-8 * (1.0 + ubar.lpNorm<Eigen::Infinity>())) {
    throw NumericalError("trajectory tracker requested torque on the free base");
  }
  return ubar.tail(n - 1);
}

void complete_com_fields(const ChainParameters& params, TruthRecord& rec) {
  const int n = params.links();
  const ComKinematics local = chain_com_derivatives(
      params, rec.q.head(n), rec.qdot.head(n), rec.qddot.head(n));
  rec.com_position = rec.q.tail(2) + local.position;
  rec.com_velocity = rec.qdot.tail(2) + local.velocity;
  rec.com_acceleration = rec.qddot.tail(2) + local.acceleration;
}

std::vector<TruthRecord> simulate_truth(const ChainParameters& params,
                                        const TrajectorySpec& traj,
                                        const WorldConfig& world) {
  params.validate();
  world.validate();
  const int n = params.links();
  traj.validate(n);
  const int dim = n + 2;
  const int substeps = world.substeps();
  const int steps = world.estimator_steps();
  const double h = world.truth_step;

  Eigen::VectorXd x(2 * dim);
  x << traj.q0, traj.qdot0;

  auto torque_at = [&](double t, const Eigen::VectorXd& state) {
    return commanded_torques(params, traj, t, state.head(n), state.segment(dim, n));
  };

  std::vector<TruthRecord> records;
  records.reserve(steps + 1);
  for (int k = 0; k <= steps; ++k) {
    for (int sub = 0; sub < substeps; ++sub) {
      const long step = static_cast<long>(k) * substeps + sub;
      const double t = static_cast<double>(step) * h;
      const Eigen::VectorXd tau = torque_at(t, x);
      if (sub == 0) records.push_back(make_record(params, t, x, tau));
      if (k == steps) break;
      auto derivative = [&](const Eigen::VectorXd& s) {
        Eigen::VectorXd out(2 * dim);
        out.head(dim) = s.tail(dim);
        out.tail(dim) =
            forward_dynamics(params, s.head(dim), s.tail(dim), tau, Coordinates::kFull);
        return out;
      };
      try {
        x = rk4_step(derivative, x, h);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " at truth step " +
                             std::to_string(step));
      }
      if (!x.allFinite()) {
        throw NumericalError("truth state became non-finite at truth step " +
                             std::to_string(step));
      }
    }
  }
  return records;
}

SensorSample sample_sensors(const ChainParameters& params,
                            const TruthRecord& record, const NoiseSpec& noise,
                            Rng& rng) {
  const int n = params.links();
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::VectorXd qbar = record.q.head(n);
  const Eigen::VectorXd qbardot = record.qdot.head(n);
  const Eigen::VectorXd qbarddot = record.qddot.head(n);

  SensorSample s;
  s.t = record.t;
  s.gyro = qbardot(0) + noise.sigma_gyro * normal(rng);

  const Eigen::Vector2d imu_acc =
      imu_point_acceleration(params, qbar, qbardot, qbarddot, record.com_acceleration);
  s.accel = rotation(qbar(0)).transpose() *
            (imu_acc + Eigen::Vector2d(0.0, params.gravity));
  s.accel.x() += noise.sigma_accel * normal(rng);
  s.accel.y() += noise.sigma_accel * normal(rng);

  s.encoders.reserve(n - 1);
  for (int i = 1; i < n; ++i) {
    const double pos = qbar(i) + noise.sigma_enc_pos * normal(rng);
    const double vel = qbardot(i) + noise.sigma_enc_vel * normal(rng);
    s.encoders.emplace_back(pos, vel);
  }
  return s;
}

std::vector<SensorSample> sample_stream(const ChainParameters& params,
                                        const std::vector<TruthRecord>& truth,
                                        const NoiseSpec& noise, Rng& rng) {
  std::vector<SensorSample> out;
  out.reserve(truth.size());
  for (const auto& rec : truth) out.push_back(sample_sensors(params, rec, noise, rng));
  return out;
}

ChainParameters perturb_parameters(const ChainParameters& nominal,
                                   const ParameterUncertainty& unc, Rng& rng) {
  check_bound(unc.mass, nominal.mass, "mass", 0.0, true);
  check_bound(unc.inertia, nominal.inertia, "inertia", 0.0, true);
  check_bound(unc.com_x, nominal.com_x, "com_x", -INFINITY, false);
  check_bound(unc.com_y, nominal.com_y, "com_y", -INFINITY, false);
  check_bound(unc.damping, nominal.damping, "damping", 0.0, false);

  ChainParameters out = nominal;
  draw_into(unc.mass, out.mass, rng);
  draw_into(unc.com_x, out.com_x, rng);
  draw_into(unc.com_y, out.com_y, rng);
  draw_into(unc.inertia, out.inertia, rng);
  draw_into(unc.damping, out.damping, rng);
  out.validate();
  return out;
}

void write_stream_csv(const std::filesystem::path& path,
                      const std::vector<TruthRecord>& truth,
                      const std::vector<SensorSample>& sensors) {
  if (truth.size() != sensors.size()) {
    throw std::invalid_argument("truth and sensor streams differ in length");
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const int n = truth.empty() ? 1 : static_cast<int>(truth.front().q.size()) - 2;
  const auto header = stream_header(n);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n' << std::setprecision(17);
  for (std::size_t k = 0; k < truth.size(); ++k) {
    const auto& r = truth[k];
    const auto& s = sensors[k];
    out << r.t;
    for (const Eigen::VectorXd* v : {&r.q, &r.qdot, &r.qddot, &r.tau}) {
      for (Eigen::Index i = 0; i < v->size(); ++i) out << ',' << (*v)(i);
    }
    out << ',' << s.gyro << ',' << s.accel.x() << ',' << s.accel.y();
    for (const auto& e : s.encoders) out << ',' << e.x() << ',' << e.y();
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

RecordedStream read_stream_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open stream file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + " is empty");
  const auto header = split_csv_line(line);
  int n = 0;
  while (std::find(header.begin(), header.end(), "alpha_" + std::to_string(n)) !=
         header.end()) {
    ++n;
  }
  if (n < 1 || header != stream_header(n)) {
    throw std::runtime_error(path.string() + " does not have the stream CSV header");
  }
  const int dim = n + 2;

  RecordedStream stream;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw std::runtime_error(path.string() + ": row " + std::to_string(row) +
                               " has the wrong number of columns");
    }
    std::vector<double> v(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) v[i] = std::stod(cells[i]);
    std::size_t c = 0;
    TruthRecord r;
    r.t = v[c++];
    auto take = [&](int count) {
      Eigen::VectorXd out(count);
      for (int i = 0; i < count; ++i) out(i) = v[c++];
      return out;
    };
    r.q = take(dim);
    r.qdot = take(dim);
    r.qddot = take(dim);
    r.tau = take(n - 1);
    SensorSample s;
    s.t = r.t;
    s.gyro = v[c++];
    s.accel.x() = v[c++];
    s.accel.y() = v[c++];
    for (int i = 1; i < n; ++i) {
      s.encoders.emplace_back(v[c], v[c + 1]);
      c += 2;
    }
    stream.truth.push_back(std::move(r));
    stream.sensors.push_back(std::move(s));
  }
  return stream;
}

}  // namespace flychain
