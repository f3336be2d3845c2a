#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>

namespace dktv::sim {

// ---------------------------------------------------------------------------
// Planar two-state system with a time-varying rotation-like field.
// ---------------------------------------------------------------------------

struct SimpleNtvsConfig {
  double gamma = 0.8;  // rate of time variation
  Eigen::Vector2d x0{1.0, 0.0};
};

// xdot = M_t * cos(x) with M_t = [[0, 1+gamma t], [-(1+gamma t), 0]], cos elementwise.
inline Eigen::Vector2d simple_ntvs_deriv(const Eigen::Vector2d& x, double t, double gamma) {
  const double a = 1.0 + gamma * t;
  return {a * std::cos(x(1)), -a * std::cos(x(0))};
}

// ---------------------------------------------------------------------------
// Twelve-state quadcopter. State order:
// (p_n, p_e, z, xd, yd, zd, phi, theta, psi, p, q, r); inputs (f_z, tau_phi,
// tau_theta, tau_psi); the three-component disturbance adds to the body force.
// ---------------------------------------------------------------------------

struct QuadConfig {
  double mass = 2.0;
  double jx = 0.0217;
  double jy = 0.0217;
  double jz = 0.04;
  double disturbance_scale = 1.0;
  // Row two of the position kinematics as transcribed carries c_theta*c_psi in
  // its first entry; the flag switches to the textbook c_theta*s_psi.
  bool standard_rotation = false;
};

inline Eigen::Matrix3d quad_rotation(double phi, double theta, double psi, bool standard) {
  const double sph = std::sin(phi), cph = std::cos(phi);
  const double sth = std::sin(theta), cth = std::cos(theta);
  const double sps = std::sin(psi), cps = std::cos(psi);
  Eigen::Matrix3d r;
  r(0, 0) = cth * cps;
  r(0, 1) = sph * sth * cps - cph * sps;
  r(0, 2) = cph * sth * cps + sph * sps;
  r(1, 0) = standard ? cth * sps : cth * cps;
  r(1, 1) = sph * sth * sps + cph * cps;
  r(1, 2) = cph * sth * sps - sph * cps;
  r(2, 0) = sth;
  r(2, 1) = -sph * cth;
  r(2, 2) = -cph * cth;
  return r;
}

inline Eigen::VectorXd quad_deriv(const Eigen::VectorXd& x, const Eigen::VectorXd& u, double t,
                                  const Eigen::Vector3d& w, const QuadConfig& cfg) {
  (void)t;
  if (x.size() != 12 || u.size() != 4) throw std::invalid_argument("quad_deriv: expects 12 states, 4 inputs");
  const double phi = x(6), theta = x(7), psi = x(8);
  if (std::abs(std::abs(theta) - M_PI / 2.0) < 1e-6) {
    throw std::domain_error("quad_deriv: pitch at the attitude-rate singularity");
  }
  const double xd = x(3), yd = x(4), zd = x(5);
  const double p = x(9), q = x(10), r = x(11);
  const double sph = std::sin(phi), cph = std::cos(phi);
  const double cth = std::cos(theta), tth = std::tan(theta);

  Eigen::VectorXd dx(12);
  dx.segment<3>(0) = quad_rotation(phi, theta, psi, cfg.standard_rotation) * x.segment<3>(3);

  dx(6) = p + sph * tth * q + cph * tth * r;
  dx(7) = cph * q - sph * r;
  dx(8) = (sph / cth) * q + (cph / cth) * r;

  dx(3) = r * yd - q * zd + w(0) / cfg.mass;
  dx(4) = p * zd - r * xd + w(1) / cfg.mass;
  dx(5) = q * xd - p * yd + (u(0) + w(2)) / cfg.mass;

  dx(9) = (cfg.jy - cfg.jz) / cfg.jx * q * r + u(1) / cfg.jx;
  dx(10) = (cfg.jz - cfg.jx) / cfg.jy * p * r + u(2) / cfg.jy;
  dx(11) = (cfg.jx - cfg.jy) / cfg.jz * p * q + u(3) / cfg.jz;
  return dx;
}

// ---------------------------------------------------------------------------
// Cartpole with a time-varying cart-track friction coefficient. State order:
// (x, xd, theta, thetad) with theta measured from the up position.
// ---------------------------------------------------------------------------

struct CartpoleConfig {
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double pole_length = 0.5;
  double mu_pole = 0.000002;
  double mu_cart0 = 0.0005;
  double gravity = -9.8;
  double friction_rate = 0.3;
  // Default growth law integrates rate*|cos t|, which is what actually drives
  // the coefficient up by orders of magnitude; the literal oscillatory law
  // integrates rate*cos t and stays within rate of the start value.
  bool oscillatory_friction = false;
};

// Exact integral of |cos| over [0, t].
inline double integral_abs_cos(double t) {
  const double n = std::floor(t / M_PI);
  const double s = t - n * M_PI;
  const double partial = s <= M_PI / 2.0 ? std::sin(s) : 2.0 - std::sin(s);
  return 2.0 * n + partial;
}

inline double cartpole_friction(double t, const CartpoleConfig& cfg) {
  if (cfg.oscillatory_friction) return cfg.mu_cart0 + cfg.friction_rate * std::sin(t);
  return cfg.mu_cart0 + cfg.friction_rate * integral_abs_cos(t);
}

inline double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

inline Eigen::Vector4d cartpole_deriv(const Eigen::Vector4d& x, double force, double t,
                                      const CartpoleConfig& cfg) {
  const double xd = x(1), th = x(2), thd = x(3);
  const double mc = cfg.cart_mass, m = cfg.pole_mass, l = cfg.pole_length;
  const double mu_c = cartpole_friction(t, cfg);
  const double sth = std::sin(th), cth = std::cos(th);
  const double total = mc + m;
  const double denom = l * (4.0 / 3.0 - m * cth * cth / total);
  const double th_acc =
      (cth * (-force - m * l * thd * thd * sth + mu_c * sgn(xd)) / total + cfg.gravity * sth -
       cfg.mu_pole * thd / (m * l)) /
      denom;
  const double x_acc = (force + m * l * (thd * thd * sth - th_acc * cth) - mu_c * sgn(xd)) / total;
  return {xd, x_acc, thd, th_acc};
}

// Conserved quantity of the frictionless, unforced cartpole.
inline double cartpole_energy(const Eigen::Vector4d& x, const CartpoleConfig& cfg) {
  const double xd = x(1), th = x(2), thd = x(3);
  const double m = cfg.pole_mass, l = cfg.pole_length;
  return 0.5 * (cfg.cart_mass + m) * xd * xd + (2.0 / 3.0) * m * l * l * thd * thd +
         m * l * xd * thd * std::cos(th) + m * cfg.gravity * l * std::cos(th);
}

// ---------------------------------------------------------------------------
// Integration and sampling.
// ---------------------------------------------------------------------------

// Classical fourth-order Runge-Kutta step with the input held constant.
template <class Deriv, class State, class Input>
State rk4_step(Deriv&& deriv, const State& x, const Input& u, double t, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("rk4_step: dt must be positive");
  const State k1 = deriv(x, u, t);
  const State k2 = deriv(x + (dt / 2.0) * k1, u, t + dt / 2.0);
  const State k3 = deriv(x + (dt / 2.0) * k2, u, t + dt / 2.0);
  const State k4 = deriv(x + dt * k3, u, t + dt);
  State next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!next.allFinite()) throw std::runtime_error("rk4_step: non-finite state");
  return next;
}

struct SampledTrajectory {
  Eigen::VectorXd times;         // N+1
  Eigen::MatrixXd states;        // n x (N+1)
  Eigen::MatrixXd inputs;        // m x N, input k applied over [t_k, t_{k+1})
  Eigen::MatrixXd disturbances;  // d x N when a disturbance is drawn
  double dt = 0.1;
  bool truncated = false;
};

struct TrajectoryOptions {
  double dt = 0.1;
  int substeps = 10;  // internal integration at dt / substeps
  std::uint64_t seed = 0;
  int disturbance_dim = 0;
  double disturbance_scale = 1.0;
};

using DerivFn = std::function<Eigen::VectorXd(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                                              double t, const Eigen::VectorXd& w)>;
using InputFn = std::function<Eigen::VectorXd(double t, const Eigen::VectorXd& x, long k)>;

// Integrates with an internal substep and records samples at dt. The
// disturbance is redrawn i.i.d. standard normal (times the scale) per recorded
// sample and held over the sample interval. Simulator blow-up truncates the
// trajectory and sets the flag.
inline SampledTrajectory sample_trajectory(const DerivFn& deriv, const InputFn& input,
                                           const Eigen::VectorXd& x0, int n_steps,
                                           const TrajectoryOptions& opt) {
  SampledTrajectory out;
  out.dt = opt.dt;
  const Eigen::VectorXd u0 = input(0.0, x0, 0);
  const int m = static_cast<int>(u0.size());
  out.times = Eigen::VectorXd::Zero(n_steps + 1);
  out.states = Eigen::MatrixXd::Zero(x0.size(), n_steps + 1);
  out.inputs = Eigen::MatrixXd::Zero(m, std::max(n_steps, 0));
  out.disturbances = Eigen::MatrixXd::Zero(opt.disturbance_dim, std::max(n_steps, 0));
  out.states.col(0) = x0;

  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double h = opt.dt / static_cast<double>(opt.substeps);

  Eigen::VectorXd x = x0;
  int recorded = 0;
  for (int k = 0; k < n_steps; ++k) {
    const double t_k = static_cast<double>(k) * opt.dt;
    const Eigen::VectorXd u = k == 0 ? u0 : input(t_k, x, k);
    Eigen::VectorXd w(opt.disturbance_dim);
    for (int i = 0; i < opt.disturbance_dim; ++i) w(i) = opt.disturbance_scale * normal(rng);
    out.inputs.col(k) = u;
    if (opt.disturbance_dim > 0) out.disturbances.col(k) = w;
    bool ok = true;
    for (int s = 0; s < opt.substeps && ok; ++s) {
      try {
        x = rk4_step([&](const Eigen::VectorXd& xs, const Eigen::VectorXd& us,
                         double ts) { return deriv(xs, us, ts, w); },
                     x, u, t_k + s * h, h);
      } catch (const std::exception&) {
        ok = false;
      }
    }
    if (!ok) {
      out.truncated = true;
      break;
    }
    out.states.col(k + 1) = x;
    out.times(k + 1) = t_k + opt.dt;
    recorded = k + 1;
  }
  if (out.truncated) {
    out.times.conservativeResize(recorded + 1);
    out.states.conservativeResize(Eigen::NoChange, recorded + 1);
    out.inputs.conservativeResize(Eigen::NoChange, recorded);
    out.disturbances.conservativeResize(Eigen::NoChange, recorded);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Data-gathering controllers for the experiments.
// ---------------------------------------------------------------------------

// Thrust-vectoring position servo standing in for the hand-flown trajectory.
// The signed body-z thrust serves the vertical acceleration demand (with a
// small dither so thrust never dies away), and the tilt references are the
// lateral demands divided through the current thrust. Inner attitude loops
// track those references with torques.
inline InputFn make_quad_goal_controller(const QuadConfig& cfg, const Eigen::Vector3d& goal) {
  return [cfg, goal](double t, const Eigen::VectorXd& x, long /*k*/) -> Eigen::VectorXd {
    const double kp_pos = 0.5, kd_pos = 1.1, a_max = 2.5;
    const double kp_att = 60.0, kd_att = 14.0;
    const double tilt = std::sin(0.45), fz_floor = 0.6 * cfg.mass, fz_max = 5.0 * cfg.mass;
    const Eigen::Vector3d pos = x.segment<3>(0);
    const Eigen::Matrix3d rot = quad_rotation(x(6), x(7), x(8), true);
    const Eigen::Vector3d v_inert = rot * x.segment<3>(3);
    Eigen::Vector3d a_des = kp_pos * (goal - pos) - kd_pos * v_inert;
    if (a_des.norm() > a_max) a_des *= a_max / a_des.norm();
    a_des(2) += 0.6 * std::sin(0.7 * t);  // keeps |f_z| away from zero

    const double cc = std::max(std::cos(x(6)) * std::cos(x(7)), 0.5);
    const double fz = std::clamp(-cfg.mass * a_des(2) / cc, -fz_max, fz_max);
    const double fz_eff = (fz >= 0.0 ? 1.0 : -1.0) * std::max(std::abs(fz), fz_floor);
    const double theta_ref = std::asin(std::clamp(cfg.mass * a_des(0) / fz_eff, -tilt, tilt));
    const double phi_ref = std::asin(std::clamp(-cfg.mass * a_des(1) / fz_eff, -tilt, tilt));

    Eigen::VectorXd u(4);
    u(0) = fz;
    u(1) = cfg.jx * (kp_att * (phi_ref - x(6)) - kd_att * x(9));
    u(2) = cfg.jy * (kp_att * (theta_ref - x(7)) - kd_att * x(10));
    u(3) = cfg.jz * (kp_att * (0.0 - x(8)) - kd_att * x(11));
    return u;
  };
}

// Smooth deterministic force used to excite the cartpole before the controller
// takes over. Gentle enough to keep the pole near upright while the first
// window is collected.
inline double cartpole_excitation(double t) {
  return 0.22 * std::sin(1.3 * t) + 0.16 * std::sin(3.1 * t + 1.0) + 0.1 * std::sin(0.45 * t);
}

}  // namespace dktv::sim
