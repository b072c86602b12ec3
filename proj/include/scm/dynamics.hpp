#pragma once

#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "scm/common.hpp"
#include "scm/fem.hpp"
#include "scm/sparse.hpp"

namespace scm {

/// Time series of the march: P and C at every recorded time, dof snapshots
/// possibly thinned by a stride.
struct Trajectory {
  std::vector<double> times;
  std::vector<double> p;  // neutron power integral
  std::vector<double> c;  // delayed-neutron source integral
  std::vector<double> snapshot_times;
  std::vector<Eigen::VectorXd> snapshots;
  std::vector<std::vector<double>> amplitudes;  // optional per-mode columns
  std::string note;  // provenance: method, discontinuity markers

  void record(double t, double pv, double cv) {
    times.push_back(t);
    p.push_back(pv);
    c.push_back(cv);
  }
};

/// Exact FE quadrature of P(u) = integral of sum_g nuSigma_fg phi_g and
/// C(u) = integral of the precursor sum, reduced to two fixed weight vectors.
class PowerIntegrator {
 public:
  PowerIntegrator(const ReactorState& state, const FeSpace& space) {
    const int G = state.n_groups();
    const int M = state.n_precursors();
    const int n = space.n_dofs();
    p_weights_ = Eigen::VectorXd::Zero(n * (G + M));
    c_weights_ = Eigen::VectorXd::Zero(n * (G + M));
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
    for (int g = 0; g < G; ++g) {
      std::map<int, double> w;
      for (const auto& [id, gc] : state.materials) w[id] = gc.nu_fission[g];
      CsrMatrix m = assemble_mass(space, w);
      p_weights_.segment(g * n, n) = m.multiply(ones);
    }
    std::map<int, double> unit;
    for (const auto& [id, gc] : state.materials) unit[id] = 1.0;
    CsrMatrix m1 = assemble_mass(space, unit);
    for (int m = 0; m < M; ++m) c_weights_.segment((G + m) * n, n) = m1.multiply(ones);
  }

  double power(const Eigen::VectorXd& u) const { return p_weights_.dot(u); }
  double precursor(const Eigen::VectorXd& u) const { return c_weights_.dot(u); }

 private:
  Eigen::VectorXd p_weights_;
  Eigen::VectorXd c_weights_;
};

inline std::pair<double, double> power_integrals(const Eigen::VectorXd& u,
                                                 const ReactorState& state,
                                                 const FeSpace& space) {
  PowerIntegrator integ(state, space);
  return {integ.power(u), integ.precursor(u)};
}

/// Backward-Euler step operator (B/tau + A) u+ = (B/tau) u with a cached
/// factorization per step size.
class ImplicitStepper {
 public:
  ImplicitStepper(const BlockOperator& op, double tau) : b_(&op.b), tau_(tau) {
    if (!(tau > 0.0)) throw UsageError("implicit step size must be positive");
    system_ = op.b.axpy(1.0 / tau, 1.0, op.a);
    lu_ = std::make_unique<LuFactors>(system_);
  }

  Eigen::VectorXd step(const Eigen::VectorXd& u) const {
    Eigen::VectorXd rhs = b_->multiply(u) / tau_;
    Eigen::VectorXd next = lu_->solve(rhs);
    const double rn = rhs.norm();
    if (rn > 0.0) {
      const double res = (system_.multiply(next) - rhs).norm() / rn;
      if (!(res <= 1e-11))
        throw NumericError("implicit step solve residual " + format_double(res) +
                           " exceeds 1e-11");
    }
    return next;
  }

  double tau() const { return tau_; }

 private:
  const CsrMatrix* b_;
  double tau_;
  CsrMatrix system_;
  std::unique_ptr<LuFactors> lu_;
};

inline Eigen::VectorXd implicit_step(const BlockOperator& op, const Eigen::VectorXd& u,
                                     double tau) {
  return ImplicitStepper(op, tau).step(u);
}

/// Uniform-grid fully implicit march recording P and C each step.
inline Trajectory run_dynamics(const BlockOperator& op, const Eigen::VectorXd& u0, double tau,
                               double t_end, const PowerIntegrator& integ,
                               int snapshot_stride = 10, double t_start = 0.0) {
  if (!(t_end > t_start)) throw UsageError("run_dynamics: t_end must exceed t_start");
  ImplicitStepper stepper(op, tau);
  Trajectory traj;
  Eigen::VectorXd u = u0;
  auto record = [&](double t, int k) {
    traj.record(t, integ.power(u), integ.precursor(u));
    if (snapshot_stride > 0 && k % snapshot_stride == 0) {
      traj.snapshot_times.push_back(t);
      traj.snapshots.push_back(u);
    }
  };
  record(t_start, 0);
  const long nsteps = std::lround((t_end - t_start) / tau);
  for (long k = 1; k <= nsteps; ++k) {
    u = stepper.step(u);
    record(t_start + k * tau, static_cast<int>(k));
  }
  return traj;
}

}  // namespace scm
