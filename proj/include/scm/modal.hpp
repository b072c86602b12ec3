#pragma once

#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "scm/common.hpp"
#include "scm/eigensolver.hpp"
#include "scm/sparse.hpp"

namespace scm {

enum class CoefficientMethod { biorthogonal, least_squares, orthogonal_approx };
enum class EvolutionKind { exact_complex, real_part_only };

inline const char* to_string(CoefficientMethod m) {
  switch (m) {
    case CoefficientMethod::biorthogonal: return "biorthogonal";
    case CoefficientMethod::least_squares: return "least-squares";
    default: return "orthogonal-approx";
  }
}

inline const char* to_string(EvolutionKind k) {
  return k == EvolutionKind::exact_complex ? "exact-complex" : "real-part";
}

/// N dominant direct modes of one reactor state, optionally with the matched
/// adjoint set, plus the pencil mass factor for biorthogonal projections.
struct ModalBasis {
  std::string state_label;
  std::vector<EigenMode> modes;
  std::vector<EigenMode> adjoint_modes;  // empty unless the biorthogonal method is used
  std::shared_ptr<const CsrMatrix> operator_b;
  int n_scalar = 0;
  int n_groups = 0;
  int n_precursors = 0;

  int n_modes() const { return static_cast<int>(modes.size()); }
  int total_size() const { return n_scalar * (n_groups + n_precursors); }
  int precursor_offset() const { return n_groups * n_scalar; }
  int precursor_size() const { return n_precursors * n_scalar; }

  void validate() const {
    for (std::size_t i = 0; i + 1 < modes.size(); ++i)
      if (modes[i].value.real() > modes[i + 1].value.real() + 1e-300)
        throw NumericError("modal basis not sorted by ascending real part");
    for (std::size_t i = 0; i < modes.size(); ++i) {
      if (modes[i].kind == EigenMode::Kind::pair_first &&
          (i + 1 >= modes.size() || modes[i + 1].kind != EigenMode::Kind::pair_second))
        throw NumericError("modal basis splits a conjugate pair");
    }
  }
};

/// Per-mode real amplitudes. For a conjugate pair the two adjacent entries
/// hold the amplitudes of the real and imaginary basis members.
struct ModalCoefficients {
  Eigen::VectorXd b;
  CoefficientMethod method = CoefficientMethod::orthogonal_approx;
  double t_origin = 0.0;
  double ls_residual = 0.0;  // least-squares method only
};

namespace detail {

inline std::complex<double> bilinear_b(const CsrMatrix& b, const Eigen::VectorXd& xr,
                                       const Eigen::VectorXd& xi, const Eigen::VectorXd& yr,
                                       const Eigen::VectorXd& yi) {
  Eigen::VectorXd bxr, bxi;
  b.multiply_complex(xr, xi, bxr, bxi);
  const double rr = bxr.dot(yr) - bxi.dot(yi);
  const double ii = bxr.dot(yi) + bxi.dot(yr);
  return {rr, ii};
}

}  // namespace detail

/// Coefficients from the adjoint set: b_n = (u0, B adj_n) / (B v_n, adj_n).
/// Conjugate-pair coefficients are converted to the real amplitude pair.
inline ModalCoefficients project_biorthogonal(const Eigen::VectorXd& u0,
                                              const ModalBasis& basis, double t_origin = 0.0) {
  if (basis.adjoint_modes.size() != basis.modes.size())
    throw UsageError("biorthogonal projection requires a matched adjoint mode set");
  if (!basis.operator_b) throw UsageError("biorthogonal projection requires the B factor");
  const CsrMatrix& b = *basis.operator_b;
  const Eigen::VectorXd zero(0);

  ModalCoefficients out;
  out.method = CoefficientMethod::biorthogonal;
  out.t_origin = t_origin;
  out.b.resize(basis.n_modes());

  for (int i = 0; i < basis.n_modes(); ++i) {
    const EigenMode& mode = basis.modes[i];
    const EigenMode& adj = basis.adjoint_modes[i];
    if (std::abs(mode.value - adj.value) > 1e-6 * (std::abs(mode.value) + 1.0))
      throw NumericError("adjoint mode " + std::to_string(i + 1) +
                         " does not match the direct eigenvalue");
    if (mode.kind == EigenMode::Kind::pair_first) continue;  // handled with its partner

    const Eigen::VectorXd& vr = mode.vec_re;
    const Eigen::VectorXd& vi = mode.vec_im.size() ? mode.vec_im : zero;
    const Eigen::VectorXd& ar = adj.vec_re;
    const Eigen::VectorXd& ai = adj.vec_im.size() ? adj.vec_im : zero;

    const std::complex<double> denom = detail::bilinear_b(b, vr, vi, ar, ai);
    Eigen::VectorXd bvr, bvi;
    b.multiply_complex(vr, vi, bvr, bvi);
    const double scale = detail::norm2(bvr, bvi) * detail::norm2(ar, ai);
    if (std::abs(denom) <= 1e-12 * scale)
      throw NumericError("biorthogonal denominator nearly zero for mode " +
                         std::to_string(i + 1) + "; basis ill-conditioned");
    const std::complex<double> numer = detail::bilinear_b(b, u0, zero, ar, ai);
    const std::complex<double> c = numer / denom;

    if (mode.kind == EigenMode::Kind::real) {
      out.b[i] = c.real();
    } else {
      // pair_second carries the +Im representative
      out.b[i - 1] = 2.0 * c.real();
      out.b[i] = -2.0 * c.imag();
    }
  }
  return out;
}

/// Least squares on the precursor block: minimizes ||u0_c - sum b_n c_n||
/// over real amplitudes via the normal equations.
inline ModalCoefficients project_least_squares(const Eigen::VectorXd& u0_c,
                                               const ModalBasis& basis, double t_origin = 0.0) {
  const int n = basis.n_modes();
  const int np = basis.precursor_size();
  if (u0_c.size() != np)
    throw UsageError("least-squares projection expects the precursor block only");
  if (n > np) throw UsageError("more modes than precursor dofs in least-squares projection");

  Eigen::MatrixXd c(np, n);
  for (int i = 0; i < n; ++i)
    c.col(i) = basis.modes[i].representative().segment(basis.precursor_offset(), np);

  const Eigen::MatrixXd g = c.transpose() * c;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(g);
  const double dmax = g.diagonal().cwiseAbs().maxCoeff();
  if (ldlt.info() != Eigen::Success ||
      ldlt.vectorD().cwiseAbs().minCoeff() <= 1e-13 * std::max(dmax, 1e-300))
    throw NumericError("least-squares normal matrix is rank deficient; basis ill-conditioned");

  ModalCoefficients out;
  out.method = CoefficientMethod::least_squares;
  out.t_origin = t_origin;
  out.b = ldlt.solve(c.transpose() * u0_c);
  out.ls_residual = (c * out.b - u0_c).norm();
  return out;
}

/// Treats mode precursor blocks as approximately orthogonal:
/// b_n = (u0_c, c_n) / (c_n, c_n).
inline ModalCoefficients project_orthogonal_approx(const Eigen::VectorXd& u0_c,
                                                   const ModalBasis& basis,
                                                   double t_origin = 0.0) {
  const int np = basis.precursor_size();
  if (u0_c.size() != np)
    throw UsageError("orthogonal projection expects the precursor block only");
  ModalCoefficients out;
  out.method = CoefficientMethod::orthogonal_approx;
  out.t_origin = t_origin;
  out.b.resize(basis.n_modes());
  for (int i = 0; i < basis.n_modes(); ++i) {
    Eigen::VectorXd cn = basis.modes[i].representative().segment(basis.precursor_offset(), np);
    const double nn = cn.squaredNorm();
    if (nn <= 0.0) throw NumericError("mode " + std::to_string(i + 1) +
                                      " has a vanishing precursor block");
    out.b[i] = cn.dot(u0_c) / nn;
  }
  return out;
}

/// Evaluates the truncated expansion at time t. Exact-complex combines each
/// conjugate pair through its rotating real form and reproduces the
/// projected vector at t = t_origin; real-part-only drops the imaginary
/// parts of the eigenvalues.
inline Eigen::VectorXd evolve(const ModalBasis& basis, const ModalCoefficients& coeff, double t,
                              EvolutionKind kind) {
  if (t < coeff.t_origin) throw UsageError("evolve: t precedes the expansion origin");
  if (coeff.b.size() != basis.n_modes())
    throw UsageError("evolve: coefficient count does not match basis");
  const double tau = t - coeff.t_origin;
  Eigen::VectorXd u = Eigen::VectorXd::Zero(basis.total_size());

  for (int i = 0; i < basis.n_modes(); ++i) {
    const EigenMode& mode = basis.modes[i];
    const double re_alpha = mode.value.real();
    // growing exponents overflow; decaying ones underflow harmlessly to zero
    if (-re_alpha * tau > 700.0)
      throw NumericError("evolve: exponent overflow for mode " + std::to_string(i + 1) +
                         " (alpha = " + format_double(re_alpha) + ", t = " + format_double(t) +
                         ")");
    const double decay = std::exp(-re_alpha * tau);

    if (mode.kind == EigenMode::Kind::real) {
      u.noalias() += coeff.b[i] * decay * mode.vec_re;
    } else if (mode.kind == EigenMode::Kind::pair_first) {
      const EigenMode& second = basis.modes[i + 1];
      const Eigen::VectorXd& r = mode.vec_re;        // Re v
      const Eigen::VectorXd& q = second.vec_im;      // Im v
      const double b1 = coeff.b[i], b2 = coeff.b[i + 1];
      if (kind == EvolutionKind::real_part_only) {
        u.noalias() += decay * (b1 * r + b2 * q);
      } else {
        const double w = second.value.imag();  // +Im alpha
        const double cs = std::cos(w * tau), sn = std::sin(w * tau);
        u.noalias() += decay * (b1 * (cs * r + sn * q) + b2 * (-sn * r + cs * q));
      }
      ++i;  // partner consumed
    }
  }
  return u;
}

/// Reconstruction of the projected initial vector: evolve at t = t_origin.
inline Eigen::VectorXd modal_initial_vector(const ModalBasis& basis,
                                            const ModalCoefficients& coeff) {
  return evolve(basis, coeff, coeff.t_origin, EvolutionKind::exact_complex);
}

}  // namespace scm
