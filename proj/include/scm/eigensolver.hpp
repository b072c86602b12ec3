#pragma once

#include <complex>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "scm/common.hpp"
#include "scm/fem.hpp"
#include "scm/sparse.hpp"

namespace scm {

/// One alpha-eigenpair. Conjugate pairs occupy two adjacent entries whose
/// values are exact conjugates and whose vectors are complex conjugates.
/// Vectors are scaled so the flux-1 block has unit Euclidean norm and its
/// largest-magnitude entry is real positive.
struct EigenMode {
  enum class Kind { real, pair_first, pair_second };

  std::complex<double> value;  // alpha_n, 1/s
  Eigen::VectorXd vec_re;
  Eigen::VectorXd vec_im;  // empty for real modes
  Kind kind = Kind::real;
  double residual = 0.0;  // ||A v - alpha B v|| / ||v||

  bool is_real() const { return kind == Kind::real; }

  /// The real dof vector this mode contributes as a basis member: the real
  /// part for real modes and pair leaders, the imaginary part for the
  /// second member of a conjugate pair.
  const Eigen::VectorXd& representative() const {
    return kind == Kind::pair_second ? vec_im : vec_re;
  }
};

struct SpectrumRequest {
  int n_modes = 1;
  enum class Which { direct, adjoint } which = Which::direct;
  std::optional<double> shift;  // sigma; automatic when unset
  int subspace_dim = 0;         // 0 = max(2N+10, 40), clamped to problem size
  double tol = 1e-10;           // on ||A v - a B v|| / ||B v||
  int max_restarts = 200;
  // polish each eigenpair with one shift-inverted subspace step; one extra
  // factorization per mode, worth it when absolute accuracy is needed far
  // from the shift
  bool polish = false;
};

namespace detail {

inline double norm2(const Eigen::VectorXd& re, const Eigen::VectorXd& im) {
  const double a = re.squaredNorm();
  const double b = im.size() ? im.squaredNorm() : 0.0;
  return std::sqrt(a + b);
}

/// || A x - lambda B x || for a complex pair (xr, xi).
inline double pencil_residual(const CsrMatrix& a, const CsrMatrix& b,
                              std::complex<double> lambda, const Eigen::VectorXd& xr,
                              const Eigen::VectorXd& xi, double* bnorm_out = nullptr) {
  Eigen::VectorXd axr, axi, bxr, bxi;
  a.multiply_complex(xr, xi, axr, axi);
  b.multiply_complex(xr, xi, bxr, bxi);
  const double lr = lambda.real(), li = lambda.imag();
  Eigen::VectorXd rr = axr - (lr * bxr - li * bxi);
  Eigen::VectorXd ri = axi - (lr * bxi + li * bxr);
  if (bnorm_out) *bnorm_out = norm2(bxr, bxi);
  return norm2(rr, ri);
}

struct RitzPair {
  std::complex<double> lambda;
  Eigen::VectorXcd y;  // coordinates in the Krylov basis
};

/// Rayleigh quotient (x^H A x)/(x^H B x) of a complex pair; refines the
/// shift-invert back-transform, whose error grows with |lambda - sigma|^2.
inline std::complex<double> rayleigh_quotient(const CsrMatrix& a, const CsrMatrix& b,
                                              const Eigen::VectorXd& xr,
                                              const Eigen::VectorXd& xi) {
  Eigen::VectorXd axr, axi, bxr, bxi;
  a.multiply_complex(xr, xi, axr, axi);
  b.multiply_complex(xr, xi, bxr, bxi);
  auto hdot = [&](const Eigen::VectorXd& wr, const Eigen::VectorXd& wi) {
    // (xr - i xi) . (wr + i wi)
    const double re = xr.dot(wr) + (xi.size() ? xi.dot(wi) : 0.0);
    const double im = xr.dot(wi) - (xi.size() ? xi.dot(wr) : 0.0);
    return std::complex<double>(re, im);
  };
  const std::complex<double> num = hdot(axr, axi);
  const std::complex<double> den = hdot(bxr, bxi);
  return num / den;
}

struct KrylovResult {
  std::vector<RitzPair> wanted;  // sorted ascending by (Re, Im)
  bool converged = false;
  double worst_residual = 0.0;
  int restarts = 0;
};

/// Shift-invert Arnoldi with Krylov-Schur style thick restarts on the
/// operator (A - sigma B)^{-1} B. Eigenvalues are recovered through
/// lambda = sigma + 1/theta and selected by smallest real part.
class KrylovSchur {
 public:
  KrylovSchur(const CsrMatrix& a, const CsrMatrix& b, double sigma, int n_want, int m,
              double tol, int max_restarts)
      : a_(a), b_(b), sigma_(sigma), n_want_(n_want), tol_(tol), max_restarts_(max_restarts) {
    n_ = a.rows();
    m_ = std::min(m, n_);
    if (m_ < std::min(n_, n_want + 3))
      m_ = std::min(n_, n_want + 3);
    shifted_ = a.axpy(1.0, -sigma, b);
    lu_ = std::make_unique<LuFactors>(shifted_, sigma);
  }

  KrylovResult run(bool best_effort) {
    Eigen::MatrixXd v(n_, m_ + 1);
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(m_ + 1, m_);
    std::mt19937 rng(0x5eedu);
    v.col(0) = random_unit(rng);
    int j0 = 0;
    bool invariant = false;

    KrylovResult result;
    for (int restart = 0; restart <= max_restarts_; ++restart) {
      result.restarts = restart;
      int m_eff = m_;
      for (int j = j0; j < m_; ++j) {
        Eigen::VectorXd w = lu_->solve(b_.multiply(v.col(j)));
        // classical Gram-Schmidt with one reorthogonalization pass
        Eigen::VectorXd coef = v.leftCols(j + 1).transpose() * w;
        w.noalias() -= v.leftCols(j + 1) * coef;
        Eigen::VectorXd coef2 = v.leftCols(j + 1).transpose() * w;
        w.noalias() -= v.leftCols(j + 1) * coef2;
        coef += coef2;
        h.col(j).head(j + 1) = coef;
        const double beta = w.norm();
        if (beta <= 1e-12 * std::max(1.0, coef.norm())) {
          // invariant subspace reached; pad with a fresh direction
          h(j + 1, j) = 0.0;
          if (j + 1 >= std::min(n_, n_want_ + 1)) {
            m_eff = j + 1;
            invariant = true;
            break;
          }
          Eigen::VectorXd fresh = random_unit(rng);
          Eigen::VectorXd c = v.leftCols(j + 1).transpose() * fresh;
          fresh.noalias() -= v.leftCols(j + 1) * c;
          const double fn = fresh.norm();
          if (fn <= 1e-12) {
            m_eff = j + 1;
            invariant = true;
            break;
          }
          v.col(j + 1) = fresh / fn;
        } else {
          h(j + 1, j) = beta;
          v.col(j + 1) = w / beta;
        }
      }

      const Eigen::MatrixXd hm = h.topLeftCorner(m_eff, m_eff);
      const double beta_last = invariant ? 0.0 : h(m_eff, m_eff - 1);
      Eigen::EigenSolver<Eigen::MatrixXd> es(hm);
      if (es.info() != Eigen::Success)
        throw NumericError("eigensolver: dense projection step failed");

      // back-transform and sort by ascending real part
      const auto theta = es.eigenvalues();
      std::vector<int> order;
      std::vector<std::complex<double>> lam(m_eff);
      const double theta_max = theta.cwiseAbs().maxCoeff();
      for (int i = 0; i < m_eff; ++i) {
        if (std::abs(theta[i]) <= 1e-14 * theta_max) {
          lam[i] = {std::numeric_limits<double>::infinity(), 0.0};
        } else {
          lam[i] = sigma_ + 1.0 / theta[i];
        }
        order.push_back(i);
      }
      std::sort(order.begin(), order.end(), [&](int x, int y) {
        if (lam[x].real() != lam[y].real()) return lam[x].real() < lam[y].real();
        return lam[x].imag() < lam[y].imag();
      });

      int k_want = std::min(n_want_, m_eff);
      k_want = extend_over_pair(lam, order, k_want, m_eff);

      // refine wanted eigenvalues by Rayleigh quotients on the pencil and
      // check true residuals against them
      bool all_ok = true;
      double worst = 0.0;
      std::vector<std::complex<double>> refined(k_want);
      for (int p = 0; p < k_want; ++p) {
        const int i = order[p];
        Eigen::VectorXcd y = es.eigenvectors().col(i);
        Eigen::VectorXd xr = v.leftCols(m_eff) * y.real();
        Eigen::VectorXd xi = v.leftCols(m_eff) * y.imag();
        std::complex<double> rq = rayleigh_quotient(a_, b_, xr, xi);
        if (theta[i].imag() == 0.0) rq = {rq.real(), 0.0};
        refined[p] = rq;
        double bnorm = 0.0;
        const double res = pencil_residual(a_, b_, rq, xr, xi, &bnorm);
        const double rel = bnorm > 0.0 ? res / bnorm : std::numeric_limits<double>::infinity();
        worst = std::max(worst, rel);
        if (!(rel <= tol_)) all_ok = false;
      }
      result.worst_residual = worst;

      if (all_ok || invariant || restart == max_restarts_) {
        if (!all_ok && !invariant && !best_effort)
          throw NumericError(
              "eigensolver: no convergence within restart budget (worst residual " +
              format_double(worst) + ", tol " + format_double(tol_) + ")");
        for (int p = 0; p < k_want; ++p) {
          const int i = order[p];
          result.wanted.push_back({refined[p], es.eigenvectors().col(i)});
        }
        std::sort(result.wanted.begin(), result.wanted.end(),
                  [](const RitzPair& x, const RitzPair& y) {
                    if (x.lambda.real() != y.lambda.real())
                      return x.lambda.real() < y.lambda.real();
                    return x.lambda.imag() < y.lambda.imag();
                  });
        result.converged = all_ok || invariant;
        // hand back basis for vector reconstruction
        basis_ = v.leftCols(m_eff);
        return result;
      }

      // thick restart: keep the wanted set plus a cushion, never splitting a pair
      int k_keep = std::min(m_eff - 2, k_want + std::max(2, (m_eff - k_want) / 2));
      k_keep = extend_over_pair(lam, order, k_keep, m_eff);
      k_keep = std::min(k_keep, m_eff - 1);

      // realified invariant-subspace basis of the kept Ritz vectors
      Eigen::MatrixXd z(m_eff, k_keep);
      int nz = 0;
      for (int p = 0; p < k_keep && nz < k_keep; ++p) {
        const int i = order[p];
        if (theta[i].imag() == 0.0) {
          z.col(nz++) = es.eigenvectors().col(i).real();
        } else if (theta[i].imag() > 0.0) {
          z.col(nz++) = es.eigenvectors().col(i).real();
          if (nz < k_keep) z.col(nz++) = es.eigenvectors().col(i).imag();
        }
        // the negative-imag member is covered by its conjugate partner
      }
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(z.leftCols(nz));
      Eigen::MatrixXd q1 = qr.householderQ() * Eigen::MatrixXd::Identity(m_eff, nz);

      Eigen::MatrixXd vnew = v.leftCols(m_eff) * q1;
      v.leftCols(nz) = vnew;
      v.col(nz) = v.col(m_eff);  // residual direction
      Eigen::MatrixXd c = q1.transpose() * hm * q1;
      Eigen::RowVectorXd spike = beta_last * q1.row(m_eff - 1);
      h.setZero();
      h.topLeftCorner(nz, nz) = c;
      h.row(nz).head(nz) = spike;
      j0 = nz;
    }
    throw NumericError("eigensolver: restart loop exited unexpectedly");
  }

  const Eigen::MatrixXd& basis() const { return basis_; }

 private:
  Eigen::VectorXd random_unit(std::mt19937& rng) const {
    std::normal_distribution<double> dist(0.0, 1.0);
    Eigen::VectorXd r(n_);
    for (int i = 0; i < n_; ++i) r[i] = dist(rng);
    return r / r.norm();
  }

  static int extend_over_pair(const std::vector<std::complex<double>>& lam,
                              const std::vector<int>& order, int k, int m_eff) {
    if (k <= 0 || k >= m_eff) return std::min(k, m_eff);
    const auto& last = lam[order[k - 1]];
    const auto& next = lam[order[k]];
    if (last.imag() != 0.0 && last.real() == next.real() && last.imag() == -next.imag())
      return k + 1;
    return k;
  }

  const CsrMatrix& a_;
  const CsrMatrix& b_;
  double sigma_;
  int n_want_;
  double tol_;
  int max_restarts_;
  int n_ = 0;
  int m_ = 0;
  CsrMatrix shifted_;
  std::unique_ptr<LuFactors> lu_;
  Eigen::MatrixXd basis_;
};

/// One shift-inverted subspace-iteration step per eigenpair (a 2-dim block
/// for conjugate pairs), followed by a small projected eigenproblem. Cuts
/// eigenvector cross-contamination between clustered Ritz values down to
/// residual level; keeps the original pair when it fails to improve.
inline void polish_modes(const CsrMatrix& a, const CsrMatrix& b, int n_flux,
                         std::vector<EigenMode>& modes) {
  const Eigen::VectorXd zero(0);
  auto residual_of = [&](const EigenMode& m) {
    return pencil_residual(a, b, m.value, m.vec_re,
                           m.vec_im.size() ? m.vec_im : zero, nullptr) /
           norm2(m.vec_re, m.vec_im);
  };
  // refinement may move a value only within its own error scale; a larger
  // jump means the iteration locked onto a neighboring cluster member
  auto trusted = [](std::complex<double> before, std::complex<double> after) {
    return std::abs(after - before) <= 1e-9 * (1.0 + std::abs(before));
  };
  for (std::size_t i = 0; i < modes.size(); ++i) {
    EigenMode& mode = modes[i];
    if (mode.kind == EigenMode::Kind::pair_second) continue;
    const double shift = mode.value.real();
    std::unique_ptr<LuFactors> lu;
    try {
      lu = std::make_unique<LuFactors>(a.axpy(1.0, -shift, b), shift);
    } catch (const NumericError&) {
      continue;  // landed exactly on the eigenvalue; pair is good enough
    }
    if (mode.kind == EigenMode::Kind::real) {
      EigenMode cand = mode;
      Eigen::VectorXd z = lu->solve(b.multiply(mode.vec_re));
      const double zn = z.norm();
      if (!(zn > 0.0) || !z.allFinite()) continue;
      z /= zn;
      cand.value = {rayleigh_quotient(a, b, z, zero).real(), 0.0};
      int imax = 0;
      z.head(n_flux).cwiseAbs().maxCoeff(&imax);
      if (z[imax] < 0.0) z = -z;
      cand.vec_re = z / z.head(n_flux).norm();
      cand.residual = residual_of(cand);
      if (cand.residual < mode.residual && trusted(mode.value, cand.value)) mode = cand;
    } else if (i + 1 < modes.size()) {
      EigenMode& second = modes[i + 1];
      Eigen::MatrixXd zmat(mode.vec_re.size(), 2);
      Eigen::VectorXd z1 = lu->solve(b.multiply(mode.vec_re));
      Eigen::VectorXd z2 = lu->solve(b.multiply(second.vec_im));
      if (!z1.allFinite() || !z2.allFinite()) continue;
      zmat.col(0) = z1;
      zmat.col(1) = z2;
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(zmat);
      Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(zmat.rows(), 2);
      Eigen::Matrix2d ap, bp;
      for (int c = 0; c < 2; ++c) {
        Eigen::VectorXd aq = a.multiply(q.col(c));
        Eigen::VectorXd bq = b.multiply(q.col(c));
        for (int r = 0; r < 2; ++r) {
          ap(r, c) = q.col(r).dot(aq);
          bp(r, c) = q.col(r).dot(bq);
        }
      }
      Eigen::Matrix2d small = bp.inverse() * ap;
      // cancellation-free 2x2 eigenvalues: mu +- sqrt(((a-d)/2)^2 + bc)
      const double mu = 0.5 * (small(0, 0) + small(1, 1));
      const double half_diff = 0.5 * (small(0, 0) - small(1, 1));
      const double disc = half_diff * half_diff + small(0, 1) * small(1, 0);
      if (disc >= 0.0) {
        // the pair is really two (near-)degenerate real eigenvalues; split it
        const double rt = std::sqrt(disc);
        const double l1 = mu - rt, l2 = mu + rt;
        auto real_vec = [&](double lam2) {
          Eigen::Vector2d y;
          if (std::abs(small(0, 1)) > std::abs(small(1, 0)))
            y << small(0, 1), lam2 - small(0, 0);
          else
            y << lam2 - small(1, 1), small(1, 0);
          if (y.norm() == 0.0) y << 1.0, 0.0;
          return y;
        };
        EigenMode c1 = mode, c2 = second;
        for (auto [lam2, cand] : {std::pair<double, EigenMode*>{l1, &c1}, {l2, &c2}}) {
          Eigen::Vector2d y = real_vec(lam2);
          Eigen::VectorXd x = q.col(0) * y[0] + q.col(1) * y[1];
          int imax = 0;
          x.head(n_flux).cwiseAbs().maxCoeff(&imax);
          if (x[imax] < 0.0) x = -x;
          const double s = x.head(n_flux).norm();
          if (!(s > 0.0)) continue;
          cand->value = {lam2, 0.0};
          cand->vec_re = x / s;
          cand->vec_im.resize(0);
          cand->kind = EigenMode::Kind::real;
          cand->residual = residual_of(*cand);
        }
        if (std::max(c1.residual, c2.residual) < std::max(mode.residual, second.residual) &&
            trusted(mode.value, c1.value) && trusted(second.value, c2.value)) {
          mode = c1;
          second = c2;
        }
        ++i;
        continue;
      }
      const std::complex<double> lam(mu, std::sqrt(-disc));
      // eigenvector of the 2x2 for lam: (small - lam I) y = 0
      Eigen::Vector2cd y;
      if (std::abs(small(0, 1)) > std::abs(small(1, 0)))
        y << std::complex<double>(small(0, 1), 0.0), lam - small(0, 0);
      else
        y << lam - small(1, 1), std::complex<double>(small(1, 0), 0.0);
      Eigen::VectorXd xr = q.col(0) * y[0].real() + q.col(1) * y[1].real();
      Eigen::VectorXd xi = q.col(0) * y[0].imag() + q.col(1) * y[1].imag();
      // rotate the dominant flux entry onto the real axis and rescale
      int imax = 0;
      (xr.head(n_flux).cwiseAbs2() + xi.head(n_flux).cwiseAbs2()).maxCoeff(&imax);
      const std::complex<double> ph(xr[imax], xi[imax]);
      const std::complex<double> rot = std::conj(ph) / std::abs(ph);
      Eigen::VectorXd re = rot.real() * xr - rot.imag() * xi;
      Eigen::VectorXd im = rot.real() * xi + rot.imag() * xr;
      const double s = std::sqrt(re.head(n_flux).squaredNorm() + im.head(n_flux).squaredNorm());
      if (!(s > 0.0)) continue;
      EigenMode cand_first = mode, cand_second = second;
      cand_first.value = std::conj(lam);
      cand_first.vec_re = re / s;
      cand_first.vec_im = -im / s;
      cand_first.residual = residual_of(cand_first);
      cand_second.value = lam;
      cand_second.vec_re = re / s;
      cand_second.vec_im = im / s;
      cand_second.residual = residual_of(cand_second);
      if (cand_first.residual < mode.residual && trusted(mode.value, cand_first.value)) {
        mode = cand_first;
        second = cand_second;
      }
      ++i;
    }
  }
}

inline KrylovResult krylov_solve(const CsrMatrix& a, const CsrMatrix& b, double sigma,
                                 int n_want, int m, double tol, int max_restarts,
                                 bool best_effort, Eigen::MatrixXd* basis_out) {
  const int tries = 3;
  double s = sigma;
  for (int t = 0;; ++t) {
    try {
      KrylovSchur ks(a, b, s, n_want, m, tol, max_restarts);
      KrylovResult r = ks.run(best_effort);
      if (basis_out) *basis_out = ks.basis();
      return r;
    } catch (const NumericError& e) {
      const std::string what = e.what();
      if (t + 1 < tries && what.find("singular at shift") != std::string::npos) {
        s = s - std::max(1.0, 0.5 * std::abs(s));  // move sigma away and retry
        continue;
      }
      throw;
    }
  }
}

}  // namespace detail

/// Default automatic shift: sigma = est - |est| - 1 around a rough estimate
/// of the leftmost eigenvalue.
inline double shift_from_estimate(double alpha_est) {
  return alpha_est - std::abs(alpha_est) - 1.0;
}

/// Rough leftmost-eigenvalue estimate used when no shift (and no coarse
/// presolve result) is supplied. The shift is re-seeded from each pass so
/// strongly supercritical spectra, whose leftmost value lies far below the
/// initial guess, are still found.
inline double estimate_leftmost(const CsrMatrix& a, const CsrMatrix& b) {
  const int n = a.rows();
  double sigma = -1.0;
  double est = 0.0;
  for (int pass = 0; pass < 5; ++pass) {
    detail::KrylovResult rough = detail::krylov_solve(a, b, sigma, 1, std::min(n, 24), 1e-6,
                                                      40, /*best_effort=*/true, nullptr);
    if (rough.wanted.empty()) return est;
    const double found = rough.wanted.front().lambda.real();
    if (pass > 0 && std::abs(found - est) <= 1e-3 * (1.0 + std::abs(found))) return found;
    est = found;
    sigma = est - std::abs(est) - 1.0;
  }
  return est;
}

/// Dominant eigenpairs of the generalized problem A v = lambda B v, sorted
/// ascending by real part; the adjoint request solves the transposed pencil.
/// Never splits a conjugate pair: returns n_modes+1 when the cut would.
inline std::vector<EigenMode> solve_alpha(const BlockOperator& op, const SpectrumRequest& req) {
  ++Counters::eigensolves();
  if (req.n_modes < 1) throw UsageError("spectrum request: n_modes must be >= 1");
  if (req.subspace_dim != 0 && req.subspace_dim <= req.n_modes + 2)
    throw UsageError("spectrum request: subspace_dim must exceed n_modes + 2");
  if (!(req.tol > 0.0)) throw UsageError("spectrum request: tol must be positive");

  const bool adjoint = req.which == SpectrumRequest::Which::adjoint;
  const CsrMatrix a = adjoint ? op.a.transposed() : op.a;
  const CsrMatrix b = adjoint ? op.b.transposed() : op.b;
  const int n = a.rows();
  if (req.n_modes > n) throw UsageError("spectrum request: n_modes exceeds problem size");

  double sigma;
  if (req.shift) {
    sigma = *req.shift;
  } else {
    sigma = shift_from_estimate(estimate_leftmost(a, b));
  }
  const int m = req.subspace_dim > 0 ? req.subspace_dim : std::max(2 * req.n_modes + 10, 40);

  Eigen::MatrixXd basis;
  detail::KrylovResult kr = detail::krylov_solve(a, b, sigma, req.n_modes, m, req.tol,
                                                 req.max_restarts, false, &basis);

  std::vector<EigenMode> modes;
  for (const auto& rp : kr.wanted) {
    EigenMode mode;
    mode.value = rp.lambda;
    Eigen::VectorXd xr = basis * rp.y.real();
    Eigen::VectorXd xi = basis * rp.y.imag();
    const int nb = op.n_scalar > 0 ? op.n_scalar : n;

    if (rp.lambda.imag() == 0.0) {
      // the Ritz coordinates of a real eigenvalue are real; fix the sign
      int imax = 0;
      xr.head(nb).cwiseAbs().maxCoeff(&imax);
      Eigen::VectorXd re = xr[imax] < 0.0 ? Eigen::VectorXd(-xr) : xr;
      const double s = re.head(nb).norm();
      mode.vec_re = re / (s > 0.0 ? s : 1.0);
      mode.vec_im.resize(0);
      mode.kind = EigenMode::Kind::real;
    } else {
      double best = -1.0;
      int imax = 0;
      for (int i = 0; i < nb; ++i) {
        const double mag = xr[i] * xr[i] + xi[i] * xi[i];
        if (mag > best) {
          best = mag;
          imax = i;
        }
      }
      const std::complex<double> ph(xr[imax], xi[imax]);
      const std::complex<double> rot = std::conj(ph) / std::abs(ph);
      Eigen::VectorXd re = rot.real() * xr - rot.imag() * xi;
      Eigen::VectorXd im = rot.real() * xi + rot.imag() * xr;
      const double s = std::sqrt(re.head(nb).squaredNorm() + im.head(nb).squaredNorm());
      mode.vec_re = re / (s > 0.0 ? s : 1.0);
      mode.vec_im = im / (s > 0.0 ? s : 1.0);
      mode.kind = rp.lambda.imag() < 0.0 ? EigenMode::Kind::pair_first
                                         : EigenMode::Kind::pair_second;
    }
    mode.residual = detail::pencil_residual(a, b, mode.value, mode.vec_re,
                                            mode.vec_im.size() ? mode.vec_im
                                                               : Eigen::VectorXd::Zero(0),
                                            nullptr) /
                    detail::norm2(mode.vec_re, mode.vec_im);
    modes.push_back(std::move(mode));
  }

  // enforce exact conjugacy within stored pairs
  for (std::size_t i = 0; i + 1 < modes.size(); ++i) {
    if (modes[i].kind == EigenMode::Kind::pair_first &&
        modes[i + 1].kind == EigenMode::Kind::pair_second) {
      modes[i + 1].value = std::conj(modes[i].value);
      modes[i + 1].vec_re = modes[i].vec_re;
      modes[i + 1].vec_im = -modes[i].vec_im;
    }
  }
  if (req.polish) detail::polish_modes(a, b, op.n_scalar > 0 ? op.n_scalar : n, modes);
  return modes;
}

struct BiorthReport {
  Eigen::MatrixXd normalized_abs;  // |(B v_n, adj_m)| / sqrt(diag_n diag_m)
  double max_offdiag = 0.0;
  std::vector<double> value_agreement;  // relative |lambda_n - mu_n|
};

/// Cross-products (B v_n, adj_m) in the bilinear (transpose) pairing; the
/// adjoint set is matched to the direct one by eigenvalue proximity.
inline BiorthReport check_biorthogonality(const std::vector<EigenMode>& direct,
                                          const std::vector<EigenMode>& adjoint,
                                          const CsrMatrix& b) {
  const int n = static_cast<int>(direct.size());
  if (static_cast<int>(adjoint.size()) < n)
    throw UsageError("check_biorthogonality: adjoint set smaller than direct set");

  // match by eigenvalue proximity, relative tolerance 1e-6 on |alpha|+1
  std::vector<int> match(n, -1);
  std::vector<char> used(adjoint.size(), 0);
  BiorthReport report;
  for (int i = 0; i < n; ++i) {
    const double scale = std::abs(direct[i].value) + 1.0;
    int hits = 0, pick = -1;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < adjoint.size(); ++j) {
      if (used[j]) continue;
      const double d = std::abs(direct[i].value - adjoint[j].value);
      if (d <= 1e-6 * scale) ++hits;
      if (d < best) {
        best = d;
        pick = static_cast<int>(j);
      }
    }
    if (hits > 1)
      throw NumericError("check_biorthogonality: ambiguous eigenvalue matching near " +
                         format_double(direct[i].value.real()));
    if (pick < 0) throw NumericError("check_biorthogonality: no adjoint candidate left");
    match[i] = pick;
    used[pick] = 1;
    report.value_agreement.push_back(best / scale);
  }

  auto bilinear = [&](const EigenMode& d, const EigenMode& a) {
    Eigen::VectorXd bvr, bvi;
    b.multiply_complex(d.vec_re, d.vec_im.size() ? d.vec_im : Eigen::VectorXd::Zero(0), bvr,
                       bvi);
    const Eigen::VectorXd& ar = a.vec_re;
    Eigen::VectorXd ai = a.vec_im.size() ? a.vec_im : Eigen::VectorXd::Zero(ar.size());
    const double rr = bvr.dot(ar) - bvi.dot(ai);
    const double ii = bvr.dot(ai) + bvi.dot(ar);
    return std::complex<double>(rr, ii);
  };

  Eigen::MatrixXd cross(n, n);
  std::vector<double> diag(n);
  for (int i = 0; i < n; ++i) diag[i] = std::abs(bilinear(direct[i], adjoint[match[i]]));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double denom = std::sqrt(diag[i] * diag[j]);
      cross(i, j) = std::abs(bilinear(direct[i], adjoint[match[j]])) /
                    (denom > 0.0 ? denom : 1.0);
    }
  report.normalized_abs = cross;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) report.max_offdiag = std::max(report.max_offdiag, cross(i, j));
  return report;
}

/// Symmetric matrix of Euclidean inner products of one field block across
/// modes, each block normalized to unit norm first. Pair members enter
/// through their stored real vectors (real part, then imaginary part).
inline Eigen::MatrixXd gram_matrix(const std::vector<EigenMode>& modes, int block_offset,
                                   int block_size) {
  const int n = static_cast<int>(modes.size());
  if (n == 0) throw UsageError("gram_matrix: no modes");
  Eigen::MatrixXd r(block_size, n);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd blk = modes[i].representative().segment(block_offset, block_size);
    const double s = blk.norm();
    r.col(i) = s > 0.0 ? Eigen::VectorXd(blk / s) : blk;
  }
  return r.transpose() * r;
}

}  // namespace scm
