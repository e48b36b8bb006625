#include "bifkit/eqbif.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>

namespace bifkit {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
using Cplx = std::complex<double>;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
}  // namespace

// ---------------------------------------------------------------------------
// EpProblem

EpProblem::EpProblem(VectorField field, Vec p0, std::vector<int> free_params,
                     std::vector<std::pair<int, double>> state_pins)
    : field_(std::move(field)),
      p0_(std::move(p0)),
      free_(std::move(free_params)),
      pins_(std::move(state_pins)) {
  for (int j = 0; j < field_.n_x; ++j) {
    bool pinned = false;
    for (const auto& [idx, val] : pins_)
      if (idx == j) pinned = true;
    if (!pinned) unpinned_.push_back(j);
  }
  n_unpinned_ = static_cast<int>(unpinned_.size());
}

int EpProblem::num_unknowns() const {
  return n_unpinned_ + static_cast<int>(free_.size());
}

Vec EpProblem::state(const Vec& u) const {
  Vec x(field_.n_x);
  for (const auto& [idx, val] : pins_) x[idx] = val;
  for (int i = 0; i < n_unpinned_; ++i) x[unpinned_[i]] = u[i];
  return x;
}

Vec EpProblem::params(const Vec& u) const {
  Vec p = p0_;
  for (size_t i = 0; i < free_.size(); ++i)
    p[free_[i]] = u[n_unpinned_ + static_cast<int>(i)];
  return p;
}

Vec EpProblem::pack(const Vec& x, const Vec& p) const {
  Vec u(num_unknowns());
  for (int i = 0; i < n_unpinned_; ++i) u[i] = x[unpinned_[i]];
  for (size_t i = 0; i < free_.size(); ++i)
    u[n_unpinned_ + static_cast<int>(i)] = p[free_[i]];
  return u;
}

Vec EpProblem::residual(const Vec& u) const {
  return field_.eval(state(u), params(u));
}

SpMat EpProblem::jacobian(const Vec& u) const {
  const Vec x = state(u), p = params(u);
  Mat Jx = field_.jac_x(x, p);
  Mat Jp = field_.jac_p(x, p);
  Mat J(field_.n_x, num_unknowns());
  for (int i = 0; i < n_unpinned_; ++i) J.col(i) = Jx.col(unpinned_[i]);
  for (size_t i = 0; i < free_.size(); ++i)
    J.col(n_unpinned_ + static_cast<int>(i)) = Jp.col(free_[i]);
  return J.sparseView();
}

// ---------------------------------------------------------------------------
// SnProblem

SnProblem::SnProblem(VectorField field, Vec p0, std::vector<int> free_params)
    : field_(std::move(field)), p0_(std::move(p0)), free_(std::move(free_params)) {}

Vec SnProblem::params(const Vec& u) const {
  Vec p = p0_;
  for (size_t i = 0; i < free_.size(); ++i)
    p[free_[i]] = u[field_.n_x + static_cast<int>(i)];
  return p;
}

Vec SnProblem::pack(const Vec& x, const Vec& p, const Vec& v) const {
  Vec u(num_unknowns());
  u.head(field_.n_x) = x;
  for (size_t i = 0; i < free_.size(); ++i)
    u[field_.n_x + static_cast<int>(i)] = p[free_[i]];
  u.tail(field_.n_x) = v;
  return u;
}

Vec SnProblem::residual(const Vec& u) const {
  const int n = field_.n_x;
  const Vec x = state(u), p = params(u), v = nullvec(u);
  Vec r(num_residuals());
  r.head(n) = field_.eval(x, p);
  r.segment(n, n) = field_.jac_x(x, p) * v;
  r[2 * n] = v.squaredNorm() - 1.0;
  return r;
}

// ---------------------------------------------------------------------------
// HopfProblem

HopfProblem::HopfProblem(VectorField field, Vec p0,
                         std::vector<int> free_params, unsigned seed)
    : field_(std::move(field)),
      p0_(std::move(p0)),
      free_(std::move(free_params)),
      rng_(seed) {
  std::normal_distribution<double> nd;
  wref_.resize(field_.n_x);
  for (int i = 0; i < field_.n_x; ++i) wref_[i] = nd(rng_);
  wref_.normalize();
  xi_ = wref_;
}

Vec HopfProblem::params(const Vec& u) const {
  Vec p = p0_;
  for (size_t i = 0; i < free_.size(); ++i)
    p[free_[i]] = u[field_.n_x + static_cast<int>(i)];
  return p;
}

Vec HopfProblem::residual(const Vec& u) const {
  const int n = field_.n_x;
  const Vec x = state(u), p = params(u);
  const double kk = k(u);
  const int base = n + nf() + 1;
  const Vec V1 = u.segment(base, n);
  const Vec W1 = u.segment(base + n, n);
  const Vec V2 = u.segment(base + 2 * n, n);
  const Vec W2 = u.segment(base + 3 * n, n);
  const Mat J = field_.jac_x(x, p);
  Vec r(num_residuals());
  r.head(n) = field_.eval(x, p);
  r.segment(n, n) = J * V1 - W1;
  r.segment(2 * n, n) = J * V2 - W2;
  r.segment(3 * n, n) = W1 - V2;
  r.segment(4 * n, n) = kk * V1 + W2;
  r[5 * n] = V1.squaredNorm() - 1.0;
  r[5 * n + 1] = xi_.dot(V1);
  return r;
}

void HopfProblem::refresh_xi(const Vec& v1_cur) {
  const Vec vhat = v1_cur.normalized();
  std::normal_distribution<double> nd;
  for (int attempt = 0; attempt < 50; ++attempt) {
    Vec cand = wref_ - wref_.dot(vhat) * vhat;
    if (cand.norm() >= 1e-3) {
      xi_ = cand.normalized();
      return;
    }
    for (int i = 0; i < field_.n_x; ++i) wref_[i] = nd(rng_);
    wref_.normalize();
  }
}

bool HopfProblem::update(Vec& u, Vec*) {
  refresh_xi(v1(u));
  return true;
}

std::any HopfProblem::save_state() const {
  return std::make_pair(xi_, wref_);
}

void HopfProblem::restore_state(const std::any& s) {
  const auto& p = std::any_cast<const std::pair<Vec, Vec>&>(s);
  xi_ = p.first;
  wref_ = p.second;
}

Vec HopfProblem::init(const Vec& x, const Vec& p_full, double omega,
                      const Vec& v, const Vec& w) {
  const int n = field_.n_x;
  refresh_xi(v);
  Vec u(num_unknowns());
  u.head(n) = x;
  for (size_t i = 0; i < free_.size(); ++i)
    u[n + static_cast<int>(i)] = p_full[free_[i]];
  u[n + nf()] = omega * omega;
  const int base = n + nf() + 1;
  u.segment(base, n) = v;
  u.segment(base + n, n) = -omega * w;
  u.segment(base + 2 * n, n) = -omega * w;
  u.segment(base + 3 * n, n) = -omega * omega * v;
  return u;
}

HopfPointData HopfProblem::data(const Vec& u) const {
  const int n = field_.n_x;
  const int base = n + nf() + 1;
  HopfPointData d;
  d.x = state(u);
  d.p = params(u);
  d.k = k(u);
  d.v1 = u.segment(base, n);
  d.w1 = u.segment(base + n, n);
  d.v2 = u.segment(base + 2 * n, n);
  d.w2 = u.segment(base + 3 * n, n);
  d.xi = xi_;
  d.classification = d.k > 1e-8 ? "HB" : (d.k < -1e-8 ? "NSA" : "BTP");
  return d;
}

// ---------------------------------------------------------------------------
// DhProblem

DhProblem::DhProblem(VectorField field, Vec p0, std::vector<int> free_params,
                     unsigned seed)
    : hopf_(std::move(field), std::move(p0), std::move(free_params), seed) {}

Vec DhProblem::residual(const Vec& u) const {
  Vec r(num_residuals());
  r.head(hopf_.num_residuals()) = hopf_.residual(u);
  const double kk = hopf_.k(u);
  if (kk <= 0.0) {
    r[hopf_.num_residuals()] = kNaN;
  } else {
    r[hopf_.num_residuals()] = lyapunov_first(
        hopf_.field(), hopf_.state(u), hopf_.params(u), kk, hopf_.v1(u));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Eigen-data helpers

EquilibriumPoint analyze_equilibrium(const VectorField& field, const Vec& x,
                                     const Vec& p) {
  EquilibriumPoint ep;
  ep.x = x;
  ep.p = p;
  Eigen::EigenSolver<Mat> es(field.jac_x(x, p));
  ep.eigenvalues = es.eigenvalues();
  ep.ustab = 0;
  for (int i = 0; i < ep.eigenvalues.size(); ++i)
    if (ep.eigenvalues[i].real() > 0.0) ++ep.ustab;
  return ep;
}

SNPointData sn_init(const VectorField& field, const EquilibriumPoint& ep,
                    double tol) {
  Eigen::EigenSolver<Mat> es(field.jac_x(ep.x, ep.p));
  int best = -1;
  double bmag = tol;
  for (int i = 0; i < es.eigenvalues().size(); ++i) {
    const double mag = std::abs(es.eigenvalues()[i]);
    if (mag < bmag) {
      bmag = mag;
      best = i;
    }
  }
  if (best < 0)
    throw std::runtime_error("sn_init: no eigenvalue within tolerance of 0");
  Vec v = es.eigenvectors().col(best).real();
  SNPointData sn;
  sn.x = ep.x;
  sn.p = ep.p;
  sn.v = v.normalized();
  return sn;
}

std::optional<std::tuple<double, Vec, Vec>> hopf_eigendata(const Mat& J,
                                                           double tol) {
  Eigen::EigenSolver<Mat> es(J);
  int best = -1;
  double bre = tol;
  for (int i = 0; i < es.eigenvalues().size(); ++i) {
    const Cplx lam = es.eigenvalues()[i];
    if (lam.imag() > 1e-10 && std::abs(lam.real()) < bre) {
      bre = std::abs(lam.real());
      best = i;
    }
  }
  if (best < 0) return std::nullopt;
  const double omega = es.eigenvalues()[best].imag();
  CVec q = es.eigenvectors().col(best);
  // Rotate the phase so Re q and Im q are orthogonal, then normalize Re q.
  Vec a = q.real(), b = q.imag();
  const double theta =
      0.5 * std::atan2(2.0 * a.dot(b), a.squaredNorm() - b.squaredNorm());
  q *= std::exp(Cplx(0.0, -theta));
  a = q.real();
  b = q.imag();
  if (a.norm() < 1e-12) return std::nullopt;
  b /= a.norm();
  a /= a.norm();
  return std::make_tuple(omega, a, b);
}

// ---------------------------------------------------------------------------
// First Lyapunov coefficient

namespace {

struct MultilinearFD {
  const VectorField& f;
  Vec x;
  Vec p;
  double h;

  Vec F(const Vec& y) const { return f.eval(y, p); }

  Vec B(const Vec& a, const Vec& b) const {
    return (F(x + h * (a + b)) + F(x - h * (a + b)) - F(x + h * (a - b)) -
            F(x - h * (a - b))) /
           (4.0 * h * h);
  }

  Vec T(const Vec& w) const {
    return (F(x + 2.0 * h * w) - 2.0 * F(x + h * w) + 2.0 * F(x - h * w) -
            F(x - 2.0 * h * w)) /
           (2.0 * h * h * h);
  }

  Vec C(const Vec& a, const Vec& b, const Vec& c) const {
    return (T(a + b + c) - T(a + b) - T(a + c) - T(b + c) + T(a) + T(b) +
            T(c)) /
           6.0;
  }

  CVec B(const CVec& u, const CVec& v) const {
    Vec ur = u.real(), ui = u.imag(), vr = v.real(), vi = v.imag();
    Vec re = B(ur, vr) - B(ui, vi);
    Vec im = B(ur, vi) + B(ui, vr);
    return re.cast<Cplx>() + Cplx(0, 1) * im.cast<Cplx>();
  }

  CVec C(const CVec& u, const CVec& v, const CVec& w) const {
    Vec ur = u.real(), ui = u.imag(), vr = v.real(), vi = v.imag(),
        wr = w.real(), wi = w.imag();
    Vec re = C(ur, vr, wr) - C(ur, vi, wi) - C(ui, vr, wi) - C(ui, vi, wr);
    Vec im = C(ur, vr, wi) + C(ur, vi, wr) + C(ui, vr, wr) - C(ui, vi, wi);
    return re.cast<Cplx>() + Cplx(0, 1) * im.cast<Cplx>();
  }
};

}  // namespace

double lyapunov_first(const VectorField& field, const Vec& x, const Vec& p,
                      double k, const Vec& v1) {
  if (k <= 0.0) throw std::runtime_error("lyapunov_first: k <= 0, not a Hopf");
  const double omega = std::sqrt(k);
  const Mat A = field.jac_x(x, p);

  // Critical eigenvector without an eigensolve: q = omega v1 - i J v1
  // satisfies A q = i omega q because J^2 v1 = -k v1 on the Hopf branch.
  CVec q = (omega * v1).cast<Cplx>() - Cplx(0, 1) * (A * v1).cast<Cplx>();
  q /= q.norm();

  // Adjoint eigenvector: A^T pvec = -i omega pvec, normalized <p,q> = 1.
  CMat At = A.transpose().cast<Cplx>() +
            Cplx(0, 1) * omega * CMat::Identity(A.rows(), A.cols());
  Eigen::JacobiSVD<CMat> svd(At, Eigen::ComputeFullV);
  CVec pvec = svd.matrixV().col(A.cols() - 1);
  const Cplx ip = pvec.dot(q);
  if (std::abs(ip) < 1e-12)
    throw std::runtime_error("lyapunov_first: degenerate eigenvector pairing");
  pvec /= std::conj(ip);

  MultilinearFD ml{field, x, p, 1e-4 * std::max(1.0, x.norm())};
  const CVec qbar = q.conjugate();

  Vec Bqqbar = ml.B(q, qbar).real();
  Vec s1 = A.partialPivLu().solve(Bqqbar);
  CVec s1c = s1.cast<Cplx>();

  CVec Bqq = ml.B(q, q);
  CMat M = Cplx(0, 2.0 * omega) * CMat::Identity(A.rows(), A.cols()) -
           A.cast<Cplx>();
  CVec s2 = M.partialPivLu().solve(Bqq);

  const Cplx term = pvec.dot(ml.C(q, q, qbar)) - 2.0 * pvec.dot(ml.B(q, s1c)) +
                    pvec.dot(ml.B(qbar, s2));
  return term.real() / (2.0 * omega);
}

// ---------------------------------------------------------------------------
// Monitors

std::vector<Monitor> eig_monitors(std::shared_ptr<EpProblem> problem) {
  auto jac = [problem](const Vec& u) {
    return problem->field().jac_x(problem->state(u), problem->params(u));
  };
  auto eigs = [jac](const Vec& u) {
    Eigen::EigenSolver<Mat> es(jac(u));
    return Eigen::VectorXcd(es.eigenvalues());
  };

  Monitor ustab;
  ustab.name = "ustab";
  ustab.kind = MonitorKind::Discrete;
  ustab.eval = [eigs](const Vec& u) {
    auto lam = eigs(u);
    int c = 0;
    for (int i = 0; i < lam.size(); ++i)
      if (lam[i].real() > 0.0) ++c;
    return static_cast<double>(c);
  };
  // Hopf points are located from the jump in the unstable count: bisection on
  // the integer stays accurate even when several pairs cross the axis at once,
  // where the product test function below has a high-order root. Real-axis
  // crossings (folds) are left to the determinant monitor.
  ustab.label_fn = [eigs](const Vec& u) {
    auto lam = eigs(u);
    int bi = 0;
    for (int i = 1; i < lam.size(); ++i)
      if (std::abs(lam[i].real()) < std::abs(lam[bi].real())) bi = i;
    const double scale = std::max(1.0, std::abs(lam[bi]));
    return std::abs(lam[bi].imag()) > 1e-6 * scale ? std::string("HB")
                                                   : std::string();
  };

  Monitor sn;
  sn.name = "sn_test";
  sn.kind = MonitorKind::Regular;
  sn.event_label = "SN";
  sn.eval = [jac](const Vec& u) { return jac(u).determinant(); };

  Monitor hb;
  hb.name = "hopf_test";
  hb.kind = MonitorKind::Regular;
  hb.eval = [eigs](const Vec& u) {
    auto lam = eigs(u);
    Cplx prod(1.0, 0.0);
    for (int i = 0; i < lam.size(); ++i)
      for (int j = i + 1; j < lam.size(); ++j) prod *= lam[i] + lam[j];
    return prod.real();
  };
  hb.label_fn = [eigs](const Vec& u) {
    auto lam = eigs(u);
    double best = std::numeric_limits<double>::max();
    int bi = 0, bj = 0;
    for (int i = 0; i < lam.size(); ++i)
      for (int j = i + 1; j < lam.size(); ++j) {
        const double mag = std::abs(lam[i] + lam[j]);
        if (mag < best) {
          best = mag;
          bi = i;
          bj = j;
        }
      }
    // Imaginary-pair crossings are reported through the ustab monitor above;
    // this monitor only labels the neutral saddles, where the unstable count
    // does not change.
    const double scale = std::max(1.0, std::abs(lam[bi]));
    return std::abs(lam[bi].imag()) > 1e-6 * scale &&
                   std::abs(lam[bj].imag()) > 1e-6 * scale
               ? std::string()
               : std::string("NSA");
  };
  return {ustab, sn, hb};
}

std::vector<Monitor> hopf_monitors(std::shared_ptr<HopfProblem> problem) {
  Monitor km;
  km.name = "k";
  km.kind = MonitorKind::Regular;
  km.event_label = "BTP";
  km.eval = [problem](const Vec& u) { return problem->k(u); };

  Monitor l1;
  l1.name = "l1";
  l1.kind = MonitorKind::Regular;
  l1.event_label = "DH";
  l1.eval = [problem](const Vec& u) {
    const double kk = problem->k(u);
    if (kk <= 1e-10) return kNaN;
    return lyapunov_first(problem->field(), problem->state(u),
                          problem->params(u), kk, problem->v1(u));
  };
  return {km, l1};
}

}  // namespace bifkit
