#include "bifkit/pobif.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <tuple>

namespace bifkit {

namespace {
constexpr double kPi = 3.14159265358979323846;
using Cplx = std::complex<double>;
}  // namespace

// ---------------------------------------------------------------------------
// Layout

POProblem::POProblem(VectorField field, Mesh mesh, Vec p0,
                     std::vector<int> free_params, POOptions opts)
    : field_(std::move(field)),
      mesh_(std::move(mesh)),
      p0_(std::move(p0)),
      free_(std::move(free_params)),
      opts_(opts) {
  Lc_ = lagrange_values(mesh_.ndeg, mesh_.nodes);
  Dc_ = lagrange_derivs(mesh_.ndeg, mesh_.nodes);
  rebuild_layout();
}

void POProblem::rebuild_layout() {
  block_ = field_.n_x * mesh_.n_base();
  if (phi_.size() != block_) {
    phi_ = Vec::Zero(block_);
    cref_ = 0.0;
  }
}

int POProblem::n_funcs() const {
  switch (opts_.kind) {
    case POKind::plain: return 1;
    case POKind::sn:
    case POKind::pd: return 2;
    case POKind::tr: return 3;
  }
  return 1;
}

int POProblem::period_pos() const {
  return opts_.fixed_T ? -1 : n_funcs() * block_;
}

int POProblem::param_pos(int idx) const {
  return n_funcs() * block_ + (opts_.fixed_T ? 0 : 1) + idx;
}

int POProblem::num_unknowns() const {
  const int n = field_.n_x;
  int extras = 0;
  switch (opts_.kind) {
    case POKind::plain: extras = 0; break;
    case POKind::sn: extras = 1 + n; break;
    case POKind::pd: extras = n; break;
    case POKind::tr: extras = 2 + 2 * n; break;
  }
  return n_funcs() * block_ + (opts_.fixed_T ? 0 : 1) +
         static_cast<int>(free_.size()) + extras;
}

int POProblem::num_residuals() const {
  const int n = field_.n_x;
  const int C = n * mesh_.L * mesh_.ndeg;
  int bottom = 0;
  switch (opts_.kind) {
    case POKind::plain: bottom = 0; break;
    case POKind::sn: bottom = 2 + 2 * n; break;
    case POKind::pd: bottom = 1 + 2 * n; break;
    case POKind::tr: bottom = 3 + 4 * n; break;
  }
  return n_funcs() * C + n + 1 + bottom;
}

double POProblem::period(const Vec& u) const {
  return opts_.fixed_T ? *opts_.fixed_T : u[period_pos()];
}

Vec POProblem::params(const Vec& u) const {
  Vec p = p0_;
  for (size_t i = 0; i < free_.size(); ++i)
    p[free_[i]] = u[param_pos(static_cast<int>(i))];
  return p;
}

Vec POProblem::variational(const Vec& u, int which) const {
  return u.segment((1 + which) * block_, block_);
}

Vec POProblem::orbit_at(const Vec& u, double tau) const {
  return eval_mesh_function(mesh_, field_.n_x, orbit(u), tau);
}

// ---------------------------------------------------------------------------
// Residual

Vec POProblem::residual(const Vec& u) const {
  const int n = field_.n_x;
  const int nd = mesh_.ndeg;
  const int L = mesh_.L;
  const int C = n * L * nd;
  const int nfun = n_funcs();
  const double T = period(u);
  const Vec p = params(u);

  Vec r(num_residuals());
  const int e0 = n_funcs() * block_ + (opts_.fixed_T ? 0 : 1) +
                 static_cast<int>(free_.size());

  for (int i = 0; i < L; ++i) {
    const double w = mesh_.width(i);
    for (int j = 0; j < nd; ++j) {
      // Collocation-node values of every mesh function.
      Vec xj = Vec::Zero(n);
      for (int m = 0; m <= nd; ++m)
        xj += Lc_(j, m) * u.segment((i * nd + m) * n, n);
      Mat J;
      if (nfun > 1) J = field_.jac_x(xj, p);
      for (int fi = 0; fi < nfun; ++fi) {
        const int off = fi * block_;
        Vec val = Vec::Zero(n), der = Vec::Zero(n);
        for (int m = 0; m <= nd; ++m) {
          const Vec seg = u.segment(off + (i * nd + m) * n, n);
          val += Lc_(j, m) * seg;
          der += Dc_(j, m) * seg;
        }
        der /= w;
        Vec rhs = fi == 0 ? Vec(T * field_.eval(xj, p)) : Vec(T * (J * val));
        r.segment(fi * C + (i * nd + j) * n, n) = der - rhs;
      }
    }
  }

  const int N1 = (mesh_.n_base() - 1) * n;
  r.segment(nfun * C, n) = u.head(n) - u.segment(N1, n);
  r[nfun * C + n] = phi_.dot(u.head(block_)) - cref_;

  int row = nfun * C + n + 1;
  const Vec x0 = u.head(n);
  const Vec f0 = field_.eval(x0, p);
  switch (opts_.kind) {
    case POKind::plain:
      break;
    case POKind::sn: {
      const double b = u[e0];
      const Vec v = u.segment(e0 + 1, n);
      const Vec y0 = u.segment(block_, n);
      const Vec y1 = u.segment(block_ + N1, n);
      r[row] = f0.dot(v);
      r.segment(row + 1, n) = y0 - v;
      r.segment(row + 1 + n, n) = y1 - v - b * f0;
      r[row + 1 + 2 * n] = v.squaredNorm() - 1.0;
      break;
    }
    case POKind::pd: {
      const Vec v = u.segment(e0, n);
      const Vec y0 = u.segment(block_, n);
      const Vec y1 = u.segment(block_ + N1, n);
      r.segment(row, n) = y0 - v;
      r.segment(row + n, n) = y1 + v;
      r[row + 2 * n] = v.squaredNorm() - 1.0;
      break;
    }
    case POKind::tr: {
      const double a = u[e0], b = u[e0 + 1];
      const Vec v1 = u.segment(e0 + 2, n);
      const Vec v2 = u.segment(e0 + 2 + n, n);
      const Vec y10 = u.segment(block_, n);
      const Vec y11 = u.segment(block_ + N1, n);
      const Vec y20 = u.segment(2 * block_, n);
      const Vec y21 = u.segment(2 * block_ + N1, n);
      r.segment(row, n) = y10 - v1;
      r.segment(row + n, n) = y20 - v2;
      r.segment(row + 2 * n, n) = y11 - a * v1 + b * v2;
      r.segment(row + 3 * n, n) = y21 - a * v2 - b * v1;
      r[row + 4 * n] = v1.squaredNorm() + v2.squaredNorm() - 1.0;
      r[row + 4 * n + 1] = v1.dot(v2);
      r[row + 4 * n + 2] = a * a + b * b - 1.0;
      break;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Jacobian

SpMat POProblem::jacobian(const Vec& u) const {
  const int n = field_.n_x;
  const int nd = mesh_.ndeg;
  const int L = mesh_.L;
  const int C = n * L * nd;
  const int nfun = n_funcs();
  const double T = period(u);
  const Vec p = params(u);
  const int nf = static_cast<int>(free_.size());
  const int tpos = period_pos();
  const int e0 = nfun * block_ + (opts_.fixed_T ? 0 : 1) + nf;
  const double hfd = 1e-6;

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<size_t>(nfun) * C * (nd + 2) * n);
  auto add_block = [&](int r0, int c0, const Mat& B) {
    for (int a = 0; a < B.rows(); ++a)
      for (int b = 0; b < B.cols(); ++b)
        if (B(a, b) != 0.0) trips.emplace_back(r0 + a, c0 + b, B(a, b));
  };
  auto add_col = [&](int r0, int c, const Vec& v) {
    for (int a = 0; a < v.size(); ++a)
      if (v[a] != 0.0) trips.emplace_back(r0 + a, c, v[a]);
  };

  for (int i = 0; i < L; ++i) {
    const double w = mesh_.width(i);
    for (int j = 0; j < nd; ++j) {
      Vec xj = Vec::Zero(n);
      for (int m = 0; m <= nd; ++m)
        xj += Lc_(j, m) * u.segment((i * nd + m) * n, n);
      const Mat J = field_.jac_x(xj, p);
      const Mat Jp = field_.jac_p(xj, p);
      const Vec fj = field_.eval(xj, p);
      const int r0 = (i * nd + j) * n;

      // x_d rows.
      for (int m = 0; m <= nd; ++m) {
        Mat B = (Dc_(j, m) / w) * Mat::Identity(n, n) - T * Lc_(j, m) * J;
        add_block(r0, (i * nd + m) * n, B);
      }
      if (tpos >= 0) add_col(r0, tpos, Vec(-fj));
      for (int l = 0; l < nf; ++l)
        add_col(r0, param_pos(l), Vec(-T * Jp.col(free_[l])));

      // Variational rows.
      for (int fi = 1; fi < nfun; ++fi) {
        const int off = fi * block_;
        Vec yj = Vec::Zero(n);
        for (int m = 0; m <= nd; ++m)
          yj += Lc_(j, m) * u.segment(off + (i * nd + m) * n, n);
        const int rv = fi * C + r0;
        for (int m = 0; m <= nd; ++m) {
          Mat B = (Dc_(j, m) / w) * Mat::Identity(n, n) - T * Lc_(j, m) * J;
          add_block(rv, off + (i * nd + m) * n, B);
        }
        // d/dx [J(x) y] by central differences, chained through x(tau_ij).
        Mat M(n, n);
        for (int c = 0; c < n; ++c) {
          Vec xp = xj, xm = xj;
          const double h = hfd * std::max(1.0, std::abs(xj[c]));
          xp[c] += h;
          xm[c] -= h;
          M.col(c) = ((field_.jac_x(xp, p) - field_.jac_x(xm, p)) * yj) /
                     (2.0 * h);
        }
        for (int m = 0; m <= nd; ++m)
          add_block(rv, (i * nd + m) * n, Mat(-T * Lc_(j, m) * M));
        if (tpos >= 0) add_col(rv, tpos, Vec(-J * yj));
        for (int l = 0; l < nf; ++l) {
          Vec pp = p, pm = p;
          const double h = hfd * std::max(1.0, std::abs(p[free_[l]]));
          pp[free_[l]] += h;
          pm[free_[l]] -= h;
          Vec dJp = ((field_.jac_x(xj, pp) - field_.jac_x(xj, pm)) * yj) /
                    (2.0 * h);
          add_col(rv, param_pos(l), Vec(-T * dJp));
        }
      }
    }
  }

  // Periodicity and phase rows.
  const int N1 = (mesh_.n_base() - 1) * n;
  const int rper = nfun * C;
  add_block(rper, 0, Mat::Identity(n, n));
  add_block(rper, N1, Mat(-Mat::Identity(n, n)));
  for (int c = 0; c < block_; ++c)
    if (phi_[c] != 0.0) trips.emplace_back(rper + n, c, phi_[c]);

  // Bottom blocks.
  int row = rper + n + 1;
  const Vec x0 = u.head(n);
  const Vec f0 = field_.eval(x0, p);
  const Mat J0 = field_.jac_x(x0, p);
  const Mat Jp0 = field_.jac_p(x0, p);
  switch (opts_.kind) {
    case POKind::plain:
      break;
    case POKind::sn: {
      const double b = u[e0];
      const Vec v = u.segment(e0 + 1, n);
      // f(x0,p)'v
      add_block(row, 0, Mat(v.transpose() * J0));
      for (int l = 0; l < nf; ++l)
        trips.emplace_back(row, param_pos(l), v.dot(Jp0.col(free_[l])));
      add_block(row, e0 + 1, Mat(f0.transpose()));
      // y(0) - v
      add_block(row + 1, block_, Mat::Identity(n, n));
      add_block(row + 1, e0 + 1, Mat(-Mat::Identity(n, n)));
      // y(1) - v - b f(x0,p)
      add_block(row + 1 + n, block_ + N1, Mat::Identity(n, n));
      add_block(row + 1 + n, e0 + 1, Mat(-Mat::Identity(n, n)));
      add_col(row + 1 + n, e0, Vec(-f0));
      add_block(row + 1 + n, 0, Mat(-b * J0));
      for (int l = 0; l < nf; ++l)
        add_col(row + 1 + n, param_pos(l), Vec(-b * Jp0.col(free_[l])));
      // v'v - 1
      add_block(row + 1 + 2 * n, e0 + 1, Mat(2.0 * v.transpose()));
      break;
    }
    case POKind::pd: {
      const Vec v = u.segment(e0, n);
      add_block(row, block_, Mat::Identity(n, n));
      add_block(row, e0, Mat(-Mat::Identity(n, n)));
      add_block(row + n, block_ + N1, Mat::Identity(n, n));
      add_block(row + n, e0, Mat::Identity(n, n));
      add_block(row + 2 * n, e0, Mat(2.0 * v.transpose()));
      break;
    }
    case POKind::tr: {
      const double a = u[e0], b = u[e0 + 1];
      const Vec v1 = u.segment(e0 + 2, n);
      const Vec v2 = u.segment(e0 + 2 + n, n);
      add_block(row, block_, Mat::Identity(n, n));
      add_block(row, e0 + 2, Mat(-Mat::Identity(n, n)));
      add_block(row + n, 2 * block_, Mat::Identity(n, n));
      add_block(row + n, e0 + 2 + n, Mat(-Mat::Identity(n, n)));
      add_block(row + 2 * n, block_ + N1, Mat::Identity(n, n));
      add_block(row + 2 * n, e0 + 2, Mat(-a * Mat::Identity(n, n)));
      add_block(row + 2 * n, e0 + 2 + n, Mat(b * Mat::Identity(n, n)));
      add_col(row + 2 * n, e0, Vec(-v1));
      add_col(row + 2 * n, e0 + 1, Vec(v2));
      add_block(row + 3 * n, 2 * block_ + N1, Mat::Identity(n, n));
      add_block(row + 3 * n, e0 + 2 + n, Mat(-a * Mat::Identity(n, n)));
      add_block(row + 3 * n, e0 + 2, Mat(-b * Mat::Identity(n, n)));
      add_col(row + 3 * n, e0, Vec(-v2));
      add_col(row + 3 * n, e0 + 1, Vec(-v1));
      add_block(row + 4 * n, e0 + 2, Mat(2.0 * v1.transpose()));
      add_block(row + 4 * n, e0 + 2 + n, Mat(2.0 * v2.transpose()));
      add_block(row + 4 * n + 1, e0 + 2, Mat(v2.transpose()));
      add_block(row + 4 * n + 1, e0 + 2 + n, Mat(v1.transpose()));
      trips.emplace_back(row + 4 * n + 2, e0, 2.0 * a);
      trips.emplace_back(row + 4 * n + 2, e0 + 1, 2.0 * b);
      break;
    }
  }

  SpMat Jmat(num_residuals(), num_unknowns());
  Jmat.setFromTriplets(trips.begin(), trips.end());
  return Jmat;
}

// ---------------------------------------------------------------------------
// Phase reference, error estimate, adaptation

void POProblem::set_reference(const Vec& x_values) {
  const int n = field_.n_x;
  const int nd = mesh_.ndeg;
  phi_ = Vec::Zero(block_);
  for (int i = 0; i < mesh_.L; ++i) {
    const double w = mesh_.width(i);
    for (int j = 0; j < nd; ++j) {
      Vec xdot = Vec::Zero(n);
      for (int m = 0; m <= nd; ++m)
        xdot += Dc_(j, m) * x_values.segment(((i * nd + m)) * n, n);
      xdot /= w;
      const double wq = mesh_.weights[j] * w;
      for (int m = 0; m <= nd; ++m)
        phi_.segment((i * nd + m) * n, n) += wq * Lc_(j, m) * xdot;
    }
  }
  cref_ = phi_.dot(x_values);
}

double POProblem::err_weight(const Vec& x_values, int interval) const {
  const int n = field_.n_x;
  const int nd = mesh_.ndeg;
  const double w = mesh_.width(interval);
  // ndeg-th divided difference over the interval's base points per state
  // component; on a uniform local grid this is the nd-th finite difference
  // over (local spacing)^nd.
  double best = 0.0;
  for (int c = 0; c < n; ++c) {
    double dd = 0.0;
    for (int m = 0; m <= nd; ++m) {
      const double binom = std::tgamma(nd + 1.0) /
                           (std::tgamma(m + 1.0) * std::tgamma(nd - m + 1.0));
      const double sign = ((nd - m) % 2 == 0) ? 1.0 : -1.0;
      dd += sign * binom * x_values[(interval * nd + m) * n + c];
    }
    const double hloc = w / nd;
    double val = std::abs(dd) / std::pow(hloc, nd) / std::tgamma(nd + 1.0);
    best = std::max(best, val);
  }
  return best;  // ~ |x^(nd)| / nd!
}

double POProblem::estimate_error(const Vec& u) const {
  const Vec X = orbit(u);
  const int L = mesh_.L;
  const int nd = mesh_.ndeg;
  double worst = 0.0;
  for (int i = 0; i < L; ++i) {
    const int inext = (i + 1) % L;
    const double ci = 0.5 * (mesh_.boundaries[i] + mesh_.boundaries[i + 1]);
    double cn = 0.5 * (mesh_.boundaries[inext] + mesh_.boundaries[inext + 1]);
    if (inext < i) cn += 1.0;
    const double deriv =
        std::abs(err_weight(X, inext) - err_weight(X, i)) / (cn - ci);
    worst = std::max(worst, deriv * std::pow(mesh_.width(i), nd + 1));
  }
  return worst;
}

bool POProblem::update(Vec& u, Vec* tangent) {
  const int n = field_.n_x;
  // Equilibrium-collapse guard.
  double amp = 0.0;
  for (int c = 0; c < n; ++c) {
    double lo = u[c], hi = u[c];
    for (int q = 0; q < mesh_.n_base(); ++q) {
      lo = std::min(lo, u[q * n + c]);
      hi = std::max(hi, u[q * n + c]);
    }
    amp = std::max(amp, hi - lo);
  }
  if (amp < 1e-10) return false;

  set_reference(orbit(u));
  if (!opts_.adapt) return true;

  const double E = estimate_error(u);
  if (!std::isfinite(E)) return false;
  if (E >= 0.1 * opts_.err_tol && E <= opts_.err_tol) return true;

  const int nd = mesh_.ndeg;
  int L_new = static_cast<int>(std::lround(
      mesh_.L * std::pow(E / (0.5 * opts_.err_tol), 1.0 / (nd + 1))));
  L_new = std::min(std::max(L_new, opts_.L_min), opts_.L_max);
  if (L_new >= opts_.L_max && E > 4.0 * opts_.err_tol &&
      mesh_.L >= opts_.L_max)
    return false;  // cannot resolve within the interval budget
  if (L_new == mesh_.L && E <= opts_.err_tol) return true;

  // Equidistribute the per-interval weight.
  const Vec X = orbit(u);
  Vec wgt(mesh_.L);
  for (int i = 0; i < mesh_.L; ++i) {
    const int inext = (i + 1) % mesh_.L;
    const double raw =
        0.5 * (err_weight(X, i) + err_weight(X, inext));
    wgt[i] = std::pow(std::max(raw, 0.0), 1.0 / (nd + 1));
  }
  const double floor_w = 1e-3 * wgt.maxCoeff() + 1e-14;
  for (int i = 0; i < mesh_.L; ++i) wgt[i] += floor_w;

  Vec cum(mesh_.L + 1);
  cum[0] = 0.0;
  for (int i = 0; i < mesh_.L; ++i) cum[i + 1] = cum[i] + wgt[i];
  Vec nb(L_new + 1);
  nb[0] = 0.0;
  nb[L_new] = 1.0;
  int seg = 0;
  for (int j = 1; j < L_new; ++j) {
    const double target = cum[mesh_.L] * j / L_new;
    while (seg < mesh_.L - 1 && cum[seg + 1] < target) ++seg;
    const double frac = (target - cum[seg]) / (cum[seg + 1] - cum[seg]);
    nb[j] = mesh_.boundaries[seg] + frac * mesh_.width(seg);
  }

  Mesh old = mesh_;
  Mesh fresh = make_mesh(nb, nd);
  const int nfun = n_funcs();
  const int old_block = block_;
  const int new_block = n * fresh.n_base();
  const int tail_old = num_unknowns() - nfun * old_block;

  Vec nu(nfun * new_block + tail_old);
  for (int fi = 0; fi < nfun; ++fi)
    nu.segment(fi * new_block, new_block) = interpolate_onto(
        old, fresh, n, u.segment(fi * old_block, old_block));
  nu.tail(tail_old) = u.tail(tail_old);

  if (tangent && tangent->size() == u.size()) {
    Vec nt(nu.size());
    for (int fi = 0; fi < nfun; ++fi)
      nt.segment(fi * new_block, new_block) = interpolate_onto(
          old, fresh, n, tangent->segment(fi * old_block, old_block));
    nt.tail(tail_old) = tangent->tail(tail_old);
    *tangent = nt;
  }

  mesh_ = fresh;
  rebuild_layout();
  u = nu;
  set_reference(orbit(u));
  return true;
}

std::any POProblem::save_state() const {
  return std::make_tuple(mesh_.boundaries, phi_, cref_);
}

void POProblem::restore_state(const std::any& s) {
  const auto& [bnd, phi, cref] =
      std::any_cast<const std::tuple<Vec, Vec, double>&>(s);
  mesh_ = make_mesh(bnd, mesh_.ndeg);
  rebuild_layout();
  phi_ = phi;
  cref_ = cref;
}

// ---------------------------------------------------------------------------
// Assembly helpers

Vec POProblem::pack(const Vec& x_values, double T, const Vec& p_full) {
  Vec u = Vec::Zero(num_unknowns());
  u.head(block_) = x_values;
  if (period_pos() >= 0) u[period_pos()] = T;
  for (size_t i = 0; i < free_.size(); ++i)
    u[param_pos(static_cast<int>(i))] = p_full[free_[i]];
  set_reference(x_values);
  return u;
}

double POProblem::amplitude(const Vec& u, int coord) const {
  double lo = u[coord], hi = u[coord];
  for (int i = 0; i < mesh_.L; ++i) {
    for (int k = 0; k <= 16; ++k) {
      const double tau = mesh_.boundaries[i] + mesh_.width(i) * k / 16.0;
      const double val = orbit_at(u, tau)[coord];
      lo = std::min(lo, val);
      hi = std::max(hi, val);
    }
  }
  return hi - lo;
}

// ---------------------------------------------------------------------------
// Variational propagation / Floquet analysis

namespace {

// Per-interval transfer matrix and (optionally) interior values of the
// variational flow.
struct IntervalSolver {
  const POProblem& prob;
  const Vec& u;
  const Mat& Lc;
  const Mat& Dc;
  double T;
  Vec p;

  Mat transfer(int i, Mat* interior = nullptr) const {
    const auto& mesh = prob.mesh();
    const int n = prob.field().n_x;
    const int nd = mesh.ndeg;
    const double w = mesh.width(i);
    Mat A = Mat::Zero(nd * n, nd * n);
    Mat B = Mat::Zero(nd * n, n);
    for (int j = 0; j < nd; ++j) {
      Vec xj = Vec::Zero(n);
      for (int m = 0; m <= nd; ++m)
        xj += Lc(j, m) * u.segment((i * nd + m) * n, n);
      const Mat J = prob.field().jac_x(xj, p);
      for (int m = 0; m <= nd; ++m) {
        Mat blockM = (Dc(j, m) / w) * Mat::Identity(n, n) - T * Lc(j, m) * J;
        if (m == 0)
          B.block(j * n, 0, n, n) = -blockM;
        else
          A.block(j * n, (m - 1) * n, n, n) = blockM;
      }
    }
    Mat Z = A.partialPivLu().solve(B);  // values at local bases 1..nd per e_c
    if (interior) *interior = Z;
    return Z.bottomRows(n);
  }
};

}  // namespace

Mat propagate_variational(const POProblem& problem, const Vec& u,
                          const Mat& Y0) {
  const auto& mesh = problem.mesh();
  const int n = problem.field().n_x;
  const int nd = mesh.ndeg;
  const int K = static_cast<int>(Y0.cols());
  Mat out(mesh.n_base() * n, K);
  out.topRows(n) = Y0;
  Mat cur = Y0;
  IntervalSolver solver{problem, u, lagrange_values(nd, mesh.nodes),
                        lagrange_derivs(nd, mesh.nodes), problem.period(u),
                        problem.params(u)};
  for (int i = 0; i < mesh.L; ++i) {
    Mat interior;
    Mat G = solver.transfer(i, &interior);
    Mat vals = interior * cur;  // (nd*n) x K
    for (int m = 1; m <= nd; ++m)
      out.middleRows((i * nd + m) * n, n) = vals.middleRows((m - 1) * n, n);
    cur = G * cur;
  }
  return out;
}

FloquetData floquet(const POProblem& problem, const Vec& u) {
  const auto& mesh = problem.mesh();
  const int n = problem.field().n_x;
  IntervalSolver solver{problem, u, lagrange_values(mesh.ndeg, mesh.nodes),
                        lagrange_derivs(mesh.ndeg, mesh.nodes),
                        problem.period(u), problem.params(u)};
  FloquetData fd;
  Mat M = Mat::Identity(n, n);
  fd.log_scale = 0.0;
  for (int i = 0; i < mesh.L; ++i) {
    M = solver.transfer(i) * M;
    const double s = M.cwiseAbs().maxCoeff();
    if (s > 1e8 || (s > 0.0 && s < 1e-8)) {
      M /= s;
      fd.log_scale += std::log(s);
    }
  }
  fd.monodromy = M;
  Eigen::EigenSolver<Mat> es(M);
  fd.trivial_index = 0;
  double best = std::numeric_limits<double>::max();
  for (int k = 0; k < n; ++k) {
    const Cplx mu = es.eigenvalues()[k];
    const double lm = std::log(std::max(std::abs(mu), 1e-300)) + fd.log_scale;
    const double ph = std::arg(mu);
    fd.log_mod.push_back(lm);
    fd.phase.push_back(ph);
    fd.multipliers.push_back(std::exp(Cplx(lm, ph)));
    const double dist = lm * lm + ph * ph;
    if (dist < best) {
      best = dist;
      fd.trivial_index = k;
    }
  }
  fd.ust = 0;
  for (int k = 0; k < n; ++k)
    if (k != fd.trivial_index && fd.log_mod[k] > 0.0) ++fd.ust;
  return fd;
}

// ---------------------------------------------------------------------------
// Starters and lifts

Vec po_from_hopf(POProblem& problem, const Vec& x, const Vec& p_full,
                 double omega, const Vec& v, const Vec& w, double radius) {
  if (omega <= 0.0) throw std::runtime_error("po_from_hopf: omega <= 0");
  if (radius <= 0.0) radius = 1e-3 * std::max(1.0, x.norm());
  const auto& mesh = problem.mesh();
  const int n = problem.field().n_x;
  Vec X(mesh.n_base() * n);
  for (int q = 0; q < mesh.n_base(); ++q) {
    const int i = std::min(q / mesh.ndeg, mesh.L - 1);
    const int m = q - i * mesh.ndeg;
    const double tau =
        mesh.boundaries[i] + mesh.width(i) * static_cast<double>(m) / mesh.ndeg;
    X.segment(q * n, n) = x + radius * (v * std::cos(2.0 * kPi * tau) -
                                        w * std::sin(2.0 * kPi * tau));
  }
  return problem.pack(X, 2.0 * kPi / omega, p_full);
}

Vec po_lift(const POProblem& plain, const Vec& u, POProblem& target) {
  const int n = plain.field().n_x;
  const Vec X = plain.orbit(u);
  const double T = plain.period(u);
  const Vec p = plain.params(u);
  const Vec x0 = X.head(n);
  const Vec f0 = plain.field().eval(x0, p);
  const Vec f0n = f0.normalized();

  FloquetData fd = floquet(plain, u);
  Eigen::EigenSolver<Mat> es(fd.monodromy);

  int extras = 0;
  switch (target.options().kind) {
    case POKind::plain: extras = 0; break;
    case POKind::sn: extras = 1 + n; break;
    case POKind::pd: extras = n; break;
    case POKind::tr: extras = 2 + 2 * n; break;
  }
  const int e0 = target.num_unknowns() - extras;

  Vec out = Vec::Zero(target.num_unknowns());
  const int block = n * target.mesh().n_base();
  if (target.mesh().n_base() != plain.mesh().n_base())
    throw std::runtime_error("po_lift: target must share the source mesh");
  out.head(block) = X;
  if (target.period_pos() >= 0) out[target.period_pos()] = T;
  for (size_t l = 0; l < target.free_params().size(); ++l)
    out[target.param_pos(static_cast<int>(l))] = p[target.free_params()[l]];

  switch (target.options().kind) {
    case POKind::plain: {
      return target.pack(X, T, p);
    }
    case POKind::sn: {
      // Critical +1 eigenvector least aligned with the flow direction.
      int bi = -1;
      double bscore = std::numeric_limits<double>::max();
      for (int k = 0; k < n; ++k) {
        const double d = fd.log_mod[k] * fd.log_mod[k] +
                         fd.phase[k] * fd.phase[k];
        Vec w = es.eigenvectors().col(k).real();
        if (w.norm() < 1e-12) continue;
        w.normalize();
        const double align = std::abs(w.dot(f0n));
        const double score = d + align * align;
        if (align < 0.999 && score < bscore) {
          bscore = score;
          bi = k;
        }
      }
      if (bi < 0) throw std::runtime_error("po_lift: no critical eigenvector");
      Vec w = es.eigenvectors().col(bi).real();
      Vec v = (w - w.dot(f0n) * f0n).normalized();
      Mat Y = propagate_variational(plain, u, v);
      const Vec y1 = Y.bottomRows(n).col(0);
      const double b = f0.dot(y1 - v) / f0.squaredNorm();
      out.segment(block, block) = Y.col(0);
      out[e0] = b;
      out.segment(e0 + 1, n) = v;
      break;
    }
    case POKind::pd: {
      int bi = -1;
      double bscore = std::numeric_limits<double>::max();
      for (int k = 0; k < n; ++k) {
        const double d = fd.log_mod[k] * fd.log_mod[k] +
                         std::pow(std::abs(fd.phase[k]) - kPi, 2);
        if (d < bscore) {
          bscore = d;
          bi = k;
        }
      }
      Vec v = es.eigenvectors().col(bi).real();
      v.normalize();
      Mat Y = propagate_variational(plain, u, v);
      out.segment(block, block) = Y.col(0);
      out.segment(e0, n) = v;
      break;
    }
    case POKind::tr: {
      int bi = -1;
      double bscore = std::numeric_limits<double>::max();
      for (int k = 0; k < n; ++k) {
        if (std::abs(fd.phase[k]) < 1e-3 || std::abs(fd.phase[k]) > kPi - 1e-3)
          continue;
        if (fd.phase[k] < 0.0) continue;  // take the upper-half-plane partner
        const double d = fd.log_mod[k] * fd.log_mod[k];
        if (d < bscore) {
          bscore = d;
          bi = k;
        }
      }
      if (bi < 0) throw std::runtime_error("po_lift: no complex critical pair");
      const double a = std::cos(fd.phase[bi]);
      const double bb = std::sin(fd.phase[bi]);
      Eigen::VectorXcd q = es.eigenvectors().col(bi);
      Vec v1 = q.real(), v2 = q.imag();
      const double theta = 0.5 * std::atan2(2.0 * v1.dot(v2),
                                            v1.squaredNorm() - v2.squaredNorm());
      q *= std::exp(Cplx(0.0, -theta));
      v1 = q.real();
      v2 = q.imag();
      const double nrm = std::sqrt(v1.squaredNorm() + v2.squaredNorm());
      v1 /= nrm;
      v2 /= nrm;
      Mat Y0(n, 2);
      Y0.col(0) = v1;
      Y0.col(1) = v2;
      Mat Y = propagate_variational(plain, u, Y0);
      out.segment(block, block) = Y.col(0);
      out.segment(2 * block, block) = Y.col(1);
      out[e0] = a;
      out[e0 + 1] = bb;
      out.segment(e0 + 2, n) = v1;
      out.segment(e0 + 2 + n, n) = v2;
      break;
    }
  }
  target.set_reference(X);
  return out;
}

// ---------------------------------------------------------------------------
// Monitors and fits

std::pair<double, double> slowpoint(const POProblem& problem, const Vec& u) {
  const int n = problem.field().n_x;
  const Vec p = problem.params(u);
  double best = std::numeric_limits<double>::max();
  Vec xbest = u.head(n);
  for (int q = 0; q < problem.mesh().n_base(); ++q) {
    const Vec x = u.segment(q * n, n);
    const double s = problem.field().eval(x, p).squaredNorm();
    if (s < best) {
      best = s;
      xbest = x;
    }
  }
  const Mat J = problem.field().jac_x(xbest, p);
  return {J.determinant(), J.trace()};
}

std::vector<Monitor> slowpoint_monitors(std::shared_ptr<POProblem> problem,
                                        double ncs_threshold) {
  Monitor det;
  det.name = "det";
  det.kind = MonitorKind::Threshold;
  det.targets = {ncs_threshold};
  det.event_label = "NCS";
  det.eval = [problem](const Vec& u) { return slowpoint(*problem, u).first; };

  Monitor tr;
  tr.name = "tr";
  tr.kind = MonitorKind::Regular;
  tr.event_label = "NSA";
  tr.eval = [problem](const Vec& u) { return slowpoint(*problem, u).second; };
  return {det, tr};
}

Monitor ust_monitor(std::shared_ptr<POProblem> problem, std::string label) {
  Monitor m;
  m.name = "ust";
  m.kind = MonitorKind::Discrete;
  m.event_label = std::move(label);
  m.eval = [problem](const Vec& u) {
    return static_cast<double>(floquet(*problem, u).ust);
  };
  return m;
}

ScalingFit period_scaling_fit(const std::vector<double>& sigma,
                              const std::vector<double>& T,
                              double sigma_star) {
  std::vector<double> dx, ty;
  for (size_t i = 0; i < sigma.size(); ++i) {
    const double d = sigma[i] - sigma_star;
    if (d > 1e-12 && T[i] > 0.0) {
      dx.push_back(d);
      ty.push_back(T[i]);
    }
  }
  const int m = static_cast<int>(dx.size());
  if (m < 5) throw std::runtime_error("period_scaling_fit: need >= 5 points");

  auto linfit = [](const std::vector<double>& x, const std::vector<double>& y,
                   double& a, double& b) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const int n = static_cast<int>(x.size());
    for (int i = 0; i < n; ++i) {
      sx += x[i];
      sy += y[i];
      sxx += x[i] * x[i];
      sxy += x[i] * y[i];
    }
    b = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    a = (sy - b * sx) / n;
  };

  ScalingFit fit;
  // Power model: log T = a + e log(sigma - sigma*).
  {
    std::vector<double> lx(m), ly(m);
    for (int i = 0; i < m; ++i) {
      lx[i] = std::log(dx[i]);
      ly[i] = std::log(ty[i]);
    }
    double a, e;
    linfit(lx, ly, a, e);
    fit.exponent = e;
    double ss = 0.0;
    for (int i = 0; i < m; ++i) {
      const double pred = std::exp(a + e * lx[i]);
      ss += std::pow((pred - ty[i]) / ty[i], 2);
    }
    fit.resid_power = std::sqrt(ss / m);
  }
  // Log model: T = a - b log(sigma - sigma*).
  {
    std::vector<double> lx(m);
    for (int i = 0; i < m; ++i) lx[i] = -std::log(dx[i]);
    double a, b;
    linfit(lx, ty, a, b);
    fit.coeff = b;
    double ss = 0.0;
    for (int i = 0; i < m; ++i) {
      const double pred = a + b * lx[i];
      ss += std::pow((pred - ty[i]) / ty[i], 2);
    }
    fit.resid_log = std::sqrt(ss / m);
  }
  fit.mode = fit.resid_power <= fit.resid_log ? "power" : "log";
  return fit;
}

}  // namespace bifkit
