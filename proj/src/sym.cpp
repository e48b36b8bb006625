#include "bifkit/sym.hpp"

#include <Eigen/Dense>
#include <cctype>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace bifkit {

namespace {
constexpr double kTwoPi = 6.283185307179586476925;
using Cplx = std::complex<double>;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
}  // namespace

int SpatioTemporalSymmetry::n_cycles() const {
  std::vector<bool> seen(n_cells, false);
  int K = 0;
  for (int k = 0; k < n_cells; ++k) {
    if (seen[k]) continue;
    ++K;
    int j = k;
    while (!seen[j]) {
      seen[j] = true;
      j = perm[j];
    }
  }
  return K;
}

Eigen::VectorXcd SpatioTemporalSymmetry::phases() const {
  CVec d(n_cells);
  for (int k = 0; k < n_cells; ++k)
    d[k] = std::exp(Cplx(0.0, kTwoPi / shift[k]));
  return d;
}

Mat SpatioTemporalSymmetry::perm_matrix() const {
  // (Pi z)_k = z_{sigma^{-1}(k)}
  Mat P = Mat::Zero(n_cells, n_cells);
  for (int k = 0; k < n_cells; ++k) P(perm[k], k) = 1.0;
  return P;
}

Mat SpatioTemporalSymmetry::perm_matrix_full() const {
  const Mat P = perm_matrix();
  Mat F = Mat::Zero(n_cells * cell_dim, n_cells * cell_dim);
  for (int i = 0; i < n_cells; ++i)
    for (int j = 0; j < n_cells; ++j)
      if (P(i, j) != 0.0)
        F.block(i * cell_dim, j * cell_dim, cell_dim, cell_dim) =
            Mat::Identity(cell_dim, cell_dim);
  return F;
}

std::string SpatioTemporalSymmetry::render() const {
  std::vector<bool> seen(n_cells, false);
  std::ostringstream out;
  for (int k = 0; k < n_cells; ++k) {
    if (seen[k]) continue;
    std::vector<int> cycle;
    int j = k;
    while (!seen[j]) {
      seen[j] = true;
      cycle.push_back(j);
      j = perm[j];
    }
    if (cycle.size() == 1 && shift[k] == 1) continue;  // trivial singleton
    out << '(';
    for (size_t i = 0; i < cycle.size(); ++i) {
      if (i) out << ' ';
      out << cycle[i] + 1;
    }
    out << ")_" << shift[k];
  }
  return out.str();
}

SpatioTemporalSymmetry parse_symmetry(const std::string& text, int n_cells,
                                      int cell_dim) {
  SpatioTemporalSymmetry sym;
  sym.n_cells = n_cells;
  sym.cell_dim = cell_dim;
  sym.perm.resize(n_cells);
  sym.shift.assign(n_cells, 1);
  for (int k = 0; k < n_cells; ++k) sym.perm[k] = k;
  std::vector<bool> used(n_cells, false);

  size_t pos = 0;
  while (pos < text.size()) {
    if (std::isspace(static_cast<unsigned char>(text[pos]))) {
      ++pos;
      continue;
    }
    if (text[pos] != '(')
      throw std::runtime_error("parse_symmetry: expected '(' in \"" + text +
                               "\"");
    const size_t close = text.find(')', pos);
    if (close == std::string::npos)
      throw std::runtime_error("parse_symmetry: unbalanced parenthesis");
    std::istringstream cells(text.substr(pos + 1, close - pos - 1));
    std::vector<int> cycle;
    int c;
    while (cells >> c) {
      if (c < 1 || c > n_cells)
        throw std::runtime_error("parse_symmetry: cell index out of range");
      if (used[c - 1])
        throw std::runtime_error("parse_symmetry: repeated cell index");
      used[c - 1] = true;
      cycle.push_back(c - 1);
    }
    if (cycle.empty())
      throw std::runtime_error("parse_symmetry: empty cycle");
    pos = close + 1;
    int ell = 1;
    if (pos < text.size() && text[pos] == '_') {
      size_t next = pos + 1;
      size_t digits = 0;
      while (next + digits < text.size() &&
             std::isdigit(static_cast<unsigned char>(text[next + digits])))
        ++digits;
      if (digits == 0)
        throw std::runtime_error("parse_symmetry: missing shift after '_'");
      ell = std::stoi(text.substr(next, digits));
      pos = next + digits;
    }
    if (ell < 1) throw std::runtime_error("parse_symmetry: shift must be >= 1");
    for (size_t i = 0; i < cycle.size(); ++i) {
      sym.perm[cycle[i]] = cycle[(i + 1) % cycle.size()];
      sym.shift[cycle[i]] = ell;
    }
  }
  return sym;
}

double check_equivariance(const VectorField& field, const Mat& perm_full,
                          const Vec& p, int n_samples, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> ud(0.2, 3.0);
  double worst = 0.0;
  for (int s = 0; s < n_samples; ++s) {
    Vec z(field.n_x);
    for (int i = 0; i < field.n_x; ++i) z[i] = ud(rng);
    const Vec lhs = field.eval(perm_full * z, p);
    const Vec rhs = perm_full * field.eval(z, p);
    worst = std::max(worst, (lhs - rhs).lpNorm<Eigen::Infinity>());
  }
  return worst;
}

namespace {

CMat stacked_hopf_matrix(const Mat& J, double omega,
                         const SpatioTemporalSymmetry* sym) {
  const int n = static_cast<int>(J.rows());
  int rows = n;
  if (sym) rows += n;
  CMat M(rows, n);
  M.topRows(n) = J.cast<Cplx>() - Cplx(0.0, omega) * CMat::Identity(n, n);
  if (sym) {
    CMat S = sym->perm_matrix_full().cast<Cplx>();
    const CVec ph = sym->phases();
    for (int c = 0; c < sym->n_cells; ++c)
      for (int d = 0; d < sym->cell_dim; ++d)
        S(c * sym->cell_dim + d, c * sym->cell_dim + d) -= ph[c];
    M.bottomRows(n) = S;
  }
  return M;
}

}  // namespace

int eqv_hopf_nullspace_dim(const Mat& J, double omega,
                           const SpatioTemporalSymmetry* sym, double tol) {
  const CMat M = stacked_hopf_matrix(J, omega, sym);
  Eigen::JacobiSVD<CMat> svd(M);
  const auto& sv = svd.singularValues();
  const double smax = sv.size() ? sv[0] : 0.0;
  int dim = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv[i] <= tol * std::max(smax, 1.0)) ++dim;
  return dim;
}

std::pair<Vec, Vec> symmetric_hopf_eigvec(const SpatioTemporalSymmetry& sym,
                                          const Mat& J, double omega) {
  const CMat M = stacked_hopf_matrix(J, omega, &sym);
  Eigen::JacobiSVD<CMat> svd(M, Eigen::ComputeFullV);
  CVec q = svd.matrixV().col(J.cols() - 1);
  Vec a = q.real(), b = q.imag();
  const double theta =
      0.5 * std::atan2(2.0 * a.dot(b), a.squaredNorm() - b.squaredNorm());
  q *= std::exp(Cplx(0.0, -theta));
  a = q.real();
  b = q.imag();
  if (a.norm() < 1e-12)
    throw std::runtime_error("symmetric_hopf_eigvec: degenerate generator");
  b /= a.norm();
  a /= a.norm();
  // Fix the sign convention Jv = -omega w.
  if ((J * a + omega * b).norm() > (J * a - omega * b).norm()) b = -b;
  return {a, b};
}

std::vector<ExtraConstraint> symmetry_constraints(
    std::shared_ptr<POProblem> problem, const SpatioTemporalSymmetry& sym,
    const std::vector<double>& sample_times) {
  std::vector<ExtraConstraint> extras;
  const int d = sym.cell_dim;
  for (double ts : sample_times) {
    for (int c = 0; c < sym.n_cells; ++c) {
      const int tgt = sym.perm[c];
      const double tshift =
          std::fmod(ts + 1.0 / sym.shift[c], 1.0);
      for (int comp = 0; comp < d; ++comp) {
        ExtraConstraint ec;
        std::ostringstream name;
        name << "sym[" << c + 1 << "," << comp << "]@t=" << ts;
        ec.name = name.str();
        ec.value = [problem, ts, tshift, c, tgt, comp, d](const Vec& u) {
          const Vec a = problem->orbit_at(u, ts);
          const Vec b = problem->orbit_at(u, tshift);
          return a[c * d + comp] - b[tgt * d + comp];
        };
        extras.push_back(std::move(ec));
      }
    }
  }
  return extras;
}

std::shared_ptr<ZeroProblem> append_symmetry_constraints(
    std::shared_ptr<POProblem> problem, const SpatioTemporalSymmetry& sym,
    const std::vector<double>& sample_times) {
  return regularize_redundant(problem,
                              symmetry_constraints(problem, sym, sample_times));
}

double symmetry_residual(const POProblem& problem, const Vec& u,
                         const SpatioTemporalSymmetry& sym, int n_probe) {
  const int d = sym.cell_dim;
  double worst = 0.0;
  for (int s = 0; s < n_probe; ++s) {
    const double t = static_cast<double>(s) / n_probe;
    const Vec z = problem.orbit_at(u, t);
    for (int c = 0; c < sym.n_cells; ++c) {
      const double ts = std::fmod(t + 1.0 / sym.shift[c], 1.0);
      const Vec zs = problem.orbit_at(u, ts);
      for (int comp = 0; comp < d; ++comp)
        worst = std::max(
            worst, std::abs(z[c * d + comp] - zs[sym.perm[c] * d + comp]));
    }
  }
  return worst;
}

std::shared_ptr<ZeroProblem> eqv_hopf_track_problem(
    std::shared_ptr<HopfProblem> hopf, const SpatioTemporalSymmetry& sym) {
  const int n = hopf->field().n_x;
  CMat S = sym.perm_matrix_full().cast<Cplx>();
  const CVec ph = sym.phases();
  for (int c = 0; c < sym.n_cells; ++c)
    for (int d = 0; d < sym.cell_dim; ++d)
      S(c * sym.cell_dim + d, c * sym.cell_dim + d) -= ph[c];

  std::vector<ExtraConstraint> extras;
  for (int row = 0; row < 2 * n; ++row) {
    ExtraConstraint ec;
    ec.name = (row < n ? "eqv_re[" : "eqv_im[") +
              std::to_string(row % n) + "]";
    ec.value = [hopf, S, row, n](const Vec& u) {
      const double kk = hopf->k(u);
      if (kk <= 0.0) return std::numeric_limits<double>::quiet_NaN();
      const Vec v1 = hopf->v1(u);
      const Mat J = hopf->field().jac_x(hopf->state(u), hopf->params(u));
      CVec q = (std::sqrt(kk) * v1).cast<Cplx>() -
               Cplx(0.0, 1.0) * (J * v1).cast<Cplx>();
      const CVec r = S * q;
      return row < n ? r[row].real() : r[row - n].imag();
    };
    extras.push_back(std::move(ec));
  }
  return regularize_redundant(hopf, std::move(extras));
}

std::shared_ptr<ZeroProblem> symbreak_track_problem(
    std::shared_ptr<POProblem> po_sn, const SpatioTemporalSymmetry& sym,
    const std::vector<double>& sample_times) {
  if (po_sn->options().kind != POKind::sn)
    throw std::runtime_error("symbreak_track_problem: expects a po_sn problem");
  return append_symmetry_constraints(po_sn, sym, sample_times);
}

}  // namespace bifkit
