#include "bifkit/collocation.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace bifkit {

void gauss_legendre(int n, Vec& nodes, Vec& weights) {
  if (n < 1) throw std::invalid_argument("gauss_legendre: n >= 1 required");
  Mat T = Mat::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    const double b = k / std::sqrt(4.0 * k * k - 1.0);
    T(k, k - 1) = b;
    T(k - 1, k) = b;
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(T);
  nodes.resize(n);
  weights.resize(n);
  for (int i = 0; i < n; ++i) {
    nodes[i] = 0.5 * (es.eigenvalues()[i] + 1.0);
    const double v0 = es.eigenvectors()(0, i);
    weights[i] = v0 * v0;  // total mass 1 on (0,1)
  }
}

Mesh make_mesh(int L, int ndeg) {
  if (L < 1 || ndeg < 1) throw std::invalid_argument("make_mesh: bad L/ndeg");
  Mesh m;
  m.L = L;
  m.ndeg = ndeg;
  m.boundaries = Vec::LinSpaced(L + 1, 0.0, 1.0);
  gauss_legendre(ndeg, m.nodes, m.weights);
  return m;
}

Mesh make_mesh(Vec boundaries, int ndeg) {
  Mesh m;
  m.L = static_cast<int>(boundaries.size()) - 1;
  m.ndeg = ndeg;
  m.boundaries = std::move(boundaries);
  if (m.L < 1) throw std::invalid_argument("make_mesh: bad boundaries");
  for (int i = 0; i < m.L; ++i)
    if (m.boundaries[i + 1] <= m.boundaries[i])
      throw std::invalid_argument("make_mesh: boundaries not increasing");
  gauss_legendre(ndeg, m.nodes, m.weights);
  return m;
}

Mat lagrange_values(int ndeg, const Vec& s) {
  const int nb = ndeg + 1;
  Mat V(s.size(), nb);
  for (int r = 0; r < s.size(); ++r) {
    for (int m = 0; m < nb; ++m) {
      double prod = 1.0;
      const double sm = static_cast<double>(m) / ndeg;
      for (int j = 0; j < nb; ++j) {
        if (j == m) continue;
        const double sj = static_cast<double>(j) / ndeg;
        prod *= (s[r] - sj) / (sm - sj);
      }
      V(r, m) = prod;
    }
  }
  return V;
}

Mat lagrange_derivs(int ndeg, const Vec& s) {
  const int nb = ndeg + 1;
  Mat D(s.size(), nb);
  for (int r = 0; r < s.size(); ++r) {
    for (int m = 0; m < nb; ++m) {
      const double sm = static_cast<double>(m) / ndeg;
      double sum = 0.0;
      for (int k = 0; k < nb; ++k) {
        if (k == m) continue;
        const double sk = static_cast<double>(k) / ndeg;
        double prod = 1.0 / (sm - sk);
        for (int j = 0; j < nb; ++j) {
          if (j == m || j == k) continue;
          const double sj = static_cast<double>(j) / ndeg;
          prod *= (s[r] - sj) / (sm - sj);
        }
        sum += prod;
      }
      D(r, m) = sum;
    }
  }
  return D;
}

int locate_interval(const Mesh& mesh, double tau) {
  tau = std::min(std::max(tau, 0.0), 1.0);
  int lo = 0, hi = mesh.L - 1;
  while (lo < hi) {
    const int mid = (lo + hi + 1) / 2;
    if (mesh.boundaries[mid] <= tau)
      lo = mid;
    else
      hi = mid - 1;
  }
  return lo;
}

namespace {

Vec eval_local(const Mesh& mesh, int n_x, const Vec& values, double tau,
               bool derivative) {
  const int i = locate_interval(mesh, tau);
  const double w = mesh.width(i);
  Vec s(1);
  s[0] = (tau - mesh.boundaries[i]) / w;
  const Mat B = derivative ? lagrange_derivs(mesh.ndeg, s)
                           : lagrange_values(mesh.ndeg, s);
  Vec out = Vec::Zero(n_x);
  for (int m = 0; m <= mesh.ndeg; ++m) {
    const int q = i * mesh.ndeg + m;
    out += B(0, m) * values.segment(q * n_x, n_x);
  }
  if (derivative) out /= w;
  return out;
}

}  // namespace

Vec eval_mesh_function(const Mesh& mesh, int n_x, const Vec& values,
                       double tau) {
  return eval_local(mesh, n_x, values, tau, false);
}

Vec eval_mesh_derivative(const Mesh& mesh, int n_x, const Vec& values,
                         double tau) {
  return eval_local(mesh, n_x, values, tau, true);
}

Vec interpolate_onto(const Mesh& from, const Mesh& to, int n_x,
                     const Vec& values) {
  Vec out(to.n_base() * n_x);
  for (int i = 0; i < to.L; ++i) {
    for (int m = (i == 0 ? 0 : 1); m <= to.ndeg; ++m) {
      const double tau =
          to.boundaries[i] + to.width(i) * static_cast<double>(m) / to.ndeg;
      out.segment((i * to.ndeg + m) * n_x, n_x) =
          eval_mesh_function(from, n_x, values, tau);
    }
  }
  out.head(n_x) = eval_mesh_function(from, n_x, values, 0.0);
  return out;
}

}  // namespace bifkit
