#include "bifkit/zeroproblem.hpp"

#include <cmath>

namespace bifkit {

Mat fd_jacobian(const std::function<Vec(const Vec&)>& res, const Vec& u,
                int n_r, double h_scale) {
  Mat J(n_r, u.size());
  Vec up = u;
  for (int i = 0; i < u.size(); ++i) {
    const double h = h_scale * std::max(1.0, std::abs(u[i]));
    up[i] = u[i] + h;
    Vec fp = res(up);
    up[i] = u[i] - h;
    Vec fm = res(up);
    up[i] = u[i];
    J.col(i) = (fp - fm) / (2.0 * h);
  }
  return J;
}

SpMat ZeroProblem::jacobian(const Vec& u) const {
  Mat J = fd_jacobian([this](const Vec& v) { return residual(v); }, u,
                      num_residuals());
  return J.sparseView();
}

}  // namespace bifkit
