#include "bifkit/vectorfield.hpp"

#include <algorithm>
#include <cmath>

#include "bifkit/models.hpp"

namespace bifkit {

Vec VectorField::eval(const Vec& x, const Vec& p) const {
  if (x.size() != n_x || p.size() != n_p)
    throw EvaluationFailure("vector field: dimension mismatch");
  Vec f = eval_fn(x, p);
  if (!f.allFinite()) throw EvaluationFailure("vector field: non-finite output");
  return f;
}

Mat VectorField::jac_x(const Vec& x, const Vec& p) const {
  if (jac_x_fn) return jac_x_fn(x, p);
  Mat J(n_x, n_x);
  Vec xp = x;
  for (int i = 0; i < n_x; ++i) {
    const double h = std::max(1e-6, 1e-6 * std::abs(x[i]));
    xp[i] = x[i] + h;
    Vec fp = eval(xp, p);
    xp[i] = x[i] - h;
    Vec fm = eval(xp, p);
    xp[i] = x[i];
    J.col(i) = (fp - fm) / (2.0 * h);
  }
  return J;
}

Mat VectorField::jac_p(const Vec& x, const Vec& p) const {
  if (jac_p_fn) return jac_p_fn(x, p);
  Mat J(n_x, n_p);
  Vec pp = p;
  for (int i = 0; i < n_p; ++i) {
    const double h = std::max(1e-6, 1e-6 * std::abs(p[i]));
    pp[i] = p[i] + h;
    Vec fp = eval(x, pp);
    pp[i] = p[i] - h;
    Vec fm = eval(x, pp);
    pp[i] = p[i];
    J.col(i) = (fp - fm) / (2.0 * h);
  }
  return J;
}

int VectorField::param_index(const std::string& name) const {
  auto it = std::find(param_names.begin(), param_names.end(), name);
  if (it == param_names.end()) return -1;
  return static_cast<int>(it - param_names.begin());
}

int VectorField::state_index(const std::string& name) const {
  auto it = std::find(state_names.begin(), state_names.end(), name);
  if (it == state_names.end()) return -1;
  return static_cast<int>(it - state_names.begin());
}

const VectorField& model_registry(const std::string& name) {
  static const VectorField cstr = make_cstr();
  static const VectorField brus = make_brusselator4();
  if (name == "cstr") return cstr;
  if (name == "brusselator4") return brus;
  throw std::invalid_argument("unknown model: " + name);
}

std::vector<std::string> registered_models() { return {"cstr", "brusselator4"}; }

}  // namespace bifkit
