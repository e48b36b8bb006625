#pragma once

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace bifkit {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct EvaluationFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// An autonomous ODE right-hand side f(x, p) with optional analytic
/// Jacobians. Evaluation is pure and re-entrant; missing Jacobians fall
/// back to central finite differences with per-column scaled steps.
class VectorField {
 public:
  int n_x = 0;
  int n_p = 0;
  std::vector<std::string> state_names;
  std::vector<std::string> param_names;

  std::function<Vec(const Vec&, const Vec&)> eval_fn;
  std::function<Mat(const Vec&, const Vec&)> jac_x_fn;  // may be empty
  std::function<Mat(const Vec&, const Vec&)> jac_p_fn;  // may be empty

  Vec eval(const Vec& x, const Vec& p) const;
  Mat jac_x(const Vec& x, const Vec& p) const;
  Mat jac_p(const Vec& x, const Vec& p) const;

  bool has_analytic_jac_x() const { return static_cast<bool>(jac_x_fn); }

  // Index of the named parameter/state, or -1 when unknown.
  int param_index(const std::string& name) const;
  int state_index(const std::string& name) const;
};

/// Registry of built-in models, keyed by the names used in run configs.
const VectorField& model_registry(const std::string& name);
std::vector<std::string> registered_models();

}  // namespace bifkit
