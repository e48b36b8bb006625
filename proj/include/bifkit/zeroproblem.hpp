#pragma once

#include <Eigen/Sparse>
#include <any>
#include <functional>
#include <memory>

#include "bifkit/vectorfield.hpp"

namespace bifkit {

using SpMat = Eigen::SparseMatrix<double>;

/// A finite set of smooth residual equations over a flat unknown vector.
/// Continuation runs on problems with dimensional deficit 1; the update
/// hook adapts internal data (phase references, meshes, slack bases) after
/// each accepted step and may resize the unknown vector.
class ZeroProblem {
 public:
  virtual ~ZeroProblem() = default;

  virtual int num_unknowns() const = 0;
  virtual int num_residuals() const = 0;
  virtual Vec residual(const Vec& u) const = 0;

  /// Defaults to central finite differences of residual().
  virtual SpMat jacobian(const Vec& u) const;

  /// Invoked after each accepted continuation step; may modify u in place
  /// (including its size, for mesh adaptation) and, when given, remap the
  /// tangent alongside. Returns false on failure, which terminates the run
  /// with MX.
  virtual bool update(Vec& u, Vec* tangent = nullptr) {
    (void)u;
    (void)tangent;
    return true;
  }

  /// Snapshot/restore of any adaptive internal state, so a second sweep can
  /// restart cleanly from the shared start point after the first one has
  /// adapted meshes or reference data.
  virtual std::any save_state() const { return {}; }
  virtual void restore_state(const std::any&) {}

  int deficit() const { return num_unknowns() - num_residuals(); }
};

/// Finite-difference Jacobian of an arbitrary residual map (dense).
Mat fd_jacobian(const std::function<Vec(const Vec&)>& res, const Vec& u,
                int n_r, double h_scale = 1e-6);

/// A zero problem defined by plain std::functions; handy for small algebraic
/// systems and tests.
class FunctionProblem : public ZeroProblem {
 public:
  FunctionProblem(int n_u, int n_r, std::function<Vec(const Vec&)> res)
      : n_u_(n_u), n_r_(n_r), res_(std::move(res)) {}

  int num_unknowns() const override { return n_u_; }
  int num_residuals() const override { return n_r_; }
  Vec residual(const Vec& u) const override { return res_(u); }

 private:
  int n_u_, n_r_;
  std::function<Vec(const Vec&)> res_;
};

}  // namespace bifkit
