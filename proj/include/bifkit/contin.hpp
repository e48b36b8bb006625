#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bifkit/zeroproblem.hpp"

namespace bifkit {

enum class MonitorKind { Regular, Discrete, UserZero, Threshold, Column };

/// A scalar (or integer) test function evaluated along a branch. Regular
/// monitors flag events on sign changes, Discrete on integer jumps, UserZero
/// on crossings of listed values, Threshold on crossing one value; Column
/// monitors are recorded but never evented.
struct Monitor {
  std::string name;
  MonitorKind kind = MonitorKind::Column;
  std::function<double(const Vec&)> eval;
  // Tangent-aware variant (fold tests, bordered determinants); when set it
  // takes precedence over eval.
  std::function<double(const Vec&, const Vec&)> eval_ut;
  std::vector<double> targets;  // UserZero values; Threshold: single value
  std::string event_label;
  // Optional label override decided at the located point (HB vs NSA etc.).
  std::function<std::string(const Vec&)> label_fn;
  bool stop_on_event = false;  // terminate the sweep at the located point
};

struct EventRecord {
  std::string label;
  Vec u;
  Vec tangent;
  Vec monitor_values;
  int sweep = 0;
  double arclength = 0.0;
  // Problem state (mesh, phase reference, ...) at the event, so archived
  // solutions stay reconstructible after later mesh adaptations.
  std::any state;
};

struct AcceptedPoint {
  Vec u;
  Vec tangent;
  Vec monitor_values;
  double arclength = 0.0;
  double step = 0.0;
};

struct SweepResult {
  std::vector<AcceptedPoint> points;
  std::vector<EventRecord> events;  // arclength order, incl. terminal EP/MX
  std::string termination;          // "EP" or "MX"
  std::vector<std::string> warnings;
};

struct Branch {
  std::vector<SweepResult> sweeps;
  std::vector<std::string> monitor_names;
  std::string problem_id;
};

struct ContinuationSettings {
  double h0 = 0.01;
  double h_min = 1e-8;
  double h_max = 0.1;
  double corrector_tol = 1e-8;  // residual infinity norm
  int max_newton = 10;
  int max_steps = 500;
  double event_tol = 1e-10;  // event location tolerance (arclength)
  int direction = 0;         // 0: both sweeps; +1/-1: single sweep
  unsigned seed = 42;
};

/// Newton corrector on the bordered system [residual(u); c.u - d].
/// Returns the corrected point, or nullopt on non-convergence / singular
/// corrector matrix. iters receives the iteration count when non-null.
std::optional<Vec> newton_correct(const ZeroProblem& problem, const Vec& u0,
                                  const Vec& c, double d,
                                  const ContinuationSettings& settings,
                                  int* iters = nullptr);

/// Unit nullvector of the Jacobian at u, oriented along prev when given.
/// Returns nullopt at rank-deficient points (branch points).
std::optional<Vec> tangent_vector(const ZeroProblem& problem, const Vec& u,
                                  const Vec* prev = nullptr,
                                  unsigned seed = 42);

/// Scaled determinant of the bordered matrix [J(u); t^T]; changes sign
/// across branch points. The n-th root keeps the magnitude O(1).
double branch_point_test(const ZeroProblem& problem, const Vec& u,
                         const Vec& t);

/// At a located branch point the Jacobian nullspace is two-dimensional;
/// returns the direction complementary to the incoming tangent.
/// Throws std::runtime_error when the nullspace dimension is not 2.
Vec switch_branch(const ZeroProblem& problem, const Vec& u_bp,
                  const Vec& incoming_tangent, double rank_tol = 1e-4);

/// Locates one event of the given monitor inside the bracket [a, b] by
/// safeguarded secant (continuous kinds) or bisection (Discrete), correcting
/// every probe back onto the solution manifold. target shifts the zero level
/// for UserZero/Threshold monitors. Returns nullopt when the bracket is lost.
std::optional<EventRecord> localize_event(ZeroProblem& problem,
                                          const Monitor& monitor,
                                          const AcceptedPoint& a,
                                          const AcceptedPoint& b,
                                          const std::vector<Monitor>& all,
                                          const ContinuationSettings& settings,
                                          double target = 0.0,
                                          double* alpha_out = nullptr);

/// Pseudo-arclength predictor-corrector continuation covering the solution
/// manifold in both directions from u0; monitor events are located and
/// labeled. tangent_hint, when given, orients the first sweep.
Branch continue_branch(ZeroProblem& problem, const Vec& u0,
                       const ContinuationSettings& settings,
                       const std::vector<Monitor>& monitors,
                       const Vec* tangent_hint = nullptr);

/// One additional residual that vanishes on the target branch.
struct ExtraConstraint {
  std::string name;
  std::function<double(const Vec&)> value;  // on the inner unknown vector
};

/// Augments a problem with redundant constraints plus one slack variable per
/// constraint, Phi(u) + S w = 0. The slack basis S is refreshed after each
/// accepted step so the augmented Jacobian keeps full rank through
/// symmetry-induced singular points; on-branch solutions have w = 0.
class RegularizedProblem : public ZeroProblem {
 public:
  RegularizedProblem(std::shared_ptr<ZeroProblem> inner,
                     std::vector<ExtraConstraint> extras);

  int num_unknowns() const override;
  int num_residuals() const override;
  Vec residual(const Vec& u) const override;
  SpMat jacobian(const Vec& u) const override;
  bool update(Vec& u, Vec* tangent = nullptr) override;

  std::any save_state() const override {
    return std::make_pair(S_, inner_->save_state());
  }
  void restore_state(const std::any& s) override {
    const auto& p = std::any_cast<const std::pair<Mat, std::any>&>(s);
    S_ = p.first;
    inner_->restore_state(p.second);
  }

  Vec inner_u(const Vec& u) const { return u.head(inner_->num_unknowns()); }
  Vec slack(const Vec& u) const { return u.tail(extras_.size()); }
  ZeroProblem& inner() { return *inner_; }
  const ZeroProblem& inner() const { return *inner_; }

 private:
  void refresh_slack_basis(const Vec& v) const;

  std::shared_ptr<ZeroProblem> inner_;
  std::vector<ExtraConstraint> extras_;
  mutable Mat S_;  // lazily initialized at the first evaluation point
};

/// Returns the inner problem unchanged when extras is empty.
std::shared_ptr<ZeroProblem> regularize_redundant(
    std::shared_ptr<ZeroProblem> inner, std::vector<ExtraConstraint> extras);

/// Rewrites a monitor defined on the inner unknowns of a regularized
/// problem to act on the augmented vector by stripping the trailing
/// n_slack slack variables (robust to inner resizes, e.g. mesh adaptation).
Monitor wrap_inner_monitor(Monitor m, int n_slack);

/// Fold monitor: tangent component of the unknown at the given index
/// (typically the principal free parameter); sign change = FP event.
Monitor fold_monitor(std::string name, int index, std::string label = "FP");

/// Branch-point monitor: scaled bordered determinant along the branch.
Monitor bp_monitor(std::shared_ptr<ZeroProblem> problem,
                   std::string label = "BP");

}  // namespace bifkit
