#pragma once

#include <complex>
#include <optional>

#include "bifkit/collocation.hpp"
#include "bifkit/contin.hpp"

namespace bifkit {

enum class POKind { plain, sn, pd, tr };

struct POOptions {
  POKind kind = POKind::plain;
  std::optional<double> fixed_T;
  bool adapt = true;
  double err_tol = 1e-4;
  int L_min = 5;
  int L_max = 400;
};

/// Periodic orbits and their codimension-1 bifurcations by piecewise
/// Lagrange collocation. Unknowns, point-major per mesh function:
///   [x_d; (y_d | y_d1, y_d2); T (unless fixed); free p; kind extras]
/// where extras are (b, v) for sn, (v) for pd, (a, b, v1, v2) for tr.
/// Residuals: collocation rows per mesh function, periodicity of x_d, the
/// integral phase condition, and the algebraic bottom blocks of the chosen
/// defining system.
class POProblem : public ZeroProblem {
 public:
  POProblem(VectorField field, Mesh mesh, Vec p0, std::vector<int> free_params,
            POOptions opts = {});

  int num_unknowns() const override;
  int num_residuals() const override;
  Vec residual(const Vec& u) const override;
  SpMat jacobian(const Vec& u) const override;
  bool update(Vec& u, Vec* tangent = nullptr) override;
  std::any save_state() const override;
  void restore_state(const std::any& s) override;

  const VectorField& field() const { return field_; }
  const Mesh& mesh() const { return mesh_; }
  const POOptions& options() const { return opts_; }
  const std::vector<int>& free_params() const { return free_; }
  int n_funcs() const;  // mesh functions: 1 plain, 2 sn/pd, 3 tr

  Vec orbit(const Vec& u) const { return u.head(block_); }
  Vec orbit_at(const Vec& u, double tau) const;
  Vec variational(const Vec& u, int which = 0) const;
  double period(const Vec& u) const;
  Vec params(const Vec& u) const;
  int period_pos() const;  // -1 when the period is pinned
  int param_pos(int idx) const;

  /// max - min of coordinate over a 16x oversampled grid per interval.
  double amplitude(const Vec& u, int coord) const;

  /// Interpolation-error surrogate: max over intervals of the estimated
  /// next-derivative magnitude times interval width^(ndeg+1).
  double estimate_error(const Vec& u) const;

  /// Refresh the phase functional from the given orbit values.
  void set_reference(const Vec& x_values);

  /// Assemble the unknown vector for a plain problem from orbit values,
  /// period, and a full parameter vector (also sets the phase reference).
  Vec pack(const Vec& x_values, double T, const Vec& p_full);

 private:
  friend struct POAccess;
  void rebuild_layout();
  double err_weight(const Vec& x_values, int interval) const;

  VectorField field_;
  Mesh mesh_;
  Vec p0_;
  std::vector<int> free_;
  POOptions opts_;

  Mat Lc_, Dc_;     // basis values/derivatives at collocation nodes
  Vec phi_;         // phase functional over the x_d block
  double cref_ = 0.0;
  int block_ = 0;   // n_x * n_base, size of one mesh-function block
};

struct FloquetData {
  Mat monodromy;  // rescaled product; actual monodromy = monodromy * exp(log_scale)
  double log_scale = 0.0;
  std::vector<std::complex<double>> multipliers;  // may overflow to inf
  std::vector<double> log_mod;                    // log |mu|
  std::vector<double> phase;                      // arg mu
  int trivial_index = 0;
  int ust = 0;  // multipliers strictly outside the unit circle, excl. trivial
};

/// Monodromy and Floquet multipliers from the discretized variational
/// problem on the orbit's mesh, with per-interval rescaling.
FloquetData floquet(const POProblem& problem, const Vec& u);

/// Variational flow of the columns of Y0 along the orbit; returns the values
/// of all columns at every base point (rows: base-point-major flattened state,
/// cols: initial vectors).
Mat propagate_variational(const POProblem& problem, const Vec& u,
                          const Mat& Y0);

/// Small-radius starter orbit about a Hopf point:
/// x(tau) = x + r (v cos 2 pi tau - w sin 2 pi tau), T0 = 2 pi / omega.
/// Default r = 1e-3 max(1, |x|). Sets the problem's phase reference.
Vec po_from_hopf(POProblem& problem, const Vec& x, const Vec& p_full,
                 double omega, const Vec& v, const Vec& w, double radius = -1);

/// Lifts a converged plain-PO point onto the sn/pd/tr defining system of
/// `target` (same field): extracts the critical monodromy eigendata,
/// propagates the variational seed, and assembles the full unknown vector.
Vec po_lift(const POProblem& plain, const Vec& u, POProblem& target);

/// (det, tr) of the state Jacobian at the base point minimizing |f|_2.
std::pair<double, double> slowpoint(const POProblem& problem, const Vec& u);

/// NSA (trace sign change) and NCS (det crossing the threshold) monitors.
std::vector<Monitor> slowpoint_monitors(std::shared_ptr<POProblem> problem,
                                        double ncs_threshold = -0.05);

/// Discrete count of Floquet multipliers outside the unit circle.
Monitor ust_monitor(std::shared_ptr<POProblem> problem,
                    std::string label = "UST");

struct ScalingFit {
  std::string mode;      // "power" or "log"
  double exponent = 0.0; // slope of log T vs log(sigma - sigma*)
  double coeff = 0.0;    // log mode: T ~ a - coeff * log(sigma - sigma*)
  double resid_power = 0.0;
  double resid_log = 0.0;
};

/// Compares T ~ c (sigma - sigma*)^e against T ~ a - b log(sigma - sigma*)
/// by relative least-squares residual. Throws with fewer than 5 points.
ScalingFit period_scaling_fit(const std::vector<double>& sigma,
                              const std::vector<double>& T, double sigma_star);

}  // namespace bifkit
