#pragma once

#include <complex>
#include <optional>
#include <random>
#include <tuple>

#include "bifkit/contin.hpp"
#include "bifkit/vectorfield.hpp"

namespace bifkit {

struct EquilibriumPoint {
  Vec x;
  Vec p;
  Eigen::VectorXcd eigenvalues;
  int ustab = 0;
};

struct SNPointData {
  Vec x;
  Vec p;
  Vec v;  // unit kernel eigenvector of the state Jacobian
};

struct HopfPointData {
  Vec x;
  Vec p;
  double k = 0.0;  // omega^2 when positive
  Vec v1, w1, v2, w2;
  Vec xi;
  std::string classification;  // HB (k>0), NSA (k<0), BTP (k ~ 0)
};

/// Equilibria f(x,p) = 0 with a chosen set of free parameters and optional
/// pinned state components. Unknowns: [unpinned states; free params].
class EpProblem : public ZeroProblem {
 public:
  EpProblem(VectorField field, Vec p0, std::vector<int> free_params,
            std::vector<std::pair<int, double>> state_pins = {});

  int num_unknowns() const override;
  int num_residuals() const override { return field_.n_x; }
  Vec residual(const Vec& u) const override;
  SpMat jacobian(const Vec& u) const override;

  Vec state(const Vec& u) const;
  Vec params(const Vec& u) const;
  Vec pack(const Vec& x, const Vec& p) const;
  const VectorField& field() const { return field_; }
  const std::vector<int>& free_params() const { return free_; }
  /// Index within u of the idx-th free parameter.
  int param_pos(int idx) const { return n_unpinned_ + idx; }

 private:
  VectorField field_;
  Vec p0_;
  std::vector<int> free_;
  std::vector<std::pair<int, double>> pins_;
  std::vector<int> unpinned_;
  int n_unpinned_;
};

/// Saddle-node system (f; d_x f . v; v^T v - 1); unknowns [x; free p; v].
class SnProblem : public ZeroProblem {
 public:
  SnProblem(VectorField field, Vec p0, std::vector<int> free_params);

  int num_unknowns() const override { return 2 * field_.n_x + nf(); }
  int num_residuals() const override { return 2 * field_.n_x + 1; }
  Vec residual(const Vec& u) const override;

  Vec state(const Vec& u) const { return u.head(field_.n_x); }
  Vec params(const Vec& u) const;
  Vec nullvec(const Vec& u) const { return u.tail(field_.n_x); }
  Vec pack(const Vec& x, const Vec& p, const Vec& v) const;
  const VectorField& field() const { return field_; }
  int param_pos(int idx) const { return field_.n_x + idx; }

 private:
  int nf() const { return static_cast<int>(free_.size()); }
  VectorField field_;
  Vec p0_;
  std::vector<int> free_;
};

/// Hopf/neutral-saddle system with unknowns [x; free p; k; v1; w1; v2; w2]
/// and residuals (f; Jv1 - w1; Jv2 - w2; w1 - v2; k v1 + w2; v1'v1 - 1;
/// xi'v1). The reference vector xi is refreshed after each accepted step.
class HopfProblem : public ZeroProblem {
 public:
  HopfProblem(VectorField field, Vec p0, std::vector<int> free_params,
              unsigned seed = 7);

  int num_unknowns() const override { return 5 * field_.n_x + nf() + 1; }
  int num_residuals() const override { return 5 * field_.n_x + 2; }
  Vec residual(const Vec& u) const override;
  bool update(Vec& u, Vec* tangent = nullptr) override;
  std::any save_state() const override;
  void restore_state(const std::any& s) override;

  Vec state(const Vec& u) const { return u.head(field_.n_x); }
  Vec params(const Vec& u) const;
  double k(const Vec& u) const { return u[field_.n_x + nf()]; }
  Vec v1(const Vec& u) const { return u.segment(field_.n_x + nf() + 1, field_.n_x); }
  HopfPointData data(const Vec& u) const;
  const VectorField& field() const { return field_; }
  int param_pos(int idx) const { return field_.n_x + idx; }
  int k_pos() const { return field_.n_x + nf(); }

  /// Assembles the start vector (x, p, w^2, v, -w v_im, -w v_im, -w^2 v) and
  /// sets xi orthogonal to v. v, w must satisfy Jv = -w w_vec, Jw_vec = w v.
  Vec init(const Vec& x, const Vec& p_full, double omega, const Vec& v,
           const Vec& w);

 private:
  int nf() const { return static_cast<int>(free_.size()); }
  void refresh_xi(const Vec& v1_cur);
  VectorField field_;
  Vec p0_;
  std::vector<int> free_;
  Vec xi_, wref_;
  std::mt19937 rng_;
};

/// Degenerate-Hopf system: HopfProblem plus the residual l1(u) = 0.
class DhProblem : public ZeroProblem {
 public:
  DhProblem(VectorField field, Vec p0, std::vector<int> free_params,
            unsigned seed = 7);

  int num_unknowns() const override { return hopf_.num_unknowns(); }
  int num_residuals() const override { return hopf_.num_residuals() + 1; }
  Vec residual(const Vec& u) const override;
  bool update(Vec& u, Vec* tangent = nullptr) override { return hopf_.update(u, tangent); }
  std::any save_state() const override { return hopf_.save_state(); }
  void restore_state(const std::any& s) override { hopf_.restore_state(s); }

  HopfProblem& hopf() { return hopf_; }
  const HopfProblem& hopf() const { return hopf_; }

 private:
  HopfProblem hopf_;
};

/// Eigen-decomposition of the state Jacobian at an equilibrium.
EquilibriumPoint analyze_equilibrium(const VectorField& field, const Vec& x,
                                     const Vec& p);

/// ustab / sn_test / hopf_test monitors on an EpProblem branch.
/// sn_test = det d_x f; hopf_test = Re prod_{i<j} (lambda_i + lambda_j).
/// HB events come from jumps in ustab (bisection stays accurate when several
/// pairs cross at once); hopf_test labels the neutral saddles (NSA).
std::vector<Monitor> eig_monitors(std::shared_ptr<EpProblem> problem);

/// Kernel eigenvector start data for SnProblem. Throws if no eigenvalue
/// satisfies |lambda| < tol.
SNPointData sn_init(const VectorField& field, const EquilibriumPoint& ep,
                    double tol = 1e-6);

/// (omega, v, w) from the pure-imaginary eigenpair of J: Jv = -omega w,
/// Jw = omega v, |v| = 1, v'w = 0. nullopt when no eigenvalue has
/// |Re| < tol with Im != 0.
std::optional<std::tuple<double, Vec, Vec>> hopf_eigendata(const Mat& J,
                                                           double tol = 1e-6);

/// First Lyapunov coefficient at a Hopf point by the normal-form projection
/// formula, with second/third directional derivatives of f by central finite
/// differences. Negative = supercritical. Throws std::runtime_error when
/// k <= 0.
double lyapunov_first(const VectorField& field, const Vec& x, const Vec& p,
                      double k, const Vec& v1);

/// k (BTP) and l1 (DH) monitors on a HopfProblem branch; l1 is NaN on the
/// neutral-saddle part (k <= 0), which suppresses spurious DH events there.
std::vector<Monitor> hopf_monitors(std::shared_ptr<HopfProblem> problem);

}  // namespace bifkit
