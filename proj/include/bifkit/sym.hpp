#pragma once

#include <string>

#include "bifkit/eqbif.hpp"
#include "bifkit/pobif.hpp"

namespace bifkit {

/// Spatiotemporal symmetry (Pi, ell) of a cell-permutation-equivariant
/// system: a cell permutation combined with per-cycle time shifts T/ell_k.
/// perm stores sigma as next-in-cycle, so "(1 2 4 3)_4" means
/// sigma: 1->2->4->3->1 (0-based internally); the action on states is
/// (Pi z)_k = z_{sigma^{-1}(k)} per cell, and an orbit with this symmetry
/// satisfies z_k(t) = z_{sigma(k)}(t + T/ell_k).
struct SpatioTemporalSymmetry {
  int n_cells = 0;
  int cell_dim = 2;
  std::vector<int> perm;   // sigma[k] = next cell in k's cycle
  std::vector<int> shift;  // ell_k, constant on each cycle

  int n_cycles() const;                 // K
  Eigen::VectorXcd phases() const;      // diag of E_ell (per cell)
  Mat perm_matrix() const;              // Pi (n_cells x n_cells)
  Mat perm_matrix_full() const;         // Pi x I_cell_dim
  std::string render() const;           // cycle notation, e.g. "(1 2 4 3)_4"
};

/// Parses cycle notation like "(1 2 4 3)_4" or "(1 2)_2(3 4)_1"; cells are
/// 1-based in the text; omitted cells become singletons with shift 1.
SpatioTemporalSymmetry parse_symmetry(const std::string& text, int n_cells,
                                      int cell_dim);

/// max over random samples of |f(Pi z, p) - Pi f(z, p)|_inf.
double check_equivariance(const VectorField& field, const Mat& perm_full,
                          const Vec& p, int n_samples = 16,
                          unsigned seed = 11);

/// Complex nullspace dimension of [J - i w I] stacked (when sym != nullptr)
/// over [Pi x I - E_ell x I], by singular-value thresholding.
int eqv_hopf_nullspace_dim(const Mat& J, double omega,
                           const SpatioTemporalSymmetry* sym,
                           double tol = 1e-8);

/// Real/imaginary parts of the one-dimensional nullspace generator:
/// Jv = -w w_vec, Jw_vec = w v, (Pi x I)(v + iw) = E_ell(v + iw),
/// v'v = 1, v'w = 0. Requires eqv_hopf_nullspace_dim(...) == 1.
std::pair<Vec, Vec> symmetric_hopf_eigvec(const SpatioTemporalSymmetry& sym,
                                          const Mat& J, double omega);

/// Symmetry-constraint residuals z_k(t_s) - z_{sigma(k)}(t_s + 1/ell_k) for
/// every state component at every sample time; one ExtraConstraint each.
std::vector<ExtraConstraint> symmetry_constraints(
    std::shared_ptr<POProblem> problem, const SpatioTemporalSymmetry& sym,
    const std::vector<double>& sample_times);

/// problem + symmetry constraints, wrapped in regularize_redundant.
/// Empty sample set returns the problem unchanged.
std::shared_ptr<ZeroProblem> append_symmetry_constraints(
    std::shared_ptr<POProblem> problem, const SpatioTemporalSymmetry& sym,
    const std::vector<double>& sample_times);

/// max over probe times of |(Pi x I) x_d(t) - x_d(t + shifts)|_inf.
double symmetry_residual(const POProblem& problem, const Vec& u,
                         const SpatioTemporalSymmetry& sym, int n_probe = 32);

/// Hopf system plus the redundant residuals
/// Re/Im[(Pi x I - E_ell x I)(sqrt(k) v1 - i J v1)], regularized. Corrector
/// failure (MX) is expected as k -> 0, where sqrt(k) loses smoothness.
std::shared_ptr<ZeroProblem> eqv_hopf_track_problem(
    std::shared_ptr<HopfProblem> hopf, const SpatioTemporalSymmetry& sym);

/// po_sn problem plus symmetry constraints, regularized: tracks
/// symmetry-breaking bifurcations in two free parameters.
std::shared_ptr<ZeroProblem> symbreak_track_problem(
    std::shared_ptr<POProblem> po_sn, const SpatioTemporalSymmetry& sym,
    const std::vector<double>& sample_times);

}  // namespace bifkit
