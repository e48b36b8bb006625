#pragma once

#include "bifkit/vectorfield.hpp"

namespace bifkit {

/// Piecewise-polynomial mesh on [0,1]: L subintervals, degree ndeg per piece,
/// Gauss-Legendre collocation nodes. Base points are the ndeg+1 uniformly
/// spaced Lagrange points per interval (endpoints shared), L*ndeg+1 in total.
struct Mesh {
  int L = 0;
  int ndeg = 4;
  Vec boundaries;  // L+1 strictly increasing values, 0 and 1 at the ends
  Vec nodes;       // ndeg Gauss-Legendre nodes in (0,1)
  Vec weights;     // matching quadrature weights (sum 1)

  int n_base() const { return L * ndeg + 1; }
  double width(int i) const { return boundaries[i + 1] - boundaries[i]; }
};

Mesh make_mesh(int L, int ndeg = 4);
Mesh make_mesh(Vec boundaries, int ndeg);

/// Gauss-Legendre nodes/weights on (0,1) by the Golub-Welsch eigensolve.
void gauss_legendre(int n, Vec& nodes, Vec& weights);

/// Values/derivatives of the ndeg+1 Lagrange basis polynomials (uniform
/// points m/ndeg on [0,1]) at the given local coordinates: row = evaluation
/// point, column = basis index.
Mat lagrange_values(int ndeg, const Vec& s);
Mat lagrange_derivs(int ndeg, const Vec& s);

/// Evaluate an n_x-valued mesh function (flattened base-point values,
/// point-major) or its d/dtau derivative at tau in [0,1].
Vec eval_mesh_function(const Mesh& mesh, int n_x, const Vec& values,
                       double tau);
Vec eval_mesh_derivative(const Mesh& mesh, int n_x, const Vec& values,
                         double tau);

/// Re-sample a mesh function onto a new mesh by polynomial evaluation.
Vec interpolate_onto(const Mesh& from, const Mesh& to, int n_x,
                     const Vec& values);

/// Interval index containing tau (last interval for tau = 1).
int locate_interval(const Mesh& mesh, double tau);

}  // namespace bifkit
