#pragma once

#include <complex>
#include <utility>

#include "bifkit/vectorfield.hpp"

namespace bifkit {

// Continuous stirred tank reactor, states (x, y), parameters (be, de, ga, si):
//   x' = (1-x) exp(y/(1+be*y)) - x/de
//   y' = [(1-x) exp(y/(1+be*y)) - y/si] / ga
VectorField make_cstr();

// Four fully coupled Brusselator cells, state z = (x1,y1,...,x4,y4),
// parameters (A, B, eps):
//   xi' = A - (B+1) xi + xi^2 yi + eps * sum_j (xj - xi)
//   yi' = B xi - xi^2 yi + 10 eps * sum_j (yj - yi)
VectorField make_brusselator4();

// ---------------------------------------------------------------------------
// Closed-form CSTR relations valid for be = 0 and fixed ga. Used as oracles
// by the test suites; pure functions throughout.

// Equilibrium family: (x, y) -> (de, si).
std::pair<double, double> cstr_oracle_equilibrium(double x, double y);

struct CstrHopfPoint {
  double si, de, y, k;  // k = omega^2 where positive
};

// Hopf / neutral-saddle family parameterized by s = x in (0,1).
CstrHopfPoint cstr_oracle_hopf_curve(double s, double ga);

// First Lyapunov coefficient on the Hopf family; requires ga < x^2 (1-x).
double cstr_oracle_l1(double x, double ga);

// The two positive roots of p(x) = x^3 - x^2 + ga (Bogdanov-Takens abscissae),
// ascending. Coincident pair at ga = 4/27; throws DomainError for ga > 4/27.
std::pair<double, double> cstr_oracle_bt(double ga);

// Branch-point abscissae x_BP,-(theta) <= x_BP,+(theta) where the neutral
// saddle family intersects the theta-dependent solution family.
// Throws DomainError when the discriminant is negative.
std::pair<double, double> cstr_oracle_bp_theta(double theta, double ga);

struct BrusHopf {
  double eps_star;          // delta / 44
  double omega;             // imaginary part of the crossing pair
  std::complex<double> k2;  // eigenvector component ratio
};

// Equivariant Hopf data at the symmetric equilibrium, delta = B - 1 - A^2 > 0.
BrusHopf brus_oracle_hopf(double A, double B);

struct BrusEigs {
  std::complex<double> k1p, k1m;  // simple pair
  std::complex<double> k2p, k2m;  // each with multiplicity 3
};

// Eigenvalues of the Jacobian at the symmetric equilibrium.
BrusEigs brus_oracle_eigs(double A, double B, double eps);

}  // namespace bifkit
