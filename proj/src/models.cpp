#include "bifkit/models.hpp"

#include <cmath>

namespace bifkit {

namespace {
constexpr int kBe = 0, kDe = 1, kGa = 2, kSi = 3;  // cstr parameter order
}

VectorField make_cstr() {
  VectorField vf;
  vf.n_x = 2;
  vf.n_p = 4;
  vf.state_names = {"x", "y"};
  vf.param_names = {"be", "de", "ga", "si"};
  vf.eval_fn = [](const Vec& u, const Vec& p) {
    const double x = u[0], y = u[1];
    const double be = p[kBe], de = p[kDe], ga = p[kGa], si = p[kSi];
    const double E = std::exp(y / (1.0 + be * y));
    Vec f(2);
    f[0] = (1.0 - x) * E - x / de;
    f[1] = ((1.0 - x) * E - y / si) / ga;
    return f;
  };
  vf.jac_x_fn = [](const Vec& u, const Vec& p) {
    const double x = u[0], y = u[1];
    const double be = p[kBe], de = p[kDe], ga = p[kGa], si = p[kSi];
    const double d = 1.0 + be * y;
    const double E = std::exp(y / d);
    const double Ey = E / (d * d);
    Mat J(2, 2);
    J(0, 0) = -E - 1.0 / de;
    J(0, 1) = (1.0 - x) * Ey;
    J(1, 0) = -E / ga;
    J(1, 1) = ((1.0 - x) * Ey - 1.0 / si) / ga;
    return J;
  };
  vf.jac_p_fn = [](const Vec& u, const Vec& p) {
    const double x = u[0], y = u[1];
    const double be = p[kBe], de = p[kDe], ga = p[kGa], si = p[kSi];
    const double d = 1.0 + be * y;
    const double E = std::exp(y / d);
    const double Ebe = -E * y * y / (d * d);
    Mat J = Mat::Zero(2, 4);
    J(0, kBe) = (1.0 - x) * Ebe;
    J(0, kDe) = x / (de * de);
    J(1, kBe) = (1.0 - x) * Ebe / ga;
    J(1, kGa) = -((1.0 - x) * E - y / si) / (ga * ga);
    J(1, kSi) = y / (si * si * ga);
    return J;
  };
  return vf;
}

VectorField make_brusselator4() {
  VectorField vf;
  vf.n_x = 8;
  vf.n_p = 3;
  vf.state_names = {"x1", "y1", "x2", "y2", "x3", "y3", "x4", "y4"};
  vf.param_names = {"A", "B", "eps"};
  vf.eval_fn = [](const Vec& z, const Vec& p) {
    const double A = p[0], B = p[1], eps = p[2];
    double sx = 0.0, sy = 0.0;
    for (int i = 0; i < 4; ++i) {
      sx += z[2 * i];
      sy += z[2 * i + 1];
    }
    Vec f(8);
    for (int i = 0; i < 4; ++i) {
      const double x = z[2 * i], y = z[2 * i + 1];
      f[2 * i] = A - (B + 1.0) * x + x * x * y + eps * (sx - 4.0 * x);
      f[2 * i + 1] = B * x - x * x * y + 10.0 * eps * (sy - 4.0 * y);
    }
    return f;
  };
  vf.jac_x_fn = [](const Vec& z, const Vec& p) {
    const double B = p[1], eps = p[2];
    Mat J = Mat::Zero(8, 8);
    for (int i = 0; i < 4; ++i) {
      const double x = z[2 * i], y = z[2 * i + 1];
      for (int j = 0; j < 4; ++j) {
        J(2 * i, 2 * j) += eps;
        J(2 * i + 1, 2 * j + 1) += 10.0 * eps;
      }
      J(2 * i, 2 * i) += -(B + 1.0) + 2.0 * x * y - 4.0 * eps;
      J(2 * i, 2 * i + 1) = x * x;
      J(2 * i + 1, 2 * i) = B - 2.0 * x * y;
      J(2 * i + 1, 2 * i + 1) += -x * x - 40.0 * eps;
    }
    return J;
  };
  vf.jac_p_fn = [](const Vec& z, const Vec& p) {
    (void)p;
    double sx = 0.0, sy = 0.0;
    for (int i = 0; i < 4; ++i) {
      sx += z[2 * i];
      sy += z[2 * i + 1];
    }
    Mat J = Mat::Zero(8, 3);
    for (int i = 0; i < 4; ++i) {
      const double x = z[2 * i], y = z[2 * i + 1];
      J(2 * i, 0) = 1.0;
      J(2 * i, 1) = -x;
      J(2 * i, 2) = sx - 4.0 * x;
      J(2 * i + 1, 1) = x;
      J(2 * i + 1, 2) = 10.0 * (sy - 4.0 * y);
    }
    return J;
  };
  return vf;
}

std::pair<double, double> cstr_oracle_equilibrium(double x, double y) {
  const double e = std::exp(-y);
  return {x * e / (1.0 - x), y * e / (1.0 - x)};
}

CstrHopfPoint cstr_oracle_hopf_curve(double s, double ga) {
  const double q = s * (1.0 - s);
  if (std::abs(q - ga) < 1e-14) throw DomainError("pole at s(1-s) = ga");
  CstrHopfPoint h;
  h.y = q / (q - ga);
  const double e = std::exp(-h.y);
  h.si = s * e / (q - ga);
  h.de = s * e / (1.0 - s);
  const double px = s * s * s - s * s + ga;
  h.k = -px * std::exp(2.0 * h.y) / (s * s * ga);
  return h;
}

double cstr_oracle_l1(double x, double ga) {
  const double px = x * x * x - x * x + ga;
  if (px >= 0.0) throw DomainError("l1 closed form requires p(x) < 0");
  const double num = 2.0 * ga * ga - x * (3.0 - ga) * ga +
                     x * x * (1.0 + 5.0 * ga - 2.0 * ga * ga) -
                     x * x * x * (3.0 + 2.0 * ga) + 3.0 * std::pow(x, 4) -
                     std::pow(x, 5);
  const double den = 4.0 * std::sqrt(ga) * std::pow(x * x * (1.0 - x) - ga, 1.5) *
                     (1.0 + (1.0 - x) * ga);
  return num / den;
}

std::pair<double, double> cstr_oracle_bt(double ga) {
  if (ga <= 0.0 || ga > 4.0 / 27.0 + 1e-15)
    throw DomainError("p(x) has no positive root pair for ga outside (0, 4/27]");
  auto p = [ga](double x) { return x * x * x - x * x + ga; };
  // p(0) = ga > 0, minimum at x = 2/3.
  if (p(2.0 / 3.0) >= -1e-15) return {2.0 / 3.0, 2.0 / 3.0};
  auto bisect = [&p](double a, double b) {
    for (int i = 0; i < 200; ++i) {
      const double m = 0.5 * (a + b);
      if (p(a) * p(m) <= 0.0)
        b = m;
      else
        a = m;
      if (b - a < 1e-15) break;
    }
    return 0.5 * (a + b);
  };
  return {bisect(0.0, 2.0 / 3.0), bisect(2.0 / 3.0, 1.0)};
}

std::pair<double, double> cstr_oracle_bp_theta(double theta, double ga) {
  const double c = 1.0 / std::tan(theta);
  const double a = ga + c * c;
  const double disc = a * a - 8.0 * ga * ga * c;
  if (disc < 0.0) throw DomainError("complex branch-point pair");
  const double r = std::sqrt(disc);
  return {(a - r) / (2.0 * ga), (a + r) / (2.0 * ga)};
}

BrusHopf brus_oracle_hopf(double A, double B) {
  const double de = B - 1.0 - A * A;
  if (de <= 0.0) throw DomainError("requires B - 1 - A^2 > 0");
  const double disc = 11.0 * A * A * (11.0 - 9.0 * de) - 100.0 * de * de;
  if (disc <= 0.0) throw DomainError("no imaginary crossing pair");
  BrusHopf h;
  h.eps_star = de / 44.0;
  h.omega = std::sqrt(disc) / 11.0;
  h.k2 = 11.0 * A * A /
         std::complex<double>(-11.0 * A * A - 10.0 * de, 11.0 * h.omega);
  return h;
}

BrusEigs brus_oracle_eigs(double A, double B, double eps) {
  const double de = B - 1.0 - A * A;
  const auto croot = [](double v) {
    return v >= 0.0 ? std::complex<double>(std::sqrt(v), 0.0)
                    : std::complex<double>(0.0, std::sqrt(-v));
  };
  BrusEigs e;
  const auto r1 = croot(de * de - 4.0 * A * A);
  e.k1p = (de + r1) / 2.0;
  e.k1m = (de - r1) / 2.0;
  const auto r2 = croot((de + 36.0 * eps) * (de + 36.0 * eps) -
                        4.0 * A * A * (1.0 - 36.0 * eps));
  e.k2p = (de - 44.0 * eps + r2) / 2.0;
  e.k2m = (de - 44.0 * eps - r2) / 2.0;
  return e;
}

}  // namespace bifkit
