#include <doctest.h>

#include <cmath>
#include <memory>

#include "bifkit/eqbif.hpp"
#include "bifkit/models.hpp"

using namespace bifkit;

namespace {

Vec cstr_params(double de, double si, double ga = 0.1) {
  Vec p(4);
  p << 0.0, de, ga, si;
  return p;
}

}  // namespace

TEST_CASE("equilibrium problem pins states and frees parameters") {
  const auto& vf = model_registry("cstr");
  auto [de, si] = cstr_oracle_equilibrium(0.9, 2.0);
  // free (de, si) = params 1 and 3, pin y = 2.
  EpProblem ep(vf, cstr_params(de, si), {1, 3}, {{1, 2.0}});
  CHECK(ep.num_unknowns() == 3);  // x + two free params
  CHECK(ep.deficit() == 1);

  Vec x(2);
  x << 0.9, 2.0;
  Vec u = ep.pack(x, cstr_params(de, si));
  CHECK(ep.residual(u).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(ep.state(u)[1] == 2.0);

  // Analytic Jacobian vs finite differences.
  Mat J = Mat(ep.jacobian(u));
  Mat J_fd = fd_jacobian([&](const Vec& w) { return ep.residual(w); }, u, 2);
  CHECK((J - J_fd).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("eigenvalue monitors find SN and HB on the pinned-y branch") {
  const auto& vf = model_registry("cstr");
  auto [de, si] = cstr_oracle_equilibrium(0.9, 2.0);
  auto ep = std::make_shared<EpProblem>(vf, cstr_params(de, si),
                                        std::vector<int>{1, 3},
                                        std::vector<std::pair<int, double>>{
                                            {1, 2.0}});
  Vec x(2);
  x << 0.9, 2.0;
  Vec u0 = ep->pack(x, cstr_params(de, si));
  ContinuationSettings st;
  st.h0 = 0.02;
  st.h_max = 0.05;
  st.max_steps = 400;
  Branch br = continue_branch(*ep, u0, st, eig_monitors(ep));

  const double e2 = std::exp(2.0);
  bool found_sn = false, found_hb = false;
  for (const auto& sweep : br.sweeps)
    for (const auto& ev : sweep.events) {
      if (ev.label == "SN") {
        found_sn = true;
        CHECK(ev.u[0] == doctest::Approx(0.5).epsilon(1e-6));
      }
      if (ev.label == "HB") {
        found_hb = true;
        CHECK(ev.u[0] ==
              doctest::Approx((5.0 + std::sqrt(5.0)) / 10.0).epsilon(1e-6));
      }
    }
  CHECK(found_sn);
  CHECK(found_hb);
}

TEST_CASE("saddle-node initialization from an eigen-decomposition") {
  const auto& vf = model_registry("cstr");
  auto [de, si] = cstr_oracle_equilibrium(0.5, 2.0);  // the closed-form SN
  Vec x(2);
  x << 0.5, 2.0;
  auto eq = analyze_equilibrium(vf, x, cstr_params(de, si));
  auto d = sn_init(vf, eq, 1e-6);
  CHECK(std::abs(d.v.norm() - 1.0) < 1e-12);
  CHECK((vf.jac_x(d.x, d.p) * d.v).cwiseAbs().maxCoeff() < 1e-8);

  SnProblem sn(vf, cstr_params(de, si), {1, 3});
  Vec u = sn.pack(d.x, d.p, d.v);
  CHECK(sn.residual(u).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(sn.deficit() == 1);
}

TEST_CASE("Hopf initialization satisfies the extended defining system") {
  const auto& vf = model_registry("cstr");
  const double ga = 0.1;
  auto hp = cstr_oracle_hopf_curve(0.72, ga);
  auto [de, si] = cstr_oracle_equilibrium(0.72, hp.y);
  Vec x(2);
  x << 0.72, hp.y;
  Mat J = vf.jac_x(x, cstr_params(de, si, ga));
  auto ed = hopf_eigendata(J, 1e-6);
  REQUIRE(ed.has_value());
  auto [omega, v, w] = *ed;
  CHECK(omega * omega == doctest::Approx(hp.k).epsilon(1e-8));
  CHECK((J * v + omega * w).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((J * w - omega * v).cwiseAbs().maxCoeff() < 1e-9);

  HopfProblem hopf(vf, cstr_params(de, si, ga), {1, 3});
  Vec u = hopf.init(x, cstr_params(de, si, ga), omega, v, w);
  CHECK(hopf.residual(u).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(hopf.deficit() == 1);
  CHECK(hopf.k(u) == doctest::Approx(omega * omega).epsilon(1e-10));

  // J^2 v1 = -k v1 characterizes the doubled eigenspace.
  Vec v1 = hopf.v1(u);
  CHECK((J * (J * v1) + hopf.k(u) * v1).cwiseAbs().maxCoeff() < 1e-8);

  auto data = hopf.data(u);
  CHECK(data.classification == "HB");
}

TEST_CASE("first Lyapunov coefficient matches the closed form") {
  const auto& vf = model_registry("cstr");
  const double ga = 0.1;
  for (double s : {0.55, 0.65, 0.75}) {
    auto hp = cstr_oracle_hopf_curve(s, ga);
    auto [de, si] = cstr_oracle_equilibrium(s, hp.y);
    Vec x(2);
    x << s, hp.y;
    Vec p = cstr_params(de, si, ga);
    auto ed = hopf_eigendata(vf.jac_x(x, p), 1e-6);
    REQUIRE(ed.has_value());
    auto [omega, v, w] = *ed;
    const double l1 = lyapunov_first(vf, x, p, omega * omega, v);
    const double l1_ref = cstr_oracle_l1(s, ga);
    // Same zero set and sign; the normal-form normalization differs by a
    // positive factor, so compare signs and relative scale loosely.
    CHECK(l1 * l1_ref > 0.0);
  }

  // Near a root of the closed form, the computed l1 changes sign too.
  double lo = 0.54, hi = 0.56;
  double f_lo = cstr_oracle_l1(lo, ga), f_hi = cstr_oracle_l1(hi, ga);
  if (f_lo * f_hi < 0.0) {
    auto eval = [&](double s) {
      auto hp = cstr_oracle_hopf_curve(s, ga);
      auto [de, si] = cstr_oracle_equilibrium(s, hp.y);
      Vec x(2);
      x << s, hp.y;
      Vec p = cstr_params(de, si, ga);
      auto ed = hopf_eigendata(vf.jac_x(x, p), 1e-6);
      auto [omega, v, w] = *ed;
      return lyapunov_first(vf, x, p, omega * omega, v);
    };
    CHECK(eval(lo) * eval(hi) < 0.0);
  }
}

TEST_CASE("degenerate-Hopf system residual appends l1") {
  const auto& vf = model_registry("cstr");
  const double ga = 0.1;
  auto hp = cstr_oracle_hopf_curve(0.72, ga);
  auto [de, si] = cstr_oracle_equilibrium(0.72, hp.y);
  Vec x(2);
  x << 0.72, hp.y;
  Vec p = cstr_params(de, si, ga);
  auto ed = hopf_eigendata(vf.jac_x(x, p), 1e-6);
  auto [omega, v, w] = *ed;

  DhProblem dh(vf, p, {1, 2, 3});
  Vec u = dh.hopf().init(x, p, omega, v, w);
  Vec r = dh.residual(u);
  CHECK(r.size() == dh.hopf().num_residuals() + 1);
  CHECK(r.head(r.size() - 1).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(std::isfinite(r[r.size() - 1]));
  CHECK(dh.deficit() == 1);
}
