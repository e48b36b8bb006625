// End-to-end acceptance checks: the CSTR and coupled-Brusselator case
// studies, staged through the run archive exactly as the CLI drives them.
// Prints one PASS/FAIL line per criterion; exit status is the failure count.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bifkit/contin.hpp"
#include "bifkit/eqbif.hpp"
#include "bifkit/models.hpp"
#include "bifkit/pobif.hpp"
#include "bifkit/runner.hpp"
#include "bifkit/sym.hpp"

using json = nlohmann::json;
namespace fs = std::filesystem;
using namespace bifkit;

namespace {

const double kE2 = std::exp(2.0);

struct Crit {
  int id;
  bool ok = true;
  std::string note;

  void chk(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      if (!note.empty()) note += "; ";
      note += what;
    }
  }
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }
bool rnear(double a, double b, double rtol) {
  return std::abs(a - b) <= rtol * std::max(std::abs(a), std::abs(b));
}

// --- archive access ---------------------------------------------------

struct Ev {
  int label = 0;  // archive label (global counter, matches sol_<label>.json)
  int sweep = 0;
  std::string type;
  Vec values;
  double s = 0.0;
  Vec u;  // located solution vector of the continuation problem
};

std::vector<Ev> events_of(const RunOutcome& o) {
  std::vector<Ev> out;
  int lbl = 0;
  for (size_t si = 0; si < o.branch.sweeps.size(); ++si)
    for (const auto& e : o.branch.sweeps[si].events)
      out.push_back({++lbl, static_cast<int>(si), e.label, e.monitor_values,
                     e.arclength, e.u});
  return out;
}

int midx(const RunOutcome& o, const std::string& name) {
  const auto& names = o.branch.monitor_names;
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  throw std::runtime_error("monitor \"" + name + "\" not recorded");
}

double evval(const RunOutcome& o, const Ev& e, const std::string& name) {
  return e.values[midx(o, name)];
}

// First event of the given type satisfying pred (on this outcome's events).
template <class Pred>
std::optional<Ev> find_ev(const RunOutcome& o, const std::string& type,
                          Pred pred) {
  for (const auto& e : events_of(o))
    if (e.type == type && pred(e)) return e;
  return std::nullopt;
}

std::vector<Ev> all_of_type(const RunOutcome& o, const std::string& type) {
  std::vector<Ev> out;
  for (const auto& e : events_of(o))
    if (e.type == type) out.push_back(e);
  return out;
}

// --- run plumbing ------------------------------------------------------

fs::path g_root;
std::map<std::string, RunOutcome> g_runs;

const RunOutcome& do_run(const json& j) {
  RunSpec spec = parse_runspec(j);
  auto out = bifkit::run(spec, g_root);
  return g_runs.emplace(spec.output, std::move(out)).first->second;
}

const RunOutcome& runout(const std::string& id) {
  auto it = g_runs.find(id);
  if (it == g_runs.end()) throw std::runtime_error("run \"" + id + "\" missing");
  return it->second;
}

json cstr_model() {
  return json{{"name", "cstr"},
              {"params",
               {{"be", 0.0}, {"ga", 0.1}, {"de", 9.0 / kE2}, {"si", 20.0 / kE2}}}};
}

// --- CSTR saddle data for the homoclinic scaling check ------------------

// Equilibria at fixed (de, si), be = 0, ga = 0.1: y = (si/de) x and
// (1-x) e^y = x/de; returns the unstable eigenvalue of the (unique) saddle.
double cstr_saddle_eigenvalue(double de, double si) {
  const VectorField& vf = model_registry("cstr");
  auto g = [&](double x) {
    return (1.0 - x) * std::exp(si * x / de) - x / de;
  };
  std::vector<double> roots;
  const int N = 4096;
  double xa = 1e-9, ga_ = g(xa);
  for (int i = 1; i <= N; ++i) {
    double xb = static_cast<double>(i) / N * (1.0 - 2e-9) + 1e-9;
    double gb = g(xb);
    if (ga_ == 0.0) roots.push_back(xa);
    if (ga_ * gb < 0.0) {
      double lo = xa, hi = xb;
      for (int it = 0; it < 100; ++it) {
        double mid = 0.5 * (lo + hi);
        (g(lo) * g(mid) <= 0.0 ? hi : lo) = mid;
      }
      roots.push_back(0.5 * (lo + hi));
    }
    xa = xb;
    ga_ = gb;
  }
  Vec p(4);
  p[vf.param_index("be")] = 0.0;
  p[vf.param_index("ga")] = 0.1;
  p[vf.param_index("de")] = de;
  p[vf.param_index("si")] = si;
  for (double x : roots) {
    Vec st(2);
    st << x, si * x / de;
    Mat J = vf.jac_x(st, p);
    double det = J(0, 0) * J(1, 1) - J(0, 1) * J(1, 0);
    double tr = J(0, 0) + J(1, 1);
    if (det < 0.0) return 0.5 * (tr + std::sqrt(tr * tr - 4.0 * det));
  }
  throw std::runtime_error("no saddle equilibrium found");
}

// Base-point parameter values of a mesh (shared Lagrange points).
Vec base_taus(const Mesh& m) {
  Vec t(m.n_base());
  int k = 0;
  for (int i = 0; i < m.L; ++i)
    for (int d = 0; d < m.ndeg; ++d)
      t[k++] = m.boundaries[i] + m.width(i) * d / m.ndeg;
  t[k] = 1.0;
  return t;
}

double max_jac_fd_err(const VectorField& vf, const Vec& x, const Vec& p) {
  Mat Ja = vf.jac_x(x, p);
  Mat Jf(vf.n_x, vf.n_x);
  for (int j = 0; j < vf.n_x; ++j) {
    double h = 1e-6 * std::max(1.0, std::abs(x[j]));
    Vec xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    Jf.col(j) = (vf.eval(xp, p) - vf.eval(xm, p)) / (2.0 * h);
  }
  return (Ja - Jf).cwiseAbs().maxCoeff() /
         std::max(1.0, Ja.cwiseAbs().maxCoeff());
}

}  // namespace

// ===========================================================================

int main() {
  g_root = fs::path("acceptance_runs");
  std::error_code ec;
  fs::remove_all(g_root, ec);
  fs::create_directories(g_root);

  std::vector<Crit> crits;
  for (int i = 1; i <= 10; ++i) crits.push_back({i});
  auto& C = crits;  // C[i-1] is criterion i

  // --------------------------------------------------------------- stage: ep
  try {
    do_run(json{
        {"output", "cstr_ep"},
        {"model", cstr_model()},
        {"problem", "ep"},
        {"free", {"si", "de", "y=2"}},
        {"start", {{"state", {0.9, 2.0}}}},
        {"columns", {"x", "y", "si", "de"}},
        {"settings", {{"h0", 0.02}, {"h_max", 0.05}, {"max_steps", 300}}}});
    const auto& o = runout("cstr_ep");
    auto& c = C[0];
    auto sn = find_ev(o, "SN", [](const Ev&) { return true; });
    auto hb = find_ev(o, "HB", [](const Ev&) { return true; });
    c.chk(sn.has_value(), "no SN event");
    c.chk(hb.has_value(), "no HB event");
    if (sn) {
      c.chk(near(evval(o, *sn, "x"), 0.50000, 5e-4) &&
                near(evval(o, *sn, "si"), 0.54134, 5e-4) &&
                near(evval(o, *sn, "de"), 0.13534, 5e-4),
            "SN at (" + fmt(evval(o, *sn, "x")) + "," + fmt(evval(o, *sn, "si")) +
                "," + fmt(evval(o, *sn, "de")) + ")");
      c.chk(near(evval(o, *sn, "x"), 0.5, 1e-6) &&
                near(evval(o, *sn, "si"), 4.0 / kE2, 1e-6) &&
                near(evval(o, *sn, "de"), 1.0 / kE2, 1e-6),
            "SN misses closed form");
    }
    if (hb) {
      const double r5 = std::sqrt(5.0);
      c.chk(near(evval(o, *hb, "x"), 0.72361, 5e-4) &&
                near(evval(o, *hb, "si"), 0.97930, 5e-4) &&
                near(evval(o, *hb, "de"), 0.35431, 5e-4),
            "HB at (" + fmt(evval(o, *hb, "x")) + "," + fmt(evval(o, *hb, "si")) +
                "," + fmt(evval(o, *hb, "de")) + ")");
      c.chk(near(evval(o, *hb, "x"), (5.0 + r5) / 10.0, 1e-6) &&
                near(evval(o, *hb, "si"), (5.0 + r5) / kE2, 1e-6) &&
                near(evval(o, *hb, "de"), (3.0 + r5) / (2.0 * kE2), 1e-6),
            "HB misses closed form");
    }
  } catch (const std::exception& e) {
    C[0].chk(false, std::string("stage threw: ") + e.what());
  }

  // ------------------------------------------------------------- stage: hopf
  try {
    do_run(json{
        {"output", "cstr_hopf"},
        {"model", {{"name", "cstr"}}},
        {"problem", "hopf"},
        {"free", {"si", "de"}},
        {"start", {{"restart", "cstr_ep/HB"}}},
        {"columns", {"si", "de", "x", "y", "k"}},
        {"monitors",
         {{"UZ",
           {{"si", {0.85, 0.63433}}, {"de", {0.11426, 0.091}}}}}},
        // Between the second degenerate Hopf point and the second
        // Bogdanov-Takens point the eigendata unknowns of the extended system
        // grow to ~1e5, so arclength is dominated by them; large steps are
        // harmless there because the curve is nearly straight in those
        // coordinates. The x window stops both sweeps shortly past the
        // Bogdanov-Takens points.
        {"bounds", {{"x", {0.2, 0.869}}}},
        {"settings", {{"h0", 0.02}, {"h_max", 50.0}, {"max_steps", 20000}}}});
    const auto& o = runout("cstr_hopf");
    auto& c = C[1];
    auto match2 = [&](const std::string& type, double s1, double d1, double s2,
                      double d2, double rtol) {
      auto evs = all_of_type(o, type);
      bool a = false, b = false;
      for (const auto& e : evs) {
        double si = evval(o, e, "si"), de = evval(o, e, "de");
        if (rnear(si, s1, rtol) && rnear(de, d1, rtol)) a = true;
        if (rnear(si, s2, rtol) && rnear(de, d2, rtol)) b = true;
      }
      return std::pair{a, b};
    };
    auto [dh1, dh2] = match2("DH", 0.69586, 0.22796, 0.26535, 0.047034, 1e-3);
    c.chk(dh1, "DH (0.69586,0.22796) missing");
    c.chk(dh2, "DH (0.26535,0.047034) missing");
    auto [bt1, bt2] =
        match2("BTP", 0.52818, 0.12801, 0.030747, 0.0035466, 1e-3);
    c.chk(bt1, "BTP (0.52818,0.12801) missing");
    c.chk(bt2, "BTP (0.030747,0.0035466) missing");
    auto bp = find_ev(o, "BP", [&](const Ev& e) {
      return rnear(evval(o, e, "si"), 0.42292, 1e-2);
    });
    c.chk(bp.has_value(), "BP missing");
    if (bp) {
      const double xb = evval(o, *bp, "x"), yb = evval(o, *bp, "y");
      const double sb = evval(o, *bp, "si"), db = evval(o, *bp, "de");
      // The located point must lie on the closed-form neutral-saddle family.
      const double q = xb * (1.0 - xb);
      c.chk(std::abs(yb - q / (q - 0.1)) < 1e-6 &&
                rnear(sb, xb * std::exp(-yb) / (q - 0.1), 1e-6) &&
                rnear(db, xb * std::exp(-yb) / (1.0 - xb), 1e-6),
            "BP off the neutral-saddle family");
      // The exact position along that family is set by the stored eigenvector
      // direction (cos t, sin t): the crossing family predicts x_BP,-(t).
      // The reference table's position corresponds to its own stored
      // direction (t ~ 1.43), so compare coordinates at a loose tolerance and
      // the direction relation at a tight one.
      const double th = std::atan2(bp->u[6], bp->u[5]);
      const double x_theta =
          cstr_oracle_bp_theta(th < 0 ? th + M_PI : th, 0.1).first;
      c.chk(rnear(xb, x_theta, 1e-3),
            "BP x=" + fmt(xb) + " vs theta-family " + fmt(x_theta));
      c.chk(rnear(sb, 0.42292, 2e-2) && rnear(db, 0.071751, 2e-2),
            "BP at (" + fmt(sb) + "," + fmt(db) + ")");
    }
  } catch (const std::exception& e) {
    C[1].chk(false, std::string("stage threw: ") + e.what());
  }

  // ---------------------------------------------------------- stage: dh runs
  try {
    const auto& oh = runout("cstr_hopf");
    auto& c = C[2];
    auto dh_near = [&](double si) -> std::optional<Ev> {
      return find_ev(oh, "DH", [&](const Ev& e) {
        return near(evval(oh, e, "si"), si, 5e-3);
      });
    };
    auto d1 = dh_near(0.69586);
    auto d2 = dh_near(0.26535);
    c.chk(d1.has_value() && d2.has_value(), "DH source points missing");
    if (d1) {
      const auto& o = do_run(json{
          {"output", "dh1"},
          {"model", {{"name", "cstr"}}},
          {"problem", "dh"},
          {"free", {"si", "de", "ga"}},
          {"start", {{"restart", "cstr_hopf/" + std::to_string(d1->label)}}},
          {"columns", {"si", "de", "ga"}},
          {"bounds", {{"ga", {0.08, 0.2}}}},
          {"settings", {{"h0", 0.01}, {"h_max", 0.2}, {"max_steps", 1500}}}});
      bool mx_ok = false;
      for (const auto& sw : o.branch.sweeps)
        if (sw.termination == "MX" && !sw.points.empty() &&
            near(sw.points.back().monitor_values[midx(o, "ga")], 0.125, 2e-3))
          mx_ok = true;
      c.chk(mx_ok, "first family: no MX near ga=0.125");
    }
    if (d2) {
      const auto& o = do_run(json{
          {"output", "dh2"},
          {"model", {{"name", "cstr"}}},
          {"problem", "dh"},
          {"free", {"si", "de", "ga"}},
          {"start", {{"restart", "cstr_hopf/" + std::to_string(d2->label)}}},
          {"columns", {"si", "de", "ga"}},
          {"monitors", {{"fold", "si"}}},
          {"bounds", {{"ga", {0.085, 0.2}}}},
          {"settings", {{"h0", 0.01}, {"h_max", 0.2}, {"max_steps", 1500}}}});
      bool hit = false;
      auto fp = find_ev(o, "FP", [&](const Ev& e) {
        return near(evval(o, e, "ga"), 0.14590, 2e-3);
      });
      if (fp) hit = true;
      for (const auto& sw : o.branch.sweeps)
        if (sw.termination == "MX" && !sw.points.empty() &&
            near(sw.points.back().monitor_values[midx(o, "ga")], 0.14590,
                 2e-3))
          hit = true;
      c.chk(hit, "second family: no FP/MX near ga=0.14590");
    }
  } catch (const std::exception& e) {
    C[2].chk(false, std::string("stage threw: ") + e.what());
  }

  // ----------------------------------------------------------- stage: bubbles
  auto hopf_uz = [&](const std::string& col,
                     double value) -> std::optional<Ev> {
    const auto& oh = runout("cstr_hopf");
    // The orbit families emanate from the Hopf points on the upper part of
    // the curve (x > 0.75); the same parameter values are also crossed on the
    // lower part, where the Hopf point has a different second parameter.
    return find_ev(oh, "UZ", [&](const Ev& e) {
      return near(evval(oh, e, col), value, 1e-4) && evval(oh, e, "k") > 0.0 &&
             evval(oh, e, "x") > 0.75;
    });
  };
  try {
    auto& c = C[3];
    auto src1 = hopf_uz("si", 0.85);
    c.chk(src1.has_value(), "no Hopf point at si=0.85");
    if (src1) {
      const auto& o = do_run(json{
          {"output", "bub1"},
          {"model", {{"name", "cstr"}}},
          {"problem", "po"},
          {"free", {"si"}},
          {"start", {{"from_hopf", "cstr_hopf/" + std::to_string(src1->label)}}},
          {"mesh", {{"L", 20}}},
          {"columns", {"si", "de", "po.period", "amplitude"}},
          {"settings", {{"h0", 0.01}, {"h_max", 0.2}, {"max_steps", 600}}}});
      auto hb = find_ev(o, "HB", [&](const Ev& e) {
        return evval(o, e, "si") < 0.8;
      });
      c.chk(hb.has_value(), "bubble 1: no closing HB");
      if (hb)
        c.chk(near(evval(o, *hb, "si"), 0.71379, 1e-3) &&
                  near(evval(o, *hb, "po.period"), 1.0583, 1e-2),
              "bubble 1 closes at si=" + fmt(evval(o, *hb, "si")) + " T=" +
                  fmt(evval(o, *hb, "po.period")));
    }
    auto src2 = hopf_uz("si", 0.63433);
    c.chk(src2.has_value(), "no Hopf point at si=0.63433");
    if (src2) {
      const auto& o = do_run(json{
          {"output", "bub2"},
          {"model", {{"name", "cstr"}}},
          {"problem", "po"},
          {"free", {"si"}},
          {"start", {{"from_hopf", "cstr_hopf/" + std::to_string(src2->label)}}},
          {"mesh", {{"L", 20}}},
          {"columns", {"si", "de", "po.period", "amplitude"}},
          {"settings", {{"h0", 0.01}, {"h_max", 0.2}, {"max_steps", 600}}}});
      auto sn = find_ev(o, "SN", [](const Ev&) { return true; });
      c.chk(sn.has_value(), "bubble 2: no PO-SN");
      if (sn)
        c.chk(near(evval(o, *sn, "si"), 0.56537, 1e-3),
              "bubble 2 SN at si=" + fmt(evval(o, *sn, "si")));
      auto hb = find_ev(o, "HB", [&](const Ev& e) {
        return evval(o, e, "si") < 0.6;
      });
      c.chk(hb.has_value(), "bubble 2: no closing HB");
      if (hb)
        c.chk(near(evval(o, *hb, "si"), 0.56748, 1e-3),
              "bubble 2 closes at si=" + fmt(evval(o, *hb, "si")));
    }
  } catch (const std::exception& e) {
    C[3].chk(false, std::string("stage threw: ") + e.what());
  }

  // ------------------------------------------------------ stage: SNIC / hom
  // Runs a fixed-delta orbit family up to period 20 and classifies the
  // period growth law. Returns the stop event for later restarts.
  auto long_period_run = [&](const std::string& id, double de_value,
                             double si_target, const char* want_mode,
                             Crit& c) -> std::optional<Ev> {
    auto src = hopf_uz("de", de_value);
    c.chk(src.has_value(), id + ": no Hopf source at de=" + fmt(de_value));
    if (!src) return std::nullopt;
    const auto& o = do_run(json{
        {"output", id},
        {"model", {{"name", "cstr"}}},
        {"problem", "po"},
        {"free", {"si"}},
        {"start", {{"from_hopf", "cstr_hopf/" + std::to_string(src->label)}}},
        {"mesh", {{"L", 20}, {"L_max", 200}}},
        {"columns", {"si", "de", "po.period", "amplitude"}},
        {"monitors", {{"UZ", {{"po.period", {5.0, 10.0, 15.0}}}}}},
        {"bounds", {{"po.period", {nullptr, 20.0}}}},
        {"settings", {{"h0", 0.01}, {"h_max", 0.5}, {"max_steps", 800}}}});
    auto stop = find_ev(o, "EP", [&](const Ev& e) {
      return near(evval(o, e, "po.period"), 20.0, 0.1);
    });
    c.chk(stop.has_value(), id + ": did not reach period 20");
    if (!stop) return std::nullopt;
    const double si_star = evval(o, *stop, "si");
    c.chk(near(si_star, si_target, 1e-3),
          id + ": period 20 at si=" + fmt(si_star));
    // Growth-law fit over the moderate-period part of the branch.
    std::vector<double> sig, per;
    const int i_si = midx(o, "si"), i_T = midx(o, "po.period");
    for (const auto& pt : o.branch.sweeps[stop->sweep].points) {
      double T = pt.monitor_values[i_T];
      if (T >= 2.0 && T <= 10.0) {
        sig.push_back(pt.monitor_values[i_si]);
        per.push_back(T);
      }
    }
    c.chk(sig.size() >= 5, id + ": too few points for the scaling fit");
    if (sig.size() >= 5) {
      auto fit = period_scaling_fit(sig, per, si_star);
      c.chk(fit.mode == want_mode,
            id + ": fit selected " + fit.mode);
      if (std::string(want_mode) == "power")
        c.chk(near(fit.exponent, -0.5, 0.1),
              id + ": exponent " + fmt(fit.exponent));
      if (std::string(want_mode) == "log" && fit.mode == "log") {
        double lam = cstr_saddle_eigenvalue(de_value, si_star);
        double lam_fit = 1.0 / fit.coeff;
        c.chk(std::abs(lam_fit - lam) <= 0.2 * lam,
              id + ": lambda_u fit " + fmt(lam_fit) + " vs " + fmt(lam));
      }
    }
    return stop;
  };

  std::optional<Ev> snic_stop;
  try {
    snic_stop = long_period_run("snic", 0.11426, 0.50612, "power", C[4]);
    long_period_run("hom", 0.091, 0.43724, "log", C[4]);
  } catch (const std::exception& e) {
    C[4].chk(false, std::string("stage threw: ") + e.what());
  }

  // ------------------------------------------------- stage: T=500 tracking
  try {
    auto& c = C[5];
    c.chk(snic_stop.has_value(), "no period-20 orbit to extend");
    if (snic_stop) {
      const auto& oe = do_run(json{
          {"output", "extend"},
          {"model", {{"name", "cstr"}}},
          {"problem", "po"},
          {"free", {"si"}},
          {"start", {{"restart", "snic/" + std::to_string(snic_stop->label)}}},
          {"columns", {"si", "de", "po.period", "amplitude"}},
          {"monitors", {{"floquet", false}, {"bp", false}, {"fold", "none"},
                        {"hb_stop", false}}},
          {"bounds", {{"po.period", {nullptr, 500.0}}}},
          {"settings", {{"h0", 0.5}, {"h_max", 5.0}, {"max_steps", 600},
                        {"direction", 1}}}});
      auto t500 = find_ev(oe, "EP", [&](const Ev& e) {
        return near(evval(oe, e, "po.period"), 500.0, 1.0);
      });
      c.chk(t500.has_value(), "extension did not reach period 500");
      if (t500) {
        const auto& o = do_run(json{
            {"output", "t500"},
            {"model", {{"name", "cstr"}}},
            {"problem", "po_fixT"},
            {"free", {"si", "de"}},
            {"start", {{"restart", "extend/" + std::to_string(t500->label)}}},
            {"po", {{"fixed_T", 500.0}}},
            {"columns", {"si", "de", "amplitude", "det", "tr"}},
            {"monitors", {{"fold", "si"}, {"fold_label", "FP"}}},
            {"settings",
             {{"h0", 0.05}, {"h_max", 0.5}, {"max_steps", 1500}}}});
        auto nsa_at = [&](double si, double de) {
          return find_ev(o, "NSA", [&](const Ev& e) {
                   return near(evval(o, e, "si"), si, 2e-3) &&
                          near(evval(o, e, "de"), de, 2e-3);
                 })
              .has_value();
        };
        c.chk(nsa_at(0.49376, 0.10821), "NSA (0.49376,0.10821) missing");
        c.chk(nsa_at(0.51949, 0.12293), "NSA (0.51949,0.12293) missing");
        for (double s : {0.50027, 0.50918, 0.53240}) {
          bool hit = find_ev(o, "NCS", [&](const Ev& e) {
                       return near(evval(o, e, "si"), s, 2e-3);
                     }).has_value();
          c.chk(hit, "NCS near si=" + fmt(s) + " missing");
        }
        c.chk(o.branch.sweeps.size() == 2, "expected two sweeps");
        int bt_hits = 0;
        for (const auto& sw : o.branch.sweeps) {
          c.chk(sw.termination == "MX", "sweep did not terminate MX");
          if (sw.points.empty()) continue;
          const Vec& mv = sw.points.back().monitor_values;
          double si = mv[midx(o, "si")], de = mv[midx(o, "de")];
          double amp = mv[midx(o, "amplitude")];
          c.chk(amp < 1e-5, "terminal amplitude " + fmt(amp));
          if ((near(si, 0.030747, 2e-3) && near(de, 0.0035466, 2e-3)) ||
              (near(si, 0.52816, 2e-3) && near(de, 0.12800, 2e-3)))
            ++bt_hits;
          else
            c.chk(false, "MX away from BT: (" + fmt(si) + "," + fmt(de) + ")");
        }
        c.chk(bt_hits == 2, "sweeps do not end at both BT points");
      }
    }
  } catch (const std::exception& e) {
    C[5].chk(false, std::string("stage threw: ") + e.what());
  }

  // ------------------------------------------- stage: Brusselator equilibria
  json brus_scales = {{"eps", {{"name", "lambda"}, {"factor", 1000.0}}}};
  try {
    auto& c = C[6];
    auto oracle = brus_oracle_hopf(2.0, 5.9);
    c.chk(near(oracle.eps_star, 0.0204545, 1e-6),
          "eps* formula gives " + fmt(oracle.eps_star));
    const auto& o = do_run(json{
        {"output", "brus_ep"},
        {"model",
         {{"name", "brusselator4"},
          {"params", {{"A", 2.0}, {"B", 5.9}, {"eps", 0.018}}},
          {"scales", brus_scales}}},
        {"problem", "ep"},
        {"free", {"eps"}},
        {"start", {{"state", {2.0, 2.95, 2.0, 2.95, 2.0, 2.95, 2.0, 2.95}}}},
        {"columns", {"lambda", "x1", "ustab"}},
        {"bounds", {{"lambda", {10.0, 25.0}}}},
        {"settings",
         {{"h0", 2e-4}, {"h_max", 5e-4}, {"max_steps", 400}}}});
    auto hb = find_ev(o, "HB", [](const Ev&) { return true; });
    c.chk(hb.has_value(), "no HB on the symmetric branch");
    if (hb)
      c.chk(near(evval(o, *hb, "lambda"), 20.455, 1e-2),
            "HB at lambda=" + fmt(evval(o, *hb, "lambda")));
    // Nullspace dimensions of the Hopf system, plain and symmetry-augmented.
    const VectorField& vf = model_registry("brusselator4");
    Vec x(8), p(3);
    x << 2.0, 2.95, 2.0, 2.95, 2.0, 2.95, 2.0, 2.95;
    p[vf.param_index("A")] = 2.0;
    p[vf.param_index("B")] = 5.9;
    p[vf.param_index("eps")] = oracle.eps_star;
    Mat J = vf.jac_x(x, p);
    c.chk(eqv_hopf_nullspace_dim(J, oracle.omega, nullptr) == 3,
          "unaugmented nullspace dim != 3");
    for (const char* s : {"(1 2 4 3)_4", "(1 2)_2(3 4)_1", "(2 3 4)_1"}) {
      auto sym = parse_symmetry(s, 4, 2);
      c.chk(eqv_hopf_nullspace_dim(J, oracle.omega, &sym) == 1,
            std::string("nullspace dim != 1 for ") + s);
    }
  } catch (const std::exception& e) {
    C[6].chk(false, std::string("stage threw: ") + e.what());
  }

  // ------------------------------------------------------- stage: P1 branch
  std::optional<Ev> p1_ust17;
  try {
    auto& c = C[7];
    const auto& o = do_run(json{
        {"output", "p1"},
        {"model", {{"name", "brusselator4"}, {"scales", brus_scales}}},
        {"problem", "po"},
        {"free", {"eps"}},
        {"start", {{"from_hopf", "brus_ep/HB"}}},
        {"symmetry", {{"cycles", "(1 2 4 3)_4"}}},
        {"mesh", {{"L", 24}}},
        {"columns", {"lambda", "po.period", "amplitude"}},
        {"bounds", {{"lambda", {2.0, nullptr}}}},
        {"settings", {{"h0", 0.01}, {"h_max", 0.3}, {"max_steps", 800}}}});
    const auto& pts0 = o.branch.sweeps[0].points;
    c.chk(!pts0.empty() &&
              near(pts0[0].monitor_values[midx(o, "po.period")], 10.125, 0.05),
          "starter period off");
    for (double lam : {19.302, 17.002, 2.6735}) {
      bool hit = find_ev(o, "UST", [&](const Ev& e) {
                   return near(evval(o, e, "lambda"), lam, 0.05);
                 }).has_value();
      c.chk(hit, "UST near lambda=" + fmt(lam) + " missing");
    }
    for (double lam : {17.002, 2.6735}) {
      bool hit = find_ev(o, "BP", [&](const Ev& e) {
                   return near(evval(o, e, "lambda"), lam, 0.05);
                 }).has_value();
      c.chk(hit, "BP near lambda=" + fmt(lam) + " missing");
    }
    p1_ust17 = find_ev(o, "UST", [&](const Ev& e) {
      return near(evval(o, e, "lambda"), 17.002, 0.05);
    });

    // Same branch with the 8 redundant symmetry constraints appended: the
    // lambda ~ 17.002 point keeps its UST event but raises no BP.
    const auto& oc = do_run(json{
        {"output", "p1c"},
        {"model", {{"name", "brusselator4"}, {"scales", brus_scales}}},
        {"problem", "po"},
        {"free", {"eps"}},
        {"start", {{"from_hopf", "brus_ep/HB"}}},
        {"symmetry", {{"cycles", "(1 2 4 3)_4"}, {"times", {0.0}}}},
        {"mesh", {{"L", 24}}},
        {"columns", {"lambda", "po.period", "amplitude"}},
        {"monitors", {{"bp", true}}},
        {"bounds", {{"lambda", {16.0, nullptr}}}},
        {"settings", {{"h0", 0.01}, {"h_max", 0.3}, {"max_steps", 500}}}});
    bool ust17 = find_ev(oc, "UST", [&](const Ev& e) {
                   return near(evval(oc, e, "lambda"), 17.002, 0.05);
                 }).has_value();
    c.chk(ust17, "constrained run: UST near 17.002 missing");
    bool bp17 = find_ev(oc, "BP", [&](const Ev& e) {
                  return near(evval(oc, e, "lambda"), 17.002, 0.2);
                }).has_value();
    c.chk(!bp17, "constrained run still reports a BP near 17.002");
  } catch (const std::exception& e) {
    C[7].chk(false, std::string("stage threw: ") + e.what());
  }

  // ------------------------------------------- stage: (lambda, B) tracking
  try {
    auto& c = C[8];
    c.chk(p1_ust17.has_value(), "no UST source at lambda=17.002");
    if (p1_ust17) {
      const auto& o = do_run(json{
          {"output", "symbreak"},
          {"model", {{"name", "brusselator4"}, {"scales", brus_scales}}},
          {"problem", "symbreak"},
          {"free", {"eps", "B"}},
          {"start", {{"restart", "p1/" + std::to_string(p1_ust17->label)}}},
          {"symmetry", {{"cycles", "(1 2 4 3)_4"}, {"times", {0.0}}}},
          {"columns", {"lambda", "B", "po.period"}},
          {"bounds", {{"B", {5.5, 6.3}}}},
          {"settings", {{"h0", 0.02}, {"h_max", 0.3}, {"max_steps", 500}}}});
      for (auto [lam, B] : {std::pair{15.762, 5.6935}, {17.467, 6.1746}}) {
        bool hit = find_ev(o, "FP", [&](const Ev& e) {
                     return near(evval(o, e, "lambda"), lam, 0.05) &&
                            near(evval(o, e, "B"), B, 0.05);
                   }).has_value();
        c.chk(hit, "symmetry-breaking FP near (" + fmt(lam) + "," + fmt(B) +
                       ") missing");
      }
    }
    const auto& o = do_run(json{
        {"output", "eqvh"},
        {"model", {{"name", "brusselator4"}, {"scales", brus_scales}}},
        {"problem", "eqv_hopf"},
        {"free", {"eps", "B"}},
        {"start", {{"restart", "brus_ep/HB"}}},
        {"symmetry", {{"cycles", "(1 2 4 3)_4"}}},
        {"columns", {"lambda", "B", "k"}},
        {"bounds", {{"lambda", {15.0, nullptr}}}},
        {"settings", {{"h0", 0.01}, {"h_max", 0.1}, {"max_steps", 400}}}});
    auto ep = find_ev(o, "EP", [&](const Ev& e) {
      return near(evval(o, e, "lambda"), 15.0, 1e-2);
    });
    c.chk(ep.has_value(), "equivariant Hopf curve did not reach lambda=15");
    if (ep)
      c.chk(near(evval(o, *ep, "B"), 5.6600, 0.01) &&
                near(evval(o, *ep, "k"), 1.4800, 0.01),
            "at lambda=15: B=" + fmt(evval(o, *ep, "B")) + " k=" +
                fmt(evval(o, *ep, "k")));
    bool mx_ok = false;
    for (const auto& sw : o.branch.sweeps) {
      if (sw.termination != "MX" || sw.points.empty()) continue;
      const Vec& mv = sw.points.back().monitor_values;
      if (near(mv[midx(o, "lambda")], 22.263, 0.05) &&
          near(mv[midx(o, "B")], 5.9796, 0.05) &&
          std::abs(mv[midx(o, "k")]) < 5e-3)
        mx_ok = true;
    }
    c.chk(mx_ok, "no MX near (22.263, 5.9796) with k below 5e-3");
    // The curve stays on the Hopf set eps = (B - 1 - A^2)/44.
    double worst = 0.0;
    const int il = midx(o, "lambda"), ib = midx(o, "B");
    for (const auto& sw : o.branch.sweeps)
      for (const auto& pt : sw.points)
        worst = std::max(worst,
                         std::abs(pt.monitor_values[il] / 1000.0 -
                                  (pt.monitor_values[ib] - 5.0) / 44.0));
    c.chk(worst <= 1e-6, "eps identity violated by " + fmt(worst));
  } catch (const std::exception& e) {
    C[8].chk(false, std::string("stage threw: ") + e.what());
  }

  // ------------------------------------------------ stage: property suite
  try {
    auto& c = C[9];
    // Floquet oracle on the normal-form circle: multipliers {1, e^{-4 pi}}.
    VectorField nf;
    nf.n_x = 2;
    nf.n_p = 1;
    nf.state_names = {"x", "y"};
    nf.param_names = {"p"};
    const double tp = 2.0 * M_PI;
    nf.eval_fn = [tp](const Vec& x, const Vec&) {
      double r2 = 1.0 - x[0] * x[0] - x[1] * x[1];
      Vec f(2);
      f << -tp * x[1] + tp * x[0] * r2, tp * x[0] + tp * x[1] * r2;
      return f;
    };
    Mesh mesh = make_mesh(40, 4);
    POProblem po(nf, mesh, Vec::Zero(1), {0});
    Vec taus = base_taus(mesh);
    Vec X(2 * taus.size());
    for (int i = 0; i < taus.size(); ++i) {
      X[2 * i] = std::cos(tp * taus[i]);
      X[2 * i + 1] = std::sin(tp * taus[i]);
    }
    Vec u = po.pack(X, 1.0, Vec::Zero(1));
    auto fd = floquet(po, u);
    c.chk(std::abs(fd.log_mod[fd.trivial_index]) < 1e-8 &&
              std::abs(fd.phase[fd.trivial_index]) < 1e-8,
          "trivial multiplier off");
    int other = 1 - fd.trivial_index;
    c.chk(std::abs(fd.log_mod[other] + 4.0 * M_PI) <= 1e-8 * 4.0 * M_PI,
          "nontrivial multiplier off e^{-4 pi}");

    // Analytic Jacobians against finite differences.
    {
      const VectorField& cstr = model_registry("cstr");
      Vec x(2), p(4);
      x << 0.7, 2.3;
      p[cstr.param_index("be")] = 0.05;
      p[cstr.param_index("ga")] = 0.1;
      p[cstr.param_index("de")] = 9.0 / kE2;
      p[cstr.param_index("si")] = 20.0 / kE2;
      c.chk(max_jac_fd_err(cstr, x, p) <= 1e-6, "cstr Jacobian vs FD");
      const VectorField& brus = model_registry("brusselator4");
      Vec xb(8), pb(3);
      xb << 1.7, 3.1, 2.2, 2.6, 1.9, 3.4, 2.4, 2.8;
      pb[brus.param_index("A")] = 2.0;
      pb[brus.param_index("B")] = 5.9;
      pb[brus.param_index("eps")] = 0.017;
      c.chk(max_jac_fd_err(brus, xb, pb) <= 1e-6, "brusselator Jacobian vs FD");
      // Equivariance of the coupled cells under the three symmetries.
      for (const char* s : {"(1 2 4 3)_4", "(1 2)_2(3 4)_1", "(2 3 4)_1"}) {
        auto sym = parse_symmetry(s, 4, 2);
        c.chk(check_equivariance(brus, sym.perm_matrix_full(), pb) <= 1e-13,
              std::string("equivariance fails for ") + s);
      }
    }

    // Collocation residual order on the harmonic oscillator.
    {
      VectorField ho;
      ho.n_x = 2;
      ho.n_p = 1;
      ho.state_names = {"x", "y"};
      ho.param_names = {"p"};
      ho.eval_fn = [tp](const Vec& x, const Vec&) {
        Vec f(2);
        f << tp * x[1], -tp * x[0];
        return f;
      };
      auto resid = [&](int L) {
        Mesh m = make_mesh(L, 4);
        POProblem prob(ho, m, Vec::Zero(1), {0});
        Vec t = base_taus(m);
        Vec Xc(2 * t.size());
        for (int i = 0; i < t.size(); ++i) {
          Xc[2 * i] = std::cos(tp * t[i]);
          Xc[2 * i + 1] = -std::sin(tp * t[i]);
        }
        Vec uu = prob.pack(Xc, 1.0, Vec::Zero(1));
        return prob.residual(uu).cwiseAbs().maxCoeff();
      };
      double slope = std::log2(resid(10) / resid(40)) / 2.0;
      c.chk(slope >= 3.9, "collocation order " + fmt(slope));
    }

    // Restart determinism: the same restart run twice gives identical tables.
    {
      json rs = {
          {"output", "det_a"},
          {"model", {{"name", "cstr"}}},
          {"problem", "ep"},
          {"free", {"si", "de", "y=2"}},
          {"start", {{"restart", "cstr_ep/SN"}}},
          {"columns", {"x", "si", "de"}},
          {"settings", {{"h0", 0.02}, {"h_max", 0.05}, {"max_steps", 120}}}};
      const auto& a = do_run(rs);
      rs["output"] = "det_b";
      const auto& b = do_run(rs);
      std::string ta = a.table, tb = b.table;
      // Tables differ only in content, not run identity; compare verbatim.
      c.chk(ta == tb, "restart runs differ");
    }
  } catch (const std::exception& e) {
    C[9].chk(false, std::string("stage threw: ") + e.what());
  }

  int failures = 0;
  for (const auto& c : crits) {
    std::printf("criterion %d: %s%s%s\n", c.id, c.ok ? "PASS" : "FAIL",
                c.note.empty() ? "" : " -- ", c.note.c_str());
    if (!c.ok) ++failures;
  }
  return failures;
}
