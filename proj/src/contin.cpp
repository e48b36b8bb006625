#include "bifkit/contin.hpp"

#include <Eigen/SVD>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace bifkit {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

SpMat bordered_matrix(const SpMat& J, const Vec& c) {
  const int n = static_cast<int>(J.cols());
  SpMat A(J.rows() + 1, n);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(J.nonZeros() + n);
  for (int k = 0; k < J.outerSize(); ++k)
    for (SpMat::InnerIterator it(J, k); it; ++it)
      trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()),
                         it.value());
  for (int i = 0; i < n; ++i)
    if (c[i] != 0.0) trips.emplace_back(static_cast<int>(J.rows()), i, c[i]);
  A.setFromTriplets(trips.begin(), trips.end());
  return A;
}

bool factorize(Eigen::SparseLU<SpMat>& lu, const SpMat& A) {
  lu.compute(A);
  return lu.info() == Eigen::Success;
}

double eval_monitor(const Monitor& m, const Vec& u, const Vec& t) {
  try {
    double v = m.eval_ut ? m.eval_ut(u, t) : m.eval(u);
    return std::isfinite(v) ? v : kNaN;
  } catch (...) {
    return kNaN;
  }
}

Vec eval_all(const std::vector<Monitor>& monitors, const Vec& u, const Vec& t) {
  Vec v(static_cast<int>(monitors.size()));
  for (size_t i = 0; i < monitors.size(); ++i)
    v[static_cast<int>(i)] = eval_monitor(monitors[i], u, t);
  return v;
}

struct ProbeResult {
  Vec u;
  Vec t;
};

// Correct the convex combination of bracket endpoints back to the manifold
// on the hyperplane normal to the bracket secant.
std::optional<ProbeResult> probe_bracket(const ZeroProblem& problem,
                                         const Vec& ua, const Vec& ta,
                                         const Vec& ub, double alpha,
                                         const ContinuationSettings& settings) {
  Vec pred = (1.0 - alpha) * ua + alpha * ub;
  Vec c = (ub - ua).normalized();
  auto corrected = newton_correct(problem, pred, c, c.dot(pred), settings);
  if (!corrected) return std::nullopt;
  ProbeResult pr;
  pr.u = *corrected;
  auto tn = tangent_vector(problem, pr.u, &ta, settings.seed);
  pr.t = tn ? *tn : c;
  return pr;
}

}  // namespace

std::optional<Vec> newton_correct(const ZeroProblem& problem, const Vec& u0,
                                  const Vec& c, double d,
                                  const ContinuationSettings& settings,
                                  int* iters) {
  if (problem.deficit() != 1) throw std::logic_error("corrector expects deficit 1");
  Vec u = u0;
  Eigen::SparseLU<SpMat> lu;
  for (int it = 0; it <= settings.max_newton; ++it) {
    Vec r;
    try {
      r = problem.residual(u);
    } catch (...) {
      return std::nullopt;
    }
    const double g = c.dot(u) - d;
    if (!r.allFinite() || !std::isfinite(g)) return std::nullopt;
    if (r.lpNorm<Eigen::Infinity>() <= settings.corrector_tol &&
        std::abs(g) <= settings.corrector_tol) {
      if (iters) *iters = it;
      return u;
    }
    if (it == settings.max_newton) break;
    SpMat A;
    try {
      A = bordered_matrix(problem.jacobian(u), c);
    } catch (...) {
      return std::nullopt;
    }
    if (!factorize(lu, A)) return std::nullopt;
    Vec rhs(r.size() + 1);
    rhs << r, g;
    Vec du = lu.solve(rhs);
    if (!du.allFinite()) return std::nullopt;
    u -= du;
  }
  return std::nullopt;
}

std::optional<Vec> tangent_vector(const ZeroProblem& problem, const Vec& u,
                                  const Vec* prev, unsigned seed) {
  const int n = problem.num_unknowns();
  SpMat J;
  try {
    J = problem.jacobian(u);
  } catch (...) {
    return std::nullopt;
  }
  Vec rhs = Vec::Zero(n);
  rhs[n - 1] = 1.0;
  Eigen::SparseLU<SpMat> lu;
  auto try_border = [&](const Vec& b) -> std::optional<Vec> {
    if (!factorize(lu, bordered_matrix(J, b))) return std::nullopt;
    Vec t = lu.solve(rhs);
    if (!t.allFinite()) return std::nullopt;
    const double nrm = t.norm();
    if (nrm < 1e-13 || nrm > 1e13) return std::nullopt;
    return Vec(t / nrm);
  };
  std::optional<Vec> t;
  if (prev && prev->size() == n) t = try_border(*prev);
  if (!t) {
    std::mt19937 rng(seed);
    std::normal_distribution<double> nd;
    for (int attempt = 0; attempt < 3 && !t; ++attempt) {
      Vec b(n);
      for (int i = 0; i < n; ++i) b[i] = nd(rng);
      t = try_border(b.normalized());
    }
  }
  if (!t) return std::nullopt;
  if (prev && prev->size() == n && prev->dot(*t) < 0.0) *t = -*t;
  return t;
}

double branch_point_test(const ZeroProblem& problem, const Vec& u,
                         const Vec& t) {
  SpMat A = bordered_matrix(problem.jacobian(u), t);
  Eigen::SparseLU<SpMat> lu;
  if (!factorize(lu, A)) return 0.0;
  const double sign = lu.signDeterminant();
  const double logdet = lu.logAbsDeterminant();
  return sign * std::exp(logdet / static_cast<double>(A.rows()));
}

Vec switch_branch(const ZeroProblem& problem, const Vec& u_bp,
                  const Vec& incoming_tangent, double rank_tol) {
  Mat J = Mat(problem.jacobian(u_bp));
  Eigen::BDCSVD<Mat> svd(J, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  const double smax = sv.size() ? sv[0] : 0.0;
  int rank = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv[i] > rank_tol * std::max(smax, 1.0)) ++rank;
  const int nullity = static_cast<int>(J.cols()) - rank;
  if (nullity != 2)
    throw std::runtime_error("switch_branch: nullspace dimension " +
                             std::to_string(nullity) + ", expected 2");
  Mat N = svd.matrixV().rightCols(2);
  // Unit vector in span(N) orthogonal to the incoming tangent.
  Vec a = N.transpose() * incoming_tangent;
  Vec coeff(2);
  if (a.norm() < 1e-12) {
    coeff << 1.0, 0.0;  // tangent not in the nullspace; any direction works
  } else {
    coeff << -a[1], a[0];
    coeff.normalize();
  }
  Vec alt = N * coeff;
  return alt.normalized();
}

// ---------------------------------------------------------------------------
// Event localization

std::optional<EventRecord> localize_event(ZeroProblem& problem,
                                          const Monitor& monitor,
                                          const AcceptedPoint& a,
                                          const AcceptedPoint& b,
                                          const std::vector<Monitor>& all,
                                          const ContinuationSettings& settings,
                                          double target, double* alpha_out) {
  const double seglen = (b.u - a.u).norm();
  auto make_record = [&](const ProbeResult& pr, double alpha) {
    EventRecord ev;
    ev.label = monitor.label_fn ? monitor.label_fn(pr.u) : monitor.event_label;
    ev.u = pr.u;
    ev.tangent = pr.t;
    ev.monitor_values = eval_all(all, pr.u, pr.t);
    ev.arclength = a.arclength + alpha * seglen;
    ev.state = problem.save_state();
    if (alpha_out) *alpha_out = alpha;
    return ev;
  };

  if (monitor.kind == MonitorKind::Discrete) {
    double lo = 0.0, hi = 1.0;
    ProbeResult hi_pr{b.u, b.tangent};
    double vlo = eval_monitor(monitor, a.u, a.tangent);
    const double loc_tol = std::max(settings.event_tol, 1e-9);
    for (int it = 0; it < 60 && (hi - lo) * seglen > loc_tol; ++it) {
      const double mid = 0.5 * (lo + hi);
      auto pr = probe_bracket(problem, a.u, a.tangent, b.u, mid, settings);
      if (!pr) return std::nullopt;
      const double v = eval_monitor(monitor, pr->u, pr->t);
      if (!std::isfinite(v)) return std::nullopt;
      if (std::lround(v) == std::lround(vlo)) {
        lo = mid;
      } else {
        hi = mid;
        hi_pr = *pr;
      }
    }
    return make_record(hi_pr, hi);
  }

  // Regular / UserZero / Threshold: safeguarded secant on m(alpha) - target.
  double lo = 0.0, hi = 1.0;
  double flo = eval_monitor(monitor, a.u, a.tangent) - target;
  double fhi = eval_monitor(monitor, b.u, b.tangent) - target;
  if (!std::isfinite(flo) || !std::isfinite(fhi) || flo * fhi > 0.0)
    return std::nullopt;
  const double fscale = std::max({1.0, std::abs(flo), std::abs(fhi)});
  ProbeResult best{b.u, b.tangent};
  double best_alpha = 1.0, best_f = fhi;
  for (int it = 0; it < 80; ++it) {
    double alpha;
    if (std::abs(fhi - flo) > 1e-300) {
      alpha = lo - flo * (hi - lo) / (fhi - flo);
      const double pad = 0.05 * (hi - lo);
      if (alpha < lo + pad || alpha > hi - pad) alpha = 0.5 * (lo + hi);
    } else {
      alpha = 0.5 * (lo + hi);
    }
    auto pr = probe_bracket(problem, a.u, a.tangent, b.u, alpha, settings);
    if (!pr) return std::nullopt;
    const double f = eval_monitor(monitor, pr->u, pr->t) - target;
    if (!std::isfinite(f)) return std::nullopt;
    if (std::abs(f) < std::abs(best_f)) {
      best = *pr;
      best_alpha = alpha;
      best_f = f;
    }
    if (std::abs(f) <= 1e-10 * fscale ||
        (hi - lo) * seglen <= std::max(settings.event_tol, 1e-13))
      break;
    if (f * flo < 0.0) {
      hi = alpha;
      fhi = f;
    } else {
      lo = alpha;
      flo = f;
    }
  }
  return make_record(best, best_alpha);
}

// ---------------------------------------------------------------------------
// Continuation driver

namespace {

struct Candidate {
  size_t monitor_idx;
  double target;        // for UserZero/Threshold; 0 for Regular/Discrete
  double alpha_guess;   // linear-interpolation estimate, used for ordering
};

std::vector<Candidate> scan_events(const std::vector<Monitor>& monitors,
                                   const Vec& mv0, const Vec& mv1) {
  std::vector<Candidate> cands;
  for (size_t i = 0; i < monitors.size(); ++i) {
    const Monitor& m = monitors[i];
    const double v0 = mv0[static_cast<int>(i)], v1 = mv1[static_cast<int>(i)];
    if (m.kind == MonitorKind::Column) continue;
    if (m.event_label.empty() && !m.label_fn && !m.stop_on_event)
      continue;  // recorded column without event semantics
    if (!std::isfinite(v0) || !std::isfinite(v1)) continue;
    auto cross = [&](double target) {
      if ((v0 - target) * (v1 - target) < 0.0) {
        const double g = (target - v0) / (v1 - v0);
        cands.push_back({i, target, g});
      }
    };
    switch (m.kind) {
      case MonitorKind::Regular:
        cross(0.0);
        break;
      case MonitorKind::Discrete:
        if (std::lround(v0) != std::lround(v1)) cands.push_back({i, 0.0, 0.5});
        break;
      case MonitorKind::UserZero:
      case MonitorKind::Threshold:
        for (double tgt : m.targets) cross(tgt);
        break;
      default:
        break;
    }
  }
  return cands;
}

}  // namespace

Branch continue_branch(ZeroProblem& problem, const Vec& u0,
                       const ContinuationSettings& settings,
                       const std::vector<Monitor>& monitors,
                       const Vec* tangent_hint) {
  Branch branch;
  for (const auto& m : monitors) branch.monitor_names.push_back(m.name);

  // Initial correction on the hyperplane orthogonal to the tangent guess.
  auto tguess = tangent_vector(problem, u0, tangent_hint, settings.seed);
  if (!tguess) throw std::runtime_error("continuation: singular Jacobian at start");
  auto ustart = newton_correct(problem, u0, *tguess, tguess->dot(u0), settings);
  if (!ustart) throw std::runtime_error("continuation: initial correction failed");
  auto tstart = tangent_vector(problem, *ustart, &*tguess, settings.seed);
  if (!tstart) tstart = tguess;
  if (tangent_hint && tangent_hint->size() == tstart->size() &&
      tangent_hint->dot(*tstart) < 0.0)
    *tstart = -*tstart;

  const std::any state0 = problem.save_state();

  std::vector<int> dirs;
  if (settings.direction >= 0) dirs.push_back(+1);
  if (settings.direction <= 0) dirs.push_back(-1);

  for (int dir : dirs) {
    problem.restore_state(state0);
    SweepResult sweep;
    Vec u = *ustart;
    Vec t = static_cast<double>(dir) * (*tstart);
    Vec mv = eval_all(monitors, u, t);
    sweep.points.push_back({u, t, mv, 0.0, 0.0});
    sweep.events.push_back({"EP", u, t, mv, 0, 0.0, problem.save_state()});

    double h = settings.h0;
    double s = 0.0;
    bool done = false;
    std::string termination = "EP";

    auto record_terminal = [&](const std::string& label) {
      const AcceptedPoint& last = sweep.points.back();
      sweep.events.push_back({label, last.u, last.tangent, last.monitor_values,
                              0, last.arclength, problem.save_state()});
      termination = label;
      done = true;
    };

    for (int step = 0; step < settings.max_steps && !done; ++step) {
      Vec pred = u + h * t;
      int iters = 0;
      auto corrected =
          newton_correct(problem, pred, t, t.dot(pred), settings, &iters);
      if (!corrected) {
        if (h <= settings.h_min * (1.0 + 1e-12)) {
          record_terminal("MX");
          break;
        }
        h = std::max(0.5 * h, settings.h_min);
        continue;
      }
      Vec u_new = *corrected;
      Vec t_new;
      auto tn = tangent_vector(problem, u_new, &t, settings.seed);
      if (tn) {
        t_new = *tn;
      } else {
        t_new = (u_new - u).normalized();  // near-singular point: secant
      }
      Vec mv_new = eval_all(monitors, u_new, t_new);

      // Flag fresh monitor dropouts once.
      for (size_t i = 0; i < monitors.size(); ++i) {
        const int ii = static_cast<int>(i);
        if (std::isfinite(mv[ii]) && !std::isfinite(mv_new[ii]))
          sweep.warnings.push_back("monitor " + monitors[i].name +
                                   " became non-finite; events suppressed");
      }

      AcceptedPoint pa{u, t, mv, s, h};
      const double chord = (u_new - u).norm();
      AcceptedPoint pb{u_new, t_new, mv_new, s + chord, h};

      auto cands = scan_events(monitors, mv, mv_new);
      std::vector<std::pair<double, EventRecord>> located;
      std::optional<std::pair<double, EventRecord>> stopper;
      for (const auto& cand : cands) {
        const Monitor& m = monitors[cand.monitor_idx];
        double alpha = cand.alpha_guess;
        auto ev = localize_event(problem, m, pa, pb, monitors, settings,
                                 cand.target, &alpha);
        if (!ev) {
          sweep.warnings.push_back("bracket lost for monitor " + m.name);
          continue;
        }
        if (m.stop_on_event) {
          if (!stopper || alpha < stopper->first) stopper = {alpha, *ev};
        } else {
          located.emplace_back(alpha, *ev);
        }
      }
      std::sort(located.begin(), located.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });
      for (auto& [alpha, ev] : located) {
        if (stopper && alpha > stopper->first) break;
        if (ev.label.empty()) continue;  // label_fn declined the crossing
        ev.arclength = s + alpha * chord;
        sweep.events.push_back(std::move(ev));
      }
      if (stopper) {
        // Truncate at the located stop point and finish this sweep.
        EventRecord& ev = stopper->second;
        ev.arclength = s + stopper->first * chord;
        Vec mv_stop = ev.monitor_values;
        sweep.points.push_back(
            {ev.u, ev.tangent, mv_stop, ev.arclength, stopper->first * chord});
        sweep.events.push_back(ev);
        termination = "EP";
        done = true;
        break;
      }

      s += chord;
      sweep.points.push_back({u_new, t_new, mv_new, s, h});

      // Loop closure on closed solution curves.
      if (s > 3.0 * settings.h0 && u_new.size() == ustart->size() &&
          (u_new - *ustart).norm() < 0.5 * std::max(h, settings.h0) &&
          t_new.dot(static_cast<double>(dir) * (*tstart)) > 0.5) {
        record_terminal("EP");
        break;
      }

      // Step-size control.
      if (iters <= 3)
        h = std::min(1.3 * h, settings.h_max);
      else
        h = std::max(0.5 * h, settings.h_min);

      // Adaptation hook (phase references, meshes, slack bases).
      const Eigen::Index old_size = u_new.size();
      Vec t_mapped = t_new;
      bool ok;
      try {
        ok = problem.update(u_new, &t_mapped);
      } catch (...) {
        ok = false;
      }
      if (!ok) {
        record_terminal("MX");
        break;
      }
      if (u_new.size() != old_size) {
        t_new = t_mapped.normalized();
        auto rc =
            newton_correct(problem, u_new, t_new, t_new.dot(u_new), settings);
        if (!rc) {
          record_terminal("MX");
          break;
        }
        u_new = *rc;
        auto tn2 = tangent_vector(problem, u_new, &t_new, settings.seed);
        if (tn2) t_new = *tn2;
        mv_new = eval_all(monitors, u_new, t_new);
        sweep.points.back() = {u_new, t_new, mv_new, s, h};
      }

      u = u_new;
      t = t_new;
      mv = mv_new;
    }

    if (!done) {
      const AcceptedPoint& last = sweep.points.back();
      sweep.events.push_back({"EP", last.u, last.tangent, last.monitor_values,
                              0, last.arclength, problem.save_state()});
      termination = "EP";
    }
    sweep.termination = termination;
    const int sweep_idx = static_cast<int>(branch.sweeps.size());
    for (auto& ev : sweep.events) ev.sweep = sweep_idx;
    branch.sweeps.push_back(std::move(sweep));
  }
  problem.restore_state(state0);
  return branch;
}

// ---------------------------------------------------------------------------
// Redundant-constraint regularization

RegularizedProblem::RegularizedProblem(std::shared_ptr<ZeroProblem> inner,
                                       std::vector<ExtraConstraint> extras)
    : inner_(std::move(inner)), extras_(std::move(extras)) {}

int RegularizedProblem::num_unknowns() const {
  return inner_->num_unknowns() + static_cast<int>(extras_.size());
}

int RegularizedProblem::num_residuals() const {
  return inner_->num_residuals() + static_cast<int>(extras_.size());
}

void RegularizedProblem::refresh_slack_basis(const Vec& v) const {
  const int m = static_cast<int>(extras_.size());
  const int n_r = num_residuals();
  Mat Phi(n_r, inner_->num_unknowns());
  Phi.topRows(inner_->num_residuals()) = Mat(inner_->jacobian(v));
  for (int i = 0; i < m; ++i) {
    const auto& fn = extras_[i].value;
    Phi.row(inner_->num_residuals() + i) =
        fd_jacobian([&fn](const Vec& w) { return Vec::Constant(1, fn(w)); }, v, 1)
            .row(0);
  }
  // Orthonormal basis complementing the Jacobian range; column pivoting puts
  // the weakest range direction into the last retained column so the span
  // stays complete when the rank drops by one at symmetry-breaking points.
  Eigen::ColPivHouseholderQR<Mat> qr(Phi);
  Mat Q = qr.householderQ() * Mat::Identity(n_r, n_r);
  S_ = Q.rightCols(m);
}

Vec RegularizedProblem::residual(const Vec& u) const {
  const int n_in = inner_->num_unknowns();
  const int m = static_cast<int>(extras_.size());
  Vec v = u.head(n_in);
  if (S_.size() == 0) refresh_slack_basis(v);
  Vec r(num_residuals());
  r.head(inner_->num_residuals()) = inner_->residual(v);
  for (int i = 0; i < m; ++i)
    r[inner_->num_residuals() + i] = extras_[i].value(v);
  r += S_ * u.tail(m);
  return r;
}

SpMat RegularizedProblem::jacobian(const Vec& u) const {
  const int n_in = inner_->num_unknowns();
  const int m = static_cast<int>(extras_.size());
  Vec v = u.head(n_in);
  if (S_.size() == 0) refresh_slack_basis(v);
  SpMat Jin = inner_->jacobian(v);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(Jin.nonZeros() + m * n_in + S_.size());
  for (int k = 0; k < Jin.outerSize(); ++k)
    for (SpMat::InnerIterator it(Jin, k); it; ++it)
      trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()),
                         it.value());
  for (int i = 0; i < m; ++i) {
    const auto& fn = extras_[i].value;
    Mat row = fd_jacobian(
        [&fn](const Vec& w) { return Vec::Constant(1, fn(w)); }, v, 1);
    for (int j = 0; j < n_in; ++j)
      if (row(0, j) != 0.0)
        trips.emplace_back(inner_->num_residuals() + i, j, row(0, j));
  }
  for (int i = 0; i < num_residuals(); ++i)
    for (int j = 0; j < m; ++j)
      if (S_(i, j) != 0.0) trips.emplace_back(i, n_in + j, S_(i, j));
  SpMat J(num_residuals(), num_unknowns());
  J.setFromTriplets(trips.begin(), trips.end());
  return J;
}

bool RegularizedProblem::update(Vec& u, Vec* tangent) {
  const int n_in = inner_->num_unknowns();
  const int m = static_cast<int>(extras_.size());
  Vec v = u.head(n_in);
  Vec w = u.tail(m);
  Vec tv;
  if (tangent && tangent->size() == u.size()) tv = tangent->head(n_in);
  bool ok = inner_->update(v, tv.size() ? &tv : nullptr);
  if (!ok) return false;
  if (v.size() != n_in) {
    // Inner resize (mesh adaptation): rebuild the augmented vector.
    Vec nu(v.size() + m);
    nu << v, w;
    u = nu;
    if (tangent && tv.size() == v.size()) {
      Vec nt(v.size() + m);
      nt << tv, Vec::Zero(m);
      *tangent = nt;
    }
    refresh_slack_basis(v);
    return true;
  }
  u.head(n_in) = v;
  refresh_slack_basis(v);
  return true;
}

std::shared_ptr<ZeroProblem> regularize_redundant(
    std::shared_ptr<ZeroProblem> inner, std::vector<ExtraConstraint> extras) {
  if (extras.empty()) return inner;
  return std::make_shared<RegularizedProblem>(std::move(inner),
                                              std::move(extras));
}

Monitor wrap_inner_monitor(Monitor m, int n_slack) {
  if (m.eval) {
    auto inner_eval = m.eval;
    m.eval = [inner_eval, n_slack](const Vec& u) {
      return inner_eval(u.head(u.size() - n_slack));
    };
  }
  if (m.eval_ut) {
    auto inner_eval = m.eval_ut;
    m.eval_ut = [inner_eval, n_slack](const Vec& u, const Vec& t) {
      return inner_eval(u.head(u.size() - n_slack),
                        t.head(t.size() - n_slack));
    };
  }
  if (m.label_fn) {
    auto inner_label = m.label_fn;
    m.label_fn = [inner_label, n_slack](const Vec& u) {
      return inner_label(u.head(u.size() - n_slack));
    };
  }
  return m;
}

Monitor fold_monitor(std::string name, int index, std::string label) {
  Monitor m;
  m.name = std::move(name);
  m.kind = MonitorKind::Regular;
  m.event_label = std::move(label);
  m.eval_ut = [index](const Vec&, const Vec& t) { return t[index]; };
  return m;
}

Monitor bp_monitor(std::shared_ptr<ZeroProblem> problem, std::string label) {
  Monitor m;
  m.name = "bp_test";
  m.kind = MonitorKind::Regular;
  m.event_label = std::move(label);
  m.eval_ut = [problem](const Vec& u, const Vec& t) {
    return branch_point_test(*problem, u, t);
  };
  return m;
}

}  // namespace bifkit
