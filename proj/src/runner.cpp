#include "bifkit/runner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

#include "bifkit/archive.hpp"
#include "bifkit/eqbif.hpp"
#include "bifkit/pobif.hpp"
#include "bifkit/sym.hpp"
#include "bifkit/vectorfield.hpp"

namespace bifkit {

using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Strict JSON helpers

void check_keys(const json& j, const std::string& where,
                const std::set<std::string>& allowed) {
  if (!j.is_object()) throw SchemaError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw SchemaError(where + ": unknown key \"" + it.key() + "\"");
}

double num(const json& j, const std::string& where) {
  if (!j.is_number()) throw SchemaError(where + ": expected a number");
  return j.get<double>();
}

std::string str(const json& j, const std::string& where) {
  if (!j.is_string()) throw SchemaError(where + ": expected a string");
  return j.get<std::string>();
}

std::vector<double> num_array(const json& j, const std::string& where) {
  if (!j.is_array()) throw SchemaError(where + ": expected an array");
  std::vector<double> out;
  for (const auto& e : j) out.push_back(num(e, where));
  return out;
}

json vec_to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vec json_to_vec(const json& j, const std::string& where) {
  auto v = num_array(j, where);
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

bool is_po_kind(const std::string& p) {
  return p == "po" || p == "po_fixT" || p == "po_sn" || p == "po_pd" ||
         p == "po_tr" || p == "symbreak";
}

POKind po_kind_of(const std::string& p) {
  if (p == "po_sn" || p == "symbreak") return POKind::sn;
  if (p == "po_pd") return POKind::pd;
  if (p == "po_tr") return POKind::tr;
  return POKind::plain;
}

int required_deficit_free(const std::string& p, int n_pins) {
  if (p == "ep") return 1 + n_pins;
  if (p == "po") return 1;
  if (p == "dh") return 3;
  return 2;  // sn hopf po_fixT po_sn po_pd po_tr eqv_hopf symbreak
}

// ---------------------------------------------------------------------------
// Archived solution files

struct SolData {
  int label = 0;
  std::string type, problem, model, symmetry;
  int sym_cells = 0;
  std::map<std::string, double> params;  // full, at the point
  std::vector<std::string> free_names;
  std::vector<std::pair<std::string, double>> pins;
  Vec u, tangent;
  std::optional<double> fixed_T;
  int mesh_ndeg = 4;
  Vec mesh_boundaries, phi;
  double cref = 0.0;
  bool has_mesh = false;
};

json sol_to_json(const SolData& s) {
  json j;
  j["label"] = s.label;
  j["type"] = s.type;
  j["problem"] = s.problem;
  j["model"] = s.model;
  j["params"] = s.params;
  j["free"] = s.free_names;
  json pins = json::array();
  for (const auto& [n, v] : s.pins) pins.push_back(json::array({n, v}));
  j["pins"] = pins;
  if (!s.symmetry.empty()) {
    j["symmetry"] = s.symmetry;
    j["sym_cells"] = s.sym_cells;
  }
  j["u"] = vec_to_json(s.u);
  j["tangent"] = vec_to_json(s.tangent);
  if (s.fixed_T) j["fixed_T"] = *s.fixed_T;
  if (s.has_mesh) {
    j["mesh"] = {{"ndeg", s.mesh_ndeg},
                 {"boundaries", vec_to_json(s.mesh_boundaries)},
                 {"phi", vec_to_json(s.phi)},
                 {"cref", s.cref}};
  }
  return j;
}

SolData sol_from_json(const json& j) {
  SolData s;
  s.label = j.at("label").get<int>();
  s.type = j.at("type").get<std::string>();
  s.problem = j.at("problem").get<std::string>();
  s.model = j.at("model").get<std::string>();
  s.params = j.at("params").get<std::map<std::string, double>>();
  s.free_names = j.at("free").get<std::vector<std::string>>();
  for (const auto& p : j.at("pins"))
    s.pins.emplace_back(p.at(0).get<std::string>(), p.at(1).get<double>());
  if (j.contains("symmetry")) {
    s.symmetry = j["symmetry"].get<std::string>();
    s.sym_cells = j.value("sym_cells", 0);
  }
  s.u = json_to_vec(j.at("u"), "sol.u");
  s.tangent = json_to_vec(j.at("tangent"), "sol.tangent");
  if (j.contains("fixed_T")) s.fixed_T = j["fixed_T"].get<double>();
  if (j.contains("mesh")) {
    s.has_mesh = true;
    s.mesh_ndeg = j["mesh"].at("ndeg").get<int>();
    s.mesh_boundaries = json_to_vec(j["mesh"].at("boundaries"), "mesh");
    s.phi = json_to_vec(j["mesh"].at("phi"), "mesh.phi");
    s.cref = j["mesh"].at("cref").get<double>();
  }
  return s;
}

json read_json_file(const std::filesystem::path& p) {
  std::ifstream f(p);
  if (!f) throw std::runtime_error("cannot open " + p.string());
  json j;
  f >> j;
  return j;
}

/// Resolves "run-id/sel" where sel is a label number, a TYPE, or TYPE:k.
SolData load_solution(const std::filesystem::path& root,
                      const std::string& ref) {
  auto slash = ref.find('/');
  if (slash == std::string::npos)
    throw SchemaError("restart reference \"" + ref + "\": expected run-id/label");
  const std::string run = ref.substr(0, slash);
  std::string sel = ref.substr(slash + 1);
  const auto dir = root / run;
  if (!std::filesystem::exists(dir / "branch.json"))
    throw std::runtime_error("no archive at " + dir.string());

  int label = -1;
  if (!sel.empty() && std::isdigit(static_cast<unsigned char>(sel[0]))) {
    label = std::stoi(sel);
  } else {
    int want = 1;
    auto colon = sel.find(':');
    if (colon != std::string::npos) {
      want = std::stoi(sel.substr(colon + 1));
      sel = sel.substr(0, colon);
    }
    const json branch = read_json_file(dir / "branch.json");
    int seen = 0;
    for (const auto& sweep : branch.at("sweeps"))
      for (const auto& ev : sweep.at("events"))
        if (ev.at("type").get<std::string>() == sel && ++seen == want)
          label = ev.at("label").get<int>();
    if (label < 0)
      throw std::runtime_error("label " + sel + " not found in " + run);
  }
  const auto file = dir / ("sol_" + std::to_string(label) + ".json");
  if (!std::filesystem::exists(file))
    throw std::runtime_error("missing " + file.string());
  return sol_from_json(read_json_file(file));
}

// ---------------------------------------------------------------------------
// Problem reconstruction from archived metadata

std::vector<int> param_indices(const VectorField& vf,
                               const std::vector<std::string>& names) {
  std::vector<int> idx;
  for (const auto& n : names) {
    int i = vf.param_index(n);
    if (i < 0) throw SchemaError("unknown parameter \"" + n + "\"");
    idx.push_back(i);
  }
  return idx;
}

Vec full_params(const VectorField& vf, const std::map<std::string, double>& m,
                const std::map<std::string, double>* base = nullptr) {
  for (const auto& [n, v] : m)
    if (vf.param_index(n) < 0)
      throw SchemaError("unknown parameter \"" + n + "\"");
  Vec p(vf.n_p);
  for (int i = 0; i < vf.n_p; ++i) {
    const std::string& name = vf.param_names[i];
    auto it = m.find(name);
    if (it != m.end()) {
      p[i] = it->second;
    } else if (base && base->count(name)) {
      p[i] = base->at(name);
    } else {
      throw SchemaError("parameter \"" + name + "\" has no value");
    }
  }
  return p;
}

struct SourceCtx {
  std::string kind;  // inner kind: ep sn hopf po
  std::shared_ptr<EpProblem> ep;
  std::shared_ptr<SnProblem> sn;
  std::shared_ptr<HopfProblem> hopf;
  std::shared_ptr<POProblem> po;
  Vec u;
};

SourceCtx build_source(const SolData& sd) {
  SourceCtx src;
  const VectorField& vf = model_registry(sd.model);
  Vec p0 = full_params(vf, sd.params);
  auto free = param_indices(vf, sd.free_names);
  std::vector<std::pair<int, double>> pins;
  for (const auto& [n, v] : sd.pins) pins.emplace_back(vf.state_index(n), v);

  const std::string& p = sd.problem;
  if (p == "ep") {
    src.kind = "ep";
    src.ep = std::make_shared<EpProblem>(vf, p0, free, pins);
  } else if (p == "sn") {
    src.kind = "sn";
    src.sn = std::make_shared<SnProblem>(vf, p0, free);
  } else if (p == "hopf" || p == "dh" || p == "eqv_hopf") {
    src.kind = "hopf";
    src.hopf = std::make_shared<HopfProblem>(vf, p0, free);
  } else if (is_po_kind(p)) {
    src.kind = "po";
    if (!sd.has_mesh)
      throw std::runtime_error("archived orbit is missing its mesh");
    POOptions opts;
    opts.kind = po_kind_of(p);
    opts.fixed_T = sd.fixed_T;
    Mesh mesh = make_mesh(sd.mesh_boundaries, sd.mesh_ndeg);
    src.po = std::make_shared<POProblem>(vf, mesh, p0, free, opts);
    src.po->restore_state(
        std::make_tuple(sd.mesh_boundaries, sd.phi, sd.cref));
  } else {
    throw std::runtime_error("cannot restart from problem \"" + p + "\"");
  }
  src.u = sd.u;
  return src;
}

Vec source_state(const SourceCtx& src) {
  if (src.ep) return src.ep->state(src.u);
  if (src.sn) return src.sn->state(src.u);
  if (src.hopf) return src.hopf->state(src.u);
  return src.po->orbit_at(src.u, 0.0);
}

Vec source_params(const SourceCtx& src) {
  if (src.ep) return src.ep->params(src.u);
  if (src.sn) return src.sn->params(src.u);
  if (src.hopf) return src.hopf->params(src.u);
  return src.po->params(src.u);
}

/// (omega, v, w) with Jv = -omega w, Jw = omega v at a source point: read
/// off a Hopf unknown vector, or eigen-analyze an equilibrium.
std::tuple<double, Vec, Vec> source_hopf_data(
    const SourceCtx& src, const VectorField& vf,
    const SpatioTemporalSymmetry* sym) {
  const Vec x = source_state(src);
  const Vec p = source_params(src);
  const Mat J = vf.jac_x(x, p);
  if (src.hopf) {
    const double k = src.hopf->k(src.u);
    if (k <= 0.0)
      throw std::runtime_error("source point is a neutral saddle (k <= 0)");
    const double omega = std::sqrt(k);
    Vec v = src.hopf->v1(src.u).normalized();
    if (sym) {
      auto [vs, ws] = symmetric_hopf_eigvec(*sym, J, omega);
      return {omega, vs, ws};
    }
    Vec w = -(J * v) / omega;
    return {omega, v, w};
  }
  auto ed = hopf_eigendata(J, 1e-4);
  if (!ed)
    throw std::runtime_error("source point has no pure-imaginary eigenpair");
  auto [omega, v, w] = *ed;
  if (sym) {
    auto [vs, ws] = symmetric_hopf_eigvec(*sym, J, omega);
    return {omega, vs, ws};
  }
  return {omega, v, w};
}

// ---------------------------------------------------------------------------
// Run assembly

struct BuiltRun {
  std::shared_ptr<ZeroProblem> top;
  int n_inner = 0;
  std::shared_ptr<EpProblem> ep;
  std::shared_ptr<SnProblem> sn;
  std::shared_ptr<HopfProblem> hopf;
  std::shared_ptr<DhProblem> dh;
  std::shared_ptr<POProblem> po;
  Vec u0;
  std::optional<Vec> tangent_hint;
  SpatioTemporalSymmetry sym;
  bool has_sym = false;
  std::vector<int> free_idx;
};

int run_param_pos(const BuiltRun& br, int free_idx_pos) {
  if (br.ep) return br.ep->param_pos(free_idx_pos);
  if (br.sn) return br.sn->param_pos(free_idx_pos);
  if (br.hopf) return br.hopf->param_pos(free_idx_pos);
  if (br.dh) return br.dh->hopf().param_pos(free_idx_pos);
  return br.po->param_pos(free_idx_pos);
}

/// Copies orbit blocks, period, free parameters, and extras from a source
/// PO unknown vector into a same-kind target problem on the same mesh.
Vec reassemble_po(const POProblem& sp, const Vec& su, POProblem& tp,
                  const std::vector<int>& tfree) {
  const Vec X = sp.orbit(su);
  const int block = static_cast<int>(X.size());
  const double T = sp.period(su);
  const Vec p = sp.params(su);
  Vec u = Vec::Zero(tp.num_unknowns());
  const int nfun = std::min(sp.n_funcs(), tp.n_funcs());
  for (int f = 0; f < nfun; ++f)
    u.segment(f * block, block) = su.segment(f * block, block);
  if (tp.period_pos() >= 0) u[tp.period_pos()] = T;
  for (size_t l = 0; l < tfree.size(); ++l)
    u[tp.param_pos(static_cast<int>(l))] = p[tfree[l]];
  // Algebraic extras (b, v, a, ...) live past the parameter slots in both
  // layouts when the kinds match.
  const int s_tail = sp.num_unknowns() - sp.param_pos(0) -
                     static_cast<int>(sp.free_params().size());
  const int t_tail = tp.num_unknowns() - tp.param_pos(0) -
                     static_cast<int>(tfree.size());
  if (s_tail > 0 && s_tail == t_tail)
    u.tail(t_tail) = su.tail(s_tail);
  tp.set_reference(X);
  return u;
}

BuiltRun build_run(const RunSpec& spec, const std::filesystem::path& root) {
  BuiltRun br;
  const VectorField& vf = model_registry(spec.model);

  std::optional<SolData> sol;
  std::string start_ref = !spec.restart.empty() ? spec.restart : spec.from_hopf;
  if (!start_ref.empty()) {
    sol = load_solution(root, start_ref);
    if (sol->model != spec.model)
      throw SchemaError("restart source uses model \"" + sol->model + "\"");
  }

  Vec p0 = sol ? full_params(vf, spec.params, &sol->params)
               : full_params(vf, spec.params);
  br.free_idx = param_indices(vf, spec.free_names);
  std::vector<std::pair<int, double>> pins;
  for (const auto& [n, v] : spec.pins) {
    int i = vf.state_index(n);
    if (i < 0) throw SchemaError("unknown state \"" + n + "\" in pins");
    pins.emplace_back(i, v);
  }
  if (!spec.pins.empty() && spec.problem != "ep")
    throw SchemaError("state pins only apply to problem \"ep\"");

  const int need = required_deficit_free(spec.problem,
                                         static_cast<int>(pins.size()));
  if (static_cast<int>(br.free_idx.size()) != need) {
    std::ostringstream msg;
    msg << "problem \"" << spec.problem << "\" with " << pins.size()
        << " pin(s) needs " << need << " free parameter(s) for deficit 1, got "
        << br.free_idx.size();
    throw SchemaError(msg.str());
  }

  if (!spec.symmetry.empty()) {
    int cells = spec.raw.contains("symmetry") &&
                        spec.raw["symmetry"].contains("cells")
                    ? spec.raw["symmetry"]["cells"].get<int>()
                    : vf.n_x / 2;  // two-component cells by default
    br.sym = parse_symmetry(spec.symmetry, cells, vf.n_x / cells);
    br.has_sym = true;
  }
  if ((spec.problem == "eqv_hopf" || spec.problem == "symbreak") && !br.has_sym)
    throw SchemaError("problem \"" + spec.problem + "\" requires a symmetry");

  std::optional<SourceCtx> src;
  if (sol) src = build_source(*sol);

  const std::string& P = spec.problem;

  if (P == "ep") {
    br.ep = std::make_shared<EpProblem>(vf, p0, br.free_idx, pins);
    br.top = br.ep;
    Vec x;
    if (!spec.start_state.empty()) {
      if (static_cast<int>(spec.start_state.size()) != vf.n_x)
        throw SchemaError("start.state: expected " + std::to_string(vf.n_x) +
                          " values");
      x = Eigen::Map<const Vec>(spec.start_state.data(), vf.n_x);
    } else if (src) {
      x = source_state(*src);
    } else {
      throw SchemaError("problem \"ep\" needs start.state or start.restart");
    }
    br.u0 = br.ep->pack(x, p0);
  } else if (P == "sn") {
    if (!src) throw SchemaError("problem \"sn\" starts from a restart");
    br.sn = std::make_shared<SnProblem>(vf, p0, br.free_idx);
    br.top = br.sn;
    if (src->sn) {
      br.u0 = br.sn->pack(src->sn->state(src->u), source_params(*src),
                          src->sn->nullvec(src->u));
    } else {
      auto eq = analyze_equilibrium(vf, source_state(*src),
                                    source_params(*src));
      auto d = sn_init(vf, eq, 1e-3);
      br.u0 = br.sn->pack(d.x, d.p, d.v);
    }
  } else if (P == "hopf" || P == "dh" || P == "eqv_hopf") {
    if (!src) throw SchemaError("problem \"" + P + "\" starts from a restart");
    auto hopf = std::make_shared<HopfProblem>(vf, p0, br.free_idx,
                                              spec.settings.seed + 5);
    auto [omega, v, w] = source_hopf_data(
        *src, vf, P == "eqv_hopf" && br.has_sym ? &br.sym : nullptr);
    Vec u_h = hopf->init(source_state(*src), source_params(*src), omega, v, w);
    if (P == "dh") {
      br.dh = std::make_shared<DhProblem>(vf, p0, br.free_idx,
                                          spec.settings.seed + 5);
      br.top = br.dh;
      br.u0 = br.dh->hopf().init(source_state(*src), source_params(*src),
                                 omega, v, w);
      br.hopf = nullptr;
    } else if (P == "eqv_hopf") {
      br.hopf = hopf;
      br.top = eqv_hopf_track_problem(hopf, br.sym);
      br.u0 = Vec::Zero(br.top->num_unknowns());
      br.u0.head(u_h.size()) = u_h;
    } else {
      br.hopf = hopf;
      br.top = hopf;
      br.u0 = u_h;
    }
  } else if (is_po_kind(P)) {
    POOptions opts;
    opts.kind = po_kind_of(P);
    opts.adapt = spec.mesh_adapt;
    opts.err_tol = spec.mesh_tol;
    opts.L_min = spec.mesh_L_min;
    opts.L_max = spec.mesh_L_max;
    if (P == "po_fixT") {
      if (!spec.fixed_T) throw SchemaError("problem \"po_fixT\" needs po.fixed_T");
      opts.fixed_T = spec.fixed_T;
    }

    Vec fh_grow;
    if (!spec.from_hopf.empty()) {
      if (opts.kind != POKind::plain || opts.fixed_T)
        throw SchemaError("from_hopf starts a plain periodic-orbit run");
      Mesh mesh = make_mesh(spec.mesh_L, spec.mesh_ndeg);
      br.po = std::make_shared<POProblem>(vf, mesh, p0, br.free_idx, opts);
      auto [omega, v, w] =
          source_hopf_data(*src, vf, br.has_sym ? &br.sym : nullptr);
      br.u0 = po_from_hopf(*br.po, source_state(*src), source_params(*src),
                           omega, v, w, spec.po_radius);
      // Orient the first sweep toward growing orbit radius; the sign of the
      // nullspace tangent at the starter is otherwise arbitrary and can point
      // back into the Hopf point, collapsing the run immediately.
      fh_grow = po_from_hopf(*br.po, source_state(*src), source_params(*src),
                             omega, v, w, 2.0 * spec.po_radius) -
                br.u0;
    } else if (src && src->po) {
      // Rebuild on the archived mesh; adaptation takes over from there.
      Mesh mesh = src->po->mesh();
      br.po = std::make_shared<POProblem>(vf, mesh, p0, br.free_idx, opts);
      const bool same_kind = src->po->options().kind == opts.kind;
      if (same_kind) {
        br.u0 = reassemble_po(*src->po, src->u, *br.po, br.free_idx);
      } else if (src->po->options().kind == POKind::plain) {
        br.u0 = po_lift(*src->po, src->u, *br.po);
      } else if (opts.kind == POKind::plain) {
        br.u0 = br.po->pack(src->po->orbit(src->u), src->po->period(src->u),
                            source_params(*src));
      } else {
        throw SchemaError("unsupported orbit lift between these problems");
      }
    } else {
      throw SchemaError("problem \"" + P +
                        "\" starts from a restart or from_hopf");
    }

    if (P == "symbreak" || (br.has_sym && !spec.symmetry_times.empty())) {
      auto inner = br.po;
      br.top = P == "symbreak"
                   ? symbreak_track_problem(inner, br.sym, spec.symmetry_times)
                   : append_symmetry_constraints(inner, br.sym,
                                                 spec.symmetry_times);
      Vec padded = Vec::Zero(br.top->num_unknowns());
      padded.head(br.u0.size()) = br.u0;
      br.u0 = padded;
    } else {
      br.top = br.po;
    }

    if (fh_grow.size() > 0) {
      Vec t = Vec::Zero(br.top->num_unknowns());
      t.head(fh_grow.size()) = fh_grow;
      br.tangent_hint = t;
    }
  } else {
    throw SchemaError("unknown problem \"" + P + "\"");
  }

  br.n_inner = br.ep   ? br.ep->num_unknowns()
               : br.sn ? br.sn->num_unknowns()
               : br.hopf ? br.hopf->num_unknowns()
               : br.dh   ? br.dh->num_unknowns()
                         : br.po->num_unknowns();

  // Same-shape restarts keep the archived tangent as the sweep orientation.
  if (sol && sol->tangent.size() == br.n_inner &&
      sol->problem == spec.problem) {
    Vec t = Vec::Zero(br.top->num_unknowns());
    t.head(br.n_inner) = sol->tangent;
    br.tangent_hint = t;
  }
  return br;
}

// ---------------------------------------------------------------------------
// Columns and monitors

struct ColumnPlan {
  std::vector<std::string> names;     // display names, table order
  std::vector<int> monitor_idx;       // into the final monitor vector
};

std::function<double(const Vec&)> column_accessor(const BuiltRun& br,
                                                  const RunSpec& spec,
                                                  const std::string& name) {
  const VectorField& vf = model_registry(spec.model);
  // Scaled display name or plain parameter name.
  for (int i = 0; i < vf.n_p; ++i) {
    const std::string& pn = vf.param_names[i];
    double factor = 1.0;
    std::string display = pn;
    if (auto it = spec.scales.find(pn); it != spec.scales.end()) {
      display = it->second.display;
      factor = it->second.factor;
    }
    if (name != pn && name != display) continue;
    for (size_t l = 0; l < br.free_idx.size(); ++l)
      if (br.free_idx[l] == i) {
        if (br.po) {
          // Mesh adaptation moves the parameter slots; resolve per call.
          auto po = br.po;
          const int li = static_cast<int>(l);
          return [po, li, factor](const Vec& u) {
            return factor * u[po->param_pos(li)];
          };
        }
        const int pos = run_param_pos(br, static_cast<int>(l));
        return [pos, factor](const Vec& u) { return factor * u[pos]; };
      }
    // Not free: report the (fixed) value carried by the problem.
    if (br.po) {
      auto po = br.po;
      return [po, i, factor](const Vec& u) { return factor * po->params(u)[i]; };
    }
    if (br.ep) {
      auto ep = br.ep;
      return [ep, i, factor](const Vec& u) { return factor * ep->params(u)[i]; };
    }
    if (br.sn) {
      auto sn = br.sn;
      return [sn, i, factor](const Vec& u) { return factor * sn->params(u)[i]; };
    }
    if (br.hopf) {
      auto h = br.hopf;
      return [h, i, factor](const Vec& u) { return factor * h->params(u)[i]; };
    }
    auto dh = br.dh;
    return [dh, i, factor](const Vec& u) {
      return factor * dh->hopf().params(u)[i];
    };
  }
  for (int i = 0; i < vf.n_x; ++i) {
    if (name != vf.state_names[i]) continue;
    if (br.ep) {
      auto ep = br.ep;
      return [ep, i](const Vec& u) { return ep->state(u)[i]; };
    }
    if (br.sn) {
      auto sn = br.sn;
      return [sn, i](const Vec& u) { return sn->state(u)[i]; };
    }
    if (br.hopf || br.dh) {
      auto h = br.hopf ? br.hopf : nullptr;
      if (h) return [h, i](const Vec& u) { return h->state(u)[i]; };
      auto dhp = br.dh;
      return [dhp, i](const Vec& u) { return dhp->hopf().state(u)[i]; };
    }
    auto po = br.po;
    return [po, i](const Vec& u) { return po->orbit_at(u, 0.0)[i]; };
  }
  if (name == "po.period" && br.po) {
    auto po = br.po;
    return [po](const Vec& u) { return po->period(u); };
  }
  if (name == "amplitude" && br.po) {
    auto po = br.po;
    const int coord = spec.amp_coord;
    return [po, coord](const Vec& u) { return po->amplitude(u, coord); };
  }
  if (name == "k") {
    if (br.hopf) {
      auto h = br.hopf;
      return [h](const Vec& u) { return h->k(u); };
    }
    if (br.dh) {
      auto d = br.dh;
      return [d](const Vec& u) { return d->hopf().k(u); };
    }
  }
  throw SchemaError("unknown column \"" + name + "\"");
}

std::vector<std::string> default_columns(const BuiltRun& br,
                                         const RunSpec& spec) {
  const VectorField& vf = model_registry(spec.model);
  std::vector<std::string> cols;
  for (int i : br.free_idx) {
    const std::string& pn = vf.param_names[i];
    auto it = spec.scales.find(pn);
    cols.push_back(it != spec.scales.end() ? it->second.display : pn);
  }
  if (br.ep || br.sn || br.hopf) {
    for (const auto& sn : vf.state_names) cols.push_back(sn);
  }
  if (br.ep) cols.push_back("ustab");
  if (br.hopf) cols.push_back("k");
  if (br.po) {
    cols.push_back("po.period");
    cols.push_back("amplitude");
  }
  return cols;
}

}  // namespace

// ---------------------------------------------------------------------------
// RunSpec parsing

RunSpec parse_runspec(const json& j) {
  RunSpec s;
  s.raw = j;
  check_keys(j, "spec",
             {"output", "model", "problem", "free", "start", "symmetry",
              "mesh", "po", "monitors", "bounds", "settings", "columns"});
  if (!j.contains("output") || !j.contains("model") || !j.contains("problem"))
    throw SchemaError("spec: output, model, and problem are required");
  s.output = str(j["output"], "output");
  s.problem = str(j["problem"], "problem");

  const json& m = j["model"];
  check_keys(m, "model", {"name", "params", "scales"});
  s.model = str(m.at("name"), "model.name");
  if (m.contains("params")) {
    if (!m["params"].is_object()) throw SchemaError("model.params: object");
    for (auto it = m["params"].begin(); it != m["params"].end(); ++it)
      s.params[it.key()] = num(it.value(), "model.params." + it.key());
  }
  if (m.contains("scales")) {
    for (auto it = m["scales"].begin(); it != m["scales"].end(); ++it) {
      check_keys(it.value(), "model.scales", {"name", "factor"});
      ParamScale ps;
      ps.display = str(it.value().at("name"), "scales.name");
      ps.factor = num(it.value().at("factor"), "scales.factor");
      s.scales[it.key()] = ps;
    }
  }

  if (j.contains("free")) {
    if (!j["free"].is_array()) throw SchemaError("free: expected an array");
    for (const auto& e : j["free"]) {
      std::string entry = str(e, "free[]");
      auto eq = entry.find('=');
      if (eq == std::string::npos) {
        s.free_names.push_back(entry);
      } else {
        s.pins.emplace_back(entry.substr(0, eq),
                            std::stod(entry.substr(eq + 1)));
      }
    }
  }

  if (j.contains("start")) {
    const json& st = j["start"];
    check_keys(st, "start", {"state", "restart", "from_hopf"});
    int given = 0;
    if (st.contains("state")) {
      s.start_state = num_array(st["state"], "start.state");
      ++given;
    }
    if (st.contains("restart")) {
      s.restart = str(st["restart"], "start.restart");
      ++given;
    }
    if (st.contains("from_hopf")) {
      s.from_hopf = str(st["from_hopf"], "start.from_hopf");
      ++given;
    }
    if (given != 1)
      throw SchemaError("start: exactly one of state/restart/from_hopf");
  }

  if (j.contains("symmetry")) {
    const json& sy = j["symmetry"];
    check_keys(sy, "symmetry", {"cycles", "times", "cells"});
    s.symmetry = str(sy.at("cycles"), "symmetry.cycles");
    if (sy.contains("times"))
      s.symmetry_times = num_array(sy["times"], "symmetry.times");
  }

  if (j.contains("mesh")) {
    const json& me = j["mesh"];
    check_keys(me, "mesh", {"L", "ndeg", "adapt", "tol", "L_min", "L_max"});
    if (me.contains("L")) s.mesh_L = static_cast<int>(num(me["L"], "mesh.L"));
    if (me.contains("ndeg"))
      s.mesh_ndeg = static_cast<int>(num(me["ndeg"], "mesh.ndeg"));
    if (me.contains("adapt")) {
      if (!me["adapt"].is_boolean()) throw SchemaError("mesh.adapt: bool");
      s.mesh_adapt = me["adapt"].get<bool>();
    }
    if (me.contains("tol")) s.mesh_tol = num(me["tol"], "mesh.tol");
    if (me.contains("L_min"))
      s.mesh_L_min = static_cast<int>(num(me["L_min"], "mesh.L_min"));
    if (me.contains("L_max"))
      s.mesh_L_max = static_cast<int>(num(me["L_max"], "mesh.L_max"));
  }

  if (j.contains("po")) {
    const json& po = j["po"];
    check_keys(po, "po", {"radius", "coord", "fixed_T"});
    if (po.contains("radius")) s.po_radius = num(po["radius"], "po.radius");
    if (po.contains("coord"))
      s.amp_coord = static_cast<int>(num(po["coord"], "po.coord"));
    if (po.contains("fixed_T")) s.fixed_T = num(po["fixed_T"], "po.fixed_T");
  }

  if (j.contains("monitors")) {
    const json& mo = j["monitors"];
    check_keys(mo, "monitors",
               {"UZ", "ncs_threshold", "slowpoint", "floquet", "bp", "fold",
                "fold_label", "hb_stop"});
    if (mo.contains("UZ")) {
      if (!mo["UZ"].is_object()) throw SchemaError("monitors.UZ: object");
      for (auto it = mo["UZ"].begin(); it != mo["UZ"].end(); ++it)
        s.uz[it.key()] = num_array(it.value(), "monitors.UZ." + it.key());
    }
    if (mo.contains("ncs_threshold"))
      s.ncs_threshold = num(mo["ncs_threshold"], "monitors.ncs_threshold");
    if (mo.contains("slowpoint")) s.slowpoint_on = mo["slowpoint"].get<bool>();
    if (mo.contains("floquet")) s.floquet_on = mo["floquet"].get<bool>();
    if (mo.contains("bp")) s.bp_on = mo["bp"].get<bool>();
    if (mo.contains("fold")) {
      if (mo["fold"].is_boolean())
        s.fold = mo["fold"].get<bool>() ? "" : "none";
      else
        s.fold = str(mo["fold"], "monitors.fold");
    }
    if (mo.contains("fold_label"))
      s.fold_label = str(mo["fold_label"], "monitors.fold_label");
    if (mo.contains("hb_stop")) {
      const json& hs = mo["hb_stop"];
      if (hs.is_boolean()) {
        s.hb_stop_off = !hs.get<bool>();
        s.hb_stop_auto = hs.get<bool>();
      } else if (hs.is_string() && hs.get<std::string>() == "auto") {
        s.hb_stop_auto = true;
      } else {
        s.hb_stop = num(hs, "monitors.hb_stop");
      }
    }
  }

  if (j.contains("bounds")) {
    if (!j["bounds"].is_object()) throw SchemaError("bounds: object");
    for (auto it = j["bounds"].begin(); it != j["bounds"].end(); ++it) {
      const json& b = it.value();
      if (!b.is_array() || b.size() != 2)
        throw SchemaError("bounds." + it.key() + ": expected [lo, hi]");
      std::pair<std::optional<double>, std::optional<double>> pr;
      if (!b[0].is_null()) pr.first = num(b[0], "bounds lo");
      if (!b[1].is_null()) pr.second = num(b[1], "bounds hi");
      s.bounds[it.key()] = pr;
    }
  }

  if (j.contains("settings")) {
    const json& se = j["settings"];
    check_keys(se, "settings",
               {"h0", "h_min", "h_max", "corrector_tol", "max_newton",
                "max_steps", "event_tol", "direction", "seed"});
    auto& c = s.settings;
    if (se.contains("h0")) c.h0 = num(se["h0"], "settings.h0");
    if (se.contains("h_min")) c.h_min = num(se["h_min"], "settings.h_min");
    if (se.contains("h_max")) c.h_max = num(se["h_max"], "settings.h_max");
    if (se.contains("corrector_tol"))
      c.corrector_tol = num(se["corrector_tol"], "settings.corrector_tol");
    if (se.contains("max_newton"))
      c.max_newton = static_cast<int>(num(se["max_newton"], "settings"));
    if (se.contains("max_steps"))
      c.max_steps = static_cast<int>(num(se["max_steps"], "settings"));
    if (se.contains("event_tol"))
      c.event_tol = num(se["event_tol"], "settings.event_tol");
    if (se.contains("direction"))
      c.direction = static_cast<int>(num(se["direction"], "settings"));
    if (se.contains("seed"))
      c.seed = static_cast<unsigned>(num(se["seed"], "settings.seed"));
  }

  if (j.contains("columns")) {
    if (!j["columns"].is_array()) throw SchemaError("columns: array");
    for (const auto& e : j["columns"])
      s.columns.push_back(str(e, "columns[]"));
  }
  return s;
}

RunSpec load_runspec(const std::filesystem::path& file) {
  return parse_runspec(read_json_file(file));
}

// ---------------------------------------------------------------------------
// Execution

RunOutcome run(const RunSpec& spec, const std::filesystem::path& root) {
  BuiltRun br = build_run(spec, root);
  const VectorField& vf = model_registry(spec.model);
  const int n_slack = br.top->num_unknowns() - br.n_inner;
  const bool regularized = n_slack > 0;

  auto wrap = [&](Monitor m) {
    return regularized ? wrap_inner_monitor(std::move(m), n_slack) : m;
  };

  std::vector<Monitor> monitors;
  if (br.ep) {
    for (auto& m : eig_monitors(br.ep)) monitors.push_back(wrap(m));
  }
  if (br.hopf && spec.problem == "hopf") {
    for (auto& m : hopf_monitors(br.hopf)) monitors.push_back(wrap(m));
  }
  const bool plain_po = br.po && br.po->options().kind == POKind::plain &&
                        !br.po->options().fixed_T;

  if (spec.floquet_on.value_or(plain_po) && br.po) {
    monitors.push_back(wrap(ust_monitor(br.po)));
  }
  if (spec.slowpoint_on.value_or(spec.problem == "po_fixT") && br.po) {
    for (auto& m : slowpoint_monitors(br.po, spec.ncs_threshold))
      monitors.push_back(wrap(m));
  }
  const bool bp_default = (spec.problem == "ep" || spec.problem == "hopf" ||
                           spec.problem == "po") &&
                          spec.symmetry_times.empty();
  if (spec.bp_on.value_or(bp_default)) {
    monitors.push_back(bp_monitor(br.top));  // acts on the full unknowns
  }

  // Fold monitor on a free parameter's tangent component.
  std::string fold_name = spec.fold;
  if (fold_name.empty()) {
    const bool fold_default = plain_po || spec.problem == "po_sn" ||
                              spec.problem == "symbreak";
    fold_name = fold_default ? vf.param_names[br.free_idx[0]] : "none";
  }
  if (fold_name != "none") {
    int l = -1;
    for (size_t i = 0; i < spec.free_names.size(); ++i) {
      const std::string& pn = spec.free_names[i];
      auto it = spec.scales.find(pn);
      std::string display = it != spec.scales.end() ? it->second.display : pn;
      if (fold_name == pn || fold_name == display) l = static_cast<int>(i);
    }
    if (l < 0)
      throw SchemaError("monitors.fold: \"" + fold_name +
                        "\" is not a free parameter");
    std::string label = !spec.fold_label.empty() ? spec.fold_label
                        : plain_po               ? "SN"
                                                 : "FP";
    if (br.po) {
      Monitor m;
      m.name = "fold." + fold_name;
      m.kind = MonitorKind::Regular;
      auto po = br.po;
      m.eval_ut = [po, l](const Vec&, const Vec& t) {
        return t[po->param_pos(l)];
      };
      m.event_label = label;
      monitors.push_back(m);
    } else {
      monitors.push_back(
          fold_monitor("fold." + fold_name, run_param_pos(br, l), label));
    }
  }

  for (const auto& [name, values] : spec.uz) {
    Monitor m;
    m.name = "uz." + name;
    m.kind = MonitorKind::UserZero;
    m.eval = column_accessor(br, spec, name);
    m.targets = values;
    m.event_label = "UZ";
    monitors.push_back(wrap(m));
  }

  for (const auto& [name, pr] : spec.bounds) {
    auto acc = column_accessor(br, spec, name);
    auto add = [&](double target) {
      Monitor m;
      m.name = "bound." + name + "@" + std::to_string(target);
      m.kind = MonitorKind::Threshold;
      m.eval = acc;
      m.targets = {target};
      m.event_label = "EP";
      m.stop_on_event = true;
      monitors.push_back(wrap(m));
    };
    if (pr.first) add(*pr.first);
    if (pr.second) add(*pr.second);
  }

  // Amplitude-collapse stop near the closing Hopf point of a bubble.
  bool hb_auto = spec.hb_stop_auto ||
                 (!spec.hb_stop_off && !spec.hb_stop && plain_po &&
                  !spec.from_hopf.empty());
  if ((hb_auto || spec.hb_stop) && br.po) {
    double thr = spec.hb_stop
                     ? *spec.hb_stop
                     : std::max(1e-5, 0.4 * br.po->amplitude(
                                          br.u0.head(br.n_inner),
                                          spec.amp_coord));
    Monitor m;
    m.name = "hb_stop";
    m.kind = MonitorKind::Threshold;
    m.eval = column_accessor(br, spec, "amplitude");
    m.targets = {thr};
    m.event_label = "HB";
    m.stop_on_event = true;
    monitors.push_back(wrap(m));
  }

  // Requested columns become Column monitors unless already monitored.
  std::vector<std::string> columns =
      spec.columns.empty() ? default_columns(br, spec) : spec.columns;
  std::vector<int> col_idx;
  for (const auto& name : columns) {
    int found = -1;
    for (size_t i = 0; i < monitors.size(); ++i)
      if (monitors[i].name == name) found = static_cast<int>(i);
    if (found < 0) {
      Monitor m;
      m.name = name;
      m.kind = MonitorKind::Column;
      m.eval = column_accessor(br, spec, name);
      monitors.push_back(wrap(m));
      found = static_cast<int>(monitors.size()) - 1;
    }
    col_idx.push_back(found);
  }

  Branch branch =
      continue_branch(*br.top, br.u0, spec.settings, monitors,
                      br.tangent_hint ? &*br.tangent_hint : nullptr);
  branch.problem_id = spec.problem;

  // --- Archive ---------------------------------------------------------
  const auto dir = root / spec.output;
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "runspec.json", spec.raw.dump(2) + "\n");

  auto row_values = [&](const Vec& mv) {
    std::vector<double> vals;
    for (int i : col_idx) vals.push_back(mv[i]);
    return vals;
  };

  json jbranch;
  jbranch["problem"] = spec.problem;
  jbranch["columns"] = columns;
  jbranch["monitors"] = branch.monitor_names;
  json jsweeps = json::array();
  int label_counter = 0;
  std::vector<std::vector<TableRow>> blocks;
  for (size_t si = 0; si < branch.sweeps.size(); ++si) {
    const auto& sweep = branch.sweeps[si];
    json jsweep;
    jsweep["termination"] = sweep.termination;
    jsweep["warnings"] = sweep.warnings;
    json jpoints = json::array();
    for (const auto& pt : sweep.points) {
      json jp;
      jp["s"] = pt.arclength;
      jp["values"] = row_values(pt.monitor_values);
      jp["monitors"] = vec_to_json(pt.monitor_values);
      jpoints.push_back(std::move(jp));
    }
    jsweep["points"] = std::move(jpoints);

    std::vector<TableRow> rows;
    json jevents = json::array();
    for (const auto& ev : sweep.events) {
      const int label = ++label_counter;
      json je;
      je["label"] = label;
      je["type"] = ev.label;
      je["s"] = ev.arclength;
      je["values"] = row_values(ev.monitor_values);
      jevents.push_back(std::move(je));
      rows.push_back({label, ev.label, row_values(ev.monitor_values)});

      // Full solution file for restarts.
      SolData sd;
      sd.label = label;
      sd.type = ev.label;
      sd.problem = spec.problem;
      sd.model = spec.model;
      sd.free_names = spec.free_names;
      sd.pins = spec.pins;
      if (br.has_sym) {
        sd.symmetry = br.sym.render();
        sd.sym_cells = br.sym.n_cells;
      }
      const Eigen::Index n_in = ev.u.size() - n_slack;
      Vec inner_u = ev.u.head(n_in);
      sd.u = inner_u;
      sd.tangent = ev.tangent.size() >= n_in ? Vec(ev.tangent.head(n_in))
                                             : Vec(Vec::Zero(n_in));
      std::any inner_state = ev.state;
      if (regularized && inner_state.has_value()) {
        const auto& pr =
            std::any_cast<const std::pair<Mat, std::any>&>(inner_state);
        inner_state = pr.second;
      }
      Vec p_at;
      if (br.po) {
        if (inner_state.has_value()) br.po->restore_state(inner_state);
        p_at = br.po->params(inner_u);
        sd.has_mesh = true;
        const std::any mesh_state = br.po->save_state();
        const auto& [bnd, phi, cref] =
            std::any_cast<const std::tuple<Vec, Vec, double>&>(mesh_state);
        sd.mesh_boundaries = bnd;
        sd.phi = phi;
        sd.cref = cref;
        sd.mesh_ndeg = br.po->mesh().ndeg;
        sd.fixed_T = br.po->options().fixed_T;
      } else if (br.ep) {
        p_at = br.ep->params(inner_u);
      } else if (br.sn) {
        p_at = br.sn->params(inner_u);
      } else if (br.hopf) {
        p_at = br.hopf->params(inner_u);
      } else {
        p_at = br.dh->hopf().params(inner_u);
      }
      for (int i = 0; i < vf.n_p; ++i) sd.params[vf.param_names[i]] = p_at[i];
      write_file_atomic(dir / ("sol_" + std::to_string(label) + ".json"),
                        sol_to_json(sd).dump() + "\n");
    }
    jsweep["events"] = std::move(jevents);
    jsweeps.push_back(std::move(jsweep));
    blocks.push_back(std::move(rows));
  }
  jbranch["sweeps"] = std::move(jsweeps);
  write_file_atomic(dir / "branch.json", jbranch.dump() + "\n");

  RunOutcome out;
  out.branch = std::move(branch);
  out.columns = columns;
  out.table = render_table(columns, blocks);
  out.dir = dir;
  write_file_atomic(dir / "table.txt", out.table);
  return out;
}

std::string archive_table(const std::filesystem::path& run_dir) {
  std::ifstream f(run_dir / "table.txt", std::ios::binary);
  if (!f) throw std::runtime_error("no table.txt in " + run_dir.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string archive_csv(const std::filesystem::path& run_dir) {
  const json branch = read_json_file(run_dir / "branch.json");
  std::vector<std::string> header = {"sweep", "arclength"};
  for (const auto& c : branch.at("columns"))
    header.push_back(c.get<std::string>());
  for (const auto& m : branch.at("monitors"))
    header.push_back(m.get<std::string>());
  std::vector<std::vector<double>> rows;
  int sweep_no = 0;
  for (const auto& sweep : branch.at("sweeps")) {
    for (const auto& pt : sweep.at("points")) {
      std::vector<double> row = {static_cast<double>(sweep_no),
                                 pt.at("s").get<double>()};
      for (const auto& v : pt.at("values")) row.push_back(v.get<double>());
      for (const auto& v : pt.at("monitors")) row.push_back(v.get<double>());
      rows.push_back(std::move(row));
    }
    ++sweep_no;
  }
  return render_csv(header, rows);
}

RunSpec make_restart_spec(const std::filesystem::path& root,
                          const std::string& run_label,
                          const std::string& as_problem,
                          const json& overrides) {
  json j = overrides.is_null() ? json::object() : overrides;
  if (!j.is_object()) throw SchemaError("overrides: expected an object");
  j["problem"] = as_problem;
  j["start"] = {{"restart", run_label}};
  if (!j.contains("model")) {
    SolData sd = load_solution(root, run_label);
    j["model"] = {{"name", sd.model}};
  }
  return parse_runspec(j);
}

}  // namespace bifkit
