#include "bnlab/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <set>
#include <sstream>
#include <variant>

#include <Eigen/Core>
#include <json.hpp>

#include "bnlab/bn_decompose.hpp"
#include "bnlab/io.hpp"
#include "bnlab/rng.hpp"

namespace bnlab {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr int kManifestVersion = 1;
constexpr Seed kDefaultSeed = 42;

// Seed streams of the top-level seed.
enum : std::uint64_t { kStreamRuns = 1, kStreamOnline, kStreamSweeps, kStreamDecompose, kStreamPriors };

using Diagnostics = std::vector<std::string>;

// Typed access to one JSON object. Type errors become diagnostics and fall back to the
// default; keys never asked for are reported by finish().
class Fields {
 public:
  Fields(const json& j, std::string path, Diagnostics& diag) : j_(j), path_(std::move(path)), diag_(diag) {
    if (!j_.is_object()) error("must be a JSON object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.is_object() && j_.contains(key) && !j_.at(key).is_null();
  }

  double number(const std::string& key, double def) {
    const json* v = find(key);
    if (!v) return def;
    if (!v->is_number()) return bad(key, "a number"), def;
    return v->get<double>();
  }

  long long integer(const std::string& key, long long def) {
    const json* v = find(key);
    if (!v) return def;
    if (v->is_number_float() && std::floor(v->get<double>()) == v->get<double>() &&
        std::abs(v->get<double>()) < 9e15)
      return static_cast<long long>(v->get<double>());
    if (!v->is_number_integer()) return bad(key, "an integer"), def;
    return v->get<long long>();
  }

  std::optional<Seed> seed(const std::string& key) {
    const json* v = find(key);
    if (!v) return std::nullopt;
    if (v->is_number_unsigned()) return v->get<Seed>();
    bad(key, "a non-negative integer");
    return std::nullopt;
  }

  bool flag(const std::string& key, bool def) {
    const json* v = find(key);
    if (!v) return def;
    if (!v->is_boolean()) return bad(key, "a boolean"), def;
    return v->get<bool>();
  }

  std::string text(const std::string& key, const std::string& def) {
    const json* v = find(key);
    if (!v) return def;
    if (!v->is_string()) return bad(key, "a string"), def;
    return v->get<std::string>();
  }

  std::vector<double> numbers(const std::string& key, const std::vector<double>& def) {
    const json* v = find(key);
    if (!v) return def;
    if (!v->is_array()) return bad(key, "an array of numbers"), def;
    std::vector<double> out;
    for (const auto& e : *v) {
      if (!e.is_number()) return bad(key, "an array of numbers"), def;
      out.push_back(e.get<double>());
    }
    return out;
  }

  std::vector<std::string> strings(const std::string& key, const std::vector<std::string>& def) {
    const json* v = find(key);
    if (!v) return def;
    if (!v->is_array()) return bad(key, "an array of strings"), def;
    std::vector<std::string> out;
    for (const auto& e : *v) {
      if (!e.is_string()) return bad(key, "an array of strings"), def;
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  // Array of objects; nullptr when absent or not an array.
  const json* list(const std::string& key) {
    const json* v = find(key);
    if (!v) return nullptr;
    if (!v->is_array()) return bad(key, "an array"), nullptr;
    return v;
  }

  const json* object(const std::string& key) {
    const json* v = find(key);
    if (!v) return nullptr;
    if (!v->is_object()) return bad(key, "an object"), nullptr;
    return v;
  }

  template <typename E, typename Parse>
  E choice(const std::string& key, E def, Parse parse) {
    const std::string name = text(key, "");
    if (name.empty()) return def;
    try {
      return parse(name);
    } catch (const DomainError& e) {
      error(std::string(key) + ": " + e.what());
      return def;
    }
  }

  void error(const std::string& msg) { diag_.push_back(path_.empty() ? msg : path_ + ": " + msg); }

  void finish() {
    if (!j_.is_object()) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) error("unknown key '" + it.key() + "'");
  }

  const std::string& path() const { return path_; }

 private:
  const json* find(const std::string& key) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key) || j_.at(key).is_null()) return nullptr;
    return &j_.at(key);
  }
  void bad(const std::string& key, const char* what) { error("'" + key + "' must be " + what); }

  const json& j_;
  std::string path_;
  Diagnostics& diag_;
  std::set<std::string> seen_;
};

std::string fmt(double x) {
  std::ostringstream os;
  os << x;
  return os.str();
}

bool valid_name(const std::string& name) {
  return !name.empty() && std::all_of(name.begin(), name.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  });
}

// ---------------------------------------------------------------------------
// Pole checks shared by every curve that evaluates a closed form.

void check_identity_pole(Fields& f, const std::string& key, const std::vector<double>& alphas) {
  for (double a : alphas)
    if (a == 1.0) f.error(key + ": alpha = 1 is the pole of the identity curve (it diverges at alpha = 1)");
}

void check_relu_pole(Fields& f, const std::string& key, const std::vector<double>& alphas) {
  for (double a : alphas)
    if (a >= 2.0)
      f.error(key + ": alpha = " + fmt(a) + " is at or beyond the ReLU pole (the curve diverges at alpha = 2)");
}

void check_alphas(Fields& f, const std::string& key, const std::vector<double>& alphas) {
  if (alphas.empty()) f.error(key + ": alpha grid is empty");
  for (double a : alphas)
    if (!(a > 0) || !std::isfinite(a)) f.error(key + ": alpha > 0 required, got " + fmt(a));
}

// ---------------------------------------------------------------------------
// Teacher-student run fields.

void read_run_fields(Fields& f, TeacherStudentConfig& c) {
  c.N = static_cast<int>(f.integer("N", c.N));
  c.M = static_cast<int>(f.integer("M", c.M));
  c.P = static_cast<long>(f.integer("P", c.P));
  c.alpha = f.number("alpha", c.alpha);
  c.S = f.number("S", c.S);
  c.zeta = f.number("zeta", c.zeta);
  c.eta = f.number("eta", c.eta);
  c.gamma_lr_scale = f.number("gamma_lr_scale", c.gamma_lr_scale);
  c.lr_decay = f.number("lr_decay", c.lr_decay);
  c.lr_decay_start = static_cast<int>(f.integer("lr_decay_start", c.lr_decay_start));
  c.act = f.choice("act", c.act, parse_activation);
  c.teacher_act = f.choice("teacher_act", c.teacher_act, parse_activation);
  c.method = f.choice("method", c.method, parse_method);
  c.epochs = static_cast<int>(f.integer("epochs", c.epochs));
  c.tol = f.number("tol", c.tol);
  c.init_norm = f.number("init_norm", c.init_norm);
  c.init_gamma = f.number("init_gamma", c.init_gamma);
  c.init_in_span = f.flag("init_in_span", c.init_in_span);
  c.bn_train_stats = f.flag("bn_train_stats", c.bn_train_stats);
  c.test_samples = static_cast<std::size_t>(std::max(0LL, f.integer("test_samples", static_cast<long long>(c.test_samples))));
}

// Invariants of a run; `offline` adds the fixed-data-set requirements.
void check_run_fields(Fields& f, const TeacherStudentConfig& c, bool offline) {
  if (c.N < 64) f.error("N ≥ 64 required");
  if (c.M < 2) f.error("M ≥ 2 required");
  if (!(c.S >= 0)) f.error("S ≥ 0 required");
  if (!(c.eta > 0)) f.error("eta > 0 required");
  if (!(c.zeta >= 0)) f.error("zeta ≥ 0 required");
  if (!(c.gamma_lr_scale >= 0)) f.error("gamma_lr_scale ≥ 0 required");
  if (!(c.lr_decay > 0 && c.lr_decay <= 1)) f.error("lr_decay in (0, 1] required");
  if (c.lr_decay_start < 0) f.error("lr_decay_start ≥ 0 required");
  if (c.epochs < 1) f.error("epochs ≥ 1 required");
  if (!(c.tol >= 0)) f.error("tol ≥ 0 required");
  if (!(c.init_norm > 0)) f.error("init_norm > 0 required");
  if (!(c.init_gamma > 0)) f.error("init_gamma > 0 required");
  if (c.P < 0) f.error("P ≥ 0 required");
  if (offline && c.N >= 64 && c.M >= 2 && c.alpha > 0) {
    const long P = c.P > 0 ? c.P : std::lround(c.alpha * c.N);
    if (P < c.M) f.error("P = " + std::to_string(P) + " is smaller than the batch size M = " + std::to_string(c.M));
  }
}

json run_fields_json(const TeacherStudentConfig& c) {
  json j;
  j["N"] = c.N;
  j["M"] = c.M;
  if (c.P > 0) j["P"] = c.P;
  j["alpha"] = c.alpha;
  j["S"] = c.S;
  j["zeta"] = c.zeta;
  j["eta"] = c.eta;
  j["gamma_lr_scale"] = c.gamma_lr_scale;
  j["lr_decay"] = c.lr_decay;
  j["lr_decay_start"] = c.lr_decay_start;
  j["act"] = std::string(to_string(c.act));
  j["teacher_act"] = std::string(to_string(c.teacher_act));
  j["method"] = std::string(to_string(c.method));
  j["epochs"] = c.epochs;
  j["tol"] = c.tol;
  j["init_norm"] = c.init_norm;
  j["init_gamma"] = c.init_gamma;
  j["init_in_span"] = c.init_in_span;
  j["bn_train_stats"] = c.bn_train_stats;
  j["test_samples"] = c.test_samples;
  return j;
}

OrderState read_state(Fields& parent, const std::string& key, OrderState def, Diagnostics& diag) {
  const json* v = parent.object(key);
  if (!v) return def;
  Fields f(*v, parent.path() + "." + key, diag);
  OrderState s{f.number("Q", def.Q), f.number("R", def.R), f.number("L", def.L)};
  f.finish();
  if (!s.valid()) f.error("needs Q > 0, L > 0 and -1 <= R <= 1");
  return s;
}

json state_json(const OrderState& s) { return json{{"Q", s.Q}, {"R", s.R}, {"L", s.L}}; }

// Reads the name and checks that it is usable as part of a file name and unique in `names`.
std::string read_name(Fields& f, std::set<std::string>& names) {
  std::string name = f.text("name", "");
  if (!valid_name(name)) f.error("'name' must be a non-empty string of letters, digits, '_', '-' or '.'");
  else if (!names.insert(name).second) f.error("duplicate name '" + name + "'");
  return name;
}

// ---------------------------------------------------------------------------
// Command configurations.

struct DynamicsRun {
  std::string name;
  DynamicsParams params;
  OrderState initial{0.5, 0.3, 1.0};
  double t_end = 500;
  double dt = 0.01;
  int record_stride = 100;
  bool required = true;
};

struct DynamicsConfig {
  std::vector<DynamicsRun> runs;
};

struct OfflineRun {
  std::string name;
  TeacherStudentConfig cfg;
  std::optional<Seed> seed;
  bool required = true;
};

struct OnlineRun {
  std::string name;
  TeacherStudentConfig cfg;
  std::optional<Seed> seed;
  OrderState initial{0.5, 0.3, 1.0};
  double t_end = 30;
  double record_every = 1;
  bool required = true;
};

struct SweepEntry {
  SweepSpec spec;
  std::optional<Seed> seed;
};

struct SimulateConfig {
  std::vector<OfflineRun> runs;
  std::vector<OnlineRun> online;
  std::vector<SweepEntry> sweeps;
};

struct CurveEntry {
  std::string name;
  std::string kind;   // id_ord | relu_ord | id_wn | relu_equilibrium
  double S = 0.25;
  double zeta = 0;
  std::vector<double> alphas;
};

struct StatmechConfig {
  std::vector<CurveEntry> curves;
};

struct PriorsConfig {
  std::vector<std::string> distributions{"gaussian", "uniform", "laplace"};
  std::vector<double> M{16, 32, 64};
  long long trials = 100000;
  long long samples = 1000000;
};

struct DecomposeConfig {
  int N = 256;
  long P = 4096;
  int M = 64;
  long long n_mc = 20000;
  double S = 0.25;
  double student_noise = 0.5;
  std::optional<double> gamma;
  GlmLoss loss = GlmLoss::Identity;
  ZetaConvention convention = ZetaConvention::NoBiasHalf;
  std::optional<PriorsConfig> priors;
  std::vector<double> zeta_exact_M;
};

struct FigureConfig {
  bool relu = false;                 // figure1b
  TeacherStudentConfig protocol;     // N, M, S and the training schedule shared by every simulation
  std::vector<double> alphas;
  std::vector<double> theory_alphas;
  int repeats = 3;
  double wn_zeta = 0.25;             // figure1a: the fixed-zeta theory curve
  bool required = true;
};

using CommandConfig = std::variant<DynamicsConfig, SimulateConfig, StatmechConfig, DecomposeConfig, FigureConfig>;

// 0.05, 0.10, ... up to `last`, without the points inside [lo, hi].
std::vector<double> default_theory_grid(double last, double lo, double hi) {
  std::vector<double> out;
  for (int k = 1; 0.05 * k <= last + 1e-9; ++k) {
    const double a = std::round(0.05 * k * 100) / 100;
    if (a < lo || a > hi) out.push_back(a);
  }
  return out;
}

DynamicsConfig parse_dynamics(Fields& top, Diagnostics& diag) {
  DynamicsConfig cfg;
  const json* runs = top.list("runs");
  if (!runs || runs->empty()) top.error("'runs' must list at least one run");
  std::set<std::string> names;
  for (std::size_t i = 0; runs && i < runs->size(); ++i) {
    Fields f((*runs)[i], "runs[" + std::to_string(i) + "]", diag);
    DynamicsRun r;
    r.name = read_name(f, names);
    r.params.method = f.choice("method", MethodKind::BN, parse_method);
    r.params.act = f.choice("act", ActivationKind::ReLU, parse_activation);
    r.params.eta = f.number("eta", r.params.eta);
    r.params.zeta = f.number("zeta", r.params.zeta);
    r.params.integrals = f.choice("integrals", IntegralMode::Closed, [](std::string_view s) {
      if (s == "closed") return IntegralMode::Closed;
      if (s == "quadrature") return IntegralMode::Quadrature;
      throw DomainError("unknown integral mode '" + std::string(s) + "'");
    });
    r.initial = read_state(f, "initial", r.initial, diag);
    r.t_end = f.number("t_end", r.t_end);
    r.dt = f.number("dt", r.dt);
    r.record_stride = static_cast<int>(f.integer("record_stride", r.record_stride));
    r.required = f.flag("required", r.required);
    f.finish();
    if (!(r.params.eta > 0)) f.error("eta > 0 required");
    if (!(r.params.zeta >= 0)) f.error("zeta ≥ 0 required");
    if (!(r.t_end > 0)) f.error("t_end > 0 required");
    if (!(r.dt > 0)) f.error("dt > 0 required");
    if (r.record_stride < 1) f.error("record_stride ≥ 1 required");
    cfg.runs.push_back(r);
  }
  return cfg;
}

json to_json(const DynamicsConfig& cfg) {
  json runs = json::array();
  for (const auto& r : cfg.runs)
    runs.push_back({{"name", r.name},
                    {"method", std::string(to_string(r.params.method))},
                    {"act", std::string(to_string(r.params.act))},
                    {"eta", r.params.eta},
                    {"zeta", r.params.zeta},
                    {"integrals", r.params.integrals == IntegralMode::Closed ? "closed" : "quadrature"},
                    {"initial", state_json(r.initial)},
                    {"t_end", r.t_end},
                    {"dt", r.dt},
                    {"record_stride", r.record_stride},
                    {"required", r.required}});
  return json{{"runs", runs}};
}

SimulateConfig parse_simulate(Fields& top, Diagnostics& diag) {
  SimulateConfig cfg;
  std::set<std::string> trajectory_names, curve_names;
  if (const json* runs = top.list("runs")) {
    for (std::size_t i = 0; i < runs->size(); ++i) {
      Fields f((*runs)[i], "runs[" + std::to_string(i) + "]", diag);
      OfflineRun r;
      r.name = read_name(f, trajectory_names);
      read_run_fields(f, r.cfg);
      r.seed = f.seed("seed");
      r.required = f.flag("required", r.required);
      f.finish();
      if (!(r.cfg.alpha > 0)) f.error("alpha > 0 required");
      check_run_fields(f, r.cfg, true);
      cfg.runs.push_back(r);
    }
  }
  if (const json* online = top.list("online")) {
    for (std::size_t i = 0; i < online->size(); ++i) {
      Fields f((*online)[i], "online[" + std::to_string(i) + "]", diag);
      OnlineRun r;
      r.name = read_name(f, trajectory_names);
      read_run_fields(f, r.cfg);
      r.seed = f.seed("seed");
      r.initial = read_state(f, "initial", r.initial, diag);
      r.t_end = f.number("t_end", r.t_end);
      r.record_every = f.number("record_every", r.record_every);
      r.required = f.flag("required", r.required);
      f.finish();
      check_run_fields(f, r.cfg, false);
      if (!(r.t_end > 0)) f.error("t_end > 0 required");
      if (!(r.record_every > 0)) f.error("record_every > 0 required");
      cfg.online.push_back(r);
    }
  }
  if (const json* sweeps = top.list("sweeps")) {
    for (std::size_t i = 0; i < sweeps->size(); ++i) {
      Fields f((*sweeps)[i], "sweeps[" + std::to_string(i) + "]", diag);
      SweepEntry s;
      s.spec.name = read_name(f, curve_names);
      read_run_fields(f, s.spec.base);
      s.seed = f.seed("seed");
      s.spec.alphas = f.numbers("alphas", {});
      s.spec.repeats = static_cast<int>(f.integer("repeats", s.spec.repeats));
      s.spec.required = f.flag("required", s.spec.required);
      f.finish();
      check_alphas(f, "alphas", s.spec.alphas);
      if (s.spec.repeats < 1) f.error("repeats ≥ 1 required");
      check_run_fields(f, s.spec.base, false);
      for (double a : s.spec.alphas) {
        TeacherStudentConfig c = s.spec.base;
        c.alpha = a;
        c.P = 0;
        if (a > 0 && c.N >= 64 && c.M >= 2 && std::lround(a * c.N) < c.M)
          f.error("alpha = " + fmt(a) + " gives fewer samples than the batch size");
      }
      if (s.spec.base.method == MethodKind::VanillaSGD) {
        if (s.spec.base.act == ActivationKind::ReLU) check_relu_pole(f, "alphas", s.spec.alphas);
        else check_identity_pole(f, "alphas", s.spec.alphas);
      }
      if (s.spec.base.P > 0) f.error("'P' is derived from each alpha in a sweep; remove it");
      cfg.sweeps.push_back(s);
    }
  }
  if (cfg.runs.empty() && cfg.online.empty() && cfg.sweeps.empty())
    top.error("nothing to simulate: give 'runs', 'online' or 'sweeps'");
  return cfg;
}

json to_json(const SimulateConfig& cfg) {
  json out;
  json runs = json::array();
  for (const auto& r : cfg.runs) {
    json j{{"name", r.name}};
    j.update(run_fields_json(r.cfg));
    if (r.seed) j["seed"] = *r.seed;
    j["required"] = r.required;
    runs.push_back(j);
  }
  json online = json::array();
  for (const auto& r : cfg.online) {
    json j{{"name", r.name}};
    j.update(run_fields_json(r.cfg));
    if (r.seed) j["seed"] = *r.seed;
    j["initial"] = state_json(r.initial);
    j["t_end"] = r.t_end;
    j["record_every"] = r.record_every;
    j["required"] = r.required;
    online.push_back(j);
  }
  json sweeps = json::array();
  for (const auto& s : cfg.sweeps) {
    json j{{"name", s.spec.name}};
    json fields = run_fields_json(s.spec.base);
    fields.erase("alpha");
    j.update(fields);
    if (s.seed) j["seed"] = *s.seed;
    j["alphas"] = s.spec.alphas;
    j["repeats"] = s.spec.repeats;
    j["required"] = s.spec.required;
    sweeps.push_back(j);
  }
  out["runs"] = runs;
  out["online"] = online;
  out["sweeps"] = sweeps;
  return out;
}

StatmechConfig parse_statmech(Fields& top, Diagnostics& diag) {
  StatmechConfig cfg;
  const json* curves = top.list("curves");
  if (!curves || curves->empty()) top.error("'curves' must list at least one curve");
  std::set<std::string> names;
  for (std::size_t i = 0; curves && i < curves->size(); ++i) {
    Fields f((*curves)[i], "curves[" + std::to_string(i) + "]", diag);
    CurveEntry c;
    c.name = read_name(f, names);
    c.kind = f.text("kind", "");
    c.S = f.number("S", c.S);
    c.zeta = f.number("zeta", c.zeta);
    c.alphas = f.numbers("alphas", {});
    f.finish();
    check_alphas(f, "alphas", c.alphas);
    if (!(c.S >= 0)) f.error("S ≥ 0 required");
    if (c.kind == "id_ord") {
      check_identity_pole(f, "alphas", c.alphas);
    } else if (c.kind == "relu_ord" || c.kind == "relu_equilibrium") {
      check_relu_pole(f, "alphas", c.alphas);
    } else if (c.kind == "id_wn") {
      if (!(c.zeta > 0)) f.error("zeta > 0 required for an id_wn curve");
    } else {
      f.error("'kind' must be one of id_ord, relu_ord, id_wn, relu_equilibrium");
    }
    cfg.curves.push_back(c);
  }
  return cfg;
}

json to_json(const StatmechConfig& cfg) {
  json curves = json::array();
  for (const auto& c : cfg.curves) {
    json j{{"name", c.name}, {"kind", c.kind}, {"S", c.S}};
    if (c.kind == "id_wn") j["zeta"] = c.zeta;
    j["alphas"] = c.alphas;
    curves.push_back(j);
  }
  return json{{"curves", curves}};
}

bool is_integer(double x) { return std::isfinite(x) && std::floor(x) == x; }

DecomposeConfig parse_decompose(Fields& f, Diagnostics& diag) {
  DecomposeConfig cfg;
  cfg.N = static_cast<int>(f.integer("N", cfg.N));
  cfg.P = static_cast<long>(f.integer("P", cfg.P));
  cfg.M = static_cast<int>(f.integer("M", cfg.M));
  cfg.n_mc = f.integer("n_mc", cfg.n_mc);
  cfg.S = f.number("S", cfg.S);
  cfg.student_noise = f.number("student_noise", cfg.student_noise);
  if (f.has("gamma")) cfg.gamma = f.number("gamma", 1.0);
  cfg.loss = f.choice("loss", cfg.loss, parse_loss);
  cfg.convention = f.choice("convention", cfg.convention, parse_convention);
  if (const json* p = f.object("priors")) {
    Fields pf(*p, "priors", diag);
    PriorsConfig pc;
    pc.distributions = pf.strings("distributions", pc.distributions);
    pc.M = pf.numbers("M", pc.M);
    pc.trials = pf.integer("trials", pc.trials);
    pc.samples = pf.integer("samples", pc.samples);
    pf.finish();
    for (const auto& d : pc.distributions) {
      try {
        parse_distribution(d);
      } catch (const DomainError& e) {
        pf.error(e.what());
      }
    }
    if (pc.M.empty()) pf.error("'M' must list at least one batch size");
    for (double m : pc.M)
      if (!is_integer(m) || m < 8) pf.error("batch sizes must be integers ≥ 8, got " + fmt(m));
    if (pc.trials < 10000) pf.error("trials ≥ 10000 required");
    if (pc.samples < 1000) pf.error("samples ≥ 1000 required");
    cfg.priors = pc;
  }
  cfg.zeta_exact_M = f.numbers("zeta_exact_M", {});
  if (cfg.N < 2) f.error("N ≥ 2 required");
  if (cfg.P < 1000) f.error("P ≥ 1000 required for the population moments");
  if (cfg.M < 5) f.error("M ≥ 5 required");
  if (cfg.M > cfg.P) f.error("M must not exceed P");
  if (cfg.n_mc < 2) f.error("n_mc ≥ 2 required");
  if (!(cfg.S >= 0)) f.error("S ≥ 0 required");
  if (!(cfg.student_noise >= 0)) f.error("student_noise ≥ 0 required");
  for (double m : cfg.zeta_exact_M)
    if (!is_integer(m) || m < 5) f.error("zeta_exact_M entries must be integers ≥ 5, got " + fmt(m));
  return cfg;
}

json to_json(const DecomposeConfig& cfg) {
  json j{{"N", cfg.N},           {"P", cfg.P},
         {"M", cfg.M},           {"n_mc", cfg.n_mc},
         {"S", cfg.S},           {"student_noise", cfg.student_noise},
         {"loss", std::string(to_string(cfg.loss))},
         {"convention", std::string(to_string(cfg.convention))}};
  if (cfg.gamma) j["gamma"] = *cfg.gamma;
  if (cfg.priors)
    j["priors"] = {{"distributions", cfg.priors->distributions},
                   {"M", cfg.priors->M},
                   {"trials", cfg.priors->trials},
                   {"samples", cfg.priors->samples}};
  j["zeta_exact_M"] = cfg.zeta_exact_M;
  return j;
}

FigureConfig parse_figure(Fields& f, bool relu) {
  FigureConfig cfg;
  cfg.relu = relu;
  TeacherStudentConfig& p = cfg.protocol;
  p.N = static_cast<int>(f.integer("N", 1024));
  p.M = static_cast<int>(f.integer("M", relu ? 16 : 32));
  p.S = f.number("S", 0.25);
  p.eta = f.number("eta", p.M);
  p.gamma_lr_scale = f.number("gamma_lr_scale", p.M >= 1 ? 1.0 / p.M : 1.0);
  p.lr_decay = f.number("lr_decay", 0.99);
  p.lr_decay_start = static_cast<int>(f.integer("lr_decay_start", 0));
  p.epochs = static_cast<int>(f.integer("epochs", 5000));
  p.tol = f.number("tol", 1e-6);
  p.test_samples = static_cast<std::size_t>(std::max(0LL, f.integer("test_samples", 20000)));
  p.act = relu ? ActivationKind::ReLU : ActivationKind::Identity;
  cfg.alphas = f.numbers("alphas", relu ? std::vector<double>{0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75}
                                        : std::vector<double>{0.25, 0.5, 0.75, 1.25, 1.5, 1.75});
  cfg.theory_alphas = f.numbers("theory_alphas", relu ? default_theory_grid(1.85, 1.9, 2.0)
                                                      : default_theory_grid(2.5, 0.95, 1.05));
  cfg.repeats = static_cast<int>(f.integer("repeats", cfg.repeats));
  if (!relu) cfg.wn_zeta = f.number("wn_zeta", cfg.wn_zeta);
  cfg.required = f.flag("required", cfg.required);
  check_alphas(f, "alphas", cfg.alphas);
  check_alphas(f, "theory_alphas", cfg.theory_alphas);
  if (relu) {
    check_relu_pole(f, "alphas", cfg.alphas);
    check_relu_pole(f, "theory_alphas", cfg.theory_alphas);
  } else {
    check_identity_pole(f, "theory_alphas", cfg.theory_alphas);
    if (!(cfg.wn_zeta > 0)) f.error("wn_zeta > 0 required");
  }
  if (cfg.repeats < 1) f.error("repeats ≥ 1 required");
  check_run_fields(f, p, false);
  for (double a : cfg.alphas)
    if (a > 0 && p.N >= 64 && p.M >= 2 && std::lround(a * p.N) < p.M)
      f.error("alpha = " + fmt(a) + " gives fewer samples than the batch size");
  return cfg;
}

json to_json(const FigureConfig& cfg) {
  const auto& p = cfg.protocol;
  json j{{"N", p.N},
         {"M", p.M},
         {"S", p.S},
         {"eta", p.eta},
         {"gamma_lr_scale", p.gamma_lr_scale},
         {"lr_decay", p.lr_decay},
         {"lr_decay_start", p.lr_decay_start},
         {"epochs", p.epochs},
         {"tol", p.tol},
         {"test_samples", p.test_samples},
         {"alphas", cfg.alphas},
         {"theory_alphas", cfg.theory_alphas},
         {"repeats", cfg.repeats}};
  if (!cfg.relu) j["wn_zeta"] = cfg.wn_zeta;
  j["required"] = cfg.required;
  return j;
}

struct Parsed {
  Command command = Command::Figure1a;
  std::optional<Seed> seed;
  CommandConfig config;
};

// Parses a configuration document (or the config inside a manifest) for `command`.
std::optional<Parsed> parse_document(const json& doc, std::optional<Command> command, Diagnostics& diag) {
  const json* body = &doc;
  if (doc.is_object() && doc.contains("manifest_version")) {
    if (!doc.contains("config") || !doc.at("config").is_object()) {
      diag.push_back("manifest has no 'config' object");
      return std::nullopt;
    }
    body = &doc.at("config");
  }
  Fields top(*body, "", diag);
  Parsed out;
  const std::string named = top.text("command", "");
  std::optional<Command> from_file;
  if (!named.empty()) {
    from_file = parse_command(named);
    if (!from_file) top.error("unknown command '" + named + "'");
  }
  if (command && from_file && *command != *from_file)
    top.error("config is written for command '" + named + "', not '" + std::string(to_string(*command)) + "'");
  if (!command && !from_file) {
    if (named.empty()) top.error("no command given and the config has no 'command' field");
    return std::nullopt;
  }
  out.command = command ? *command : *from_file;
  out.seed = top.seed("seed");
  switch (out.command) {
    case Command::Dynamics: out.config = parse_dynamics(top, diag); break;
    case Command::Simulate: out.config = parse_simulate(top, diag); break;
    case Command::Statmech: out.config = parse_statmech(top, diag); break;
    case Command::Decompose: out.config = parse_decompose(top, diag); break;
    case Command::Figure1a: out.config = parse_figure(top, false); break;
    case Command::Figure1b: out.config = parse_figure(top, true); break;
  }
  top.finish();
  return out;
}

std::optional<json> load_json(const fs::path& path, Diagnostics& diag) {
  std::ifstream in(path);
  if (!in) {
    diag.push_back("cannot open config file '" + path.string() + "'");
    return std::nullopt;
  }
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    diag.push_back("config file '" + path.string() + "' is not valid JSON: " + e.what());
    return std::nullopt;
  }
}

// ---------------------------------------------------------------------------
// Execution.

struct OutputFile {
  std::string name;
  std::string content;
  json seeds = json::array();
};

struct Outcome {
  std::vector<OutputFile> files;
  std::vector<std::string> diverged;   // required items that diverged
};

// The (point, repeat) runs of a sweep in point-major order.
std::vector<TeacherStudentConfig> sweep_runs(const SweepSpec& spec) {
  std::vector<TeacherStudentConfig> runs;
  for (std::size_t k = 0; k < spec.alphas.size(); ++k) {
    const Seed point_seed = sweep_point_seed(spec.base.seed, k);
    for (int r = 0; r < spec.repeats; ++r) {
      TeacherStudentConfig c = spec.base;
      c.alpha = spec.alphas[k];
      c.P = 0;
      c.seed = r == 0 ? point_seed : derive_seed(point_seed, static_cast<std::uint64_t>(r));
      runs.push_back(c);
    }
  }
  return runs;
}

struct RunSummary {
  double gen_error = kNaN;
  bool diverged = false;
};

std::vector<SweepPoint> assemble_sweep(const SweepSpec& spec, const std::vector<RunSummary>& results) {
  std::vector<SweepPoint> points;
  const auto R = static_cast<std::size_t>(spec.repeats);
  for (std::size_t k = 0; k < spec.alphas.size(); ++k) {
    SweepPoint p;
    p.alpha = spec.alphas[k];
    p.method = spec.base.method;
    p.M = spec.base.M;
    p.zeta = spec.base.method == MethodKind::BN
                 ? 1.0 / ((spec.base.act == ActivationKind::ReLU ? 4.0 : 2.0) * spec.base.M)
                 : spec.base.zeta;
    p.seed = sweep_point_seed(spec.base.seed, k);
    p.gen_error_theory = sweep_theory(spec.base, p.alpha);
    double sum = 0, sum_sq = 0;
    int n = 0;
    for (std::size_t r = 0; r < R; ++r) {
      const auto& res = results[k * R + r];
      if (res.diverged || !std::isfinite(res.gen_error)) {
        p.diverged = true;
        continue;
      }
      sum += res.gen_error;
      sum_sq += res.gen_error * res.gen_error;
      ++n;
    }
    p.gen_error_sim = n > 0 ? sum / n : kNaN;
    p.gen_error_sim_spread = n > 1 ? std::sqrt(std::max(0.0, (sum_sq - sum * sum / n) / (n - 1)) / n) : 0.0;
    points.push_back(p);
  }
  return points;
}

RunSummary summarize(const RunResult& r) { return {r.diverged ? kNaN : r.gen_error, r.diverged}; }

// Runs every task on the pool; tasks write only to their own result slot.
void run_tasks(std::vector<std::function<void()>>& tasks, int jobs) {
  parallel_for(tasks.size(), jobs, [&](std::size_t i) { tasks[i](); });
}

// Schedules a sweep; the returned closure assembles its points once the tasks have run.
std::function<std::vector<SweepPoint>()> schedule_sweep(const SweepSpec& spec,
                                                        std::vector<std::function<void()>>& tasks) {
  auto runs = std::make_shared<std::vector<TeacherStudentConfig>>(sweep_runs(spec));
  auto results = std::make_shared<std::vector<RunSummary>>(runs->size());
  for (std::size_t i = 0; i < runs->size(); ++i)
    tasks.push_back([runs, results, i] { (*results)[i] = summarize(run_experiment((*runs)[i])); });
  return [spec, results] { return assemble_sweep(spec, *results); };
}

json sweep_seeds(const std::vector<SweepPoint>& points) {
  json seeds = json::array();
  for (const auto& p : points) seeds.push_back(p.seed);
  return seeds;
}

void add_sweep_output(Outcome& out, const std::string& name, const std::vector<SweepPoint>& points, bool required) {
  out.files.push_back({"curve_" + name + ".csv", sweep_csv(points), sweep_seeds(points)});
  if (required)
    for (const auto& p : points)
      if (p.diverged) out.diverged.push_back("sweep '" + name + "' at alpha = " + fmt(p.alpha));
}

Outcome execute(const DynamicsConfig& cfg, Seed, int jobs) {
  std::vector<Trajectory> results(cfg.runs.size());
  parallel_for(cfg.runs.size(), jobs, [&](std::size_t i) {
    const auto& r = cfg.runs[i];
    results[i] = integrate(r.initial, r.params, r.t_end, r.dt, r.record_stride);
  });
  Outcome out;
  for (std::size_t i = 0; i < cfg.runs.size(); ++i) {
    out.files.push_back({"trajectory_" + cfg.runs[i].name + ".csv", trajectory_csv(results[i])});
    if (results[i].diverged && cfg.runs[i].required) out.diverged.push_back("run '" + cfg.runs[i].name + "'");
  }
  return out;
}

Outcome execute(const SimulateConfig& cfg, Seed seed, int jobs) {
  std::vector<std::function<void()>> tasks;
  std::vector<RunResult> offline(cfg.runs.size());
  std::vector<Seed> offline_seeds(cfg.runs.size());
  for (std::size_t i = 0; i < cfg.runs.size(); ++i) {
    TeacherStudentConfig c = cfg.runs[i].cfg;
    c.seed = cfg.runs[i].seed.value_or(derive_seed(derive_seed(seed, kStreamRuns), i));
    offline_seeds[i] = c.seed;
    tasks.push_back([c, &offline, i] { offline[i] = run_experiment(c); });
  }
  std::vector<Trajectory> online(cfg.online.size());
  std::vector<Seed> online_seeds(cfg.online.size());
  for (std::size_t i = 0; i < cfg.online.size(); ++i) {
    TeacherStudentConfig c = cfg.online[i].cfg;
    c.seed = cfg.online[i].seed.value_or(derive_seed(derive_seed(seed, kStreamOnline), i));
    online_seeds[i] = c.seed;
    const auto& r = cfg.online[i];
    tasks.push_back([c, &r, &online, i] { online[i] = run_online(c, r.initial, r.t_end, r.record_every); });
  }
  std::vector<std::function<std::vector<SweepPoint>()>> sweeps;
  for (std::size_t i = 0; i < cfg.sweeps.size(); ++i) {
    SweepSpec spec = cfg.sweeps[i].spec;
    spec.base.seed = cfg.sweeps[i].seed.value_or(derive_seed(derive_seed(seed, kStreamSweeps), i));
    sweeps.push_back(schedule_sweep(spec, tasks));
  }
  run_tasks(tasks, jobs);

  Outcome out;
  for (std::size_t i = 0; i < cfg.runs.size(); ++i) {
    out.files.push_back({"trajectory_" + cfg.runs[i].name + ".csv", run_trace_csv(offline[i]), {offline_seeds[i]}});
    if (offline[i].diverged && cfg.runs[i].required) out.diverged.push_back("run '" + cfg.runs[i].name + "'");
  }
  for (std::size_t i = 0; i < cfg.online.size(); ++i) {
    out.files.push_back({"trajectory_" + cfg.online[i].name + ".csv", trajectory_csv(online[i]), {online_seeds[i]}});
    if (online[i].diverged && cfg.online[i].required) out.diverged.push_back("online run '" + cfg.online[i].name + "'");
  }
  for (std::size_t i = 0; i < cfg.sweeps.size(); ++i)
    add_sweep_output(out, cfg.sweeps[i].spec.name, sweeps[i](), cfg.sweeps[i].spec.required);
  return out;
}

std::vector<GenCurvePoint> theory_curve(const CurveEntry& c) {
  std::vector<GenCurvePoint> points;
  for (double a : c.alphas) {
    GenCurvePoint p{a, kNaN, MethodKind::VanillaSGD, c.S, 0.0};
    if (c.kind == "id_ord") {
      p.eps = eps_id_ord(a, c.S);
    } else if (c.kind == "relu_ord") {
      p.eps = eps_relu_ord(a, c.S);
    } else if (c.kind == "id_wn") {
      p.method = MethodKind::WNGammaDecay;
      p.zeta = c.zeta;
      p.eps = eps_id_wn(a, c.zeta, c.S);
    } else {
      const auto eq = solve_equilibrium(a, c.S);
      p.eps = eq.converged ? gen_integral(eq.gamma, eq.R, ActivationKind::Identity, ActivationKind::ReLU) : kNaN;
    }
    points.push_back(p);
  }
  return points;
}

Outcome execute(const StatmechConfig& cfg, Seed, int jobs) {
  std::vector<std::vector<GenCurvePoint>> curves(cfg.curves.size());
  parallel_for(cfg.curves.size(), jobs, [&](std::size_t i) { curves[i] = theory_curve(cfg.curves[i]); });
  Outcome out;
  for (std::size_t i = 0; i < cfg.curves.size(); ++i)
    out.files.push_back({"curve_" + cfg.curves[i].name + ".csv", curve_csv(curves[i])});
  return out;
}

json moment_json(const MomentCheck& m) {
  return json{{"name", m.name},
              {"empirical", m.empirical},
              {"predicted", m.predicted},
              {"std_error", m.std_error},
              {"relative_deviation", m.relative_deviation()},
              {"z", m.z()},
              {"pass", m.pass()}};
}

Outcome execute(const DecomposeConfig& cfg, Seed seed, int jobs) {
  const Seed base = derive_seed(seed, kStreamDecompose);
  auto fixture = make_decompose_fixture(cfg.N, cfg.P, cfg.S, cfg.student_noise, base);
  if (cfg.gamma) fixture.student.gamma = *cfg.gamma;

  struct PriorJob {
    SampleDistribution dist;
    int M;
  };
  std::vector<PriorJob> prior_jobs;
  if (cfg.priors)
    for (const auto& d : cfg.priors->distributions)
      for (double m : cfg.priors->M) prior_jobs.push_back({parse_distribution(d), static_cast<int>(m)});
  std::vector<PriorReport> priors(prior_jobs.size());
  DecompositionReport report;

  std::vector<std::function<void()>> tasks;
  tasks.push_back([&] {
    report = decompose_check(fixture.data, fixture.student, cfg.M, static_cast<std::size_t>(cfg.n_mc),
                             derive_seed(base, 5), cfg.loss, cfg.convention);
  });
  const Seed prior_base = derive_seed(seed, kStreamPriors);
  for (std::size_t i = 0; i < prior_jobs.size(); ++i) {
    tasks.push_back([&, i] {
      const auto& job = prior_jobs[i];
      const auto h = sample_distribution(job.dist, static_cast<std::size_t>(cfg.priors->samples),
                                         derive_seed(prior_base, 2 * i));
      priors[i] = verify_priors(h, job.M, static_cast<std::size_t>(cfg.priors->trials), derive_seed(prior_base, 2 * i + 1));
    });
  }
  run_tasks(tasks, jobs);

  json doc = json::parse(report_json(report));
  if (cfg.priors) {
    json list = json::array();
    for (std::size_t i = 0; i < priors.size(); ++i) {
      const auto& p = priors[i];
      json checks = json::array();
      for (const auto* c : p.checks()) checks.push_back(moment_json(*c));
      list.push_back({{"distribution", std::string(to_string(prior_jobs[i].dist))},
                      {"M", p.M},
                      {"trials", p.trials},
                      {"mu_P", p.population.mu_P},
                      {"sigma_P", p.population.sigma_P},
                      {"rho", p.population.rho},
                      {"checks", checks},
                      {"pass", p.pass()}});
    }
    doc["priors"] = list;
  }
  if (!cfg.zeta_exact_M.empty()) {
    json list = json::array();
    for (double m : cfg.zeta_exact_M) {
      const int M = static_cast<int>(m);
      const double z = linear_zeta_exact(M);
      list.push_back({{"M", M}, {"zeta", z}, {"M_times_zeta", M * z}});
    }
    doc["linear_zeta_exact"] = list;
  }
  Outcome out;
  out.files.push_back({"decompose_report.json", doc.dump(2) + "\n", {base}});
  return out;
}

Outcome execute(const FigureConfig& cfg, Seed seed, int jobs) {
  const auto& p = cfg.protocol;
  const double M = p.M;
  Outcome out;
  auto theory = [&](const std::string& name, MethodKind method, double S, double zeta, auto eps) {
    std::vector<GenCurvePoint> points;
    for (double a : cfg.theory_alphas) points.push_back({a, eps(a), method, S, zeta});
    out.files.push_back({"curve_" + name + ".csv", curve_csv(points)});
  };

  std::vector<std::pair<std::string, SweepSpec>> sims;
  auto sim = [&](const std::string& name, MethodKind method, double zeta) {
    SweepSpec spec;
    spec.name = name;
    spec.base = p;
    spec.base.method = method;
    spec.base.zeta = zeta;
    spec.base.seed = derive_seed(derive_seed(seed, kStreamSweeps), sims.size());
    spec.alphas = cfg.alphas;
    spec.repeats = cfg.repeats;
    spec.required = cfg.required;
    sims.emplace_back(name, spec);
  };

  if (!cfg.relu) {
    theory("theory_sgd", MethodKind::VanillaSGD, p.S, 0.0, [&](double a) { return eps_id_ord(a, p.S); });
    theory("theory_wn_zeta_1_over_2M", MethodKind::WNGammaDecay, p.S, 1 / (2 * M),
           [&](double a) { return eps_id_wn(a, 1 / (2 * M), p.S); });
    theory("theory_wn_zeta_" + fmt(cfg.wn_zeta), MethodKind::WNGammaDecay, p.S, cfg.wn_zeta,
           [&](double a) { return eps_id_wn(a, cfg.wn_zeta, p.S); });
    sim("bn_sim", MethodKind::BN, 0.0);
  } else {
    theory("theory_relu_ord", MethodKind::VanillaSGD, p.S, 0.0, [&](double a) { return eps_relu_ord(a, p.S); });
    theory("theory_relu_lower_bound", MethodKind::VanillaSGD, 0.0, 0.0, [&](double a) { return eps_relu_ord(a, 0.0); });
    sim("wn_gamma_decay_sim", MethodKind::WNGammaDecay, 1 / (4 * M));
    sim("bn_sim", MethodKind::BN, 0.0);
  }

  std::vector<std::function<void()>> tasks;
  std::vector<std::function<std::vector<SweepPoint>()>> assembled;
  for (const auto& [name, spec] : sims) assembled.push_back(schedule_sweep(spec, tasks));
  run_tasks(tasks, jobs);
  for (std::size_t i = 0; i < sims.size(); ++i) add_sweep_output(out, sims[i].first, assembled[i](), cfg.required);
  return out;
}

json versions() {
  return json{{"bnlab", kVersion},
              {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION)},
              {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
              {"compiler", __VERSION__}};
}

json resolved_config(const Parsed& parsed, Seed seed) {
  json j{{"command", std::string(to_string(parsed.command))}, {"seed", seed}};
  j.update(std::visit([](const auto& c) { return to_json(c); }, parsed.config));
  return j;
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

// Data rows of a CSV whose header must equal `header`.
std::vector<std::vector<std::string>> csv_rows(std::string_view text, const std::vector<std::string>& header) {
  auto lines = split(text, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty() || split(lines[0], ',') != header) throw DomainError("unexpected CSV header");
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto cells = split(lines[i], ',');
    if (cells.size() != header.size()) throw DomainError("CSV row " + std::to_string(i) + " has the wrong width");
    rows.push_back(std::move(cells));
  }
  return rows;
}

double to_double(const std::string& s) {
  double x = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw DomainError("not a number: '" + s + "'");
  return x;
}

template <typename T>
T to_integer(const std::string& s) {
  T x = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw DomainError("not an integer: '" + s + "'");
  return x;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string_view to_string(Command c) {
  switch (c) {
    case Command::Dynamics: return "dynamics";
    case Command::Simulate: return "simulate";
    case Command::Statmech: return "statmech";
    case Command::Decompose: return "decompose";
    case Command::Figure1a: return "figure1a";
    case Command::Figure1b: return "figure1b";
  }
  return "?";
}

std::optional<Command> parse_command(std::string_view name) {
  for (Command c : {Command::Dynamics, Command::Simulate, Command::Statmech, Command::Decompose, Command::Figure1a,
                    Command::Figure1b})
    if (to_string(c) == name) return c;
  return std::nullopt;
}

namespace {
std::string join(const std::vector<std::string>& lines) {
  std::string s;
  for (const auto& l : lines) s += (s.empty() ? "" : "; ") + l;
  return s;
}
}  // namespace

ConfigError::ConfigError(std::vector<std::string> diagnostics)
    : std::runtime_error("invalid configuration: " + join(diagnostics)), diagnostics_(std::move(diagnostics)) {}

Seed sweep_point_seed(Seed base, std::size_t k) { return derive_seed(base, k); }

double sweep_theory(const TeacherStudentConfig& cfg, double alpha) {
  if (cfg.teacher_act != ActivationKind::Identity) return kNaN;
  try {
    const bool relu = cfg.act == ActivationKind::ReLU;
    switch (cfg.method) {
      case MethodKind::VanillaSGD:
        if (relu) return alpha < 2 ? eps_relu_ord(alpha, cfg.S) : kNaN;
        return eps_id_ord(alpha, cfg.S);
      case MethodKind::WNGammaDecay:
        if (relu) return kNaN;
        return cfg.zeta > 0 ? eps_id_wn(alpha, cfg.zeta, cfg.S) : eps_id_ord(alpha, cfg.S);
      case MethodKind::BN:
        return relu ? kNaN : eps_id_wn(alpha, 1.0 / (2.0 * cfg.M), cfg.S);
      case MethodKind::WN:
        return kNaN;
    }
  } catch (const DomainError&) {
  }
  return kNaN;
}

std::vector<SweepPoint> run_sweep(const SweepSpec& spec, int jobs) {
  std::vector<std::function<void()>> tasks;
  auto assemble = schedule_sweep(spec, tasks);
  run_tasks(tasks, jobs);
  return assemble();
}

std::string sweep_csv(const std::vector<SweepPoint>& points) {
  CsvWriter csv({"alpha", "gen_error_sim", "gen_error_theory", "method", "M", "zeta", "seed"});
  for (const auto& p : points) {
    csv.cell(p.alpha).cell(p.gen_error_sim).cell(p.gen_error_theory).cell(to_string(p.method));
    csv.cell(static_cast<long long>(p.M)).cell(p.zeta).cell(std::string_view(std::to_string(p.seed)));
    csv.end_row();
  }
  return csv.str();
}

std::string run_trace_csv(const RunResult& r) {
  CsvWriter csv({"epoch", "Q", "R", "L", "train_loss"});
  for (std::size_t i = 0; i < r.order_trace.times.size(); ++i) {
    const auto& s = r.order_trace.states[i];
    csv.cell(static_cast<long long>(std::llround(r.order_trace.times[i]))).cell(s.Q).cell(s.R).cell(s.L);
    csv.cell(i < r.train_loss_trace.size() ? r.train_loss_trace[i] : kNaN);
    csv.end_row();
  }
  return csv.str();
}

std::vector<SweepPoint> parse_sweep_csv(std::string_view text) {
  std::vector<SweepPoint> points;
  for (const auto& row : csv_rows(text, {"alpha", "gen_error_sim", "gen_error_theory", "method", "M", "zeta", "seed"})) {
    SweepPoint p;
    p.alpha = to_double(row[0]);
    p.gen_error_sim = to_double(row[1]);
    p.gen_error_theory = to_double(row[2]);
    p.method = parse_method(row[3]);
    p.M = to_integer<int>(row[4]);
    p.zeta = to_double(row[5]);
    p.seed = to_integer<Seed>(row[6]);
    p.diverged = !std::isfinite(p.gen_error_sim);
    points.push_back(p);
  }
  return points;
}

std::vector<GenCurvePoint> parse_curve_csv(std::string_view text) {
  std::vector<GenCurvePoint> points;
  for (const auto& row : csv_rows(text, {"alpha", "eps", "method", "S", "zeta"}))
    points.push_back({to_double(row[0]), to_double(row[1]), parse_method(row[2]), to_double(row[3]), to_double(row[4])});
  return points;
}

Trajectory parse_trajectory_csv(std::string_view text) {
  const auto header = split(text.substr(0, text.find('\n')), ',');
  const bool per_run = !header.empty() && header[0] == "epoch";
  const auto rows = per_run ? csv_rows(text, {"epoch", "Q", "R", "L", "train_loss"}) : csv_rows(text, {"t", "Q", "R", "L"});
  Trajectory traj;
  for (const auto& row : rows) {
    traj.times.push_back(to_double(row[0]));
    traj.states.push_back({to_double(row[1]), to_double(row[2]), to_double(row[3])});
  }
  return traj;
}

DecomposeFixture make_decompose_fixture(int N, long P, double S, double student_noise, Seed seed) {
  DecomposeFixture f;
  const auto teacher = make_teacher(N, derive_seed(seed, 1));
  f.data.X = sample_inputs(N, static_cast<std::size_t>(P), derive_seed(seed, 2));
  f.data.y = teacher_labels(teacher, f.data.X, ActivationKind::Identity, S, derive_seed(seed, 3));
  Engine engine = make_engine(derive_seed(seed, 4));
  std::normal_distribution<double> normal;
  f.student.w = teacher;
  for (Eigen::Index i = 0; i < N; ++i) f.student.w(i) += student_noise * normal(engine);
  const Eigen::VectorXd h = f.data.X.transpose() * f.student.w;
  const Eigen::ArrayXd c = h.array() - h.mean();
  const Eigen::ArrayXd n = c / std::sqrt(c.square().mean());
  f.student.gamma = (n * f.data.y.array()).sum() / n.square().sum();
  return f;
}

std::vector<std::string> validate_config(const fs::path& config_path, std::optional<Command> command) {
  Diagnostics diag;
  if (const auto doc = load_json(config_path, diag)) parse_document(*doc, command, diag);
  return diag;
}

int run(const ExperimentSpec& spec, std::ostream& log) {
  Diagnostics diag;
  const auto doc = load_json(spec.config_path, diag);
  std::optional<Parsed> parsed;
  if (doc) parsed = parse_document(*doc, spec.command, diag);
  if (spec.jobs < 1) diag.push_back("--jobs must be >= 1");
  if (!diag.empty() || !parsed) {
    for (const auto& d : diag) log << "config error: " << d << '\n';
    return kExitConfig;
  }
  Seed seed = kDefaultSeed;
  if (parsed->seed) seed = *parsed->seed;
  if (spec.seed) seed = *spec.seed;

  std::error_code ec;
  fs::create_directories(spec.out_dir, ec);
  if (ec || !fs::is_directory(spec.out_dir)) {
    log << "config error: cannot create output directory '" << spec.out_dir.string() << "'\n";
    return kExitConfig;
  }

  Outcome outcome;
  try {
    outcome = std::visit([&](const auto& c) { return execute(c, seed, spec.jobs); }, parsed->config);
  } catch (const DomainError& e) {
    log << "config error: " << e.what() << '\n';
    return kExitConfig;
  }

  json outputs = json::array();
  for (const auto& f : outcome.files) {
    std::ofstream file(spec.out_dir / f.name, std::ios::binary);
    file << f.content;
    if (!file) {
      log << "config error: cannot write '" << (spec.out_dir / f.name).string() << "'\n";
      return kExitConfig;
    }
    outputs.push_back({{"file", f.name}, {"bytes", f.content.size()}, {"seeds", f.seeds}});
  }
  json manifest{{"manifest_version", kManifestVersion},
                {"command", std::string(to_string(parsed->command))},
                {"seed", seed},
                {"versions", versions()},
                {"config", resolved_config(*parsed, seed)},
                {"outputs", outputs},
                {"diverged", outcome.diverged}};
  std::ofstream(spec.out_dir / "manifest.json", std::ios::binary) << manifest.dump(2) << '\n';

  for (const auto& d : outcome.diverged) log << "diverged: " << d << '\n';
  return outcome.diverged.empty() ? kExitOk : kExitDiverged;
}

}  // namespace bnlab
