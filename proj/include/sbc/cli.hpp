#pragma once

#include <json.hpp>

#include <complex>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "analysis.hpp"

namespace sbc::cli {

using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

enum ExitCode { kOk = 0, kConfigError = 2, kTotalFailure = 3 };

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string path, const std::string& msg) : std::runtime_error(path + ": " + msg), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

struct Anchor {
  std::array<double, 2> h{0.2, -0.1};
  std::array<std::complex<double>, 2> Gamma{std::polar(1.0, 0.3), std::polar(1.0, -0.7)};
  std::complex<double> y{0.0, 0.0};
};

// geometric; the default reaches 10^-4.75 so that the differenced h-signal covers [1e-4, 1e-2]
struct EpsGrid {
  double from = 1e-2, to = 1.778279410038923e-05;
  int count = 23;
};

struct BlockSection {
  Anchor anchor;
  std::array<double, 3> direction{0.3, 0.8, -0.5};
  std::vector<std::array<double, 3>> directions;  // exponent: explicit directions
  int random_directions = 0;                      // exponent: extra directions drawn from the seed
  EpsGrid eps;
  double rho = 0.3, box = 1.0, widen = 1.5, r0 = 1e-7;
  int annihilate = 5;
  bool rerun = true;
};

struct SimulateSection {
  std::string field = "XH";
  double tau_max = 1.0;
  int sample_every = 1;
  std::array<std::complex<double>, 2> zeta{std::complex<double>(0.2, 0.05), std::complex<double>(-0.15, 0.1)};
  std::array<double, 2> h{0.1, 0.05};
  std::array<std::complex<double>, 2> Gamma{1.0, 1.0};
  std::complex<double> x{3.0, 0.0}, y{0.0, 0.0};
};

struct InvariantsSection {
  int trajectories = 50;
  double tau_span = 10.0;
  double tol = 1e-13;
  int kepler_trajectories = 10;
  int lemma_states = 1000;
  int kseries_states = 5;
};

struct ManifoldSection {
  int orbits = 20;
  double s_span = 5.0;
  int fibers = 10;
  int mass_sets = 3;
  int transversality_points = 100;
};

struct ExperimentConfig {
  int schema_version = kSchemaVersion;
  std::string kind = "exponent";
  std::array<double, 4> masses{1.0, 1.0, 1.0, 1.0};
  std::string precision = "standard";
  std::uint64_t seed = 1;
  int threads = 1;
  double rtol = 1e-13, atol = 1e-13, event_tol = 1e-14;
  long max_steps = 2000000;
  std::string out = ".";
  SimulateSection simulate;
  BlockSection block;
  InvariantsSection invariants;
  ManifoldSection manifold;

  IntegratorConfig integrator() const {
    IntegratorConfig c;
    c.rtol = rtol;
    c.atol = atol;
    c.event_tol = event_tol;
    c.max_steps = max_steps;
    c.precision = precision == "extended" ? Precision::extended : Precision::standard;
    return c;
  }
};

inline const std::vector<std::string>& kinds() {
  static const std::vector<std::string> k{"simulate", "blockmap", "exponent", "invariants", "collision-manifold"};
  return k;
}

// ---- JSON <-> config ----

namespace detail {

inline json cplx(std::complex<double> z) { return json::array({z.real(), z.imag()}); }

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  void only(std::initializer_list<const char*> keys) const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      bool known = false;
      for (const char* k : keys) known = known || it.key() == k;
      if (!known) throw ConfigError(at(it.key()), "unknown key");
    }
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const char* key) const { return j_.contains(key); }
  const json& raw(const char* key) const { return j_.at(key); }

  void num(const char* key, double& out) const {
    if (!has(key)) return;
    out = number(j_.at(key), at(key));
  }

  template <class I>
  void integer(const char* key, I& out) const {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number_integer()) throw ConfigError(at(key), "expected an integer");
    out = v.get<I>();
  }

  void boolean(const char* key, bool& out) const {
    if (!has(key)) return;
    if (!j_.at(key).is_boolean()) throw ConfigError(at(key), "expected true or false");
    out = j_.at(key).get<bool>();
  }

  void str(const char* key, std::string& out) const {
    if (!has(key)) return;
    if (!j_.at(key).is_string()) throw ConfigError(at(key), "expected a string");
    out = j_.at(key).get<std::string>();
  }

  template <std::size_t N>
  void nums(const char* key, std::array<double, N>& out) const {
    if (has(key)) out = fixed<N>(j_.at(key), at(key));
  }

  void complex(const char* key, std::complex<double>& out) const {
    if (has(key)) out = to_complex(j_.at(key), at(key));
  }

  void complex2(const char* key, std::array<std::complex<double>, 2>& out) const {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_array() || v.size() != 2) throw ConfigError(at(key), "expected two [re, im] pairs");
    for (int i = 0; i < 2; ++i) out[i] = to_complex(v[i], at(key) + "[" + std::to_string(i) + "]");
  }

  static double number(const json& v, const std::string& path) {
    if (!v.is_number()) throw ConfigError(path, "expected a number");
    double d = v.get<double>();
    if (!std::isfinite(d)) throw ConfigError(path, "must be finite");
    return d;
  }

  template <std::size_t N>
  static std::array<double, N> fixed(const json& v, const std::string& path) {
    if (!v.is_array() || v.size() != N) throw ConfigError(path, "expected an array of " + std::to_string(N) + " numbers");
    std::array<double, N> a{};
    for (std::size_t i = 0; i < N; ++i) a[i] = number(v[i], path + "[" + std::to_string(i) + "]");
    return a;
  }

  static std::complex<double> to_complex(const json& v, const std::string& path) {
    auto a = fixed<2>(v, path);
    return {a[0], a[1]};
  }

 private:
  const json& j_;
  std::string path_;
};

inline void require(bool ok, const std::string& path, const std::string& msg) {
  if (!ok) throw ConfigError(path, msg);
}

inline void check_unit(std::complex<double> g, const std::string& path) {
  require(std::abs(std::abs(g) - 1.0) <= 1e-12, path, "must have unit modulus");
}

}  // namespace detail

inline json to_json(const ExperimentConfig& c) {
  using detail::cplx;
  json j;
  j["schema_version"] = c.schema_version;
  j["kind"] = c.kind;
  j["masses"] = c.masses;
  j["precision"] = c.precision;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["integrator"] = {{"rtol", c.rtol}, {"atol", c.atol}, {"event_tol", c.event_tol}, {"max_steps", c.max_steps}};
  j["out"] = c.out;
  const auto& s = c.simulate;
  j["simulate"] = {{"field", s.field},
                   {"tau_max", s.tau_max},
                   {"sample_every", s.sample_every},
                   {"state",
                    {{"zeta", json::array({cplx(s.zeta[0]), cplx(s.zeta[1])})},
                     {"h", s.h},
                     {"Gamma", json::array({cplx(s.Gamma[0]), cplx(s.Gamma[1])})},
                     {"x", cplx(s.x)},
                     {"y", cplx(s.y)}}}};
  const auto& b = c.block;
  json dirs = json::array();
  for (const auto& d : b.directions) dirs.push_back(d);
  j["block"] = {{"anchor",
                 {{"h", b.anchor.h},
                  {"Gamma", json::array({cplx(b.anchor.Gamma[0]), cplx(b.anchor.Gamma[1])})},
                  {"y", cplx(b.anchor.y)}}},
                {"direction", b.direction},
                {"directions", dirs},
                {"random_directions", b.random_directions},
                {"eps", {{"from", b.eps.from}, {"to", b.eps.to}, {"count", b.eps.count}}},
                {"rho", b.rho},
                {"box", b.box},
                {"widen", b.widen},
                {"r0", b.r0},
                {"annihilate", b.annihilate},
                {"rerun", b.rerun}};
  const auto& v = c.invariants;
  j["invariants"] = {{"trajectories", v.trajectories}, {"tau_span", v.tau_span},
                     {"tol", v.tol},                   {"kepler_trajectories", v.kepler_trajectories},
                     {"lemma_states", v.lemma_states}, {"kseries_states", v.kseries_states}};
  const auto& m = c.manifold;
  j["collision_manifold"] = {{"orbits", m.orbits},
                             {"s_span", m.s_span},
                             {"fibers", m.fibers},
                             {"mass_sets", m.mass_sets},
                             {"transversality_points", m.transversality_points}};
  return j;
}

inline ExperimentConfig from_json(const json& j) {
  using detail::Reader;
  using detail::require;
  ExperimentConfig c;
  Reader r(j, "");
  r.only({"schema_version", "kind", "masses", "precision", "seed", "threads", "integrator", "out", "simulate", "block",
          "invariants", "collision_manifold"});
  require(r.has("schema_version"), "schema_version", "missing");
  r.integer("schema_version", c.schema_version);
  require(c.schema_version == kSchemaVersion, "schema_version",
          "unsupported version " + std::to_string(c.schema_version) + " (expected " + std::to_string(kSchemaVersion) + ")");
  r.str("kind", c.kind);
  require(std::find(kinds().begin(), kinds().end(), c.kind) != kinds().end(), "kind", "unknown experiment kind '" + c.kind + "'");
  r.nums("masses", c.masses);
  for (int i = 0; i < 4; ++i) require(c.masses[i] > 0.0, "masses[" + std::to_string(i) + "]", "must be positive");
  r.str("precision", c.precision);
  require(c.precision == "standard" || c.precision == "extended", "precision", "expected 'standard' or 'extended'");
  r.integer("seed", c.seed);
  r.integer("threads", c.threads);
  require(c.threads >= 1, "threads", "must be at least 1");
  r.str("out", c.out);

  if (r.has("integrator")) {
    Reader g(r.raw("integrator"), "integrator");
    g.only({"rtol", "atol", "event_tol", "max_steps"});
    g.num("rtol", c.rtol);
    g.num("atol", c.atol);
    g.num("event_tol", c.event_tol);
    g.integer("max_steps", c.max_steps);
  }
  require(c.rtol > 0.0, "integrator.rtol", "must be positive");
  require(c.atol > 0.0, "integrator.atol", "must be positive");
  require(c.event_tol > 0.0 && c.event_tol <= std::max(c.rtol, c.atol), "integrator.event_tol",
          "must be positive and not exceed the step tolerance");
  require(c.max_steps > 0, "integrator.max_steps", "must be positive");

  if (r.has("simulate")) {
    Reader s(r.raw("simulate"), "simulate");
    s.only({"field", "tau_max", "sample_every", "state"});
    auto& o = c.simulate;
    s.str("field", o.field);
    require(o.field == "X" || o.field == "XH" || o.field == "XKepler" || o.field == "XHKepler", "simulate.field",
            "expected X, XH, XKepler or XHKepler");
    s.num("tau_max", o.tau_max);
    require(o.tau_max > 0.0, "simulate.tau_max", "must be positive");
    s.integer("sample_every", o.sample_every);
    require(o.sample_every >= 1, "simulate.sample_every", "must be at least 1");
    if (s.has("state")) {
      Reader st(s.raw("state"), "simulate.state");
      st.only({"zeta", "h", "Gamma", "x", "y"});
      st.complex2("zeta", o.zeta);
      st.nums("h", o.h);
      st.complex2("Gamma", o.Gamma);
      st.complex("x", o.x);
      st.complex("y", o.y);
    }
    for (int i = 0; i < 2; ++i) detail::check_unit(o.Gamma[i], "simulate.state.Gamma[" + std::to_string(i) + "]");
    require(std::abs(o.x) > 0.0, "simulate.state.x", "must be nonzero");
  }

  if (r.has("block")) {
    Reader b(r.raw("block"), "block");
    b.only({"anchor", "direction", "directions", "random_directions", "eps", "rho", "box", "widen", "r0", "annihilate", "rerun"});
    auto& o = c.block;
    if (b.has("anchor")) {
      Reader a(b.raw("anchor"), "block.anchor");
      a.only({"h", "Gamma", "y"});
      a.nums("h", o.anchor.h);
      a.complex2("Gamma", o.anchor.Gamma);
      a.complex("y", o.anchor.y);
    }
    for (int i = 0; i < 2; ++i) detail::check_unit(o.anchor.Gamma[i], "block.anchor.Gamma[" + std::to_string(i) + "]");
    auto check_dir = [](const std::array<double, 3>& d, const std::string& path) {
      for (int i = 0; i < 3; ++i)
        require(std::abs(d[i]) <= 1.0, path + "[" + std::to_string(i) + "]", "direction must lie in the unit box");
      require(d[0] != 0.0 || d[1] != 0.0 || d[2] != 0.0, path, "direction must be nonzero");
    };
    b.nums("direction", o.direction);
    check_dir(o.direction, "block.direction");
    if (b.has("directions")) {
      const auto& arr = b.raw("directions");
      require(arr.is_array(), "block.directions", "expected an array of directions");
      o.directions.clear();
      for (std::size_t i = 0; i < arr.size(); ++i) {
        std::string path = "block.directions[" + std::to_string(i) + "]";
        o.directions.push_back(Reader::fixed<3>(arr[i], path));
        check_dir(o.directions.back(), path);
      }
    }
    b.integer("random_directions", o.random_directions);
    require(o.random_directions >= 0, "block.random_directions", "must be non-negative");
    if (b.has("eps")) {
      Reader e(b.raw("eps"), "block.eps");
      e.only({"from", "to", "count"});
      e.num("from", o.eps.from);
      e.num("to", o.eps.to);
      e.integer("count", o.eps.count);
    }
    require(o.eps.from > 0.0 && o.eps.to > 0.0, "block.eps", "bounds must be positive");
    require(o.eps.to < o.eps.from, "block.eps.to", "grid must be strictly decreasing (to < from)");
    require(o.eps.count >= 2, "block.eps.count", "need at least two values");
    b.num("rho", o.rho);
    b.num("box", o.box);
    b.num("widen", o.widen);
    b.num("r0", o.r0);
    b.integer("annihilate", o.annihilate);
    b.boolean("rerun", o.rerun);
    require(o.rho > 0.0, "block.rho", "must be positive");
    require(o.r0 > 0.0 && o.r0 < o.rho, "block.r0", "need 0 < r0 < rho");
    require(o.box > 0.0, "block.box", "must be positive");
    require(o.widen >= 1.0, "block.widen", "must be at least 1");
    require(o.annihilate >= -1, "block.annihilate", "must be at least -1");
  }

  if (r.has("invariants")) {
    Reader v(r.raw("invariants"), "invariants");
    v.only({"trajectories", "tau_span", "tol", "kepler_trajectories", "lemma_states", "kseries_states"});
    auto& o = c.invariants;
    v.integer("trajectories", o.trajectories);
    v.num("tau_span", o.tau_span);
    v.num("tol", o.tol);
    v.integer("kepler_trajectories", o.kepler_trajectories);
    v.integer("lemma_states", o.lemma_states);
    v.integer("kseries_states", o.kseries_states);
    require(o.trajectories >= 0, "invariants.trajectories", "must be non-negative");
    require(o.tau_span > 0.0, "invariants.tau_span", "must be positive");
    require(o.tol > 0.0, "invariants.tol", "must be positive");
    require(o.kepler_trajectories >= 0, "invariants.kepler_trajectories", "must be non-negative");
    require(o.lemma_states >= 0, "invariants.lemma_states", "must be non-negative");
    require(o.kseries_states >= 0, "invariants.kseries_states", "must be non-negative");
  }

  if (r.has("collision_manifold")) {
    Reader m(r.raw("collision_manifold"), "collision_manifold");
    m.only({"orbits", "s_span", "fibers", "mass_sets", "transversality_points"});
    auto& o = c.manifold;
    m.integer("orbits", o.orbits);
    m.num("s_span", o.s_span);
    m.integer("fibers", o.fibers);
    m.integer("mass_sets", o.mass_sets);
    m.integer("transversality_points", o.transversality_points);
    require(o.orbits >= 0, "collision_manifold.orbits", "must be non-negative");
    require(o.s_span > 0.0, "collision_manifold.s_span", "must be positive");
    require(o.fibers >= 0 && o.mass_sets >= 0, "collision_manifold", "counts must be non-negative");
    require(o.transversality_points >= 0, "collision_manifold.transversality_points", "must be non-negative");
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", std::string("invalid JSON: ") + e.what());
  }
  return from_json(j);
}

// ---- presets ----

struct Preset {
  std::string name, description;
  ExperimentConfig config;
};

inline std::vector<Preset> presets() {
  std::vector<Preset> out;
  {
    ExperimentConfig c;
    c.kind = "exponent";
    c.precision = "extended";
    c.rtol = c.atol = 1e-24;
    c.event_tol = 1e-26;
    c.seed = 20240611;
    c.block.random_directions = 5;
    out.push_back({"equal-generic", "equal masses, generic Gamma*, five random non-collinear entry directions", c});
  }
  {
    ExperimentConfig c;
    c.kind = "blockmap";
    c.masses = {1.0, 2.0, 1.5, 0.7};
    c.precision = "extended";
    c.rtol = c.atol = 1e-24;
    c.event_tol = 1e-26;
    c.block.anchor.Gamma = {1.0, 1.0};
    c.block.direction = {0.0, 1.0, 0.0};
    c.simulate.zeta = {0.2, -0.15};
    c.simulate.Gamma = {1.0, 1.0};
    c.simulate.y = {0.05, 0.0};
    out.push_back({"collinear", "collinear restriction: L = 0, Gamma = 1, all imaginary parts zero", c});
  }
  {
    ExperimentConfig c;
    c.kind = "blockmap";
    c.precision = "extended";
    c.rtol = c.atol = 1e-24;
    c.event_tol = 1e-26;
    auto g = std::polar(1.0, M_PI / 4);
    c.block.anchor.h = {0.1, 0.1};
    c.block.anchor.Gamma = {g, g};
    c.block.direction = {0.5, 0.0, 0.5};
    out.push_back({"rectangular", "rectangular symmetry: equal masses, Gamma1 = Gamma2 = exp(i pi/4), entries with I1 = I2", c});
  }
  {
    ExperimentConfig c;
    c.kind = "exponent";
    c.masses = {1.0, 0.6, 1.0, 0.6};
    c.precision = "extended";
    c.rtol = c.atol = 1e-24;
    c.event_tol = 1e-26;
    c.seed = 7;
    c.block.random_directions = 3;
    out.push_back({"caledonian", "pairwise equal masses (m1 = m3, m2 = m4), so a1 = a2", c});
  }
  return out;
}

// ---- output ----

class Csv {
 public:
  Csv(const std::filesystem::path& file, const std::string& kind, const std::vector<std::string>& header) : out_(file) {
    if (!out_) throw std::runtime_error("cannot write " + file.string());
    out_ << "# sbc-lab schema_version " << kSchemaVersion << " kind " << kind << "\n";
    for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
    out_ << "\n";
  }

  Csv& operator<<(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return cell(buf);
  }
  Csv& operator<<(long v) { return cell(std::to_string(v)); }
  Csv& operator<<(int v) { return cell(std::to_string(v)); }
  Csv& operator<<(const std::string& v) { return cell(v); }
  Csv& operator<<(const char* v) { return cell(v); }

  void end() {
    out_ << "\n";
    first_ = true;
  }

 private:
  Csv& cell(const std::string& s) {
    if (!first_) out_ << ",";
    out_ << s;
    first_ = false;
    return *this;
  }

  std::ofstream out_;
  bool first_ = true;
};

struct RunResult {
  int exit_code = kOk;
  json summary;
  std::vector<std::string> files;
};

inline json fit_json(const ExponentFit& f) {
  return {{"slope", f.slope}, {"intercept", f.intercept}, {"rms", f.rms},
          {"window", {f.eps_min, f.eps_max}}, {"used", f.used}};
}

inline json stamp(const ExperimentConfig& c) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = c.kind;
  j["config"] = to_json(c);
  return j;
}

namespace detail {

inline void write_summary(const std::filesystem::path& dir, const ExperimentConfig& c, RunResult& r) {
  auto file = dir / (c.kind + "_summary.json");
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << r.summary.dump(2) << "\n";
  r.files.push_back(file.string());
}

inline Field parse_field(const std::string& s) {
  if (s == "X") return Field::X;
  if (s == "XH") return Field::XH;
  if (s == "XKepler") return Field::XKepler;
  return Field::XHKepler;
}

inline BlockExperiment block_experiment(const ExperimentConfig& c, const std::array<double, 3>& dir) {
  const auto& b = c.block;
  BlockExperiment ex;
  ex.h_star = b.anchor.h;
  ex.Gamma_star = b.anchor.Gamma;
  ex.y_star = b.anchor.y;
  ex.direction = dir;
  ex.eps = geometric_grid(b.eps.from, b.eps.to, b.eps.count);
  ex.rho = b.rho;
  ex.box = b.box;
  ex.widen = b.widen;
  ex.r0 = b.r0;
  ex.annihilate = b.annihilate;
  ex.rerun = b.rerun;
  ex.integrator = c.integrator();
  return ex;
}

// generic entry directions: gamma0 bounded away from 0 and some angular momentum in the entry
inline std::array<double, 3> random_direction(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (;;) {
    std::array<double, 3> d{u(rng), u(rng), u(rng)};
    if (std::abs(d[1]) < 0.2 || std::max(std::abs(d[0]), std::abs(d[2])) < 0.1) continue;
    return d;
  }
}

template <class T>
MassParams<T> masses_as(const ExperimentConfig& c) {
  return derive_params<T>(T(c.masses[0]), T(c.masses[1]), T(c.masses[2]), T(c.masses[3]));
}

template <class T>
GLCState<T> simulate_start(const SimulateSection& s) {
  auto cz = [](std::complex<double> z) { return C<T>(T(z.real()), T(z.imag())); };
  return make_glc<T>(cz(s.zeta[0]), cz(s.zeta[1]), T(s.h[0]), T(s.h[1]), cz(s.Gamma[0]), cz(s.Gamma[1]), cz(s.x),
                     cz(s.y));
}

template <class T>
RunResult run_simulate(const ExperimentConfig& c, const std::filesystem::path& dir) {
  RunResult r;
  auto p = masses_as<T>(c);
  GLCState<T> g;
  try {
    g = simulate_start<T>(c.simulate);
  } catch (const std::exception& e) {
    throw ConfigError("simulate.state", e.what());
  }
  auto cfg = c.integrator();
  cfg.tau_max = c.simulate.tau_max;
  auto field = parse_field(c.simulate.field);
  auto tr = integrate_glc(g, p, field, cfg);
  Csv csv(dir / "simulate.csv", c.kind,
          {"tau", "t", "I1", "L1", "I2", "L2", "h1", "h2", "Gamma1_re", "Gamma1_im", "Gamma2_re", "Gamma2_im", "x_re",
           "x_im", "y_re", "y_im"});
  for (std::size_t i = 0; i < tr.y.size(); ++i) {
    if (i % c.simulate.sample_every && i + 1 != tr.y.size()) continue;
    csv << num::to_double(tr.t[i]);
    for (int k = 0; k < kGLCDim; ++k) {
      int idx = k == 0 ? 14 : k - 1;
      csv << num::to_double(tr.y[i][idx]);
    }
    csv.end();
  }
  r.files.push_back((dir / "simulate.csv").string());
  auto e = glc_state(tr.back());
  r.summary = stamp(c);
  r.summary["reason"] = to_string(tr.reason);
  r.summary["detail"] = tr.detail;
  r.summary["steps"] = tr.accepted;
  r.summary["tau_end"] = num::to_double(tr.t.back());
  r.summary["t_end"] = num::to_double(tr.back()[14]);
  if (field == Field::X || field == Field::XH) {
    r.summary["H_drift"] = std::abs(num::to_double(hamiltonian(e, p) - hamiltonian(g, p)));
    r.summary["angular_momentum_drift"] = std::abs(num::to_double(total_angular_momentum(e, p) - total_angular_momentum(g, p)));
  }
  r.exit_code = tr.ok() ? kOk : kTotalFailure;
  return r;
}

template <class T>
int sweep_rows(Csv& csv, const SweepTable<T>& tab, const BlockExperiment& ex, int direction_index) {
  int ok = 0;
  for (const auto& row : tab.rows) {
    const auto& b = row.result;
    auto d = dulac_decompose(b, ex);
    ok += b.ok();
    csv << direction_index << row.eps << (b.ok() ? 1 : 0) << b.r_sign_changes;
    for (int k = 0; k < 3; ++k) csv << num::to_double(b.position[k]);
    for (int k = 0; k < 3; ++k) csv << row.position_err[k];
    csv << num::to_double(b.dh[0]) << num::to_double(b.dh[1]) << num::to_double(b.dH) << num::to_double(b.dkappa)
        << b.max_imag << d.entry_face << d.exit_face << d.r1 << d.ratios1[0] << d.ratios1[2] << d.r2 << d.ratios2[0]
        << d.ratios2[2] << num::to_double(d.h2[0] - d.h1[0]) << (d.complete ? 1 : 0) << b.diagnostic;
    csv.end();
  }
  return ok;
}

inline const std::vector<std::string>& sweep_header() {
  static const std::vector<std::string> h{
      "direction", "eps",     "ok",         "r_sign_changes", "beta3",   "gamma3",   "delta3",     "err_beta3",
      "err_gamma3", "err_delta3", "dh1",     "dh2",            "dH",      "dkappa",   "max_imag",   "entry_face",
      "exit_face", "r1",      "beta1",      "delta1",         "r2",      "beta2",    "delta2",     "T_dh1",
      "dulac_complete", "diagnostic"};
  return h;
}

template <class T>
json direction_summary(const SweepTable<T>& tab, const BlockExperiment& ex, Csv& signal, int index) {
  json j;
  j["direction"] = ex.direction;
  auto fits = fit_channels(tab, ex);
  json slopes = json::object();
  for (const auto& [k, f] : fits.slopes) slopes[k] = fit_json(f);
  j["channels"] = slopes;
  json fails = json::object();
  for (const auto& [k, m] : fits.failures) fails[k] = m;
  j["failures"] = fails;
  j["exceptional"] = fits.exceptional;
  int ok = 0;
  for (const auto& row : tab.rows) ok += row.result.ok();
  j["rows_ok"] = ok;
  j["rows"] = static_cast<int>(tab.rows.size());
  if (ex.annihilate >= 0) {
    try {
      auto s1 = h_channel(tab, ex, 0), s2 = h_channel(tab, ex, 1);
      for (std::size_t i = 0; i < s1.eps.size(); ++i) {
        bool usable = s1.error[i] <= 0.1 * std::abs(s1.value[i]);
        signal << index << s1.eps[i] << s1.value[i] << s1.error[i] << s2.value[i] << s2.error[i] << (usable ? 1 : 0);
        signal.end();
      }
      j["amplitude_h1"] = s1.value.empty() ? 0.0 : s1.value.front() / (s1.gain * std::pow(s1.eps.front(), 8.0 / 3.0));
    } catch (const std::invalid_argument& e) {
      j["failures"]["h_signal"] = e.what();
    }
  }
  std::vector<double> x;
  std::array<std::vector<double>, 3> pos;
  for (const auto& row : tab.rows)
    if (row.result.ok()) {
      x.push_back(row.eps);
      for (int k = 0; k < 3; ++k) pos[k].push_back(num::to_double(row.result.position[k]));
    }
  json quad = json::object();
  for (int k = 0; k < 3; ++k) {
    if (ex.direction[k] == 0.0) continue;
    try {
      auto q = fit_odd_quadratic(x, pos[k]);
      quad[axis_name(k)] = {{"linear", q.coef[0]}, {"quadratic", q.coef[1]}, {"quadratic_sigma", q.sigma[1]}, {"cubic", q.coef[2]}};
    } catch (const InsufficientData& e) {
      quad[axis_name(k)] = {{"error", e.what()}};
    }
  }
  j["position_polynomial"] = quad;
  auto [r1, dev] = transition_deviation(tab, ex, 0);
  try {
    j["T_slope_vs_r1"] = fit_json(fit_exponent(r1, dev));
  } catch (const InsufficientData& e) {
    j["T_slope_vs_r1"] = {{"error", e.what()}};
  }
  // D1 amplitude of the beta channel against the two readings of the directional Dulac lemma:
  // w1 = y0^{-1/3} w0 (y0 = eps gamma0) and w1 = y1^{-1/3} w0 (y1 = box)
  if (ex.direction[1] != 0.0 && ex.direction[0] != 0.0) {
    for (auto it = tab.rows.rbegin(); it != tab.rows.rend(); ++it) {
      auto d = dulac_decompose(it->result, ex);
      if (!d.complete) continue;
      double w0 = it->eps * ex.direction[0];
      j["dulac_beta1_over_y0_form"] = d.ratios1[0] / (std::cbrt(1.0 / (it->eps * std::abs(ex.direction[1]))) * w0);
      j["dulac_beta1_over_y1_form"] = d.ratios1[0] / (std::cbrt(1.0 / ex.box) * w0);
      j["dulac_eps"] = it->eps;
      break;
    }
  }
  return j;
}

template <class T>
RunResult run_block(const ExperimentConfig& c, const std::filesystem::path& dir) {
  RunResult r;
  auto p = masses_as<T>(c);
  std::vector<std::array<double, 3>> dirs;
  if (c.kind == "blockmap") {
    dirs.push_back(c.block.direction);
  } else {
    dirs = c.block.directions;
    std::mt19937_64 rng(c.seed);
    for (int i = 0; i < c.block.random_directions; ++i) dirs.push_back(random_direction(rng));
    if (dirs.empty()) throw ConfigError("block.directions", "exponent runs need at least one direction");
  }
  std::string base = c.kind;
  Csv rows(dir / (base + ".csv"), c.kind, sweep_header());
  Csv signal(dir / (base + "_signal.csv"), c.kind, {"direction", "eps", "D_h1", "err_h1", "D_h2", "err_h2", "usable"});
  r.summary = stamp(c);
  json per = json::array();
  double sum = 0.0;
  int counted = 0, ok_rows = 0;
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    auto ex = block_experiment(c, dirs[i]);
    try {
      ex.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError("block", e.what());
    }
    json d;
    try {
      auto tab = epsilon_sweep(ex, p, c.threads);
      ok_rows += sweep_rows(rows, tab, ex, static_cast<int>(i));
      d = direction_summary(tab, ex, signal, static_cast<int>(i));
      if (d["channels"].contains("h1") && !d["exceptional"].get<bool>()) {
        sum += d["channels"]["h1"]["slope"].get<double>();
        ++counted;
      }
    } catch (const ExperimentError& e) {
      d["direction"] = dirs[i];
      d["error"] = e.what();
    }
    per.push_back(d);
  }
  r.files.push_back((dir / (base + ".csv")).string());
  r.files.push_back((dir / (base + "_signal.csv")).string());
  r.summary["directions"] = per;
  r.summary["directions_fitted"] = counted;
  if (counted) r.summary["mean_h_slope"] = sum / counted;
  r.summary["rows_ok"] = ok_rows;
  r.exit_code = ok_rows == 0 ? kTotalFailure : kOk;
  return r;
}

inline RunResult run_invariants(const ExperimentConfig& c, const std::filesystem::path& dir) {
  RunResult r;
  const auto& v = c.invariants;
  std::mt19937_64 rng(c.seed);
  Csv csv(dir / "invariants.csv", c.kind, {"check", "index", "field", "value1", "value2", "value3", "ok"});
  IntegratorConfig cfg = c.integrator();
  cfg.rtol = cfg.atol = v.tol;
  cfg.event_tol = std::min(cfg.event_tol, v.tol);
  cfg.tau_max = v.tau_span;
  double maxH = 0, maxL = 0, kh = 0, kL = 0, ky = 0, lemma = 0, kmin = 1e300;
  int failures = 0, runs = 0;
  for (int n = 0; n < v.trajectories; ++n) {
    auto p = sample_masses(rng);
    Field f = n % 2 ? Field::X : Field::XH;
    auto g = sample_drift_state(rng, f);
    auto d = conservation_drift(g, p, f, cfg);
    ++runs;
    failures += !d.ok;
    maxH = std::max(maxH, d.H);
    maxL = std::max(maxL, d.angular_momentum);
    csv << "conservation" << n << (f == Field::X ? "X" : "XH") << d.H << d.angular_momentum << 0.0 << (d.ok ? 1 : 0);
    csv.end();
  }
  for (int n = 0; n < v.kepler_trajectories; ++n) {
    auto p = sample_masses(rng);
    auto g = sample_glc(rng, 0.05, 0.1);
    auto d = kepler_drift(g, p, cfg);
    ++runs;
    failures += !d.ok;
    kh = std::max(kh, d.h);
    kL = std::max(kL, d.L);
    ky = std::max(ky, d.y);
    csv << "kepler" << n << "XKepler" << d.h << d.L << d.y << (d.ok ? 1 : 0);
    csv.end();
  }
  std::array<double, 3> lemma_parts{};
  for (int n = 0; n < v.lemma_states; ++n) {
    auto p = sample_masses(rng);
    auto g = sample_glc(rng, 0.5, 0.3);
    auto res = check_partial_relations(g, p);
    std::array<double, 3> m{std::max(res.r1[0], res.r1[1]), std::max(res.r2[0], res.r2[1]), std::max(res.r3[0], res.r3[1])};
    for (int k = 0; k < 3; ++k) lemma_parts[k] = std::max(lemma_parts[k], m[k]);
    lemma = std::max(lemma, res.max());
    csv << "lemma" << n << "" << m[0] << m[1] << m[2] << 1;
    csv.end();
  }
  for (int n = 0; n < v.kseries_states; ++n) {
    auto p = sample_masses(rng);
    auto g = sample_glc(rng, 0.8, 0.01);
    auto f = kseries_exponent(g, p);
    kmin = std::min(kmin, f.slope);
    csv << "kseries" << n << "" << f.slope << f.rms << 0.0 << 1;
    csv.end();
  }
  r.files.push_back((dir / "invariants.csv").string());
  r.summary = stamp(c);
  r.summary["max_H_drift"] = maxH;
  r.summary["max_angular_momentum_drift"] = maxL;
  r.summary["kepler_max_drift"] = {{"h", kh}, {"L", kL}, {"y", ky}};
  r.summary["lemma_max_residual"] = {{"radial", lemma_parts[0]}, {"z_chain", lemma_parts[1]}, {"phase", lemma_parts[2]}, {"all", lemma}};
  if (v.kseries_states) r.summary["kseries_min_exponent"] = kmin;
  r.summary["failed_runs"] = failures;
  r.exit_code = runs > 0 && failures == runs ? kTotalFailure : kOk;
  return r;
}

template <class T>
RunResult run_manifold(const ExperimentConfig& c, const std::filesystem::path& dir) {
  RunResult r;
  const auto& m = c.manifold;
  std::mt19937_64 rng(c.seed);
  Csv csv(dir / "collision_manifold.csv", c.kind, {"check", "index", "value1", "value2", "value3", "value4", "note"});
  double k1 = 0, k2 = 0, eig = 0, ang = 1e300;
  int switches = 0;
  NearCollisionConfig nc;
  nc.integrator = c.integrator();
  nc.s_max = m.s_span;
  for (int n = 0; n < m.orbits; ++n) {
    auto p = sample_masses(rng).as<T>();
    auto start = sample_on_C<T>(rng, static_cast<Chart>(n % 4));
    auto d = collision_manifold_drift(start, p, nc);
    k1 = std::max(k1, d.kappa1);
    k2 = std::max(k2, d.kappa2);
    switches += d.switches;
    csv << "kappa_drift" << n << d.kappa1 << d.kappa2 << d.switches << static_cast<long>(d.samples) << d.reason;
    csv.end();
  }
  const std::array<double, 4> want{1.0, -1.0, -3.0, -1.0};
  int idx = 0;
  for (int s = 0; s < m.mass_sets; ++s) {
    auto p = (s == 0 ? derive_params(c.masses[0], c.masses[1], c.masses[2], c.masses[3]) : sample_masses(rng)).as<T>();
    for (int f = 0; f < m.fibers; ++f, ++idx) {
      auto fiber = sample_on_C<T>(rng, Chart::alpha).fiber;
      auto sp = jacobian_at_N(fiber, p);
      double err = 0;
      for (int i = 0; i < 4; ++i) err = std::max(err, std::abs(sp.eigenvalues[i] - want[i]));
      eig = std::max(eig, err);
      csv << "spectrum" << idx << sp.eigenvalues[0] << sp.eigenvalues[1] << sp.eigenvalues[2] << sp.eigenvalues[3]
          << ("zero_block=" + std::to_string(sp.zero_block_dim));
      csv.end();
    }
  }
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int n = 0; n < m.transversality_points;) {
    ChartPoint<double> p;
    p.chart = Chart::alpha;
    p.r = 0.0;
    p.ratios = {u(rng), u(rng), u(rng)};
    // off the curves where one of the integrals degenerates
    if (std::abs(p.ratios[0]) < 0.1 || std::abs(p.ratios[2]) < 0.1) continue;
    double a = kappa_transversality(p);
    ang = std::min(ang, a);
    csv << "transversality" << n << a << p.ratios[0] << p.ratios[1] << p.ratios[2] << "";
    csv.end();
    ++n;
  }
  r.files.push_back((dir / "collision_manifold.csv").string());
  r.summary = stamp(c);
  r.summary["max_kappa1_drift"] = k1;
  r.summary["max_kappa2_drift"] = k2;
  r.summary["chart_switches"] = switches;
  r.summary["max_eigenvalue_error"] = eig;
  r.summary["expected_eigenvalues"] = want;
  if (m.transversality_points) r.summary["min_transversality_angle"] = ang;
  return r;
}

}  // namespace detail

inline RunResult run(const ExperimentConfig& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const bool ext = c.precision == "extended";
  RunResult r;
  if (c.kind == "simulate")
    r = ext ? detail::run_simulate<dd>(c, dir) : detail::run_simulate<double>(c, dir);
  else if (c.kind == "blockmap" || c.kind == "exponent")
    r = ext ? detail::run_block<dd>(c, dir) : detail::run_block<double>(c, dir);
  else if (c.kind == "invariants")
    r = detail::run_invariants(c, dir);
  else
    r = ext ? detail::run_manifold<dd>(c, dir) : detail::run_manifold<double>(c, dir);
  detail::write_summary(dir, c, r);
  return r;
}

}  // namespace sbc::cli
