// One PASS/FAIL line per acceptance criterion. Exit status is nonzero if any criterion fails.
#include <cstdio>
#include <filesystem>
#include <map>

#include <fmt/format.h>

#include <sbc/cli.hpp>

using namespace sbc;
namespace fs = std::filesystem;
using cli::json;

namespace {

constexpr double kEightThirds = 8.0 / 3.0;

struct Report {
  int failed = 0;
  std::map<int, std::string> lines;
  void line(int id, const std::string& name, bool pass, const std::string& detail) {
    lines[id] = fmt::format("{} [{:2d}] {}: {}", pass ? "PASS" : "FAIL", id, name, detail);
    failed += !pass;
  }
  void error(int id, const std::string& name, const std::exception& e) { line(id, name, false, std::string("error: ") + e.what()); }
};

fs::path workdir() {
  auto d = fs::temp_directory_path() / "sbc_acceptance";
  fs::create_directories(d);
  return d;
}

cli::ExperimentConfig preset(const std::string& name) {
  for (const auto& p : cli::presets())
    if (p.name == name) return p.config;
  throw std::runtime_error("no preset " + name);
}

template <class T>
struct Sweep {
  BlockExperiment ex;
  SweepTable<T> tab;
  ChannelFits fits;
};

template <class T>
Sweep<T> sweep(const cli::ExperimentConfig& c, const std::array<double, 3>& dir, bool fit = true) {
  Sweep<T> s;
  s.ex = cli::detail::block_experiment(c, dir);
  s.ex.validate();
  s.tab = epsilon_sweep(s.ex, cli::detail::masses_as<T>(c), c.threads);
  if (fit) s.fits = fit_channels(s.tab, s.ex);
  return s;
}

const ExponentFit* slope(const ChannelFits& f, const std::string& k) {
  auto it = f.slopes.find(k);
  return it == f.slopes.end() ? nullptr : &it->second;
}

std::vector<std::array<double, 3>> directions(const cli::ExperimentConfig& c) {
  auto dirs = c.block.directions;
  std::mt19937_64 rng(c.seed);
  for (int i = 0; i < c.block.random_directions; ++i) dirs.push_back(cli::detail::random_direction(rng));
  return dirs;
}

void exponent_and_positions(Report& rep) {
  auto c = preset("equal-generic");
  auto dirs = directions(c);
  bool ok1 = dirs.size() >= 5, ok2 = true;
  std::string d1, d2;
  double worst_pos = 0.0, worst_quad = 0.0;
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    auto s = sweep<dd>(c, dirs[i]);
    auto h = slope(s.fits, "h1");
    if (!h || s.fits.exceptional) {
      ok1 = false;
      d1 += fmt::format(" dir{}=none", i);
    } else {
      ok1 = ok1 && std::abs(h->slope - kEightThirds) <= 0.15 && h->rms < 0.05 && h->eps_min <= 1e-4 * (1 + 1e-9) &&
            h->eps_max >= 1e-2 * (1 - 1e-9);
      d1 += fmt::format(" {:.4f}(rms {:.1e})", h->slope, h->rms);
    }
    std::vector<double> x;
    std::array<std::vector<double>, 3> pos;
    for (const auto& r : s.tab.rows)
      if (r.result.ok()) {
        x.push_back(r.eps);
        for (int k = 0; k < 3; ++k) pos[k].push_back(num::to_double(r.result.position[k]));
      }
    for (int k = 0; k < 3; ++k) {
      auto p = slope(s.fits, std::string("position_") + axis_name(k));
      if (!p) {
        ok2 = false;
        continue;
      }
      worst_pos = std::max(worst_pos, std::abs(p->slope - 1.0));
      ok2 = ok2 && std::abs(p->slope - 1.0) <= 0.05;
      auto q = fit_odd_quadratic(x, pos[k]);
      double z = std::abs(q.coef[1]) / q.sigma[1];
      ok2 = ok2 && z <= 2.0;
      if (z > worst_quad) {
        worst_quad = z;
        d2 = fmt::format("worst quadratic coefficient {:.3g} = {:.3g} sigma ({} channel, direction {})", q.coef[1], z,
                         axis_name(k), i);
      }
    }
  }
  rep.line(1, "exponent reproduction", ok1, fmt::format("{} directions, h1 slopes{}", dirs.size(), d1));
  rep.line(2, "position-channel regularity", ok2, fmt::format("max |slope - 1| {:.2e}; {}", worst_pos, d2));
}

void collinear(Report& rep) {
  auto c = preset("collinear");
  auto s = sweep<dd>(c, c.block.direction);
  double im = 0.0;
  for (const auto& r : s.tab.rows) im = std::max(im, r.result.max_imag);
  auto h = slope(s.fits, "h1");
  bool ok = h && std::abs(h->slope - kEightThirds) <= 0.15 && im < 1e-11;
  rep.line(3, "collinear consistency", ok,
           fmt::format("h1 slope {}, max imaginary part {:.2e}", h ? fmt::format("{:.4f}", h->slope) : "none", im));
}

void rectangular(Report& rep) {
  auto c = preset("rectangular");
  auto s = sweep<dd>(c, c.block.direction);
  auto h1 = slope(s.fits, "h1"), h2 = slope(s.fits, "h2");
  bool ok = h1 && h2 && h1->slope >= 3.0 && h2->slope >= 3.0;
  auto show = [](const ExponentFit* f) { return f ? fmt::format("{:.3f}", f->slope) : std::string("none"); };
  rep.line(4, "sub-problem smoothness", ok, fmt::format("h slopes {} / {}", show(h1), show(h2)));
}

void collision_manifold(Report& rep) {
  auto c = preset("equal-generic");
  c.kind = "collision-manifold";
  c.precision = "extended";
  c.rtol = c.atol = c.event_tol = 1e-22;
  c.manifold.orbits = 20;
  c.manifold.s_span = 5.0;
  c.manifold.fibers = 10;
  c.manifold.mass_sets = 3;
  c.manifold.transversality_points = 100;
  auto s = cli::run(c, workdir() / "manifold").summary;
  // the expected eigenvalues all have modulus >= 1, so the absolute error bounds the relative one
  double eig = s["max_eigenvalue_error"];
  rep.line(5, "spectrum at N", eig < 1e-9, fmt::format("max eigenvalue error {:.2e} over 10 fibers x 3 mass sets", eig));
  double k1 = s["max_kappa1_drift"], k2 = s["max_kappa2_drift"], ang = s["min_transversality_angle"];
  int sw = s["chart_switches"];
  rep.line(6, "collision-manifold integrals", k1 < 1e-8 && k2 < 1e-8 && ang > 1e-3,
           fmt::format("kappa drift {:.2e} / {:.2e} over 20 orbits ({} chart switches), min angle {:.3e} rad", k1, k2, sw, ang));
}

void invariants(Report& rep) {
  auto c = preset("equal-generic");
  c.kind = "invariants";
  c.invariants.trajectories = 50;
  c.invariants.tau_span = 10.0;
  c.invariants.tol = 1e-13;
  c.invariants.kepler_trajectories = 10;
  c.invariants.lemma_states = 1000;
  c.invariants.kseries_states = 5;
  auto s = cli::run(c, workdir() / "invariants").summary;
  double H = s["max_H_drift"], L = s["max_angular_momentum_drift"];
  double kh = s["kepler_max_drift"]["h"], kL = s["kepler_max_drift"]["L"], ky = s["kepler_max_drift"]["y"];
  int failed = s["failed_runs"];
  rep.line(7, "conservation suite", failed == 0 && H < 1e-10 && L < 1e-10 && kh < 1e-12 && kL < 1e-12 && ky < 1e-12,
           fmt::format("H {:.2e}, angular momentum {:.2e}; Kepler h {:.2e}, Im zeta {:.2e}, y {:.2e}; {} failed runs", H, L,
                       kh, kL, ky, failed));
  double ks = s["kseries_min_exponent"];
  rep.line(8, "potential expansion order", ks >= 9.5, fmt::format("min fitted exponent {:.3f} over 5 states", ks));
  const auto& lr = s["lemma_max_residual"];
  double all = lr["all"];
  rep.line(12, "lemma residuals", all < 1e-8,
           fmt::format("max residuals radial {:.2e}, z chain {:.2e}, phase {:.2e} on 1000 states", lr["radial"].get<double>(),
                       lr["z_chain"].get<double>(), lr["phase"].get<double>()));
}

void dulac(Report& rep) {
  auto c = preset("equal-generic");
  c.block.rho = 0.1;
  c.block.eps = {1e-2, 1e-4, 17};
  auto s = sweep<dd>(c, {0.3, 0.8, -0.5});
  auto r = slope(s.fits, "D1_r"), b = slope(s.fits, "D1_beta"), d = slope(s.fits, "D1_delta");
  bool ok = r && b && d && std::abs(r->slope - 1.0 / 3.0) <= 0.02 && std::abs(b->slope - 2.0 / 3.0) <= 0.02 &&
            std::abs(d->slope - 2.0 / 3.0) <= 0.02;
  auto [r1, dev] = transition_deviation(s.tab, s.ex, 0);
  double ts = fit_exponent(r1, dev).slope;
  ok = ok && ts >= 7.5;
  auto show = [](const ExponentFit* f) { return f ? fmt::format("{:.4f}", f->slope) : std::string("none"); };
  rep.line(9, "Dulac asymptotics", ok,
           fmt::format("D1 slopes r {}, beta {}, delta {}; T deviation slope {:.3f} vs r1", show(r), show(b), show(d), ts));
}

void kappa_superiority(Report& rep) {
  auto p = derive_params(1.0, 1.0, 1.0, 1.0).as<dd>();
  auto base = make_glc(C<dd>(-1.0, 0.3), C<dd>(-0.8, -0.2), dd(0.2), dd(-0.1), C<dd>(1.0), unit(C<dd>(0.6, 0.8)), C<dd>(1.0),
                       C<dd>());
  IntegratorConfig cfg;
  cfg.precision = Precision::extended;
  cfg.rtol = cfg.atol = 1e-26;
  cfg.event_tol = 1e-26;
  auto rows = kappa_drift(base, p, geometric_grid(1e-1, 1e-2, 5), 1.0, cfg);
  std::vector<double> x, lead, full;
  for (const auto& r : rows) {
    x.push_back(r.eps);
    lead.push_back(r.leading);
    full.push_back(r.full);
  }
  double sl = fit_exponent(x, lead).slope, sf = fit_exponent(x, full).slope;
  rep.line(10, "kappa_full superiority", sf - sl >= 3.0,
           fmt::format("drift slopes leading {:.3f}, full {:.3f} (difference {:.3f})", sl, sf, sf - sl));
}

void c0_block_map(Report& rep) {
  auto c = preset("equal-generic");
  c.block.eps = {1e-2, 1e-2 / 256.0, 9};
  c.block.annihilate = 2;
  auto s = sweep<dd>(c, {0.3, 0.8, -0.5}, false);
  std::vector<double> diff;
  for (std::size_t k = 0; k + 1 < s.tab.rows.size(); ++k) {
    const auto &a = s.tab.rows[k].result, &b = s.tab.rows[k + 1].result;
    if (!a.ok() || !b.ok()) throw std::runtime_error("block map failed at eps " + fmt::format("{:.3e}", a.ok() ? b.eps : a.eps));
    double d2 = 0.0;
    for (int i = 0; i < 3; ++i) {
      double v = num::to_double(a.position[i] - b.position[i]);
      d2 += v * v;
    }
    diff.push_back(std::sqrt(d2));
  }
  double worst = 0.0;
  for (std::size_t k = 0; k + 1 < diff.size(); ++k) worst = std::max(worst, diff[k + 1] / diff[k]);
  rep.line(11, "C0 block map", !diff.empty() && worst < 0.9,
           fmt::format("{} successive differences, largest ratio {:.4f}, last difference {:.2e}", diff.size(), worst,
                       diff.empty() ? 0.0 : diff.back()));
}

}  // namespace

int main() {
  Report rep;
  auto guard = [&](int id, const std::string& name, auto&& f) {
    try {
      f();
    } catch (const std::exception& e) {
      rep.error(id, name, e);
    }
  };
  guard(1, "exponent reproduction and position channels", [&] { exponent_and_positions(rep); });
  guard(3, "collinear consistency", [&] { collinear(rep); });
  guard(4, "sub-problem smoothness", [&] { rectangular(rep); });
  guard(5, "spectrum and collision-manifold integrals", [&] { collision_manifold(rep); });
  guard(7, "conservation, expansion order and lemma", [&] { invariants(rep); });
  guard(9, "Dulac asymptotics", [&] { dulac(rep); });
  guard(10, "kappa_full superiority", [&] { kappa_superiority(rep); });
  guard(11, "C0 block map", [&] { c0_block_map(rep); });
  for (const auto& [id, l] : rep.lines) std::printf("%s\n", l.c_str());
  std::printf("%d of %zu criteria failed\n", rep.failed, rep.lines.size());
  return rep.failed ? 1 : 0;
}
