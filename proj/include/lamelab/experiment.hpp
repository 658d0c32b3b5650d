#pragma once

// Experiment configs (JSON) and the runner behind the lamelab CLI.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lamelab/besov.hpp"
#include "lamelab/dense_oracle.hpp"
#include "lamelab/eulerian.hpp"
#include "lamelab/io.hpp"
#include "lamelab/kernel_lab.hpp"
#include "lamelab/lagrangian.hpp"
#include "lamelab/maxreg.hpp"

#ifndef LAMELAB_VERSION
#define LAMELAB_VERSION "0.0.0"
#endif

namespace lamelab {

using json = nlohmann::ordered_json;

/// Config does not match its schema.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

/// Strict object reader: every key must be known, every value well typed.
class JsonReader {
 public:
  JsonReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(path_ + "." + key + " has the wrong type");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& at(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError("unknown key " + path_ + "." + item.key());
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace detail

struct GridSpec {
  int dim = 2;
  int N = 64;
  double extent = 2 * M_PI;

  Grid make() const { return Grid(dim, N, extent); }
};

struct DensitySpec {
  std::string kind = "constant";  ///< constant | checkerboard | trig
  double value = 1.0;             ///< constant density
  double m = 0.5;                 ///< ellipticity bound for checkerboard and trig
  int cells = 2;
  double width = 0.15;
  std::uint64_t seed = 1;
  int k_max = 3;

  Coefficient make(const Grid& g) const {
    if (kind == "constant") return constant_coefficient(g, value);
    if (kind == "checkerboard") return checkerboard_coefficient(g, m, cells, width);
    return trig_coefficient(g, m, seed, k_max, width);
  }
};

struct VelocitySpec {
  std::string kind = "random";  ///< zero | random
  double amplitude = 0.1;
  double k_min = 1.0;
  double k_max = 4.0;
  double decay = 1.0;

  Field make(const Grid& g, std::uint64_t seed) const {
    if (kind == "zero") return Field::vector(g);
    return amplitude * random_field(g, g.dim(), seed, k_min, k_max, decay);
  }
};

struct KernelSpec {
  std::string generator = "lame";      ///< lame | laplacian
  std::string op = "spectral";         ///< spectral | finite_difference
  std::vector<double> times{0.05, 0.1, 0.2};
  double dt = 1e-3;
  bool presmooth = false;
  double gamma = 0.5;
  double c_ref = 10.0;
  std::vector<std::array<int, 2>> shifts{{1, 0}, {0, 1}, {1, 1}};
  int symmetry_pairs = 0;
};

struct BesovSpec {
  std::vector<double> s{-0.5, 0.0, 0.5};
  double p = 2.0;
  double q = 1.0;
  std::vector<std::string> generators{"laplacian", "lame"};
  int fields = 20;
  double k_min = 1.0;
  double k_max = 8.0;
  double decay = 0.5;
};

struct MaxRegSpec {
  double s = 0.0;
  double p = 2.0;
  double T = 1.0;
  double dt = 0.01;
  int probes = 10;
  bool forcing = true;
  std::string op = "spectral";
};

struct PicardSpec {
  double T = 4.0;
  double dt = 0.02;
  int max_iters = 30;
  double tol = 1e-8;
  double c = 0.1;
  double c0 = 0.1;
  double r = 1.0;
  double p = 2.0;
};

struct FlowSpec {
  VelocitySpec u0;
  PicardSpec picard;
  bool eulerian = true;
  int stride = 10;
};

struct OracleSpec {
  std::vector<double> times{0.05, 0.2};
  double dt = 1e-4;
  VelocitySpec u0{"random", 1.0, 1.0, 3.0, 1.0};
};

inline const std::vector<std::string>& experiment_commands() {
  static const std::vector<std::string> c{"kernel", "besov", "maxreg", "flow", "oracle"};
  return c;
}

struct ExperimentConfig {
  std::string command;
  std::uint64_t seed = 0;
  std::string out = "out";  ///< output directory; --out overrides it
  GridSpec grid;
  LameParams lame{1.0, 0.5};
  DensitySpec rho;
  KernelSpec kernel;
  BesovSpec besov;
  MaxRegSpec maxreg;
  FlowSpec flow;
  OracleSpec oracle;

  /// Key under which the density is stored ("rho0" for the flow scenario).
  std::string density_key() const { return command == "flow" ? "rho0" : "rho"; }
};

namespace detail {

inline json to_json(const VelocitySpec& v) {
  return json{{"kind", v.kind}, {"amplitude", v.amplitude}, {"k_min", v.k_min}, {"k_max", v.k_max}, {"decay", v.decay}};
}

inline VelocitySpec velocity_from(const json& j, const std::string& path) {
  VelocitySpec v;
  JsonReader r(j, path);
  r.get("kind", v.kind);
  r.get("amplitude", v.amplitude);
  r.get("k_min", v.k_min);
  r.get("k_max", v.k_max);
  r.get("decay", v.decay);
  r.finish();
  require(v.kind == "zero" || v.kind == "random", path + ".kind must be zero or random");
  require(std::isfinite(v.amplitude), path + ".amplitude must be finite");
  require(v.k_min > 0.0 && v.k_max >= v.k_min, path + " needs 0 < k_min <= k_max");
  return v;
}

}  // namespace detail

/// Full JSON form of a config, defaults included; only the section of the
/// config's own command is written.
inline json to_json(const ExperimentConfig& c) {
  json j;
  j["command"] = c.command;
  j["seed"] = c.seed;
  j["out"] = c.out;
  j["grid"] = {{"dim", c.grid.dim}, {"N", c.grid.N}, {"extent", c.grid.extent}};
  j["lame"] = {{"mu", c.lame.mu}, {"lambda", c.lame.lambda}};
  j[c.density_key()] = {{"kind", c.rho.kind}, {"value", c.rho.value}, {"m", c.rho.m}, {"cells", c.rho.cells},
                        {"width", c.rho.width}, {"seed", c.rho.seed}, {"k_max", c.rho.k_max}};
  if (c.command == "kernel") {
    const auto& k = c.kernel;
    json shifts = json::array();
    for (const auto& s : k.shifts) shifts.push_back(json::array({s[0], s[1]}));
    j["kernel"] = {{"generator", k.generator}, {"operator", k.op}, {"times", k.times}, {"dt", k.dt},
                   {"presmooth", k.presmooth}, {"gamma", k.gamma}, {"c_ref", k.c_ref}, {"shifts", shifts},
                   {"symmetry_pairs", k.symmetry_pairs}};
  } else if (c.command == "besov") {
    const auto& b = c.besov;
    j["besov"] = {{"s", b.s}, {"p", b.p}, {"q", b.q}, {"generators", b.generators}, {"fields", b.fields},
                  {"k_min", b.k_min}, {"k_max", b.k_max}, {"decay", b.decay}};
  } else if (c.command == "maxreg") {
    const auto& m = c.maxreg;
    j["maxreg"] = {{"s", m.s}, {"p", m.p},         {"T", m.T},         {"dt", m.dt},
                   {"probes", m.probes}, {"forcing", m.forcing}, {"operator", m.op}};
  } else if (c.command == "flow") {
    const auto& f = c.flow;
    j["u0"] = detail::to_json(f.u0);
    j["picard"] = {{"T", f.picard.T},   {"dt", f.picard.dt}, {"max_iters", f.picard.max_iters},
                   {"tol", f.picard.tol}, {"c", f.picard.c},   {"c0", f.picard.c0},
                   {"r", f.picard.r},     {"p", f.picard.p}};
    j["eulerian"] = f.eulerian;
    j["stride"] = f.stride;
  } else if (c.command == "oracle") {
    j["oracle"] = {{"times", c.oracle.times}, {"dt", c.oracle.dt}, {"u0", detail::to_json(c.oracle.u0)}};
  }
  return j;
}

/// Parses and validates a config for the given command; throws ConfigError.
inline ExperimentConfig config_from_json(const json& j, const std::string& command) {
  using detail::JsonReader;
  using detail::require;
  const auto& cmds = experiment_commands();
  require(std::find(cmds.begin(), cmds.end(), command) != cmds.end(), "unknown command " + command);
  ExperimentConfig c;
  c.command = command;
  JsonReader r(j, "config");
  std::string cmd = command;
  r.get("command", cmd);
  require(cmd == command, "config is for command " + cmd + ", not " + command);
  r.get("seed", c.seed);
  r.get("out", c.out);
  require(!c.out.empty(), "out must be a nonempty path");
  if (r.has("grid")) {
    JsonReader g(r.at("grid"), "grid");
    g.get("dim", c.grid.dim);
    g.get("N", c.grid.N);
    g.get("extent", c.grid.extent);
    g.finish();
  }
  require(c.grid.dim == 2 || c.grid.dim == 3, "grid.dim must be 2 or 3");
  require(c.grid.N >= 8 && c.grid.N % 2 == 0, "grid.N must be even and at least 8");
  require(c.grid.extent > 0.0 && std::isfinite(c.grid.extent), "grid.extent must be positive");
  if (r.has("lame")) {
    JsonReader l(r.at("lame"), "lame");
    l.get("mu", c.lame.mu);
    l.get("lambda", c.lame.lambda);
    l.finish();
  }
  require(c.lame.mu > 0.0 && c.lame.nu() > 0.0, "lame needs mu > 0 and lambda + 2 mu > 0");
  const std::string dk = c.density_key();
  if (r.has(dk.c_str())) {
    JsonReader d(r.at(dk.c_str()), dk);
    d.get("kind", c.rho.kind);
    d.get("value", c.rho.value);
    d.get("m", c.rho.m);
    d.get("cells", c.rho.cells);
    d.get("width", c.rho.width);
    d.get("seed", c.rho.seed);
    d.get("k_max", c.rho.k_max);
    d.finish();
  }
  require(c.rho.kind == "constant" || c.rho.kind == "checkerboard" || c.rho.kind == "trig",
          dk + ".kind must be constant, checkerboard or trig");
  require(c.rho.value > 0.0, dk + ".value must be positive");
  require(c.rho.m > 0.0 && c.rho.m <= 1.0, dk + ".m must lie in (0, 1]");
  require(c.rho.cells >= 1 && c.rho.width > 0.0 && c.rho.k_max >= 1, dk + " shape parameters out of range");

  if (command == "kernel") {
    auto& k = c.kernel;
    if (r.has("kernel")) {
      JsonReader s(r.at("kernel"), "kernel");
      s.get("generator", k.generator);
      s.get("operator", k.op);
      s.get("times", k.times);
      s.get("dt", k.dt);
      s.get("presmooth", k.presmooth);
      s.get("gamma", k.gamma);
      s.get("c_ref", k.c_ref);
      s.get("shifts", k.shifts);
      s.get("symmetry_pairs", k.symmetry_pairs);
      s.finish();
    }
    require(k.generator == "lame" || k.generator == "laplacian", "kernel.generator must be lame or laplacian");
    require(k.op == "spectral" || k.op == "finite_difference", "kernel.operator must be spectral or finite_difference");
    require(k.times.size() >= 3, "kernel.times needs at least 3 times");
    require(k.dt > 0.0 && k.gamma > 0.0 && k.gamma < 1.0 && k.c_ref > 0.0, "kernel dt, gamma or c_ref out of range");
    require(k.symmetry_pairs >= 0, "kernel.symmetry_pairs must be nonnegative");
  } else if (command == "besov") {
    auto& b = c.besov;
    if (r.has("besov")) {
      JsonReader s(r.at("besov"), "besov");
      s.get("s", b.s);
      s.get("p", b.p);
      s.get("q", b.q);
      s.get("generators", b.generators);
      s.get("fields", b.fields);
      s.get("k_min", b.k_min);
      s.get("k_max", b.k_max);
      s.get("decay", b.decay);
      s.finish();
    }
    require(!b.s.empty() && b.p >= 1.0 && b.q >= 1.0 && b.fields >= 1, "besov indices out of range");
    for (const auto& gname : b.generators) {
      require(gname == "laplacian" || gname == "lame", "besov.generators entries must be laplacian or lame");
    }
    require(b.k_min > 0.0 && b.k_max >= b.k_min, "besov needs 0 < k_min <= k_max");
  } else if (command == "maxreg") {
    auto& m = c.maxreg;
    if (r.has("maxreg")) {
      JsonReader s(r.at("maxreg"), "maxreg");
      s.get("s", m.s);
      s.get("p", m.p);
      s.get("T", m.T);
      s.get("dt", m.dt);
      s.get("probes", m.probes);
      s.get("forcing", m.forcing);
      s.get("operator", m.op);
      s.finish();
    }
    require(std::abs(m.s) < 2.0 && m.p >= 1.0 && m.T > 0.0 && m.dt > 0.0 && m.probes >= 1, "maxreg parameters out of range");
    require(m.op == "spectral" || m.op == "finite_difference", "maxreg.operator must be spectral or finite_difference");
  } else if (command == "flow") {
    auto& f = c.flow;
    if (r.has("u0")) f.u0 = detail::velocity_from(r.at("u0"), "u0");
    if (r.has("picard")) {
      JsonReader s(r.at("picard"), "picard");
      s.get("T", f.picard.T);
      s.get("dt", f.picard.dt);
      s.get("max_iters", f.picard.max_iters);
      s.get("tol", f.picard.tol);
      s.get("c", f.picard.c);
      s.get("c0", f.picard.c0);
      s.get("r", f.picard.r);
      s.get("p", f.picard.p);
      s.finish();
    }
    r.get("eulerian", f.eulerian);
    r.get("stride", f.stride);
    const auto& p = f.picard;
    require(p.T > 0.0 && p.dt > 0.0 && p.dt <= p.T, "picard needs 0 < dt <= T");
    require(p.max_iters >= 1 && p.tol > 0.0 && p.c > 0.0 && p.c0 > 0.0 && p.r > 0.0 && p.p > 1.0,
            "picard constants out of range");
    require(f.stride >= 1, "stride must be positive");
  } else if (command == "oracle") {
    auto& o = c.oracle;
    if (r.has("oracle")) {
      JsonReader s(r.at("oracle"), "oracle");
      s.get("times", o.times);
      s.get("dt", o.dt);
      if (s.has("u0")) o.u0 = detail::velocity_from(s.at("u0"), "oracle.u0");
      s.finish();
    }
    require(!o.times.empty() && o.dt > 0.0, "oracle needs times and a positive dt");
    for (double t : o.times) require(t > 0.0, "oracle times must be positive");
    require(static_cast<std::size_t>(c.grid.dim) * std::pow(c.grid.N, c.grid.dim) <= kDenseOracleLimit,
            "grid too large for the dense oracle");
  }
  r.finish();
  return c;
}

inline ExperimentConfig config_from_text(const std::string& text, const std::string& command) {
  json j;
  try {
    j = json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what());
  }
  return config_from_json(j, command);
}

/// Runs fn(i) for i in [0, count) on up to `threads` workers (0 = hardware).
inline void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, count));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::mutex m;
  std::size_t next = 0;
  std::exception_ptr err;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        std::size_t i;
        {
          std::lock_guard<std::mutex> lock(m);
          if (err || next >= count) return;
          i = next++;
        }
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(m);
          if (!err) err = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

struct RunOptions {
  unsigned threads = 1;  ///< 0 = all hardware threads
};

struct RunResult {
  int status = 0;  ///< 0 ok, 1 numerical failure, 2 invalid input
  std::string error_name;
  std::string message;
  std::vector<std::string> artifacts;
};

namespace detail {

class ArtifactWriter {
 public:
  explicit ArtifactWriter(std::filesystem::path dir) : dir_(std::move(dir)) {}

  void csv(const std::string& name, const CsvTable& t) {
    ensure();
    t.write((dir_ / name).string());
    files_.push_back(name);
  }
  void field(const std::string& name, const Field& u) {
    ensure();
    plf1_write((dir_ / name).string(), u);
    files_.push_back(name);
  }
  void text(const std::string& name, const std::string& body) {
    ensure();
    std::ofstream f(dir_ / name, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + (dir_ / name).string());
    f << body;
  }
  const std::vector<std::string>& files() const { return files_; }

 private:
  void ensure() { std::filesystem::create_directories(dir_); }
  std::filesystem::path dir_;
  std::vector<std::string> files_;
};

inline CsvTable metric_table() { return CsvTable({"metric", "value"}); }

inline void metric(CsvTable& t, const std::string& name, double v) { t.add({name, format_number(v)}); }

inline OperatorKind operator_kind(const std::string& name) {
  return name == "finite_difference" ? OperatorKind::FiniteDifference : OperatorKind::Spectral;
}

inline std::size_t center_node(const Grid& g) {
  Index idx{0, 0, 0};
  for (int a = 0; a < g.dim(); ++a) idx[a] = g.points() / 2;
  return g.node(idx);
}

inline CsvTable shell_table(const GaussianFit& fit) {
  CsvTable t({"t", "d", "d2_over_t", "shell_max", "model"});
  for (const auto& r : fit.table) t.add_numbers({r.t, r.d, r.d * r.d / r.t, r.shell_max, r.model});
  return t;
}

inline void run_kernel(const ExperimentConfig& c, ArtifactWriter& w) {
  const Grid g = c.grid.make();
  const Coefficient coef = c.rho.make(g);
  const auto& k = c.kernel;
  const LameParams params = k.generator == "laplacian" ? LameParams{c.lame.mu, -c.lame.mu} : c.lame;
  StepperConfig sc;
  sc.dt = k.dt;
  sc.kind = operator_kind(k.op);
  const std::size_t src = center_node(g);
  const auto slices = kernel_column(coef, params, src, k.times, sc, k.presmooth);
  const GaussianFit fit = gaussian_fit(slices);
  const GaussianFit gfit = gradient_envelope(slices);
  CsvTable summary = metric_table();
  metric(summary, "C1", fit.C1);
  metric(summary, "c_dec", fit.c_dec);
  metric(summary, "slope", fit.slope);
  metric(summary, "r2", fit.r2);
  metric(summary, "max_exceedance", fit.max_exceedance);
  metric(summary, "shells", static_cast<double>(fit.shells));
  metric(summary, "gradient_c_dec", gfit.c_dec);
  metric(summary, "gradient_slope", gfit.slope);
  metric(summary, "gradient_r2", gfit.r2);
  double cons = 0.0;
  for (const auto& s : slices) cons = std::max(cons, column_conservation_defect(coef, s));
  metric(summary, "conservation_defect", cons);

  CsvTable holder({"h0", "h1", "t", "max_quotient"});
  const KernelSlice& last = slices.back();
  double qmin = std::numeric_limits<double>::infinity(), qmax = 0.0;
  for (const auto& h : k.shifts) {
    const double q = holder_quotient(last, Index{h[0], h[1], 0}, k.gamma, k.c_ref).max_quotient;
    qmin = std::min(qmin, q);
    qmax = std::max(qmax, q);
    holder.add({std::to_string(h[0]), std::to_string(h[1]), format_number(last.t), format_number(q)});
  }
  if (!k.shifts.empty()) metric(summary, "holder_variation", qmax > 0.0 ? (qmax - qmin) / qmax : 0.0);

  if (k.symmetry_pairs > 0) {
    std::mt19937_64 rng(c.seed);
    std::uniform_int_distribution<std::size_t> pick(0, g.node_count() - 1);
    double worst = 0.0;
    const std::vector<double> t_last{last.t};
    for (int i = 0; i < k.symmetry_pairs; ++i) {
      const std::size_t a = pick(rng), b = pick(rng);
      const auto sa = kernel_column(coef, params, a, t_last, sc, k.presmooth);
      const auto sb = kernel_column(coef, params, b, t_last, sc, k.presmooth);
      worst = std::max(worst, symmetry_defect(sa.front(), sb.front()));
    }
    metric(summary, "symmetry_defect", worst);
  }
  w.csv("summary.csv", summary);
  w.csv("shells.csv", shell_table(fit));
  w.csv("gradient_shells.csv", shell_table(gfit));
  w.csv("holder.csv", holder);
  w.field("kernel_S.plf", last.S());
}

inline void run_besov(const ExperimentConfig& c, const RunOptions& opt, ArtifactWriter& w) {
  const Grid g = c.grid.make();
  const auto& b = c.besov;
  struct Row {
    double s;
    std::string gen;
    double lp, heat, leak;
  };
  const std::size_t per_field = b.s.size() * b.generators.size();
  std::vector<Row> rows(static_cast<std::size_t>(b.fields) * per_field);
  parallel_for(static_cast<std::size_t>(b.fields), opt.threads, [&](std::size_t f) {
    const Field u = random_field(g, g.dim(), c.seed + f, b.k_min, b.k_max, b.decay);
    std::size_t i = f * per_field;
    for (double s : b.s) {
      for (const auto& gname : b.generators) {
        const Generator gen = gname == "lame" ? Generator{c.lame} : Generator{ScaledLaplacian{1.0}};
        const BesovValue lp = besov_norm(u, {s, b.p, b.q});
        const BesovValue heat = heat_char_norm(u, s, b.p, b.q, heat_power(s), gen);
        rows[i++] = {s, gname, lp.value, heat.value, std::max(lp.leakage, heat.leakage)};
      }
    }
  });
  CsvTable t({"field", "s", "generator", "lp_norm", "heat_norm", "ratio", "leakage"});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Row& r = rows[i];
    t.add({std::to_string(i / per_field), format_number(r.s), r.gen, format_number(r.lp), format_number(r.heat),
           format_number(r.heat / r.lp), format_number(r.leak)});
  }
  CsvTable summary({"s", "generator", "min_ratio", "max_ratio", "K"});
  for (double s : b.s) {
    for (const auto& gname : b.generators) {
      double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
      for (const Row& r : rows) {
        if (r.s != s || r.gen != gname) continue;
        lo = std::min(lo, r.heat / r.lp);
        hi = std::max(hi, r.heat / r.lp);
      }
      summary.add({format_number(s), gname, format_number(lo), format_number(hi),
                   format_number(std::max(hi, 1.0 / lo))});
    }
  }
  CsvTable diag = metric_table();
  metric(diag, "partition_defect", DyadicPartition::get(g)->partition_defect());
  w.csv("besov.csv", t);
  w.csv("summary.csv", summary);
  w.csv("diagnostics.csv", diag);
}

inline void run_maxreg(const ExperimentConfig& c, const RunOptions& opt, ArtifactWriter& w) {
  const Grid g = c.grid.make();
  const Coefficient coef = c.rho.make(g);
  const auto& m = c.maxreg;
  StepperConfig sc;
  sc.dt = m.dt;
  sc.kind = operator_kind(m.op);
  std::vector<MaxRegReport> reps(static_cast<std::size_t>(m.probes));
  parallel_for(reps.size(), opt.threads, [&](std::size_t i) {
    const Field u0 = random_field(g, g.dim(), c.seed + i, 1.0, 6.0);
    Forcing f;
    if (m.forcing) {
      const Field f0 = 0.5 * random_field(g, g.dim(), c.seed + 1000 + i, 1.0, 6.0);
      const Field f1 = 0.5 * random_field(g, g.dim(), c.seed + 2000 + i, 1.0, 6.0);
      f = sampled_forcing({0.0, m.T}, {f0, f1});
    }
    reps[i] = solve_linear_maxreg(coef, c.lame, u0, f, m.s, m.p, m.T, sc);
  });
  w.csv("maxreg.csv", maxreg_table(reps));
}

inline void run_oracle(const ExperimentConfig& c, ArtifactWriter& w) {
  const Grid g = c.grid.make();
  const Coefficient coef = c.rho.make(g);
  const auto& o = c.oracle;
  const Field u0 = o.u0.make(g, c.seed);
  StepperConfig sc;
  sc.dt = o.dt;
  sc.tol = 1e-12;
  sc.kind = OperatorKind::FiniteDifference;
  std::vector<double> times{0.0};
  std::vector<double> ts = o.times;
  std::sort(ts.begin(), ts.end());
  times.insert(times.end(), ts.begin(), ts.end());
  const Trajectory tr = evolve(coef, c.lame, u0, {}, times, sc);
  const DenseOracle oracle(coef, c.lame);
  CsvTable t({"t", "rel_l2", "symmetry_defect"});
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const Field ref = oracle.apply(u0, ts[i]);
    t.add_numbers({ts[i], relative_l2(tr.states[i + 1], ref), transpose_defect(times_b(oracle.propagator(ts[i]), coef))});
  }
  w.csv("oracle.csv", t);
}

inline void run_flow(const ExperimentConfig& c, ArtifactWriter& w, CsvTable& diag) {
  const Grid g = c.grid.make();
  const Coefficient rho0 = c.rho.make(g);
  const auto& f = c.flow;
  const Field u0 = f.u0.make(g, c.seed);
  PicardConfig pc;
  pc.T = f.picard.T;
  pc.dt = f.picard.dt;
  pc.max_iter = f.picard.max_iters;
  pc.tol_rel = f.picard.tol;
  pc.c = f.picard.c;
  pc.c0 = f.picard.c0;
  pc.r = f.picard.r;
  pc.p = f.picard.p;
  metric(diag, "c", pc.c);
  metric(diag, "c0", pc.c0);
  metric(diag, "r", pc.r);
  metric(diag, "p", pc.p);
  metric(diag, "stop_tol_rel", pc.tol_rel);
  {
    std::vector<Field> probes;
    for (int i = 0; i < 3; ++i) probes.push_back(random_field(g, 1, c.seed + 100 + i, 1.0, 6.0));
    const BesovIndex idx{g.dim() / pc.p - 1.0, pc.p, 1.0};
    Field inv = Field::scalar(g);
    for (std::size_t k = 0; k < g.node_count(); ++k) inv.at(0, k) = rho0.b.at(0, k);
    metric(diag, "multiplier_ratio_rho0", multiplier_ratio(rho0.rho, idx, probes));
    metric(diag, "multiplier_ratio_inv_rho0", multiplier_ratio(inv, idx, probes));
  }
  PicardResult res = [&] {
    try {
      return picard_solve(rho0, c.lame, u0, pc);
    } catch (const PicardDivergence& e) {
      CsvTable it({"k", "factor"});
      for (std::size_t k = 0; k < e.factors().size(); ++k) it.add_numbers({double(k + 1), e.factors()[k]});
      w.csv("iterations.csv", it);
      throw;
    }
  }();
  const auto& d = res.diag;
  CsvTable it({"k", "ep_norm", "delta", "factor"});
  for (std::size_t k = 0; k < d.deltas.size(); ++k) {
    it.add({std::to_string(k), format_number(d.ep_norms[k]), format_number(d.deltas[k]),
            k == 0 ? std::string() : format_number(d.factors[k - 1])});
  }
  w.csv("iterations.csv", it);
  metric(diag, "u0_norm", d.u0_norm);
  metric(diag, "stop_tol", d.stop_tol);
  metric(diag, "iterations", d.iterations);
  metric(diag, "max_factor", d.max_factor());
  metric(diag, "final_ep_norm", d.final_norm());
  metric(diag, "growth_constant", d.growth_constant());
  metric(diag, "flagged", d.flagged ? 1.0 : 0.0);
  metric(diag, "left_ball", d.left_ball ? 1.0 : 0.0);
  metric(diag, "nonlinear_residual", nonlinear_residual(res.state, pc.p));
  const GradSupIntegral gs = grad_sup_integral(res.state);
  metric(diag, "grad_sup_integral", gs.value);
  metric(diag, "grad_sup_extrapolated", gs.extrapolated());
  const FlowEstimateReport fe = flow_estimate_check(res.state, pc.p, pc.c0);
  metric(diag, "flow_estimate_lhs", fe.lhs);
  metric(diag, "flow_estimate_rhs", fe.rhs);
  metric(diag, "flow_estimate_flagged", fe.flagged ? 1.0 : 0.0);
  const FlowMapData flow = flow_map(res.state);
  metric(diag, "J_min", flow.J_min);
  metric(diag, "J_max", flow.J_max);
  metric(diag, "adjugate_defect", flow.adjugate_defect());
  metric(diag, "volume_defect", flow.volume_defect());
  metric(diag, "roundtrip_defect", roundtrip_defect(flow.frames.back()));
  const EulerianTrajectory eu = pushforward_eulerian(res.state, flow, static_cast<std::size_t>(f.stride));
  const DensityTransportReport dr = density_transport_check(res.state, flow, eu);
  metric(diag, "density_nodewise_defect", dr.nodewise_defect);
  metric(diag, "density_continuity_defect", dr.continuity_defect);
  metric(diag, "density_grid_defect", dr.grid_defect);
  metric(diag, "mass_defect", dr.mass_defect);
  w.field("u_lagrangian_T.plf", res.state.u.back());
  w.field("u_T.plf", eu.u.back());
  w.field("rho_T.plf", eu.rho.back());
  if (f.eulerian) {
    EulerianConfig ec;
    ec.T = pc.T;
    ec.dt = pc.dt;
    ec.stride = static_cast<std::size_t>(1) << 30;
    const EulerianTrajectory ref = eulerian_reference_solve(rho0, c.lame, u0, ec);
    metric(diag, "cross_solver_u_rel_l2", relative_l2(eu.u.back(), ref.u.back()));
    metric(diag, "cross_solver_rho_rel_l2", relative_l2(eu.rho.back(), ref.rho.back()));
    w.field("u_T_reference.plf", ref.u.back());
  }
}

}  // namespace detail

/// Runs one experiment and writes its artifacts plus manifest.json into
/// c.out. Numerical failures still produce the manifest. Everything except
/// the manifest's wall time is a function of (config, seed, version).
inline RunResult run_experiment(const ExperimentConfig& c, const RunOptions& opt) {
  const auto start = std::chrono::steady_clock::now();
  detail::ArtifactWriter w(c.out);
  RunResult res;
  CsvTable diag = detail::metric_table();
  try {
    if (c.command == "kernel") {
      detail::run_kernel(c, w);
    } else if (c.command == "besov") {
      detail::run_besov(c, opt, w);
    } else if (c.command == "maxreg") {
      detail::run_maxreg(c, opt, w);
    } else if (c.command == "oracle") {
      detail::run_oracle(c, w);
    } else if (c.command == "flow") {
      detail::run_flow(c, w, diag);
    } else {
      throw ConfigError("unknown command " + c.command);
    }
  } catch (const NumericalError& e) {
    res.status = 1;
    res.error_name = e.name();
    res.message = e.what();
  } catch (const std::invalid_argument& e) {
    res.status = 2;
    res.error_name = "InvalidArgument";
    res.message = e.what();
  }
  if (c.command == "flow" && !diag.rows().empty()) w.csv("diagnostics.csv", diag);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  res.artifacts = w.files();
  json m;
  m["command"] = c.command;
  m["version"] = LAMELAB_VERSION;
  m["seed"] = c.seed;
  m["threads"] = opt.threads;
  m["status"] = res.status == 0 ? "ok" : "error";
  if (res.status != 0) m["error"] = {{"name", res.error_name}, {"message", res.message}};
  m["artifacts"] = res.artifacts;
  m["wall_time_s"] = wall;
  m["config"] = to_json(c);
  w.text("manifest.json", m.dump(2) + "\n");
  return res;
}

/// Reformats a CSV report as whitespace-separated columns with a '#' header.
/// Shell tables give (d2_over_t, log_shell_max), iteration tables give
/// (k, factor); other tables keep their numeric columns.
inline std::string plotdata(const std::string& csv_text) {
  const auto rows = csv_parse(csv_text);
  if (rows.empty()) return "#\n";
  const auto& head = rows.front();
  auto col = [&](const std::string& name) -> int {
    for (std::size_t i = 0; i < head.size(); ++i)
      if (head[i] == name) return static_cast<int>(i);
    return -1;
  };
  auto numeric = [](const std::string& s, double& v) {
    if (s.empty()) return false;
    std::istringstream is(s);
    is >> v;
    return !is.fail() && is.eof();
  };
  std::ostringstream out;
  const int d2 = col("d2_over_t"), sm = col("shell_max"), k = col("k"), fac = col("factor");
  if (d2 >= 0 && sm >= 0) {
    out << "# d2_over_t log_shell_max\n";
    for (std::size_t r = 1; r < rows.size(); ++r) {
      double a, b;
      if (numeric(rows[r][d2], a) && numeric(rows[r][sm], b) && b > 0.0) {
        out << format_number(a) << ' ' << format_number(std::log(b)) << '\n';
      }
    }
    return out.str();
  }
  if (k >= 0 && fac >= 0) {
    out << "# k factor\n";
    for (std::size_t r = 1; r < rows.size(); ++r) {
      double a, b;
      if (numeric(rows[r][k], a) && numeric(rows[r][fac], b)) out << format_number(a) << ' ' << format_number(b) << '\n';
    }
    return out.str();
  }
  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < head.size(); ++c) {
    bool all = rows.size() > 1;
    for (std::size_t r = 1; r < rows.size() && all; ++r) {
      double v;
      all = c < rows[r].size() && numeric(rows[r][c], v);
    }
    if (all || rows.size() == 1) keep.push_back(c);
  }
  out << '#';
  for (std::size_t c : keep) out << ' ' << head[c];
  out << '\n';
  for (std::size_t r = 1; r < rows.size(); ++r) {
    for (std::size_t i = 0; i < keep.size(); ++i) out << (i ? " " : "") << rows[r][keep[i]];
    out << '\n';
  }
  return out.str();
}

}  // namespace lamelab
