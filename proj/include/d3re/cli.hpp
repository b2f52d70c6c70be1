#pragma once

// Command-line front end: JSON configs in, CSV/JSON artifacts out. Every
// artifact embeds the canonical run config, its SHA-256, and the seed; the
// verify subcommand re-reads artifacts and confirms the hashes, or runs a
// set of built-in self-checks when called without arguments.
//
// Exit codes: 0 success, 2 invalid configuration or arguments, 3 numeric
// failure, 1 anything else. Failures emit a one-line JSON error object on
// the error stream.

#include <Eigen/Dense>
#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "d3re/errors.hpp"
#include "d3re/gaussian.hpp"
#include "d3re/integrate.hpp"
#include "d3re/interpolant.hpp"
#include "d3re/rng.hpp"
#include "d3re/schedule.hpp"
#include "d3re/scorenet.hpp"
#include "d3re/toy2d.hpp"
#include "d3re/train.hpp"
#include "d3re/transport.hpp"

namespace d3re {
namespace clifront {

using nlohmann::json;

// ---------------------------------------------------------------- hashing

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw ConfigError("hash: SHA-256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out(2 * len, '0');
  for (unsigned int i = 0; i < len; ++i) {
    out[2 * i] = hex[digest[i] >> 4];
    out[2 * i + 1] = hex[digest[i] & 0xf];
  }
  return out;
}

// Canonical form: minified with keys sorted, which the default (ordered)
// json object type already guarantees.
inline std::string canonical_dump(const json& j) { return j.dump(); }

inline std::string config_hash(const json& j) { return sha256_hex(canonical_dump(j)); }

// ------------------------------------------------------- strict json reads

inline void check_keys(const json& j, const std::string& where,
                       std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("config: " + where + " must be an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        known = true;
        break;
      }
    if (!known)
      throw ConfigError("config: unknown key '" + item.key() + "' in " + where);
  }
}

inline double as_double(const json& v, const std::string& where) {
  if (!v.is_number()) throw ConfigError("config: " + where + " must be a number");
  return v.get<double>();
}

inline int as_int(const json& v, const std::string& where) {
  if (!v.is_number_integer()) throw ConfigError("config: " + where + " must be an integer");
  return v.get<int>();
}

inline std::uint64_t as_u64(const json& v, const std::string& where) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    throw ConfigError("config: " + where + " must be a nonnegative integer");
  return v.get<std::uint64_t>();
}

inline bool as_bool(const json& v, const std::string& where) {
  if (!v.is_boolean()) throw ConfigError("config: " + where + " must be a boolean");
  return v.get<bool>();
}

inline std::string as_string(const json& v, const std::string& where) {
  if (!v.is_string()) throw ConfigError("config: " + where + " must be a string");
  return v.get<std::string>();
}

inline std::vector<double> as_double_array(const json& v, const std::string& where) {
  if (!v.is_array()) throw ConfigError("config: " + where + " must be an array of numbers");
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& e : v) out.push_back(as_double(e, where + " entry"));
  return out;
}

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open: " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config: " + path + " is not valid JSON: " + e.what());
  }
}

// ------------------------------------------------------------ csv handling

// 17 significant digits round-trip IEEE doubles exactly, which keeps
// repeated runs byte-identical.
inline std::string fmt_full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf);
}

struct RunMeta {
  std::string command;
  json config;
  std::string hash;
  std::uint64_t seed = 0;

  RunMeta(std::string cmd, json cfg, std::uint64_t s)
      : command(std::move(cmd)), config(std::move(cfg)), hash(config_hash(config)), seed(s) {}

  json artifact(json report) const {
    return json{{"command", command},
                {"config", config},
                {"config_hash", hash},
                {"seed", seed},
                {"report", std::move(report)}};
  }
};

inline void make_parent_dirs(const std::string& path) {
  const std::filesystem::path p(path);
  if (p.has_parent_path() && !p.parent_path().empty())
    std::filesystem::create_directories(p.parent_path());
}

inline void write_csv(const std::string& path, const RunMeta& meta,
                      const std::vector<std::string>& cols, const Eigen::MatrixXd& rows) {
  if (static_cast<Eigen::Index>(cols.size()) != rows.cols())
    throw ConfigError("csv: column name count does not match the data width");
  make_parent_dirs(path);
  std::ofstream out(path);
  if (!out) throw ConfigError("csv: cannot open for writing: " + path);
  out << "# d3re " << meta.command << '\n';
  out << "# config: " << canonical_dump(meta.config) << '\n';
  out << "# config_hash: " << meta.hash << '\n';
  out << "# seed: " << meta.seed << '\n';
  for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? "," : "") << cols[c];
  out << '\n';
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    for (Eigen::Index c = 0; c < rows.cols(); ++c)
      out << (c ? "," : "") << fmt_full(rows(i, c));
    out << '\n';
  }
  if (!out) throw ConfigError("csv: write failed: " + path);
}

inline void write_json_artifact(const std::string& path, const json& j) {
  make_parent_dirs(path);
  std::ofstream out(path);
  if (!out) throw ConfigError("artifact: cannot open for writing: " + path);
  out << j.dump(2) << '\n';
  if (!out) throw ConfigError("artifact: write failed: " + path);
}

struct CsvData {
  std::vector<std::pair<std::string, std::string>> notes;  // leading "# key: value" lines
  std::vector<std::string> header;                         // empty when the file has none
  Eigen::MatrixXd values;

  const std::string* note(const std::string& key) const {
    for (const auto& [k, v] : notes)
      if (k == key) return &v;
    return nullptr;
  }
};

inline bool parse_double_token(const std::string& tok, double& out) {
  const char* s = tok.c_str();
  char* end = nullptr;
  out = std::strtod(s, &end);
  if (end == s) return false;
  while (*end == ' ' || *end == '\t') ++end;
  return *end == '\0';
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline CsvData read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("csv: cannot open: " + path);
  CsvData d;
  std::vector<std::vector<double>> rows;
  std::string line;
  bool saw_first = false;
  Eigen::Index width = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::string body = line.substr(1);
      if (!body.empty() && body[0] == ' ') body = body.substr(1);
      const auto colon = body.find(": ");
      if (colon != std::string::npos)
        d.notes.emplace_back(body.substr(0, colon), body.substr(colon + 2));
      continue;
    }
    const std::vector<std::string> toks = split_csv_line(line);
    if (!saw_first) {
      saw_first = true;
      width = static_cast<Eigen::Index>(toks.size());
      bool numeric = true;
      std::vector<double> vals(toks.size());
      for (std::size_t i = 0; i < toks.size() && numeric; ++i)
        numeric = parse_double_token(toks[i], vals[i]);
      if (numeric) {
        rows.push_back(std::move(vals));
      } else {
        d.header = toks;
      }
      continue;
    }
    if (static_cast<Eigen::Index>(toks.size()) != width)
      throw ConfigError("csv: ragged row in " + path);
    std::vector<double> vals(toks.size());
    for (std::size_t i = 0; i < toks.size(); ++i)
      if (!parse_double_token(toks[i], vals[i]))
        throw ConfigError("csv: non-numeric value '" + toks[i] + "' in " + path);
    rows.push_back(std::move(vals));
  }
  d.values.resize(static_cast<Eigen::Index>(rows.size()), width);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (Eigen::Index c = 0; c < width; ++c) d.values(static_cast<Eigen::Index>(i), c) = rows[i][static_cast<std::size_t>(c)];
  return d;
}

// ---------------------------------------------------------- config parsers

inline DataSource parse_source(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config: " + where + " must be an object");
  if (!j.contains("type")) throw ConfigError("config: " + where + " needs a 'type'");
  const std::string type = as_string(j.at("type"), where + ".type");
  if (type == "toy") {
    check_keys(j, where, {"type", "name"});
    if (!j.contains("name")) throw ConfigError("config: " + where + " needs a toy 'name'");
    return DataSource::from_toy(toy_from_name(as_string(j.at("name"), where + ".name")));
  }
  if (type != "gaussian")
    throw ConfigError("config: " + where + ".type must be 'gaussian' or 'toy'");
  check_keys(j, where, {"type", "dim", "mean", "var", "vars", "rho"});

  if (j.contains("rho")) {
    if (j.contains("mean") || j.contains("var") || j.contains("vars"))
      throw ConfigError("config: " + where + ".rho builds unit-variance pairs; drop mean/var");
    if (!j.contains("dim")) throw ConfigError("config: " + where + ".rho needs 'dim'");
    return DataSource::from_gaussian(GaussianSpec::paired(
        as_int(j.at("dim"), where + ".dim"), as_double(j.at("rho"), where + ".rho")));
  }
  if (j.contains("var") && j.contains("vars"))
    throw ConfigError("config: " + where + " takes 'var' or 'vars', not both");

  // Dimension comes from any array present, or from an explicit 'dim'.
  Eigen::Index dim = -1;
  std::vector<double> mean_arr, vars_arr;
  bool mean_is_arr = false;
  double mean_scalar = 0.0;
  if (j.contains("mean")) {
    if (j.at("mean").is_array()) {
      mean_arr = as_double_array(j.at("mean"), where + ".mean");
      mean_is_arr = true;
      dim = static_cast<Eigen::Index>(mean_arr.size());
    } else {
      mean_scalar = as_double(j.at("mean"), where + ".mean");
    }
  }
  if (j.contains("vars")) {
    vars_arr = as_double_array(j.at("vars"), where + ".vars");
    const auto n = static_cast<Eigen::Index>(vars_arr.size());
    if (dim >= 0 && dim != n)
      throw ConfigError("config: " + where + " mean/vars lengths differ");
    dim = n;
  }
  if (j.contains("dim")) {
    const auto n = static_cast<Eigen::Index>(as_int(j.at("dim"), where + ".dim"));
    if (dim >= 0 && dim != n)
      throw ConfigError("config: " + where + ".dim contradicts the array lengths");
    dim = n;
  }
  if (dim < 1)
    throw ConfigError("config: " + where + " needs 'dim' or an array to fix the dimension");

  Eigen::VectorXd mean(dim);
  if (mean_is_arr)
    mean = Eigen::Map<const Eigen::VectorXd>(mean_arr.data(), dim);
  else
    mean.setConstant(mean_scalar);
  if (!vars_arr.empty())
    return DataSource::from_gaussian(GaussianSpec::diagonal(
        std::move(mean), Eigen::Map<const Eigen::VectorXd>(vars_arr.data(), dim)));
  const double var = j.contains("var") ? as_double(j.at("var"), where + ".var") : 1.0;
  return DataSource::from_gaussian(GaussianSpec::isotropic(std::move(mean), var));
}

inline Schedule parse_schedule(const json& j, const std::string& where) {
  if (j.is_string()) {
    const std::string kind = j.get<std::string>();
    if (kind == "linear") return Schedule::linear();
    throw ConfigError("config: " + where + ": schedule '" + kind + "' needs its parameters");
  }
  if (!j.is_object()) throw ConfigError("config: " + where + " must be a string or object");
  if (!j.contains("kind")) throw ConfigError("config: " + where + " needs a 'kind'");
  const std::string kind = as_string(j.at("kind"), where + ".kind");
  if (kind == "linear") {
    check_keys(j, where, {"kind"});
    return Schedule::linear();
  }
  if (kind == "vp") {
    check_keys(j, where, {"kind", "beta_min", "beta_max"});
    if (!j.contains("beta_min") || !j.contains("beta_max"))
      throw ConfigError("config: " + where + " vp schedule needs beta_min and beta_max");
    return Schedule::vp(as_double(j.at("beta_min"), where + ".beta_min"),
                        as_double(j.at("beta_max"), where + ".beta_max"));
  }
  if (kind == "tre") {
    check_keys(j, where, {"kind", "eta"});
    if (!j.contains("eta")) throw ConfigError("config: " + where + " tre schedule needs 'eta'");
    return Schedule::tre(as_double_array(j.at("eta"), where + ".eta"));
  }
  throw ConfigError("config: " + where + ".kind must be linear, vp, or tre");
}

inline InterpolantConfig parse_interpolant(const json& j, const std::string& where) {
  check_keys(j, where, {"method", "schedule", "gamma2", "epsilon"});
  if (!j.contains("method")) throw ConfigError("config: " + where + " needs a 'method'");
  const Method m = method_from_name(as_string(j.at("method"), where + ".method"));
  const Schedule sched =
      j.contains("schedule") ? parse_schedule(j.at("schedule"), where + ".schedule")
                             : Schedule::linear();
  const double gamma2 = j.contains("gamma2") ? as_double(j.at("gamma2"), where + ".gamma2") : 0.5;
  const double default_eps = (m == Method::DDBI || m == Method::DSBI) ? 1e-5 : 0.0;
  const double eps =
      j.contains("epsilon") ? as_double(j.at("epsilon"), where + ".epsilon") : default_eps;
  return InterpolantConfig::make(m, sched, gamma2, eps);
}

inline ScoreNetConfig parse_scorenet(const json& j, const std::string& where, int input_dim) {
  check_keys(j, where,
             {"hidden", "head", "freq_count", "time_input", "quadratic_features",
              "skip_quadratic"});
  ScoreNetConfig c;
  c.input_dim = input_dim;
  if (j.contains("hidden")) {
    if (!j.at("hidden").is_array())
      throw ConfigError("config: " + where + ".hidden must be an array of widths");
    c.hidden.clear();
    for (const auto& w : j.at("hidden")) c.hidden.push_back(as_int(w, where + ".hidden entry"));
  }
  if (j.contains("head")) {
    const std::string h = as_string(j.at("head"), where + ".head");
    if (h == "time")
      c.head = Head::Time;
    else if (h == "joint")
      c.head = Head::Joint;
    else
      throw ConfigError("config: " + where + ".head must be 'time' or 'joint'");
  }
  if (j.contains("freq_count")) c.freq_count = as_int(j.at("freq_count"), where + ".freq_count");
  if (j.contains("time_input")) c.time_input = as_bool(j.at("time_input"), where + ".time_input");
  if (j.contains("quadratic_features"))
    c.quadratic_features = as_bool(j.at("quadratic_features"), where + ".quadratic_features");
  if (j.contains("skip_quadratic"))
    c.skip_quadratic = as_bool(j.at("skip_quadratic"), where + ".skip_quadratic");
  c.validate();
  return c;
}

// Fills the optimizer and batching fields only; interpolant, net, and seed
// are set by the caller.
inline void parse_train_into(const json& j, const std::string& where, TrainConfig& cfg) {
  check_keys(j, where,
             {"loss", "batch", "iterations", "lr", "lr_decay", "weight_scale", "weight_offset",
              "boundary_weight", "sinkhorn_max_iter", "sinkhorn_tol"});
  if (j.contains("loss")) cfg.loss = loss_from_name(as_string(j.at("loss"), where + ".loss"));
  if (j.contains("batch")) cfg.batch = as_int(j.at("batch"), where + ".batch");
  if (j.contains("iterations")) cfg.iterations = as_int(j.at("iterations"), where + ".iterations");
  if (j.contains("lr")) cfg.lr = as_double(j.at("lr"), where + ".lr");
  if (j.contains("lr_decay")) cfg.lr_decay = as_double(j.at("lr_decay"), where + ".lr_decay");
  if (j.contains("weight_scale"))
    cfg.weight_scale = as_double(j.at("weight_scale"), where + ".weight_scale");
  if (j.contains("weight_offset"))
    cfg.weight_offset = as_double(j.at("weight_offset"), where + ".weight_offset");
  if (j.contains("boundary_weight"))
    cfg.boundary_weight = as_double(j.at("boundary_weight"), where + ".boundary_weight");
  if (j.contains("sinkhorn_max_iter"))
    cfg.sinkhorn_max_iter = as_int(j.at("sinkhorn_max_iter"), where + ".sinkhorn_max_iter");
  if (j.contains("sinkhorn_tol"))
    cfg.sinkhorn_tol = as_double(j.at("sinkhorn_tol"), where + ".sinkhorn_tol");
}

inline IntegratorConfig parse_integrator(const json& j, const std::string& where) {
  check_keys(j, where, {"kind", "nodes", "steps", "rtol", "atol"});
  IntegratorConfig c;
  if (j.contains("kind")) c.kind = integrator_from_name(as_string(j.at("kind"), where + ".kind"));
  if (j.contains("nodes")) c.nodes = as_int(j.at("nodes"), where + ".nodes");
  if (j.contains("steps")) c.steps = as_int(j.at("steps"), where + ".steps");
  if (j.contains("rtol")) c.rtol = as_double(j.at("rtol"), where + ".rtol");
  if (j.contains("atol")) c.atol = as_double(j.at("atol"), where + ".atol");
  c.validate();
  return c;
}

// A time score backed either by a trained checkpoint or by the analytic
// Gaussian oracle. The struct owns the model, so keep it alive while the
// callable from make() is in use.
struct ScoreSource {
  bool oracle = false;
  Checkpoint ck;
  InterpolantConfig ic;
  GaussianSpec q0, q1;

  TimeScore make() const { return oracle ? oracle_time_score(ic, q0, q1) : net_time_score(ck.model); }
  int dim() const { return oracle ? static_cast<int>(q0.dim()) : ck.model.config.input_dim; }
};

inline GaussianSpec require_gaussian(const DataSource& src, const std::string& where) {
  if (!src.is_gaussian())
    throw ConfigError("config: " + where + " must be a Gaussian for the oracle score");
  return src.gaussian();
}

inline ScoreSource parse_score(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config: " + where + " must be an object");
  if (!j.contains("mode")) throw ConfigError("config: " + where + " needs a 'mode'");
  const std::string mode = as_string(j.at("mode"), where + ".mode");
  ScoreSource s;
  if (mode == "checkpoint") {
    check_keys(j, where, {"mode", "path"});
    if (!j.contains("path")) throw ConfigError("config: " + where + " needs a checkpoint 'path'");
    s.ck = load_checkpoint(as_string(j.at("path"), where + ".path"));
    return s;
  }
  if (mode != "oracle")
    throw ConfigError("config: " + where + ".mode must be 'checkpoint' or 'oracle'");
  check_keys(j, where, {"mode", "source0", "source1", "interpolant"});
  if (!j.contains("source0") || !j.contains("source1"))
    throw ConfigError("config: " + where + " oracle mode needs source0 and source1");
  s.oracle = true;
  s.q0 = require_gaussian(parse_source(j.at("source0"), where + ".source0"), where + ".source0");
  s.q1 = require_gaussian(parse_source(j.at("source1"), where + ".source1"), where + ".source1");
  if (s.q0.dim() != s.q1.dim())
    throw ConfigError("config: " + where + " oracle endpoints must share a dimension");
  s.ic = j.contains("interpolant")
             ? parse_interpolant(j.at("interpolant"), where + ".interpolant")
             : InterpolantConfig::make(Method::DDBI, Schedule::linear(), 0.5, 1e-5);
  return s;
}

inline std::uint64_t effective_seed(const json& config, bool flag_given, std::uint64_t flag) {
  if (flag_given) return flag;
  if (config.contains("seed")) return as_u64(config.at("seed"), "seed");
  return 0;
}

inline std::vector<std::string> coord_names(int d, const std::string& prefix = "x") {
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

inline double median_of(std::vector<long> v) {
  if (v.empty()) throw ConfigError("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? static_cast<double>(v[n / 2])
               : 0.5 * (static_cast<double>(v[n / 2 - 1]) + static_cast<double>(v[n / 2]));
}

// --------------------------------------------------------------- commands

struct GenDataArgs {
  std::string out, dist;
  int n = 0, dim = 2;
  std::uint64_t seed = 0;
  double mean = 0.0, var = 1.0, rho = 0.0;
  bool mean_given = false, var_given = false, rho_given = false, dim_given = false;
};

inline int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  if (a.n < 1) throw ConfigError("gen-data: --n must be at least 1");
  json cfg{{"command", "gen-data"}, {"dist", a.dist}, {"n", a.n}, {"seed", a.seed}};
  Eigen::MatrixXd rows;
  auto g = make_engine(a.seed, Stream::Source0);
  if (a.dist == "gaussian") {
    if (a.dim < 1) throw ConfigError("gen-data: --dim must be at least 1");
    cfg["dim"] = a.dim;
    GaussianSpec spec = GaussianSpec::isotropic(Eigen::VectorXd::Zero(a.dim), 1.0);
    if (a.rho_given) {
      if (a.mean_given || a.var_given)
        throw ConfigError("gen-data: --rho builds unit-variance pairs; drop --mean/--var");
      spec = GaussianSpec::paired(a.dim, a.rho);
      cfg["rho"] = a.rho;
    } else {
      spec = GaussianSpec::isotropic(Eigen::VectorXd::Constant(a.dim, a.mean), a.var);
      cfg["mean"] = a.mean;
      cfg["var"] = a.var;
    }
    rows = gaussian_sample(spec, a.n, g);
  } else {
    const Toy toy = toy_from_name(a.dist);
    if (a.mean_given || a.var_given || a.rho_given)
      throw ConfigError("gen-data: --mean/--var/--rho apply to the gaussian source only");
    if (a.dim_given && a.dim != 2)
      throw ConfigError("gen-data: toy datasets are two-dimensional");
    cfg["dim"] = 2;
    rows = toy_sample(toy, a.n, g);
  }
  const RunMeta meta("gen-data", cfg, a.seed);
  write_csv(a.out, meta, coord_names(static_cast<int>(rows.cols())), rows);
  out << json{{"command", "gen-data"},
              {"artifact", a.out},
              {"rows", a.n},
              {"dim", rows.cols()},
              {"config_hash", meta.hash},
              {"seed", a.seed}}
             .dump()
      << '\n';
  return 0;
}

struct ConfigArgs {
  std::string config_path, out_dir, points_path, methods;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

inline int cmd_train(const ConfigArgs& a, std::ostream& out) {
  const json cfg = load_json_file(a.config_path);
  check_keys(cfg, "top level", {"seed", "data", "interpolant", "score_net", "train"});
  if (!cfg.contains("data")) throw ConfigError("config: train needs a 'data' section");
  check_keys(cfg.at("data"), "data", {"source0", "source1"});
  if (!cfg.at("data").contains("source0") || !cfg.at("data").contains("source1"))
    throw ConfigError("config: data needs source0 and source1");
  const DataSource src0 = parse_source(cfg.at("data").at("source0"), "data.source0");
  const DataSource src1 = parse_source(cfg.at("data").at("source1"), "data.source1");

  TrainConfig tc;
  tc.interpolant = cfg.contains("interpolant")
                       ? parse_interpolant(cfg.at("interpolant"), "interpolant")
                       : tc.interpolant;
  tc.net = cfg.contains("score_net") ? parse_scorenet(cfg.at("score_net"), "score_net", src0.dim())
                                     : [&] {
                                         ScoreNetConfig c;
                                         c.input_dim = src0.dim();
                                         return c;
                                       }();
  if (cfg.contains("train")) parse_train_into(cfg.at("train"), "train", tc);
  tc.seed = effective_seed(cfg, a.seed_given, a.seed);

  const RunMeta meta("train", cfg, tc.seed);
  const TrainResult res = train(tc, src0, src1);

  std::filesystem::create_directories(a.out_dir);
  const std::string ck_path = a.out_dir + "/checkpoint.d3re";
  save_checkpoint(ck_path, res.model, tc.seed, res.iterations_run,
                  json{{"run_config", meta.config}, {"config_hash", meta.hash}});

  double wall_total = 0.0;
  for (double w : res.wall_ms) wall_total += w;
  json report{{"iterations_run", res.iterations_run},
              {"param_count", res.model.params.flat_size()},
              {"checkpoint", "checkpoint.d3re"},
              {"wall_ms_total", wall_total}};
  report["final_loss"] = res.history.empty() ? json() : json(res.history.back());
  if (!res.history.empty()) {
    const std::size_t tail = std::max<std::size_t>(1, res.history.size() / 10);
    double acc = 0.0;
    for (std::size_t i = res.history.size() - tail; i < res.history.size(); ++i)
      acc += res.history[i];
    report["mean_loss_last_tenth"] = acc / static_cast<double>(tail);
  }
  write_json_artifact(a.out_dir + "/train_report.json", meta.artifact(report));
  out << json{{"command", "train"},
              {"out", a.out_dir},
              {"artifacts", {"checkpoint.d3re", "train_report.json"}},
              {"config_hash", meta.hash},
              {"seed", tc.seed},
              {"iterations_run", res.iterations_run},
              {"final_loss", report["final_loss"]}}
             .dump()
      << '\n';
  return 0;
}

inline int cmd_estimate(const ConfigArgs& a, std::ostream& out) {
  const json cfg = load_json_file(a.config_path);
  check_keys(cfg, "top level", {"seed", "score", "integrator"});
  if (!cfg.contains("score")) throw ConfigError("config: estimate needs a 'score' section");
  const ScoreSource score = parse_score(cfg.at("score"), "score");
  const IntegratorConfig integ = cfg.contains("integrator")
                                     ? parse_integrator(cfg.at("integrator"), "integrator")
                                     : IntegratorConfig{};
  const std::uint64_t seed = effective_seed(cfg, a.seed_given, a.seed);

  const CsvData pts = read_csv(a.points_path);
  if (pts.values.rows() < 1) throw ConfigError("estimate: the points file has no rows");
  if (pts.values.cols() != score.dim())
    throw ConfigError("estimate: points have " + std::to_string(pts.values.cols()) +
                      " columns but the score expects " + std::to_string(score.dim()));

  const TimeScore s = score.make();
  const LogRatioBatch batch = integrate_logratio_batch(s, pts.values, integ);

  Eigen::MatrixXd rows(pts.values.rows(), pts.values.cols() + 2);
  rows.leftCols(pts.values.cols()) = pts.values;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    rows(i, pts.values.cols()) = batch.values[i];
    rows(i, pts.values.cols() + 1) = static_cast<double>(batch.nfe[static_cast<std::size_t>(i)]);
  }
  std::vector<std::string> cols =
      pts.header.empty() ? coord_names(static_cast<int>(pts.values.cols())) : pts.header;
  cols.push_back("log_ratio");
  cols.push_back("nfe");

  const RunMeta meta("estimate", cfg, seed);
  std::filesystem::create_directories(a.out_dir);
  write_csv(a.out_dir + "/logratio.csv", meta, cols, rows);
  out << json{{"command", "estimate"},
              {"out", a.out_dir},
              {"artifacts", {"logratio.csv"}},
              {"rows", rows.rows()},
              {"nfe_total", batch.nfe_total},
              {"config_hash", meta.hash},
              {"seed", seed}}
             .dump()
      << '\n';
  return 0;
}

inline int cmd_mi(const ConfigArgs& a, std::ostream& out) {
  const json cfg = load_json_file(a.config_path);
  check_keys(cfg, "top level", {"seed", "pair", "n", "score", "integrator"});
  if (!cfg.contains("pair")) throw ConfigError("config: mi needs a 'pair' section");
  check_keys(cfg.at("pair"), "pair", {"dim", "rho"});
  if (!cfg.at("pair").contains("dim") || !cfg.at("pair").contains("rho"))
    throw ConfigError("config: pair needs dim and rho");
  const int dim = as_int(cfg.at("pair").at("dim"), "pair.dim");
  const double rho = as_double(cfg.at("pair").at("rho"), "pair.rho");
  const GaussianSpec joint = GaussianSpec::paired(dim, rho);
  const GaussianSpec product = GaussianSpec::isotropic(Eigen::VectorXd::Zero(dim), 1.0);
  const int n = cfg.contains("n") ? as_int(cfg.at("n"), "n") : 4096;
  if (n < 2) throw ConfigError("config: mi needs n at least 2");
  const std::uint64_t seed = effective_seed(cfg, a.seed_given, a.seed);
  const IntegratorConfig integ = cfg.contains("integrator")
                                     ? parse_integrator(cfg.at("integrator"), "integrator")
                                     : IntegratorConfig{};

  // MI is the mean log ratio of the joint against the product of marginals
  // over joint draws; the oracle mode bypasses training entirely.
  ScoreSource score;
  if (cfg.contains("score")) {
    const json& sj = cfg.at("score");
    if (!sj.is_object() || !sj.contains("mode"))
      throw ConfigError("config: score needs a 'mode'");
    const std::string mode = as_string(sj.at("mode"), "score.mode");
    if (mode == "oracle") {
      check_keys(sj, "score", {"mode", "interpolant"});
      score.oracle = true;
      score.q0 = product;
      score.q1 = joint;
      score.ic = sj.contains("interpolant")
                     ? parse_interpolant(sj.at("interpolant"), "score.interpolant")
                     : InterpolantConfig::make(Method::DDBI, Schedule::linear(), 0.5, 1e-5);
    } else if (mode == "checkpoint") {
      check_keys(sj, "score", {"mode", "path"});
      if (!sj.contains("path")) throw ConfigError("config: score needs a checkpoint 'path'");
      score.ck = load_checkpoint(as_string(sj.at("path"), "score.path"));
      if (score.ck.model.config.input_dim != dim)
        throw ConfigError("config: the checkpoint expects dimension " +
                          std::to_string(score.ck.model.config.input_dim));
    } else {
      throw ConfigError("config: score.mode must be 'checkpoint' or 'oracle'");
    }
  } else {
    score.oracle = true;
    score.q0 = product;
    score.q1 = joint;
    score.ic = InterpolantConfig::make(Method::DDBI, Schedule::linear(), 0.5, 1e-5);
  }

  auto g = make_engine(seed, Stream::Eval);
  const Eigen::MatrixXd samples = gaussian_sample(joint, n, g);
  const TimeScore s = score.make();
  const MiReport mi = estimate_mi(s, samples, integ);

  const double closed_form = -0.25 * static_cast<double>(dim) * std::log(1.0 - rho * rho);
  const RunMeta meta("mi", cfg, seed);
  json report{{"estimate", mi.estimate}, {"std_error", mi.std_error},
              {"n", mi.n},               {"nfe_total", mi.nfe_total},
              {"nfe_median", mi.nfe_median}, {"nfe_min", mi.nfe_min},
              {"nfe_max", mi.nfe_max},   {"closed_form", closed_form}};
  std::filesystem::create_directories(a.out_dir);
  write_json_artifact(a.out_dir + "/mi_report.json", meta.artifact(report));
  out << json{{"command", "mi"},
              {"out", a.out_dir},
              {"artifacts", {"mi_report.json"}},
              {"estimate", mi.estimate},
              {"std_error", mi.std_error},
              {"closed_form", closed_form},
              {"config_hash", meta.hash},
              {"seed", seed}}
             .dump()
      << '\n';
  return 0;
}

inline int cmd_density_grid(const ConfigArgs& a, std::ostream& out) {
  const json cfg = load_json_file(a.config_path);
  check_keys(cfg, "top level", {"seed", "score", "base", "grid", "integrator"});
  if (!cfg.contains("score") || !cfg.contains("base") || !cfg.contains("grid"))
    throw ConfigError("config: density-grid needs score, base, and grid sections");
  const ScoreSource score = parse_score(cfg.at("score"), "score");
  const GaussianSpec base = require_gaussian(parse_source(cfg.at("base"), "base"), "base");
  const json& gj = cfg.at("grid");
  check_keys(gj, "grid", {"xlo", "xhi", "ylo", "yhi", "nx", "ny"});
  for (const char* k : {"xlo", "xhi", "ylo", "yhi", "nx", "ny"})
    if (!gj.contains(k)) throw ConfigError(std::string("config: grid needs '") + k + "'");
  const Eigen::Vector2d lo(as_double(gj.at("xlo"), "grid.xlo"), as_double(gj.at("ylo"), "grid.ylo"));
  const Eigen::Vector2d hi(as_double(gj.at("xhi"), "grid.xhi"), as_double(gj.at("yhi"), "grid.yhi"));
  const int nx = as_int(gj.at("nx"), "grid.nx");
  const int ny = as_int(gj.at("ny"), "grid.ny");
  const IntegratorConfig integ = cfg.contains("integrator")
                                     ? parse_integrator(cfg.at("integrator"), "integrator")
                                     : IntegratorConfig{};
  const std::uint64_t seed = effective_seed(cfg, a.seed_given, a.seed);
  if (score.dim() != 2) throw ConfigError("density-grid: the score must be two-dimensional");

  const TimeScore s = score.make();
  const DensityGrid grid = density_grid(s, base, lo, hi, nx, ny, integ);

  Eigen::MatrixXd rows(static_cast<Eigen::Index>(nx) * ny, 3);
  for (int i = 0; i < ny; ++i)
    for (int j = 0; j < nx; ++j) {
      const Eigen::Index r = static_cast<Eigen::Index>(i) * nx + j;
      rows(r, 0) = grid.x_coords[j];
      rows(r, 1) = grid.y_coords[i];
      rows(r, 2) = grid.log_density(i, j);
    }

  // Trapezoid rule over the grid; a well-normalized density integrates to
  // about one when the grid covers the mass.
  const double dx = (hi[0] - lo[0]) / (nx - 1);
  const double dy = (hi[1] - lo[1]) / (ny - 1);
  double integral = 0.0;
  for (int i = 0; i < ny; ++i)
    for (int j = 0; j < nx; ++j) {
      const double w = ((i == 0 || i == ny - 1) ? 0.5 : 1.0) *
                       ((j == 0 || j == nx - 1) ? 0.5 : 1.0);
      integral += w * std::exp(grid.log_density(i, j));
    }
  integral *= dx * dy;

  const RunMeta meta("density-grid", cfg, seed);
  std::filesystem::create_directories(a.out_dir);
  write_csv(a.out_dir + "/density_grid.csv", meta, {"x", "y", "log_density"}, rows);
  json report{{"nx", nx},       {"ny", ny},
              {"xlo", lo[0]},   {"xhi", hi[0]},
              {"ylo", lo[1]},   {"yhi", hi[1]},
              {"nfe_total", grid.nfe_total},
              {"density_integral", integral},
              {"grid_csv", "density_grid.csv"}};
  write_json_artifact(a.out_dir + "/density_meta.json", meta.artifact(report));
  out << json{{"command", "density-grid"},
              {"out", a.out_dir},
              {"artifacts", {"density_grid.csv", "density_meta.json"}},
              {"density_integral", integral},
              {"nfe_total", grid.nfe_total},
              {"config_hash", meta.hash},
              {"seed", seed}}
             .dump()
      << '\n';
  return 0;
}

inline int cmd_sample_interpolant(const ConfigArgs& a, std::ostream& out) {
  const json cfg = load_json_file(a.config_path);
  check_keys(cfg, "top level", {"seed", "data", "interpolant", "trajectories", "times"});
  if (!cfg.contains("data")) throw ConfigError("config: sample-interpolant needs 'data'");
  check_keys(cfg.at("data"), "data", {"source0", "source1"});
  if (!cfg.at("data").contains("source0") || !cfg.at("data").contains("source1"))
    throw ConfigError("config: data needs source0 and source1");
  const DataSource src0 = parse_source(cfg.at("data").at("source0"), "data.source0");
  const DataSource src1 = parse_source(cfg.at("data").at("source1"), "data.source1");
  if (src0.dim() != src1.dim()) throw ConfigError("config: endpoint dimensions differ");
  const InterpolantConfig ic = cfg.contains("interpolant")
                                   ? parse_interpolant(cfg.at("interpolant"), "interpolant")
                                   : InterpolantConfig::make(Method::DDBI, Schedule::linear(), 0.5, 1e-5);
  const int n_traj = cfg.contains("trajectories") ? as_int(cfg.at("trajectories"), "trajectories") : 16;
  const int n_times = cfg.contains("times") ? as_int(cfg.at("times"), "times") : 33;
  if (n_traj < 1) throw ConfigError("config: trajectories must be at least 1");
  if (n_times < 2) throw ConfigError("config: times must be at least 2");
  const std::uint64_t seed = effective_seed(cfg, a.seed_given, a.seed);

  auto g0 = make_engine(seed, Stream::Source0);
  auto g1 = make_engine(seed, Stream::Source1);
  auto gd = make_engine(seed, Stream::Dequantize);
  auto gb = make_engine(seed, Stream::Bridge);
  auto gc = make_engine(seed, Stream::Coupling);
  Eigen::MatrixXd x0 = dequantize(src0.sample(n_traj, g0), ic.epsilon, gd);
  Eigen::MatrixXd x1 = dequantize(src1.sample(n_traj, g1), ic.epsilon, gd);
  if (ic.method == Method::DSBI) {
    const Eigen::VectorXd marg = uniform_marginal(n_traj);
    const SinkhornResult sr = sinkhorn(cost_matrix(x0, x1), marg, marg, 2.0 * ic.gamma2, 1000, 1e-8);
    auto pair = sample_coupling(sr.coupling, x0, x1, n_traj, gc);
    x0 = std::move(pair.first);
    x1 = std::move(pair.second);
  }

  // One standard normal draw per trajectory keeps each path continuous in t.
  const int d = static_cast<int>(x0.cols());
  const Eigen::VectorXd tgrid = Eigen::VectorXd::LinSpaced(n_times, 0.0, 1.0);
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(n_traj) * n_times, 2 + d);
  for (int k = 0; k < n_traj; ++k) {
    const Eigen::VectorXd z = normal_vector(gb, d);
    for (int ti = 0; ti < n_times; ++ti) {
      const double t = tgrid[ti];
      const ScheduleEval se = schedule_eval(ic.schedule, t);
      const double sd = std::sqrt(t * (1.0 - t) * ic.gamma2);
      const Eigen::Index r = static_cast<Eigen::Index>(k) * n_times + ti;
      rows(r, 0) = k;
      rows(r, 1) = t;
      rows.row(r).segment(2, d) =
          (se.alpha * x0.row(k) + se.beta * x1.row(k) + sd * z.transpose());
    }
  }

  std::vector<std::string> cols{"traj", "t"};
  for (const auto& c : coord_names(d)) cols.push_back(c);
  const RunMeta meta("sample-interpolant", cfg, seed);
  std::filesystem::create_directories(a.out_dir);
  write_csv(a.out_dir + "/trajectories.csv", meta, cols, rows);
  out << json{{"command", "sample-interpolant"},
              {"out", a.out_dir},
              {"artifacts", {"trajectories.csv"}},
              {"trajectories", n_traj},
              {"times", n_times},
              {"config_hash", meta.hash},
              {"seed", seed}}
             .dump()
      << '\n';
  return 0;
}

inline int cmd_sinkhorn_report(const ConfigArgs& a, std::ostream& out) {
  const json cfg = load_json_file(a.config_path);
  check_keys(cfg, "top level", {"seed", "data", "n", "gamma2", "max_iter", "tol"});
  if (!cfg.contains("data")) throw ConfigError("config: sinkhorn-report needs 'data'");
  check_keys(cfg.at("data"), "data", {"source0", "source1"});
  if (!cfg.at("data").contains("source0") || !cfg.at("data").contains("source1"))
    throw ConfigError("config: data needs source0 and source1");
  const DataSource src0 = parse_source(cfg.at("data").at("source0"), "data.source0");
  const DataSource src1 = parse_source(cfg.at("data").at("source1"), "data.source1");
  if (src0.dim() != src1.dim()) throw ConfigError("config: endpoint dimensions differ");
  const int n = cfg.contains("n") ? as_int(cfg.at("n"), "n") : 256;
  if (n < 2) throw ConfigError("config: sinkhorn-report needs n at least 2");
  const double gamma2 = cfg.contains("gamma2") ? as_double(cfg.at("gamma2"), "gamma2") : 0.5;
  if (!(gamma2 > 0.0)) throw ConfigError("config: sinkhorn-report needs gamma2 > 0");
  const int max_iter = cfg.contains("max_iter") ? as_int(cfg.at("max_iter"), "max_iter") : 1000;
  const double tol = cfg.contains("tol") ? as_double(cfg.at("tol"), "tol") : 1e-8;
  const std::uint64_t seed = effective_seed(cfg, a.seed_given, a.seed);

  auto g0 = make_engine(seed, Stream::Source0);
  auto g1 = make_engine(seed, Stream::Source1);
  const Eigen::MatrixXd x0 = src0.sample(n, g0);
  const Eigen::MatrixXd x1 = src1.sample(n, g1);
  const Eigen::MatrixXd cost = cost_matrix(x0, x1);
  const Eigen::VectorXd marg = uniform_marginal(n);
  const double reg = 2.0 * gamma2;
  const SinkhornResult sr = sinkhorn(cost, marg, marg, reg, max_iter, tol);

  const double transport_cost = (sr.coupling.array() * cost.array()).sum();
  const double entropy = coupling_entropy(sr.coupling);
  const double objective = entropic_objective(sr.coupling, cost, reg);

  const RunMeta meta("sinkhorn-report", cfg, seed);
  json report{{"objective", objective},
              {"transport_cost", transport_cost},
              {"entropy", entropy},
              {"marginal_error", sr.marginal_error},
              {"iterations", sr.iterations},
              {"converged", sr.converged},
              {"regularizer", reg},
              {"n", n}};
  std::filesystem::create_directories(a.out_dir);
  write_json_artifact(a.out_dir + "/sinkhorn_report.json", meta.artifact(report));
  out << json{{"command", "sinkhorn-report"},
              {"out", a.out_dir},
              {"artifacts", {"sinkhorn_report.json"}},
              {"objective", objective},
              {"marginal_error", sr.marginal_error},
              {"iterations", sr.iterations},
              {"config_hash", meta.hash},
              {"seed", seed}}
             .dump()
      << '\n';
  return 0;
}

inline int cmd_nfe_report(const ConfigArgs& a, std::ostream& out) {
  const json cfg = load_json_file(a.config_path);
  check_keys(cfg, "top level",
             {"seed", "data", "gamma2", "epsilon", "score_net", "train", "eval_n", "integrator"});
  if (!cfg.contains("data")) throw ConfigError("config: nfe-report needs 'data'");
  check_keys(cfg.at("data"), "data", {"source0", "source1"});
  if (!cfg.at("data").contains("source0") || !cfg.at("data").contains("source1"))
    throw ConfigError("config: data needs source0 and source1");
  const DataSource src0 = parse_source(cfg.at("data").at("source0"), "data.source0");
  const DataSource src1 = parse_source(cfg.at("data").at("source1"), "data.source1");
  if (src0.dim() != src1.dim()) throw ConfigError("config: endpoint dimensions differ");
  const double gamma2 = cfg.contains("gamma2") ? as_double(cfg.at("gamma2"), "gamma2") : 0.5;
  const double epsilon = cfg.contains("epsilon") ? as_double(cfg.at("epsilon"), "epsilon") : 1e-5;
  const int eval_n = cfg.contains("eval_n") ? as_int(cfg.at("eval_n"), "eval_n") : 32;
  if (eval_n < 1) throw ConfigError("config: eval_n must be at least 1");
  const std::uint64_t seed = effective_seed(cfg, a.seed_given, a.seed);
  IntegratorConfig integ;
  integ.kind = IntegratorKind::RK45;
  if (cfg.contains("integrator")) integ = parse_integrator(cfg.at("integrator"), "integrator");

  std::vector<Method> methods;
  {
    std::stringstream ss(a.methods);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (tok.empty()) continue;
      methods.push_back(method_from_name(tok));
    }
    if (methods.empty()) throw ConfigError("nfe-report: --methods lists no methods");
  }

  // One evaluation batch shared by every method keeps the comparison paired.
  auto ge = make_engine(seed, Stream::Eval);
  const Eigen::MatrixXd eval_pts = src1.sample(eval_n, ge);

  json per_method = json::array();
  for (Method m : methods) {
    const double eps = (m == Method::DDBI || m == Method::DSBI) ? epsilon : 0.0;
    TrainConfig tc;
    tc.interpolant = InterpolantConfig::make(m, Schedule::linear(), gamma2, eps);
    tc.net = cfg.contains("score_net")
                 ? parse_scorenet(cfg.at("score_net"), "score_net", src0.dim())
                 : [&] {
                     ScoreNetConfig c;
                     c.input_dim = src0.dim();
                     return c;
                   }();
    if (cfg.contains("train")) parse_train_into(cfg.at("train"), "train", tc);
    tc.seed = seed;
    const TrainResult res = train(tc, src0, src1);
    const TimeScore s = net_time_score(res.model);
    const LogRatioBatch batch = integrate_logratio_batch(s, eval_pts, integ);

    double mean_lr = 0.0, mean_nfe = 0.0;
    long nfe_min = batch.nfe.front(), nfe_max = batch.nfe.front();
    for (std::size_t i = 0; i < batch.nfe.size(); ++i) {
      mean_lr += batch.values[static_cast<Eigen::Index>(i)];
      mean_nfe += static_cast<double>(batch.nfe[i]);
      nfe_min = std::min(nfe_min, batch.nfe[i]);
      nfe_max = std::max(nfe_max, batch.nfe[i]);
    }
    mean_lr /= static_cast<double>(batch.nfe.size());
    mean_nfe /= static_cast<double>(batch.nfe.size());
    per_method.push_back(json{{"method", method_name(m)},
                              {"nfe_median", median_of(batch.nfe)},
                              {"nfe_mean", mean_nfe},
                              {"nfe_min", nfe_min},
                              {"nfe_max", nfe_max},
                              {"nfe_total", batch.nfe_total},
                              {"mean_log_ratio", mean_lr},
                              {"final_loss", res.history.empty() ? json() : json(res.history.back())}});
  }

  const RunMeta meta("nfe-report", cfg, seed);
  json report{{"methods", per_method}, {"eval_n", eval_n}, {"integrator", integrator_name(integ.kind)}};
  std::filesystem::create_directories(a.out_dir);
  write_json_artifact(a.out_dir + "/nfe_report.json", meta.artifact(report));
  out << json{{"command", "nfe-report"},
              {"out", a.out_dir},
              {"artifacts", {"nfe_report.json"}},
              {"methods", per_method},
              {"config_hash", meta.hash},
              {"seed", seed}}
             .dump()
      << '\n';
  return 0;
}

// ----------------------------------------------------------------- verify

inline bool verify_artifact(const std::string& path, std::ostream& out) {
  const auto fail = [&](const std::string& why) {
    out << "FAIL " << path << ": " << why << '\n';
    return false;
  };
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) return fail("no such file");

  json config;
  std::string claimed;
  bool has_seed = false;
  const std::string ext = std::filesystem::path(path).extension().string();
  try {
    if (ext == ".csv") {
      const CsvData d = read_csv(path);
      const std::string* cfg = d.note("config");
      const std::string* hash = d.note("config_hash");
      has_seed = d.note("seed") != nullptr;
      if (!cfg || !hash) return fail("missing embedded config or config_hash note");
      config = json::parse(*cfg);
      claimed = *hash;
    } else if (ext == ".d3re") {
      std::ifstream in(path, std::ios::binary);
      std::string line;
      if (!std::getline(in, line)) return fail("missing checkpoint header");
      const json header = json::parse(line);
      if (!header.contains("run_config") || !header.contains("config_hash"))
        return fail("checkpoint header lacks run_config or config_hash");
      has_seed = header.contains("seed");
      config = header.at("run_config");
      claimed = header.at("config_hash").get<std::string>();
    } else {
      const json j = load_json_file(path);
      if (!j.contains("config") || !j.contains("config_hash"))
        return fail("missing config or config_hash field");
      has_seed = j.contains("seed");
      config = j.at("config");
      claimed = j.at("config_hash").get<std::string>();
    }
  } catch (const std::exception& e) {
    return fail(std::string("unreadable: ") + e.what());
  }
  if (!has_seed) return fail("missing embedded seed");
  const std::string actual = config_hash(config);
  if (actual != claimed)
    return fail("config hash mismatch: embedded " + claimed + ", recomputed " + actual);
  out << "PASS " << path << '\n';
  return true;
}

// Fast internal consistency checks, run when verify gets no file arguments.
// Each returns an empty string on success and a reason on failure.
inline std::vector<std::pair<std::string, std::function<std::string()>>> self_checks() {
  std::vector<std::pair<std::string, std::function<std::string()>>> checks;

  checks.emplace_back("quadrature-monomials", [] {
    Eigen::VectorXd nodes, w;
    detail::gauss_legendre(64, nodes, w);
    for (int k = 0; k <= 10; ++k) {
      double acc = 0.0;
      for (int j = 0; j < 64; ++j) acc += 0.5 * w[j] * std::pow(0.5 * (1.0 + nodes[j]), k);
      const double want = 1.0 / (k + 1.0);
      if (std::abs(acc - want) > 1e-13)
        return "degree " + std::to_string(k) + " off by " + fmt_full(std::abs(acc - want));
    }
    return std::string();
  });

  checks.emplace_back("conditional-score-derivative", [] {
    const auto ic = InterpolantConfig::make(Method::DDBI, Schedule::linear(), 0.5, 1e-3);
    auto g = make_engine(11, Stream::Eval);
    const double h = 1e-6;
    for (int i = 0; i < 20; ++i) {
      const Eigen::VectorXd x0 = normal_vector(g, 3);
      const Eigen::VectorXd x1 = normal_vector(g, 3);
      const double t = 0.1 + 0.8 * uniform01(g);
      const PathPoint p = sample_path(ic, x0, x1, t, g);
      const double analytic = conditional_time_score(ic, p);
      const double fd = (conditional_logpdf(ic, x0, x1, t + h, p.xt) -
                         conditional_logpdf(ic, x0, x1, t - h, p.xt)) /
                        (2.0 * h);
      const double rel = std::abs(analytic - fd) / std::max(1.0, std::abs(analytic));
      if (rel > 1e-5) return "relative error " + fmt_full(rel) + " at t=" + fmt_full(t);
    }
    return std::string();
  });

  checks.emplace_back("bridge-variance-identity", [] {
    const auto di = InterpolantConfig::make(Method::DI, Schedule::linear(), 0.0, 0.0);
    const auto dbi = InterpolantConfig::make(Method::DBI, Schedule::linear(), 0.5, 0.0);
    const auto q0 = GaussianSpec::isotropic(Eigen::VectorXd::Zero(2), 1.0);
    const auto q1 = GaussianSpec::isotropic(Eigen::VectorXd::Ones(2), 2.0);
    for (double t : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      const Eigen::VectorXd a = gaussian_marginal(dbi, q0, q1, t).cov_diagonal();
      const Eigen::VectorXd b = gaussian_marginal(di, q0, q1, t).cov_diagonal();
      const double want = t * (1.0 - t) * 0.5;
      if (((a - b).array() - want).abs().maxCoeff() > 1e-12)
        return "variance gap wrong at t=" + fmt_full(t);
    }
    return std::string();
  });

  checks.emplace_back("sinkhorn-marginals", [] {
    auto g = make_engine(5, Stream::Coupling);
    const Eigen::MatrixXd x0 = normal_matrix(g, 32, 2);
    const Eigen::MatrixXd x1 = normal_matrix(g, 32, 2).array() + 1.0;
    const Eigen::MatrixXd cost = cost_matrix(x0, x1);
    const Eigen::VectorXd marg = uniform_marginal(32);
    const SinkhornResult sr = sinkhorn(cost, marg, marg, 1.0, 2000, 1e-9);
    if (sr.marginal_error > 1e-6)
      return "marginal error " + fmt_full(sr.marginal_error);
    const Eigen::MatrixXd indep = marg * marg.transpose();
    if (entropic_objective(sr.coupling, cost, 1.0) > entropic_objective(indep, cost, 1.0) + 1e-9)
      return std::string("entropic objective above the independent coupling");
    return std::string();
  });

  checks.emplace_back("oracle-integral", [] {
    const auto ic = InterpolantConfig::make(Method::DBI, Schedule::linear(), 0.5, 0.0);
    const auto q0 = GaussianSpec::isotropic(Eigen::VectorXd::Zero(1), 1.0);
    const auto q1 = GaussianSpec::isotropic(Eigen::VectorXd::Ones(1), 1.0);
    const TimeScore s = oracle_time_score(ic, q0, q1);
    const IntegratorConfig integ;
    for (double x : {-2.0, 0.3, 3.0}) {
      const double got = integrate_logratio(s, Eigen::VectorXd::Constant(1, x), integ).value;
      if (std::abs(got - (x - 0.5)) > 1e-6)
        return "log ratio off by " + fmt_full(std::abs(got - (x - 0.5))) + " at x=" + fmt_full(x);
    }
    return std::string();
  });

  checks.emplace_back("sampling-determinism", [] {
    auto g1 = make_engine(7, Stream::Source0);
    auto g2 = make_engine(7, Stream::Source0);
    const Eigen::MatrixXd a = toy_sample(Toy::Checkerboard, 64, g1);
    const Eigen::MatrixXd b = toy_sample(Toy::Checkerboard, 64, g2);
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index c = 0; c < a.cols(); ++c)
        if (fmt_full(a(i, c)) != fmt_full(b(i, c)))
          return std::string("repeated draws differ at row ") + std::to_string(i);
    return std::string();
  });

  return checks;
}

inline int cmd_verify(const std::vector<std::string>& paths, std::ostream& out,
                      std::ostream& err) {
  if (!paths.empty()) {
    int failed = 0;
    for (const auto& p : paths)
      if (!verify_artifact(p, out)) ++failed;
    if (failed > 0) {
      err << json{{"error",
                   {{"type", "verify"},
                    {"message", std::to_string(failed) + " of " + std::to_string(paths.size()) +
                                    " artifacts failed verification"},
                    {"exit_code", 2}}}}
                 .dump()
          << '\n';
      return 2;
    }
    return 0;
  }
  int failed = 0;
  for (const auto& [name, run] : self_checks()) {
    std::string why;
    try {
      why = run();
    } catch (const std::exception& e) {
      why = std::string("threw: ") + e.what();
    }
    if (why.empty()) {
      out << "PASS " << name << '\n';
    } else {
      out << "FAIL " << name << ": " << why << '\n';
      ++failed;
    }
  }
  if (failed > 0) {
    err << json{{"error",
                 {{"type", "verify"},
                  {"message", std::to_string(failed) + " self-checks failed"},
                  {"exit_code", 1}}}}
               .dump()
        << '\n';
    return 1;
  }
  return 0;
}

}  // namespace clifront

// Entry point used by the binary and the tests. Arguments exclude the
// program name. Success prints a one-line JSON summary on the output
// stream; failures print a one-line JSON error object on the error stream.
inline int run_cli(std::vector<std::string> args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  namespace cf = clifront;
  using nlohmann::json;

  CLI::App app{"d3re: log density ratios, mutual information, and densities from two samples"};
  app.name("d3re");
  app.require_subcommand(1);

  cf::GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Sample a dataset and write it to CSV");
  gen_cmd->add_option("--out", gen.out, "output CSV path")->required();
  gen_cmd->add_option("--dist", gen.dist,
                      "gaussian or a toy name (swissroll, circles, rings, moons, 8gaussians, "
                      "pinwheel, 2spirals, checkerboard)")
      ->required();
  gen_cmd->add_option("--n", gen.n, "number of samples")->required();
  auto* gen_dim = gen_cmd->add_option("--dim", gen.dim, "dimension (gaussian only, default 2)");
  gen_cmd->add_option("--seed", gen.seed, "random seed (default 0)");
  auto* gen_mean = gen_cmd->add_option("--mean", gen.mean, "gaussian mean (default 0)");
  auto* gen_var = gen_cmd->add_option("--var", gen.var, "gaussian variance (default 1)");
  auto* gen_rho =
      gen_cmd->add_option("--rho", gen.rho, "pairwise correlation; builds unit-variance pairs");

  const auto add_config_cmd = [&](const char* name, const char* help, cf::ConfigArgs& dst,
                                  bool with_points = false, bool with_methods = false) {
    auto* cmd = app.add_subcommand(name, help);
    cmd->add_option("--config", dst.config_path, "JSON config path")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--out", dst.out_dir, "output directory")->required();
    cmd->add_option("--seed", dst.seed, "override the config seed");
    if (with_points)
      cmd->add_option("--points", dst.points_path, "CSV of evaluation points")
          ->required()
          ->check(CLI::ExistingFile);
    if (with_methods)
      cmd->add_option("--methods", dst.methods, "comma-separated method list (default di,ddbi,dsbi)");
    return cmd;
  };

  cf::ConfigArgs train_a, est_a, mi_a, dg_a, si_a, sk_a, nfe_a;
  nfe_a.methods = "di,ddbi,dsbi";
  auto* train_cmd = add_config_cmd("train", "Train a time-score model and write a checkpoint", train_a);
  auto* est_cmd = add_config_cmd("estimate", "Integrate the time score over t to log ratios at given points",
                                 est_a, true);
  auto* mi_cmd = add_config_cmd("mi", "Estimate mutual information of a correlated Gaussian pair", mi_a);
  auto* dg_cmd = add_config_cmd("density-grid", "Evaluate a 2-d density on a grid", dg_a);
  auto* si_cmd = add_config_cmd("sample-interpolant", "Emit bridge trajectories between the endpoints", si_a);
  auto* sk_cmd = add_config_cmd("sinkhorn-report", "Report the entropic coupling of one sampled batch", sk_a);
  auto* nfe_cmd = add_config_cmd("nfe-report", "Train per method and compare integrator cost", nfe_a,
                                 false, true);

  std::vector<std::string> verify_paths;
  auto* verify_cmd = app.add_subcommand(
      "verify", "Re-hash artifact files and confirm their embedded config hashes; with no "
                "files, run built-in self-checks");
  verify_cmd->add_option("paths", verify_paths, "artifact files to verify");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << json{{"error", {{"type", "config"}, {"message", e.what()}, {"exit_code", 2}}}}.dump()
        << '\n';
    return 2;
  }

  gen.mean_given = gen_mean->count() > 0;
  gen.var_given = gen_var->count() > 0;
  gen.rho_given = gen_rho->count() > 0;
  gen.dim_given = gen_dim->count() > 0;
  for (auto [cmd, dst] : {std::pair{train_cmd, &train_a}, {est_cmd, &est_a}, {mi_cmd, &mi_a},
                          {dg_cmd, &dg_a}, {si_cmd, &si_a}, {sk_cmd, &sk_a}, {nfe_cmd, &nfe_a}})
    dst->seed_given = cmd->count("--seed") > 0;

  try {
    if (gen_cmd->parsed()) return cf::cmd_gen_data(gen, out);
    if (train_cmd->parsed()) return cf::cmd_train(train_a, out);
    if (est_cmd->parsed()) return cf::cmd_estimate(est_a, out);
    if (mi_cmd->parsed()) return cf::cmd_mi(mi_a, out);
    if (dg_cmd->parsed()) return cf::cmd_density_grid(dg_a, out);
    if (si_cmd->parsed()) return cf::cmd_sample_interpolant(si_a, out);
    if (sk_cmd->parsed()) return cf::cmd_sinkhorn_report(sk_a, out);
    if (nfe_cmd->parsed()) return cf::cmd_nfe_report(nfe_a, out);
    if (verify_cmd->parsed()) return cf::cmd_verify(verify_paths, out, err);
    out << app.help();
    return 0;
  } catch (const ConfigError& e) {
    err << json{{"error", {{"type", "config"}, {"message", e.what()}, {"exit_code", 2}}}}.dump()
        << '\n';
    return 2;
  } catch (const NumericError& e) {
    err << json{{"error", {{"type", "numeric"}, {"message", e.what()}, {"exit_code", 3}}}}.dump()
        << '\n';
    return 3;
  } catch (const nlohmann::json::exception& e) {
    err << json{{"error", {{"type", "config"}, {"message", e.what()}, {"exit_code", 2}}}}.dump()
        << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << json{{"error", {{"type", "internal"}, {"message", e.what()}, {"exit_code", 1}}}}.dump()
        << '\n';
    return 1;
  }
}

}  // namespace d3re
