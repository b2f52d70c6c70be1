#pragma once

// Trainable score models over (x, t): a scalar time-score head or a joint
// head producing [time-score, data-score...]. Time enters through Fourier
// features so the losses can differentiate the model in t exactly.

#include <Eigen/Dense>

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "d3re/errors.hpp"
#include "d3re/mlp.hpp"
#include "d3re/rng.hpp"
#include "d3re/schedule.hpp"
#include "d3re/tensor.hpp"

namespace d3re {

enum class Head { Time, Joint };

struct ScoreNetConfig {
  int input_dim = 1;
  std::vector<int> hidden = {128, 128};
  Head head = Head::Time;
  int freq_count = 8;     // Fourier pairs in the time embedding
  bool time_input = true; // false builds a plain classifier over x
  // Appends x_i^2 columns to the input features. Lets the network carry
  // quadratic structure into regions the data barely visits.
  bool quadratic_features = false;
  // Adds a zero-initialized linear head over [1, e(t)] (x) [1, x, x^2] in
  // parallel with the mlp. Scores of near-Gaussian marginals are close to
  // quadratic in x, so this pathway extrapolates far better in the tails
  // than saturating activations and learns quickly under noisy gradients.
  bool skip_quadratic = false;

  int embed_dim() const { return time_input ? 1 + 2 * freq_count : 0; }
  int feature_dim() const { return quadratic_features ? 2 * input_dim : input_dim; }
  int in_width() const { return feature_dim() + embed_dim(); }
  int out_width() const { return head == Head::Joint ? input_dim + 1 : 1; }
  int skip_dim() const { return (1 + embed_dim()) * (1 + 2 * input_dim); }

  MlpSpec mlp() const {
    MlpSpec spec;
    spec.widths.push_back(in_width());
    for (int w : hidden) spec.widths.push_back(w);
    spec.widths.push_back(out_width());
    return spec;
  }

  void validate() const {
    if (input_dim < 1) throw ConfigError("score net: input_dim must be at least 1");
    if (freq_count < 0) throw ConfigError("score net: freq_count must be nonnegative");
    for (int w : hidden)
      if (w < 1) throw ConfigError("score net: hidden widths must be at least 1");
  }
};

struct ScoreModel {
  ScoreNetConfig config;
  ParamSet params;
};

inline ScoreModel score_init(const ScoreNetConfig& config, std::mt19937_64& g,
                             bool zero_last = true) {
  config.validate();
  ScoreModel m{config, mlp_init(config.mlp(), g, zero_last)};
  if (config.skip_quadratic)
    m.params.add("skip.weight",
                 Tensor({static_cast<Eigen::Index>(config.out_width()),
                         static_cast<Eigen::Index>(config.skip_dim())}));
  return m;
}

// Embedding e(t) = [t, sin(2*pi*k*t), cos(2*pi*k*t)]_{k=1..K} and its exact
// t-derivative.
inline void time_embedding(int freq_count, double t, Eigen::VectorXd& e, Eigen::VectorXd& de) {
  e.resize(1 + 2 * freq_count);
  de.resize(1 + 2 * freq_count);
  e[0] = t;
  de[0] = 1.0;
  for (int k = 1; k <= freq_count; ++k) {
    const double w = kTwoPi * k;
    e[2 * k - 1] = std::sin(w * t);
    e[2 * k] = std::cos(w * t);
    de[2 * k - 1] = w * std::cos(w * t);
    de[2 * k] = -w * std::sin(w * t);
  }
}

namespace detail {

// Network input rows [x_i, e(t_i)] and, on demand, the matching tangent
// rows for a pure-time direction [0, de(t_i)].
inline Eigen::MatrixXd score_inputs(const ScoreNetConfig& c, const Eigen::MatrixXd& x,
                                    const Eigen::VectorXd& t) {
  if (x.cols() != c.input_dim) throw ConfigError("score net: point dimension mismatch");
  if (c.time_input && t.size() != x.rows())
    throw ConfigError("score net: one time per point required");
  Eigen::MatrixXd in(x.rows(), c.in_width());
  in.leftCols(c.input_dim) = x;
  if (c.quadratic_features) in.middleCols(c.input_dim, c.input_dim) = x.cwiseAbs2();
  if (c.time_input) {
    Eigen::VectorXd e, de;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      check_time(t[i]);
      time_embedding(c.freq_count, t[i], e, de);
      in.row(i).tail(c.embed_dim()) = e.transpose();
    }
  }
  return in;
}

inline Eigen::MatrixXd score_time_tangent(const ScoreNetConfig& c, const Eigen::VectorXd& t,
                                          Eigen::Index rows) {
  Eigen::MatrixXd tangent = Eigen::MatrixXd::Zero(rows, c.in_width());
  if (c.time_input) {
    Eigen::VectorXd e, de;
    for (Eigen::Index i = 0; i < rows; ++i) {
      time_embedding(c.freq_count, t[i], e, de);
      tangent.row(i).tail(c.embed_dim()) = de.transpose();
    }
  }
  return tangent;
}

inline Eigen::MatrixXd score_x_tangent(const ScoreNetConfig& c, const Eigen::MatrixXd& x,
                                       const Eigen::MatrixXd& v) {
  if (v.cols() != c.input_dim) throw ConfigError("score net: probe dimension mismatch");
  Eigen::MatrixXd tangent = Eigen::MatrixXd::Zero(v.rows(), c.in_width());
  tangent.leftCols(c.input_dim) = v;
  if (c.quadratic_features)
    tangent.middleCols(c.input_dim, c.input_dim) = 2.0 * x.cwiseProduct(v);
  return tangent;
}

// Skip-head features psi = [f_j, f_j x, f_j x^2]_j with f = [1, e(t)]. The
// leading 1 matters: e(t) alone cannot represent coefficients that are
// constant in t. When dot is given it receives the exact t-derivative,
// which is zero for nets without a time input.
inline Eigen::MatrixXd skip_features(const ScoreNetConfig& c, const Eigen::MatrixXd& x,
                                     const Eigen::VectorXd& t,
                                     Eigen::MatrixXd* dot = nullptr) {
  const Eigen::Index d = c.input_dim;
  const Eigen::Index block = 1 + 2 * d;
  const Eigen::Index fdim = 1 + c.embed_dim();
  Eigen::MatrixXd psi(x.rows(), c.skip_dim());
  if (dot) dot->setZero(x.rows(), c.skip_dim());
  Eigen::VectorXd e, de;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Eigen::RowVectorXd xi = x.row(i);
    const Eigen::RowVectorXd xi2 = xi.cwiseAbs2();
    psi(i, 0) = 1.0;
    psi.row(i).segment(1, d) = xi;
    psi.row(i).segment(1 + d, d) = xi2;
    if (!c.time_input) continue;
    time_embedding(c.freq_count, t[i], e, de);
    for (Eigen::Index j = 1; j < fdim; ++j) {
      psi(i, j * block) = e[j - 1];
      psi.row(i).segment(j * block + 1, d) = e[j - 1] * xi;
      psi.row(i).segment(j * block + 1 + d, d) = e[j - 1] * xi2;
      if (dot) {
        (*dot)(i, j * block) = de[j - 1];
        dot->row(i).segment(j * block + 1, d) = de[j - 1] * xi;
        dot->row(i).segment(j * block + 1 + d, d) = de[j - 1] * xi2;
      }
    }
  }
  return psi;
}

// Directional x-derivative of the skip features along per-row v:
// [0, f_j v, 2 f_j x v].
inline Eigen::MatrixXd skip_features_xdir(const ScoreNetConfig& c, const Eigen::MatrixXd& x,
                                          const Eigen::VectorXd& t, const Eigen::MatrixXd& v) {
  const Eigen::Index d = c.input_dim;
  const Eigen::Index block = 1 + 2 * d;
  const Eigen::Index fdim = 1 + c.embed_dim();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(x.rows(), c.skip_dim());
  Eigen::VectorXd e, de;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Eigen::RowVectorXd vi = v.row(i);
    const Eigen::RowVectorXd xv = 2.0 * x.row(i).cwiseProduct(vi);
    out.row(i).segment(1, d) = vi;
    out.row(i).segment(1 + d, d) = xv;
    if (!c.time_input) continue;
    time_embedding(c.freq_count, t[i], e, de);
    for (Eigen::Index j = 1; j < fdim; ++j) {
      out.row(i).segment(j * block + 1, d) = e[j - 1] * vi;
      out.row(i).segment(j * block + 1 + d, d) = e[j - 1] * xv;
    }
  }
  return out;
}

}  // namespace detail

// Batched forward pass; rows of the result follow the head layout.
inline Eigen::MatrixXd score_forward(const ScoreModel& m, const Eigen::MatrixXd& x,
                                     const Eigen::VectorXd& t) {
  Eigen::MatrixXd out =
      mlp_forward(m.config.mlp(), m.params, detail::score_inputs(m.config, x, t));
  if (m.config.skip_quadratic)
    out += detail::skip_features(m.config, x, t) * m.params["skip.weight"].mat().transpose();
  return out;
}

inline Eigen::VectorXd score_forward_point(const ScoreModel& m, const Eigen::VectorXd& x,
                                           double t) {
  const Eigen::MatrixXd out =
      score_forward(m, x.transpose(), Eigen::VectorXd::Constant(1, t));
  return out.row(0).transpose();
}

// Output and its exact t-derivative, via a dual pass through the embedding.
inline Dual score_dt(const ScoreModel& m, const Eigen::MatrixXd& x, const Eigen::VectorXd& t) {
  const Eigen::MatrixXd in = detail::score_inputs(m.config, x, t);
  Dual out;
  if (!m.config.time_input) {
    out.value = mlp_forward(m.config.mlp(), m.params, in);
    out.tangent = Eigen::MatrixXd::Zero(out.value.rows(), out.value.cols());
  } else {
    out = mlp_jvp(m.config.mlp(), m.params,
                  Dual{in, detail::score_time_tangent(m.config, t, x.rows())});
  }
  if (m.config.skip_quadratic) {
    Eigen::MatrixXd dot;
    const Eigen::MatrixXd psi = detail::skip_features(m.config, x, t, &dot);
    const auto w = m.params["skip.weight"].mat();
    out.value += psi * w.transpose();
    out.tangent += dot * w.transpose();
  }
  return out;
}

// Output and its directional x-derivative along per-row directions v.
inline Dual score_x_jvp(const ScoreModel& m, const Eigen::MatrixXd& x, const Eigen::VectorXd& t,
                        const Eigen::MatrixXd& v) {
  Dual out = mlp_jvp(m.config.mlp(), m.params,
                     Dual{detail::score_inputs(m.config, x, t),
                          detail::score_x_tangent(m.config, x, v)});
  if (m.config.skip_quadratic) {
    const auto w = m.params["skip.weight"].mat();
    out.value += detail::skip_features(m.config, x, t) * w.transpose();
    out.tangent += detail::skip_features_xdir(m.config, x, t, v) * w.transpose();
  }
  return out;
}

// Parameter gradient of sum(upstream . output).
inline ParamSet score_backprop(const ScoreModel& m, const Eigen::MatrixXd& x,
                               const Eigen::VectorXd& t, const Eigen::MatrixXd& upstream) {
  ParamSet grads =
      mlp_backprop(m.config.mlp(), m.params, detail::score_inputs(m.config, x, t), upstream);
  if (m.config.skip_quadratic)
    grads["skip.weight"].mat() = upstream.transpose() * detail::skip_features(m.config, x, t);
  return grads;
}

// Parameter gradient of sum(up_value . output) + sum(up_tangent . d output/dt).
inline ParamSet score_dt_backprop(const ScoreModel& m, const Eigen::MatrixXd& x,
                                  const Eigen::VectorXd& t, const Eigen::MatrixXd& up_value,
                                  const Eigen::MatrixXd& up_tangent) {
  if (!m.config.time_input)
    throw ConfigError("score net: no time pathway to differentiate");
  ParamSet grads = mlp_jvp_backprop(m.config.mlp(), m.params,
                                    Dual{detail::score_inputs(m.config, x, t),
                                         detail::score_time_tangent(m.config, t, x.rows())},
                                    up_value, up_tangent);
  if (m.config.skip_quadratic) {
    Eigen::MatrixXd dot;
    const Eigen::MatrixXd psi = detail::skip_features(m.config, x, t, &dot);
    grads["skip.weight"].mat() =
        up_value.transpose() * psi + up_tangent.transpose() * dot;
  }
  return grads;
}

// Parameter gradient of sum(up_value . output) + sum(up_tangent . J_x output v).
inline ParamSet score_x_jvp_backprop(const ScoreModel& m, const Eigen::MatrixXd& x,
                                     const Eigen::VectorXd& t, const Eigen::MatrixXd& v,
                                     const Eigen::MatrixXd& up_value,
                                     const Eigen::MatrixXd& up_tangent) {
  ParamSet grads = mlp_jvp_backprop(m.config.mlp(), m.params,
                                    Dual{detail::score_inputs(m.config, x, t),
                                         detail::score_x_tangent(m.config, x, v)},
                                    up_value, up_tangent);
  if (m.config.skip_quadratic)
    grads["skip.weight"].mat() =
        up_value.transpose() * detail::skip_features(m.config, x, t) +
        up_tangent.transpose() * detail::skip_features_xdir(m.config, x, t, v);
  return grads;
}

struct HutchinsonEval {
  Eigen::VectorXd st;    // time-score component per sample
  Eigen::MatrixXd sx;    // data-score components per sample
  Eigen::VectorXd quad;  // v' (grad_x s[x]) v per sample
};

// One forward pass plus one JVP along v gives the quadratic probe
// v' (grad_x s[x]) v without materializing the Jacobian.
inline HutchinsonEval score_hutchinson(const ScoreModel& m, const Eigen::MatrixXd& x,
                                       const Eigen::VectorXd& t, const Eigen::MatrixXd& v) {
  if (m.config.head != Head::Joint)
    throw ConfigError("score net: hutchinson probe needs the joint head");
  const Dual dual = score_x_jvp(m, x, t, v);
  HutchinsonEval out;
  out.st = dual.value.col(0);
  out.sx = dual.value.rightCols(m.config.input_dim);
  out.quad = (dual.tangent.rightCols(m.config.input_dim).array() * v.array())
                 .rowwise()
                 .sum()
                 .matrix();
  return out;
}

// Checkpoint layout: one JSON header line, then the parameters as raw
// little-endian 64-bit floats in layer order, weights before bias, weight
// rows contiguous, the skip-head weight (if any) last.
static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

// Callers may attach extra header fields (provenance such as a run-config
// hash); the loader ignores keys it does not know, and the core fields
// always win on collision.
inline void save_checkpoint(const std::string& path, const ScoreModel& m, std::uint64_t seed,
                            std::int64_t iteration,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  if (!extra.is_object()) throw ConfigError("checkpoint: extra header fields must be an object");
  nlohmann::json header = extra;
  header["format"] = "d3re-checkpoint-v1";
  header["config"] = {{"input_dim", m.config.input_dim},
                      {"hidden", m.config.hidden},
                      {"head", m.config.head == Head::Joint ? "joint" : "time"},
                      {"freq_count", m.config.freq_count},
                      {"time_input", m.config.time_input},
                      {"quadratic_features", m.config.quadratic_features},
                      {"skip_quadratic", m.config.skip_quadratic}};
  header["seed"] = seed;
  header["iteration"] = iteration;
  header["param_count"] = m.params.flat_size();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("checkpoint: cannot open for writing: " + path);
  out << header.dump() << '\n';
  for (std::size_t i = 0; i < m.params.count(); ++i) {
    const Tensor& tensor = m.params.at(i);
    out.write(reinterpret_cast<const char*>(tensor.data().data()),
              static_cast<std::streamsize>(sizeof(double) * tensor.size()));
  }
  if (!out) throw ConfigError("checkpoint: write failed: " + path);
}

struct Checkpoint {
  ScoreModel model;
  std::uint64_t seed = 0;
  std::int64_t iteration = 0;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("checkpoint: cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("checkpoint: missing header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint: bad header: ") + e.what());
  }
  if (header.value("format", "") != "d3re-checkpoint-v1")
    throw ConfigError("checkpoint: unknown format tag");

  ScoreNetConfig config;
  const auto& j = header.at("config");
  config.input_dim = j.at("input_dim").get<int>();
  config.hidden = j.at("hidden").get<std::vector<int>>();
  const std::string head = j.at("head").get<std::string>();
  if (head == "joint")
    config.head = Head::Joint;
  else if (head == "time")
    config.head = Head::Time;
  else
    throw ConfigError("checkpoint: unknown head kind: " + head);
  config.freq_count = j.at("freq_count").get<int>();
  config.time_input = j.at("time_input").get<bool>();
  config.quadratic_features = j.at("quadratic_features").get<bool>();
  config.skip_quadratic = j.at("skip_quadratic").get<bool>();
  config.validate();

  Checkpoint ck;
  ck.seed = header.at("seed").get<std::uint64_t>();
  ck.iteration = header.at("iteration").get<std::int64_t>();
  auto g = make_engine(0, Stream::ParamInit);  // placeholder values, overwritten below
  ck.model = score_init(config, g);
  const auto expected = header.at("param_count").get<std::int64_t>();
  if (expected != static_cast<std::int64_t>(ck.model.params.flat_size()))
    throw ConfigError("checkpoint: parameter count does not match the config");
  for (std::size_t i = 0; i < ck.model.params.count(); ++i) {
    Tensor& tensor = ck.model.params.at(i);
    in.read(reinterpret_cast<char*>(tensor.data().data()),
            static_cast<std::streamsize>(sizeof(double) * tensor.size()));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(double) * tensor.size()))
      throw ConfigError("checkpoint: truncated parameter blob");
    tensor.ensure_finite("checkpoint parameter");
  }
  char extra;
  if (in.read(&extra, 1) && in.gcount() == 1)
    throw ConfigError("checkpoint: trailing bytes after the parameter blob");
  return ck;
}

}  // namespace d3re
