#pragma once

// End-to-end training: endpoint samplers, batch assembly along the chosen
// interpolant (with dequantization and optional coupling rearrangement),
// loss dispatch, and Adam updates.

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "d3re/adam.hpp"
#include "d3re/gaussian.hpp"
#include "d3re/interpolant.hpp"
#include "d3re/losses.hpp"
#include "d3re/rng.hpp"
#include "d3re/scorenet.hpp"
#include "d3re/toy2d.hpp"
#include "d3re/transport.hpp"

namespace d3re {

// Endpoint distribution: an analytic Gaussian or a 2-D toy dataset.
class DataSource {
 public:
  static DataSource from_gaussian(GaussianSpec spec) { return DataSource(std::move(spec)); }
  static DataSource from_toy(Toy toy) { return DataSource(toy); }

  bool is_gaussian() const { return std::holds_alternative<GaussianSpec>(which_); }
  const GaussianSpec& gaussian() const {
    if (!is_gaussian()) throw ConfigError("data source: not a Gaussian");
    return std::get<GaussianSpec>(which_);
  }
  Toy toy() const {
    if (is_gaussian()) throw ConfigError("data source: not a toy dataset");
    return std::get<Toy>(which_);
  }

  int dim() const {
    return is_gaussian() ? static_cast<int>(std::get<GaussianSpec>(which_).mean.size()) : 2;
  }

  Eigen::MatrixXd sample(int n, std::mt19937_64& g) const {
    return is_gaussian() ? gaussian_sample(std::get<GaussianSpec>(which_), n, g)
                         : toy_sample(std::get<Toy>(which_), n, g);
  }

 private:
  explicit DataSource(GaussianSpec spec) : which_(std::move(spec)) {}
  explicit DataSource(Toy toy) : which_(toy) {}
  std::variant<GaussianSpec, Toy> which_;
};

enum class LossKind { OracleTime, TimeIbp, Joint, Logistic };

inline const char* loss_name(LossKind k) {
  switch (k) {
    case LossKind::OracleTime: return "oracle-time";
    case LossKind::TimeIbp: return "time-ibp";
    case LossKind::Joint: return "joint";
    case LossKind::Logistic: return "logistic";
  }
  throw ConfigError("unknown loss kind");
}

inline LossKind loss_from_name(const std::string& s) {
  if (s == "oracle-time") return LossKind::OracleTime;
  if (s == "time-ibp") return LossKind::TimeIbp;
  if (s == "joint") return LossKind::Joint;
  if (s == "logistic") return LossKind::Logistic;
  throw ConfigError("unknown loss kind: " + s);
}

struct TrainConfig {
  LossKind loss = LossKind::TimeIbp;
  InterpolantConfig interpolant =
      InterpolantConfig::make(Method::DDBI, Schedule::linear(), 0.5, 1e-5);
  ScoreNetConfig net;
  int batch = 512;
  int iterations = 0;
  double lr = 1e-3;
  // Final learning rate as a fraction of lr, reached linearly over the run.
  // 1.0 keeps the rate constant.
  double lr_decay = 1.0;
  // Weight lambda(t) = weight_scale * t(1-t) + weight_offset; a negative
  // weight_scale sentinel means "use gamma^2 from the interpolant".
  double weight_scale = -1.0;
  double weight_offset = 0.0;
  double boundary_weight = 1.0;
  std::uint64_t seed = 0;
  int sinkhorn_max_iter = 1000;
  double sinkhorn_tol = 1e-8;

  TimeWeight weight() const {
    return TimeWeight{weight_scale < 0.0 ? interpolant.gamma2 : weight_scale, weight_offset};
  }

  void validate(int data_dim) const {
    if (batch < 2) throw ConfigError("train: batch must be at least 2");
    if (iterations < 0) throw ConfigError("train: iterations must be nonnegative");
    if (lr <= 0.0) throw ConfigError("train: lr must be positive");
    if (lr_decay <= 0.0 || lr_decay > 1.0)
      throw ConfigError("train: lr_decay must lie in (0, 1]");
    if (net.input_dim != data_dim)
      throw ConfigError("train: net input_dim does not match the data dimension");
    net.validate();
    switch (loss) {
      case LossKind::Joint:
        if (net.head != Head::Joint) throw ConfigError("train: joint loss needs the joint head");
        if (!net.time_input) throw ConfigError("train: joint loss needs a time input");
        break;
      case LossKind::Logistic:
        if (net.head != Head::Time || net.time_input)
          throw ConfigError("train: logistic loss needs a scalar classifier without time input");
        break;
      default:
        if (net.head != Head::Time) throw ConfigError("train: time losses need the scalar head");
        if (!net.time_input) throw ConfigError("train: time losses need a time input");
        break;
    }
  }
};

struct TrainResult {
  ScoreModel model;
  std::vector<double> history;  // loss per iteration
  std::vector<double> wall_ms;  // per-iteration wall time, not reproducible
  int iterations_run = 0;
};

// Optional inspection hook; returning true stops training early.
using TrainProbe = std::function<bool(int iteration, const ScoreModel&)>;

// One optimization run. Per iteration: draw endpoint batches, dequantize,
// rearrange pairs through the entropic coupling when the interpolant asks
// for it, place interior samples on the bridge at stratified times, take
// one Adam step on the configured loss.
inline TrainResult train(const TrainConfig& cfg, const DataSource& src0, const DataSource& src1,
                         const TrainProbe& probe = {}, int probe_every = 0) {
  if (src0.dim() != src1.dim())
    throw ConfigError("train: endpoint dimensions differ");
  cfg.validate(src0.dim());
  if (cfg.loss == LossKind::OracleTime && (!src0.is_gaussian() || !src1.is_gaussian()))
    throw ConfigError("train: the oracle loss needs Gaussian endpoints");

  auto g_init = make_engine(cfg.seed, Stream::ParamInit);
  auto g0 = make_engine(cfg.seed, Stream::Source0);
  auto g1 = make_engine(cfg.seed, Stream::Source1);
  auto gd = make_engine(cfg.seed, Stream::Dequantize);
  auto gb = make_engine(cfg.seed, Stream::Bridge);
  auto gt = make_engine(cfg.seed, Stream::TimeGrid);
  auto gc = make_engine(cfg.seed, Stream::Coupling);
  auto gh = make_engine(cfg.seed, Stream::Hutchinson);

  TrainResult res;
  res.model = score_init(cfg.net, g_init);
  AdamState opt = AdamState::init(res.model.params);
  AdamConfig adam;
  adam.lr = cfg.lr;
  const TimeWeight weight = cfg.weight();
  const InterpolantConfig& ic = cfg.interpolant;
  const int n = cfg.batch;
  const Eigen::VectorXd marg = uniform_marginal(n);

  res.history.reserve(static_cast<std::size_t>(cfg.iterations));
  res.wall_ms.reserve(static_cast<std::size_t>(cfg.iterations));
  for (int it = 0; it < cfg.iterations; ++it) {
    const auto started = std::chrono::steady_clock::now();

    Eigen::MatrixXd x0 = src0.sample(n, g0);
    Eigen::MatrixXd x1 = src1.sample(n, g1);
    LossValue lv;
    if (cfg.loss == LossKind::Logistic) {
      lv = loss_logistic(res.model, x0, x1);
    } else {
      x0 = dequantize(x0, ic.epsilon, gd);
      x1 = dequantize(x1, ic.epsilon, gd);
      if (ic.method == Method::DSBI) {
        const SinkhornResult sr =
            sinkhorn(cost_matrix(x0, x1), marg, marg, 2.0 * ic.gamma2, cfg.sinkhorn_max_iter,
                     cfg.sinkhorn_tol);
        auto pair = sample_coupling(sr.coupling, x0, x1, n, gc);
        x0 = std::move(pair.first);
        x1 = std::move(pair.second);
      }

      // Stratified times, one per sample.
      Eigen::VectorXd t(n);
      for (int i = 0; i < n; ++i)
        t[i] = (static_cast<double>(i) + uniform01(gt)) / static_cast<double>(n);
      Eigen::MatrixXd xt(n, x0.cols());
      for (int i = 0; i < n; ++i) {
        const ScheduleEval se = schedule_eval(ic.schedule, t[i]);
        const double bridge_sd = std::sqrt(t[i] * (1.0 - t[i]) * ic.gamma2);
        xt.row(i) = se.alpha * x0.row(i) + se.beta * x1.row(i);
        if (bridge_sd > 0.0)
          xt.row(i) += bridge_sd * normal_vector(gb, static_cast<int>(x0.cols())).transpose();
      }

      switch (cfg.loss) {
        case LossKind::OracleTime: {
          Eigen::VectorXd oracle(n);
          for (int i = 0; i < n; ++i)
            oracle[i] = gaussian_marginal_time_score(ic, src0.gaussian(), src1.gaussian(), t[i],
                                                     xt.row(i).transpose());
          lv = loss_oracle_time(res.model, xt, t, oracle, weight);
          break;
        }
        case LossKind::TimeIbp:
          lv = loss_time_ibp(res.model, x0, x1, xt, t, weight, cfg.boundary_weight);
          break;
        case LossKind::Joint: {
          const Eigen::MatrixXd v = normal_matrix(gh, n, static_cast<int>(x0.cols()));
          lv = loss_joint(res.model, x0, x1, xt, t, v, weight, cfg.boundary_weight);
          break;
        }
        default:
          throw ConfigError("train: unhandled loss kind");
      }
    }

    if (!std::isfinite(lv.value))
      throw NumericError("train: non-finite loss at iteration " + std::to_string(it));
    const double frac =
        cfg.iterations > 1 ? static_cast<double>(it) / static_cast<double>(cfg.iterations - 1)
                           : 0.0;
    adam.lr = cfg.lr * (1.0 - (1.0 - cfg.lr_decay) * frac);
    adam_step(opt, res.model.params, lv.grads, adam);
    res.history.push_back(lv.value);
    res.wall_ms.push_back(
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started)
            .count());
    res.iterations_run = it + 1;
    if (probe && probe_every > 0 && (it + 1) % probe_every == 0)
      if (probe(it + 1, res.model)) break;
  }
  return res;
}

}  // namespace d3re
