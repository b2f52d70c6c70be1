#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "d3re/cli.hpp"

using namespace d3re;
using nlohmann::json;

namespace {

std::string fresh_dir(const std::string& tag) {
  const auto p = std::filesystem::temp_directory_path() / ("d3re_cli_" + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

int run(std::vector<std::string> args, std::string* out_text = nullptr,
        std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int rc = run_cli(std::move(args), out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return rc;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  REQUIRE(f.good());
  f << text;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

json read_json_file(const std::string& path) { return json::parse(read_file(path)); }

json parse_error(const std::string& err_text) {
  const json j = json::parse(err_text);
  REQUIRE(j.contains("error"));
  return j.at("error");
}

}  // namespace

TEST_CASE("gen-data writes a hashed, reproducible dataset") {
  const std::string dir = fresh_dir("gen");
  std::string out1;
  REQUIRE(run({"gen-data", "--out", dir + "/a.csv", "--dist", "gaussian", "--n", "64", "--dim",
               "3", "--seed", "11", "--mean", "2", "--var", "4"},
              &out1) == 0);
  REQUIRE(run({"gen-data", "--out", dir + "/b.csv", "--dist", "gaussian", "--n", "64", "--dim",
               "3", "--seed", "11", "--mean", "2", "--var", "4"}) == 0);
  const std::string a = read_file(dir + "/a.csv");
  REQUIRE(a == read_file(dir + "/b.csv"));
  REQUIRE(a.find("# config_hash: ") != std::string::npos);
  REQUIRE(a.find("# seed: 11") != std::string::npos);
  REQUIRE(a.find("x0,x1,x2") != std::string::npos);

  const json summary = json::parse(out1);
  REQUIRE(summary.at("rows").get<int>() == 64);
  REQUIRE(summary.at("config_hash").get<std::string>().size() == 64);

  const clifront::CsvData d = clifront::read_csv(dir + "/a.csv");
  REQUIRE(d.values.rows() == 64);
  REQUIRE(d.values.cols() == 3);
  // Mean 2, variance 4: the sample mean of 192 values lands within 5 sigma.
  REQUIRE(std::abs(d.values.mean() - 2.0) < 5.0 * 2.0 / std::sqrt(192.0));
}

TEST_CASE("gen-data samples toys and correlated pairs") {
  const std::string dir = fresh_dir("gen_toy");
  REQUIRE(run({"gen-data", "--out", dir + "/cb.csv", "--dist", "checkerboard", "--n", "500",
               "--seed", "3"}) == 0);
  const clifront::CsvData cb = clifront::read_csv(dir + "/cb.csv");
  REQUIRE(cb.values.cols() == 2);
  REQUIRE(cb.values.minCoeff() >= -4.0);
  REQUIRE(cb.values.maxCoeff() <= 4.0);

  REQUIRE(run({"gen-data", "--out", dir + "/pair.csv", "--dist", "gaussian", "--n", "4000",
               "--dim", "2", "--rho", "0.8", "--seed", "5"}) == 0);
  const clifront::CsvData pr = clifront::read_csv(dir + "/pair.csv");
  const Eigen::VectorXd c0 = pr.values.col(0);
  const Eigen::VectorXd c1 = pr.values.col(1);
  const double corr = (c0.array() - c0.mean()).cwiseProduct(c1.array() - c1.mean()).mean() /
                      std::sqrt((c0.array() - c0.mean()).square().mean() *
                                (c1.array() - c1.mean()).square().mean());
  REQUIRE(std::abs(corr - 0.8) < 0.05);
}

TEST_CASE("gen-data rejects inconsistent flag combinations") {
  const std::string dir = fresh_dir("gen_bad");
  std::string err;
  REQUIRE(run({"gen-data", "--out", dir + "/x.csv", "--dist", "checkerboard", "--n", "8",
               "--dim", "3"},
              nullptr, &err) == 2);
  REQUIRE(parse_error(err).at("type") == "config");

  REQUIRE(run({"gen-data", "--out", dir + "/x.csv", "--dist", "gaussian", "--n", "8", "--dim",
               "2", "--rho", "0.5", "--mean", "1"},
              nullptr, &err) == 2);
  REQUIRE(run({"gen-data", "--out", dir + "/x.csv", "--dist", "nosuchtoy", "--n", "8"}, nullptr,
              &err) == 2);
  REQUIRE(run({"gen-data", "--out", dir + "/x.csv", "--dist", "moons", "--n", "8", "--var", "2"},
              nullptr, &err) == 2);
}

TEST_CASE("config schema rejects unknown keys with their location") {
  const std::string dir = fresh_dir("schema");
  std::string err;

  write_file(dir + "/c1.json", R"({"seed": 1, "bogus": 2})");
  REQUIRE(run({"train", "--config", dir + "/c1.json", "--out", dir + "/o"}, nullptr, &err) == 2);
  REQUIRE(parse_error(err).at("message").get<std::string>().find("'bogus'") !=
          std::string::npos);

  json c2{{"data",
           {{"source0", {{"type", "gaussian"}, {"dim", 1}, {"typo", 1}}},
            {"source1", {{"type", "gaussian"}, {"dim", 1}}}}}};
  write_file(dir + "/c2.json", c2.dump());
  REQUIRE(run({"train", "--config", dir + "/c2.json", "--out", dir + "/o"}, nullptr, &err) == 2);
  REQUIRE(parse_error(err).at("message").get<std::string>().find("data.source0") !=
          std::string::npos);

  json c3{{"data",
           {{"source0", {{"type", "gaussian"}, {"dim", 1}}},
            {"source1", {{"type", "gaussian"}, {"dim", 1}, {"mean", 1.0}}}}},
          {"train", {{"momentum", 0.9}}}};
  write_file(dir + "/c3.json", c3.dump());
  REQUIRE(run({"train", "--config", dir + "/c3.json", "--out", dir + "/o"}, nullptr, &err) == 2);
  REQUIRE(parse_error(err).at("message").get<std::string>().find("'momentum'") !=
          std::string::npos);

  json c4{{"pair", {{"dim", 4}, {"rho", 0.5}}}, {"integrator", {{"order", 5}}}};
  write_file(dir + "/c4.json", c4.dump());
  REQUIRE(run({"mi", "--config", dir + "/c4.json", "--out", dir + "/o"}, nullptr, &err) == 2);
  REQUIRE(parse_error(err).at("message").get<std::string>().find("'order'") != std::string::npos);
}

TEST_CASE("train with zero iterations writes the initialized model") {
  const std::string dir = fresh_dir("train0");
  json cfg{{"seed", 4},
           {"data",
            {{"source0", {{"type", "gaussian"}, {"dim", 1}}},
             {"source1", {{"type", "gaussian"}, {"dim", 1}, {"mean", 1.0}}}}},
           {"score_net", {{"hidden", {8, 8}}, {"freq_count", 2}, {"skip_quadratic", true}}},
           {"train", {{"iterations", 0}}}};
  write_file(dir + "/cfg.json", cfg.dump());
  std::string out;
  REQUIRE(run({"train", "--config", dir + "/cfg.json", "--out", dir + "/run"}, &out) == 0);
  REQUIRE(json::parse(out).at("iterations_run").get<int>() == 0);

  const Checkpoint ck = load_checkpoint(dir + "/run/checkpoint.d3re");
  REQUIRE(ck.seed == 4);
  REQUIRE(ck.iteration == 0);
  REQUIRE(ck.model.config.skip_quadratic);

  // The stored parameters are exactly the seeded initialization.
  ScoreNetConfig nc;
  nc.input_dim = 1;
  nc.hidden = {8, 8};
  nc.freq_count = 2;
  nc.skip_quadratic = true;
  auto g = make_engine(4, Stream::ParamInit);
  const ScoreModel fresh = score_init(nc, g);
  REQUIRE(fresh.params.count() == ck.model.params.count());
  for (std::size_t i = 0; i < fresh.params.count(); ++i)
    REQUIRE((fresh.params.at(i).data() - ck.model.params.at(i).data()).norm() == 0.0);

  // The seed flag overrides the config seed and lands in the artifacts.
  std::string out2;
  REQUIRE(run({"train", "--config", dir + "/cfg.json", "--out", dir + "/run9", "--seed", "9"},
              &out2) == 0);
  REQUIRE(json::parse(out2).at("seed").get<std::uint64_t>() == 9);
  REQUIRE(load_checkpoint(dir + "/run9/checkpoint.d3re").seed == 9);
  REQUIRE(read_json_file(dir + "/run9/train_report.json").at("seed").get<std::uint64_t>() == 9);
}

TEST_CASE("oracle mi lands within Monte-Carlo error of the closed form") {
  const std::string dir = fresh_dir("mi");
  json cfg{{"seed", 3},
           {"pair", {{"dim", 8}, {"rho", 0.8}}},
           {"n", 2000},
           {"score", {{"mode", "oracle"}}},
           {"integrator", {{"kind", "gl"}, {"nodes", 64}}}};
  write_file(dir + "/cfg.json", cfg.dump());
  std::string out;
  REQUIRE(run({"mi", "--config", dir + "/cfg.json", "--out", dir + "/run"}, &out) == 0);
  const json summary = json::parse(out);
  const double est = summary.at("estimate").get<double>();
  const double se = summary.at("std_error").get<double>();
  const double want = summary.at("closed_form").get<double>();
  REQUIRE(want == Catch::Approx(2.0433).margin(5e-4));
  REQUIRE(std::abs(est - want) < 4.0 * se + 1e-6);

  const json rep = read_json_file(dir + "/run/mi_report.json");
  REQUIRE(rep.at("report").at("n").get<int>() == 2000);
  REQUIRE(rep.at("report").at("nfe_total").get<long>() == 2000L * 64L);
  REQUIRE(rep.at("config_hash") == clifront::config_hash(rep.at("config")));
}

TEST_CASE("estimate reproduces the closed-form log ratio from a points file") {
  const std::string dir = fresh_dir("estimate");
  json cfg{{"score",
            {{"mode", "oracle"},
             {"source0", {{"type", "gaussian"}, {"dim", 1}}},
             {"source1", {{"type", "gaussian"}, {"dim", 1}, {"mean", 1.0}}},
             {"interpolant", {{"method", "dbi"}, {"gamma2", 0.5}, {"epsilon", 0}}}}},
           {"integrator", {{"kind", "gl"}, {"nodes", 64}}}};
  write_file(dir + "/cfg.json", cfg.dump());
  write_file(dir + "/pts.csv", "x\n-3\n-0.5\n0\n1.25\n4\n");
  REQUIRE(run({"estimate", "--config", dir + "/cfg.json", "--points", dir + "/pts.csv", "--out",
               dir + "/run"}) == 0);
  const clifront::CsvData d = clifront::read_csv(dir + "/run/logratio.csv");
  REQUIRE(d.header == std::vector<std::string>{"x", "log_ratio", "nfe"});
  REQUIRE(d.values.rows() == 5);
  for (Eigen::Index i = 0; i < d.values.rows(); ++i) {
    REQUIRE(d.values(i, 1) == Catch::Approx(d.values(i, 0) - 0.5).margin(1e-6));
    REQUIRE(d.values(i, 2) == 64.0);
  }
  // Identical reruns produce identical bytes.
  REQUIRE(run({"estimate", "--config", dir + "/cfg.json", "--points", dir + "/pts.csv", "--out",
               dir + "/run2"}) == 0);
  REQUIRE(read_file(dir + "/run/logratio.csv") == read_file(dir + "/run2/logratio.csv"));
}

TEST_CASE("train then estimate round trips through a checkpoint") {
  const std::string dir = fresh_dir("roundtrip");
  json cfg{{"seed", 4},
           {"data",
            {{"source0", {{"type", "gaussian"}, {"dim", 1}}},
             {"source1", {{"type", "gaussian"}, {"dim", 1}, {"mean", 1.0}}}}},
           {"interpolant", {{"method", "ddbi"}, {"gamma2", 0.5}, {"epsilon", 1e-5}}},
           {"score_net", {{"hidden", {16, 16}}, {"freq_count", 2}, {"skip_quadratic", true}}},
           {"train", {{"iterations", 300}, {"batch", 128}, {"lr", 0.002}, {"lr_decay", 0.05}}}};
  write_file(dir + "/cfg.json", cfg.dump());
  std::string out;
  REQUIRE(run({"train", "--config", dir + "/cfg.json", "--out", dir + "/run"}, &out) == 0);
  REQUIRE(json::parse(out).at("iterations_run").get<int>() == 300);

  json est{{"score", {{"mode", "checkpoint"}, {"path", dir + "/run/checkpoint.d3re"}}},
           {"integrator", {{"kind", "gl"}, {"nodes", 64}}}};
  write_file(dir + "/est.json", est.dump());
  write_file(dir + "/pts.csv", "0\n1\n");
  REQUIRE(run({"estimate", "--config", dir + "/est.json", "--points", dir + "/pts.csv", "--out",
               dir + "/est"}) == 0);
  const clifront::CsvData d = clifront::read_csv(dir + "/est/logratio.csv");
  REQUIRE(d.values.rows() == 2);
  REQUIRE(std::isfinite(d.values(0, 1)));
  // Even a short run should move toward log r(x) = x - 1/2: the trained
  // values sit closer to the target than the zero model at both points.
  REQUIRE(std::abs(d.values(0, 1) - (-0.5)) < 0.5);
  REQUIRE(std::abs(d.values(1, 1) - 0.5) < 0.5);
}

TEST_CASE("density-grid integrates an oracle density to one") {
  const std::string dir = fresh_dir("density");
  json cfg{{"score",
            {{"mode", "oracle"},
             {"source0", {{"type", "gaussian"}, {"dim", 2}}},
             {"source1", {{"type", "gaussian"}, {"dim", 2}, {"mean", {1.0, 0.5}}, {"var", 0.5}}},
             {"interpolant", {{"method", "ddbi"}}}}},
           {"base", {{"type", "gaussian"}, {"dim", 2}}},
           {"grid", {{"xlo", -4.5}, {"xhi", 5.0}, {"ylo", -4.5}, {"yhi", 5.0}, {"nx", 33},
                     {"ny", 33}}},
           {"integrator", {{"kind", "gl"}, {"nodes", 24}}}};
  write_file(dir + "/cfg.json", cfg.dump());
  std::string out;
  REQUIRE(run({"density-grid", "--config", dir + "/cfg.json", "--out", dir + "/run"}, &out) == 0);
  const json meta = read_json_file(dir + "/run/density_meta.json");
  REQUIRE(meta.at("report").at("density_integral").get<double>() == Catch::Approx(1.0).margin(0.02));
  REQUIRE(meta.at("report").at("nfe_total").get<long>() == 33L * 33L * 24L);
  const clifront::CsvData d = clifront::read_csv(dir + "/run/density_grid.csv");
  REQUIRE(d.values.rows() == 33 * 33);
  REQUIRE(d.header == std::vector<std::string>{"x", "y", "log_density"});
}

TEST_CASE("sample-interpolant emits straight lines for the deterministic path") {
  const std::string dir = fresh_dir("traj");
  json cfg{{"seed", 2},
           {"data",
            {{"source0", {{"type", "gaussian"}, {"dim", 2}}},
             {"source1", {{"type", "gaussian"}, {"dim", 2}, {"mean", 3.0}}}}},
           {"interpolant", {{"method", "di"}}},
           {"trajectories", 5},
           {"times", 9}};
  write_file(dir + "/cfg.json", cfg.dump());
  REQUIRE(run({"sample-interpolant", "--config", dir + "/cfg.json", "--out", dir + "/run"}) == 0);
  const clifront::CsvData d = clifront::read_csv(dir + "/run/trajectories.csv");
  REQUIRE(d.header == std::vector<std::string>{"traj", "t", "x0", "x1"});
  REQUIRE(d.values.rows() == 5 * 9);
  for (int k = 0; k < 5; ++k) {
    const Eigen::Index r0 = k * 9;        // t = 0
    const Eigen::Index rm = k * 9 + 4;    // t = 1/2
    const Eigen::Index r1 = k * 9 + 8;    // t = 1
    REQUIRE(d.values(r0, 1) == 0.0);
    REQUIRE(d.values(r1, 1) == 1.0);
    for (int c = 2; c < 4; ++c)
      REQUIRE(d.values(rm, c) ==
              Catch::Approx(0.5 * (d.values(r0, c) + d.values(r1, c))).margin(1e-12));
  }
}

TEST_CASE("sinkhorn-report converges on a toy pair") {
  const std::string dir = fresh_dir("sinkhorn");
  json cfg{{"seed", 2},
           {"data",
            {{"source0", {{"type", "toy"}, {"name", "8gaussians"}}},
             {"source1", {{"type", "toy"}, {"name", "checkerboard"}}}}},
           {"n", 96},
           {"gamma2", 0.5},
           {"tol", 1e-8}};
  write_file(dir + "/cfg.json", cfg.dump());
  REQUIRE(run({"sinkhorn-report", "--config", dir + "/cfg.json", "--out", dir + "/run"}) == 0);
  const json rep = read_json_file(dir + "/run/sinkhorn_report.json").at("report");
  REQUIRE(rep.at("converged").get<bool>());
  REQUIRE(rep.at("marginal_error").get<double>() <= 1e-8);
  REQUIRE(rep.at("entropy").get<double>() > 0.0);
  REQUIRE(rep.at("regularizer").get<double>() == 1.0);
}

TEST_CASE("nfe-report compares methods on one evaluation batch") {
  const std::string dir = fresh_dir("nfe");
  json cfg{{"seed", 5},
           {"data",
            {{"source0", {{"type", "gaussian"}, {"dim", 2}}},
             {"source1", {{"type", "gaussian"}, {"dim", 2}, {"mean", 1.0}}}}},
           {"gamma2", 0.5},
           {"epsilon", 1e-5},
           {"score_net", {{"hidden", {8, 8}}, {"freq_count", 1}, {"skip_quadratic", true}}},
           {"train", {{"iterations", 40}, {"batch", 64}, {"lr", 0.002}, {"weight_scale", 0.5}}},
           {"eval_n", 6},
           {"integrator", {{"kind", "rk45"}, {"rtol", 1e-4}, {"atol", 1e-6}}}};
  write_file(dir + "/cfg.json", cfg.dump());
  std::string out;
  REQUIRE(run({"nfe-report", "--config", dir + "/cfg.json", "--out", dir + "/run", "--methods",
               "di,ddbi,dsbi"},
              &out) == 0);
  const json methods = read_json_file(dir + "/run/nfe_report.json").at("report").at("methods");
  REQUIRE(methods.size() == 3);
  REQUIRE(methods[0].at("method") == "di");
  REQUIRE(methods[1].at("method") == "ddbi");
  REQUIRE(methods[2].at("method") == "dsbi");
  for (const auto& m : methods) {
    // Dormand-Prince spends 1 + 6 per attempted step, so counts are >= 19.
    REQUIRE(m.at("nfe_median").get<double>() >= 19.0);
    REQUIRE(m.at("nfe_min").get<long>() >= 19);
    REQUIRE(m.at("final_loss").get<double>() != 0.0);
  }
}

TEST_CASE("verify confirms artifacts and flags tampering") {
  const std::string dir = fresh_dir("verify");
  REQUIRE(run({"gen-data", "--out", dir + "/ok.csv", "--dist", "moons", "--n", "32", "--seed",
               "1"}) == 0);
  std::string out;
  REQUIRE(run({"verify", dir + "/ok.csv"}, &out) == 0);
  REQUIRE(out.find("PASS") != std::string::npos);

  // Flip the embedded hash and verification must fail.
  std::string text = read_file(dir + "/ok.csv");
  const auto pos = text.find("# config_hash: ");
  REQUIRE(pos != std::string::npos);
  text[pos + 15] = text[pos + 15] == '0' ? '1' : '0';
  write_file(dir + "/bad.csv", text);
  std::string err;
  REQUIRE(run({"verify", dir + "/bad.csv"}, &out, &err) == 2);
  REQUIRE(out.find("FAIL") != std::string::npos);
  REQUIRE(parse_error(err).at("type") == "verify");

  REQUIRE(run({"verify", dir + "/missing.csv"}, &out, &err) == 2);
}

TEST_CASE("verify runs the built-in self-checks when given no files") {
  std::string out;
  REQUIRE(run({"verify"}, &out) == 0);
  REQUIRE(out.find("PASS quadrature-monomials") != std::string::npos);
  REQUIRE(out.find("PASS oracle-integral") != std::string::npos);
  REQUIRE(out.find("FAIL") == std::string::npos);
}

TEST_CASE("numeric failure exits 3 with a machine-readable error") {
  const std::string dir = fresh_dir("numeric");
  json cfg{{"data",
            {{"source0", {{"type", "gaussian"}, {"dim", 1}}},
             {"source1", {{"type", "gaussian"}, {"dim", 1}, {"mean", 1.0}}}}},
           {"train", {{"iterations", 5}, {"batch", 4}, {"lr", 1e200}}}};
  write_file(dir + "/cfg.json", cfg.dump());
  std::string err;
  REQUIRE(run({"train", "--config", dir + "/cfg.json", "--out", dir + "/run"}, nullptr, &err) ==
          3);
  const json e = parse_error(err);
  REQUIRE(e.at("type") == "numeric");
  REQUIRE(e.at("message").get<std::string>().find("non-finite") != std::string::npos);
}

TEST_CASE("argument errors exit 2 and help exits 0") {
  std::string out, err;
  REQUIRE(run({"estimate", "--out", "/tmp/nowhere"}, nullptr, &err) == 2);
  REQUIRE(parse_error(err).at("type") == "config");
  REQUIRE(run({"nosuchcommand"}, nullptr, &err) == 2);
  REQUIRE(run({"--help"}, &out, &err) == 0);
  REQUIRE(out.find("gen-data") != std::string::npos);
  REQUIRE(out.find("nfe-report") != std::string::npos);
}
