#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "polycert/config.hpp"
#include "polycert/io.hpp"

namespace fs = std::filesystem;
using namespace polycert;
using io::Session;

namespace {

void require_network(const Session& s) {
  if (s.net.W.empty()) throw config_error("config has no network block");
}

int cmd_certify(const Session& s, const fs::path& out) {
  require_network(s);
  const Lifting<double> lifting = make_lifting(s.H, s.eta);
  const Certificate cert = certify_polytope(io::closed_loop(s), lifting, s.ybox);
  io::save_json((out / "certificate.json").string(), io::certificate_to_json(cert));
  if (s.H.c <= 3) {
    const PolytopeGraph g = polytope_graph(s.H, s.ybox);
    io::save_text((out / "polytope_edges.csv").string(), io::polytope_edges_csv(g, s.H.c));
  }
  std::printf("%s margin=%s\n", cert.certified ? "certified" : "not certified",
              io::format_double(cert.margin).c_str());
  return cert.certified ? 0 : 1;
}

int cmd_train(const Session& s, const fs::path& out, std::optional<std::uint64_t> seed) {
  require_network(s);
  if (!s.training) throw config_error("train: config has no training block");
  TrainSettings ts = *s.training;
  if (seed) ts.seed = *seed;
  const TrainReport rep = train(io::train_problem(s), ts);

  const std::size_t np = s.shape.param_count();
  const Mlp<double> net =
      mlp_from_params<double>(s.shape, std::span<const double>(rep.theta.data(), np));
  Mat<double> eta(s.H.c, s.H.r - s.H.c);
  for (std::size_t i = 0; i < eta.a.size(); ++i) eta.a[i] = rep.theta[np + i];

  io::save_json((out / "network.json").string(), io::network_to_json(net));
  io::save_json((out / "eta.json").string(), io::eta_to_json(eta));
  io::save_json((out / "certificate.json").string(), io::certificate_to_json(rep.certificate));
  io::save_json((out / "report.json").string(), io::report_to_json(rep));
  io::save_text((out / "trace.csv").string(), io::trace_csv(rep.trace));

  io::json cc;
  cc["model"] = s.model.name;
  if (s.model.name == "platoon") cc["N"] = s.model.p;
  if (s.model.q > 0) {
    cc["disturbance"] = io::json{{"radius", s.disturbance_radius},
                                 {"partitions_per_dim", s.disturbance_partitions}};
  }
  cc["network"] = io::json{{"path", "network.json"}};
  io::json hrows = io::json::array();
  for (std::size_t i = 0; i < s.H.r; ++i) {
    io::json row = io::json::array();
    for (std::size_t j = 0; j < s.H.c; ++j) row.push_back(s.H(i, j));
    hrows.push_back(std::move(row));
  }
  cc["polytope"] = io::json{{"H", std::move(hrows)}, {"y_lo", s.ybox.lo}, {"y_hi", s.ybox.hi}};
  cc["eta"] = io::json{{"path", "eta.json"}};
  io::save_json((out / "certify_config.json").string(), cc);

  std::printf("%s after %zu iterations (margin=%s)\n",
              rep.status == TrainStatus::certified ? "certified" : "not certified",
              rep.iterations, io::format_double(rep.certificate.margin).c_str());
  return rep.status == TrainStatus::certified ? 0 : 1;
}

int cmd_simulate(const Session& s, const fs::path& out, std::optional<std::uint64_t> seed) {
  require_network(s);
  if (!s.simulation) throw config_error("simulate: config has no simulation block");
  const io::SimulationPlan& plan = *s.simulation;
  const std::vector<std::vector<double>> starts =
      plan.from_vertices ? polytope_graph(s.H, s.ybox).vertices : plan.x0;
  if (starts.empty()) throw config_error("simulate: no start states");

  const ClosedLoop<double> cl = io::closed_loop(s);
  Rng rng(seed.value_or(0));
  const auto field = [&](const std::vector<double>& x, const std::vector<double>& w) {
    return closed_loop_rhs(cl, x, w);
  };
  const auto wfn = [&](double) {
    return rng.uniform_vec(cl.disturbance.box.lo, cl.disturbance.box.hi);
  };
  std::vector<Trajectory> trajs;
  trajs.reserve(starts.size());
  for (const auto& x0 : starts) trajs.push_back(rk4_simulate(field, x0, wfn, plan.dt, plan.tfinal));
  io::save_text((out / "trajectories.csv").string(), io::trajectories_csv(trajs, s.H, s.ybox));
  std::printf("simulated %zu trajectories\n", trajs.size());
  return 0;
}

int cmd_refine(const Session& s, const fs::path& out) {
  const IntervalVector<double> refined = refine(nullspace_basis(s.H), s.ybox);
  io::save_json((out / "refined_box.json").string(), io::refined_box_to_json(refined));
  std::printf("refined box written\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"invariant-polytope certification for neural-network-controlled systems"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;

  CLI::App* sub_certify = app.add_subcommand("certify", "evaluate the invariance certificate");
  CLI::App* sub_train = app.add_subcommand("train", "train the controller until certified");
  CLI::App* sub_simulate = app.add_subcommand("simulate", "integrate closed-loop trajectories");
  CLI::App* sub_refine = app.add_subcommand("refine", "tighten a face box of the polytope");
  for (CLI::App* sub : {sub_certify, sub_train, sub_simulate, sub_refine}) {
    sub->add_option("--config", config_path, "JSON run configuration")->required();
    sub->add_option("--out", out_dir, "output directory (default: current)");
    sub->add_option("--seed", seed, "override the run seed");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const fs::path out(out_dir);
    fs::create_directories(out);
    const Session s = io::load_session(config_path);
    if (sub_certify->parsed()) return cmd_certify(s, out);
    if (sub_train->parsed()) return cmd_train(s, out, seed);
    if (sub_simulate->parsed()) return cmd_simulate(s, out, seed);
    return cmd_refine(s, out);
  } catch (const empty_intersection_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const config_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
