#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "plankd/checkpoint.hpp"
#include "plankd/cli.hpp"
#include "plankd/config.hpp"
#include "plankd/dataset_io.hpp"
#include "plankd/eval.hpp"
#include "plankd/report.hpp"

using namespace plankd;
using namespace plankd::harness;

namespace {

std::filesystem::path workdir() {
  auto p = std::filesystem::temp_directory_path() / "plankd_test_harness";
  std::filesystem::create_directories(p);
  return p;
}

// every parameter zero: the head emits exactly (0, 0) for each waypoint
planner::PlannerModel zero_model(std::size_t T = 4) {
  planner::PlannerConfig c;
  c.conv_widths = {2, 2};
  c.head_hidden = {3};
  c.command_embed = 2;
  c.T = T;
  planner::PlannerModel m = planner::build_planner(c, 0);
  for (auto& [n, t] : m.params) {
    for (double& v : t.values()) v = 0.0;
  }
  return m;
}

scenario::Dataset straight_road_dataset() {
  // speed exactly 4 on an empty straight road: expert waypoints (2,0)..(8,0)
  scenario::SceneSketch sk;
  sk.speed = 4.0;
  scenario::Scene s;
  s.speed = 4.0f;
  s.bev = scenario::rasterize_bev(sk);
  s.expert_traj = scenario::expert_policy(sk, 4, 8.0);
  s.states = scenario::derive_planning_states(s, 0.1);
  scenario::Dataset d;
  d.scenes.push_back(s);
  return d;
}

}  // namespace

TEST_CASE("evaluate: all-zero predictions against (2,0)..(8,0) give waypoint_l1 = 5") {
  scenario::Dataset d = straight_road_dataset();
  planner::PlannerModel m = zero_model();
  EvalMetrics metrics = evaluate(m, d);
  CHECK(metrics.waypoint_l1 == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(metrics.collision_proxy_rate == 0.0);
  CHECK(metrics.composite_score == doctest::Approx(std::max(0.0, 1.0 - 5.0 / 4.0)).epsilon(1e-12));
}

TEST_CASE("collision proxy matches a brute-force scalar loop exactly") {
  scenario::GenParams gp;
  gp.seed = 31;
  gp.scenes = 60;
  scenario::Dataset d = scenario::generate_dataset(gp);
  planner::PlannerModel m = zero_model();
  EvalMetrics metrics = evaluate(m, d);

  std::size_t hits = 0, total = 0;
  for (const scenario::Scene& s : d.scenes) {
    auto pred = planner::predict_waypoints(m, s);
    for (const auto& w : pred) {
      ++total;
      bool hit = false;
      for (const scenario::ObstaclePose& o : s.obstacles) {
        double sp = std::sqrt(static_cast<double>(o.vx) * o.vx + static_cast<double>(o.vy) * o.vy);
        if (sp <= 0.1) continue;
        double dx = static_cast<double>(w[0]) - static_cast<double>(o.x);
        double dy = static_cast<double>(w[1]) - static_cast<double>(o.y);
        if (std::sqrt(dx * dx + dy * dy) < 1.0) hit = true;
      }
      if (hit) ++hits;
    }
  }
  CHECK(metrics.collision_proxy_rate == static_cast<double>(hits) / static_cast<double>(total));
}

TEST_CASE("evaluate is exactly invariant to scene order") {
  scenario::GenParams gp;
  gp.seed = 77;
  gp.scenes = 40;
  scenario::Dataset d = scenario::generate_dataset(gp);
  planner::PlannerModel m = planner::build_planner(planner::PlannerConfig::student_default(), 3);
  EvalMetrics a = evaluate(m, d);
  std::reverse(d.scenes.begin(), d.scenes.end());
  EvalMetrics b = evaluate(m, d);
  CHECK(a.waypoint_l1 == b.waypoint_l1);
  CHECK(a.crucial_l1 == b.crucial_l1);
  CHECK(a.collision_proxy_rate == b.collision_proxy_rate);
  CHECK(a.composite_score == b.composite_score);
}

TEST_CASE("composite score decreases as waypoint error grows at fixed collision rate") {
  scenario::GenParams gp;
  gp.seed = 11;
  gp.scenes = 20;
  gp.obstacle_min = 0;
  gp.obstacle_max = 0;  // no obstacles: collision rate pinned at 0
  scenario::Dataset d = scenario::generate_dataset(gp);
  planner::PlannerModel bad = zero_model();
  planner::PlannerModel trained = planner::build_planner(planner::PlannerConfig::student_default(), 1);
  planner::ImitationConfig ic;
  ic.epochs = 4;
  ic.lr = 3e-3;
  planner::train_imitation(trained, d, ic);
  EvalMetrics mb = evaluate(bad, d);
  EvalMetrics mt = evaluate(trained, d);
  CHECK(mt.waypoint_l1 < mb.waypoint_l1);
  CHECK(mt.composite_score >= mb.composite_score);
}

TEST_CASE("evaluate rejects an empty dataset; measure_inference rejects n <= 10") {
  scenario::Dataset empty;
  planner::PlannerModel m = zero_model();
  CHECK_THROWS_AS(evaluate(m, empty), std::invalid_argument);
  CHECK_THROWS_AS(measure_inference(m, 5), std::invalid_argument);
  CHECK_THROWS_AS(measure_inference(m, 10), std::invalid_argument);

  InferenceStats a = measure_inference(m, 20);
  InferenceStats b = measure_inference(m, 20);
  CHECK(a.param_count == b.param_count);
  CHECK(a.mean_ms_per_frame > 0.0);
}

TEST_CASE("config parsing: comments, whitespace, typed values, error paths") {
  KeyValues kv = parse_config_text("# header\n  lr = 0.005 # inline\n\nepochs = 12\n");
  train::DistillConfig c = distill_config_from(kv);
  CHECK(c.lr == doctest::Approx(0.005));
  CHECK(c.epochs == 12);

  CHECK_THROWS_WITH_AS(parse_config_text("lr 0.005\n"), doctest::Contains("key = value"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_config_text("lr = 1\nlr = 2\n"), doctest::Contains("duplicate"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(distill_config_from(parse_config_text("no_such_key = 3\n")),
                       doctest::Contains("unknown key"), std::invalid_argument);
  CHECK_THROWS_AS(distill_config_from(parse_config_text("lr = abc\n")), std::invalid_argument);

  KeyValues gen = parse_config_text("seed = 9\nscenes = 50\njunction_prob = 0.3\nclutter = 0\n");
  scenario::GenParams p = gen_params_from(gen);
  CHECK(p.seed == 9);
  CHECK(p.scenes == 50);
  CHECK(p.junction_prob == doctest::Approx(0.3));
  CHECK_FALSE(p.clutter);
}

TEST_CASE("PLANKD_SEED overrides every seed field") {
  setenv("PLANKD_SEED", "4242", 1);
  train::DistillConfig c;
  apply_env_seed(c);
  CHECK(c.seed_data == 4242);
  CHECK(c.seed_init == 4242);
  CHECK(c.seed_train == 4242);
  scenario::GenParams p;
  apply_env_seed(p);
  CHECK(p.seed == 4242);
  unsetenv("PLANKD_SEED");
}

TEST_CASE("train report roundtrips through its text form") {
  train::TrainReport r;
  r.config_echo = "lr = 0.001\n";
  r.seed_echo = "seeds data=1 init=2 train=3\n";
  for (int i = 0; i < 3; ++i) {
    train::StepRecord s;
    s.total = 1.5 + i;
    s.l_w = 0.25 * i;
    s.l_w_star = 0.25 * i;
    s.neg_l_ib = 5.9;
    s.l_z = 0.01;
    s.l_rank = 0.001 * i;
    s.l_e = -1.3862943611198906;
    r.steps.push_back(s);
  }
  EvalMetrics m;
  m.waypoint_l1 = 0.75;
  m.crucial_l1 = 0.5;
  m.collision_proxy_rate = 0.03125;
  m.composite_score = 0.79;
  r.epoch_eval.push_back(m);
  r.epoch_wall_seconds.push_back(1.25);

  auto path = (workdir() / "report.txt").string();
  write_train_report(r, path);
  train::TrainReport back = read_train_report(path);
  CHECK(back.digest_text() == r.digest_text());
  CHECK(back.epoch_wall_seconds == r.epoch_wall_seconds);

  write_step_csv(back, (workdir() / "steps.csv").string());
  std::ifstream csv(workdir() / "steps.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "step,total,l_w,l_w_star,neg_l_ib,l_z,l_rank,l_e");
  std::size_t rows = 0;
  std::string line;
  while (std::getline(csv, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 3);
}

TEST_CASE("cli: byte-identical datasets, exit codes, and manifests") {
  auto dir = workdir();
  auto d1 = (dir / "a.pkds").string();
  auto d2 = (dir / "b.pkds").string();
  CHECK(cli({"gen-data", "--seed", "7", "--scenes", "30", "--out", d1}) == 0);
  CHECK(cli({"gen-data", "--seed", "7", "--scenes", "30", "--out", d2}) == 0);
  CHECK(scenario::file_hash(d1) == scenario::file_hash(d2));

  // manifest records the hash of the file it wrote
  std::ifstream mf(d1 + ".manifest");
  std::string text((std::istreambuf_iterator<char>(mf)), std::istreambuf_iterator<char>());
  CHECK(text.find("output.dataset_hash = " + scenario::file_hash(d1)) != std::string::npos);

  CHECK(cli({"bogus-subcommand"}) == 1);
  CHECK(cli({"gen-data", "--no-such-flag", "1", "--out", d1}) == 1);

  // corrupted magic bytes -> exit code 2
  {
    std::fstream f(d2, std::ios::in | std::ios::out | std::ios::binary);
    f.write("ZZZZ", 4);
  }
  auto ckpt = (dir / "zero.ckpt").string();
  save_planner(zero_model(), ckpt);
  CHECK(cli({"eval", "--ckpt", ckpt, "--data", d2}) == 2);
  CHECK(cli({"distill", "--data", d1, "--teacher", (dir / "missing.ckpt").string(), "--out",
             (dir / "s.ckpt").string(), "--report", (dir / "r.txt").string()}) == 2);

  // eval is reproducible: identical metric tables in consecutive runs
  CHECK(cli({"eval", "--ckpt", ckpt, "--data", d1}) == 0);
  std::ifstream m1(ckpt + ".eval.manifest");
  std::string t1((std::istreambuf_iterator<char>(m1)), std::istreambuf_iterator<char>());
  CHECK(cli({"eval", "--ckpt", ckpt, "--data", d1}) == 0);
  std::ifstream m2(ckpt + ".eval.manifest");
  std::string t2((std::istreambuf_iterator<char>(m2)), std::istreambuf_iterator<char>());
  CHECK(t1 == t2);
  CHECK(t1.find("metric.waypoint_l1") != std::string::npos);
}
