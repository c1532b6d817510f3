#include "plankd/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "plankd/checkpoint.hpp"
#include "plankd/config.hpp"
#include "plankd/dataset_io.hpp"
#include "plankd/errors.hpp"
#include "plankd/report.hpp"
#include "plankd/trainer.hpp"

namespace plankd::harness {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

KeyValues optional_config(const std::string& path) {
  if (path.empty()) return {};
  return load_config_file(path);
}

// the distill container stores the student under a prefix; plain teacher
// checkpoints have no prefix
planner::PlannerModel load_any_planner(const std::string& path) {
  auto entries = read_checkpoint(path);
  for (const CheckpointEntry& e : entries) {
    if (e.name.rfind("student.", 0) == 0) return planner_from_entries(entries, "student.");
  }
  return planner_from_entries(entries, "");
}

KeyValues distill_config_echo(const train::DistillConfig& c) {
  KeyValues kv;
  kv.emplace_back("alpha_z", fmt(c.alpha_z));
  kv.emplace_back("alpha_r", fmt(c.alpha_r));
  kv.emplace_back("alpha_e", fmt(c.alpha_e));
  kv.emplace_back("beta", fmt(c.beta));
  kv.emplace_back("sigma_kernel", fmt(c.sigma_kernel));
  kv.emplace_back("delta", fmt(c.delta));
  kv.emplace_back("lr", fmt(c.lr));
  kv.emplace_back("epochs", std::to_string(c.epochs));
  kv.emplace_back("batch_size", std::to_string(c.batch_size));
  kv.emplace_back("T", std::to_string(c.T));
  kv.emplace_back("seed_data", std::to_string(c.seed_data));
  kv.emplace_back("seed_init", std::to_string(c.seed_init));
  kv.emplace_back("seed_train", std::to_string(c.seed_train));
  kv.emplace_back("ablation", train::ablation_name(c.ablation));
  kv.emplace_back("teacher_waypoint_source",
                  c.teacher_waypoint_source == train::TeacherWaypointSource::kExpert
                      ? "expert"
                      : "teacher_output");
  return kv;
}

int run_gen_data(const std::string& config_path, std::uint64_t seed, bool seed_set,
                 std::uint32_t scenes, bool scenes_set, const std::string& out) {
  scenario::GenParams p = gen_params_from(optional_config(config_path));
  if (seed_set) p.seed = seed;
  if (scenes_set) p.scenes = scenes;
  apply_env_seed(p);
  scenario::Dataset d = scenario::generate_dataset(p);
  scenario::write_dataset(d, out);

  RunManifest m;
  m.command = "gen-data";
  m.config.emplace_back("seed", std::to_string(p.seed));
  m.config.emplace_back("scenes", std::to_string(p.scenes));
  m.config.emplace_back("T", std::to_string(p.T));
  m.outputs.emplace_back("dataset", out);
  m.outputs.emplace_back("dataset_hash", scenario::file_hash(out));
  write_manifest(m, out + ".manifest");
  std::cout << "wrote " << d.scenes.size() << " scenes to " << out << "\n";
  return 0;
}

int run_train_teacher(const std::string& config_path, const std::string& data_path,
                      const std::string& out, std::size_t epochs, double lr,
                      std::uint64_t seed) {
  KeyValues kv = optional_config(config_path);
  planner::PlannerConfig tc = teacher_config_from(kv);
  scenario::Dataset data = scenario::read_dataset(data_path);
  tc.T = data.T;
  std::uint64_t s = seed;
  std::uint64_t env;
  if (env_seed(env)) s = env;

  planner::PlannerModel teacher = planner::build_planner(tc, s);
  planner::ImitationConfig ic;
  ic.epochs = epochs;
  ic.lr = lr;
  ic.seed = s + 1;
  planner::ImitationReport rep = planner::train_imitation(teacher, data, ic);
  save_planner(teacher, out);

  RunManifest m;
  m.command = "train-teacher";
  m.config.emplace_back("epochs", std::to_string(epochs));
  m.config.emplace_back("lr", fmt(lr));
  m.config.emplace_back("seed", std::to_string(s));
  m.inputs.emplace_back("dataset", data_path);
  m.inputs.emplace_back("dataset_hash", scenario::file_hash(data_path));
  m.outputs.emplace_back("checkpoint", out);
  m.metrics.emplace_back("final_epoch_loss", fmt(rep.epoch_loss.back()));
  m.metrics.emplace_back("param_count", std::to_string(teacher.param_count()));
  write_manifest(m, out + ".manifest");
  std::cout << "teacher trained: final epoch loss " << rep.epoch_loss.back() << ", "
            << teacher.param_count() << " parameters\n";
  return 0;
}

int run_distill(const std::string& config_path, const std::string& data_path,
                const std::string& eval_path, const std::string& teacher_path,
                const std::string& out, const std::string& report_path) {
  train::DistillConfig cfg = distill_config_from(optional_config(config_path));
  apply_env_seed(cfg);
  scenario::Dataset data = scenario::read_dataset(data_path);
  cfg.T = data.T;
  cfg.student.T = data.T;
  scenario::Dataset eval_data;
  bool has_eval = !eval_path.empty();
  if (has_eval) eval_data = scenario::read_dataset(eval_path);
  planner::PlannerModel teacher = load_planner(teacher_path);
  teacher.freeze();

  train::DistillResult res =
      train::distill(teacher, data, cfg, has_eval ? &eval_data : nullptr);
  write_checkpoint(out, {{"student.", &res.student.params},
                         {"ib.", &res.ib_module.params},
                         {"attn.", &res.attn_module.params}});
  write_train_report(res.report, report_path);

  RunManifest m;
  m.command = "distill";
  m.config = distill_config_echo(cfg);
  m.inputs.emplace_back("dataset", data_path);
  m.inputs.emplace_back("dataset_hash", scenario::file_hash(data_path));
  if (has_eval) {
    m.inputs.emplace_back("eval_dataset", eval_path);
    m.inputs.emplace_back("eval_dataset_hash", scenario::file_hash(eval_path));
  }
  m.inputs.emplace_back("teacher", teacher_path);
  m.outputs.emplace_back("checkpoint", out);
  m.outputs.emplace_back("report", report_path);
  if (!res.report.epoch_eval.empty()) {
    const EvalMetrics& e = res.report.epoch_eval.back();
    m.metrics.emplace_back("waypoint_l1", fmt(e.waypoint_l1));
    m.metrics.emplace_back("crucial_l1", fmt(e.crucial_l1));
    m.metrics.emplace_back("collision_proxy_rate", fmt(e.collision_proxy_rate));
    m.metrics.emplace_back("composite_score", fmt(e.composite_score));
  }
  write_manifest(m, out + ".manifest");
  std::cout << "distilled student written to " << out << "\n";
  return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& data_path, double sigma) {
  scenario::Dataset data = scenario::read_dataset(data_path);
  planner::PlannerModel model = load_any_planner(ckpt_path);
  EvalParams ep;
  ep.sigma_kernel = sigma;
  EvalMetrics metrics = evaluate(model, data, ep);
  std::cout << format_metrics(metrics);

  RunManifest m;
  m.command = "eval";
  m.config.emplace_back("sigma_kernel", fmt(sigma));
  m.inputs.emplace_back("dataset", data_path);
  m.inputs.emplace_back("dataset_hash", scenario::file_hash(data_path));
  m.inputs.emplace_back("checkpoint", ckpt_path);
  m.metrics.emplace_back("waypoint_l1", fmt(metrics.waypoint_l1));
  m.metrics.emplace_back("crucial_l1", fmt(metrics.crucial_l1));
  m.metrics.emplace_back("collision_proxy_rate", fmt(metrics.collision_proxy_rate));
  m.metrics.emplace_back("composite_score", fmt(metrics.composite_score));
  write_manifest(m, ckpt_path + ".eval.manifest");
  return 0;
}

int run_ablate(const std::string& config_path, const std::string& data_path,
               const std::string& eval_path, const std::string& teacher_path,
               const std::string& out_dir) {
  train::DistillConfig cfg = distill_config_from(optional_config(config_path));
  apply_env_seed(cfg);
  scenario::Dataset data = scenario::read_dataset(data_path);
  cfg.T = data.T;
  cfg.student.T = data.T;
  scenario::Dataset eval_data = scenario::read_dataset(eval_path);
  planner::PlannerModel teacher = load_planner(teacher_path);
  teacher.freeze();

  std::filesystem::create_directories(out_dir);
  auto outcomes = train::run_ablations(teacher, data, cfg, eval_data);

  std::string table = "# ablation comparison\n";
  table += "variant waypoint_l1 crucial_l1 collision_proxy_rate composite_score\n";
  for (const auto& o : outcomes) {
    write_train_report(o.report, out_dir + "/" + o.name + ".report.txt");
    table += o.name + " " + fmt(o.final_eval.waypoint_l1) + " " + fmt(o.final_eval.crucial_l1) +
             " " + fmt(o.final_eval.collision_proxy_rate) + " " +
             fmt(o.final_eval.composite_score) + "\n";
  }
  {
    std::ofstream out(out_dir + "/comparison.txt", std::ios::trunc);
    out << table;
  }
  std::cout << table;

  RunManifest m;
  m.command = "ablate";
  m.config = distill_config_echo(cfg);
  m.inputs.emplace_back("dataset", data_path);
  m.inputs.emplace_back("dataset_hash", scenario::file_hash(data_path));
  m.inputs.emplace_back("eval_dataset", eval_path);
  m.inputs.emplace_back("teacher", teacher_path);
  m.outputs.emplace_back("comparison", out_dir + "/comparison.txt");
  for (const auto& o : outcomes) {
    m.metrics.emplace_back(o.name + ".composite_score", fmt(o.final_eval.composite_score));
  }
  write_manifest(m, out_dir + "/ablate.manifest");
  return 0;
}

int run_plot(const std::string& report_path, const std::string& out_dir) {
  train::TrainReport rep = read_train_report(report_path);
  std::filesystem::create_directories(out_dir);
  std::string steps_csv = out_dir + "/steps.csv";
  std::string epochs_csv = out_dir + "/epochs.csv";
  write_step_csv(rep, steps_csv);
  write_epoch_csv(rep, epochs_csv);

  RunManifest m;
  m.command = "plot";
  m.inputs.emplace_back("report", report_path);
  m.outputs.emplace_back("steps_csv", steps_csv);
  m.outputs.emplace_back("epochs_csv", epochs_csv);
  write_manifest(m, out_dir + "/plot.manifest");
  std::cout << "wrote " << steps_csv << " and " << epochs_csv << "\n";
  return 0;
}

int run_bench(const std::string& teacher_path, const std::string& student_path,
              std::size_t frames) {
  planner::PlannerModel teacher = load_any_planner(teacher_path);
  planner::PlannerModel student = load_any_planner(student_path);
  InferenceStats ts = measure_inference(teacher, frames);
  InferenceStats ss = measure_inference(student, frames);
  std::cout << "teacher: " << ts.param_count << " params, " << ts.mean_ms_per_frame
            << " ms/frame\n";
  std::cout << "student: " << ss.param_count << " params, " << ss.mean_ms_per_frame
            << " ms/frame\n";
  std::cout << "param ratio: "
            << static_cast<double>(ss.param_count) / static_cast<double>(ts.param_count) << "\n";

  RunManifest m;
  m.command = "bench";
  m.config.emplace_back("frames", std::to_string(frames));
  m.inputs.emplace_back("teacher", teacher_path);
  m.inputs.emplace_back("student", student_path);
  m.metrics.emplace_back("teacher_params", std::to_string(ts.param_count));
  m.metrics.emplace_back("student_params", std::to_string(ss.param_count));
  m.metrics.emplace_back("teacher_ms_per_frame", fmt(ts.mean_ms_per_frame));
  m.metrics.emplace_back("student_ms_per_frame", fmt(ss.mean_ms_per_frame));
  write_manifest(m, student_path + ".bench.manifest");
  return 0;
}

}  // namespace

int cli(const std::vector<std::string>& args) {
  CLI::App app{"desk-scale knowledge distillation for trajectory planners"};
  app.require_subcommand(1);

  std::string config_path, data_path, eval_path, teacher_path, ckpt_path, out_path,
      report_path, out_dir, student_path;
  std::uint64_t seed = 0;
  std::uint32_t scenes = 0;
  std::size_t epochs = 30, frames = 210;
  double lr = 2e-3, sigma = 3.0;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic scene dataset");
  auto* gen_seed = gen->add_option("--seed", seed, "dataset seed");
  auto* gen_scenes = gen->add_option("--scenes", scenes, "number of scenes");
  gen->add_option("--out", out_path, "output .pkds path")->required();
  gen->add_option("--config", config_path, "generation config file");

  auto* tt = app.add_subcommand("train-teacher", "pretrain a teacher by imitation");
  tt->add_option("--data", data_path, "training dataset")->required();
  tt->add_option("--out", out_path, "output checkpoint")->required();
  tt->add_option("--epochs", epochs, "imitation epochs");
  tt->add_option("--lr", lr, "learning rate");
  tt->add_option("--seed", seed, "init/shuffle seed");
  tt->add_option("--config", config_path, "teacher architecture config");

  auto* di = app.add_subcommand("distill", "run the distillation training loop");
  di->add_option("--config", config_path, "distillation config file");
  di->add_option("--data", data_path, "training dataset")->required();
  di->add_option("--eval-data", eval_path, "held-out dataset for per-epoch metrics");
  di->add_option("--teacher", teacher_path, "pretrained teacher checkpoint")->required();
  di->add_option("--out", out_path, "output checkpoint container")->required();
  di->add_option("--report", report_path, "output train report")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a planner checkpoint");
  ev->add_option("--ckpt", ckpt_path, "planner checkpoint")->required();
  ev->add_option("--data", data_path, "evaluation dataset")->required();
  ev->add_option("--sigma", sigma, "safety kernel sigma");

  auto* ab = app.add_subcommand("ablate", "run the four-variant ablation comparison");
  ab->add_option("--config", config_path, "distillation config file");
  ab->add_option("--data", data_path, "training dataset")->required();
  ab->add_option("--eval-data", eval_path, "held-out dataset")->required();
  ab->add_option("--teacher", teacher_path, "pretrained teacher checkpoint")->required();
  ab->add_option("--out-dir", out_dir, "output directory")->required();

  auto* pl = app.add_subcommand("plot", "emit CSV curves from a train report");
  pl->add_option("--report", report_path, "train report path")->required();
  pl->add_option("--out-dir", out_dir, "output directory")->required();

  auto* be = app.add_subcommand("bench", "compare inference time and parameter count");
  be->add_option("--teacher", teacher_path, "teacher checkpoint")->required();
  be->add_option("--student", student_path, "student checkpoint")->required();
  be->add_option("--frames", frames, "forward passes (first 10 warm up)");

  std::vector<const char*> argv;
  argv.push_back("plankd");
  for (const std::string& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help();
    return 1;
  }

  try {
    if (gen->parsed()) {
      return run_gen_data(config_path, seed, gen_seed->count() > 0, scenes,
                          gen_scenes->count() > 0, out_path);
    }
    if (tt->parsed()) {
      return run_train_teacher(config_path, data_path, out_path, epochs, lr, seed);
    }
    if (di->parsed()) {
      return run_distill(config_path, data_path, eval_path, teacher_path, out_path, report_path);
    }
    if (ev->parsed()) return run_eval(ckpt_path, data_path, sigma);
    if (ab->parsed()) return run_ablate(config_path, data_path, eval_path, teacher_path, out_dir);
    if (pl->parsed()) return run_plot(report_path, out_dir);
    if (be->parsed()) return run_bench(teacher_path, student_path, frames);
    std::cerr << app.help();
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace plankd::harness
