// Command-line surface: dataset generation, pre-training, downstream
// evaluations, scene/pair dumps and the gradient-check suite.
//
// Exit codes: 0 success, 1 invalid usage or config, 2 runtime failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "s2s/config.hpp"
#include "s2s/dataset.hpp"
#include "s2s/eval.hpp"
#include "s2s/gradsuite.hpp"
#include "s2s/metrics.hpp"
#include "s2s/pointio.hpp"
#include "s2s/trainer.hpp"

namespace fs = std::filesystem;
using namespace s2s;

namespace {

struct GlobalArgs {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::string out_dir = ".";
};

bench::Config effective_config(const GlobalArgs& g) {
  bench::Config cfg = g.config_path.empty() ? bench::parse_config(nlohmann::json::object())
                                            : bench::load_config(g.config_path);
  if (g.seed) {
    cfg.train_cfg.seed = *g.seed;
    cfg.raw["train"]["seed"] = *g.seed;
  }
  return cfg;
}

fs::path ensure_out_dir(const GlobalArgs& g) {
  fs::path dir(g.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory " + dir.string());
  return dir;
}

void write_report(const bench::EvalReport& rep, const fs::path& dir, const std::string& name) {
  fs::path path = dir / name;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << rep.to_json().dump(2) << '\n';
  std::cout << rep.to_json().dump(2) << std::endl;
  std::cout << "report written to " << path.string() << std::endl;
}

std::string checkpoint_id(const train::Checkpoint& ck) {
  return ck.arch + "-epoch" + std::to_string(ck.epoch) + "-seed" +
         std::to_string(static_cast<unsigned long long>(ck.seed));
}

// Rebuild the net a checkpoint was trained with from its config snapshot.
bench::Config config_of(const train::Checkpoint& ck) {
  return bench::parse_config(ck.config);
}

int cmd_gen_data(const GlobalArgs& g, int64_t per_class, int64_t points, double jitter,
                 const std::vector<std::string>& kinds) {
  fs::path dir = ensure_out_dir(g);
  std::vector<bench::SyntheticShapeSpec> specs;
  for (const std::string& k : kinds) {
    bench::SyntheticShapeSpec sp;
    sp.kind = bench::parse_kind(k);
    sp.jitter_sigma = jitter;
    specs.push_back(sp);
  }
  uint64_t seed = g.seed.value_or(0);
  fs::path manifest = bench::gen_synthetic_dataset(specs, per_class, points, seed, dir);
  std::cout << "wrote " << specs.size() * static_cast<size_t>(per_class) << " shapes, manifest at "
            << manifest.string() << std::endl;
  return 0;
}

int cmd_pretrain(const GlobalArgs& g, const std::string& resume_path) {
  bench::Config cfg = effective_config(g);
  if (cfg.data.empty()) throw ConfigError("pretrain: config needs a 'data' manifest path");
  fs::path dir = ensure_out_dir(g);
  auto shapes = bench::load_dataset(cfg.data);
  std::vector<geom::PointCloud> clouds = bench::clouds_of(shapes);

  fs::path csv_path = dir / "metrics.csv";
  std::ofstream csv(csv_path, resume_path.empty() ? std::ios::trunc : std::ios::app);
  if (resume_path.empty()) csv << "epoch,mean_loss,lr,wall_seconds\n";
  train::MetricsSink sink = [&csv](const train::EpochStats& st) {
    char line[160];
    std::snprintf(line, sizeof(line), "%lld,%.17g,%.17g,%.3f\n",
                  static_cast<long long>(st.epoch), st.mean_loss, st.lr, st.wall_seconds);
    csv << line;
    csv.flush();
    std::cout << "epoch " << st.epoch << " mean_loss " << st.mean_loss << " lr " << st.lr
              << std::endl;
  };

  std::string ck_path = (dir / "checkpoint.bin").string();
  int64_t start_epoch = 0;
  train::Checkpoint resume;
  if (!resume_path.empty()) {
    resume = train::load_checkpoint(resume_path);
    if (resume.arch != cfg.arch)
      throw ConfigError("pretrain: checkpoint arch " + resume.arch + " does not match config arch " +
                        cfg.arch);
    start_epoch = resume.epoch + 1;
  }

  if (cfg.arch == "mhp") {
    Rng rng(cfg.train_cfg.seed);
    mhp::Net net = mhp::make_net(cfg.mhp_net, rng);
    train::AdamW opt(net.store.params());
    if (!resume_path.empty()) train::restore_into(resume, net.store.params(), opt);
    train::pretrain_run(clouds, net, opt, cfg.train_cfg, cfg.ppc_cfg, cfg.transform_cfg, "mhp",
                        cfg.raw, sink, start_epoch, ck_path);
  } else {
    Rng rng(cfg.train_cfg.seed);
    mhv::Net net = mhv::make_net(cfg.mhv_net, rng);
    train::AdamW opt(net.store.params());
    if (!resume_path.empty()) train::restore_into(resume, net.store.params(), opt);
    train::pretrain_run(clouds, net, opt, cfg.train_cfg, cfg.ppc_cfg, cfg.transform_cfg, "mhv",
                        cfg.raw, sink, start_epoch, ck_path);
  }
  std::cout << "checkpoint written to " << ck_path << std::endl;
  std::cout << "metrics written to " << csv_path.string() << std::endl;
  return 0;
}

int cmd_probe(const GlobalArgs& g, const std::string& ckpt, const std::string& train_manifest,
              const std::string& test_manifest, int64_t epochs) {
  fs::path dir = ensure_out_dir(g);
  train::Checkpoint ck = train::load_checkpoint(ckpt);
  if (ck.arch != "mhp") throw ConfigError("probe: checkpoint must be an mhp net, got " + ck.arch);
  bench::Config cfg = config_of(ck);

  auto train_set = bench::load_dataset(train_manifest);
  auto test_set = bench::load_dataset(test_manifest);
  int64_t num_classes = 0;
  for (const auto& s : train_set) num_classes = std::max(num_classes, s.class_id + 1);
  for (const auto& s : test_set) num_classes = std::max(num_classes, s.class_id + 1);

  uint64_t probe_seed = g.seed.value_or(ck.seed + 1);
  bench::ProbeConfig pc;
  pc.epochs = epochs;
  pc.seed = probe_seed;

  Rng rng(ck.seed);
  mhp::Net net = mhp::make_net(cfg.mhp_net, rng);
  train::AdamW opt(net.store.params());
  train::restore_into(ck, net.store.params(), opt);
  double oa = bench::run_linear_probe(net, train_set, test_set, num_classes, pc);

  Rng base_rng(Rng::derive(probe_seed, {0xba5e}).next_u64());
  mhp::Net baseline = mhp::make_net(cfg.mhp_net, base_rng);
  double baseline_oa = bench::run_linear_probe(baseline, train_set, test_set, num_classes, pc);

  bench::EvalReport rep;
  rep.task = "linear_probe_classification";
  rep.checkpoint_id = checkpoint_id(ck);
  rep.config_hash = bench::fnv1a_hash(cfg.raw.dump());
  rep.oa = oa;
  rep.baseline_oa = baseline_oa;
  write_report(rep, dir, "probe_report.json");
  return 0;
}

int cmd_partseg(const GlobalArgs& g, const std::string& ckpt, const std::string& manifest,
                int64_t epochs) {
  fs::path dir = ensure_out_dir(g);
  train::Checkpoint ck = train::load_checkpoint(ckpt);
  if (ck.arch != "mhp") throw ConfigError("partseg: checkpoint must be an mhp net, got " + ck.arch);
  bench::Config cfg = config_of(ck);
  auto shapes = bench::load_dataset(manifest);
  bench::Manifest man = bench::read_manifest(manifest);

  Rng rng(ck.seed);
  mhp::Net net = mhp::make_net(cfg.mhp_net, rng);
  train::AdamW opt(net.store.params());
  train::restore_into(ck, net.store.params(), opt);

  bench::FineTuneConfig ft;
  ft.epochs = epochs;
  ft.seed = g.seed.value_or(ck.seed + 2);
  bench::EvalReport rep = bench::part_segmentation_eval(net, shapes, man.num_parts, ft);
  rep.checkpoint_id = checkpoint_id(ck);
  rep.config_hash = bench::fnv1a_hash(cfg.raw.dump());
  write_report(rep, dir, "partseg_report.json");
  return 0;
}

int cmd_sceneseg(const GlobalArgs& g, const std::string& ckpt, const std::string& manifest,
                 int64_t epochs, int64_t n_scenes, int64_t m) {
  fs::path dir = ensure_out_dir(g);
  train::Checkpoint ck = train::load_checkpoint(ckpt);
  if (ck.arch != "mhv") throw ConfigError("sceneseg: checkpoint must be an mhv net, got " + ck.arch);
  bench::Config cfg = config_of(ck);
  auto shapes = bench::load_dataset(manifest);
  int64_t num_classes = 0;
  for (const auto& s : shapes) num_classes = std::max(num_classes, s.class_id + 1);

  uint64_t seed = g.seed.value_or(ck.seed + 3);
  auto scenes = bench::make_scene_set(shapes, n_scenes, m, cfg.train_cfg.points_per_shape, seed);
  std::vector<bench::LabeledScene> train_set, test_set;
  for (size_t i = 0; i < scenes.size(); ++i)
    (i % 5 == 4 ? test_set : train_set).push_back(scenes[i]);
  if (train_set.empty() || test_set.empty()) throw ConfigError("sceneseg: need at least 5 scenes");

  bench::FineTuneConfig ft;
  ft.epochs = epochs;
  ft.seed = seed;

  Rng rng(ck.seed);
  mhv::Net net = mhv::make_net(cfg.mhv_net, rng);
  train::AdamW opt(net.store.params());
  train::restore_into(ck, net.store.params(), opt);
  double miou = bench::scene_segmentation_miou(net, train_set, test_set, num_classes, ft);

  Rng scratch_rng(Rng::derive(seed, {0x5c1a7c4}).next_u64());
  mhv::Net scratch = mhv::make_net(cfg.mhv_net, scratch_rng);
  double scratch_miou = bench::scene_segmentation_miou(scratch, train_set, test_set, num_classes, ft);

  bench::EvalReport rep;
  rep.task = "scene_segmentation";
  rep.checkpoint_id = checkpoint_id(ck);
  rep.config_hash = bench::fnv1a_hash(cfg.raw.dump());
  rep.cls_miou = miou;
  rep.baseline_miou = scratch_miou;
  write_report(rep, dir, "sceneseg_report.json");
  return 0;
}

int cmd_dump_pairs(const GlobalArgs& g, int64_t m) {
  bench::Config cfg = effective_config(g);
  fs::path dir = ensure_out_dir(g);
  uint64_t seed = cfg.train_cfg.seed;

  // self-contained: synthesize m shapes, compose, dump views and pairs
  std::vector<bench::SyntheticShapeSpec> specs;
  for (bench::ShapeKind k : {bench::ShapeKind::sphere, bench::ShapeKind::box,
                             bench::ShapeKind::cylinder, bench::ShapeKind::cone,
                             bench::ShapeKind::torus}) {
    bench::SyntheticShapeSpec sp;
    sp.kind = k;
    specs.push_back(sp);
  }
  auto shapes = bench::make_shape_set(specs, std::max<int64_t>(1, (m + 4) / 5),
                                      cfg.train_cfg.points_per_shape, seed);
  Rng rng = Rng::derive(seed, {0xd0a1});
  std::vector<const geom::PointCloud*> picks;
  for (int64_t i = 0; i < m; ++i)
    picks.push_back(&shapes[static_cast<size_t>(rng.uniform_index(shapes.size()))].cloud);

  scene::SceneConfig scfg;
  scfg.points_per_shape = cfg.train_cfg.points_per_shape;
  scene::PseudoScene ps = scene::make_pseudo_scene(picks, scfg, cfg.transform_cfg, rng);

  std::vector<uint16_t> marks(ps.shape_mark.begin(), ps.shape_mark.end());
  geom::PointCloud base, v1, v2;
  base.positions = ps.base_positions;
  v1.positions = ps.view1;
  v2.positions = ps.view2;
  bench::write_pcb((dir / "scene_base.pcb").string(), base, &marks);
  bench::write_pcb((dir / "scene_view1.pcb").string(), v1, &marks);
  bench::write_pcb((dir / "scene_view2.pcb").string(), v2, &marks);

  int64_t universe = static_cast<int64_t>(scene::pair_universe_size(ps.shape_mark, ps.shape_mark));
  int64_t ns = std::min<int64_t>(cfg.ppc_cfg.ns, universe);
  scene::PairSet pairs = scene::sample_pairs(ps.shape_mark, ns, rng);
  fs::path csv_path = dir / "pairs.csv";
  std::ofstream csv(csv_path, std::ios::trunc);
  csv << "u,v,mark_u,mark_v\n";
  for (int64_t i = 0; i < pairs.size(); ++i) {
    csv << pairs.u[static_cast<size_t>(i)] << ',' << pairs.v[static_cast<size_t>(i)] << ','
        << ps.shape_mark[static_cast<size_t>(pairs.u[static_cast<size_t>(i)])] << ','
        << ps.shape_mark[static_cast<size_t>(pairs.v[static_cast<size_t>(i)])] << '\n';
  }
  std::cout << "scene with " << ps.base_positions.size() << " points (m = " << m << "), " << ns
            << " pairs dumped to " << dir.string() << std::endl;
  return 0;
}

int cmd_gradcheck(const GlobalArgs& g) {
  uint64_t seed = g.seed.value_or(20240901);
  auto cases = ad::run_grad_suite(seed);
  bool all_ok = true;
  for (const auto& c : cases) {
    std::printf("%-24s max_rel_err %.3e  tol %.0e  %s\n", c.name.c_str(), c.max_rel_err,
                c.tolerance, c.pass() ? "ok" : "FAIL");
    all_ok = all_ok && c.pass();
  }
  return all_ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"shape-to-scene contrastive pre-training benchmark"};
  app.require_subcommand(1);
  app.fallthrough(true);  // global flags may follow the subcommand name

  GlobalArgs g;
  app.add_option("--config", g.config_path, "JSON config file");
  uint64_t seed_val = 0;
  auto* seed_opt = app.add_option("--seed", seed_val, "seed override");
  app.add_option("--out", g.out_dir, "output directory");

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic labeled shape dataset");
  int64_t per_class = 40, gen_points = 1024;
  double jitter = 0.01;
  std::vector<std::string> kinds = {"sphere", "box", "cylinder", "cone", "torus"};
  gen->add_option("--per-class", per_class, "shapes per class");
  gen->add_option("--points", gen_points, "points per shape");
  gen->add_option("--jitter", jitter, "surface jitter sigma");
  gen->add_option("--kinds", kinds, "shape kinds");

  auto* pre = app.add_subcommand("pretrain", "contrastive pre-training on pseudo scenes");
  std::string resume_path;
  pre->add_option("--resume", resume_path, "checkpoint to resume from");

  auto* probe = app.add_subcommand("probe", "linear probe over frozen global embeddings");
  std::string ckpt, train_manifest, test_manifest;
  int64_t probe_epochs = 300;
  probe->add_option("--ckpt", ckpt, "checkpoint file")->required();
  probe->add_option("--train-data", train_manifest, "training manifest")->required();
  probe->add_option("--test-data", test_manifest, "test manifest")->required();
  probe->add_option("--epochs", probe_epochs, "probe epochs");

  auto* partseg = app.add_subcommand("partseg", "part segmentation fine-tuning");
  std::string ps_ckpt, ps_manifest;
  int64_t ps_epochs = 5;
  partseg->add_option("--ckpt", ps_ckpt, "checkpoint file")->required();
  partseg->add_option("--data", ps_manifest, "dataset manifest")->required();
  partseg->add_option("--epochs", ps_epochs, "fine-tune epochs");

  auto* sceneseg = app.add_subcommand("sceneseg", "pseudo-scene segmentation fine-tuning");
  std::string ss_ckpt, ss_manifest;
  int64_t ss_epochs = 3, ss_scenes = 20, ss_m = 4;
  sceneseg->add_option("--ckpt", ss_ckpt, "mhv checkpoint file")->required();
  sceneseg->add_option("--data", ss_manifest, "shape dataset manifest")->required();
  sceneseg->add_option("--epochs", ss_epochs, "fine-tune epochs");
  sceneseg->add_option("--scenes", ss_scenes, "number of pseudo scenes");
  sceneseg->add_option("--m", ss_m, "shapes per scene");

  auto* dump = app.add_subcommand("dump-pairs", "dump a pseudo scene and its pair set");
  int64_t dump_m = 4;
  dump->add_option("--m", dump_m, "shapes per scene");

  app.add_subcommand("gradcheck", "finite-difference gradient suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);  // CLI11 prints usage; nonzero on error
  }

  try {
    if (seed_opt->count() > 0) g.seed = seed_val;
    if (gen->parsed()) return cmd_gen_data(g, per_class, gen_points, jitter, kinds);
    if (pre->parsed()) return cmd_pretrain(g, resume_path);
    if (probe->parsed()) return cmd_probe(g, ckpt, train_manifest, test_manifest, probe_epochs);
    if (partseg->parsed()) return cmd_partseg(g, ps_ckpt, ps_manifest, ps_epochs);
    if (sceneseg->parsed()) return cmd_sceneseg(g, ss_ckpt, ss_manifest, ss_epochs, ss_scenes, ss_m);
    if (dump->parsed()) return cmd_dump_pairs(g, dump_m);
    return cmd_gradcheck(g);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    std::cerr << "run with --help for usage" << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
}
