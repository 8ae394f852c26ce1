#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "s2s/config.hpp"
#include "s2s/dataset.hpp"
#include "s2s/eval.hpp"
#include "s2s/metrics.hpp"
#include "s2s/pointio.hpp"
#include "s2s/shapes.hpp"

using namespace s2s;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("sphere samples sit exactly on the surface with zero jitter") {
  bench::SyntheticShapeSpec spec;
  spec.kind = bench::ShapeKind::sphere;
  spec.jitter_sigma = 0.0;
  spec.size_min = spec.size_max = 0.9;
  Rng rng(1);
  bench::LabeledShape s = bench::sample_shape(spec, 200, rng);
  for (const auto& p : s.cloud.positions) CHECK(std::abs(p.norm() - 0.9) < 1e-12);
}

TEST_CASE("every part label appears and jitter stays within 3 sigma") {
  for (bench::ShapeKind kind : {bench::ShapeKind::sphere, bench::ShapeKind::box,
                                bench::ShapeKind::cylinder, bench::ShapeKind::cone,
                                bench::ShapeKind::torus}) {
    bench::SyntheticShapeSpec spec;
    spec.kind = kind;
    spec.jitter_sigma = 0.02;
    Rng rng(7 + static_cast<uint64_t>(kind));
    bench::LabeledShape s = bench::sample_shape(spec, 64, rng);
    std::set<uint16_t> seen(s.part_labels.begin(), s.part_labels.end());
    CHECK(static_cast<int64_t>(seen.size()) == bench::part_count(kind));
  }

  // jittered sphere: distance from the ideal surface is at most 3 sigma
  bench::SyntheticShapeSpec spec;
  spec.kind = bench::ShapeKind::sphere;
  spec.jitter_sigma = 0.05;
  spec.size_min = spec.size_max = 1.0;
  Rng rng(9);
  bench::LabeledShape s = bench::sample_shape(spec, 500, rng);
  for (const auto& p : s.cloud.positions) CHECK(std::abs(p.norm() - 1.0) <= 0.15 + 1e-12);
}

TEST_CASE("dataset generation is deterministic and manifest-complete") {
  std::vector<bench::SyntheticShapeSpec> specs;
  for (bench::ShapeKind kind : {bench::ShapeKind::sphere, bench::ShapeKind::box,
                                bench::ShapeKind::cylinder, bench::ShapeKind::cone,
                                bench::ShapeKind::torus}) {
    bench::SyntheticShapeSpec sp;
    sp.kind = kind;
    sp.jitter_sigma = 0.01;
    specs.push_back(sp);
  }
  fs::path dir1 = fs::temp_directory_path() / "s2s_ds_a";
  fs::path dir2 = fs::temp_directory_path() / "s2s_ds_b";
  fs::remove_all(dir1);
  fs::remove_all(dir2);
  fs::path m1 = bench::gen_synthetic_dataset(specs, 40, 128, 123, dir1);
  fs::path m2 = bench::gen_synthetic_dataset(specs, 40, 128, 123, dir2);

  bench::Manifest man = bench::read_manifest(m1);
  CHECK(man.entries.size() == 200);
  CHECK(man.class_names.size() == 5);
  CHECK(man.num_parts == 3);

  // same seed: bitwise-identical shape files
  CHECK(slurp(dir1 / man.entries[0].file) == slurp(dir2 / man.entries[0].file));
  CHECK(slurp(dir1 / man.entries[199].file) == slurp(dir2 / man.entries[199].file));

  auto shapes = bench::load_dataset(m1);
  CHECK(shapes.size() == 200);
  CHECK(shapes[0].class_id == 0);
  CHECK(shapes[199].class_id == 4);
  CHECK(shapes[0].part_labels.size() == 128);
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

TEST_CASE("xyz text parsing and errors") {
  fs::path p = fs::temp_directory_path() / "s2s_pts.xyz";
  {
    std::ofstream out(p);
    out << "0 0 0\n1 2 3\n";
  }
  bench::PointFile pf = bench::read_xyz(p.string());
  REQUIRE(pf.cloud.size() == 2);
  CHECK(pf.cloud.positions[1].y == 2.0);
  CHECK_FALSE(pf.labels.has_value());

  {
    std::ofstream out(p);
    out << "0 0 0 1\n5 5 5 2\n";
  }
  pf = bench::load_points(p.string());
  REQUIRE(pf.labels.has_value());
  CHECK((*pf.labels)[1] == 2);

  {
    std::ofstream out(p);
    out << "0 0\n";
  }
  try {
    bench::read_xyz(p.string());
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
  }
  fs::remove(p);
}

TEST_CASE("pcb binary roundtrip within f32 precision") {
  geom::PointCloud cloud;
  Rng rng(11);
  for (int i = 0; i < 50; ++i)
    cloud.positions.push_back({rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)});
  std::vector<uint16_t> labels(50);
  for (size_t i = 0; i < 50; ++i) labels[i] = static_cast<uint16_t>(i % 7);

  fs::path p = fs::temp_directory_path() / "s2s_pts.pcb";
  bench::write_pcb(p.string(), cloud, &labels);
  bench::PointFile pf = bench::read_pcb(p.string());
  REQUIRE(pf.cloud.size() == 50);
  REQUIRE(pf.labels.has_value());
  for (int64_t i = 0; i < 50; ++i) {
    CHECK(std::abs(pf.cloud.positions[static_cast<size_t>(i)].x -
                   cloud.positions[static_cast<size_t>(i)].x) < 1e-6);
    CHECK((*pf.labels)[static_cast<size_t>(i)] == labels[static_cast<size_t>(i)]);
  }

  // short read reports the byte position
  std::string bytes = slurp(p);
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), 20);
  out.close();
  CHECK_THROWS_AS(bench::read_pcb(p.string()), Error);
  fs::remove(p);
}

TEST_CASE("metric oracles on hand-enumerable fixtures") {
  // OA
  CHECK(bench::overall_accuracy({1, 2, 3}, {1, 2, 3}) == 1.0);
  CHECK(bench::overall_accuracy({1, 2, 3, 0}, {1, 2, 0, 0}) == 0.75);

  // class IoU: balanced 2-part confusion gives exactly 1/3 per class
  bench::ClassIoU ci = bench::class_iou({0, 1, 0, 1}, {0, 0, 1, 1}, 2);
  CHECK(ci.per_class[0] == Catch::Approx(1.0 / 3.0).margin(1e-15));
  CHECK(ci.per_class[1] == Catch::Approx(1.0 / 3.0).margin(1e-15));
  CHECK(ci.mean == Catch::Approx(1.0 / 3.0).margin(1e-15));

  // a class present in truth but never predicted scores 0 and drags the mean
  bench::ClassIoU cm = bench::class_iou({0, 0, 0}, {0, 0, 2}, 3);
  CHECK(cm.per_class[0] == Catch::Approx(2.0 / 3.0).margin(1e-15));
  CHECK(cm.per_class[1] == -1.0);  // absent everywhere: excluded
  CHECK(cm.per_class[2] == 0.0);
  CHECK(cm.mean == Catch::Approx((2.0 / 3.0 + 0.0) / 2.0).margin(1e-15));

  // perfect prediction: mIoU 1
  CHECK(bench::class_iou({0, 1, 2}, {0, 1, 2}, 3).mean == 1.0);

  // instance mIoU: single-part shape fully predicted as that part scores 1
  CHECK(bench::instance_miou({{0, 0, 0}}, {{0, 0, 0}}, 3) == 1.0);
  // two shapes: perfect and balanced-confused average to (1 + 1/3) / 2
  double im = bench::instance_miou({{0, 0}, {0, 1, 0, 1}}, {{0, 0}, {0, 0, 1, 1}}, 2);
  CHECK(im == Catch::Approx((1.0 + 1.0 / 3.0) / 2.0).margin(1e-15));
}

TEST_CASE("EvalReport JSON roundtrip is loss-free") {
  bench::EvalReport r;
  r.task = "probe";
  r.checkpoint_id = "ck123";
  r.config_hash = 0xdeadbeefcafe1234ull;
  r.oa = 0.9375;
  r.baseline_oa = 0.71875;
  r.per_class = {0.1, 0.25, 1.0 / 3.0};
  bench::EvalReport back = bench::EvalReport::from_json(r.to_json());
  CHECK(back.task == r.task);
  CHECK(back.config_hash == r.config_hash);
  CHECK(back.oa == r.oa);
  CHECK(back.baseline_oa == r.baseline_oa);
  REQUIRE(back.per_class.size() == 3);
  CHECK(back.per_class[2] == r.per_class[2]);
}

TEST_CASE("linear probe memorizes one example per class and freezes the backbone") {
  std::vector<bench::SyntheticShapeSpec> specs;
  for (bench::ShapeKind kind : {bench::ShapeKind::sphere, bench::ShapeKind::box,
                                bench::ShapeKind::cylinder, bench::ShapeKind::cone}) {
    bench::SyntheticShapeSpec sp;
    sp.kind = kind;
    sp.jitter_sigma = 0.0;
    specs.push_back(sp);
  }
  auto shapes = bench::make_shape_set(specs, 1, 96, 42);
  REQUIRE(shapes.size() == 4);

  mhp::NetConfig cfg;
  cfg.modules = {{2, {8}, 4}, {4, {12}, 4}};
  cfg.head_hidden = 8;
  cfg.embed_dim = 8;
  Rng rng(3);
  mhp::Net net = mhp::make_net(cfg, rng);

  std::vector<double> before;
  for (auto& p : net.store.params())
    before.insert(before.end(), p.tensor.data(), p.tensor.data() + p.tensor.numel());

  bench::ProbeConfig pc;
  pc.epochs = 400;
  pc.lr = 0.1;
  double oa = bench::run_linear_probe(net, shapes, shapes, 4, pc);
  CHECK(oa == 1.0);

  std::vector<double> after;
  for (auto& p : net.store.params())
    after.insert(after.end(), p.tensor.data(), p.tensor.data() + p.tensor.numel());
  REQUIRE(before.size() == after.size());
  CHECK(std::memcmp(before.data(), after.data(), before.size() * sizeof(double)) == 0);
}

TEST_CASE("part segmentation fine-tune runs and reports sane metrics") {
  std::vector<bench::SyntheticShapeSpec> specs;
  bench::SyntheticShapeSpec sp;
  sp.kind = bench::ShapeKind::cylinder;
  sp.jitter_sigma = 0.0;
  specs.push_back(sp);
  auto shapes = bench::make_shape_set(specs, 10, 64, 5);

  mhp::NetConfig cfg;
  cfg.modules = {{2, {8}, 4}, {4, {8}, 4}};
  cfg.head_hidden = 8;
  cfg.embed_dim = 8;
  Rng rng(6);
  mhp::Net net = mhp::make_net(cfg, rng);
  bench::FineTuneConfig ft;
  ft.epochs = 2;
  ft.lr = 3e-3;
  bench::EvalReport rep = bench::part_segmentation_eval(net, shapes, 3, ft);
  CHECK(rep.cls_miou >= 0.0);
  CHECK(rep.cls_miou <= 1.0);
  CHECK(rep.inst_miou >= 0.0);
  CHECK(rep.inst_miou <= 1.0);
}

TEST_CASE("scene segmentation fine-tune runs on pseudo scenes") {
  std::vector<bench::SyntheticShapeSpec> specs;
  for (bench::ShapeKind kind : {bench::ShapeKind::sphere, bench::ShapeKind::box}) {
    bench::SyntheticShapeSpec sp;
    sp.kind = kind;
    specs.push_back(sp);
  }
  auto shapes = bench::make_shape_set(specs, 4, 80, 8);
  auto scenes = bench::make_scene_set(shapes, 6, 2, 64, 9);
  REQUIRE(scenes.size() == 6);
  for (const auto& s : scenes) {
    REQUIRE(s.cloud.size() == 128);
    for (int64_t l : s.labels) CHECK((l == 0 || l == 1));
  }

  std::vector<bench::LabeledScene> train_set(scenes.begin(), scenes.begin() + 4);
  std::vector<bench::LabeledScene> test_set(scenes.begin() + 4, scenes.end());
  mhv::NetConfig cfg;
  cfg.widths = {8, 8, 8, 8};
  cfg.conv_layers = 1;
  cfg.base_voxel_size = 0.1;
  cfg.head_hidden = 8;
  cfg.embed_dim = 8;
  Rng rng(10);
  mhv::Net net = mhv::make_net(cfg, rng);
  bench::FineTuneConfig ft;
  ft.epochs = 1;
  double miou = bench::scene_segmentation_miou(net, train_set, test_set, 2, ft);
  CHECK(miou >= 0.0);
  CHECK(miou <= 1.0);
}

TEST_CASE("config parsing is fail-closed") {
  nlohmann::json good = {
      {"arch", "mhp"},
      {"net", {{"scales", {2, 4}}, {"widths", {16, 32}}, {"k", 8}, {"embed_dim", 32}}},
      {"train", {{"epochs", 5}, {"m_shapes", 2}, {"level", "shape"}}},
      {"ppc", {{"tau", 0.1}, {"ns", 128}}},
      {"transforms", {{"shift", 0.25}}}};
  bench::Config cfg = bench::parse_config(good);
  CHECK(cfg.mhp_net.modules.size() == 2);
  CHECK(cfg.mhp_net.modules[1].widths[0] == 32);
  CHECK(cfg.train_cfg.epochs == 5);
  CHECK(cfg.ppc_cfg.ns == 128);
  CHECK(cfg.transform_cfg.shift == 0.25);

  nlohmann::json bad = good;
  bad["train"]["learning_rate"] = 0.1;  // not a key
  CHECK_THROWS_AS(bench::parse_config(bad), ConfigError);

  nlohmann::json bad2 = good;
  bad2["typo_section"] = 1;
  CHECK_THROWS_AS(bench::parse_config(bad2), ConfigError);

  nlohmann::json bad3 = good;
  bad3["train"]["level"] = "region";  // mhp cannot train at region level
  CHECK_THROWS_AS(bench::parse_config(bad3), ConfigError);
}
