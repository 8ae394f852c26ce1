#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "s2s/gradcheck.hpp"
#include "s2s/ppc.hpp"
#include "s2s/rng.hpp"
#include "s2s/trainer.hpp"

using namespace s2s;
using ad::IndexArray;
using ad::Tensor;

namespace {

Tensor random_rows(int64_t n, int64_t d, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t({n, d});
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

// Independent double-loop evaluation of the contrastive ratio of
// exponentials: mean_k -log( exp(s_kk/tau) / sum_j exp(s_kj/tau) ), with
// rows optionally L2-normalized first and an optional strict column filter.
double ppc_oracle(const Tensor& z1, const Tensor& z2, double tau, bool normalize,
                  const IndexArray* mu = nullptr, const IndexArray* mv = nullptr) {
  const int64_t n = z1.rows(), d = z1.cols();
  auto row = [&](const Tensor& z, int64_t i, int64_t c) {
    double val = z.data()[i * d + c];
    if (!normalize) return val;
    double nm = 0.0;
    for (int64_t k = 0; k < d; ++k) nm += z.data()[i * d + k] * z.data()[i * d + k];
    nm = std::max(std::sqrt(nm), 1e-12);
    return val / nm;
  };
  double total = 0.0;
  for (int64_t k = 0; k < n; ++k) {
    double pos = 0.0;
    for (int64_t c = 0; c < d; ++c) pos += row(z1, k, c) * row(z2, k, c);
    double denom = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      if (mu && mv && j != k && (*mu)[static_cast<size_t>(k)] == (*mv)[static_cast<size_t>(j)]) continue;
      double s = 0.0;
      for (int64_t c = 0; c < d; ++c) s += row(z1, k, c) * row(z2, j, c);
      denom += std::exp(s / tau);
    }
    total += -std::log(std::exp(pos / tau) / denom);
  }
  return total / static_cast<double>(n);
}

std::vector<geom::PointCloud> toy_dataset(int64_t count, int64_t points, uint64_t seed) {
  std::vector<geom::PointCloud> out;
  for (int64_t i = 0; i < count; ++i) {
    Rng rng(seed + static_cast<uint64_t>(i));
    geom::PointCloud c;
    c.positions.resize(static_cast<size_t>(points));
    for (auto& p : c.positions)
      p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    out.push_back(std::move(c));
  }
  return out;
}

mhp::NetConfig tiny_mhp() {
  mhp::NetConfig cfg;
  cfg.modules = {{2, {8}, 4}, {4, {8}, 4}};
  cfg.head_hidden = 8;
  cfg.embed_dim = 4;
  return cfg;
}

}  // namespace

TEST_CASE("ppc_loss analytic anchors") {
  // identical unit rows: every similarity equal, loss = log(Ns)
  for (int64_t ns : {2L, 8L, 64L}) {
    Tensor z({ns, 4});
    for (int64_t i = 0; i < ns; ++i) z.data()[i * 4] = 1.0;
    train::PPCConfig cfg;
    cfg.tau = 0.07;
    cfg.ns = ns;
    Tensor loss = train::ppc_loss(z, z, cfg);
    CHECK(std::abs(loss.item() - std::log(static_cast<double>(ns))) < 1e-12);
  }

  // orthonormal rows, tau = 1: loss = log(1 + (Ns-1) e^{-1}); 0.31326 at Ns=2
  for (int64_t ns : {2L, 4L, 16L}) {
    Tensor z({ns, ns});
    for (int64_t i = 0; i < ns; ++i) z.data()[i * ns + i] = 1.0;
    train::PPCConfig cfg;
    cfg.tau = 1.0;
    cfg.ns = ns;
    Tensor loss = train::ppc_loss(z, z, cfg);
    double want = std::log1p(static_cast<double>(ns - 1) * std::exp(-1.0));
    CHECK(std::abs(loss.item() - want) < 1e-12);
    if (ns == 2) CHECK(loss.item() == Catch::Approx(0.31326).margin(1e-5));
  }
}

TEST_CASE("ppc_loss matches the double-loop oracle") {
  Rng rng(41);
  for (int rep = 0; rep < 40; ++rep) {
    int64_t ns = std::vector<int64_t>{2, 4, 8, 16, 64}[static_cast<size_t>(rep % 5)];
    int64_t d = 3 + static_cast<int64_t>(rng.uniform_index(6));
    Tensor z1 = random_rows(ns, d, rng);
    Tensor z2 = random_rows(ns, d, rng);
    train::PPCConfig cfg;
    cfg.ns = ns;
    cfg.normalize = rep % 2 == 0;
    cfg.tau = cfg.normalize ? rng.uniform(0.05, 1.0) : 1.0;
    double got = train::ppc_loss(z1, z2, cfg).item();
    double want = ppc_oracle(z1, z2, cfg.tau, cfg.normalize);
    CHECK(std::abs(got - want) < 1e-10);
  }
}

TEST_CASE("ppc_loss strict mode excludes same-mark columns") {
  Rng rng(42);
  Tensor z1 = random_rows(8, 5, rng);
  Tensor z2 = random_rows(8, 5, rng);
  IndexArray mu = {0, 0, 1, 1, 2, 2, 0, 1};
  IndexArray mv = {0, 0, 1, 1, 2, 2, 0, 1};
  train::PPCConfig cfg;
  cfg.ns = 8;
  cfg.tau = 0.2;
  double standard = train::ppc_loss(z1, z2, cfg).item();
  cfg.strict_negatives = true;
  double strict = train::ppc_loss(z1, z2, cfg, &mu, &mv).item();
  CHECK(strict <= standard + 1e-12);  // smaller denominator
  CHECK(std::abs(strict - ppc_oracle(z1, z2, cfg.tau, true, &mu, &mv)) < 1e-10);
}

TEST_CASE("ppc_loss gradient matches finite differences") {
  Rng rng(43);
  Tensor z1 = random_rows(6, 4, rng);
  Tensor z2 = random_rows(6, 4, rng);
  z1.set_requires_grad(true);
  z2.set_requires_grad(true);
  train::PPCConfig cfg;
  cfg.ns = 6;
  cfg.tau = 0.3;
  auto fwd = [&] { return train::ppc_loss(z1, z2, cfg); };
  auto res = ad::finite_difference_check({z1, z2}, [&] { return fwd().item(); }, fwd);
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("ppc_loss is invariant to positive row rescaling when normalizing") {
  Rng rng(44);
  Tensor z1 = random_rows(10, 6, rng);
  Tensor z2 = random_rows(10, 6, rng);
  Tensor z1s({10, 6}), z2s({10, 6});
  Rng sr(45);
  for (int64_t i = 0; i < 10; ++i) {
    double a = sr.uniform(0.1, 9.0), b = sr.uniform(0.1, 9.0);
    for (int64_t c = 0; c < 6; ++c) {
      z1s.data()[i * 6 + c] = a * z1.data()[i * 6 + c];
      z2s.data()[i * 6 + c] = b * z2.data()[i * 6 + c];
    }
  }
  train::PPCConfig cfg;
  cfg.ns = 10;
  CHECK(std::abs(train::ppc_loss(z1, z2, cfg).item() - train::ppc_loss(z1s, z2s, cfg).item()) < 1e-10);

  Tensor bad({4, 6});
  CHECK_THROWS_AS(train::ppc_loss(z1, bad, cfg), ShapeError);
}

TEST_CASE("adamw scalar reference and decay branch") {
  // zero gradient, no decay: parameters unchanged
  nn::ParamStore store;
  Tensor p = store.add("p", Tensor::of({1}, {1.0}));
  train::AdamW opt(store.params());
  opt.step(store.params(), 0.1, 0.0);
  CHECK(p.data()[0] == 1.0);

  // one step with g = 1: scalar reference computed by hand
  nn::ParamStore s2;
  Tensor q = s2.add("q", Tensor::of({1}, {1.0}));
  q.ensure_grad();
  q.grad()[0] = 1.0;
  train::AdamW opt2(s2.params());
  opt2.step(s2.params(), 0.1, 0.0);
  {
    double m = 0.1 * 1.0, v = 0.001 * 1.0;
    double mhat = m / (1.0 - 0.9), vhat = v / (1.0 - 0.999);
    double want = 1.0 - 0.1 * (mhat / (std::sqrt(vhat) + 1e-8));
    CHECK(q.data()[0] == Catch::Approx(want).margin(1e-15));
  }

  // decay-only branch: p *= (1 - lr * wd) exactly when g = 0
  nn::ParamStore s3;
  Tensor r = s3.add("r", Tensor::of({1}, {2.0}));
  train::AdamW opt3(s3.params());
  opt3.step(s3.params(), 0.001, 0.05);
  CHECK(r.data()[0] == 2.0 * (1.0 - 0.001 * 0.05));
}

TEST_CASE("cosine schedule endpoints and midpoint") {
  CHECK(train::cosine_lr(0, 100, 0.1, 0.001) == Catch::Approx(0.1).margin(1e-15));
  CHECK(train::cosine_lr(100, 100, 0.1, 0.001) == Catch::Approx(0.001).margin(1e-15));
  CHECK(train::cosine_lr(50, 100, 0.1, 0.001) == Catch::Approx((0.1 + 0.001) / 2).margin(1e-15));
}

TEST_CASE("checkpoint roundtrip is bitwise and corrupt files are rejected") {
  Rng rng(46);
  mhp::Net net = mhp::make_net(tiny_mhp(), rng);
  train::AdamW opt(net.store.params());
  nlohmann::json snapshot = {{"note", "roundtrip"}};
  train::Checkpoint ck =
      train::make_checkpoint("mhp", snapshot, net.store.params(), opt, 3, 12, 777);

  std::string path = (std::filesystem::temp_directory_path() / "s2s_ck_test.bin").string();
  train::save_checkpoint(path, ck);
  train::Checkpoint back = train::load_checkpoint(path);
  CHECK(back.arch == "mhp");
  CHECK(back.epoch == 3);
  CHECK(back.global_step == 12);
  CHECK(back.seed == 777);
  REQUIRE(back.tensors.size() == ck.tensors.size());
  for (size_t i = 0; i < ck.tensors.size(); ++i) {
    CHECK(back.tensors[i].name == ck.tensors[i].name);
    REQUIRE(back.tensors[i].data.size() == ck.tensors[i].data.size());
    CHECK(std::memcmp(back.tensors[i].data.data(), ck.tensors[i].data.data(),
                      ck.tensors[i].data.size() * sizeof(double)) == 0);
  }

  // restoring into a differently initialized net reproduces parameters bitwise
  Rng rng2(999);
  mhp::Net other = mhp::make_net(tiny_mhp(), rng2);
  train::AdamW opt2(other.store.params());
  train::restore_into(back, other.store.params(), opt2);
  for (size_t i = 0; i < net.store.params().size(); ++i) {
    const auto& a = net.store.params()[i].tensor;
    const auto& b = other.store.params()[i].tensor;
    CHECK(std::memcmp(a.data(), b.data(), static_cast<size_t>(a.numel()) * sizeof(double)) == 0);
  }

  // truncation names expected vs actual byte counts
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  std::string tpath = (std::filesystem::temp_directory_path() / "s2s_ck_trunc.bin").string();
  std::ofstream out(tpath, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 64));
  out.close();
  try {
    train::load_checkpoint(tpath);
    FAIL("expected truncation error");
  } catch (const Error& e) {
    std::string msg = e.what();
    CHECK(msg.find("expected") != std::string::npos);
    CHECK(msg.find("got") != std::string::npos);
  }

  // bad magic
  std::string mpath = (std::filesystem::temp_directory_path() / "s2s_ck_magic.bin").string();
  std::ofstream mout(mpath, std::ios::binary);
  mout.write("NOTAFILE", 8);
  mout.close();
  CHECK_THROWS_AS(train::load_checkpoint(mpath), Error);

  std::filesystem::remove(path);
  std::filesystem::remove(tpath);
  std::filesystem::remove(mpath);
}

TEST_CASE("training runs, decreases the loss, and is bitwise deterministic") {
  auto dataset = toy_dataset(8, 200, 50);
  train::TrainConfig tcfg;
  tcfg.epochs = 4;
  tcfg.batch_size = 1;
  tcfg.m_shapes = 2;
  tcfg.points_per_shape = 64;
  tcfg.seed = 7;
  tcfg.lr0 = 3e-3;
  train::PPCConfig pcfg;
  pcfg.ns = 32;
  geom::TransformConfig xcfg;

  auto run = [&] {
    Rng rng(tcfg.seed);
    mhp::Net net = mhp::make_net(tiny_mhp(), rng);
    train::AdamW opt(net.store.params());
    train::SceneEmbedder embed = train::make_embedder(net, tcfg.level);
    return train::run_training(dataset, net.store.params(), opt, embed, tcfg, pcfg, xcfg);
  };
  train::TrainProgress a = run();
  train::TrainProgress b = run();
  REQUIRE(a.epoch_losses.size() == 4);
  CHECK(std::memcmp(a.epoch_losses.data(), b.epoch_losses.data(), 4 * sizeof(double)) == 0);
  CHECK(a.epoch_losses.back() < a.epoch_losses.front());
}

TEST_CASE("save, load and resume reproduces the uninterrupted loss sequence") {
  auto dataset = toy_dataset(6, 150, 60);
  train::TrainConfig tcfg;
  tcfg.epochs = 4;
  tcfg.batch_size = 1;
  tcfg.m_shapes = 2;
  tcfg.points_per_shape = 48;
  tcfg.seed = 11;
  tcfg.lr0 = 2e-3;
  train::PPCConfig pcfg;
  pcfg.ns = 24;
  geom::TransformConfig xcfg;

  // uninterrupted
  Rng rng(tcfg.seed);
  mhp::Net full = mhp::make_net(tiny_mhp(), rng);
  train::AdamW fopt(full.store.params());
  auto fembed = train::make_embedder(full, tcfg.level);
  auto fprog = train::run_training(dataset, full.store.params(), fopt, fembed, tcfg, pcfg, xcfg);

  // second run: snapshot the state at the end of epoch 1 mid-flight
  Rng rng2(tcfg.seed);
  mhp::Net half = mhp::make_net(tiny_mhp(), rng2);
  train::AdamW hopt(half.store.params());
  auto hembed = train::make_embedder(half, tcfg.level);
  std::string path = (std::filesystem::temp_directory_path() / "s2s_resume.bin").string();
  {
    train::MetricsSink sink = [&](const train::EpochStats& st) {
      if (st.epoch == 1) {
        auto ck = train::make_checkpoint("mhp", {}, half.store.params(), hopt, st.epoch,
                                         (st.epoch + 1) * 3, tcfg.seed);
        train::save_checkpoint(path, ck);
      }
    };
    train::run_training(dataset, half.store.params(), hopt, hembed, tcfg, pcfg, xcfg, sink, 0);
  }

  // resume from the mid-run checkpoint and replay epochs 2..3
  train::Checkpoint ck = train::load_checkpoint(path);
  Rng rng3(12345);
  mhp::Net res = mhp::make_net(tiny_mhp(), rng3);
  train::AdamW ropt(res.store.params());
  train::restore_into(ck, res.store.params(), ropt);
  auto rembed = train::make_embedder(res, tcfg.level);
  auto rprog = train::run_training(dataset, res.store.params(), ropt, rembed, tcfg, pcfg, xcfg,
                                   {}, ck.epoch + 1);
  REQUIRE(rprog.epoch_losses.size() == 2);
  CHECK(rprog.epoch_losses[0] == fprog.epoch_losses[2]);
  CHECK(rprog.epoch_losses[1] == fprog.epoch_losses[3]);
  std::filesystem::remove(path);
}

TEST_CASE("non-finite loss aborts with step diagnostics") {
  auto dataset = toy_dataset(4, 100, 80);
  train::TrainConfig tcfg;
  tcfg.epochs = 8;
  tcfg.batch_size = 1;
  tcfg.m_shapes = 2;
  tcfg.points_per_shape = 48;
  tcfg.seed = 21;
  tcfg.lr0 = 1e8;  // guaranteed blow-up
  train::PPCConfig pcfg;
  pcfg.ns = 24;
  pcfg.normalize = false;  // raw dot products so the explosion reaches the loss
  geom::TransformConfig xcfg;
  Rng rng(tcfg.seed);
  mhp::Net net = mhp::make_net(tiny_mhp(), rng);
  train::AdamW opt(net.store.params());
  auto embed = train::make_embedder(net, tcfg.level);
  try {
    train::run_training(dataset, net.store.params(), opt, embed, tcfg, pcfg, xcfg);
    SUCCEED("training survived the pathological learning rate");
  } catch (const Error& e) {
    std::string msg = e.what();
    CHECK(msg.find("non-finite") != std::string::npos);
    CHECK(msg.find("epoch") != std::string::npos);
    CHECK(msg.find("step") != std::string::npos);
  }
}

TEST_CASE("paper-scale reference configs parse with the published values") {
  // keep these aligned with configs/*.json
  auto check_common = [](const nlohmann::json& j) {
    CHECK(j["train"]["lr0"] == 0.001);
    CHECK(j["train"]["weight_decay"] == 0.05);
    CHECK(j["train"]["batch_size"] == 10);
    CHECK(j["train"]["points_per_shape"] == 2048);
  };
  {
    std::ifstream in("configs/mhp_reference.json");
    if (!in) return;  // running outside the source tree
    nlohmann::json j;
    in >> j;
    check_common(j);
    CHECK(j["train"]["epochs"] == 600);
    CHECK(j["train"]["m_shapes"] == 4);
    CHECK(j["ppc"]["ns"] == 2048);
  }
  {
    std::ifstream in("configs/mhv_reference.json");
    if (!in) return;
    nlohmann::json j;
    in >> j;
    check_common(j);
    CHECK(j["train"]["epochs"] == 800);
    CHECK(j["train"]["m_shapes"] == 6);
    CHECK(j["ppc"]["ns"] == 4096);
  }
}

TEST_CASE("region-level training step runs end to end on a toy scene") {
  auto dataset = toy_dataset(6, 150, 70);
  train::TrainConfig tcfg;
  tcfg.epochs = 1;
  tcfg.batch_size = 1;
  tcfg.m_shapes = 3;
  tcfg.points_per_shape = 96;
  tcfg.seed = 13;
  tcfg.level = train::Level::region;
  train::PPCConfig pcfg;
  pcfg.ns = 64;
  geom::TransformConfig xcfg;

  mhv::NetConfig vcfg;
  vcfg.widths = {8, 8, 8, 8};
  vcfg.conv_layers = 1;
  vcfg.base_voxel_size = 0.1;
  vcfg.head_hidden = 8;
  vcfg.embed_dim = 4;
  Rng rng(tcfg.seed);
  mhv::Net net = mhv::make_net(vcfg, rng);
  train::AdamW opt(net.store.params());
  auto embed = train::make_embedder(net, tcfg.level);
  auto prog = train::run_training(dataset, net.store.params(), opt, embed, tcfg, pcfg, xcfg);
  REQUIRE(prog.epoch_losses.size() == 1);
  CHECK(std::isfinite(prog.epoch_losses[0]));
}
