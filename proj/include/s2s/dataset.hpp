#pragma once

// On-disk datasets: a JSON manifest listing PCB point files with class
// labels and the per-shape generator seeds.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "s2s/pointio.hpp"
#include "s2s/rng.hpp"
#include "s2s/shapes.hpp"

namespace s2s::bench {

struct DatasetEntry {
  std::string file;  // relative to the manifest directory
  std::string class_name;
  int64_t class_id = 0;
  uint64_t seed = 0;
};

struct Manifest {
  std::vector<DatasetEntry> entries;
  std::vector<std::string> class_names;
  int64_t num_parts = 0;
};

// Generates per_class shapes for every spec, one PCB file per shape.
// Derived per-shape seeds make regeneration bitwise reproducible.
inline std::filesystem::path gen_synthetic_dataset(const std::vector<SyntheticShapeSpec>& specs,
                                                   int64_t per_class, int64_t points_per_shape,
                                                   uint64_t seed, const std::filesystem::path& dir) {
  if (per_class < 1) throw Error("gen_synthetic_dataset: per_class must be >= 1");
  if (specs.empty()) throw Error("gen_synthetic_dataset: no shape specs");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("gen_synthetic_dataset: cannot create " + dir.string());

  nlohmann::json manifest;
  manifest["class_names"] = nlohmann::json::array();
  int64_t num_parts = 0;
  for (const auto& spec : specs) {
    manifest["class_names"].push_back(kind_name(spec.kind));
    num_parts = std::max(num_parts, part_count(spec.kind));
  }
  manifest["num_parts"] = num_parts;
  manifest["entries"] = nlohmann::json::array();

  int64_t idx = 0;
  for (size_t ci = 0; ci < specs.size(); ++ci) {
    for (int64_t i = 0; i < per_class; ++i, ++idx) {
      uint64_t shape_seed =
          Rng::derive(seed, {0xda7a5e7, static_cast<uint64_t>(ci), static_cast<uint64_t>(i)}).next_u64();
      Rng rng(shape_seed);
      LabeledShape shape = sample_shape(specs[ci], points_per_shape, rng);
      char name[32];
      std::snprintf(name, sizeof(name), "shape_%05lld.pcb", static_cast<long long>(idx));
      write_pcb((dir / name).string(), shape.cloud, &shape.part_labels);
      manifest["entries"].push_back({{"file", name},
                                     {"class", kind_name(specs[ci].kind)},
                                     {"class_id", ci},
                                     {"seed", shape_seed}});
    }
  }
  std::filesystem::path mpath = dir / "manifest.json";
  std::ofstream out(mpath, std::ios::trunc);
  if (!out) throw Error("gen_synthetic_dataset: cannot write " + mpath.string());
  out << manifest.dump(2) << '\n';
  return mpath;
}

inline Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("read_manifest: cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("read_manifest: bad JSON in " + path.string() + ": " + e.what());
  }
  Manifest m;
  m.class_names = j.at("class_names").get<std::vector<std::string>>();
  m.num_parts = j.at("num_parts").get<int64_t>();
  for (const auto& e : j.at("entries")) {
    DatasetEntry d;
    d.file = e.at("file").get<std::string>();
    d.class_name = e.at("class").get<std::string>();
    d.class_id = e.at("class_id").get<int64_t>();
    d.seed = e.at("seed").get<uint64_t>();
    m.entries.push_back(std::move(d));
  }
  return m;
}

inline std::vector<LabeledShape> load_dataset(const std::filesystem::path& manifest_path) {
  Manifest m = read_manifest(manifest_path);
  std::filesystem::path dir = manifest_path.parent_path();
  std::vector<LabeledShape> out;
  out.reserve(m.entries.size());
  for (const DatasetEntry& e : m.entries) {
    PointFile pf = read_pcb((dir / e.file).string());
    LabeledShape s;
    s.cloud = std::move(pf.cloud);
    s.class_id = e.class_id;
    if (pf.labels) s.part_labels = std::move(*pf.labels);
    out.push_back(std::move(s));
  }
  return out;
}

// In-memory generation, used by tests and the acceptance suite.
inline std::vector<LabeledShape> make_shape_set(const std::vector<SyntheticShapeSpec>& specs,
                                                int64_t per_class, int64_t points_per_shape,
                                                uint64_t seed) {
  std::vector<LabeledShape> out;
  for (size_t ci = 0; ci < specs.size(); ++ci) {
    for (int64_t i = 0; i < per_class; ++i) {
      Rng rng = Rng::derive(seed, {0xda7a5e7, static_cast<uint64_t>(ci), static_cast<uint64_t>(i)});
      Rng shape_rng(rng.next_u64());
      LabeledShape s = sample_shape(specs[ci], points_per_shape, shape_rng);
      s.class_id = static_cast<int64_t>(ci);
      out.push_back(std::move(s));
    }
  }
  return out;
}

inline std::vector<geom::PointCloud> clouds_of(const std::vector<LabeledShape>& shapes) {
  std::vector<geom::PointCloud> out;
  out.reserve(shapes.size());
  for (const auto& s : shapes) out.push_back(s.cloud);
  return out;
}

}  // namespace s2s::bench
