#pragma once

// Versioned binary checkpoints: magic, u32 version, length-prefixed JSON
// header (config, tensor names/shapes/offsets, training counters), then the
// raw little-endian f64 payload holding each parameter followed by its two
// optimizer moment buffers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "s2s/common.hpp"
#include "s2s/nn.hpp"
#include "s2s/optim.hpp"

namespace s2s::train {

static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");

constexpr char kCheckpointMagic[8] = {'S', '2', 'S', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  std::vector<int64_t> shape;
  std::vector<double> data, m, v;
};

struct Checkpoint {
  std::string arch;          // "mhp" | "mhv"
  nlohmann::json config;     // full config snapshot
  int64_t epoch = -1;        // last completed epoch, -1 before training
  int64_t global_step = 0;
  int64_t adam_t = 0;
  uint64_t seed = 0;
  std::vector<TensorRecord> tensors;
};

inline Checkpoint make_checkpoint(const std::string& arch, nlohmann::json config,
                                  const std::vector<nn::Parameter>& params, const AdamW& opt,
                                  int64_t epoch, int64_t global_step, uint64_t seed) {
  Checkpoint ck;
  ck.arch = arch;
  ck.config = std::move(config);
  ck.epoch = epoch;
  ck.global_step = global_step;
  ck.adam_t = opt.steps();
  ck.seed = seed;
  const auto& m = opt.first_moments();
  const auto& v = opt.second_moments();
  if (m.size() != params.size()) throw Error("make_checkpoint: optimizer does not match parameters");
  for (size_t i = 0; i < params.size(); ++i) {
    TensorRecord rec;
    rec.name = params[i].name;
    rec.shape = params[i].tensor.shape();
    rec.data = params[i].tensor.values();
    rec.m = m[i];
    rec.v = v[i];
    ck.tensors.push_back(std::move(rec));
  }
  return ck;
}

// Copies checkpoint tensors back into a freshly built net and optimizer.
// Names and shapes must match exactly.
inline void restore_into(const Checkpoint& ck, std::vector<nn::Parameter>& params, AdamW& opt) {
  if (ck.tensors.size() != params.size()) {
    throw Error("checkpoint: has " + std::to_string(ck.tensors.size()) + " tensors but net has " +
                std::to_string(params.size()) + " parameters");
  }
  std::vector<std::vector<double>> m, v;
  for (size_t i = 0; i < params.size(); ++i) {
    const TensorRecord& rec = ck.tensors[i];
    if (rec.name != params[i].name)
      throw Error("checkpoint: tensor " + std::to_string(i) + " is '" + rec.name +
                  "' but net expects '" + params[i].name + "'");
    if (rec.shape != params[i].tensor.shape())
      throw Error("checkpoint: shape mismatch for " + rec.name + ": file has " +
                  shape_str(rec.shape) + ", net has " + shape_str(params[i].tensor.shape()));
    params[i].tensor.values() = rec.data;
    m.push_back(rec.m);
    v.push_back(rec.v);
  }
  opt.restore(ck.adam_t, std::move(m), std::move(v));
}

namespace detail {

inline std::string seed_hex(uint64_t seed) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(seed));
  return buf;
}

inline uint64_t parse_seed_hex(const std::string& s) {
  return std::strtoull(s.c_str(), nullptr, 16);
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  nlohmann::json header;
  header["arch"] = ck.arch;
  header["config"] = ck.config;
  header["epoch"] = ck.epoch;
  header["global_step"] = ck.global_step;
  header["adam_t"] = ck.adam_t;
  header["seed"] = detail::seed_hex(ck.seed);
  nlohmann::json tensors = nlohmann::json::array();
  uint64_t offset = 0;
  for (const TensorRecord& rec : ck.tensors) {
    int64_t count = 1;
    for (int64_t d : rec.shape) count *= d;
    if (static_cast<size_t>(count) != rec.data.size() || rec.m.size() != rec.data.size() ||
        rec.v.size() != rec.data.size())
      throw Error("save_checkpoint: inconsistent buffer sizes for " + rec.name);
    tensors.push_back({{"name", rec.name}, {"shape", rec.shape}, {"offset", offset}, {"count", count}});
    offset += 3 * static_cast<uint64_t>(count) * sizeof(double);
  }
  header["tensors"] = std::move(tensors);
  std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("save_checkpoint: cannot open " + path);
  out.write(kCheckpointMagic, 8);
  uint32_t version = kCheckpointVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const TensorRecord& rec : ck.tensors) {
    auto dump = [&](const std::vector<double>& buf) {
      out.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(double)));
    };
    dump(rec.data);
    dump(rec.m);
    dump(rec.v);
  }
  if (!out) throw Error("save_checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw Error("load_checkpoint: " + path + " is not a checkpoint (bad magic)");
  uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!in || version != kCheckpointVersion)
    throw Error("load_checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                std::to_string(kCheckpointVersion) + ")");
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (static_cast<uint64_t>(in.gcount()) != hlen)
    throw Error("load_checkpoint: truncated header in " + path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw Error("load_checkpoint: bad header JSON: " + std::string(e.what()));
  }

  Checkpoint ck;
  ck.arch = header.at("arch").get<std::string>();
  ck.config = header.at("config");
  ck.epoch = header.at("epoch").get<int64_t>();
  ck.global_step = header.at("global_step").get<int64_t>();
  ck.adam_t = header.at("adam_t").get<int64_t>();
  ck.seed = detail::parse_seed_hex(header.at("seed").get<std::string>());

  uint64_t expected_payload = 0;
  for (const auto& t : header.at("tensors")) {
    TensorRecord rec;
    rec.name = t.at("name").get<std::string>();
    rec.shape = t.at("shape").get<std::vector<int64_t>>();
    uint64_t offset = t.at("offset").get<uint64_t>();
    int64_t count = t.at("count").get<int64_t>();
    int64_t prod = 1;
    for (int64_t d : rec.shape) prod *= d;
    if (prod != count)
      throw Error("load_checkpoint: count " + std::to_string(count) + " does not match shape " +
                  shape_str(rec.shape) + " for " + rec.name);
    if (offset != expected_payload)
      throw Error("load_checkpoint: unexpected offset for " + rec.name);
    expected_payload += 3 * static_cast<uint64_t>(count) * sizeof(double);
    rec.data.resize(static_cast<size_t>(count));
    rec.m.resize(static_cast<size_t>(count));
    rec.v.resize(static_cast<size_t>(count));
    ck.tensors.push_back(std::move(rec));
  }

  uint64_t got = 0;
  for (TensorRecord& rec : ck.tensors) {
    auto slurp = [&](std::vector<double>& buf) {
      in.read(reinterpret_cast<char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(double)));
      got += static_cast<uint64_t>(in.gcount());
    };
    slurp(rec.data);
    slurp(rec.m);
    slurp(rec.v);
    if (!in) break;
  }
  if (got != expected_payload) {
    throw Error("load_checkpoint: truncated payload in " + path + ": expected " +
                std::to_string(expected_payload) + " bytes, got " + std::to_string(got));
  }
  return ck;
}

}  // namespace s2s::train
