#pragma once

// Point file formats.
//   XYZ text: whitespace-separated "x y z [label]" per line.
//   PCB binary: magic "S2SPCB1\0", u32 count, u8 flags (bit 0 = has_label),
//   count x 3 f32 little-endian positions, then count x u16 labels if set.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "s2s/common.hpp"
#include "s2s/geometry.hpp"

namespace s2s::bench {

static_assert(std::endian::native == std::endian::little, "PCB format is little-endian");

constexpr char kPcbMagic[8] = {'S', '2', 'S', 'P', 'C', 'B', '1', '\0'};

struct PointFile {
  geom::PointCloud cloud;
  std::optional<std::vector<uint16_t>> labels;
};

inline void write_pcb(const std::string& path, const geom::PointCloud& cloud,
                      const std::vector<uint16_t>* labels = nullptr) {
  if (labels && static_cast<int64_t>(labels->size()) != cloud.size())
    throw ShapeError("write_pcb: label count does not match point count");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("write_pcb: cannot open " + path);
  out.write(kPcbMagic, 8);
  uint32_t count = static_cast<uint32_t>(cloud.size());
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  uint8_t flags = labels ? 1 : 0;
  out.write(reinterpret_cast<const char*>(&flags), sizeof(flags));
  for (const geom::Vec3& p : cloud.positions) {
    float xyz[3] = {static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z)};
    out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
  }
  if (labels)
    out.write(reinterpret_cast<const char*>(labels->data()),
              static_cast<std::streamsize>(labels->size() * sizeof(uint16_t)));
  if (!out) throw Error("write_pcb: write failed for " + path);
}

inline PointFile read_pcb(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("read_pcb: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, kPcbMagic, 8) != 0)
    throw Error("read_pcb: bad magic in " + path);
  uint32_t count = 0;
  uint8_t flags = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  in.read(reinterpret_cast<char*>(&flags), sizeof(flags));
  if (!in) throw Error("read_pcb: truncated header in " + path);
  PointFile pf;
  pf.cloud.positions.resize(count);
  for (uint32_t i = 0; i < count; ++i) {
    float xyz[3];
    in.read(reinterpret_cast<char*>(xyz), sizeof(xyz));
    if (in.gcount() != sizeof(xyz))
      throw Error("read_pcb: short read at point " + std::to_string(i) + " (byte " +
                  std::to_string(13 + static_cast<int64_t>(i) * 12) + ") in " + path);
    pf.cloud.positions[i] = {xyz[0], xyz[1], xyz[2]};
  }
  if (flags & 1) {
    std::vector<uint16_t> labels(count);
    in.read(reinterpret_cast<char*>(labels.data()),
            static_cast<std::streamsize>(labels.size() * sizeof(uint16_t)));
    if (static_cast<size_t>(in.gcount()) != labels.size() * sizeof(uint16_t))
      throw Error("read_pcb: short label block in " + path);
    pf.labels = std::move(labels);
  }
  return pf;
}

inline void write_xyz(const std::string& path, const geom::PointCloud& cloud,
                      const std::vector<uint16_t>* labels = nullptr) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("write_xyz: cannot open " + path);
  out.precision(17);
  for (int64_t i = 0; i < cloud.size(); ++i) {
    const geom::Vec3& p = cloud.positions[static_cast<size_t>(i)];
    out << p.x << ' ' << p.y << ' ' << p.z;
    if (labels) out << ' ' << (*labels)[static_cast<size_t>(i)];
    out << '\n';
  }
}

inline PointFile read_xyz(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("read_xyz: cannot open " + path);
  PointFile pf;
  std::vector<uint16_t> labels;
  std::string line;
  int64_t lineno = 0;
  bool saw_label = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    std::istringstream ss(line);
    double x, y, z;
    if (!(ss >> x >> y >> z))
      throw Error("read_xyz: malformed line " + std::to_string(lineno) + " in " + path);
    long long label;
    if (ss >> label) {
      saw_label = true;
      labels.push_back(static_cast<uint16_t>(label));
    } else if (saw_label) {
      throw Error("read_xyz: missing label on line " + std::to_string(lineno) + " in " + path);
    }
    std::string rest;
    if (ss >> rest)
      throw Error("read_xyz: trailing tokens on line " + std::to_string(lineno) + " in " + path);
    pf.cloud.positions.push_back({x, y, z});
  }
  if (pf.cloud.positions.empty()) throw Error("read_xyz: no points in " + path);
  if (saw_label) {
    if (labels.size() != pf.cloud.positions.size())
      throw Error("read_xyz: label column is incomplete in " + path);
    pf.labels = std::move(labels);
  }
  return pf;
}

// Dispatch on extension: .pcb is binary, anything else is XYZ text.
inline PointFile load_points(const std::string& path) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".pcb") return read_pcb(path);
  return read_xyz(path);
}

}  // namespace s2s::bench
