#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "relprox/errors.hpp"

namespace relprox {

// Checkpoint file layout:
//   bytes 0..7   magic "RPLCKPT1"
//   bytes 8..15  uint64 little-endian header length in bytes
//   header       JSON text: version, epoch, global_step, rng_state, config
//                echo, and an ordered array list {name, shape, offset, count}
//                with offsets counted in doubles from the payload start
//   payload      raw little-endian float64 arrays, in header order
inline constexpr char kCheckpointMagic[8] = {'R', 'P', 'L', 'C', 'K', 'P', 'T', '1'};

struct CheckpointArray {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> data;
};

struct CheckpointData {
  int version = 1;
  std::uint64_t epoch = 0;
  std::uint64_t global_step = 0;
  std::string rng_state;
  nlohmann::json config_echo;
  std::vector<CheckpointArray> arrays;

  const CheckpointArray& find(const std::string& name) const {
    for (const auto& a : arrays) {
      if (a.name == name) return a;
    }
    throw io_error("checkpoint has no array named " + name);
  }

  bool has(const std::string& name) const {
    for (const auto& a : arrays) {
      if (a.name == name) return true;
    }
    return false;
  }
};

inline void save_checkpoint(const std::filesystem::path& path, const CheckpointData& ckpt) {
  nlohmann::json header;
  header["version"] = ckpt.version;
  header["epoch"] = ckpt.epoch;
  header["global_step"] = ckpt.global_step;
  header["rng_state"] = ckpt.rng_state;
  header["config"] = ckpt.config_echo;
  header["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : ckpt.arrays) {
    header["arrays"].push_back(
        {{"name", a.name}, {"shape", a.shape}, {"offset", offset}, {"count", a.data.size()}});
    offset += a.data.size();
  }
  const std::string header_text = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io_error("cannot open checkpoint for writing: " + path.string());
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint64_t header_len = header_text.size();
  os.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  os.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  for (const auto& a : ckpt.arrays) {
    os.write(reinterpret_cast<const char*>(a.data.data()),
             static_cast<std::streamsize>(a.data.size() * sizeof(double)));
  }
  if (!os) throw io_error("checkpoint write failed: " + path.string());
}

inline CheckpointData load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open checkpoint: " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (is.gcount() != sizeof(magic) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw io_error("not a checkpoint file: " + path.string());
  }
  std::uint64_t header_len = 0;
  is.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (is.gcount() != sizeof(header_len) || header_len == 0 || header_len > (1ull << 30)) {
    throw io_error("corrupt checkpoint header length: " + path.string());
  }
  std::string header_text(header_len, '\0');
  is.read(header_text.data(), static_cast<std::streamsize>(header_len));
  if (is.gcount() != static_cast<std::streamsize>(header_len)) {
    throw io_error("truncated checkpoint header: " + path.string());
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    throw io_error("corrupt checkpoint header: " + std::string(e.what()));
  }

  CheckpointData ckpt;
  try {
    ckpt.version = header.at("version").get<int>();
    ckpt.epoch = header.at("epoch").get<std::uint64_t>();
    ckpt.global_step = header.at("global_step").get<std::uint64_t>();
    ckpt.rng_state = header.at("rng_state").get<std::string>();
    ckpt.config_echo = header.at("config");
    std::uint64_t expected_offset = 0;
    for (const auto& a : header.at("arrays")) {
      CheckpointArray arr;
      arr.name = a.at("name").get<std::string>();
      arr.shape = a.at("shape").get<std::vector<std::size_t>>();
      const auto offset = a.at("offset").get<std::uint64_t>();
      const auto count = a.at("count").get<std::uint64_t>();
      if (offset != expected_offset) throw io_error("checkpoint array offsets out of order");
      expected_offset += count;
      arr.data.resize(count);
      is.read(reinterpret_cast<char*>(arr.data.data()),
              static_cast<std::streamsize>(count * sizeof(double)));
      if (is.gcount() != static_cast<std::streamsize>(count * sizeof(double))) {
        throw io_error("truncated checkpoint payload at array " + arr.name);
      }
      ckpt.arrays.push_back(std::move(arr));
    }
  } catch (const nlohmann::json::exception& e) {
    throw io_error("corrupt checkpoint header field: " + std::string(e.what()));
  }
  if (ckpt.version != 1) throw io_error("unsupported checkpoint version");
  return ckpt;
}

}  // namespace relprox
