#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "relprox/checkpoint.hpp"
#include "test_support.hpp"

using namespace relprox;

namespace {

CheckpointData sample_checkpoint() {
  CheckpointData c;
  c.epoch = 7;
  c.global_step = 432;
  c.rng_state = "stream:17:99";
  c.config_echo = nlohmann::json{{"lr", 1e-3}, {"variant", "full"}};
  c.arrays.push_back({"acoustic.out.W", {2, 3}, {0.0, -0.0, 1e-300, -3.75, 2.5, 1e300}});
  c.arrays.push_back({"text.out.b", {4}, {1.0, 2.0, 3.0, 4.0}});
  c.arrays.push_back({"opt.m", {4}, {0.25, 0.0, -0.125, 9.5}});
  return c;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

std::vector<char> read_bytes(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("checkpoints round-trip every field bit-exactly") {
  testsupport::TempDir tmp;
  const auto path = tmp.path / "model.ckpt";
  const auto original = sample_checkpoint();
  save_checkpoint(path, original);

  const auto loaded = load_checkpoint(path);
  CHECK(loaded.version == original.version);
  CHECK(loaded.epoch == original.epoch);
  CHECK(loaded.global_step == original.global_step);
  CHECK(loaded.rng_state == original.rng_state);
  CHECK(loaded.config_echo == original.config_echo);
  REQUIRE(loaded.arrays.size() == original.arrays.size());
  for (std::size_t i = 0; i < original.arrays.size(); ++i) {
    CHECK(loaded.arrays[i].name == original.arrays[i].name);
    CHECK(loaded.arrays[i].shape == original.arrays[i].shape);
    CHECK(bitwise_equal(loaded.arrays[i].data, original.arrays[i].data));
  }

  CHECK(loaded.has("opt.m"));
  CHECK_FALSE(loaded.has("opt.q"));
  CHECK(loaded.find("text.out.b").data[2] == 3.0);
  CHECK_THROWS_AS(loaded.find("missing"), io_error);
}

TEST_CASE("saving the same state twice produces identical bytes") {
  testsupport::TempDir tmp;
  const auto a = tmp.path / "a.ckpt";
  const auto b = tmp.path / "b.ckpt";
  save_checkpoint(a, sample_checkpoint());
  save_checkpoint(b, sample_checkpoint());
  CHECK(read_bytes(a) == read_bytes(b));
}

TEST_CASE("corrupt checkpoint files are rejected") {
  testsupport::TempDir tmp;

  SECTION("missing file") {
    CHECK_THROWS_AS(load_checkpoint(tmp.path / "absent.ckpt"), io_error);
  }

  SECTION("wrong magic") {
    const auto path = tmp.path / "bad.ckpt";
    std::ofstream os(path, std::ios::binary);
    os << "NOTACKPTxxxxxxxxxxxxxxxx";
    os.close();
    CHECK_THROWS_AS(load_checkpoint(path), io_error);
  }

  SECTION("truncated payload") {
    const auto path = tmp.path / "trunc.ckpt";
    save_checkpoint(path, sample_checkpoint());
    const auto full = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, full - 9);
    CHECK_THROWS_AS(load_checkpoint(path), io_error);
  }

  SECTION("truncated header") {
    const auto path = tmp.path / "short.ckpt";
    std::ofstream os(path, std::ios::binary);
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const std::uint64_t header_len = 1000;
    os.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    os << "{}";
    os.close();
    CHECK_THROWS_AS(load_checkpoint(path), io_error);
  }

  SECTION("header is not json") {
    const auto path = tmp.path / "notjson.ckpt";
    std::ofstream os(path, std::ios::binary);
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const std::string text = "this is not json";
    const std::uint64_t header_len = text.size();
    os.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    os << text;
    os.close();
    CHECK_THROWS_AS(load_checkpoint(path), io_error);
  }
}

TEST_CASE("empty arrays and empty checkpoints are legal") {
  testsupport::TempDir tmp;
  CheckpointData c;
  c.config_echo = nlohmann::json::object();
  c.arrays.push_back({"empty", {0}, {}});
  const auto path = tmp.path / "empty.ckpt";
  save_checkpoint(path, c);
  const auto loaded = load_checkpoint(path);
  REQUIRE(loaded.arrays.size() == 1);
  CHECK(loaded.arrays[0].data.empty());
}
