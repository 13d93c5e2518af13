#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <sstream>
#include <string>

#include "relprox/errors.hpp"

namespace relprox {

// splitmix64 step. Used to derive decorrelated substream seeds from one user
// seed so that, e.g., corpus generation and batch sampling never share state.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Mixes a base seed with a list of stream tags into one substream seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t state = seed;
  std::uint64_t out = splitmix64(state);
  for (std::uint64_t tag : tags) {
    state ^= tag + 0x9e3779b97f4a7c15ull + (state << 6) + (state >> 2);
    out = splitmix64(state);
  }
  return out;
}

// Stable small tags for named substreams (values are arbitrary but frozen;
// changing them changes every derived stream).
namespace stream {
inline constexpr std::uint64_t corpus = 0x10;
inline constexpr std::uint64_t class_protos = 0x11;
inline constexpr std::uint64_t utterances = 0x12;
inline constexpr std::uint64_t phone_maps = 0x13;
inline constexpr std::uint64_t init_acoustic = 0x20;
inline constexpr std::uint64_t init_text = 0x21;
inline constexpr std::uint64_t batches = 0x30;
inline constexpr std::uint64_t dev_eval = 0x31;
inline constexpr std::uint64_t test_eval = 0x32;
inline constexpr std::uint64_t gradcheck = 0x40;
inline constexpr std::uint64_t tuple_subsample = 0x50;
}  // namespace stream

inline std::mt19937_64 make_engine(std::uint64_t seed,
                                   std::initializer_list<std::uint64_t> tags = {}) {
  return std::mt19937_64(mix_seed(seed, tags));
}

// mt19937_64 state serialization for checkpoints, via the standard stream
// operators (textual, locale-independent with classic locale).
inline std::string serialize_engine(const std::mt19937_64& eng) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << eng;
  return os.str();
}

inline std::mt19937_64 deserialize_engine(const std::string& text) {
  std::istringstream is(text);
  is.imbue(std::locale::classic());
  std::mt19937_64 eng;
  is >> eng;
  if (!is) throw io_error("corrupt RNG state in checkpoint");
  return eng;
}

}  // namespace relprox
