#include "fedauto/rng.hpp"

#include <numeric>

#include "fedauto/errors.hpp"

namespace fedauto {

namespace {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string join_classes(const std::vector<int>& classes) {
  std::string out;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(classes[i]);
  }
  return out;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, Stream purpose,
                          std::uint64_t round, std::uint64_t node) noexcept {
  std::uint64_t h = splitmix64(master);
  h = splitmix64(h ^ static_cast<std::uint64_t>(purpose));
  h = splitmix64(h ^ round);
  h = splitmix64(h ^ node);
  return h;
}

CoverageGap::CoverageGap(std::vector<int> uncovered)
    : std::runtime_error("public set lacks samples of classes {" +
                         join_classes(uncovered) + "}"),
      uncovered_(std::move(uncovered)) {}

ConfigError::ConfigError(std::string key, const std::string& message)
    : std::runtime_error(key.empty() ? message : key + ": " + message),
      key_(std::move(key)) {}

}  // namespace fedauto
