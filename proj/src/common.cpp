#include "fairrank/common.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace fairrank {

GroupSchema::GroupSchema(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.empty()) throw ConfigError("group schema must contain at least one group");
  std::set<std::string> unique(names_.begin(), names_.end());
  if (unique.size() != names_.size()) throw ConfigError("group names must be distinct");
}

GroupSchema GroupSchema::Default() {
  return GroupSchema({"light_man", "light_woman", "dark_man", "dark_woman"});
}

const std::string& GroupSchema::name(GroupId g) const {
  if (g.value < 0 || g.value >= size()) throw DomainError("group id out of range");
  return names_[static_cast<std::size_t>(g.value)];
}

GroupId GroupSchema::find(std::string_view name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw ConfigError("unknown group '" + std::string(name) + "'");
  return GroupId{static_cast<int>(it - names_.begin())};
}

bool GroupSchema::contains(std::string_view name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t HashString(std::string_view s) {
  // FNV-1a, then mixed.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return SplitMix64(h);
}

std::uint64_t HashCombine(std::uint64_t seed, std::uint64_t value) {
  return SplitMix64(seed ^ (SplitMix64(value) + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2)));
}

std::uint64_t DeriveSeed(std::uint64_t base, std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = SplitMix64(base);
  for (auto p : parts) h = HashCombine(h, p);
  return h;
}

std::uint64_t DeriveSeed(std::uint64_t base, std::string_view tag,
                         std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = HashCombine(SplitMix64(base), HashString(tag));
  for (auto p : parts) h = HashCombine(h, p);
  return h;
}

double UnitFromBits(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

double Rng::Normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Marsaglia polar method.
  double u, v, s;
  do {
    u = 2.0 * Uniform() - 1.0;
    v = 2.0 * Uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  double m = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * m;
  has_spare_ = true;
  return u * m;
}

std::uint64_t Rng::Below(std::uint64_t n) {
  if (n == 0) throw DomainError("Rng::Below requires n > 0");
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

}  // namespace fairrank
