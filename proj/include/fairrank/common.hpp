#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fairrank {

// Invalid user-supplied configuration (profiles, ratios, objectives...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Operation called outside its domain (empty lists, k out of range...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// A metric that is mathematically undefined for the given input, e.g. Skew
// against a zero population share or eta with a zero oracle value.
class UndefinedMetricError : public DomainError {
 public:
  using DomainError::DomainError;
};

// Broken internal invariant; indicates a bug rather than bad input.
class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

using ItemId = std::uint64_t;
using Vector = std::vector<double>;

// Index of a demographic group inside a GroupSchema.
struct GroupId {
  int value = 0;
  friend auto operator<=>(const GroupId&, const GroupId&) = default;
};

// The finite, ordered set of group names shared by a corpus, its classifiers
// and every per-group metric vector (indexed by GroupId::value).
class GroupSchema {
 public:
  GroupSchema() = default;
  explicit GroupSchema(std::vector<std::string> names);

  // light_man, light_woman, dark_man, dark_woman
  static GroupSchema Default();

  int size() const { return static_cast<int>(names_.size()); }
  const std::string& name(GroupId g) const;
  const std::vector<std::string>& names() const { return names_; }
  GroupId find(std::string_view name) const;  // throws ConfigError
  bool contains(std::string_view name) const;

  friend bool operator==(const GroupSchema&, const GroupSchema&) = default;

 private:
  std::vector<std::string> names_;
};

// Default-schema group ids.
namespace groups {
inline constexpr GroupId kLightMan{0};
inline constexpr GroupId kLightWoman{1};
inline constexpr GroupId kDarkMan{2};
inline constexpr GroupId kDarkWoman{3};
}  // namespace groups

// Stable 64-bit hashing used to derive independent RNG streams. Unlike
// std::hash these values are fixed across platforms and releases.
std::uint64_t SplitMix64(std::uint64_t x);
std::uint64_t HashString(std::string_view s);
std::uint64_t HashCombine(std::uint64_t seed, std::uint64_t value);
std::uint64_t DeriveSeed(std::uint64_t base, std::initializer_list<std::uint64_t> parts);
std::uint64_t DeriveSeed(std::uint64_t base, std::string_view tag,
                         std::initializer_list<std::uint64_t> parts = {});

// Uniform double in [0, 1) from the top 53 bits of a hash value.
double UnitFromBits(std::uint64_t bits);

// Seeded generator with portable distributions. The std:: distributions are
// implementation-defined, which would make serialized corpora and weights
// differ between standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(SplitMix64(seed)) {}

  std::uint64_t NextU64() { return engine_(); }
  double Uniform() { return UnitFromBits(engine_()); }  // [0, 1)
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }
  double Normal();                                      // N(0, 1)
  double Normal(double mean, double stddev) { return mean + stddev * Normal(); }
  std::uint64_t Below(std::uint64_t n);                 // [0, n), unbiased
  bool Bernoulli(double p) { return Uniform() < p; }

  template <typename T>
  void Shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(Below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fairrank
