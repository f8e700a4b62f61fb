#pragma once

#include <cstdint>
#include <random>

namespace d3t {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Counter-based RNG handle. A key never advances; independent sub-streams are
/// obtained with child(), so results do not depend on evaluation order.
class RngKey {
public:
    constexpr RngKey() = default;
    constexpr explicit RngKey(std::uint64_t seed) : value_(splitmix64(seed)) {}

    [[nodiscard]] constexpr RngKey child(std::uint64_t index) const {
        RngKey k;
        k.value_ = splitmix64(value_ ^ splitmix64(index + 0x632be59bd9b4e019ULL));
        return k;
    }

    [[nodiscard]] std::mt19937_64 engine() const { return std::mt19937_64(value_); }
    [[nodiscard]] constexpr std::uint64_t value() const { return value_; }

    friend constexpr bool operator==(const RngKey&, const RngKey&) = default;

private:
    std::uint64_t value_ = 0;
};

}  // namespace d3t
