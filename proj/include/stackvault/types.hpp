#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace stackvault {

// Byte address in the simulated process. Kept as a plain integer because the
// runtime does a lot of offset arithmetic on it.
using Address = std::uint64_t;
using Bytes = std::vector<std::uint8_t>;

// Dense index into the identity table's span list.
struct FunctionId {
  std::uint32_t value = 0;

  friend constexpr auto operator<=>(FunctionId, FunctionId) = default;
};

// Half-open byte range [base, base + len).
struct Region {
  Address base = 0;
  std::uint64_t len = 0;

  constexpr Address end() const { return base + len; }
  constexpr bool contains(Address a) const { return a >= base && a < end(); }
  constexpr bool contains(const Region& r) const {
    return r.base >= base && r.end() <= end();
  }
  constexpr bool overlaps(const Region& r) const {
    return base < r.end() && r.base < end();
  }
  friend constexpr bool operator==(const Region&, const Region&) = default;
};

std::string hex(Address a);

}  // namespace stackvault

template <>
struct std::hash<stackvault::FunctionId> {
  std::size_t operator()(stackvault::FunctionId id) const noexcept {
    return std::hash<std::uint32_t>{}(id.value);
  }
};
