#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "stackvault/types.hpp"

namespace stackvault {

// Process layout. The stack grows down from kStackBase.
inline constexpr Address kTextBase = 0x0040'0000;
inline constexpr Address kTextLimit = 0x1000'0000;
inline constexpr Address kHeapBase = 0x1000'0000;
inline constexpr std::uint64_t kHeapCapacity = 256ull << 20;
inline constexpr Address kHeapLimit = kHeapBase + kHeapCapacity;
inline constexpr Address kStackBase = 0x7FFF'0000'0000;
inline constexpr std::uint64_t kStackCapacity = 1ull << 20;
inline constexpr Address kStackLimit = kStackBase - kStackCapacity;

// Saved return address / frame pointer slot at the high end of every frame.
inline constexpr std::uint64_t kFrameMetadataBytes = 16;
inline constexpr std::uint64_t kHeapAlignment = 16;

inline constexpr Region kTextRegion{kTextBase, kTextLimit - kTextBase};
inline constexpr Region kHeapRegion{kHeapBase, kHeapCapacity};
inline constexpr Region kStackRegion{kStackLimit, kStackCapacity};

class MemoryError : public std::runtime_error {
 public:
  enum class Kind { StackOverflow, EmptyStack, OutOfRegion, ReadOnly, HeapExhausted, BadSize };

  MemoryError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct StackFrame {
  FunctionId owner;
  Address base = 0;  // one past the highest byte (frame-pointer side)
  Address top = 0;   // lowest byte (stack-pointer side)

  std::uint64_t size() const { return base - top; }
  Region region() const { return {top, base - top}; }
  friend bool operator==(const StackFrame&, const StackFrame&) = default;
};

struct HeapObject {
  Address base = 0;
  std::uint64_t len = 0;

  Region region() const { return {base, len}; }
};

struct Snapshot {
  std::vector<std::pair<Address, Bytes>> regions;
};

// Sparse byte-addressable memory. Unwritten bytes read as zero. Storage is
// allocated in pages on first write.
class ProcessMemory {
 public:
  static constexpr std::uint64_t kPageSize = 4096;
  using Page = std::array<std::uint8_t, kPageSize>;

  StackFrame push_frame(FunctionId owner, std::uint64_t size);
  StackFrame pop_frame();
  const std::vector<StackFrame>& frames() const { return frames_; }

  // Bump allocation; objects are zero-filled and never reused.
  HeapObject allocate(std::uint64_t len);
  const std::vector<HeapObject>& heap_objects() const { return heap_; }

  Bytes read_bytes(Address addr, std::uint64_t len) const;
  void write_bytes(Address addr, std::span<const std::uint8_t> data);
  void clear_region(Address addr, std::uint64_t len);

  std::uint8_t read_byte(Address addr) const;
  std::uint64_t read_u64(Address addr) const;
  void write_u64(Address addr, std::uint64_t value);

  Snapshot snapshot(std::span<const Region> regions) const;
  void restore(const Snapshot& snap);

  // FNV-1a over every non-zero page in address order.
  std::uint64_t digest() const;

  // Byte-wise equality; absent pages compare equal to zero pages.
  bool same_contents(const ProcessMemory& other) const;

  // Whether [addr, addr+len) may be read / written.
  static bool readable(Address addr, std::uint64_t len);
  static bool writable(Address addr, std::uint64_t len);

 private:
  void check_access(Address addr, std::uint64_t len, bool write) const;
  void store(Address addr, std::span<const std::uint8_t> data);

  std::map<std::uint64_t, Page> pages_;
  std::vector<StackFrame> frames_;
  std::vector<HeapObject> heap_;
  Address heap_next_ = kHeapBase;
};

}  // namespace stackvault
