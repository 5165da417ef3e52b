#include "stackvault/memory.hpp"

#include <algorithm>
#include <cstdio>

namespace stackvault {

std::string hex(Address a) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(a));
  return buf;
}

namespace {

bool in(const Region& r, Address addr, std::uint64_t len) {
  if (len == 0) return addr >= r.base && addr <= r.end();
  return addr >= r.base && len <= r.len && addr - r.base <= r.len - len;
}

}  // namespace

StackFrame ProcessMemory::push_frame(FunctionId owner, std::uint64_t size) {
  if (size == 0) throw MemoryError(MemoryError::Kind::BadSize, "frame size must be positive");
  const Address base = frames_.empty() ? kStackBase : frames_.back().top;
  if (size > base - kStackLimit) {
    throw MemoryError(MemoryError::Kind::StackOverflow,
                      "stack overflow pushing frame of " + std::to_string(size) + " bytes");
  }
  StackFrame frame{owner, base, base - size};
  clear_region(frame.top, size);
  frames_.push_back(frame);
  return frame;
}

StackFrame ProcessMemory::pop_frame() {
  if (frames_.empty()) throw MemoryError(MemoryError::Kind::EmptyStack, "pop on empty stack");
  StackFrame frame = frames_.back();
  frames_.pop_back();
  return frame;
}

HeapObject ProcessMemory::allocate(std::uint64_t len) {
  if (len == 0) throw MemoryError(MemoryError::Kind::BadSize, "heap allocation of zero bytes");
  const std::uint64_t rounded = (len + kHeapAlignment - 1) / kHeapAlignment * kHeapAlignment;
  if (rounded > kHeapLimit - heap_next_) {
    throw MemoryError(MemoryError::Kind::HeapExhausted, "heap exhausted");
  }
  HeapObject obj{heap_next_, len};
  heap_next_ += rounded;
  heap_.push_back(obj);
  return obj;
}

bool ProcessMemory::readable(Address addr, std::uint64_t len) {
  return in(kStackRegion, addr, len) || in(kHeapRegion, addr, len) || in(kTextRegion, addr, len);
}

bool ProcessMemory::writable(Address addr, std::uint64_t len) {
  return in(kStackRegion, addr, len) || in(kHeapRegion, addr, len);
}

void ProcessMemory::check_access(Address addr, std::uint64_t len, bool write) const {
  if (write && in(kTextRegion, addr, len) && len > 0) {
    throw MemoryError(MemoryError::Kind::ReadOnly, "write to read-only text at " + hex(addr));
  }
  if (!(write ? writable(addr, len) : readable(addr, len))) {
    throw MemoryError(MemoryError::Kind::OutOfRegion,
                      "access outside mapped regions at " + hex(addr) + " len " + std::to_string(len));
  }
}

Bytes ProcessMemory::read_bytes(Address addr, std::uint64_t len) const {
  check_access(addr, len, false);
  Bytes out(len, 0);
  std::uint64_t done = 0;
  while (done < len) {
    const Address a = addr + done;
    const std::uint64_t page = a / kPageSize;
    const std::uint64_t off = a % kPageSize;
    const std::uint64_t n = std::min(len - done, kPageSize - off);
    if (auto it = pages_.find(page); it != pages_.end()) {
      std::copy_n(it->second.begin() + off, n, out.begin() + done);
    }
    done += n;
  }
  return out;
}

std::uint8_t ProcessMemory::read_byte(Address addr) const { return read_bytes(addr, 1)[0]; }

std::uint64_t ProcessMemory::read_u64(Address addr) const {
  const Bytes b = read_bytes(addr, 8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

void ProcessMemory::write_u64(Address addr, std::uint64_t value) {
  std::array<std::uint8_t, 8> b{};
  for (auto& byte : b) {
    byte = static_cast<std::uint8_t>(value);
    value >>= 8;
  }
  write_bytes(addr, b);
}

void ProcessMemory::store(Address addr, std::span<const std::uint8_t> data) {
  std::uint64_t done = 0;
  while (done < data.size()) {
    const Address a = addr + done;
    const std::uint64_t page = a / kPageSize;
    const std::uint64_t off = a % kPageSize;
    const std::uint64_t n = std::min<std::uint64_t>(data.size() - done, kPageSize - off);
    const bool all_zero = std::all_of(data.begin() + done, data.begin() + done + n,
                                      [](std::uint8_t b) { return b == 0; });
    auto it = pages_.find(page);
    if (it == pages_.end()) {
      if (all_zero) {
        done += n;
        continue;
      }
      it = pages_.emplace(page, Page{}).first;
    }
    std::copy_n(data.begin() + done, n, it->second.begin() + off);
    done += n;
  }
}

void ProcessMemory::write_bytes(Address addr, std::span<const std::uint8_t> data) {
  check_access(addr, data.size(), true);
  store(addr, data);
}

void ProcessMemory::clear_region(Address addr, std::uint64_t len) {
  check_access(addr, len, true);
  const Bytes zeros(len, 0);
  store(addr, zeros);
}

Snapshot ProcessMemory::snapshot(std::span<const Region> regions) const {
  Snapshot snap;
  snap.regions.reserve(regions.size());
  for (const Region& r : regions) snap.regions.emplace_back(r.base, read_bytes(r.base, r.len));
  return snap;
}

void ProcessMemory::restore(const Snapshot& snap) {
  for (const auto& [addr, data] : snap.regions) write_bytes(addr, data);
}

std::uint64_t ProcessMemory::digest() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](std::uint8_t b) {
    h ^= b;
    h *= 0x100000001b3ull;
  };
  for (const auto& [page, bytes] : pages_) {
    if (std::all_of(bytes.begin(), bytes.end(), [](std::uint8_t b) { return b == 0; })) continue;
    for (int i = 0; i < 8; ++i) mix(static_cast<std::uint8_t>(page >> (8 * i)));
    for (std::uint8_t b : bytes) mix(b);
  }
  return h;
}

bool ProcessMemory::same_contents(const ProcessMemory& other) const {
  auto zero = [](const Page& p) {
    return std::all_of(p.begin(), p.end(), [](std::uint8_t b) { return b == 0; });
  };
  for (const auto& [page, bytes] : pages_) {
    auto it = other.pages_.find(page);
    if (it == other.pages_.end() ? !zero(bytes) : it->second != bytes) return false;
  }
  for (const auto& [page, bytes] : other.pages_) {
    if (!pages_.contains(page) && !zero(bytes)) return false;
  }
  return true;
}

}  // namespace stackvault
