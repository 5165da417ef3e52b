#include "stackvault/vault.hpp"

#include <algorithm>
#include <stdexcept>

namespace stackvault {

namespace {

constexpr std::array<std::string_view, kSyscallCount> kSyscallNames{
    "register_stack", "unregister_stack", "register_memory",
    "register_memory_exception", "start_protect", "stop_protect"};

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

}  // namespace

std::string_view to_string(Syscall call) { return kSyscallNames[static_cast<std::size_t>(call)]; }

std::optional<Syscall> parse_syscall(std::string_view name) {
  for (std::size_t i = 0; i < kSyscallNames.size(); ++i) {
    if (kSyscallNames[i] == name) return static_cast<Syscall>(i);
  }
  return std::nullopt;
}

std::string_view to_string(ExceptionKind kind) {
  switch (kind) {
    case ExceptionKind::IdentityMismatch: return "IdentityMismatch";
    case ExceptionKind::IndexMismatch: return "IndexMismatch";
    case ExceptionKind::RegionOutOfFrame: return "RegionOutOfFrame";
    case ExceptionKind::UnknownCaller: return "UnknownCaller";
    case ExceptionKind::EmptyProtectList: return "EmptyProtectList";
    case ExceptionKind::NoRegisteredStack: return "NoRegisteredStack";
  }
  return "?";
}

FunctionId owner_of(const RegisterEntry& entry) {
  return std::visit([](const auto& e) { return e.owner; }, entry);
}

std::uint64_t SyscallStats::total() const {
  std::uint64_t sum = 0;
  for (auto c : calls) sum += c;
  return sum;
}

std::size_t SaveBuffer::append(Address source, Bytes data) {
  produced_ += data.size();
  records_.push_back(SaveRecord{source, data.size(), std::move(data), 0});
  return records_.size() - 1;
}

Bytes SaveBuffer::consume(std::size_t index) {
  SaveRecord& rec = records_.at(index);
  if (rec.consumed()) throw std::logic_error("SaveBuffer record read twice");
  ++rec.reads;
  released_ += rec.len;
  Bytes out = std::move(rec.data);
  rec.data = Bytes{};
  return out;
}

Vault::Vault(IdentityTable identity) : identity_(std::move(identity)) {}

std::optional<VaultException> Vault::flag(ExceptionKind kind, Syscall call, Address pc,
                                          std::string detail) {
  exceptions_.push_back(VaultException{kind, call, pc, std::move(detail)});
  return exceptions_.back();
}

std::optional<std::size_t> Vault::last_stack_entry() const {
  for (std::size_t i = register_list_.size(); i-- > 0;) {
    if (std::holds_alternative<StackEntry>(register_list_[i])) return i;
  }
  return std::nullopt;
}

// Shared check for calls that must come from the owner of the last
// register_stack.
std::optional<VaultException> Vault::check_registrar(Syscall call, Address pc) {
  auto caller = identity_.resolve(pc);
  if (!caller) return flag(ExceptionKind::UnknownCaller, call, pc, "pc outside every function span");
  auto last = last_stack_entry();
  if (!last) return flag(ExceptionKind::NoRegisteredStack, call, pc, "RegisterList has no stack entry");
  const FunctionId owner = owner_of(register_list_[*last]);
  if (owner != *caller) {
    return flag(ExceptionKind::IdentityMismatch, call, pc,
                identity_.span(*caller).name + " is not " + identity_.span(owner).name);
  }
  return std::nullopt;
}

std::size_t Vault::window_start() const {
  return protect_list_.empty() ? 0 : protect_list_.back().register_index;
}

std::optional<VaultException> Vault::register_stack(Address caller_pc, bool all, Address frame_base,
                                                    Address frame_top) {
  ++stats_.calls[static_cast<std::size_t>(Syscall::RegisterStack)];
  auto caller = identity_.resolve(caller_pc);
  if (!caller) {
    return flag(ExceptionKind::UnknownCaller, Syscall::RegisterStack, caller_pc,
                "pc outside every function span");
  }
  if (frame_top >= frame_base || !kStackRegion.contains(Region{frame_top, frame_base - frame_top})) {
    return flag(ExceptionKind::RegionOutOfFrame, Syscall::RegisterStack, caller_pc,
                "invalid frame bounds [" + hex(frame_top) + ", " + hex(frame_base) + ")");
  }
  register_list_.emplace_back(StackEntry{*caller, frame_base, frame_top, all});
  return std::nullopt;
}

std::optional<VaultException> Vault::register_memory(Address caller_pc, Address base,
                                                     std::uint64_t len, bool read_only) {
  ++stats_.calls[static_cast<std::size_t>(Syscall::RegisterMemory)];
  if (auto ex = check_registrar(Syscall::RegisterMemory, caller_pc)) return ex;
  if (len == 0 || !ProcessMemory::writable(base, len)) {
    return flag(ExceptionKind::RegionOutOfFrame, Syscall::RegisterMemory, caller_pc,
                "region " + hex(base) + "+" + std::to_string(len) + " is not mapped writable memory");
  }
  const FunctionId owner = owner_of(register_list_[*last_stack_entry()]);
  register_list_.emplace_back(MemoryEntry{owner, base, len, read_only});
  return std::nullopt;
}

std::optional<VaultException> Vault::register_memory_exception(Address caller_pc, Address base,
                                                               std::uint64_t len, bool read_only) {
  ++stats_.calls[static_cast<std::size_t>(Syscall::RegisterMemoryException)];
  if (auto ex = check_registrar(Syscall::RegisterMemoryException, caller_pc)) return ex;
  const auto& stack = std::get<StackEntry>(register_list_[*last_stack_entry()]);
  const Region region{base, len};
  if (len == 0 || base + len < base || !stack.frame().contains(region)) {
    return flag(ExceptionKind::RegionOutOfFrame, Syscall::RegisterMemoryException, caller_pc,
                "region " + hex(base) + "+" + std::to_string(len) + " is outside the current frame");
  }
  register_list_.emplace_back(MemoryExceptionEntry{stack.owner, base, len, read_only});
  return std::nullopt;
}

std::optional<VaultException> Vault::start_protect(ProcessMemory& memory, Address caller_pc) {
  ++stats_.calls[static_cast<std::size_t>(Syscall::StartProtect)];
  auto caller = identity_.resolve(caller_pc);
  if (!caller) {
    return flag(ExceptionKind::UnknownCaller, Syscall::StartProtect, caller_pc,
                "pc outside every function span");
  }

  // Entries below `start` are already protected by an enclosing window.
  const std::size_t start = window_start();
  const std::size_t end = register_list_.size();
  ProtectEntry window{*caller, end, std::vector<std::optional<std::size_t>>(end - start)};

  auto save = [&](Region r) {
    stats_.bytes_copied += r.len;
    return save_buffer_.append(r.base, memory.read_bytes(r.base, r.len));
  };
  auto clear = [&](Region r) {
    stats_.bytes_cleared += r.len;
    memory.clear_region(r.base, r.len);
  };

  // Pass 1: copy everything that will be hidden or temporarily cleared.
  for (std::size_t i = start; i < end; ++i) {
    auto& slot = window.records[i - start];
    std::visit(Overloaded{
                   [&](const StackEntry& e) {
                     if (e.all) slot = save(e.frame());
                   },
                   [&](const MemoryEntry& e) { slot = save(e.region()); },
                   [&](const MemoryExceptionEntry& e) { slot = save(e.region()); },
               },
               register_list_[i]);
  }

  // Pass 2: clear, then hand exception regions back to user space.
  for (std::size_t i = start; i < end; ++i) {
    const auto& slot = window.records[i - start];
    std::visit(Overloaded{
                   [&](const StackEntry& e) {
                     if (e.all) clear(e.frame());
                   },
                   [&](const MemoryEntry& e) {
                     if (!e.read_only) clear(e.region());
                   },
                   [&](const MemoryExceptionEntry& e) {
                     Bytes data = save_buffer_.consume(*slot);
                     stats_.bytes_restored += data.size();
                     memory.write_bytes(e.base, data);
                   },
               },
               register_list_[i]);
  }

  protect_list_.push_back(std::move(window));
  return std::nullopt;
}

std::optional<VaultException> Vault::stop_protect(ProcessMemory& memory, Address caller_pc) {
  ++stats_.calls[static_cast<std::size_t>(Syscall::StopProtect)];
  auto caller = identity_.resolve(caller_pc);
  if (!caller) {
    return flag(ExceptionKind::UnknownCaller, Syscall::StopProtect, caller_pc,
                "pc outside every function span");
  }
  if (protect_list_.empty()) {
    return flag(ExceptionKind::EmptyProtectList, Syscall::StopProtect, caller_pc,
                "no active protection window");
  }
  const ProtectEntry& last = protect_list_.back();
  if (last.caller != *caller) {
    return flag(ExceptionKind::IdentityMismatch, Syscall::StopProtect, caller_pc,
                identity_.span(*caller).name + " did not start this window (" +
                    identity_.span(last.caller).name + " did)");
  }
  if (register_list_.size() != last.register_index) {
    return flag(ExceptionKind::IndexMismatch, Syscall::StopProtect, caller_pc,
                "RegisterList holds " + std::to_string(register_list_.size()) + " entries, expected " +
                    std::to_string(last.register_index));
  }

  ProtectEntry window = std::move(protect_list_.back());
  protect_list_.pop_back();
  const std::size_t start = window_start();
  const std::size_t end = register_list_.size();

  Bytes temp;  // assembles one frame before it is written back
  std::optional<StackEntry> frame;
  auto flush = [&] {
    if (!frame) return;
    stats_.bytes_restored += temp.size();
    memory.write_bytes(frame->frame_top, temp);
  };
  auto on_frame = [&](Region r) { return frame && frame->frame().contains(r); };

  if (start < end && !std::holds_alternative<StackEntry>(register_list_[start])) {
    diagnostics_.push_back("stop_protect: window range starts at a non-stack entry (index " +
                           std::to_string(start) + ")");
  }

  for (std::size_t i = start; i < end; ++i) {
    const auto& slot = window.records[i - start];
    std::visit(Overloaded{
                   [&](const StackEntry& e) {
                     flush();
                     frame = e;
                     temp = e.all ? save_buffer_.consume(*slot)
                                  : memory.read_bytes(e.frame_top, e.frame_base - e.frame_top);
                   },
                   [&](const MemoryEntry& e) {
                     Bytes data = save_buffer_.consume(*slot);
                     if (on_frame(e.region())) {
                       std::copy(data.begin(), data.end(), temp.begin() + (e.base - frame->frame_top));
                     } else {
                       stats_.bytes_restored += data.size();
                       memory.write_bytes(e.base, data);
                     }
                   },
                   [&](const MemoryExceptionEntry& e) {
                     // Read-only exception regions keep the saved frame bytes;
                     // writable ones keep whatever the callee left there.
                     if (on_frame(e.region()) && !e.read_only) {
                       Bytes current = memory.read_bytes(e.base, e.len);
                       std::copy(current.begin(), current.end(),
                                 temp.begin() + (e.base - frame->frame_top));
                     }
                   },
               },
               register_list_[i]);
  }
  flush();
  return std::nullopt;
}

std::optional<VaultException> Vault::unregister_stack(ProcessMemory& memory, Address caller_pc) {
  ++stats_.calls[static_cast<std::size_t>(Syscall::UnregisterStack)];
  if (auto ex = check_registrar(Syscall::UnregisterStack, caller_pc)) return ex;
  const std::size_t idx = *last_stack_entry();
  const Region frame = std::get<StackEntry>(register_list_[idx]).frame();
  register_list_.erase(register_list_.begin() + static_cast<std::ptrdiff_t>(idx), register_list_.end());
  stats_.bytes_cleared += frame.len;
  memory.clear_region(frame.base, frame.len);
  return std::nullopt;
}

}  // namespace stackvault
