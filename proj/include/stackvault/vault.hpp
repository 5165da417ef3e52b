#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "stackvault/identity.hpp"
#include "stackvault/memory.hpp"
#include "stackvault/types.hpp"

namespace stackvault {

enum class Syscall : std::uint8_t {
  RegisterStack,
  UnregisterStack,
  RegisterMemory,
  RegisterMemoryException,
  StartProtect,
  StopProtect,
};
inline constexpr std::size_t kSyscallCount = 6;
inline constexpr std::array<Syscall, kSyscallCount> kAllSyscalls{
    Syscall::RegisterStack,  Syscall::UnregisterStack, Syscall::RegisterMemory,
    Syscall::RegisterMemoryException, Syscall::StartProtect, Syscall::StopProtect};

std::string_view to_string(Syscall call);
std::optional<Syscall> parse_syscall(std::string_view name);

struct StackEntry {
  FunctionId owner;
  Address frame_base = 0;
  Address frame_top = 0;
  bool all = false;

  Region frame() const { return {frame_top, frame_base - frame_top}; }
};

struct MemoryEntry {
  FunctionId owner;
  Address base = 0;
  std::uint64_t len = 0;
  bool read_only = false;

  Region region() const { return {base, len}; }
};

struct MemoryExceptionEntry {
  FunctionId owner;
  Address base = 0;
  std::uint64_t len = 0;
  bool read_only = false;

  Region region() const { return {base, len}; }
};

using RegisterEntry = std::variant<StackEntry, MemoryEntry, MemoryExceptionEntry>;

FunctionId owner_of(const RegisterEntry& entry);

struct ProtectEntry {
  FunctionId caller;
  std::size_t register_index = 0;  // first free RegisterList slot at start_protect
  // SaveBuffer record produced for each RegisterList entry in this window's
  // range, in range order. Kernel-private bookkeeping.
  std::vector<std::optional<std::size_t>> records;
};

struct SaveRecord {
  Address source = 0;
  std::uint64_t len = 0;
  Bytes data;
  unsigned reads = 0;

  bool consumed() const { return reads > 0; }
};

// Append-only store. Each record is read back exactly once, and its storage is
// released on that read.
class SaveBuffer {
 public:
  std::size_t append(Address source, Bytes data);
  // Returns the saved bytes and releases them. Throws std::logic_error on a
  // second read.
  Bytes consume(std::size_t index);

  const std::vector<SaveRecord>& records() const { return records_; }
  std::uint64_t bytes_produced() const { return produced_; }
  std::uint64_t bytes_released() const { return released_; }
  std::uint64_t bytes_held() const { return produced_ - released_; }

 private:
  std::vector<SaveRecord> records_;
  std::uint64_t produced_ = 0;
  std::uint64_t released_ = 0;
};

enum class ExceptionKind : std::uint8_t {
  IdentityMismatch,
  IndexMismatch,
  RegionOutOfFrame,
  UnknownCaller,
  EmptyProtectList,
  NoRegisteredStack,
};

std::string_view to_string(ExceptionKind kind);

struct VaultException {
  ExceptionKind kind;
  Syscall syscall;
  Address caller_pc = 0;
  std::string detail;
};

struct SyscallStats {
  std::array<std::uint64_t, kSyscallCount> calls{};
  std::uint64_t bytes_copied = 0;    // into the SaveBuffer
  std::uint64_t bytes_cleared = 0;   // zeroed in user memory
  std::uint64_t bytes_restored = 0;  // written back from kernel buffers

  std::uint64_t count(Syscall s) const { return calls[static_cast<std::size_t>(s)]; }
  std::uint64_t total() const;
  std::uint64_t copied_and_cleared() const { return bytes_copied + bytes_cleared; }
  friend bool operator==(const SyscallStats&, const SyscallStats&) = default;
};

// The six-call protection interface as seen from user code. Every call
// carries the issuing program counter. A call returns the exception it
// flagged, if any; flagged calls do not touch memory.
class SyscallHandler {
 public:
  virtual ~SyscallHandler() = default;

  virtual std::optional<VaultException> register_stack(Address caller_pc, bool all, Address frame_base,
                                                       Address frame_top) = 0;
  virtual std::optional<VaultException> register_memory(Address caller_pc, Address base,
                                                        std::uint64_t len, bool read_only) = 0;
  virtual std::optional<VaultException> register_memory_exception(Address caller_pc, Address base,
                                                                  std::uint64_t len,
                                                                  bool read_only) = 0;
  virtual std::optional<VaultException> start_protect(ProcessMemory& memory, Address caller_pc) = 0;
  virtual std::optional<VaultException> stop_protect(ProcessMemory& memory, Address caller_pc) = 0;
  virtual std::optional<VaultException> unregister_stack(ProcessMemory& memory, Address caller_pc) = 0;

  virtual const std::vector<VaultException>& exceptions() const = 0;
  virtual SyscallStats stats() const = 0;
};

// Kernel-side protection state: identity table, RegisterList, ProtectList and
// SaveBuffer. Mutated only through the six syscalls.
class Vault final : public SyscallHandler {
 public:
  explicit Vault(IdentityTable identity);

  std::optional<VaultException> register_stack(Address caller_pc, bool all, Address frame_base,
                                               Address frame_top) override;
  std::optional<VaultException> register_memory(Address caller_pc, Address base, std::uint64_t len,
                                                bool read_only) override;
  std::optional<VaultException> register_memory_exception(Address caller_pc, Address base,
                                                          std::uint64_t len, bool read_only) override;
  std::optional<VaultException> start_protect(ProcessMemory& memory, Address caller_pc) override;
  std::optional<VaultException> stop_protect(ProcessMemory& memory, Address caller_pc) override;
  std::optional<VaultException> unregister_stack(ProcessMemory& memory, Address caller_pc) override;

  const std::vector<VaultException>& exceptions() const override { return exceptions_; }
  SyscallStats stats() const override { return stats_; }

  const IdentityTable& identity() const { return identity_; }
  const std::vector<RegisterEntry>& register_list() const { return register_list_; }
  const std::vector<ProtectEntry>& protect_list() const { return protect_list_; }
  const SaveBuffer& save_buffer() const { return save_buffer_; }

  // Non-fatal oddities, e.g. a window range that does not begin with a
  // StackEntry.
  const std::vector<std::string>& diagnostics() const { return diagnostics_; }

 private:
  std::optional<VaultException> flag(ExceptionKind kind, Syscall call, Address pc, std::string detail);
  std::optional<std::size_t> last_stack_entry() const;
  std::optional<VaultException> check_registrar(Syscall call, Address pc);
  std::size_t window_start() const;

  IdentityTable identity_;
  std::vector<RegisterEntry> register_list_;
  std::vector<ProtectEntry> protect_list_;
  SaveBuffer save_buffer_;
  std::vector<VaultException> exceptions_;
  std::vector<std::string> diagnostics_;
  SyscallStats stats_;
};

}  // namespace stackvault
