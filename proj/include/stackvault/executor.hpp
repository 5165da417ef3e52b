#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "stackvault/identity.hpp"
#include "stackvault/memory.hpp"
#include "stackvault/program.hpp"
#include "stackvault/vault.hpp"

namespace stackvault {

inline constexpr std::string_view kReportHeader = "stackvault-report 1";

enum class RunMode : std::uint8_t { Protected, Native };

struct Observation {
  enum class Kind : std::uint8_t { Read, Write };
  Kind kind = Kind::Read;
  std::string function;
  Address address = 0;
  Bytes data;                          // bytes seen (reads) or stored (writes)
  std::optional<std::size_t> window;   // innermost protection window, if any
  std::uint64_t secret_bytes = 0;      // reads: non-zero bytes at fully-protected addresses
};

struct Violation {
  enum class Kind : std::uint8_t { Leak, IntegrityBreach, VaultException };
  Kind kind = Kind::Leak;
  std::string function;
  Address address = 0;
  std::uint64_t len = 0;
  std::optional<std::size_t> window;
  std::string detail;
};

std::string_view to_string(Violation::Kind kind);

struct Fault {
  std::string function;
  std::string message;
};

struct ExecutionReport {
  RunMode mode = RunMode::Protected;
  std::string entry;
  bool halted = false;  // stopped early: strict mode or a fatal fault
  std::vector<Violation> violations;
  std::vector<Observation> observations;
  std::vector<VaultException> exceptions;
  std::vector<Fault> faults;
  std::vector<std::string> notes;
  SyscallStats stats;
  std::uint64_t windows_opened = 0;
  std::uint64_t forged_calls = 0;
  std::uint64_t secret_bytes_observed = 0;
  std::uint64_t memory_digest = 0;

  std::size_t count(Violation::Kind kind) const;
  bool clean() const { return violations.empty() && faults.empty(); }
};

struct RunOptions {
  bool strict = false;          // halt at the first flagged exception
  std::size_t max_depth = 256;  // call depth limit
};

// Interprets a program over a ProcessMemory. With a backend, inserted
// protection calls are issued to it; without one (native mode) they are
// skipped but still tell the executor which bytes would be protected, so the
// report can show what an unprotected run exposes.
//
// Verdicts come from the executor's own snapshots and never from the backend's
// buffers.
class Executor {
 public:
  Executor(const Program& program, const IdentityTable& table, SyscallHandler* backend,
           RunOptions options = {});

  ExecutionReport run(std::string_view entry);

  const ProcessMemory& memory() const { return memory_; }
  ProcessMemory& memory() { return memory_; }

 private:
  struct Impl;
  const Program& program_;
  const IdentityTable& table_;
  SyscallHandler* backend_;
  RunOptions options_;
  ProcessMemory memory_;
};

// Runs with a fresh Vault.
ExecutionReport run(const Program& program, const IdentityTable& table, std::string_view entry,
                    RunOptions options = {});
// Runs with no protection at all.
ExecutionReport run_native(const Program& program, const IdentityTable& table, std::string_view entry,
                           RunOptions options = {});

// Versioned, line-oriented report with a fixed field order.
std::string format_report(const ExecutionReport& report);

// Per-syscall table, one row per labelled stats record.
std::string format_stats_table(const std::vector<std::pair<std::string, SyscallStats>>& rows);

}  // namespace stackvault
