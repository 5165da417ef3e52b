#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stackvault/executor.hpp"
#include "stackvault/instrumenter.hpp"
#include "stackvault/program.hpp"

namespace stackvault {

struct FuzzConfig {
  std::size_t cases = 1000;
  std::size_t max_depth = 3;           // nested protection windows
  std::uint64_t max_frame_bytes = 4096;
  std::size_t max_locals = 6;
  std::size_t max_untrusted_calls = 3; // per sensitive function
  bool probes = true;
  bool forge = false;                  // untrusted code issues spoofed protection calls
  bool minimize = true;
  std::size_t jobs = 1;
};

// One generated scenario. `program` is not instrumented.
struct FuzzCase {
  std::uint64_t seed = 0;
  std::size_t index = 0;
  Program program;
  std::string untrusted_list;
  std::string sensitive_list;
  std::string entry = "main";
};

FuzzCase generate_case(std::uint64_t seed, std::size_t index, const FuzzConfig& config);

struct CaseResult {
  ExecutionReport report;
  std::vector<std::string> problems;  // empty when every invariant held
  std::uint64_t records_produced = 0;
  std::uint64_t records_consumed_once = 0;
  std::uint64_t bytes_produced = 0;
  std::uint64_t bytes_released = 0;
};

// Instruments and runs one case under a fresh Vault and checks
// confidentiality, integrity, exception accounting and read-exactly-once.
CaseResult check_case(const FuzzCase& fc);

struct FuzzFinding {
  std::size_t index = 0;
  std::vector<std::string> problems;
  FuzzCase minimized;
};

struct FuzzSummary {
  std::uint64_t seed = 0;
  std::vector<ExecutionReport> reports;  // by case index
  std::vector<FuzzFinding> findings;
  std::uint64_t observations = 0;
  std::uint64_t windows = 0;
  std::uint64_t forged_calls = 0;
};

FuzzSummary fuzz(std::uint64_t seed, const FuzzConfig& config);

// Greedily drops statements while the case still fails.
FuzzCase minimize_case(const FuzzCase& fc);

std::string format_fuzz_summary(const FuzzSummary& summary);

// Writes program.json, UntrustedList and SensitiveList into `dir`, the layout
// the CLI accepts as a scenario directory.
void write_case_files(const FuzzCase& fc, const std::string& dir);

}  // namespace stackvault
