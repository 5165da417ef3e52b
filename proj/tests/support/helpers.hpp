#pragma once

#include <string>
#include <vector>

#include "stackvault/executor.hpp"
#include "stackvault/fuzz.hpp"
#include "stackvault/identity.hpp"
#include "stackvault/instrumenter.hpp"
#include "stackvault/program.hpp"

namespace svtest {

using namespace stackvault;

std::string read_text(const std::string& path);
std::string scenario_dir(const std::string& name);

struct Scenario {
  Program source;
  FunctionLists lists;
  IdentityTable table;  // from image.map when present, else synthesized
};
Scenario load_scenario(const std::string& name);

// Parses an uninstrumented program and instruments it.
InstrumentResult instrument_json(const std::string& json, const std::string& untrusted = "",
                                 const std::string& sensitive = "");

const FunctionDesc& function(const Program& p, const std::string& name);
std::vector<VaultCall> vault_calls(const FunctionDesc& fn);

// Runs one case under the Vault and under the snapshot/restore oracle and
// lists every disagreement: memory after each stop_protect, final memory,
// observations and exception counts.
struct Differential {
  std::vector<std::string> mismatches;
  std::size_t stops = 0;
};
Differential compare_with_reference(const FuzzCase& fc);

}  // namespace svtest
