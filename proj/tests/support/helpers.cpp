#include "helpers.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "reference_vault.hpp"

namespace svtest {

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string scenario_dir(const std::string& name) { return std::string(SV_SCENARIO_DIR) + "/" + name; }

Scenario load_scenario(const std::string& name) {
  const std::filesystem::path dir = scenario_dir(name);
  auto optional_text = [&](const char* file) {
    return std::filesystem::exists(dir / file) ? read_text((dir / file).string()) : std::string();
  };
  Scenario s;
  s.source = parse_program(read_text((dir / "program.json").string()));
  s.lists = parse_lists(optional_text("UntrustedList"), optional_text("SensitiveList"));
  s.table = std::filesystem::exists(dir / "image.map") ? load_image_map(optional_text("image.map"))
                                                       : synthesize_image(s.source.function_names());
  return s;
}

InstrumentResult instrument_json(const std::string& json, const std::string& untrusted,
                                 const std::string& sensitive) {
  return instrument(parse_program(json), parse_lists(untrusted, sensitive));
}

const FunctionDesc& function(const Program& p, const std::string& name) {
  const FunctionDesc* fn = p.find(name);
  if (!fn) throw std::runtime_error("no function " + name);
  return *fn;
}

std::vector<VaultCall> vault_calls(const FunctionDesc& fn) {
  std::vector<VaultCall> out;
  for (const Statement& st : fn.body) {
    if (const auto* v = std::get_if<VaultCall>(&st)) out.push_back(*v);
  }
  return out;
}

Differential compare_with_reference(const FuzzCase& fc) {
  Differential d;
  const InstrumentResult ir = instrument(fc.program, parse_lists(fc.untrusted_list, fc.sensitive_list));
  const IdentityTable table = synthesize_image(ir.program.function_names());

  Vault vault(table);
  RecordingHandler vault_rec(vault);
  Executor real(ir.program, table, &vault_rec);
  const ExecutionReport a = real.run(fc.entry);

  ReferenceVault oracle(table);
  RecordingHandler oracle_rec(oracle);
  Executor ref(ir.program, table, &oracle_rec);
  const ExecutionReport b = ref.run(fc.entry);

  d.stops = vault_rec.after_stop.size();
  if (vault_rec.after_stop.size() != oracle_rec.after_stop.size()) {
    d.mismatches.push_back("stop_protect count " + std::to_string(vault_rec.after_stop.size()) + " vs " +
                           std::to_string(oracle_rec.after_stop.size()));
  } else {
    for (std::size_t i = 0; i < vault_rec.after_stop.size(); ++i) {
      if (!vault_rec.after_stop[i].same_contents(oracle_rec.after_stop[i])) {
        d.mismatches.push_back("memory differs after stop_protect #" + std::to_string(i + 1));
      }
    }
  }
  if (!real.memory().same_contents(ref.memory())) d.mismatches.push_back("final memory differs");
  if (a.observations.size() != b.observations.size()) {
    d.mismatches.push_back("observation count differs");
  } else {
    for (std::size_t i = 0; i < a.observations.size(); ++i) {
      if (a.observations[i].data != b.observations[i].data) {
        d.mismatches.push_back("observation #" + std::to_string(i) + " differs");
      }
    }
  }
  if (a.exceptions.size() != b.exceptions.size()) d.mismatches.push_back("exception count differs");
  return d;
}

}  // namespace svtest
