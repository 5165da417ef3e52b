#include "stackvault/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <regex>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "stackvault/executor.hpp"
#include "stackvault/fuzz.hpp"
#include "stackvault/identity.hpp"
#include "stackvault/instrumenter.hpp"
#include "stackvault/program.hpp"

namespace stackvault {

namespace fs = std::filesystem;

namespace {

// Usage and input errors; always exit code 2.
struct CliError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string program;
  std::string image_map;
  std::string untrusted_list;
  std::string sensitive_list;
  std::string list_dir;
  std::string entry = "main";
  std::string output;
  std::string out_dir;
  bool strict = false;
  std::uint64_t seed = 1;
  std::size_t cases = 1000;
  std::size_t jobs = 1;
  std::size_t depth = 3;
  bool forge = false;
  bool no_minimize = false;
};

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CliError("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_output(const Options& o, const std::string& text, std::ostream& out) {
  if (o.output.empty()) {
    out << text;
    return;
  }
  std::ofstream f(o.output, std::ios::binary);
  f << text;
  if (!f) throw CliError("cannot write " + o.output);
}

std::size_t line_of(const std::string& text, std::size_t pos) {
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

// Best-effort source line for an instrumenter problem of the form
// "fn: ... `var` ...": the variable's declaration inside the function, or the
// function's own declaration.
std::size_t locate(const std::string& text, const std::string& problem) {
  const auto colon = problem.find(':');
  if (colon == std::string::npos) return 0;
  auto find_name = [&](const std::string& name, std::size_t from) -> std::size_t {
    const std::regex re("\"name\"\\s*:\\s*\"" + std::regex_replace(name, std::regex(R"([.^$|()\[\]{}*+?\\])"), R"(\$&)") +
                        "\"");
    std::smatch m;
    auto begin = text.cbegin() + static_cast<std::ptrdiff_t>(from);
    if (std::regex_search(begin, text.cend(), m, re)) return from + static_cast<std::size_t>(m.position(0));
    return std::string::npos;
  };
  const std::size_t fn_pos = find_name(problem.substr(0, colon), 0);
  if (fn_pos == std::string::npos) return 0;
  const auto tick = problem.find('`', colon);
  if (tick != std::string::npos) {
    const auto end = problem.find('`', tick + 1);
    if (end != std::string::npos) {
      const std::size_t var_pos = find_name(problem.substr(tick + 1, end - tick - 1), fn_pos + 1);
      if (var_pos != std::string::npos) return line_of(text, var_pos);
    }
  }
  return line_of(text, fn_pos);
}

struct Scenario {
  std::string program_path;
  std::string program_text;
  Program program;  // as loaded
  std::optional<std::string> untrusted_path, sensitive_path, image_path;
  std::optional<std::string> untrusted, sensitive;
};

Scenario load(const Options& o) {
  if (o.program.empty()) throw CliError("--program is required");
  Scenario sc;
  std::string list_dir = o.list_dir;
  std::string image = o.image_map;
  if (fs::is_directory(o.program)) {
    sc.program_path = (fs::path(o.program) / "program.json").string();
    if (list_dir.empty()) list_dir = o.program;
    if (image.empty() && fs::exists(fs::path(o.program) / "image.map")) {
      image = (fs::path(o.program) / "image.map").string();
    }
  } else {
    sc.program_path = o.program;
  }
  if (!o.untrusted_list.empty()) sc.untrusted_path = o.untrusted_list;
  else if (!list_dir.empty() && fs::exists(fs::path(list_dir) / "UntrustedList"))
    sc.untrusted_path = (fs::path(list_dir) / "UntrustedList").string();
  if (!o.sensitive_list.empty()) sc.sensitive_path = o.sensitive_list;
  else if (!list_dir.empty() && fs::exists(fs::path(list_dir) / "SensitiveList"))
    sc.sensitive_path = (fs::path(list_dir) / "SensitiveList").string();
  if (!image.empty()) sc.image_path = image;

  sc.program_text = read_file(sc.program_path);
  try {
    sc.program = parse_program(sc.program_text);
  } catch (const ProgramError& e) {
    throw CliError(sc.program_path + ": " + e.what());
  }
  if (sc.untrusted_path) sc.untrusted = read_file(*sc.untrusted_path);
  if (sc.sensitive_path) sc.sensitive = read_file(*sc.sensitive_path);
  return sc;
}

struct Prepared {
  Program program;  // instrumented
  std::vector<Provenance> provenance;
  IdentityTable table;
  std::string label;
};

Prepared prepare(const Scenario& sc) {
  Prepared p;
  p.label = fs::path(sc.program_path).parent_path().filename().string();
  if (p.label.empty() || fs::path(sc.program_path).filename() != "program.json") {
    p.label = fs::path(sc.program_path).stem().string();
  }

  if (sc.program.instrumented) {
    p.program = sc.program;
  } else {
    if (!sc.untrusted) {
      std::set<std::string> unresolved;
      for (const FunctionDesc& fn : sc.program.functions) {
        for (const Statement& st : fn.body) {
          if (const auto* c = std::get_if<Call>(&st)) {
            const FunctionDesc* callee = sc.program.find(c->callee);
            if (callee && callee->external) unresolved.insert(c->callee);
          }
        }
      }
      if (!unresolved.empty()) {
        std::string names;
        for (const auto& n : unresolved) names += (names.empty() ? "" : ", ") + n;
        throw CliError("no UntrustedList given; cannot classify external callees: " + names);
      }
    }
    FunctionLists lists;
    try {
      lists = parse_lists(sc.untrusted.value_or(""), sc.sensitive.value_or(""));
    } catch (const ListError& e) {
      const std::string what = e.what();
      const bool untrusted = what.starts_with("UntrustedList");
      const auto& path = untrusted ? sc.untrusted_path : sc.sensitive_path;
      throw CliError(path.value_or("<list>") + ":" + std::to_string(e.line()) + ": " + what);
    }
    try {
      InstrumentResult r = instrument(sc.program, lists);
      p.program = std::move(r.program);
      p.provenance = std::move(r.provenance);
    } catch (const InstrumentError& e) {
      std::string msg;
      for (const std::string& problem : e.problems()) {
        if (!msg.empty()) msg += "\n";
        const std::size_t line = locate(sc.program_text, problem);
        msg += sc.program_path + (line ? ":" + std::to_string(line) : "") + ": " + problem;
      }
      throw CliError(msg);
    }
  }

  if (sc.image_path) {
    try {
      p.table = load_image_map(read_file(*sc.image_path));
    } catch (const ImageMapError& e) {
      throw CliError(*sc.image_path + ":" + std::to_string(e.line()) + ": " + e.what());
    }
    for (const std::string& name : p.program.function_names()) {
      if (!p.table.find(name)) throw CliError(*sc.image_path + ": no span for function `" + name + "`");
    }
  } else {
    p.table = synthesize_image(p.program.function_names());
  }
  return p;
}

std::string format_table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& row : rows) {
    width.resize(std::max(width.size(), row.size()), 0);
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::string out;
  for (const auto& row : rows) {
    std::string line;
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) line += "  ";
      line += row[i];
      if (i + 1 < row.size()) line += std::string(width[i] - row[i].size(), ' ');
    }
    out += line + "\n";
  }
  return out;
}

std::string format_provenance(const Prepared& p) {
  std::vector<std::vector<std::string>> rows{{"function", "subject", "source", "rule", "outcome"}};
  for (const Provenance& pr : p.provenance) {
    rows.push_back({pr.function, pr.subject, pr.source, pr.rule ? std::string(to_string(*pr.rule)) : "-",
                    pr.outcome});
  }
  std::string out = "provenance\n" + format_table(rows);
  for (const FunctionDesc& fn : p.program.functions) {
    const bool touched = std::any_of(fn.body.begin(), fn.body.end(),
                                     [](const Statement& st) { return std::holds_alternative<VaultCall>(st); });
    if (!touched) continue;
    std::string seq;
    for (const std::string& c : call_sequence(fn)) seq += (seq.empty() ? "" : "; ") + c;
    out += "call-sequence " + fn.name + ": " + seq + "\n";
  }
  return out;
}

std::string summary_line(const char* label, const ExecutionReport& r) {
  return std::string(label) + ": secret_bytes_observed=" + std::to_string(r.secret_bytes_observed) +
         " leaks=" + std::to_string(r.count(Violation::Kind::Leak)) +
         " integrity_breaches=" + std::to_string(r.count(Violation::Kind::IntegrityBreach)) +
         " vault_exceptions=" + std::to_string(r.count(Violation::Kind::VaultException)) +
         " faults=" + std::to_string(r.faults.size()) + "\n";
}

int cmd_instrument(const Options& o, std::ostream& out, std::ostream& err) {
  const Scenario sc = load(o);
  if (sc.program.instrumented) {
    throw CliError(sc.program_path + ": program is already instrumented; instrument the original description");
  }
  const Prepared p = prepare(sc);
  const std::string text = emit_program(p.program);
  if (o.output.empty()) {
    out << text;
    err << format_provenance(p);
  } else {
    write_output(o, text, out);
    out << format_provenance(p);
  }
  return kExitClean;
}

int cmd_run(const Options& o, std::ostream& out, bool native) {
  const Prepared p = prepare(load(o));
  const RunOptions ro{o.strict, 256};
  const ExecutionReport r = native ? run_native(p.program, p.table, o.entry, ro) : run(p.program, p.table, o.entry, ro);
  write_output(o, format_report(r), out);
  if (native) return kExitClean;
  return r.clean() ? kExitClean : kExitViolation;
}

int cmd_diff(const Options& o, std::ostream& out) {
  const Prepared p = prepare(load(o));
  const RunOptions ro{o.strict, 256};
  const ExecutionReport native = run_native(p.program, p.table, o.entry, ro);
  const ExecutionReport prot = run(p.program, p.table, o.entry, ro);
  std::string text = "stackvault-diff 1\n";
  text += summary_line("native", native);
  text += summary_line("protected", prot);
  text += "secret_bytes_delta " +
          std::to_string(static_cast<std::int64_t>(native.secret_bytes_observed) -
                         static_cast<std::int64_t>(prot.secret_bytes_observed)) +
          "\n";
  text += format_stats_table({{"native", native.stats}, {"protected", prot.stats}});
  write_output(o, text, out);
  return prot.clean() ? kExitClean : kExitViolation;
}

int cmd_stats(const Options& o, std::ostream& out) {
  const Prepared p = prepare(load(o));
  const ExecutionReport r = run(p.program, p.table, o.entry, RunOptions{o.strict, 256});
  std::string text = "stackvault-stats 1\n";
  text += format_stats_table({{p.label, r.stats}});
  text += format_provenance(p);
  write_output(o, text, out);
  return r.clean() ? kExitClean : kExitViolation;
}

int cmd_fuzz(const Options& o, std::ostream& out) {
  FuzzConfig cfg;
  cfg.cases = o.cases;
  cfg.jobs = o.jobs;
  cfg.max_depth = o.depth;
  cfg.forge = o.forge;
  cfg.minimize = !o.no_minimize;
  const FuzzSummary s = fuzz(o.seed, cfg);
  std::string text = format_fuzz_summary(s);
  if (!o.out_dir.empty()) {
    for (const FuzzFinding& f : s.findings) {
      const std::string dir = (fs::path(o.out_dir) / ("case-" + std::to_string(f.index))).string();
      write_case_files(f.minimized, dir);
      text += "saved case=" + std::to_string(f.index) + " " + dir + "\n";
    }
  }
  write_output(o, text, out);
  return s.findings.empty() ? kExitClean : kExitViolation;
}

void add_scenario_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--program", o.program, "Program description (JSON) or scenario directory")->required();
  cmd->add_option("--image-map", o.image_map, "Function span map; synthesized when omitted");
  cmd->add_option("--untrusted-list", o.untrusted_list, "UntrustedList file");
  cmd->add_option("--sensitive-list", o.sensitive_list, "SensitiveList file");
  cmd->add_option("--list-dir", o.list_dir, "Directory holding UntrustedList and SensitiveList");
  cmd->add_option("--output,-o", o.output, "Write the result here instead of stdout");
}

void add_run_flags(CLI::App* cmd, Options& o) {
  add_scenario_flags(cmd, o);
  cmd->add_option("--entry", o.entry, "Entry function");
  cmd->add_flag("--strict", o.strict, "Halt at the first flagged protection exception");
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Stack data protection against untrusted functions, simulated in user space", "stackvault"};
  app.require_subcommand(1);
  Options o;

  auto* instrument_cmd = app.add_subcommand("instrument", "Insert protection calls; print provenance");
  add_scenario_flags(instrument_cmd, o);
  auto* run_cmd = app.add_subcommand("run", "Execute with protection and report violations");
  add_run_flags(run_cmd, o);
  auto* native_cmd = app.add_subcommand("native", "Execute without protection");
  add_run_flags(native_cmd, o);
  auto* diff_cmd = app.add_subcommand("diff", "Compare native and protected executions");
  add_run_flags(diff_cmd, o);
  auto* stats_cmd = app.add_subcommand("stats", "Per-syscall statistics with provenance");
  add_run_flags(stats_cmd, o);
  auto* fuzz_cmd = app.add_subcommand("fuzz", "Check protection properties on generated scenarios");
  fuzz_cmd->add_option("--seed", o.seed, "Generator seed");
  fuzz_cmd->add_option("--cases", o.cases, "Number of scenarios");
  fuzz_cmd->add_option("--jobs,-j", o.jobs, "Worker threads")->check(CLI::PositiveNumber);
  fuzz_cmd->add_option("--depth", o.depth, "Maximum nesting of protection windows")->check(CLI::Range(1, 16));
  fuzz_cmd->add_flag("--forge", o.forge, "Let untrusted code issue spoofed protection calls");
  fuzz_cmd->add_flag("--no-minimize", o.no_minimize, "Keep failing cases as generated");
  fuzz_cmd->add_option("--out-dir", o.out_dir, "Save failing cases here as scenario directories");
  fuzz_cmd->add_option("--output,-o", o.output, "Write the summary here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitClean : kExitUsage;
  }

  try {
    if (instrument_cmd->parsed()) return cmd_instrument(o, out, err);
    if (run_cmd->parsed()) return cmd_run(o, out, false);
    if (native_cmd->parsed()) return cmd_run(o, out, true);
    if (diff_cmd->parsed()) return cmd_diff(o, out);
    if (stats_cmd->parsed()) return cmd_stats(o, out);
    if (fuzz_cmd->parsed()) return cmd_fuzz(o, out);
  } catch (const CliError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace stackvault
