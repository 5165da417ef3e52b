#include "stackvault/program.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>

#include "json.hpp"

namespace stackvault {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr std::string_view kPrefix = "StackVault_";

constexpr std::array<std::pair<ApiRule, std::string_view>, 10> kRuleNames{{
    {ApiRule::UntrustedFunction, "untrusted-function"},
    {ApiRule::SensitiveFunction, "sensitive-function"},
    {ApiRule::FinegrainedFunction, "finegrained-function"},
    {ApiRule::SensitiveVar, "sensitive-var"},
    {ApiRule::NotSensitiveVar, "not-sensitive-var"},
    {ApiRule::WriteSensitiveVar, "write-sensitive-var"},
    {ApiRule::WriteSensitiveVarException, "write-sensitive-var-exception"},
    {ApiRule::SensitivePointee, "sensitive-pointee"},
    {ApiRule::WriteSensitivePointee, "write-sensitive-pointee"},
    {ApiRule::AddressArgument, "address-argument"},
}};

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw ProgramError(where + ": " + what);
}

std::string to_hex(const Bytes& data) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(data.size() * 2);
  for (std::uint8_t b : data) {
    out += kDigits[b >> 4];
    out += kDigits[b & 0xF];
  }
  return out;
}

Bytes from_hex(std::string_view text, const std::string& where) {
  std::string digits;
  for (char c : text) {
    if (c == ' ' || c == '_') continue;
    digits += c;
  }
  if (digits.size() % 2 != 0) fail(where, "odd number of hex digits");
  Bytes out(digits.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto [p, ec] = std::from_chars(digits.data() + 2 * i, digits.data() + 2 * i + 2, out[i], 16);
    if (ec != std::errc{} || p != digits.data() + 2 * i + 2) fail(where, "bad hex digit");
  }
  return out;
}

std::uint64_t parse_u64(const json& j, const std::string& where) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<std::int64_t>() >= 0) return j.get<std::uint64_t>();
  if (j.is_string()) {
    std::string s = j.get<std::string>();
    std::string_view v = s;
    int base = 10;
    if (v.starts_with("0x") || v.starts_with("0X")) {
      v.remove_prefix(2);
      base = 16;
    }
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out, base);
    if (ec == std::errc{} && p == v.data() + v.size() && !v.empty()) return out;
  }
  fail(where, "expected a non-negative integer");
}

std::int64_t parse_i64(const json& j, const std::string& where) {
  if (!j.is_number_integer()) fail(where, "expected an integer");
  return j.get<std::int64_t>();
}

bool parse_bool(const json& j, const std::string& key, bool fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_boolean()) fail(where + "." + key, "expected a boolean");
  return j[key].get<bool>();
}

std::string parse_string(const json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key) || !j[key].is_string()) fail(where, "missing string field `" + key + "`");
  return j[key].get<std::string>();
}

SizeExpr parse_size(const json& j, const std::map<std::string, std::uint64_t>& constants,
                    const std::string& where) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (!s.empty() && (std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) {
      auto it = constants.find(s);
      if (it == constants.end()) fail(where, "unknown size constant `" + s + "`");
      return SizeExpr{it->second, s};
    }
  }
  return SizeExpr{parse_u64(j, where), {}};
}

ordered_json emit_size(const SizeExpr& s) {
  if (!s.symbol.empty()) return s.symbol;
  return s.value;
}

// Literal data: {"hex": "..."} | {"text": "..."} | {"fill": b, "len": n}.
Bytes parse_data(const json& j, std::optional<std::uint64_t> default_len, const std::string& where) {
  if (j.contains("hex")) {
    if (!j["hex"].is_string()) fail(where + ".hex", "expected a string");
    return from_hex(j["hex"].get<std::string>(), where + ".hex");
  }
  if (j.contains("text")) {
    if (!j["text"].is_string()) fail(where + ".text", "expected a string");
    const std::string t = j["text"].get<std::string>();
    return Bytes(t.begin(), t.end());
  }
  if (j.contains("fill")) {
    const std::uint64_t fill = parse_u64(j["fill"], where + ".fill");
    if (fill > 0xFF) fail(where + ".fill", "fill byte out of range");
    std::uint64_t len = 0;
    if (j.contains("len")) {
      len = parse_u64(j["len"], where + ".len");
    } else if (default_len) {
      len = *default_len;
    } else {
      fail(where, "`fill` needs `len` here");
    }
    return Bytes(len, static_cast<std::uint8_t>(fill));
  }
  fail(where, "expected one of `hex`, `text`, `fill`");
}

ProbeTarget parse_target(const json& j, const std::string& where) {
  if (!j.is_object()) fail(where, "expected a target object");
  ProbeTarget t;
  auto split = [&](const std::string& qualified) {
    auto dot = qualified.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == qualified.size()) {
      fail(where, "expected `function.var`, got `" + qualified + "`");
    }
    t.function = qualified.substr(0, dot);
    t.name = qualified.substr(dot + 1);
  };
  if (j.contains("param")) {
    t.kind = ProbeTarget::Kind::Param;
    t.name = parse_string(j, "param", where);
  } else if (j.contains("var")) {
    t.kind = ProbeTarget::Kind::Var;
    split(parse_string(j, "var", where));
  } else if (j.contains("frame")) {
    t.kind = ProbeTarget::Kind::Frame;
    t.function = parse_string(j, "frame", where);
  } else if (j.contains("pointee")) {
    t.kind = ProbeTarget::Kind::Pointee;
    split(parse_string(j, "pointee", where));
  } else if (j.contains("address")) {
    t.kind = ProbeTarget::Kind::Absolute;
    t.address = parse_u64(j["address"], where + ".address");
  } else {
    fail(where, "target needs one of `param`, `var`, `frame`, `pointee`, `address`");
  }
  if (j.contains("offset")) t.offset = parse_i64(j["offset"], where + ".offset");
  return t;
}

ordered_json emit_target(const ProbeTarget& t) {
  ordered_json j;
  switch (t.kind) {
    case ProbeTarget::Kind::Param: j["param"] = t.name; break;
    case ProbeTarget::Kind::Var: j["var"] = t.function + "." + t.name; break;
    case ProbeTarget::Kind::Frame: j["frame"] = t.function; break;
    case ProbeTarget::Kind::Pointee: j["pointee"] = t.function + "." + t.name; break;
    case ProbeTarget::Kind::Absolute: j["address"] = hex(t.address); break;
  }
  if (t.offset != 0) j["offset"] = t.offset;
  return j;
}

VarDesc parse_var(const json& j, const std::map<std::string, std::uint64_t>& constants,
                  const std::string& where) {
  if (!j.is_object()) fail(where, "expected a variable object");
  VarDesc v;
  v.name = parse_string(j, "name", where);
  v.is_pointer = parse_bool(j, "pointer", false, where);
  if (j.contains("size")) {
    v.size = parse_u64(j["size"], where + ".size");
  } else if (v.is_pointer) {
    v.size = 8;
  } else {
    fail(where, "missing `size`");
  }
  if (v.size == 0) fail(where + ".size", "variables must be at least one byte");
  if (v.is_pointer && v.size != 8) fail(where + ".size", "pointers are 8 bytes");
  if (j.contains("pointee_size")) v.pointee_size = parse_u64(j["pointee_size"], where + ".pointee_size");
  if (j.contains("annotation")) {
    if (!j["annotation"].is_string()) fail(where + ".annotation", "expected a string");
    try {
      v.annotation = parse_annotation(j["annotation"].get<std::string>(), constants);
    } catch (const ProgramError& e) {
      fail(where + ".annotation", e.what());
    }
  }
  return v;
}

ordered_json emit_var(const VarDesc& v) {
  ordered_json j;
  j["name"] = v.name;
  j["size"] = v.size;
  if (v.is_pointer) j["pointer"] = true;
  if (v.pointee_size) j["pointee_size"] = *v.pointee_size;
  if (v.annotation) j["annotation"] = annotation_string(*v.annotation);
  return j;
}

Statement parse_statement(const json& j, const FunctionDesc& fn, const Program& prog,
                          const std::string& where) {
  if (!j.is_object()) fail(where, "expected a statement object");
  const std::string op = parse_string(j, "op", where);
  auto need_var = [&](const std::string& name) -> const VarDesc& {
    const VarDesc* v = fn.find_var(name);
    if (!v) fail(where, "unknown variable `" + name + "` in " + fn.name);
    return *v;
  };

  if (op == "assign") {
    Assign a;
    a.var = parse_string(j, "var", where);
    const VarDesc& v = need_var(a.var);
    a.deref = parse_bool(j, "deref", false, where);
    if (a.deref && !v.is_pointer) fail(where, "`deref` on non-pointer `" + a.var + "`");
    if (j.contains("offset")) a.offset = parse_u64(j["offset"], where + ".offset");
    std::optional<std::uint64_t> room;
    if (!a.deref && a.offset < v.size) room = v.size - a.offset;
    a.data = parse_data(j, room, where);
    if (!a.deref && a.offset + a.data.size() > v.size) {
      fail(where, "assignment overruns `" + a.var + "` (" + std::to_string(v.size) + " bytes)");
    }
    return a;
  }
  if (op == "malloc") {
    HeapAlloc h;
    h.var = parse_string(j, "var", where);
    if (!need_var(h.var).is_pointer) fail(where, "malloc into non-pointer `" + h.var + "`");
    if (!j.contains("size")) fail(where, "missing `size`");
    h.size = parse_size(j["size"], prog.constants, where + ".size");
    if (h.size.value == 0) fail(where + ".size", "allocation of zero bytes");
    return h;
  }
  if (op == "call") {
    Call c;
    c.callee = parse_string(j, "callee", where);
    if (j.contains("args")) {
      if (!j["args"].is_array()) fail(where + ".args", "expected an array");
      for (std::size_t i = 0; i < j["args"].size(); ++i) {
        const json& a = j["args"][i];
        const std::string w = where + ".args[" + std::to_string(i) + "]";
        CallArg arg;
        if (a.is_object() && a.contains("addr_of")) {
          arg.kind = CallArg::Kind::AddressOf;
          arg.var = parse_string(a, "addr_of", w);
        } else if (a.is_object() && a.contains("var")) {
          arg.var = parse_string(a, "var", w);
        } else {
          fail(w, "expected {\"var\": ...} or {\"addr_of\": ...}");
        }
        need_var(arg.var);
        c.args.push_back(std::move(arg));
      }
    }
    return c;
  }
  if (op == "read_probe") {
    if (!j.contains("target")) fail(where, "missing `target`");
    ReadProbe r{parse_target(j["target"], where + ".target"), 0};
    if (!j.contains("len")) fail(where, "missing `len`");
    r.len = parse_u64(j["len"], where + ".len");
    return r;
  }
  if (op == "write_probe") {
    if (!j.contains("target")) fail(where, "missing `target`");
    return WriteProbe{parse_target(j["target"], where + ".target"), parse_data(j, std::nullopt, where)};
  }
  if (op == "forge") {
    Forge f;
    auto call = parse_syscall(parse_string(j, "call", where));
    if (!call) fail(where + ".call", "unknown protection call");
    f.call = *call;
    if (j.contains("target")) f.target = parse_target(j["target"], where + ".target");
    if (j.contains("len")) f.len = parse_u64(j["len"], where + ".len");
    f.read_only = parse_bool(j, "read_only", false, where);
    f.all = parse_bool(j, "all", true, where);
    return f;
  }
  if (op == "vault") {
    if (!prog.instrumented) {
      fail(where, "protection calls are reserved for instrumented programs");
    }
    VaultCall v;
    auto call = parse_syscall(parse_string(j, "call", where));
    if (!call) fail(where + ".call", "unknown protection call");
    v.call = *call;
    auto rule = parse_rule(parse_string(j, "rule", where));
    if (!rule) fail(where + ".rule", "unknown rule");
    v.rule = *rule;
    if (v.call == Syscall::RegisterStack) v.all = parse_bool(j, "all", true, where);
    if (v.call == Syscall::RegisterMemory || v.call == Syscall::RegisterMemoryException) {
      if (j.contains("pointee")) {
        v.var = parse_string(j, "pointee", where);
        v.pointee = true;
      } else {
        v.var = parse_string(j, "var", where);
      }
      need_var(v.var);
      if (!j.contains("len")) fail(where, "missing `len`");
      v.len = parse_size(j["len"], prog.constants, where + ".len");
      v.read_only = parse_bool(j, "read_only", false, where);
    }
    return v;
  }
  if (op == "return") return Return{};
  fail(where, "unknown op `" + op + "`");
}

ordered_json emit_statement(const Statement& st) {
  ordered_json j;
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Assign>) {
          j["op"] = "assign";
          j["var"] = s.var;
          if (s.deref) j["deref"] = true;
          if (s.offset != 0) j["offset"] = s.offset;
          j["hex"] = to_hex(s.data);
        } else if constexpr (std::is_same_v<T, HeapAlloc>) {
          j["op"] = "malloc";
          j["var"] = s.var;
          j["size"] = emit_size(s.size);
        } else if constexpr (std::is_same_v<T, Call>) {
          j["op"] = "call";
          j["callee"] = s.callee;
          ordered_json args = ordered_json::array();
          for (const CallArg& a : s.args) {
            ordered_json aj;
            aj[a.kind == CallArg::Kind::AddressOf ? "addr_of" : "var"] = a.var;
            args.push_back(aj);
          }
          j["args"] = args;
        } else if constexpr (std::is_same_v<T, ReadProbe>) {
          j["op"] = "read_probe";
          j["target"] = emit_target(s.target);
          j["len"] = s.len;
        } else if constexpr (std::is_same_v<T, WriteProbe>) {
          j["op"] = "write_probe";
          j["target"] = emit_target(s.target);
          j["hex"] = to_hex(s.data);
        } else if constexpr (std::is_same_v<T, Forge>) {
          j["op"] = "forge";
          j["call"] = std::string(to_string(s.call));
          j["target"] = emit_target(s.target);
          j["len"] = s.len;
          j["read_only"] = s.read_only;
          j["all"] = s.all;
        } else if constexpr (std::is_same_v<T, VaultCall>) {
          j["op"] = "vault";
          j["call"] = std::string(to_string(s.call));
          if (s.call == Syscall::RegisterStack) j["all"] = s.all;
          if (s.call == Syscall::RegisterMemory || s.call == Syscall::RegisterMemoryException) {
            j[s.pointee ? "pointee" : "var"] = s.var;
            j["len"] = emit_size(s.len);
            j["read_only"] = s.read_only;
          }
          j["rule"] = std::string(to_string(s.rule));
        } else {
          j["op"] = "return";
        }
      },
      st);
  return j;
}

std::string_view sensitivity_name(Sensitivity s) {
  switch (s) {
    case Sensitivity::None: return "none";
    case Sensitivity::All: return "all";
    case Sensitivity::Finegrained: return "finegrained";
  }
  return "none";
}

std::size_t line_of_offset(std::string_view text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + offset, '\n'));
}

}  // namespace

std::string_view to_string(ApiRule rule) {
  for (const auto& [r, name] : kRuleNames) {
    if (r == rule) return name;
  }
  return "?";
}

std::optional<ApiRule> parse_rule(std::string_view name) {
  for (const auto& [r, n] : kRuleNames) {
    if (n == name) return r;
  }
  return std::nullopt;
}

std::string_view annotation_string(Annotation a) {
  switch (a) {
    case Annotation::Sensitive: return "StackVault_Sensitive";
    case Annotation::SensitiveFinegrained: return "StackVault_Sensitive_Finegrained";
    case Annotation::NotSensitive: return "StackVault_NotSensitive";
    case Annotation::WriteSensitive: return "StackVault_WriteSensitive";
    case Annotation::SensitivePointer: return "StackVault_SensitivePointer";
    case Annotation::WriteSensitivePointer: return "StackVault_WriteSensitivePointer";
  }
  return "";
}

std::string annotation_string(const VarAnnotation& a) {
  std::string out(annotation_string(a.kind));
  if (a.pointee_size) {
    out += "_";
    out += a.pointee_size->symbol.empty() ? std::to_string(a.pointee_size->value) : a.pointee_size->symbol;
  }
  return out;
}

VarAnnotation parse_annotation(std::string_view text, const std::map<std::string, std::uint64_t>& constants) {
  const std::string original(text);
  if (!text.starts_with(kPrefix)) throw ProgramError("unknown annotation `" + original + "`");
  text.remove_prefix(kPrefix.size());

  // Longest names first so "SensitivePointer" is not read as "Sensitive".
  static constexpr std::array<std::pair<std::string_view, Annotation>, 6> kNames{{
      {"Sensitive_Finegrained", Annotation::SensitiveFinegrained},
      {"WriteSensitivePointer", Annotation::WriteSensitivePointer},
      {"SensitivePointer", Annotation::SensitivePointer},
      {"WriteSensitive", Annotation::WriteSensitive},
      {"NotSensitive", Annotation::NotSensitive},
      {"Sensitive", Annotation::Sensitive},
  }};
  for (const auto& [name, kind] : kNames) {
    if (!text.starts_with(name)) continue;
    std::string_view rest = text.substr(name.size());
    VarAnnotation out{kind, std::nullopt};
    if (rest.empty()) return out;
    const bool pointer = kind == Annotation::SensitivePointer || kind == Annotation::WriteSensitivePointer;
    if (!pointer || rest.size() < 2 || rest[0] != '_') {
      throw ProgramError("unknown annotation `" + original + "`");
    }
    rest.remove_prefix(1);
    std::uint64_t n = 0;
    auto [p, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), n);
    if (ec == std::errc{} && p == rest.data() + rest.size()) {
      out.pointee_size = SizeExpr{n, {}};
    } else {
      const std::string sym(rest);
      auto it = constants.find(sym);
      // Unknown symbols are kept; the instrumenter reports them as unresolvable.
      out.pointee_size = SizeExpr{it == constants.end() ? 0 : it->second, sym};
    }
    return out;
  }
  throw ProgramError("unknown annotation `" + original + "`");
}

const VarDesc* FunctionDesc::find_var(std::string_view var) const {
  for (const auto* list : {&params, &locals}) {
    for (const VarDesc& v : *list) {
      if (v.name == var) return &v;
    }
  }
  return nullptr;
}

std::vector<const VarDesc*> FunctionDesc::vars() const {
  std::vector<const VarDesc*> out;
  for (const VarDesc& v : params) out.push_back(&v);
  for (const VarDesc& v : locals) out.push_back(&v);
  return out;
}

const FunctionDesc* Program::find(std::string_view name) const {
  for (const FunctionDesc& f : functions) {
    if (f.name == name) return &f;
  }
  return nullptr;
}

std::vector<std::string> Program::function_names() const {
  std::vector<std::string> out;
  for (const FunctionDesc& f : functions) out.push_back(f.name);
  return out;
}

Program parse_program(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ProgramError("line " + std::to_string(line_of_offset(text, e.byte)) + ": " + e.what());
  }
  if (!doc.is_object()) fail("document", "expected a JSON object");
  if (doc.contains("format") && doc["format"] != std::string(kProgramFormat)) {
    fail("format", "unsupported format " + doc["format"].dump());
  }

  Program prog;
  prog.instrumented = parse_bool(doc, "instrumented", false, "document");
  if (doc.contains("constants")) {
    if (!doc["constants"].is_object()) fail("constants", "expected an object");
    for (const auto& [k, v] : doc["constants"].items()) prog.constants[k] = parse_u64(v, "constants." + k);
  }
  if (!doc.contains("functions") || !doc["functions"].is_array()) fail("document", "missing `functions` array");

  const json& fns = doc["functions"];
  for (std::size_t i = 0; i < fns.size(); ++i) {
    const json& fj = fns[i];
    const std::string where = "functions[" + std::to_string(i) + "]";
    if (!fj.is_object()) fail(where, "expected a function object");
    FunctionDesc fn;
    fn.name = parse_string(fj, "name", where);
    if (prog.find(fn.name)) fail(where, "duplicate function `" + fn.name + "`");
    fn.external = parse_bool(fj, "external", false, where);
    if (fj.contains("annotation")) {
      VarAnnotation a;
      try {
        a = parse_annotation(parse_string(fj, "annotation", where), prog.constants);
      } catch (const ProgramError& e) {
        fail(where + ".annotation", e.what());
      }
      if (a.kind != Annotation::Sensitive && a.kind != Annotation::SensitiveFinegrained) {
        fail(where + ".annotation", "only StackVault_Sensitive or StackVault_Sensitive_Finegrained apply to functions");
      }
      fn.annotation = a.kind;
    }
    if (fj.contains("sensitivity")) {
      const std::string s = parse_string(fj, "sensitivity", where);
      if (s == "all") fn.sensitivity = Sensitivity::All;
      else if (s == "finegrained") fn.sensitivity = Sensitivity::Finegrained;
      else if (s != "none") fail(where + ".sensitivity", "expected all, finegrained or none");
    }
    if (fj.contains("trust")) {
      const std::string t = parse_string(fj, "trust", where);
      if (t == "untrusted") fn.trust = Trust::Untrusted;
      else if (t != "trusted") fail(where + ".trust", "expected trusted or untrusted");
    }
    for (const char* key : {"params", "locals"}) {
      if (!fj.contains(key)) continue;
      if (!fj[key].is_array()) fail(where + "." + key, "expected an array");
      auto& list = std::string_view(key) == "params" ? fn.params : fn.locals;
      for (std::size_t k = 0; k < fj[key].size(); ++k) {
        const std::string w = where + "." + key + "[" + std::to_string(k) + "]";
        VarDesc v = parse_var(fj[key][k], prog.constants, w);
        if (fn.find_var(v.name)) fail(w, "duplicate variable `" + v.name + "`");
        list.push_back(std::move(v));
      }
    }
    if (fj.contains("body")) {
      if (!fj["body"].is_array()) fail(where + ".body", "expected an array");
      const json& body = fj["body"];
      for (std::size_t k = 0; k < body.size(); ++k) {
        const std::string w = where + ".body[" + std::to_string(k) + "]";
        Statement st = parse_statement(body[k], fn, prog, w);
        if (std::holds_alternative<Return>(st) && k + 1 != body.size()) {
          fail(w, "`return` must be the last statement");
        }
        fn.body.push_back(std::move(st));
      }
    }
    prog.functions.push_back(std::move(fn));
  }
  return prog;
}

std::string emit_program(const Program& program) {
  ordered_json doc;
  doc["format"] = std::string(kProgramFormat);
  doc["instrumented"] = program.instrumented;
  ordered_json constants = ordered_json::object();
  for (const auto& [k, v] : program.constants) constants[k] = v;
  doc["constants"] = constants;
  ordered_json fns = ordered_json::array();
  for (const FunctionDesc& fn : program.functions) {
    ordered_json fj;
    fj["name"] = fn.name;
    if (fn.annotation) fj["annotation"] = std::string(annotation_string(*fn.annotation));
    if (fn.external) fj["external"] = true;
    if (program.instrumented || fn.sensitivity != Sensitivity::None) {
      fj["sensitivity"] = std::string(sensitivity_name(fn.sensitivity));
    }
    if (program.instrumented || fn.trust != Trust::Trusted) {
      fj["trust"] = fn.trust == Trust::Untrusted ? "untrusted" : "trusted";
    }
    ordered_json params = ordered_json::array();
    for (const VarDesc& v : fn.params) params.push_back(emit_var(v));
    fj["params"] = params;
    ordered_json locals = ordered_json::array();
    for (const VarDesc& v : fn.locals) locals.push_back(emit_var(v));
    fj["locals"] = locals;
    ordered_json body = ordered_json::array();
    for (const Statement& st : fn.body) body.push_back(emit_statement(st));
    fj["body"] = body;
    fns.push_back(fj);
  }
  doc["functions"] = fns;
  return doc.dump(2) + "\n";
}

std::uint64_t FrameLayout::offset_of(std::string_view var) const {
  auto it = offsets.find(var);
  if (it == offsets.end()) throw ProgramError("no variable `" + std::string(var) + "` in frame");
  return it->second;
}

FrameLayout frame_layout(const FunctionDesc& fn) {
  FrameLayout layout;
  std::uint64_t used = 0;
  for (const VarDesc* v : fn.vars()) used += v->size;
  layout.size = used + kFrameMetadataBytes;
  std::uint64_t below_metadata = 0;
  for (const VarDesc* v : fn.vars()) {
    below_metadata += v->size;
    layout.offsets.emplace(v->name, layout.size - kFrameMetadataBytes - below_metadata);
  }
  return layout;
}

namespace {

std::string size_text(const SizeExpr& s) {
  return s.symbol.empty() ? std::to_string(s.value) : s.symbol;
}

std::string target_text(const ProbeTarget& t) {
  std::string base;
  switch (t.kind) {
    case ProbeTarget::Kind::Param: base = t.name; break;
    case ProbeTarget::Kind::Var: base = "&" + t.function + "::" + t.name; break;
    case ProbeTarget::Kind::Frame: base = "frame(" + t.function + ")"; break;
    case ProbeTarget::Kind::Pointee: base = t.function + "::" + t.name; break;
    case ProbeTarget::Kind::Absolute: base = hex(t.address); break;
  }
  if (t.offset > 0) base += " + " + std::to_string(t.offset);
  if (t.offset < 0) base += " - " + std::to_string(-t.offset);
  return base;
}

std::string_view py_bool(bool b) { return b ? "True" : "False"; }

}  // namespace

std::string render_statement(const Statement& st) {
  return std::visit(
      [](const auto& s) -> std::string {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Assign>) {
          std::string lhs = s.deref ? "*" + s.var : s.var;
          if (s.offset) lhs += "[" + std::to_string(s.offset) + "..]";
          return lhs + " = <" + std::to_string(s.data.size()) + " bytes>;";
        } else if constexpr (std::is_same_v<T, HeapAlloc>) {
          return s.var + " = malloc(" + size_text(s.size) + ");";
        } else if constexpr (std::is_same_v<T, Call>) {
          std::string out = s.callee + "(";
          for (std::size_t i = 0; i < s.args.size(); ++i) {
            if (i) out += ", ";
            if (s.args[i].kind == CallArg::Kind::AddressOf) out += "&";
            out += s.args[i].var;
          }
          return out + ");";
        } else if constexpr (std::is_same_v<T, ReadProbe>) {
          return "read_probe(" + target_text(s.target) + ", " + std::to_string(s.len) + ");";
        } else if constexpr (std::is_same_v<T, WriteProbe>) {
          return "write_probe(" + target_text(s.target) + ", <" + std::to_string(s.data.size()) + " bytes>);";
        } else if constexpr (std::is_same_v<T, Forge>) {
          return "forged " + std::string(to_string(s.call)) + "(" + target_text(s.target) + ", " +
                 std::to_string(s.len) + ");";
        } else if constexpr (std::is_same_v<T, VaultCall>) {
          std::string out(to_string(s.call));
          switch (s.call) {
            case Syscall::RegisterStack:
              out += "(all=" + std::string(py_bool(s.all)) + ")";
              break;
            case Syscall::RegisterMemory:
            case Syscall::RegisterMemoryException:
              out += "(" + (s.pointee ? s.var : "&" + s.var) + ", " + size_text(s.len) + ", " +
                     std::string(py_bool(s.read_only)) + ")";
              break;
            default:
              out += "()";
          }
          return out + ";";
        } else {
          return "return;";
        }
      },
      st);
}

std::vector<std::string> render_function(const FunctionDesc& fn) {
  std::vector<std::string> out;
  std::string head;
  if (fn.annotation) head += "__attribute((annotate(\"" + std::string(annotation_string(*fn.annotation)) + "\"))) ";
  head += fn.name + "(";
  for (std::size_t i = 0; i < fn.params.size(); ++i) {
    if (i) head += ", ";
    head += fn.params[i].name;
  }
  out.push_back(head + ") {");
  for (const VarDesc* v : fn.vars()) {
    std::string line = "  ";
    if (v->annotation) line += "__attribute((annotate(\"" + annotation_string(*v->annotation) + "\"))) ";
    line += (v->is_pointer ? "char *" : "char ") + v->name;
    if (!v->is_pointer) line += "[" + std::to_string(v->size) + "]";
    out.push_back(line + ";");
  }
  for (const Statement& st : fn.body) out.push_back("  " + render_statement(st));
  out.push_back("}");
  return out;
}

std::vector<std::string> call_sequence(const FunctionDesc& fn) {
  std::vector<std::string> out;
  for (const Statement& st : fn.body) {
    if (std::holds_alternative<VaultCall>(st) || std::holds_alternative<Call>(st)) {
      std::string s = render_statement(st);
      s.pop_back();  // trailing ';'
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace stackvault
