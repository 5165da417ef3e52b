#include "stackvault/instrumenter.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <sstream>

namespace stackvault {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r;");
  return std::string(s.substr(b, e - b + 1));
}

bool valid_identifier(std::string_view s) {
  if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
  return std::all_of(s.begin(), s.end(),
                     [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; });
}

template <class OnEntry>
void for_each_entry(std::string_view list, std::string_view doc, OnEntry&& on_entry) {
  std::istringstream in{std::string(doc)};
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    Prototype p;
    if (auto open = line.find('('); open != std::string::npos) {
      if (line.back() != ')') throw ListError(list, lineno, "expected `name(arity)`");
      p.name = trim(line.substr(0, open));
      const std::string arity = trim(line.substr(open + 1, line.size() - open - 2));
      std::size_t n = 0;
      auto [ptr, ec] = std::from_chars(arity.data(), arity.data() + arity.size(), n);
      if (arity.empty() || ec != std::errc{} || ptr != arity.data() + arity.size()) {
        throw ListError(list, lineno, "arity must be a non-negative integer");
      }
      p.arity = n;
    } else {
      p.name = line;
    }
    if (!valid_identifier(p.name)) throw ListError(list, lineno, "bad function name `" + p.name + "`");
    on_entry(lineno, std::move(p));
  }
}

// Per-function rewriting state.
class FunctionRewriter {
 public:
  FunctionRewriter(const Program& prog, const FunctionLists& lists, FunctionDesc& fn,
                   std::vector<Provenance>& provenance, std::vector<std::string>& problems)
      : prog_(prog), lists_(lists), fn_(fn), provenance_(provenance), problems_(problems) {}

  void run();

 private:
  bool all() const { return fn_.sensitivity == Sensitivity::All; }
  bool sensitive() const { return fn_.sensitivity != Sensitivity::None; }
  bool untrusted_callee(const Call& c) const;
  std::optional<SizeExpr> pointee_size(const VarDesc& v);

  VaultCall memory_call(const VarDesc& v, bool exception, bool read_only, ApiRule rule) const;
  VaultCall pointee_call(const VarDesc& v, const SizeExpr& size) const;
  void note(const std::string& subject, const std::string& source, std::optional<ApiRule> rule,
            const std::string& outcome) {
    provenance_.push_back(Provenance{fn_.name, subject, source, rule, outcome});
  }
  void problem(const std::string& what) { problems_.push_back(fn_.name + ": " + what); }

  const Program& prog_;
  const FunctionLists& lists_;
  FunctionDesc& fn_;
  std::vector<Provenance>& provenance_;
  std::vector<std::string>& problems_;

  std::map<std::string, SizeExpr> pointee_sizes_;
  std::map<std::string, VaultCall> deferred_exceptions_;  // by variable
};

bool FunctionRewriter::untrusted_callee(const Call& c) const {
  const FunctionDesc* callee = prog_.find(c.callee);
  return callee && lists_.is_untrusted(callee->name, callee->params.size());
}

std::optional<SizeExpr> FunctionRewriter::pointee_size(const VarDesc& v) {
  const auto& suffix = v.annotation->pointee_size;
  if (suffix) {
    if (!suffix->symbol.empty() && !prog_.constants.contains(suffix->symbol)) {
      problem("unresolvable pointee size `" + suffix->symbol + "` for `" + v.name + "`");
      return std::nullopt;
    }
    if (suffix->value == 0) {
      problem("pointee size of `" + v.name + "` must be positive");
      return std::nullopt;
    }
    return suffix;
  }
  if (v.pointee_size && *v.pointee_size > 0) return SizeExpr{*v.pointee_size, {}};
  problem("unresolvable pointee size for `" + v.name + "`: add a _x suffix or a pointee_size");
  return std::nullopt;
}

VaultCall FunctionRewriter::memory_call(const VarDesc& v, bool exception, bool read_only,
                                        ApiRule rule) const {
  VaultCall c;
  c.call = exception ? Syscall::RegisterMemoryException : Syscall::RegisterMemory;
  c.var = v.name;
  c.len = SizeExpr{v.size, {}};
  c.read_only = read_only;
  c.rule = rule;
  return c;
}

VaultCall FunctionRewriter::pointee_call(const VarDesc& v, const SizeExpr& size) const {
  VaultCall c;
  c.call = Syscall::RegisterMemory;
  c.var = v.name;
  c.pointee = true;
  c.len = size;
  c.read_only = v.annotation->kind == Annotation::WriteSensitivePointer;
  c.rule = c.read_only ? ApiRule::WriteSensitivePointee : ApiRule::SensitivePointee;
  return c;
}

void FunctionRewriter::run() {
  // Placement checks apply to every function compiled here.
  for (const VarDesc* v : fn_.vars()) {
    if (!v->annotation) continue;
    const Annotation kind = v->annotation->kind;
    if (!sensitive()) {
      problem("annotation on `" + v->name + "` in a function that is not sensitive");
      continue;
    }
    if (kind == Annotation::SensitiveFinegrained) {
      problem("StackVault_Sensitive_Finegrained applies to functions, not to `" + v->name + "`");
    }
    const bool pointer_annotation =
        kind == Annotation::SensitivePointer || kind == Annotation::WriteSensitivePointer;
    if (pointer_annotation && !v->is_pointer) {
      problem("pointer annotation on non-pointer `" + v->name + "`");
    }
    if (!pointer_annotation && v->annotation->pointee_size) {
      problem("size suffix on non-pointer annotation of `" + v->name + "`");
    }
    if (pointer_annotation && v->is_pointer) {
      if (auto size = pointee_size(*v)) pointee_sizes_[v->name] = *size;
    }
  }

  // Locals whose address reaches an untrusted callee become NotSensitive.
  std::set<std::string> escaping;
  for (const Statement& st : fn_.body) {
    if (const auto* call = std::get_if<Call>(&st); call && untrusted_callee(*call)) {
      for (const CallArg& a : call->args) {
        if (a.kind == CallArg::Kind::AddressOf) escaping.insert(a.var);
      }
    }
  }

  std::vector<Statement> prologue;
  if (sensitive()) {
    VaultCall rs;
    rs.call = Syscall::RegisterStack;
    rs.all = all();
    rs.rule = all() ? ApiRule::SensitiveFunction : ApiRule::FinegrainedFunction;
    prologue.emplace_back(rs);
    note(fn_.name, fn_.annotation ? std::string(annotation_string(*fn_.annotation)) : "SensitiveList",
         rs.rule, render_statement(rs) + " ... unregister_stack();");

    for (const VarDesc* v : fn_.vars()) {
      const std::string source = v->annotation ? annotation_string(*v->annotation) : "address argument";
      if (escaping.contains(v->name)) {
        if (v->annotation && v->annotation->kind != Annotation::NotSensitive) {
          note(v->name, source, std::nullopt, "overridden: address passed to an untrusted callee");
        }
        if (all()) {
          const bool annotated = v->annotation && v->annotation->kind == Annotation::NotSensitive;
          deferred_exceptions_[v->name] =
              memory_call(*v, true, false, annotated ? ApiRule::NotSensitiveVar : ApiRule::AddressArgument);
        } else {
          note(v->name, source, std::nullopt, "no call: frame is not protected when all=False");
        }
      } else if (v->annotation) {
        std::optional<VaultCall> call;
        std::string skipped;
        switch (v->annotation->kind) {
          case Annotation::Sensitive:
          case Annotation::SensitivePointer:
            if (all()) skipped = "no call: whole frame already protected (only when all=False)";
            else call = memory_call(*v, false, false, ApiRule::SensitiveVar);
            break;
          case Annotation::NotSensitive:
            if (all()) call = memory_call(*v, true, false, ApiRule::NotSensitiveVar);
            else skipped = "no call: frame is not protected (only when all=True)";
            break;
          case Annotation::WriteSensitive:
          case Annotation::WriteSensitivePointer:
            call = all() ? memory_call(*v, true, true, ApiRule::WriteSensitiveVarException)
                         : memory_call(*v, false, true, ApiRule::WriteSensitiveVar);
            break;
          case Annotation::SensitiveFinegrained:
            break;
        }
        if (call) {
          prologue.emplace_back(*call);
          note(v->name, source, call->rule, render_statement(*call));
        } else if (!skipped.empty()) {
          note(v->name, source, std::nullopt, skipped);
        }
      }
    }
    // Pointer parameters already hold their pointee's address at entry.
    for (const VarDesc& p : fn_.params) {
      if (auto it = pointee_sizes_.find(p.name); it != pointee_sizes_.end()) {
        VaultCall c = pointee_call(p, it->second);
        prologue.emplace_back(c);
        note(p.name, annotation_string(*p.annotation), c.rule, render_statement(c));
      }
    }
  }

  std::vector<Statement> body = std::move(prologue);
  bool returned = false;
  for (Statement& st : fn_.body) {
    if (std::holds_alternative<VaultCall>(st)) {
      problem("already instrumented: protection calls are reserved names");
      return;
    }
    if (auto* call = std::get_if<Call>(&st); call && untrusted_callee(*call)) {
      for (const CallArg& a : call->args) {
        if (a.kind != CallArg::Kind::AddressOf) continue;
        if (auto it = deferred_exceptions_.find(a.var); it != deferred_exceptions_.end()) {
          body.emplace_back(it->second);
          note(a.var, "address argument of " + call->callee, it->second.rule, render_statement(it->second));
          deferred_exceptions_.erase(it);
        }
      }
      VaultCall start;
      start.call = Syscall::StartProtect;
      VaultCall stop;
      stop.call = Syscall::StopProtect;
      note(call->callee, "UntrustedList", ApiRule::UntrustedFunction,
           "start_protect(); " + render_statement(*call) + " stop_protect();");
      body.emplace_back(start);
      body.emplace_back(std::move(st));
      body.emplace_back(stop);
      continue;
    }
    if (std::holds_alternative<Return>(st) && sensitive()) {
      VaultCall un;
      un.call = Syscall::UnregisterStack;
      un.rule = all() ? ApiRule::SensitiveFunction : ApiRule::FinegrainedFunction;
      body.emplace_back(un);
      body.emplace_back(std::move(st));
      returned = true;
      continue;
    }
    const HeapAlloc* alloc = std::get_if<HeapAlloc>(&st);
    std::optional<VaultCall> after;
    if (alloc && sensitive()) {
      if (auto it = pointee_sizes_.find(alloc->var); it != pointee_sizes_.end()) {
        const VarDesc& v = *fn_.find_var(alloc->var);
        after = pointee_call(v, it->second);
        note(v.name, annotation_string(*v.annotation), after->rule, render_statement(*after));
      }
    }
    body.emplace_back(std::move(st));
    if (after) body.emplace_back(*after);
  }
  if (sensitive() && !returned) {
    VaultCall un;
    un.call = Syscall::UnregisterStack;
    un.rule = all() ? ApiRule::SensitiveFunction : ApiRule::FinegrainedFunction;
    body.emplace_back(un);
  }
  fn_.body = std::move(body);
}

}  // namespace

bool FunctionLists::is_untrusted(std::string_view fn, std::size_t params) const {
  return std::any_of(untrusted.begin(), untrusted.end(),
                     [&](const Prototype& p) { return p.matches(fn, params); });
}

FunctionLists parse_lists(std::string_view untrusted_doc, std::string_view sensitive_doc) {
  FunctionLists lists;
  for_each_entry("UntrustedList", untrusted_doc,
                 [&](std::size_t, Prototype p) { lists.untrusted.push_back(std::move(p)); });
  for_each_entry("SensitiveList", sensitive_doc, [&](std::size_t line, Prototype p) {
    if (std::any_of(lists.untrusted.begin(), lists.untrusted.end(),
                    [&](const Prototype& u) { return u.name == p.name; })) {
      throw ListError("SensitiveList", line,
                      "`" + p.name + "` is also untrusted; a function cannot be both sensitive and untrusted");
    }
    lists.sensitive.insert(p.name);
  });
  return lists;
}

namespace {

std::string join(const std::vector<std::string>& items, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

}  // namespace

InstrumentError::InstrumentError(std::vector<std::string> problems)
    : std::runtime_error(join(problems, "\n")), problems_(std::move(problems)) {}

InstrumentResult instrument(const Program& program, const FunctionLists& lists) {
  if (program.instrumented) {
    throw InstrumentError({"program is already instrumented; refusing to insert protection calls twice"});
  }
  InstrumentResult result{program, {}};
  Program& out = result.program;
  out.instrumented = true;
  std::vector<std::string> problems;

  for (FunctionDesc& fn : out.functions) {
    fn.trust = lists.is_untrusted(fn.name, fn.params.size()) ? Trust::Untrusted : Trust::Trusted;
    if (fn.annotation) {
      fn.sensitivity = *fn.annotation == Annotation::SensitiveFinegrained ? Sensitivity::Finegrained
                                                                         : Sensitivity::All;
    } else if (lists.sensitive.contains(fn.name)) {
      fn.sensitivity = Sensitivity::All;
    } else {
      fn.sensitivity = Sensitivity::None;
    }
    if (fn.trust == Trust::Untrusted && fn.sensitivity != Sensitivity::None) {
      problems.push_back(fn.name + ": a function cannot be both sensitive and untrusted");
    }
    for (const Statement& st : fn.body) {
      const bool adversarial = std::holds_alternative<ReadProbe>(st) || std::holds_alternative<WriteProbe>(st) ||
                               std::holds_alternative<Forge>(st);
      if (adversarial && fn.trust != Trust::Untrusted) {
        problems.push_back(fn.name + ": probe statements are only allowed in untrusted functions");
        break;
      }
    }
    for (const Statement& st : fn.body) {
      const auto* call = std::get_if<Call>(&st);
      if (!call) continue;
      const FunctionDesc* callee = program.find(call->callee);
      if (!callee) {
        problems.push_back(fn.name + ": call to undescribed function `" + call->callee + "`");
      } else if (callee->params.size() != call->args.size()) {
        problems.push_back(fn.name + ": `" + call->callee + "` takes " + std::to_string(callee->params.size()) +
                           " arguments, " + std::to_string(call->args.size()) + " given");
      }
    }
  }
  if (!problems.empty()) throw InstrumentError(std::move(problems));

  for (FunctionDesc& fn : out.functions) {
    // Third-party code is not compiled here.
    if (fn.trust == Trust::Untrusted || fn.external) {
      for (const VarDesc* v : fn.vars()) {
        if (v->annotation) problems.push_back(fn.name + ": annotation on `" + v->name + "` in library code");
      }
      continue;
    }
    FunctionRewriter(out, lists, fn, result.provenance, problems).run();
  }
  if (!problems.empty()) throw InstrumentError(std::move(problems));
  return result;
}

}  // namespace stackvault
