#include "stackvault/executor.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <unordered_set>

namespace stackvault {

namespace {

struct Halt {};  // unwinds the interpreter

struct ShadowEntry {
  enum class Kind : std::uint8_t { Stack, Memory, Exception };
  Kind kind;
  Region region;
  bool all = false;        // Stack
  bool read_only = false;  // Memory / Exception
};

struct ShadowWindow {
  std::size_t id = 0;
  std::size_t start = 0;           // first shadow entry this window protects
  std::size_t register_index = 0;  // shadow size at start_protect
  std::vector<Region> hidden;      // fully-protected bytes while the window is open
  std::map<Address, std::uint8_t> before;  // range bytes just before start_protect
  std::unordered_set<Address> untrusted_writes;
};

struct Frame {
  const FunctionDesc* fn = nullptr;
  FunctionId id;
  StackFrame frame;
  FrameLayout layout;
  std::map<std::string, HeapObject> pointees;  // ground truth, independent of memory
};

std::vector<Region> subtract(const std::vector<Region>& from, const std::vector<Region>& holes) {
  std::vector<Region> out = from;
  for (const Region& h : holes) {
    std::vector<Region> next;
    for (const Region& r : out) {
      if (!r.overlaps(h)) {
        next.push_back(r);
        continue;
      }
      if (r.base < h.base) next.push_back({r.base, h.base - r.base});
      if (h.end() < r.end()) next.push_back({h.end(), r.end() - h.end()});
    }
    out = std::move(next);
  }
  return out;
}

bool covered(const std::vector<Region>& regions, Address a) {
  return std::any_of(regions.begin(), regions.end(), [a](const Region& r) { return r.contains(a); });
}

}  // namespace

std::string_view to_string(Violation::Kind kind) {
  switch (kind) {
    case Violation::Kind::Leak: return "Leak";
    case Violation::Kind::IntegrityBreach: return "IntegrityBreach";
    case Violation::Kind::VaultException: return "VaultException";
  }
  return "?";
}

std::size_t ExecutionReport::count(Violation::Kind kind) const {
  return static_cast<std::size_t>(
      std::count_if(violations.begin(), violations.end(), [kind](const Violation& v) { return v.kind == kind; }));
}

struct Executor::Impl {
  Executor& ex;
  ExecutionReport report;
  std::vector<Frame> stack;
  std::vector<ShadowEntry> shadow;
  std::vector<ShadowWindow> windows;
  std::size_t next_window = 1;
  std::size_t exceptions_seen = 0;

  explicit Impl(Executor& e) : ex(e) {}

  bool native() const { return ex.backend_ == nullptr; }
  ProcessMemory& mem() { return ex.memory_; }

  Address pc_of(const Frame& f, std::size_t stmt) const {
    const FunctionSpan& span = ex.table_.span(f.id);
    return span.lo + std::min<std::uint64_t>(stmt, span.hi - span.lo - 1);
  }

  Address var_address(const Frame& f, std::string_view var) const {
    return f.frame.top + f.layout.offset_of(var);
  }

  [[noreturn]] void fatal(const std::string& fn, const std::string& msg) {
    report.faults.push_back(Fault{fn, msg});
    report.halted = true;
    throw Halt{};
  }

  void fault(const std::string& fn, const std::string& msg) { report.faults.push_back(Fault{fn, msg}); }

  // Records exceptions flagged since the last check; halts in strict mode.
  void collect_exceptions(const std::string& fn) {
    if (native()) return;
    const auto& all = ex.backend_->exceptions();
    for (; exceptions_seen < all.size(); ++exceptions_seen) {
      const VaultException& e = all[exceptions_seen];
      report.violations.push_back(Violation{Violation::Kind::VaultException, fn, e.caller_pc, 0,
                                            windows.empty() ? std::nullopt : std::optional(windows.back().id),
                                            std::string(to_string(e.kind)) + " in " +
                                                std::string(to_string(e.syscall)) + ": " + e.detail});
      if (ex.options_.strict) {
        report.halted = true;
        throw Halt{};
      }
    }
  }

  std::vector<Region> hidden_now() const {
    std::vector<Region> full;
    std::vector<Region> holes;
    for (const ShadowEntry& e : shadow) {
      switch (e.kind) {
        case ShadowEntry::Kind::Stack:
          if (e.all) full.push_back(e.region);
          break;
        case ShadowEntry::Kind::Memory:
          if (!e.read_only) full.push_back(e.region);
          break;
        case ShadowEntry::Kind::Exception:
          holes.push_back(e.region);
          break;
      }
    }
    return subtract(full, holes);
  }

  bool inside_whole_frame(std::size_t from, std::size_t to, const Region& r) const {
    for (std::size_t i = from; i < to; ++i) {
      const ShadowEntry& e = shadow[i];
      if (e.kind == ShadowEntry::Kind::Stack && e.all && e.region.contains(r)) return true;
    }
    return false;
  }

  void open_window() {
    ShadowWindow w;
    w.id = next_window++;
    w.start = windows.empty() ? 0 : windows.back().register_index;
    w.register_index = shadow.size();
    w.hidden = hidden_now();
    for (std::size_t i = w.start; i < w.register_index; ++i) {
      const ShadowEntry& e = shadow[i];
      if (e.kind == ShadowEntry::Kind::Stack && !e.all) continue;
      const Bytes bytes = mem().read_bytes(e.region.base, e.region.len);
      for (std::uint64_t k = 0; k < bytes.size(); ++k) w.before[e.region.base + k] = bytes[k];
    }
    windows.push_back(std::move(w));
    ++report.windows_opened;
  }

  // Expected bytes after the innermost window closes, given the exception
  // region contents just before the close.
  std::map<Address, std::uint8_t> expected_after_close(const ShadowWindow& w,
                                                       const std::map<Address, std::uint8_t>& pre_close) const {
    std::map<Address, std::uint8_t> expect;
    for (std::size_t i = w.start; i < w.register_index; ++i) {
      const ShadowEntry& e = shadow[i];
      const bool restored = (e.kind == ShadowEntry::Kind::Stack && e.all) || e.kind == ShadowEntry::Kind::Memory;
      if (!restored) continue;
      for (Address a = e.region.base; a < e.region.end(); ++a) expect[a] = w.before.at(a);
    }
    for (std::size_t i = w.start; i < w.register_index; ++i) {
      const ShadowEntry& e = shadow[i];
      if (e.kind != ShadowEntry::Kind::Exception) continue;
      if (e.read_only && inside_whole_frame(w.start, w.register_index, e.region)) continue;
      for (Address a = e.region.base; a < e.region.end(); ++a) expect[a] = pre_close.at(a);
    }
    return expect;
  }

  std::map<Address, std::uint8_t> exception_bytes(const ShadowWindow& w) {
    std::map<Address, std::uint8_t> out;
    for (std::size_t i = w.start; i < w.register_index; ++i) {
      const ShadowEntry& e = shadow[i];
      if (e.kind != ShadowEntry::Kind::Exception) continue;
      const Bytes bytes = mem().read_bytes(e.region.base, e.region.len);
      for (std::uint64_t k = 0; k < bytes.size(); ++k) out[e.region.base + k] = bytes[k];
    }
    return out;
  }

  void close_window(const std::string& fn, const std::map<Address, std::uint8_t>& pre_close) {
    ShadowWindow w = std::move(windows.back());
    windows.pop_back();
    const auto expect = expected_after_close(w, pre_close);
    // Group mismatching bytes into contiguous runs.
    std::optional<Violation> run;
    auto flush = [&] {
      if (run) report.violations.push_back(*run);
      run.reset();
    };
    for (const auto& [addr, want] : expect) {
      const std::uint8_t got = mem().read_byte(addr);
      if (got == want) {
        flush();
        continue;
      }
      if (run && run->address + run->len == addr) {
        ++run->len;
      } else {
        flush();
        run = Violation{Violation::Kind::IntegrityBreach, fn, addr, 1, w.id,
                        "protected bytes differ from their saved values after stop_protect"};
      }
    }
    flush();
  }

  void drop_stack_entry() {
    for (std::size_t i = shadow.size(); i-- > 0;) {
      if (shadow[i].kind == ShadowEntry::Kind::Stack) {
        shadow.erase(shadow.begin() + static_cast<std::ptrdiff_t>(i), shadow.end());
        return;
      }
    }
  }

  Region vault_region(const Frame& f, const VaultCall& c) {
    const Address slot = var_address(f, c.var);
    const Address base = c.pointee ? mem().read_u64(slot) : slot;
    return {base, c.len.value};
  }

  void issue(Frame& f, std::size_t stmt, const VaultCall& c) {
    const Address pc = pc_of(f, stmt);
    const std::string& fn = f.fn->name;
    std::optional<VaultException> ex_result;
    try {
      switch (c.call) {
        case Syscall::RegisterStack:
          if (!native()) ex_result = ex.backend_->register_stack(pc, c.all, f.frame.base, f.frame.top);
          if (!ex_result) shadow.push_back({ShadowEntry::Kind::Stack, f.frame.region(), c.all, false});
          break;
        case Syscall::RegisterMemory:
        case Syscall::RegisterMemoryException: {
          const Region r = vault_region(f, c);
          const bool exception = c.call == Syscall::RegisterMemoryException;
          if (!native()) {
            ex_result = exception ? ex.backend_->register_memory_exception(pc, r.base, r.len, c.read_only)
                                  : ex.backend_->register_memory(pc, r.base, r.len, c.read_only);
          }
          if (!ex_result) {
            shadow.push_back({exception ? ShadowEntry::Kind::Exception : ShadowEntry::Kind::Memory, r, false,
                              c.read_only});
          }
          break;
        }
        case Syscall::StartProtect: {
          // Snapshot first: verdicts must not depend on the backend.
          const std::size_t before = windows.size();
          open_window();
          if (!native()) ex_result = ex.backend_->start_protect(mem(), pc);
          if (ex_result) windows.resize(before);
          break;
        }
        case Syscall::StopProtect: {
          if (windows.empty()) {
            if (!native()) ex_result = ex.backend_->stop_protect(mem(), pc);
            break;
          }
          const auto pre_close = exception_bytes(windows.back());
          if (!native()) ex_result = ex.backend_->stop_protect(mem(), pc);
          if (!ex_result) close_window(fn, pre_close);
          break;
        }
        case Syscall::UnregisterStack:
          if (!native()) ex_result = ex.backend_->unregister_stack(mem(), pc);
          if (!ex_result) drop_stack_entry();
          break;
      }
    } catch (const MemoryError& e) {
      fatal(fn, std::string(to_string(c.call)) + ": " + e.what());
    }
    collect_exceptions(fn);
  }

  std::optional<Address> resolve_target(const Frame& f, const ProbeTarget& t) {
    auto newest = [&](const std::string& name) -> const Frame* {
      for (auto it = stack.rbegin(); it != stack.rend(); ++it) {
        if (it->fn->name == name) return &*it;
      }
      return nullptr;
    };
    auto with_offset = [&](Address a) { return static_cast<Address>(static_cast<std::int64_t>(a) + t.offset); };
    switch (t.kind) {
      case ProbeTarget::Kind::Param: {
        const VarDesc* v = f.fn->find_var(t.name);
        if (!v || !v->is_pointer) {
          fault(f.fn->name, "probe target `" + t.name + "` is not a pointer parameter");
          return std::nullopt;
        }
        return with_offset(mem().read_u64(var_address(f, t.name)));
      }
      case ProbeTarget::Kind::Var:
      case ProbeTarget::Kind::Frame:
      case ProbeTarget::Kind::Pointee: {
        const Frame* owner = newest(t.function);
        if (!owner) {
          fault(f.fn->name, "probe target: no live frame of `" + t.function + "`");
          return std::nullopt;
        }
        if (t.kind == ProbeTarget::Kind::Frame) return with_offset(owner->frame.top);
        if (t.kind == ProbeTarget::Kind::Var) {
          if (!owner->fn->find_var(t.name)) {
            fault(f.fn->name, "probe target: `" + t.function + "` has no variable `" + t.name + "`");
            return std::nullopt;
          }
          return with_offset(var_address(*owner, t.name));
        }
        auto it = owner->pointees.find(t.name);
        if (it == owner->pointees.end()) {
          fault(f.fn->name, "probe target: `" + t.function + "." + t.name + "` points nowhere yet");
          return std::nullopt;
        }
        return with_offset(it->second.base);
      }
      case ProbeTarget::Kind::Absolute:
        return with_offset(t.address);
    }
    return std::nullopt;
  }

  std::optional<std::size_t> window_id() const {
    return windows.empty() ? std::nullopt : std::optional(windows.back().id);
  }

  bool written_by_untrusted(Address a) const {
    return std::any_of(windows.begin(), windows.end(),
                       [a](const ShadowWindow& w) { return w.untrusted_writes.contains(a); });
  }

  void read_probe(Frame& f, const ReadProbe& p) {
    auto addr = resolve_target(f, p.target);
    if (!addr) return;
    if (!ProcessMemory::readable(*addr, p.len)) {
      fault(f.fn->name, "read probe outside mapped memory at " + hex(*addr));
      return;
    }
    Observation obs{Observation::Kind::Read, f.fn->name, *addr, mem().read_bytes(*addr, p.len), window_id(), 0};
    if (!windows.empty()) {
      const auto& hidden = windows.back().hidden;
      for (std::uint64_t i = 0; i < obs.data.size(); ++i) {
        const Address a = *addr + i;
        if (obs.data[i] != 0 && covered(hidden, a) && !written_by_untrusted(a)) ++obs.secret_bytes;
      }
    }
    if (obs.secret_bytes > 0) {
      report.violations.push_back(Violation{Violation::Kind::Leak, f.fn->name, *addr, obs.secret_bytes,
                                            obs.window, "untrusted read observed protected bytes"});
      report.secret_bytes_observed += obs.secret_bytes;
    }
    report.observations.push_back(std::move(obs));
  }

  void write_probe(Frame& f, const WriteProbe& p) {
    auto addr = resolve_target(f, p.target);
    if (!addr) return;
    if (!ProcessMemory::writable(*addr, p.data.size())) {
      fault(f.fn->name, "write probe outside writable memory at " + hex(*addr));
      return;
    }
    mem().write_bytes(*addr, p.data);
    for (std::uint64_t i = 0; i < p.data.size(); ++i) {
      for (ShadowWindow& w : windows) w.untrusted_writes.insert(*addr + i);
    }
    report.observations.push_back(
        Observation{Observation::Kind::Write, f.fn->name, *addr, p.data, window_id(), 0});
  }

  void forge(Frame& f, std::size_t stmt, const Forge& g) {
    ++report.forged_calls;
    if (native()) return;
    const Address pc = pc_of(f, stmt);
    Address base = 0;
    if (g.call == Syscall::RegisterMemory || g.call == Syscall::RegisterMemoryException) {
      auto addr = resolve_target(f, g.target);
      if (!addr) return;
      base = *addr;
    }
    try {
      switch (g.call) {
        case Syscall::RegisterStack: ex.backend_->register_stack(pc, g.all, f.frame.base, f.frame.top); break;
        case Syscall::RegisterMemory: ex.backend_->register_memory(pc, base, g.len, g.read_only); break;
        case Syscall::RegisterMemoryException:
          ex.backend_->register_memory_exception(pc, base, g.len, g.read_only);
          break;
        case Syscall::StartProtect: ex.backend_->start_protect(mem(), pc); break;
        case Syscall::StopProtect: ex.backend_->stop_protect(mem(), pc); break;
        case Syscall::UnregisterStack: ex.backend_->unregister_stack(mem(), pc); break;
      }
    } catch (const MemoryError& e) {
      fatal(f.fn->name, std::string("forged ") + std::string(to_string(g.call)) + ": " + e.what());
    }
    collect_exceptions(f.fn->name);
  }

  void assign(Frame& f, const Assign& a) {
    Address addr = var_address(f, a.var);
    if (a.deref) addr = mem().read_u64(addr);
    addr += a.offset;
    if (!ProcessMemory::writable(addr, a.data.size())) {
      fault(f.fn->name, "assignment through `" + a.var + "` outside writable memory");
      return;
    }
    mem().write_bytes(addr, a.data);
  }

  void heap_alloc(Frame& f, const HeapAlloc& h) {
    HeapObject obj;
    try {
      obj = mem().allocate(h.size.value);
    } catch (const MemoryError& e) {
      fatal(f.fn->name, e.what());
    }
    mem().write_u64(var_address(f, h.var), obj.base);
    f.pointees[h.var] = obj;
  }

  void call(std::size_t caller_index, const Call& c, std::optional<std::size_t> pending_start) {
    Frame& caller = stack[caller_index];
    const FunctionDesc* callee = ex.program_.find(c.callee);
    if (!callee) fatal(caller.fn->name, "call to unknown function `" + c.callee + "`");
    if (callee->params.size() != c.args.size()) {
      fatal(caller.fn->name, "`" + c.callee + "` called with the wrong number of arguments");
    }
    auto id = ex.table_.find(callee->name);
    if (!id) fatal(caller.fn->name, "no identity span for `" + callee->name + "`");
    if (stack.size() >= ex.options_.max_depth) fatal(caller.fn->name, "call depth limit reached");
    if (caller.fn->trust == Trust::Untrusted && callee->sensitivity != Sensitivity::None) {
      report.notes.push_back("untrusted " + caller.fn->name + " calls sensitive " + callee->name);
    }

    // Arguments are evaluated in the caller before the callee frame exists.
    std::vector<Bytes> values;
    for (std::size_t i = 0; i < c.args.size(); ++i) {
      const CallArg& a = c.args[i];
      const Address slot = var_address(caller, a.var);
      Bytes v;
      if (a.kind == CallArg::Kind::AddressOf) {
        v.resize(8);
        for (int k = 0; k < 8; ++k) v[k] = static_cast<std::uint8_t>(slot >> (8 * k));
      } else {
        v = mem().read_bytes(slot, caller.fn->find_var(a.var)->size);
      }
      v.resize(callee->params[i].size, 0);
      values.push_back(std::move(v));
    }

    Frame frame;
    frame.fn = callee;
    frame.id = *id;
    frame.layout = frame_layout(*callee);
    try {
      frame.frame = mem().push_frame(*id, frame.layout.size);
    } catch (const MemoryError& e) {
      fatal(caller.fn->name, e.what());
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      mem().write_bytes(frame.frame.top + frame.layout.offset_of(callee->params[i].name), values[i]);
    }
    // start_protect runs once the callee frame is set up, right before the jump.
    if (pending_start) {
      issue(stack[caller_index], *pending_start,
            std::get<VaultCall>(stack[caller_index].fn->body[*pending_start]));
    }
    stack.push_back(std::move(frame));
    execute_body(stack.size() - 1);
    stack.pop_back();
    mem().pop_frame();
  }

  void execute_body(std::size_t index) {
    const FunctionDesc& fn = *stack[index].fn;
    for (std::size_t i = 0; i < fn.body.size(); ++i) {
      const Statement& st = fn.body[i];
      if (const auto* v = std::get_if<VaultCall>(&st)) {
        const bool fused = v->call == Syscall::StartProtect && i + 1 < fn.body.size() &&
                           std::holds_alternative<Call>(fn.body[i + 1]);
        if (fused) {
          call(index, std::get<Call>(fn.body[i + 1]), i);
          ++i;
        } else {
          issue(stack[index], i, *v);
        }
        continue;
      }
      if (std::holds_alternative<Return>(st)) return;
      std::visit(
          [&](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, Assign>) assign(stack[index], s);
            else if constexpr (std::is_same_v<T, HeapAlloc>) heap_alloc(stack[index], s);
            else if constexpr (std::is_same_v<T, Call>) call(index, s, std::nullopt);
            else if constexpr (std::is_same_v<T, ReadProbe>) read_probe(stack[index], s);
            else if constexpr (std::is_same_v<T, WriteProbe>) write_probe(stack[index], s);
            else if constexpr (std::is_same_v<T, Forge>) forge(stack[index], i, s);
          },
          st);
    }
  }

  void run(std::string_view entry) {
    report.entry = std::string(entry);
    report.mode = native() ? RunMode::Native : RunMode::Protected;
    const FunctionDesc* fn = ex.program_.find(entry);
    try {
      if (!fn) fatal(std::string(entry), "entry function not found");
      if (!fn->params.empty()) fatal(fn->name, "entry function must take no parameters");
      auto id = ex.table_.find(fn->name);
      if (!id) fatal(fn->name, "no identity span for entry function");
      Frame frame;
      frame.fn = fn;
      frame.id = *id;
      frame.layout = frame_layout(*fn);
      try {
        frame.frame = mem().push_frame(*id, frame.layout.size);
      } catch (const MemoryError& e) {
        fatal(fn->name, e.what());
      }
      stack.push_back(std::move(frame));
      execute_body(0);
      stack.pop_back();
      mem().pop_frame();
    } catch (const Halt&) {
    }
    if (!native()) {
      report.stats = ex.backend_->stats();
      report.exceptions = ex.backend_->exceptions();
    }
    report.memory_digest = mem().digest();
  }
};

Executor::Executor(const Program& program, const IdentityTable& table, SyscallHandler* backend,
                   RunOptions options)
    : program_(program), table_(table), backend_(backend), options_(options) {}

ExecutionReport Executor::run(std::string_view entry) {
  Impl impl(*this);
  impl.run(entry);
  return std::move(impl.report);
}

ExecutionReport run(const Program& program, const IdentityTable& table, std::string_view entry,
                    RunOptions options) {
  Vault vault(table);
  Executor exec(program, table, &vault, options);
  return exec.run(entry);
}

ExecutionReport run_native(const Program& program, const IdentityTable& table, std::string_view entry,
                           RunOptions options) {
  Executor exec(program, table, nullptr, options);
  return exec.run(entry);
}

namespace {

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

std::string window_text(std::optional<std::size_t> w) { return w ? std::to_string(*w) : "-"; }

std::string stats_line(const SyscallStats& s) {
  std::string out;
  for (Syscall c : kAllSyscalls) out += std::string(to_string(c)) + "=" + std::to_string(s.count(c)) + " ";
  out += "total=" + std::to_string(s.total());
  out += " bytes_copied=" + std::to_string(s.bytes_copied);
  out += " bytes_cleared=" + std::to_string(s.bytes_cleared);
  out += " bytes_restored=" + std::to_string(s.bytes_restored);
  return out;
}

}  // namespace

std::string format_report(const ExecutionReport& r) {
  std::ostringstream out;
  out << kReportHeader << "\n";
  out << "mode " << (r.mode == RunMode::Protected ? "protected" : "native") << "\n";
  out << "entry " << r.entry << "\n";
  out << "halted " << (r.halted ? "true" : "false") << "\n";
  out << "stats " << stats_line(r.stats) << "\n";
  out << "windows_opened " << r.windows_opened << "\n";
  out << "forged_calls " << r.forged_calls << "\n";
  out << "secret_bytes_observed " << r.secret_bytes_observed << "\n";
  out << "leaks " << r.count(Violation::Kind::Leak) << "\n";
  out << "integrity_breaches " << r.count(Violation::Kind::IntegrityBreach) << "\n";
  out << "vault_exceptions " << r.count(Violation::Kind::VaultException) << "\n";
  out << "faults " << r.faults.size() << "\n";
  out << "memory_digest " << hex(r.memory_digest) << "\n";
  for (const Violation& v : r.violations) {
    out << "violation kind=" << to_string(v.kind) << " function=" << v.function << " address=" << hex(v.address)
        << " len=" << v.len << " window=" << window_text(v.window) << " detail=" << quoted(v.detail) << "\n";
  }
  for (const Observation& o : r.observations) {
    out << "observation kind=" << (o.kind == Observation::Kind::Read ? "read" : "write")
        << " function=" << o.function << " address=" << hex(o.address) << " len=" << o.data.size()
        << " window=" << window_text(o.window) << " secret_bytes=" << o.secret_bytes << "\n";
  }
  for (const Fault& f : r.faults) out << "fault function=" << f.function << " message=" << quoted(f.message) << "\n";
  for (const std::string& n : r.notes) out << "note " << quoted(n) << "\n";
  return out.str();
}

std::string format_stats_table(const std::vector<std::pair<std::string, SyscallStats>>& rows) {
  std::vector<std::string> headers{""};
  for (Syscall c : kAllSyscalls) headers.emplace_back(to_string(c));
  headers.insert(headers.end(), {"Total", "bytes_copied", "bytes_cleared", "copied_and_cleared"});

  std::vector<std::vector<std::string>> cells{headers};
  for (const auto& [label, s] : rows) {
    std::vector<std::string> row{label};
    for (Syscall c : kAllSyscalls) row.push_back(std::to_string(s.count(c)));
    row.push_back(std::to_string(s.total()));
    row.push_back(std::to_string(s.bytes_copied));
    row.push_back(std::to_string(s.bytes_cleared));
    row.push_back(std::to_string(s.copied_and_cleared()));
    cells.push_back(std::move(row));
  }
  std::vector<std::size_t> width(headers.size(), 0);
  for (const auto& row : cells) {
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::string out;
  for (const auto& row : cells) {
    std::string line;
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) line += "  ";
      const std::string& cell = row[i];
      if (i == 0) line += cell + std::string(width[i] - cell.size(), ' ');
      else line += std::string(width[i] - cell.size(), ' ') + cell;
    }
    out += line + "\n";
  }
  return out;
}

}  // namespace stackvault
