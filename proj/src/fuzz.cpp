#include "stackvault/fuzz.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

namespace stackvault {

namespace {

class Gen {
 public:
  Gen(std::uint64_t seed, std::size_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    rng_.seed(seq);
  }

  std::uint64_t uniform(std::uint64_t lo, std::uint64_t hi) {
    return std::uniform_int_distribution<std::uint64_t>(lo, hi)(rng_);
  }
  bool coin(double p) { return std::bernoulli_distribution(p)(rng_); }
  template <class T>
  const T& pick(const std::vector<T>& v) {
    return v[uniform(0, v.size() - 1)];
  }
  Bytes secret(std::uint64_t len) {
    Bytes b(len);
    for (auto& x : b) x = static_cast<std::uint8_t>(uniform(1, 255));
    return b;
  }

 private:
  std::mt19937_64 rng_;
};

struct SensitiveShape {
  std::string name;
  std::vector<std::string> plain;       // non-pointer locals
  std::vector<std::string> pointers;    // pointer locals that get a heap object
  std::map<std::string, std::uint64_t> sizes;
  std::map<std::string, std::uint64_t> pointee;
  std::uint64_t frame = 0;
};

ProbeTarget var_target(const std::string& fn, const std::string& var, std::int64_t offset = 0) {
  ProbeTarget t;
  t.kind = ProbeTarget::Kind::Var;
  t.function = fn;
  t.name = var;
  t.offset = offset;
  return t;
}

ProbeTarget pointee_target(const std::string& fn, const std::string& var) {
  ProbeTarget t;
  t.kind = ProbeTarget::Kind::Pointee;
  t.function = fn;
  t.name = var;
  return t;
}

ProbeTarget frame_target(const std::string& fn, std::int64_t offset) {
  ProbeTarget t;
  t.kind = ProbeTarget::Kind::Frame;
  t.function = fn;
  t.offset = offset;
  return t;
}

ProbeTarget param_target(const std::string& param) {
  ProbeTarget t;
  t.kind = ProbeTarget::Kind::Param;
  t.name = param;
  return t;
}

Statement untrusted_step(Gen& g, const FuzzConfig& cfg, const std::vector<SensitiveShape>& live,
                         std::size_t params) {
  const SensitiveShape& s = g.pick(live);
  const std::size_t choice = g.uniform(0, cfg.forge ? 7 : 6);
  switch (choice) {
    case 0: {
      const std::string& v = g.pick(s.plain);
      return ReadProbe{var_target(s.name, v), s.sizes.at(v)};
    }
    case 1:
      return ReadProbe{frame_target(s.name, 0), s.frame};
    case 2:
      if (!s.pointers.empty()) {
        const std::string& v = g.pick(s.pointers);
        return ReadProbe{pointee_target(s.name, v), s.pointee.at(v)};
      }
      return ReadProbe{frame_target(s.name, static_cast<std::int64_t>(g.uniform(0, s.frame - 1))), 1};
    case 3:
      if (params > 0) {
        return ReadProbe{param_target("p" + std::to_string(g.uniform(0, params - 1))), g.uniform(1, 4)};
      }
      [[fallthrough]];
    case 4:
      if (params > 0) {
        return WriteProbe{param_target("p" + std::to_string(g.uniform(0, params - 1))), g.secret(g.uniform(1, 4))};
      }
      [[fallthrough]];
    case 5: {
      const std::string& v = g.pick(s.plain);
      const std::uint64_t size = s.sizes.at(v);
      const std::uint64_t off = g.uniform(0, size - 1);
      return WriteProbe{var_target(s.name, v, static_cast<std::int64_t>(off)),
                        g.secret(g.uniform(1, size - off))};
    }
    case 6:
      if (!s.pointers.empty()) {
        const std::string& v = g.pick(s.pointers);
        return WriteProbe{pointee_target(s.name, v), g.secret(g.uniform(1, s.pointee.at(v)))};
      }
      return ReadProbe{frame_target(s.name, 0), s.frame};
    default: {
      // Spoofed calls that the identity checks must reject.
      static const std::vector<Syscall> kSpoofable{Syscall::RegisterMemory, Syscall::RegisterMemoryException,
                                                   Syscall::StopProtect, Syscall::UnregisterStack};
      Forge f;
      f.call = g.pick(kSpoofable);
      const std::string& v = g.pick(s.plain);
      f.target = var_target(s.name, v);
      f.len = s.sizes.at(v);
      f.read_only = g.coin(0.5);
      return f;
    }
  }
}

}  // namespace

FuzzCase generate_case(std::uint64_t seed, std::size_t index, const FuzzConfig& cfg) {
  Gen g(seed, index);
  FuzzCase fc;
  fc.seed = seed;
  fc.index = index;
  Program& prog = fc.program;
  const std::size_t depth = g.uniform(1, std::max<std::size_t>(1, cfg.max_depth));

  FunctionDesc main_fn;
  main_fn.name = "main";
  main_fn.body.emplace_back(Call{"sensitive0", {}});
  prog.functions.push_back(std::move(main_fn));

  std::vector<SensitiveShape> live;
  for (std::size_t k = 0; k < depth; ++k) {
    const std::string suffix = std::to_string(k);
    FunctionDesc s;
    s.name = "sensitive" + suffix;
    const bool all = g.coin(0.6);
    if (!all) {
      s.annotation = Annotation::SensitiveFinegrained;
    } else if (g.coin(0.5)) {
      s.annotation = Annotation::Sensitive;
    } else {
      fc.sensitive_list += s.name + "\n";
    }

    SensitiveShape shape;
    shape.name = s.name;
    std::uint64_t budget = cfg.max_frame_bytes - kFrameMetadataBytes;
    const std::size_t nlocals = g.uniform(1, std::max<std::size_t>(1, cfg.max_locals));
    for (std::size_t i = 0; i < nlocals && budget > 0; ++i) {
      VarDesc v;
      v.name = "v" + std::to_string(i);
      v.is_pointer = i > 0 && budget >= 8 && g.coin(0.25);
      v.size = v.is_pointer ? 8 : std::min<std::uint64_t>(budget, g.uniform(1, g.coin(0.2) ? 1024 : 64));
      budget -= v.size;
      static const std::vector<Annotation> kPlain{Annotation::Sensitive, Annotation::NotSensitive,
                                                  Annotation::WriteSensitive};
      static const std::vector<Annotation> kPointer{Annotation::SensitivePointer,
                                                    Annotation::WriteSensitivePointer, Annotation::Sensitive};
      if (g.coin(0.75)) {
        VarAnnotation a{v.is_pointer ? g.pick(kPointer) : g.pick(kPlain), std::nullopt};
        if (a.kind == Annotation::SensitivePointer || a.kind == Annotation::WriteSensitivePointer) {
          const std::uint64_t n = g.uniform(1, 256);
          if (g.coin(0.5)) a.pointee_size = SizeExpr{n, {}};
          else v.pointee_size = n;
          shape.pointee[v.name] = n;
          shape.pointers.push_back(v.name);
        }
        v.annotation = a;
      }
      if (!v.is_pointer) shape.plain.push_back(v.name);
      shape.sizes[v.name] = v.size;
      s.locals.push_back(std::move(v));
    }
    shape.frame = frame_layout(s).size;

    const std::size_t uparams = g.uniform(0, 2);
    // Secrets first, then the calls out to untrusted code.
    for (const VarDesc& v : s.locals) {
      if (!v.is_pointer) {
        s.body.emplace_back(Assign{v.name, false, 0, g.secret(v.size)});
      } else if (shape.pointee.contains(v.name)) {
        const std::uint64_t n = shape.pointee.at(v.name);
        s.body.emplace_back(HeapAlloc{v.name, SizeExpr{n, {}}});
        s.body.emplace_back(Assign{v.name, true, 0, g.secret(n)});
      }
    }
    bool uses_helper = false;
    const std::size_t calls = g.uniform(1, std::max<std::size_t>(1, cfg.max_untrusted_calls));
    for (std::size_t c = 0; c < calls; ++c) {
      if (g.coin(0.3)) {
        const std::string& v = g.pick(shape.plain);
        s.body.emplace_back(Assign{v, false, 0, g.secret(shape.sizes.at(v))});
      }
      if (g.coin(0.2)) {
        uses_helper = true;
        s.body.emplace_back(Call{"helper" + suffix, {}});
        continue;
      }
      Call call{"untrusted" + suffix, {}};
      for (std::size_t p = 0; p < uparams; ++p) call.args.push_back({CallArg::Kind::AddressOf, g.pick(shape.plain)});
      s.body.emplace_back(std::move(call));
    }
    if (g.coin(0.3)) s.body.emplace_back(Return{});
    live.push_back(shape);

    FunctionDesc u;
    u.name = "untrusted" + suffix;
    u.external = true;
    for (std::size_t p = 0; p < uparams; ++p) u.params.push_back(VarDesc{"p" + std::to_string(p), 8, true, {}, {}});
    if (cfg.probes) {
      const std::size_t steps = g.uniform(1, 6);
      for (std::size_t i = 0; i < steps; ++i) u.body.push_back(untrusted_step(g, cfg, live, uparams));
    }
    if (k + 1 < depth) {
      const std::size_t at = g.uniform(0, u.body.size());
      u.body.insert(u.body.begin() + static_cast<std::ptrdiff_t>(at), Call{"sensitive" + std::to_string(k + 1), {}});
    }
    fc.untrusted_list += u.name + "(" + std::to_string(uparams) + ")\n";

    prog.functions.push_back(std::move(s));
    prog.functions.push_back(std::move(u));

    if (uses_helper) {
      FunctionDesc h;
      h.name = "helper" + suffix;
      Call call{"untrusted" + suffix, {}};
      for (std::size_t p = 0; p < uparams; ++p) {
        h.locals.push_back(VarDesc{"slot" + std::to_string(p), 8, false, {}, {}});
        call.args.push_back({CallArg::Kind::AddressOf, "slot" + std::to_string(p)});
      }
      h.body.emplace_back(std::move(call));
      prog.functions.push_back(std::move(h));
    }
  }
  return fc;
}

CaseResult check_case(const FuzzCase& fc) {
  CaseResult r;
  InstrumentResult ir;
  try {
    ir = instrument(fc.program, parse_lists(fc.untrusted_list, fc.sensitive_list));
  } catch (const std::exception& e) {
    r.problems.push_back(std::string("instrument: ") + e.what());
    return r;
  }
  const IdentityTable table = synthesize_image(ir.program.function_names());
  Vault vault(table);
  Executor exec(ir.program, table, &vault);
  r.report = exec.run(fc.entry);
  const ExecutionReport& rep = r.report;

  for (const Fault& f : rep.faults) r.problems.push_back("fault: " + f.function + ": " + f.message);
  for (const Violation& v : rep.violations) {
    if (v.kind == Violation::Kind::Leak) {
      r.problems.push_back("confidentiality: " + v.function + " saw " + std::to_string(v.len) +
                           " protected bytes at " + hex(v.address));
    } else if (v.kind == Violation::Kind::IntegrityBreach) {
      r.problems.push_back("integrity: " + std::to_string(v.len) + " bytes at " + hex(v.address) +
                           " not restored");
    }
  }
  if (rep.exceptions.size() != rep.forged_calls) {
    r.problems.push_back("exceptions: " + std::to_string(rep.exceptions.size()) + " flagged for " +
                         std::to_string(rep.forged_calls) + " forged calls");
  }
  for (const VaultException& e : rep.exceptions) {
    if (e.kind != ExceptionKind::IdentityMismatch) {
      r.problems.push_back("exceptions: unexpected " + std::string(to_string(e.kind)) + " in " +
                           std::string(to_string(e.syscall)));
    }
  }

  const SaveBuffer& buf = vault.save_buffer();
  r.records_produced = buf.records().size();
  r.records_consumed_once = static_cast<std::uint64_t>(std::count_if(
      buf.records().begin(), buf.records().end(), [](const SaveRecord& rec) { return rec.reads == 1; }));
  r.bytes_produced = buf.bytes_produced();
  r.bytes_released = buf.bytes_released();
  if (r.records_consumed_once != r.records_produced) {
    r.problems.push_back("save-buffer: " + std::to_string(r.records_produced - r.records_consumed_once) +
                         " records not read exactly once");
  }
  if (r.bytes_produced != r.bytes_released) {
    r.problems.push_back("save-buffer: " + std::to_string(r.bytes_produced - r.bytes_released) +
                         " bytes never released");
  }
  if (!vault.register_list().empty() || !vault.protect_list().empty()) {
    r.problems.push_back("state: kernel lists not empty after the scenario");
  }
  return r;
}

namespace {

std::string category(const std::string& problem) { return problem.substr(0, problem.find(':')); }

}  // namespace

FuzzCase minimize_case(const FuzzCase& fc) {
  const CaseResult first = check_case(fc);
  if (first.problems.empty()) return fc;
  const std::string want = category(first.problems.front());
  auto still_fails = [&](const FuzzCase& c) {
    const CaseResult r = check_case(c);
    return std::any_of(r.problems.begin(), r.problems.end(),
                       [&](const std::string& p) { return category(p) == want; });
  };
  FuzzCase best = fc;
  bool progress = true;
  while (progress) {
    progress = false;
    for (std::size_t f = 0; f < best.program.functions.size(); ++f) {
      for (std::size_t s = best.program.functions[f].body.size(); s-- > 0;) {
        FuzzCase trial = best;
        auto& body = trial.program.functions[f].body;
        body.erase(body.begin() + static_cast<std::ptrdiff_t>(s));
        if (still_fails(trial)) {
          best = std::move(trial);
          progress = true;
        }
      }
    }
  }
  return best;
}

FuzzSummary fuzz(std::uint64_t seed, const FuzzConfig& config) {
  FuzzSummary summary;
  summary.seed = seed;
  summary.reports.resize(config.cases);
  std::vector<std::optional<FuzzFinding>> found(config.cases);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < config.cases; i = next++) {
      const FuzzCase fc = generate_case(seed, i, config);
      CaseResult r = check_case(fc);
      if (!r.problems.empty()) {
        found[i] = FuzzFinding{i, r.problems, config.minimize ? minimize_case(fc) : fc};
      }
      summary.reports[i] = std::move(r.report);
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(config.jobs, config.cases));
  std::vector<std::thread> threads;
  for (std::size_t j = 1; j < jobs; ++j) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();

  for (auto& f : found) {
    if (f) summary.findings.push_back(std::move(*f));
  }
  for (const ExecutionReport& r : summary.reports) {
    summary.observations += r.observations.size();
    summary.windows += r.windows_opened;
    summary.forged_calls += r.forged_calls;
  }
  return summary;
}

std::string format_fuzz_summary(const FuzzSummary& s) {
  std::string out = "fuzz seed=" + std::to_string(s.seed) + " cases=" + std::to_string(s.reports.size()) +
                    " findings=" + std::to_string(s.findings.size()) + " windows=" + std::to_string(s.windows) +
                    " observations=" + std::to_string(s.observations) +
                    " forged_calls=" + std::to_string(s.forged_calls) + "\n";
  for (const FuzzFinding& f : s.findings) {
    for (const std::string& p : f.problems) out += "finding case=" + std::to_string(f.index) + " " + p + "\n";
  }
  return out;
}

void write_case_files(const FuzzCase& fc, const std::string& dir) {
  std::filesystem::create_directories(dir);
  auto put = [&](const char* name, const std::string& text) {
    std::ofstream f(std::filesystem::path(dir) / name, std::ios::binary);
    f << text;
    if (!f) throw std::runtime_error("cannot write " + (std::filesystem::path(dir) / name).string());
  };
  put("program.json", emit_program(fc.program));
  put("UntrustedList", fc.untrusted_list);
  put("SensitiveList", fc.sensitive_list);
}

}  // namespace stackvault
