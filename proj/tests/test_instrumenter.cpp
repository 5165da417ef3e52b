#include "doctest.h"
#include "helpers.hpp"

using namespace svtest;

namespace {

// One sensitive function `s` calling untrusted `u`; `locals` and `annotation`
// are spliced in.
std::string program_with(const std::string& annotation, const std::string& locals,
                         const std::string& body = R"({"op":"call","callee":"u"})") {
  return R"({"functions":[
    {"name":"main","body":[{"op":"call","callee":"s"}]},
    {"name":"s",)" + annotation + R"("locals":[)" + locals + R"(],"body":[)" + body + R"(]},
    {"name":"u","external":true}]})";
}

std::vector<std::string> sequence(const InstrumentResult& r, const std::string& fn = "s") {
  return call_sequence(function(r.program, fn));
}

std::string problems_of(const std::string& json, const std::string& untrusted = "u",
                        const std::string& sensitive = "") {
  try {
    instrument_json(json, untrusted, sensitive);
  } catch (const InstrumentError& e) {
    std::string all;
    for (const auto& p : e.problems()) all += p + "\n";
    return all;
  }
  return "";
}

const std::string kAll = R"("annotation":"StackVault_Sensitive",)";
const std::string kFine = R"("annotation":"StackVault_Sensitive_Finegrained",)";

}  // namespace

TEST_CASE("golden: pwdgenerator gets exactly the expected call sequence") {
  const Scenario sc = load_scenario("pwdgenerator");
  const InstrumentResult r = instrument(sc.source, sc.lists);
  const std::vector<std::string> expected{
      "register_stack(all=True)",
      "register_memory(id, len, False)",
      "register_memory_exception(&age, 4, False)",
      "start_protect()",
      "lib_func(&age)",
      "stop_protect()",
      "unregister_stack()",
  };
  CHECK(sequence(r, "pwdgenerator") == expected);
  CHECK(sequence(r, "main") == std::vector<std::string>{"pwdgenerator()"});
  // Library code is left alone.
  CHECK(function(r.program, "lib_func").body == function(sc.source, "lib_func").body);
  CHECK(r.program.instrumented);
}

TEST_CASE("row: untrusted function is bracketed before and after the call") {
  const auto r = instrument_json(program_with("", "", R"({"op":"call","callee":"u"},{"op":"call","callee":"u"})"), "u");
  CHECK(sequence(r) == std::vector<std::string>{"start_protect()", "u()", "stop_protect()", "start_protect()", "u()",
                                                "stop_protect()"});
  CHECK(vault_calls(function(r.program, "s"))[0].rule == ApiRule::UntrustedFunction);
  // Trusted callees and calls from main are not bracketed.
  CHECK(sequence(instrument_json(program_with("", ""), "")) == std::vector<std::string>{"u()"});
}

TEST_CASE("row: sensitive function registers its whole frame at begin and end") {
  const auto r = instrument_json(program_with(kAll, R"({"name":"x","size":4})", R"({"op":"assign","var":"x","fill":1})"), "u");
  const auto& body = function(r.program, "s").body;
  REQUIRE(body.size() == 3);
  const auto& first = std::get<VaultCall>(body.front());
  CHECK(first.call == Syscall::RegisterStack);
  CHECK(first.all);
  CHECK(first.rule == ApiRule::SensitiveFunction);
  CHECK(std::get<VaultCall>(body.back()).call == Syscall::UnregisterStack);
}

TEST_CASE("row: finegrained function registers with all=False") {
  const auto r = instrument_json(program_with(kFine, ""), "u");
  const auto calls = vault_calls(function(r.program, "s"));
  CHECK_FALSE(calls.front().all);
  CHECK(calls.front().rule == ApiRule::FinegrainedFunction);
  CHECK(sequence(r) == std::vector<std::string>{"register_stack(all=False)", "start_protect()", "u()",
                                                "stop_protect()", "unregister_stack()"});
  // SensitiveList membership means all=True.
  const auto listed = instrument_json(program_with("", ""), "u", "s");
  CHECK(vault_calls(function(listed.program, "s")).front().all);
}

TEST_CASE("row: Sensitive var registers memory only when all=False") {
  const std::string local = R"({"name":"k","size":32,"annotation":"StackVault_Sensitive"})";
  const auto fine = instrument_json(program_with(kFine, local), "u");
  CHECK(sequence(fine).at(1) == "register_memory(&k, 32, False)");
  CHECK(vault_calls(function(fine.program, "s"))[1].rule == ApiRule::SensitiveVar);
  const auto all = instrument_json(program_with(kAll, local), "u");
  CHECK(sequence(all).at(1) == "start_protect()");
}

TEST_CASE("row: NotSensitive var registers an exception only when all=True") {
  const std::string local = R"({"name":"n","size":8,"annotation":"StackVault_NotSensitive"})";
  const auto all = instrument_json(program_with(kAll, local), "u");
  CHECK(sequence(all).at(1) == "register_memory_exception(&n, 8, False)");
  CHECK(vault_calls(function(all.program, "s"))[1].rule == ApiRule::NotSensitiveVar);
  const auto fine = instrument_json(program_with(kFine, local), "u");
  CHECK(sequence(fine).at(1) == "start_protect()");
}

TEST_CASE("row: WriteSensitive var is a read-only registration when all=False") {
  const std::string local = R"({"name":"w","size":16,"annotation":"StackVault_WriteSensitive"})";
  const auto fine = instrument_json(program_with(kFine, local), "u");
  CHECK(sequence(fine) == std::vector<std::string>{"register_stack(all=False)", "register_memory(&w, 16, True)",
                                                   "start_protect()", "u()", "stop_protect()", "unregister_stack()"});
  CHECK(vault_calls(function(fine.program, "s"))[1].rule == ApiRule::WriteSensitiveVar);
}

TEST_CASE("row: WriteSensitive var is a read-only exception when all=True") {
  const std::string local = R"({"name":"w","size":16,"annotation":"StackVault_WriteSensitive"})";
  const auto all = instrument_json(program_with(kAll, local), "u");
  CHECK(sequence(all).at(1) == "register_memory_exception(&w, 16, True)");
  CHECK(vault_calls(function(all.program, "s"))[1].rule == ApiRule::WriteSensitiveVarException);
}

TEST_CASE("row: SensitivePointer registers the pointee right after allocation") {
  const std::string local = R"({"name":"p","size":8,"pointer":true,"annotation":"StackVault_SensitivePointer_24"})";
  const std::string body = R"({"op":"assign","var":"p","fill":0},{"op":"malloc","var":"p","size":24},{"op":"call","callee":"u"})";
  const auto all = instrument_json(program_with(kAll, local, body), "u");
  const auto& stmts = function(all.program, "s").body;
  REQUIRE(stmts.size() == 8);
  CHECK(std::holds_alternative<HeapAlloc>(stmts[2]));
  const auto& reg = std::get<VaultCall>(stmts[3]);
  CHECK(reg.call == Syscall::RegisterMemory);
  CHECK(reg.pointee);
  CHECK(reg.len.value == 24);
  CHECK_FALSE(reg.read_only);
  CHECK(reg.rule == ApiRule::SensitivePointee);

  // With all=False the pointer slot itself is registered too.
  const auto fine = instrument_json(program_with(kFine, local, body), "u");
  CHECK(sequence(fine) == std::vector<std::string>{"register_stack(all=False)", "register_memory(&p, 8, False)",
                                                   "register_memory(p, 24, False)", "start_protect()", "u()",
                                                   "stop_protect()", "unregister_stack()"});
}

TEST_CASE("row: WriteSensitivePointer registers a read-only pointee") {
  const std::string local =
      R"({"name":"p","size":8,"pointer":true,"pointee_size":40,"annotation":"StackVault_WriteSensitivePointer"})";
  const std::string body = R"({"op":"malloc","var":"p","size":40},{"op":"call","callee":"u"})";
  const auto r = instrument_json(program_with(kAll, local, body), "u");
  const auto calls = vault_calls(function(r.program, "s"));
  const auto it = std::find_if(calls.begin(), calls.end(), [](const VaultCall& c) { return c.pointee; });
  REQUIRE(it != calls.end());
  CHECK(it->read_only);
  CHECK(it->len.value == 40);
  CHECK(it->rule == ApiRule::WriteSensitivePointee);
}

TEST_CASE("pointer parameters register their pointee in the prologue") {
  const auto r = instrument_json(R"({"functions":[
    {"name":"s","annotation":"StackVault_Sensitive",
     "params":[{"name":"buf","size":8,"pointer":true,"annotation":"StackVault_SensitivePointer_16"}],
     "body":[]}]})");
  CHECK(sequence(r) == std::vector<std::string>{"register_stack(all=True)", "register_memory(buf, 16, False)",
                                                "unregister_stack()"});
}

TEST_CASE("address arguments turn locals into exception regions") {
  const std::string locals = R"({"name":"a","size":4},{"name":"b","size":4,"annotation":"StackVault_Sensitive"})";
  const std::string body =
      R"({"op":"call","callee":"t","args":[{"addr_of":"a"}]},{"op":"call","callee":"t","args":[{"addr_of":"b"}]},{"op":"call","callee":"t","args":[{"addr_of":"a"}]})";
  const std::string json = R"({"functions":[
    {"name":"s","annotation":"StackVault_Sensitive","locals":[)" + locals + R"(],"body":[)" + body + R"(]},
    {"name":"t","external":true,"params":[{"name":"p","size":8,"pointer":true}]}]})";
  const auto r = instrument_json(json, "t(1)");
  CHECK(sequence(r) == std::vector<std::string>{
                           "register_stack(all=True)", "register_memory_exception(&a, 4, False)", "start_protect()",
                           "t(&a)", "stop_protect()", "register_memory_exception(&b, 4, False)", "start_protect()",
                           "t(&b)", "stop_protect()", "start_protect()", "t(&a)", "stop_protect()",
                           "unregister_stack()"});
  CHECK(vault_calls(function(r.program, "s"))[1].rule == ApiRule::AddressArgument);

  // Finegrained: the Sensitive annotation on b is dropped, nothing registered.
  std::string fine = json;
  fine.replace(fine.find("StackVault_Sensitive\""), 21, "StackVault_Sensitive_Finegrained\"");
  const auto rf = instrument_json(fine, "t(1)");
  for (const VaultCall& c : vault_calls(function(rf.program, "s"))) CHECK(c.call != Syscall::RegisterMemory);
}

TEST_CASE("return gets unregister_stack in front of it") {
  const auto r = instrument_json(program_with(kAll, "", R"({"op":"call","callee":"u"},{"op":"return"})"), "u");
  const auto& body = function(r.program, "s").body;
  CHECK(std::get<VaultCall>(body[body.size() - 2]).call == Syscall::UnregisterStack);
  CHECK(std::holds_alternative<Return>(body.back()));
}

TEST_CASE("unannotated program without untrusted calls is unchanged") {
  const std::string json = program_with("", R"({"name":"x","size":4})", R"({"op":"assign","var":"x","fill":3})");
  const Program src = parse_program(json);
  const auto r = instrument_json(json, "");
  CHECK(function(r.program, "s").body == function(src, "s").body);
  CHECK(function(r.program, "main").body == function(src, "main").body);
}

TEST_CASE("lists") {
  const FunctionLists l = parse_lists("# libs\nlib_func(1)\nmemcpy\n\n", "pwdgenerator\n");
  CHECK(l.is_untrusted("lib_func", 1));
  CHECK_FALSE(l.is_untrusted("lib_func", 2));
  CHECK(l.is_untrusted("memcpy", 3));
  CHECK(l.sensitive.contains("pwdgenerator"));

  auto line_of = [](const char* u, const char* s) -> std::size_t {
    try {
      parse_lists(u, s);
    } catch (const ListError& e) {
      return e.line();
    }
    return 0;
  };
  CHECK(line_of("ok\nbad(x)\n", "") == 2);
  CHECK(line_of("f(1\n", "") == 1);
  CHECK(line_of("9lives\n", "") == 1);
  CHECK(line_of("f(1)\n", "g\nf\n") == 2);
}

TEST_CASE("annotation errors") {
  CHECK(problems_of(program_with("", R"({"name":"x","size":4,"annotation":"StackVault_Sensitive"})"))
            .find("not sensitive") != std::string::npos);
  CHECK(problems_of(program_with(kAll, R"({"name":"x","size":4,"annotation":"StackVault_SensitivePointer_4"})"))
            .find("non-pointer") != std::string::npos);
  CHECK(problems_of(program_with(kAll, R"({"name":"p","size":8,"pointer":true,"annotation":"StackVault_SensitivePointer"})"))
            .find("unresolvable pointee size") != std::string::npos);
  CHECK(problems_of(program_with(kAll, R"({"name":"p","size":8,"pointer":true,"annotation":"StackVault_SensitivePointer_n"})"))
            .find("`n`") != std::string::npos);
  CHECK(problems_of(program_with(kAll, R"({"name":"x","size":4,"annotation":"StackVault_Sensitive_Finegrained"})"))
            .find("applies to functions") != std::string::npos);
  CHECK(problems_of(program_with(kAll, ""), "s").find("both sensitive and untrusted") != std::string::npos);
  CHECK(problems_of(program_with("", "", R"({"op":"read_probe","target":{"address":4198400},"len":1})"))
            .find("untrusted functions") != std::string::npos);
  CHECK(problems_of(program_with("", R"({"name":"x","size":4})", R"({"op":"call","callee":"u","args":[{"var":"x"}]})"))
            .find("takes 0 arguments, 1 given") != std::string::npos);
  CHECK(problems_of(program_with("", "", R"({"op":"call","callee":"nobody"})")).find("undescribed") !=
        std::string::npos);
}

TEST_CASE("already-instrumented input is rejected") {
  const Scenario sc = load_scenario("pwdgenerator");
  const InstrumentResult once = instrument(sc.source, sc.lists);
  CHECK_THROWS_AS(instrument(once.program, sc.lists), InstrumentError);
}

TEST_CASE("property: bracketing is balanced on generated programs") {
  FuzzConfig cfg;
  for (std::size_t i = 0; i < 300; ++i) {
    const FuzzCase fc = generate_case(5150, i, cfg);
    const FunctionLists lists = parse_lists(fc.untrusted_list, fc.sensitive_list);
    const InstrumentResult r = instrument(fc.program, lists);
    for (const FunctionDesc& fn : r.program.functions) {
      int open = 0, stacks = 0, unstacks = 0;
      for (std::size_t k = 0; k < fn.body.size(); ++k) {
        const Statement& st = fn.body[k];
        if (const auto* v = std::get_if<VaultCall>(&st)) {
          if (v->call == Syscall::StartProtect) {
            ++open;
            REQUIRE(k + 1 < fn.body.size());
            const auto* c = std::get_if<Call>(&fn.body[k + 1]);
            REQUIRE(c);
            const FunctionDesc* callee = r.program.find(c->callee);
            REQUIRE(lists.is_untrusted(callee->name, callee->params.size()));
            REQUIRE(std::get<VaultCall>(fn.body[k + 2]).call == Syscall::StopProtect);
          }
          if (v->call == Syscall::StopProtect) --open;
          if (v->call == Syscall::RegisterStack) ++stacks;
          if (v->call == Syscall::UnregisterStack) ++unstacks;
          REQUIRE((open == 0 || open == 1));
        } else if (const auto* c = std::get_if<Call>(&st)) {
          const FunctionDesc* callee = r.program.find(c->callee);
          if (lists.is_untrusted(callee->name, callee->params.size())) REQUIRE(open == 1);
        }
      }
      REQUIRE(open == 0);
      const bool sensitive = fn.sensitivity != Sensitivity::None;
      REQUIRE(stacks == (sensitive ? 1 : 0));
      REQUIRE(unstacks == (sensitive ? 1 : 0));
    }
    // Every annotation is accounted for in the provenance.
    for (const FunctionDesc& fn : fc.program.functions) {
      for (const VarDesc* v : fn.vars()) {
        if (!v->annotation) continue;
        const bool seen = std::any_of(r.provenance.begin(), r.provenance.end(), [&](const Provenance& p) {
          return p.function == fn.name && p.subject == v->name;
        });
        REQUIRE(seen);
      }
    }
  }
}
