#include <algorithm>
#include <random>

#include "doctest.h"
#include "reference_vault.hpp"
#include "stackvault/vault.hpp"

using namespace stackvault;

namespace {

constexpr Address kMainPc = 0x401010;
constexpr Address kPwdPc = 0x401120;
constexpr Address kLibPc = 0x401310;
constexpr Address kInnerPc = 0x401410;

IdentityTable pwd_table() {
  return load_image_map(
      "main 0x401000 0x401100\n"
      "pwdgenerator 0x401100 0x401300\n"
      "lib_func 0x401300 0x401400\n"
      "inner 0x401400 0x401500\n");
}

// pwdgenerator's frame: age (4) at the low end, then id (8), passwd (256),
// 16 metadata bytes; 284 bytes in all.
struct PwdState {
  ProcessMemory mem;
  Vault vault{pwd_table()};
  StackFrame frame;
  HeapObject id;
  Address age = 0, id_slot = 0, passwd = 0;

  PwdState() {
    mem.push_frame(FunctionId{0}, 16);
    frame = mem.push_frame(FunctionId{1}, 284);
    age = frame.top;
    id_slot = frame.top + 4;
    passwd = frame.top + 12;
    id = mem.allocate(64);
    mem.write_bytes(passwd, Bytes(256, 0xA5));
    mem.write_bytes(age, Bytes{30, 0, 0, 0});
    mem.write_u64(id_slot, id.base);
    mem.write_bytes(id.base, Bytes(64, 0x5A));
    mem.write_bytes(frame.base - 16, Bytes(16, 0xEE));  // return-address analog
  }

  void register_all() {
    REQUIRE_FALSE(vault.register_stack(kPwdPc, true, frame.base, frame.top));
    REQUIRE_FALSE(vault.register_memory(kPwdPc, id.base, 64, false));
    REQUIRE_FALSE(vault.register_memory_exception(kPwdPc, age, 4, false));
  }
};

}  // namespace

TEST_CASE("start_protect on the three-entry pwdgenerator state") {
  PwdState f;
  f.register_all();
  const Bytes frame_before = f.mem.read_bytes(f.frame.top, 284);
  REQUIRE_FALSE(f.vault.start_protect(f.mem, kPwdPc));

  // Hand-executed: pass 1 saves frame (284), id (64), age (4); pass 2 clears
  // frame and id, then copies age back.
  const Bytes frame_now = f.mem.read_bytes(f.frame.top, 284);
  CHECK(Bytes(frame_now.begin(), frame_now.begin() + 4) == Bytes{30, 0, 0, 0});
  CHECK(std::all_of(frame_now.begin() + 4, frame_now.end(), [](std::uint8_t b) { return b == 0; }));
  CHECK(f.mem.read_bytes(f.id.base, 64) == Bytes(64, 0));

  const auto& recs = f.vault.save_buffer().records();
  REQUIRE(recs.size() == 3);
  CHECK(recs[0].source == f.frame.top);
  CHECK(recs[0].len == 284);
  CHECK(recs[0].data == frame_before);
  CHECK(recs[1].source == f.id.base);
  CHECK(recs[1].len == 64);
  CHECK(recs[2].source == f.age);
  CHECK(recs[0].reads == 0);
  CHECK(recs[1].reads == 0);
  CHECK(recs[2].reads == 1);

  REQUIRE(f.vault.protect_list().size() == 1);
  CHECK(f.vault.protect_list()[0].caller == FunctionId{1});
  CHECK(f.vault.protect_list()[0].register_index == 3);

  const SyscallStats s = f.vault.stats();
  CHECK(s.bytes_copied == 284 + 64 + 4);
  CHECK(s.bytes_cleared == 284 + 64);
}

TEST_CASE("stop_protect restores the frame but keeps the callee's exception write") {
  PwdState f;
  f.register_all();
  const Bytes frame_before = f.mem.read_bytes(f.frame.top, 284);
  REQUIRE_FALSE(f.vault.start_protect(f.mem, kPwdPc));

  f.mem.write_bytes(f.age, Bytes{31, 0, 0, 0});
  f.mem.write_bytes(f.passwd + 10, Bytes(40, 0x66));
  f.mem.write_bytes(f.id.base + 3, Bytes(5, 0x77));

  REQUIRE_FALSE(f.vault.stop_protect(f.mem, kPwdPc));
  Bytes expect = frame_before;
  std::copy_n(Bytes{31, 0, 0, 0}.begin(), 4, expect.begin());
  CHECK(f.mem.read_bytes(f.frame.top, 284) == expect);
  CHECK(f.mem.read_bytes(f.id.base, 64) == Bytes(64, 0x5A));
  CHECK(f.vault.protect_list().empty());
  for (const SaveRecord& r : f.vault.save_buffer().records()) CHECK(r.reads == 1);
  CHECK(f.vault.save_buffer().bytes_held() == 0);

  REQUIRE_FALSE(f.vault.unregister_stack(f.mem, kPwdPc));
  CHECK(f.vault.register_list().empty());
  f.mem.pop_frame();
  CHECK(f.mem.read_bytes(f.frame.top, 284) == Bytes(284, 0));

  const SyscallStats s = f.vault.stats();
  for (Syscall c : kAllSyscalls) CHECK(s.count(c) == 1);
  CHECK(s.total() == 6);
}

TEST_CASE("start_protect with nothing registered only opens a window") {
  PwdState f;
  const std::uint64_t d = f.mem.digest();
  REQUIRE_FALSE(f.vault.start_protect(f.mem, kPwdPc));
  CHECK(f.mem.digest() == d);
  REQUIRE(f.vault.protect_list().size() == 1);
  CHECK(f.vault.protect_list()[0].register_index == 0);
  CHECK(f.vault.save_buffer().records().empty());
}

TEST_CASE("nested start_protect saves only the newly registered frame") {
  PwdState f;
  f.register_all();
  REQUIRE_FALSE(f.vault.start_protect(f.mem, kPwdPc));
  const std::uint64_t produced = f.vault.save_buffer().bytes_produced();
  f.mem.push_frame(FunctionId{2}, 32);  // lib_func
  const StackFrame inner = f.mem.push_frame(FunctionId{3}, 200);
  REQUIRE_FALSE(f.vault.register_stack(kInnerPc, true, inner.base, inner.top));
  REQUIRE_FALSE(f.vault.start_protect(f.mem, kInnerPc));
  CHECK(f.vault.save_buffer().bytes_produced() - produced == 200);
  CHECK(f.vault.protect_list()[1].register_index == 4);
  REQUIRE_FALSE(f.vault.stop_protect(f.mem, kInnerPc));
  REQUIRE_FALSE(f.vault.unregister_stack(f.mem, kInnerPc));
  REQUIRE_FALSE(f.vault.stop_protect(f.mem, kPwdPc));
  for (const SaveRecord& r : f.vault.save_buffer().records()) CHECK(r.reads == 1);
}

TEST_CASE("untrusted register_memory is an identity mismatch and a no-op") {
  PwdState f;
  f.register_all();
  REQUIRE_FALSE(f.vault.start_protect(f.mem, kPwdPc));
  const std::uint64_t d = f.mem.digest();
  auto ex = f.vault.register_memory(kLibPc, f.passwd, 256, false);
  REQUIRE(ex);
  CHECK(ex->kind == ExceptionKind::IdentityMismatch);
  CHECK(ex->syscall == Syscall::RegisterMemory);
  CHECK(f.vault.register_list().size() == 3);
  CHECK(f.mem.digest() == d);
  CHECK(f.vault.exceptions().size() == 1);
  CHECK(f.vault.stats().count(Syscall::RegisterMemory) == 2);
}

TEST_CASE("RegisterList growth inside a window is an index mismatch") {
  PwdState f;
  f.register_all();
  REQUIRE_FALSE(f.vault.start_protect(f.mem, kPwdPc));
  const StackFrame lib = f.mem.push_frame(FunctionId{2}, 32);
  // register_stack only needs a known caller, so untrusted code can append.
  REQUIRE_FALSE(f.vault.register_stack(kLibPc, false, lib.base, lib.top));
  f.mem.pop_frame();
  const std::uint64_t d = f.mem.digest();
  auto ex = f.vault.stop_protect(f.mem, kPwdPc);
  REQUIRE(ex);
  CHECK(ex->kind == ExceptionKind::IndexMismatch);
  CHECK(f.mem.digest() == d);
  CHECK(f.vault.protect_list().size() == 1);
  CHECK(f.vault.exceptions().size() == 1);
}

TEST_CASE("stop_protect from another function restores nothing") {
  PwdState f;
  f.register_all();
  REQUIRE_FALSE(f.vault.start_protect(f.mem, kPwdPc));
  const std::uint64_t d = f.mem.digest();
  auto ex = f.vault.stop_protect(f.mem, kLibPc);
  REQUIRE(ex);
  CHECK(ex->kind == ExceptionKind::IdentityMismatch);
  CHECK(f.mem.digest() == d);
  CHECK(f.vault.protect_list().size() == 1);
}

TEST_CASE("bad calls flag the expected kinds") {
  PwdState f;
  CHECK(f.vault.stop_protect(f.mem, kPwdPc)->kind == ExceptionKind::EmptyProtectList);
  CHECK(f.vault.register_memory(kPwdPc, f.id.base, 4, false)->kind == ExceptionKind::NoRegisteredStack);
  CHECK(f.vault.register_stack(0x500000, true, f.frame.base, f.frame.top)->kind == ExceptionKind::UnknownCaller);
  CHECK(f.vault.register_stack(kPwdPc, true, f.frame.top, f.frame.base)->kind == ExceptionKind::RegionOutOfFrame);
  CHECK(f.vault.start_protect(f.mem, 0x10)->kind == ExceptionKind::UnknownCaller);
  CHECK(f.vault.register_list().empty());

  f.register_all();
  auto below = f.vault.register_memory_exception(kPwdPc, f.frame.top - 2, 4, false);
  REQUIRE(below);
  CHECK(below->kind == ExceptionKind::RegionOutOfFrame);
  CHECK(f.vault.register_memory_exception(kLibPc, f.age, 4, false)->kind == ExceptionKind::IdentityMismatch);
  CHECK(f.vault.register_memory(kPwdPc, kTextBase, 4, false)->kind == ExceptionKind::RegionOutOfFrame);

  const Bytes frame = f.mem.read_bytes(f.frame.top, 284);
  CHECK(f.vault.unregister_stack(f.mem, kLibPc)->kind == ExceptionKind::IdentityMismatch);
  CHECK(f.mem.read_bytes(f.frame.top, 284) == frame);
  CHECK(f.vault.register_list().size() == 3);
}

TEST_CASE("read-only entries stay visible and finegrained frames stay in place") {
  PwdState f;
  REQUIRE_FALSE(f.vault.register_stack(kPwdPc, false, f.frame.base, f.frame.top));
  REQUIRE_FALSE(f.vault.register_memory(kPwdPc, f.passwd, 256, false));
  REQUIRE_FALSE(f.vault.register_memory(kPwdPc, f.id.base, 64, true));
  REQUIRE_FALSE(f.vault.start_protect(f.mem, kPwdPc));
  CHECK(f.mem.read_bytes(f.passwd, 256) == Bytes(256, 0));
  CHECK(f.mem.read_bytes(f.id.base, 64) == Bytes(64, 0x5A));
  CHECK(f.mem.read_bytes(f.age, 4) == Bytes{30, 0, 0, 0});
  CHECK(f.vault.stats().bytes_copied == 256 + 64);

  f.mem.write_bytes(f.id.base, Bytes(64, 1));
  f.mem.write_bytes(f.age, Bytes{9, 9, 9, 9});
  REQUIRE_FALSE(f.vault.stop_protect(f.mem, kPwdPc));
  CHECK(f.mem.read_bytes(f.passwd, 256) == Bytes(256, 0xA5));
  CHECK(f.mem.read_bytes(f.id.base, 64) == Bytes(64, 0x5A));
  CHECK(f.mem.read_bytes(f.age, 4) == Bytes{9, 9, 9, 9});  // never registered
}

TEST_CASE("read-only exception region reverts to the saved frame bytes") {
  PwdState f;
  REQUIRE_FALSE(f.vault.register_stack(kPwdPc, true, f.frame.base, f.frame.top));
  REQUIRE_FALSE(f.vault.register_memory_exception(kPwdPc, f.age, 4, true));
  REQUIRE_FALSE(f.vault.start_protect(f.mem, kPwdPc));
  CHECK(f.mem.read_bytes(f.age, 4) == Bytes{30, 0, 0, 0});
  f.mem.write_bytes(f.age, Bytes{1, 2, 3, 4});
  REQUIRE_FALSE(f.vault.stop_protect(f.mem, kPwdPc));
  CHECK(f.mem.read_bytes(f.age, 4) == Bytes{30, 0, 0, 0});
}

TEST_CASE("save buffer records are read exactly once") {
  SaveBuffer buf;
  const std::size_t i = buf.append(0x10, Bytes{1, 2, 3});
  CHECK(buf.bytes_held() == 3);
  CHECK(buf.consume(i) == Bytes{1, 2, 3});
  CHECK(buf.records()[i].data.empty());
  CHECK(buf.bytes_released() == 3);
  CHECK_THROWS_AS(buf.consume(i), std::logic_error);
}

TEST_CASE("fresh vault has zero stats") {
  Vault v{pwd_table()};
  CHECK(v.stats() == SyscallStats{});
}

namespace {

struct Group {
  StackFrame frame;
  bool all;
  std::vector<std::pair<Region, bool>> objects;     // registered objects, read-only flag
  std::vector<std::pair<Region, bool>> exceptions;  // all=true only
};

// Cuts a frame into disjoint random slices.
std::vector<Region> slices(std::mt19937_64& rng, const StackFrame& f) {
  std::vector<Region> out;
  Address a = f.top;
  while (a < f.base) {
    const std::uint64_t len = std::min<std::uint64_t>(f.base - a, 1 + rng() % 40);
    if (rng() % 3 == 0) out.push_back({a, len});
    a += len;
  }
  return out;
}

}  // namespace

TEST_CASE("property: Vault matches the snapshot/restore oracle on random nested windows") {
  std::mt19937_64 rng(4242);
  const IdentityTable table = synthesize_image({"main", "s0", "s1", "s2", "u"});
  auto pc = [&](const std::string& f) { return table.span(*table.find(f)).lo + 4; };

  for (int round = 0; round < 300; ++round) {
    Vault vault(table);
    svtest::ReferenceVault oracle(table);
    ProcessMemory mv, mr;
    auto both = [&](auto&& op) {
      op(mv);
      op(mr);
    };
    both([](ProcessMemory& m) { m.push_frame(FunctionId{0}, 16); });

    const int depth = 1 + static_cast<int>(rng() % 3);
    std::vector<Group> groups;
    for (int k = 0; k < depth; ++k) {
      const std::string s = "s" + std::to_string(k);
      const std::uint64_t size = 32 + rng() % 480;
      StackFrame frame;
      both([&](ProcessMemory& m) { frame = m.push_frame(FunctionId{static_cast<std::uint32_t>(k + 1)}, size); });
      Bytes fill(size);
      for (auto& b : fill) b = static_cast<std::uint8_t>(1 + rng() % 255);
      both([&](ProcessMemory& m) { m.write_bytes(frame.top, fill); });

      Group g{frame, rng() % 2 == 0, {}, {}};
      REQUIRE_FALSE(vault.register_stack(pc(s), g.all, frame.base, frame.top));
      REQUIRE_FALSE(oracle.register_stack(pc(s), g.all, frame.base, frame.top));
      for (const Region& r : slices(rng, frame)) {
        const bool ro = rng() % 2;
        if (g.all) {
          REQUIRE_FALSE(vault.register_memory_exception(pc(s), r.base, r.len, ro));
          REQUIRE_FALSE(oracle.register_memory_exception(pc(s), r.base, r.len, ro));
          g.exceptions.push_back({r, ro});
        } else {
          REQUIRE_FALSE(vault.register_memory(pc(s), r.base, r.len, ro));
          REQUIRE_FALSE(oracle.register_memory(pc(s), r.base, r.len, ro));
          g.objects.push_back({r, ro});
        }
      }
      for (std::uint64_t n = rng() % 3; n > 0; --n) {
        const std::uint64_t len = 1 + rng() % 100;
        HeapObject h;
        Bytes secret(len, static_cast<std::uint8_t>(1 + rng() % 255));
        both([&](ProcessMemory& m) {
          h = m.allocate(len);
          m.write_bytes(h.base, secret);
        });
        const bool ro = rng() % 2;
        REQUIRE_FALSE(vault.register_memory(pc(s), h.base, len, ro));
        REQUIRE_FALSE(oracle.register_memory(pc(s), h.base, len, ro));
        g.objects.push_back({h.region(), ro});
      }
      REQUIRE_FALSE(vault.start_protect(mv, pc(s)));
      REQUIRE_FALSE(oracle.start_protect(mr, pc(s)));
      REQUIRE(mv.same_contents(mr));

      // Fully protected bytes of this group read zero right after the start.
      if (g.all) {
        for (Address a = frame.top; a < frame.base; ++a) {
          const bool exposed = std::any_of(g.exceptions.begin(), g.exceptions.end(),
                                           [&](const auto& e) { return e.first.contains(a); });
          if (!exposed) REQUIRE(mv.read_byte(a) == 0);
        }
      }
      for (const auto& [r, ro] : g.objects) {
        if (!ro) REQUIRE(mv.read_bytes(r.base, r.len) == Bytes(r.len, 0));
      }
      groups.push_back(g);

      // The untrusted callee scribbles over everything it can reach.
      both([](ProcessMemory& m) { m.push_frame(FunctionId{4}, 16); });
      for (int w = 0; w < 10; ++w) {
        const Group& target = groups[rng() % groups.size()];
        const Address a = target.frame.top + rng() % target.frame.size();
        const Bytes junk(std::min<std::uint64_t>(1 + rng() % 16, target.frame.base - a),
                         static_cast<std::uint8_t>(rng()));
        both([&](ProcessMemory& m) { m.write_bytes(a, junk); });
        for (const auto& [r, ro] : target.objects) {
          if (r.base >= kHeapBase && r.base < kHeapLimit && rng() % 4 == 0) {
            const Bytes j2(r.len, 0xCC);
            both([&](ProcessMemory& m) { m.write_bytes(r.base, j2); });
          }
        }
      }
    }

    for (int k = depth - 1; k >= 0; --k) {
      const std::string s = "s" + std::to_string(k);
      both([](ProcessMemory& m) { m.pop_frame(); });  // untrusted frame
      REQUIRE_FALSE(vault.stop_protect(mv, pc(s)));
      REQUIRE_FALSE(oracle.stop_protect(mr, pc(s)));
      REQUIRE(mv.same_contents(mr));
      REQUIRE_FALSE(vault.unregister_stack(mv, pc(s)));
      REQUIRE_FALSE(oracle.unregister_stack(mr, pc(s)));
      REQUIRE(mv.same_contents(mr));
      both([](ProcessMemory& m) { m.pop_frame(); });
    }
    CHECK(vault.register_list().empty());
    CHECK(vault.save_buffer().bytes_held() == 0);
    for (const SaveRecord& r : vault.save_buffer().records()) REQUIRE(r.reads == 1);
    const SyscallStats a = vault.stats(), b = oracle.stats();
    CHECK(a.calls == b.calls);
    CHECK(a.bytes_copied == b.bytes_copied);
    CHECK(a.bytes_cleared == b.bytes_cleared);
  }
}

TEST_CASE("property: flagged calls never touch memory") {
  std::mt19937_64 rng(777);
  PwdState f;
  f.register_all();
  REQUIRE_FALSE(f.vault.start_protect(f.mem, kPwdPc));
  for (int i = 0; i < 500; ++i) {
    const std::uint64_t d = f.mem.digest();
    const std::size_t before = f.vault.exceptions().size();
    std::optional<VaultException> ex;
    const Address base = f.frame.top + rng() % 300;
    switch (rng() % 5) {
      case 0: ex = f.vault.register_memory(kLibPc, base, 1 + rng() % 64, rng() % 2); break;
      case 1: ex = f.vault.register_memory_exception(kLibPc, base, 1 + rng() % 64, rng() % 2); break;
      case 2: ex = f.vault.stop_protect(f.mem, rng() % 2 ? kLibPc : kMainPc); break;
      case 3: ex = f.vault.unregister_stack(f.mem, kLibPc); break;
      default: ex = f.vault.start_protect(f.mem, 0x1000 + rng() % 0x1000); break;
    }
    REQUIRE(ex);
    REQUIRE(f.vault.exceptions().size() == before + 1);
    REQUIRE(f.mem.digest() == d);
  }
}
