#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "stackvault/types.hpp"
#include "stackvault/vault.hpp"

namespace stackvault {

inline constexpr std::string_view kProgramFormat = "stackvault-program/1";

class ProgramError : public std::runtime_error {
 public:
  explicit ProgramError(const std::string& what) : std::runtime_error(what) {}
};

enum class Annotation : std::uint8_t {
  Sensitive,
  SensitiveFinegrained,
  NotSensitive,
  WriteSensitive,
  SensitivePointer,
  WriteSensitivePointer,
};

// Byte count that may be spelled with a named program constant, as in
// StackVault_SensitivePointer_len. `symbol` is empty for literals.
struct SizeExpr {
  std::uint64_t value = 0;
  std::string symbol;

  friend bool operator==(const SizeExpr&, const SizeExpr&) = default;
};

struct VarAnnotation {
  Annotation kind = Annotation::Sensitive;
  std::optional<SizeExpr> pointee_size;  // the _x suffix of pointer annotations

  friend bool operator==(const VarAnnotation&, const VarAnnotation&) = default;
};

std::string annotation_string(const VarAnnotation& a);
std::string_view annotation_string(Annotation a);
// Parses "StackVault_..." strings. Suffix sizes are resolved against `constants`.
VarAnnotation parse_annotation(std::string_view text, const std::map<std::string, std::uint64_t>& constants);

struct VarDesc {
  std::string name;
  std::uint64_t size = 0;
  bool is_pointer = false;
  std::optional<std::uint64_t> pointee_size;  // size known from the pointer type
  std::optional<VarAnnotation> annotation;

  friend bool operator==(const VarDesc&, const VarDesc&) = default;
};

// Where an adversarial probe points.
struct ProbeTarget {
  enum class Kind : std::uint8_t {
    Param,     // address held in one of the prober's own pointer params
    Var,       // a variable in the newest live frame of `function`
    Frame,     // offset from the low end of the newest live frame of `function`
    Pointee,   // the heap object last allocated into `function`.`name`
    Absolute,  // raw address
  };
  Kind kind = Kind::Absolute;
  std::string function;
  std::string name;
  std::int64_t offset = 0;
  Address address = 0;

  friend bool operator==(const ProbeTarget&, const ProbeTarget&) = default;
};

struct Assign {
  std::string var;
  bool deref = false;  // write through the pointer held in `var`
  std::uint64_t offset = 0;
  Bytes data;

  friend bool operator==(const Assign&, const Assign&) = default;
};

struct HeapAlloc {
  std::string var;
  SizeExpr size;

  friend bool operator==(const HeapAlloc&, const HeapAlloc&) = default;
};

struct CallArg {
  enum class Kind : std::uint8_t { Value, AddressOf };
  Kind kind = Kind::Value;
  std::string var;

  friend bool operator==(const CallArg&, const CallArg&) = default;
};

struct Call {
  std::string callee;
  std::vector<CallArg> args;

  friend bool operator==(const Call&, const Call&) = default;
};

struct ReadProbe {
  ProbeTarget target;
  std::uint64_t len = 0;

  friend bool operator==(const ReadProbe&, const ReadProbe&) = default;
};

struct WriteProbe {
  ProbeTarget target;
  Bytes data;

  friend bool operator==(const WriteProbe&, const WriteProbe&) = default;
};

// A protection call issued directly by untrusted code.
struct Forge {
  Syscall call = Syscall::RegisterMemory;
  ProbeTarget target;  // region base for the register_memory* calls
  std::uint64_t len = 0;
  bool read_only = false;
  bool all = true;

  friend bool operator==(const Forge&, const Forge&) = default;
};

// Which row of the API-to-syscall mapping produced an inserted call.
enum class ApiRule : std::uint8_t {
  UntrustedFunction = 1,
  SensitiveFunction,
  FinegrainedFunction,
  SensitiveVar,
  NotSensitiveVar,
  WriteSensitiveVar,
  WriteSensitiveVarException,
  SensitivePointee,
  WriteSensitivePointee,
  AddressArgument,  // &local passed to an untrusted callee
};

std::string_view to_string(ApiRule rule);
std::optional<ApiRule> parse_rule(std::string_view name);

// A protection call inserted by the instrumenter.
struct VaultCall {
  Syscall call = Syscall::StartProtect;
  bool all = true;           // register_stack
  std::string var;           // register_memory*: the variable
  bool pointee = false;      // register the object `var` points to
  SizeExpr len;              // register_memory*
  bool read_only = false;    // register_memory*
  ApiRule rule = ApiRule::UntrustedFunction;

  friend bool operator==(const VaultCall&, const VaultCall&) = default;
};

struct Return {
  friend bool operator==(const Return&, const Return&) = default;
};

using Statement = std::variant<Assign, HeapAlloc, Call, ReadProbe, WriteProbe, Forge, VaultCall, Return>;

enum class Sensitivity : std::uint8_t { None, All, Finegrained };
enum class Trust : std::uint8_t { Trusted, Untrusted };

struct FunctionDesc {
  std::string name;
  std::optional<Annotation> annotation;  // inline function attribute
  bool external = false;                 // library code, not compiled here
  Sensitivity sensitivity = Sensitivity::None;
  Trust trust = Trust::Trusted;
  std::vector<VarDesc> params;
  std::vector<VarDesc> locals;
  std::vector<Statement> body;

  const VarDesc* find_var(std::string_view var) const;
  // Params then locals, in declaration order.
  std::vector<const VarDesc*> vars() const;

  friend bool operator==(const FunctionDesc&, const FunctionDesc&) = default;
};

struct Program {
  bool instrumented = false;
  std::map<std::string, std::uint64_t> constants;
  std::vector<FunctionDesc> functions;

  const FunctionDesc* find(std::string_view name) const;
  std::vector<std::string> function_names() const;

  friend bool operator==(const Program&, const Program&) = default;
};

// JSON program documents. Throws ProgramError with a location prefix.
Program parse_program(std::string_view text);
std::string emit_program(const Program& program);

// Frame layout shared by the executor and tests: 16 metadata bytes at the top
// of the frame, then params and locals packed downward in declaration order.
struct FrameLayout {
  std::uint64_t size = 0;
  std::map<std::string, std::uint64_t, std::less<>> offsets;  // from frame top

  std::uint64_t offset_of(std::string_view var) const;
};
FrameLayout frame_layout(const FunctionDesc& fn);

// C-like rendering of a function, one statement per line.
std::vector<std::string> render_function(const FunctionDesc& fn);
// Only the protection calls and ordinary calls of a function, e.g.
// "register_stack(all=True)", "lib_func(&age)".
std::vector<std::string> call_sequence(const FunctionDesc& fn);
std::string render_statement(const Statement& st);

}  // namespace stackvault
