#pragma once

#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "stackvault/program.hpp"

namespace stackvault {

class ListError : public std::runtime_error {
 public:
  ListError(std::string_view list, std::size_t line, const std::string& what)
      : std::runtime_error(std::string(list) + " line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Simplified prototype: a name and, optionally, the parameter count.
struct Prototype {
  std::string name;
  std::optional<std::size_t> arity;

  bool matches(std::string_view fn, std::size_t params) const {
    return name == fn && (!arity || *arity == params);
  }
  friend bool operator==(const Prototype&, const Prototype&) = default;
};

struct FunctionLists {
  std::vector<Prototype> untrusted;
  std::set<std::string> sensitive;

  bool is_untrusted(std::string_view fn, std::size_t params) const;
};

// Line-oriented lists: `name(arity)` or `name`, `#` comments. Throws
// ListError on malformed lines and on names present in both lists.
FunctionLists parse_lists(std::string_view untrusted_doc, std::string_view sensitive_doc);

class InstrumentError : public std::runtime_error {
 public:
  explicit InstrumentError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

// How one annotation or call site was handled.
struct Provenance {
  std::string function;
  std::string subject;     // variable, callee or the function itself
  std::string source;      // annotation string or "untrusted call"
  std::optional<ApiRule> rule;
  std::string outcome;     // rendered inserted call, or why nothing was inserted
};

struct InstrumentResult {
  Program program;
  std::vector<Provenance> provenance;
};

// Inserts protection calls into every function compiled here (functions that
// are neither untrusted nor external). Throws InstrumentError listing every
// problem found.
InstrumentResult instrument(const Program& program, const FunctionLists& lists);

}  // namespace stackvault
