#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "stackvault/types.hpp"

namespace stackvault {

// Contiguous instruction span of one named function.
struct FunctionSpan {
  std::string name;
  Address lo = 0;
  Address hi = 0;  // exclusive
  FunctionId id;
};

class ImageMapError : public std::runtime_error {
 public:
  ImageMapError(std::size_t line, const std::string& what)
      : std::runtime_error("image map line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Function identity mapping table. Immutable once built; resolve() depends on
// nothing but the program counter, so a caller cannot claim another identity.
class IdentityTable {
 public:
  IdentityTable() = default;

  // Assigns ids in list order. Throws ImageMapError on empty, duplicate or
  // overlapping spans and on spans outside the text region. `lines` maps span
  // index to source line for error messages; defaults to index + 1.
  static IdentityTable from_spans(std::vector<FunctionSpan> spans,
                                  std::vector<std::size_t> lines = {});

  std::optional<FunctionId> resolve(Address pc) const;
  std::optional<FunctionId> find(std::string_view name) const;

  const FunctionSpan& span(FunctionId id) const { return spans_.at(id.value); }
  const std::vector<FunctionSpan>& spans() const { return spans_; }
  std::size_t size() const { return spans_.size(); }
  bool empty() const { return spans_.empty(); }

 private:
  std::vector<FunctionSpan> spans_;
  std::vector<std::uint32_t> by_lo_;  // span indices sorted by lo
  std::unordered_map<std::string, FunctionId> by_name_;
};

// Parses `name lo_hex hi_hex` lines; `#` starts a comment.
IdentityTable load_image_map(std::string_view source);

std::string format_image_map(const IdentityTable& table);

// Lays out the given functions back to back from kTextBase + 0x1000, each
// with a span of span_bytes.
IdentityTable synthesize_image(const std::vector<std::string>& names, std::uint64_t span_bytes = 0x100);

}  // namespace stackvault
