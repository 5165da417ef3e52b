#include "stackvault/identity.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "stackvault/memory.hpp"

namespace stackvault {

namespace {

std::optional<Address> parse_hex(std::string_view tok) {
  if (tok.size() > 2 && tok[0] == '0' && (tok[1] == 'x' || tok[1] == 'X')) tok.remove_prefix(2);
  if (tok.empty()) return std::nullopt;
  Address v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v, 16);
  if (ec != std::errc{} || ptr != tok.data() + tok.size()) return std::nullopt;
  return v;
}

}  // namespace

IdentityTable IdentityTable::from_spans(std::vector<FunctionSpan> spans,
                                        std::vector<std::size_t> lines) {
  auto line = [&](std::size_t i) { return i < lines.size() ? lines[i] : i + 1; };
  IdentityTable table;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    FunctionSpan& s = spans[i];
    s.id = FunctionId{static_cast<std::uint32_t>(i)};
    if (s.lo >= s.hi) throw ImageMapError(line(i), "empty span for " + s.name);
    if (!kTextRegion.contains(Region{s.lo, s.hi - s.lo})) {
      throw ImageMapError(line(i), "span of " + s.name + " lies outside the text region");
    }
    if (!table.by_name_.emplace(s.name, s.id).second) {
      throw ImageMapError(line(i), "duplicate function " + s.name);
    }
  }
  table.by_lo_.resize(spans.size());
  for (std::uint32_t i = 0; i < spans.size(); ++i) table.by_lo_[i] = i;
  std::sort(table.by_lo_.begin(), table.by_lo_.end(),
            [&](std::uint32_t a, std::uint32_t b) { return spans[a].lo < spans[b].lo; });
  for (std::size_t k = 1; k < table.by_lo_.size(); ++k) {
    const FunctionSpan& prev = spans[table.by_lo_[k - 1]];
    const FunctionSpan& cur = spans[table.by_lo_[k]];
    if (cur.lo < prev.hi) {
      throw ImageMapError(line(table.by_lo_[k]), "span of " + cur.name + " overlaps " + prev.name);
    }
  }
  table.spans_ = std::move(spans);
  return table;
}

std::optional<FunctionId> IdentityTable::resolve(Address pc) const {
  auto it = std::upper_bound(by_lo_.begin(), by_lo_.end(), pc,
                             [this](Address a, std::uint32_t idx) { return a < spans_[idx].lo; });
  if (it == by_lo_.begin()) return std::nullopt;
  const FunctionSpan& s = spans_[*std::prev(it)];
  if (pc < s.hi) return s.id;
  return std::nullopt;
}

std::optional<FunctionId> IdentityTable::find(std::string_view name) const {
  if (auto it = by_name_.find(std::string(name)); it != by_name_.end()) return it->second;
  return std::nullopt;
}

IdentityTable load_image_map(std::string_view source) {
  std::vector<FunctionSpan> spans;
  std::vector<std::size_t> line_of;
  std::istringstream in{std::string(source)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string name, lo, hi, extra;
    if (!(fields >> name)) continue;
    if (!(fields >> lo >> hi) || (fields >> extra)) {
      throw ImageMapError(lineno, "expected `name lo_hex hi_hex`");
    }
    auto l = parse_hex(lo);
    auto h = parse_hex(hi);
    if (!l || !h) throw ImageMapError(lineno, "bad hex address");
    spans.push_back(FunctionSpan{name, *l, *h, {}});
    line_of.push_back(lineno);
  }
  return IdentityTable::from_spans(std::move(spans), std::move(line_of));
}

std::string format_image_map(const IdentityTable& table) {
  std::string out;
  for (const FunctionSpan& s : table.spans()) {
    out += s.name + " " + hex(s.lo) + " " + hex(s.hi) + "\n";
  }
  return out;
}

IdentityTable synthesize_image(const std::vector<std::string>& names, std::uint64_t span_bytes) {
  std::vector<FunctionSpan> spans;
  Address next = kTextBase + 0x1000;
  for (const std::string& n : names) {
    spans.push_back(FunctionSpan{n, next, next + span_bytes, {}});
    next += span_bytes;
  }
  return IdentityTable::from_spans(std::move(spans));
}

}  // namespace stackvault
