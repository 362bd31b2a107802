#include "recast/sid.hpp"

#include <algorithm>
#include <cstdint>
#include <stdexcept>

namespace recast {

void CatalogShape::validate() const {
  // A single-item catalog is legal; degenerate cases exercise the
  // all-hit/skip paths.
  if (n_a < 1 || n_b < 1 || n_c < 1) {
    throw std::invalid_argument("CatalogShape: all level counts must be >= 1");
  }
}

bool IdSet::contains(const SemanticId& id) const {
  return std::binary_search(ids.begin(), ids.end(), id);
}

void IdSet::insert(const SemanticId& id) {
  auto it = std::lower_bound(ids.begin(), ids.end(), id);
  if (it == ids.end() || *it != id) ids.insert(it, id);
}

IdSet make_id_set(std::vector<SemanticId> ids) {
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return IdSet{std::move(ids)};
}

namespace {

struct Token {
  char level;       // 'a', 'b' or 'c'
  std::int64_t value;  // -1 when the digit string overflowed
  std::size_t begin;
  std::size_t end;  // one past '>'
};

// Tries to match one grammar token starting at pos. Returns false on any
// malformed fragment; the caller then resumes scanning after pos.
bool match_token(std::string_view text, std::size_t pos, Token& out) {
  std::size_t i = pos;
  if (i >= text.size() || text[i] != '<') return false;
  ++i;
  if (i >= text.size()) return false;
  const char level = text[i];
  if (level != 'a' && level != 'b' && level != 'c') return false;
  ++i;
  if (i >= text.size() || text[i] != '_') return false;
  ++i;
  const std::size_t digits_begin = i;
  std::int64_t value = 0;
  bool overflow = false;
  while (i < text.size() && text[i] >= '0' && text[i] <= '9') {
    if (value > (INT64_MAX - 9) / 10) {
      overflow = true;  // oversized index: token stays well-formed, value is
    } else {            // out of every shape's bounds
      value = value * 10 + (text[i] - '0');
    }
    ++i;
  }
  if (i == digits_begin) return false;
  if (i >= text.size() || text[i] != '>') return false;
  out = Token{level, overflow ? -1 : value, pos, i + 1};
  return true;
}

}  // namespace

std::size_t count_grammar_tokens(std::string_view text) {
  std::size_t count = 0;
  std::size_t pos = 0;
  Token tok;
  while (pos < text.size()) {
    if (match_token(text, pos, tok)) {
      ++count;
      pos = tok.end;
    } else {
      ++pos;
    }
  }
  return count;
}

ResponseText make_response_text(std::string text) {
  const std::size_t tokens = count_grammar_tokens(text);
  return ResponseText{std::move(text), tokens};
}

ResponseText render_sid(const SemanticId& id) {
  std::string text = "<a_" + std::to_string(id.a) + "><b_" +
                     std::to_string(id.b) + "><c_" + std::to_string(id.c) +
                     ">";
  return ResponseText{std::move(text), 3};
}

IdSet parse_response(std::string_view text, const CatalogShape& shape) {
  // Tokenize, splitting into runs of text-adjacent tokens.
  std::vector<Token> tokens;
  std::vector<std::size_t> run_start;  // index into tokens
  std::size_t pos = 0;
  Token tok;
  while (pos < text.size()) {
    if (match_token(text, pos, tok)) {
      if (tokens.empty() || tokens.back().end != tok.begin) {
        run_start.push_back(tokens.size());
      }
      tokens.push_back(tok);
      pos = tok.end;
    } else {
      ++pos;
    }
  }
  run_start.push_back(tokens.size());

  // Greedy left-to-right scan of each run for (a, b, c) triples. A
  // structurally complete triple consumes its three tokens even when an
  // index is out of bounds (the triple is then dropped, not clamped).
  IdSet result;
  for (std::size_t r = 0; r + 1 < run_start.size(); ++r) {
    const std::size_t end = run_start[r + 1];
    std::size_t i = run_start[r];
    while (i + 3 <= end) {
      if (tokens[i].level == 'a' && tokens[i + 1].level == 'b' &&
          tokens[i + 2].level == 'c') {
        const std::int64_t a = tokens[i].value;
        const std::int64_t b = tokens[i + 1].value;
        const std::int64_t c = tokens[i + 2].value;
        if (a >= 0 && b >= 0 && c >= 0 && a <= INT32_MAX && b <= INT32_MAX &&
            c <= INT32_MAX) {
          const SemanticId id{static_cast<int>(a), static_cast<int>(b),
                              static_cast<int>(c)};
          if (shape.contains(id)) result.insert(id);
        }
        i += 3;
      } else {
        ++i;
      }
    }
  }
  return result;
}

}  // namespace recast
