#pragma once

// Semantic-ID domain: three-level item identifiers, the textual response
// grammar, and the parser that extracts ID sets from generated text.
//
// Grammar (bit-exact):
//   token  = '<' ('a'|'b'|'c') '_' decimal-digits '>'
//   id     = exactly three consecutive tokens with levels a, b, c in order
// Tokens are consecutive only when adjacent in the raw text; whitespace and
// any other characters separate runs and are otherwise ignored.

#include <compare>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace recast {

struct SemanticId {
  int a = 0;
  int b = 0;
  int c = 0;

  auto operator<=>(const SemanticId&) const = default;
};

// Cardinality of the three-level ID space.
struct CatalogShape {
  int n_a = 1;
  int n_b = 1;
  int n_c = 1;

  bool operator==(const CatalogShape&) const = default;

  int item_count() const { return n_a * n_b * n_c; }

  bool contains(const SemanticId& id) const {
    return id.a >= 0 && id.a < n_a && id.b >= 0 && id.b < n_b && id.c >= 0 &&
           id.c < n_c;
  }

  // Row-major flattening, (a, b, c) -> a*n_b*n_c + b*n_c + c.
  int index_of(const SemanticId& id) const {
    return (id.a * n_b + id.b) * n_c + id.c;
  }

  SemanticId id_at(int index) const {
    return SemanticId{index / (n_b * n_c), (index / n_c) % n_b, index % n_c};
  }

  // Throws std::invalid_argument unless all level counts are >= 1.
  void validate() const;
};

// Deduplicated set of SemanticIds, kept sorted (lexicographic on (a,b,c)).
struct IdSet {
  std::vector<SemanticId> ids;

  bool empty() const { return ids.empty(); }
  std::size_t size() const { return ids.size(); }
  bool contains(const SemanticId& id) const;
  // Inserts preserving sorted-unique order.
  void insert(const SemanticId& id);

  bool operator==(const IdSet&) const = default;
};

IdSet make_id_set(std::vector<SemanticId> ids);

// Response text plus its grammar-token count.
struct ResponseText {
  std::string text;
  std::size_t token_length = 0;

  bool operator==(const ResponseText&) const = default;
};

ResponseText make_response_text(std::string text);

// Number of grammar tokens in the text (malformed fragments count zero).
std::size_t count_grammar_tokens(std::string_view text);

// Canonical textual form "<a_i><b_j><c_k>" with decimal indices.
ResponseText render_sid(const SemanticId& id);

// Extracts every well-formed, in-bounds ID triple found as a contiguous
// token run. Malformed fragments, out-of-bounds indices, and incomplete
// triples are skipped; duplicates collapse. Total: any input yields a set,
// possibly empty.
IdSet parse_response(std::string_view text, const CatalogShape& shape);

}  // namespace recast
