#include "recast/sid.hpp"

#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "recast/rng.hpp"

using namespace recast;

TEST_CASE("render_sid produces canonical text with three tokens") {
  const ResponseText r = render_sid(SemanticId{3, 5, 7});
  CHECK(r.text == "<a_3><b_5><c_7>");
  CHECK(r.token_length == 3);
  CHECK(render_sid(SemanticId{0, 0, 0}).text == "<a_0><b_0><c_0>");
  CHECK(render_sid(SemanticId{12, 0, 345}).text == "<a_12><b_0><c_345>");
}

TEST_CASE("parse_response extracts well-formed triples") {
  const CatalogShape shape{8, 8, 8};
  CHECK(parse_response("<a_3><b_5><c_7>", shape) ==
        make_id_set({{3, 5, 7}}));
  CHECK(parse_response("<a_1><b_2><c_3><a_4><b_5><c_6>", shape) ==
        make_id_set({{1, 2, 3}, {4, 5, 6}}));
  CHECK(parse_response("", shape).empty());
  CHECK(parse_response("no tokens at all", shape).empty());
}

TEST_CASE("parse_response round-trips every catalog item") {
  const CatalogShape shape{3, 4, 5};
  for (int idx = 0; idx < shape.item_count(); ++idx) {
    const SemanticId id = shape.id_at(idx);
    const IdSet parsed = parse_response(render_sid(id).text, shape);
    CHECK(parsed == make_id_set({id}));
  }
}

TEST_CASE("greedy scan drops a stray level-a token and recovers") {
  const CatalogShape shape{8, 8, 8};
  // The leading <a_1> cannot start a triple (next token is another a), so
  // the scan advances one token and matches <a_2><b_3><c_4>.
  CHECK(parse_response("<a_1><a_2><b_3><c_4>", shape) ==
        make_id_set({{2, 3, 4}}));
  // Out-of-order levels never match.
  CHECK(parse_response("<b_1><c_2><a_3>", shape).empty());
  CHECK(parse_response("<c_1><b_2><a_3>", shape).empty());
}

TEST_CASE("non-adjacent tokens split runs") {
  const CatalogShape shape{8, 8, 8};
  CHECK(parse_response("<a_1> <b_2><c_3>", shape).empty());
  CHECK(parse_response("<a_1><b_2> <c_3>", shape).empty());
  CHECK(parse_response("<a_1><b_2>x<c_3>", shape).empty());
  // A run boundary resets the scan; the second run parses on its own.
  CHECK(parse_response("<a_1><b_2> <a_4><b_5><c_6>", shape) ==
        make_id_set({{4, 5, 6}}));
}

TEST_CASE("out-of-bounds triples are consumed, not clamped") {
  const CatalogShape shape{8, 8, 8};
  CHECK(parse_response("<a_9><b_0><c_0>", shape).empty());
  CHECK(parse_response("<a_0><b_8><c_0>", shape).empty());
  CHECK(parse_response("<a_0><b_0><c_8>", shape).empty());
  // The dropped triple still consumes its tokens, so the scan resumes
  // cleanly after it.
  CHECK(parse_response("<a_9><b_0><c_0><a_1><b_1><c_1>", shape) ==
        make_id_set({{1, 1, 1}}));
  // Huge indices stay out of bounds for every shape.
  CHECK(parse_response("<a_99999999999999999999><b_0><c_0>", shape).empty());
}

TEST_CASE("malformed fragments are skipped") {
  const CatalogShape shape{8, 8, 8};
  CHECK(parse_response("<a_><b_2><c_3>", shape).empty());
  CHECK(parse_response("<d_1><b_2><c_3>", shape).empty());
  CHECK(parse_response("<a_1<b_2><c_3>", shape).empty());
  CHECK(parse_response("a_1><b_2><c_3>", shape).empty());
  // A malformed head does not hide a later well-formed triple.
  CHECK(parse_response("<a_x><a_1><b_2><c_3>", shape) ==
        make_id_set({{1, 2, 3}}));
}

TEST_CASE("duplicate triples collapse to one id") {
  const CatalogShape shape{8, 8, 8};
  const IdSet parsed =
      parse_response("<a_1><b_1><c_1><a_1><b_1><c_1>", shape);
  CHECK(parsed.size() == 1);
  CHECK(parsed.contains(SemanticId{1, 1, 1}));
}

TEST_CASE("count_grammar_tokens counts only well-formed tokens") {
  CHECK(count_grammar_tokens("") == 0);
  CHECK(count_grammar_tokens("<a_3><b_5><c_7>") == 3);
  CHECK(count_grammar_tokens("xx<a_1>yy<c_2>") == 2);
  CHECK(count_grammar_tokens("<a_><d_1>a_1>") == 0);
  // Overflowed digits still form a token.
  CHECK(count_grammar_tokens("<a_99999999999999999999>") == 1);
  CHECK(make_response_text("<a_1> <b_2>").token_length == 2);
}

TEST_CASE("parse is total over arbitrary bytes") {
  const CatalogShape shape{8, 8, 8};
  Rng rng(seed_for(99, RngPurpose::dataset_target));
  for (int trial = 0; trial < 200; ++trial) {
    std::string text;
    const std::size_t len = rng.next_index(64);
    for (std::size_t i = 0; i < len; ++i) {
      static const char alphabet[] = "<>abc_0123456789 \t\n\xff\x00x";
      text.push_back(alphabet[rng.next_index(sizeof(alphabet) - 1)]);
    }
    CHECK_NOTHROW((void)parse_response(text, shape));
  }
}

TEST_CASE("appending text never removes parsed ids") {
  const CatalogShape shape{4, 4, 4};
  Rng rng(seed_for(100, RngPurpose::dataset_target));
  static const char* pieces[] = {"<a_0>", "<a_1>", "<b_2>", "<c_3>", "<c_0>",
                                 " ",     "<a_",   "9>",    "x",     "<b_1>"};
  for (int trial = 0; trial < 500; ++trial) {
    std::string s;
    std::string t;
    const std::size_t ns = rng.next_index(8);
    const std::size_t nt = rng.next_index(8);
    for (std::size_t i = 0; i < ns; ++i) s += pieces[rng.next_index(10)];
    for (std::size_t i = 0; i < nt; ++i) t += pieces[rng.next_index(10)];
    const IdSet before = parse_response(s, shape);
    const IdSet after = parse_response(s + t, shape);
    for (const SemanticId& id : before.ids) CHECK(after.contains(id));
  }
}

TEST_CASE("make_id_set sorts and dedupes") {
  const IdSet s = make_id_set({{2, 0, 0}, {1, 2, 3}, {1, 2, 3}, {0, 9, 9}});
  REQUIRE(s.size() == 3);
  CHECK(s.ids[0] == SemanticId{0, 9, 9});
  CHECK(s.ids[1] == SemanticId{1, 2, 3});
  CHECK(s.ids[2] == SemanticId{2, 0, 0});
  CHECK(s.contains(SemanticId{1, 2, 3}));
  CHECK_FALSE(s.contains(SemanticId{1, 2, 4}));
}

TEST_CASE("IdSet::insert preserves sorted-unique order") {
  IdSet s;
  s.insert({1, 1, 1});
  s.insert({0, 0, 0});
  s.insert({1, 1, 1});
  s.insert({0, 2, 0});
  REQUIRE(s.size() == 3);
  CHECK(s.ids[0] == SemanticId{0, 0, 0});
  CHECK(s.ids[1] == SemanticId{0, 2, 0});
  CHECK(s.ids[2] == SemanticId{1, 1, 1});
}

TEST_CASE("CatalogShape indexing round-trips") {
  const CatalogShape shape{3, 4, 5};
  CHECK(shape.item_count() == 60);
  for (int idx = 0; idx < shape.item_count(); ++idx) {
    const SemanticId id = shape.id_at(idx);
    CHECK(shape.contains(id));
    CHECK(shape.index_of(id) == idx);
  }
  CHECK(shape.index_of(SemanticId{0, 0, 0}) == 0);
  CHECK(shape.index_of(SemanticId{0, 0, 1}) == 1);
  CHECK(shape.index_of(SemanticId{0, 1, 0}) == 5);
  CHECK(shape.index_of(SemanticId{1, 0, 0}) == 20);
  CHECK_FALSE(shape.contains(SemanticId{3, 0, 0}));
  CHECK_FALSE(shape.contains(SemanticId{0, -1, 0}));
}

TEST_CASE("CatalogShape::validate rejects non-positive level counts") {
  auto validate = [](int a, int b, int c) { CatalogShape{a, b, c}.validate(); };
  CHECK_NOTHROW(validate(1, 1, 1));
  CHECK_NOTHROW(validate(8, 8, 8));
  CHECK_THROWS_AS(validate(0, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(validate(1, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(validate(1, 1, 0), std::invalid_argument);
  CHECK_THROWS_AS(validate(-2, 3, 3), std::invalid_argument);
}
