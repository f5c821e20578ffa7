#include "doctest.h"

#include <cstdint>
#include <random>

#include "sweepmill/value.hpp"

using namespace sweepmill;

TEST_CASE("scalar inference follows the written form") {
    CHECK(infer_value("42").is_integer());
    CHECK(infer_value("42").as_integer() == 42);
    CHECK(infer_value("-7").as_integer() == -7);
    CHECK(infer_value("3.25").is_real());
    CHECK(infer_value("1e3").is_real());
    CHECK(infer_value("true").as_boolean());
    CHECK(infer_value("FALSE").as_boolean() == false);
    CHECK(infer_value("hello world").is_string());
    // yes/no stay strings; only true/false are booleans
    CHECK(infer_value("yes").is_string());
    CHECK(infer_value("no").is_string());
}

TEST_CASE("quoted scalars are always strings") {
    Value v = infer_value("\"42\"");
    CHECK(v.is_string());
    CHECK(v.as_string() == "42");
    CHECK(infer_value("'true'").is_string());
    CHECK(infer_value("16", /*quoted=*/true).is_string());
}

TEST_CASE("range syntax start:step:end") {
    Value v = infer_value("1:1:8");
    REQUIRE(v.is_range());
    CHECK(v.as_range().start == 1);
    CHECK(v.as_range().step == 1);
    CHECK(v.as_range().end == 8);
    CHECK(v.as_range().integral);

    Value r = infer_value("0.5:0.25:1.5");
    REQUIRE(r.is_range());
    CHECK_FALSE(r.as_range().integral);

    // non-numeric triples and deeper colon chains are strings
    CHECK(infer_value("a:b:c").is_string());
    CHECK(infer_value("1:2:3:4").is_string());
    CHECK(infer_value("1:2").is_string());
}

TEST_CASE("range expansion") {
    auto xs = expand_range(infer_value("1:1:8").as_range());
    REQUIRE(xs.size() == 8);
    for (int i = 0; i < 8; ++i) CHECK(xs[static_cast<std::size_t>(i)].as_integer() == i + 1);

    auto down = expand_range(infer_value("8:-2:1").as_range());
    REQUIRE(down.size() == 4);
    CHECK(down[0].as_integer() == 8);
    CHECK(down[3].as_integer() == 2);

    // end included when the step lands on it within tolerance
    auto reals = expand_range(infer_value("0.0:0.1:1.0").as_range());
    CHECK(reals.size() == 11);
    CHECK(reals.back().as_real() == doctest::Approx(1.0));

    CHECK_THROWS_AS(expand_range(Range{1, 0, 8, true}), BadRange);
    CHECK_THROWS_AS(expand_range(Range{1, -1, 8, true}), BadRange);
    // single-point range is fine whatever the step direction
    CHECK(expand_range(Range{3, 1, 3, true}).size() == 1);
}

TEST_CASE("integer range length follows the closed form") {
    std::mt19937 gen(99);
    for (int iter = 0; iter < 200; ++iter) {
        std::int64_t start = static_cast<std::int64_t>(gen() % 41) - 20;
        std::int64_t step = static_cast<std::int64_t>(gen() % 5) + 1;
        std::int64_t span = static_cast<std::int64_t>(gen() % 50);
        std::int64_t end = start + span;
        auto xs = expand_range(Range{static_cast<double>(start), static_cast<double>(step),
                                     static_cast<double>(end), true});
        CHECK(static_cast<std::int64_t>(xs.size()) == (end - start) / step + 1);
    }
}

TEST_CASE("flow lists, including nesting") {
    Value v = infer_value("[16, 32, 64]");
    REQUIRE(v.is_list());
    REQUIRE(v.as_list().size() == 3);
    CHECK(v.as_list()[1].as_integer() == 32);

    Value nested = infer_value("[[a, b], [c, d]]");
    REQUIRE(nested.is_list());
    REQUIRE(nested.as_list()[0].is_list());
    CHECK(nested.as_list()[0].as_list()[1].as_string() == "b");

    Value mixed = infer_value("[1, x, 2.5, true]");
    CHECK(mixed.as_list()[0].is_integer());
    CHECK(mixed.as_list()[1].is_string());
    CHECK(mixed.as_list()[2].is_real());
    CHECK(mixed.as_list()[3].is_boolean());

    CHECK(infer_value("[]").as_list().empty());
    CHECK(infer_value("[ 'a, b', c ]").as_list().size() == 2);
}

TEST_CASE("canonical rendering re-infers to an equal value") {
    auto roundtrips = [](const Value& v) {
        Value again = infer_value(Value(v).render_wdl());
        CHECK(again == v);
    };
    roundtrips(Value(std::int64_t{42}));
    roundtrips(Value(2.5));
    roundtrips(Value(1.0)); // needs the trailing .0 to stay real
    roundtrips(Value(true));
    roundtrips(Value(std::string("plain")));
    roundtrips(Value(std::string("16")));        // quoted to stay a string
    roundtrips(Value(std::string("1:1:8")));     // quoted to avoid range inference
    roundtrips(Value(std::string("")));
    roundtrips(Value(Range{1, 1, 8, true}));
    roundtrips(Value(Range{1.0, 1.0, 8.0, false}));
    roundtrips(Value(ValueList{Value(std::int64_t{1}), Value(std::string("two"))}));
}

TEST_CASE("interpolation string form") {
    CHECK(Value(std::int64_t{16}).canonical_string() == "16");
    CHECK(Value(0.5).canonical_string() == "0.5");
    CHECK(Value(1.0).canonical_string() == "1"); // shortest round-trip form
    CHECK(Value(true).canonical_string() == "true");
    CHECK(Value(std::string("abc")).canonical_string() == "abc");
}
