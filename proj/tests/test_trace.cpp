#include "doctest.h"

#include <random>

#include "deltasim/trace.hpp"
#include "helpers.hpp"

using namespace deltasim;

TEST_CASE("parse_trace accepts a minimal trace") {
  std::string text = R"({"name":"mini","nodes":[{"id":0,"name":"x",)"
                     R"("compute_cost_us":5,"output_bytes":100,"parents":[],)"
                     R"("uncomputable":true,"evict_pinned":true,)"
                     R"("offload_pinned":false}],)"
                     R"("schedule":[{"node":0,"phase":"F","kind":"P"}]})";
  Trace t = parse_trace(text);
  CHECK(t.nodes.size() == 1);
  CHECK(t.schedule.size() == 1);
  CHECK(t.nodes[0].uncomputable);
  CHECK(serialize_trace(t) == text);
}

TEST_CASE("parse_trace rejects schema problems") {
  CHECK_THROWS_AS(parse_trace("not json"), SchemaError);
  CHECK_THROWS_AS(parse_trace("[]"), SchemaError);
  CHECK_THROWS_AS(parse_trace(R"({"name":"x","nodes":[]})"), SchemaError);
  // unknown field
  CHECK_THROWS_AS(
      parse_trace(
          R"({"name":"x","nodes":[],"schedule":[],"extra":1})"),
      SchemaError);
  // wrong type
  CHECK_THROWS_AS(
      parse_trace(
          R"({"name":"x","nodes":[{"id":-3,"name":"a","compute_cost_us":1,)"
          R"("output_bytes":1,"parents":[],"uncomputable":false,)"
          R"("evict_pinned":false,"offload_pinned":false}],"schedule":[]})"),
      SchemaError);
}

TEST_CASE("parse_trace reports a dangling schedule reference") {
  std::string text = R"({"name":"x","nodes":[],)"
                     R"("schedule":[{"node":7,"phase":"F","kind":"U"}]})";
  try {
    parse_trace(text);
    FAIL("expected ValidationErrorEx");
  } catch (const ValidationErrorEx& e) {
    CHECK(std::string(e.what()) ==
          "event 0 references undeclared node 7");
  }
}

TEST_CASE("bundled linear8 fixture parses to 8 nodes and 23 events") {
  Trace t = parse_trace(testutil::read_file(testutil::data_path(
      "linear8.json")));
  CHECK(t.nodes.size() == 8);
  CHECK(t.schedule.size() == 23);
  CHECK(validate_trace(t).empty());
}

TEST_CASE("validate_trace flags invariant breaks") {
  SUBCASE("valid chain is clean") {
    CHECK(validate_trace(gen_linear_chain(5, 100, 5, 0)).empty());
  }
  SUBCASE("self-parent") {
    Trace t;
    t.name = "bad";
    OpNode n = testutil::make_node(0, 10, 1, {0});
    t.nodes.push_back(n);
    auto v = validate_trace(t);
    REQUIRE(v.size() == 1);
    CHECK(v[0].code == TraceViolationCode::CycleOrForwardRef);
    CHECK(v[0].node == 0);
  }
  SUBCASE("uncomputable with a parent") {
    Trace t;
    t.name = "bad";
    t.nodes.push_back(testutil::make_node(0, 10, 1));
    OpNode n = testutil::make_node(1, 10, 1, {0}, true);
    t.nodes.push_back(n);
    auto v = validate_trace(t);
    REQUIRE(v.size() == 1);
    CHECK(v[0].code == TraceViolationCode::UncomputableHasParents);
  }
  SUBCASE("both pins warn but stay valid") {
    Trace t;
    t.name = "warn";
    OpNode n = testutil::make_node(0, 10, 1);
    n.evict_pinned = true;
    n.offload_pinned = true;
    t.nodes.push_back(n);
    auto v = validate_trace(t);
    REQUIRE(v.size() == 1);
    CHECK(v[0].code == TraceViolationCode::BothPinned);
    CHECK(v[0].severity == Severity::Warning);
    CHECK(trace_is_valid(t));
  }
  SUBCASE("use before produce, duplicate produce, phase order") {
    Trace t;
    t.name = "bad";
    t.nodes.push_back(testutil::make_node(0, 10, 1, {}, true));
    t.schedule.push_back({0, Phase::Forward, AccessKind::Use});
    t.schedule.push_back({0, Phase::Backward, AccessKind::Produce});
    t.schedule.push_back({0, Phase::Forward, AccessKind::Produce});
    auto v = validate_trace(t);
    bool use_before = false, dup = false, order = false;
    for (const auto& x : v) {
      use_before |= x.code == TraceViolationCode::UseBeforeProduce;
      dup |= x.code == TraceViolationCode::DuplicateProduce;
      order |= x.code == TraceViolationCode::ForwardAfterBackward;
    }
    CHECK(use_before);
    CHECK(dup);
    CHECK(order);
  }
}

TEST_CASE("gen_linear_chain shapes") {
  SUBCASE("degenerate chain") {
    Trace t = gen_linear_chain(1, 100, 5, 0);
    REQUIRE(t.nodes.size() == 1);
    REQUIRE(t.schedule.size() == 2);
    CHECK(t.schedule[0] ==
          AccessEvent{0, Phase::Forward, AccessKind::Produce});
    CHECK(t.schedule[1] == AccessEvent{0, Phase::Backward, AccessKind::Use});
  }
  SUBCASE("n = 0 rejected") {
    CHECK_THROWS_AS(gen_linear_chain(0, 1, 1, 0), ArgumentError);
  }
  SUBCASE("serialization matches the frozen fixture byte for byte") {
    Trace t = gen_linear_chain(8, 100, 5, 0);
    CHECK(serialize_trace(t) ==
          testutil::read_file(testutil::data_path("linear8.json")));
  }
}

TEST_CASE("gen_resnet_like shapes") {
  SUBCASE("one block is input + chain of 3 + add") {
    Trace t = gen_resnet_like(1, 100, 0);
    CHECK(t.nodes.size() == 5);
    CHECK(validate_trace(t).empty());
    // skip edge: the add consumes the block input
    CHECK(t.nodes[4].parents == std::vector<NodeId>{0, 3});
  }
  SUBCASE("blocks = 0 rejected") {
    CHECK_THROWS_AS(gen_resnet_like(0, 1, 0), ArgumentError);
  }
  SUBCASE("same seed gives identical traces") {
    CHECK(serialize_trace(gen_resnet_like(4, 1000, 77)) ==
          serialize_trace(gen_resnet_like(4, 1000, 77)));
  }
  SUBCASE("fixture matches the generator") {
    CHECK(serialize_trace(gen_resnet_like(16, 1 << 20, 0)) ==
          testutil::read_file(testutil::data_path("resnet16.json")));
  }
}

TEST_CASE("gen_transformer_like is valid and deterministic") {
  Trace t = gen_transformer_like(3, 4096, 5);
  CHECK(validate_trace(t).empty());
  CHECK(serialize_trace(t) == serialize_trace(gen_transformer_like(3, 4096, 5)));
  CHECK_THROWS_AS(gen_transformer_like(0, 1, 0), ArgumentError);
}

TEST_CASE("round-trip and validity over 200 random generator outputs") {
  std::mt19937_64 rng(42);
  for (int i = 0; i < 200; ++i) {
    std::uint64_t seed = rng();
    Trace t;
    switch (i % 3) {
      case 0: t = gen_linear_chain(1 + i % 17, 64 + i, 3 + i % 9, seed); break;
      case 1: t = gen_resnet_like(1 + i % 7, 128 + i, seed); break;
      default: t = gen_transformer_like(1 + i % 4, 256 + i, seed); break;
    }
    CAPTURE(i);
    REQUIRE(validate_trace(t).empty());
    std::string s = serialize_trace(t);
    CHECK(serialize_trace(parse_trace(s)) == s);
  }
}
