#include "doctest.h"

#include <random>

#include "deltasim/device.hpp"

using namespace deltasim;

TEST_CASE("try_alloc") {
  MemoryPool p(1000);
  SUBCASE("fits") {
    CHECK(std::holds_alternative<Allocated>(p.try_alloc(600)));
    CHECK(p.used() == 600);
    CHECK(p.high_watermark() == 600);
  }
  SUBCASE("deficit reported, pool untouched") {
    p.try_alloc(600);
    AllocResult r = p.try_alloc(600);
    REQUIRE(std::holds_alternative<Insufficient>(r));
    CHECK(std::get<Insufficient>(r).deficit == 200);
    CHECK(p.used() == 600);
  }
  SUBCASE("alloc/free fuzz keeps used equal to the running sum") {
    std::mt19937_64 rng(3);
    MemoryPool pool(10000);
    Bytes sum = 0;
    std::vector<Bytes> live;
    for (int i = 0; i < 2000; ++i) {
      if (live.empty() || rng() % 2 == 0) {
        Bytes n = 1 + rng() % 500;
        if (std::holds_alternative<Allocated>(pool.try_alloc(n))) {
          live.push_back(n);
          sum += n;
        }
      } else {
        std::size_t idx = rng() % live.size();
        pool.free(live[idx]);
        sum -= live[idx];
        live.erase(live.begin() + idx);
      }
      REQUIRE(pool.used() == sum);
      REQUIRE(pool.used() <= pool.budget());
    }
  }
  SUBCASE("freeing more than used is an internal error") {
    CHECK_THROWS_AS(p.free(1), InternalError);
  }
}

TEST_CASE("stream submission") {
  Stream s(StreamKind::Compute);
  SUBCASE("idle stream starts immediately") {
    auto [start, end] = s.submit(0, 10, "a", 0);
    CHECK(start == 0);
    CHECK(end == 10);
  }
  SUBCASE("busy stream serializes") {
    s.submit(0, 50, "a", 0);
    auto [start, end] = s.submit(20, 10, "b", 1);
    CHECK(start == 50);
    CHECK(end == 60);
    CHECK(s.busy_until() == 60);
  }
  SUBCASE("two streams overlap") {
    Stream compute(StreamKind::Compute);
    Stream copy(StreamKind::Copy);
    compute.submit(0, 100, "work", 0);
    copy.submit(0, 40, "copy", 1);
    MicroTime wall = std::max(compute.busy_until(), copy.busy_until());
    CHECK(wall == 100);  // copy fully hidden
  }
  SUBCASE("intervals stay sorted and non-overlapping") {
    std::mt19937_64 rng(5);
    Stream st(StreamKind::Copy);
    MicroTime now = 0;
    for (int i = 0; i < 200; ++i) {
      now += rng() % 20;
      st.submit(now, rng() % 30, "x", i);
    }
    const auto& log = st.log();
    for (std::size_t i = 1; i < log.size(); ++i) {
      REQUIRE(log[i].start >= log[i - 1].end);
    }
  }
}

TEST_CASE("clock wait_for") {
  Clock c;
  c.advance_to(10);
  CHECK(c.wait_for(5) == 0);
  CHECK(c.now() == 10);
  CHECK(c.wait_for(35) == 25);
  CHECK(c.now() == 35);
  // waiting on an in-flight copy finishing at 500 from 420
  c.advance_to(420);
  CHECK(c.wait_for(500) == 80);
}
