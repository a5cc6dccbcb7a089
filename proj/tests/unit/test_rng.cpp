#include <doctest.h>

#include <set>

#include "hft/rng.hpp"

using namespace hft;

TEST_CASE("rng is deterministic and fork streams are independent") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng base(7);
    Rng f1 = base.fork(1), f2 = base.fork(2);
    CHECK(f1.next_u64() != f2.next_u64());
    Rng f1b = base.fork(1);
    CHECK(f1b.next_u64() == Rng(7).fork(1).next_u64());
}

TEST_CASE("uniform stays in range, below is bounded") {
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(rng.below(7) < 7);
    }
    double lo = rng.uniform(-5.0, 5.0);
    CHECK(lo >= -5.0);
    CHECK(lo <= 5.0);
}

TEST_CASE("sample_without_replacement yields distinct indices") {
    Rng rng(11);
    auto s = rng.sample_without_replacement(10, 6);
    CHECK(s.size() == 6);
    std::set<int> uniq(s.begin(), s.end());
    CHECK(uniq.size() == 6);
    for (int v : s) {
        CHECK(v >= 0);
        CHECK(v < 10);
    }
    CHECK_THROWS(rng.sample_without_replacement(3, 4));
}
