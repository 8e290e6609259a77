#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <set>
#include <stdexcept>
#include <vector>

#include "conformal_triage/parallel.hpp"

using namespace conformal_triage;

TEST_CASE("every index runs exactly once") {
  for (std::size_t threads : {1, 2, 3, 8}) {
    std::vector<std::atomic<int>> hits(1000);
    parallel_for(hits.size(), [&](std::size_t i) { ++hits[i]; }, threads);
    for (const auto& h : hits) CHECK(h.load() == 1);
  }
  int calls = 0;
  parallel_for(0, [&](std::size_t) { ++calls; }, 4);
  CHECK(calls == 0);
}

TEST_CASE("worker exceptions propagate") {
  CHECK_THROWS_AS(parallel_for(
                      100,
                      [](std::size_t i) {
                        if (i == 37) throw std::runtime_error("boom");
                      },
                      4),
                  std::runtime_error);
}

TEST_CASE("thread count comes from the environment") {
  ::setenv("CONFORMAL_TRIAGE_THREADS", "3", 1);
  CHECK(configured_threads() == 3);
  ::setenv("CONFORMAL_TRIAGE_THREADS", "0", 1);
  CHECK(configured_threads() >= 1);
  ::unsetenv("CONFORMAL_TRIAGE_THREADS");
  CHECK(configured_threads() >= 1);
}

TEST_CASE("seed mixing is deterministic and spreads streams") {
  CHECK(mix_seed(1, 2) == mix_seed(1, 2));
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 50; ++s) {
    for (std::uint64_t k = 0; k < 50; ++k) seen.insert(mix_seed(s, k));
  }
  CHECK(seen.size() == 2500);
}
