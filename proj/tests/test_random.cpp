#include <set>

#include "catch_amalgamated.hpp"
#include "ctrsq/random.hpp"

using namespace ctrsq;

TEST_CASE("splitmix64 matches the reference sequence") {
  CHECK(splitmix64(0) == 0xe220a8397b1dcdafULL);
}

TEST_CASE("engines are a pure function of (seed, substream)") {
  const RandomStream s(42, 7);
  Rng a = s.engine();
  Rng b = RandomStream(42, 7).engine();
  for (int i = 0; i < 100; ++i) CHECK(a() == b());
  CHECK(RandomStream(42, 8).engine()() != RandomStream(42, 7).engine()());
  CHECK(RandomStream(43, 7).engine()() != RandomStream(42, 7).engine()());
}

TEST_CASE("derived streams are distinct per index and tag") {
  const RandomStream root(1);
  std::set<std::uint64_t> subs;
  for (std::uint64_t i = 0; i < 1000; ++i) subs.insert(root.episode(i).substream());
  CHECK(subs.size() == 1000);
  CHECK(root.derive(StreamTag::noise) != root.derive(StreamTag::action));
  CHECK(root.episode(3).derive(StreamTag::noise) != root.episode(4).derive(StreamTag::noise));
  CHECK(root.episode(3).seed() == 1);
}

TEST_CASE("derivation is stateless") {
  const RandomStream root(9);
  const auto first = root.episode(5);
  (void)root.episode(6).engine()();
  CHECK(root.episode(5) == first);
}
