#include "attr/rng.hpp"

#include <doctest.h>

using namespace attr;

TEST_CASE("splitmix64 matches the published test vectors") {
  SplitMix64 sm(1234567);
  CHECK(sm.next() == 6457827717110365317ULL);
  CHECK(sm.next() == 3203168211198807973ULL);
  CHECK(sm.next() == 9817491932198370423ULL);
  CHECK(sm.next() == 4593380528125082431ULL);
  CHECK(sm.next() == 16408922859458223821ULL);
}

TEST_CASE("xoshiro256** seeded via splitmix64 reproduces the reference stream") {
  // frozen from an independent implementation of the published algorithm
  Rng r0(0);
  CHECK(r0.next_u64() == 11091344671253066420ULL);
  CHECK(r0.next_u64() == 13793997310169335082ULL);
  CHECK(r0.next_u64() == 1900383378846508768ULL);
  CHECK(r0.next_u64() == 7684712102626143532ULL);
  CHECK(r0.next_u64() == 13521403990117723737ULL);

  Rng r42(42);
  CHECK(r42.next_u64() == 1546998764402558742ULL);
  CHECK(r42.next_u64() == 6990951692964543102ULL);
  CHECK(r42.next_u64() == 12544586762248559009ULL);
}

TEST_CASE("uniform stays in [0,1) and below() stays in range") {
  Rng r(99);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.below(7) < 7);
  }
}

TEST_CASE("state round-trip resumes the stream") {
  Rng a(5);
  for (int i = 0; i < 13; ++i) a.next_u64();
  const auto st = a.state();
  const auto expect = a.next_u64();
  Rng b(0);
  b.set_state(st);
  CHECK(b.next_u64() == expect);
}
