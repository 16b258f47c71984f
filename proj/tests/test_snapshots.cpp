#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "casciff/cascade.hpp"
#include "casciff/errors.hpp"
#include "casciff/rng.hpp"
#include "casciff/snapshots.hpp"
#include "doctest.h"

using namespace casciff;

namespace {

ObservationConfig obs(double window, std::uint32_t max_nodes = 16) {
  ObservationConfig cfg;
  cfg.window_w = window;
  cfg.max_nodes = max_nodes;
  cfg.min_nodes = 1;
  return cfg;
}

LabeledCascade chain3(double window) {
  LabeledCascade lc;
  lc.observed.cascade_id = "chain";
  lc.observed.root = 0;
  lc.observed.activations = {{0, kNoParent, 0.0}, {1, 0, 20.0}, {2, 1, 50.0}};
  for (const Activation& a : lc.observed.activations)
    lc.normalized_times.push_back(normalize_time(a.time, window));
  return lc;
}

// Random tree-shaped cascade: strictly increasing times, parent chosen among
// earlier activations.
LabeledCascade random_cascade(std::size_t n, double window, SplitMix64& rng) {
  LabeledCascade lc;
  lc.observed.cascade_id = "rnd";
  lc.observed.root = 0;
  double t = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Activation a;
    a.user = static_cast<UserId>(i);
    a.parent = i == 0 ? kNoParent : static_cast<UserId>(rng.next_below(i));
    a.time = t;
    lc.observed.activations.push_back(a);
    lc.normalized_times.push_back(normalize_time(t, window));
    t += 1.0 + rng.next_double() * (window - t - 2.0) / static_cast<double>(n);
  }
  return lc;
}

}  // namespace

TEST_CASE("normalized time maps window position onto [1, 0]") {
  CHECK(normalize_time(0.0, 100.0) == 1.0);
  CHECK(normalize_time(100.0, 100.0) == 0.0);
  CHECK(normalize_time(25.0, 100.0) == doctest::Approx(0.75));
  CHECK_THROWS_AS(normalize_time(-1.0, 100.0), DataError);
  CHECK_THROWS_AS(normalize_time(100.5, 100.0), DataError);
  CHECK_THROWS_AS(normalize_time(0.0, 0.0), DataError);
  CHECK_THROWS_AS(normalize_time(0.0, -3.0), DataError);
}

TEST_CASE("normalized time: range, strict decay, shift cancellation over 10k draws") {
  SplitMix64 rng(2024);
  for (int i = 0; i < 10000; ++i) {
    const double span = 1.0 + rng.next_double() * 99999.0;
    const double t1 = rng.next_double() * 0.4 * span;
    const double t2 = t1 + (0.05 + rng.next_double() * 0.5) * span;
    const double a = normalize_time(t1, span);
    const double b = normalize_time(t2, span);
    REQUIRE(a >= 0.0);
    REQUIRE(a <= 1.0);
    REQUIRE(b >= 0.0);
    REQUIRE(b <= 1.0);
    REQUIRE(a > b);  // strictly earlier ⇒ strictly larger weight

    // Shifting the raw clock and the window start together cancels exactly
    // (integer grid keeps the subtraction lossless).
    const double start = std::floor(rng.next_double() * 1e6);
    const double shift = std::floor(rng.next_double() * 1e6);
    const double raw = start + std::floor(t1);
    REQUIRE(normalize_time((raw + shift) - (start + shift), span) ==
            normalize_time(raw - start, span));
  }
}

TEST_CASE("a three-node chain yields the documented weighted adjacency") {
  const LabeledCascade lc = chain3(100.0);
  const SnapshotSequence seq = build_snapshots(lc, obs(100.0));
  CHECK(seq.cascade_id == "chain");
  CHECK(seq.window == 100.0);
  REQUIRE(seq.live_count() == 3);
  CHECK(seq.length() == 2);
  CHECK(seq.nodes == std::vector<UserId>{0, 1, 2});
  REQUIRE(seq.t_prime.size() == 3);
  CHECK(seq.t_prime[0] == 1.0);
  CHECK(seq.t_prime[1] == doctest::Approx(0.8));
  CHECK(seq.t_prime[2] == doctest::Approx(0.5));

  const Tensor& a = seq.final_alpha;
  REQUIRE(a.rows() == 3);
  REQUIRE(a.cols() == 3);
  CHECK(a.at(0, 0) == 1.0);
  CHECK(a.at(1, 1) == doctest::Approx(0.8));
  CHECK(a.at(2, 2) == doctest::Approx(0.5));
  CHECK(a.at(0, 1) == doctest::Approx(0.8));  // parent row, child column
  CHECK(a.at(1, 2) == doctest::Approx(0.5));
  CHECK(a.at(0, 2) == 0.0);
  CHECK(a.at(1, 0) == 0.0);
  CHECK(a.at(2, 0) == 0.0);
  CHECK(a.at(2, 1) == 0.0);

  const Tensor s1 = seq.materialize(1);
  REQUIRE(s1.rows() == 1);
  CHECK(s1.at(0, 0) == 1.0);  // root joins at t=0 with full weight

  const Tensor s2 = seq.materialize(2);
  REQUIRE(s2.rows() == 2);
  CHECK(s2.at(0, 0) == 1.0);
  CHECK(s2.at(0, 1) == doctest::Approx(0.8));
  CHECK(s2.at(1, 1) == doctest::Approx(0.8));
  CHECK(s2.at(1, 0) == 0.0);

  const Tensor p = seq.padded(2, 5);
  REQUIRE(p.rows() == 5);
  REQUIRE(p.cols() == 5);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 5; ++c) {
      const double want = (r < 2 && c < 2) ? s2.at(r, c) : 0.0;
      CHECK(p.at(r, c) == want);
    }

  CHECK_THROWS_AS(seq.materialize(0), ShapeError);
  CHECK_THROWS_AS(seq.materialize(4), ShapeError);
  CHECK_THROWS_AS(seq.padded(3, 2), ShapeError);
}

TEST_CASE("snapshot steps nest and weights decay along activation order") {
  SplitMix64 rng(99);
  for (int trial = 0; trial < 60; ++trial) {
    const double window = 50.0 + rng.next_double() * 500.0;
    const std::size_t n = 1 + rng.next_below(12);
    const LabeledCascade lc = random_cascade(n, window, rng);
    const SnapshotSequence seq = build_snapshots(lc, obs(window));
    REQUIRE(seq.live_count() == n);

    const Tensor full = seq.materialize(n);
    for (std::size_t upto = 1; upto <= n; ++upto) {
      const Tensor s = seq.materialize(upto);
      REQUIRE(s.rows() == upto);
      REQUIRE(s.cols() == upto);
      for (std::size_t r = 0; r < upto; ++r) {
        CHECK(s.at(r, r) == seq.t_prime[r]);  // diagonal is the join weight
        for (std::size_t c = 0; c < upto; ++c) {
          CHECK(s.at(r, c) == full.at(r, c));  // top-left block of the final
          if (r != c && s.at(r, c) != 0.0) CHECK(c > r);  // edges point forward
        }
      }
    }
    // Strictly increasing times ⇒ strictly decreasing weights.
    for (std::size_t i = 1; i < n; ++i) CHECK(seq.t_prime[i - 1] > seq.t_prime[i]);
  }
}

TEST_CASE("build_snapshots validates size, labels and lineage") {
  LabeledCascade lc = chain3(100.0);

  LabeledCascade empty;
  empty.observed.cascade_id = "e";
  CHECK_THROWS_AS(build_snapshots(empty, obs(100.0)), DataError);

  CHECK_THROWS_AS(build_snapshots(lc, obs(100.0, 2)), DataError);  // over max_nodes

  LabeledCascade bad_counts = lc;
  bad_counts.normalized_times.pop_back();
  CHECK_THROWS_AS(build_snapshots(bad_counts, obs(100.0)), ConsistencyError);

  LabeledCascade orphan = lc;
  orphan.observed.activations[2].parent = 9;  // never activated
  CHECK_THROWS_AS(build_snapshots(orphan, obs(100.0)), ConsistencyError);

  LabeledCascade late_parent = lc;
  late_parent.observed.activations[1].parent = 2;  // activates later
  CHECK_THROWS_AS(build_snapshots(late_parent, obs(100.0)), ConsistencyError);
}

TEST_CASE("snapshot cache round trips and pins the window") {
  SplitMix64 rng(7);
  std::vector<SnapshotSequence> seqs;
  seqs.push_back(build_snapshots(chain3(120.0), obs(120.0)));
  LabeledCascade solo;
  solo.observed.cascade_id = "solo";
  solo.observed.activations = {{5, kNoParent, 0.0}};
  solo.normalized_times = {1.0};
  seqs.push_back(build_snapshots(solo, obs(120.0)));
  seqs.push_back(build_snapshots(random_cascade(9, 120.0, rng), obs(120.0)));

  const std::string path = "snapshot_cache_test.bin";
  save_snapshot_cache(path, seqs, 120.0);
  const std::vector<SnapshotSequence> back = load_snapshot_cache(path, 120.0);
  REQUIRE(back.size() == seqs.size());
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    CHECK(back[i].cascade_id == seqs[i].cascade_id);
    CHECK(back[i].window == seqs[i].window);
    CHECK(back[i].nodes == seqs[i].nodes);
    REQUIRE(back[i].t_prime.size() == seqs[i].t_prime.size());
    for (std::size_t j = 0; j < seqs[i].t_prime.size(); ++j)
      CHECK(back[i].t_prime[j] == seqs[i].t_prime[j]);
    REQUIRE(back[i].final_alpha.same_shape(seqs[i].final_alpha));
    for (std::size_t j = 0; j < seqs[i].final_alpha.size(); ++j)
      CHECK(back[i].final_alpha.data()[j] == seqs[i].final_alpha.data()[j]);
  }

  CHECK_THROWS_AS(load_snapshot_cache(path, 121.0), ConsistencyError);

  FILE* fp = std::fopen(path.c_str(), "r+b");
  REQUIRE(fp != nullptr);
  std::fputc('X', fp);
  std::fclose(fp);
  CHECK_THROWS_AS(load_snapshot_cache(path, 120.0), IoError);

  save_snapshot_cache(path, seqs, 120.0);
  // Truncate mid-body: the loader must fail loudly, not return partial data.
  FILE* tr = std::fopen(path.c_str(), "rb");
  REQUIRE(tr != nullptr);
  std::fseek(tr, 0, SEEK_END);
  const long full_len = std::ftell(tr);
  std::fclose(tr);
  REQUIRE(full_len > 40);
  {
    std::vector<char> buf(static_cast<std::size_t>(full_len));
    FILE* in = std::fopen(path.c_str(), "rb");
    REQUIRE(std::fread(buf.data(), 1, buf.size(), in) == buf.size());
    std::fclose(in);
    FILE* out = std::fopen(path.c_str(), "wb");
    REQUIRE(std::fwrite(buf.data(), 1, buf.size() / 2, out) == buf.size() / 2);
    std::fclose(out);
  }
  CHECK_THROWS_AS(load_snapshot_cache(path, 120.0), IoError);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_snapshot_cache(path, 120.0), IoError);
}
