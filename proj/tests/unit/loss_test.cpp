#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bseg/ad/ops.hpp"
#include "bseg/ad/grad_check.hpp"
#include "bseg/common/error.hpp"
#include "bseg/common/rng.hpp"
#include "bseg/loss/binning.hpp"
#include "bseg/loss/manifest.hpp"

namespace bseg::loss {
namespace {

constexpr std::size_t kPixels = 576;

std::vector<double> random_targets(Rng& rng) {
  std::vector<double> t(kPixels);
  for (auto& v : t) v = uniform01(rng) < 0.4 ? 1.0 : 0.0;
  return t;
}

double scalar_loop_bce(const std::vector<double>& p, const std::vector<double>& y) {
  long double acc = 0.0L;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const long double q = std::max<long double>(p[i], 1e-7L);
    const long double r = std::max<long double>(1.0L - p[i], 1e-7L);
    acc += y[i] * std::log(q) + (1.0L - y[i]) * std::log(r);
  }
  return static_cast<double>(-acc / static_cast<long double>(p.size()));
}

TEST(BceLossTest, UniformHalfIsLn2) {
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const auto y = random_targets(rng);
    const std::vector<double> p(kPixels, 0.5);
    EXPECT_NEAR(bce_loss(p, y), std::log(2.0), 1e-6);
  }
}

TEST(BceLossTest, PerfectPredictionIsZeroBin) {
  Rng rng(2);
  const auto y = random_targets(rng);
  const double loss = bce_loss(y, y);
  EXPECT_LE(loss, 1e-6);
  EXPECT_EQ(assign_bin(loss), LossBin::kZero);
  const std::vector<float> yf(y.begin(), y.end());
  EXPECT_EQ(assign_bin(bce_loss(yf, yf)), LossBin::kZero);
}

TEST(BceLossTest, MatchesScalarLoop) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto y = random_targets(rng);
    std::vector<double> p(kPixels);
    for (auto& v : p) v = uniform01(rng);
    if (trial % 5 == 0) p[trial % kPixels] = 0.0;  // exercises the floor
    EXPECT_NEAR(bce_loss(p, y), scalar_loop_bce(p, y), 1e-9);
  }
}

TEST(BceLossTest, ShapeMismatchIsContractViolation) {
  const std::vector<double> p(kPixels, 0.5), y(kPixels - 1, 0.0);
  EXPECT_THROW(bce_loss(p, y), ContractViolation);
}

TEST(BceLossTest, PermutationInvariant) {
  Rng rng(4);
  const auto y = random_targets(rng);
  std::vector<double> p(kPixels);
  for (auto& v : p) v = uniform(rng, 0.01, 0.99);
  std::vector<std::size_t> perm(kPixels);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> pp(kPixels), yp(kPixels);
  for (std::size_t i = 0; i < kPixels; ++i) {
    pp[i] = p[perm[i]];
    yp[i] = y[perm[i]];
  }
  EXPECT_NEAR(bce_loss(pp, yp), bce_loss(p, y), 1e-12);
}

TEST(BceLossTest, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto yv = random_targets(rng);
    ad::Tensor<double> y({1, 24, 24}, yv);
    ad::Tensor<double> p({1, 24, 24});
    for (auto& v : p.data()) v = uniform(rng, 0.05, 0.95);
    ad::GradCheckOptions opt;
    opt.tolerance = 1e-6;
    opt.eps = 1e-6;
    const auto report = ad::grad_check(
        [&](ad::Tape<double>& tape, ad::Var v) { return ad::binary_cross_entropy(tape, v, y); },
        p, opt);
    EXPECT_TRUE(report.passed) << "seed " << seed << " err " << report.max_rel_error;
  }
}

TEST(BinTest, Examples) {
  EXPECT_EQ(assign_bin(0.0), LossBin::kZero);
  EXPECT_EQ(assign_bin(1e-7), LossBin::kZero);
  EXPECT_EQ(assign_bin(2e-7), LossBin::kB1);
  EXPECT_EQ(assign_bin(0.2), LossBin::kB1);
  EXPECT_EQ(assign_bin(std::nextafter(0.2, 1.0)), LossBin::kB2);
  EXPECT_EQ(assign_bin(0.4), LossBin::kB2);
  EXPECT_EQ(assign_bin(0.6), LossBin::kB3);
  EXPECT_EQ(assign_bin(0.693147), LossBin::kB4);
  EXPECT_EQ(assign_bin(0.8), LossBin::kB4);
  EXPECT_EQ(assign_bin(1.0), LossBin::kB5);
  EXPECT_EQ(assign_bin(2.7), LossBin::kB5);
  EXPECT_THROW(assign_bin(-1e-9), ContractViolation);
}

TEST(BinTest, NamesRoundTrip) {
  for (std::size_t i = 0; i < kBinCount; ++i) {
    const auto b = static_cast<LossBin>(i);
    EXPECT_EQ(parse_bin(bin_name(b)), b);
  }
  EXPECT_EQ(bin_name(LossBin::kZero), "ZERO");
  EXPECT_EQ(bin_name(LossBin::kB3), "B3");
  EXPECT_THROW(parse_bin("B6"), Error);
}

TEST(BinTest, Monotone) {
  Rng rng(5);
  std::vector<double> xs(20000);
  for (auto& x : xs) x = uniform01(rng) < 0.05 ? 0.0 : uniform(rng, 0.0, 1.5);
  std::sort(xs.begin(), xs.end());
  for (std::size_t i = 1; i < xs.size(); ++i) {
    EXPECT_LE(bin_index(assign_bin(xs[i - 1])), bin_index(assign_bin(xs[i])));
  }
}

TEST(RecordTest, ClipAndBinInvariants) {
  const auto r = make_record(7, 3.5, 2);
  EXPECT_EQ(r.sample_id, 7u);
  EXPECT_EQ(r.raw_loss, 3.5);
  EXPECT_EQ(r.clipped_loss, 1.0);
  EXPECT_EQ(r.bin, LossBin::kB5);
  EXPECT_EQ(r.round, 2);
}

TEST(HistogramTest, SmallExample) {
  std::vector<LossRecord> recs;
  for (const double l : {0.0, 0.1, 0.1, 0.3}) recs.push_back(make_record(recs.size(), l, 0));
  const auto h = histogram(recs);
  EXPECT_EQ(h.total, 4u);
  EXPECT_EQ(h.counts[0], 1u);
  EXPECT_EQ(h.counts[1], 2u);
  EXPECT_EQ(h.counts[2], 1u);
  EXPECT_NEAR(h.means[1], 0.1, 1e-15);
  EXPECT_EQ(h.means[3], 0.0);
}

TEST(HistogramTest, AllZeroAndEmpty) {
  std::vector<LossRecord> recs;
  for (int i = 0; i < 10; ++i) recs.push_back(make_record(i, 0.0, 1));
  const auto h = histogram(recs);
  EXPECT_EQ(h.counts[0], h.total);
  EXPECT_EQ(h.round, 1);
  EXPECT_THROW(histogram({}), Error);
}

// Independent pass: sort clipped losses, then walk bin boundaries.
TEST(HistogramTest, MatchesSortOracle) {
  Rng rng(6);
  std::vector<LossRecord> recs;
  for (std::uint32_t i = 0; i < 10000; ++i) {
    const double u = uniform01(rng);
    const double l = u < 0.1 ? 0.0 : u < 0.15 ? std::array{0.2, 0.4, 0.6, 0.8, 1.0}[uniform_int(rng, 0, 4)] : uniform(rng, 0.0, 1.4);
    recs.push_back(make_record(i, l, 0));
  }
  std::vector<double> sorted;
  for (const auto& r : recs) sorted.push_back(std::min(r.raw_loss, 1.0));
  std::sort(sorted.begin(), sorted.end());
  std::array<std::size_t, kBinCount> oracle{};
  std::size_t k = 0;
  while (k < sorted.size() && sorted[k] <= kZeroEpsilon) ++k, ++oracle[0];
  for (std::size_t b = 1; b < kBinCount; ++b) {
    const double upper = std::array{0.0, 0.2, 0.4, 0.6, 0.8, 1.0}[b];
    while (k < sorted.size() && sorted[k] <= upper) ++k, ++oracle[b];
  }
  ASSERT_EQ(k, sorted.size());
  const auto h = histogram(recs);
  EXPECT_EQ(h.counts, oracle);
  EXPECT_EQ(std::accumulate(h.counts.begin(), h.counts.end(), std::size_t{0}), recs.size());
  for (std::size_t b = 1; b < kBinCount; ++b) {
    if (h.counts[b] == 0) continue;
    EXPECT_GT(h.means[b], 0.2 * static_cast<double>(b - 1));
    EXPECT_LE(h.means[b], 0.2 * static_cast<double>(b) + 1e-12);
  }
  auto shuffled = recs;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const auto h2 = histogram(shuffled);
  EXPECT_EQ(h2.means, h.means);
}

TEST(ManifestTest, RoundTripsExactly) {
  Rng rng(7);
  LossManifest m{3, "ab12", "cfg", {}};
  for (std::uint32_t i = 0; i < 100; ++i) m.records.push_back(make_record(i, uniform(rng, 0.0, 2.0) / 3.0, 3));
  m.records.push_back(make_record(100, 0.0, 3));
  const auto text = encode_loss_manifest(m);
  EXPECT_EQ(decode_loss_manifest(text), m);
  EXPECT_EQ(encode_loss_manifest(decode_loss_manifest(text)), text);
}

TEST(ManifestTest, RejectsInconsistentRecords) {
  LossManifest m{1, "h", "c", {make_record(0, 0.5, 1)}};
  auto text = encode_loss_manifest(m);
  auto bad_bin = text;
  bad_bin.replace(bad_bin.find("\"B3\""), 4, "\"B1\"");
  EXPECT_THROW(decode_loss_manifest(bad_bin), Error);
  auto bad_round = text;
  bad_round.replace(bad_round.rfind("\"round\":1"), 9, "\"round\":2");
  EXPECT_THROW(decode_loss_manifest(bad_round), Error);
  EXPECT_THROW(decode_loss_manifest(text.substr(0, text.find('\n') + 1)), Error);  // missing record
  EXPECT_THROW(decode_loss_manifest(""), Error);
}

}  // namespace
}  // namespace bseg::loss
