#include <catch2/catch_amalgamated.hpp>

#include <cstdio>

#include "oadfl/channel.hpp"

using namespace oadfl;

TEST_CASE("noise variance follows the transmitter SNR definition") {
  REQUIRE(noise_variance_from_snr({20.0, 1.0}) == Catch::Approx(0.01));
  REQUIRE(noise_variance_from_snr({0.0, 1.0}) == Catch::Approx(1.0));
  REQUIRE(noise_variance_from_snr({10.0, 2.0}) == Catch::Approx(0.2));
  REQUIRE_THROWS_AS(noise_variance_from_snr({10.0, 0.0}), InvalidHyperparameters);
}

TEST_CASE("channel entries have unit second moment") {
  const auto g = generate_named(NamedTopology::complete, 2);
  double acc = 0.0;
  long count = 0;
  for (int r = 0; r < 200; ++r) {
    const auto cs = sample_round(g, {20.0, 1.0}, 50, 50, 1000 + r);
    for (int i = 0; i < 2; ++i)
      for (int j : cs.neighbors[i]) {
        acc += cs.h(i, j).squaredNorm();
        count += cs.h(i, j).size();
      }
  }
  REQUIRE(count >= 1000000);
  REQUIRE(acc / count == Catch::Approx(1.0).margin(0.01));
}

TEST_CASE("channels exist for every ordered edge and directions differ") {
  const auto g = generate_random(6, 0.4, 3);
  const auto cs = sample_round(g, {20.0, 1.0}, 3, 2, 7);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) {
      if (i != j && g.edge(i, j)) {
        REQUIRE(cs.has_edge(i, j));
        REQUIRE(cs.h(i, j).rows() == 2);
        REQUIRE(cs.h(i, j).cols() == 3);
        // independent draws for the two physical directions
        REQUIRE((cs.h(i, j) - cs.h(j, i).conjugate()).norm() > 1e-12);
        REQUIRE((cs.h(i, j) - cs.h(j, i)).norm() > 1e-12);
      } else {
        REQUIRE_FALSE(cs.has_edge(i, j));
      }
    }
}

TEST_CASE("noiseless transmit of a rank-one signal is exact") {
  const auto g = generate_named(NamedTopology::line, 2);
  auto cs = sample_round(g, {20.0, 1.0}, 3, 2, 11);
  cs.noise_variance = 0.0;
  auto rng = make_rng(5, "tx-test");
  CMat u(3, 1), r(1, 4);
  fill_complex_gaussian(u, rng);
  fill_complex_gaussian(r, rng);
  std::vector<CMat> signals(2);
  signals[1] = u * r;
  const CMat y = transmit(cs, signals, 0, 99);
  REQUIRE((y - cs.h(0, 1) * u * r).norm() < 1e-12);
}

TEST_CASE("zero signals leave pure noise of the configured variance") {
  const auto g = generate_named(NamedTopology::complete, 3);
  auto cs = sample_round(g, {0.0, 1.0}, 2, 25, 13);  // noise variance 1
  std::vector<CMat> signals(3, CMat::Zero(2, 2000));
  const CMat y = transmit(cs, signals, 0, 17);
  const double var = y.squaredNorm() / static_cast<double>(y.size());
  REQUIRE(var == Catch::Approx(1.0).margin(0.02));
}

TEST_CASE("superposition cancels opposite signals over a forced common channel") {
  const auto g = generate_named(NamedTopology::complete, 3);
  auto cs = sample_round(g, {20.0, 1.0}, 2, 2, 19);
  cs.mats[0 * 3 + 2] = cs.mats[0 * 3 + 1];  // receiver 0 sees identical H
  cs.noise_variance = 0.0;
  auto rng = make_rng(7, "cancel");
  CMat s(2, 6);
  fill_complex_gaussian(s, rng);
  std::vector<CMat> signals(3);
  signals[1] = s;
  signals[2] = -s;
  const CMat y = transmit(cs, signals, 0, 3);
  REQUIRE(y.norm() < 1e-12);
}

TEST_CASE("transmit is linear in the signals at zero noise") {
  const auto g = generate_random(5, 0.3, 23);
  auto cs = sample_round(g, {20.0, 1.0}, 3, 4, 29);
  cs.noise_variance = 0.0;
  auto rng = make_rng(31, "linear");
  std::vector<CMat> signals(5);
  for (auto& s : signals) {
    s.resize(3, 8);
    fill_complex_gaussian(s, rng);
  }
  std::vector<CMat> scaled = signals;
  for (auto& s : scaled) s *= Complex(2.5, 0.0);
  const CMat y1 = transmit(cs, signals, 2, 1);
  const CMat y2 = transmit(cs, scaled, 2, 1);
  REQUIRE((y2 - 2.5 * y1).norm() < 1e-10);
}

TEST_CASE("mismatched block lengths are rejected") {
  const auto g = generate_named(NamedTopology::complete, 3);
  const auto cs = sample_round(g, {20.0, 1.0}, 2, 2, 37);
  std::vector<CMat> signals(3);
  signals[1] = CMat::Zero(2, 4);
  signals[2] = CMat::Zero(2, 5);
  REQUIRE_THROWS_AS(transmit(cs, signals, 0, 1), ShapeError);
  signals[2] = CMat::Zero(3, 4);  // wrong antenna count
  REQUIRE_THROWS_AS(transmit(cs, signals, 0, 1), ShapeError);
}

TEST_CASE("identical seeds reproduce channels and noise bit for bit") {
  const auto g = generate_random(4, 0.3, 41);
  const auto a = sample_round(g, {10.0, 1.0}, 3, 3, 123);
  const auto b = sample_round(g, {10.0, 1.0}, 3, 3, 123);
  for (int i = 0; i < 4; ++i)
    for (int j : a.neighbors[i]) REQUIRE(a.h(i, j) == b.h(i, j));

  std::vector<CMat> signals(4, CMat::Zero(3, 5));
  const CMat y1 = transmit(a, signals, 1, 77);
  const CMat y2 = transmit(b, signals, 1, 77);
  REQUIRE(y1 == y2);
  const CMat y3 = transmit(a, signals, 1, 78);
  REQUIRE(y1 != y3);
}

TEST_CASE("channel dumps replay bit-identically") {
  const auto g = generate_random(4, 0.4, 51);
  const std::string path = "test_channel_dump.bin";
  {
    ChannelDumpWriter writer(path, 8);
    for (int t = 0; t < 3; ++t)
      writer.append(sample_round(g, {5.0, 1.0}, 2, 3, 900 + t));
  }
  ChannelDumpReader reader(path);
  REQUIRE(reader.num_devices() == 4);
  REQUIRE(reader.n_tx() == 2);
  REQUIRE(reader.n_rx() == 3);
  REQUIRE(reader.block_len() == 8);
  for (int t = 0; t < 3; ++t) {
    auto loaded = reader.read_round();
    REQUIRE(loaded.has_value());
    const auto fresh = sample_round(g, {5.0, 1.0}, 2, 3, 900 + t);
    REQUIRE(loaded->noise_variance == fresh.noise_variance);
    for (int i = 0; i < 4; ++i) {
      REQUIRE(loaded->neighbors[i] == fresh.neighbors[i]);
      for (int j : fresh.neighbors[i]) REQUIRE(loaded->h(i, j) == fresh.h(i, j));
    }
  }
  REQUIRE_FALSE(reader.read_round().has_value());
  std::remove(path.c_str());
}
