// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <numbers>

#include "csi2cloud/csi.hpp"
#include "csi2cloud/rng.hpp"

using namespace c2c;
using std::numbers::pi;

namespace {

CsiFrame random_frame(std::size_t m, std::size_t k, std::uint64_t seed) {
  Rng rng(seed);
  CsiFrame f;
  f.subcarriers = m;
  f.links = k;
  f.h.resize(m * k);
  for (Complex& v : f.h) v = Complex(rng.uniform(-2, 2), rng.uniform(-2, 2));
  return f;
}

}  // namespace

TEST_CASE("amplitude") {
  CsiFrame f;
  f.subcarriers = 2;
  f.links = 1;
  f.h = {Complex(3, 4), Complex(0, 0)};
  const auto a = amplitude(f);
  CHECK(a[0] == 5.0);
  CHECK(a[1] == 0.0);

  const CsiFrame r = random_frame(8, 3, 1);
  const auto ar = amplitude(r);
  for (std::size_t i = 0; i < r.h.size(); ++i) {
    CHECK(ar[i] * ar[i] ==
          Catch::Approx(r.h[i].real() * r.h[i].real() + r.h[i].imag() * r.h[i].imag())
              .margin(1e-12));
  }
}

TEST_CASE("phase") {
  CsiFrame f;
  f.subcarriers = 2;
  f.links = 1;
  f.h = {Complex(3, 4), Complex(-1, 0)};
  const auto p = phase(f);
  CHECK(p[0] == Catch::Approx(std::atan2(4.0, 3.0)).margin(1e-12));
  CHECK(p[0] == Catch::Approx(0.927295).margin(1e-6));
  CHECK(p[1] == Catch::Approx(pi).margin(1e-12));

  SECTION("amplitude/phase recombination reproduces H within 1e-9") {
    const CsiFrame r = random_frame(16, 2, 2);
    const auto a = amplitude(r);
    const auto ph = phase(r);
    for (std::size_t i = 0; i < r.h.size(); ++i) {
      const Complex back = std::polar(a[i], ph[i]);
      CHECK(std::abs(back - r.h[i]) < 1e-9);
    }
  }
}

TEST_CASE("sanitize_phase") {
  const std::size_t m = 32;

  SECTION("linear ramp vanishes") {
    std::vector<double> raw(m);
    for (std::size_t i = 0; i < m; ++i) raw[i] = 0.4 + 0.02 * static_cast<double>(i);
    const auto out = sanitize_phase(raw, m, 1);
    for (double v : out) CHECK(std::fabs(v) < 1e-12);
  }

  SECTION("constant phase vanishes") {
    std::vector<double> raw(m, 1.234);
    const auto out = sanitize_phase(raw, m, 1);
    for (double v : out) CHECK(std::fabs(v) < 1e-12);
  }

  SECTION("wrapped ramp unwraps with no adjacent jump above pi") {
    // Steep ramp that wraps several times across the band.
    std::vector<double> true_phase(m), raw(m);
    for (std::size_t i = 0; i < m; ++i) {
      true_phase[i] = 0.7 * static_cast<double>(i) + 0.3 * std::sin(0.5 * i);
      raw[i] = std::remainder(true_phase[i], 2.0 * pi);
    }
    const auto out = sanitize_phase(raw, m, 1);
    for (std::size_t i = 1; i < m; ++i) {
      CHECK(std::fabs(out[i] - out[i - 1]) < pi);
    }
  }

  SECTION("output has zero mean and zero linear trend per link") {
    Rng rng(5);
    const std::size_t links = 3;
    std::vector<double> raw(m * links);
    for (double& v : raw) v = rng.uniform(-pi, pi);
    const auto out = sanitize_phase(raw, m, links);
    for (std::size_t k = 0; k < links; ++k) {
      double mean = 0.0, slope_num = 0.0;
      for (std::size_t i = 0; i < m; ++i) mean += out[i * links + k];
      mean /= static_cast<double>(m);
      const double mid = 0.5 * static_cast<double>(m - 1);
      for (std::size_t i = 0; i < m; ++i) {
        slope_num += (static_cast<double>(i) - mid) * out[i * links + k];
      }
      CHECK(std::fabs(mean) < 1e-9);
      CHECK(std::fabs(slope_num) < 1e-9);
    }
  }
}

TEST_CASE("to_features") {
  CsiFrame f;
  f.subcarriers = 2;
  f.links = 1;
  f.h = {Complex(1, 0), Complex(0, 1)};

  SECTION("hand evaluation, unsanitized") {
    const CsiFeatures c = to_features(f, false);
    CHECK(c.at(0, 0) == 1.0);        // |1 + 0i|
    CHECK(c.at(0, 1) == 0.0);        // angle
    CHECK(c.at(1, 0) == 1.0);        // |0 + 1i|
    CHECK(c.at(1, 1) == Catch::Approx(pi / 2).margin(1e-12));
  }

  SECTION("shape is always M x 2K") {
    const CsiFrame r = random_frame(16, 3, 4);
    const CsiFeatures c = to_features(r, true);
    CHECK(c.c.size() == 16 * 6);
    CHECK(c.subcarriers == 16);
    CHECK(c.links == 3);
  }

  SECTION("sanitize only touches the phase block") {
    const CsiFrame r = random_frame(16, 2, 7);
    const CsiFeatures raw = to_features(r, false);
    const CsiFeatures clean = to_features(r, true);
    bool phases_differ = false;
    for (std::size_t m = 0; m < 16; ++m) {
      for (std::size_t k = 0; k < 2; ++k) {
        CHECK(raw.at(m, k) == clean.at(m, k));  // amplitude block identical
        phases_differ = phases_differ || raw.at(m, 2 + k) != clean.at(m, 2 + k);
      }
    }
    CHECK(phases_differ);
  }
}

TEST_CASE("aggregate_frames uses mean amplitude and circular mean phase") {
  CsiFrame a, b;
  a.subcarriers = b.subcarriers = 1;
  a.links = b.links = 1;
  // Phases +170 deg and -170 deg: the circular mean is 180 deg, not 0.
  a.h = {std::polar(1.0, 170.0 * pi / 180.0)};
  b.h = {std::polar(3.0, -170.0 * pi / 180.0)};
  const CsiFrame agg = aggregate_frames({a, b});
  CHECK(std::abs(agg.h[0]) == Catch::Approx(2.0).margin(1e-12));
  CHECK(std::fabs(std::arg(agg.h[0])) == Catch::Approx(pi).margin(1e-9));
}

TEST_CASE("ls_estimate") {
  SECTION("scalar pilot, noiseless") {
    const Complex h(0.3, -1.2);
    PilotBlock block;
    CMat p(1, 1), r(1, 1);
    p.at(0, 0) = Complex(2, 0);
    r.at(0, 0) = h * p.at(0, 0);
    block.pilots = {p};
    block.received = {r};
    const auto est = ls_estimate(block);
    REQUIRE(est.size() == 1);
    CHECK(std::abs(est[0].at(0, 0) - h) < 1e-12);
  }

  SECTION("zero pilot is singular") {
    PilotBlock block;
    CMat p(1, 1), r(1, 1);
    block.pilots = {p};
    block.received = {r};
    CHECK_THROWS_AS(ls_estimate(block), EstimationError);
  }

  SECTION("2x2 MIMO with orthogonal pilots recovers H exactly") {
    Rng rng(9);
    CMat h(2, 2);
    for (auto& v : h.v) v = Complex(rng.uniform(-1, 1), rng.uniform(-1, 1));
    CMat p(2, 2);
    const double s = 1.0 / std::sqrt(2.0);
    p.at(0, 0) = s;
    p.at(0, 1) = s;
    p.at(1, 0) = s;
    p.at(1, 1) = -s;
    const CMat r = cmat_mul(h, p);
    PilotBlock block;
    block.pilots = {p};
    block.received = {r};
    const auto est = ls_estimate(block);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(est[0].v[i] - h.v[i]) < 1e-9);
  }

  SECTION("unbiased under AWGN: averaged estimates converge toward H") {
    Rng rng(33);
    const Complex h(0.8, -0.4);
    const Complex pilot(1.5, 0.5);
    const double sigma = 0.3;
    auto mean_estimate_error = [&](std::size_t trials) {
      Complex acc{0, 0};
      for (std::size_t t = 0; t < trials; ++t) {
        PilotBlock block;
        CMat p(1, 1), r(1, 1);
        p.at(0, 0) = pilot;
        r.at(0, 0) = h * pilot + Complex(sigma * rng.normal(), sigma * rng.normal());
        block.pilots = {p};
        block.received = {r};
        acc += ls_estimate(block)[0].at(0, 0);
      }
      return std::abs(acc / static_cast<double>(trials) - h);
    };
    const double err10 = mean_estimate_error(10);
    const double err1000 = mean_estimate_error(1000);
    CHECK(err1000 < err10);       // shrinking like 1/sqrt(trials)
    CHECK(err1000 < 3 * sigma / std::sqrt(1000.0));
  }
}

TEST_CASE("csi log format") {
  SECTION("documented example line") {
    const auto frames = parse_csi_log("t=0.00,M=2,K=1,1.0,0.0,0.0,1.0\n");
    REQUIRE(frames.size() == 1);
    CHECK(frames[0].subcarriers == 2);
    CHECK(frames[0].links == 1);
    CHECK(frames[0].at(0, 0) == Complex(1, 0));
    CHECK(frames[0].at(1, 0) == Complex(0, 1));
  }

  SECTION("odd value count is rejected with the line number") {
    try {
      parse_csi_log("t=0,M=2,K=1,1.0,0.0,0.5\n");
      FAIL("expected ParseError");
    } catch (const ParseError& err) {
      CHECK(std::string(err.what()).find("line 1") != std::string::npos);
    }
  }

  SECTION("inconsistent M across lines is rejected") {
    CHECK_THROWS_AS(parse_csi_log("t=0,M=1,K=1,1,0\nt=1,M=2,K=1,1,0,0,1\n"), ParseError);
  }

  SECTION("frames are ordered by timestamp") {
    const auto frames = parse_csi_log("t=2,M=1,K=1,1,0\nt=1,M=1,K=1,2,0\n");
    REQUIRE(frames.size() == 2);
    CHECK(frames[0].timestamp == 1.0);
    CHECK(frames[1].timestamp == 2.0);
  }

  SECTION("write -> parse round trip of 100 random frames is exact") {
    std::vector<CsiFrame> frames;
    for (std::uint64_t i = 0; i < 100; ++i) {
      CsiFrame f = random_frame(4, 2, 1000 + i);
      f.timestamp = 0.01 * static_cast<double>(i);
      frames.push_back(std::move(f));
    }
    const auto back = parse_csi_log(format_csi_log(frames));
    REQUIRE(back.size() == frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i) {
      CHECK(back[i].timestamp == frames[i].timestamp);
      for (std::size_t j = 0; j < frames[i].h.size(); ++j) {
        CHECK(back[i].h[j] == frames[i].h[j]);
      }
    }
  }
}
