#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "ega/loss.hpp"
#include "helpers.hpp"

using namespace ega;
using ega::test::rel_err;

namespace {

// Points on a line, so distances are exact differences.
Matrix<double> line(std::initializer_list<double> xs) {
  Matrix<double> m(xs.size(), 2);
  std::size_t i = 0;
  for (double x : xs) m(i++, 0) = x;
  return m;
}

bool all_zero(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

template <typename F>
double max_fd_error(Matrix<double>& emb, const Matrix<double>& grad, F loss_value) {
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < emb.size(); ++i) {
    double& x = emb.data()[i];
    const double keep = x;
    x = keep + h;
    const double fp = loss_value();
    x = keep - h;
    const double fm = loss_value();
    x = keep;
    worst = std::max(worst, rel_err(grad.data()[i], (fp - fm) / (2 * h)));
  }
  return worst;
}

}  // namespace

TEST_SUITE("loss") {
  TEST_CASE("satisfied margin gives zero loss and an exactly zero gradient") {
    const Matrix<double> e = line({0.0, 0.1, 0.5});
    TripletBatch b{{{0, 1, 2}}, {}, 0.2};
    const auto out = triplet_loss<double>(e.view(), b);
    CHECK(out.value == 0.0);
    CHECK(out.active_count == 0);
    CHECK(b.active == std::vector<std::uint8_t>{0});
    CHECK(all_zero(out.grad.data()));
    CHECK(out.support == 0);
  }

  TEST_CASE("violated margin gives the hinge value") {
    const Matrix<double> e = line({0.0, 0.5, 0.1});
    TripletBatch b{{{0, 1, 2}}, {}, 0.2};
    const auto out = triplet_loss<double>(e.view(), b);
    CHECK(out.value == doctest::Approx(0.6));
    CHECK(out.active_count == 1);
    // on a line with p and n on the same side, the anchor's two pulls cancel
    CHECK(out.support == 2);
    CHECK(out.grad(0, 0) == 0.0);
  }

  TEST_CASE("the mean runs over every triple, active or not") {
    const Matrix<double> e = line({0.0, 0.5, 0.1, 0.1, 0.5});
    TripletBatch b{{{0, 1, 2}, {0, 3, 4}, {0, 3, 4}, {0, 3, 4}}, {}, 0.2};
    const auto out = triplet_loss<double>(e.view(), b);
    CHECK(out.active_count == 1);
    CHECK(out.value == doctest::Approx(0.6 / 4));
    CHECK(active_ratio(b) == 0.25);
  }

  TEST_CASE("active ratio of a satisfied batch is zero") {
    const Matrix<double> e = line({0.0, 0.1, 0.5});
    TripletBatch b{{{0, 1, 2}, {0, 1, 2}}, {}, 0.2};
    triplet_loss<double>(e.view(), b);
    CHECK(active_ratio(b) == 0.0);
    TripletBatch unscored{{{0, 1, 2}}, {}, 0.2};
    CHECK_THROWS_AS(active_ratio(unscored), DataError);
  }

  TEST_CASE("a triple exactly on the hinge is inactive") {
    // 0.5 - 0.75 + 0.25 == 0 exactly in binary floating point.
    const Matrix<double> e = line({0.0, 0.5, 0.75});
    TripletBatch b{{{0, 1, 2}}, {}, 0.25};
    const auto out = triplet_loss<double>(e.view(), b);
    CHECK(out.active_count == 0);
    CHECK(all_zero(out.grad.data()));
  }

  TEST_CASE("coincident anchor and positive contribute a zero distance gradient") {
    const Matrix<double> e = line({0.3, 0.3, 0.35});
    TripletBatch b{{{0, 1, 2}}, {}, 0.2};
    const auto out = triplet_loss<double>(e.view(), b);
    CHECK(out.active_count == 1);
    CHECK(std::isfinite(out.grad(0, 0)));
    CHECK(out.grad(1, 0) == 0.0);
  }

  TEST_CASE("dropping inactive triples leaves the gradient bitwise unchanged") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 50; ++trial) {
      Matrix<float> e(12, 6);
      for (std::size_t i = 0; i < 12; ++i) {
        const auto v = test::random_unit<float>(6, rng);
        std::copy(v.begin(), v.end(), e.row(i).begin());
      }
      std::uniform_int_distribution<std::size_t> pick(0, 11);
      TripletBatch full;
      full.margin = 0.2;
      for (int t = 0; t < 10; ++t) full.triples.push_back({pick(rng), pick(rng), pick(rng)});
      const auto a = triplet_loss<float>(e.view(), full);
      TripletBatch kept;
      kept.margin = 0.2;
      for (std::size_t t = 0; t < full.size(); ++t) {
        if (full.active[t]) kept.triples.push_back(full.triples[t]);
      }
      if (kept.empty()) continue;
      const auto b = triplet_loss<float>(e.view(), kept, full.size());
      CHECK(std::memcmp(a.grad.data().data(), b.grad.data().data(), a.grad.size() * sizeof(float)) == 0);
    }
  }

  TEST_CASE("triplet gradient matches central differences") {
    std::mt19937_64 rng(12);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      Matrix<double> e(6, 8, test::random_normal<double>(48, rng, 0.3));
      TripletBatch b{{{0, 1, 2}, {3, 4, 5}, {1, 0, 5}, {2, 3, 4}}, {}, 1.0};
      const auto out = triplet_loss<double>(e.view(), b);
      worst = std::max(worst, max_fd_error(e, out.grad, [&] {
        TripletBatch c{b.triples, {}, b.margin};
        return triplet_loss<double>(e.view(), c).value;
      }));
    }
    CHECK(worst < 1e-4);
  }

  TEST_CASE("triplet loss errors") {
    const Matrix<double> e = line({0.0, 0.1, 0.5});
    TripletBatch empty;
    CHECK_THROWS_AS(triplet_loss<double>(e.view(), empty), DataError);
    TripletBatch zero_margin{{{0, 1, 2}}, {}, 0.0};
    CHECK_THROWS_AS(triplet_loss<double>(e.view(), zero_margin), ConfigError);
    TripletBatch out_of_range{{{0, 1, 7}}, {}, 0.2};
    CHECK_THROWS_AS(triplet_loss<double>(e.view(), out_of_range), DataError);
  }

  TEST_CASE("InfoNCE with uniform similarities is log 2 per anchor") {
    Matrix<double> e(3, 2);
    for (std::size_t i = 0; i < 3; ++i) e(i, 0) = 1.0;
    const std::vector<std::uint32_t> labels{0, 0, 1};
    const auto out = supcon_infonce_loss<double>(e.view(), labels, 0.07);
    CHECK(out.value == doctest::Approx(std::log(2.0)));
    CHECK(out.active_count == 2);
  }

  TEST_CASE("InfoNCE gradient is dense even for perfectly separated classes") {
    Matrix<double> e(4, 2);
    e(0, 0) = e(1, 0) = 1.0;
    e(2, 1) = e(3, 1) = 1.0;
    const std::vector<std::uint32_t> labels{0, 0, 1, 1};
    const auto out = supcon_infonce_loss<double>(e.view(), labels, 0.5);
    for (std::size_t i = 0; i < 4; ++i) CHECK_FALSE(all_zero(out.grad.row(i)));
    CHECK(out.support == 4);
  }

  TEST_CASE("InfoNCE gradient matches central differences at B=6, d=8") {
    std::mt19937_64 rng(13);
    const std::vector<std::uint32_t> labels{0, 0, 1, 1, 2, 0};
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      Matrix<double> e(6, 8);
      for (std::size_t i = 0; i < 6; ++i) {
        const auto v = test::random_unit<double>(8, rng);
        std::copy(v.begin(), v.end(), e.row(i).begin());
      }
      const auto out = supcon_infonce_loss<double>(e.view(), labels, 0.3);
      worst = std::max(worst, max_fd_error(e, out.grad, [&] {
        return supcon_infonce_loss<double>(e.view(), labels, 0.3).value;
      }));
    }
    CHECK(worst < 1e-4);
  }

  TEST_CASE("InfoNCE skips anchors without positives and validates inputs") {
    Matrix<double> e(3, 2);
    e(0, 0) = 1.0;
    e(1, 1) = 1.0;
    e(2, 0) = -1.0;
    const std::vector<std::uint32_t> distinct{0, 1, 2};
    CHECK_THROWS_AS(supcon_infonce_loss<double>(e.view(), distinct, 0.1), DataError);
    const std::vector<std::uint32_t> labels{0, 0, 1};
    CHECK_THROWS_AS(supcon_infonce_loss<double>(e.view(), labels, 0.0), ConfigError);
    CHECK_THROWS_AS(supcon_infonce_loss<double>(e.view(), labels, -1.0), ConfigError);
    const auto out = supcon_infonce_loss<double>(e.view(), labels, 0.1);
    CHECK(out.active_count == 2);
  }

  TEST_CASE("InfoNCE support covers at least the triplet support") {
    std::mt19937_64 rng(14);
    for (int trial = 0; trial < 20; ++trial) {
      Matrix<float> e(10, 8);
      std::vector<std::uint32_t> labels(10);
      for (std::size_t i = 0; i < 10; ++i) {
        const auto v = test::random_unit<float>(8, rng);
        std::copy(v.begin(), v.end(), e.row(i).begin());
        labels[i] = static_cast<std::uint32_t>(i % 3);
      }
      TripletBatch b{{{0, 3, 1}, {1, 4, 2}, {2, 5, 0}, {6, 9, 7}}, {}, 0.2};
      const auto t = triplet_loss<float>(e.view(), b);
      const auto s = supcon_infonce_loss<float>(e.view(), labels, 0.07f);
      CHECK(s.support >= t.support);
    }
  }
}
