#include <catch2/catch.hpp>

#include <cmath>
#include <sstream>

#include "testutil.hpp"
#include "tinytrain/lr_finder.hpp"

using namespace tinytrain;

TEST_CASE("sweep lr grid endpoints and smoothing") {
  SECTION("first lr is lr_start, last is lr_end, strictly increasing") {
    LrRangeOptions opt;
    opt.lr_start = 1e-4;
    opt.lr_end = 1.0;
    opt.num_iters = 37;
    SweepRecord rec = lr_range_test([](double) { return 1.0; }, opt);
    REQUIRE(rec.points.size() == 37);
    REQUIRE(rec.points.front().lr == 1e-4);
    REQUIRE(rec.points.back().lr == 1.0);
    for (std::size_t i = 1; i < rec.points.size(); ++i) {
      REQUIRE(rec.points[i].lr > rec.points[i - 1].lr);
    }
    REQUIRE(rec.stop_reason == StopReason::Completed);
  }

  SECTION("beta = 0 makes smoothed equal raw exactly") {
    LrRangeOptions opt;
    opt.beta = 0.0;
    opt.num_iters = 12;
    int i = 0;
    SweepRecord rec = lr_range_test([&](double) { return 5.0 - 0.1 * i++; }, opt);
    for (const auto& p : rec.points) REQUIRE(p.smoothed_loss == p.raw_loss);
  }

  SECTION("smoothing matches a direct recomputation") {
    LrRangeOptions opt;
    opt.beta = 0.9;
    opt.num_iters = 40;
    Rng rng(5);
    std::vector<double> losses;
    for (int i = 0; i < 40; ++i) losses.push_back(1.0 + rng.uniform());
    std::size_t k = 0;
    SweepRecord rec = lr_range_test([&](double) { return losses[k++]; }, opt);
    double ema = 0.0;
    for (std::size_t i = 0; i < rec.points.size(); ++i) {
      ema = 0.9 * ema + 0.1 * losses[i];
      double want = ema / (1.0 - std::pow(0.9, static_cast<double>(i + 1)));
      REQUIRE(rec.points[i].smoothed_loss == Approx(want).epsilon(1e-15));
    }
  }

  SECTION("option validation") {
    LrRangeOptions bad;
    bad.lr_start = 0.0;
    REQUIRE_THROWS_AS(lr_range_test([](double) { return 0.0; }, bad), ValidationError);
    LrRangeOptions few;
    few.num_iters = 5;
    REQUIRE_THROWS_AS(lr_range_test([](double) { return 0.0; }, few), ValidationError);
  }
}

TEST_CASE("quadratic toy: stability threshold at lr = 2/lambda") {
  // L(w) = lambda/2 * w^2 under plain gradient descent diverges iff
  // lr > 2/lambda. The sweep must flag divergence, and any recorded step
  // where the loss decreased must have used a rate below the threshold.
  const double lambda = 10.0;
  double w = 1.0;
  auto step = [&](double lr) {
    double loss = 0.5 * lambda * w * w;
    w -= lr * lambda * w;
    return loss;
  };
  LrRangeOptions opt;  // defaults: 1e-5 .. 10 over 200 iters
  SweepRecord rec = lr_range_test(step, opt);
  REQUIRE(rec.stop_reason == StopReason::Diverged);
  for (std::size_t i = 1; i < rec.points.size(); ++i) {
    if (rec.points[i].raw_loss < rec.points[i - 1].raw_loss) {
      REQUIRE(rec.points[i - 1].lr < 2.0 / lambda);
    }
  }

  SECTION("selected lr is below the divergence point and trains stably") {
    double selected = select_lr(rec, LrSelectRule::Steepest);
    REQUIRE(selected > 0.0);
    REQUIRE(selected < 2.0 / lambda);
    REQUIRE(selected < rec.points.back().lr);

    double w2 = 1.0;
    double prev = 0.5 * lambda * w2 * w2;
    for (int i = 0; i < 100; ++i) {
      w2 -= selected * lambda * w2;
      double loss = 0.5 * lambda * w2 * w2;
      REQUIRE(loss < prev);
      prev = loss;
    }
  }
}

namespace {

SweepRecord v_shaped_sweep(double lr_star, std::size_t n) {
  // Smoothed loss falls linearly to a minimum at lr_star then rises.
  SweepRecord rec;
  double lr_start = lr_star / 100.0, lr_end = lr_star * 100.0;
  for (std::size_t i = 0; i < n; ++i) {
    double lr = lr_start * std::pow(lr_end / lr_start, double(i) / double(n - 1));
    double s = std::abs(std::log(lr) - std::log(lr_star));
    rec.points.push_back({i, lr, s, s});
  }
  rec.stop_reason = StopReason::Completed;
  return rec;
}

}  // namespace

TEST_CASE("lr selection rules") {
  SECTION("MinOverTen returns the minimum lr divided by ten") {
    SweepRecord rec = v_shaped_sweep(0.1, 41);
    double got = select_lr(rec, LrSelectRule::MinOverTen);
    // n=41 puts a grid point exactly at lr_star
    REQUIRE(got == Approx(0.1 / 10.0).epsilon(1e-9));
  }

  SECTION("monotone increasing loss raises the no-descending-region error") {
    SweepRecord rec;
    for (std::size_t i = 0; i < 20; ++i) {
      rec.points.push_back({i, 1e-4 * std::pow(10.0, double(i) / 4.0),
                            1.0 + 0.1 * double(i), 1.0 + 0.1 * double(i)});
    }
    REQUIRE_THROWS_WITH(select_lr(rec, LrSelectRule::Steepest), Catch::Contains("descending"));
  }

  SECTION("steepest picks the fastest-descent point, not the minimum") {
    SweepRecord rec;
    // Slope steepens towards index 6, then flattens into the minimum at 10.
    double s = 10.0;
    const double drops[] = {0.1, 0.3, 0.8, 2.0, 3.0, 1.0, 0.5, 0.2, 0.1, 0.05};
    for (std::size_t i = 0; i < 20; ++i) {
      if (i > 0 && i <= 10) s -= drops[i - 1];
      if (i > 10) s += 0.4;
      rec.points.push_back({i, std::pow(10.0, double(i) / 5.0 - 4.0), s, s});
    }
    double got = select_lr(rec, LrSelectRule::Steepest);
    // ln lr steps are uniform, so the steepest slope is the largest drop (at i=5).
    REQUIRE(got == Approx(rec.points[5].lr));
  }

  SECTION("steepest falls back to MinOverTen when too few descending points") {
    SweepRecord rec;
    double vals[] = {5, 5, 5, 5, 5, 5, 5, 4, 3, 2, 2.5, 3.5};
    for (std::size_t i = 0; i < 12; ++i) {
      rec.points.push_back({i, std::pow(10.0, double(i) / 3.0 - 4.0), vals[i], vals[i]});
    }
    // Only 3 descending steps before the minimum at index 9.
    double got = select_lr(rec, LrSelectRule::Steepest);
    REQUIRE(got == Approx(rec.points[9].lr / 10.0));
  }

  SECTION("requires at least 10 points") {
    SweepRecord rec;
    for (std::size_t i = 0; i < 9; ++i) rec.points.push_back({i, 0.1, 1.0, 1.0});
    REQUIRE_THROWS_AS(select_lr(rec, LrSelectRule::Steepest), ValidationError);
  }
}

TEST_CASE("sweep export") {
  SweepRecord rec = v_shaped_sweep(0.05, 21);
  std::ostringstream csv;
  write_sweep_csv(rec, csv);
  std::istringstream in(csv.str());
  std::string line;
  std::getline(in, line);
  REQUIRE(line == "iteration,lr,raw_loss,smoothed_loss");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  REQUIRE(rows == 21);

  std::string svg = sweep_svg(rec, select_lr(rec, LrSelectRule::MinOverTen));
  REQUIRE(svg.find("<svg") == 0);
  REQUIRE(svg.find("polyline") != std::string::npos);
  REQUIRE(svg.find("</svg>") != std::string::npos);
}
