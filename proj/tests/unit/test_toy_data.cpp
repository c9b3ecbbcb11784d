#include <algorithm>
#include <map>
#include <set>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "cpdflow/cond_prior.hpp"
#include "cpdflow/error.hpp"
#include "cpdflow/toy_data.hpp"
#include "doctest.h"

using namespace cpdflow;

TEST_CASE("gen_ring_squares") {
  SUBCASE("k = 4 centers on the axes") {
    RingSquaresSpec spec;
    spec.k = 4;
    const std::vector<DVector> expect{{5, 0}, {0, 5}, {-5, 0}, {0, -5}};
    for (int i = 0; i < 4; ++i) {
      const auto c = ring_center(spec, i);
      CHECK(c[0] == doctest::Approx(expect[i][0]));
      CHECK(c[1] == doctest::Approx(expect[i][1]));
    }
  }
  SUBCASE("support and moments") {
    RingSquaresSpec spec;
    spec.seed = 3;
    const auto data = gen_ring_squares(spec);
    CHECK(data.size() == 8000);
    std::map<int, std::vector<DVector>> by;
    for (const auto& s : data) {
      const auto c = ring_center(spec, s.cond.id);
      CHECK(std::abs(s.x1[0] - c[0]) <= spec.square_side / 2);
      CHECK(std::abs(s.x1[1] - c[1]) <= spec.square_side / 2);
      by[s.cond.id].push_back(s.x1);
    }
    CHECK(by.size() == 8);
    const double tol = 3 * (spec.square_side / std::sqrt(12.0)) / std::sqrt(1000.0);
    for (const auto& [id, pts] : by) {
      const auto mc = sample_mean_cov(pts);
      const auto c = ring_center(spec, id);
      CHECK(std::abs(mc.mean[0] - c[0]) < tol);
      CHECK(std::abs(mc.mean[1] - c[1]) < tol);
    }
    const auto prior = fit_discrete_prior(data);
    for (const auto& [id, comp] : prior.components) CHECK(std::sqrt(squared_distance(comp.mean, ring_center(spec, id))) < 0.05);
  }
  SUBCASE("deterministic under a fixed seed") {
    RingSquaresSpec spec;
    spec.n_per_class = 20;
    const auto a = gen_ring_squares(spec), b = gen_ring_squares(spec);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].x1 == b[i].x1);
  }
  SUBCASE("invalid spec") {
    RingSquaresSpec spec;
    spec.k = 1;
    CHECK_THROWS_AS(gen_ring_squares(spec), Error);
  }
}

TEST_CASE("holdout_split") {
  RingSquaresSpec spec;
  spec.n_per_class = 10;
  const auto data = gen_ring_squares(spec);
  const auto [train0, test0] = holdout_split(data, {});
  CHECK(test0.empty());
  CHECK(train0.size() == data.size());

  const auto [train, test] = holdout_split(data, {6, 7});
  CHECK(class_ids(train).size() == 6);
  CHECK(class_ids(test) == std::set<int>{6, 7});
  CHECK(train.size() + test.size() == data.size());
  for (const auto& s : train) CHECK(s.cond.id < 6);

  try {
    holdout_split(data, {0, 1, 2, 3, 4, 5, 6, 7});
    FAIL("expected EmptyTrain");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyTrain);
  }
}

TEST_CASE("VLines loader") {
  SUBCASE("synthetic file round trip") {
    std::stringstream ss;
    write_synthetic_vlines_csv(ss, 6, 25, 1);
    const std::string text = ss.str();
    const auto rows = std::count(text.begin(), text.end(), '\n') - 1;  // minus header
    std::istringstream in(text);
    const auto data = read_vlines_csv(in);
    CHECK(static_cast<long>(data.size()) == rows);
    double mx = 0, my = 0;
    for (const auto& s : data) {
      mx += s.x1[0];
      my += s.x1[1];
    }
    CHECK(std::abs(mx / data.size()) < 1e-9);
    CHECK(std::abs(my / data.size()) < 1e-9);
    CHECK(class_ids(data) == std::set<int>{0, 1});
    // Lines alternate classes, so each class spans three separate lines.
    std::map<int, std::set<long>> lines;
    for (const auto& s : data) lines[s.cond.id].insert(std::lround(s.x1[0] * 4));
    CHECK(lines[0].size() > 1);
  }
  SUBCASE("other datasets are filtered out and extra columns ignored") {
    std::istringstream in(
        "id,dataset,x,y\n1,dino,1,2\n2,v_lines,10,0\n3,v_lines,10,1\n4,v_lines,20,0\n5,v_lines,20,1\n6,away,3,3\n");
    const auto data = read_vlines_csv(in);
    CHECK(data.size() == 4);
    CHECK(data[0].cond.id != data[2].cond.id);
    CHECK(data[0].cond.id == data[1].cond.id);
  }
  SUBCASE("zero v_lines rows") {
    std::istringstream in("dataset,x,y\ndino,1,2\n");
    try {
      read_vlines_csv(in);
      FAIL("expected EmptyDataset");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::EmptyDataset);
    }
  }
  SUBCASE("malformed row names the row") {
    std::istringstream in("dataset,x,y\nv_lines,1,2\nv_lines,abc,2\n");
    try {
      read_vlines_csv(in);
      FAIL("expected IoError");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::IoError);
      CHECK(std::string(e.what()).find("3") != std::string::npos);
    }
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_vlines_csv("/nonexistent/vlines.csv"), Error);
  }
}

TEST_CASE("gen_angle_conditioned") {
  AngleSpec spec;
  spec.noise_std = 0.0;
  spec.n_per_class = 5;
  const auto data = gen_angle_conditioned(spec);
  std::set<double> train_angles, test_angles;
  for (const auto& s : data) {
    CHECK(s.cond.is_continuous());
    CHECK(std::hypot(s.x1[0], s.x1[1]) == doctest::Approx(spec.radius));
    (s.split == Split::Train ? train_angles : test_angles).insert(s.cond.angle);
  }
  CHECK(train_angles.size() == 16);
  CHECK(test_angles.size() == 16);
  for (double a : test_angles) CHECK(train_angles.count(a) == 0);

  const auto e = angle_embedding(std::numbers::pi / 2);
  CHECK(e.size() == 4);
  CHECK(e[1] == doctest::Approx(1.0));
  CHECK(e[2] == doctest::Approx(-1.0));

  AngleSpec noisy;
  noisy.seed = 2;
  const auto d1 = gen_angle_conditioned(noisy), d2 = gen_angle_conditioned(noisy);
  for (std::size_t i = 0; i < d1.size(); ++i) CHECK(d1[i].x1 == d2[i].x1);
}

TEST_CASE("mapper generalizes to unseen angles") {
  AngleSpec spec;
  spec.seed = 5;
  spec.n_per_class = 100;
  const auto data = gen_angle_conditioned(spec);
  std::vector<DVector> emb, tgt;
  for (const auto& s : data)
    if (s.split == Split::Train) {
      emb.push_back(angle_embedding(s.cond.angle));
      tgt.push_back(s.x1);
    }
  MapperConfig mc;
  mc.epochs = 150;
  mc.seed = 1;
  const auto fit = train_mapper(emb, tgt, mc);
  for (int i = 0; i < spec.k_train; ++i) {
    const double a = 2 * std::numbers::pi * (i + 0.5) / spec.k_train;
    const auto pred = fit.mapper(angle_embedding(a));
    const DVector truth{spec.radius * std::cos(a), spec.radius * std::sin(a)};
    CHECK(std::sqrt(squared_distance(pred, truth)) < 3 * spec.noise_std);
  }
}

TEST_CASE("dataset CSV round trip") {
  Dataset data{{{1.5, -2.25}, Condition::discrete(3), Split::Train},
               {{0.1, 1e-17}, Condition::continuous(0.7853981633974483), Split::Test}};
  std::stringstream ss;
  write_dataset_csv(ss, data);
  CHECK(ss.str().rfind("condition,x_0,x_1,split\n", 0) == 0);
  const auto back = read_dataset_csv(ss);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].x1 == data[i].x1);
    CHECK(back[i].cond == data[i].cond);
    CHECK(back[i].split == data[i].split);
  }
  std::istringstream bad("condition,x_0,split\n1,2,valid\n");
  CHECK_THROWS_AS(read_dataset_csv(bad), Error);
  CHECK(parse_condition("angle:0.5").angle == 0.5);
  CHECK_THROWS_AS(parse_condition("x7"), Error);
}
