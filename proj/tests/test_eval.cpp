// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fieldfuse/error.hpp"
#include "fieldfuse/eval.hpp"
#include "fieldfuse/reference.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

using namespace fieldfuse;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::IoError;
}

ConfusionMatrix conf_of(std::size_t k, std::vector<std::uint64_t> v) { return ConfusionMatrix(k, k, std::move(v)); }

}  // namespace

TEST_CASE("label map remap") {
  const auto map = parse_label_map(R"({"entries":[
    {"target":"vehicle","prompts":["car","truck"]},
    {"target":"person","prompts":["pedestrian"]}]})");
  CHECK(map.flattened_prompts() == std::vector<std::string>{"car", "truck", "pedestrian"});
  CHECK(map.target_classes() == std::vector<std::string>{"vehicle", "person"});
  const std::vector<std::int32_t> pred = {1, -1, 2, 0};
  CHECK(remap(pred, map) == std::vector<std::int32_t>{0, -1, 1, 0});
  const std::vector<std::int32_t> bad = {3};
  CHECK(code_of([&] { remap(bad, map); }) == ErrorCode::UnmappedPrompt);
  const std::vector<std::int32_t> negative = {-2};
  CHECK(code_of([&] { remap(negative, map); }) == ErrorCode::UnmappedPrompt);
}

TEST_CASE("label map validation") {
  CHECK(code_of([] { parse_label_map(R"({"entries":[{"target":"a","prompts":[]}]})"); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([] {
          parse_label_map(R"({"entries":[{"target":"a","prompts":["x"]},{"target":"b","prompts":["x"]}]})");
        }) == ErrorCode::InvalidArgument);
  CHECK(code_of([] { parse_label_map("{"); }) == ErrorCode::ParseError);
  CHECK(code_of([] { parse_label_map(R"({"entries":[{"prompts":["x"]}]})"); }) == ErrorCode::ParseError);

  testkit::TempDir dir;
  CHECK(code_of([&] { load_label_map(dir.path() / "missing.json"); }) == ErrorCode::IoError);
}

TEST_CASE("confusion examples") {
  std::vector<std::int32_t> gt(100), pred(100);
  for (int i = 0; i < 100; ++i) gt[i] = pred[i] = i % 4;
  const auto c = confusion(gt, pred, 4);
  std::uint64_t diag = 0;
  for (int k = 0; k < 4; ++k) diag += c(k, k);
  CHECK(diag == 100);

  const std::vector<std::int32_t> zeros(37, 0), ones(37, 1);
  const auto off = confusion(zeros, ones, 2);
  CHECK(off(0, 1) == 37);
  CHECK(off(0, 0) + off(1, 0) + off(1, 1) == 0);

  const std::vector<std::int32_t> g = {0, -1, 1}, p = {-1, 1, 1};
  const auto ignored = confusion(g, p, 2);
  CHECK(ignored(1, 1) == 1);
  CHECK(std::accumulate(ignored.data().begin(), ignored.data().end(), std::uint64_t{0}) == 1);

  const std::vector<std::int32_t> out = {2};
  CHECK(code_of([&] { confusion(out, std::vector<std::int32_t>{0}, 2); }) == ErrorCode::LabelOutOfRange);
  CHECK(code_of([&] { confusion(std::vector<std::int32_t>{0}, std::vector<std::int32_t>{-3}, 2); }) ==
        ErrorCode::LabelOutOfRange);
  CHECK(code_of([&] { confusion(std::vector<std::int32_t>{0}, std::vector<std::int32_t>{0, 1}, 2); }) ==
        ErrorCode::ShapeMismatch);
}

TEST_CASE("confusion matches brute force and the serial reference") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    const std::size_t k = 1 + rng() % 30, m = rng() % 20000;
    std::vector<std::int32_t> gt(m), pred(m);
    for (std::size_t i = 0; i < m; ++i) {
      gt[i] = static_cast<std::int32_t>(rng() % (k + 1)) - 1;
      pred[i] = static_cast<std::int32_t>(rng() % (k + 1)) - 1;
    }
    const auto c = confusion(gt, pred, k);
    CHECK(c == testkit::oracle_confusion(gt, pred, k));
    CHECK(c == reference::confusion(gt, pred, k));
  }
}

TEST_CASE("metric examples") {
  const auto perfect = miou_macc(conf_of(2, {7, 0, 0, 3}));
  CHECK(perfect.miou == 1.0);
  CHECK(perfect.macc == 1.0);

  const auto m = miou_macc(conf_of(2, {5, 5, 0, 10}));
  CHECK(m.iou[0] == doctest::Approx(0.5));
  CHECK(m.iou[1] == doctest::Approx(2.0 / 3.0));
  CHECK(m.miou == doctest::Approx(0.58333333));
  CHECK(m.acc[0] == doctest::Approx(0.5));
  CHECK(m.acc[1] == doctest::Approx(1.0));
  CHECK(m.macc == doctest::Approx(0.75));

  // class 2 absent from gt and pred
  const auto absent = miou_macc(conf_of(3, {5, 5, 0, 0, 10, 0, 0, 0, 0}));
  CHECK(absent.present[2] == 0);
  CHECK(std::isnan(absent.iou[2]));
  CHECK(absent.miou == doctest::Approx(0.58333333));
  CHECK(absent.macc == doctest::Approx(0.75));
}

TEST_CASE("metrics match the formula on random confusions") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 100; ++t) {
    const std::size_t k = 1 + rng() % 12;
    ConfusionMatrix c(k, k);
    for (auto& v : c.data()) v = (rng() % 3 == 0) ? 0 : rng() % 50;
    const auto m = miou_macc(c);
    double iou_sum = 0, acc_sum = 0;
    int iou_n = 0, acc_n = 0;
    for (std::size_t a = 0; a < k; ++a) {
      std::uint64_t row = 0, col = 0;
      for (std::size_t b = 0; b < k; ++b) {
        row += c(a, b);
        col += c(b, a);
      }
      const double tp = double(c(a, a));
      if (row == 0 && col == 0) continue;
      iou_sum += tp / double(row + col - c(a, a));
      ++iou_n;
      if (row > 0) {
        acc_sum += tp / double(row);
        ++acc_n;
        CHECK(m.iou[a] <= m.acc[a]);
      }
    }
    if (iou_n) CHECK(m.miou == doctest::Approx(iou_sum / iou_n).epsilon(1e-12));
    if (acc_n) CHECK(m.macc == doctest::Approx(acc_sum / acc_n).epsilon(1e-12));

    // permuting class indices permutes the per-class values
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    ConfusionMatrix pc(k, k);
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) pc(perm[a], perm[b]) = c(a, b);
    const auto pm = miou_macc(pc);
    for (std::size_t a = 0; a < k; ++a) {
      CHECK((std::isnan(pm.iou[perm[a]]) == std::isnan(m.iou[a])));
      if (!std::isnan(m.iou[a])) CHECK(pm.iou[perm[a]] == m.iou[a]);
    }
    if (iou_n) CHECK(pm.miou == doctest::Approx(m.miou).epsilon(1e-12));
    else CHECK(std::isnan(pm.miou));
  }
}

TEST_CASE("grouped accuracy") {
  // accuracies by class: (0, 1, 0, 1); frequencies rank classes 3, 1, 2, 0
  const auto c = conf_of(4, {0, 4, 0, 0,  //
                             0, 5, 0, 0,  //
                             0, 0, 0, 6,  //
                             0, 0, 0, 8});
  const std::vector<std::uint64_t> freq = {4, 5, 4, 8};
  const auto groups = grouped_macc(c, freq, 2);
  REQUIRE(groups.size() == 2);
  CHECK(groups[0] == 1.0);
  CHECK(groups[1] == 0.0);
  const auto whole = grouped_macc(c, freq, 10);
  REQUIRE(whole.size() == 1);
  CHECK(whole[0] == doctest::Approx(miou_macc(c).macc));
  CHECK(code_of([&] { grouped_macc(c, freq, 0); }) == ErrorCode::InvalidArgument);

  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    const std::size_t k = 1 + rng() % 40;
    ConfusionMatrix r(k, k);
    for (auto& v : r.data()) v = rng() % 20;
    std::vector<std::uint64_t> f(k);
    for (auto& v : f) v = rng() % 5;  // plenty of ties
    const std::size_t g = 1 + rng() % 10;
    const auto got = grouped_macc(r, f, g);
    const auto want = testkit::oracle_grouped_macc(r, f, g);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      if (std::isnan(want[i])) CHECK(std::isnan(got[i]));
      else CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
  }
}
