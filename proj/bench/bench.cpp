// SPDX-License-Identifier: Apache-2.0
// Serial reference vs OpenMP kernels. Usage: fieldfuse_bench [repeats]

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <random>

#include "fieldfuse/distill.hpp"
#include "fieldfuse/eval.hpp"
#include "fieldfuse/fusion.hpp"
#include "fieldfuse/projection.hpp"
#include "fieldfuse/query.hpp"
#include "fieldfuse/reference.hpp"
#include "synthetic.hpp"

using namespace fieldfuse;

namespace {

template <typename F>
double best_of(int repeats, F&& fn) {
  double best = 1e300;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

template <typename S, typename P>
void row(const char* name, int repeats, S&& serial, P&& parallel, bool same) {
  const double s = best_of(repeats, serial);
  const double p = best_of(repeats, parallel);
  std::printf("%-16s %10.2f %10.2f %8.2fx  %s\n", name, s * 1e3, p * 1e3, s / p, same ? "identical" : "DIFFERENT");
}

}  // namespace

int main(int argc, char** argv) {
  const int repeats = argc > 1 ? std::max(1, std::atoi(argv[1])) : 3;
  std::printf("threads: %d, best of %d\n", omp_get_max_threads(), repeats);
  std::printf("%-16s %10s %10s %9s\n", "kernel", "serial ms", "omp ms", "speedup");

  std::mt19937_64 rng(42);
  Scene scene;
  while (scene.cloud.size() < 100000) {
    // a large scene: concatenate clouds, keep the images of the first
    const auto part = testkit::random_scene(rng, {1000, 4, 64, 32, 0.05});
    if (scene.images.empty()) scene = part;
    else scene.cloud.positions.insert(scene.cloud.positions.end(), part.cloud.positions.begin(), part.cloud.positions.end());
  }
  while (scene.images.size() < 32) {
    auto more = testkit::random_scene(rng, {1000, 4, 64, 32, 0.05});
    for (auto& img : more.images)
      if (img.features.cols() == scene.feature_dim()) scene.images.push_back(std::move(img));
  }
  const OcclusionConfig occ{0.2, true};
  row("visible_pairs", repeats, [&] { reference::visible_pairs(scene, occ); }, [&] { visible_pairs(scene, occ); },
      reference::visible_pairs(scene, occ) == visible_pairs(scene, occ));
  row("fuse average", repeats, [&] { reference::fuse_average(scene, occ); },
      [&] { fuse(scene, occ, {PoolKind::Average}); },
      reference::fuse_average(scene, occ).features == fuse(scene, occ, {PoolKind::Average}).features);

  std::normal_distribution<float> n;
  FeatureMatrix features(200000, 64);
  for (auto& v : features.data()) v = n(rng);
  PromptSet prompts;
  prompts.embeddings = FeatureMatrix(20, 64);
  for (auto& v : prompts.embeddings.data()) v = n(rng);
  prompts.prompts.assign(20, "p");
  row("similarities", repeats, [&] { reference::similarity_scores(features, prompts); },
      [&] { similarities(features, prompts); },
      reference::similarity_scores(features, prompts) == similarities(features, prompts).scores);

  const auto field = testkit::random_field(rng, 32, 3);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Eigen::Vector3d> pos(200000);
  for (auto& p : pos) p = {u(rng), u(rng), u(rng)};
  row("field_eval", repeats, [&] { reference::field_eval(field, pos); }, [&] { field_eval(field, pos); },
      reference::field_eval(field, pos) == field_eval(field, pos));

  std::vector<std::int32_t> gt(5000000), pred(5000000);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    gt[i] = static_cast<std::int32_t>(rng() % 41) - 1;
    pred[i] = static_cast<std::int32_t>(rng() % 41) - 1;
  }
  row("confusion", repeats, [&] { reference::confusion(gt, pred, 40); }, [&] { confusion(gt, pred, 40); },
      reference::confusion(gt, pred, 40) == confusion(gt, pred, 40));
  return 0;
}
