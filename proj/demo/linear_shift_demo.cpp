// Linear-shift walkthrough: train a head on the source clusters, align the
// target with the default config, print the report and write a scatter plot.
//
//   linear_shift_demo [seed] [out.svg]

#include <cstdio>
#include <cstdlib>
#include <string>

#include "tca/tca.hpp"

int main(int argc, char** argv) {
  using namespace tca;
  const std::uint64_t seed = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 0;
  const std::string svg_path = argc > 2 ? argv[2] : "linear_shift.svg";

  const auto ds = gen_linear_shift(seed);
  TrainOptions train;
  train.lr = 0.1;
  train.epochs = 2000;
  const auto head = train_head(ds.source.features, ds.source.labels, train);

  const Matrix source_sigma = covariance(ds.source.features).sigma;
  const auto result = adapt(ds.target.features, head, AdaptConfig{}, ds.target.labels, source_sigma);
  const auto& r = result.report;

  std::printf("seed %llu: %zu source / %zu target points, d=%zu, c=%zu\n", static_cast<unsigned long long>(seed),
              ds.source.features.rows(), r.n, r.d, r.c);
  std::printf("accuracy            %.4f -> %.4f\n", *r.accuracy_before, *r.accuracy_after);
  std::printf("dist to pseudo      %.4g -> %.4g\n", r.dist_test_to_pseudo_before, r.dist_test_to_pseudo_after);
  std::printf("dist to source      %.4g -> %.4g\n", *r.dist_test_to_source_before, *r.dist_test_to_source_after);
  std::printf("pseudo vs source    %.4g\n", *r.dist_pseudo_to_source);

  std::printf("W =\n");
  for (Eigen::Index i = 0; i < result.transform.w.rows(); ++i) {
    std::printf("  % .6f % .6f\n", result.transform.w(i, 0), result.transform.w(i, 1));
  }

  const EmbeddingBatch moved = apply_transform(ds.target.features, result.transform);
  write_file_atomic(svg_path, render_scatter_svg({{&ds.source.features, &ds.source.labels, "source", "#1f77b4"},
                                                  {&ds.target.features, &ds.target.labels, "target", "#7f7f7f"},
                                                  {&moved, &ds.target.labels, "transformed", "#d62728"}}));
  std::printf("wrote %s\n", svg_path.c_str());
}
