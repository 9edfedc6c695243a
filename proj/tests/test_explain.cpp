#include <doctest.h>

#include <cmath>

#include "evnet/eval.hpp"
#include "evnet/explain.hpp"
#include "evnet/trainer.hpp"

using namespace evnet;

namespace {

struct Fitted {
  Dataset data;
  ModelParams params;
  ClusterModel clusters;
  Matrix embedding;
};

// Small trained model with two clusters; a constant column is appended so the
// skip rule is exercised.
const Fitted& fitted() {
  static const Fitted f = [] {
    TrainConfig cfg;
    cfg.epochs = 6;
    cfg.batch_size = 40;
    cfg.seed = 2;
    cfg.shape = NetworkShape{{16, 8}, {8, 2}};
    Dataset raw = make_synthetic(parse_synthetic_spec("gaussians:k=2,per=20,dim=3"), 5);
    raw.features.conservativeResize(Eigen::NoChange, 4);
    raw.features.col(3).setConstant(7.0);
    raw.feature_names.push_back("flat");
    Fitted out;
    out.data = prepare_training_data(raw, cfg);
    out.params = fit(out.data, cfg).params;
    out.embedding = embed(out.data.features, out.params);
    out.clusters = kmeans_fit(out.embedding, 2, 1);
    return out;
  }();
  return f;
}

ExplainOptions options(std::uint64_t seed = 0, std::size_t repeats = 4) {
  ExplainOptions o;
  o.seed = seed;
  o.repeats = repeats;
  return o;
}

}  // namespace

TEST_SUITE("explain") {
  TEST_CASE("kmeans examples") {
    Matrix two(2, 2);
    two << 0, 0, 3, 4;
    const ClusterModel m = kmeans_fit(two, 2, 1);
    CHECK(m.inertia == 0.0);
    CHECK(m.assignments[0] != m.assignments[1]);

    Matrix pts(4, 2);
    pts << 0, 0, 2, 0, 0, 2, 2, 2;
    const ClusterModel one = kmeans_fit(pts, 1, 1);
    CHECK(one.centers(0, 0) == 1.0);
    CHECK(one.centers(0, 1) == 1.0);
    CHECK(one.assignments == std::vector<std::size_t>{0, 0, 0, 0});

    CHECK_THROWS_AS(kmeans_fit(pts, 5, 1), Error);
  }

  TEST_CASE("kmeans recovers separated blobs and is seeded") {
    const Dataset d = make_synthetic(parse_synthetic_spec("gaussians:k=3,per=60,dim=2"), 8);
    const ClusterModel m = kmeans_fit(d.features, 3, 4);
    CHECK(clustering_accuracy(m.assignments, *d.labels) >= 0.99);
    CHECK(kmeans_fit(d.features, 3, 4).centers == m.centers);
    CHECK(assign_clusters(d.features, m.centers) == m.assignments);
  }

  TEST_CASE("assignment ties go to the lower id") {
    Matrix centers(2, 2);
    centers << -1, 0, 1, 0;
    Matrix p(1, 2);
    p << 0, 5;
    CHECK(assign_clusters(p, centers)[0] == 0);
  }

  TEST_CASE("cluster similarity is a distribution") {
    Matrix one(1, 2);
    one << 3, 3;
    RowVector z(2);
    z << 0.5, -1;
    CHECK(cluster_similarity(z, one, 0.01)(0) == 1.0);

    Matrix two(2, 2);
    two << -1, 0, 1, 0;
    z << 0, 2;
    const Vector p = cluster_similarity(z, two, 0.01);
    CHECK(p(0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(p(1) == doctest::Approx(0.5).epsilon(1e-15));

    Matrix many(3, 2);
    many << 0, 0, 10, 10, -10, 10;
    z << 0, 0;
    const Vector q = cluster_similarity(z, many, 0.5);
    CHECK(q(0) > q(1));
    CHECK(q(0) > q(2));

    auto rng = make_stream({3});
    for (int t = 0; t < 100; ++t) {
      z << rng.uniform(-5, 5), rng.uniform(-5, 5);
      for (double nu : {1e-3, 1e-2, 1.0}) CHECK(std::abs(cluster_similarity(z, many, nu).sum() - 1.0) <= 1e-12);
    }
  }

  TEST_CASE("global importance") {
    ModelParams p = init_params(3, 1, NetworkShape{{4}, {2}});
    p.gate << 0.2, 0.4, 0.0;
    const ImportanceReport r = global_importance(p);
    CHECK(r.values(0) == 0.5);
    CHECK(r.values(1) == 1.0);
    CHECK(r.values(2) == 0.0);
    CHECK(r.active == std::vector<bool>{true, true, false});
    CHECK(r.feature_names == std::vector<std::string>{"f0", "f1", "f2"});

    ModelParams scaled = p;
    scaled.gate *= 3.7;
    CHECK((global_importance(scaled).values - r.values).cwiseAbs().maxCoeff() <= 1e-15);

    p.gate.setConstant(0.3);
    CHECK(global_importance(p).values == Vector::Ones(3));
    p.gate.setZero();
    const ImportanceReport z = global_importance(p);
    CHECK(z.values.isZero());
    CHECK(z.warnings.size() == 1);
  }

  TEST_CASE("local importance: nonnegative, deterministic, skip rule for a constant feature") {
    const Fitted& f = fitted();
    const ClusterView view = ClusterView::from_model(f.clusters);
    const ImportanceReport r = local_importance(f.data, f.params, view, 0, options(1));
    CHECK(r.kind == ImportanceKind::kLocal);
    CHECK(r.values.size() == 4);
    CHECK((r.values.array() >= 0.0).all());
    CHECK(r.values(3) == 0.0);
    CHECK(r.skipped_draws[3] == r.sample_count * r.repeats);
    CHECK(r.sample_count == view.members[0].size());
    CHECK(local_importance(f.data, f.params, view, 0, options(1)).values == r.values);
    ExplainOptions threaded = options(1);
    threaded.threads = 3;
    CHECK(local_importance(f.data, f.params, view, 0, threaded).values == r.values);
  }

  TEST_CASE("closed gates score exactly zero in every report") {
    const Fitted& f = fitted();
    ModelParams p = f.params;
    p.gate(1) = 0.0;
    const ClusterView view = ClusterView::from_model(f.clusters);
    CHECK(global_importance(p).values(1) == 0.0);
    CHECK(local_importance(f.data, p, view, 1, options()).values(1) == 0.0);
    CHECK(transform_importance(f.data, p, view, 0, 1, options()).values(1) == 0.0);
  }

  TEST_CASE("self transformation is identically zero") {
    const Fitted& f = fitted();
    const ClusterView view = ClusterView::from_model(f.clusters);
    for (std::size_t c = 0; c < 2; ++c) CHECK(transform_importance(f.data, f.params, view, c, c, options()).values.isZero());
    const ImportanceReport t = transform_importance(f.data, f.params, view, 0, 1, options());
    CHECK(t.kind == ImportanceKind::kTransformation);
    CHECK(t.clusters == std::vector<std::size_t>{0, 1});
    CHECK((t.values.array() >= 0.0).all());
  }

  TEST_CASE("more repeats reduce the spread across seeds") {
    const Fitted& f = fitted();
    const ClusterView view = ClusterView::from_model(f.clusters);
    auto spread = [&](std::size_t repeats) {
      std::vector<Vector> runs;
      for (std::uint64_t s = 0; s < 6; ++s) runs.push_back(local_importance(f.data, f.params, view, 0, options(s, repeats)).values);
      Vector mean = Vector::Zero(runs[0].size());
      for (const auto& v : runs) mean += v;
      mean /= static_cast<double>(runs.size());
      double var = 0.0;
      for (const auto& v : runs) var += (v - mean).squaredNorm();
      return var;
    };
    CHECK(spread(32) < spread(4));
  }

  TEST_CASE("selection clusters and argument errors") {
    const Fitted& f = fitted();
    const ClusterView base = ClusterView::from_model(f.clusters);
    const ClusterView sel = with_selection(base, f.embedding, {0, 1, 2});
    REQUIRE(sel.members.size() == 3);
    CHECK(sel.members[2] == std::vector<std::size_t>{0, 1, 2});
    const RowVector centroid = f.embedding.topRows(3).colwise().mean();
    CHECK((sel.centers.row(2) - centroid).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK(local_importance(f.data, f.params, sel, 2, options()).values.size() == 4);

    CHECK_THROWS_AS(local_importance(f.data, f.params, base, 5, options()), Error);
    CHECK_THROWS_AS(with_selection(base, f.embedding, {}), Error);
    CHECK_THROWS_AS(with_selection(base, f.embedding, {9999}), Error);
  }
}
