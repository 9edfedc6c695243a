#include <doctest.h>

#include <algorithm>
#include <set>

#include "evnet/serialize.hpp"
#include "evnet/trainer.hpp"

using namespace evnet;

namespace {

const NetworkShape kSmall{{16, 8}, {8, 2}};

TrainConfig small_config(std::uint64_t seed = 1) {
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 24;
  cfg.seed = seed;
  cfg.shape = kSmall;
  return cfg;
}

Dataset small_data(const TrainConfig& cfg, const std::string& spec = "gaussians:k=3,per=20,dim=5") {
  return prepare_training_data(make_synthetic(parse_synthetic_spec(spec), 3), cfg);
}

bool same_params(const ModelParams& a, const ModelParams& b) {
  if (a.gate != b.gate || a.projection.size() != b.projection.size() || a.head.size() != b.head.size()) return false;
  for (std::size_t l = 0; l < a.projection.size(); ++l) {
    if (a.projection[l].weight != b.projection[l].weight || a.projection[l].bias != b.projection[l].bias) return false;
  }
  for (std::size_t l = 0; l < a.head.size(); ++l) {
    if (a.head[l].weight != b.head[l].weight || a.head[l].bias != b.head[l].bias) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("config validation") {
    TrainConfig cfg;
    cfg.epochs = 0;
    try {
      validate(cfg);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("epochs >= 1") != std::string::npos);
    }
    cfg = {};
    cfg.epsilon = 0.3;
    CHECK_THROWS_AS(validate(cfg), Error);
    cfg = small_config();
    cfg.target_features = 99;
    const Dataset d = small_data(small_config());
    CHECK_THROWS_AS(Trainer(d, cfg), Error);
  }

  TEST_CASE("epoch batches partition the rows and merge a trailing single item") {
    for (std::size_t rows : {2u, 7u, 25u, 100u}) {
      for (std::size_t b : {2u, 3u, 8u, 1000u}) {
        const auto batches = epoch_batches(rows, b, 5, 2);
        std::vector<std::size_t> all;
        for (const auto& batch : batches) {
          CHECK(batch.size() >= 2);
          all.insert(all.end(), batch.begin(), batch.end());
        }
        std::sort(all.begin(), all.end());
        REQUIRE(all.size() == rows);
        for (std::size_t i = 0; i < rows; ++i) CHECK(all[i] == i);
      }
    }
    CHECK(epoch_batches(25, 8, 5, 2).size() == 3);
    CHECK(epoch_batches(25, 8, 5, 2).back().size() == 9);
    CHECK(epoch_batches(50, 10, 1, 0) == epoch_batches(50, 10, 1, 0));
    CHECK(epoch_batches(50, 10, 1, 0) != epoch_batches(50, 10, 1, 1));
  }

  TEST_CASE("history records every epoch; no pruning keeps every gate open") {
    const TrainConfig cfg = small_config();
    const Dataset d = small_data(cfg);
    std::size_t calls = 0;
    const TrainerState s = fit(d, cfg, [&](const TrainerState&) { ++calls; });
    CHECK(calls == cfg.epochs);
    CHECK(s.epochs_completed == cfg.epochs);
    CHECK(s.report.history.size() == cfg.epochs);
    CHECK_FALSE(s.report.pruning);
    for (const auto& h : s.report.history) {
      CHECK(h.lambda == 0.0);
      CHECK(h.active == 5);
      CHECK(std::isfinite(h.l_sp));
    }
  }

  TEST_CASE("training is deterministic and independent of the thread count") {
    TrainConfig cfg = small_config(7);
    const Dataset d = small_data(cfg);
    const TrainerState a = fit(d, cfg);
    cfg.threads = 3;
    const TrainerState b = fit(d, cfg);
    CHECK(same_params(a.params, b.params));
    CHECK(to_json(a.report).dump() == to_json(b.report).dump());
  }

  TEST_CASE("resuming from a checkpoint equals uninterrupted training") {
    TrainConfig cfg = small_config(9);
    cfg.target_features = 3;
    cfg.epochs = 5;
    const Dataset d = small_data(cfg);
    const TrainerState full = fit(d, cfg);

    TrainConfig first = cfg;
    Trainer t(d, first);
    t.run(3);
    const Checkpoint ckpt = make_checkpoint(t.release(), d);
    Checkpoint loaded = checkpoint_from_string(checkpoint_to_string(ckpt));
    Trainer resumed(d, std::move(loaded.state));
    resumed.run(2);
    const TrainerState r = resumed.release();
    CHECK(same_params(full.params, r.params));
    CHECK(full.lambda.lambda == r.lambda.lambda);
    CHECK(full.optimizer.step == r.optimizer.step);
    CHECK(to_json(full.report).dump() == to_json(r.report).dump());
  }

  TEST_CASE("lambda grows by the fixed factor until the target is met, then latches") {
    TrainConfig cfg = small_config(2);
    cfg.epochs = 40;
    cfg.target_features = 2;
    cfg.lr = 5e-3;
    const Dataset d = small_data(cfg, "noisy_gaussians:k=2,per=15,dim=2,noise=3");
    const TrainerState s = fit(d, cfg);
    const auto& h = s.report.history;
    CHECK(s.report.pruning);
    CHECK(h.front().lambda > 0.0);
    bool latched = false;
    for (std::size_t e = 1; e < h.size(); ++e) {
      if (!latched && h[e - 1].active > 2) {
        CHECK(h[e].lambda == h[e - 1].lambda * 1.005);
      } else {
        latched = true;
        CHECK(h[e].lambda == h[e - 1].lambda);
      }
    }
    for (const auto& rec : h) CHECK(rec.active >= 2);
  }

  TEST_CASE("a non-finite loss aborts with the last good state") {
    TrainConfig cfg = small_config(4);
    cfg.lr = 1e300;
    cfg.epochs = 50;
    const Dataset d = small_data(cfg);
    try {
      fit(d, cfg);
      FAIL("expected TrainingAborted");
    } catch (const TrainingAborted& e) {
      CHECK(e.code() == ErrorCode::kNumeric);
      CHECK(std::string(e.what()).find("epoch") != std::string::npos);
      const TrainerState& good = e.last_good();
      CHECK(good.report.history.size() == good.epochs_completed);
      CHECK(good.params.gate.allFinite());
      for (const auto& l : good.params.projection) CHECK(l.weight.allFinite());
    }
  }

  TEST_CASE("embedding is pure, batch consistent and uses stored statistics") {
    const TrainConfig cfg = small_config(5);
    const Dataset raw = make_synthetic(parse_synthetic_spec("gaussians:k=3,per=20,dim=5"), 3);
    const Dataset d = prepare_training_data(raw, cfg);
    const TrainerState s = fit(d, cfg);
    const Matrix z = embed(d.features, s.params);
    CHECK(embed(d.features, s.params) == z);
    CHECK(embed(raw, s.params, d.normalization) == z);
    const Matrix one = embed(d.features.row(4), s.params);
    CHECK((one.row(0) - z.row(4)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK_THROWS_AS(embed(Matrix::Zero(3, 4), s.params), Error);
  }
}
