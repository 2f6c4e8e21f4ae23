#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "qamoe/errors.hpp"
#include "qamoe/evaluation.hpp"
#include "support.hpp"

using namespace qamoe;

namespace {

struct Trained {
  Dataset data;
  Checkpoint checkpoint;
  ReferenceStats stats;
};

// A small spectrum-trained model shared by the grid tests.
const Trained& trained() {
  static const Trained t = [] {
    DatasetSpec spec;
    spec.n_train = 200;
    spec.n_val = 50;
    spec.n_test = 300;
    Dataset data = generate(spec);
    ModelConfig mc = ModelConfig::for_dataset(spec);
    mc.d_model = 8;
    mc.glu_hidden = 16;
    TrainConfig tc;
    tc.epochs = 3;
    Checkpoint ck = train(data, mc, tc).best;
    ReferenceStats stats = compute_reference_stats(data.train());
    return Trained{std::move(data), std::move(ck), stats};
  }();
  return t;
}

}  // namespace

TEST_CASE("acc7_bin") {
  CHECK(acc7_bin(0.2) == 0);
  CHECK(acc7_bin(-3.7) == -3);
  CHECK(acc7_bin(1.5) == 2);
  CHECK(acc7_bin(-1.5) == -2);
  CHECK(acc7_bin(0.5) == 1);
  CHECK(acc7_bin(-0.49) == 0);
  CHECK(acc7_bin(42.0) == 3);
}

TEST_CASE("binary_metrics") {
  const Vector labels{1.0, -1.0, -2.0, 0.0};
  const BinaryMetrics perfect = binary_metrics(Vector{0.5, -0.1, -3.0, 9.0}, labels);
  CHECK(perfect.acc2 == 1.0);
  CHECK(perfect.f1 == 1.0);

  CHECK(binary_metrics(Vector{1, 1, 1, 1}, Vector{1, -1, 2, -2}).acc2 == 0.5);

  const BinaryMetrics hand = binary_metrics(Vector{1, 1, -1}, Vector{1, -1, -1});
  CHECK(hand.acc2 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(hand.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

  // No positive predictions and no positive labels: f1 has an empty support.
  CHECK(binary_metrics(Vector{-1, -1}, Vector{-1, -2}).f1 == 0.0);
  CHECK_THROWS_AS(binary_metrics(Vector{1, 2}, Vector{0, 0}), UndefinedMetric);
  CHECK_THROWS_AS(binary_metrics(Vector{1}, Vector{1, 2}), InvalidInput);
}

TEST_CASE("mae and pearson_corr") {
  const Vector y{0.5, -1.0, 2.0, 0.0};
  CHECK(mae(y, y) == 0.0);
  CHECK(pearson_corr(y, y) == doctest::Approx(1.0).epsilon(1e-15));
  const Vector neg{-0.5, 1.0, -2.0, 0.0};
  CHECK(pearson_corr(neg, y) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(mae(Vector{0, 1}, Vector{1, 3}) == 1.5);
  CHECK_THROWS_AS(pearson_corr(Vector{1, 1, 1}, Vector{1, 2, 3}), UndefinedMetric);
  CHECK_THROWS_AS(pearson_corr(Vector{1}, Vector{1}), UndefinedMetric);

  SeededRng rng(3);
  Vector a(5000), b(5000);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = rng.uniform(-3, 3);
    b[i] = a[i];
  }
  rng.shuffle(b);
  CHECK(std::abs(pearson_corr(a, b)) < 0.1);
}

TEST_CASE("compute_metrics") {
  const Vector preds{0.4, -1.6, 2.9, -0.2};
  const Vector labels{1.0, -2.0, 3.0, 0.0};
  const MetricsRecord m = compute_metrics(preds, labels);
  CHECK(m.n == 4);
  CHECK(m.acc7 == 0.75);  // bins 0,-2,3,0 vs 1,-2,3,0
  CHECK(m.acc2 == 1.0);
  CHECK(m.f1 == 1.0);
  CHECK(m.mae == doctest::Approx((0.6 + 0.4 + 0.1 + 0.2) / 4).epsilon(1e-15));
}

TEST_CASE("evaluate on memorized samples") {
  DatasetSpec spec = qamoe::testing::tiny_spec(10);
  const Dataset base = generate(spec);
  std::vector<Sample> samples(base.train().begin(), base.train().end());
  const Dataset same(spec, samples, samples, samples);
  ModelConfig mc = ModelConfig::for_dataset(spec);
  TrainConfig tc;
  tc.mode = TrainingMode::kClean;
  tc.dropout = 0.0;
  tc.epochs = 1500;
  tc.adam.lr = 3e-3;
  const TrainResult r = train(same, mc, tc);
  const ReferenceStats stats = compute_reference_stats(same.train());
  const MetricsRecord m = evaluate(r.best, same.train(), DegradationSpec::clean(), stats);
  CHECK(m.mae < 0.05);
}

TEST_CASE("evaluate is pure and repeatable") {
  const Trained& t = trained();
  const std::uint64_t before = fingerprint(t.checkpoint);
  const DegradationSpec spec = DegradationSpec::cell(0.3, 0.2, 5);
  const MetricsRecord a = evaluate(t.checkpoint, t.data.test(), spec, t.stats);
  const MetricsRecord b = evaluate(t.checkpoint, t.data.test(), spec, t.stats);
  CHECK(a == b);
  CHECK(fingerprint(t.checkpoint) == before);
  CHECK(a.n == t.data.test().size());
}

TEST_CASE("predict_split") {
  const Trained& t = trained();
  const auto test = t.data.test().first(20);
  const Predictions p = predict_split(t.checkpoint, test, DegradationSpec::clean(), t.stats, true);
  CHECK(p.y_hat.size() == 20);
  CHECK(p.gates.size() == 60);
  for (const GateRecord& g : p.gates) {
    CHECK(g.gate.size() == t.checkpoint.config.n_experts);
    CHECK(g.r > 0.0);
    CHECK(g.r < 1.0);
  }
  for (std::size_t i = 0; i < 20; ++i) {
    const ForwardTrace tr = forward(test[i], t.checkpoint.params, t.checkpoint.config);
    CHECK(p.y_hat[i] == tr.y_hat);
  }
  CHECK(predict_split(t.checkpoint, test, DegradationSpec::clean(), t.stats).gates.empty());

  // Protocol III draws its own coefficients per sample.
  const DegradationSpec mix = mixture_spec(StochasticMixture{}, 9);
  const Predictions a = predict_split(t.checkpoint, test, mix, t.stats);
  CHECK(a.y_hat != p.y_hat);
  CHECK(a.y_hat == predict_split(t.checkpoint, test, mix, t.stats).y_hat);
}

TEST_CASE("grid_sweep") {
  const Trained& t = trained();
  GridSpec grid;
  grid.lambda_values = {0.0, 0.35, 0.7};
  grid.eta_values = {0.0, 0.7};
  const GridResult g = grid_sweep(t.checkpoint, t.data.test(), t.stats, grid, 1);
  CHECK(g.cells.size() == 2);
  CHECK(g.cells[0].size() == 3);
  CHECK(g.checkpoint_fingerprint == fingerprint(t.checkpoint));

  const MetricsRecord clean =
      evaluate(t.checkpoint, t.data.test(), DegradationSpec::clean(cell_seed(grid, 0, 0)), t.stats);
  CHECK(g.at(0, 0) == clean);

  const GridResult threaded = grid_sweep(t.checkpoint, t.data.test(), t.stats, grid, 3);
  CHECK(threaded.cells == g.cells);

  CHECK(cell_seed(grid, 1, 2) == grid.seed + 1 * 3 + 2);

  const std::string csv = grid_csv(g, GridMetric::kAcc7);
  CHECK(csv.rfind("eta\\lambda,0.0,0.35,0.7\n0%,", 0) == 0);
  CHECK(csv.find("\n70%,") != std::string::npos);

  GridSpec bad = grid;
  bad.eta_values = {1.5};
  CHECK_THROWS_AS(grid_sweep(t.checkpoint, t.data.test(), t.stats, bad), InvalidInput);
}

TEST_CASE("grid cell errors carry coordinates") {
  const Trained& t = trained();
  // Two identical samples with label 0 make every metric undefined.
  std::vector<Sample> zeros(t.data.test().begin(), t.data.test().begin() + 2);
  for (Sample& s : zeros) s.label = 0.0;
  GridSpec grid;
  grid.lambda_values = {0.1};
  grid.eta_values = {0.2};
  try {
    grid_sweep(t.checkpoint, zeros, t.stats, grid);
    FAIL("expected an error");
  } catch (const UndefinedMetric& e) {
    const std::string msg = e.what();
    CHECK(msg.find("eta=0.2") != std::string::npos);
    CHECK(msg.find("lambda=0.1") != std::string::npos);
  }
}

TEST_CASE("csv helpers") {
  MetricsRecord m{0.5, 0.75, 0.8, 0.25, 0.9, 4};
  CHECK(metrics_csv_header() == "condition,n,acc7,acc2,f1,mae,corr\n");
  const std::string row = metrics_csv_row("t", m);
  CHECK(row.rfind("t,4,", 0) == 0);

  std::vector<GateRecord> gates = {GateRecord{3, Modality::kAudio, 0.5, Vector{0.25, 0.75}}};
  const std::string csv = gates_csv(gates, 2);
  CHECK(csv.rfind("sample_id,modality,r,g_1,g_2\n3,audio,", 0) == 0);
}

TEST_CASE("ablate trains and scores one variant") {
  DatasetSpec spec = qamoe::testing::tiny_spec(40);
  const Dataset data = generate(spec);
  ModelConfig mc = ModelConfig::for_dataset(spec);
  mc.d_model = 8;
  mc.glu_hidden = 16;
  TrainConfig tc;
  tc.epochs = 1;
  tc.mode = TrainingMode::kClean;
  const AblationResult r = ablate(Variant::kNoPrior, data, mc, tc, 3);
  CHECK(r.variant == Variant::kNoPrior);
  CHECK(r.training.best.config.variant == Variant::kNoPrior);
  CHECK(r.metrics.n == 40);
  for (double v : r.training.best.params.y_prior.values()) CHECK(v == 0.0);
}
