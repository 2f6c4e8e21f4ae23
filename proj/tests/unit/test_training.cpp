#include <doctest.h>

#include <cmath>

#include "qamoe/errors.hpp"
#include "qamoe/training.hpp"
#include "support.hpp"

using namespace qamoe;

namespace {

ModelConfig check_config() {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_experts = 4;
  cfg.top_k = 2;
  cfg.glu_hidden = 16;
  cfg.input_dims = {5, 4, 3};
  return cfg;
}

}  // namespace

TEST_CASE("nll_loss") {
  CHECK(nll_loss(1.25, 0.0, 1.25) == 0.0);
  CHECK(nll_loss(0.0, 0.0, 1.0) == 0.5);
  CHECK(nll_loss(0.0, std::log(4.0), 2.0) == doctest::Approx(0.5 + 0.5 * std::log(4.0)).epsilon(1e-15));
  CHECK(nll_loss(0.0, std::log(4.0), 2.0) == doctest::Approx(1.19315).epsilon(1e-5));
  // The clamp applies to the exponent only.
  CHECK(nll_loss(0.0, -50.0, 1.0) == doctest::Approx(0.5 * std::exp(10.0) - 25.0).epsilon(1e-14));
  CHECK(nll_loss(0.0, 50.0, 1.0) == doctest::Approx(0.5 * std::exp(-10.0) + 25.0).epsilon(1e-14));

  const Vector yh{0.0, 1.0}, s{0.0, 0.0}, y{1.0, 1.0};
  CHECK(nll_loss(yh, s, y) == 0.25);
  CHECK_THROWS_AS(nll_loss(yh, s, Vector{1.0}), InvalidInput);
}

TEST_CASE("loss gradients") {
  for (double residual : {0.1, 1.0, 2.0, 5.0}) {
    CHECK(std::abs(loss_grad_s(0.0, std::log(residual * residual), residual)) <= 1e-10);
  }
  CHECK(loss_grad_s(3.0, 0.0, 3.0) == 0.5);
  CHECK(loss_grad_s(0.0, 0.0, 1.0) == 0.0);

  SeededRng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const double yh = rng.uniform(-3, 3), y = rng.uniform(-3, 3), s = rng.uniform(-9, 9);
    const auto fs = [&](std::span<const double> x) { return nll_loss(yh, x[0], y); };
    const auto fy = [&](std::span<const double> x) { return nll_loss(x[0], s, y); };
    CHECK(loss_grad_s(yh, s, y) == doctest::Approx(finite_diff_grad(fs, Vector{s}, 1e-6)[0]).epsilon(1e-6));
    CHECK(loss_grad_y_hat(yh, s, y) == doctest::Approx(finite_diff_grad(fy, Vector{yh}, 1e-6)[0]).epsilon(1e-6));
  }
}

TEST_CASE("backward matches finite differences") {
  GradCheckSettings settings;
  settings.draws = 5;
  for (Variant v : {Variant::kFull, Variant::kNoQualityGating, Variant::kNoVariance,
                    Variant::kNoPrior}) {
    ModelConfig cfg = check_config();
    cfg.variant = v;
    const GradCheckReport report = gradient_check(cfg, settings);
    INFO(variant_name(v), " worst tensor ", report.worst_tensor);
    CHECK(report.draws == 5);
    CHECK(report.max_rel_error <= 1e-4);
  }
  ModelConfig per_modality = check_config();
  per_modality.prior_per_modality = true;
  CHECK(gradient_check(per_modality, settings).max_rel_error <= 1e-4);
}

TEST_CASE("backward structure") {
  const ModelConfig cfg = check_config();
  ModelParams params = init_params(cfg, SeededRng(3));
  SeededRng rng(4);
  Sample s;
  for (Modality m : kAllModalities) {
    s.feature(m) = Matrix(2, cfg.input_dim(m));
    for (double& v : s.feature(m).values()) v = rng.normal();
  }

  SUBCASE("zero residual at s = 0") {
    params.w_s.fill(0.0);
    params.b_s[0] = 0.0;
    const ForwardTrace t = forward(s, params, cfg);
    const Gradients g = backward(t, params, cfg, t.y_hat);
    for (double v : g.w_y.values()) CHECK(v == 0.0);
    CHECK(g.b_y[0] == 0.0);
    CHECK(g.b_s[0] == 0.5);
    bool any = false;
    for (double v : g.w_s.values()) any = any || v != 0.0;
    CHECK(any);
  }
  SUBCASE("unselected experts get no gradient") {
    const ForwardTrace t = forward(s, params, cfg);
    const Gradients g = backward(t, params, cfg, 1.0);
    std::vector<bool> used(cfg.n_experts, false);
    for (const auto& mt : t.modality) {
      for (std::size_t i : mt.routing.selected) used[i] = true;
    }
    for (std::size_t i = 0; i < cfg.n_experts; ++i) {
      if (used[i]) continue;
      for (double v : g.experts[i].w_a.values()) CHECK(v == 0.0);
      for (double v : g.experts[i].b_o) CHECK(v == 0.0);
    }
  }
  SUBCASE("larger loss on a modality raises its variance") {
    // A label far from the prediction makes the loss prefer the prior branch
    // when the mixture points the wrong way; the finite-difference sign on
    // b_sigma must agree with backward().
    const ForwardTrace t = forward(s, params, cfg);
    const double y = t.y_hat + 2.0;
    const Gradients g = backward(t, params, cfg, y);
    const auto f = [&](std::span<const double> x) {
      ModelParams p = params;
      std::copy(x.begin(), x.end(), p.modality[1].b_sigma.begin());
      const ForwardTrace tt = forward(s, p, cfg);
      return nll_loss(tt.y_hat, tt.s_final, y);
    };
    const Vector fd = finite_diff_grad(f, params.modality[1].b_sigma, 1e-6);
    for (std::size_t j = 0; j < fd.size(); ++j) {
      if (std::abs(fd[j]) > 1e-8) CHECK((fd[j] > 0) == (g.modality[1].b_sigma[j] > 0));
    }
  }
  SUBCASE("mismatched trace") {
    const ForwardTrace t = forward(s, params, cfg);
    ModelConfig other = cfg;
    other.d_model = 4;
    CHECK_THROWS_AS(backward(t, init_params(other, SeededRng(1)), other, 0.0), InvalidInput);
  }
}

TEST_CASE("adam") {
  SUBCASE("first step moves by about lr") {
    Vector p{2.0}, m{0.0}, v{0.0};
    AdamSettings s;
    s.lr = 0.1;
    s.weight_decay = 0.0;
    adam_update(p, Vector{1.0}, m, v, 1, s, true);
    CHECK(p[0] == doctest::Approx(1.9).epsilon(1e-7));
  }
  SUBCASE("zero gradient without decay is a no-op") {
    Vector p{2.0, -1.0}, m{0.0, 0.0}, v{0.0, 0.0};
    AdamSettings s;
    s.weight_decay = 0.0;
    adam_update(p, Vector{0.0, 0.0}, m, v, 1, s, true);
    CHECK(p == Vector{2.0, -1.0});
  }
  SUBCASE("decoupled decay only on decaying tensors") {
    Vector p{2.0}, q{2.0}, m{0.0}, v{0.0}, m2{0.0}, v2{0.0};
    AdamSettings s;
    s.lr = 0.1;
    s.weight_decay = 0.5;
    adam_update(p, Vector{0.0}, m, v, 1, s, true);
    adam_update(q, Vector{0.0}, m2, v2, 1, s, false);
    CHECK(p[0] == doctest::Approx(2.0 * (1.0 - 0.1 * 0.5)).epsilon(1e-15));
    CHECK(q[0] == 2.0);
  }
  SUBCASE("global clipping") {
    const ModelConfig cfg = check_config();
    Gradients g = zeros_like(cfg);
    g.b_y[0] = 6.0;
    g.b_s[0] = 8.0;
    CHECK(global_norm(g) == 10.0);
    CHECK(clip_global_norm(g, 1.0) == 10.0);
    CHECK(g.b_y[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(g.b_s[0] == doctest::Approx(0.8).epsilon(1e-15));
    Gradients small = zeros_like(cfg);
    small.b_y[0] = 0.5;
    clip_global_norm(small, 1.0);
    CHECK(small.b_y[0] == 0.5);

    SeededRng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
      Gradients r = zeros_like(cfg);
      const double scale = std::pow(10.0, rng.uniform(-3, 3));
      for (auto& t : tensors(r)) {
        for (double& x : t.data) x = scale * rng.normal();
      }
      clip_global_norm(r, 1.0);
      CHECK(global_norm(r) <= 1.0 + 1e-12);
    }
  }
  SUBCASE("non-finite gradients abort") {
    const ModelConfig cfg = check_config();
    ModelParams p = init_params(cfg, SeededRng(1));
    OptimizerState st = make_optimizer_state(cfg);
    Gradients g = zeros_like(cfg);
    g.b_y[0] = std::nan("");
    CHECK_THROWS_AS(adam_step(p, g, st, AdamSettings{}), DivergenceError);
  }
}

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(1e-3, 0, 10) == 1e-3);
  CHECK(cosine_lr(1e-3, 5, 10) == doctest::Approx(5e-4).epsilon(1e-12));
  CHECK(cosine_lr(1e-3, 10, 10) == doctest::Approx(0.0));
  double prev = 1.0;
  for (std::uint32_t e = 0; e < 30; ++e) {
    CHECK(cosine_lr(1.0, e, 30) <= prev);
    prev = cosine_lr(1.0, e, 30);
  }
}

TEST_CASE("train") {
  DatasetSpec spec = qamoe::testing::tiny_spec(32);
  const Dataset data = generate(spec);
  ModelConfig mc = ModelConfig::for_dataset(spec);
  mc.d_model = 8;
  mc.glu_hidden = 16;
  mc.n_experts = 4;
  mc.top_k = 2;
  TrainConfig tc;
  tc.epochs = 1;

  SUBCASE("is deterministic") {
    const TrainResult a = train(data, mc, tc);
    const TrainResult b = train(data, mc, tc);
    CHECK(a.best.params == b.best.params);
    CHECK(loss_report_csv(a.report) == loss_report_csv(b.report));
    tc.seed = 7;
    CHECK_FALSE(train(data, mc, tc).best.params == a.best.params);
  }
  SUBCASE("clean mode never degrades") {
    std::atomic<std::uint64_t> calls{0};
    tc.mode = TrainingMode::kClean;
    const TrainResult r = train(data, mc, tc, TrainHooks{&calls});
    CHECK(calls.load() == 0);
    CHECK(r.report[0].lambda_mean == 0.0);
    tc.mode = TrainingMode::kSpectrum;
    train(data, mc, tc, TrainHooks{&calls});
    CHECK(calls.load() == 64);
  }
  SUBCASE("loss report") {
    tc.epochs = 2;
    const TrainResult r = train(data, mc, tc);
    const std::string csv = loss_report_csv(r.report);
    CHECK(csv.rfind("epoch,train_loss,val_mae,mean_r_text,mean_r_audio,mean_r_vision,lambda_mean,eta_mean\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    CHECK(r.best_epoch < 2);
  }
  SUBCASE("rejects mismatched configs") {
    ModelConfig bad = mc;
    bad.input_dims[0] = 3;
    CHECK_THROWS_AS(train(data, bad, tc), InvalidInput);
    tc.batch_size = 0;
    CHECK_THROWS_AS(train(data, mc, tc), InvalidInput);
  }
}

TEST_CASE("spectrum training descends") {
  DatasetSpec spec;
  spec.n_train = 400;
  spec.n_val = 100;
  spec.n_test = 1;
  const Dataset data = generate(spec);
  TrainConfig tc;
  tc.epochs = 6;
  const TrainResult r = train(data, ModelConfig::for_dataset(spec), tc);
  CHECK(r.report[5].train_loss < r.report[0].train_loss);
}
