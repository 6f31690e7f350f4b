#include <doctest.h>

#include <cmath>
#include <vector>

#include "liquidbench/optim.hpp"
#include "liquidbench/rng.hpp"

using namespace liquidbench;

namespace {

std::map<std::string, Tensor> one_param(std::vector<double> w,
                                        std::vector<double> g) {
  std::size_t n = w.size();
  Tensor t({n}, std::move(w));
  t.grad() = g;
  std::map<std::string, Tensor> m;
  m["w"] = t;
  return m;
}

// Independent scalar Adam/AdamW recurrence used as the reference.
struct ScalarAdamRef {
  double m = 0, v = 0;
  std::uint64_t t = 0;
  double step(double& w, double g, const AdamConfig& c) {
    ++t;
    if (!c.decoupled) g += c.weight_decay * w;
    m = c.beta1 * m + (1 - c.beta1) * g;
    v = c.beta2 * v + (1 - c.beta2) * g * g;
    double mh = m / (1 - std::pow(c.beta1, static_cast<double>(t)));
    double vh = v / (1 - std::pow(c.beta2, static_cast<double>(t)));
    if (c.decoupled) w -= c.lr * c.weight_decay * w;
    w -= c.lr * mh / (std::sqrt(vh) + c.eps);
    return w;
  }
};

}  // namespace

TEST_CASE("zero gradient with zero weight decay leaves parameters unchanged") {
  auto params = one_param({1.0, -2.0, 3.0}, {0.0, 0.0, 0.0});
  AdamState state;
  AdamConfig cfg;
  cfg.lr = 0.1;
  adam_step(params, state, cfg);
  CHECK(params.at("w").values() == std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("first adam step matches the hand-evaluated recurrence") {
  // g=1, lr=0.1, betas (0.9, 0.999), eps 1e-8:
  // m_hat=1, v_hat=1 -> delta = -0.1/(1+1e-8)
  auto params = one_param({0.0}, {1.0});
  AdamState state;
  AdamConfig cfg;
  cfg.lr = 0.1;
  adam_step(params, state, cfg);
  double expected = -0.1 / (1.0 + 1e-8);
  CHECK(params.at("w").values()[0] == doctest::Approx(expected).epsilon(1e-15));
  CHECK(params.at("w").values()[0] == doctest::Approx(-0.0999999).epsilon(1e-6));
}

TEST_CASE("adam vs adamw differ once weight decay is nonzero") {
  auto a = one_param({0.5}, {1.0});
  auto b = one_param({0.5}, {1.0});
  AdamState sa, sb;
  AdamConfig ca, cb;
  ca.weight_decay = cb.weight_decay = 0.1;
  ca.decoupled = false;
  cb.decoupled = true;
  adam_step(a, sa, ca);
  adam_step(b, sb, cb);
  CHECK(a.at("w").values()[0] != b.at("w").values()[0]);
}

TEST_CASE("adam matches a scalar reference over 1000 random trajectories") {
  Rng rng(606);
  double worst = 0;
  for (int traj = 0; traj < 1000; ++traj) {
    AdamConfig cfg;
    cfg.lr = rng.uniform(1e-4, 1e-1);
    cfg.weight_decay = rng.bernoulli(0.5) ? rng.uniform(0.0, 0.1) : 0.0;
    cfg.decoupled = rng.bernoulli(0.5);
    double w0 = rng.uniform(-2, 2);
    auto params = one_param({w0}, {0.0});
    AdamState state;
    ScalarAdamRef ref;
    double w_ref = w0;
    for (int step = 0; step < 10; ++step) {
      double g = rng.uniform(-3, 3);
      params.at("w").grad()[0] = g;
      adam_step(params, state, cfg);
      ref.step(w_ref, g, cfg);
      worst = std::max(worst, std::fabs(params.at("w").values()[0] - w_ref));
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("lr schedules match the closed forms") {
  Schedule cosine;
  cosine.kind = ScheduleKind::cosine;
  cosine.total_epochs = 30;
  CHECK(lr_schedule(cosine, 1e-3, 0) == doctest::Approx(1e-3).epsilon(1e-15));
  double last = lr_schedule(cosine, 1e-3, 29);
  CHECK(last == doctest::Approx(1e-3 * (1 + std::cos(M_PI * 29.0 / 30.0)) / 2)
                    .epsilon(1e-12));
  CHECK(last < 1e-5);
  CHECK_THROWS_AS(lr_schedule(cosine, 1e-3, 30), ValueError);

  Schedule step;
  step.kind = ScheduleKind::step;
  step.interval = 10;
  step.gamma = 0.1;
  CHECK(lr_schedule(step, 1e-3, 25) == doctest::Approx(1e-5).epsilon(1e-12));
  CHECK(lr_schedule(step, 1e-3, 9) == doctest::Approx(1e-3).epsilon(1e-15));

  Schedule none;
  CHECK(lr_schedule(none, 5e-4, 100) == 5e-4);
}

TEST_CASE("clip_grad_norm scales only above the threshold") {
  auto below = one_param({0.0, 0.0}, {0.3, 0.4});  // norm 0.5
  CHECK(clip_grad_norm(below, 1.0) == doctest::Approx(0.5));
  CHECK(below.at("w").grad() == std::vector<double>{0.3, 0.4});

  auto above = one_param({0.0, 0.0}, {3.0, 4.0});  // norm 5
  CHECK(clip_grad_norm(above, 1.0) == doctest::Approx(5.0));
  CHECK(above.at("w").grad()[0] == doctest::Approx(0.6));
  CHECK(above.at("w").grad()[1] == doctest::Approx(0.8));

  // post-clip global norm never exceeds the bound
  Rng rng(4);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> g(8);
    for (double& v : g) v = rng.uniform(-10, 10);
    auto params = one_param(std::vector<double>(8, 0.0), g);
    clip_grad_norm(params, 1.0);
    double sq = 0;
    for (double v : params.at("w").grad()) sq += v * v;
    CHECK(std::sqrt(sq) <= 1.0 + 1e-12);
  }
  CHECK_THROWS_AS(clip_grad_norm(below, 0.0), ValueError);
}
