#include <doctest.h>

#include <cmath>
#include <vector>

#include "liquidbench/stress.hpp"

using namespace liquidbench;

namespace {

SequenceBatch uniform_batch(std::size_t B, std::size_t T, std::size_t D,
                            std::uint64_t seed) {
  Dataset data;
  data.input_dim = D;
  data.num_classes = 2;
  Rng rng(seed);
  for (std::size_t b = 0; b < B; ++b) {
    SequenceSample s;
    s.label = static_cast<int>(b % 2);
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<double> row(D);
      for (double& v : row) v = rng.uniform(-1, 1);
      s.steps.push_back(row);
      s.delta_t.push_back(1.0);
    }
    data.samples.push_back(s);
  }
  std::vector<std::size_t> idx(B);
  for (std::size_t i = 0; i < B; ++i) idx[i] = i;
  return make_batch(data, idx);
}

double total_time(const SequenceBatch& b, std::size_t row) {
  double s = 0;
  std::size_t T = b.steps();
  for (std::size_t t = 0; t < T; ++t) {
    if (b.mask.values()[row * T + t] != 0.0) s += b.delta_t.values()[row * T + t];
  }
  return s;
}

}  // namespace

TEST_CASE("rate 0 leaves the batch untouched in any mode") {
  SequenceBatch b = uniform_batch(3, 5, 2, 1);
  for (DropMode mode : {DropMode::zero_fill, DropMode::drop_merge_dt}) {
    SequenceBatch out = apply_temporal_dropout(b, 0.0, mode, 99);
    CHECK(out.inputs.values() == b.inputs.values());
    CHECK(out.delta_t.values() == b.delta_t.values());
    CHECK(out.mask.values() == b.mask.values());
  }
}

TEST_CASE("drop rate outside [0,1) is rejected") {
  SequenceBatch b = uniform_batch(1, 3, 1, 1);
  CHECK_THROWS_AS(apply_temporal_dropout(b, 1.0, DropMode::zero_fill, 0),
                  ValueError);
  CHECK_THROWS_AS(apply_temporal_dropout(b, -0.1, DropMode::zero_fill, 0),
                  ValueError);
}

TEST_CASE("drop_merge_dt merges the dropped step's dt into the next survivor") {
  // find a seed that drops exactly the middle of three unit steps
  Dataset data;
  data.input_dim = 1;
  data.num_classes = 2;
  SequenceSample s;
  s.label = 0;
  s.steps = {{1.0}, {2.0}, {3.0}};
  s.delta_t = {1.0, 1.0, 1.0};
  data.samples = {s};
  SequenceBatch b = make_batch(data, {0});

  bool found = false;
  for (std::uint64_t seed = 0; seed < 400 && !found; ++seed) {
    SequenceBatch out = apply_temporal_dropout(b, 0.4, DropMode::drop_merge_dt, seed);
    std::size_t T = out.steps();
    std::vector<double> dts, vals;
    for (std::size_t t = 0; t < T; ++t) {
      if (out.mask.values()[t] != 0.0) {
        dts.push_back(out.delta_t.values()[t]);
        vals.push_back(out.inputs.values()[t]);
      }
    }
    if (vals == std::vector<double>{1.0, 3.0}) {
      found = true;
      CHECK(dts == std::vector<double>{1.0, 2.0});
    }
    // whatever was dropped, total time is conserved
    double kept = 0;
    for (double v : dts) kept += v;
    CHECK(kept == doctest::Approx(3.0).epsilon(1e-12));
  }
  CHECK(found);
}

TEST_CASE("zero_fill keeps T; drop_merge_dt conserves total elapsed time") {
  SequenceBatch b = uniform_batch(6, 12, 3, 7);
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    SequenceBatch zf = apply_temporal_dropout(b, 0.5, DropMode::zero_fill, seed);
    CHECK(zf.steps() == b.steps());
    for (std::size_t row = 0; row < 6; ++row) {
      // dropped steps have zero inputs and cleared mask
      std::size_t T = zf.steps();
      for (std::size_t t = 0; t < T; ++t) {
        if (zf.mask.values()[row * T + t] == 0.0) {
          for (std::size_t d = 0; d < 3; ++d) {
            CHECK(zf.inputs.values()[(row * T + t) * 3 + d] == 0.0);
          }
          CHECK(zf.delta_t.values()[row * T + t] == 1.0);
        }
      }
    }

    SequenceBatch dm =
        apply_temporal_dropout(b, 0.5, DropMode::drop_merge_dt, seed);
    for (std::size_t row = 0; row < 6; ++row) {
      CHECK(total_time(dm, row) == doctest::Approx(total_time(b, row)).epsilon(1e-12));
      // at least one surviving step
      bool any = false;
      std::size_t T = dm.steps();
      for (std::size_t t = 0; t < T; ++t) {
        if (dm.mask.values()[row * T + t] != 0.0) any = true;
      }
      CHECK(any);
    }
  }
}

TEST_CASE("high rates still leave one survivor per sequence") {
  SequenceBatch b = uniform_batch(20, 4, 1, 3);
  SequenceBatch out = apply_temporal_dropout(b, 0.9, DropMode::zero_fill, 17);
  std::size_t T = out.steps();
  for (std::size_t row = 0; row < 20; ++row) {
    double kept = 0;
    for (std::size_t t = 0; t < T; ++t) kept += out.mask.values()[row * T + t];
    CHECK(kept >= 1.0);
  }
}

TEST_CASE("dropout is deterministic in (batch, rate, mode, seed)") {
  SequenceBatch b = uniform_batch(4, 8, 2, 9);
  SequenceBatch a1 = apply_temporal_dropout(b, 0.3, DropMode::zero_fill, 5);
  SequenceBatch a2 = apply_temporal_dropout(b, 0.3, DropMode::zero_fill, 5);
  CHECK(a1.inputs.values() == a2.inputs.values());
  CHECK(a1.mask.values() == a2.mask.values());
  SequenceBatch a3 = apply_temporal_dropout(b, 0.3, DropMode::zero_fill, 6);
  CHECK(a1.mask.values() != a3.mask.values());
}

TEST_CASE("empirical drop fraction concentrates around the rate") {
  // one long sequence: 10000 bernoulli draws at rate 0.3
  Dataset data;
  data.input_dim = 1;
  data.num_classes = 2;
  SequenceSample s;
  s.label = 0;
  for (int t = 0; t < 10000; ++t) {
    s.steps.push_back({0.0});
    s.delta_t.push_back(1.0);
  }
  data.samples = {s};
  SequenceBatch b = make_batch(data, {0});
  SequenceBatch out = apply_temporal_dropout(b, 0.3, DropMode::zero_fill, 2024);
  double kept = 0;
  for (double m : out.mask.values()) kept += m;
  double dropped_frac = 1.0 - kept / 10000.0;
  CHECK(std::fabs(dropped_frac - 0.3) < 0.02);
}

TEST_CASE("stress plan validation") {
  StressPlan plan;
  plan.rates = {0.0, 0.3, 0.5};
  plan.trials = 2;
  CHECK_NOTHROW(plan.validate());
  plan.rates = {0.3, 0.3};
  CHECK_THROWS_AS(plan.validate(), ValueError);
  plan.rates = {0.5, 0.3};
  CHECK_THROWS_AS(plan.validate(), ValueError);
  plan.rates = {1.0};
  CHECK_THROWS_AS(plan.validate(), ValueError);
  plan.rates = {};
  CHECK_THROWS_AS(plan.validate(), ValueError);
}

TEST_CASE("stress sweep at rate zero equals plain evaluation bit for bit") {
  Dataset data = synth_task(SynthKind::irregular_sine_class, 31, 60);
  ModelConfig mc;
  mc.cell = CellKind::cfc;
  mc.input_dim = 3;
  mc.hidden = 6;
  mc.head = HeadKind::softmax_classes;
  mc.classes = 2;
  mc.aggregation = AggKind::mean_pool;
  Model model = Model::build(mc, 12);

  MetricsReport plain = evaluate_model(model, data);
  StressPlan plan;
  plan.rates = {0.0, 0.5};
  plan.mode = DropMode::drop_merge_dt;
  plan.trials = 2;
  plan.base_seed = 5;
  StressResult sweep = run_stress_sweep(model, data, plan);

  REQUIRE(!sweep.cells.empty());
  CHECK(sweep.cells[0].rate == 0.0);
  CHECK(sweep.cells[0].report.accuracy == plain.accuracy);
  CHECK(sweep.cells[0].report.confusion == plain.confusion);
  // rate 0 short-circuits to one clean evaluation
  std::size_t rate0_cells = 0;
  for (const auto& c : sweep.cells) {
    if (c.rate == 0.0) ++rate0_cells;
  }
  CHECK(rate0_cells == 1);
  CHECK(sweep.aggregate[0].median_accuracy == plain.accuracy);

  // determinism of the full sweep
  StressResult again = run_stress_sweep(model, data, plan);
  REQUIRE(again.cells.size() == sweep.cells.size());
  for (std::size_t i = 0; i < sweep.cells.size(); ++i) {
    CHECK(again.cells[i].report.accuracy == sweep.cells[i].report.accuracy);
  }
}
