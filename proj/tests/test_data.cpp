#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "liquidbench/data.hpp"
#include "liquidbench/rng.hpp"

using namespace liquidbench;

namespace {

EventStream random_stream(std::size_t n, Rng& rng, std::uint16_t side = 34) {
  EventStream s;
  s.width = side;
  s.height = side;
  std::uint32_t t = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Event e;
    t += static_cast<std::uint32_t>(rng.below(500));
    e.t_us = t & 0x7FFFFF;
    e.x = static_cast<std::uint16_t>(rng.below(side));
    e.y = static_cast<std::uint16_t>(rng.below(side));
    e.polarity = rng.bernoulli(0.5) ? 1 : 0;
    s.events.push_back(e);
  }
  return s;
}

}  // namespace

TEST_CASE("event file round-trip is the identity") {
  Rng rng(11);
  EventStream original = random_stream(100, rng);
  std::vector<std::uint8_t> bytes = encode_event_file(original);
  EventStream back = parse_event_file(bytes);
  REQUIRE(back.events.size() == original.events.size());
  for (std::size_t i = 0; i < original.events.size(); ++i) {
    CHECK(back.events[i].x == original.events[i].x);
    CHECK(back.events[i].y == original.events[i].y);
    CHECK(back.events[i].t_us == original.events[i].t_us);
    CHECK(back.events[i].polarity == original.events[i].polarity);
  }
}

TEST_CASE("event parser edge cases") {
  CHECK(parse_event_file({}).events.empty());

  std::vector<std::uint8_t> bad(7, 0);
  CHECK_THROWS_AS(parse_event_file(bad), ParseError);

  // coordinate outside the sensor
  std::vector<std::uint8_t> oob = {40, 0, 0, 0, 0};
  CHECK_THROWS_AS(parse_event_file(oob, 34, 34), ParseError);

  // decreasing timestamps
  std::vector<std::uint8_t> dec = {0, 0, 0, 0, 5, 0, 0, 0, 0, 1};
  CHECK_THROWS_AS(parse_event_file(dec), ParseError);
}

TEST_CASE("bin_events: log compression, boundary, and mass conservation") {
  EventStream s;
  s.width = 4;
  s.height = 4;
  Event a;
  a.x = 1; a.y = 2; a.t_us = 0; a.polarity = 0;
  Event b;
  b.x = 3; b.y = 3; b.t_us = 1000; b.polarity = 1;  // exactly t_max
  s.events = {a, b};

  Tensor frames = bin_events(s, 10);
  CHECK(frames.shape() == Shape{10, 2, 4, 4});
  // one event in a cell -> ln 2
  CHECK(frames.at({0, 0, 2, 1}) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  // the closed upper edge puts t_max in the last bin
  CHECK(frames.at({9, 1, 3, 3}) == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  CHECK_THROWS_AS(bin_events(EventStream{}, 10), ValueError);
}

TEST_CASE("bin_events conserves integer event counts") {
  Rng rng(5);
  EventStream s = random_stream(500, rng, 16);
  Tensor frames = bin_events(s, 10);
  long long recovered = 0;
  for (double v : frames.values()) {
    recovered += std::llround(std::expm1(v));
  }
  CHECK(recovered == 500);
}

TEST_CASE("stroke parsing: deltas, pen states, and cumulative-sum identity") {
  std::string text =
      R"({"label": 3, "drawing": [[[0, 3], [0, 4]]]})"
      "\n"
      R"({"label": 1, "drawing": [[[0, 1], [0, 0]], [[2, 3], [2, 2]]]})"
      "\n"
      "this is not json\n"
      R"({"label": 9, "drawing": []})"
      "\n";
  StrokeParseResult res = parse_stroke_ndjson(text);
  CHECK(res.skipped_lines == 2);  // malformed line and the empty drawing
  REQUIRE(res.sequences.size() == 2);

  // one stroke (0,0)->(3,4): normalized by span 4, second point delta (.75, 1)
  const StrokeSequence& first = res.sequences[0];
  CHECK(first.label == 3);
  REQUIRE(first.points.size() == 2);
  CHECK(first.points[1].dx == doctest::Approx(3.0 / 4.0));
  CHECK(first.points[1].dy == doctest::Approx(1.0));
  CHECK(first.points[0].pen == Pen::down);
  CHECK(first.points[1].pen == Pen::up);

  // two strokes -> pen up exactly twice
  const StrokeSequence& second = res.sequences[1];
  int ups = 0;
  for (const StrokePoint& p : second.points) {
    if (p.pen == Pen::up) ++ups;
  }
  CHECK(ups == 2);

  // cumulative sum of deltas reproduces the absolute coordinates
  for (const StrokeSequence& seq : res.sequences) {
    double cx = 0, cy = 0;
    for (const StrokePoint& p : seq.points) {
      cx += p.dx;
      cy += p.dy;
      CHECK(std::fabs(cx - p.x) < 1e-9);
      CHECK(std::fabs(cy - p.y) < 1e-9);
    }
  }
}

TEST_CASE("stroke ndjson round-trip preserves geometry") {
  Dataset data = synth_task(SynthKind::stroke_shapes, 42, 12);
  // rebuild StrokeSequences from the generator for the encode path
  StrokeParseResult reparsed =
      parse_stroke_ndjson(encode_stroke_ndjson(parse_stroke_ndjson(
          encode_stroke_ndjson({strokes_to_sequence(
              {{{0.0, 0.0}, {0.5, 0.25}, {1.0, 1.0}}, {{0.2, 0.8}, {0.4, 0.9}}},
              2)})).sequences));
  REQUIRE(reparsed.sequences.size() == 1);
  const StrokeSequence& seq = reparsed.sequences[0];
  CHECK(seq.label == 2);
  REQUIRE(seq.points.size() == 5);
  CHECK(seq.points[0].x == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(seq.points[2].x == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(seq.points[2].y == doctest::Approx(1.0).epsilon(1e-9));
  (void)data;
}

TEST_CASE("clinical encoding: delta channel, forward fill, all-missing channels") {
  ClinicalSeries series;
  series.label = 0;
  auto obs = [&](double t) {
    ClinicalObservation o;
    o.time_hours = t;
    return o;
  };
  ClinicalObservation o1 = obs(2.0);
  o1.present[0] = true;
  o1.values[0] = 5.0;
  ClinicalObservation o2 = obs(5.0);  // 3 h later, var 0 missing
  ClinicalObservation o3 = obs(6.5);
  o3.present[0] = true;
  o3.values[0] = 7.0;
  series.observations = {o1, o2, o3};

  EncodedSeries enc = encode_clinical(series);
  REQUIRE(enc.steps.size() == 3);
  CHECK(enc.steps[0].size() == 40);
  // delta feature: first step 0, second step 3.0
  CHECK(enc.steps[0][39] == 0.0);
  CHECK(enc.steps[1][39] == doctest::Approx(3.0));
  // forward fill: 5, 5, 7
  CHECK(enc.steps[0][0] == 5.0);
  CHECK(enc.steps[1][0] == 5.0);
  CHECK(enc.steps[2][0] == 7.0);
  // never-observed channel stays zero
  CHECK(enc.steps[0][17] == 0.0);
  CHECK(enc.steps[2][17] == 0.0);
  // cell-facing delta_t: first 1.0 (positive placeholder), then the gaps
  CHECK(enc.delta_t[0] == 1.0);
  CHECK(enc.delta_t[1] == doctest::Approx(3.0));

  // delta channel is nonnegative and sums to last - first
  double sum = 0;
  for (const auto& row : enc.steps) {
    CHECK(row[39] >= 0.0);
    sum += row[39];
  }
  CHECK(sum == doctest::Approx(6.5 - 2.0));
}

TEST_CASE("clinical csv round-trip and parse errors") {
  ClinicalSeries series;
  series.label = 1;
  series.onset_time = 12.25;
  Rng rng(3);
  double t = 0;
  for (int i = 0; i < 5; ++i) {
    ClinicalObservation o;
    t += rng.uniform(0.5, 3.0);
    o.time_hours = t;
    for (std::size_t j = 0; j < kClinicalVars; ++j) {
      o.present[j] = rng.bernoulli(0.6);
      if (o.present[j]) o.values[j] = rng.uniform(-5, 50);
    }
    series.observations.push_back(o);
  }
  ClinicalSeries back = parse_clinical_csv(encode_clinical_csv(series));
  CHECK(back.label == 1);
  CHECK(back.onset_time == doctest::Approx(12.25));
  REQUIRE(back.observations.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(back.observations[i].time_hours ==
          doctest::Approx(series.observations[i].time_hours).epsilon(1e-15));
    for (std::size_t j = 0; j < kClinicalVars; ++j) {
      CHECK(back.observations[i].present[j] == series.observations[i].present[j]);
      if (back.observations[i].present[j]) {
        CHECK(back.observations[i].values[j] ==
              doctest::Approx(series.observations[i].values[j]).epsilon(1e-15));
      }
    }
  }

  CHECK_THROWS_AS(parse_clinical_csv("1.0,2.0\n"), ParseError);   // short row
  CHECK_THROWS_AS(parse_clinical_csv(""), ParseError);            // empty
  CHECK_THROWS_AS(parse_clinical_csv("# label=xyz\n"), ParseError);
  CHECK_THROWS_AS(parse_clinical_csv("# onset=99e999999\n"), ParseError);
  std::string nonmono = "2.0";
  std::string row2 = "1.0";
  for (int j = 0; j < 39; ++j) {
    nonmono += ",1";
    row2 += ",1";
  }
  CHECK_THROWS_AS(parse_clinical_csv(nonmono + "\n" + row2 + "\n"), ParseError);
}

TEST_CASE("make_batch pads with zero inputs, unit delta, zero mask") {
  Dataset data;
  data.input_dim = 2;
  data.num_classes = 2;
  SequenceSample a;
  a.label = 0;
  a.steps = {{1, 2}, {3, 4}};
  a.delta_t = {0.5, 0.7};
  SequenceSample b;
  b.label = 1;
  b.steps = {{5, 6}};
  b.delta_t = {0.9};
  data.samples = {a, b};

  SequenceBatch batch = make_batch(data, {0, 1});
  CHECK(batch.steps() == 2);
  CHECK(batch.mask.values() == std::vector<double>{1, 1, 1, 0});
  CHECK(batch.delta_t.values()[3] == 1.0);
  CHECK(batch.inputs.values()[(1 * 2 + 1) * 2 + 0] == 0.0);
  CHECK(batch.valid_lengths() == std::vector<std::size_t>{2, 1});

  // row permutation permutes tensors rowwise and nothing else
  SequenceBatch swapped = make_batch(data, {1, 0});
  for (std::size_t t = 0; t < 2; ++t) {
    for (std::size_t d = 0; d < 2; ++d) {
      CHECK(swapped.inputs.values()[(0 * 2 + t) * 2 + d] ==
            batch.inputs.values()[(1 * 2 + t) * 2 + d]);
    }
  }
}

TEST_CASE("synth_task determinism and unknown kind") {
  Dataset a = synth_task(SynthKind::irregular_sine_class, 9, 20);
  Dataset b = synth_task(SynthKind::irregular_sine_class, 9, 20);
  REQUIRE(a.samples.size() == b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].label == b.samples[i].label);
    CHECK(a.samples[i].steps == b.samples[i].steps);
    CHECK(a.samples[i].delta_t == b.samples[i].delta_t);
  }
  CHECK_THROWS_AS(synth_kind_from_name("nonsense"), ValueError);
  CHECK_THROWS_AS(synth_task(SynthKind::stroke_shapes, 1, 5), ValueError);
}

TEST_CASE("synth task shapes and label balance") {
  Dataset sine = synth_task(SynthKind::irregular_sine_class, 4, 40);
  CHECK(sine.input_dim == 3);
  CHECK(sine.num_classes == 2);
  int ones = 0;
  for (const auto& s : sine.samples) ones += s.label;
  CHECK(ones == 20);

  Dataset events = synth_task(SynthKind::event_digits_mini, 4, 20);
  CHECK(events.input_dim == 2 * 8 * 8);
  CHECK(events.num_classes == 10);
  CHECK(events.samples[0].steps.size() == 10);

  Dataset strokes = synth_task(SynthKind::stroke_shapes, 4, 16);
  CHECK(strokes.input_dim == 5);
  CHECK(strokes.num_classes == 4);
}

TEST_CASE("sepsis_like positive rate tracks the configured rate") {
  SynthOptions opts;
  opts.sepsis_positive_rate = 0.1;
  Dataset d = synth_task(SynthKind::sepsis_like, 2024, 1000, opts);
  int pos = 0;
  for (const auto& s : d.samples) pos += s.label;
  double rate = pos / 1000.0;
  CHECK(rate > 0.08);
  CHECK(rate < 0.12);
  CHECK(d.input_dim == 40);
}

TEST_CASE("event and clinical directory loaders") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "lqb_loaders";
  fs::remove_all(dir);
  fs::create_directories(dir / "events");
  fs::create_directories(dir / "clinical");

  Rng rng(21);
  for (int label = 0; label < 3; ++label) {
    for (int rep = 0; rep < 2; ++rep) {
      EventStream s = random_stream(60, rng, 8);
      s.label = label;
      std::vector<std::uint8_t> bytes = encode_event_file(s);
      std::ofstream out(dir / "events" /
                            (std::to_string(label) + "_" + std::to_string(rep) +
                             ".bin"),
                        std::ios::binary);
      out.write(reinterpret_cast<const char*>(bytes.data()),
                static_cast<std::streamsize>(bytes.size()));
    }
  }
  Dataset events = load_event_dataset((dir / "events").string(), 10, 8, 8);
  CHECK(events.samples.size() == 6);
  CHECK(events.num_classes == 3);
  CHECK(events.input_dim == 2 * 8 * 8);
  CHECK(events.samples[0].steps.size() == 10);

  for (int label = 0; label < 2; ++label) {
    ClinicalSeries series;
    series.label = label;
    double t = 0;
    for (int i = 0; i < 6; ++i) {
      ClinicalObservation o;
      t += rng.uniform(0.5, 2.0);
      o.time_hours = t;
      o.present[0] = true;
      o.values[0] = rng.uniform(10, 50);
      series.observations.push_back(o);
    }
    std::ofstream out(dir / "clinical" / (std::to_string(label) + "_p.csv"));
    out << encode_clinical_csv(series);
  }
  Dataset clinical = load_clinical_dataset((dir / "clinical").string());
  CHECK(clinical.samples.size() == 2);
  CHECK(clinical.input_dim == 40);
  CHECK(clinical.samples[0].label + clinical.samples[1].label == 1);

  CHECK_THROWS_AS(load_event_dataset((dir / "clinical").string(), 10, 8, 8),
                  ParseError);
  fs::remove_all(dir);
}

TEST_CASE("parser fuzzing: structured errors only, no hangs") {
  Rng rng(20260808);
  const int reps = 10000;
  for (int i = 0; i < reps; ++i) {
    std::size_t len = rng.below(64);
    std::vector<std::uint8_t> bytes(len);
    for (auto& b : bytes) b = static_cast<std::uint8_t>(rng.below(256));
    auto t0 = std::chrono::steady_clock::now();
    try {
      EventStream s = parse_event_file(bytes);
      (void)s;
    } catch (const ParseError&) {
    }
    std::string line(bytes.begin(), bytes.end());
    try {
      StrokeParseResult r = parse_stroke_ndjson(line);
      (void)r;
    } catch (const ParseError&) {
    }
    try {
      ClinicalSeries c = parse_clinical_csv(line);
      (void)c;
    } catch (const ParseError&) {
    }
    auto dt = std::chrono::steady_clock::now() - t0;
    CHECK(std::chrono::duration_cast<std::chrono::milliseconds>(dt).count() <
          1000);
  }
}
