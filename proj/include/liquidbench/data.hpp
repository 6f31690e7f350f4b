#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "liquidbench/losses.hpp"
#include "liquidbench/tensor.hpp"

namespace liquidbench {

// Structured parse failure; offset/line point at the offending input.
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// ------------------------------------------------------------ event streams

struct Event {
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::uint32_t t_us = 0;  // 23-bit microsecond timestamp
  std::uint8_t polarity = 0;
};

struct EventStream {
  std::vector<Event> events;
  std::uint16_t width = 34;
  std::uint16_t height = 34;
  int label = -1;
};

// Binary layout, 5 bytes per event, big-endian timestamp:
//   byte0 = x, byte1 = y, byte2 bit7 = polarity, byte2 bits6..0 plus
//   bytes 3..4 = 23-bit timestamp in microseconds.
EventStream parse_event_file(std::span<const std::uint8_t> bytes,
                             std::uint16_t width = 34, std::uint16_t height = 34);
std::vector<std::uint8_t> encode_event_file(const EventStream& stream);

// Events partitioned into `bins` equal windows over [t_min, t_max] (last
// bin closed); per-cell value log1p(count); separate polarity channels.
// Returns [bins x 2 x H x W].
Tensor bin_events(const EventStream& stream, std::size_t bins);

// ------------------------------------------------------------ stroke data

enum class Pen { down = 0, up = 1 };

struct StrokePoint {
  double dx = 0, dy = 0;  // delta from the previous point (origin-anchored)
  double x = 0, y = 0;    // absolute, normalized to the unit box
  Pen pen = Pen::down;
};

struct StrokeSequence {
  std::vector<StrokePoint> points;
  int label = -1;
};

struct StrokeParseResult {
  std::vector<StrokeSequence> sequences;
  std::size_t skipped_lines = 0;
};

// One JSON record per line: {"label": int, "drawing": [[[x...],[y...]], ...]}.
// Strokes are concatenated, pen=up on each stroke's last point, coordinates
// normalized to [0,1] preserving aspect ratio, deltas computed against the
// previous point (first delta equals the first absolute position).
// Malformed lines are skipped and counted.
StrokeParseResult parse_stroke_ndjson(std::string_view text);
std::string encode_stroke_ndjson(const std::vector<StrokeSequence>& sequences);

// Raw absolute strokes -> normalized StrokeSequence (the parser's core).
StrokeSequence strokes_to_sequence(
    const std::vector<std::vector<std::pair<double, double>>>& strokes,
    int label);

// Per-point feature vectors: 5-dim (dx,dy,x,y,pen) or 3-dim (dx,dy,pen).
std::vector<std::vector<double>> stroke_features(const StrokeSequence& seq,
                                                 bool five_dim = true);

// ------------------------------------------------------------ clinical data

inline constexpr std::size_t kClinicalVars = 39;

struct ClinicalObservation {
  double time_hours = 0;
  std::array<double, kClinicalVars> values{};
  std::array<bool, kClinicalVars> present{};
};

struct ClinicalSeries {
  std::vector<ClinicalObservation> observations;
  int label = 0;  // sepsis flag
  std::optional<double> onset_time;
};

// Comma-separated, one row per observation: time then 39 value columns,
// missing marked NA. A leading "# label=<0|1>[ onset=<hours>]" comment
// carries the record label.
ClinicalSeries parse_clinical_csv(std::string_view text);
std::string encode_clinical_csv(const ClinicalSeries& series);

struct EncodedSeries {
  std::vector<std::vector<double>> steps;  // [T x 40]
  std::vector<double> delta_t;             // [T], cell-facing (first = 1.0)
};

// D = 40: 39 forward-filled values (initially-missing -> 0) plus a
// time-delta feature channel (hours since the previous observation,
// 0 at the first step).
EncodedSeries encode_clinical(const ClinicalSeries& series);

// ------------------------------------------------------------ batching

struct SequenceSample {
  std::vector<std::vector<double>> steps;  // [T x D]
  std::vector<double> delta_t;             // [T], strictly positive
  int label = -1;
  std::vector<int> seq_target;  // CTC tasks
};

struct Dataset {
  std::vector<SequenceSample> samples;
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  std::string task;
};

struct SequenceBatch {
  Tensor inputs;   // [B x T x D], zero at masked positions
  Tensor delta_t;  // [B x T], 1.0 at masked positions
  Tensor mask;     // [B x T] in {0,1}
  std::vector<int> class_targets;
  std::vector<LabelSeq> seq_targets;

  std::size_t batch() const { return inputs.shape()[0]; }
  std::size_t steps() const { return inputs.shape()[1]; }
  std::size_t dim() const { return inputs.shape()[2]; }
  std::vector<std::size_t> valid_lengths() const;
};

SequenceBatch make_batch(const Dataset& data,
                         const std::vector<std::size_t>& indices);

// ------------------------------------------------------------ synthetic tasks

enum class SynthKind {
  irregular_sine_class,
  event_digits_mini,
  stroke_shapes,
  sepsis_like,
};

SynthKind synth_kind_from_name(const std::string& name);
const char* synth_kind_name(SynthKind kind);
bool is_synth_kind(const std::string& name);

struct SynthOptions {
  double sepsis_positive_rate = 0.1;
};

// Seeded, label-balanced generators (sepsis_like uses the configured
// positive rate instead). Recipes:
//   irregular_sine_class: classify the frequency (0.3 vs 0.9 Hz) of a
//     noisy sine observed at exponentially spaced times; per-step inputs
//     are (value, gap, speed) with speed = |dvalue|/gap, so delta-blind
//     cells see the timing too and mean speed separates the classes.
//   event_digits_mini: 10 classes; an event burst whose temporal position
//     encodes the class, over uniform background noise, binned into 10
//     log-compressed frames on an 8x8 sensor (2 polarities).
//   stroke_shapes: 4 classes (circle, square, triangle, zigzag) drawn as
//     jittered strokes, encoded as 5-dim stroke features.
//   sepsis_like: 39 autoregressive vitals with need-driven sampling and
//     missingness; positives drift on six marker channels after onset.
Dataset synth_task(SynthKind kind, std::uint64_t seed, std::size_t n,
                   const SynthOptions& opts = {});

// File-based loaders matching the external formats above.
Dataset load_stroke_dataset(const std::string& ndjson_path);
Dataset load_event_dataset(const std::string& dir, std::size_t bins = 10,
                           std::uint16_t width = 8, std::uint16_t height = 8);
Dataset load_clinical_dataset(const std::string& dir);

}  // namespace liquidbench
