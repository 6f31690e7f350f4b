#include "liquidbench/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "liquidbench/rng.hpp"

namespace liquidbench {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint32_t kTimestampMask = 0x7FFFFF;  // 23 bits of microseconds

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int label_from_filename(const fs::path& p) {
  std::string stem = p.stem().string();
  std::size_t us = stem.find('_');
  std::string head = us == std::string::npos ? stem : stem.substr(0, us);
  try {
    return std::stoi(head);
  } catch (...) {
    throw ParseError("cannot derive a class label from filename '" +
                     p.filename().string() + "' (expected <label>_<id>)");
  }
}

}  // namespace

// --------------------------------------------------------------- events

EventStream parse_event_file(std::span<const std::uint8_t> bytes,
                             std::uint16_t width, std::uint16_t height) {
  if (bytes.size() % 5 != 0) {
    throw ParseError("event file truncated: " + std::to_string(bytes.size()) +
                     " bytes is not a multiple of 5");
  }
  EventStream stream;
  stream.width = width;
  stream.height = height;
  stream.events.reserve(bytes.size() / 5);
  std::uint32_t prev_t = 0;
  for (std::size_t i = 0; i < bytes.size(); i += 5) {
    Event e;
    e.x = bytes[i];
    e.y = bytes[i + 1];
    e.polarity = static_cast<std::uint8_t>((bytes[i + 2] >> 7) & 1);
    e.t_us = (static_cast<std::uint32_t>(bytes[i + 2] & 0x7F) << 16) |
             (static_cast<std::uint32_t>(bytes[i + 3]) << 8) |
             static_cast<std::uint32_t>(bytes[i + 4]);
    if (e.x >= width || e.y >= height) {
      throw ParseError("event " + std::to_string(i / 5) + " at (" +
                       std::to_string(e.x) + "," + std::to_string(e.y) +
                       ") outside sensor " + std::to_string(width) + "x" +
                       std::to_string(height));
    }
    if (!stream.events.empty() && e.t_us < prev_t) {
      throw ParseError("event " + std::to_string(i / 5) +
                       " timestamp decreases (" + std::to_string(e.t_us) +
                       " after " + std::to_string(prev_t) + ")");
    }
    prev_t = e.t_us;
    stream.events.push_back(e);
  }
  return stream;
}

std::vector<std::uint8_t> encode_event_file(const EventStream& stream) {
  std::vector<std::uint8_t> out;
  out.reserve(stream.events.size() * 5);
  for (const Event& e : stream.events) {
    std::uint32_t t = e.t_us & kTimestampMask;
    out.push_back(static_cast<std::uint8_t>(e.x));
    out.push_back(static_cast<std::uint8_t>(e.y));
    out.push_back(static_cast<std::uint8_t>(((e.polarity & 1) << 7) |
                                            ((t >> 16) & 0x7F)));
    out.push_back(static_cast<std::uint8_t>((t >> 8) & 0xFF));
    out.push_back(static_cast<std::uint8_t>(t & 0xFF));
  }
  return out;
}

Tensor bin_events(const EventStream& stream, std::size_t bins) {
  if (bins < 1) throw ValueError("bin_events needs bins >= 1");
  if (stream.events.empty()) {
    throw ValueError("bin_events on an empty event stream");
  }
  std::size_t H = stream.height, W = stream.width;
  std::vector<double> counts(bins * 2 * H * W, 0.0);
  std::uint64_t t_min = stream.events.front().t_us;
  std::uint64_t t_max = stream.events.back().t_us;
  std::uint64_t span = t_max - t_min;
  for (const Event& e : stream.events) {
    std::size_t b;
    if (span == 0) {
      b = bins - 1;  // zero-width window: everything sits on the closed edge
    } else {
      std::uint64_t rel = e.t_us - t_min;
      b = rel == span ? bins - 1
                      : static_cast<std::size_t>(rel * bins / span);
      if (b >= bins) b = bins - 1;
    }
    std::size_t p = e.polarity & 1;
    counts[((b * 2 + p) * H + e.y) * W + e.x] += 1.0;
  }
  for (double& c : counts) c = std::log1p(c);
  return Tensor({bins, 2, H, W}, std::move(counts));
}

// --------------------------------------------------------------- strokes

StrokeSequence strokes_to_sequence(
    const std::vector<std::vector<std::pair<double, double>>>& strokes,
    int label) {
  std::size_t total = 0;
  for (const auto& s : strokes) total += s.size();
  if (total == 0) throw ParseError("drawing has no points");

  double min_x = 1e300, min_y = 1e300, max_x = -1e300, max_y = -1e300;
  for (const auto& s : strokes) {
    for (auto [x, y] : s) {
      min_x = std::min(min_x, x);
      max_x = std::max(max_x, x);
      min_y = std::min(min_y, y);
      max_y = std::max(max_y, y);
    }
  }
  double span = std::max(max_x - min_x, max_y - min_y);
  double scale = span > 0 ? 1.0 / span : 0.0;

  StrokeSequence seq;
  seq.label = label;
  seq.points.reserve(total);
  double prev_x = 0.0, prev_y = 0.0;  // deltas anchored at the origin
  for (const auto& s : strokes) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      StrokePoint p;
      p.x = (s[i].first - min_x) * scale;
      p.y = (s[i].second - min_y) * scale;
      p.dx = p.x - prev_x;
      p.dy = p.y - prev_y;
      p.pen = i + 1 == s.size() ? Pen::up : Pen::down;
      prev_x = p.x;
      prev_y = p.y;
      seq.points.push_back(p);
    }
  }
  return seq;
}

StrokeParseResult parse_stroke_ndjson(std::string_view text) {
  StrokeParseResult result;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    std::string_view line = text.substr(
        pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
    pos = eol == std::string_view::npos ? text.size() : eol + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;

    json rec = json::parse(line, nullptr, false);
    bool ok = rec.is_object() && rec.contains("drawing") &&
              rec["drawing"].is_array() && !rec["drawing"].empty();
    std::vector<std::vector<std::pair<double, double>>> strokes;
    if (ok) {
      for (const auto& js : rec["drawing"]) {
        if (!js.is_array() || js.size() != 2 || !js[0].is_array() ||
            !js[1].is_array() || js[0].size() != js[1].size() ||
            js[0].empty()) {
          ok = false;
          break;
        }
        std::vector<std::pair<double, double>> stroke;
        for (std::size_t i = 0; i < js[0].size(); ++i) {
          if (!js[0][i].is_number() || !js[1][i].is_number()) {
            ok = false;
            break;
          }
          double x = js[0][i].get<double>();
          double y = js[1][i].get<double>();
          if (!std::isfinite(x) || !std::isfinite(y)) {
            ok = false;
            break;
          }
          stroke.emplace_back(x, y);
        }
        if (!ok) break;
        strokes.push_back(std::move(stroke));
      }
    }
    if (!ok) {
      ++result.skipped_lines;
      continue;
    }
    int label = -1;
    if (rec.contains("label") && rec["label"].is_number_integer()) {
      label = rec["label"].get<int>();
    }
    result.sequences.push_back(strokes_to_sequence(strokes, label));
  }
  return result;
}

std::string encode_stroke_ndjson(const std::vector<StrokeSequence>& sequences) {
  std::ostringstream out;
  for (const StrokeSequence& seq : sequences) {
    json strokes = json::array();
    json xs = json::array(), ys = json::array();
    for (std::size_t i = 0; i < seq.points.size(); ++i) {
      xs.push_back(seq.points[i].x);
      ys.push_back(seq.points[i].y);
      if (seq.points[i].pen == Pen::up || i + 1 == seq.points.size()) {
        strokes.push_back(json::array({xs, ys}));
        xs = json::array();
        ys = json::array();
      }
    }
    json rec;
    rec["label"] = seq.label;
    rec["drawing"] = strokes;
    out << rec.dump() << '\n';
  }
  return out.str();
}

std::vector<std::vector<double>> stroke_features(const StrokeSequence& seq,
                                                 bool five_dim) {
  std::vector<std::vector<double>> out;
  out.reserve(seq.points.size());
  for (const StrokePoint& p : seq.points) {
    double pen = p.pen == Pen::up ? 1.0 : 0.0;
    if (five_dim) {
      out.push_back({p.dx, p.dy, p.x, p.y, pen});
    } else {
      out.push_back({p.dx, p.dy, pen});
    }
  }
  return out;
}

// --------------------------------------------------------------- clinical

ClinicalSeries parse_clinical_csv(std::string_view text) {
  ClinicalSeries series;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool any_value = false;
  double prev_time = -std::numeric_limits<double>::infinity();
  while (pos < text.size()) {
    ++line_no;
    std::size_t eol = text.find('\n', pos);
    std::string line(text.substr(
        pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos));
    pos = eol == std::string_view::npos ? text.size() : eol + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;

    if (line[0] == '#') {
      std::istringstream hs(line.substr(1));
      std::string tok;
      while (hs >> tok) {
        try {
          if (tok.rfind("label=", 0) == 0) {
            series.label = std::stoi(tok.substr(6));
          } else if (tok.rfind("onset=", 0) == 0) {
            series.onset_time = std::stod(tok.substr(6));
          }
        } catch (...) {
          throw ParseError("line " + std::to_string(line_no) +
                           ": bad header field '" + tok + "'");
        }
      }
      continue;
    }

    std::vector<std::string> cols;
    std::istringstream ls(line);
    std::string col;
    while (std::getline(ls, col, ',')) cols.push_back(col);
    if (cols.size() != kClinicalVars + 1) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(kClinicalVars + 1) + " columns, got " +
                       std::to_string(cols.size()));
    }
    ClinicalObservation obs;
    try {
      obs.time_hours = std::stod(cols[0]);
    } catch (...) {
      throw ParseError("line " + std::to_string(line_no) +
                       ": bad time value '" + cols[0] + "'");
    }
    if (!std::isfinite(obs.time_hours) || obs.time_hours <= prev_time) {
      throw ParseError("line " + std::to_string(line_no) +
                       ": times must be finite and strictly increasing");
    }
    prev_time = obs.time_hours;
    for (std::size_t j = 0; j < kClinicalVars; ++j) {
      const std::string& c = cols[j + 1];
      if (c == "NA" || c.empty()) {
        obs.present[j] = false;
        obs.values[j] = 0.0;
        continue;
      }
      try {
        obs.values[j] = std::stod(c);
      } catch (...) {
        throw ParseError("line " + std::to_string(line_no) + " column " +
                         std::to_string(j + 2) + ": bad value '" + c + "'");
      }
      if (!std::isfinite(obs.values[j])) {
        throw ParseError("line " + std::to_string(line_no) + " column " +
                         std::to_string(j + 2) + ": non-finite value");
      }
      obs.present[j] = true;
      any_value = true;
    }
    series.observations.push_back(obs);
  }
  if (series.observations.empty()) {
    throw ParseError("clinical record has no observations");
  }
  if (!any_value) {
    throw ParseError("clinical record has no observed values at all");
  }
  return series;
}

std::string encode_clinical_csv(const ClinicalSeries& series) {
  std::ostringstream out;
  out << "# label=" << series.label;
  if (series.onset_time) out << " onset=" << *series.onset_time;
  out << '\n';
  out.precision(17);
  for (const ClinicalObservation& obs : series.observations) {
    out << obs.time_hours;
    for (std::size_t j = 0; j < kClinicalVars; ++j) {
      out << ',';
      if (obs.present[j]) {
        out << obs.values[j];
      } else {
        out << "NA";
      }
    }
    out << '\n';
  }
  return out.str();
}

EncodedSeries encode_clinical(const ClinicalSeries& series) {
  if (series.observations.empty()) {
    throw ValueError("encode_clinical on an empty series");
  }
  EncodedSeries enc;
  std::array<double, kClinicalVars> filled{};
  std::array<bool, kClinicalVars> seen{};
  double prev_time = 0;
  for (std::size_t t = 0; t < series.observations.size(); ++t) {
    const ClinicalObservation& obs = series.observations[t];
    std::vector<double> row(kClinicalVars + 1, 0.0);
    for (std::size_t j = 0; j < kClinicalVars; ++j) {
      if (obs.present[j]) {
        filled[j] = obs.values[j];
        seen[j] = true;
      }
      row[j] = seen[j] ? filled[j] : 0.0;  // never-seen channels stay zero
    }
    double gap = t == 0 ? 0.0 : obs.time_hours - prev_time;
    row[kClinicalVars] = gap;  // time-delta feature
    prev_time = obs.time_hours;
    enc.steps.push_back(std::move(row));
    enc.delta_t.push_back(t == 0 ? 1.0 : gap);
  }
  return enc;
}

// --------------------------------------------------------------- batching

std::vector<std::size_t> SequenceBatch::valid_lengths() const {
  std::size_t B = batch(), T = steps();
  const auto& m = mask.values();
  std::vector<std::size_t> out(B, 0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      if (m[b * T + t] != 0.0) out[b] = t + 1;
    }
  }
  return out;
}

SequenceBatch make_batch(const Dataset& data,
                         const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ValueError("make_batch on an empty index list");
  std::size_t B = indices.size(), D = data.input_dim;
  std::size_t T = 0;
  for (std::size_t idx : indices) {
    const SequenceSample& s = data.samples.at(idx);
    if (s.steps.empty()) throw ValueError("sample with no steps");
    T = std::max(T, s.steps.size());
  }

  std::vector<double> inputs(B * T * D, 0.0);
  std::vector<double> delta(B * T, 1.0);
  std::vector<double> mask(B * T, 0.0);
  SequenceBatch batch;
  for (std::size_t b = 0; b < B; ++b) {
    const SequenceSample& s = data.samples.at(indices[b]);
    if (s.delta_t.size() != s.steps.size()) {
      throw ShapeError("sample delta_t length mismatch");
    }
    for (std::size_t t = 0; t < s.steps.size(); ++t) {
      if (s.steps[t].size() != D) {
        throw ShapeError("sample step dim " + std::to_string(s.steps[t].size()) +
                         " != dataset input_dim " + std::to_string(D));
      }
      if (!(s.delta_t[t] > 0.0)) {
        throw ValueError("sample delta_t must be strictly positive");
      }
      std::copy(s.steps[t].begin(), s.steps[t].end(),
                inputs.begin() + (b * T + t) * D);
      delta[b * T + t] = s.delta_t[t];
      mask[b * T + t] = 1.0;
    }
    batch.class_targets.push_back(s.label);
    batch.seq_targets.push_back(LabelSeq{s.seq_target});
  }
  batch.inputs = Tensor::from_external({B, T, D}, std::move(inputs));
  batch.delta_t = Tensor::from_external({B, T}, std::move(delta));
  batch.mask = Tensor({B, T}, std::move(mask));
  return batch;
}

// --------------------------------------------------------------- synthetic

SynthKind synth_kind_from_name(const std::string& name) {
  if (name == "irregular_sine_class") return SynthKind::irregular_sine_class;
  if (name == "event_digits_mini") return SynthKind::event_digits_mini;
  if (name == "stroke_shapes") return SynthKind::stroke_shapes;
  if (name == "sepsis_like") return SynthKind::sepsis_like;
  throw ValueError("unknown synthetic task '" + name + "'");
}

const char* synth_kind_name(SynthKind kind) {
  switch (kind) {
    case SynthKind::irregular_sine_class: return "irregular_sine_class";
    case SynthKind::event_digits_mini: return "event_digits_mini";
    case SynthKind::stroke_shapes: return "stroke_shapes";
    case SynthKind::sepsis_like: return "sepsis_like";
  }
  return "?";
}

bool is_synth_kind(const std::string& name) {
  return name == "irregular_sine_class" || name == "event_digits_mini" ||
         name == "stroke_shapes" || name == "sepsis_like";
}

namespace {

SequenceSample gen_sine(int label, Rng rng) {
  static constexpr double kFreq[2] = {0.3, 0.9};
  SequenceSample s;
  s.label = label;
  double freq = kFreq[label];
  double phase = rng.uniform(0.0, 6.283185307179586);
  std::size_t T = 24 + rng.below(13);
  double t_now = 0.0;
  double prev_value = 0.0;
  for (std::size_t i = 0; i < T; ++i) {
    double gap = std::min(2.0, 0.05 - std::log(1.0 - rng.uniform()) * 0.3);
    t_now += gap;
    double value = std::sin(6.283185307179586 * freq * t_now + phase) +
                   0.05 * rng.normal();
    // unsigned finite-difference speed: mean speed ~ 4 f A, so frequency is
    // linearly separable from pooled features (signed velocity is not,
    // since sigmoid/tanh gates average symmetric inputs to a constant)
    double speed = i == 0 ? 0.0 : std::fabs(value - prev_value) / gap;
    prev_value = value;
    s.steps.push_back({value, gap, speed});
    s.delta_t.push_back(gap);
  }
  return s;
}

SequenceSample gen_event_digit(int label, Rng rng) {
  constexpr std::uint16_t kSide = 8;
  constexpr std::uint32_t kDuration = 10000;  // microseconds
  constexpr std::size_t kBins = 10;

  EventStream stream;
  stream.width = kSide;
  stream.height = kSide;
  stream.label = label;

  auto clamp_coord = [&](double v) {
    return static_cast<std::uint16_t>(
        std::clamp(v, 0.0, static_cast<double>(kSide - 1)));
  };

  // signal burst: temporal position encodes the class
  double center_t = (label + 0.5) / 10.0 * kDuration;
  for (int i = 0; i < 200; ++i) {
    double t = std::clamp(center_t + 300.0 * rng.normal(), 0.0,
                          static_cast<double>(kDuration));
    Event e;
    e.t_us = static_cast<std::uint32_t>(t);
    e.x = clamp_coord(3.5 + 1.2 * rng.normal());
    e.y = clamp_coord(3.5 + 1.2 * rng.normal());
    e.polarity = rng.bernoulli(0.5) ? 1 : 0;
    stream.events.push_back(e);
  }
  // uniform background noise
  for (int i = 0; i < 30; ++i) {
    Event e;
    e.t_us = static_cast<std::uint32_t>(rng.uniform(0.0, kDuration));
    e.x = static_cast<std::uint16_t>(rng.below(kSide));
    e.y = static_cast<std::uint16_t>(rng.below(kSide));
    e.polarity = rng.bernoulli(0.5) ? 1 : 0;
    stream.events.push_back(e);
  }
  std::sort(stream.events.begin(), stream.events.end(),
            [](const Event& a, const Event& b) { return a.t_us < b.t_us; });
  // anchor the window so bin edges are class-independent
  stream.events.front().t_us = 0;
  stream.events.back().t_us = kDuration;

  Tensor frames = bin_events(stream, kBins);
  std::size_t frame_dim = 2 * kSide * kSide;
  SequenceSample s;
  s.label = label;
  for (std::size_t b = 0; b < kBins; ++b) {
    std::vector<double> row(
        frames.values().begin() + static_cast<std::ptrdiff_t>(b * frame_dim),
        frames.values().begin() + static_cast<std::ptrdiff_t>((b + 1) * frame_dim));
    s.steps.push_back(std::move(row));
    s.delta_t.push_back(1.0);
  }
  return s;
}

SequenceSample gen_stroke_shape(int label, Rng rng) {
  double cx = rng.uniform(0.4, 0.6), cy = rng.uniform(0.4, 0.6);
  double r = rng.uniform(0.25, 0.45);
  double rot = rng.uniform(-0.3, 0.3);
  double jitter = 0.012;
  auto place = [&](double px, double py) {
    double x = px * std::cos(rot) - py * std::sin(rot);
    double y = px * std::sin(rot) + py * std::cos(rot);
    return std::make_pair(cx + x + jitter * rng.normal(),
                          cy + y + jitter * rng.normal());
  };

  std::vector<std::vector<std::pair<double, double>>> strokes;
  auto polygon = [&](const std::vector<std::pair<double, double>>& corners,
                     std::size_t per_edge) {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t e = 0; e < corners.size(); ++e) {
      auto [x0, y0] = corners[e];
      auto [x1, y1] = corners[(e + 1) % corners.size()];
      for (std::size_t i = 0; i < per_edge; ++i) {
        double a = static_cast<double>(i) / per_edge;
        pts.push_back(place(x0 + a * (x1 - x0), y0 + a * (y1 - y0)));
      }
    }
    pts.push_back(pts.front());
    return pts;
  };

  switch (label) {
    case 0: {  // circle
      std::vector<std::pair<double, double>> pts;
      double ry = r * rng.uniform(0.8, 1.2);
      for (int i = 0; i <= 28; ++i) {
        double a = 6.283185307179586 * i / 28.0;
        pts.push_back(place(r * std::cos(a), ry * std::sin(a)));
      }
      strokes.push_back(pts);
      break;
    }
    case 1:  // square
      strokes.push_back(polygon({{-r, -r}, {r, -r}, {r, r}, {-r, r}}, 7));
      break;
    case 2:  // triangle
      strokes.push_back(polygon({{0, r}, {-r, -r}, {r, -r}}, 9));
      break;
    default: {  // zigzag: two strokes, exercising a pen-up mid-drawing
      std::vector<std::pair<double, double>> pts;
      int segments = 4;
      for (int i = 0; i <= segments * 6; ++i) {
        double a = static_cast<double>(i) / (segments * 6);
        double x = -r + 2 * r * a;
        double y = r * (std::fmod(a * segments, 1.0) < 0.5 ? 1.0 : -1.0) *
                   (0.5 - std::fabs(std::fmod(a * segments, 0.5) - 0.25)) * 4;
        pts.push_back(place(x, y * 0.5));
      }
      strokes.push_back(pts);
      std::vector<std::pair<double, double>> underline;
      for (int i = 0; i <= 6; ++i) {
        underline.push_back(place(-r + 2 * r * i / 6.0, -r));
      }
      strokes.push_back(underline);
      break;
    }
  }

  StrokeSequence seq = strokes_to_sequence(strokes, label);
  SequenceSample s;
  s.label = label;
  s.steps = stroke_features(seq, true);
  for (std::size_t i = 0; i < s.steps.size(); ++i) {
    s.delta_t.push_back(rng.uniform(0.5, 1.5));
  }
  return s;
}

SequenceSample gen_sepsis(int label, Rng rng, const std::array<double, 39>& obs_prob) {
  SequenceSample s;
  s.label = label;
  std::size_t T = 20 + rng.below(21);
  double onset_frac = rng.uniform(0.4, 0.8);

  std::array<double, kClinicalVars> mean{}, sd{}, state{};
  for (std::size_t j = 0; j < kClinicalVars; ++j) {
    mean[j] = 10.0 + 2.0 * static_cast<double>(j);
    sd[j] = 1.0 + 0.1 * static_cast<double>(j);
    state[j] = mean[j] + sd[j] * rng.normal();
  }

  ClinicalSeries series;
  series.label = label;
  double t_now = 0.0;
  double total_est = static_cast<double>(T) * 1.8;
  double onset = onset_frac * total_est;
  if (label == 1) series.onset_time = onset;

  for (std::size_t t = 0; t < T; ++t) {
    t_now += 0.5 - std::log(1.0 - rng.uniform()) * 1.3;
    ClinicalObservation obs;
    obs.time_hours = t_now;
    for (std::size_t j = 0; j < kClinicalVars; ++j) {
      state[j] = mean[j] + 0.8 * (state[j] - mean[j]) + 0.3 * sd[j] * rng.normal();
      double v = state[j];
      if (label == 1 && j < 6 && t_now > onset) {
        v += 0.8 * sd[j] * (t_now - onset);  // marker channels drift upward
      }
      obs.present[j] = rng.uniform() < obs_prob[j];
      obs.values[j] = obs.present[j] ? v : 0.0;
    }
    series.observations.push_back(obs);
  }

  EncodedSeries enc = encode_clinical(series);
  s.steps = std::move(enc.steps);
  s.delta_t = std::move(enc.delta_t);
  return s;
}

}  // namespace

Dataset synth_task(SynthKind kind, std::uint64_t seed, std::size_t n,
                   const SynthOptions& opts) {
  if (n < 10) throw ValueError("synth_task needs n >= 10");
  Dataset data;
  data.task = synth_kind_name(kind);
  Rng root = Rng(seed).split("data");

  std::size_t classes = 0;
  switch (kind) {
    case SynthKind::irregular_sine_class: classes = 2; break;
    case SynthKind::event_digits_mini: classes = 10; break;
    case SynthKind::stroke_shapes: classes = 4; break;
    case SynthKind::sepsis_like: classes = 2; break;
  }
  data.num_classes = classes;

  std::array<double, kClinicalVars> obs_prob{};
  if (kind == SynthKind::sepsis_like) {
    Rng op = root.split("obsprob");
    for (std::size_t j = 0; j < kClinicalVars; ++j) {
      obs_prob[j] = op.split(j).uniform(0.3, 0.95);
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = root.split(i);
    int label;
    if (kind == SynthKind::sepsis_like) {
      label = rng.bernoulli(opts.sepsis_positive_rate) ? 1 : 0;
    } else {
      label = static_cast<int>(i % classes);  // balanced by construction
    }
    switch (kind) {
      case SynthKind::irregular_sine_class:
        data.samples.push_back(gen_sine(label, rng));
        break;
      case SynthKind::event_digits_mini:
        data.samples.push_back(gen_event_digit(label, rng));
        break;
      case SynthKind::stroke_shapes:
        data.samples.push_back(gen_stroke_shape(label, rng));
        break;
      case SynthKind::sepsis_like:
        data.samples.push_back(gen_sepsis(label, rng, obs_prob));
        break;
    }
  }
  data.input_dim = data.samples.front().steps.front().size();

  // seeded shuffle so class-balanced generation does not leave the labels
  // in a periodic order
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  root.split("order").shuffle(order);
  std::vector<SequenceSample> shuffled;
  shuffled.reserve(n);
  for (std::size_t i : order) shuffled.push_back(std::move(data.samples[i]));
  data.samples = std::move(shuffled);
  return data;
}

// --------------------------------------------------------------- loaders

Dataset load_stroke_dataset(const std::string& ndjson_path) {
  StrokeParseResult parsed = parse_stroke_ndjson(read_file(ndjson_path));
  if (parsed.sequences.empty()) {
    throw ParseError("no parsable stroke records in " + ndjson_path);
  }
  Dataset data;
  data.task = "stroke_file";
  int max_label = 0;
  for (const StrokeSequence& seq : parsed.sequences) {
    if (seq.label < 0) {
      throw ParseError("stroke record without a label in " + ndjson_path);
    }
    max_label = std::max(max_label, seq.label);
    SequenceSample s;
    s.label = seq.label;
    s.steps = stroke_features(seq, true);
    s.delta_t.assign(s.steps.size(), 1.0);
    data.samples.push_back(std::move(s));
  }
  data.num_classes = static_cast<std::size_t>(max_label) + 1;
  data.input_dim = 5;
  return data;
}

Dataset load_event_dataset(const std::string& dir, std::size_t bins,
                           std::uint16_t width, std::uint16_t height) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".bin") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ParseError("no .bin event files in " + dir);

  Dataset data;
  data.task = "event_file";
  int max_label = 0;
  for (const fs::path& f : files) {
    std::string raw = read_file(f.string());
    EventStream stream = parse_event_file(
        std::span<const std::uint8_t>(
            reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()),
        width, height);
    stream.label = label_from_filename(f);
    max_label = std::max(max_label, stream.label);
    Tensor frames = bin_events(stream, bins);
    std::size_t frame_dim = 2 * static_cast<std::size_t>(width) * height;
    SequenceSample s;
    s.label = stream.label;
    for (std::size_t b = 0; b < bins; ++b) {
      std::vector<double> row(
          frames.values().begin() + static_cast<std::ptrdiff_t>(b * frame_dim),
          frames.values().begin() +
              static_cast<std::ptrdiff_t>((b + 1) * frame_dim));
      s.steps.push_back(std::move(row));
      s.delta_t.push_back(1.0);
    }
    data.samples.push_back(std::move(s));
  }
  data.num_classes = static_cast<std::size_t>(max_label) + 1;
  data.input_dim = 2 * static_cast<std::size_t>(width) * height;
  return data;
}

Dataset load_clinical_dataset(const std::string& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".csv") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ParseError("no .csv clinical files in " + dir);

  Dataset data;
  data.task = "clinical_file";
  data.num_classes = 2;
  data.input_dim = kClinicalVars + 1;
  for (const fs::path& f : files) {
    ClinicalSeries series = parse_clinical_csv(read_file(f.string()));
    EncodedSeries enc = encode_clinical(series);
    SequenceSample s;
    s.label = series.label;
    s.steps = std::move(enc.steps);
    s.delta_t = std::move(enc.delta_t);
    data.samples.push_back(std::move(s));
  }
  return data;
}

}  // namespace liquidbench
