#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

#include "liquidbench/train.hpp"

using namespace liquidbench;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_sine_config() {
  TrainConfig c;
  c.task = "irregular_sine_class";
  c.n_samples = 120;
  c.cell = CellKind::cfc;
  c.hidden = 8;
  c.epochs = 3;
  c.batch_size = 16;
  c.lr = 5e-3;
  c.seed = 7;
  return c;
}

bool logs_equal(const std::vector<EpochLog>& a, const std::vector<EpochLog>& b,
                std::size_t offset) {
  if (a.size() != b.size() + offset) return false;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const EpochLog& x = a[i + offset];
    const EpochLog& y = b[i];
    if (x.epoch != y.epoch || x.train_loss != y.train_loss ||
        x.train_metric != y.train_metric || x.val_metric != y.val_metric ||
        x.lr != y.lr) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("config round-trips through kv text and hashes deterministically") {
  TrainConfig c = tiny_sine_config();
  c.grad_clip = 1.0;
  c.schedule.kind = ScheduleKind::step;
  c.schedule.interval = 2;
  c.schedule.gamma = 0.5;
  c.optimizer = "adamw";
  c.weight_decay = 0.01;

  KvMap kv = c.to_kv();
  TrainConfig back = TrainConfig::from_kv(kv);
  CHECK(back.canonical() == c.canonical());
  CHECK(back.hash() == c.hash());
  CHECK(back.grad_clip.has_value());
  CHECK(*back.grad_clip == 1.0);

  KvMap reparsed = parse_config_text(c.canonical());
  CHECK(TrainConfig::from_kv(reparsed).hash() == c.hash());
}

TEST_CASE("config text parser reports line numbers on malformed input") {
  CHECK_THROWS_AS(parse_config_text("[train]\nepochs 12\n"), ConfigError);
  try {
    parse_config_text("[train]\nlr = 1e-3\nbroken line\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config_text("[oops\nk = v\n"), ConfigError);
  KvMap kv = parse_config_text("# comment\n[a]\nx = 1\n\n[b]\ny = two words\n");
  CHECK(kv.at("a.x") == "1");
  CHECK(kv.at("b.y") == "two words");
}

TEST_CASE("training runs, logs every epoch, and the lr column follows the schedule") {
  TrainConfig c = tiny_sine_config();
  c.schedule.kind = ScheduleKind::cosine;
  c.schedule.total_epochs = c.epochs;
  TrainResult r = train(c);
  REQUIRE(r.log.size() == 3);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(r.log[e].epoch == e);
    CHECK(r.log[e].lr == lr_schedule(c.schedule, c.lr, e));
    CHECK(std::isfinite(r.log[e].train_loss));
  }
  CHECK(r.log_csv.rfind("epoch,train_loss,train_metric,val_metric,lr\n", 0) == 0);
  // one row per epoch plus the header
  std::size_t lines = 0;
  for (char ch : r.log_csv) {
    if (ch == '\n') ++lines;
  }
  CHECK(lines == 4);
}

TEST_CASE("identical config gives bit-identical training runs") {
  TrainConfig c = tiny_sine_config();
  TrainResult a = train(c);
  TrainResult b = train(c);
  CHECK(logs_equal(a.log, b.log, 0));
  CHECK(a.log_csv == b.log_csv);
  CHECK(serialize_checkpoint(a.final_checkpoint) ==
        serialize_checkpoint(b.final_checkpoint));
  CHECK(a.test_metrics.accuracy == b.test_metrics.accuracy);
}

TEST_CASE("resume from checkpoint continues bit-identically") {
  TrainConfig full = tiny_sine_config();
  full.epochs = 4;
  TrainResult whole = train(full);

  TrainConfig half = full;
  half.epochs = 2;
  // the stored config must match the full run's hash for resume, so train
  // the prefix with the full epoch count via an early-stopped copy
  TrainConfig prefix = full;
  prefix.epochs = 4;
  // run 2 epochs by training a 2-epoch run with the same hash: emulate by
  // resuming from the full config's own 2-epoch checkpoint
  TrainConfig two = full;
  two.epochs = 2;
  (void)half;
  (void)two;

  // direct route: produce a mid-run checkpoint by training with the same
  // config but stopping early through resume_from of epochs_done = 2
  // (cleanest: take the whole run's best/final structure at epoch 2)
  // Simplest honest approach: train 2 epochs under the full config hash by
  // training a fresh model and manually relabeling is not valid; instead
  // train with epochs=4 and capture the checkpoint written after epoch 2
  // via a second training that resumes from it.
  // The train() API already supports this: run a 4-epoch config, then
  // resume from its *best* checkpoint only if best landed at epoch 2.
  // To keep the test deterministic we instead resume from a hand-built
  // mid-run checkpoint produced by train_on with a truncated loop:
  TaskSetup setup = resolve_task(full);
  TrainConfig stub = full;
  stub.epochs = 2;
  TrainResult first_half = train_on(stub, setup);
  Checkpoint mid = first_half.final_checkpoint;
  // relabel the checkpoint as belonging to the 4-epoch config: identical
  // except train.epochs, which resume validates via the hash; so rebuild
  // the mid-run state under the full config by resuming a 4-epoch run from
  // a checkpoint whose hash came from the full config. The parameters and
  // adam state after 2 epochs are identical because epoch streams are
  // keyed by absolute epoch index, not by total epochs.
  mid.config_hash = full.hash();
  mid.config_text = full.canonical();

  TrainResult second_half = train(full, mid);
  REQUIRE(second_half.log.size() == 2);
  CHECK(logs_equal(whole.log, second_half.log, 2));
  CHECK(serialize_checkpoint(whole.final_checkpoint) ==
        serialize_checkpoint(second_half.final_checkpoint));
}

TEST_CASE("checkpoint save -> load -> save is byte-identical") {
  TrainConfig c = tiny_sine_config();
  c.epochs = 1;
  TrainResult r = train(c);
  std::vector<std::uint8_t> once = serialize_checkpoint(r.final_checkpoint);
  Checkpoint back = deserialize_checkpoint(once);
  std::vector<std::uint8_t> twice = serialize_checkpoint(back);
  CHECK(once == twice);

  fs::path dir = fs::temp_directory_path() / "lqb_ckpt_test";
  fs::create_directories(dir);
  std::string p = (dir / "a.ckpt").string();
  save_checkpoint(p, r.final_checkpoint);
  Checkpoint from_disk = load_checkpoint(p);
  CHECK(serialize_checkpoint(from_disk) == once);
  fs::remove_all(dir);
}

TEST_CASE("corrupt checkpoints are rejected with structured errors") {
  TrainConfig c = tiny_sine_config();
  c.epochs = 1;
  TrainResult r = train(c);
  std::vector<std::uint8_t> bytes = serialize_checkpoint(r.final_checkpoint);
  CHECK_THROWS_AS(
      deserialize_checkpoint(std::span<const std::uint8_t>(bytes.data(), 10)),
      CheckpointError);
  std::vector<std::uint8_t> wrong_magic = bytes;
  wrong_magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(wrong_magic), CheckpointError);
  std::vector<std::uint8_t> trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(deserialize_checkpoint(trailing), CheckpointError);
}

TEST_CASE("non-finite loss aborts with a diagnostic naming the batch") {
  TaskSetup setup = resolve_task(tiny_sine_config());
  // poison one parameter so the first forward pass yields NaN
  TrainConfig c = tiny_sine_config();
  c.epochs = 1;
  Model probe = Model::build(setup.model, c.seed);
  Checkpoint poisoned = make_checkpoint(probe, AdamState{}, c.seed, 0, c.hash(),
                                        c.canonical());
  for (auto& [name, t] : poisoned.tensors) {
    if (name == "head.bias") {
      t.mutable_values()[0] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  try {
    train(c, poisoned);
    FAIL("expected TrainError");
  } catch (const TrainError& e) {
    std::string msg = e.what();
    CHECK(msg.find("non-finite loss") != std::string::npos);
    CHECK(msg.find("batch 0") != std::string::npos);
  }
}

TEST_CASE("training writes log.csv and checkpoints under out_dir") {
  fs::path dir = fs::temp_directory_path() / "lqb_train_out";
  fs::remove_all(dir);
  TrainConfig c = tiny_sine_config();
  c.epochs = 2;
  c.out_dir = dir.string();
  TrainResult r = train(c);
  CHECK(fs::exists(dir / "log.csv"));
  CHECK(fs::exists(dir / "final.ckpt"));
  CHECK(fs::exists(dir / "best.ckpt"));
  std::ifstream csv(dir / "log.csv");
  std::stringstream ss;
  ss << csv.rdbuf();
  CHECK(ss.str() == r.log_csv);
  fs::remove_all(dir);
}

TEST_CASE("ctc training on a tiny synthetic labeling task reduces loss and cer") {
  // inputs are one-hot-ish frames; target is the two-symbol sequence of the
  // frame classes; trainable end to end through the ctc path
  Dataset data;
  data.input_dim = 3;
  data.num_classes = 2;  // vocab (blank excluded)
  data.task = "ctc_toy";
  Rng rng(40);
  for (int i = 0; i < 80; ++i) {
    SequenceSample s;
    int first = 1 + static_cast<int>(rng.below(2));
    int second = 1 + static_cast<int>(rng.below(2));
    s.seq_target = {first, second};
    s.label = 0;
    for (int t = 0; t < 6; ++t) {
      std::vector<double> frame(3, 0.0);
      int active = t < 3 ? first : second;
      frame[static_cast<std::size_t>(active)] = 1.0 + 0.1 * rng.normal();
      frame[0] = 0.1 * rng.normal();
      s.steps.push_back(frame);
      s.delta_t.push_back(1.0);
    }
    data.samples.push_back(s);
  }

  TaskSetup setup;
  setup.dataset = data;
  setup.ctc = true;
  setup.model.cell = CellKind::cfc;
  setup.model.input_dim = 3;
  setup.model.hidden = 12;
  setup.model.encoder = EncoderKind::identity;
  setup.model.head = HeadKind::ctc_vocab;
  setup.model.classes = 2;
  setup.model.aggregation = AggKind::per_step;

  TrainConfig c;
  c.task = "ctc_toy";
  c.epochs = 25;
  c.batch_size = 16;
  c.lr = 2e-2;
  c.seed = 3;
  c.hidden = 12;
  c.cell = CellKind::cfc;

  TrainResult r = train_on(c, setup);
  CHECK(r.log.front().train_loss > r.log.back().train_loss);
  CHECK(r.log.back().val_metric < 0.35);  // CER after training
  CHECK(r.test_metrics.cer.has_value());
}
