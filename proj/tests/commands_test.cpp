#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "spiketrain/commands.hpp"

using namespace spiketrain;
using Catch::Matchers::ContainsSubstring;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path(name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::string& text) {
  std::size_t n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

const Tensor<float>* find_entry(const NetworkParams<float>& p,
                                const std::string& name) {
  for (const auto& e : p.entries)
    if (e.name == name) return &e.tensor;
  return nullptr;
}

// Small end-to-end job shared by the train/eval/export tests.
RunConfig tiny_job() {
  RunConfig cfg = parse_config(
      "input = 8\n"
      "seed = 5\n"
      "epochs = 3\n"
      "batch_size = 8\n"
      "lr = 0.002\n"
      "classes = 2\n"
      "examples = 24\n"
      "steps = 12\n"
      "net {\n"
      "  linear 8\n"
      "  lif\n"
      "  linear 2\n"
      "  li\n"
      "}\n");
  return cfg;
}

}  // namespace

TEST_CASE("synthetic labels cycle through the classes") {
  const RasterDataset d = synth_raster(2, 10, 4, {6}, 7);
  REQUIRE(d.y.size() == 10);
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < d.y.size(); ++i) {
    CHECK(d.y[i] == std::int64_t(i % 2));
    if (d.y[i] == 0) ++zeros;
  }
  CHECK(zeros == 5);
  CHECK(d.x.shape() == Shape{10, 4, 6});
}

TEST_CASE("synthetic rates concentrate in the label's block") {
  // 2 classes over 10 features: blocks [0,5) and [5,10)
  const std::size_t n = 40, t = 64, f = 10;
  const RasterDataset d = synth_raster(2, n, t, {f}, 11);
  std::size_t in_block = 0, outside = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = std::size_t(d.y[i]) * 5;
    for (std::size_t s = 0; s < t; ++s)
      for (std::size_t j = 0; j < f; ++j) {
        const std::uint8_t v = d.x[(i * t + s) * f + j];
        CHECK(v <= 1);
        if (j >= lo && j < lo + 5)
          in_block += v;
        else
          outside += v;
      }
  }
  // 12800 draws on each side; bounds are ~5 sigma around n*p
  const double draws = double(n * t * 5);
  CHECK(std::abs(double(in_block) - kSynthRateHigh * draws) < 300.0);
  CHECK(std::abs(double(outside) - kSynthRateLow * draws) < 150.0);
}

TEST_CASE("synthetic generation is a pure function of the seed") {
  const RasterDataset a = synth_raster(2, 6, 8, {4}, 123);
  const RasterDataset b = synth_raster(2, 6, 8, {4}, 123);
  const RasterDataset c = synth_raster(2, 6, 8, {4}, 124);
  CHECK(tensor_equal(a.x, b.x));
  CHECK(a.y == b.y);
  CHECK_FALSE(tensor_equal(a.x, c.x));
}

TEST_CASE("synthetic generator rejects degenerate requests") {
  CHECK_THROWS_AS(synth_raster(0, 4, 4, {4}, 0), ArgumentError);
  CHECK_THROWS_AS(synth_raster(2, 0, 4, {4}, 0), ArgumentError);
  CHECK_THROWS_AS(synth_raster(2, 4, 0, {4}, 0), ArgumentError);
  CHECK_THROWS_AS(synth_raster(2, 4, 4, {}, 0), ArgumentError);
}

TEST_CASE("synth command writes a readable container") {
  TempFile out("cmd_synth_out.spkd");
  RunConfig cfg;
  cfg.out = out.path;
  cfg.input_shape = {6};
  cfg.classes = 3;
  cfg.examples = 9;
  cfg.steps = 12;
  cfg.seed = 3;
  std::ostringstream log;
  cmd_synth(cfg, log);
  CHECK_THAT(log.str(), ContainsSubstring("wrote 9 examples"));

  const PackedDataset got = read_container(out.path);
  CHECK(got.x.shape() == Shape{9, 2, 6});  // ceil(12/8) = 2
  CHECK(got.original_t == 12);
  REQUIRE(got.y.size() == 9);
  CHECK(got.y[4] == 1);  // 4 % 3

  RunConfig missing = cfg;
  missing.out = "";
  CHECK_THROWS_AS(cmd_synth(missing, log), ConfigError);
  missing = cfg;
  missing.input_shape = {};
  CHECK_THROWS_AS(cmd_synth(missing, log), ConfigError);
}

TEST_CASE("train command writes a checkpoint and a metrics table") {
  TempFile data("cmd_train_data.spkd");
  TempFile ckpt("cmd_train_ckpt.spkc");
  TempFile metrics("cmd_train_metrics.csv");
  RunConfig cfg = tiny_job();
  cfg.out = data.path;
  std::ostringstream log;
  cmd_synth(cfg, log);

  cfg.data = data.path;
  cfg.out = ckpt.path;
  cfg.metrics = metrics.path;
  const TrainResult<float> r = cmd_train(cfg, log);
  CHECK(r.metrics.size() == 3);
  CHECK(r.opt.step == 9);  // 3 epochs x 24/8 batches

  const std::string csv = slurp(metrics.path);
  CHECK(count_lines(csv) == 4);  // header + one row per epoch
  CHECK(csv.rfind("epoch,loss,train_acc,wall_ms\n", 0) == 0);

  const Checkpoint<float> saved = read_checkpoint<float>(ckpt.path);
  CHECK(saved.opt.step == 9);
  CHECK(find_entry(saved.params, "l0.w") != nullptr);
  CHECK(find_entry(saved.params, "l3.beta") != nullptr);
  const RunConfig embedded = parse_config(saved.config_text);
  CHECK(embedded.layers.size() == 4);
  CHECK(embedded.input_shape == Shape{8});

  RunConfig missing = cfg;
  missing.data = "";
  CHECK_THROWS_AS(cmd_train(missing, log), ConfigError);
  missing = cfg;
  missing.layers.clear();
  CHECK_THROWS_AS(cmd_train(missing, log), ConfigError);
}

TEST_CASE("training for zero epochs snapshots the initialization") {
  TempFile data("cmd_train0_data.spkd");
  TempFile ckpt("cmd_train0_ckpt.spkc");
  TempFile metrics("cmd_train0_metrics.csv");
  RunConfig cfg = tiny_job();
  cfg.epochs = 0;
  cfg.out = data.path;
  std::ostringstream log;
  cmd_synth(cfg, log);
  cfg.data = data.path;
  cfg.out = ckpt.path;
  cfg.metrics = metrics.path;
  const TrainResult<float> r = cmd_train(cfg, log);
  CHECK(r.metrics.empty());
  CHECK(count_lines(slurp(metrics.path)) == 1);
  CHECK(read_checkpoint<float>(ckpt.path).opt.step == 0);
}

TEST_CASE("eval accuracy is independent of the evaluation batch split") {
  TempFile data("cmd_eval_data.spkd");
  TempFile ckpt("cmd_eval_ckpt.spkc");
  TempFile metrics("cmd_eval_metrics.csv");
  RunConfig cfg = tiny_job();
  cfg.epochs = 4;
  cfg.out = data.path;
  std::ostringstream log;
  cmd_synth(cfg, log);
  cfg.data = data.path;
  cfg.out = ckpt.path;
  cfg.metrics = metrics.path;
  cmd_train(cfg, log);

  RunConfig eval_cfg;
  eval_cfg.checkpoint = ckpt.path;
  eval_cfg.data = data.path;
  eval_cfg.batch_size = 24;
  const double full = cmd_eval(eval_cfg, log);
  eval_cfg.batch_size = 5;  // 24 = 4 batches of 5 plus a tail of 4
  const double split = cmd_eval(eval_cfg, log);
  CHECK(full == split);
  CHECK(full >= 0.0);
  CHECK(full <= 1.0);

  // the batched walk must agree with one whole-set forward pass
  const Checkpoint<float> saved = read_checkpoint<float>(ckpt.path);
  const NetworkSpec spec = network_spec_from(parse_config(saved.config_text));
  const PackedDataset packed = read_container(data.path);
  const Tensor<float> x = unpack_time<float>(packed.x, packed.original_t, 1);
  const ApplyResult<float> r = apply(spec, saved.params, x, eval_cfg.unroll);
  CHECK(full == integral_accuracy(r.trace, packed.y));

  RunConfig bad = eval_cfg;
  bad.checkpoint = "";
  CHECK_THROWS_AS(cmd_eval(bad, log), ConfigError);
  bad = eval_cfg;
  bad.batch_size = 0;
  CHECK_THROWS_AS(cmd_eval(bad, log), ConfigError);
}

TEST_CASE("export then import reproduces the checkpointed model") {
  TempFile data("cmd_port_data.spkd");
  TempFile ckpt("cmd_port_ckpt.spkc");
  TempFile metrics("cmd_port_metrics.csv");
  TempFile graph("cmd_port_graph.spkg");
  TempFile ckpt2("cmd_port_ckpt2.spkc");
  RunConfig cfg = tiny_job();
  cfg.epochs = 1;
  cfg.out = data.path;
  std::ostringstream log;
  cmd_synth(cfg, log);
  cfg.data = data.path;
  cfg.out = ckpt.path;
  cfg.metrics = metrics.path;
  cmd_train(cfg, log);

  RunConfig ex;
  ex.checkpoint = ckpt.path;
  ex.out = graph.path;
  ex.dt = 0.5;
  cmd_export(ex, log);
  CHECK_THAT(log.str(), ContainsSubstring("exported 6 nodes"));

  RunConfig im;
  im.graph = graph.path;
  im.out = ckpt2.path;
  cmd_import(im, log);

  const Checkpoint<float> a = read_checkpoint<float>(ckpt.path);
  const Checkpoint<float> b = read_checkpoint<float>(ckpt2.path);
  REQUIRE(a.params.entries.size() == b.params.entries.size());
  for (const auto& e : a.params.entries) {
    const Tensor<float>* other = find_entry(b.params, e.name);
    REQUIRE(other != nullptr);
    CHECK(max_abs_diff(e.tensor, *other) < 1e-5f);
  }
  const RunConfig round = parse_config(b.config_text);
  CHECK(round.beta_mode == "per_neuron");
  CHECK(round.dt == 0.5);

  // the two checkpoints drive indistinguishable readouts
  const NetworkSpec spec_a = network_spec_from(parse_config(a.config_text));
  const NetworkSpec spec_b = network_spec_from(round);
  const PackedDataset packed = read_container(data.path);
  const Tensor<float> x = unpack_time<float>(packed.x, packed.original_t, 1);
  const auto ra = apply(spec_a, a.params, x);
  const auto rb = apply(spec_b, b.params, x);
  CHECK(max_abs_diff(ra.trace, rb.trace) < 1e-5f);
}

TEST_CASE("imported scalar decay is recorded as a learnable scalar") {
  TempFile data("cmd_port2_data.spkd");
  TempFile ckpt("cmd_port2_ckpt.spkc");
  TempFile metrics("cmd_port2_metrics.csv");
  TempFile graph("cmd_port2_graph.spkg");
  TempFile ckpt2("cmd_port2_ckpt2.spkc");
  RunConfig cfg = tiny_job();
  cfg.beta_mode = "learnable_scalar";
  cfg = parse_config(print_config(cfg));  // re-derive layers under that mode
  cfg.epochs = 0;
  cfg.out = data.path;
  std::ostringstream log;
  cmd_synth(cfg, log);
  cfg.data = data.path;
  cfg.out = ckpt.path;
  cfg.metrics = metrics.path;
  cmd_train(cfg, log);

  RunConfig ex;
  ex.checkpoint = ckpt.path;
  ex.out = graph.path;
  cmd_export(ex, log);
  RunConfig im;
  im.graph = graph.path;
  im.out = ckpt2.path;
  cmd_import(im, log);
  const Checkpoint<float> b = read_checkpoint<float>(ckpt2.path);
  CHECK(parse_config(b.config_text).beta_mode == "learnable_scalar");
  const Tensor<float>* beta = find_entry(b.params, "l1.beta");
  REQUIRE(beta != nullptr);
  CHECK(beta->ndim() == 0);
}

TEST_CASE("bench runs exactly warmup plus trials jobs per cell") {
  RunConfig cfg = parse_config(
      "input = 6\n"
      "seed = 9\n"
      "epochs = 1\n"
      "classes = 2\n"
      "examples = 12\n"
      "steps = 8\n"
      "trials = 2\n"
      "warmup = 1\n"
      "bench_batch_sizes = 4,6\n"
      "bench_unrolls = 1,8\n"
      "net {\n"
      "  linear 6\n"
      "  lif\n"
      "  linear 2\n"
      "  li\n"
      "}\n");
  std::ostringstream csv, log;
  const std::vector<BenchRow> rows = cmd_bench(cfg, csv, log);
  REQUIRE(rows.size() == 4);
  for (const BenchRow& row : rows) {
    CHECK(row.runs == 3);
    CHECK(row.trials == 2);
    CHECK(row.mean_ms > 0.0);
    CHECK(row.std_ms >= 0.0);
  }
  // unrolling reschedules the same arithmetic, so the loss cannot move
  CHECK(rows[0].batch_size == rows[1].batch_size);
  CHECK(rows[0].final_loss == rows[1].final_loss);
  CHECK(rows[2].final_loss == rows[3].final_loss);

  const std::string table = csv.str();
  CHECK(count_lines(table) == 5);
  CHECK(table.rfind("batch_size,unroll,trials,mean_ms,std_ms,final_loss\n",
                    0) == 0);
  CHECK_THAT(log.str(), ContainsSubstring("synthetic"));
}

TEST_CASE("a single bench trial reports zero spread") {
  RunConfig cfg = parse_config(
      "input = 4\n"
      "epochs = 1\n"
      "classes = 2\n"
      "examples = 8\n"
      "steps = 8\n"
      "trials = 1\n"
      "warmup = 0\n"
      "bench_batch_sizes = 4\n"
      "bench_unrolls = 8\n"
      "net {\n"
      "  linear 4\n"
      "  lif\n"
      "  linear 2\n"
      "  li\n"
      "}\n");
  std::ostringstream csv, log;
  const std::vector<BenchRow> rows = cmd_bench(cfg, csv, log);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].runs == 1);
  CHECK(rows[0].std_ms == 0.0);

  RunConfig bad = cfg;
  bad.trials = 0;
  CHECK_THROWS_AS(cmd_bench(bad, csv, log), ConfigError);
  bad = cfg;
  bad.layers.clear();
  CHECK_THROWS_AS(cmd_bench(bad, csv, log), ConfigError);
}

TEST_CASE("event text files parse into streams") {
  TempFile events("cmd_events.txt");
  {
    std::ofstream f(events.path);
    f << "# recorded clip\n"
      << "1000 2 2\n"
      << "0 0 1 1\n"
      << "250 1 0 0   # mid-stream comment\n"
      << "999 1 1 0\n";
  }
  const EventStream s = read_event_text(events.path);
  CHECK(s.duration_us == 1000);
  CHECK(s.geometry == std::vector<std::size_t>{2, 2});
  REQUIRE(s.events.size() == 3);
  CHECK(s.events[1].t_us == 250);
  CHECK(s.events[1].coords == std::vector<std::int64_t>{1, 0});
  CHECK(s.events[1].polarity == 0);
  CHECK(s.events[2].polarity == 0);
}

TEST_CASE("event text errors carry line numbers") {
  auto write_events = [](const std::string& path, const std::string& body) {
    std::ofstream f(path);
    f << body;
  };
  TempFile bad("cmd_events_bad.txt");
  write_events(bad.path, "abc def\n");
  CHECK_THROWS_WITH(read_event_text(bad.path),
                    ContainsSubstring("line 1"));
  write_events(bad.path, "1000\n");
  CHECK_THROWS_WITH(read_event_text(bad.path),
                    ContainsSubstring("header needs"));
  write_events(bad.path, "1000 2 2\n0 0 1 1\n5 1 0\n");
  CHECK_THROWS_WITH(read_event_text(bad.path),
                    ContainsSubstring("line 3: expected 4 fields, got 3"));
  write_events(bad.path, "# nothing here\n");
  CHECK_THROWS_WITH(read_event_text(bad.path),
                    ContainsSubstring("no header"));
  CHECK_THROWS_AS(read_event_text("cmd_events_missing.txt"), IoError);
}

TEST_CASE("rasterize command bins events into a one-example container") {
  TempFile events("cmd_raster_events.txt");
  TempFile out("cmd_raster_out.spkd");
  {
    std::ofstream f(events.path);
    f << "1000 2 2\n"
      << "0 0 1 1\n"    // bin 0, polarity 1, cell (0,1)
      << "250 1 0 0\n"  // bin 1, polarity 0, cell (1,0)
      << "999 1 1 0\n"; // bin 3, polarity 0, cell (1,1)
  }
  RunConfig cfg;
  cfg.events = events.path;
  cfg.out = out.path;
  cfg.steps = 4;
  std::ostringstream log;
  cmd_rasterize(cfg, log);

  const PackedDataset got = read_container(out.path);
  CHECK(got.original_t == 4);
  CHECK(got.x.shape() == Shape{1, 1, 2, 2, 2});
  CHECK(got.y == std::vector<std::int64_t>{0});
  const Tensor<std::uint8_t> u = unpack_time<std::uint8_t>(got.x, 4, 1);
  REQUIRE(u.shape() == Shape{1, 4, 2, 2, 2});
  CHECK(u[0 * 8 + 1 * 4 + 0 * 2 + 1] == 1);  // t0 pol1 (0,1)
  CHECK(u[1 * 8 + 0 * 4 + 1 * 2 + 0] == 1);  // t1 pol0 (1,0)
  CHECK(u[3 * 8 + 0 * 4 + 1 * 2 + 1] == 1);  // t3 pol0 (1,1)
  std::size_t total = 0;
  for (std::size_t i = 0; i < u.size(); ++i) total += u[i];
  CHECK(total == 3);
}

TEST_CASE("pack command wraps raw bytes and a label list") {
  TempFile raw("cmd_pack_raw.bin");
  TempFile labels("cmd_pack_labels.txt");
  TempFile out("cmd_pack_out.spkd");
  // 2 examples, 8 steps, 3 features
  std::vector<std::uint8_t> bytes(48, 0);
  bytes[0] = 1;                // example 0, t 0, feature 0
  bytes[24 + 7 * 3 + 2] = 1;   // example 1, t 7, feature 2
  {
    std::ofstream f(raw.path, std::ios::binary);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            std::streamsize(bytes.size()));
  }
  {
    std::ofstream f(labels.path);
    f << "3\n1\n";
  }
  RunConfig cfg;
  cfg.raw = raw.path;
  cfg.labels = labels.path;
  cfg.out = out.path;
  cfg.input_shape = {3};
  cfg.examples = 2;
  cfg.steps = 8;
  std::ostringstream log;
  cmd_pack(cfg, log);

  const PackedDataset got = read_container(out.path);
  CHECK(got.original_t == 8);
  CHECK(got.x.shape() == Shape{2, 1, 3});
  CHECK(got.y == std::vector<std::int64_t>{3, 1});
  const Tensor<std::uint8_t> u = unpack_time<std::uint8_t>(got.x, 8, 1);
  for (std::size_t i = 0; i < bytes.size(); ++i) CHECK(u[i] == bytes[i]);
}

TEST_CASE("pack command rejects malformed inputs") {
  TempFile raw("cmd_pack_bad_raw.bin");
  TempFile labels("cmd_pack_bad_labels.txt");
  TempFile out("cmd_pack_bad_out.spkd");
  RunConfig cfg;
  cfg.raw = raw.path;
  cfg.labels = labels.path;
  cfg.out = out.path;
  cfg.input_shape = {3};
  cfg.examples = 2;
  cfg.steps = 8;
  std::ostringstream log;

  auto write_raw = [&](std::size_t n, std::uint8_t fill) {
    std::ofstream f(raw.path, std::ios::binary | std::ios::trunc);
    std::vector<std::uint8_t> bytes(n, fill);
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(n));
  };
  {
    std::ofstream f(labels.path);
    f << "0\n1\n";
  }

  write_raw(47, 0);  // one byte short
  CHECK_THROWS_AS(cmd_pack(cfg, log), FormatError);
  write_raw(49, 0);  // one byte long
  CHECK_THROWS_WITH(cmd_pack(cfg, log), ContainsSubstring("trailing"));
  write_raw(48, 2);  // not a spike raster
  CHECK_THROWS_WITH(cmd_pack(cfg, log), ContainsSubstring("non-binary"));

  write_raw(48, 1);
  {
    std::ofstream f(labels.path, std::ios::trunc);
    f << "0\n";  // one label for two examples
  }
  CHECK_THROWS_WITH(cmd_pack(cfg, log), ContainsSubstring("labels"));

  RunConfig missing = cfg;
  missing.raw = "cmd_pack_missing.bin";
  CHECK_THROWS_AS(cmd_pack(missing, log), IoError);
}
