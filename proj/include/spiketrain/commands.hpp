#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "spiketrain/config.hpp"
#include "spiketrain/data.hpp"
#include "spiketrain/interop.hpp"
#include "spiketrain/network.hpp"
#include "spiketrain/objective.hpp"
#include "spiketrain/optimize.hpp"

// Subcommand bodies, one function per CLI verb. They live here rather than
// in the binary so the test suite can drive them without a process boundary;
// the CLI main only parses flags and maps exceptions to exit codes.

namespace spiketrain {

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

// Rows [lo, hi) of a packed dataset as one contiguous batch tensor.
inline Tensor<std::uint8_t> packed_rows(const Tensor<std::uint8_t>& x,
                                        std::size_t lo, std::size_t hi) {
  Shape shape = x.shape();
  shape[0] = hi - lo;
  const std::size_t ex = x.size() / x.dim(0);
  Tensor<std::uint8_t> out(shape);
  std::memcpy(out.data(), x.data() + lo * ex, (hi - lo) * ex);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Synthetic rate-coded dataset: every class drives one block of inputs at a
// high Bernoulli rate and the rest at a low background rate. Deliberately
// easy; it exists so training, benchmarks, and examples need no downloads.

constexpr double kSynthRateHigh = 0.4;
constexpr double kSynthRateLow = 0.05;

inline RasterDataset synth_raster(std::size_t classes, std::size_t n,
                                  std::size_t t, const Shape& features,
                                  std::uint64_t seed) {
  if (classes == 0 || n == 0 || t == 0)
    throw ArgumentError("synth: classes, examples, and steps must be >= 1");
  if (features.empty())
    throw ArgumentError("synth: input shape must be declared");
  const std::size_t f = shape_numel(features);
  const std::size_t block = std::max<std::size_t>(1, f / classes);
  const RngKey master = RngKey::from_seed(seed);

  Shape shape;
  shape.push_back(n);
  shape.push_back(t);
  for (auto d : features) shape.push_back(d);
  RasterDataset d;
  d.x = Tensor<std::uint8_t>(shape);
  d.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % classes;
    d.y[i] = std::int64_t(label);
    const std::size_t lo = label * block;
    const std::size_t hi = std::min(f, lo + block);
    const RngKey ek = master.child(i);
    std::uint8_t* row = d.x.data() + i * t * f;
    for (std::size_t s = 0; s < t; ++s)
      for (std::size_t j = 0; j < f; ++j) {
        const double rate =
            (j >= lo && j < hi) ? kSynthRateHigh : kSynthRateLow;
        row[s * f + j] = uniform01(ek, s * f + j) < rate ? 1 : 0;
      }
  }
  return d;
}

inline void cmd_synth(const RunConfig& cfg, std::ostream& log) {
  detail::require(!cfg.out.empty(), "synth: out = <path> required");
  detail::require(!cfg.input_shape.empty(), "synth: input = <dims> required");
  RasterDataset d = synth_raster(cfg.classes, cfg.examples, cfg.steps,
                                 cfg.input_shape, cfg.seed);
  write_container(cfg.out, pack_dataset(d));
  log << "wrote " << cfg.examples << " examples (" << cfg.classes
      << " classes, " << cfg.steps << " steps, input "
      << detail::fmt_dims(cfg.input_shape) << ") to " << cfg.out << "\n";
}

// ---------------------------------------------------------------------------

inline TrainResult<float> cmd_train(const RunConfig& cfg, std::ostream& log) {
  detail::require(!cfg.data.empty(), "train: data = <container> required");
  detail::require(!cfg.out.empty(), "train: out = <checkpoint> required");
  detail::require(!cfg.layers.empty(), "train: net block required");
  detail::require(!cfg.input_shape.empty(), "train: input = <dims> required");
  const PackedDataset data = read_container(cfg.data);
  const NetworkSpec spec = network_spec_from(cfg);
  const TrainConfig tcfg = train_config_from(cfg);

  const std::string metrics_path =
      cfg.metrics.empty() ? cfg.out + ".csv" : cfg.metrics;
  std::ofstream csv(metrics_path, std::ios::trunc);
  if (!csv) throw IoError("cannot open for writing: " + metrics_path);
  csv << "epoch,loss,train_acc,wall_ms\n";

  TrainResult<float> r =
      train<float>(spec, tcfg, data, [&](const EpochMetrics& em) {
        csv << em.epoch << "," << detail::fmt_double(em.loss) << ","
            << detail::fmt_double(em.accuracy) << ","
            << detail::fmt_double(em.wall_ms) << "\n";
        log << "epoch " << em.epoch << "  loss "
            << detail::fmt_double(em.loss) << "  acc "
            << detail::fmt_double(em.accuracy) << "\n";
        return false;
      });
  csv.flush();
  if (!csv) throw IoError("short write: " + metrics_path);

  write_checkpoint(cfg.out, r.params, r.opt, print_config(cfg));
  if (!r.metrics.empty())
    log << "final loss " << detail::fmt_double(r.metrics.back().loss)
        << ", accuracy " << detail::fmt_double(r.metrics.back().accuracy)
        << "\n";
  log << "wrote checkpoint " << cfg.out << " and metrics " << metrics_path
      << "\n";
  return r;
}

// ---------------------------------------------------------------------------

// Accuracy of a checkpointed model over a whole container, batched. The
// model comes from the config text embedded in the checkpoint; the invoking
// config only chooses data, batch size, and unroll.
inline double cmd_eval(const RunConfig& cfg, std::ostream& log) {
  detail::require(!cfg.checkpoint.empty(),
                  "eval: checkpoint = <path> required");
  detail::require(!cfg.data.empty(), "eval: data = <container> required");
  detail::require(cfg.batch_size > 0, "eval: batch_size must be >= 1");
  const Checkpoint<float> ckpt = read_checkpoint<float>(cfg.checkpoint);
  const RunConfig model_cfg = parse_config(ckpt.config_text);
  const NetworkSpec spec = network_spec_from(model_cfg);
  const PackedDataset data = read_container(cfg.data);

  const std::size_t n = data.x.dim(0);
  double correct = 0;
  for (std::size_t lo = 0; lo < n; lo += cfg.batch_size) {
    const std::size_t hi = std::min(n, lo + cfg.batch_size);
    Tensor<float> x = unpack_time<float>(detail::packed_rows(data.x, lo, hi),
                                         data.original_t, 1);
    ApplyResult<float> r = apply(spec, ckpt.params, x, cfg.unroll);
    const std::vector<std::int64_t> targets(data.y.begin() + long(lo),
                                            data.y.begin() + long(hi));
    correct += integral_accuracy(r.trace, targets) * double(hi - lo);
  }
  const double acc = correct / double(n);
  log << "accuracy " << detail::fmt_double(acc) << " over " << n
      << " examples\n";
  return acc;
}

// ---------------------------------------------------------------------------

inline void cmd_export(const RunConfig& cfg, std::ostream& log) {
  detail::require(!cfg.checkpoint.empty(),
                  "export: checkpoint = <path> required");
  detail::require(!cfg.out.empty(), "export: out = <graph file> required");
  const Checkpoint<float> ckpt = read_checkpoint<float>(cfg.checkpoint);
  const RunConfig model_cfg = parse_config(ckpt.config_text);
  const NetworkSpec spec = network_spec_from(model_cfg);
  const GraphDoc doc = export_graph(spec, ckpt.params, cfg.dt);
  write_graph(cfg.out, doc);
  log << "exported " << doc.nodes.size() << " nodes to " << cfg.out << "\n";
}

inline void cmd_import(const RunConfig& cfg, std::ostream& log) {
  detail::require(!cfg.graph.empty(), "import: graph = <path> required");
  detail::require(!cfg.out.empty(), "import: out = <checkpoint> required");
  const GraphDoc doc = read_graph(cfg.graph);
  auto [spec, params] = import_graph<float>(doc, doc.dt);

  // The flat config format keeps one global threshold, so mixed per-layer
  // thresholds cannot be round-tripped through a checkpoint.
  RunConfig out_cfg = cfg;
  out_cfg.input_shape = spec.input_shape;
  out_cfg.layers = spec.layers;
  bool threshold_set = false;
  for (const Layer& layer : spec.layers)
    if (const auto* lif = std::get_if<LIFLayer>(&layer)) {
      if (threshold_set && lif->threshold != out_cfg.threshold)
        throw UnsupportedError(
            "import: layers disagree on threshold; the config format keeps "
            "one global value");
      out_cfg.threshold = lif->threshold;
      threshold_set = true;
    }
  bool per_neuron = false;
  for (const auto& e : params.entries)
    if (e.name.size() > 5 &&
        e.name.compare(e.name.size() - 5, 5, ".beta") == 0 &&
        e.tensor.ndim() > 0)
      per_neuron = true;
  out_cfg.beta_mode = per_neuron ? "per_neuron" : "learnable_scalar";
  out_cfg.checkpoint = "";
  out_cfg.graph = cfg.graph;
  out_cfg.dt = doc.dt;

  const TrainConfig tcfg = train_config_from(out_cfg);
  OptimizerState<float> opt = init_optimizer(tcfg.optimizer, params);
  write_checkpoint(cfg.out, params, opt, print_config(out_cfg));
  log << "imported " << doc.nodes.size() << " nodes into checkpoint "
      << cfg.out << "\n";
}

// ---------------------------------------------------------------------------

struct BenchRow {
  std::size_t batch_size = 0;
  std::size_t unroll = 0;
  std::size_t trials = 0;
  double mean_ms = 0;
  double std_ms = 0;
  double final_loss = 0;
  std::size_t runs = 0;  // warmup + measured, for protocol checks
};

// Timing protocol: per (batch size, unroll) cell, run the configured
// training job `warmup` times unmeasured, then `trials` times measured, and
// report mean and standard deviation of the measured wall times. Identical
// seeds make every run the same work, so the spread is pure system noise.
inline std::vector<BenchRow> cmd_bench(const RunConfig& cfg, std::ostream& csv,
                                       std::ostream& log) {
  detail::require(!cfg.layers.empty(), "bench: net block required");
  detail::require(!cfg.input_shape.empty(), "bench: input = <dims> required");
  detail::require(cfg.trials >= 1, "bench: trials must be >= 1");
  PackedDataset data;
  if (!cfg.data.empty()) {
    data = read_container(cfg.data);
  } else {
    data = pack_dataset(synth_raster(cfg.classes, cfg.examples, cfg.steps,
                                     cfg.input_shape, cfg.seed));
    log << "bench: no data file given, generated " << cfg.examples
        << " synthetic examples\n";
  }
  const NetworkSpec spec = network_spec_from(cfg);

  std::vector<BenchRow> rows;
  csv << "batch_size,unroll,trials,mean_ms,std_ms,final_loss\n";
  for (std::size_t bs : cfg.bench_batch_sizes)
    for (std::size_t unroll : cfg.bench_unrolls) {
      TrainConfig tcfg = train_config_from(cfg);
      tcfg.batch_size = bs;
      tcfg.unroll = unroll;
      BenchRow row;
      row.batch_size = bs;
      row.unroll = unroll;
      row.trials = cfg.trials;
      for (std::size_t w = 0; w < cfg.warmup; ++w) {
        train<float>(spec, tcfg, data);
        row.runs += 1;
        log << "bench bs=" << bs << " unroll=" << unroll << " warmup "
            << (w + 1) << "/" << cfg.warmup << "\n";
      }
      std::vector<double> times;
      times.reserve(cfg.trials);
      for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
        const auto t0 = std::chrono::steady_clock::now();
        TrainResult<float> r = train<float>(spec, tcfg, data);
        const auto t1 = std::chrono::steady_clock::now();
        row.runs += 1;
        times.push_back(
            std::chrono::duration<double, std::milli>(t1 - t0).count());
        if (!r.metrics.empty()) row.final_loss = r.metrics.back().loss;
        log << "bench bs=" << bs << " unroll=" << unroll << " trial "
            << (trial + 1) << "/" << cfg.trials << ": "
            << detail::fmt_double(times.back()) << " ms\n";
      }
      double mean = 0;
      for (double t : times) mean += t;
      mean /= double(times.size());
      double var = 0;
      for (double t : times) var += (t - mean) * (t - mean);
      var /= double(times.size());
      row.mean_ms = mean;
      row.std_ms = std::sqrt(var);
      rows.push_back(row);
      csv << bs << "," << unroll << "," << cfg.trials << ","
          << detail::fmt_double(row.mean_ms) << ","
          << detail::fmt_double(row.std_ms) << ","
          << detail::fmt_double(row.final_loss) << "\n";
    }
  return rows;
}

// ---------------------------------------------------------------------------
// Event-stream rasterization from a plain text listing:
//
//   duration_us g1 [g2 ...]        header: duration, sensor extents
//   t_us c1 [c2 ...] polarity      one event per line
//
// The raster is [steps, 2, g1, ...] (bins equal the sensor extents) and is
// written as a single-example container with label 0.

inline EventStream read_event_text(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open for reading: " + path);
  EventStream stream;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(f, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream is(line);
    std::vector<std::int64_t> nums;
    std::int64_t v;
    while (is >> v) nums.push_back(v);
    if (!is.eof())
      throw FormatError("line " + std::to_string(line_no) +
                        ": non-numeric token");
    if (nums.empty()) continue;
    if (!header) {
      if (nums.size() < 2)
        throw FormatError("line " + std::to_string(line_no) +
                          ": header needs duration and sensor extents");
      stream.duration_us = nums[0];
      for (std::size_t i = 1; i < nums.size(); ++i) {
        if (nums[i] <= 0)
          throw FormatError("line " + std::to_string(line_no) +
                            ": non-positive sensor extent");
        stream.geometry.push_back(std::size_t(nums[i]));
      }
      header = true;
      continue;
    }
    if (nums.size() != stream.geometry.size() + 2)
      throw FormatError("line " + std::to_string(line_no) + ": expected " +
                        std::to_string(stream.geometry.size() + 2) +
                        " fields, got " + std::to_string(nums.size()));
    Event e;
    e.t_us = nums[0];
    e.coords.assign(nums.begin() + 1, nums.end() - 1);
    e.polarity = int(nums.back());
    stream.events.push_back(std::move(e));
  }
  if (!header) throw FormatError("event file has no header line");
  return stream;
}

inline void cmd_rasterize(const RunConfig& cfg, std::ostream& log) {
  detail::require(!cfg.events.empty(), "rasterize: events = <path> required");
  detail::require(!cfg.out.empty(), "rasterize: out = <path> required");
  const EventStream stream = read_event_text(cfg.events);
  Tensor<std::uint8_t> grid = rasterize(stream, cfg.steps, stream.geometry);
  Shape with_batch;
  with_batch.push_back(1);
  for (auto d : grid.shape()) with_batch.push_back(d);
  RasterDataset d;
  d.x = grid.reshape(with_batch);
  d.y = {0};
  write_container(cfg.out, pack_dataset(d));
  log << "rasterized " << stream.events.size() << " events into "
      << detail::fmt_dims(grid.shape()) << ", wrote " << cfg.out << "\n";
}

// Raw binary spike tensor (one byte per element, values 0/1, row-major
// [examples, steps, input...]) plus a text label file, packed into a
// container.
inline void cmd_pack(const RunConfig& cfg, std::ostream& log) {
  detail::require(!cfg.raw.empty(), "pack: raw = <path> required");
  detail::require(!cfg.labels.empty(), "pack: labels = <path> required");
  detail::require(!cfg.out.empty(), "pack: out = <path> required");
  detail::require(!cfg.input_shape.empty(), "pack: input = <dims> required");
  detail::require(cfg.examples > 0 && cfg.steps > 0,
                  "pack: examples and steps must be >= 1");

  Shape shape;
  shape.push_back(cfg.examples);
  shape.push_back(cfg.steps);
  for (auto d : cfg.input_shape) shape.push_back(d);
  const std::size_t expect = shape_numel(shape);

  std::ifstream raw(cfg.raw, std::ios::binary);
  if (!raw) throw IoError("cannot open for reading: " + cfg.raw);
  RasterDataset d;
  d.x = Tensor<std::uint8_t>(shape);
  raw.read(reinterpret_cast<char*>(d.x.data()), std::streamsize(expect));
  if (std::size_t(raw.gcount()) != expect)
    throw FormatError("raw file holds " + std::to_string(raw.gcount()) +
                      " bytes, expected " + std::to_string(expect));
  raw.peek();
  if (!raw.eof())
    throw FormatError("raw file has trailing bytes after element " +
                      std::to_string(expect));
  for (std::size_t i = 0; i < d.x.size(); ++i)
    if (d.x[i] > 1)
      throw FormatError("raw file has non-binary byte at offset " +
                        std::to_string(i));

  std::ifstream lf(cfg.labels);
  if (!lf) throw IoError("cannot open for reading: " + cfg.labels);
  std::int64_t label;
  while (lf >> label) d.y.push_back(label);
  if (d.y.size() != cfg.examples)
    throw FormatError("label file holds " + std::to_string(d.y.size()) +
                      " labels for " + std::to_string(cfg.examples) +
                      " examples");

  write_container(cfg.out, pack_dataset(d));
  log << "packed " << cfg.examples << " examples to " << cfg.out << "\n";
}

}  // namespace spiketrain
