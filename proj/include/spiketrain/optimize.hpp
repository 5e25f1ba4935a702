#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "spiketrain/autodiff.hpp"
#include "spiketrain/data.hpp"
#include "spiketrain/network.hpp"
#include "spiketrain/objective.hpp"
#include "spiketrain/tensor.hpp"

// Optimizers, the fused train step (unpack -> forward -> loss -> backward ->
// update), the epoch loop, and the checkpoint file.

namespace spiketrain {

enum class OptimizerKind { Adam, Sgd };
enum class LossKind { IntegralCrossentropy, SpikeRateMse };

// One buffer set per trainable parameter, aligned with the trainable entries
// of NetworkParams in order. m doubles as the SGD momentum buffer; v is
// Adam-only.
template <typename T>
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::Adam;
  std::size_t step = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
};

template <typename T>
OptimizerState<T> init_optimizer(OptimizerKind kind,
                                 const NetworkParams<T>& params) {
  OptimizerState<T> st;
  st.kind = kind;
  for (const auto& e : params.entries) {
    if (!e.trainable) continue;
    st.m.push_back(Tensor<T>::zeros(e.tensor.shape()));
    if (kind == OptimizerKind::Adam)
      st.v.push_back(Tensor<T>::zeros(e.tensor.shape()));
  }
  return st;
}

namespace detail {

template <typename T>
void check_update_shapes(const std::vector<Tensor<T>*>& params,
                         const std::vector<Tensor<T>>& grads,
                         const OptimizerState<T>& st) {
  if (params.size() != grads.size() || params.size() != st.m.size())
    throw ContractError("optimizer: parameter/gradient/state count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (!params[i]->same_shape(grads[i]) || !params[i]->same_shape(st.m[i]))
      throw ContractError("optimizer: shape mismatch at parameter " +
                          std::to_string(i) + ": " +
                          shape_str(params[i]->shape()) + " vs " +
                          shape_str(grads[i].shape()));
}

}  // namespace detail

// p <- p - lr * m,  m <- momentum * m + g
template <typename T>
void sgd_update(const std::vector<Tensor<T>*>& params,
                const std::vector<Tensor<T>>& grads, OptimizerState<T>& st,
                T lr, T momentum) {
  detail::check_update_shapes(params, grads, st);
  st.step += 1;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i];
    Tensor<T>& m = st.m[i];
    const Tensor<T>& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = momentum * m[k] + g[k];
      p[k] -= lr * m[k];
    }
  }
}

// Standard bias-corrected Adam.
template <typename T>
void adam_update(const std::vector<Tensor<T>*>& params,
                 const std::vector<Tensor<T>>& grads, OptimizerState<T>& st,
                 T lr, T beta1 = T(0.9), T beta2 = T(0.999),
                 T eps = T(1e-8)) {
  detail::check_update_shapes(params, grads, st);
  if (st.v.size() != st.m.size())
    throw ContractError("adam_update: missing second-moment buffers");
  st.step += 1;
  const T bc1 = T(1) - std::pow(beta1, T(st.step));
  const T bc2 = T(1) - std::pow(beta2, T(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i];
    Tensor<T>& m = st.m[i];
    Tensor<T>& v = st.v[i];
    const Tensor<T>& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = beta1 * m[k] + (T(1) - beta1) * g[k];
      v[k] = beta2 * v[k] + (T(1) - beta2) * g[k] * g[k];
      const T mhat = m[k] / bc1;
      const T vhat = v[k] / bc2;
      p[k] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Training.

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double momentum = 0.9;  // SGD only
  LossKind loss = LossKind::IntegralCrossentropy;
  double rate_hi = 0.9;  // rate-MSE targets
  double rate_lo = 0.1;
  double f_min = 0.0;  // activity regularizer; zero lambdas disable it
  double f_max = 1.0;
  double lambda_low = 0.0;
  double lambda_high = 0.0;
  std::uint64_t seed = 0;
  std::size_t unroll = 32;
  std::int64_t max_shift = 0;       // shift augmentation on packed batches
  std::vector<long> shift_axes;     // must not include the time axis (1)
};

template <typename T>
struct TrainState {
  NetworkSpec spec;
  NetworkParams<T> params;
  OptimizerState<T> opt;
  TrainConfig cfg;
};

template <typename T>
struct StepResult {
  T loss = 0;
  double accuracy = 0;
};

// One fused step on a packed batch. The tape sees trainable entries as
// leaves and everything else as constants; monitors feed the activity
// regularizer when its lambdas are nonzero.
template <typename T>
StepResult<T> train_step(TrainState<T>& st,
                         const Tensor<std::uint8_t>& packed_x,
                         std::size_t original_t,
                         const std::vector<std::int64_t>& targets) {
  Tensor<T> x = unpack_time<T>(packed_x, original_t, 1);

  Tape<T> tape;
  std::vector<typename Tape<T>::Id> ids;
  std::vector<Tensor<T>*> trainable;
  ids.reserve(st.params.entries.size());
  for (auto& e : st.params.entries) {
    if (e.trainable) {
      ids.push_back(tape.leaf(e.tensor));
      trainable.push_back(&e.tensor);
    } else {
      ids.push_back(tape.constant(e.tensor));
    }
  }
  auto fwd = forward_taped(tape, st.spec, ids, tape.constant(std::move(x)),
                           st.cfg.unroll);

  typename Tape<T>::Id loss;
  switch (st.cfg.loss) {
    case LossKind::IntegralCrossentropy:
      loss = integral_crossentropy_taped(tape, fwd.trace, targets);
      break;
    case LossKind::SpikeRateMse:
      loss = spike_rate_mse_taped(tape, fwd.trace, targets,
                                  T(st.cfg.rate_hi), T(st.cfg.rate_lo));
      break;
    default:
      throw ArgumentError("train_step: unknown loss kind");
  }
  if (st.cfg.lambda_low != 0.0 || st.cfg.lambda_high != 0.0)
    for (auto& [name, counts] : fwd.monitors)
      loss = tape.add(
          loss, activity_regularizer_taped(tape, counts, original_t,
                                           T(st.cfg.f_min), T(st.cfg.f_max),
                                           T(st.cfg.lambda_low),
                                           T(st.cfg.lambda_high)));

  StepResult<T> r;
  r.loss = tape.value(loss)[0];
  r.accuracy = integral_accuracy(tape.value(fwd.trace), targets);

  tape.backward(loss);
  std::vector<Tensor<T>> grads;
  grads.reserve(trainable.size());
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (st.params.entries[i].trainable) grads.push_back(tape.grad(ids[i]));

  switch (st.opt.kind) {
    case OptimizerKind::Adam:
      adam_update(trainable, grads, st.opt, T(st.cfg.lr));
      break;
    case OptimizerKind::Sgd:
      sgd_update(trainable, grads, st.opt, T(st.cfg.lr),
                 T(st.cfg.momentum));
      break;
  }
  return r;
}

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0;
  double accuracy = 0;
  double wall_ms = 0;
};

// Returning true from the callback stops training after that epoch.
using EpochCallback = std::function<bool(const EpochMetrics&)>;

template <typename T>
struct TrainResult {
  NetworkParams<T> params;
  OptimizerState<T> opt;
  std::vector<EpochMetrics> metrics;
};

// Epoch loop: shuffle, optionally shift-augment each packed batch on its
// non-time axes, fold train_step. Key schedule: child 0 of the seed key
// initializes parameters, child 1+e drives epoch e.
template <typename T>
TrainResult<T> train(const NetworkSpec& spec, const TrainConfig& cfg,
                     const PackedDataset& data,
                     const EpochCallback& on_epoch = nullptr) {
  if (cfg.batch_size == 0) throw ArgumentError("train: batch size 0");
  for (long ax : cfg.shift_axes)
    if (ax == 1 || ax == 0)
      throw ArgumentError(
          "train: shift axes must name feature axes (>= 2); axis " +
          std::to_string(ax) + " is the batch/packed-time axis");
  const RngKey master = RngKey::from_seed(cfg.seed);
  Shape sample_shape = data.x.shape();
  sample_shape[0] = 1;
  sample_shape[1] = data.original_t;
  TrainState<T> st;
  st.spec = spec;
  st.cfg = cfg;
  st.params = init(spec, master.child(0), Tensor<T>::zeros(sample_shape));
  st.opt = init_optimizer(cfg.optimizer, st.params);
  return train(st, data, on_epoch);
}

// Same loop, resuming from an existing state (epoch keys restart at 0).
template <typename T>
TrainResult<T> train(TrainState<T>& st, const PackedDataset& data,
                     const EpochCallback& on_epoch = nullptr) {
  const RngKey master = RngKey::from_seed(st.cfg.seed);
  std::vector<EpochMetrics> metrics;
  for (std::size_t epoch = 0; epoch < st.cfg.epochs; ++epoch) {
    const auto t_start = std::chrono::steady_clock::now();
    const RngKey ek = master.child(1 + epoch);
    EpochView<std::uint8_t> view =
        shuffle(data.x, data.y, st.cfg.batch_size, ek.child(0));
    double loss_sum = 0, acc_sum = 0;
    const std::size_t ex = view.x.size() / std::max<std::size_t>(
                                              view.batches * view.batch_size,
                                              std::size_t(1));
    for (std::size_t b = 0; b < view.batches; ++b) {
      Shape bshape(view.x.shape().begin() + 1, view.x.shape().end());
      Tensor<std::uint8_t> bx(bshape);
      std::memcpy(bx.data(), view.x.data() + b * view.batch_size * ex,
                  view.batch_size * ex);
      if (st.cfg.max_shift > 0 && !st.cfg.shift_axes.empty())
        bx = shift_augment(bx, st.cfg.max_shift, st.cfg.shift_axes,
                           ek.child(1 + b));
      std::vector<std::int64_t> by(
          view.y.begin() + std::ptrdiff_t(b * view.batch_size),
          view.y.begin() + std::ptrdiff_t((b + 1) * view.batch_size));
      StepResult<T> r = train_step(st, bx, data.original_t, by);
      loss_sum += double(r.loss);
      acc_sum += r.accuracy;
    }
    const auto t_end = std::chrono::steady_clock::now();
    EpochMetrics em;
    em.epoch = epoch;
    em.loss = loss_sum / double(std::max<std::size_t>(view.batches, 1));
    em.accuracy = acc_sum / double(std::max<std::size_t>(view.batches, 1));
    em.wall_ms =
        std::chrono::duration<double, std::milli>(t_end - t_start).count();
    metrics.push_back(em);
    if (on_epoch && on_epoch(em)) break;
  }
  return {st.params, st.opt, std::move(metrics)};
}

// ---------------------------------------------------------------------------
// Checkpoint file: canonical config text (and its hash), every parameter
// entry, and the optimizer state, all bit-exact.
//
//   magic "SPKC", u32 version, u64 fnv1a(config), u64 config length,
//   config bytes, u8 scalar width, u32 entry count, entries
//   (u16 name length, name, u8 trainable, u32 ndim, u64 dims, payload),
//   u8 optimizer kind, u64 step, m payloads, v payloads (Adam only).

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

namespace detail {

template <typename T>
void write_tensor_payload(std::ofstream& f, const Tensor<T>& t) {
  io_write(f, t.data(), t.size() * sizeof(T));
}

template <typename T>
void read_tensor_payload(std::ifstream& f, Tensor<T>& t,
                         std::size_t& offset) {
  io_read(f, t.data(), t.size() * sizeof(T), offset);
}

}  // namespace detail

template <typename T>
void write_checkpoint(const std::string& path,
                      const NetworkParams<T>& params,
                      const OptimizerState<T>& opt,
                      const std::string& config_text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  detail::io_write(f, "SPKC", 4);
  detail::io_write_scalar<std::uint32_t>(f, 1);
  detail::io_write_scalar<std::uint64_t>(f, fnv1a(config_text));
  detail::io_write_scalar<std::uint64_t>(f, config_text.size());
  detail::io_write(f, config_text.data(), config_text.size());
  detail::io_write_scalar<std::uint8_t>(f, sizeof(T));
  detail::io_write_scalar<std::uint32_t>(f,
                                         std::uint32_t(params.entries.size()));
  for (const auto& e : params.entries) {
    detail::io_write_scalar<std::uint16_t>(f, std::uint16_t(e.name.size()));
    detail::io_write(f, e.name.data(), e.name.size());
    detail::io_write_scalar<std::uint8_t>(f, e.trainable ? 1 : 0);
    detail::io_write_scalar<std::uint32_t>(f, std::uint32_t(e.tensor.ndim()));
    for (std::size_t d = 0; d < e.tensor.ndim(); ++d)
      detail::io_write_scalar<std::uint64_t>(f, e.tensor.dim(d));
    detail::write_tensor_payload(f, e.tensor);
  }
  detail::io_write_scalar<std::uint8_t>(
      f, opt.kind == OptimizerKind::Adam ? 0 : 1);
  detail::io_write_scalar<std::uint64_t>(f, opt.step);
  for (const auto& t : opt.m) detail::write_tensor_payload(f, t);
  for (const auto& t : opt.v) detail::write_tensor_payload(f, t);
  if (!f) throw IoError("short write: " + path);
}

template <typename T>
struct Checkpoint {
  NetworkParams<T> params;
  OptimizerState<T> opt;
  std::string config_text;
  std::uint64_t config_hash = 0;
};

template <typename T>
Checkpoint<T> read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path);
  std::size_t off = 0;
  char magic[4];
  detail::io_read(f, magic, 4, off);
  if (std::memcmp(magic, "SPKC", 4) != 0)
    throw FormatError("bad magic at byte offset 0");
  const auto version = detail::io_read_scalar<std::uint32_t>(f, off);
  if (version != 1)
    throw FormatError("unsupported checkpoint version " +
                      std::to_string(version) + " at byte offset 4");
  Checkpoint<T> c;
  c.config_hash = detail::io_read_scalar<std::uint64_t>(f, off);
  const auto cfg_len = detail::io_read_scalar<std::uint64_t>(f, off);
  if (cfg_len > (1u << 20))
    throw FormatError("implausible config length at byte offset 16");
  c.config_text.resize(cfg_len);
  detail::io_read(f, c.config_text.data(), cfg_len, off);
  if (fnv1a(c.config_text) != c.config_hash)
    throw FormatError("config hash mismatch (stored " +
                      std::to_string(c.config_hash) + ")");
  const auto width = detail::io_read_scalar<std::uint8_t>(f, off);
  if (width != sizeof(T))
    throw FormatError("checkpoint scalar width " + std::to_string(width) +
                      ", expected " + std::to_string(sizeof(T)));
  const auto n_entries = detail::io_read_scalar<std::uint32_t>(f, off);
  for (std::uint32_t i = 0; i < n_entries; ++i) {
    const auto name_len = detail::io_read_scalar<std::uint16_t>(f, off);
    std::string name(name_len, '\0');
    detail::io_read(f, name.data(), name_len, off);
    const auto trainable = detail::io_read_scalar<std::uint8_t>(f, off);
    const auto ndim = detail::io_read_scalar<std::uint32_t>(f, off);
    if (ndim > 16)
      throw FormatError("implausible tensor rank at byte offset " +
                        std::to_string(off - 4));
    Shape shape(ndim);
    for (auto& d : shape)
      d = std::size_t(detail::io_read_scalar<std::uint64_t>(f, off));
    Tensor<T> t(shape);
    detail::read_tensor_payload(f, t, off);
    c.params.entries.push_back({std::move(name), std::move(t),
                                trainable != 0});
  }
  const auto kind = detail::io_read_scalar<std::uint8_t>(f, off);
  c.opt.kind = kind == 0 ? OptimizerKind::Adam : OptimizerKind::Sgd;
  c.opt.step = detail::io_read_scalar<std::uint64_t>(f, off);
  for (const auto& e : c.params.entries) {
    if (!e.trainable) continue;
    Tensor<T> t(e.tensor.shape());
    detail::read_tensor_payload(f, t, off);
    c.opt.m.push_back(std::move(t));
  }
  if (c.opt.kind == OptimizerKind::Adam)
    for (const auto& e : c.params.entries) {
      if (!e.trainable) continue;
      Tensor<T> t(e.tensor.shape());
      detail::read_tensor_payload(f, t, off);
      c.opt.v.push_back(std::move(t));
    }
  return c;
}

}  // namespace spiketrain
