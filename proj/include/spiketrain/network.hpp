#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "spiketrain/autodiff.hpp"
#include "spiketrain/neuron.hpp"
#include "spiketrain/ops.hpp"
#include "spiketrain/rng.hpp"
#include "spiketrain/surrogate.hpp"
#include "spiketrain/tensor.hpp"

// Declarative feed-forward pipelines over batch-major [B, T, ...] input.
// Stateless layers (linear, conv, pool, flatten) are applied to whole time
// blocks at once; stateful cells (LIF, LI) advance step by step. The unroll
// factor only sets the block length, so it changes scheduling, never values.

namespace spiketrain {

struct LinearLayer {
  std::size_t out = 0;
  bool bias = true;
};

struct Conv2dLayer {
  std::size_t filters = 0;
  std::size_t kh = 1, kw = 1;
  std::size_t sh = 1, sw = 1;
  Padding padding = Padding::Same;
  bool bias = true;
};

struct MaxPoolLayer {
  std::size_t wh = 2, ww = 2;
};

struct FlattenLayer {};

struct LIFLayer {
  Shape shape;  // empty = inferred from the incoming stage
  ActivationDesc activation = {"superspike", 25.0, 0.0};
  BetaMode beta_mode = BetaMode::PerNeuron;
  double fixed_beta = 0.5;
  double threshold = 1.0;
};

struct LILayer {
  Shape shape;  // empty = inferred
  BetaMode beta_mode = BetaMode::PerNeuron;
  double fixed_beta = 0.5;
};

// Spike counter; pass-through for values, must follow a LIF layer.
struct MonitorLayer {};

using Layer = std::variant<LinearLayer, Conv2dLayer, MaxPoolLayer,
                           FlattenLayer, LIFLayer, LILayer, MonitorLayer>;

struct NetworkSpec {
  Shape input_shape;  // per-timestep shape, no batch/time axes
  std::vector<Layer> layers;
};

// Declared layers plus inferred shapes, with Flatten inserted wherever a
// multi-axis stage feeds a Linear layer. Indices into `layers` here are the
// canonical layer ids used for parameter names and graph export.
struct NormalizedSpec {
  Shape input_shape;
  std::vector<Layer> layers;
  std::vector<Shape> out_shapes;  // per-timestep, after each layer
};

namespace detail {

inline Shape chained_shape(const Layer& layer, const Shape& in,
                           std::size_t idx) {
  const std::string where = "layer " + std::to_string(idx);
  if (std::holds_alternative<LinearLayer>(layer)) {
    if (in.size() != 1)
      throw SpecError(where + ": linear expects a flat input, got " +
                      shape_str(in));
    return Shape{std::get<LinearLayer>(layer).out};
  }
  if (std::holds_alternative<Conv2dLayer>(layer)) {
    const auto& c = std::get<Conv2dLayer>(layer);
    if (in.size() != 3)
      throw SpecError(where + ": conv expects [C,H,W], got " + shape_str(in));
    Tensor<float> probe(Shape{1, in[0], in[1], in[2]});
    Tensor<float> kern(Shape{c.filters, in[0], c.kh, c.kw});
    const auto g = conv2d_geometry(probe, kern, c.sh, c.sw, c.padding);
    return Shape{c.filters, g.oh, g.ow};
  }
  if (std::holds_alternative<MaxPoolLayer>(layer)) {
    const auto& p = std::get<MaxPoolLayer>(layer);
    if (in.size() != 3)
      throw SpecError(where + ": maxpool expects [C,H,W], got " +
                      shape_str(in));
    if (p.wh == 0 || p.ww == 0) throw SpecError(where + ": zero pool window");
    return Shape{in[0], (in[1] + p.wh - 1) / p.wh, (in[2] + p.ww - 1) / p.ww};
  }
  if (std::holds_alternative<FlattenLayer>(layer))
    return Shape{shape_numel(in)};
  if (std::holds_alternative<LIFLayer>(layer)) {
    const Shape& declared = std::get<LIFLayer>(layer).shape;
    if (!declared.empty() && declared != in)
      throw SpecError(where + ": lif declared " + shape_str(declared) +
                      " but receives " + shape_str(in));
    return in;
  }
  if (std::holds_alternative<LILayer>(layer)) {
    const Shape& declared = std::get<LILayer>(layer).shape;
    if (!declared.empty() && declared != in)
      throw SpecError(where + ": li declared " + shape_str(declared) +
                      " but receives " + shape_str(in));
    return in;
  }
  return in;  // monitor
}

}  // namespace detail

inline NormalizedSpec normalize(const NetworkSpec& spec) {
  if (spec.input_shape.empty())
    throw SpecError("network: input shape not declared");
  if (spec.layers.empty()) throw SpecError("network: no layers");
  NormalizedSpec n;
  n.input_shape = spec.input_shape;
  Shape cur = spec.input_shape;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const Layer& layer = spec.layers[i];
    if (std::holds_alternative<LinearLayer>(layer) && cur.size() > 1) {
      n.layers.push_back(FlattenLayer{});
      cur = Shape{shape_numel(cur)};
      n.out_shapes.push_back(cur);
    }
    if (std::holds_alternative<MonitorLayer>(layer)) {
      if (n.layers.empty() ||
          !std::holds_alternative<LIFLayer>(n.layers.back()))
        throw SpecError("layer " + std::to_string(i) +
                        ": monitor must follow a lif layer");
    }
    cur = detail::chained_shape(layer, cur, n.layers.size());
    Layer resolved = layer;
    if (auto* lif = std::get_if<LIFLayer>(&resolved)) lif->shape = cur;
    if (auto* li = std::get_if<LILayer>(&resolved)) li->shape = cur;
    n.layers.push_back(std::move(resolved));
    n.out_shapes.push_back(cur);
  }
  const Layer& last = n.layers.back();
  if (!std::holds_alternative<LIFLayer>(last) &&
      !std::holds_alternative<LILayer>(last))
    throw SpecError("network must end in a lif or li readout");
  return n;
}

// ---------------------------------------------------------------------------
// Parameters: ordered (name, tensor, trainable) entries; iteration order is
// the layer walk order, which init, the forward pass, training, and export
// all share.

template <typename T>
struct ParamEntry {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;
};

template <typename T>
struct NetworkParams {
  std::vector<ParamEntry<T>> entries;

  const Tensor<T>& at(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return e.tensor;
    throw ArgumentError("no parameter named " + name);
  }

  Tensor<T>& at(const std::string& name) {
    for (auto& e : entries)
      if (e.name == name) return e.tensor;
    throw ArgumentError("no parameter named " + name);
  }

  bool has(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return true;
    return false;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.tensor.size();
    return n;
  }
};

namespace detail {

inline std::string param_name(std::size_t layer_idx, const char* leaf) {
  return "l" + std::to_string(layer_idx) + "." + leaf;
}

}  // namespace detail

// Index of each layer's first entry in the flat parameter order (weights
// before bias before beta), plus the total entry count in the back.
inline std::vector<std::size_t> param_layout(const NormalizedSpec& n) {
  std::vector<std::size_t> first(n.layers.size() + 1, 0);
  std::size_t pi = 0;
  for (std::size_t i = 0; i < n.layers.size(); ++i) {
    first[i] = pi;
    const Layer& layer = n.layers[i];
    if (const auto* lin = std::get_if<LinearLayer>(&layer))
      pi += lin->bias ? 2 : 1;
    else if (const auto* cv = std::get_if<Conv2dLayer>(&layer))
      pi += cv->bias ? 2 : 1;
    else if (std::holds_alternative<LIFLayer>(layer) ||
             std::holds_alternative<LILayer>(layer))
      pi += 1;
  }
  first[n.layers.size()] = pi;
  return first;
}

// Weights: truncated normal, std 1/sqrt(fan_in), clipped at 2 sigma. Biases
// start at zero. Beta entries follow the neuron-module initializer; a Fixed
// beta is stored but marked non-trainable.
template <typename T>
NetworkParams<T> init(const NetworkSpec& spec, RngKey rng,
                      const Tensor<T>& sample_input) {
  const NormalizedSpec n = normalize(spec);
  if (sample_input.ndim() < 2)
    throw SpecError("init: sample input must be [B,T,...]");
  Shape per_step(sample_input.shape().begin() + 2,
                 sample_input.shape().end());
  if (per_step != spec.input_shape)
    throw SpecError("init: sample input per-step shape " +
                    shape_str(per_step) + " does not match declared " +
                    shape_str(spec.input_shape));
  NetworkParams<T> params;
  Shape cur = n.input_shape;
  for (std::size_t i = 0; i < n.layers.size(); ++i) {
    const Layer& layer = n.layers[i];
    const RngKey lk = rng.child(i);
    if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
      const std::size_t fan_in = cur[0];
      const T std_dev = T(1) / std::sqrt(T(fan_in));
      params.entries.push_back(
          {detail::param_name(i, "w"),
           rng_truncated_normal<T>(lk.child(0), Shape{fan_in, lin->out},
                                   T(0), std_dev),
           true});
      if (lin->bias)
        params.entries.push_back({detail::param_name(i, "b"),
                                  Tensor<T>::zeros(Shape{lin->out}), true});
    } else if (const auto* cv = std::get_if<Conv2dLayer>(&layer)) {
      const std::size_t fan_in = cur[0] * cv->kh * cv->kw;
      const T std_dev = T(1) / std::sqrt(T(fan_in));
      params.entries.push_back(
          {detail::param_name(i, "w"),
           rng_truncated_normal<T>(lk.child(0),
                                   Shape{cv->filters, cur[0], cv->kh, cv->kw},
                                   T(0), std_dev),
           true});
      if (cv->bias)
        params.entries.push_back({detail::param_name(i, "b"),
                                  Tensor<T>::zeros(Shape{cv->filters}),
                                  true});
    } else if (const auto* lif = std::get_if<LIFLayer>(&layer)) {
      LIFParams<T> lp = init_lif<T>(lk.child(2), lif->shape, lif->beta_mode,
                                    custom<T>(), T(lif->fixed_beta));
      params.entries.push_back({detail::param_name(i, "beta"),
                                std::move(lp.beta), lp.beta_trainable()});
    } else if (const auto* li = std::get_if<LILayer>(&layer)) {
      LIFParams<T> lp = init_lif<T>(lk.child(2), li->shape, li->beta_mode,
                                    custom<T>(), T(li->fixed_beta));
      params.entries.push_back({detail::param_name(i, "beta"),
                                std::move(lp.beta), lp.beta_trainable()});
    }
    cur = n.out_shapes[i];
  }
  return params;
}

// ---------------------------------------------------------------------------
// Forward pass.

template <typename T>
struct ForwardResult {
  typename Tape<T>::Id trace;  // [B, T, readout...]
  std::vector<std::pair<std::string, typename Tape<T>::Id>> monitors;
};

template <typename T>
struct ApplyResult {
  Tensor<T> trace;
  std::vector<std::pair<std::string, SpikeCounts<T>>> monitors;
};

// Runs the network on the tape. param_ids must hold one id per entry of the
// NetworkParams produced by init(), in order; the caller chooses which are
// tracked leaves and which are constants.
template <typename T>
ForwardResult<T> forward_taped(
    Tape<T>& tape, const NetworkSpec& spec,
    const std::vector<typename Tape<T>::Id>& param_ids,
    typename Tape<T>::Id input, std::size_t unroll) {
  using Id = typename Tape<T>::Id;
  const NormalizedSpec n = normalize(spec);
  const Tensor<T>& x = tape.value(input);
  if (x.ndim() < 2) throw ShapeError("apply: input must be [B,T,...]");
  const std::size_t batch = x.dim(0);
  const std::size_t steps = x.dim(1);
  if (steps == 0) throw ArgumentError("apply: zero timesteps");
  if (unroll == 0) throw ArgumentError("apply: unroll must be >= 1");
  Shape per_step(x.shape().begin() + 2, x.shape().end());
  if (per_step != spec.input_shape)
    throw ShapeError("apply: input per-step shape " + shape_str(per_step) +
                     " does not match declared " +
                     shape_str(spec.input_shape));

  const std::vector<std::size_t> first_param = param_layout(n);
  if (first_param.back() != param_ids.size())
    throw ArgumentError("apply: expected " +
                        std::to_string(first_param.back()) +
                        " parameter tensors, got " +
                        std::to_string(param_ids.size()));

  // Persistent cell state and monitor accumulators across time blocks.
  std::vector<Id> cell_v(n.layers.size(), Id(-1));
  std::vector<Id> monitor_acc(n.layers.size(), Id(-1));
  std::vector<SpikingActivation<T>> acts(n.layers.size());
  for (std::size_t i = 0; i < n.layers.size(); ++i) {
    const Layer& layer = n.layers[i];
    const Shape* hidden = nullptr;
    if (const auto* lif = std::get_if<LIFLayer>(&layer)) {
      hidden = &lif->shape;
      acts[i] = make_activation<T>(lif->activation);
    } else if (const auto* li = std::get_if<LILayer>(&layer)) {
      hidden = &li->shape;
    }
    if (hidden) cell_v[i] = tape.constant(init_state<T>(batch, *hidden));
  }

  std::vector<Id> readout_steps;
  readout_steps.reserve(steps);
  const std::size_t last = n.layers.size() - 1;

  for (std::size_t t0 = 0; t0 < steps; t0 += unroll) {
    const std::size_t t1 = std::min(steps, t0 + unroll);
    const std::size_t u = t1 - t0;
    Id cur = tape.slice_axis1(input, t0, t1);  // [B,u,in...]
    for (std::size_t i = 0; i < n.layers.size(); ++i) {
      const Layer& layer = n.layers[i];
      const Shape& oshape = n.out_shapes[i];
      if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
        const Shape ishape = tape.value(cur).shape();
        Id flat = tape.reshape(
            cur, Shape{batch * u, ishape.back()});
        Id h = tape.matmul(flat, param_ids[first_param[i]]);
        if (lin->bias)
          h = tape.add_bcast(h, param_ids[first_param[i] + 1]);
        cur = tape.reshape(h, Shape{batch, u, lin->out});
      } else if (const auto* cv = std::get_if<Conv2dLayer>(&layer)) {
        const Shape is = tape.value(cur).shape();
        Id flat = tape.reshape(cur, Shape{batch * u, is[2], is[3], is[4]});
        Id h = tape.conv2d(flat, param_ids[first_param[i]], cv->sh, cv->sw,
                           cv->padding);
        if (cv->bias)
          h = tape.add_bias_axis1(h, param_ids[first_param[i] + 1]);
        cur = tape.reshape(h, Shape{batch, u, oshape[0], oshape[1],
                                    oshape[2]});
      } else if (const auto* mp = std::get_if<MaxPoolLayer>(&layer)) {
        const Shape is = tape.value(cur).shape();
        Id flat = tape.reshape(cur, Shape{batch * u, is[2], is[3], is[4]});
        Id h = tape.maxpool2d(flat, mp->wh, mp->ww);
        cur = tape.reshape(h, Shape{batch, u, oshape[0], oshape[1],
                                    oshape[2]});
      } else if (std::holds_alternative<FlattenLayer>(layer)) {
        cur = tape.reshape(cur, Shape{batch, u, oshape[0]});
      } else if (const auto* lif = std::get_if<LIFLayer>(&layer)) {
        Shape step_shape;
        step_shape.push_back(batch);
        for (auto d : lif->shape) step_shape.push_back(d);
        std::vector<Id> outs;
        outs.reserve(u);
        for (std::size_t s = 0; s < u; ++s) {
          Id xs = tape.reshape(tape.slice_axis1(cur, s, s + 1), step_shape);
          auto r = lif_step_taped(tape, param_ids[first_param[i]],
                                  T(lif->threshold), acts[i], xs, cell_v[i]);
          cell_v[i] = r.v;
          outs.push_back(r.spikes);
          if (i == last) readout_steps.push_back(r.spikes);
        }
        if (i != last) cur = tape.stack_axis1(outs);
      } else if (std::holds_alternative<LILayer>(layer)) {
        Shape step_shape;
        step_shape.push_back(batch);
        for (auto d : std::get<LILayer>(layer).shape)
          step_shape.push_back(d);
        std::vector<Id> outs;
        outs.reserve(u);
        for (std::size_t s = 0; s < u; ++s) {
          Id xs = tape.reshape(tape.slice_axis1(cur, s, s + 1), step_shape);
          Id v = li_step_taped(tape, param_ids[first_param[i]], xs,
                               cell_v[i]);
          cell_v[i] = v;
          outs.push_back(v);
          if (i == last) readout_steps.push_back(v);
        }
        if (i != last) cur = tape.stack_axis1(outs);
      } else {  // monitor
        Id counts = tape.sum_axis1(cur);
        monitor_acc[i] = monitor_acc[i] < 0
                             ? counts
                             : tape.add(monitor_acc[i], counts);
      }
    }
  }

  ForwardResult<T> r;
  r.trace = tape.stack_axis1(readout_steps);
  for (std::size_t i = 0; i < n.layers.size(); ++i)
    if (monitor_acc[i] >= 0)
      r.monitors.emplace_back(detail::param_name(i, "counts"),
                              monitor_acc[i]);
  return r;
}

// Convenience: run the same taped forward with every tensor held constant
// and return plain values. Training and evaluation share one numeric path.
template <typename T>
ApplyResult<T> apply(const NetworkSpec& spec, const NetworkParams<T>& params,
                     const Tensor<T>& input, std::size_t unroll = 32) {
  Tape<T> tape;
  std::vector<typename Tape<T>::Id> ids;
  ids.reserve(params.entries.size());
  for (const auto& e : params.entries) ids.push_back(tape.constant(e.tensor));
  auto fr = forward_taped(tape, spec, ids, tape.constant(input), unroll);
  ApplyResult<T> r;
  r.trace = tape.value(fr.trace);
  for (auto& [name, id] : fr.monitors)
    r.monitors.emplace_back(name, tape.value(id));
  return r;
}

// Layer-major schedule: each layer processed over the full window before
// the next. With one block covering all of T, the block walk above is
// exactly that schedule.
template <typename T>
ApplyResult<T> layerwise_apply(const NetworkSpec& spec,
                               const NetworkParams<T>& params,
                               const Tensor<T>& input) {
  if (input.ndim() < 2) throw ShapeError("apply: input must be [B,T,...]");
  return apply(spec, params, input, std::max<std::size_t>(input.dim(1), 1));
}

}  // namespace spiketrain
