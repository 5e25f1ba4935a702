#pragma once

#include <utility>

#include "spiketrain/autodiff.hpp"
#include "spiketrain/ops.hpp"
#include "spiketrain/rng.hpp"
#include "spiketrain/surrogate.hpp"
#include "spiketrain/tensor.hpp"

// Neuron cells as pure step functions over explicit state. The discrete
// dynamics:
//
//   S_t     = step(V_t - theta)
//   V_{t+1} = clip(beta, 0, 1) * V_t + x_t - S_t * theta
//
// Spike decision uses the incoming membrane, then the update applies decay,
// input, and soft reset (threshold subtraction), in that order. The untaped
// and taped paths below execute the identical sequence of elementwise ops,
// so they agree bit-for-bit.

namespace spiketrain {

enum class BetaMode { PerNeuron, LearnableScalar, Fixed };

template <typename T>
struct LIFParams {
  Tensor<T> beta;           // hidden-shaped (per-neuron) or scalar
  T threshold = T(1);
  BetaMode beta_mode = BetaMode::PerNeuron;
  SpikingActivation<T> activation = superspike<T>();

  bool beta_trainable() const { return beta_mode != BetaMode::Fixed; }
};

// Membrane potential; shape (batch,) + hidden_shape, starts at zero.
template <typename T>
using NeuronState = Tensor<T>;

// Per-example, per-neuron spike totals over the simulated window.
template <typename T>
using SpikeCounts = Tensor<T>;

template <typename T>
NeuronState<T> init_state(std::size_t batch, const Shape& hidden_shape) {
  if (batch == 0) throw ArgumentError("init_state: batch must be >= 1");
  Shape s;
  s.push_back(batch);
  for (auto d : hidden_shape) s.push_back(d);
  return Tensor<T>::zeros(s);
}

// Decay rates drawn from a truncated normal centred at 0.5 with std 0.25,
// clipped to [0,1] by the +/-2 sigma bounds. fixed_beta only applies in
// Fixed mode.
template <typename T>
LIFParams<T> init_lif(RngKey rng, const Shape& hidden_shape,
                      BetaMode mode = BetaMode::PerNeuron,
                      SpikingActivation<T> activation = superspike<T>(),
                      T fixed_beta = T(0.5)) {
  LIFParams<T> p;
  p.beta_mode = mode;
  p.activation = std::move(activation);
  switch (mode) {
    case BetaMode::PerNeuron:
      p.beta = rng_truncated_normal<T>(rng, hidden_shape, T(0.5), T(0.25));
      break;
    case BetaMode::LearnableScalar:
      p.beta = rng_truncated_normal<T>(rng, Shape{}, T(0.5), T(0.25));
      break;
    case BetaMode::Fixed:
      p.beta = Tensor<T>::scalar(fixed_beta);
      break;
  }
  return p;
}

template <typename T>
std::pair<Tensor<T>, NeuronState<T>> lif_step(const LIFParams<T>& p,
                                              const Tensor<T>& x,
                                              const NeuronState<T>& v) {
  if (!x.same_shape(v))
    throw ShapeError("lif_step: input " + shape_str(x.shape()) +
                     " vs state " + shape_str(v.shape()));
  Tensor<T> spikes = p.activation.forward(add_scalar(v, -p.threshold));
  Tensor<T> vb = clip(p.beta, T(0), T(1));
  Tensor<T> vnext =
      sub(add(mul_bcast(v, vb), x), scale(spikes, p.threshold));
  return {std::move(spikes), std::move(vnext)};
}

// Non-spiking leaky integrator: V' = clip(beta)*V + x. Emits the membrane
// itself; no threshold, no reset.
template <typename T>
std::pair<Tensor<T>, NeuronState<T>> li_step(const LIFParams<T>& p,
                                             const Tensor<T>& x,
                                             const NeuronState<T>& v) {
  if (!x.same_shape(v))
    throw ShapeError("li_step: input " + shape_str(x.shape()) + " vs state " +
                     shape_str(v.shape()));
  Tensor<T> vb = clip(p.beta, T(0), T(1));
  Tensor<T> vnext = add(mul_bcast(v, vb), x);
  return {vnext, vnext};
}

// Time-axis spike totals; pass the trace through unchanged downstream.
template <typename T>
SpikeCounts<T> monitor_activity(const Tensor<T>& spike_trace) {
  for (std::size_t i = 0; i < spike_trace.size(); ++i)
    if (spike_trace[i] != T(0) && spike_trace[i] != T(1))
      throw ContractError("monitor_activity: non-binary value " +
                          std::to_string(double(spike_trace[i])));
  return sum_axis1(spike_trace);
}

// ---------------------------------------------------------------------------
// Taped variants. beta_id is a tape node (trainable or constant); the
// activation's surrogate shapes the backward of the step.

template <typename T>
struct TapedStep {
  typename Tape<T>::Id spikes;
  typename Tape<T>::Id v;
};

template <typename T>
TapedStep<T> lif_step_taped(Tape<T>& tape, typename Tape<T>::Id beta,
                            T threshold, const SpikingActivation<T>& act,
                            typename Tape<T>::Id x, typename Tape<T>::Id v) {
  auto pre = tape.add_scalar(v, -threshold);
  auto s = spike(tape, pre, act);
  auto vb = tape.clip01(beta);
  auto vnext =
      tape.sub(tape.add(tape.mul_bcast(v, vb), x), tape.scale(s, threshold));
  return {s, vnext};
}

template <typename T>
typename Tape<T>::Id li_step_taped(Tape<T>& tape, typename Tape<T>::Id beta,
                                   typename Tape<T>::Id x,
                                   typename Tape<T>::Id v) {
  auto vb = tape.clip01(beta);
  return tape.add(tape.mul_bcast(v, vb), x);
}

}  // namespace spiketrain
