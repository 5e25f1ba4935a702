#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "spiketrain/autodiff.hpp"
#include "spiketrain/tensor.hpp"

// Rate-coded objectives over readout traces [B, T, C]. Every loss reduces
// by mean over the batch so its scale does not depend on batch size. The
// taped variants record one fused node each; their backward closures hold
// the exact analytic cotangent.

namespace spiketrain {

namespace detail {

template <typename T>
void check_targets(std::size_t batch, std::size_t classes,
                   const std::vector<std::int64_t>& targets) {
  if (targets.size() != batch)
    throw ArgumentError("targets: " + std::to_string(targets.size()) +
                        " labels for batch " + std::to_string(batch));
  for (auto t : targets)
    if (t < 0 || std::size_t(t) >= classes)
      throw ArgumentError("target " + std::to_string(t) +
                          " outside [0," + std::to_string(classes) + ")");
}

template <typename T>
void check_trace_shape(const Tensor<T>& trace) {
  if (trace.ndim() != 3)
    throw ShapeError("loss: trace must be [B,T,C], got " +
                     shape_str(trace.shape()));
}

// logits[b,c] = sum_t trace[b,t,c]
template <typename T>
Tensor<T> time_sum(const Tensor<T>& trace) {
  const std::size_t b = trace.dim(0), t = trace.dim(1), c = trace.dim(2);
  Tensor<T> logits = Tensor<T>::zeros(Shape{b, c});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t s = 0; s < t; ++s) {
      const T* src = trace.data() + (i * t + s) * c;
      T* dst = logits.data() + i * c;
      for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
    }
  return logits;
}

// Stable softmax rows in place of probs; returns mean cross-entropy.
template <typename T>
T softmax_ce(const Tensor<T>& logits,
             const std::vector<std::int64_t>& targets, Tensor<T>* probs) {
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  T loss = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const T* row = logits.data() + i * c;
    T m = row[0];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    T z = 0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - m);
    const T lse = m + std::log(z);
    loss += lse - row[std::size_t(targets[i])];
    if (probs) {
      T* prow = probs->data() + i * c;
      for (std::size_t j = 0; j < c; ++j)
        prow[j] = std::exp(row[j] - m) / z;
    }
  }
  return loss / T(b);
}

}  // namespace detail

// Sum the trace over time, softmax the per-class totals, mean negative
// log-likelihood over the batch.
template <typename T>
T integral_crossentropy(const Tensor<T>& trace,
                        const std::vector<std::int64_t>& targets) {
  detail::check_trace_shape(trace);
  detail::check_targets<T>(trace.dim(0), trace.dim(2), targets);
  Tensor<T> logits = detail::time_sum(trace);
  return detail::softmax_ce<T>(logits, targets, nullptr);
}

template <typename T>
typename Tape<T>::Id integral_crossentropy_taped(
    Tape<T>& tape, typename Tape<T>::Id trace,
    const std::vector<std::int64_t>& targets) {
  const Tensor<T> tv = tape.value(trace);
  detail::check_trace_shape(tv);
  detail::check_targets<T>(tv.dim(0), tv.dim(2), targets);
  const std::size_t b = tv.dim(0), t = tv.dim(1), c = tv.dim(2);
  Tensor<T> logits = detail::time_sum(tv);
  Tensor<T> probs(Shape{b, c});
  const T loss = detail::softmax_ce(logits, targets, &probs);
  return tape.record(
      Tensor<T>::scalar(loss), {trace},
      [probs, targets, b, t, c](const Tensor<T>& g,
                                const std::vector<Tensor<T>*>& pg) {
        if (!pg[0]) return;
        const T gs = g[0] / T(b);
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t j = 0; j < c; ++j) {
            T d = probs[i * c + j];
            if (std::size_t(targets[i]) == j) d -= T(1);
            d *= gs;
            for (std::size_t s = 0; s < t; ++s)
              (*pg[0])[(i * t + s) * c + j] += d;
          }
      });
}

// Fraction of examples whose time-summed trace argmax hits the target.
// Ties resolve to the lowest class index.
template <typename T>
double integral_accuracy(const Tensor<T>& trace,
                         const std::vector<std::int64_t>& targets) {
  detail::check_trace_shape(trace);
  detail::check_targets<T>(trace.dim(0), trace.dim(2), targets);
  const std::size_t b = trace.dim(0), c = trace.dim(2);
  Tensor<T> logits = detail::time_sum(trace);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const T* row = logits.data() + i * c;
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (row[j] > row[best]) best = j;
    if (best == std::size_t(targets[i])) ++hits;
  }
  return double(hits) / double(b);
}

// Mean squared gap between per-class firing rates (spike count / T) and a
// target rate vector that puts rate_hi on the true class, rate_lo elsewhere.
template <typename T>
T spike_rate_mse(const Tensor<T>& trace,
                 const std::vector<std::int64_t>& targets, T rate_hi,
                 T rate_lo) {
  detail::check_trace_shape(trace);
  detail::check_targets<T>(trace.dim(0), trace.dim(2), targets);
  if (rate_hi < T(0) || rate_hi > T(1) || rate_lo < T(0) || rate_lo > T(1))
    throw ArgumentError("spike_rate_mse: rates must lie in [0,1]");
  const std::size_t b = trace.dim(0), t = trace.dim(1), c = trace.dim(2);
  Tensor<T> counts = detail::time_sum(trace);
  T loss = 0;
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const T r = counts[i * c + j] / T(t);
      const T target = std::size_t(targets[i]) == j ? rate_hi : rate_lo;
      const T d = r - target;
      loss += d * d;
    }
  return loss / T(b * c);
}

template <typename T>
typename Tape<T>::Id spike_rate_mse_taped(
    Tape<T>& tape, typename Tape<T>::Id trace,
    const std::vector<std::int64_t>& targets, T rate_hi, T rate_lo) {
  const Tensor<T> tv = tape.value(trace);
  const T loss = spike_rate_mse(tv, targets, rate_hi, rate_lo);
  const std::size_t b = tv.dim(0), t = tv.dim(1), c = tv.dim(2);
  Tensor<T> counts = detail::time_sum(tv);
  return tape.record(
      Tensor<T>::scalar(loss), {trace},
      [counts, targets, rate_hi, rate_lo, b, t, c](
          const Tensor<T>& g, const std::vector<Tensor<T>*>& pg) {
        if (!pg[0]) return;
        const T gs = g[0] * T(2) / (T(b * c) * T(t));
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t j = 0; j < c; ++j) {
            const T r = counts[i * c + j] / T(t);
            const T target =
                std::size_t(targets[i]) == j ? rate_hi : rate_lo;
            const T d = gs * (r - target);
            for (std::size_t s = 0; s < t; ++s)
              (*pg[0])[(i * t + s) * c + j] += d;
          }
      });
}

// Squared-hinge penalty on per-neuron firing rates r = count/T: rates below
// f_min pay lambda_low * (f_min - r)^2, rates above f_max pay
// lambda_high * (r - f_max)^2, averaged over all neurons and examples.
template <typename T>
T activity_regularizer(const Tensor<T>& counts, std::size_t t_steps, T f_min,
                       T f_max, T lambda_low, T lambda_high) {
  if (f_min > f_max || f_min < T(0) || f_max > T(1))
    throw ArgumentError("activity_regularizer: need 0 <= f_min <= f_max <= 1");
  if (t_steps == 0) throw ArgumentError("activity_regularizer: T = 0");
  const std::size_t n = counts.size();
  if (n == 0) return T(0);
  T low = 0, high = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T r = counts[i] / T(t_steps);
    const T dl = std::max(T(0), f_min - r);
    const T dh = std::max(T(0), r - f_max);
    low += dl * dl;
    high += dh * dh;
  }
  return lambda_low * (low / T(n)) + lambda_high * (high / T(n));
}

template <typename T>
typename Tape<T>::Id activity_regularizer_taped(
    Tape<T>& tape, typename Tape<T>::Id counts, std::size_t t_steps, T f_min,
    T f_max, T lambda_low, T lambda_high) {
  const Tensor<T> cv = tape.value(counts);
  const T val =
      activity_regularizer(cv, t_steps, f_min, f_max, lambda_low, lambda_high);
  return tape.record(
      Tensor<T>::scalar(val), {counts},
      [cv, t_steps, f_min, f_max, lambda_low, lambda_high](
          const Tensor<T>& g, const std::vector<Tensor<T>*>& pg) {
        if (!pg[0]) return;
        const std::size_t n = cv.size();
        const T gs = g[0] * T(2) / (T(n) * T(t_steps));
        for (std::size_t i = 0; i < n; ++i) {
          const T r = cv[i] / T(t_steps);
          const T dl = std::max(T(0), f_min - r);
          const T dh = std::max(T(0), r - f_max);
          (*pg[0])[i] += gs * (lambda_high * dh - lambda_low * dl);
        }
      });
}

}  // namespace spiketrain
