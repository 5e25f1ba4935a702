#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "spiketrain/autodiff.hpp"
#include "spiketrain/tensor.hpp"

// Spiking activations: a hard step forward paired with a finite surrogate
// derivative used only on the backward pass. Constructors return immutable
// values; hyperparameters are baked into the closures.

namespace spiketrain {

// Step with inclusive threshold: x >= 0 fires. The boundary matters because
// membrane potentials sit exactly at threshold in integer-valued tests.
template <typename T>
Tensor<T> heaviside(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] >= T(0) ? T(1) : T(0);
  return out;
}

template <typename T>
struct SpikingActivation {
  std::string name;
  std::function<Tensor<T>(const Tensor<T>&)> forward;
  std::function<Tensor<T>(const Tensor<T>&)> backward;  // surrogate g(x)
};

namespace detail {

template <typename T, typename G>
Tensor<T> map_elementwise(const Tensor<T>& x, G g) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = g(x[i]);
  return out;
}

}  // namespace detail

// Fully caller-defined pairing. Defaults give the straight-through
// estimator: hard step forward, unit gradient backward.
template <typename T>
SpikingActivation<T> custom(
    std::function<Tensor<T>(const Tensor<T>&)> fwd = nullptr,
    std::function<Tensor<T>(const Tensor<T>&)> bwd = nullptr) {
  SpikingActivation<T> a;
  a.name = "custom";
  a.forward = fwd ? std::move(fwd)
                  : [](const Tensor<T>& x) { return heaviside(x); };
  a.backward = bwd ? std::move(bwd) : [](const Tensor<T>& x) {
    return Tensor<T>::full(x.shape(), T(1));
  };
  return a;
}

// g(x) = 1 / (1 + k|x|)^2
template <typename T>
SpikingActivation<T> superspike(T k = T(25)) {
  if (!(k > T(0))) throw ArgumentError("superspike: k must be positive");
  SpikingActivation<T> a;
  a.name = "superspike";
  a.forward = [](const Tensor<T>& x) { return heaviside(x); };
  a.backward = [k](const Tensor<T>& x) {
    return detail::map_elementwise(x, [k](T v) {
      const T d = T(1) + k * std::abs(v);
      return T(1) / (d * d);
    });
  };
  return a;
}

// g(x) = max(0, 1 - |kx|)
template <typename T>
SpikingActivation<T> triangular(T k = T(0.5)) {
  if (!(k > T(0))) throw ArgumentError("triangular: k must be positive");
  SpikingActivation<T> a;
  a.name = "triangular";
  a.forward = [](const Tensor<T>& x) { return heaviside(x); };
  a.backward = [k](const Tensor<T>& x) {
    return detail::map_elementwise(x, [k](T v) {
      return std::max(T(0), T(1) - std::abs(k * v));
    });
  };
  return a;
}

// g(x) = 1 / (1 + (pi*k*x/2)^2)
template <typename T>
SpikingActivation<T> arctan(T k) {
  if (!(k > T(0))) throw ArgumentError("arctan: k must be positive");
  SpikingActivation<T> a;
  a.name = "arctan";
  a.forward = [](const Tensor<T>& x) { return heaviside(x); };
  a.backward = [k](const Tensor<T>& x) {
    return detail::map_elementwise(x, [k](T v) {
      const T u = T(std::numbers::pi) * k * v / T(2);
      return T(1) / (T(1) + u * u);
    });
  };
  return a;
}

// g(x) = height on |x| <= width/2, else 0
template <typename T>
SpikingActivation<T> boxcar(T width = T(2), T height = T(0.5)) {
  if (!(width > T(0)) || !(height > T(0)))
    throw ArgumentError("boxcar: width and height must be positive");
  SpikingActivation<T> a;
  a.name = "boxcar";
  a.forward = [](const Tensor<T>& x) { return heaviside(x); };
  a.backward = [width, height](const Tensor<T>& x) {
    return detail::map_elementwise(x, [width, height](T v) {
      return std::abs(v) <= width / T(2) ? height : T(0);
    });
  };
  return a;
}

// Apply an activation through the tape: forward is the hard step, backward
// multiplies the cotangent by the surrogate at the pre-activation.
template <typename T>
typename Tape<T>::Id spike(Tape<T>& tape, typename Tape<T>::Id x,
                           const SpikingActivation<T>& act) {
  CustomGradient<T> cg{act.forward, act.backward};
  return register_custom(cg)(tape, x);
}

// Name + slope in one value so configs and checkpoints can round-trip the
// choice of activation. slope covers k for the k-family; boxcar packs
// (width, height) into (slope, aux).
struct ActivationDesc {
  std::string name = "superspike";
  double slope = 25.0;
  double aux = 0.0;
};

template <typename T>
SpikingActivation<T> make_activation(const ActivationDesc& d) {
  if (d.name == "custom") return custom<T>();
  if (d.name == "superspike") return superspike<T>(T(d.slope));
  if (d.name == "triangular") return triangular<T>(T(d.slope));
  if (d.name == "arctan") return arctan<T>(T(d.slope));
  if (d.name == "boxcar") return boxcar<T>(T(d.slope), T(d.aux));
  throw ArgumentError("unknown activation: " + d.name);
}

inline ActivationDesc default_activation_desc(const std::string& name) {
  if (name == "custom") return {"custom", 0.0, 0.0};
  if (name == "superspike") return {"superspike", 25.0, 0.0};
  if (name == "triangular") return {"triangular", 0.5, 0.0};
  if (name == "arctan") return {"arctan", 2.0, 0.0};
  if (name == "boxcar") return {"boxcar", 2.0, 0.5};
  throw ArgumentError("unknown activation: " + name);
}

}  // namespace spiketrain
