#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "spiketrain/ops.hpp"
#include "spiketrain/tensor.hpp"

// Reverse-mode autodiff on a linear tape. Forward values are computed
// eagerly as ops are recorded; backward() replays the tape in reverse,
// accumulating cotangents. A tape is single-threaded and single-use:
// backward() consumes it. Nodes recorded from constants carry no backward
// closure and cost nothing in the sweep.

namespace spiketrain {

template <typename T>
class Tape {
 public:
  using Id = std::int32_t;

  // bwd(grad_out, parent_grads): accumulate (+=) into each non-null entry.
  // Entries are null for parents that do not require gradients.
  using BackwardFn = std::function<void(const Tensor<T>& grad_out,
                                        const std::vector<Tensor<T>*>&)>;

  Id constant(Tensor<T> v) { return push(std::move(v), {}, nullptr, false); }

  Id leaf(Tensor<T> v) { return push(std::move(v), {}, nullptr, true); }

  // Core extension point: every op below is built on record().
  Id record(Tensor<T> out, std::vector<Id> parents, BackwardFn bwd) {
    bool needs = false;
    for (Id p : parents) needs = needs || nodes_[std::size_t(p)].requires_grad;
    return push(std::move(out), std::move(parents),
                needs ? std::move(bwd) : nullptr, needs);
  }

  const Tensor<T>& value(Id id) const { return nodes_[std::size_t(id)].value; }

  bool requires_grad(Id id) const {
    return nodes_[std::size_t(id)].requires_grad;
  }

  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a scalar loss. Leaves untouched by the sweep read
  // back as zero gradients.
  void backward(Id loss) {
    if (consumed_) throw StateError("backward: tape already consumed");
    consumed_ = true;
    const Node& ln = nodes_[std::size_t(loss)];
    if (ln.value.size() != 1)
      throw ContractError("backward: loss must be scalar, got shape " +
                          shape_str(ln.value.shape()));
    grads_.assign(nodes_.size(), std::nullopt);
    grads_[std::size_t(loss)] = Tensor<T>::full(ln.value.shape(), T(1));
    std::vector<Tensor<T>*> parent_grads;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      const Node& n = nodes_[i];
      if (!grads_[i].has_value() || !n.backward) continue;
      parent_grads.clear();
      for (Id p : n.parents) {
        const std::size_t pi = std::size_t(p);
        if (!nodes_[pi].requires_grad) {
          parent_grads.push_back(nullptr);
          continue;
        }
        if (!grads_[pi].has_value())
          grads_[pi] = Tensor<T>::zeros(nodes_[pi].value.shape());
        parent_grads.push_back(&*grads_[pi]);
      }
      n.backward(*grads_[i], parent_grads);
    }
  }

  // Valid after backward(). Zero tensor for ids the sweep never reached.
  Tensor<T> grad(Id id) const {
    if (!consumed_) throw StateError("grad: backward() has not run");
    const std::size_t i = std::size_t(id);
    if (grads_[i].has_value()) return *grads_[i];
    return Tensor<T>::zeros(nodes_[i].value.shape());
  }

  // ---- structural ops -----------------------------------------------------

  Id add(Id a, Id b) {
    Tensor<T> out = spiketrain::add(value(a), value(b));
    return record(std::move(out), {a, b},
                  [](const Tensor<T>& g, const std::vector<Tensor<T>*>& pg) {
                    for (int s = 0; s < 2; ++s)
                      if (pg[s])
                        for (std::size_t i = 0; i < g.size(); ++i)
                          (*pg[s])[i] += g[i];
                  });
  }

  Id sub(Id a, Id b) {
    Tensor<T> out = spiketrain::sub(value(a), value(b));
    return record(std::move(out), {a, b},
                  [](const Tensor<T>& g, const std::vector<Tensor<T>*>& pg) {
                    if (pg[0])
                      for (std::size_t i = 0; i < g.size(); ++i)
                        (*pg[0])[i] += g[i];
                    if (pg[1])
                      for (std::size_t i = 0; i < g.size(); ++i)
                        (*pg[1])[i] -= g[i];
                  });
  }

  Id mul(Id a, Id b) {
    Tensor<T> av = value(a), bv = value(b);
    Tensor<T> out = spiketrain::mul(av, bv);
    return record(std::move(out), {a, b},
                  [av, bv](const Tensor<T>& g,
                           const std::vector<Tensor<T>*>& pg) {
                    if (pg[0])
                      for (std::size_t i = 0; i < g.size(); ++i)
                        (*pg[0])[i] += g[i] * bv[i];
                    if (pg[1])
                      for (std::size_t i = 0; i < g.size(); ++i)
                        (*pg[1])[i] += g[i] * av[i];
                  });
  }

  Id scale(Id a, T s) {
    Tensor<T> out = spiketrain::scale(value(a), s);
    return record(std::move(out), {a},
                  [s](const Tensor<T>& g, const std::vector<Tensor<T>*>& pg) {
                    if (pg[0])
                      for (std::size_t i = 0; i < g.size(); ++i)
                        (*pg[0])[i] += g[i] * s;
                  });
  }

  Id add_scalar(Id a, T c) {
    Tensor<T> out = spiketrain::add_scalar(value(a), c);
    return record(std::move(out), {a},
                  [](const Tensor<T>& g, const std::vector<Tensor<T>*>& pg) {
                    if (pg[0])
                      for (std::size_t i = 0; i < g.size(); ++i)
                        (*pg[0])[i] += g[i];
                  });
  }

  // b broadcast along a's leading axes (bias add). db = sum over the
  // broadcast axes.
  Id add_bcast(Id a, Id b) {
    Tensor<T> bv = value(b);
    Tensor<T> out = spiketrain::add_bcast(value(a), bv);
    const Shape bshape = bv.shape();
    return record(
        std::move(out), {a, b},
        [bshape](const Tensor<T>& g, const std::vector<Tensor<T>*>& pg) {
          if (pg[0])
            for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
          if (pg[1]) {
            Tensor<T> db = sum_to_suffix(g, bshape);
            for (std::size_t i = 0; i < db.size(); ++i) (*pg[1])[i] += db[i];
          }
        });
  }

  // Per-channel bias over axis 1: a [D0,C,inner...], b [C].
  Id add_bias_axis1(Id a, Id b) {
    const Tensor<T>& av = value(a);
    Tensor<T> out = spiketrain::add_bias_axis1(av, value(b));
    const std::size_t d0 = av.dim(0), c = av.dim(1);
    const std::size_t inner = av.size() / std::max<std::size_t>(d0 * c, 1);
    return record(std::move(out), {a, b},
                  [d0, c, inner](const Tensor<T>& g,
                                 const std::vector<Tensor<T>*>& pg) {
                    if (pg[0])
                      for (std::size_t i = 0; i < g.size(); ++i)
                        (*pg[0])[i] += g[i];
                    if (pg[1])
                      for (std::size_t i = 0; i < d0; ++i)
                        for (std::size_t j = 0; j < c; ++j) {
                          const T* src = g.data() + (i * c + j) * inner;
                          T acc = 0;
                          for (std::size_t k = 0; k < inner; ++k)
                            acc += src[k];
                          (*pg[1])[j] += acc;
                        }
                  });
  }

  Id mul_bcast(Id a, Id b) {
    Tensor<T> av = value(a), bv = value(b);
    Tensor<T> out = spiketrain::mul_bcast(av, bv);
    return record(
        std::move(out), {a, b},
        [av, bv](const Tensor<T>& g, const std::vector<Tensor<T>*>& pg) {
          const std::size_t inner = std::max<std::size_t>(bv.size(), 1);
          if (pg[0])
            for (std::size_t i = 0; i < g.size(); ++i)
              (*pg[0])[i] += g[i] * bv[i % inner];
          if (pg[1])
            for (std::size_t i = 0; i < g.size(); ++i)
              (*pg[1])[i % inner] += g[i] * av[i];
        });
  }

  Id matmul(Id a, Id b) {
    Tensor<T> av = value(a), bv = value(b);
    Tensor<T> out = spiketrain::matmul(av, bv);
    return record(
        std::move(out), {a, b},
        [av, bv](const Tensor<T>& g, const std::vector<Tensor<T>*>& pg) {
          if (pg[0]) {
            Tensor<T> da = matmul_nt(g, bv);
            for (std::size_t i = 0; i < da.size(); ++i) (*pg[0])[i] += da[i];
          }
          if (pg[1]) {
            Tensor<T> db = matmul_tn(av, g);
            for (std::size_t i = 0; i < db.size(); ++i) (*pg[1])[i] += db[i];
          }
        });
  }

  Id conv2d(Id input, Id kernels, std::size_t sh, std::size_t sw,
            Padding padding) {
    Tensor<T> iv = value(input), kv = value(kernels);
    Tensor<T> out = spiketrain::conv2d(iv, kv, sh, sw, padding);
    return record(
        std::move(out), {input, kernels},
        [iv, kv, sh, sw, padding](const Tensor<T>& g,
                                  const std::vector<Tensor<T>*>& pg) {
          if (pg[0]) {
            Tensor<T> di = conv2d_grad_input(g, iv, kv, sh, sw, padding);
            for (std::size_t i = 0; i < di.size(); ++i) (*pg[0])[i] += di[i];
          }
          if (pg[1]) {
            Tensor<T> dk = conv2d_grad_kernels(g, iv, kv, sh, sw, padding);
            for (std::size_t i = 0; i < dk.size(); ++i) (*pg[1])[i] += dk[i];
          }
        });
  }

  // Ties route the whole cotangent to the first maximal element.
  Id maxpool2d(Id input, std::size_t wh, std::size_t ww) {
    auto r = maxpool2d_with_argmax(value(input), wh, ww);
    Tensor<std::int64_t> am = r.argmax;
    return record(std::move(r.out), {input},
                  [am](const Tensor<T>& g, const std::vector<Tensor<T>*>& pg) {
                    if (!pg[0]) return;
                    for (std::size_t i = 0; i < g.size(); ++i)
                      (*pg[0])[std::size_t(am[i])] += g[i];
                  });
  }

  Id reshape(Id a, const Shape& shape) {
    Tensor<T> out = value(a).reshape(shape).clone();
    return record(std::move(out), {a},
                  [](const Tensor<T>& g, const std::vector<Tensor<T>*>& pg) {
                    if (pg[0])
                      for (std::size_t i = 0; i < g.size(); ++i)
                        (*pg[0])[i] += g[i];
                  });
  }

  Id slice_axis1(Id a, std::size_t lo, std::size_t hi) {
    const Tensor<T>& av = value(a);
    Tensor<T> out = spiketrain::slice_axis1(av, lo, hi);
    const std::size_t d0 = av.dim(0), d1 = av.dim(1);
    const std::size_t inner =
        av.size() / std::max<std::size_t>(d0 * d1, 1);
    return record(std::move(out), {a},
                  [lo, hi, d0, d1, inner](const Tensor<T>& g,
                                          const std::vector<Tensor<T>*>& pg) {
                    if (!pg[0]) return;
                    const std::size_t span = (hi - lo) * inner;
                    for (std::size_t i = 0; i < d0; ++i) {
                      const T* src = g.data() + i * span;
                      T* dst = pg[0]->data() + (i * d1 + lo) * inner;
                      for (std::size_t k = 0; k < span; ++k) dst[k] += src[k];
                    }
                  });
  }

  Id stack_axis1(const std::vector<Id>& parts) {
    std::vector<Tensor<T>> vals;
    vals.reserve(parts.size());
    for (Id p : parts) vals.push_back(value(p));
    Tensor<T> out = spiketrain::stack_axis1(vals);
    const std::size_t d0 = vals[0].dim(0);
    const std::size_t inner =
        vals[0].size() / std::max<std::size_t>(d0, 1);
    const std::size_t k = parts.size();
    return record(std::move(out), parts,
                  [d0, inner, k](const Tensor<T>& g,
                                 const std::vector<Tensor<T>*>& pg) {
                    for (std::size_t s = 0; s < k; ++s) {
                      if (!pg[s]) continue;
                      for (std::size_t i = 0; i < d0; ++i) {
                        const T* src = g.data() + (i * k + s) * inner;
                        T* dst = pg[s]->data() + i * inner;
                        for (std::size_t j = 0; j < inner; ++j)
                          dst[j] += src[j];
                      }
                    }
                  });
  }

  Id sum_axis1(Id a) {
    const Tensor<T>& av = value(a);
    Tensor<T> out = spiketrain::sum_axis1(av);
    const std::size_t d0 = av.dim(0), d1 = av.dim(1);
    const std::size_t inner =
        av.size() / std::max<std::size_t>(d0 * d1, 1);
    return record(std::move(out), {a},
                  [d0, d1, inner](const Tensor<T>& g,
                                  const std::vector<Tensor<T>*>& pg) {
                    if (!pg[0]) return;
                    for (std::size_t i = 0; i < d0; ++i)
                      for (std::size_t j = 0; j < d1; ++j) {
                        const T* src = g.data() + i * inner;
                        T* dst = pg[0]->data() + (i * d1 + j) * inner;
                        for (std::size_t kk = 0; kk < inner; ++kk)
                          dst[kk] += src[kk];
                      }
                  });
  }

  Id sum(Id a) {
    const Tensor<T>& av = value(a);
    T acc = 0;
    for (std::size_t i = 0; i < av.size(); ++i) acc += av[i];
    return record(Tensor<T>::scalar(acc), {a},
                  [](const Tensor<T>& g, const std::vector<Tensor<T>*>& pg) {
                    if (pg[0])
                      for (std::size_t i = 0; i < pg[0]->size(); ++i)
                        (*pg[0])[i] += g[0];
                  });
  }

  Id mean(Id a) {
    const std::size_t n = std::max<std::size_t>(value(a).size(), 1);
    return scale(sum(a), T(1) / T(n));
  }

  // clip to [0,1]; derivative is 1 strictly inside the interval, 0 at the
  // boundary and outside.
  Id clip01(Id a) {
    Tensor<T> av = value(a);
    Tensor<T> out = spiketrain::clip(av, T(0), T(1));
    return record(std::move(out), {a},
                  [av](const Tensor<T>& g,
                       const std::vector<Tensor<T>*>& pg) {
                    if (!pg[0]) return;
                    for (std::size_t i = 0; i < g.size(); ++i)
                      if (av[i] > T(0) && av[i] < T(1)) (*pg[0])[i] += g[i];
                  });
  }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<Id> parents;
    BackwardFn backward;
    bool requires_grad;
  };

  Id push(Tensor<T> v, std::vector<Id> parents, BackwardFn bwd, bool rg) {
    nodes_.push_back(
        Node{std::move(v), std::move(parents), std::move(bwd), rg});
    return Id(nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::vector<std::optional<Tensor<T>>> grads_;
  bool consumed_ = false;
};

// Elementwise op defined by paired forward/backward maps. The backward map
// is evaluated at the saved forward input; the cotangent rule is
// g_in = g_out * backward(x).
template <typename T>
struct CustomGradient {
  std::function<Tensor<T>(const Tensor<T>&)> forward;
  std::function<Tensor<T>(const Tensor<T>&)> backward;
};

// Turn a CustomGradient into an op applicable to tape nodes. Both maps must
// preserve shape; violations surface as contract errors at the point of use.
template <typename T>
auto register_custom(CustomGradient<T> cg) {
  return [cg](Tape<T>& tape, typename Tape<T>::Id x) ->
         typename Tape<T>::Id {
    Tensor<T> xv = tape.value(x);
    Tensor<T> out = cg.forward(xv);
    if (!out.same_shape(xv))
      throw ContractError("custom op: forward changed shape " +
                          shape_str(xv.shape()) + " -> " +
                          shape_str(out.shape()));
    auto bwd_fn = cg.backward;
    return tape.record(
        std::move(out), {x},
        [xv, bwd_fn](const Tensor<T>& g, const std::vector<Tensor<T>*>& pg) {
          if (!pg[0]) return;
          Tensor<T> d = bwd_fn(xv);
          if (!d.same_shape(xv))
            throw ContractError("custom op: backward changed shape " +
                                shape_str(xv.shape()) + " -> " +
                                shape_str(d.shape()));
          for (std::size_t i = 0; i < g.size(); ++i)
            (*pg[0])[i] += g[i] * d[i];
        });
  };
}

// Runs f on a fresh tape with `params` as tracked leaves; f must return a
// scalar node. Gradients come back in parameter order with matching shapes.
template <typename T, typename F>
std::pair<T, std::vector<Tensor<T>>> value_and_grad(
    F&& f, const std::vector<Tensor<T>>& params) {
  Tape<T> tape;
  std::vector<typename Tape<T>::Id> ids;
  ids.reserve(params.size());
  for (const auto& p : params) ids.push_back(tape.leaf(p));
  const typename Tape<T>::Id loss = f(tape, ids);
  if (tape.value(loss).size() != 1)
    throw ContractError("value_and_grad: objective must be scalar, got " +
                        shape_str(tape.value(loss).shape()));
  const T val = tape.value(loss)[0];
  tape.backward(loss);
  std::vector<Tensor<T>> grads;
  grads.reserve(params.size());
  for (auto id : ids) grads.push_back(tape.grad(id));
  return {val, std::move(grads)};
}

}  // namespace spiketrain
