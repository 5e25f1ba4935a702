#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

#include "spiketrain/objective.hpp"
#include "spiketrain/rng.hpp"

using namespace spiketrain;

namespace {

// Textbook cross-entropy, written without the max-shift or the fused
// time-sum loop, as an independent reference.
double ce_reference(const Tensor<double>& trace,
                    const std::vector<std::int64_t>& targets) {
  const std::size_t b = trace.dim(0), t = trace.dim(1), c = trace.dim(2);
  double total = 0;
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<double> z(c, 0.0);
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t s = 0; s < t; ++s) z[j] += trace[(i * t + s) * c + j];
    double denom = 0;
    for (std::size_t j = 0; j < c; ++j) denom += std::exp(z[j]);
    total += -std::log(std::exp(z[std::size_t(targets[i])]) / denom);
  }
  return total / double(b);
}

// Central differences on the trace entries of a scalar objective.
template <typename F>
Tensor<double> fd_trace_grad(const Tensor<double>& trace, F f,
                             double h = 1e-6) {
  Tensor<double> g(trace.shape());
  Tensor<double> probe = trace.clone();
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const double keep = probe[i];
    probe[i] = keep + h;
    const double up = f(probe);
    probe[i] = keep - h;
    const double dn = f(probe);
    probe[i] = keep;
    g[i] = (up - dn) / (2 * h);
  }
  return g;
}

}  // namespace

TEST_CASE("integral cross-entropy matches the direct formula") {
  const RngKey key = RngKey::from_seed(500);
  for (int trial = 0; trial < 8; ++trial) {
    auto trace = rng_normal<double>(key.child(trial), {4, 6, 3}, 0.0, 0.7);
    std::vector<std::int64_t> targets = {0, 2, 1, 2};
    const double got = integral_crossentropy(trace, targets);
    const double want = ce_reference(trace, targets);
    CHECK(std::abs(got - want) < 1e-12);
  }
}

TEST_CASE("cross-entropy is invariant to batch duplication") {
  auto trace = rng_normal<double>(RngKey::from_seed(501), {3, 5, 4});
  std::vector<std::int64_t> targets = {1, 3, 0};
  Tensor<double> doubled({6, 5, 4});
  for (std::size_t i = 0; i < trace.size(); ++i) {
    doubled[i] = trace[i];
    doubled[i + trace.size()] = trace[i];
  }
  std::vector<std::int64_t> dt = {1, 3, 0, 1, 3, 0};
  CHECK(integral_crossentropy(doubled, dt) ==
        Catch::Approx(integral_crossentropy(trace, targets)).epsilon(1e-12));
}

TEST_CASE("softmax shift keeps large logits finite") {
  auto trace = Tensor<double>::from({1, 1, 2}, {800.0, 790.0});
  const double loss = integral_crossentropy(trace, {0});
  CHECK(std::isfinite(loss));
  CHECK(loss == Catch::Approx(std::log(1 + std::exp(-10.0))).epsilon(1e-9));
}

TEST_CASE("taped cross-entropy value and gradient") {
  const RngKey key = RngKey::from_seed(502);
  auto trace = rng_normal<double>(key, {3, 4, 5}, 0.0, 0.5);
  std::vector<std::int64_t> targets = {4, 0, 2};

  Tape<double> tape;
  auto id = tape.leaf(trace);
  auto loss = integral_crossentropy_taped(tape, id, targets);
  CHECK(tape.value(loss)[0] == integral_crossentropy(trace, targets));

  tape.backward(loss);
  const auto g = tape.grad(id);
  const auto fd = fd_trace_grad(trace, [&](const Tensor<double>& x) {
    return integral_crossentropy(x, targets);
  });
  CHECK(max_abs_diff(g, fd) < 1e-7);
}

TEST_CASE("accuracy counts argmax hits, ties to the lowest class") {
  // example 0: class 1 wins; example 1: tie between 0 and 2 -> picks 0
  auto trace = Tensor<double>::from({2, 2, 3}, {0, 1, 0,   //
                                                0, 1, 0,   //
                                                1, 0, 1,   //
                                                1, 0, 1});
  CHECK(integral_accuracy(trace, {1, 0}) == 1.0);
  CHECK(integral_accuracy(trace, {1, 2}) == 0.5);
  CHECK(integral_accuracy(trace, {0, 1}) == 0.0);
}

TEST_CASE("rate mse against a hand-computed case") {
  // one example, T=4, two classes; counts 3 and 1 -> rates 0.75, 0.25
  auto trace = Tensor<double>::from({1, 4, 2}, {1, 0,  //
                                                1, 1,  //
                                                1, 0,  //
                                                0, 0});
  // target rates: hi 0.5 on class 0, lo 0.25 on class 1
  const double want = ((0.75 - 0.5) * (0.75 - 0.5) + 0.0) / 2.0;
  CHECK(spike_rate_mse(trace, {0}, 0.5, 0.25) ==
        Catch::Approx(want).epsilon(1e-12));
  CHECK_THROWS_AS(spike_rate_mse(trace, {0}, 1.5, 0.25), ArgumentError);
  CHECK_THROWS_AS(spike_rate_mse(trace, {0}, 0.5, -0.1), ArgumentError);
}

TEST_CASE("taped rate mse value and gradient") {
  const RngKey key = RngKey::from_seed(503);
  auto trace = rng_uniform<double>(key, {2, 6, 3});
  std::vector<std::int64_t> targets = {2, 1};

  Tape<double> tape;
  auto id = tape.leaf(trace);
  auto loss = spike_rate_mse_taped(tape, id, targets, 0.9, 0.1);
  CHECK(tape.value(loss)[0] == spike_rate_mse(trace, targets, 0.9, 0.1));
  tape.backward(loss);
  const auto fd = fd_trace_grad(trace, [&](const Tensor<double>& x) {
    return spike_rate_mse(x, targets, 0.9, 0.1);
  });
  CHECK(max_abs_diff(tape.grad(id), fd) < 1e-8);
}

TEST_CASE("activity regularizer hand case") {
  // rates: 0.1, 0.5, 0.9 with band [0.2, 0.8]
  auto counts = Tensor<double>::from({1, 3}, {1, 5, 9});
  const double lo = (0.2 - 0.1) * (0.2 - 0.1) / 3.0;
  const double hi = (0.9 - 0.8) * (0.9 - 0.8) / 3.0;
  const double got = activity_regularizer(counts, 10, 0.2, 0.8, 2.0, 4.0);
  CHECK(got == Catch::Approx(2.0 * lo + 4.0 * hi).epsilon(1e-12));
  CHECK(activity_regularizer(counts, 10, 0.0, 1.0, 2.0, 4.0) == 0.0);
  CHECK_THROWS_AS(activity_regularizer(counts, 0, 0.2, 0.8, 1.0, 1.0),
                  ArgumentError);
  CHECK_THROWS_AS(activity_regularizer(counts, 10, 0.8, 0.2, 1.0, 1.0),
                  ArgumentError);
  CHECK_THROWS_AS(activity_regularizer(counts, 10, -0.1, 0.8, 1.0, 1.0),
                  ArgumentError);
}

TEST_CASE("taped activity regularizer gradient away from the hinges") {
  // counts chosen so no rate sits on f_min or f_max, keeping FD well posed
  auto counts = Tensor<double>::from({2, 3}, {1, 5, 9, 3, 7, 0});
  const std::size_t t_steps = 10;
  Tape<double> tape;
  auto id = tape.leaf(counts);
  auto loss = activity_regularizer_taped(tape, id, t_steps, 0.25, 0.75, 1.5,
                                         0.5);
  CHECK(tape.value(loss)[0] ==
        activity_regularizer(counts, t_steps, 0.25, 0.75, 1.5, 0.5));
  tape.backward(loss);
  const auto fd = fd_trace_grad(counts, [&](const Tensor<double>& x) {
    return activity_regularizer(x, t_steps, 0.25, 0.75, 1.5, 0.5);
  });
  CHECK(max_abs_diff(tape.grad(id), fd) < 1e-8);
}

TEST_CASE("losses validate trace shape and targets") {
  auto flat = Tensor<double>::zeros({2, 3});
  CHECK_THROWS_AS(integral_crossentropy(flat, {0, 1}), ShapeError);
  auto trace = Tensor<double>::zeros({2, 3, 4});
  CHECK_THROWS_AS(integral_crossentropy(trace, {0}), ArgumentError);
  CHECK_THROWS_AS(integral_crossentropy(trace, {0, 4}), ArgumentError);
  CHECK_THROWS_AS(integral_crossentropy(trace, {0, -1}), ArgumentError);
  CHECK_THROWS_AS(integral_accuracy(flat, {0, 1}), ShapeError);
  CHECK_THROWS_AS(spike_rate_mse(flat, {0, 1}, 0.5, 0.1), ShapeError);
}

TEST_CASE("composite objective differentiates through loss plus penalty") {
  const RngKey key = RngKey::from_seed(504);
  auto trace = rng_uniform<double>(key.child(0), {2, 5, 3});
  std::vector<std::int64_t> targets = {0, 2};
  auto counts = Tensor<double>::from({2, 3}, {1, 4, 2, 3, 0, 5});

  Tape<double> tape;
  auto tid = tape.leaf(trace);
  auto cid = tape.leaf(counts);
  auto total = tape.add(
      integral_crossentropy_taped(tape, tid, targets),
      activity_regularizer_taped(tape, cid, 5, 0.1, 0.9, 1.0, 1.0));
  tape.backward(total);

  const auto fd_t = fd_trace_grad(trace, [&](const Tensor<double>& x) {
    return integral_crossentropy(x, targets);
  });
  const auto fd_c = fd_trace_grad(counts, [&](const Tensor<double>& x) {
    return activity_regularizer(x, std::size_t(5), 0.1, 0.9, 1.0, 1.0);
  });
  CHECK(max_abs_diff(tape.grad(tid), fd_t) < 1e-7);
  CHECK(max_abs_diff(tape.grad(cid), fd_c) < 1e-8);
}
