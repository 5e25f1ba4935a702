#include <catch2/catch_amalgamated.hpp>

#include <vector>

#include "spiketrain/network.hpp"
#include "spiketrain/rng.hpp"

using namespace spiketrain;

namespace {

NetworkSpec dense_spec() {
  NetworkSpec s;
  s.input_shape = {6};
  s.layers = {LinearLayer{8}, LIFLayer{}, LinearLayer{5}, LILayer{}};
  return s;
}

NetworkSpec conv_spec() {
  NetworkSpec s;
  s.input_shape = {1, 4, 4};
  s.layers = {Conv2dLayer{2, 3, 3}, MaxPoolLayer{2, 2}, LIFLayer{},
              LinearLayer{3}, LILayer{}};
  return s;
}

}  // namespace

TEST_CASE("normalize inserts flatten between a spatial stage and linear") {
  const NormalizedSpec n = normalize(conv_spec());
  REQUIRE(n.layers.size() == 6);  // flatten appears before the linear
  CHECK(std::holds_alternative<Conv2dLayer>(n.layers[0]));
  CHECK(std::holds_alternative<MaxPoolLayer>(n.layers[1]));
  CHECK(std::holds_alternative<LIFLayer>(n.layers[2]));
  CHECK(std::holds_alternative<FlattenLayer>(n.layers[3]));
  CHECK(std::holds_alternative<LinearLayer>(n.layers[4]));
  CHECK(std::holds_alternative<LILayer>(n.layers[5]));
  CHECK(n.out_shapes[0] == Shape{2, 4, 4});
  CHECK(n.out_shapes[1] == Shape{2, 2, 2});
  CHECK(n.out_shapes[2] == Shape{2, 2, 2});
  CHECK(n.out_shapes[3] == Shape{8});
  CHECK(n.out_shapes[4] == Shape{3});
  CHECK(n.out_shapes[5] == Shape{3});
  // cell shapes were resolved in place
  CHECK(std::get<LIFLayer>(n.layers[2]).shape == Shape{2, 2, 2});
  CHECK(std::get<LILayer>(n.layers[5]).shape == Shape{3});
}

TEST_CASE("normalize rejects malformed pipelines") {
  NetworkSpec s;
  CHECK_THROWS_AS(normalize(s), SpecError);  // no input shape
  s.input_shape = {4};
  CHECK_THROWS_AS(normalize(s), SpecError);  // no layers
  s.layers = {LinearLayer{3}};
  CHECK_THROWS_AS(normalize(s), SpecError);  // no cell readout
  s.layers = {MonitorLayer{}, LIFLayer{}};
  CHECK_THROWS_AS(normalize(s), SpecError);  // monitor without lif before it
  s.layers = {LinearLayer{3}, LILayer{}, MonitorLayer{}, LILayer{}};
  CHECK_THROWS_AS(normalize(s), SpecError);  // monitor after li, not lif
  s.layers = {Conv2dLayer{2}, LIFLayer{}};
  CHECK_THROWS_AS(normalize(s), SpecError);  // conv on flat input
  s.layers = {MaxPoolLayer{}, LIFLayer{}};
  CHECK_THROWS_AS(normalize(s), SpecError);  // pool on flat input
  s.layers = {LinearLayer{3}, LIFLayer{Shape{7}}, LILayer{}};
  CHECK_THROWS_AS(normalize(s), SpecError);  // declared cell shape mismatch
}

TEST_CASE("init produces named parameters matching the layout table") {
  const NetworkSpec spec = conv_spec();
  auto sample = Tensor<float>::zeros({2, 3, 1, 4, 4});
  auto params = init<float>(spec, RngKey::from_seed(7), sample);

  const NormalizedSpec n = normalize(spec);
  const auto first = param_layout(n);
  REQUIRE(first.back() == params.entries.size());
  REQUIRE(params.entries.size() == 6);

  CHECK(params.entries[0].name == "l0.w");
  CHECK(params.entries[0].tensor.shape() == Shape{2, 1, 3, 3});
  CHECK(params.entries[1].name == "l0.b");
  CHECK(params.entries[1].tensor.shape() == Shape{2});
  CHECK(params.entries[2].name == "l2.beta");
  CHECK(params.entries[2].tensor.shape() == Shape{2, 2, 2});
  CHECK(params.entries[3].name == "l4.w");
  CHECK(params.entries[3].tensor.shape() == Shape{8, 3});
  CHECK(params.entries[4].name == "l4.b");
  CHECK(params.entries[4].tensor.shape() == Shape{3});
  CHECK(params.entries[5].name == "l5.beta");
  CHECK(params.entries[5].tensor.shape() == Shape{3});

  // layout indices point at each layer's first entry
  CHECK(first[0] == 0);  // conv
  CHECK(first[2] == 2);  // lif
  CHECK(first[4] == 3);  // linear
  CHECK(first[5] == 5);  // li

  // biases start at zero; weights stay inside the 2 sigma clip
  for (std::size_t i = 0; i < params.entries[1].tensor.size(); ++i)
    CHECK(params.entries[1].tensor[i] == 0.0f);
  const float bound_w = 2.0f / std::sqrt(9.0f);
  for (std::size_t i = 0; i < params.entries[0].tensor.size(); ++i)
    CHECK(std::abs(params.entries[0].tensor[i]) <= bound_w + 1e-6f);

  CHECK(params.has("l2.beta"));
  CHECK_FALSE(params.has("l1.w"));
  CHECK(params.scalar_count() == 18 + 2 + 8 + 24 + 3 + 3);
}

TEST_CASE("fixed beta is stored but excluded from training") {
  NetworkSpec s;
  s.input_shape = {4};
  LIFLayer lif;
  lif.beta_mode = BetaMode::Fixed;
  lif.fixed_beta = 0.3;
  s.layers = {LinearLayer{4}, lif, LILayer{}};
  auto params =
      init<float>(s, RngKey::from_seed(3), Tensor<float>::zeros({1, 2, 4}));
  const auto& beta = params.entries[2];
  CHECK(beta.name == "l1.beta");
  CHECK(beta.tensor.size() == 1);
  CHECK(beta.tensor[0] == 0.3f);
  CHECK_FALSE(beta.trainable);
  CHECK(params.entries[0].trainable);
}

TEST_CASE("init validates the sample input against the declared shape") {
  const NetworkSpec spec = dense_spec();
  CHECK_THROWS_AS(init<float>(spec, RngKey::from_seed(1),
                              Tensor<float>::zeros({4})),
                  SpecError);
  CHECK_THROWS_AS(init<float>(spec, RngKey::from_seed(1),
                              Tensor<float>::zeros({2, 3, 7})),
                  SpecError);
}

TEST_CASE("unroll factor changes scheduling, never values") {
  const NetworkSpec spec = dense_spec();
  const RngKey key = RngKey::from_seed(11);
  auto params = init<float>(spec, key.child(0),
                            Tensor<float>::zeros({3, 12, 6}));
  auto input = rng_bernoulli<float>(key.child(1), {3, 12, 6}, 0.3);

  const auto ref = layerwise_apply(spec, params, input);
  CHECK(ref.trace.shape() == Shape{3, 12, 5});
  for (std::size_t u : {1u, 2u, 3u, 5u, 12u, 40u}) {
    const auto r = apply(spec, params, input, u);
    INFO("unroll " << u);
    CHECK(tensor_equal(r.trace, ref.trace));
  }
}

TEST_CASE("unroll invariance holds through conv, pool, and flatten") {
  const NetworkSpec spec = conv_spec();
  const RngKey key = RngKey::from_seed(12);
  auto params = init<float>(spec, key.child(0),
                            Tensor<float>::zeros({2, 8, 1, 4, 4}));
  auto input = rng_bernoulli<float>(key.child(1), {2, 8, 1, 4, 4}, 0.4);

  const auto ref = layerwise_apply(spec, params, input);
  CHECK(ref.trace.shape() == Shape{2, 8, 3});
  for (std::size_t u : {1u, 3u, 8u}) {
    const auto r = apply(spec, params, input, u);
    INFO("unroll " << u);
    CHECK(tensor_equal(r.trace, ref.trace));
  }
}

TEST_CASE("monitor reports exact spike totals of the cell it follows") {
  NetworkSpec spec;
  spec.input_shape = {6};
  spec.layers = {LinearLayer{8}, LIFLayer{}, MonitorLayer{}, LinearLayer{5},
                 LILayer{}};
  const RngKey key = RngKey::from_seed(13);
  auto params = init<float>(spec, key.child(0),
                            Tensor<float>::zeros({3, 10, 6}));
  auto input = rng_bernoulli<float>(key.child(1), {3, 10, 6}, 0.5);

  // The prefix network reuses the identical entries, so its readout trace is
  // the monitored cell's spike train.
  NetworkSpec prefix;
  prefix.input_shape = {6};
  prefix.layers = {LinearLayer{8}, LIFLayer{}};
  NetworkParams<float> pp;
  pp.entries = {params.entries[0], params.entries[1], params.entries[2]};
  const auto spikes = apply(prefix, pp, input).trace;

  for (std::size_t u : {1u, 4u, 10u}) {
    const auto full = apply(spec, params, input, u);
    REQUIRE(full.monitors.size() == 1);
    CHECK(full.monitors[0].first == "l2.counts");
    CHECK(tensor_equal(full.monitors[0].second, monitor_activity(spikes)));
  }
}

TEST_CASE("apply validates input window and parameter count") {
  const NetworkSpec spec = dense_spec();
  auto params = init<float>(spec, RngKey::from_seed(5),
                            Tensor<float>::zeros({1, 2, 6}));
  auto input = Tensor<float>::zeros({1, 2, 6});
  CHECK_THROWS_AS(apply(spec, params, Tensor<float>::zeros({1, 0, 6})),
                  ArgumentError);
  CHECK_THROWS_AS(apply(spec, params, input, 0), ArgumentError);
  CHECK_THROWS_AS(apply(spec, params, Tensor<float>::zeros({1, 2, 7})),
                  ShapeError);
  CHECK_THROWS_AS(apply(spec, params, Tensor<float>::zeros({6})), ShapeError);

  NetworkParams<float> fewer;
  fewer.entries = {params.entries[0]};
  CHECK_THROWS_AS(apply(spec, fewer, input), ArgumentError);
}

TEST_CASE("gradients flow through the full pipeline to every leaf") {
  const NetworkSpec spec = dense_spec();
  const RngKey key = RngKey::from_seed(17);
  auto params = init<float>(spec, key.child(0),
                            Tensor<float>::zeros({2, 6, 6}));
  auto input = rng_bernoulli<float>(key.child(1), {2, 6, 6}, 0.4);

  Tape<float> tape;
  std::vector<Tape<float>::Id> ids;
  for (const auto& e : params.entries) ids.push_back(tape.leaf(e.tensor));
  auto fr = forward_taped(tape, spec, ids, tape.constant(input), 3);
  auto loss = tape.mean(fr.trace);
  tape.backward(loss);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto g = tape.grad(ids[i]);
    CHECK(g.same_shape(params.entries[i].tensor));
    // the readout path must carry signal at least into the last layers
    if (params.entries[i].name == "l2.w") {
      double mag = 0;
      for (std::size_t j = 0; j < g.size(); ++j) mag += std::abs(g[j]);
      CHECK(mag > 0.0);
    }
  }
}
