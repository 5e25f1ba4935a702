#include <catch2/catch_amalgamated.hpp>

#include "spiketrain/tensor.hpp"

using namespace spiketrain;

TEST_CASE("shape_numel multiplies extents, empty shape is scalar") {
  CHECK(shape_numel({}) == 1);
  CHECK(shape_numel({4}) == 4);
  CHECK(shape_numel({2, 3, 5}) == 30);
  CHECK(shape_numel({2, 0, 5}) == 0);
}

TEST_CASE("constructors fill as documented") {
  auto z = Tensor<float>::zeros({2, 3});
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(z[i] == 0.0f);
  auto f = Tensor<double>::full({4}, 2.5);
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(f[i] == 2.5);
  auto o = Tensor<int>::ones({3});
  CHECK(o[0] + o[1] + o[2] == 3);
  auto s = Tensor<double>::scalar(7.0);
  CHECK(s.ndim() == 0);
  CHECK(s.size() == 1);
  CHECK(s[0] == 7.0);
}

TEST_CASE("from validates element count") {
  auto t = Tensor<int>::from({2, 2}, {1, 2, 3, 4});
  CHECK(t[3] == 4);
  CHECK_THROWS_AS(Tensor<int>::from({2, 2}, {1, 2, 3}), ShapeError);
}

TEST_CASE("reshape shares storage, clone does not") {
  auto t = Tensor<int>::from({2, 3}, {0, 1, 2, 3, 4, 5});
  auto v = t.reshape({3, 2});
  v[0] = 99;
  CHECK(t[0] == 99);
  auto c = t.clone();
  c[0] = -1;
  CHECK(t[0] == 99);
  CHECK_THROWS_AS(t.reshape({4}), ShapeError);
}

TEST_CASE("equality and distance helpers") {
  auto a = Tensor<double>::from({3}, {1.0, 2.0, 3.0});
  auto b = Tensor<double>::from({3}, {1.0, 2.0, 3.0});
  auto c = Tensor<double>::from({3}, {1.0, 2.0, 3.5});
  CHECK(tensor_equal(a, b));
  CHECK_FALSE(tensor_equal(a, c));
  CHECK(max_abs_diff(a, c) == 0.5);
  CHECK(allclose(a, b));
  CHECK_FALSE(allclose(a, c, 0.25));
  CHECK_THROWS_AS(max_abs_diff(a, Tensor<double>::zeros({2})), ShapeError);
}

TEST_CASE("cast converts element type") {
  auto a = Tensor<float>::from({2}, {1.5f, -2.0f});
  auto d = cast<double>(a);
  CHECK(d[0] == 1.5);
  auto i = cast<int>(a);
  CHECK(i[0] == 1);
  CHECK(i[1] == -2);
}
