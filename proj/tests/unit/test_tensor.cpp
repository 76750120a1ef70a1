#include <doctest.h>

#include "bifuse/tensor.hpp"
#include "support/testing.hpp"

using namespace bifuse;
using namespace bifuse::testing;

namespace {

void check_grad(const std::function<Tensor()>& f, const std::vector<std::pair<std::string, Tensor>>& leaves) {
  const auto r = gradcheck(f, leaves);
  INFO("worst tensor: " << r.worst);
  CHECK(r.max_rel_error < 1e-6);
}

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
  Tensor a = random_tensor({3, 4}, 1, -1, 1, true);
  Tensor b = random_tensor({3, 4}, 2, 0.5, 1.5, true);
  check_grad([&] { return probe(a + b); }, {{"a", a}, {"b", b}});
  check_grad([&] { return probe(a - b); }, {{"a", a}, {"b", b}});
  check_grad([&] { return probe(a * b); }, {{"a", a}, {"b", b}});
  check_grad([&] { return probe(a / b); }, {{"a", a}, {"b", b}});
  check_grad([&] { return probe(square(a) * 3.0 + 1.0); }, {{"a", a}});
  check_grad([&] { return probe(sigmoid(a)); }, {{"a", a}});
  check_grad([&] { return probe(gelu(a)); }, {{"a", a}});
  check_grad([&] { return probe(abs(b)); }, {{"b", b}});
  check_grad([&] { return mean(a * b); }, {{"a", a}, {"b", b}});
}

TEST_CASE("shape ops route gradients") {
  Tensor a = random_tensor({4, 6}, 3, -1, 1, true);
  Tensor b = random_tensor({4, 2}, 4, -1, 1, true);
  check_grad([&] { return probe(slice_cols(a, 1, 3)); }, {{"a", a}});
  check_grad([&] { return probe(concat_cols({a, b})); }, {{"a", a}, {"b", b}});
  check_grad([&] { return probe(concat_rows({slice_rows(a, 2, 2), slice_rows(a, 0, 1)})); }, {{"a", a}});
  check_grad([&] { return probe(reshape(a, {2, 12})); }, {{"a", a}});
}

TEST_CASE("matmul agrees with a scalar triple loop") {
  Tensor a = random_tensor({3, 5}, 5), b = random_tensor({5, 2}, 6), bt = random_tensor({2, 5}, 7);
  Tensor c = matmul(a, b), ct = matmul(a, bt, true);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0, st = 0;
      for (std::size_t k = 0; k < 5; ++k) {
        s += a.at(i * 5 + k) * b.at(k * 2 + j);
        st += a.at(i * 5 + k) * bt.at(j * 5 + k);
      }
      CHECK(c.at(i * 2 + j) == doctest::Approx(s).epsilon(1e-12));
      CHECK(ct.at(i * 2 + j) == doctest::Approx(st).epsilon(1e-12));
    }
}

TEST_CASE("matrix ops match finite differences") {
  Tensor a = random_tensor({3, 4}, 8, -1, 1, true);
  Tensor w = random_tensor({4, 5}, 9, -1, 1, true);
  Tensor bias = random_tensor({5}, 10, -1, 1, true);
  Tensor g = random_tensor({4}, 11, 0.5, 1.5, true);
  Tensor be = random_tensor({4}, 12, -1, 1, true);
  check_grad([&] { return probe(matmul(a, w)); }, {{"a", a}, {"w", w}});
  check_grad([&] { return probe(matmul(a, a, true)); }, {{"a", a}});
  check_grad([&] { return probe(linear(a, w, bias)); }, {{"a", a}, {"w", w}, {"bias", bias}});
  check_grad([&] { return probe(softmax_rows(a)); }, {{"a", a}});
  check_grad([&] { return probe(layer_norm(a, g, be)); }, {{"a", a}, {"g", g}, {"be", be}});
}

TEST_CASE("fused multi-head attention matches the per-head composition") {
  Tensor q = random_tensor({3, 6}, 30, -1, 1, true);
  Tensor k = random_tensor({5, 6}, 31, -1, 1, true);
  Tensor v = random_tensor({5, 6}, 32, -1, 1, true);
  Tensor fused = multi_head_attention(q, k, v, 2);
  std::vector<Tensor> heads;
  for (std::size_t h = 0; h < 2; ++h) {
    Tensor s = mul_scalar(matmul(slice_cols(q, h * 3, 3), slice_cols(k, h * 3, 3), true), 1.0 / std::sqrt(3.0));
    heads.push_back(matmul(softmax_rows(s), slice_cols(v, h * 3, 3)));
  }
  Tensor ref = concat_cols(heads);
  for (std::size_t i = 0; i < ref.numel(); ++i) CHECK(fused.at(i) == doctest::Approx(ref.at(i)).epsilon(1e-12));
  check_grad([&] { return probe(multi_head_attention(q, k, v, 2)); }, {{"q", q}, {"k", k}, {"v", v}});
  check_grad([&] { return probe(multi_head_attention(q, k, v, 3)); }, {{"q", q}, {"k", k}, {"v", v}});
  CHECK_THROWS_AS(multi_head_attention(q, k, v, 4), ShapeError);
}

TEST_CASE("softmax rows sum to one and layer norm standardizes") {
  Tensor a = random_tensor({4, 7}, 13, -3, 3);
  Tensor s = softmax_rows(a);
  for (std::size_t r = 0; r < 4; ++r) {
    double t = 0;
    for (std::size_t c = 0; c < 7; ++c) t += s.at(r * 7 + c);
    CHECK(t == doctest::Approx(1.0).epsilon(1e-12));
  }
  Tensor n = layer_norm(a, Tensor::full({7}, 1.0), Tensor::zeros({7}));
  for (std::size_t r = 0; r < 4; ++r) {
    double m = 0, v = 0;
    for (std::size_t c = 0; c < 7; ++c) m += n.at(r * 7 + c) / 7;
    for (std::size_t c = 0; c < 7; ++c) v += (n.at(r * 7 + c) - m) * (n.at(r * 7 + c) - m) / 7;
    CHECK(m == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    CHECK(v == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("spatial ops: layout and gradients") {
  Tensor m = random_tensor({2, 3, 8}, 14, -1, 1, true);
  Tensor ps = pixel_shuffle(m, 2);
  REQUIRE(ps.shape() == Shape{4, 6, 2});
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 6; ++x)
      for (std::size_t c = 0; c < 2; ++c) {
        const std::size_t src = ((y / 2) * 3 + x / 2) * 8 + c * 4 + (y % 2) * 2 + (x % 2);
        CHECK(ps.at((y * 6 + x) * 2 + c) == m.at(src));
      }
  check_grad([&] { return probe(pixel_shuffle(m, 2)); }, {{"m", m}});

  Tensor up = upsample_nearest(m, 3);
  REQUIRE(up.shape() == Shape{6, 9, 8});
  CHECK(up.at((5 * 9 + 8) * 8 + 7) == m.at((1 * 3 + 2) * 8 + 7));
  check_grad([&] { return probe(upsample_nearest(m, 2)); }, {{"m", m}});

  Tensor img = random_tensor({5, 6}, 15, 0, 1, true);
  const std::vector<double> k{1, 2, 3, 4, 5, 6, 7, 8, 9};
  Tensor f = filter2d(img, k, 3, 3, 1);
  REQUIRE(f.shape() == Shape{5, 6});
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 6; ++x) {
      double s = 0;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          const int yy = y + i - 1, xx = x + j - 1;
          if (yy >= 0 && xx >= 0 && yy < 5 && xx < 6) s += k[static_cast<std::size_t>(i * 3 + j)] * img.at(static_cast<std::size_t>(yy * 6 + xx));
        }
      CHECK(f.at(static_cast<std::size_t>(y * 6 + x)) == doctest::Approx(s).epsilon(1e-12));
    }
  check_grad([&] { return probe(filter2d(img, k, 3, 3, 1)); }, {{"img", img}});
  check_grad([&] { return probe(filter2d(img, k, 3, 3, 0)); }, {{"img", img}});
}

TEST_CASE("no-grad mode records no history; detach cuts it") {
  Tensor a = random_tensor({2, 2}, 16, -1, 1, true);
  {
    NoGradGuard ng;
    CHECK_FALSE((a * a).requires_grad());
  }
  CHECK((a * a).requires_grad());
  CHECK_FALSE((a * a).detach().requires_grad());
}

TEST_CASE("shared subexpressions accumulate gradients") {
  Tensor a = Tensor::parameter({1}, {3.0});
  Tensor b = a * a;
  Tensor c = b + b * a;  // a^2 + a^3 -> 2a + 3a^2 = 33
  c.backward();
  CHECK(a.grad()[0] == doctest::Approx(33.0));
}

TEST_CASE("shape errors are reported") {
  Tensor a = Tensor::zeros({2, 3}), b = Tensor::zeros({3, 2});
  CHECK_THROWS_AS(a + b, ShapeError);
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
  CHECK_THROWS_AS(Tensor::zeros({2}).backward(), ShapeError);
}
