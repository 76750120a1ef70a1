#include <doctest.h>

#include "bifuse/losses.hpp"
#include "support/oracles.hpp"
#include "support/testing.hpp"

using namespace bifuse;
using namespace bifuse::testing;

namespace {

oracle::Plane plane(const Tensor& t) {
  return {static_cast<int>(t.dim(0)), static_cast<int>(t.dim(1)), {t.value().begin(), t.value().end()}};
}

LossConfig window(std::size_t n) {
  LossConfig c;
  c.ssim_window = n;
  return c;
}

}  // namespace

TEST_CASE("reconstruction loss examples") {
  const Tensor a = random_tensor({4, 4, 1}, 1, 0, 1);
  const Tensor b = random_tensor({4, 4, 3}, 2, 0, 1);
  CHECK(reconstruction_loss(a, a, b, b).parts.total == 0.0);
  const auto l = reconstruction_loss(Tensor::zeros({4, 4, 1}), Tensor::full({4, 4, 1}, 1.0), Tensor::zeros({2, 2, 3}),
                                     Tensor::full({2, 2, 3}, 1.0));
  CHECK(l.parts.terms.at("recon_x") == 1.0);
  CHECK(l.parts.terms.at("recon_y") == 1.0);
  CHECK(l.parts.total == 2.0);
  CHECK_THROWS_AS(reconstruction_loss(a, b, b, b), ShapeError);
}

TEST_CASE("reconstruction loss matches an elementwise loop") {
  const Tensor rx = random_tensor({4, 4, 1}, 3, 0, 1), ix = random_tensor({4, 4, 1}, 4, 0, 1);
  const Tensor ry = random_tensor({4, 4, 1}, 5, 0, 1), iy = random_tensor({4, 4, 1}, 6, 0, 1);
  double ex = 0, ey = 0;
  for (std::size_t i = 0; i < 16; ++i) {
    ex += std::abs(rx.at(i) - ix.at(i)) / 16;
    ey += std::abs(ry.at(i) - iy.at(i)) / 16;
  }
  const auto l = reconstruction_loss(rx, ix, ry, iy);
  CHECK(l.parts.terms.at("recon_x") == doctest::Approx(ex).epsilon(1e-12));
  CHECK(l.parts.terms.at("recon_y") == doctest::Approx(ey).epsilon(1e-12));
  CHECK(l.parts.total == doctest::Approx(ex + ey).epsilon(1e-12));
}

TEST_CASE("fusion loss vanishes on identical images") {
  const Tensor i = to_tensor(textured_image(16, 16, 7));
  const auto l = fusion_loss(i, i, i, window(7));
  CHECK(l.parts.total == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
}

TEST_CASE("constant offset: intensity equals the offset, no gradient term") {
  const Tensor f = to_tensor(textured_image(16, 16, 8, 0.0)) * 0.8;
  const Tensor s = f + 0.1;
  const auto l = fusion_loss(f, s, s, window(7));
  CHECK(l.parts.terms.at("intensity") == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(l.parts.terms.at("gradient") == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  CHECK(l.parts.terms.at("ssim") > 0.0);
  CHECK(l.parts.terms.at("ssim") < 0.05);
}

TEST_CASE("fusion terms match the scalar oracle on random 8x8 triples") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Tensor f = random_tensor({8, 8}, 100 + s, 0, 1);
    const Tensor x = random_tensor({8, 8}, 200 + s, 0, 1);
    const Tensor y = random_tensor({8, 8}, 300 + s, 0, 1);
    const auto l = fusion_loss(f, x, y, window(7));
    const auto o = oracle::fusion_terms(plane(f), plane(x), plane(y), 7, 1.5);
    CHECK(l.parts.terms.at("intensity") == doctest::Approx(o.intensity).epsilon(1e-5));
    CHECK(l.parts.terms.at("gradient") == doctest::Approx(o.gradient).epsilon(1e-5));
    CHECK(l.parts.terms.at("ssim") == doctest::Approx(o.ssim).epsilon(1e-5));
    CHECK(l.parts.total == doctest::Approx(o.intensity + o.gradient + o.ssim).epsilon(1e-6));
  }
}

TEST_CASE("breakdown total is the weighted sum of terms") {
  LossConfig w = window(5);
  w.intensity = 2.0;
  w.gradient = 0.5;
  w.ssim = 3.0;
  const auto l = fusion_loss(random_tensor({8, 8}, 1, 0, 1), random_tensor({8, 8}, 2, 0, 1), random_tensor({8, 8}, 3, 0, 1), w);
  double s = 0;
  for (const auto& [k, v] : l.parts.terms) {
    CHECK(v >= 0.0);
    s += l.parts.weights.at(k) * v;
  }
  CHECK(l.parts.total == doctest::Approx(s).epsilon(1e-6));
}

TEST_CASE("ssim examples") {
  const Tensor a = to_tensor(textured_image(16, 16, 9));
  CHECK(ssim(a, a).item() == doctest::Approx(1.0).epsilon(1e-12));
  const Tensor c = Tensor::full({12, 12}, 0.3);
  CHECK(ssim(c, c).item() == doctest::Approx(1.0).epsilon(1e-12));

  Tensor bimodal = random_tensor({16, 16}, 10, 0, 1);
  for (auto& v : bimodal.mutable_value()) v = v < 0.5 ? 0.0 : 1.0;
  const Tensor inv = Tensor::full({16, 16}, 1.0) - bimodal;
  const double s = ssim(bimodal, inv).item();
  CHECK(s < 0.0);
  CHECK(s == doctest::Approx(oracle::ssim(plane(bimodal), plane(inv))).epsilon(1e-9));
  CHECK_THROWS_AS(ssim(Tensor::zeros({8, 8}), Tensor::zeros({8, 8})), ShapeError);
}

TEST_CASE("sobel magnitude matches the oracle") {
  const Tensor p = random_tensor({6, 7}, 11, 0, 1);
  const auto o = oracle::sobel(plane(p));
  const Tensor s = sobel_magnitude(p);
  for (std::size_t i = 0; i < o.v.size(); ++i) CHECK(s.at(i) == doctest::Approx(o.v[i]).epsilon(1e-12));
}

TEST_CASE("fusion loss is symmetric in the sources") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Tensor f = random_tensor({10, 10}, 400 + s, 0, 1);
    const Tensor x = random_tensor({10, 10}, 500 + s, 0, 1), y = random_tensor({10, 10}, 600 + s, 0, 1);
    CHECK(fusion_loss(f, x, y, window(7)).parts.total ==
          doctest::Approx(fusion_loss(f, y, x, window(7)).parts.total).epsilon(1e-12));
  }
}

TEST_CASE("loss gradients match finite differences") {
  Tensor f = random_tensor({8, 8}, 12, 0.1, 0.9, true);
  // Sources kept far from f so that absolute values and the max target stay
  // away from their kinks.
  const Tensor x = random_tensor({8, 8}, 13, 0, 1), y = random_tensor({8, 8}, 14, 0, 1);
  const auto r1 = gradcheck([&] { return fusion_loss(f, x, y, window(5)).value; }, {{"fused", f}}, 1e-6, 64);
  CHECK(r1.max_rel_error < 1e-4);
  Tensor rx = random_tensor({4, 4, 1}, 15, 0, 1, true), ry = random_tensor({4, 4, 3}, 16, 0, 1, true);
  const Tensor tx = random_tensor({4, 4, 1}, 17, 0, 1), ty = random_tensor({4, 4, 3}, 18, 0, 1);
  const auto r2 = gradcheck([&] { return reconstruction_loss(rx, tx, ry, ty).value; }, {{"rec_x", rx}, {"rec_y", ry}});
  CHECK(r2.max_rel_error < 1e-4);
  const Tensor b = random_tensor({8, 8}, 19, 0, 1);
  const auto r3 = gradcheck([&] { return ssim(f, b, 5); }, {{"a", f}});
  CHECK(r3.max_rel_error < 1e-4);
}
