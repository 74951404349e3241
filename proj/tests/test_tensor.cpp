#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "mttu/gradcheck.hpp"
#include "mttu/gradsuite.hpp"
#include "mttu/ops.hpp"
#include "mttu/rng.hpp"

using namespace mttu;

TEST_CASE("matmul identity and hand values") {
  Tensor id = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::from({2, 2}, {3, 4, 5, 6});
  Tensor out = matmul(id, b);
  for (int i = 0; i < 4; ++i) CHECK(out.data()[i] == b.data()[i]);

  Tensor a = Tensor::from({1, 2}, {1, 2});
  Tensor c = Tensor::from({2, 1}, {3, 4});
  CHECK(matmul(a, c).item() == doctest::Approx(11.0).epsilon(1e-15));

  CHECK_THROWS_AS(matmul(c, b), DimensionError);
}

TEST_CASE("matmul gradient vs finite differences") {
  Rng rng(1);
  Tensor b = Tensor::zeros({5, 3});
  for (int i = 0; i < b.size(); ++i) b.data()[i] = rng.uniform(-1, 1);
  Tensor a = Tensor::zeros({4, 5});
  for (int i = 0; i < a.size(); ++i) a.data()[i] = rng.uniform(-1, 1);
  auto rep = gradcheck([&](const Tensor& x) { return sum(matmul(x, b)); }, a);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("softmax values and stability") {
  Tensor s = softmax(Tensor::from({1, 2}, {0, 0}));
  CHECK(s.data()[0] == doctest::Approx(0.5).epsilon(1e-15));

  Tensor big = softmax(Tensor::from({1, 2}, {1000, 0}));
  CHECK(std::abs(big.data()[0] - 1.0) < 1e-12);
  CHECK(std::abs(big.data()[1]) < 1e-12);

  Tensor t = softmax(Tensor::from({1, 3}, {1, 2, 3}));
  const double z = std::exp(-2.0) + std::exp(-1.0) + 1.0;
  CHECK(t.data()[0] == doctest::Approx(std::exp(-2.0) / z).epsilon(1e-12));
  CHECK(t.data()[2] == doctest::Approx(1.0 / z).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to 1 across extreme magnitudes") {
  Rng rng(2);
  for (int rep = 0; rep < 50; ++rep) {
    Tensor x = Tensor::zeros({4, 6});
    for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1e3, 1e3);
    Tensor s = softmax(x);
    for (int r = 0; r < 4; ++r) {
      double acc = 0;
      for (int c = 0; c < 6; ++c) {
        CHECK(s.data()[r * 6 + c] >= 0.0);
        acc += s.data()[r * 6 + c];
      }
      CHECK(std::abs(acc - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("sigmoid values, saturation, and gradient at 0") {
  CHECK(sigmoid(Tensor::scalar(0)).item() == doctest::Approx(0.5));
  CHECK(std::abs(sigmoid(Tensor::scalar(1500)).item() - 1.0) < 1e-12);
  CHECK(std::abs(sigmoid(Tensor::scalar(-1500)).item()) < 1e-12);

  Tensor x = Tensor::from({1}, {0.0}, /*requires_grad=*/true);
  backward(sum(sigmoid(x)));
  CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("layer_norm collapses constant rows and normalizes") {
  Tensor g = Tensor::full({4}, 1.0), b = Tensor::zeros({4});
  Tensor c = layer_norm(Tensor::from({1, 4}, {5, 5, 5, 5}), g, b);
  for (int i = 0; i < 4; ++i) CHECK(std::abs(c.data()[i]) < 1e-9);

  Tensor g2 = Tensor::full({2}, 1.0), b2 = Tensor::zeros({2});
  Tensor t = layer_norm(Tensor::from({1, 2}, {1, -1}), g2, b2);
  CHECK(t.data()[0] == doctest::Approx(1.0).epsilon(1e-2));
  CHECK(t.data()[1] == doctest::Approx(-1.0).epsilon(1e-2));

  Rng rng(3);
  Tensor x = Tensor::zeros({1, 32});
  for (int i = 0; i < 32; ++i) x.data()[i] = rng.uniform(-2, 2);
  Tensor g3 = Tensor::full({32}, 1.0), b3 = Tensor::zeros({32});
  Tensor y = layer_norm(x, g3, b3);
  double mean = 0, var = 0;
  for (int i = 0; i < 32; ++i) mean += y.data()[i];
  mean /= 32;
  for (int i = 0; i < 32; ++i) var += (y.data()[i] - mean) * (y.data()[i] - mean);
  var /= 32;
  CHECK(std::abs(mean) < 1e-9);
  CHECK(std::abs(var - 1.0) < 1e-3);

  CHECK_THROWS_AS(layer_norm(x, g2, b2), DimensionError);
}

TEST_CASE("bilinear resize is exact on constants") {
  Tensor x = Tensor::full({1, 8, 8}, 7.0);
  Tensor y = bilinear_resize(x, 16, 16);
  for (int i = 0; i < y.size(); ++i)
    CHECK(y.data()[i] == doctest::Approx(7.0).epsilon(1e-12));
}

TEST_CASE("concat shape arithmetic") {
  Tensor a = Tensor::zeros({2, 3}), b = Tensor::zeros({2, 5});
  Tensor c = concat_cols({a, b});
  CHECK(c.dim(0) == 2);
  CHECK(c.dim(1) == 8);
}

TEST_CASE("conv2d gradient vs finite differences") {
  Rng rng(4);
  Tensor w = Tensor::zeros({1, 4, 3, 3});
  Tensor b = Tensor::zeros({1});
  for (int i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-0.5, 0.5);
  Tensor x = Tensor::zeros({4, 5, 5});
  for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1, 1);
  auto rep =
      gradcheck([&](const Tensor& t) { return sum(conv2d(t, w, b, 1, 1)); }, x);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("backward basics") {
  Tensor x = Tensor::from({1}, {3.0}, /*requires_grad=*/true);
  backward(mul(x, x));
  CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-15));

  Tensor y = Tensor::from({1}, {3.0}, /*requires_grad=*/true);
  backward(Tensor::scalar(2.0));  // constant loss, y unreachable
  CHECK_FALSE(y.has_grad());

  CHECK_THROWS_AS(backward(Tensor::zeros({2})), ContractError);
}

TEST_CASE("backward accumulates across calls") {
  Tensor x = Tensor::from({1}, {3.0}, /*requires_grad=*/true);
  Tensor loss = mul(x, x);
  backward(loss);
  loss.zero_grad();
  Tensor loss2 = mul(x, x);
  backward(loss2);
  CHECK(x.grad()[0] == doctest::Approx(12.0).epsilon(1e-15));
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(5);
  Tensor x0 = Tensor::zeros({6});
  for (int i = 0; i < 6; ++i) x0.data()[i] = rng.uniform(-1, 1);

  auto grad_of = [&](double a, double b) {
    Tensor x = Tensor::from({6}, x0.values(), /*requires_grad=*/true);
    Tensor f = sum(mul(x, x));
    Tensor g = dot(x, Tensor::full({6}, 1.0));
    backward(add(mul_scalar(f, a), mul_scalar(g, b)));
    return x.grad();
  };
  auto gf = grad_of(1, 0), gg = grad_of(0, 1), gc = grad_of(2.5, -1.5);
  for (int i = 0; i < 6; ++i)
    CHECK(std::abs(gc[i] - (2.5 * gf[i] - 1.5 * gg[i])) < 1e-12);
}

TEST_CASE("gradcheck on x^2 and a softmax cross-entropy chain") {
  auto rep = gradcheck([](const Tensor& x) { return mul(x, x); },
                       Tensor::from({1}, {3.0}));
  CHECK(rep.max_rel_err < 1e-8);

  Rng rng(6);
  Tensor logits = Tensor::zeros({4});
  for (int i = 0; i < 4; ++i) logits.data()[i] = rng.uniform(-2, 2);
  auto rep2 = gradcheck(
      [](const Tensor& x) { return cls_cross_entropy(x, 2); }, logits);
  CHECK(rep2.max_rel_err < 1e-6);
}

TEST_CASE("gradcheck negative control flags a wrong gradient") {
  auto results = run_gradcheck_suite(1, 1e-4, 77, /*inject_bug=*/true);
  bool saw_control = false;
  for (const auto& r : results)
    if (r.name == "negative_control_broken_gradient") {
      saw_control = true;
      CHECK_FALSE(r.report.passed);
      CHECK(r.report.max_rel_err > 1e-2);
    } else {
      CHECK(r.report.passed);
    }
  CHECK(saw_control);
}

TEST_CASE("forward and gradients are deterministic") {
  auto run = [] {
    Rng rng(7);
    Tensor x = Tensor::zeros({3, 3}, /*requires_grad=*/true);
    for (int i = 0; i < 9; ++i) x.data()[i] = rng.uniform(-1, 1);
    Tensor w = Tensor::zeros({3, 3});
    for (int i = 0; i < 9; ++i) w.data()[i] = rng.uniform(-1, 1);
    Tensor loss = sum(relu(matmul(x, w)));
    backward(loss);
    auto out = x.grad();
    out.push_back(loss.item());
    return out;
  };
  auto a = run(), b = run();
  CHECK(a == b);  // bitwise
}

TEST_CASE("non-finite results halt the step") {
  Tensor a = Tensor::full({2}, 1e308);
  CHECK_THROWS_AS(add(a, a), NumericError);
  Tensor z = Tensor::zeros({1});
  CHECK_THROWS_AS(div(Tensor::full({1}, 1.0), z), NumericError);
}
