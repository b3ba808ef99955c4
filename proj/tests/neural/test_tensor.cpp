#include <doctest.h>

#include "gradcheck.hpp"
#include "voxdet/ops.hpp"

using namespace voxdet;
using namespace voxdet::nn;

TEST_CASE("backward basics") {
  SUBCASE("sum gives ones") {
    auto w = Tensor::from({3}, {0.5f, -1.0f, 2.0f}, true);
    backward(sum(w));
    CHECK(std::vector<float>(w.grad().begin(), w.grad().end()) == std::vector<float>{1, 1, 1});
  }
  SUBCASE("sum of squares") {
    auto w = Tensor::from({2}, {1.0f, 2.0f}, true);
    backward(sum(mul(w, w)));
    CHECK(w.grad()[0] == 2.0f);
    CHECK(w.grad()[1] == 4.0f);
  }
  SUBCASE("repeated backward accumulates into leaves") {
    auto w = Tensor::from({2}, {1.0f, 2.0f}, true);
    auto loss = sum(mul(w, w));
    backward(loss);
    backward(loss);
    CHECK(w.grad()[0] == 4.0f);
    CHECK(w.grad()[1] == 8.0f);
    w.zero_grad();
    CHECK(w.grad()[1] == 0.0f);
  }
  SUBCASE("shared subexpressions sum their contributions") {
    auto w = Tensor::from({1}, {3.0f}, true);
    auto y = scale(w, 2.0f);
    backward(sum(add(y, mul(y, y))));  // d/dw (2w + 4w^2) = 2 + 8w
    CHECK(w.grad()[0] == doctest::Approx(26.0));
  }
  SUBCASE("errors") {
    CHECK_THROWS_WITH_AS(backward(sum(Tensor::from({2}, {1, 2}))), "NotOnTape", AutodiffError);
    CHECK_THROWS_AS(backward(Tensor::from({2}, {1, 2}, true)), AutodiffError);
    CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), AutodiffError);
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), AutodiffError);
    CHECK_THROWS_AS(Tensor().shape(), AutodiffError);
  }
  SUBCASE("no-grad mode records nothing") {
    auto w = Tensor::from({2}, {1, 2}, true);
    Tensor out;
    {
      NoGradGuard guard;
      out = sum(w);
    }
    CHECK_FALSE(out.requires_grad());
    CHECK(grad_enabled());
  }
}

TEST_CASE("stop_gradient contributes nothing") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = Tensor::from({4}, testing::random_weights(rng, 4), true);
    auto y = Tensor::from({4}, testing::random_weights(rng, 4), true);
    // loss = sum(x*y) + sum(stop(x)*x): the stopped branch adds only y-independent
    // terms through the live x, never through the stopped copy.
    auto loss = add(sum(mul(stop_gradient(x), y)), sum(mul(stop_gradient(y), stop_gradient(x))));
    backward(loss);
    CHECK_FALSE(x.has_grad());
    for (int i = 0; i < 4; ++i) CHECK(y.grad()[i] == x.data()[i]);
    auto z = stop_gradient(x);
    CHECK(std::equal(z.data().begin(), z.data().end(), x.data().begin()));
    CHECK_FALSE(z.requires_grad());
  }
}

TEST_CASE("primitive ops pass finite-difference checks") {
  Rng rng(2024);
  auto make = [&](Shape s, double lo, double hi) {
    std::vector<float> v(static_cast<std::size_t>(shape_numel(s)));
    for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
    return Tensor::from(s, v, true);
  };
  const Shape shape{2, 3, 4};
  auto a = make(shape, -2, 2);
  auto b = make(shape, -2, 2);
  // Keep leaky-relu inputs away from the kink.
  auto c = make(shape, 0.05, 2);
  for (std::size_t i = 0; i < 12; ++i) c.data()[i] = -c.data()[i];

  struct Case {
    std::string name;
    std::function<Tensor()> f;
    std::vector<Tensor> params;
    testing::Reference reference = {};
  };
  // Scalar reductions round their single output to f32, so they get
  // double-precision references.
  auto mean_ref = [&](const std::vector<float>& w) {
    double acc = 0;
    for (float v : a.data()) acc += v;
    return w[0] * acc / static_cast<double>(a.numel());
  };
  auto mse_ref = [&](const std::vector<float>& w) {
    double acc = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
      const double d = static_cast<double>(a.data()[i]) - b.data()[i];
      acc += d * d;
    }
    return w[0] * acc / static_cast<double>(a.numel());
  };
  std::vector<Case> cases = {
      {"add", [&] { return add(a, b); }, {a, b}},
      {"sub", [&] { return sub(a, b); }, {a, b}},
      {"mul", [&] { return mul(a, b); }, {a, b}},
      {"scale", [&] { return scale(a, -1.7f); }, {a}},
      {"softplus", [&] { return softplus(a); }, {a}},
      {"sigmoid", [&] { return sigmoid(a); }, {a}},
      {"leaky_relu", [&] { return leaky_relu(c); }, {c}},
      {"mean", [&] { return mean(a); }, {a}, mean_ref},
      {"mse", [&] { return mse(a, b); }, {a, b}, mse_ref},
      {"narrow", [&] { return narrow(a, 1, 1, 2); }, {a}},
      {"reshape", [&] { return reshape(a, {6, 4}); }, {a}},
  };
  for (auto& cs : cases) {
    CAPTURE(cs.name);
    auto r = testing::check_gradients(cs.f, cs.params, 40, rng, cs.reference);
    CAPTURE(r.worst);
    CHECK(r.passed == r.probed);
  }
}

TEST_CASE("op values") {
  auto x = Tensor::from({3}, {-30.0f, 0.0f, 30.0f});
  auto sp = softplus(x);
  CHECK(sp.data()[0] == doctest::Approx(std::exp(-30.0)).epsilon(1e-4));
  CHECK(sp.data()[1] == doctest::Approx(std::log(2.0)));
  CHECK(sp.data()[2] == doctest::Approx(30.0));
  auto sg = sigmoid(x);
  CHECK(sg.data()[1] == 0.5f);
  CHECK(sg.data()[2] <= 1.0f);
  auto lr = leaky_relu(Tensor::from({2}, {-2.0f, 3.0f}));
  CHECK(lr.data()[0] == doctest::Approx(-0.02));
  CHECK(lr.data()[1] == 3.0f);
  CHECK(mse(Tensor::zeros({2, 2}), Tensor::full({2, 2}, 1.0f)).item() == 1.0f);
  auto n = narrow(Tensor::from({2, 3}, {0, 1, 2, 3, 4, 5}), 1, 1, 2);
  CHECK(std::vector<float>(n.data().begin(), n.data().end()) == std::vector<float>{1, 2, 4, 5});
}

TEST_CASE("tape determinism") {
  auto run = [] {
    Rng rng(99);
    auto w = Tensor::from({64}, testing::random_weights(rng, 64), true);
    auto loss = mean(softplus(mul(w, w)));
    backward(loss);
    return std::make_pair(loss.item(), std::vector<float>(w.grad().begin(), w.grad().end()));
  };
  CHECK(run() == run());
}
