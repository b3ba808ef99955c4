#include <doctest.h>

#include <filesystem>
#include <unistd.h>

#include "gradcheck.hpp"
#include "support.hpp"
#include "voxdet/binary_io.hpp"
#include "voxdet/guidance.hpp"
#include "voxdet/ops.hpp"

using namespace voxdet;
using nn::Tensor;

namespace {

ReferenceShape random_shape(Rng& rng, int k) {
  std::vector<float> d(k * k * k), a(3 * k * k * k);
  for (auto& v : d) v = static_cast<float>(rng.uniform() < 0.4 ? rng.uniform(0.0, 20.0) : 0.0);
  for (auto& v : a) v = static_cast<float>(rng.uniform());
  return {Tensor::from({k, k, k}, d), Tensor::from({3, k, k, k}, a)};
}

GuidanceRequest request_for(const ReferenceShape& shape, int n = 4, int size = 16) {
  GuidanceRequest r;
  for (int i = 0; i < n; ++i) {
    r.cameras.push_back(orbit_camera(90.0 * i + 15.0, 20.0, 2.0, 50.0, size, size));
    r.views.push_back(render(shape.density, shape.albedo, r.cameras.back(), r.render_options).rgb);
  }
  return r;
}

bool same(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("voxdet_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

TEST_CASE("prompt spec") {
  CHECK_THROWS_WITH_AS(PromptSpec(""), doctest::Contains("EmptyPrompt"), GuidanceError);
  // FNV-1a reference values.
  CHECK(PromptSpec("a").id() == 0xaf63dc4c8601ec8cULL);
  CHECK(PromptSpec("foobar").id() == 0x85944171f73967e8ULL);
  CHECK(PromptSpec("a chair").id() == PromptSpec("a chair", {"front view"}).id());
}

TEST_CASE("request validation") {
  Rng rng(1);
  auto r = request_for(random_shape(rng, 4), 2, 8);
  CHECK_NOTHROW(r.validate());
  auto bad = r;
  bad.views[1] = Tensor::zeros({8, 9, 3});
  CHECK_THROWS_WITH_AS(NullGuidance().denoise(bad), doctest::Contains("ResolutionMismatch"), GuidanceError);
  bad = r;
  bad.cameras[0] = orbit_camera(0, 0, 2, 50, 16, 16);
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("ResolutionMismatch"), GuidanceError);
  bad = r;
  bad.cameras.pop_back();
  CHECK_THROWS_AS(bad.validate(), GuidanceError);
  bad = r;
  bad.t = 1.5;
  CHECK_THROWS_AS(bad.validate(), GuidanceError);
}

TEST_CASE("null guidance returns the views") {
  Rng rng(2);
  const auto r = request_for(random_shape(rng, 6));
  const auto t = NullGuidance().denoise(r);
  REQUIRE(t.images.size() == r.views.size());
  for (std::size_t i = 0; i < r.views.size(); ++i) {
    CHECK(same(t.images[i], r.views[i]));
    CHECK_FALSE(t.images[i].requires_grad());
  }
  CHECK(sds_loss(r.views, t).item() == 0.0f);
}

TEST_CASE("target match oracle is a fixed point at its own reference") {
  Rng rng(3);
  const auto shape = random_shape(rng, 6);
  const TargetMatchOracle oracle(shape);
  const auto r = request_for(shape);
  const auto t = oracle.denoise(r);
  for (std::size_t i = 0; i < r.views.size(); ++i) CHECK(same(t.images[i], r.views[i]));
  CHECK(sds_loss(r.views, t).item() == 0.0f);

  // Any other shape scores strictly worse.
  for (int trial = 0; trial < 3; ++trial) {
    const auto other = request_for(random_shape(rng, 6));
    CHECK(sds_loss(other.views, oracle.denoise(other)).item() > 0.0f);
  }
}

TEST_CASE("target match oracle keys references by subject") {
  Rng rng(4);
  const auto a = random_shape(rng, 4), b = random_shape(rng, 4);
  TargetMatchOracle oracle;
  oracle.add("a", a);
  oracle.add("b", b);
  auto r = request_for(a, 2, 8);
  r.subject = "b";
  const auto tb = oracle.denoise(r);
  const auto rb = request_for(b, 2, 8);
  CHECK(same(tb.images[0], rb.views[0]));
  r.subject = "c";
  CHECK_THROWS_WITH_AS(oracle.denoise(r), doctest::Contains("UnknownSubject"), GuidanceError);
  oracle.add("", a);
  CHECK(same(oracle.denoise(r).images[1], r.views[1]));
}

TEST_CASE("procedural stylizer") {
  Rng rng(5);
  auto r = request_for(random_shape(rng, 6));
  r.prompt = PromptSpec("a wooden chair");
  r.t = 0.7;
  ProceduralStylizer::Options o;
  o.noise = 0.05;
  const ProceduralStylizer s(o);
  const auto t1 = s.denoise(r), t2 = s.denoise(r);
  for (std::size_t i = 0; i < t1.images.size(); ++i) {
    CHECK(same(t1.images[i], t2.images[i]));
    for (float v : t1.images[i].data()) CHECK((v >= 0.0f && v <= 1.0f));
  }
  CHECK(sds_loss(r.views, t1).item() > 0.0f);

  auto other = r;
  other.prompt = PromptSpec("a stone castle");
  CHECK_FALSE(same(s.denoise(other).images[0], t1.images[0]));
  auto reseeded = r;
  reseeded.seed = 77;
  CHECK_FALSE(same(s.denoise(reseeded).images[0], t1.images[0]));

  // No mixing, sharpening or noise leaves the views untouched.
  auto calm = r;
  calm.t = 0.0;
  const ProceduralStylizer identity({0.6, 0.0, 0.0});
  const auto ti = identity.denoise(calm);
  for (std::size_t i = 0; i < ti.images.size(); ++i) CHECK(same(ti.images[i], r.views[i]));

  // Full mix onto a flat view gives the palette color for its luminance.
  GuidanceRequest flat;
  flat.prompt = PromptSpec("x");
  flat.t = 1.0;
  flat.cameras = {orbit_camera(0, 0, 2, 50, 4, 4)};
  flat.views = {Tensor::full({4, 4, 3}, 0.0f)};
  const auto tf = ProceduralStylizer({1.0, 0.0, 0.0}).denoise(flat);
  const auto dark = ProceduralStylizer::palette(flat.prompt)[0];
  for (int c = 0; c < 3; ++c) CHECK(tf.images[0].data()[c] == doctest::Approx(dark[c]));
}

TEST_CASE("oracle factory") {
  CHECK(make_oracle("null", {})->name() == "null");
  CHECK(make_oracle("procedural_stylizer", {{"strength", "0.3"}})->name() == "procedural_stylizer");
  CHECK_THROWS_AS(make_oracle("procedural_stylizer", {{"strength", "abc"}}), GuidanceError);
  CHECK_THROWS_AS(make_oracle("mvdream", {}), GuidanceError);
  CHECK_THROWS_AS(make_oracle("target_match", {}), GuidanceError);

  OccupancyGrid g(Dims::cube(4));
  g.set(1, 1, 1, true);
  const auto path = temp_path("ref.artv");
  save_artv(g, path);
  const auto oracle = make_oracle("target_match", {{"density", path.string()}, {"occupied_density", "7"}});
  CHECK(oracle->name() == "target_match");
  const auto shape = ReferenceShape::load(path, {}, 7.0f);
  CHECK(shape.density.data()[(1 * 4 + 1) * 4 + 1] == 7.0f);
  CHECK(shape.density.data()[0] == 0.0f);
  std::filesystem::remove(path);
}

TEST_CASE("ARTF round trip and errors") {
  FloatField f;
  f.dims = {2, 3, 4};
  f.channels = 3;
  for (int i = 0; i < 72; ++i) f.values.push_back(0.25f * i);
  const std::string bytes = encode_artf(f);
  CHECK(bytes.substr(0, 4) == "ARTF");
  CHECK(bytes.size() == 24 + 72 * 4);
  const auto back = decode_artf(bytes);
  CHECK(back.dims == f.dims);
  CHECK(back.channels == 3);
  CHECK(back.values == f.values);
  CHECK_THROWS_AS(decode_artf(bytes.substr(0, bytes.size() - 1)), FormatError);
  CHECK_THROWS_AS(decode_artf("ARTV" + bytes.substr(4)), FormatError);
  f.values.pop_back();
  CHECK_THROWS_AS(encode_artf(f), FormatError);

  FloatField d{Dims::cube(2), 1, std::vector<float>(8, 1.0f)};
  FloatField a{Dims::cube(2), 3, std::vector<float>(24, 0.5f)};
  CHECK_NOTHROW(ReferenceShape::from_fields(d, a));
  a.values[0] = 2.0f;
  CHECK_THROWS_AS(ReferenceShape::from_fields(d, a), GuidanceError);
  CHECK_THROWS_AS(ReferenceShape::from_fields(d, d), GuidanceError);
}

TEST_CASE("sds loss values and gradient") {
  GuidanceTargets ones{{Tensor::full({2, 2, 3}, 1.0f)}};
  CHECK(sds_loss({Tensor::zeros({2, 2, 3})}, ones).item() == 1.0f);
  CHECK_THROWS_AS(sds_loss({Tensor::zeros({2, 3, 3})}, ones), nn::AutodiffError);
  CHECK_THROWS_AS(sds_loss({}, GuidanceTargets{}), nn::AutodiffError);

  Rng rng(6);
  auto x = Tensor::from({3, 2, 3}, testing::random_weights(rng, 18), true);
  auto y = Tensor::from({3, 2, 3}, testing::random_weights(rng, 18), true);
  auto target = Tensor::from({3, 2, 3}, testing::random_weights(rng, 18), true);
  GuidanceTargets t{{target, target}};
  nn::backward(sds_loss({x, y}, t));
  // Mean over 2 views of the per-view mean over P = 18 entries.
  for (int i = 0; i < 18; ++i)
    CHECK(x.grad()[i] == doctest::Approx(2.0 * (x.data()[i] - target.data()[i]) / 18 / 2));
  CHECK_FALSE(target.has_grad());

  auto reference = [&](const std::vector<float>& w) {
    double acc = 0.0;
    for (int i = 0; i < 18; ++i) {
      const double a = x.data()[i] - target.data()[i], b = y.data()[i] - target.data()[i];
      acc += (a * a + b * b) / 18.0 / 2.0;
    }
    return acc * w[0];
  };
  const auto r = testing::check_gradients([&] { return sds_loss({x, y}, t); }, {x, y}, 20, rng, reference);
  CHECK(r.passed == r.probed);
}

TEST_CASE("reg loss") {
  MaskImage ones(3, 2, 1, 1.0f), zeros(3, 2, 1, 0.0f);
  CHECK(reg_loss({Tensor::full({2, 3}, 1.0f)}, {ones}).item() == 0.0f);
  CHECK(reg_loss({Tensor::zeros({2, 3})}, {ones}).item() == 1.0f);
  CHECK_THROWS_AS(reg_loss({Tensor::zeros({3, 2})}, {ones}), nn::AutodiffError);
  CHECK_THROWS_AS(reg_loss({Tensor::zeros({2, 3})}, {}), nn::AutodiffError);

  Rng rng(7);
  MaskImage a(4, 4, 1), b(4, 4, 1);
  for (auto& v : a.pixels) v = static_cast<float>(rng.uniform());
  for (auto& v : b.pixels) v = static_cast<float>(rng.uniform());
  const float ab = reg_loss({Tensor::from({4, 4}, a.pixels)}, {b}).item();
  const float ba = reg_loss({Tensor::from({4, 4}, b.pixels)}, {a}).item();
  CHECK(ab == ba);
}

TEST_CASE("total loss") {
  CHECK(total_loss(Tensor::scalar(0.5f), Tensor::scalar(0.1f), 10.0).item() == doctest::Approx(1.5));
  CHECK(total_loss(Tensor::scalar(0.37f), Tensor::scalar(123.0f), 0.0).item() == 0.37f);
  CHECK_THROWS_AS(total_loss(Tensor::scalar(0.0f), Tensor::scalar(0.0f), -1.0), GuidanceError);

  std::vector<float> grads;
  for (double lambda : {1.0, 3.0}) {
    auto m = Tensor::from({2, 2}, {0.1f, 0.2f, 0.9f, 0.4f}, true);
    MaskImage ref(2, 2, 1, 0.5f);
    nn::backward(total_loss(Tensor::scalar(0.0f), reg_loss({m}, {ref}), lambda));
    grads.push_back(m.grad()[0]);
  }
  CHECK(grads[1] == doctest::Approx(3.0 * grads[0]));
}
