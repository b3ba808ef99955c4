#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxdet/camera.hpp"
#include "voxdet/field.hpp"
#include "voxdet/image.hpp"
#include "voxdet/render.hpp"
#include "voxdet/tensor.hpp"

namespace voxdet {

class GuidanceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PromptSpec {
  std::string text;
  std::vector<std::string> view_suffixes;  // e.g. "front view", one per camera

  // Throws GuidanceError("EmptyPrompt").
  explicit PromptSpec(std::string text, std::vector<std::string> suffixes = {});
  // 64-bit FNV-1a of the text; stable across runs and platforms.
  std::uint64_t id() const;
};

struct GuidanceRequest {
  std::vector<nn::Tensor> views;  // [H,W,3] each
  std::vector<Camera> cameras;
  PromptSpec prompt{"object"};
  double t = 0.5;
  std::uint64_t seed = 0;
  // Which training shape the views show; lets an oracle hold one reference
  // per coarse input.
  std::string subject;
  RenderOptions render_options;

  // Throws GuidanceError("ResolutionMismatch") / ("InvalidRequest: ...").
  void validate() const;
};

struct GuidanceTargets {
  std::vector<nn::Tensor> images;  // constants, [H,W,3], clamped to [0,1]
};

class GuidanceOracle {
 public:
  virtual ~GuidanceOracle() = default;
  virtual std::string name() const = 0;
  // Pure in (views, prompt, t, seed, subject); safe for concurrent calls.
  virtual GuidanceTargets denoise(const GuidanceRequest& request) const = 0;
};

// x_hat = x.
class NullGuidance : public GuidanceOracle {
 public:
  std::string name() const override { return "null"; }
  GuidanceTargets denoise(const GuidanceRequest& request) const override;
};

struct ReferenceShape {
  nn::Tensor density;  // [K,K,K], >= 0
  nn::Tensor albedo;   // [3,K,K,K], in [0,1]

  // Density from a 1-channel ARTF, or from an ARTV occupancy grid scaled by
  // `occupied_density`; albedo from a 3-channel ARTF or uniform gray.
  static ReferenceShape load(const std::filesystem::path& density_path, const std::filesystem::path& albedo_path = {},
                             float occupied_density = 50.0f);
  static ReferenceShape from_fields(const FloatField& density, const FloatField& albedo);
};

// x_hat = render of a known detailed shape from the request cameras.
class TargetMatchOracle : public GuidanceOracle {
 public:
  TargetMatchOracle() = default;
  explicit TargetMatchOracle(ReferenceShape shape) { add("", std::move(shape)); }

  // The empty subject is the fallback for requests with no registered subject.
  void add(const std::string& subject, ReferenceShape shape);
  bool has(const std::string& subject) const { return shapes_.count(subject) > 0; }

  std::string name() const override { return "target_match"; }
  // Throws GuidanceError("UnknownSubject") if neither the subject nor a
  // fallback is registered.
  GuidanceTargets denoise(const GuidanceRequest& request) const override;

 private:
  std::map<std::string, ReferenceShape> shapes_;
};

// Palette remap toward prompt-keyed colors followed by unsharp masking.
class ProceduralStylizer : public GuidanceOracle {
 public:
  struct Options {
    double strength = 0.6;   // palette mix at t = 1
    double sharpen = 0.5;    // unsharp-mask amount
    double noise = 0.0;      // seeded perturbation amplitude, scaled by t
  };
  ProceduralStylizer() = default;
  explicit ProceduralStylizer(Options options) : options_(options) {}

  std::string name() const override { return "procedural_stylizer"; }
  GuidanceTargets denoise(const GuidanceRequest& request) const override;
  // Dark, mid and bright palette colors for a prompt.
  static std::array<Eigen::Vector3f, 3> palette(const PromptSpec& prompt);

 private:
  Options options_;
};

// Builds an oracle from a name and flat string parameters:
//   null | target_match (density=<path>, albedo=<path>) |
//   procedural_stylizer (strength, sharpen, noise).
std::unique_ptr<GuidanceOracle> make_oracle(const std::string& name, const std::map<std::string, std::string>& params);

// Mean over views of the per-view MSE between x_i and stop_gradient(x_hat_i).
// Throws nn::AutodiffError("ShapeMismatch ...").
nn::Tensor sds_loss(const std::vector<nn::Tensor>& views, const GuidanceTargets& targets);

// Mean squared difference between rendered alphas [H,W] and constant masks.
nn::Tensor reg_loss(const std::vector<nn::Tensor>& masks, const std::vector<MaskImage>& reference);

// L_SDS + lambda * L_reg; throws GuidanceError("InvalidParam") for lambda < 0.
nn::Tensor total_loss(const nn::Tensor& sds, const nn::Tensor& reg, double lambda);

}  // namespace voxdet
