#include "voxdet/guidance.hpp"

#include <algorithm>
#include <cmath>

#include "voxdet/ops.hpp"
#include "voxdet/rng.hpp"

namespace voxdet {

namespace {

nn::Tensor clamped_constant(const nn::Shape& shape, std::vector<float> values) {
  for (auto& v : values) v = std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f;
  return nn::Tensor::from(shape, std::move(values));
}

Eigen::Vector3f hsv(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s, x = c * (1 - std::abs(std::fmod(h * 6.0, 2.0) - 1)), m = v - c;
  const int sector = static_cast<int>(h * 6.0) % 6;
  double r = 0, g = 0, b = 0;
  switch (sector) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  return Eigen::Vector3d(r + m, g + m, b + m).cast<float>();
}

double parse_double(const std::map<std::string, std::string>& p, const std::string& key, double fallback) {
  const auto it = p.find(key);
  if (it == p.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw GuidanceError("InvalidParam: " + key + "='" + it->second + "' is not a number");
  }
}

}  // namespace

PromptSpec::PromptSpec(std::string t, std::vector<std::string> suffixes)
    : text(std::move(t)), view_suffixes(std::move(suffixes)) {
  if (text.empty()) throw GuidanceError("EmptyPrompt: prompt text must be nonempty");
}

std::uint64_t PromptSpec::id() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void GuidanceRequest::validate() const {
  if (views.empty()) throw GuidanceError("InvalidRequest: no views");
  if (cameras.size() != views.size()) throw GuidanceError("InvalidRequest: one camera per view required");
  if (!(t >= 0.0 && t <= 1.0)) throw GuidanceError("InvalidRequest: t outside [0,1]");
  const nn::Shape& first = views.front().shape();
  if (first.size() != 3 || first[2] != 3) throw GuidanceError("InvalidRequest: views must be [H,W,3]");
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (views[i].shape() != first)
      throw GuidanceError("ResolutionMismatch: view " + std::to_string(i) + " is " +
                          nn::shape_string(views[i].shape()) + ", view 0 is " + nn::shape_string(first));
    if (cameras[i].height != first[0] || cameras[i].width != first[1])
      throw GuidanceError("ResolutionMismatch: camera " + std::to_string(i) + " does not match its view");
  }
}

GuidanceTargets NullGuidance::denoise(const GuidanceRequest& request) const {
  request.validate();
  GuidanceTargets out;
  for (const auto& v : request.views)
    out.images.push_back(clamped_constant(v.shape(), std::vector<float>(v.data().begin(), v.data().end())));
  return out;
}

ReferenceShape ReferenceShape::from_fields(const FloatField& density, const FloatField& albedo) {
  if (density.channels != 1 || albedo.channels != 3) throw GuidanceError("InvalidReference: need 1 + 3 channels");
  if (density.dims != albedo.dims || density.dims.x != density.dims.y || density.dims.y != density.dims.z)
    throw GuidanceError("InvalidReference: fields must be equal cubes");
  const int k = density.dims.x;
  ReferenceShape s;
  s.density = nn::Tensor::from({k, k, k}, density.values);
  s.albedo = nn::Tensor::from({3, k, k, k}, albedo.values);
  for (float v : s.density.data())
    if (v < 0.0f) throw GuidanceError("InvalidReference: negative density");
  for (float v : s.albedo.data())
    if (v < 0.0f || v > 1.0f) throw GuidanceError("InvalidReference: albedo outside [0,1]");
  return s;
}

ReferenceShape ReferenceShape::load(const std::filesystem::path& density_path,
                                    const std::filesystem::path& albedo_path, float occupied_density) {
  FloatField density;
  if (density_path.extension() == ".artv") {
    const OccupancyGrid g = load_artv(density_path);
    density.dims = g.dims();
    for (auto c : g.cells()) density.values.push_back(c ? occupied_density : 0.0f);
  } else {
    density = load_artf(density_path);
  }
  FloatField albedo;
  if (albedo_path.empty()) {
    albedo.dims = density.dims;
    albedo.channels = 3;
    albedo.values.assign(density.cells() * 3, 0.6f);
  } else {
    albedo = load_artf(albedo_path);
  }
  return from_fields(density, albedo);
}

void TargetMatchOracle::add(const std::string& subject, ReferenceShape shape) { shapes_[subject] = std::move(shape); }

GuidanceTargets TargetMatchOracle::denoise(const GuidanceRequest& request) const {
  request.validate();
  auto it = shapes_.find(request.subject);
  if (it == shapes_.end()) it = shapes_.find("");
  if (it == shapes_.end()) throw GuidanceError("UnknownSubject: no reference for '" + request.subject + "'");
  nn::NoGradGuard no_grad;
  GuidanceTargets out;
  for (const auto& cam : request.cameras) {
    const RenderedView v = render(it->second.density, it->second.albedo, cam, request.render_options);
    out.images.push_back(clamped_constant(v.rgb.shape(), std::vector<float>(v.rgb.data().begin(), v.rgb.data().end())));
  }
  return out;
}

std::array<Eigen::Vector3f, 3> ProceduralStylizer::palette(const PromptSpec& prompt) {
  const double hue = static_cast<double>(prompt.id() & 0xffff) / 65536.0;
  return {hsv(hue, 0.6, 0.25), hsv(hue + 0.08, 0.55, 0.6), hsv(hue + 0.16, 0.35, 0.95)};
}

GuidanceTargets ProceduralStylizer::denoise(const GuidanceRequest& request) const {
  request.validate();
  const auto pal = palette(request.prompt);
  const double mix = options_.strength * request.t;
  GuidanceTargets out;
  for (std::size_t v = 0; v < request.views.size(); ++v) {
    const auto& shape = request.views[v].shape();
    const int h = static_cast<int>(shape[0]), w = static_cast<int>(shape[1]);
    const auto x = request.views[v].data();
    std::vector<float> remapped(x.size());
    for (std::size_t p = 0; p < x.size(); p += 3) {
      const float lum = 0.299f * x[p] + 0.587f * x[p + 1] + 0.114f * x[p + 2];
      const float l = std::clamp(lum, 0.0f, 1.0f) * 2.0f;
      const Eigen::Vector3f target = l < 1.0f ? pal[0] + l * (pal[1] - pal[0]) : pal[1] + (l - 1.0f) * (pal[2] - pal[1]);
      for (int c = 0; c < 3; ++c)
        remapped[p + c] = static_cast<float>((1.0 - mix) * x[p + c] + mix * target[c]);
    }
    std::vector<float> result(x.size());
    for (int py = 0; py < h; ++py)
      for (int px = 0; px < w; ++px)
        for (int c = 0; c < 3; ++c) {
          double blur = 0.0;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const int qx = std::clamp(px + dx, 0, w - 1), qy = std::clamp(py + dy, 0, h - 1);
              blur += remapped[(static_cast<std::size_t>(qy) * w + qx) * 3 + c];
            }
          const std::size_t i = (static_cast<std::size_t>(py) * w + px) * 3 + c;
          result[i] = static_cast<float>(remapped[i] + options_.sharpen * (remapped[i] - blur / 9.0));
        }
    if (options_.noise > 0.0) {
      Rng rng(request.seed ^ request.prompt.id() ^ (0x9e3779b97f4a7c15ULL * (v + 1)));
      for (auto& r : result) r += static_cast<float>(options_.noise * request.t * rng.normal());
    }
    out.images.push_back(clamped_constant(shape, std::move(result)));
  }
  return out;
}

std::unique_ptr<GuidanceOracle> make_oracle(const std::string& name, const std::map<std::string, std::string>& params) {
  if (name == "null") return std::make_unique<NullGuidance>();
  if (name == "target_match") {
    const auto d = params.find("density");
    if (d == params.end()) throw GuidanceError("InvalidParam: target_match needs density=<path>");
    const auto a = params.find("albedo");
    return std::make_unique<TargetMatchOracle>(
        ReferenceShape::load(d->second, a == params.end() ? std::filesystem::path{} : std::filesystem::path(a->second),
                             static_cast<float>(parse_double(params, "occupied_density", 50.0))));
  }
  if (name == "procedural_stylizer") {
    ProceduralStylizer::Options o;
    o.strength = parse_double(params, "strength", o.strength);
    o.sharpen = parse_double(params, "sharpen", o.sharpen);
    o.noise = parse_double(params, "noise", o.noise);
    return std::make_unique<ProceduralStylizer>(o);
  }
  throw GuidanceError("InvalidParam: unknown oracle '" + name + "'");
}

nn::Tensor sds_loss(const std::vector<nn::Tensor>& views, const GuidanceTargets& targets) {
  if (views.empty() || views.size() != targets.images.size())
    throw nn::AutodiffError("ShapeMismatch in sds_loss: " + std::to_string(views.size()) + " views, " +
                            std::to_string(targets.images.size()) + " targets");
  nn::Tensor total;
  for (std::size_t i = 0; i < views.size(); ++i) {
    const nn::Tensor term = nn::mse(views[i], nn::stop_gradient(targets.images[i]));
    total = total.defined() ? nn::add(total, term) : term;
  }
  return nn::scale(total, 1.0f / static_cast<float>(views.size()));
}

nn::Tensor reg_loss(const std::vector<nn::Tensor>& masks, const std::vector<MaskImage>& reference) {
  if (masks.empty() || masks.size() != reference.size())
    throw nn::AutodiffError("ShapeMismatch in reg_loss: " + std::to_string(masks.size()) + " masks, " +
                            std::to_string(reference.size()) + " references");
  nn::Tensor total;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const MaskImage& r = reference[i];
    if (r.channels != 1) throw nn::AutodiffError("ShapeMismatch in reg_loss: reference mask must have one channel");
    const nn::Tensor ref = nn::Tensor::from({r.height, r.width}, r.pixels);
    const nn::Tensor term = nn::mse(masks[i], ref);
    total = total.defined() ? nn::add(total, term) : term;
  }
  return nn::scale(total, 1.0f / static_cast<float>(masks.size()));
}

nn::Tensor total_loss(const nn::Tensor& sds, const nn::Tensor& reg, double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw GuidanceError("InvalidParam: lambda_reg must be >= 0");
  return nn::add(sds, nn::scale(reg, static_cast<float>(lambda)));
}

}  // namespace voxdet
