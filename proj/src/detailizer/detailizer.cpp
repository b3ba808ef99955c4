#include "voxdet/detailizer.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

#include "voxdet/ops.hpp"

namespace voxdet {

namespace {

bool power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

std::string join(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string format_float(float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

int parse_int(const std::string& s) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw InvalidConfig("not an integer: '" + s + "'");
  return v;
}

std::vector<int> parse_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_int(item));
  return out;
}

}  // namespace

int DetailizerConfig::upsample_layers() const {
  int u = 0;
  for (int r = k; r < K; r *= 2) ++u;
  return u;
}

void DetailizerConfig::validate() const {
  if (!power_of_two(k) || !power_of_two(K) || k < 4 || K < 8)
    throw InvalidConfig("InvalidConfig: k and K must be powers of two, k >= 4, K >= 8 (k=" + std::to_string(k) +
                        ", K=" + std::to_string(K) + ")");
  if (K <= k) throw InvalidConfig("InvalidConfig: K must exceed k");
  if (conv_channels.empty()) throw InvalidConfig("InvalidConfig: no convolution layers");
  for (int c : conv_channels)
    if (c < 1) throw InvalidConfig("InvalidConfig: channel counts must be positive");
  for (int c : up_channels)
    if (c < 1) throw InvalidConfig("InvalidConfig: channel counts must be positive");
  if (static_cast<int>(up_channels.size()) != upsample_layers() - 1)
    throw InvalidConfig("InvalidConfig: " + std::to_string(upsample_layers()) + " doublings need " +
                        std::to_string(upsample_layers() - 1) + " intermediate up channels");
  if (!(leaky_slope >= 0.0f && leaky_slope < 1.0f)) throw InvalidConfig("InvalidConfig: leaky slope");
}

std::vector<std::pair<std::string, std::string>> DetailizerConfig::to_pairs() const {
  return {{"k", std::to_string(k)},
          {"K", std::to_string(K)},
          {"conv_channels", join(conv_channels)},
          {"up_channels", join(up_channels)},
          {"leaky_slope", format_float(leaky_slope)},
          {"seed", std::to_string(seed)}};
}

DetailizerConfig DetailizerConfig::from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs) {
  DetailizerConfig c;
  for (const auto& [key, value] : pairs) {
    if (key == "k") c.k = parse_int(value);
    else if (key == "K") c.K = parse_int(value);
    else if (key == "conv_channels") c.conv_channels = parse_list(value);
    else if (key == "up_channels") c.up_channels = parse_list(value);
    else if (key == "leaky_slope") c.leaky_slope = std::stof(value);
    else if (key == "seed") c.seed = std::stoull(value);
  }
  return c;
}

UpsamplingNetwork UpsamplingNetwork::create(const DetailizerConfig& config, int out_channels, Rng& rng) {
  UpsamplingNetwork net;
  net.leaky_slope = config.leaky_slope;
  int in = 1;
  for (int c : config.conv_channels) {
    net.convs.push_back(nn::Conv3dLayer::create(in, c, rng));
    in = c;
  }
  for (int c : config.up_channels) {
    net.ups.push_back(nn::ConvTranspose3dLayer::create(in, c, rng));
    in = c;
  }
  net.ups.push_back(nn::ConvTranspose3dLayer::create(in, out_channels, rng));
  return net;
}

nn::Tensor UpsamplingNetwork::operator()(const nn::Tensor& input) const {
  nn::Tensor x = input;
  for (const auto& conv : convs) x = nn::leaky_relu(conv(x), leaky_slope);
  for (std::size_t i = 0; i < ups.size(); ++i) {
    x = ups[i](x);
    if (i + 1 < ups.size()) x = nn::leaky_relu(x, leaky_slope);
  }
  return x;
}

std::vector<nn::Tensor> UpsamplingNetwork::parameters() const {
  std::vector<nn::Tensor> out;
  for (const auto& c : convs) out.insert(out.end(), {c.weight, c.bias});
  for (const auto& u : ups) out.insert(out.end(), {u.weight, u.bias});
  return out;
}

std::vector<nn::Tensor> DetailizerModel::parameters() const {
  std::vector<nn::Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::vector<std::pair<std::string, nn::Tensor>> DetailizerModel::named_parameters() const {
  std::vector<std::pair<std::string, nn::Tensor>> out;
  auto add = [&out](const std::string& prefix, const UpsamplingNetwork& net) {
    for (std::size_t i = 0; i < net.convs.size(); ++i) {
      out.emplace_back(prefix + ".conv" + std::to_string(i) + ".weight", net.convs[i].weight);
      out.emplace_back(prefix + ".conv" + std::to_string(i) + ".bias", net.convs[i].bias);
    }
    for (std::size_t i = 0; i < net.ups.size(); ++i) {
      out.emplace_back(prefix + ".up" + std::to_string(i) + ".weight", net.ups[i].weight);
      out.emplace_back(prefix + ".up" + std::to_string(i) + ".bias", net.ups[i].bias);
    }
  };
  add("density", density_net);
  add("albedo", albedo_net);
  return out;
}

DetailizerModel build_detailizer(const DetailizerConfig& config) {
  config.validate();
  DetailizerModel m;
  m.config = config;
  Rng rng(config.seed);
  m.density_net = UpsamplingNetwork::create(config, 1, rng);
  m.albedo_net = UpsamplingNetwork::create(config, 3, rng);
  return m;
}

OccupancyGrid structure_mask(const OccupancyGrid& coarse, int factor) {
  return upsample_nearest(dilate(coarse, 1), factor);
}

DetailizedShape detailize(const DetailizerModel& model, const OccupancyGrid& coarse) {
  const int k = model.config.k, K = model.config.K;
  if (coarse.dims() != Dims::cube(k))
    throw DimMismatch("DimMismatch: model expects " + std::to_string(k) + "^3, got " +
                      std::to_string(coarse.dims().x) + "x" + std::to_string(coarse.dims().y) + "x" +
                      std::to_string(coarse.dims().z));
  const auto cells = coarse.cells();
  std::vector<float> in(cells.begin(), cells.end());
  const nn::Tensor input = nn::Tensor::from({1, 1, k, k, k}, std::move(in));

  DetailizedShape out;
  out.mask = structure_mask(coarse, K / k);
  const auto mask_cells = out.mask.cells();
  const nn::Tensor mask = nn::Tensor::from({K, K, K}, std::vector<float>(mask_cells.begin(), mask_cells.end()));

  out.raw_density = nn::reshape(nn::softplus(model.density_net(input)), {K, K, K});
  out.density = nn::mul(out.raw_density, mask);
  out.albedo = nn::reshape(nn::sigmoid(model.albedo_net(input)), {3, K, K, K});
  return out;
}

nn::CheckpointData to_checkpoint(const DetailizerModel& model) {
  nn::CheckpointData data;
  data.config = model.config.to_pairs();
  for (const auto& [name, t] : model.named_parameters())
    data.tensors.push_back({name, t.shape(), std::vector<float>(t.data().begin(), t.data().end())});
  return data;
}

DetailizerModel from_checkpoint(const nn::CheckpointData& data) {
  DetailizerModel model;
  try {
    model = build_detailizer(DetailizerConfig::from_pairs(data.config));
  } catch (const std::exception& e) {
    throw nn::CorruptCheckpoint(std::string("CorruptCheckpoint: bad model config: ") + e.what());
  }
  for (auto& [name, t] : model.named_parameters()) {
    const auto* entry = data.find_tensor(name);
    if (!entry) throw nn::CorruptCheckpoint("CorruptCheckpoint: missing tensor " + name);
    if (entry->shape != t.shape())
      throw nn::CorruptCheckpoint("CorruptCheckpoint: tensor " + name + " has shape " + nn::shape_string(entry->shape) +
                                  ", expected " + nn::shape_string(t.shape()));
    std::copy(entry->values.begin(), entry->values.end(), t.data().begin());
  }
  return model;
}

void save_detailizer(const DetailizerModel& model, const std::filesystem::path& path) {
  nn::save_artc(to_checkpoint(model), path);
}

DetailizerModel load_detailizer(const std::filesystem::path& path) { return from_checkpoint(nn::load_artc(path)); }

}  // namespace voxdet
