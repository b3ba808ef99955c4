#include "voxdet/eval.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <sstream>

#include "voxdet/ops.hpp"
#include "voxdet/rng.hpp"

namespace voxdet {

namespace {

void require_same_dims(const OccupancyGrid& a, const OccupancyGrid& b) {
  if (a.dims() != b.dims()) throw GridError("DimsMismatch: IoU of grids with different dims");
}

Eigen::MatrixXd gaussian_matrix(int rows, int cols, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(rows, cols);
  const double s = 1.0 / std::sqrt(static_cast<double>(cols));
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.normal() * s;
  return m;
}

// Symmetric PSD square root; eigenvalues in [-1e-6, 0) are treated as 0.
Eigen::VectorXd checked_eigenvalues(const Eigen::MatrixXd& m, Eigen::MatrixXd* vectors) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.info() != Eigen::Success) throw EvalError("IllConditioned: eigendecomposition failed");
  Eigen::VectorXd ev = es.eigenvalues();
  for (int i = 0; i < ev.size(); ++i) {
    if (ev[i] < -1e-6) throw EvalError("IllConditioned: eigenvalue " + std::to_string(ev[i]));
    ev[i] = std::max(ev[i], 0.0);
  }
  if (vectors) *vectors = es.eigenvectors();
  return ev;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

OccupancyGrid voxelize_density(const nn::Tensor& density, double threshold, int k) {
  const int K = cube_edge(density.numel(), 1);
  if (k <= 0 || K % k != 0)
    throw GridError("IndivisibleDims: " + std::to_string(K) + " is not a multiple of " + std::to_string(k));
  const auto d = density.data();
  std::vector<std::uint8_t> cells(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) cells[i] = d[i] > threshold ? 1 : 0;
  return downsample_max(OccupancyGrid(Dims::cube(K), std::move(cells)), K / k);
}

double strict_iou(const OccupancyGrid& v, const OccupancyGrid& v_prime) {
  require_same_dims(v, v_prime);
  std::size_t inter = 0, uni = 0;
  const auto a = v.cells(), b = v_prime.cells();
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    uni += a[i] || b[i];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double loose_iou(const OccupancyGrid& v, const OccupancyGrid& v_prime) {
  require_same_dims(v, v_prime);
  std::size_t inter = 0, count = 0;
  const auto a = v.cells(), b = v_prime.cells();
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    count += a[i];
  }
  if (count == 0) throw EvalError("EmptyReference: loose IoU needs a nonempty reference grid");
  return static_cast<double>(inter) / static_cast<double>(count);
}

double clip_score(const EmbeddingVector& text, const EmbeddingVector& image) {
  if (text.values.size() != image.values.size() || text.values.empty())
    throw EvalError("LengthMismatch: embeddings of length " + std::to_string(text.values.size()) + " and " +
                    std::to_string(image.values.size()));
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < text.values.size(); ++i) {
    dot += text.values[i] * image.values[i];
    na += text.values[i] * text.values[i];
    nb += image.values[i] * image.values[i];
  }
  if (na == 0.0 || nb == 0.0) throw EvalError("ZeroNorm: embedding with zero norm");
  // sqrt(na * na) == na exactly, so identical vectors give exactly 100.
  const double cosine = std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
  return std::max(100.0 * cosine, 0.0);
}

double frechet_distance(const FeatureSet& a, const FeatureSet& b) {
  if (a.rows() < 2 || b.rows() < 2 || a.cols() != b.cols() || a.cols() == 0)
    throw EvalError("InvalidFeatures: need >= 2 rows and equal widths");
  const Eigen::RowVectorXd mu1 = a.colwise().mean(), mu2 = b.colwise().mean();
  const Eigen::MatrixXd c1 = a.rowwise() - mu1, c2 = b.rowwise() - mu2;
  const Eigen::MatrixXd s1 = c1.transpose() * c1 / static_cast<double>(a.rows() - 1);
  const Eigen::MatrixXd s2 = c2.transpose() * c2 / static_cast<double>(b.rows() - 1);

  Eigen::MatrixXd vecs;
  const Eigen::VectorXd ev1 = checked_eigenvalues(s1, &vecs);
  const Eigen::MatrixXd s1_half = vecs * ev1.cwiseSqrt().asDiagonal() * vecs.transpose();
  const Eigen::VectorXd ev = checked_eigenvalues(s1_half * s2 * s1_half, nullptr);
  const double tr_sqrt = ev.cwiseSqrt().sum();
  const double fid = (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * tr_sqrt;
  return std::max(fid, 0.0);
}

RandomProjectionFeatures::RandomProjectionFeatures(int dim, std::uint64_t seed, int grid)
    : dim_(dim), grid_(grid), projection_(gaussian_matrix(dim, grid * grid * 3, seed)) {
  if (dim < 1 || grid < 1) throw EvalError("InvalidParam: feature dims must be positive");
}

Eigen::VectorXd RandomProjectionFeatures::image_features(const Image& rgb) const {
  if (rgb.channels != 3 || rgb.width < 1 || rgb.height < 1) throw EvalError("InvalidParam: expected an RGB image");
  Eigen::VectorXd pooled = Eigen::VectorXd::Zero(grid_ * grid_ * 3);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(grid_ * grid_);
  for (int y = 0; y < rgb.height; ++y)
    for (int x = 0; x < rgb.width; ++x) {
      const int gx = x * grid_ / rgb.width, gy = y * grid_ / rgb.height;
      const int cell = gy * grid_ + gx;
      counts[cell] += 1.0;
      for (int c = 0; c < 3; ++c) pooled[cell * 3 + c] += rgb.at(x, y, c);
    }
  for (int cell = 0; cell < grid_ * grid_; ++cell)
    if (counts[cell] > 0)
      for (int c = 0; c < 3; ++c) pooled[cell * 3 + c] /= counts[cell];
  return projection_ * pooled;
}

FeatureSet RandomProjectionFeatures::features(const std::vector<Image>& images) const {
  FeatureSet out(static_cast<Eigen::Index>(images.size()), dim_);
  for (std::size_t i = 0; i < images.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = image_features(images[i]);
  return out;
}

RandomProjectionEmbedder::RandomProjectionEmbedder(int dim, std::uint64_t seed)
    : dim_(dim), seed_(seed), image_(dim, seed ^ 0x5bd1e995ULL, 16) {}

EmbeddingVector RandomProjectionEmbedder::embed_text(const std::string& text) const {
  EmbeddingVector e{std::vector<double>(dim_, 0.0), EmbeddingVector::Source::Text};
  std::istringstream words(text);
  std::string w;
  while (words >> w) {
    Rng rng(seed_ ^ fnv1a(w));
    for (auto& v : e.values) v += rng.normal();
  }
  return e;
}

EmbeddingVector RandomProjectionEmbedder::embed_image(const Image& rgb) const {
  const Eigen::VectorXd f = image_.image_features(rgb);
  return {std::vector<double>(f.data(), f.data() + f.size()), EmbeddingVector::Source::Image};
}

std::vector<Camera> EvalProtocol::cameras(int count) const {
  std::vector<Camera> cams;
  for (int i = 0; i < count; ++i)
    cams.push_back(orbit_camera(360.0 * i / count, elevation_deg, radius, fov_deg, image_size, image_size));
  return cams;
}

std::string MetricReport::to_json() const {
  nlohmann::json j;
  j["strict_iou"] = strict_iou;
  j["loose_iou"] = loose_iou;
  j["clip_score"] = clip_score;
  j["render_fid"] = render_fid;
  j["n_views"] = n_views;
  j["seeds"] = seeds;
  return j.dump(2);
}

MetricReport eval_protocol(const DetailizedShape& shape, const OccupancyGrid& coarse, const std::string& prompt,
                           const EvalProtocol& protocol, const std::optional<FeatureSet>& reference_features) {
  nn::NoGradGuard no_grad;
  MetricReport report;
  const OccupancyGrid produced = voxelize_density(shape.density, protocol.threshold, coarse.dims().x);
  report.strict_iou = strict_iou(coarse, produced);
  report.loose_iou = coarse.empty() ? 0.0 : loose_iou(coarse, produced);

  const RandomProjectionFeatures extractor(64, protocol.feature_seed);
  std::vector<Image> views;
  for (const auto& cam : protocol.cameras(protocol.fid_views))
    views.push_back(render(shape.density, shape.albedo, cam, protocol.render).rgb_image());
  FeatureSet reference;
  if (reference_features) {
    reference = *reference_features;
  } else {
    const int k = coarse.dims().x;
    std::vector<float> d(coarse.cells().begin(), coarse.cells().end());
    for (auto& v : d) v *= 100.0f;
    const nn::Tensor density = nn::Tensor::from({k, k, k}, d);
    const nn::Tensor albedo = nn::Tensor::full({3, k, k, k}, 0.6f);
    std::vector<Image> ref_views;
    for (const auto& cam : protocol.cameras(protocol.fid_views))
      ref_views.push_back(render(density, albedo, cam, protocol.render).rgb_image());
    reference = extractor.features(ref_views);
  }
  report.render_fid = frechet_distance(extractor.features(views), reference);

  const RandomProjectionEmbedder embedder(64, protocol.embed_seed);
  const EmbeddingVector text = embedder.embed_text(prompt);
  double clip = 0.0;
  const auto clip_cams = protocol.cameras(protocol.clip_views);
  for (const auto& cam : clip_cams)
    clip += clip_score(text, embedder.embed_image(render(shape.density, shape.albedo, cam, protocol.render).rgb_image()));
  report.clip_score = clip / static_cast<double>(clip_cams.size());
  report.n_views = protocol.fid_views + protocol.clip_views;
  report.seeds = {protocol.feature_seed, protocol.embed_seed};
  return report;
}

std::string metrics_csv(const std::vector<BatchRow>& rows) {
  std::string out = "prompt,shape,strict_iou,loose_iou,clip_score,render_fid,n_views\n";
  auto quote = [](const std::string& s) {
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  for (const auto& r : rows) {
    char buf[160];
    std::snprintf(buf, sizeof buf, ",%.9g,%.9g,%.9g,%.9g,%d\n", r.report.strict_iou, r.report.loose_iou,
                  r.report.clip_score, r.report.render_fid, r.report.n_views);
    out += quote(r.prompt) + "," + quote(r.shape) + buf;
  }
  return out;
}

}  // namespace voxdet
