#include "gem/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "gem/image_io.hpp"
#include "gem/random.hpp"

namespace gem {

namespace {

constexpr double kTwoPi = 6.283185307179586;
constexpr std::size_t kPatchesPerScene = 60;

// One Gabor-like patch of the scene texture.
struct Patch {
  double cx, cy, sigma, kx, ky, phase;
  std::vector<double> amplitude;  // per channel
};

struct Scene {
  std::vector<Patch> patches;

  double value(double x, double y, std::size_t c) const {
    double v = 0.0;
    for (const Patch& p : patches) {
      const double dx = x - p.cx;
      const double dy = y - p.cy;
      const double r2 = dx * dx + dy * dy;
      if (r2 > 9.0 * p.sigma * p.sigma) continue;
      v += p.amplitude[c] * std::exp(-r2 / (2.0 * p.sigma * p.sigma)) *
           std::cos(p.kx * dx + p.ky * dy + p.phase);
    }
    return v;
  }
};

// Scenes differ in their two dominant orientations and wavelength band.
Scene make_scene(const SynthConfig& cfg, Rng& rng) {
  const double theta0 = uniform_real(rng, 0.0, kTwoPi / 2);
  const double theta1 = theta0 + uniform_real(rng, 0.5, 1.3);
  const double lambda_lo = uniform_real(rng, 4.0, 6.0);
  Scene s;
  for (std::size_t i = 0; i < kPatchesPerScene; ++i) {
    Patch p;
    p.cx = uniform_real(rng, 0.0, cfg.scene_size);
    p.cy = uniform_real(rng, 0.0, cfg.scene_size);
    p.sigma = uniform_real(rng, 4.0, 8.0);
    const double theta = (uniform_index(rng, 2) == 0 ? theta0 : theta1) + 0.15 * standard_normal(rng);
    const double k = kTwoPi / uniform_real(rng, lambda_lo, lambda_lo + 2.0);
    p.kx = k * std::cos(theta);
    p.ky = k * std::sin(theta);
    p.phase = uniform_real(rng, 0.0, kTwoPi);
    for (std::size_t c = 0; c < cfg.channels; ++c) p.amplitude.push_back(uniform_real(rng, 0.3, 0.6));
    s.patches.push_back(std::move(p));
  }
  return s;
}

struct View {
  double x0, y0, side;
};

Image render(const SynthConfig& cfg, const Scene& scene, const View& v, Rng& rng) {
  const double n = cfg.nuisance;
  const double gain = std::exp(uniform_real(rng, -0.4, 0.4) * n);
  const double offset = uniform_real(rng, -0.2, 0.2) * n;
  const double ramp = uniform_real(rng, 0.0, 0.3) * n;
  const double ramp_dir = uniform_real(rng, 0.0, kTwoPi);
  const double rx = std::cos(ramp_dir);
  const double ry = std::sin(ramp_dir);
  const std::size_t size = cfg.image_size;
  Image img(size, size, cfg.channels);
  const double pixel = v.side / static_cast<double>(size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double wx = v.x0 + (static_cast<double>(x) + 0.5) * pixel;
      const double wy = v.y0 + (static_cast<double>(y) + 0.5) * pixel;
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(size) - 0.5;
      const double w = (static_cast<double>(y) + 0.5) / static_cast<double>(size) - 0.5;
      for (std::size_t c = 0; c < cfg.channels; ++c) {
        const double t = scene.value(wx, wy, c);
        img.at(x, y, c) = 0.5 + gain * t + offset + ramp * (u * rx + w * ry) +
                          0.03 * n * standard_normal(rng);
      }
    }
  }
  return quantize8(std::move(img));
}

std::string image_file(ImageId id, std::size_t channels) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "images/%05llu.%s", static_cast<unsigned long long>(id),
                channels == 1 ? "pgm" : "ppm");
  return buf;
}

}  // namespace

void SynthConfig::validate() const {
  if (clusters == 0) throw InvalidArgument("synth: clusters must be positive");
  if (images_min == 0 || images_max < images_min) {
    throw InvalidArgument("synth: need 0 < images_min <= images_max");
  }
  if (points_per_cluster == 0) throw InvalidArgument("synth: points_per_cluster must be positive");
  if (!(camera_jitter >= 0.0)) throw InvalidArgument("synth: camera_jitter must be non-negative");
  if (image_size == 0) throw InvalidArgument("synth: image_size must be positive");
  if (channels != 1 && channels != 3) throw InvalidArgument("synth: channels must be 1 or 3");
  if (!(zoom_min > 0.0 && zoom_max >= zoom_min)) throw InvalidArgument("synth: need 0 < zoom_min <= zoom_max");
  if (!(view_side > 0.0)) throw InvalidArgument("synth: view_side must be positive");
  if (!(scene_size >= view_side / zoom_min)) {
    throw InvalidArgument("synth: scene_size must hold the widest view (view_side / zoom_min)");
  }
  if (!(nuisance >= 0.0)) throw InvalidArgument("synth: nuisance must be non-negative");
}

SynthDataset generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<GraphImage> images;
  std::vector<GraphPoint> points;
  std::vector<Edge> edges;
  SynthDataset ds;
  ImageId next_image = 0;
  PointId next_point = 0;
  for (std::size_t c = 0; c < cfg.clusters; ++c) {
    Rng rng(derive_seed(cfg.texture_seed, 0x73796e7468ULL, c));
    const Scene scene = make_scene(cfg, rng);
    // Clusters sit far apart so no geometry is shared between them.
    const double origin = static_cast<double>(c) * 10.0 * cfg.scene_size;
    std::vector<GraphPoint> cluster_points;
    for (std::size_t i = 0; i < cfg.points_per_cluster; ++i) {
      cluster_points.push_back({next_point++, {origin + uniform_real(rng, 0.0, cfg.scene_size),
                                               uniform_real(rng, 0.0, cfg.scene_size), 0.0}});
    }
    const std::size_t count = cfg.images_min + uniform_index(rng, cfg.images_max - cfg.images_min + 1);
    for (std::size_t j = 0; j < count; ++j) {
      const double zoom = uniform_real(rng, cfg.zoom_min, cfg.zoom_max);
      const double side = cfg.view_side / zoom;
      const double half = 0.5 * cfg.scene_size;
      const double shift = cfg.camera_jitter * side;
      auto place = [&](double center) {
        return std::clamp(center + uniform_real(rng, -shift, shift), side / 2, cfg.scene_size - side / 2) - side / 2;
      };
      const View v{place(half), place(half), side};
      GraphImage gi;
      gi.id = next_image++;
      gi.cluster = c;
      gi.camera = {origin + v.x0 + side / 2, v.y0 + side / 2, side};
      gi.file = image_file(gi.id, cfg.channels);
      for (const GraphPoint& p : cluster_points) {
        const double px = p.position.x - origin;
        if (px >= v.x0 && px < v.x0 + side && p.position.y >= v.y0 && p.position.y < v.y0 + side) {
          edges.push_back({gi.id, p.id});
        }
      }
      ds.images.emplace(gi.id, render(cfg, scene, v, rng));
      images.push_back(std::move(gi));
    }
    points.insert(points.end(), cluster_points.begin(), cluster_points.end());
  }
  ds.manifest.root = ".";
  for (const GraphImage& gi : images) {
    ds.manifest.entries.push_back({gi.id, gi.file, std::nullopt});
    ds.manifest.queries.push_back(gi.id);
    std::set<ImageId>& rel = ds.manifest.ground_truth[gi.id];
    for (const GraphImage& other : images) {
      if (other.cluster == gi.cluster && other.id != gi.id) rel.insert(other.id);
    }
  }
  ds.graph = VisibilityGraph(std::move(images), std::move(points), std::move(edges));
  return ds;
}

void write_synthetic(const SynthDataset& ds, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec) throw FormatError((dir / "images").string() + ": " + ec.message());
  ds.graph.save(dir / "graph.json");
  ds.manifest.save(dir / "manifest.json");
  for (const GraphImage& gi : ds.graph.images()) write_pnm(dir / gi.file, ds.images.at(gi.id));
}

ImageStore load_graph_images(const VisibilityGraph& g, const std::filesystem::path& graph_path) {
  ImageStore store;
  const std::filesystem::path base = graph_path.parent_path();
  for (const GraphImage& gi : g.images()) {
    // An absolute file replaces the base when appended.
    store.emplace(gi.id, read_pnm(base / gi.file));
  }
  return store;
}

}  // namespace gem
