#include "gem/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gem/binary_io.hpp"
#include "gem/random.hpp"

namespace gem {

Image resize_bilinear(const Image& img, std::size_t width, std::size_t height) {
  if (width == 0 || height == 0) throw InvalidArgument("resize: target size must be positive");
  if (width == img.width && height == img.height) return img;
  Image out(width, height, img.channels);
  const double sx = static_cast<double>(img.width) / static_cast<double>(width);
  const double sy = static_cast<double>(img.height) / static_cast<double>(height);
  for (std::size_t y = 0; y < height; ++y) {
    // Half-pixel centers, clamped at the border.
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(img.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(img.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < img.channels; ++c) {
        const double top = (1 - wx) * img.at(x0, y0, c) + wx * img.at(x1, y0, c);
        const double bottom = (1 - wx) * img.at(x0, y1, c) + wx * img.at(x1, y1, c);
        out.at(x, y, c) = (1 - wy) * top + wy * bottom;
      }
    }
  }
  return out;
}

Image resize_max_side(const Image& img, std::size_t max_side) {
  if (max_side == 0) throw InvalidArgument("resize_max_side: max_side must be >= 1");
  const std::size_t longest = std::max(img.width, img.height);
  if (longest <= max_side) return img;
  const double s = static_cast<double>(max_side) / static_cast<double>(longest);
  auto scaled = [&](std::size_t side) {
    if (side == longest) return max_side;
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(side * s)));
  };
  return resize_bilinear(img, scaled(img.width), scaled(img.height));
}

Image resize_by_factor(const Image& img, double factor) {
  if (!(factor > 0.0)) throw InvalidArgument("resize_by_factor: factor must be positive");
  if (factor == 1.0) return img;
  const auto w = std::max<long>(1, std::lround(static_cast<double>(img.width) * factor));
  const auto h = std::max<long>(1, std::lround(static_cast<double>(img.height) * factor));
  return resize_bilinear(img, static_cast<std::size_t>(w), static_cast<std::size_t>(h));
}

Image crop(const Image& img, std::size_t x, std::size_t y, std::size_t w, std::size_t h) {
  if (w == 0 || h == 0 || x + w > img.width || y + h > img.height) {
    throw InvalidArgument("crop rectangle [" + std::to_string(x) + "," + std::to_string(y) +
                          "," + std::to_string(w) + "," + std::to_string(h) +
                          "] outside " + std::to_string(img.width) + "x" +
                          std::to_string(img.height) + " image");
  }
  Image out(w, h, img.channels);
  for (std::size_t yy = 0; yy < h; ++yy)
    for (std::size_t xx = 0; xx < w; ++xx)
      for (std::size_t c = 0; c < img.channels; ++c) out.at(xx, yy, c) = img.at(x + xx, y + yy, c);
  return out;
}

TinyFCN::TinyFCN(std::vector<ConvLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw InvalidArgument("TinyFCN: at least one layer required");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const ConvLayer& layer = layers_[l];
    if (layer.kernel == 0 || layer.stride == 0 || layer.in_maps == 0 || layer.out_maps == 0) {
      throw InvalidArgument("TinyFCN: layer " + std::to_string(l) + " has a zero dimension");
    }
    if (layer.weights.size() != layer.kernel * layer.kernel * layer.in_maps * layer.out_maps ||
        layer.bias.size() != layer.out_maps) {
      throw DimensionMismatch("TinyFCN: layer " + std::to_string(l) +
                              " parameter sizes do not match its shape");
    }
    if (l > 0 && layers_[l - 1].out_maps != layer.in_maps) {
      throw DimensionMismatch("TinyFCN: layer " + std::to_string(l) +
                              " input maps do not chain with the previous layer");
    }
  }
}

TinyFCN TinyFCN::create(std::span<const LayerShape> shapes, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ConvLayer> layers;
  for (const LayerShape& s : shapes) {
    ConvLayer layer;
    layer.kernel = s.kernel;
    layer.in_maps = s.in_maps;
    layer.out_maps = s.out_maps;
    layer.stride = s.stride;
    const double fan_in = static_cast<double>(s.kernel * s.kernel * s.in_maps);
    const double fan_out = static_cast<double>(s.kernel * s.kernel * s.out_maps);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    layer.weights.resize(s.kernel * s.kernel * s.in_maps * s.out_maps);
    for (double& w : layer.weights) w = uniform_real(rng, -limit, limit);
    layer.bias.assign(s.out_maps, 0.0);
    layers.push_back(std::move(layer));
  }
  return TinyFCN(std::move(layers));
}

std::vector<LayerShape> TinyFCN::default_shapes(std::size_t in_channels, std::size_t out_maps) {
  return {{3, in_channels, 8, 1}, {3, 8, 16, 1}, {3, 16, out_maps, 1}};
}

std::size_t TinyFCN::input_maps() const { return layers_.empty() ? 0 : layers_.front().in_maps; }

std::size_t TinyFCN::output_maps() const { return layers_.empty() ? 0 : layers_.back().out_maps; }

std::size_t TinyFCN::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weights.size() + l.bias.size();
  return n;
}

std::size_t TinyFCN::min_input_side() const {
  // Invert output_size() from the last layer back: a 1-pixel output.
  std::size_t side = 1;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    side = (side - 1) * it->stride + it->kernel;
  }
  return side;
}

BackboneGradients BackboneGradients::zeros_like(const TinyFCN& net) {
  BackboneGradients g;
  for (const auto& l : net.layers()) {
    g.layers.push_back({std::vector<double>(l.weights.size(), 0.0),
                        std::vector<double>(l.bias.size(), 0.0)});
  }
  return g;
}

BackboneGradients& BackboneGradients::operator+=(const BackboneGradients& other) {
  if (other.layers.size() != layers.size()) {
    throw DimensionMismatch("BackboneGradients: layer counts differ");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& a = layers[l];
    const auto& b = other.layers[l];
    if (a.weights.size() != b.weights.size() || a.bias.size() != b.bias.size()) {
      throw DimensionMismatch("BackboneGradients: layer " + std::to_string(l) + " shapes differ");
    }
    for (std::size_t i = 0; i < a.weights.size(); ++i) a.weights[i] += b.weights[i];
    for (std::size_t i = 0; i < a.bias.size(); ++i) a.bias[i] += b.bias[i];
  }
  return *this;
}

ActivationTensor image_to_tensor(const Image& img) {
  ActivationTensor t(img.width, img.height, img.channels);
  t.values = img.pixels;
  return t;
}

namespace {

ActivationTensor convolve(const ConvLayer& layer, const ActivationTensor& in) {
  const std::size_t ow = layer.output_size(in.width);
  const std::size_t oh = layer.output_size(in.height);
  const std::size_t nin = layer.in_maps;
  const std::size_t nout = layer.out_maps;
  ActivationTensor out(ow, oh, nout);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double* o = &out.values[(y * ow + x) * nout];
      std::copy(layer.bias.begin(), layer.bias.end(), o);
      for (std::size_t ky = 0; ky < layer.kernel; ++ky) {
        for (std::size_t kx = 0; kx < layer.kernel; ++kx) {
          const double* src =
              &in.values[((y * layer.stride + ky) * in.width + x * layer.stride + kx) * nin];
          const double* w = &layer.weights[layer.weight_index(ky, kx, 0, 0)];
          for (std::size_t i = 0; i < nin; ++i) {
            const double v = src[i];
            if (v == 0.0) continue;
            const double* wi = w + i * nout;
            for (std::size_t k = 0; k < nout; ++k) o[k] += v * wi[k];
          }
        }
      }
    }
  }
  return out;
}

void check_input(const TinyFCN& net, const Image& img) {
  if (net.layers().empty()) throw InvalidArgument("forward: network has no layers");
  if (img.channels != net.input_maps()) {
    throw DimensionMismatch("forward: image has " + std::to_string(img.channels) +
                            " channels, network expects " + std::to_string(net.input_maps()));
  }
  const std::size_t need = net.min_input_side();
  if (img.width < need || img.height < need) {
    throw InvalidArgument("forward: " + std::to_string(img.width) + "x" +
                          std::to_string(img.height) +
                          " image is smaller than the receptive field (" +
                          std::to_string(need) + ")");
  }
}

}  // namespace

ForwardResult forward(const TinyFCN& net, const Image& img) {
  check_input(net, img);
  ForwardResult r;
  ActivationTensor current = image_to_tensor(img);
  for (const ConvLayer& layer : net.layers()) {
    ActivationTensor pre = convolve(layer, current);
    r.cache.inputs.push_back(std::move(current));
    current = pre;
    for (double& v : current.values) v = std::max(v, 0.0);
    r.cache.pre_activations.push_back(std::move(pre));
  }
  r.output = std::move(current);
  return r;
}

ActivationTensor forward_output(const TinyFCN& net, const Image& img) {
  check_input(net, img);
  ActivationTensor current = image_to_tensor(img);
  for (const ConvLayer& layer : net.layers()) {
    current = convolve(layer, current);
    for (double& v : current.values) v = std::max(v, 0.0);
  }
  return current;
}

BackboneGradients backward(const TinyFCN& net, const ForwardCache& cache,
                           const ActivationTensor& grad_out) {
  const auto& layers = net.layers();
  if (cache.inputs.size() != layers.size() || cache.pre_activations.size() != layers.size()) {
    throw DimensionMismatch("backward: cache does not belong to this network");
  }
  if (!grad_out.same_shape(cache.pre_activations.back())) {
    throw DimensionMismatch("backward: gradient shape does not match forward output");
  }
  BackboneGradients grads = BackboneGradients::zeros_like(net);
  ActivationTensor grad = grad_out;
  for (std::size_t li = layers.size(); li-- > 0;) {
    const ConvLayer& layer = layers[li];
    const ActivationTensor& pre = cache.pre_activations[li];
    const ActivationTensor& in = cache.inputs[li];
    for (std::size_t i = 0; i < grad.values.size(); ++i) {
      if (pre.values[i] <= 0.0) grad.values[i] = 0.0;
    }
    const bool need_input_grad = li > 0;
    ActivationTensor grad_in;
    if (need_input_grad) grad_in = ActivationTensor(in.width, in.height, in.maps);
    auto& gw = grads.layers[li].weights;
    auto& gb = grads.layers[li].bias;
    const std::size_t nin = layer.in_maps;
    const std::size_t nout = layer.out_maps;
    for (std::size_t y = 0; y < grad.height; ++y) {
      for (std::size_t x = 0; x < grad.width; ++x) {
        const double* g = &grad.values[(y * grad.width + x) * nout];
        bool any = false;
        for (std::size_t k = 0; k < nout; ++k) {
          gb[k] += g[k];
          any = any || g[k] != 0.0;
        }
        if (!any) continue;
        for (std::size_t ky = 0; ky < layer.kernel; ++ky) {
          for (std::size_t kx = 0; kx < layer.kernel; ++kx) {
            const std::size_t src_index =
                ((y * layer.stride + ky) * in.width + x * layer.stride + kx) * nin;
            const double* src = &in.values[src_index];
            const std::size_t w0 = layer.weight_index(ky, kx, 0, 0);
            for (std::size_t i = 0; i < nin; ++i) {
              double* gwi = &gw[w0 + i * nout];
              const double v = src[i];
              const double* wi = &layer.weights[w0 + i * nout];
              double acc = 0.0;
              for (std::size_t k = 0; k < nout; ++k) {
                gwi[k] += v * g[k];
                acc += wi[k] * g[k];
              }
              if (need_input_grad) grad_in.values[src_index + i] += acc;
            }
          }
        }
      }
    }
    if (need_input_grad) grad = std::move(grad_in);
  }
  return grads;
}

void save_precomputed(const std::filesystem::path& path, const ActivationTensor& t) {
  if (t.values.size() != t.width * t.height * t.maps) {
    throw DimensionMismatch("save_precomputed: tensor payload does not match its shape");
  }
  binary::Writer w;
  w.magic("GEMT");
  w.u32(static_cast<std::uint32_t>(t.width));
  w.u32(static_cast<std::uint32_t>(t.height));
  w.u32(static_cast<std::uint32_t>(t.maps));
  for (double v : t.values) w.f32(v);
  w.write_file(path);
}

ActivationTensor load_precomputed(const std::filesystem::path& path) {
  binary::Reader r(path);
  r.expect_magic("GEMT");
  if (r.remaining() < 12) r.fail("truncated header");
  const std::size_t w = r.u32();
  const std::size_t h = r.u32();
  const std::size_t k = r.u32();
  if (w == 0 || h == 0 || k == 0) r.fail("zero dimension in header");
  const std::size_t count = w * h * k;
  if (r.remaining() != count * 4) {
    r.fail("header advertises " + std::to_string(count) + " values but payload holds " +
           std::to_string(r.remaining()) + " bytes");
  }
  ActivationTensor t(w, h, k);
  for (std::size_t i = 0; i < count; ++i) {
    t.values[i] = r.f32();
    if (!(t.values[i] >= 0.0)) {
      throw NegativeActivation(path.string() + ": negative or NaN activation at index " +
                        std::to_string(i));
    }
  }
  return t;
}

}  // namespace gem
