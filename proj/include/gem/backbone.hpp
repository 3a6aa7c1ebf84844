#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "gem/numerics.hpp"

namespace gem {

// Pixels in [0,1], interleaved: index = (y * width + x) * channels + c.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::size_t c, double fill = 0.0)
      : width(w), height(h), channels(c), pixels(w * h * c, fill) {}

  double& at(std::size_t x, std::size_t y, std::size_t c) {
    return pixels[(y * width + x) * channels + c];
  }
  double at(std::size_t x, std::size_t y, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
};

Image resize_bilinear(const Image& img, std::size_t width, std::size_t height);

// Downscales so the longer side equals max_side; images already within the
// cap are returned unchanged.
Image resize_max_side(const Image& img, std::size_t max_side);

// Rescales both sides by `factor`, rounding to the nearest pixel (minimum 1).
Image resize_by_factor(const Image& img, double factor);

// Pixel rectangle [x, x+w) x [y, y+h); throws if it leaves the image.
Image crop(const Image& img, std::size_t x, std::size_t y, std::size_t w, std::size_t h);

// One valid-padding convolution followed by ReLU. Weights are stored
// kernel-row, kernel-col, input map, output map (HWIO).
struct ConvLayer {
  std::size_t kernel = 3;
  std::size_t in_maps = 1;
  std::size_t out_maps = 1;
  std::size_t stride = 1;
  std::vector<double> weights;
  std::vector<double> bias;

  std::size_t weight_index(std::size_t ky, std::size_t kx, std::size_t i,
                           std::size_t o) const {
    return ((ky * kernel + kx) * in_maps + i) * out_maps + o;
  }
  std::size_t output_size(std::size_t input) const { return (input - kernel) / stride + 1; }
};

struct LayerShape {
  std::size_t kernel;
  std::size_t in_maps;
  std::size_t out_maps;
  std::size_t stride = 1;
};

// Fully convolutional network whose every layer ends in ReLU, so its output
// is non-negative.
class TinyFCN {
 public:
  TinyFCN() = default;
  explicit TinyFCN(std::vector<ConvLayer> layers);

  // Glorot-uniform weights, zero biases.
  static TinyFCN create(std::span<const LayerShape> shapes, std::uint64_t seed);
  // 3x3 kernels, maps in -> 8 -> 16 -> out_maps.
  static std::vector<LayerShape> default_shapes(std::size_t in_channels,
                                                std::size_t out_maps = 32);

  const std::vector<ConvLayer>& layers() const { return layers_; }
  std::vector<ConvLayer>& layers() { return layers_; }
  std::size_t input_maps() const;
  std::size_t output_maps() const;
  std::size_t parameter_count() const;

  // Smallest input side accepted by forward().
  std::size_t min_input_side() const;

 private:
  std::vector<ConvLayer> layers_;
};

struct ForwardCache {
  std::vector<ActivationTensor> inputs;           // input of each layer
  std::vector<ActivationTensor> pre_activations;  // conv output before ReLU
};

struct LayerGradients {
  std::vector<double> weights;
  std::vector<double> bias;
};

struct BackboneGradients {
  std::vector<LayerGradients> layers;

  static BackboneGradients zeros_like(const TinyFCN& net);
  BackboneGradients& operator+=(const BackboneGradients& other);
};

ActivationTensor image_to_tensor(const Image& img);

struct ForwardResult {
  ActivationTensor output;
  ForwardCache cache;
};

ForwardResult forward(const TinyFCN& net, const Image& img);
ActivationTensor forward_output(const TinyFCN& net, const Image& img);

BackboneGradients backward(const TinyFCN& net, const ForwardCache& cache,
                           const ActivationTensor& grad_out);

// "GEMT" tensor files.
void save_precomputed(const std::filesystem::path& path, const ActivationTensor& t);
ActivationTensor load_precomputed(const std::filesystem::path& path);

}  // namespace gem
