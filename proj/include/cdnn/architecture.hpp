#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cdnn {

enum class LayerKind { conv, deconv, maxpool, upsample, dropout, output };
enum class Activation { relu, sigmoid, none };

/// One row of the declarative architecture description. Convolutional kinds
/// carry a square kernel extent and an output feature count; dropout carries
/// only a rate; pool/upsample carry nothing.
struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  std::string name;
  int kernel = 0;
  int features = 0;
  Activation activation = Activation::none;
  bool batchnorm = false;
  double dropout_rate = 0.0;
};

struct ArchitectureSpec {
  int in_channels = 7;
  int in_height = 192;
  int in_width = 256;
  std::vector<LayerSpec> layers;
};

/// The 29-layer convolutional-deconvolutional network: an encoder of 3x3/4x4
/// convolutions with four 2x2 max-pools, mirrored by a decoder of transposed
/// convolutions with four 2x2 upsamplings, a sigmoid 1-channel output head,
/// and p=0.5 dropout before conv-4-1 and decv-5-1. `width_divisor` scales
/// every feature count down (min 1) for cheap desk-scale runs.
ArchitectureSpec build_cdnn29(int width_divisor = 1);

/// Checks channel chaining, even extents at every pool, spatial closure
/// (output extents equal input extents) and the sigmoid 1-channel head.
/// Throws NumericError describing the first violation.
void validate(const ArchitectureSpec& spec);

/// Total trainable element count: weights + biases + batchnorm gamma/beta.
/// Batchnorm running statistics are not trainable and are excluded.
std::int64_t count_parameters(const ArchitectureSpec& spec);

/// Stable 64-bit hash of the canonical text form of the spec; used to reject
/// weight files produced for a different architecture.
std::uint64_t fingerprint(const ArchitectureSpec& spec);

/// Canonical one-line-per-layer text rendering (also the hashed form).
std::string to_text(const ArchitectureSpec& spec);

const char* kind_name(LayerKind k);
const char* activation_name(Activation a);

/// Output (channels, height, width) after each layer, for reports.
struct LayerDims {
  std::string name;
  int channels, height, width;
};
std::vector<LayerDims> layer_dims(const ArchitectureSpec& spec);

}  // namespace cdnn
