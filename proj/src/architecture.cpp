#include "cdnn/architecture.hpp"

#include <algorithm>
#include <sstream>

#include "cdnn/errors.hpp"

namespace cdnn {

namespace {

LayerSpec conv(const char* name, int kernel, int features) {
  return {LayerKind::conv, name, kernel, features, Activation::relu, true, 0.0};
}
LayerSpec deconv(const char* name, int kernel, int features) {
  return {LayerKind::deconv, name, kernel, features, Activation::relu, true, 0.0};
}
LayerSpec pool(const char* name) {
  return {LayerKind::maxpool, name, 2, 0, Activation::none, false, 0.0};
}
LayerSpec ups(const char* name) {
  return {LayerKind::upsample, name, 2, 0, Activation::none, false, 0.0};
}
LayerSpec drop(const char* name, double rate) {
  return {LayerKind::dropout, name, 0, 0, Activation::none, false, rate};
}

int scaled(int features, int divisor) { return std::max(1, features / divisor); }

}  // namespace

ArchitectureSpec build_cdnn29(int width_divisor) {
  if (width_divisor < 1) throw ConfigError("width divisor must be >= 1");
  const int d = width_divisor;
  ArchitectureSpec s;
  s.in_channels = 7;
  s.in_height = 192;
  s.in_width = 256;
  s.layers = {
      conv("conv-1-1", 3, scaled(16, d)),
      conv("conv-1-2", 3, scaled(32, d)),
      pool("pool-1"),
      conv("conv-2-1", 3, scaled(64, d)),
      conv("conv-2-2", 3, scaled(64, d)),
      pool("pool-2"),
      conv("conv-3-1", 3, scaled(128, d)),
      conv("conv-3-2", 4, scaled(128, d)),
      pool("pool-3"),
      drop("drop-1", 0.5),
      conv("conv-4-1", 3, scaled(256, d)),
      conv("conv-4-2", 3, scaled(256, d)),
      pool("pool-4"),
      conv("conv-5", 3, scaled(512, d)),
      deconv("decv-1", 3, scaled(256, d)),
      ups("ups-1"),
      deconv("decv-2-1", 3, scaled(256, d)),
      deconv("decv-2-2", 3, scaled(128, d)),
      ups("ups-2"),
      deconv("decv-3-1", 4, scaled(128, d)),
      deconv("decv-3-2", 3, scaled(128, d)),
      ups("ups-3"),
      deconv("decv-4-1", 3, scaled(64, d)),
      deconv("decv-4-2", 3, scaled(32, d)),
      ups("ups-4"),
      drop("drop-2", 0.5),
      deconv("decv-5-1", 3, scaled(16, d)),
      {LayerKind::output, "output", 3, 1, Activation::sigmoid, false, 0.0},
  };
  return s;
}

void validate(const ArchitectureSpec& spec) {
  if (spec.in_channels < 1 || spec.in_height < 1 || spec.in_width < 1)
    throw NumericError("architecture: input extents must be positive");
  if (spec.layers.empty()) throw NumericError("architecture: no layers");

  int ch = spec.in_channels;
  int h = spec.in_height, w = spec.in_width;
  for (const LayerSpec& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::deconv:
      case LayerKind::output:
        if (l.kernel < 1) throw NumericError(msg("architecture: ", l.name, " has no kernel"));
        if (l.features < 1)
          throw NumericError(msg("architecture: ", l.name, " has no output features"));
        if (h < l.kernel / 2 + 1 || w < l.kernel / 2 + 1)
          throw NumericError(msg("architecture: ", l.name, " kernel exceeds extents ", h, "x", w));
        ch = l.features;
        break;
      case LayerKind::maxpool:
        if (h % 2 || w % 2)
          throw NumericError(msg("architecture: ", l.name, " on odd extents ", h, "x", w));
        h /= 2;
        w /= 2;
        break;
      case LayerKind::upsample:
        h *= 2;
        w *= 2;
        break;
      case LayerKind::dropout:
        if (l.dropout_rate < 0.0 || l.dropout_rate >= 1.0)
          throw NumericError(msg("architecture: ", l.name, " rate outside [0,1)"));
        break;
    }
  }
  if (h != spec.in_height || w != spec.in_width)
    throw NumericError(msg("architecture: spatial bookkeeping does not close, ", spec.in_height,
                           "x", spec.in_width, " -> ", h, "x", w));
  const LayerSpec& last = spec.layers.back();
  if (last.kind != LayerKind::output || last.features != 1 ||
      last.activation != Activation::sigmoid)
    throw NumericError("architecture: final layer must be a 1-channel sigmoid output");
}

std::int64_t count_parameters(const ArchitectureSpec& spec) {
  std::int64_t total = 0;
  int ch = spec.in_channels;
  for (const LayerSpec& l : spec.layers) {
    if (l.kind == LayerKind::conv || l.kind == LayerKind::deconv ||
        l.kind == LayerKind::output) {
      const std::int64_t k = l.kernel;
      total += static_cast<std::int64_t>(l.features) * ch * k * k;  // weights
      total += l.features;                                          // bias
      if (l.batchnorm) total += 2LL * l.features;                   // gamma + beta
      ch = l.features;
    }
  }
  return total;
}

std::string to_text(const ArchitectureSpec& spec) {
  std::ostringstream os;
  os << "input " << spec.in_channels << " " << spec.in_height << "x" << spec.in_width << "\n";
  for (const LayerSpec& l : spec.layers) {
    os << l.name << " " << kind_name(l.kind);
    if (l.kernel) os << " k" << l.kernel;
    if (l.features) os << " f" << l.features;
    os << " " << activation_name(l.activation);
    if (l.batchnorm) os << " bn";
    if (l.kind == LayerKind::dropout) os << " p" << l.dropout_rate;
    os << "\n";
  }
  return os.str();
}

std::uint64_t fingerprint(const ArchitectureSpec& spec) {
  // FNV-1a over the canonical text form.
  const std::string text = to_text(spec);
  std::uint64_t hash = 0xCBF29CE484222325ull;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001B3ull;
  }
  return hash;
}

std::vector<LayerDims> layer_dims(const ArchitectureSpec& spec) {
  std::vector<LayerDims> dims;
  int ch = spec.in_channels, h = spec.in_height, w = spec.in_width;
  for (const LayerSpec& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::deconv:
      case LayerKind::output: ch = l.features; break;
      case LayerKind::maxpool: h /= 2; w /= 2; break;
      case LayerKind::upsample: h *= 2; w *= 2; break;
      case LayerKind::dropout: break;
    }
    dims.push_back({l.name, ch, h, w});
  }
  return dims;
}

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::deconv: return "deconv";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::upsample: return "upsample";
    case LayerKind::dropout: return "dropout";
    case LayerKind::output: return "output";
  }
  return "?";
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::none: return "none";
  }
  return "?";
}

}  // namespace cdnn
