#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cdnn/adam.hpp"
#include "cdnn/architecture.hpp"
#include "cdnn/layers.hpp"
#include "cdnn/tensor.hpp"

namespace cdnn {

template <typename T>
struct LayerState {
  std::optional<ConvParams<T>> conv;       // conv / deconv / output kinds
  std::optional<BatchNormParams<T>> bn;
};

/// Per-layer activations retained by a train-mode forward pass, consumed by
/// backward() exactly once.
template <typename T>
struct ForwardCache {
  struct Layer {
    Tensor<T> x_in;                  // layer input (conv kinds)
    BatchNormCache<T> bn;
    Tensor<T> pre_act;               // activation input
    Tensor<T> act_out;               // sigmoid output (output layer)
    Tensor<std::uint8_t> pool_idx;   // maxpool argmax
    Tensor<std::uint8_t> drop_mask;  // dropout keep mask
  };
  std::vector<Layer> layers;
  bool valid = false;
};

template <typename T>
struct BackwardResult {
  std::vector<Tensor<T>> param_grads;  // aligned with Model::trainable()
  Tensor<T> input_grad;
};

/// All state of one network instance: layer parameters, batch-norm running
/// statistics and the Adam moment buffers, plus the architecture they were
/// built for. Forward/backward walk the architecture layer by layer.
template <typename T>
class Model {
 public:
  explicit Model(ArchitectureSpec spec) : spec_(std::move(spec)) {
    validate(spec_);
    fingerprint_ = cdnn::fingerprint(spec_);
    int ch = spec_.in_channels;
    for (const LayerSpec& l : spec_.layers) {
      LayerState<T> state;
      if (is_conv_kind(l.kind)) {
        ConvParams<T> cp;
        cp.weights = l.kind == LayerKind::deconv
                         ? Tensor<T>({ch, l.features, l.kernel, l.kernel})
                         : Tensor<T>({l.features, ch, l.kernel, l.kernel});
        cp.bias = Tensor<T>({l.features});
        state.conv = std::move(cp);
        if (l.batchnorm) state.bn = make_batchnorm<T>(l.features);
        ch = l.features;
      }
      layers_.push_back(std::move(state));
    }
    adam_ = AdamState<T>::init_like(trainable());
  }

  /// He-normal weight init (std = sqrt(2/fan_in)), zero biases, unit gamma,
  /// zero beta, running statistics (0,1). Deterministic under the seed.
  static Model init(const ArchitectureSpec& spec, Rng& rng) {
    Model model(spec);
    for (std::size_t i = 0; i < model.layers_.size(); ++i) {
      LayerState<T>& state = model.layers_[i];
      if (!state.conv) continue;
      const Shape& ws = state.conv->weights.shape();
      const LayerSpec& l = spec.layers[i];
      const int in_ch = l.kind == LayerKind::deconv ? ws[0] : ws[1];
      const T stddev = std::sqrt(T(2) / static_cast<T>(in_ch * l.kernel * l.kernel));
      state.conv->weights = random_normal<T>(rng, ws, T(0), stddev);
    }
    return model;
  }

  const ArchitectureSpec& spec() const { return spec_; }
  std::uint64_t fingerprint() const { return fingerprint_; }
  AdamState<T>& adam() { return adam_; }
  const AdamState<T>& adam() const { return adam_; }
  LayerState<T>& layer(std::size_t i) { return layers_.at(i); }

  std::vector<Tensor<T>*> trainable() {
    std::vector<Tensor<T>*> out;
    for (LayerState<T>& l : layers_) {
      if (!l.conv) continue;
      out.push_back(&l.conv->weights);
      out.push_back(&l.conv->bias);
      if (l.bn) {
        out.push_back(&l.bn->gamma);
        out.push_back(&l.bn->beta);
      }
    }
    return out;
  }

  std::vector<std::string> trainable_names() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (!layers_[i].conv) continue;
      const std::string& base = spec_.layers[i].name;
      out.push_back(base + "/W");
      out.push_back(base + "/b");
      if (layers_[i].bn) {
        out.push_back(base + "/bn_gamma");
        out.push_back(base + "/bn_beta");
      }
    }
    return out;
  }

  /// Forward pass. Train mode needs an Rng whenever the architecture has
  /// active dropout, updates batch-norm running statistics, and fills
  /// `cache` (when given) for a subsequent backward().
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Rng* rng = nullptr,
                    ForwardCache<T>* cache = nullptr) {
    const Shape expected{x.extent(0), spec_.in_channels, spec_.in_height, spec_.in_width};
    if (x.rank() != 4 || x.shape() != expected)
      throw NumericError(msg("forward: input shape ", shape_str(x.shape()), " does not match ",
                             shape_str(expected)));
    if (cache) {
      cache->layers.assign(layers_.size(), {});
      cache->valid = mode == Mode::train;
    }

    Tensor<T> cur = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const LayerSpec& l = spec_.layers[i];
      LayerState<T>& state = layers_[i];
      typename ForwardCache<T>::Layer* lc = cache ? &cache->layers[i] : nullptr;
      switch (l.kind) {
        case LayerKind::conv:
        case LayerKind::deconv:
        case LayerKind::output: {
          if (lc) lc->x_in = cur;
          cur = l.kind == LayerKind::deconv ? deconv2d_forward(cur, *state.conv)
                                            : conv2d_forward(cur, *state.conv);
          if (state.bn)
            cur = batchnorm_forward(cur, *state.bn, mode, lc ? &lc->bn : nullptr);
          if (l.activation == Activation::relu) {
            if (lc) lc->pre_act = cur;
            cur = relu(cur);
          } else if (l.activation == Activation::sigmoid) {
            cur = sigmoid(cur);
            if (lc) lc->act_out = cur;
          }
          break;
        }
        case LayerKind::maxpool: {
          auto [y, idx] = maxpool2x2_forward(cur);
          cur = std::move(y);
          if (lc) lc->pool_idx = std::move(idx);
          break;
        }
        case LayerKind::upsample:
          cur = upsample2x2(cur);
          break;
        case LayerKind::dropout: {
          if (mode == Mode::infer) break;  // identity at inference
          if (!rng) throw NumericError("forward: dropout in train mode needs an Rng");
          auto [y, m] = dropout(cur, {l.dropout_rate, Mode::train}, *rng);
          cur = std::move(y);
          if (lc) lc->drop_mask = std::move(m);
          break;
        }
      }
    }
    return cur;
  }

  /// Convenience inference entry point; never mutates model state.
  Tensor<T> predict(const Tensor<T>& x) const {
    return const_cast<Model*>(this)->forward(x, Mode::infer);
  }

  /// Backpropagates d(loss)/d(output) through the whole graph, returning one
  /// gradient per trainable tensor (same order as trainable()) plus the
  /// input gradient. Requires the cache of a train-mode forward.
  BackwardResult<T> backward(ForwardCache<T>& cache, const Tensor<T>& grad_out) {
    if (!cache.valid || cache.layers.size() != layers_.size())
      throw NumericError("backward: missing or stale forward cache");

    std::vector<std::vector<Tensor<T>>> per_layer(layers_.size());
    Tensor<T> g = grad_out;
    for (std::size_t ri = layers_.size(); ri-- > 0;) {
      const LayerSpec& l = spec_.layers[ri];
      LayerState<T>& state = layers_[ri];
      typename ForwardCache<T>::Layer& lc = cache.layers[ri];
      switch (l.kind) {
        case LayerKind::conv:
        case LayerKind::deconv:
        case LayerKind::output: {
          if (l.activation == Activation::relu)
            g = relu_backward(lc.pre_act, g);
          else if (l.activation == Activation::sigmoid)
            g = sigmoid_backward(lc.act_out, g);
          Tensor<T> ggamma, gbeta;
          if (state.bn) {
            auto [gx, gg, gb] = batchnorm_backward(*state.bn, lc.bn, g);
            g = std::move(gx);
            ggamma = std::move(gg);
            gbeta = std::move(gb);
          }
          auto [gx, gw, gb] = l.kind == LayerKind::deconv
                                  ? deconv2d_backward(lc.x_in, *state.conv, g)
                                  : conv2d_backward(lc.x_in, *state.conv, g);
          g = std::move(gx);
          per_layer[ri].push_back(std::move(gw));
          per_layer[ri].push_back(std::move(gb));
          if (state.bn) {
            per_layer[ri].push_back(std::move(ggamma));
            per_layer[ri].push_back(std::move(gbeta));
          }
          break;
        }
        case LayerKind::maxpool:
          g = maxpool2x2_backward(lc.pool_idx, g);
          break;
        case LayerKind::upsample:
          g = upsample2x2_backward(g);
          break;
        case LayerKind::dropout:
          g = dropout_backward(lc.drop_mask, l.dropout_rate, g);
          break;
      }
    }
    cache.valid = false;

    BackwardResult<T> result;
    for (auto& grads : per_layer)
      for (auto& t : grads) result.param_grads.push_back(std::move(t));
    result.input_grad = std::move(g);
    return result;
  }

  // ---- serialization --------------------------------------------------------

  /// All persistent tensors in serialization order: parameters, batch-norm
  /// running statistics, then Adam moments.
  std::vector<std::pair<std::string, Tensor<T>*>> persistent_tensors() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (!layers_[i].conv) continue;
      const std::string& base = spec_.layers[i].name;
      out.emplace_back(base + "/W", &layers_[i].conv->weights);
      out.emplace_back(base + "/b", &layers_[i].conv->bias);
      if (layers_[i].bn) {
        out.emplace_back(base + "/bn_gamma", &layers_[i].bn->gamma);
        out.emplace_back(base + "/bn_beta", &layers_[i].bn->beta);
        out.emplace_back(base + "/bn_mean", &layers_[i].bn->running_mean);
        out.emplace_back(base + "/bn_var", &layers_[i].bn->running_var);
      }
    }
    const std::vector<std::string> names = trainable_names();
    for (std::size_t k = 0; k < names.size(); ++k) {
      out.emplace_back(names[k] + ".m", &adam_.m[k]);
      out.emplace_back(names[k] + ".v", &adam_.v[k]);
    }
    return out;
  }

  void save(const std::filesystem::path& path);
  static Model load(const std::filesystem::path& path, const ArchitectureSpec& spec);

 private:
  static bool is_conv_kind(LayerKind k) {
    return k == LayerKind::conv || k == LayerKind::deconv || k == LayerKind::output;
  }

  ArchitectureSpec spec_;
  std::uint64_t fingerprint_ = 0;
  std::vector<LayerState<T>> layers_;
  AdamState<T> adam_;
};

using ModelF = Model<float>;
using ModelD = Model<double>;

// ---- weight file format -------------------------------------------------------
//
//   magic "CDNNWGTS" | u32 version | u64 fingerprint | u64 adam step | u32 count
//   then per tensor: u32 name length | name | u8 dtype | u32 rank | u64 extents
//   | raw little-endian values.
//
// Fixed tensor order makes save -> load -> save byte-identical.

namespace weightfile {

constexpr char kMagic[8] = {'C', 'D', 'N', 'N', 'W', 'G', 'T', 'S'};
constexpr std::uint32_t kVersion = 1;

template <typename V>
void write_pod(std::ostream& os, const V& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::istream& is) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw DataError("truncated weight file");
  return v;
}

template <typename T>
constexpr std::uint8_t dtype_tag() {
  return std::is_same_v<T, float> ? 0 : 1;
}

}  // namespace weightfile

template <typename T>
void Model<T>::save(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError(msg("cannot open ", path.string(), " for writing"));
  os.write(weightfile::kMagic, sizeof(weightfile::kMagic));
  weightfile::write_pod(os, weightfile::kVersion);
  weightfile::write_pod(os, fingerprint_);
  weightfile::write_pod(os, static_cast<std::uint64_t>(adam_.step));

  auto tensors = persistent_tensors();
  weightfile::write_pod(os, static_cast<std::uint32_t>(tensors.size()));
  for (auto& [name, tensor] : tensors) {
    weightfile::write_pod(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    weightfile::write_pod(os, weightfile::dtype_tag<T>());
    weightfile::write_pod(os, static_cast<std::uint32_t>(tensor->rank()));
    for (int d = 0; d < tensor->rank(); ++d)
      weightfile::write_pod(os, static_cast<std::uint64_t>(tensor->extent(d)));
    os.write(reinterpret_cast<const char*>(tensor->data()),
             static_cast<std::streamsize>(tensor->size() * sizeof(T)));
  }
  if (!os) throw DataError(msg("failed writing ", path.string()));
}

template <typename T>
Model<T> Model<T>::load(const std::filesystem::path& path, const ArchitectureSpec& spec) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(msg("cannot open weight file ", path.string()));

  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, weightfile::kMagic, sizeof(magic)) != 0)
    throw DataError(msg(path.string(), " is not a CDNN weight file"));
  const auto version = weightfile::read_pod<std::uint32_t>(is);
  if (version != weightfile::kVersion)
    throw DataError(msg(path.string(), ": unsupported weight file version ", version));

  Model model(spec);
  const auto stored_fp = weightfile::read_pod<std::uint64_t>(is);
  if (stored_fp != model.fingerprint_)
    throw DataError(msg(path.string(), ": architecture fingerprint mismatch (file ", stored_fp,
                        ", expected ", model.fingerprint_, ")"));
  model.adam_.step = static_cast<std::int64_t>(weightfile::read_pod<std::uint64_t>(is));

  const auto count = weightfile::read_pod<std::uint32_t>(is);
  auto tensors = model.persistent_tensors();
  if (count != tensors.size())
    throw DataError(msg(path.string(), ": expected ", tensors.size(), " tensors, file has ",
                        count));
  for (auto& [name, tensor] : tensors) {
    const auto name_len = weightfile::read_pod<std::uint32_t>(is);
    std::string stored_name(name_len, '\0');
    is.read(stored_name.data(), name_len);
    if (!is) throw DataError("truncated weight file");
    if (stored_name != name)
      throw DataError(msg(path.string(), ": tensor ", stored_name, " where ", name,
                          " was expected"));
    const auto dtype = weightfile::read_pod<std::uint8_t>(is);
    if (dtype != weightfile::dtype_tag<T>())
      throw DataError(msg(path.string(), ": tensor ", name, " has dtype tag ", int(dtype),
                          ", expected ", int(weightfile::dtype_tag<T>())));
    const auto rank = weightfile::read_pod<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<int>(weightfile::read_pod<std::uint64_t>(is));
    if (shape != tensor->shape())
      throw DataError(msg(path.string(), ": tensor ", name, " has shape ", shape_str(shape),
                          ", expected ", shape_str(tensor->shape())));
    is.read(reinterpret_cast<char*>(tensor->data()),
            static_cast<std::streamsize>(tensor->size() * sizeof(T)));
    if (!is) throw DataError("truncated weight file");
  }
  return model;
}

}  // namespace cdnn
