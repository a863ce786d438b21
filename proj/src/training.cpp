#include "cdnn/training.hpp"

#include <fstream>
#include <numeric>

#include "cdnn/errors.hpp"

namespace cdnn {

std::vector<FoldSplit> kfold_split(std::size_t n_items, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError(msg("k-fold split needs k >= 2, got ", k));
  if (n_items < static_cast<std::size_t>(k))
    throw ConfigError(msg("k-fold split needs at least ", k, " items, got ", n_items));

  std::vector<std::size_t> order(n_items);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  shuffle(order, rng);

  // First (n mod k) folds take one extra item.
  std::vector<FoldSplit> folds(static_cast<std::size_t>(k));
  const std::size_t base = n_items / static_cast<std::size_t>(k);
  const std::size_t extra = n_items % static_cast<std::size_t>(k);
  std::size_t pos = 0;
  for (int f = 0; f < k; ++f) {
    const std::size_t take = base + (static_cast<std::size_t>(f) < extra ? 1 : 0);
    auto& fold = folds[static_cast<std::size_t>(f)];
    fold.val.assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                    order.begin() + static_cast<std::ptrdiff_t>(pos + take));
    pos += take;
  }
  for (int f = 0; f < k; ++f) {
    auto& fold = folds[static_cast<std::size_t>(f)];
    for (int g = 0; g < k; ++g)
      if (g != f)
        fold.train.insert(fold.train.end(), folds[static_cast<std::size_t>(g)].val.begin(),
                          folds[static_cast<std::size_t>(g)].val.end());
  }
  return folds;
}

namespace {

/// Stacks samples (optionally augmented) into batch tensors (B,7,H,W) and
/// (B,1,H,W).
std::pair<Tensor<float>, Tensor<float>> make_batch(std::span<const TrainSample> samples,
                                                   std::span<const std::size_t> indices,
                                                   const TrainConfig* augment_cfg, Rng* rng) {
  const int b = static_cast<int>(indices.size());
  const Tensor<float>& first = samples[indices[0]].input;
  const int ch = first.extent(0), h = first.extent(1), w = first.extent(2);
  Tensor<float> x({b, ch, h, w});
  Tensor<float> t({b, 1, h, w});
  const std::size_t x_img = static_cast<std::size_t>(ch) * h * w;
  const std::size_t t_img = static_cast<std::size_t>(h) * w;
  for (int i = 0; i < b; ++i) {
    const TrainSample& s = samples[indices[static_cast<std::size_t>(i)]];
    Tensor<float> input = s.input;
    GrayImage mask = s.mask;
    if (augment_cfg) {
      if (augment_cfg->augment_geometric) {
        auto [ai, am] = augment_geometric(input, mask, augment_cfg->augmentation, *rng);
        input = std::move(ai);
        mask = std::move(am);
      }
      if (augment_cfg->augment_contrast)
        input = augment_contrast(input, augment_cfg->augmentation, *rng);
    }
    std::copy(input.begin(), input.end(), x.data() + static_cast<std::size_t>(i) * x_img);
    std::copy(mask.v.begin(), mask.v.end(), t.data() + static_cast<std::size_t>(i) * t_img);
  }
  return {std::move(x), std::move(t)};
}

}  // namespace

double evaluate_loss(Model<float>& model, std::span<const TrainSample> samples,
                     const JaccardLossConfig& cfg, int batch_size) {
  double total = 0.0;
  std::size_t done = 0;
  std::vector<std::size_t> indices(samples.size());
  std::iota(indices.begin(), indices.end(), 0);
  while (done < samples.size()) {
    const std::size_t take = std::min<std::size_t>(batch_size, samples.size() - done);
    auto [x, t] = make_batch(samples, {indices.data() + done, take}, nullptr, nullptr);
    const Tensor<float> p = model.forward(x, Mode::infer);
    total += jaccard_loss(t, p, cfg) * static_cast<double>(take);
    done += take;
  }
  return total / static_cast<double>(samples.size());
}

LossCurve train_fold(Model<float>& model, std::span<const TrainSample> train_set,
                     std::span<const TrainSample> val_set, const TrainConfig& cfg, Rng& rng) {
  if (train_set.empty()) throw ConfigError("train_fold: empty training set");
  if (cfg.batch_size < 1 ||
      static_cast<std::size_t>(cfg.batch_size) > train_set.size())
    throw ConfigError(msg("batch size ", cfg.batch_size, " invalid for training set of ",
                          train_set.size()));
  if (cfg.epochs < 1) throw ConfigError("train_fold: epochs must be >= 1");

  const AdamConfig adam_cfg = cfg.adam();
  const std::vector<std::string> names = model.trainable_names();

  LossCurve curve;
  curve.reserve(static_cast<std::size_t>(cfg.epochs));
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, rng);
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    while (seen < order.size()) {
      const std::size_t take = std::min<std::size_t>(cfg.batch_size, order.size() - seen);
      auto [x, t] = make_batch(train_set, {order.data() + seen, take}, &cfg, &rng);
      seen += take;

      ForwardCache<float> cache;
      const Tensor<float> p = model.forward(x, Mode::train, &rng, &cache);
      epoch_loss += jaccard_loss(t, p, cfg.loss) * static_cast<double>(take);
      const Tensor<float> grad = jaccard_loss_grad(t, p, cfg.loss);
      BackwardResult<float> back = model.backward(cache, grad);
      adam_step(model.adam(), adam_cfg, model.trainable(), back.param_grads, names);
    }

    EpochLoss e;
    e.train = epoch_loss / static_cast<double>(order.size());
    if (!val_set.empty()) {
      e.val = evaluate_loss(model, val_set, cfg.loss, cfg.batch_size);
      e.has_val = true;
    }
    curve.push_back(e);
  }
  return curve;
}

Tensor<float> ensemble_predict(std::span<Model<float>* const> models, const Tensor<float>& x) {
  if (models.empty()) throw ConfigError("ensemble_predict: no models");
  for (const Model<float>* m : models)
    if (m->fingerprint() != models.front()->fingerprint())
      throw DataError("ensemble_predict: architecture fingerprints differ");

  Tensor<float> mean = models.front()->predict(x);
  if (models.size() == 1) return mean;
  Tensor<double> acc = mean.template cast<double>();
  for (std::size_t i = 1; i < models.size(); ++i) {
    const Tensor<float> p = models[i]->predict(x);
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += static_cast<double>(p[j]);
  }
  const double inv = 1.0 / static_cast<double>(models.size());
  Tensor<float> out(mean.shape());
  for (std::size_t j = 0; j < acc.size(); ++j) out[j] = static_cast<float>(acc[j] * inv);
  return out;
}

void write_loss_csv(const LossCurve& curve, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError(msg("cannot write ", path.string()));
  os << "epoch,train_loss,val_loss\n";
  os.precision(9);
  for (std::size_t i = 0; i < curve.size(); ++i) {
    os << (i + 1) << "," << curve[i].train << ",";
    if (curve[i].has_val) os << curve[i].val;
    os << "\n";
  }
}

}  // namespace cdnn
