#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "cdnn/adam.hpp"
#include "cdnn/image.hpp"
#include "cdnn/loss.hpp"
#include "cdnn/model.hpp"

namespace cdnn {

struct TrainConfig {
  int batch_size = 18;
  int epochs = 600;
  double lr = 0.003;
  int folds = 5;
  std::uint64_t seed = 0;
  bool augment_geometric = true;
  bool augment_contrast = true;
  AugmentationConfig augmentation;
  JaccardLossConfig loss;
  AdamConfig adam() const { return {lr, 0.9, 0.999, 1e-8}; }
};

/// One training pair at network resolution.
struct TrainSample {
  Tensor<float> input;  // (7, H, W)
  GrayImage mask;       // binary {0,1}
};

struct EpochLoss {
  double train = 0.0;
  double val = 0.0;
  bool has_val = false;
};
using LossCurve = std::vector<EpochLoss>;

struct FoldSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Shuffled k-fold partition: every index appears in exactly one validation
/// fold and fold sizes differ by at most one.
std::vector<FoldSplit> kfold_split(std::size_t n_items, int k, std::uint64_t seed);

/// Trains in place for cfg.epochs over the train set: per epoch, shuffle,
/// re-augment every mini-batch from the originals, one Adam step per batch
/// with the Jaccard-distance loss summed jointly over the batch pixels.
/// Validation loss (augmentation off, inference statistics) is recorded per
/// epoch when a validation set is present.
LossCurve train_fold(Model<float>& model, std::span<const TrainSample> train_set,
                     std::span<const TrainSample> val_set, const TrainConfig& cfg, Rng& rng);

/// Mean probability map over models of identical architecture fingerprint.
Tensor<float> ensemble_predict(std::span<Model<float>* const> models, const Tensor<float>& x);

/// "epoch,train_loss,val_loss" rows; the val column is empty when absent.
void write_loss_csv(const LossCurve& curve, const std::filesystem::path& path);

/// Mean Jaccard loss over a set in inference mode, without augmentation.
double evaluate_loss(Model<float>& model, std::span<const TrainSample> samples,
                     const JaccardLossConfig& cfg, int batch_size);

}  // namespace cdnn
