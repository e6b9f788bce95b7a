#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>

#include "vscam/vig_model.hpp"

namespace vscam {

struct TrainOptions {
  std::size_t epochs = 30;
  double lr = 0.03;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;  ///< shuffling and augmentation
  /// Cosine decay of the step size from lr to 0 over all epochs; constant lr when false.
  bool cosine_decay = true;
  /// Random flips and quarter turns of each training image.
  bool augment = false;
  Precision precision = Precision::float32;
};

struct EpochStats {
  std::size_t epoch = 0;  ///< 1-based
  double loss = 0;        ///< mean training loss over the epoch
  double accuracy = 0;    ///< training-set accuracy after the epoch
};

/// Applies one of the 8 symmetries of the square (0 is the identity) to a C x H x H image.
Tensor dihedral(const Tensor& image, unsigned which);

double accuracy(const ViGModel& model, std::span<const LabeledImage> data,
                Precision precision = Precision::float64);

/// Mini-batch SGD over shuffled data. `on_epoch` is called after every epoch.
void train(ViGModel& model, std::span<const LabeledImage> data, const TrainOptions& options,
           const std::function<void(const EpochStats&)>& on_epoch = {});

}  // namespace vscam
