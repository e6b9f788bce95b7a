#include "vscam/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <vector>

#include "vscam/errors.hpp"

namespace vscam {

Tensor dihedral(const Tensor& image, unsigned which) {
  if (image.rank() != 3 || image.dim(1) != image.dim(2)) {
    throw DimensionError("dihedral needs a square C x H x H image, got " + shape_str(image.shape()));
  }
  const std::size_t c = image.dim(0), n = image.dim(1);
  Tensor out(image.shape());
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        std::size_t sy = y, sx = x;
        if (which & 4u) std::swap(sy, sx);
        if (which & 2u) sy = n - 1 - sy;
        if (which & 1u) sx = n - 1 - sx;
        out.at(k, y, x) = image.at(k, sy, sx);
      }
  return out;
}

double accuracy(const ViGModel& model, std::span<const LabeledImage> data, Precision precision) {
  if (data.empty()) throw DomainError("accuracy of an empty dataset");
  std::size_t correct = 0;
  for (const auto& s : data) correct += predict_class(model, s.image, precision) == s.label;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

void train(ViGModel& model, std::span<const LabeledImage> data, const TrainOptions& options,
           const std::function<void(const EpochStats&)>& on_epoch) {
  if (data.empty()) throw DomainError("cannot train on an empty dataset");
  if (options.batch_size == 0) throw DomainError("batch size must be positive");
  if (!(options.lr >= 0.0)) throw DomainError("learning rate must be non-negative");

  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<unsigned> pick_symmetry(0, 7);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t steps_per_epoch = (data.size() + options.batch_size - 1) / options.batch_size;
  const double total_steps = static_cast<double>(options.epochs * steps_per_epoch);
  std::size_t step = 0;

  std::vector<LabeledImage> batch;
  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + options.batch_size); ++k) {
        const LabeledImage& s = data[order[k]];
        batch.push_back(options.augment ? LabeledImage{dihedral(s.image, pick_symmetry(rng)), s.label}
                                        : s);
      }
      double lr = options.lr;
      if (options.cosine_decay) {
        lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / total_steps));
      }
      loss += train_step(model, batch, lr, options.precision);
      ++step;
    }
    if (on_epoch) {
      on_epoch({epoch, loss / static_cast<double>(steps_per_epoch), accuracy(model, data)});
    }
  }
}

}  // namespace vscam
