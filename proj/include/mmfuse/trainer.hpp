#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mmfuse/dataset.hpp"
#include "mmfuse/model.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse {

struct TrainConfig {
  double lr = 1e-2;
  double weight_decay = 1e-3;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 60;
  std::size_t patience = 10;
  double clip_norm = 1.0;
  double w_t2 = 2.0;
  double lambda = 0.1;
  double temperature = 0.3;
  double modality_dropout_p = 0.4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct AdamWSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam moments with decoupled weight decay: w -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * w).
class AdamW {
 public:
  explicit AdamW(AdamWSettings settings = {}) : settings_(settings) {}

  // Throws NumericError naming the first tensor with a non-finite gradient.
  void step(std::span<Tensor2* const> params, std::span<const Tensor2* const> grads, double lr, double weight_decay);
  std::size_t steps() const noexcept { return t_; }

 private:
  AdamWSettings settings_;
  std::vector<Tensor2> m_;
  std::vector<Tensor2> v_;
  std::size_t t_ = 0;
};

double cosine_lr(std::size_t epoch, std::size_t max_epochs, double base_lr);
double global_grad_norm(std::span<const Tensor2* const> grads);
// Rescales all gradients when their joint L2 norm exceeds max_norm. Returns
// the norm before clipping.
double clip_grad_norm(std::span<Tensor2* const> grads, double max_norm);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_auroc_peak = 0.0;
  std::optional<double> val_auroc_durability;  // empty when val t2 is single-class
  double val_mean = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  std::size_t stopped_epoch = 0;
  bool early_stopped = false;
};

struct TrainResult {
  ModelParams params;  // weights from best_epoch
  TrainHistory history;
};

// Minibatch training on split's train rows with early stopping on the mean of
// val AUROC (t1 on all val rows, t2 on labeled val rows; t1 alone when t2 is
// undefined). Init uses derive_seed(seed, 0); the run's single draw stream
// uses derive_seed(seed, 1): per-epoch shuffle, then per batch the forward
// draws documented at forward().
TrainResult train(const Dataset& data, const SplitAssignment& split, const ModelConfig& model_config,
                  const TrainConfig& config);

}  // namespace mmfuse
