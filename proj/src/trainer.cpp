#include "mmfuse/trainer.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "mmfuse/error.hpp"
#include "mmfuse/metrics.hpp"
#include "mmfuse/objectives.hpp"

namespace mmfuse {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train config: lr must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("train config: weight_decay must be non-negative");
  if (batch_size == 0) throw ConfigError("train config: batch_size must be positive");
  if (max_epochs == 0) throw ConfigError("train config: max_epochs must be positive");
  if (patience == 0) throw ConfigError("train config: patience must be positive");
  if (patience > max_epochs) {
    throw ConfigError("train config: patience (" + std::to_string(patience) + ") exceeds max_epochs (" +
                      std::to_string(max_epochs) + ")");
  }
  if (!(clip_norm > 0.0)) throw ConfigError("train config: clip_norm must be positive");
  if (!(w_t2 >= 0.0)) throw ConfigError("train config: w_t2 must be non-negative");
  if (!(lambda >= 0.0)) throw ConfigError("train config: lambda must be non-negative");
  if (!(temperature > 0.0)) throw ConfigError("train config: temperature must be positive");
  if (!(modality_dropout_p >= 0.0 && modality_dropout_p < 1.0)) {
    throw ConfigError("train config: modality_dropout_p must lie in [0, 1)");
  }
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("train config: Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("train config: adam_eps must be positive");
}

void AdamW::step(std::span<Tensor2* const> params, std::span<const Tensor2* const> grads, double lr,
                 double weight_decay) {
  if (params.size() != grads.size()) throw ConfigError("AdamW: parameter and gradient counts differ");
  if (m_.empty()) {
    for (const Tensor2* p : params) {
      m_.emplace_back(p->rows(), p->cols());
      v_.emplace_back(p->rows(), p->cols());
    }
  }
  if (m_.size() != params.size()) throw ConfigError("AdamW: parameter set changed between steps");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i]->same_shape(*params[i]) || !m_[i].same_shape(*params[i])) {
      throw ConfigError("AdamW: state shape mismatch for tensor " + std::to_string(i));
    }
    if (!grads[i]->all_finite()) throw NumericError("non-finite gradient in tensor " + std::to_string(i));
  }
  ++t_;
  const double b1 = settings_.beta1;
  const double b2 = settings_.beta2;
  const double c1 = 1.0 - std::pow(b1, double(t_));
  const double c2 = 1.0 - std::pow(b2, double(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i]->values();
    auto g = grads[i]->values();
    auto m = m_[i].values();
    auto v = v_[i].values();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      const double update = (m[k] / c1) / (std::sqrt(v[k] / c2) + settings_.eps);
      w[k] -= lr * (update + weight_decay * w[k]);
    }
  }
}

double cosine_lr(std::size_t epoch, std::size_t max_epochs, double base_lr) {
  if (max_epochs == 0 || epoch >= max_epochs) throw ConfigError("cosine_lr: epoch out of range");
  const double value = base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * double(epoch) / double(max_epochs)));
  return std::max(value, 0.0);
}

double global_grad_norm(std::span<const Tensor2* const> grads) {
  double total = 0.0;
  for (const Tensor2* g : grads) total += squared_norm(*g);
  return std::sqrt(total);
}

double clip_grad_norm(std::span<Tensor2* const> grads, double max_norm) {
  double total = 0.0;
  for (const Tensor2* g : grads) total += squared_norm(*g);
  const double norm = std::sqrt(total);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (Tensor2* g : grads)
      for (double& x : g->values()) x *= factor;
  }
  return norm;
}

namespace {

std::vector<int> take(const std::vector<int>& labels, std::span<const std::size_t> rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(labels[r]);
  return out;
}

struct ValScore {
  double peak = 0.0;
  std::optional<double> durability;
  double mean = 0.0;
};

ValScore validation_score(const ModelParams& params, const ModelConfig& model_config, const Dataset& data,
                          std::span<const std::size_t> val_rows) {
  const Predictions pred = predict(params, model_config, data, val_rows);
  ValScore s;
  s.peak = auroc(pred.peak, take(data.y1, val_rows));
  std::vector<double> scores;
  std::vector<int> labels;
  for (std::size_t i = 0; i < val_rows.size(); ++i) {
    const int y = data.y2[val_rows[i]];
    if (y == kMissingLabel) continue;
    scores.push_back(pred.durability[i]);
    labels.push_back(y);
  }
  s.durability = try_auroc(scores, labels);
  s.mean = s.durability ? 0.5 * (s.peak + *s.durability) : s.peak;
  return s;
}

}  // namespace

TrainResult train(const Dataset& data, const SplitAssignment& split, const ModelConfig& model_config,
                  const TrainConfig& config) {
  config.validate();
  model_config.validate();
  data.validate();
  if (split.folds.size() != data.size()) throw ConfigError("train: split does not cover the dataset");
  std::vector<std::size_t> order = split.rows(Fold::train);
  const std::vector<std::size_t> val_rows = split.rows(Fold::val);
  if (order.empty()) throw ConfigError("train: empty training split");
  if (!try_auroc(std::vector<double>(val_rows.size(), 0.0), take(data.y1, val_rows))) {
    throw DataError("train: validation split needs both peak-response classes");
  }

  ModelParams params = initialize_params(model_config, derive_seed(config.seed, 0));
  Rng rng(derive_seed(config.seed, 1));
  AdamW optimizer(AdamWSettings{config.adam_beta1, config.adam_beta2, config.adam_eps});
  const ObjectiveWeights weights{config.w_t2, config.lambda, config.temperature};
  const ForwardOptions options{true, config.modality_dropout_p, &rng};

  TrainResult result;
  result.params = params;
  double best = -std::numeric_limits<double>::infinity();
  std::size_t stale = 0;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const double lr = cosine_lr(epoch, config.max_epochs, config.lr);
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, stop - start);
      std::vector<ModalityMask> masks;
      masks.reserve(batch.size());
      for (std::size_t r : batch) masks.push_back(data.presence[r]);

      Graph g;
      const ModelVars vars = bind_params(g, params, true);
      const ForwardResult fr = forward(g, vars, model_config, data, batch, masks, options);
      const LossTerms loss = joint_objective(g, fr, take(data.y1, batch), take(data.y2, batch), weights);
      const double value = g.value(loss.total)(0, 0);
      if (!std::isfinite(value)) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch));
      }
      g.backward(loss.total);
      ModelParams grads = collect_gradients(g, vars);
      auto grad_ptrs = flatten(grads);
      auto param_ptrs = flatten(params);
      params.visit([&, i = std::size_t{0}](const std::string& name, const Tensor2&) mutable {
        if (!grad_ptrs[i]->all_finite()) {
          throw NumericError("train: non-finite gradient for " + name + " at epoch " + std::to_string(epoch));
        }
        ++i;
      });
      clip_grad_norm(grad_ptrs, config.clip_norm);
      std::vector<const Tensor2*> const_grads(grad_ptrs.begin(), grad_ptrs.end());
      optimizer.step(param_ptrs, const_grads, lr, config.weight_decay);
      loss_sum += value * double(batch.size());
    }

    const ValScore val = validation_score(params, model_config, data, val_rows);
    EpochRecord record;
    record.epoch = epoch;
    record.lr = lr;
    record.train_loss = loss_sum / double(order.size());
    record.val_auroc_peak = val.peak;
    record.val_auroc_durability = val.durability;
    record.val_mean = val.mean;
    result.history.epochs.push_back(record);
    result.history.stopped_epoch = epoch;

    if (val.mean > best) {
      best = val.mean;
      result.params = params;
      result.history.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= config.patience) {
      result.history.early_stopped = true;
      break;
    }
  }
  return result;
}

}  // namespace mmfuse
