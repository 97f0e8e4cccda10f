#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mmfuse/autodiff.hpp"
#include "mmfuse/dataset.hpp"
#include "mmfuse/modality.hpp"
#include "mmfuse/rng.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse {

struct ModelConfig {
  std::size_t embed_dim = 1536;
  std::size_t proj_hidden = 256;
  std::size_t proj_dim = 64;
  std::array<std::size_t, 2> shared_hidden{256, 64};
  double dropout = 0.5;
  std::size_t n_modalities = kModalityCount;
  std::size_t n_meta = 2;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct ProjectionHead {
  T w1, b1, ln_gain, ln_bias, w2, b2;
};

// All trainable weights. Instantiated with Tensor2 for values and Var for the
// graph leaves bound to them.
template <typename T>
struct ModelTree {
  std::array<ProjectionHead<T>, kModalityCount> heads;
  T attention_query;  // proj_dim x 1
  T shared_w1, shared_b1, shared_w2, shared_b2;
  T peak_w, peak_b;
  T durability_w, durability_b;

  // Calls f(name, field) for every tensor in a fixed order.
  template <typename F>
  void visit(F&& f) {
    visit_fields(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_fields(*this, f);
  }

 private:
  template <typename Self, typename F>
  static void visit_fields(Self& self, F& f) {
    for (Modality m : kAllModalities) {
      auto& h = self.heads[index(m)];
      const std::string prefix = "heads." + std::string(name(m)) + ".";
      f(prefix + "w1", h.w1);
      f(prefix + "b1", h.b1);
      f(prefix + "ln_gain", h.ln_gain);
      f(prefix + "ln_bias", h.ln_bias);
      f(prefix + "w2", h.w2);
      f(prefix + "b2", h.b2);
    }
    f("attention_query", self.attention_query);
    f("shared.w1", self.shared_w1);
    f("shared.b1", self.shared_b1);
    f("shared.w2", self.shared_w2);
    f("shared.b2", self.shared_b2);
    f("peak.w", self.peak_w);
    f("peak.b", self.peak_b);
    f("durability.w", self.durability_w);
    f("durability.b", self.durability_b);
  }
};

using ModelParams = ModelTree<Tensor2>;
using ModelVars = ModelTree<Var>;

template <typename T>
std::vector<T*> flatten(ModelTree<T>& tree) {
  std::vector<T*> out;
  tree.visit([&](const std::string&, T& t) { out.push_back(&t); });
  return out;
}
template <typename T>
std::vector<const T*> flatten(const ModelTree<T>& tree) {
  std::vector<const T*> out;
  tree.visit([&](const std::string&, const T& t) { out.push_back(&t); });
  return out;
}

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases, LN gain 1
// and bias 0.
ModelParams initialize_params(const ModelConfig& config, std::uint64_t seed);
ModelParams zeros_like(const ModelParams& params);
ModelVars bind_params(Graph& g, const ModelParams& params, bool trainable);
ModelParams collect_gradients(const Graph& g, const ModelVars& vars);
std::size_t parameter_count(const ModelParams& params);

// Drops each present modality with probability p; an all-dropped draw is
// rejected and redrawn. Absent modalities stay absent. p = 0 consumes no draws.
ModalityMask apply_modality_dropout(ModalityMask mask, double p, Rng& rng);

struct ForwardOptions {
  bool training = false;
  double modality_dropout_p = 0.0;
  Rng* rng = nullptr;  // required when training
};

struct ProjectionInstance {
  std::size_t batch_row = 0;
  Modality modality = Modality::antibody;
};

struct ForwardResult {
  Var logits_peak;        // n x 2
  Var logits_durability;  // n x 2
  Var attention;          // n x kModalityCount; zero rows where nothing is present
  Var projections;        // one unit row per instance; invalid when there are none
  std::vector<ProjectionInstance> instances;
  std::vector<ModalityMask> effective_masks;
};

// Runs the fusion network on dataset rows `rows` with presence masks `masks`
// (one per row). Draw order when training: modality dropout per row, then the
// projection-head dropout mask of each modality in modality order, then the
// two shared-MLP dropout masks.
ForwardResult forward(Graph& g, const ModelVars& params, const ModelConfig& config, const Dataset& data,
                      std::span<const std::size_t> rows, std::span<const ModalityMask> masks,
                      const ForwardOptions& options);

// Unit-norm projection of embedding rows z (n x embed_dim) through modality m's head.
Tensor2 project_modality(const ModelParams& params, const ModelConfig& config, Modality m, const Tensor2& z,
                         bool training = false, Rng* rng = nullptr);

struct FusionResult {
  std::vector<double> fused;
  std::array<double, kModalityCount> attention{};
};
// h holds one unit row per modality (kModalityCount x proj_dim). An empty
// mask yields the zero vector.
FusionResult fuse_attention(const Tensor2& h, ModalityMask mask, const Tensor2& query);

struct Predictions {
  std::vector<double> peak;        // logit(class 1) - logit(class 0)
  std::vector<double> durability;
  Tensor2 attention;
};

Predictions predict(const ModelParams& params, const ModelConfig& config, const Dataset& data,
                    std::span<const std::size_t> rows, std::span<const ModalityMask> masks);
// Uses each row's observed presence mask.
Predictions predict(const ModelParams& params, const ModelConfig& config, const Dataset& data,
                    std::span<const std::size_t> rows);

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};

// Binary checkpoint: magic, version, JSON header (config and tensor shapes),
// then raw little-endian doubles in visit order. Reload is bit-exact.
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ModelParams& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mmfuse
