#include "mmfuse/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "mmfuse/config.hpp"
#include "mmfuse/error.hpp"

namespace mmfuse {

namespace {

constexpr char kCheckpointMagic[8] = {'M', 'M', 'F', 'U', 'S', 'E', 'C', 'K'};

Tensor2 uniform_tensor(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  Tensor2 t(rows, cols);
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

// Weight (fan_in x fan_out) and bias (1 x fan_out) with fan-in scaling.
void init_affine(Tensor2& w, Tensor2& b, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(double(fan_in));
  w = uniform_tensor(fan_in, fan_out, bound, rng);
  b = uniform_tensor(1, fan_out, bound, rng);
}

Tensor2 dropout_mask(std::size_t rows, std::size_t cols, double p, Rng& rng) {
  Tensor2 mask(rows, cols);
  const double keep_scale = 1.0 / (1.0 - p);
  for (double& v : mask.values()) v = rng.bernoulli(p) ? 0.0 : keep_scale;
  return mask;
}

Var maybe_dropout(Graph& g, Var x, double p, const ForwardOptions& options) {
  if (!options.training || p <= 0.0) return x;
  const Tensor2& xv = g.value(x);
  return multiply_constant(g, x, dropout_mask(xv.rows(), xv.cols(), p, *options.rng));
}

Var project_rows(Graph& g, const ProjectionHead<Var>& head, Var z, double dropout, const ForwardOptions& options) {
  Var a = linear(g, z, head.w1, head.b1);
  a = layer_norm(g, a, head.ln_gain, head.ln_bias);
  a = gelu(g, a);
  a = maybe_dropout(g, a, dropout, options);
  return l2_normalize_rows(g, linear(g, a, head.w2, head.b2));
}

}  // namespace

void ModelConfig::validate() const {
  if (embed_dim == 0 || proj_hidden == 0 || proj_dim == 0 || shared_hidden[0] == 0 || shared_hidden[1] == 0 ||
      n_meta == 0) {
    throw ConfigError("model config: all dimensions must be positive");
  }
  if (n_modalities != kModalityCount) throw ConfigError("model config: n_modalities must be 4");
  if (n_meta != 2) throw ConfigError("model config: n_meta must be 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model config: dropout must lie in [0, 1)");
}

ModelParams initialize_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ModelParams p;
  for (auto& head : p.heads) {
    init_affine(head.w1, head.b1, config.embed_dim, config.proj_hidden, rng);
    head.ln_gain = Tensor2(1, config.proj_hidden, 1.0);
    head.ln_bias = Tensor2(1, config.proj_hidden, 0.0);
    init_affine(head.w2, head.b2, config.proj_hidden, config.proj_dim, rng);
  }
  p.attention_query = uniform_tensor(config.proj_dim, 1, 1.0 / std::sqrt(double(config.proj_dim)), rng);
  init_affine(p.shared_w1, p.shared_b1, config.proj_dim + config.n_meta, config.shared_hidden[0], rng);
  init_affine(p.shared_w2, p.shared_b2, config.shared_hidden[0], config.shared_hidden[1], rng);
  init_affine(p.peak_w, p.peak_b, config.shared_hidden[1], 2, rng);
  init_affine(p.durability_w, p.durability_b, config.shared_hidden[1], 2, rng);
  return p;
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams out = params;
  out.visit([](const std::string&, Tensor2& t) { t.fill(0.0); });
  return out;
}

ModelVars bind_params(Graph& g, const ModelParams& params, bool trainable) {
  ModelVars vars;
  auto targets = flatten(vars);
  std::size_t i = 0;
  params.visit([&](const std::string&, const Tensor2& t) {
    *targets[i++] = trainable ? g.parameter(t) : g.constant(t);
  });
  return vars;
}

ModelParams collect_gradients(const Graph& g, const ModelVars& vars) {
  ModelParams grads;
  auto targets = flatten(grads);
  std::size_t i = 0;
  vars.visit([&](const std::string&, const Var& v) { *targets[i++] = g.gradient(v); });
  return grads;
}

std::size_t parameter_count(const ModelParams& params) {
  std::size_t total = 0;
  params.visit([&](const std::string&, const Tensor2& t) { total += t.size(); });
  return total;
}

ModalityMask apply_modality_dropout(ModalityMask mask, double p, Rng& rng) {
  if (p <= 0.0 || mask.none()) return mask;
  for (;;) {
    ModalityMask kept = mask;
    for (std::size_t m = 0; m < kModalityCount; ++m) {
      if (mask[m] && rng.bernoulli(p)) kept.reset(m);
    }
    if (kept.any()) return kept;
  }
}

ForwardResult forward(Graph& g, const ModelVars& params, const ModelConfig& config, const Dataset& data,
                      std::span<const std::size_t> rows, std::span<const ModalityMask> masks,
                      const ForwardOptions& options) {
  const std::size_t n = rows.size();
  if (n == 0) throw ConfigError("forward: empty batch");
  if (masks.size() != n) throw ConfigError("forward: one presence mask per row is required");
  if (options.training && !options.rng) throw ConfigError("forward: training requires an rng");
  if (data.embed_dim() != config.embed_dim) {
    throw ConfigError("forward: data embedding dim " + std::to_string(data.embed_dim()) + " != model embed_dim " +
                      std::to_string(config.embed_dim));
  }

  ForwardResult out;
  out.effective_masks.assign(masks.begin(), masks.end());
  if (options.training) {
    for (auto& mask : out.effective_masks) mask = apply_modality_dropout(mask, options.modality_dropout_p, *options.rng);
  }

  std::vector<std::uint8_t> mask_bytes(n * kModalityCount);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t m = 0; m < kModalityCount; ++m) mask_bytes[i * kModalityCount + m] = out.effective_masks[i][m];

  std::array<Var, kModalityCount> scattered{};
  std::vector<Var> score_columns;
  std::vector<Var> instance_blocks;
  for (Modality m : kAllModalities) {
    std::vector<std::size_t> batch_rows;
    std::vector<std::size_t> data_rows;
    for (std::size_t i = 0; i < n; ++i) {
      if (out.effective_masks[i][index(m)]) {
        batch_rows.push_back(i);
        data_rows.push_back(rows[i]);
      }
    }
    if (batch_rows.empty()) {
      score_columns.push_back(g.constant(Tensor2(n, 1)));
      continue;
    }
    Var z = g.constant(gather_rows(data.embeddings[index(m)], data_rows));
    Var h = project_rows(g, params.heads[index(m)], z, config.dropout, options);
    instance_blocks.push_back(h);
    for (std::size_t r : batch_rows) out.instances.push_back({r, m});
    scattered[index(m)] = scatter_rows(g, h, batch_rows, n);
    score_columns.push_back(matmul(g, scattered[index(m)], params.attention_query));
  }

  Var scores = concat_cols(g, score_columns);
  out.attention = masked_softmax_rows(g, scores, mask_bytes, EmptyRowPolicy::zero);
  Var fused;
  for (Modality m : kAllModalities) {
    if (!scattered[index(m)].valid()) continue;
    Var term = scale_rows_by_column(g, scattered[index(m)], out.attention, index(m));
    fused = fused.valid() ? add(g, fused, term) : term;
  }
  if (!fused.valid()) fused = g.constant(Tensor2(n, config.proj_dim));
  if (!instance_blocks.empty()) out.projections = concat_rows(g, instance_blocks);

  Var meta = g.constant(gather_rows(data.metadata, rows));
  const std::array<Var, 2> parts{fused, meta};
  Var x = concat_cols(g, parts);
  x = gelu(g, linear(g, x, params.shared_w1, params.shared_b1));
  x = maybe_dropout(g, x, config.dropout, options);
  x = gelu(g, linear(g, x, params.shared_w2, params.shared_b2));
  x = maybe_dropout(g, x, config.dropout, options);
  out.logits_peak = linear(g, x, params.peak_w, params.peak_b);
  out.logits_durability = linear(g, x, params.durability_w, params.durability_b);
  return out;
}

Tensor2 project_modality(const ModelParams& params, const ModelConfig& config, Modality m, const Tensor2& z,
                         bool training, Rng* rng) {
  if (z.cols() != config.embed_dim) throw ConfigError("project_modality: embedding width mismatch");
  Graph g;
  const auto& head = params.heads[index(m)];
  ProjectionHead<Var> vars{g.constant(head.w1),      g.constant(head.b1), g.constant(head.ln_gain),
                           g.constant(head.ln_bias), g.constant(head.w2), g.constant(head.b2)};
  ForwardOptions options{training, 0.0, rng};
  if (training && !rng) throw ConfigError("project_modality: training requires an rng");
  return g.value(project_rows(g, vars, g.constant(z), config.dropout, options));
}

FusionResult fuse_attention(const Tensor2& h, ModalityMask mask, const Tensor2& query) {
  if (h.rows() != kModalityCount || query.rows() != h.cols() || query.cols() != 1) {
    throw ConfigError("fuse_attention: expects kModalityCount x d projections and a d x 1 query");
  }
  Graph g;
  Var q = g.constant(query);
  std::vector<Var> scores;
  std::array<Var, kModalityCount> rows{};
  std::vector<std::uint8_t> bytes(kModalityCount);
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    bytes[m] = mask[m];
    rows[m] = g.constant(Tensor2::row_vector(h.row(m)));
    scores.push_back(matmul(g, rows[m], q));
  }
  Var alpha = masked_softmax_rows(g, concat_cols(g, scores), bytes, EmptyRowPolicy::zero);
  FusionResult out;
  out.fused.assign(h.cols(), 0.0);
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    out.attention[m] = g.value(alpha)(0, m);
    if (!mask[m]) continue;
    const Tensor2& term = g.value(scale_rows_by_column(g, rows[m], alpha, m));
    for (std::size_t c = 0; c < h.cols(); ++c) out.fused[c] += term(0, c);
  }
  return out;
}

Predictions predict(const ModelParams& params, const ModelConfig& config, const Dataset& data,
                    std::span<const std::size_t> rows, std::span<const ModalityMask> masks) {
  Graph g;
  const ModelVars vars = bind_params(g, params, false);
  const ForwardResult fr = forward(g, vars, config, data, rows, masks, ForwardOptions{});
  Predictions out;
  const Tensor2& lp = g.value(fr.logits_peak);
  const Tensor2& ld = g.value(fr.logits_durability);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.peak.push_back(lp(i, 1) - lp(i, 0));
    out.durability.push_back(ld(i, 1) - ld(i, 0));
  }
  out.attention = g.value(fr.attention);
  return out;
}

Predictions predict(const ModelParams& params, const ModelConfig& config, const Dataset& data,
                    std::span<const std::size_t> rows) {
  std::vector<ModalityMask> masks;
  for (std::size_t r : rows) masks.push_back(data.presence.at(r));
  return predict(params, config, data, rows, masks);
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ModelParams& params) {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");
  nlohmann::json header;
  header["model"] = model_config_to_json(config);
  header["tensors"] = nlohmann::json::array();
  params.visit([&](const std::string& name, const Tensor2& t) {
    header["tensors"].push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
  });
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t header_size = text.size();
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&header_size), sizeof header_size);
  out.write(text.data(), std::streamsize(text.size()));
  params.visit([&](const std::string&, const Tensor2& t) {
    out.write(reinterpret_cast<const char*>(t.data()), std::streamsize(t.size() * sizeof(double)));
  });
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[sizeof kCheckpointMagic];
  std::uint32_t version = 0;
  std::uint64_t header_size = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&header_size), sizeof header_size);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw DataError(path.string() + " is not a checkpoint file");
  }
  if (version != kCheckpointVersion) {
    throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  std::string text(header_size, '\0');
  in.read(text.data(), std::streamsize(header_size));
  const auto header = nlohmann::json::parse(text);
  Checkpoint ck;
  ck.config = model_config_from_json(header.at("model"));
  const auto& tensors = header.at("tensors");
  std::size_t i = 0;
  ck.params.visit([&](const std::string& name, Tensor2& t) {
    if (i >= tensors.size() || tensors[i].at("name") != name) {
      throw DataError(path.string() + ": tensor list does not match the model layout at " + name);
    }
    t = Tensor2(tensors[i].at("rows").get<std::size_t>(), tensors[i].at("cols").get<std::size_t>());
    in.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.size() * sizeof(double)));
    ++i;
  });
  if (!in) throw DataError(path.string() + ": truncated checkpoint");
  return ck;
}

}  // namespace mmfuse
