#pragma once

#include <map>
#include <string>
#include <vector>

#include "vaeneu/layers.hpp"

namespace vaeneu {

/// Architecture and objective settings. Zero sizes are derived from the
/// history window through BackboneConfig::from_history.
struct ModelConfig {
  BackboneKind backbone = BackboneKind::tcn;
  std::size_t history_size = 0;
  std::size_t hidden_size = 0;
  std::size_t latent_size = 0;
  std::size_t tcn_layers = 0;
  std::size_t kernel_size = 5;
  std::size_t sample_size = 8;  // S: latent draws per example in the loss
  double kl_weight = 1.0;       // beta

  BackboneConfig resolve() const {
    BackboneConfig c = BackboneConfig::from_history(backbone, history_size);
    if (hidden_size) c.hidden_size = hidden_size;
    if (latent_size) c.latent_size = latent_size;
    if (tcn_layers) c.tcn_layers = tcn_layers;
    c.kernel_size = kernel_size;
    return c;
  }

  /// Fills derived sizes in place.
  ModelConfig resolved() const {
    validate();
    const BackboneConfig c = resolve();
    ModelConfig out = *this;
    out.hidden_size = c.hidden_size;
    out.latent_size = c.latent_size;
    out.tcn_layers = backbone == BackboneKind::tcn ? c.tcn_layers : 0;
    return out;
  }

  void validate() const {
    if (history_size < 8) throw ConfigError("history size must be at least 8");
    if (sample_size < 1) throw ConfigError("sample size must be at least 1");
    if (kernel_size < 1) throw ConfigError("kernel size must be positive");
    if (!(kl_weight >= 0.0)) throw ConfigError("kl weight must be non-negative");
  }
};

/// Recognition distribution q(z | history, target) = N(mu, diag(exp(logvar))).
struct EncoderOutput {
  Tensor mu;      // [B x L]
  Tensor logvar;  // [B x L], clamped to [-10, 10]
};

enum class LatentSource { prior, recognition };

struct LatentSample {
  Tensor z;  // [N x L]
  LatentSource source = LatentSource::recognition;
};

inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 10.0;

/// Conditional VAE forecaster.
///
/// Encoder: backbone over [history, target] -> two parallel affine heads
/// giving (mu, logvar). Decoder: backbone over history -> representation,
/// concatenated with z -> affine layer -> next value. The decoder's history
/// representation does not depend on z, so it can be computed once and
/// reused for any number of latent draws.
class VaeneuModel {
 public:
  VaeneuModel() = default;

  static VaeneuModel initialize(const ModelConfig& config, std::uint64_t seed) {
    VaeneuModel m;
    m.config_ = config.resolved();
    const BackboneConfig bc = m.config_.resolve();
    RngStream rng(seed, 0x1417);
    m.encoder_ = Backbone::init(bc, rng);
    m.mu_head_ = AffineLayer::init(bc.hidden_size, bc.latent_size, rng);
    m.logvar_head_ = AffineLayer::init(bc.hidden_size, bc.latent_size, rng);
    m.decoder_ = Backbone::init(bc, rng);
    m.output_head_ = AffineLayer::init(bc.hidden_size + bc.latent_size, 1, rng);
    return m;
  }

  /// Rebuilds a model from named parameters; every expected name must be
  /// present with the expected shape.
  static VaeneuModel from_parameters(const ModelConfig& config,
                                     const std::map<std::string, Tensor>& params) {
    VaeneuModel m = initialize(config, 0);
    std::size_t used = 0;
    m.for_each_parameter([&](const std::string& name, Tensor& t) {
      auto it = params.find(name);
      if (it == params.end()) throw ShapeError("missing parameter '" + name + "'");
      if (it->second.shape() != t.shape()) {
        throw ShapeError("parameter '" + name + "' has shape " +
                         shape_string(it->second.shape()) + ", expected " +
                         shape_string(t.shape()));
      }
      t = it->second.detached();
      ++used;
    });
    if (used != params.size()) throw ShapeError("unexpected extra parameters");
    return m;
  }

  const ModelConfig& config() const { return config_; }
  std::size_t history_size() const { return config_.history_size; }
  std::size_t latent_size() const { return config_.latent_size; }

  template <class Fn>
  void for_each_parameter(Fn&& fn) {
    encoder_.for_each_parameter("encoder", fn);
    mu_head_.for_each_parameter("encoder.mu", fn);
    logvar_head_.for_each_parameter("encoder.logvar", fn);
    decoder_.for_each_parameter("decoder", fn);
    output_head_.for_each_parameter("decoder.out", fn);
  }
  template <class Fn>
  void for_each_parameter(Fn&& fn) const {
    encoder_.for_each_parameter("encoder", fn);
    mu_head_.for_each_parameter("encoder.mu", fn);
    logvar_head_.for_each_parameter("encoder.logvar", fn);
    decoder_.for_each_parameter("decoder", fn);
    output_head_.for_each_parameter("decoder.out", fn);
  }

  std::map<std::string, Tensor> parameters() const {
    std::map<std::string, Tensor> out;
    for_each_parameter([&](const std::string& name, const Tensor& t) {
      out.emplace(name, t.detached());
    });
    return out;
  }

  /// Copy whose parameters are watched leaves of `tape`.
  VaeneuModel tracked(Tape& tape) const {
    VaeneuModel m = *this;
    m.for_each_parameter([&](const std::string&, Tensor& t) { t = tape.watch(t); });
    return m;
  }

  /// history: [B x HWS], target: [B x 1].
  EncoderOutput encode(const Tensor& history, const Tensor& target) const {
    check_history(history);
    if (target.rank() != 2 || target.extent(0) != history.extent(0) || target.extent(1) != 1) {
      throw ShapeError("target must be [B x 1], got " + shape_string(target.shape()));
    }
    const Tensor h = encoder_.represent(concat({history, target}, 1));
    return {mu_head_.forward(h), clamp(logvar_head_.forward(h), kLogvarMin, kLogvarMax)};
  }

  /// Decoder representation of the condition: [B x HWS] -> [B x hidden].
  Tensor represent_history(const Tensor& history) const {
    check_history(history);
    return decoder_.represent(history);
  }

  /// representation: [N x hidden], z: [N x L] -> forecasts [N x 1].
  Tensor decode_representation(const Tensor& representation, const Tensor& z) const {
    if (z.rank() != 2 || z.extent(1) != latent_size() || z.extent(0) != representation.extent(0)) {
      throw ShapeError("latent must be [" + std::to_string(representation.extent(0)) + " x " +
                       std::to_string(latent_size()) + "], got " + shape_string(z.shape()));
    }
    return output_head_.forward(concat({representation, z}, 1));
  }

  Tensor decode(const Tensor& history, const LatentSample& z) const {
    return decode_representation(represent_history(history), z.z);
  }

 private:
  void check_history(const Tensor& history) const {
    if (history.rank() != 2 || history.extent(1) != history_size()) {
      throw ShapeError("history must be [B x " + std::to_string(history_size()) + "], got " +
                       shape_string(history.shape()));
    }
  }

  ModelConfig config_;
  Backbone encoder_;
  AffineLayer mu_head_;
  AffineLayer logvar_head_;
  Backbone decoder_;
  AffineLayer output_head_;
};

/// z = mu + exp(logvar / 2) * eps, with eps supplied by the caller.
inline LatentSample reparameterize(const EncoderOutput& enc, const Tensor& eps) {
  if (eps.shape() != enc.mu.shape()) {
    throw ShapeError("noise shape " + shape_string(eps.shape()) + " does not match latent " +
                     shape_string(enc.mu.shape()));
  }
  return {enc.mu + exp(scale(enc.logvar, 0.5)) * eps, LatentSource::recognition};
}

inline LatentSample reparameterize(const EncoderOutput& enc, RngStream& rng) {
  return reparameterize(enc, standard_normal(rng, enc.mu.shape()));
}

/// Per-row KL(N(mu, exp(logvar)) || N(0, I)) = -1/2 sum_d (1 + logvar - mu^2 - exp(logvar)).
/// Returns [B].
inline Tensor kl_divergence(const EncoderOutput& enc) {
  const Tensor one = Tensor::scalar(1.0);
  const Tensor terms = one + enc.logvar - enc.mu * enc.mu - exp(enc.logvar);
  return scale(sum(terms, terms.rank() - 1), -0.5);
}

/// Draws a rotation offset k in {1, ..., S-1} per row (0 when S == 1).
inline std::vector<std::size_t> draw_rotations(RngStream& rng, std::size_t rows, std::size_t S) {
  std::vector<std::size_t> k(rows, 0);
  if (S > 1) {
    for (auto& v : k) v = 1 + static_cast<std::size_t>(rng.uniform_index(S - 1));
  }
  return k;
}

/// Sampled CRPS with a shuffled copy of the samples standing in for the
/// second independent draw:
///   (1/S) sum_i |f_i - y| - 1/2 (1/S) sum_i |f_i - f_{(i + k) mod S}|
/// forecasts: [B x S], targets: [B x 1], one rotation k per row.
/// Returns the per-row loss [B]. With S == 1 this is the absolute error.
inline Tensor crps_training_loss(const Tensor& forecasts, const Tensor& targets,
                                 const std::vector<std::size_t>& rotations) {
  if (forecasts.rank() != 2 || forecasts.extent(1) == 0) {
    throw ShapeError("forecasts must be [B x S] with S >= 1, got " +
                     shape_string(forecasts.shape()));
  }
  const std::size_t B = forecasts.extent(0), S = forecasts.extent(1);
  if (targets.size() != B) throw ShapeError("one target per forecast row required");
  if (rotations.size() != B) throw ShapeError("one rotation per forecast row required");

  std::vector<std::size_t> target_idx(B * S);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t s = 0; s < S; ++s) target_idx[b * S + s] = b;
  const Tensor y = gather(targets, std::move(target_idx), Shape{B, S});
  const Tensor accuracy = mean(abs(forecasts - y), 1);
  if (S == 1) return accuracy;

  std::vector<std::size_t> rotated(B * S);
  for (std::size_t b = 0; b < B; ++b) {
    if (rotations[b] == 0 || rotations[b] >= S) {
      throw DomainError("rotation must lie in [1, S-1]");
    }
    for (std::size_t s = 0; s < S; ++s) rotated[b * S + s] = b * S + (s + rotations[b]) % S;
  }
  const Tensor shuffled = gather(forecasts, std::move(rotated), Shape{B, S});
  const Tensor spread = mean(abs(forecasts - shuffled), 1);
  return accuracy - scale(spread, 0.5);
}

inline Tensor crps_training_loss(const Tensor& forecasts, const Tensor& targets, RngStream& rng) {
  if (forecasts.rank() != 2) throw ShapeError("forecasts must be [B x S]");
  return crps_training_loss(forecasts, targets,
                            draw_rotations(rng, forecasts.extent(0), forecasts.extent(1)));
}

/// All randomness consumed by one evaluation of the training objective.
struct ObjectiveNoise {
  Tensor eps;                           // [B*S x L]
  std::vector<std::size_t> rotations;   // [B]

  static ObjectiveNoise draw(RngStream& rng, std::size_t batch, std::size_t S, std::size_t L) {
    ObjectiveNoise n;
    n.eps = standard_normal(rng, Shape{batch * S, L});
    n.rotations = draw_rotations(rng, batch, S);
    return n;
  }
};

struct ObjectiveValue {
  Tensor loss;  // scalar, differentiable
  double kl = 0.0;
  double crps = 0.0;
};

/// beta * mean_b KL_b + mean_b CRPS_b over a batch.
///
/// The input is encoded once; S latent draws per example come from the
/// recognition distribution and are decoded against a single history
/// representation.
inline ObjectiveValue training_objective(const VaeneuModel& model, const Tensor& history,
                                         const Tensor& target, const ObjectiveNoise& noise) {
  const std::size_t B = history.extent(0);
  const std::size_t S = model.config().sample_size;
  const std::size_t L = model.latent_size();
  if (noise.eps.shape() != Shape{B * S, L}) {
    throw ShapeError("objective noise must be " + shape_string(Shape{B * S, L}));
  }
  const EncoderOutput enc = model.encode(history, target);
  const EncoderOutput repeated{repeat_rows(enc.mu, S), repeat_rows(enc.logvar, S)};
  const LatentSample z = reparameterize(repeated, noise.eps);
  const Tensor rep = repeat_rows(model.represent_history(history), S);
  const Tensor forecasts = reshape(model.decode_representation(rep, z.z), Shape{B, S});

  const Tensor kl = mean(kl_divergence(enc));
  const Tensor crps = mean(crps_training_loss(forecasts, target, noise.rotations));
  ObjectiveValue v;
  v.kl = kl.item();
  v.crps = crps.item();
  v.loss = scale(kl, model.config().kl_weight) + crps;
  return v;
}

inline ObjectiveValue training_objective(const VaeneuModel& model, const Tensor& history,
                                         const Tensor& target, RngStream& rng) {
  return training_objective(
      model, history, target,
      ObjectiveNoise::draw(rng, history.extent(0), model.config().sample_size,
                           model.latent_size()));
}

}  // namespace vaeneu
