#pragma once

// Mixture-of-experts adapter. At an encoder site every expertise segment is
// routed as a unit by a gate over the mean of its token embeddings; at a
// decoder site every token is routed on its own. Each expert adds a linear
// map of the layer input to the plain layer output:
//   z_i = f(z_prev)_i + scale * sum_p g_p * W_p z_prev_i
// with scale = 1 at encoder sites and lambda at decoder sites. Experts start
// at zero, so a fresh adapter is an exact identity.

#include <cstdint>
#include <span>
#include <vector>

#include "moledit/backbone.hpp"
#include "moledit/rng.hpp"

namespace moledit::meka {

using num::NamedTensors;
using num::Tensor;

struct AdapterConfig {
  std::size_t experts = 5;  // P
  std::size_t top_k = 1;
  double lambda = 1.0;
  double gate_noise_std = 0.1;
  std::size_t d_model = 64;
  /// Expert as relu(z A^T) B^T instead of z W^T; B starts at zero.
  bool two_layer_experts = false;
  std::uint64_t seed = 0;

  /// Throws InvalidConfig.
  void validate() const;
};

/// Length-P routing weights with at most k nonzeros. Kept entries are the
/// softmax probabilities themselves (no renormalization).
struct GateVector {
  std::vector<double> weights;
  std::size_t nonzeros() const;
  /// Index of the largest weight, lowest index on ties.
  std::size_t top() const;
};

/// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> logits);
/// Indices of the k largest values in descending order, ties to the lowest index.
std::vector<std::size_t> top_k_indices(std::span<const double> values, std::size_t k);
/// softmax followed by a top-k mask.
GateVector gate_from_logits(std::span<const double> logits, std::size_t k);

class Adapter : public model::LayerHook {
 public:
  explicit Adapter(const AdapterConfig& config);

  const AdapterConfig& config() const { return config_; }

  /// Gate for one expertise segment of an encoder input. Throws EmptySegment.
  GateVector gate_expertise(const Tensor& z_prev, std::span<const std::size_t> segment,
                            bool training = false, Rng* rng = nullptr) const;
  /// Gate for one token embedding ({d} or {1, d}).
  GateVector gate_token(const Tensor& z, bool training = false, Rng* rng = nullptr) const;

  /// Throws SegmentationMismatch when `seg` is not a partition of the rows.
  Tensor apply_encoder(const Tensor& z_prev, const ExpertiseSegmentation& seg,
                       const Tensor& base_out, const model::HookContext& ctx,
                       const model::Site& site) const;
  Tensor apply_decoder(const Tensor& z_prev, const Tensor& base_out,
                       const model::HookContext& ctx, const model::Site& site) const;

  Tensor apply(const model::Site& site, const Tensor& z_prev, const Tensor& base_out,
               const model::HookContext& ctx) const override;
  /// "gate", "expert<p>" and, for two-layer experts, "expert<p>_in".
  NamedTensors parameters() const override;

  const Tensor& gate_weights() const { return gate_; }
  const Tensor& expert(std::size_t p) const { return experts_.at(p); }

 private:
  Tensor expert_out(std::size_t p, const Tensor& z) const;
  std::vector<double> noisy(std::vector<double> logits, bool training, Rng* rng) const;
  Tensor gate_logits(const Tensor& rows, bool training, Rng* rng) const;

  AdapterConfig config_;
  Tensor gate_;                     // {P, d}
  std::vector<Tensor> experts_;     // {d, d} each
  std::vector<Tensor> experts_in_;  // two-layer experts only
};

/// Expert activation counts from a routing trace: each event counts once for
/// its top expert.
std::vector<std::size_t> activation_histogram(const model::RoutingTrace& trace,
                                              std::size_t experts);

}  // namespace moledit::meka
