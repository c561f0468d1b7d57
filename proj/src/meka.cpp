#include "moledit/meka.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace moledit::meka {

using namespace num;

void AdapterConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw Error("InvalidConfig", what, ErrorClass::Usage);
  };
  need(experts >= 1, "adapter needs at least one expert");
  need(top_k >= 1 && top_k <= experts, "top_k must lie in 1..experts");
  need(gate_noise_std >= 0.0, "gate_noise_std must be non-negative");
  need(d_model >= 1, "d_model must be positive");
}

std::size_t GateVector::nonzeros() const {
  return static_cast<std::size_t>(
      std::count_if(weights.begin(), weights.end(), [](double w) { return w != 0.0; }));
}

std::size_t GateVector::top() const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < weights.size(); ++i)
    if (weights[i] > weights[best]) best = i;
  return best;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  if (out.empty()) return out;
  const double mx = *std::max_element(out.begin(), out.end());
  double sum = 0.0;
  for (auto& v : out) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (auto& v : out) v /= sum;
  return out;
}

std::vector<std::size_t> top_k_indices(std::span<const double> values, std::size_t k) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

GateVector gate_from_logits(std::span<const double> logits, std::size_t k) {
  const auto probs = softmax(logits);
  GateVector g{std::vector<double>(probs.size(), 0.0)};
  for (auto i : top_k_indices(probs, k)) g.weights[i] = probs[i];
  return g;
}

Adapter::Adapter(const AdapterConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  const std::size_t d = config_.d_model;
  gate_ = Tensor::randn({config_.experts, d}, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  for (std::size_t p = 0; p < config_.experts; ++p) {
    experts_.push_back(Tensor::zeros({d, d}));
    if (config_.two_layer_experts)
      experts_in_.push_back(Tensor::randn({d, d}, 1.0 / std::sqrt(static_cast<double>(d)), rng));
  }
}

NamedTensors Adapter::parameters() const {
  NamedTensors out{{"gate", gate_}};
  for (std::size_t p = 0; p < experts_.size(); ++p) {
    out.emplace_back("expert" + std::to_string(p), experts_[p]);
    if (config_.two_layer_experts) out.emplace_back("expert" + std::to_string(p) + "_in", experts_in_[p]);
  }
  return out;
}

Tensor Adapter::expert_out(std::size_t p, const Tensor& z) const {
  if (!config_.two_layer_experts) return matmul(z, transpose(experts_[p]));
  return matmul(relu(matmul(z, transpose(experts_in_[p]))), transpose(experts_[p]));
}

std::vector<double> Adapter::noisy(std::vector<double> logits, bool training, Rng* rng) const {
  if (training && rng && config_.gate_noise_std > 0.0)
    for (auto& v : logits) v += rng->normal(0.0, config_.gate_noise_std);
  return logits;
}

// Logits {rows, P} for each row of `rows`, noise included as a constant.
Tensor Adapter::gate_logits(const Tensor& rows, bool training, Rng* rng) const {
  Tensor logits = matmul(rows, transpose(gate_));
  if (training && rng && config_.gate_noise_std > 0.0) {
    std::vector<double> noise(logits.size());
    for (auto& v : noise) v = rng->normal(0.0, config_.gate_noise_std);
    logits = add(logits, Tensor::from(logits.shape(), std::move(noise)));
  }
  return logits;
}

GateVector Adapter::gate_expertise(const Tensor& z_prev, std::span<const std::size_t> segment,
                                   bool training, Rng* rng) const {
  if (segment.empty()) throw Error("EmptySegment", "cannot gate an empty segment", ErrorClass::Invariant);
  NoGradGuard guard;
  const Tensor m = mean(embedding_lookup(z_prev, segment), 0);
  const Tensor logits = gate_logits(m, training, rng);
  return gate_from_logits(logits.data(), config_.top_k);
}

GateVector Adapter::gate_token(const Tensor& z, bool training, Rng* rng) const {
  NoGradGuard guard;
  const Tensor row = z.rank() == 1 ? Tensor::from({1, z.size()}, {z.data().begin(), z.data().end()}) : z;
  const Tensor logits = gate_logits(row, training, rng);
  return gate_from_logits(logits.data(), config_.top_k);
}

Tensor Adapter::apply_encoder(const Tensor& z_prev, const ExpertiseSegmentation& seg,
                              const Tensor& base_out, const model::HookContext& ctx,
                              const model::Site& site) const {
  if (seg.token_count != z_prev.rows() || !seg.is_partition()) {
    throw Error("SegmentationMismatch",
                "segmentation over " + std::to_string(seg.token_count) +
                    " tokens does not partition " + std::to_string(z_prev.rows()) + " rows",
                ErrorClass::Invariant);
  }
  const auto& opt = ctx.options;
  Tensor out = base_out;
  for (std::size_t n = 0; n < seg.segments.size(); ++n) {
    const auto& rows = seg.segments[n].tokens;
    const Tensor zs = embedding_lookup(z_prev, rows);
    const Tensor probs = softmax(gate_logits(mean(zs, 0), opt.training, opt.rng), 1);
    const auto chosen = top_k_indices(probs.data(), config_.top_k);
    Tensor delta;
    for (auto p : chosen) {
      const Tensor term = scale_by(expert_out(p, zs), pick(probs, p));
      delta = delta.defined() ? add(delta, term) : term;
    }
    out = index_add_rows(out, delta, rows);
    if (opt.trace) {
      GateVector g{std::vector<double>(config_.experts, 0.0)};
      for (auto p : chosen) g.weights[p] = probs.at(p);
      opt.trace->push_back({site, n, std::move(g.weights)});
    }
  }
  return out;
}

Tensor Adapter::apply_decoder(const Tensor& z_prev, const Tensor& base_out,
                              const model::HookContext& ctx, const model::Site& site) const {
  const auto& opt = ctx.options;
  const std::size_t r = z_prev.rows(), P = config_.experts, d = config_.d_model;
  const Tensor probs = softmax(gate_logits(z_prev, opt.training, opt.rng), 1);

  std::vector<double> mask(r * P, 0.0);
  std::vector<bool> used(P, false);
  for (std::size_t i = 0; i < r; ++i) {
    const auto row = probs.data().subspan(i * P, P);
    const auto chosen = top_k_indices(row, config_.top_k);
    for (auto p : chosen) {
      mask[i * P + p] = 1.0;
      used[p] = true;
    }
    if (opt.trace) {
      std::vector<double> g(P, 0.0);
      for (auto p : chosen) g[p] = row[p];
      opt.trace->push_back({site, ctx.row_offset + i, std::move(g)});
    }
  }
  const Tensor gates = mul(probs, Tensor::from({r, P}, std::move(mask)));

  Tensor delta;
  for (std::size_t p = 0; p < P; ++p) {
    if (!used[p]) continue;
    // Broadcast column p of the gates across d columns.
    std::vector<double> sel(P * d, 0.0);
    std::fill(sel.begin() + static_cast<std::ptrdiff_t>(p * d),
              sel.begin() + static_cast<std::ptrdiff_t>((p + 1) * d), 1.0);
    const Tensor weight = matmul(gates, Tensor::from({P, d}, std::move(sel)));
    const Tensor term = mul(weight, expert_out(p, z_prev));
    delta = delta.defined() ? add(delta, term) : term;
  }
  if (!delta.defined()) return base_out;
  return add(base_out, scale(delta, config_.lambda));
}

Tensor Adapter::apply(const model::Site& site, const Tensor& z_prev, const Tensor& base_out,
                      const model::HookContext& ctx) const {
  if (site.side == model::Side::Decoder) return apply_decoder(z_prev, base_out, ctx, site);
  if (!ctx.options.segmentation) {
    throw Error("SegmentationMismatch", "encoder adapter needs an expertise segmentation",
                ErrorClass::Invariant);
  }
  return apply_encoder(z_prev, *ctx.options.segmentation, base_out, ctx, site);
}

std::vector<std::size_t> activation_histogram(const model::RoutingTrace& trace,
                                              std::size_t experts) {
  std::vector<std::size_t> hist(experts, 0);
  for (const auto& ev : trace) {
    GateVector g{ev.gate};
    const auto t = g.top();
    if (t < experts) ++hist[t];
  }
  return hist;
}

}  // namespace moledit::meka
