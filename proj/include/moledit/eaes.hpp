#pragma once

// Expertise-aware switcher: a bank of per-expertise mean encoder embeddings
// taken from edited inputs. Adapters are switched on for an input only when
// every one of its expertise means is close to some stored entry.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "moledit/backbone.hpp"

namespace moledit::eaes {

using num::Tensor;

struct BankEntry {
  std::uint64_t edit_id = 0;
  std::string label;
  std::vector<double> embedding;
};

/// Mean of the rows of `enc_final` listed in `segment`. Throws EmptySegment.
std::vector<double> expertise_mean(const Tensor& enc_final, std::span<const std::size_t> segment);

/// Cosine similarity; zero when either vector has zero norm.
double cosine(std::span<const double> a, std::span<const double> b);

struct LabeledMean {
  std::string label;
  std::vector<double> embedding;
};

/// One mean per segment of `seg`.
std::vector<LabeledMean> expertise_means(const Tensor& enc_final, const ExpertiseSegmentation& seg);
/// A single mean over every token (the whole-input matching ablation).
std::vector<LabeledMean> whole_input_mean(const Tensor& enc_final);

struct SwitchDecision {
  bool active = false;
  /// Best similarity to any bank entry, per input expertise.
  std::vector<double> best_similarity;
  /// Index of the smallest best similarity.
  std::size_t limiting = 0;
};

class ExpertiseMemoryBank {
 public:
  explicit ExpertiseMemoryBank(double tau = 0.9);

  double tau() const { return tau_; }
  void set_tau(double tau);
  const std::vector<BankEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  /// Appends one entry per mean. Throws DegenerateEmbedding for a zero or
  /// non-finite mean; nothing is appended in that case.
  void register_edit(std::uint64_t edit_id, std::span<const LabeledMean> means);

  /// Active iff every input mean has some entry with cosine >= tau. An empty
  /// bank or an empty input is inactive.
  SwitchDecision decide(std::span<const LabeledMean> means) const;

  /// Binary "MEKB" file.
  void save(const std::string& path) const;
  static ExpertiseMemoryBank load(const std::string& path);

 private:
  double tau_;
  std::vector<BankEntry> entries_;
};

/// Which unit of the input is compared against the bank.
enum class MatchGranularity { Expertise, WholeInput };

std::vector<LabeledMean> query_means(const Tensor& enc_final, const ExpertiseSegmentation& seg,
                                     MatchGranularity granularity);

struct RoutedOutput {
  std::vector<std::size_t> tokens;
  SwitchDecision decision;
};

/// Runs the unedited encoder, consults the bank and, only when the switch is
/// active, reruns with every installed adapter enabled.
RoutedOutput route_inference(const model::Model& model, const ExpertiseMemoryBank& bank,
                             std::span<const std::size_t> src, const ExpertiseSegmentation& seg,
                             std::size_t max_len,
                             MatchGranularity granularity = MatchGranularity::Expertise,
                             model::RoutingTrace* trace = nullptr);

}  // namespace moledit::eaes
