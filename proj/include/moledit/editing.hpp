#pragma once

// Applying edits: adapters wrap one encoder and one decoder layer, only
// adapter weights are trained on the edit pair(s), and the expertise of the
// edited input is recorded in the switcher bank.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "moledit/backbone.hpp"
#include "moledit/eaes.hpp"
#include "moledit/meka.hpp"

namespace moledit::editing {

struct AblationFlags {
  bool no_meka = false;       // one expert instead of P
  bool no_eaes = false;       // match on the whole-input mean
  bool encoder_only = false;  // no decoder adapter
  bool decoder_only = false;  // no encoder adapter

  /// Comma-separated flag names; empty means none. Throws UnknownAblation
  /// or ConflictingFlags.
  static AblationFlags parse(std::string_view csv);
  std::string to_string() const;
};

struct EditorConfig {
  meka::AdapterConfig adapter;
  /// Unset means the model's default site.
  std::optional<model::Site> encoder_site;
  std::optional<model::Site> decoder_site;
  double tau = 0.9;
  std::size_t max_steps = 200;
  double lr = 2e-3;
  double early_stop_loss = 1e-3;
  std::size_t max_output_len = 64;
  AblationFlags ablation;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const EditorConfig& config);
EditorConfig editor_config_from_json(const nlohmann::json& j);

struct EditResult {
  std::uint64_t edit_id = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::size_t steps = 0;
  std::size_t bank_entries_added = 0;
  /// Mean smoothed BLEU-2 over token ids of the routed outputs against the
  /// edit targets.
  double reliability = 0.0;
  /// Final loss not below the initial loss; reported, not fatal.
  bool no_improvement = false;
  std::vector<double> loss_curve;
  double wall_ms = 0.0;
};

/// At most `points` values taken at evenly spaced indices, endpoints kept.
std::vector<double> downsample(std::span<const double> values, std::size_t points = 50);
/// One edit-log line.
nlohmann::json edit_log_record(const EditResult& result, std::string_view task);

class Editor {
 public:
  /// Installs fresh adapters on `model`, which must outlive the editor.
  /// Throws SiteOccupied when the model already carries adapters.
  Editor(model::Model& model, EditorConfig config);

  const EditorConfig& config() const { return config_; }
  const model::Model& model() const { return *model_; }
  const eaes::ExpertiseMemoryBank& bank() const { return bank_; }
  eaes::ExpertiseMemoryBank& bank() { return bank_; }
  eaes::MatchGranularity granularity() const;
  std::shared_ptr<meka::Adapter> encoder_adapter() const { return enc_; }
  std::shared_ptr<meka::Adapter> decoder_adapter() const { return dec_; }

  /// Trains the adapters on one or two pairs with the switch forced on, then
  /// registers the pre-edit expertise means. Throws InvalidEditRequest.
  EditResult apply_edit(std::uint64_t edit_id, std::span<const model::Example> samples);

  /// Switch-gated generation.
  eaes::RoutedOutput infer(std::span<const std::size_t> src, const ExpertiseSegmentation& seg,
                           model::RoutingTrace* trace = nullptr) const;

  /// Writes adapters.mekt, bank.mekb and editor.json into `dir`.
  void save(const std::string& dir) const;
  /// Rebuilds an editor on a freshly loaded backbone.
  static std::unique_ptr<Editor> load(model::Model& model, const std::string& dir);

 private:
  model::Model* model_;
  EditorConfig config_;
  eaes::ExpertiseMemoryBank bank_;
  std::shared_ptr<meka::Adapter> enc_;
  std::shared_ptr<meka::Adapter> dec_;
  Rng rng_;
};

/// True for parameter names owned by adapters.
bool is_adapter_parameter(const std::string& name);

enum class FineTuneScope { Encoder, Decoder, All };
FineTuneScope parse_scope(std::string_view name);
bool in_scope(const std::string& name, FineTuneScope scope);

/// Plain fine-tuning of a copy of `model` on `samples`; the original is
/// untouched.
model::Model fine_tune_baseline(const model::Model& model, std::span<const model::Example> samples,
                                FineTuneScope scope, std::size_t steps, double lr);

}  // namespace moledit::editing
