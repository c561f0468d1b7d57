#pragma once

// Run configuration for the command-line pipeline: every tunable default in
// one place, read from a `key = value` text file and overridable per flag.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "moledit/backbone.hpp"
#include "moledit/editing.hpp"
#include "moledit/meka.hpp"
#include "moledit/task.hpp"

namespace moledit {

struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  std::size_t corpus_size = 200;
  double corpus_stale_fraction = 0.08;

  std::size_t d_model = 64;
  std::size_t enc_layers = 4;
  std::size_t dec_layers = 4;
  std::size_t ffn = 128;
  /// 0 sizes the model to the corpus (longest sequence + 2, at least 64).
  std::size_t max_len = 0;

  std::size_t pretrain_epochs = 30;
  double pretrain_lr = 1e-3;
  std::size_t pretrain_batch_size = 4;

  std::size_t experts = 5;
  std::size_t top_k = 1;
  double lambda = 1.0;
  double gate_noise_std = 0.1;
  bool two_layer_experts = false;

  double tau_cap = 0.9;
  double tau_mol = 0.9;
  double edit_lr_cap = 2e-3;
  double edit_lr_mol = 2e-3;
  std::size_t edit_max_steps = 200;
  double edit_early_stop_loss = 1e-3;
  std::string encoder_site;  // empty: model default
  std::string decoder_site;
  /// 0 uses the model's max_len.
  std::size_t edit_max_output_len = 0;

  double bench_low = 0.2;
  double bench_high = 0.95;
  std::size_t bench_edit_size = 10;
  std::size_t bench_loc_size = 20;
  std::size_t bench_gen_variants = 1;

  /// Assigns one key. Throws UnknownConfigKey or BadConfigValue (usage errors).
  void set(std::string_view key, std::string_view value);
  /// Applies `key=value` text: one assignment per line, '#' comments.
  void apply_text(std::string_view text, const std::string& origin = "<text>");
  /// Throws IoError when the file cannot be read.
  void apply_file(const std::string& path);
  /// Checks cross-field constraints. Throws InvalidConfig.
  void validate() const;

  static const std::vector<std::string>& keys();
  nlohmann::json to_json() const;
  /// The same content as a loadable config file.
  std::string to_text() const;

  model::ModelConfig model_config(std::size_t src_vocab, std::size_t tgt_vocab,
                                  std::size_t longest_sequence) const;
  model::PretrainOptions pretrain_options() const;
  editing::EditorConfig editor_config(Task task, std::size_t model_max_len) const;
};

}  // namespace moledit
