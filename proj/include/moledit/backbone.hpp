#pragma once

// Toy encoder-decoder sequence model with adapter wrap points.
//
// Encoder layer l (input z, output y):
//   m = z + relu(shift(z,+1) K_prev + z K_self + shift(z,-1) K_next + b)
//   h = LN(m);  y = LN(h + FFN(h))
// Decoder layer (causal; row i sees rows <= i only):
//   m = z + relu(z M0 + shift(z,1) M1 + shift(z,2) M2 + prefix_mean(z) M3 + b)
//   h = LN(m);  a = LN(h + attn(h, enc));  y = LN(a + FFN(a))
// where attn is a single-head scaled dot product over the encoder output.
//
// A hook installed at a site receives the layer input z^{l-1} and the plain
// layer output f^l(z^{l-1}) and returns the layer output actually used.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "moledit/error.hpp"
#include "moledit/numerics.hpp"
#include "moledit/rng.hpp"
#include "moledit/segmentation.hpp"

namespace moledit::model {

using num::NamedTensors;
using num::Tensor;

inline constexpr std::size_t kEndId = 0;
inline constexpr std::size_t kStartId = 1;
inline constexpr std::size_t kPadId = 2;
inline constexpr std::size_t kUnkId = 3;

// ---------------------------------------------------------------------------
// Vocabulary

/// Token <-> id table. Ids 0..3 are <end>, <start>, <pad>, <unk>. The file
/// form is one token per line, line number = id.
class Vocab {
 public:
  Vocab();

  std::size_t add(const std::string& token);
  bool contains(const std::string& token) const { return index_.count(token) > 0; }
  /// Throws TokenOutOfVocab.
  std::size_t id(const std::string& token) const;
  const std::string& token(std::size_t id) const;
  std::size_t size() const { return tokens_.size(); }

  /// Maps tokens to ids; unknown tokens become <unk> when `lenient`,
  /// otherwise throw TokenOutOfVocab.
  std::vector<std::size_t> encode(std::span<const std::string> tokens, bool lenient = false) const;
  std::vector<std::string> decode(std::span<const std::size_t> ids) const;

  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Configuration and sites

struct ModelConfig {
  std::size_t src_vocab = 0;
  std::size_t tgt_vocab = 0;
  std::size_t d_model = 64;
  std::size_t n_enc_layers = 4;
  std::size_t n_dec_layers = 4;
  std::size_t ffn = 128;
  std::size_t max_len = 64;
  std::uint64_t seed = 0;

  /// Throws InvalidConfig.
  void validate() const;
  /// Stable hash of every field; used to refuse resuming from a checkpoint
  /// built with a different configuration.
  std::uint64_t hash() const;
};

enum class Side { Encoder, Decoder };

/// A wrap point: 1-based layer index on one side of the model.
struct Site {
  Side side = Side::Encoder;
  std::size_t layer = 1;

  auto operator<=>(const Site&) const = default;
  /// "enc2" / "dec3".
  std::string name() const;
  static Site parse(const std::string& name);
};

/// Maps a layer position from a deeper reference model onto a toy depth:
/// round(layer * toy_depth / reference_depth), clamped to [1, toy_depth].
std::size_t proportional_layer(std::size_t layer, std::size_t reference_depth,
                               std::size_t toy_depth);

/// Default mid-to-late placement for the configured depths.
Site default_encoder_site(const ModelConfig& config);
Site default_decoder_site(const ModelConfig& config);

// ---------------------------------------------------------------------------
// Hooks

/// One routing decision made by an adapter: `unit` is a segment index at
/// encoder sites and a token position at decoder sites.
struct RoutingEvent {
  Site site;
  std::size_t unit = 0;
  std::vector<double> gate;
};
using RoutingTrace = std::vector<RoutingEvent>;

struct RunOptions {
  bool hooks_active = false;
  /// Expertise segments of the source sequence, used by encoder hooks.
  const ExpertiseSegmentation* segmentation = nullptr;
  bool training = false;
  Rng* rng = nullptr;
  RoutingTrace* trace = nullptr;
};

struct HookContext {
  const RunOptions& options;
  /// Position of the first row of z_prev within the sequence (decoder rows
  /// are evaluated incrementally during greedy decoding).
  std::size_t row_offset = 0;
};

class LayerHook {
 public:
  virtual ~LayerHook() = default;
  virtual Tensor apply(const Site& site, const Tensor& z_prev, const Tensor& base_out,
                       const HookContext& ctx) const = 0;
  virtual NamedTensors parameters() const = 0;
};

// ---------------------------------------------------------------------------
// Model

/// Activations of every layer: layers[0] is the embedded input and
/// layers[l] the output of layer l.
struct LayerActivations {
  std::vector<Tensor> layers;
  const Tensor& final() const { return layers.back(); }
};

class Model {
 public:
  explicit Model(const ModelConfig& config);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }

  /// Backbone parameters in a fixed order; with `include_hooks`, followed by
  /// hook parameters named "adapter/<site>/<name>".
  NamedTensors named_parameters(bool include_hooks = false) const;
  /// Copies values by name. Throws MissingParameter or ShapeMismatch.
  void load_parameters(const NamedTensors& tensors);
  std::uint64_t backbone_checksum() const;
  /// Deep copy of the backbone without hooks.
  Model clone() const;

  /// Throws SiteOutOfRange or SiteOccupied.
  void install_wrap(const Site& site, std::shared_ptr<LayerHook> hook);
  void remove_wrap(const Site& site);
  std::shared_ptr<LayerHook> wrap(const Site& site) const;
  std::vector<Site> wrapped_sites() const;

  /// Throws TokenOutOfVocab or SequenceTooLong.
  LayerActivations encode(std::span<const std::size_t> src, const RunOptions& options = {}) const;

  /// Teacher-forced logits {T, tgt_vocab} for decoder input ids.
  Tensor decoder_logits(const Tensor& enc_out, std::span<const std::size_t> dec_input,
                        const RunOptions& options = {}) const;

  /// Token-averaged cross-entropy of `tgt` followed by <end>, with <start>
  /// prepended to the decoder input.
  Tensor loss(std::span<const std::size_t> src, std::span<const std::size_t> tgt,
              const RunOptions& options = {}) const;

  /// Greedy decoding until <end> or `max_len` tokens (capped by the
  /// positional table). Ties go to the lowest id.
  std::vector<std::size_t> decode_greedy(const LayerActivations& enc, std::size_t max_len,
                                         const RunOptions& options = {}) const;

  std::vector<std::size_t> generate(std::span<const std::size_t> src, std::size_t max_len,
                                    const RunOptions& options = {}) const;

 private:
  Tensor embed(const Tensor& table, std::span<const std::size_t> ids, std::size_t vocab,
               const char* side) const;
  Tensor encoder_layer(std::size_t l, const Tensor& z) const;
  /// Output rows [from, T) of decoder layer l given its full input history.
  Tensor decoder_layer(std::size_t l, const Tensor& z, std::size_t from, const Tensor& keys,
                       const Tensor& values) const;
  Tensor apply_hook(const Site& site, const Tensor& z_prev, const Tensor& base,
                    const RunOptions& options, std::size_t row_offset) const;

  ModelConfig config_;
  NamedTensors params_;
  std::map<std::string, std::size_t> index_;
  Tensor positions_;
  std::map<Site, std::shared_ptr<LayerHook>> wraps_;

  const Tensor& p(const std::string& name) const;
};

/// Greedy decoding over an arbitrary step function mapping the tokens
/// emitted so far to next-token logits.
template <class StepFn>
std::vector<std::size_t> greedy_decode(StepFn&& step, std::size_t max_len) {
  std::vector<std::size_t> out;
  while (out.size() < max_len) {
    const auto logits = step(static_cast<const std::vector<std::size_t>&>(out));
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i)
      if (logits[i] > logits[best]) best = i;
    if (best == kEndId) break;
    out.push_back(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct Example {
  std::vector<std::size_t> src;
  std::vector<std::size_t> tgt;
  ExpertiseSegmentation segmentation;
};

using ParamFilter = std::function<bool(const std::string& name)>;

/// One optimizer step on the mean loss of `batch`. Only parameters whose
/// name passes `filter` receive gradients (hook parameters included, named
/// "adapter/..."). Returns the mean loss before the update.
double train_step(Model& model, std::span<const Example> batch, const ParamFilter& filter,
                  num::Adam& adam, const RunOptions& options = {});

struct PretrainOptions {
  std::size_t epochs = 30;
  double lr = 1e-3;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  std::function<void(std::size_t epoch, double loss)> on_epoch;
};

struct PretrainLog {
  std::vector<double> epoch_loss;
};

/// Full-parameter training. Throws EmptyCorpus.
PretrainLog pretrain(Model& model, std::span<const Example> corpus, const PretrainOptions& options);

// ---------------------------------------------------------------------------
// Persistence

struct SavedModel {
  Model model;
  Vocab src_vocab;
  Vocab tgt_vocab;
};

/// Writes <path> (parameters), <path>.src.vocab, <path>.tgt.vocab and
/// <path>.json (configuration and its hash).
void save_model(const std::string& path, const Model& model, const Vocab& src_vocab,
                const Vocab& tgt_vocab);
SavedModel load_model(const std::string& path);
/// Reads only the configuration sidecar.
ModelConfig load_model_config(const std::string& path);

}  // namespace moledit::model
