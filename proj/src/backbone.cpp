#include "moledit/backbone.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace moledit::model {

using namespace num;

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab() {
  for (const char* t : {"<end>", "<start>", "<pad>", "<unk>"}) add(t);
}

std::size_t Vocab::add(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  tokens_.push_back(token);
  index_.emplace(token, tokens_.size() - 1);
  return tokens_.size() - 1;
}

std::size_t Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) throw Error("TokenOutOfVocab", "unknown token '" + token + "'");
  return it->second;
}

const std::string& Vocab::token(std::size_t id) const {
  if (id >= tokens_.size()) {
    throw Error("TokenOutOfVocab", "id " + std::to_string(id) + " >= " +
                                       std::to_string(tokens_.size()));
  }
  return tokens_[id];
}

std::vector<std::size_t> Vocab::encode(std::span<const std::string> tokens, bool lenient) const {
  std::vector<std::size_t> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) {
    auto it = index_.find(t);
    if (it != index_.end()) {
      out.push_back(it->second);
    } else if (lenient) {
      out.push_back(kUnkId);
    } else {
      throw Error("TokenOutOfVocab", "unknown token '" + t + "'");
    }
  }
  return out;
}

std::vector<std::string> Vocab::decode(std::span<const std::size_t> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(token(id));
  return out;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IoError", "cannot write " + path);
  for (const auto& t : tokens_) out << t << '\n';
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("IoError", "cannot read " + path);
  Vocab v;
  v.tokens_.clear();
  v.index_.clear();
  std::string line;
  while (std::getline(in, line)) {
    if (v.index_.count(line)) throw Error("BadVocab", path + ": duplicate token '" + line + "'");
    v.tokens_.push_back(line);
    v.index_.emplace(line, v.tokens_.size() - 1);
  }
  const char* specials[] = {"<end>", "<start>", "<pad>", "<unk>"};
  for (std::size_t i = 0; i < 4; ++i) {
    if (i >= v.tokens_.size() || v.tokens_[i] != specials[i])
      throw Error("BadVocab", path + ": special tokens must occupy ids 0-3");
  }
  return v;
}

// ---------------------------------------------------------------------------
// Config and sites

void ModelConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw Error("InvalidConfig", what, ErrorClass::Usage);
  };
  need(src_vocab > kUnkId && tgt_vocab > kUnkId, "vocab sizes must exceed the special tokens");
  need(d_model > 0 && ffn > 0, "d_model and ffn must be positive");
  need(n_enc_layers > 0 && n_dec_layers > 0, "layer counts must be positive");
  need(max_len > 1, "max_len must be at least 2");
}

std::uint64_t ModelConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint64_t v : {static_cast<std::uint64_t>(src_vocab), static_cast<std::uint64_t>(tgt_vocab),
                          static_cast<std::uint64_t>(d_model), static_cast<std::uint64_t>(n_enc_layers),
                          static_cast<std::uint64_t>(n_dec_layers), static_cast<std::uint64_t>(ffn),
                          static_cast<std::uint64_t>(max_len), seed}) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xFF;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::string Site::name() const {
  return (side == Side::Encoder ? "enc" : "dec") + std::to_string(layer);
}

Site Site::parse(const std::string& name) {
  Site s;
  std::string digits;
  if (name.rfind("enc", 0) == 0) {
    s.side = Side::Encoder;
    digits = name.substr(3);
  } else if (name.rfind("dec", 0) == 0) {
    s.side = Side::Decoder;
    digits = name.substr(3);
  } else {
    throw Error("BadSite", "site must look like enc2 or dec3, got '" + name + "'", ErrorClass::Usage);
  }
  if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos)
    throw Error("BadSite", "site must look like enc2 or dec3, got '" + name + "'", ErrorClass::Usage);
  s.layer = std::stoul(digits);
  return s;
}

std::size_t proportional_layer(std::size_t layer, std::size_t reference_depth,
                               std::size_t toy_depth) {
  const double x = static_cast<double>(layer) * static_cast<double>(toy_depth) /
                   static_cast<double>(reference_depth);
  const auto r = static_cast<std::size_t>(std::llround(x));
  return std::clamp<std::size_t>(r, 1, toy_depth);
}

Site default_encoder_site(const ModelConfig& config) {
  // Middle of the encoder stack.
  return {Side::Encoder, std::max<std::size_t>(1, config.n_enc_layers / 2)};
}

Site default_decoder_site(const ModelConfig& config) {
  return {Side::Decoder, proportional_layer(10, 12, config.n_dec_layers)};
}

// ---------------------------------------------------------------------------
// Model

namespace {

std::string layer_name(const char* side, std::size_t l, const char* what) {
  return std::string(side) + std::to_string(l) + "/" + what;
}

}  // namespace

Model::Model(const ModelConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  const std::size_t d = config_.d_model, f = config_.ffn;
  const double sd_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double sd_f = 1.0 / std::sqrt(static_cast<double>(f));
  auto add = [&](std::string name, Tensor t) {
    index_[name] = params_.size();
    params_.emplace_back(std::move(name), std::move(t));
  };
  auto mat = [&](std::size_t r, std::size_t c, double sd) { return Tensor::randn({r, c}, sd, rng); };
  auto vec0 = [](std::size_t n) { return Tensor::zeros({n}); };
  auto vec1 = [](std::size_t n) { return Tensor::full({n}, 1.0); };

  add("src_embed", mat(config_.src_vocab, d, 1.0));
  add("tgt_embed", mat(config_.tgt_vocab, d, 1.0));
  for (std::size_t l = 1; l <= config_.n_enc_layers; ++l) {
    add(layer_name("enc", l, "k_prev"), mat(d, d, sd_d));
    add(layer_name("enc", l, "k_self"), mat(d, d, sd_d));
    add(layer_name("enc", l, "k_next"), mat(d, d, sd_d));
    add(layer_name("enc", l, "mix_b"), vec0(d));
    add(layer_name("enc", l, "ln1_g"), vec1(d));
    add(layer_name("enc", l, "ln1_b"), vec0(d));
    add(layer_name("enc", l, "ffn_w1"), mat(d, f, sd_d));
    add(layer_name("enc", l, "ffn_b1"), vec0(f));
    add(layer_name("enc", l, "ffn_w2"), mat(f, d, sd_f));
    add(layer_name("enc", l, "ffn_b2"), vec0(d));
    add(layer_name("enc", l, "ln2_g"), vec1(d));
    add(layer_name("enc", l, "ln2_b"), vec0(d));
  }
  for (std::size_t l = 1; l <= config_.n_dec_layers; ++l) {
    for (const char* m : {"m0", "m1", "m2", "m3"}) add(layer_name("dec", l, m), mat(d, d, sd_d));
    add(layer_name("dec", l, "mix_b"), vec0(d));
    add(layer_name("dec", l, "ln1_g"), vec1(d));
    add(layer_name("dec", l, "ln1_b"), vec0(d));
    for (const char* m : {"q", "k", "v", "o"}) add(layer_name("dec", l, m), mat(d, d, sd_d));
    add(layer_name("dec", l, "ln2_g"), vec1(d));
    add(layer_name("dec", l, "ln2_b"), vec0(d));
    add(layer_name("dec", l, "ffn_w1"), mat(d, f, sd_d));
    add(layer_name("dec", l, "ffn_b1"), vec0(f));
    add(layer_name("dec", l, "ffn_w2"), mat(f, d, sd_f));
    add(layer_name("dec", l, "ffn_b2"), vec0(d));
    add(layer_name("dec", l, "ln3_g"), vec1(d));
    add(layer_name("dec", l, "ln3_b"), vec0(d));
  }
  add("out_w", mat(d, config_.tgt_vocab, sd_d));
  add("out_b", vec0(config_.tgt_vocab));

  std::vector<double> pe(config_.max_len * d);
  for (std::size_t pos = 0; pos < config_.max_len; ++pos) {
    for (std::size_t i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) / rate;
      pe[pos * d + i] = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  positions_ = Tensor::from({config_.max_len, d}, std::move(pe));
}

const Tensor& Model::p(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("MissingParameter", name, ErrorClass::Invariant);
  return params_[it->second].second;
}

NamedTensors Model::named_parameters(bool include_hooks) const {
  NamedTensors out = params_;
  if (include_hooks) {
    for (const auto& [site, hook] : wraps_)
      for (auto& [name, t] : hook->parameters())
        out.emplace_back("adapter/" + site.name() + "/" + name, t);
  }
  return out;
}

void Model::load_parameters(const NamedTensors& tensors) {
  std::map<std::string, const Tensor*> given;
  for (const auto& [name, t] : tensors) given[name] = &t;
  for (auto& [name, t] : params_) {
    auto it = given.find(name);
    if (it == given.end()) throw Error("MissingParameter", "checkpoint lacks " + name);
    if (it->second->shape() != t.shape()) throw ShapeMismatch("load " + name, t.shape(), it->second->shape());
    const auto src = it->second->data();
    std::copy(src.begin(), src.end(), t.mutable_data().begin());
  }
}

std::uint64_t Model::backbone_checksum() const { return checksum(params_); }

Model Model::clone() const {
  Model copy(config_);
  copy.load_parameters(params_);
  return copy;
}

void Model::install_wrap(const Site& site, std::shared_ptr<LayerHook> hook) {
  const std::size_t depth = site.side == Side::Encoder ? config_.n_enc_layers : config_.n_dec_layers;
  if (site.layer < 1 || site.layer > depth) {
    throw Error("SiteOutOfRange",
                site.name() + " outside 1.." + std::to_string(depth), ErrorClass::Usage);
  }
  if (wraps_.count(site)) throw Error("SiteOccupied", site.name() + " already wrapped", ErrorClass::Usage);
  wraps_[site] = std::move(hook);
}

void Model::remove_wrap(const Site& site) { wraps_.erase(site); }

std::shared_ptr<LayerHook> Model::wrap(const Site& site) const {
  auto it = wraps_.find(site);
  return it == wraps_.end() ? nullptr : it->second;
}

std::vector<Site> Model::wrapped_sites() const {
  std::vector<Site> out;
  for (const auto& [site, _] : wraps_) out.push_back(site);
  return out;
}

Tensor Model::embed(const Tensor& table, std::span<const std::size_t> ids, std::size_t vocab,
                    const char* side) const {
  if (ids.empty()) throw Error("EmptySequence", std::string(side) + " sequence is empty");
  if (ids.size() > config_.max_len) {
    throw Error("SequenceTooLong", std::string(side) + " length " + std::to_string(ids.size()) +
                                       " exceeds max_len " + std::to_string(config_.max_len));
  }
  for (auto id : ids) {
    if (id >= vocab) {
      throw Error("TokenOutOfVocab", std::string(side) + " id " + std::to_string(id) +
                                         " >= vocab " + std::to_string(vocab));
    }
  }
  return add(embedding_lookup(table, ids), slice_rows(positions_, 0, ids.size()));
}

Tensor Model::encoder_layer(std::size_t l, const Tensor& z) const {
  auto w = [&](const char* what) -> const Tensor& { return p(layer_name("enc", l, what)); };
  Tensor mix = add(add(matmul(shift_rows(z, 1), w("k_prev")), matmul(z, w("k_self"))),
                   matmul(shift_rows(z, -1), w("k_next")));
  const Tensor m = add(z, relu(add(mix, w("mix_b"))));
  const Tensor h = layer_norm(m, w("ln1_g"), w("ln1_b"));
  const Tensor ff = add(matmul(relu(add(matmul(h, w("ffn_w1")), w("ffn_b1"))), w("ffn_w2")), w("ffn_b2"));
  return layer_norm(add(h, ff), w("ln2_g"), w("ln2_b"));
}

Tensor Model::decoder_layer(std::size_t l, const Tensor& z, std::size_t from, const Tensor& keys,
                            const Tensor& values) const {
  auto w = [&](const char* what) -> const Tensor& { return p(layer_name("dec", l, what)); };
  const std::size_t T = z.rows();
  auto rows = [&](const Tensor& t) { return from == 0 ? t : slice_rows(t, from, T); };
  const Tensor zr = rows(z);
  Tensor mix = add(matmul(zr, w("m0")), matmul(rows(shift_rows(z, 1)), w("m1")));
  mix = add(mix, matmul(rows(shift_rows(z, 2)), w("m2")));
  mix = add(mix, matmul(rows(prefix_mean_rows(z)), w("m3")));
  const Tensor m = add(zr, relu(add(mix, w("mix_b"))));
  const Tensor h = layer_norm(m, w("ln1_g"), w("ln1_b"));
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(config_.d_model));
  const Tensor scores = scale(matmul(matmul(h, w("q")), transpose(keys)), inv_sqrt_d);
  const Tensor attended = matmul(matmul(softmax(scores, 1), values), w("o"));
  const Tensor a = layer_norm(add(h, attended), w("ln2_g"), w("ln2_b"));
  const Tensor ff = add(matmul(relu(add(matmul(a, w("ffn_w1")), w("ffn_b1"))), w("ffn_w2")), w("ffn_b2"));
  return layer_norm(add(a, ff), w("ln3_g"), w("ln3_b"));
}

Tensor Model::apply_hook(const Site& site, const Tensor& z_prev, const Tensor& base,
                         const RunOptions& options, std::size_t row_offset) const {
  if (!options.hooks_active) return base;
  auto it = wraps_.find(site);
  if (it == wraps_.end()) return base;
  return it->second->apply(site, z_prev, base, HookContext{options, row_offset});
}

LayerActivations Model::encode(std::span<const std::size_t> src, const RunOptions& options) const {
  LayerActivations acts;
  acts.layers.push_back(embed(p("src_embed"), src, config_.src_vocab, "source"));
  for (std::size_t l = 1; l <= config_.n_enc_layers; ++l) {
    const Tensor& z = acts.layers.back();
    const Tensor base = encoder_layer(l, z);
    acts.layers.push_back(apply_hook({Side::Encoder, l}, z, base, options, 0));
  }
  return acts;
}

Tensor Model::decoder_logits(const Tensor& enc_out, std::span<const std::size_t> dec_input,
                             const RunOptions& options) const {
  Tensor z = embed(p("tgt_embed"), dec_input, config_.tgt_vocab, "target");
  for (std::size_t l = 1; l <= config_.n_dec_layers; ++l) {
    const Tensor keys = matmul(enc_out, p(layer_name("dec", l, "k")));
    const Tensor values = matmul(enc_out, p(layer_name("dec", l, "v")));
    const Tensor base = decoder_layer(l, z, 0, keys, values);
    z = apply_hook({Side::Decoder, l}, z, base, options, 0);
  }
  return add(matmul(z, p("out_w")), p("out_b"));
}

Tensor Model::loss(std::span<const std::size_t> src, std::span<const std::size_t> tgt,
                   const RunOptions& options) const {
  std::vector<std::size_t> dec_in{kStartId};
  dec_in.insert(dec_in.end(), tgt.begin(), tgt.end());
  std::vector<std::size_t> targets(tgt.begin(), tgt.end());
  targets.push_back(kEndId);
  const auto enc = encode(src, options);
  return cross_entropy(decoder_logits(enc.final(), dec_in, options), targets);
}

std::vector<std::size_t> Model::decode_greedy(const LayerActivations& enc, std::size_t max_len,
                                              const RunOptions& options) const {
  const std::size_t L = config_.n_dec_layers;
  std::vector<Tensor> keys, values;
  for (std::size_t l = 1; l <= L; ++l) {
    keys.push_back(matmul(enc.final(), p(layer_name("dec", l, "k"))));
    values.push_back(matmul(enc.final(), p(layer_name("dec", l, "v"))));
  }
  // history[l] holds the rows produced so far at the input of layer l + 1.
  std::vector<Tensor> history(L + 1);
  std::size_t fed = 0;
  auto step = [&](const std::vector<std::size_t>& emitted) {
    const std::size_t token = emitted.empty() ? kStartId : emitted.back();
    const std::size_t pos = fed++;
    const std::size_t ids[] = {token};
    Tensor row = add(embedding_lookup(p("tgt_embed"), ids), slice_rows(positions_, pos, pos + 1));
    auto append = [](Tensor& hist, const Tensor& r) {
      if (!hist.defined()) {
        hist = r;
      } else {
        const Tensor parts[] = {hist, r};
        hist = concat(parts, 0);
      }
    };
    append(history[0], row);
    for (std::size_t l = 1; l <= L; ++l) {
      const Tensor base = decoder_layer(l, history[l - 1], pos, keys[l - 1], values[l - 1]);
      const Tensor z_prev = slice_rows(history[l - 1], pos, pos + 1);
      row = apply_hook({Side::Decoder, l}, z_prev, base, options, pos);
      append(history[l], row);
    }
    const Tensor logits = add(matmul(row, p("out_w")), p("out_b"));
    return std::vector<double>(logits.data().begin(), logits.data().end());
  };
  return greedy_decode(step, std::min(max_len, config_.max_len));
}

std::vector<std::size_t> Model::generate(std::span<const std::size_t> src, std::size_t max_len,
                                         const RunOptions& options) const {
  NoGradGuard guard;
  return decode_greedy(encode(src, options), max_len, options);
}

// ---------------------------------------------------------------------------
// Training

double train_step(Model& model, std::span<const Example> batch, const ParamFilter& filter,
                  Adam& adam, const RunOptions& options) {
  if (batch.empty()) throw Error("EmptyBatch", "train_step needs at least one example", ErrorClass::Invariant);
  auto params = model.named_parameters(true);
  std::vector<Tensor> selected;
  for (auto& [name, t] : params) {
    const bool on = filter && filter(name);
    t.set_requires_grad(on);
    if (on) {
      t.zero_grad();
      selected.push_back(t);
    }
  }
  double total = 0.0;
  const double weight = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    RunOptions o = options;
    o.segmentation = &ex.segmentation;
    const Tensor l = model.loss(ex.src, ex.tgt, o);
    total += l.item();
    if (!selected.empty()) backward(scale(l, weight));
  }
  if (!selected.empty()) adam.step(selected);
  for (auto& t : selected) t.set_requires_grad(false);
  return total * weight;
}

PretrainLog pretrain(Model& model, std::span<const Example> corpus, const PretrainOptions& options) {
  if (corpus.empty()) throw Error("EmptyCorpus", "pretraining corpus is empty");
  PretrainLog log;
  Adam adam({.lr = options.lr});
  Rng rng(options.seed);
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t bs = std::max<std::size_t>(1, options.batch_size);
  auto all = [](const std::string&) { return true; };
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::vector<Example> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i)
        batch.push_back(corpus[order[i]]);
      sum += train_step(model, batch, all, adam) * static_cast<double>(batch.size());
    }
    const double mean_loss = sum / static_cast<double>(corpus.size());
    log.epoch_loss.push_back(mean_loss);
    if (options.on_epoch) options.on_epoch(epoch, mean_loss);
  }
  return log;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

nlohmann::json config_json(const ModelConfig& c) {
  return {{"src_vocab", c.src_vocab}, {"tgt_vocab", c.tgt_vocab}, {"d_model", c.d_model},
          {"n_enc_layers", c.n_enc_layers}, {"n_dec_layers", c.n_dec_layers}, {"ffn", c.ffn},
          {"max_len", c.max_len}, {"seed", c.seed}};
}

}  // namespace

void save_model(const std::string& path, const Model& model, const Vocab& src_vocab,
                const Vocab& tgt_vocab) {
  save_checkpoint(path, model.named_parameters(false));
  src_vocab.save(path + ".src.vocab");
  tgt_vocab.save(path + ".tgt.vocab");
  std::ofstream out(path + ".json");
  if (!out) throw Error("IoError", "cannot write " + path + ".json");
  nlohmann::json j = {{"config", config_json(model.config())},
                      {"config_hash", hex64(model.config().hash())}};
  out << j.dump(2) << '\n';
}

ModelConfig load_model_config(const std::string& path) {
  std::ifstream in(path + ".json");
  if (!in) throw Error("IoError", "cannot read " + path + ".json");
  nlohmann::json j;
  try {
    in >> j;
    const auto& c = j.at("config");
    ModelConfig cfg;
    cfg.src_vocab = c.at("src_vocab").get<std::size_t>();
    cfg.tgt_vocab = c.at("tgt_vocab").get<std::size_t>();
    cfg.d_model = c.at("d_model").get<std::size_t>();
    cfg.n_enc_layers = c.at("n_enc_layers").get<std::size_t>();
    cfg.n_dec_layers = c.at("n_dec_layers").get<std::size_t>();
    cfg.ffn = c.at("ffn").get<std::size_t>();
    cfg.max_len = c.at("max_len").get<std::size_t>();
    cfg.seed = c.at("seed").get<std::uint64_t>();
    if (j.at("config_hash").get<std::string>() != hex64(cfg.hash()))
      throw Error("ConfigHashMismatch", path + ".json hash does not match its config");
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw Error("BadCheckpoint", path + ".json: " + e.what());
  }
}

SavedModel load_model(const std::string& path) {
  const ModelConfig cfg = load_model_config(path);
  SavedModel saved{Model(cfg), Vocab::load(path + ".src.vocab"), Vocab::load(path + ".tgt.vocab")};
  if (saved.src_vocab.size() != cfg.src_vocab || saved.tgt_vocab.size() != cfg.tgt_vocab)
    throw Error("BadCheckpoint", path + ": vocabulary size does not match config");
  saved.model.load_parameters(load_checkpoint(path));
  return saved;
}

}  // namespace moledit::model
