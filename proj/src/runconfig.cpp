#include "moledit/runconfig.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <variant>

namespace moledit {

namespace {

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "seed is stored through a size_t field");

using Field = std::variant<std::size_t RunConfig::*, double RunConfig::*, bool RunConfig::*,
                           std::string RunConfig::*>;

struct Entry {
  const char* key;
  Field field;
};

const std::vector<Entry>& table() {
  static const std::vector<Entry> t = {
      {"seed", &RunConfig::seed},
      {"threads", &RunConfig::threads},
      {"corpus.size", &RunConfig::corpus_size},
      {"corpus.stale_fraction", &RunConfig::corpus_stale_fraction},
      {"model.d_model", &RunConfig::d_model},
      {"model.enc_layers", &RunConfig::enc_layers},
      {"model.dec_layers", &RunConfig::dec_layers},
      {"model.ffn", &RunConfig::ffn},
      {"model.max_len", &RunConfig::max_len},
      {"pretrain.epochs", &RunConfig::pretrain_epochs},
      {"pretrain.lr", &RunConfig::pretrain_lr},
      {"pretrain.batch_size", &RunConfig::pretrain_batch_size},
      {"adapter.experts", &RunConfig::experts},
      {"adapter.top_k", &RunConfig::top_k},
      {"adapter.lambda", &RunConfig::lambda},
      {"adapter.gate_noise_std", &RunConfig::gate_noise_std},
      {"adapter.two_layer_experts", &RunConfig::two_layer_experts},
      {"edit.tau.cap", &RunConfig::tau_cap},
      {"edit.tau.mol", &RunConfig::tau_mol},
      {"edit.lr.cap", &RunConfig::edit_lr_cap},
      {"edit.lr.mol", &RunConfig::edit_lr_mol},
      {"edit.max_steps", &RunConfig::edit_max_steps},
      {"edit.early_stop_loss", &RunConfig::edit_early_stop_loss},
      {"edit.encoder_site", &RunConfig::encoder_site},
      {"edit.decoder_site", &RunConfig::decoder_site},
      {"edit.max_output_len", &RunConfig::edit_max_output_len},
      {"bench.low", &RunConfig::bench_low},
      {"bench.high", &RunConfig::bench_high},
      {"bench.edit_size", &RunConfig::bench_edit_size},
      {"bench.loc_size", &RunConfig::bench_loc_size},
      {"bench.gen_variants", &RunConfig::bench_gen_variants},
  };
  return t;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

Error bad_value(std::string_view key, std::string_view value, const char* expected) {
  return Error("BadConfigValue",
               std::string(key) + ": '" + std::string(value) + "' is not " + expected, ErrorClass::Usage);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  key = trim(key);
  value = trim(value);
  const auto& t = table();
  auto it = std::find_if(t.begin(), t.end(), [&](const Entry& e) { return key == e.key; });
  if (it == t.end()) throw Error("UnknownConfigKey", "unknown config key '" + std::string(key) + "'", ErrorClass::Usage);
  const char* first = value.data();
  const char* last = value.data() + value.size();
  std::visit(
      [&](auto member) {
        using T = std::remove_cvref_t<decltype(this->*member)>;
        if constexpr (std::is_same_v<T, std::size_t>) {
          std::size_t v = 0;
          auto [p, ec] = std::from_chars(first, last, v);
          if (ec != std::errc() || p != last) throw bad_value(key, value, "a non-negative integer");
          this->*member = v;
        } else if constexpr (std::is_same_v<T, double>) {
          double v = 0;
          auto [p, ec] = std::from_chars(first, last, v);
          if (ec != std::errc() || p != last || !std::isfinite(v)) throw bad_value(key, value, "a finite number");
          this->*member = v;
        } else if constexpr (std::is_same_v<T, bool>) {
          if (value == "true" || value == "1") this->*member = true;
          else if (value == "false" || value == "0") this->*member = false;
          else throw bad_value(key, value, "true or false");
        } else {
          this->*member = std::string(value);
        }
      },
      it->field);
}

void RunConfig::apply_text(std::string_view text, const std::string& origin) {
  std::size_t lineno = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    try {
      if (eq == std::string_view::npos)
        throw Error("BadConfigValue", "expected 'key = value'", ErrorClass::Usage);
      set(line.substr(0, eq), line.substr(eq + 1));
    } catch (const Error& e) {
      throw Error(e.code(), origin + ":" + std::to_string(lineno) + ": " + e.message(), e.error_class());
    }
  }
}

void RunConfig::apply_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("IoError", "cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  apply_text(ss.str(), path);
}

void RunConfig::validate() const {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) throw Error("InvalidConfig", what, ErrorClass::Usage);
  };
  check(threads >= 1, "threads must be at least 1");
  check(corpus_stale_fraction >= 0 && corpus_stale_fraction <= 0.5, "corpus.stale_fraction must lie in [0, 0.5]");
  check(pretrain_lr > 0 && pretrain_batch_size >= 1, "pretrain.lr must be positive and batch_size at least 1");
  check(tau_cap > 0 && tau_cap <= 1 && tau_mol > 0 && tau_mol <= 1, "edit.tau values must lie in (0, 1]");
  check(edit_lr_cap > 0 && edit_lr_mol > 0, "edit.lr values must be positive");
  check(bench_low >= 0 && bench_high <= 1 && bench_low < bench_high, "need 0 <= bench.low < bench.high <= 1");
  check(bench_edit_size >= 1 && bench_loc_size >= 1, "bench set sizes must be positive");
  if (!encoder_site.empty()) check(model::Site::parse(encoder_site).side == model::Side::Encoder, "edit.encoder_site must be encN");
  if (!decoder_site.empty()) check(model::Site::parse(decoder_site).side == model::Side::Decoder, "edit.decoder_site must be decN");
  meka::AdapterConfig a;
  a.experts = experts;
  a.top_k = top_k;
  a.lambda = lambda;
  a.gate_noise_std = gate_noise_std;
  a.d_model = d_model;
  a.validate();
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& e : table()) out.emplace_back(e.key);
    return out;
  }();
  return k;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& e : table())
    std::visit([&](auto member) { j[e.key] = this->*member; }, e.field);
  return j;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& e : table()) {
    out += e.key;
    out += " = ";
    std::visit(
        [&](auto member) {
          using T = std::remove_cvref_t<decltype(this->*member)>;
          if constexpr (std::is_same_v<T, double>) out += format_double(this->*member);
          else if constexpr (std::is_same_v<T, bool>) out += this->*member ? "true" : "false";
          else if constexpr (std::is_same_v<T, std::string>) out += this->*member;
          else out += std::to_string(this->*member);
        },
        e.field);
    out += '\n';
  }
  return out;
}

model::ModelConfig RunConfig::model_config(std::size_t src_vocab, std::size_t tgt_vocab,
                                           std::size_t longest_sequence) const {
  model::ModelConfig c;
  c.src_vocab = src_vocab;
  c.tgt_vocab = tgt_vocab;
  c.d_model = d_model;
  c.n_enc_layers = enc_layers;
  c.n_dec_layers = dec_layers;
  c.ffn = ffn;
  c.max_len = max_len ? max_len : std::max<std::size_t>(64, longest_sequence + 2);
  c.seed = seed;
  c.validate();
  return c;
}

model::PretrainOptions RunConfig::pretrain_options() const {
  model::PretrainOptions o;
  o.epochs = pretrain_epochs;
  o.lr = pretrain_lr;
  o.batch_size = pretrain_batch_size;
  o.seed = seed;
  return o;
}

editing::EditorConfig RunConfig::editor_config(Task task, std::size_t model_max_len) const {
  editing::EditorConfig c;
  c.adapter.experts = experts;
  c.adapter.top_k = top_k;
  c.adapter.lambda = lambda;
  c.adapter.gate_noise_std = gate_noise_std;
  c.adapter.two_layer_experts = two_layer_experts;
  c.adapter.seed = seed;
  if (!encoder_site.empty()) c.encoder_site = model::Site::parse(encoder_site);
  if (!decoder_site.empty()) c.decoder_site = model::Site::parse(decoder_site);
  c.tau = task == Task::Caption ? tau_cap : tau_mol;
  c.lr = task == Task::Caption ? edit_lr_cap : edit_lr_mol;
  c.max_steps = edit_max_steps;
  c.early_stop_loss = edit_early_stop_loss;
  c.max_output_len = edit_max_output_len ? edit_max_output_len : model_max_len;
  c.seed = seed;
  return c;
}

}  // namespace moledit
