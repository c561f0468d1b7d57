#include "moledit/editing.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "moledit/metrics.hpp"

namespace moledit::editing {

AblationFlags AblationFlags::parse(std::string_view csv) {
  AblationFlags f;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const auto comma = csv.find(',', start);
    const auto end = comma == std::string_view::npos ? csv.size() : comma;
    std::string_view item = csv.substr(start, end - start);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (item == "no_meka") {
      f.no_meka = true;
    } else if (item == "no_eaes") {
      f.no_eaes = true;
    } else if (item == "encoder_only") {
      f.encoder_only = true;
    } else if (item == "decoder_only") {
      f.decoder_only = true;
    } else if (!item.empty()) {
      throw Error("UnknownAblation", "unknown ablation flag '" + std::string(item) + "'",
                  ErrorClass::Usage);
    }
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (f.encoder_only && f.decoder_only)
    throw Error("ConflictingFlags", "encoder_only and decoder_only exclude each other", ErrorClass::Usage);
  return f;
}

std::string AblationFlags::to_string() const {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += ',';
    out += name;
  };
  add(no_meka, "no_meka");
  add(no_eaes, "no_eaes");
  add(encoder_only, "encoder_only");
  add(decoder_only, "decoder_only");
  return out;
}

nlohmann::json to_json(const EditorConfig& c) {
  nlohmann::json j = {
      {"adapter",
       {{"experts", c.adapter.experts}, {"top_k", c.adapter.top_k}, {"lambda", c.adapter.lambda},
        {"gate_noise_std", c.adapter.gate_noise_std},
        {"d_model", c.adapter.d_model},
        {"two_layer_experts", c.adapter.two_layer_experts}, {"seed", c.adapter.seed}}},
      {"tau", c.tau},
      {"max_steps", c.max_steps},
      {"lr", c.lr},
      {"early_stop_loss", c.early_stop_loss},
      {"max_output_len", c.max_output_len},
      {"ablation", c.ablation.to_string()},
      {"seed", c.seed}};
  j["encoder_site"] = c.encoder_site ? nlohmann::json(c.encoder_site->name()) : nlohmann::json(nullptr);
  j["decoder_site"] = c.decoder_site ? nlohmann::json(c.decoder_site->name()) : nlohmann::json(nullptr);
  return j;
}

EditorConfig editor_config_from_json(const nlohmann::json& j) {
  try {
    EditorConfig c;
    const auto& a = j.at("adapter");
    c.adapter.experts = a.at("experts").get<std::size_t>();
    c.adapter.top_k = a.at("top_k").get<std::size_t>();
    c.adapter.lambda = a.at("lambda").get<double>();
    c.adapter.gate_noise_std = a.at("gate_noise_std").get<double>();
    c.adapter.d_model = a.at("d_model").get<std::size_t>();
    c.adapter.two_layer_experts = a.at("two_layer_experts").get<bool>();
    c.adapter.seed = a.at("seed").get<std::uint64_t>();
    c.tau = j.at("tau").get<double>();
    c.max_steps = j.at("max_steps").get<std::size_t>();
    c.lr = j.at("lr").get<double>();
    c.early_stop_loss = j.at("early_stop_loss").get<double>();
    c.max_output_len = j.at("max_output_len").get<std::size_t>();
    c.ablation = AblationFlags::parse(j.at("ablation").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
    if (!j.at("encoder_site").is_null()) c.encoder_site = model::Site::parse(j["encoder_site"].get<std::string>());
    if (!j.at("decoder_site").is_null()) c.decoder_site = model::Site::parse(j["decoder_site"].get<std::string>());
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error("BadEditorConfig", e.what());
  }
}

std::vector<double> downsample(std::span<const double> values, std::size_t points) {
  if (values.size() <= points || points == 0) return {values.begin(), values.end()};
  std::vector<double> out;
  if (points == 1) return {values.back()};
  for (std::size_t i = 0; i < points; ++i) {
    const auto idx = static_cast<std::size_t>(std::llround(
        static_cast<double>(i) * static_cast<double>(values.size() - 1) / static_cast<double>(points - 1)));
    out.push_back(values[idx]);
  }
  return out;
}

nlohmann::json edit_log_record(const EditResult& r, std::string_view task) {
  return {{"edit_id", r.edit_id},
          {"task", std::string(task)},
          {"loss_curve", downsample(r.loss_curve)},
          {"steps", r.steps},
          {"final_loss", r.final_loss},
          {"bank_entries", r.bank_entries_added},
          {"reliability", r.reliability},
          {"no_improvement", r.no_improvement},
          {"wall_ms", r.wall_ms}};
}

bool is_adapter_parameter(const std::string& name) { return name.rfind("adapter/", 0) == 0; }

Editor::Editor(model::Model& model, EditorConfig config)
    : model_(&model), config_(std::move(config)), bank_(config_.tau), rng_(config_.seed) {
  if (!model.wrapped_sites().empty())
    throw Error("SiteOccupied", "model already carries adapters", ErrorClass::Usage);
  const auto& mc = model.config();
  config_.adapter.d_model = mc.d_model;
  if (config_.ablation.no_meka) {
    config_.adapter.experts = 1;
    config_.adapter.top_k = 1;
  }
  if (!config_.encoder_site) config_.encoder_site = model::default_encoder_site(mc);
  if (!config_.decoder_site) config_.decoder_site = model::default_decoder_site(mc);
  if (config_.encoder_site->side != model::Side::Encoder || config_.decoder_site->side != model::Side::Decoder)
    throw Error("BadSite", "encoder and decoder sites are swapped", ErrorClass::Usage);

  auto enc_cfg = config_.adapter, dec_cfg = config_.adapter;
  enc_cfg.seed = config_.adapter.seed * 2 + 1;
  dec_cfg.seed = config_.adapter.seed * 2 + 2;
  if (!config_.ablation.decoder_only) {
    enc_ = std::make_shared<meka::Adapter>(enc_cfg);
    model.install_wrap(*config_.encoder_site, enc_);
  }
  if (!config_.ablation.encoder_only) {
    dec_ = std::make_shared<meka::Adapter>(dec_cfg);
    model.install_wrap(*config_.decoder_site, dec_);
  }
}

eaes::MatchGranularity Editor::granularity() const {
  return config_.ablation.no_eaes ? eaes::MatchGranularity::WholeInput
                                  : eaes::MatchGranularity::Expertise;
}

EditResult Editor::apply_edit(std::uint64_t edit_id, std::span<const model::Example> samples) {
  if (samples.empty() || samples.size() > 2) {
    throw Error("InvalidEditRequest", "an edit takes one or two samples, got " +
                                          std::to_string(samples.size()), ErrorClass::Usage);
  }
  const auto started = std::chrono::steady_clock::now();
  EditResult result;
  result.edit_id = edit_id;

  std::vector<eaes::LabeledMean> means;
  {
    num::NoGradGuard guard;
    for (const auto& ex : samples) {
      const auto m = eaes::query_means(model_->encode(ex.src).final(), ex.segmentation, granularity());
      means.insert(means.end(), m.begin(), m.end());
    }
  }

  model::RunOptions train;
  train.hooks_active = true;
  train.training = true;
  train.rng = &rng_;
  auto mean_loss = [&] {
    num::NoGradGuard guard;
    model::RunOptions eval;
    eval.hooks_active = true;
    double sum = 0.0;
    for (const auto& ex : samples) {
      eval.segmentation = &ex.segmentation;
      sum += model_->loss(ex.src, ex.tgt, eval).item();
    }
    return sum / static_cast<double>(samples.size());
  };

  result.initial_loss = mean_loss();
  num::Adam adam({.lr = config_.lr});
  const auto before = model_->backbone_checksum();
  for (std::size_t step = 0; step < config_.max_steps; ++step) {
    const double l = model::train_step(*model_, samples, is_adapter_parameter, adam, train);
    result.loss_curve.push_back(l);
    ++result.steps;
    if (l <= config_.early_stop_loss) break;
  }
  if (model_->backbone_checksum() != before)
    throw Error("FreezeViolation", "edit training changed backbone parameters", ErrorClass::Invariant);
  result.final_loss = mean_loss();
  result.no_improvement = result.steps > 0 && result.final_loss >= result.initial_loss;

  bank_.register_edit(edit_id, means);
  result.bank_entries_added = means.size();

  double rel = 0.0;
  for (const auto& ex : samples) {
    const auto out = infer(ex.src, ex.segmentation).tokens;
    std::vector<std::string> cand, ref;
    for (auto t : out) cand.push_back(std::to_string(t));
    for (auto t : ex.tgt) ref.push_back(std::to_string(t));
    if (!ref.empty()) rel += metrics::bleu_n(cand, ref, 2, true);
    else rel += cand.empty() ? 1.0 : 0.0;
  }
  result.reliability = rel / static_cast<double>(samples.size());
  result.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  return result;
}

eaes::RoutedOutput Editor::infer(std::span<const std::size_t> src, const ExpertiseSegmentation& seg,
                                 model::RoutingTrace* trace) const {
  return eaes::route_inference(*model_, bank_, src, seg, config_.max_output_len, granularity(), trace);
}

void Editor::save(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  num::NamedTensors adapters;
  for (auto& [name, t] : model_->named_parameters(true))
    if (is_adapter_parameter(name)) adapters.emplace_back(name, t);
  num::save_checkpoint(dir + "/adapters.mekt", adapters);
  bank_.save(dir + "/bank.mekb");
  std::ofstream out(dir + "/editor.json");
  if (!out) throw Error("IoError", "cannot write " + dir + "/editor.json");
  out << to_json(config_).dump(2) << '\n';
}

std::unique_ptr<Editor> Editor::load(model::Model& model, const std::string& dir) {
  std::ifstream in(dir + "/editor.json");
  if (!in) throw Error("IoError", "cannot read " + dir + "/editor.json");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("BadEditorConfig", e.what());
  }
  auto editor = std::make_unique<Editor>(model, editor_config_from_json(j));
  const auto saved = num::load_checkpoint(dir + "/adapters.mekt");
  std::map<std::string, const num::Tensor*> by_name;
  for (const auto& [name, t] : saved) by_name[name] = &t;
  for (auto& [name, t] : model.named_parameters(true)) {
    if (!is_adapter_parameter(name)) continue;
    auto it = by_name.find(name);
    if (it == by_name.end()) throw Error("MissingParameter", dir + "/adapters.mekt lacks " + name);
    if (it->second->shape() != t.shape()) throw num::ShapeMismatch("load " + name, t.shape(), it->second->shape());
    std::copy(it->second->data().begin(), it->second->data().end(), t.mutable_data().begin());
  }
  editor->bank_ = eaes::ExpertiseMemoryBank::load(dir + "/bank.mekb");
  return editor;
}

FineTuneScope parse_scope(std::string_view name) {
  if (name == "encoder") return FineTuneScope::Encoder;
  if (name == "decoder") return FineTuneScope::Decoder;
  if (name == "all") return FineTuneScope::All;
  throw Error("BadScope", "scope must be encoder, decoder or all", ErrorClass::Usage);
}

bool in_scope(const std::string& name, FineTuneScope scope) {
  if (is_adapter_parameter(name)) return false;
  const bool encoder = name.rfind("enc", 0) == 0 || name == "src_embed";
  switch (scope) {
    case FineTuneScope::Encoder: return encoder;
    case FineTuneScope::Decoder: return !encoder;
    case FineTuneScope::All: return true;
  }
  return false;
}

model::Model fine_tune_baseline(const model::Model& model, std::span<const model::Example> samples,
                                FineTuneScope scope, std::size_t steps, double lr) {
  model::Model copy = model.clone();
  if (samples.empty()) return copy;
  num::Adam adam({.lr = lr});
  auto filter = [scope](const std::string& name) { return in_scope(name, scope); };
  for (std::size_t s = 0; s < steps; ++s) model::train_step(copy, samples, filter, adam);
  return copy;
}

}  // namespace moledit::editing
