#include "moledit/eaes.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace moledit::eaes {

namespace {

constexpr char kMagic[4] = {'M', 'E', 'K', 'B'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in, const std::string& path) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
    throw Error("BadBankFile", path + ": truncated");
  return v;
}

}  // namespace

std::vector<double> expertise_mean(const Tensor& enc_final, std::span<const std::size_t> segment) {
  if (segment.empty()) throw Error("EmptySegment", "expertise segment has no tokens", ErrorClass::Invariant);
  const std::size_t d = enc_final.cols();
  std::vector<double> out(d, 0.0);
  for (auto r : segment) {
    if (r >= enc_final.rows()) {
      throw Error("SegmentationMismatch", "token " + std::to_string(r) + " outside encoder output",
                  ErrorClass::Invariant);
    }
    for (std::size_t c = 0; c < d; ++c) out[c] += enc_final.at(r, c);
  }
  for (auto& v : out) v /= static_cast<double>(segment.size());
  return out;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("DimensionMismatch", "cosine of unequal lengths", ErrorClass::Invariant);
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<LabeledMean> expertise_means(const Tensor& enc_final, const ExpertiseSegmentation& seg) {
  std::vector<LabeledMean> out;
  for (const auto& s : seg.segments) out.push_back({s.label, expertise_mean(enc_final, s.tokens)});
  return out;
}

std::vector<LabeledMean> whole_input_mean(const Tensor& enc_final) {
  std::vector<std::size_t> all(enc_final.rows());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return {{"all", expertise_mean(enc_final, all)}};
}

std::vector<LabeledMean> query_means(const Tensor& enc_final, const ExpertiseSegmentation& seg,
                                     MatchGranularity granularity) {
  return granularity == MatchGranularity::Expertise ? expertise_means(enc_final, seg)
                                                    : whole_input_mean(enc_final);
}

ExpertiseMemoryBank::ExpertiseMemoryBank(double tau) { set_tau(tau); }

void ExpertiseMemoryBank::set_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau))
    throw Error("InvalidConfig", "switch threshold must be positive", ErrorClass::Usage);
  tau_ = tau;
}

void ExpertiseMemoryBank::register_edit(std::uint64_t edit_id, std::span<const LabeledMean> means) {
  for (const auto& m : means) {
    double norm = 0.0;
    bool finite = true;
    for (double v : m.embedding) {
      norm += v * v;
      finite = finite && std::isfinite(v);
    }
    if (!finite || norm == 0.0) {
      throw Error("DegenerateEmbedding",
                  "edit " + std::to_string(edit_id) + " expertise '" + m.label + "' has a degenerate mean");
    }
  }
  for (const auto& m : means) entries_.push_back({edit_id, m.label, m.embedding});
}

SwitchDecision ExpertiseMemoryBank::decide(std::span<const LabeledMean> means) const {
  SwitchDecision d;
  d.best_similarity.assign(means.size(), -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < means.size(); ++i)
    for (const auto& e : entries_)
      d.best_similarity[i] = std::max(d.best_similarity[i], cosine(means[i].embedding, e.embedding));
  for (std::size_t i = 1; i < means.size(); ++i)
    if (d.best_similarity[i] < d.best_similarity[d.limiting]) d.limiting = i;
  d.active = !entries_.empty() && !means.empty() && d.best_similarity[d.limiting] >= tau_;
  return d;
}

void ExpertiseMemoryBank::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IoError", "cannot write " + path);
  out.write(kMagic, 4);
  put(out, kVersion);
  put(out, tau_);
  put(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    put(out, e.edit_id);
    put(out, static_cast<std::uint32_t>(e.label.size()));
    out.write(e.label.data(), static_cast<std::streamsize>(e.label.size()));
    put(out, static_cast<std::uint32_t>(e.embedding.size()));
    for (double v : e.embedding) put(out, v);
  }
  if (!out) throw Error("IoError", "write failed for " + path);
}

ExpertiseMemoryBank ExpertiseMemoryBank::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("IoError", "cannot read " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw Error("BadBankFile", path + ": bad magic");
  if (get<std::uint32_t>(in, path) != kVersion) throw Error("BadBankFile", path + ": unsupported version");
  ExpertiseMemoryBank bank(get<double>(in, path));
  const auto count = get<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    BankEntry e;
    e.edit_id = get<std::uint64_t>(in, path);
    e.label.resize(get<std::uint32_t>(in, path));
    if (!in.read(e.label.data(), static_cast<std::streamsize>(e.label.size())))
      throw Error("BadBankFile", path + ": truncated");
    e.embedding.resize(get<std::uint32_t>(in, path));
    for (auto& v : e.embedding) v = get<double>(in, path);
    bank.entries_.push_back(std::move(e));
  }
  return bank;
}

RoutedOutput route_inference(const model::Model& model, const ExpertiseMemoryBank& bank,
                             std::span<const std::size_t> src, const ExpertiseSegmentation& seg,
                             std::size_t max_len, MatchGranularity granularity,
                             model::RoutingTrace* trace) {
  num::NoGradGuard guard;
  RoutedOutput out;
  const auto plain = model.encode(src);
  const auto means = query_means(plain.final(), seg, granularity);
  out.decision = bank.decide(means);
  if (!out.decision.active) {
    out.tokens = model.decode_greedy(plain, max_len);
    return out;
  }
  model::RunOptions on;
  on.hooks_active = true;
  on.segmentation = &seg;
  on.trace = trace;
  out.tokens = model.decode_greedy(model.encode(src, on), max_len, on);
  return out;
}

}  // namespace moledit::eaes
