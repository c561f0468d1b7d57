#include <gtest/gtest.h>

#include <filesystem>

#include "moledit/eaes.hpp"
#include "moledit/meka.hpp"

using namespace moledit;
using namespace moledit::eaes;
using num::Tensor;

namespace {

LabeledMean lm(std::string label, std::vector<double> v) { return {std::move(label), std::move(v)}; }

model::ModelConfig small_config() {
  model::ModelConfig c;
  c.src_vocab = 12;
  c.tgt_vocab = 10;
  c.d_model = 8;
  c.ffn = 12;
  c.max_len = 12;
  c.seed = 4;
  return c;
}

void fill_random(const Tensor& t, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& v : const_cast<Tensor&>(t).mutable_data()) v = rng.normal(0.0, 1.0);
}

}  // namespace

TEST(ExpertiseMean, Cases) {
  const auto m = Tensor::from({3, 2}, {1, 2, -1, -2, 4, 7});
  EXPECT_EQ(expertise_mean(m, std::vector<std::size_t>{2}), (std::vector<double>{4, 7}));
  const auto zero = expertise_mean(m, std::vector<std::size_t>{0, 1});
  EXPECT_EQ(zero, (std::vector<double>{0, 0}));
  ExpertiseMemoryBank bank;
  const std::vector<LabeledMean> degenerate = {lm("x", zero)};
  EXPECT_THROW(bank.register_edit(1, degenerate), Error);
  EXPECT_EQ(bank.size(), 0u);
  // Direct-sum oracle.
  const auto three = expertise_mean(m, std::vector<std::size_t>{0, 1, 2});
  EXPECT_DOUBLE_EQ(three[0], (1.0 - 1.0 + 4.0) / 3.0);
  EXPECT_DOUBLE_EQ(three[1], (2.0 - 2.0 + 7.0) / 3.0);
  EXPECT_THROW(expertise_mean(m, std::vector<std::size_t>{}), Error);
}

TEST(Bank, RegisterAppends) {
  ExpertiseMemoryBank bank(0.9);
  const std::vector<LabeledMean> three = {lm("a", {1, 0}), lm("b", {0, 1}), lm("c", {1, 1})};
  bank.register_edit(7, three);
  EXPECT_EQ(bank.size(), 3u);
  bank.register_edit(7, three);
  EXPECT_EQ(bank.size(), 6u);
  EXPECT_EQ(bank.entries()[4].label, "b");
}

TEST(Bank, DecideCases) {
  ExpertiseMemoryBank bank(0.9);
  const std::vector<LabeledMean> empty_query = {lm("a", {1, 0})};
  EXPECT_FALSE(bank.decide(empty_query).active);
  const std::vector<LabeledMean> stored = {lm("a", {1, 0, 0}), lm("b", {0, 1, 0})};
  bank.register_edit(1, stored);
  EXPECT_TRUE(bank.decide(stored).active);
  const std::vector<LabeledMean> one_off = {lm("a", {1, 0, 0}), lm("c", {0, 0, 1})};
  const auto d = bank.decide(one_off);
  EXPECT_FALSE(d.active);
  EXPECT_EQ(d.limiting, 1u);
  EXPECT_DOUBLE_EQ(d.best_similarity[0], 1.0);
  EXPECT_DOUBLE_EQ(d.best_similarity[1], 0.0);
  bank.set_tau(1.0 + 1e-9);
  EXPECT_FALSE(bank.decide(stored).active);
}

TEST(Bank, MonotoneInTauAndSelfRecall) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<LabeledMean> stored, query;
    for (int i = 0; i < 3; ++i) {
      std::vector<double> v(6), q(6);
      for (auto& x : v) x = rng.normal();
      for (auto& x : q) x = rng.normal();
      stored.push_back(lm("s", v));
      query.push_back(lm("q", q));
    }
    ExpertiseMemoryBank bank(1.0 - 1e-9);
    bank.register_edit(trial, stored);
    EXPECT_TRUE(bank.decide(stored).active);
    bool was_active = true;
    for (double tau = 0.05; tau <= 1.0; tau += 0.05) {
      bank.set_tau(tau);
      const bool active = bank.decide(query).active;
      EXPECT_FALSE(active && !was_active);
      was_active = active;
    }
  }
}

TEST(Bank, SaveLoadRoundTrip) {
  ExpertiseMemoryBank bank(0.85);
  const std::vector<LabeledMean> stored = {lm("hydroxyl", {1.5, -2}), lm("aromatic ring", {0.25, 3})};
  bank.register_edit(42, stored);
  const auto path = (std::filesystem::temp_directory_path() / "moledit_bank.mekb").string();
  bank.save(path);
  const auto loaded = ExpertiseMemoryBank::load(path);
  EXPECT_EQ(loaded.tau(), 0.85);
  ASSERT_EQ(loaded.size(), 2u);
  EXPECT_EQ(loaded.entries()[1].label, "aromatic ring");
  EXPECT_EQ(loaded.entries()[1].embedding, (std::vector<double>{0.25, 3}));
  EXPECT_EQ(loaded.entries()[0].edit_id, 42u);
  // 4 magic + 4 version + 8 tau + 4 count + per entry (8 + 4 + label + 4 + 16).
  EXPECT_EQ(std::filesystem::file_size(path), 20u + (32 + 8) + (32 + 13));
  std::filesystem::remove(path);
}

TEST(Routing, ClosedGateIsIdenticalToPlainModel) {
  model::Model m(small_config());
  meka::AdapterConfig ac;
  ac.d_model = 8;
  auto enc = std::make_shared<meka::Adapter>(ac);
  auto dec = std::make_shared<meka::Adapter>(ac);
  for (std::size_t p = 0; p < 5; ++p) {
    fill_random(enc->expert(p), p);
    fill_random(dec->expert(p), 10 + p);
  }
  const std::vector<std::size_t> edited = {4, 5, 6, 7}, other = {8, 9, 10, 11};
  const auto seg = whole_sequence_segmentation(4);
  const auto plain_other = m.generate(other, 10);
  m.install_wrap({model::Side::Encoder, 2}, enc);
  m.install_wrap({model::Side::Decoder, 3}, dec);

  ExpertiseMemoryBank bank(0.999);
  {
    num::NoGradGuard g;
    const auto means = expertise_means(m.encode(edited).final(), seg);
    bank.register_edit(1, means);
  }
  const auto far = route_inference(m, bank, other, seg, 10);
  if (!far.decision.active) EXPECT_EQ(far.tokens, plain_other);
  const auto self = route_inference(m, bank, edited, seg, 10);
  EXPECT_TRUE(self.decision.active);
  model::RunOptions on;
  on.hooks_active = true;
  on.segmentation = &seg;
  EXPECT_EQ(self.tokens, m.generate(edited, 10, on));
}

TEST(Routing, WholeInputUsesOneMean) {
  const auto m = Tensor::from({3, 2}, {1, 0, 0, 1, 1, 1});
  const ExpertiseSegmentation seg{{{"a", {0}}, {"b", {1, 2}}}, 3};
  EXPECT_EQ(query_means(m, seg, MatchGranularity::WholeInput).size(), 1u);
  EXPECT_EQ(query_means(m, seg, MatchGranularity::Expertise).size(), 2u);
}
