#include "gafsi/dataio.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <set>

using namespace gafsi;

namespace {

GenConfig small(std::uint64_t seed, double sigma = 0.9) {
  GenConfig c;
  c.n_news = 100;
  c.n_users = 200;
  c.seed = seed;
  c.sigma = sigma;
  return c;
}

// Share of class-vocabulary tokens in news text that match the news label.
double aligned_token_share(const SocialContext& ctx) {
  double aligned = 0, total = 0;
  for (const auto& n : ctx.news)
    for (const auto& t : n.text) {
      if (t[0] == 'w') continue;
      total += 1;
      aligned += (t[0] == 'f') == (n.label == 1);
    }
  return total ? aligned / total : 0.5;
}

// Mean share of fake-leaning tokens in engager histories, per news class.
std::pair<double, double> engager_lean(const SocialContext& ctx) {
  std::map<std::string, double> lean;
  for (const auto& u : ctx.users) {
    double f = 0, n = 0;
    for (const auto& h : u.history)
      for (const auto& t : h) {
        f += t[0] == 'f';
        n += t[0] != 'w';
      }
    lean[u.id] = n ? f / n : 0.5;
  }
  IndexedContext ictx(ctx);
  double sum[2] = {0, 0}, cnt[2] = {0, 0};
  for (std::size_t k = 0; k < ctx.news.size(); ++k)
    for (auto u : ictx.index().engaged_users[k]) {
      sum[ctx.news[k].label] += lean[ctx.users[u].id];
      cnt[ctx.news[k].label] += 1;
    }
  return {sum[1] / cnt[1], sum[0] / cnt[0]};
}

}  // namespace

TEST(Generate, DeterministicInSeed) {
  EXPECT_EQ(generate(small(3)), generate(small(3)));
  EXPECT_NE(generate(small(3)), generate(small(4)));
}

TEST(Generate, OutputValidates) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto ctx = generate(small(s, 0.25 * static_cast<double>(s)));
    EXPECT_TRUE(validate(ctx).empty());
    EXPECT_EQ(ctx.news.size(), 100u);
    EXPECT_EQ(ctx.users.size(), 200u);
  }
}

TEST(Generate, LabelCountsAndTreeBounds) {
  GenConfig c = small(1);
  c.fake_fraction = 0.3;
  c.max_tree_size = 7;
  auto ctx = generate(c);
  int fake = 0;
  for (const auto& n : ctx.news) fake += n.label;
  EXPECT_EQ(fake, 30);
  IndexedContext ictx(ctx);
  for (std::size_t k = 0; k < ctx.news.size(); ++k) {
    EXPECT_GE(ictx.index().tree_posts[k].size(), 1u);
    EXPECT_LE(ictx.index().tree_posts[k].size(), 7u);
  }
}

TEST(Generate, IdsSortInRecordOrder) {
  auto ctx = generate(small(2));
  for (std::size_t i = 1; i < ctx.users.size(); ++i) EXPECT_LT(ctx.users[i - 1].id, ctx.users[i].id);
  for (std::size_t i = 1; i < ctx.news.size(); ++i) EXPECT_LT(ctx.news[i - 1].id, ctx.news[i].id);
}

TEST(Generate, SigmaControlsClassSignal) {
  auto strong = generate(small(5, 0.9)), none = generate(small(5, 0.0));
  EXPECT_GT(aligned_token_share(strong), 0.95);
  for (const auto& n : none.news)
    for (const auto& t : n.text) EXPECT_EQ(t[0], 'w');
  auto [fake_s, real_s] = engager_lean(strong);
  auto [fake_0, real_0] = engager_lean(none);
  EXPECT_GT(fake_s - real_s, 0.3);
  EXPECT_LT(std::abs(fake_0 - real_0), 0.1);
}

TEST(Generate, ControllableFractionExtremes) {
  GenConfig c = small(6);
  c.controllable_fraction = 0.0;
  for (const auto& u : generate(c).users) EXPECT_FALSE(u.controllable);
  c.controllable_fraction = 1.0;
  for (const auto& u : generate(c).users) EXPECT_TRUE(u.controllable);
}

TEST(Generate, RejectsBadConfig) {
  GenConfig c = small(0);
  c.sigma = 1.5;
  EXPECT_THROW(generate(c), ConfigError);
  c = small(0);
  c.n_news = 0;
  EXPECT_THROW(generate(c), ConfigError);
}

TEST(Split, HundredNewsGivesTwentyTenSeventy) {
  auto ctx = generate(small(7));
  auto s = split(ctx, {}, 1);
  EXPECT_EQ(s.train.size(), 20u);
  EXPECT_EQ(s.val.size(), 10u);
  EXPECT_EQ(s.test.size(), 70u);
  std::set<std::size_t> all;
  for (const auto* v : {&s.train, &s.val, &s.test}) all.insert(v->begin(), v->end());
  EXPECT_EQ(all.size(), 100u);
}

TEST(Split, StratifiedByLabel) {
  GenConfig c = small(8);
  c.n_news = 400;
  c.fake_fraction = 0.25;
  auto ctx = generate(c);
  auto s = split(ctx, {0.5, 0.25, 0.25}, 3);
  auto fake_share = [&](const std::vector<std::size_t>& v) {
    double f = 0;
    for (auto k : v) f += ctx.news[k].label;
    return f / static_cast<double>(v.size());
  };
  EXPECT_DOUBLE_EQ(fake_share(s.train), 0.25);
  EXPECT_DOUBLE_EQ(fake_share(s.val), 0.25);
  EXPECT_DOUBLE_EQ(fake_share(s.test), 0.25);
}

TEST(Split, DeterministicAndSeeded) {
  auto ctx = generate(small(9));
  EXPECT_EQ(split(ctx, {}, 5), split(ctx, {}, 5));
  EXPECT_NE(split(ctx, {}, 5), split(ctx, {}, 6));
}

TEST(Split, BadFractionsThrow) {
  auto ctx = generate(small(9));
  EXPECT_THROW(split(ctx, {0.5, 0.5, 0.5}), ConfigError);
  EXPECT_THROW(split(ctx, {1.2, -0.2, 0.0}), ConfigError);
}

TEST(Split, JsonListsIds) {
  auto ctx = generate(small(10));
  auto s = split(ctx);
  json j = split_to_json(ctx, s);
  ASSERT_EQ(j["test"].size(), s.test.size());
  EXPECT_EQ(j["train"][0].get<std::string>(), ctx.news[s.train[0]].id);
}

TEST(Interchange, SaveLoadRoundTrip) {
  auto ctx = generate(small(11));
  auto path = std::filesystem::temp_directory_path() / "gafsi_dataio_roundtrip.json";
  save_context(path, ctx);
  EXPECT_EQ(load_context(path), ctx);
  std::filesystem::remove(path);
}

TEST(GenConfigJson, RoundTripAndStrictKeys) {
  GenConfig c = small(12, 0.4);
  c.attachment = 0.0;
  EXPECT_EQ(gen_config_from_json(gen_config_to_json(c)), c);
  json partial{{"n_news", 50}};
  EXPECT_EQ(gen_config_from_json(partial).n_news, 50);
  EXPECT_EQ(gen_config_from_json(partial).n_users, GenConfig{}.n_users);
  json bad = gen_config_to_json(c);
  bad["sigmaa"] = 1;
  EXPECT_THROW(gen_config_from_json(bad), ConfigError);
  json wrong_type{{"n_news", "many"}};
  EXPECT_THROW(gen_config_from_json(wrong_type), ConfigError);
  json out_of_range{{"sigma", 2.0}};
  EXPECT_THROW(gen_config_from_json(out_of_range), ConfigError);
}
