#include "fixtures.hpp"
#include "gafsi/graph_builders.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace gafsi;
using gafsi::testing::random_context;
using gafsi::testing::toy_context;

namespace {

// Root news id of a post by walking parents; independent of ContextIndex.
std::string root_of(const SocialContext& ctx, const std::string& post) {
  std::map<std::string, std::string> parent;
  for (const auto& p : ctx.posts) parent[p.id] = p.parent;
  std::string cur = post;
  while (parent.count(cur)) cur = parent[cur];
  return cur;
}

std::set<std::pair<std::string, std::string>> brute_bipartite(const SocialContext& ctx) {
  std::set<std::pair<std::string, std::string>> e;
  for (const auto& p : ctx.posts) e.emplace(root_of(ctx, p.id), p.author);
  return e;
}

std::set<std::pair<std::string, std::string>> edge_ids(const DerivedGraph& g) {
  std::set<std::pair<std::string, std::string>> e;
  for (const auto& ed : g.edges) e.emplace(g.ids[ed.src], g.ids[ed.dst]);
  return e;
}

struct Built {
  IndexedContext ictx;
  ContextFeatures f;
  explicit Built(SocialContext c, FeatureConfig cfg = {}) : ictx(std::move(c)), f(compute_features(ictx.context(), cfg)) {}
};

}  // namespace

TEST(Bipartite, DeepReshareConnectsAuthorToNews) {
  Built b(toy_context());
  auto g = build_bipartite(b.ictx, b.f);
  auto e = edge_ids(g);
  EXPECT_TRUE(e.count({"n1", "u3"}));   // p3 is a depth-3 reshare under n1
  EXPECT_FALSE(e.count({"n1", "u5"}));  // u5 only posts under n2/n3
  for (const auto& ed : g.edges) {
    EXPECT_EQ(g.roles[ed.src], NodeRole::news);
    EXPECT_EQ(g.roles[ed.dst], NodeRole::user);
  }
  EXPECT_EQ(g.features.rows(), 8);
}

TEST(Bipartite, MatchesBruteForceOnRandomContexts) {
  for (std::uint64_t s = 0; s < 25; ++s) {
    auto ctx = random_context(s, s % 2 ? 2 : 5, 3 + static_cast<int>(s % 7), 20);
    Built b(ctx);
    EXPECT_EQ(edge_ids(build_bipartite(b.ictx, b.f)), brute_bipartite(ctx)) << "seed " << s;
  }
}

TEST(Engagement, WeightsAreCommonUserCounts) {
  std::vector<UserRecord> users;
  for (int i = 0; i < 6; ++i) users.push_back({"u" + std::to_string(i), {}, true});
  std::vector<NewsRecord> news{{"a", {}, 0}, {"b", {}, 1}, {"c", {}, 0}};
  std::vector<PostRecord> posts;
  int k = 0;
  auto post = [&](const std::string& u, const std::string& parent) {
    posts.push_back({"p" + std::to_string(k), u, {}, parent, k});
    ++k;
  };
  for (int i = 0; i < 3; ++i) {
    post("u" + std::to_string(i), "a");
    post("u" + std::to_string(i), "b");
  }
  post("u4", "c");
  post("u5", "c");
  Built b(make_context(users, news, posts));
  auto g = build_engagement(b.ictx, b.f);
  ASSERT_EQ(g.edges.size(), 1u);
  EXPECT_EQ(g.edges[0], (Edge{0, 1, 3.0}));
  EXPECT_DOUBLE_EQ(g.features(2, g.features.cols() - 1), std::log1p(2.0));
}

TEST(Engagement, MatchesPairwiseSetIntersections) {
  for (std::uint64_t s = 0; s < 15; ++s) {
    auto ctx = random_context(100 + s, 4, 6, 30);
    Built b(ctx);
    auto g = build_engagement(b.ictx, b.f);
    std::map<std::string, std::set<std::string>> aud;
    for (const auto& [q, u] : brute_bipartite(ctx)) aud[q].insert(u);
    std::map<std::pair<std::string, std::string>, double> expected;
    for (std::size_t i = 0; i < ctx.news.size(); ++i)
      for (std::size_t j = i + 1; j < ctx.news.size(); ++j) {
        std::vector<std::string> both;
        const auto& A = aud[ctx.news[i].id];
        const auto& B = aud[ctx.news[j].id];
        std::set_intersection(A.begin(), A.end(), B.begin(), B.end(), std::back_inserter(both));
        if (!both.empty()) expected[{ctx.news[i].id, ctx.news[j].id}] = static_cast<double>(both.size());
      }
    std::map<std::pair<std::string, std::string>, double> got;
    for (const auto& e : g.edges) {
      EXPECT_GE(e.weight, 1.0);
      got[{g.ids[e.src], g.ids[e.dst]}] = e.weight;
    }
    EXPECT_EQ(got, expected) << "seed " << s;
  }
}

TEST(PropTree, NewsWithoutPostsIsSingleNode) {
  auto ctx = toy_context();
  ctx.news.push_back({"lonely", {"x"}, 0});
  Built b(ctx);
  auto t = build_prop_tree(b.ictx, b.f, "lonely", FeatureSource::user);
  EXPECT_EQ(t.size(), 1u);
  EXPECT_TRUE(t.edges.empty());
  EXPECT_EQ(t.root, std::optional<std::size_t>(0));
}

TEST(PropTree, ChainKeepsParentage) {
  std::vector<UserRecord> users{{"u", {{"h"}}, true}, {"v", {{"k"}}, true}};
  std::vector<NewsRecord> news{{"n", {"t"}, 1}};
  std::vector<PostRecord> posts{{"p1", "u", {"a"}, "n", 0}, {"p2", "v", {"b"}, "p1", 1}};
  Built b(make_context(users, news, posts));
  auto t = build_prop_tree(b.ictx, b.f, "n", FeatureSource::user);
  ASSERT_EQ(t.size(), 3u);
  EXPECT_EQ(t.edges, (std::vector<Edge>{{0, 1, 1.0}, {1, 2, 1.0}}));
  EXPECT_EQ(t.ids[2], "p2");
  EXPECT_EQ(t.features.row(2), b.f.users.row(1));  // author v
  auto tt = build_prop_tree(b.ictx, b.f, "n", FeatureSource::text);
  EXPECT_EQ(tt.features.row(2), b.f.posts.row(1));
  EXPECT_EQ(tt.features.row(0), b.f.news.row(0));
  EXPECT_THROW(build_prop_tree(b.ictx, b.f, "missing", FeatureSource::user), Error);
}

TEST(PropTree, NodeSetMatchesAncestorFilterAndIsATree) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto ctx = random_context(200 + s, 3, 8, 30);
    Built b(ctx);
    for (const auto& q : ctx.news) {
      auto t = build_prop_tree(b.ictx, b.f, q.id, FeatureSource::user);
      std::set<std::string> expected{q.id}, got(t.ids.begin(), t.ids.end());
      for (const auto& p : ctx.posts)
        if (root_of(ctx, p.id) == q.id) expected.insert(p.id);
      EXPECT_EQ(got, expected);
      // one parent per non-root, parents precede children
      ASSERT_EQ(t.edges.size(), t.size() - 1);
      std::vector<int> parents(t.size(), 0);
      for (const auto& e : t.edges) {
        ++parents[e.dst];
        EXPECT_LT(e.src, e.dst);
      }
      EXPECT_EQ(parents[0], 0);
      for (std::size_t i = 1; i < t.size(); ++i) EXPECT_EQ(parents[i], 1);
    }
  }
}

TEST(PropTree, AuthorsMatchBipartiteNeighbors) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto ctx = random_context(300 + s, 4, 9, 35);
    Built b(ctx);
    auto g = build_bipartite(b.ictx, b.f);
    for (std::size_t k = 0; k < ctx.news.size(); ++k) {
      std::set<std::string> nb, authors;
      for (const auto& e : g.edges)
        if (e.src == k) nb.insert(g.ids[e.dst]);
      auto t = build_prop_tree(b.ictx, b.f, k, FeatureSource::user);
      for (std::size_t i = 1; i < t.size(); ++i)
        authors.insert(ctx.posts[b.ictx.index().post_pos.at(t.ids[i])].author);
      EXPECT_EQ(nb, authors);
    }
  }
}

TEST(PropTree, PlanGrowsTreeByBudget) {
  auto ctx = toy_context();
  IndexedContext ix(ctx);
  AttackPlan plan{"n1", {{"u5", "p2", {}}, {"u4", "n1", {}}}, 2};
  // u4 already engages n1 but may still post again at the context level
  Built before(ctx), after(apply_plan(ix, plan));
  auto t0 = build_prop_tree(before.ictx, before.f, "n1", FeatureSource::user);
  auto t1 = build_prop_tree(after.ictx, after.f, "n1", FeatureSource::user);
  EXPECT_EQ(t1.size(), t0.size() + 2);
}

TEST(Bidir, ChainReversesAndStarPointsAtRoot) {
  DerivedGraph chain;
  chain.kind = GraphKind::prop_tree;
  chain.ids = {"a", "b", "c"};
  chain.roles = {NodeRole::news, NodeRole::post, NodeRole::post};
  chain.edges = {{0, 1, 1}, {1, 2, 1}};
  chain.features = Matrix::Zero(3, 2);
  auto [td, bu] = build_bidir_views(chain);
  EXPECT_EQ(bu.edges, (std::vector<Edge>{{1, 0, 1}, {2, 1, 1}}));
  EXPECT_EQ(td.features, bu.features);

  DerivedGraph star = chain;
  star.ids = {"r", "1", "2", "3", "4"};
  star.roles.assign(5, NodeRole::post);
  star.edges = {{0, 1, 1}, {0, 2, 1}, {0, 3, 1}, {0, 4, 1}};
  star.features = Matrix::Zero(5, 2);
  auto views = build_bidir_views(star);
  int into_root = 0;
  for (const auto& e : views.second.edges) into_root += e.dst == 0;
  EXPECT_EQ(into_root, 4);
}

TEST(Bidir, BottomUpIsTransposeOfTopDown) {
  auto ctx = random_context(7, 2, 6, 25);
  Built b(ctx);
  for (std::size_t k = 0; k < 2; ++k) {
    auto [td, bu] = build_bidir_views(build_prop_tree(b.ictx, b.f, k, FeatureSource::text));
    EXPECT_EQ(dense_adjacency(bu), Matrix(dense_adjacency(td).transpose()));
  }
  DerivedGraph g;
  g.kind = GraphKind::bipartite;
  EXPECT_THROW(build_bidir_views(g), Error);
}

TEST(InjectionLayout, InitialisesZeroBlocksAndFullMask) {
  auto ctx = toy_context();
  Built b(ctx);
  auto t = build_prop_tree(b.ictx, b.f, "n1", FeatureSource::user);
  ASSERT_EQ(t.size(), 5u);
  auto l = init_injection_layout(t, 2);
  EXPECT_EQ(l.B.rows(), 5);
  EXPECT_EQ(l.B.cols(), 2);
  EXPECT_TRUE(l.B.isZero(0));
  EXPECT_TRUE(l.O.isZero(0));
  EXPECT_TRUE(l.C.isOnes(0));
  EXPECT_EQ(init_injection_layout(t, 1).C.cols(), 1);
  EXPECT_THROW(init_injection_layout(t, 0), Error);
}

TEST(InjectionLayout, AssembledAdjacencyHasTreeInTopLeftBlock) {
  auto ctx = random_context(17, 2, 6, 12);
  Built b(ctx);
  auto t = build_prop_tree(b.ictx, b.f, 0, FeatureSource::user);
  auto l = init_injection_layout(t, 3);
  l.B(0, 1) = 1.0;
  l.B(static_cast<Eigen::Index>(t.size() - 1), 0) = 1.0;
  Matrix feats = Matrix::Ones(3, t.features.cols());
  auto g = l.assemble(t, feats, {"x0", "x1", "x2"});
  const auto n = static_cast<Eigen::Index>(t.size());
  Matrix a = dense_adjacency(g);
  ASSERT_EQ(a.rows(), n + 3);
  EXPECT_EQ(Matrix(a.topLeftCorner(n, n)), dense_adjacency(t));
  EXPECT_EQ(Matrix(a.topRightCorner(n, 3)), l.B);
  EXPECT_TRUE(a.bottomRightCorner(3, 3).isZero(0));
  EXPECT_EQ(g.features.bottomRows(3), feats);
}
