#pragma once

#include "gafsi/features.hpp"

#include <cmath>
#include <fstream>
#include <map>

namespace gafsi {

enum class GraphKind { bipartite, engagement, prop_tree, bidir_tree };
enum class NodeRole { news, user, post };
enum class FeatureSource { user, text };

struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
  double weight = 1.0;
  bool operator==(const Edge&) const = default;
};

/// Output of one graph construction over a social context. Trees are stored
/// directed root->leaf; bipartite and engagement graphs list each undirected
/// edge once.
struct DerivedGraph {
  GraphKind kind = GraphKind::prop_tree;
  std::vector<std::string> ids;
  std::vector<NodeRole> roles;
  std::vector<Edge> edges;
  Matrix features;
  std::optional<std::size_t> root;

  std::size_t size() const { return ids.size(); }
  bool directed() const { return kind == GraphKind::prop_tree || kind == GraphKind::bidir_tree; }
};

/// Dense adjacency as stored (directed for trees). Test and debug helper.
inline Matrix dense_adjacency(const DerivedGraph& g) {
  Matrix a = Matrix::Zero(static_cast<Eigen::Index>(g.size()), static_cast<Eigen::Index>(g.size()));
  for (const auto& e : g.edges) a(static_cast<Eigen::Index>(e.src), static_cast<Eigen::Index>(e.dst)) += e.weight;
  return a;
}

/// User-news bipartite graph: nodes are all news (first) then all users; an
/// edge joins a news item and every distinct author inside its tree.
inline DerivedGraph build_bipartite(const IndexedContext& ictx, const ContextFeatures& f) {
  const auto& ctx = ictx.context();
  const auto& ix = ictx.index();
  const std::size_t n = ctx.news.size(), m = ctx.users.size();
  DerivedGraph g;
  g.kind = GraphKind::bipartite;
  g.ids.reserve(n + m);
  g.roles.reserve(n + m);
  for (const auto& q : ctx.news) {
    g.ids.push_back(q.id);
    g.roles.push_back(NodeRole::news);
  }
  for (const auto& u : ctx.users) {
    g.ids.push_back(u.id);
    g.roles.push_back(NodeRole::user);
  }
  for (std::size_t k = 0; k < n; ++k)
    for (auto u : ix.engaged_users[k]) g.edges.push_back({k, n + u, 1.0});
  g.features.resize(static_cast<Eigen::Index>(n + m), f.news.cols());
  g.features.topRows(static_cast<Eigen::Index>(n)) = f.news;
  g.features.bottomRows(static_cast<Eigen::Index>(m)) = f.users;
  return g;
}

inline double degree_feature(std::size_t degree) { return std::log1p(static_cast<double>(degree)); }

/// News engagement graph: weight(a, b) = number of users engaged with both.
/// Node features are the news text row followed by log(1 + engaged users).
inline DerivedGraph build_engagement(const IndexedContext& ictx, const ContextFeatures& f) {
  const auto& ctx = ictx.context();
  const auto& ix = ictx.index();
  const std::size_t n = ctx.news.size();
  DerivedGraph g;
  g.kind = GraphKind::engagement;
  for (const auto& q : ctx.news) {
    g.ids.push_back(q.id);
    g.roles.push_back(NodeRole::news);
  }
  std::map<std::pair<std::size_t, std::size_t>, double> weight;
  for (const auto& engaged : ix.user_news)
    for (std::size_t i = 0; i < engaged.size(); ++i)
      for (std::size_t j = i + 1; j < engaged.size(); ++j) weight[{engaged[i], engaged[j]}] += 1.0;
  for (const auto& [pair, w] : weight) g.edges.push_back({pair.first, pair.second, w});

  const Eigen::Index d = f.news.cols();
  g.features.resize(static_cast<Eigen::Index>(n), d + 1);
  g.features.leftCols(d) = f.news;
  for (std::size_t k = 0; k < n; ++k)
    g.features(static_cast<Eigen::Index>(k), d) = degree_feature(ix.engaged_users[k].size());
  return g;
}

/// Propagation tree of one news item. Node 0 is the news; posts follow in
/// breadth-first order so every parent precedes its children.
inline DerivedGraph build_prop_tree(const IndexedContext& ictx, const ContextFeatures& f, std::size_t target,
                                    FeatureSource source) {
  const auto& ctx = ictx.context();
  const auto& ix = ictx.index();
  if (target >= ctx.news.size()) throw Error("unknown target news position " + std::to_string(target));
  const auto& order = ix.tree_posts[target];
  DerivedGraph g;
  g.kind = GraphKind::prop_tree;
  g.root = 0;
  g.ids.push_back(ctx.news[target].id);
  g.roles.push_back(NodeRole::news);
  std::unordered_map<std::size_t, std::size_t> local;  // post position -> node
  local.reserve(order.size());
  g.features.resize(static_cast<Eigen::Index>(order.size() + 1), f.news.cols());
  g.features.row(0) = f.news.row(static_cast<Eigen::Index>(target));
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t p = order[i];
    const std::size_t node = i + 1;
    local.emplace(p, node);
    g.ids.push_back(ctx.posts[p].id);
    g.roles.push_back(NodeRole::post);
    const auto& par = ix.post_parent[p];
    const std::size_t parent_node = par.kind == NodeRef::Kind::news ? 0 : local.at(par.index);
    g.edges.push_back({parent_node, node, 1.0});
    g.features.row(static_cast<Eigen::Index>(node)) =
        source == FeatureSource::user ? f.users.row(static_cast<Eigen::Index>(ix.post_author[p]))
                                      : f.posts.row(static_cast<Eigen::Index>(p));
  }
  return g;
}

inline DerivedGraph build_prop_tree(const IndexedContext& ictx, const ContextFeatures& f, const std::string& target,
                                    FeatureSource source) {
  return build_prop_tree(ictx, f, ictx.news_position(target), source);
}

/// Top-down (root->leaf) and bottom-up (leaf->root) orientations of a tree.
inline std::pair<DerivedGraph, DerivedGraph> build_bidir_views(const DerivedGraph& tree) {
  if (tree.kind != GraphKind::prop_tree && tree.kind != GraphKind::bidir_tree)
    throw Error("bidirectional views need a propagation tree");
  DerivedGraph td = tree;
  td.kind = GraphKind::bidir_tree;
  DerivedGraph bu = td;
  for (auto& e : bu.edges) std::swap(e.src, e.dst);
  return {std::move(td), std::move(bu)};
}

/// Block layout of a tree extended with `slots` injected posts:
///   [ A_tree  B ]
///   [ B^T     O ]
/// B(i, j) = 1 makes tree node i the parent of injected post j; C masks the
/// entries of B that may still be chosen.
struct InjectionLayout {
  std::size_t tree_nodes = 0;
  std::size_t slots = 0;
  Matrix B, O, C;

  /// Tree plus injected nodes; B entries become parent->post edges.
  DerivedGraph assemble(const DerivedGraph& tree, const Matrix& injected_features,
                        const std::vector<std::string>& injected_ids) const {
    if (static_cast<std::size_t>(injected_features.rows()) != slots || injected_ids.size() != slots)
      throw ShapeError("injected features/ids must have one row per slot");
    DerivedGraph g = tree;
    for (const auto& id : injected_ids) {
      g.ids.push_back(id);
      g.roles.push_back(NodeRole::post);
    }
    for (std::size_t i = 0; i < tree_nodes; ++i)
      for (std::size_t j = 0; j < slots; ++j)
        if (double w = B(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)); w != 0.0)
          g.edges.push_back({i, tree_nodes + j, w});
    for (std::size_t i = 0; i < slots; ++i)
      for (std::size_t j = 0; j < slots; ++j)
        if (double w = O(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)); w != 0.0)
          g.edges.push_back({tree_nodes + i, tree_nodes + j, w});
    g.features.resize(static_cast<Eigen::Index>(tree_nodes + slots), tree.features.cols());
    g.features.topRows(static_cast<Eigen::Index>(tree_nodes)) = tree.features;
    g.features.bottomRows(static_cast<Eigen::Index>(slots)) = injected_features;
    return g;
  }
};

inline InjectionLayout init_injection_layout(const DerivedGraph& tree, int slots) {
  if (slots <= 0) throw Error("injection layout needs at least one slot");
  InjectionLayout l;
  l.tree_nodes = tree.size();
  l.slots = static_cast<std::size_t>(slots);
  const auto n = static_cast<Eigen::Index>(l.tree_nodes), d = static_cast<Eigen::Index>(slots);
  l.B = Matrix::Zero(n, d);
  l.O = Matrix::Zero(d, d);
  l.C = Matrix::Ones(n, d);
  return l;
}

/// Debug export: `src dst weight` lines plus a whitespace-separated feature sidecar.
inline void export_edge_list(const DerivedGraph& g, const std::string& edge_path, const std::string& feature_path) {
  std::ofstream e(edge_path);
  if (!e) throw Error("cannot write " + edge_path);
  e.precision(17);
  for (const auto& ed : g.edges) e << g.ids[ed.src] << ' ' << g.ids[ed.dst] << ' ' << ed.weight << '\n';
  std::ofstream f(feature_path);
  if (!f) throw Error("cannot write " + feature_path);
  f.precision(17);
  for (Eigen::Index i = 0; i < g.features.rows(); ++i) {
    f << g.ids[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < g.features.cols(); ++j) f << ' ' << g.features(i, j);
    f << '\n';
  }
}

}  // namespace gafsi
