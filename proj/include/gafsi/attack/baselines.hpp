#pragma once

#include "gafsi/attack/gafsi.hpp"

namespace gafsi::attack {

struct BaselineResult {
  AttackPlan plan;
  std::vector<std::string> flags;
};

namespace detail {

// Nodes of the target's current tree: the news id, then its posts.
inline std::vector<std::string> tree_node_ids(const AttackContext& ac, std::size_t target) {
  std::vector<std::string> ids{ac.context().news[target].id};
  for (auto p : ac.index().tree_posts[target]) ids.push_back(ac.context().posts[p].id);
  return ids;
}

inline void add_random_parents(const AttackContext& ac, std::size_t target, const std::vector<std::size_t>& users,
                               Rng& rng, AttackPlan& plan) {
  auto parents = tree_node_ids(ac, target);
  for (auto u : users) plan.posts.push_back({ac.context().users[u].id, parents[uniform_index(rng, parents.size())], {}});
}

inline std::vector<std::size_t> draw(Rng& rng, const std::vector<std::size_t>& pool, std::size_t k) {
  std::vector<std::size_t> out;
  for (auto i : sample_without_replacement(rng, pool.size(), k)) out.push_back(pool[i]);
  return out;
}

}  // namespace detail

/// Δ random fraudsters, each sharing a random node of the target's tree.
inline BaselineResult attack_random(const AttackContext& ac, std::size_t target, int delta, std::uint64_t seed) {
  BaselineResult r;
  r.plan.target = ac.context().news.at(target).id;
  r.plan.budget = delta;
  Rng rng(mix_seed(seed, 0x72616e64ULL));
  auto pool = candidate_pool(ac.indexed(), target);
  const auto k = static_cast<std::size_t>(std::max(delta, 0));
  if (pool.size() < k) r.flags.push_back("short_pool: fewer candidates than budget");
  detail::add_random_parents(ac, target, detail::draw(rng, pool, k), rng, r.plan);
  return r;
}

/// Node-classifier predictions for every user of the user-news graph.
inline std::vector<int> user_pseudo_labels(const nn::Model& bipartite_model, const AttackContext& ac) {
  Matrix z = nn::forward(bipartite_model, ac.bipartite());
  const std::size_t n = ac.context().news.size();
  std::vector<int> out(ac.context().users.size());
  for (std::size_t u = 0; u < out.size(); ++u) {
    const auto r = static_cast<Eigen::Index>(n + u);
    out[u] = z(r, 1) > z(r, 0) ? 1 : 0;
  }
  return out;
}

/// Random fraudsters among users whose pseudo-label differs from the target's
/// label; tops up from the remaining pool when too few exist.
inline BaselineResult attack_dice(const AttackContext& ac, std::size_t target, int delta,
                                  std::span<const int> pseudo_labels, std::uint64_t seed) {
  BaselineResult r;
  const int label = ac.context().news.at(target).label;
  r.plan.target = ac.context().news[target].id;
  r.plan.budget = delta;
  if (pseudo_labels.size() != ac.context().users.size()) throw ShapeError("one pseudo-label per user expected");
  Rng rng(mix_seed(seed, 0x64696365ULL));
  std::vector<std::size_t> opposite, rest;
  for (auto u : candidate_pool(ac.indexed(), target)) (pseudo_labels[u] != label ? opposite : rest).push_back(u);
  const auto k = static_cast<std::size_t>(std::max(delta, 0));
  auto users = detail::draw(rng, opposite, k);
  if (users.size() < k) {
    r.flags.push_back("fallback: " + std::to_string(users.size()) + " opposite-label users for budget " +
                      std::to_string(k));
    if (rest.size() < k - users.size()) r.flags.push_back("short_pool: fewer candidates than budget");
    for (auto u : detail::draw(rng, rest, k - users.size())) users.push_back(u);
  }
  detail::add_random_parents(ac, target, users, rng, r.plan);
  return r;
}

inline BaselineResult attack_dice(const AttackContext& ac, std::size_t target, int delta,
                                  const nn::Model& bipartite_model, std::uint64_t seed) {
  auto labels = user_pseudo_labels(bipartite_model, ac);
  return attack_dice(ac, target, delta, labels, seed);
}

/// One-shot gradient attack: scores every candidate edge (q, u) on the
/// target's 2-hop subgraph and keeps the top Δ; every post shares the news.
inline BaselineResult attack_sga_like(const AttackContext& ac, std::size_t target, int delta,
                                      const nn::Model& bipartite_model, SelectionTrace* trace = nullptr) {
  BaselineResult r;
  const auto& ctx = ac.context();
  r.plan.target = ctx.news.at(target).id;
  r.plan.budget = delta;
  auto pool = candidate_pool(ac.indexed(), target);
  const auto k = static_cast<std::size_t>(std::max(delta, 0));
  if (pool.size() < k) r.flags.push_back("short_pool: fewer candidates than budget");
  if (pool.empty() || k == 0) return r;
  std::vector<std::pair<std::size_t, std::size_t>> cand;
  std::vector<std::string> ids;
  for (auto u : pool) {
    cand.emplace_back(target, ac.user_node(u));
    ids.push_back(ctx.users[u].id);
  }
  auto grads = nn::grad_wrt_adjacency(bipartite_model, ac.bipartite(), ac.neighborhood(), cand,
                                      nn::Objective::xent_loss(ctx.news[target].label, target));
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return grads[a] != grads[b] ? grads[a] > grads[b] : ids[a] < ids[b]; });
  order.resize(std::min(k, order.size()));
  if (trace) trace->steps.push_back({ids, grads, order.front(), grads[order.front()]});
  for (auto i : order) r.plan.posts.push_back({ids[i], ctx.news[target].id, {}});
  return r;
}

}  // namespace gafsi::attack
