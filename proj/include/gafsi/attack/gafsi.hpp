#pragma once

// Fraudster selection (local influence, pruning, greedy global selection)
// and post injection (connection optimization, content clone).

#include "gafsi/neural/model.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

namespace gafsi::attack {

struct AttackConfig {
  double alpha = 0.3;
  std::optional<int> delta_override;
  int delta_floor = 1;
  int pr_size = 256;
  std::uint64_t seed = 0;
  bool recompute = true;              // recompute B gradients after every pick
  bool exclude_target_posts = false;  // keep the target's own posts out of P_r

  void check() const {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in (0, 1]");
    if (delta_floor < 1) throw ConfigError("delta_floor must be >= 1");
    if (pr_size < 1) throw ConfigError("pr_size must be >= 1");
    if (delta_override && *delta_override < 0) throw ConfigError("delta_override must be >= 0");
  }
};

/// One greedy step: the score of every candidate still available and the pick.
struct TraceStep {
  std::vector<std::string> candidates;
  std::vector<double> scores;
  std::size_t chosen = 0;  // index into candidates/scores
  double value = 0.0;
};

struct SelectionTrace {
  std::vector<TraceStep> steps;
  std::vector<std::string> flags;

  bool flagged(std::string_view prefix) const {
    return std::any_of(flags.begin(), flags.end(), [&](const std::string& f) { return f.rfind(prefix, 0) == 0; });
  }
};

/// Attacker-side models, trained on the clean training split only.
struct Surrogates {
  nn::Model tree;       // gcn graph classifier on user-feature trees
  nn::Model bipartite;  // gcn node classifier on the user-news graph
  nn::Model text_tree;  // graph classifier on text-feature trees
};

/// Shared, read-only attacker view of one social context: the raw records,
/// their features and the user-news graph. Safe to share across threads.
class AttackContext {
 public:
  AttackContext(const IndexedContext& ictx, FeatureConfig fcfg)
      : ictx_(&ictx),
        featurizer_(ictx.context(), std::move(fcfg)),
        features_(featurizer_.compute(ictx.context())),
        bipartite_(build_bipartite(ictx, features_)),
        neighborhood_(bipartite_) {}

  const IndexedContext& indexed() const { return *ictx_; }
  const SocialContext& context() const { return ictx_->context(); }
  const ContextIndex& index() const { return ictx_->index(); }
  const Featurizer& featurizer() const { return featurizer_; }
  const ContextFeatures& features() const { return features_; }
  const DerivedGraph& bipartite() const { return bipartite_; }
  const nn::Neighborhood& neighborhood() const { return neighborhood_; }

  std::size_t user_node(std::size_t user) const { return context().news.size() + user; }

 private:
  const IndexedContext* ictx_;
  Featurizer featurizer_;
  ContextFeatures features_;
  DerivedGraph bipartite_;
  nn::Neighborhood neighborhood_;
};

/// Δ: bipartite degree of the target, floored, unless overridden.
inline int budget(const IndexedContext& ictx, std::size_t target, const AttackConfig& cfg = {}) {
  if (target >= ictx.context().news.size()) throw Error("unknown target news position " + std::to_string(target));
  if (cfg.delta_override) return *cfg.delta_override;
  return std::max(cfg.delta_floor, static_cast<int>(ictx.index().engaged_users[target].size()));
}

/// U_c: controllable users not yet engaged with the target, in record order.
inline std::vector<std::size_t> candidate_pool(const IndexedContext& ictx, std::size_t target) {
  const auto& users = ictx.context().users;
  const auto& engaged = ictx.index().engaged_users[target];
  std::vector<std::size_t> out;
  for (std::size_t u = 0; u < users.size(); ++u)
    if (users[u].controllable && !std::binary_search(engaged.begin(), engaged.end(), u)) out.push_back(u);
  return out;
}

namespace detail {

// Index of the max score; ties go to the smallest label.
inline std::size_t argmax_by_label(std::span<const double> scores, std::span<const std::string> labels) {
  if (scores.empty()) throw Error("argmax over no candidates");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best] || (scores[i] == scores[best] && labels[i] < labels[best])) best = i;
  return best;
}

inline int opposite(int label) { return 1 - label; }

}  // namespace detail

struct LocalInfluence {
  RowVector weight;            // averaged feature gradient over non-root nodes
  std::vector<double> scores;  // one per candidate
  bool degenerate = false;     // single-node tree: root gradient used instead
};

/// Importance weight of the user representation on one user-feature tree.
inline RowVector importance_weight(const nn::Model& tree_model, const DerivedGraph& tree, int label,
                                   bool* degenerate = nullptr) {
  Matrix g = nn::grad_wrt_features(tree_model, tree, nn::Objective::class_score(detail::opposite(label)));
  if (degenerate) *degenerate = tree.size() < 2;
  if (tree.size() < 2) return g.row(0);
  return g.bottomRows(g.rows() - 1).colwise().mean();
}

/// s_u = x_u . w for each candidate user.
inline LocalInfluence local_influence(const nn::Model& tree_model, const AttackContext& ac, std::size_t target,
                                      std::span<const std::size_t> candidates) {
  LocalInfluence out;
  DerivedGraph tree = build_prop_tree(ac.indexed(), ac.features(), target, FeatureSource::user);
  out.weight = importance_weight(tree_model, tree, ac.context().news[target].label, &out.degenerate);
  out.scores.reserve(candidates.size());
  for (auto u : candidates) out.scores.push_back(ac.features().users.row(static_cast<Eigen::Index>(u)).dot(out.weight));
  return out;
}

/// Shortlist size for budget Δ and trade-off α: ceil(Δ / α). α = 1 keeps the
/// Δ locally best candidates; smaller α leaves more room for global selection.
inline std::size_t shortlist_size(int delta, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in (0, 1]");
  if (delta <= 0) return 0;
  return static_cast<std::size_t>(std::ceil(static_cast<double>(delta) / alpha - 1e-9));
}

/// Positions (into `ids`) of the highest-scoring candidates, best first; ties
/// by ascending id. Flags the trace when fewer candidates than requested exist.
inline std::vector<std::size_t> prune(std::span<const std::string> ids, std::span<const double> scores, int delta,
                                      double alpha, SelectionTrace* trace = nullptr) {
  if (ids.size() != scores.size()) throw ShapeError("prune: ids and scores differ in length");
  const std::size_t keep = shortlist_size(delta, alpha);
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] != scores[b] ? scores[a] > scores[b] : ids[a] < ids[b];
  });
  if (order.size() < keep) {
    if (trace) trace->flags.push_back("short_pool: " + std::to_string(order.size()) + " candidates for " +
                                      std::to_string(keep) + " slots");
  } else {
    order.resize(keep);
  }
  return order;
}

/// Greedy global selection on the user-news graph: each round scores every
/// remaining shortlisted user by d(loss at the target)/d(a_{q,u}) and adds the
/// best edge before the next round.
inline std::vector<std::size_t> select_fraudsters(const nn::Model& bipartite_model, const AttackContext& ac,
                                                  std::size_t target, std::span<const std::size_t> shortlist, int delta,
                                                  SelectionTrace* trace = nullptr) {
  if (shortlist.empty()) throw Error("select_fraudsters: empty shortlist");
  const auto& users = ac.context().users;
  const int label = ac.context().news[target].label;
  nn::Neighborhood working = ac.neighborhood();
  std::vector<std::size_t> remaining(shortlist.begin(), shortlist.end());
  std::vector<std::size_t> chosen;
  const auto rounds = std::min<std::size_t>(static_cast<std::size_t>(std::max(delta, 0)), remaining.size());
  for (std::size_t r = 0; r < rounds; ++r) {
    std::vector<std::pair<std::size_t, std::size_t>> cand;
    std::vector<std::string> labels;
    for (auto u : remaining) {
      cand.emplace_back(target, ac.user_node(u));
      labels.push_back(users[u].id);
    }
    auto grads = nn::grad_wrt_adjacency(bipartite_model, ac.bipartite(), working, cand,
                                        nn::Objective::xent_loss(label, target));
    std::size_t best = detail::argmax_by_label(grads, labels);
    if (trace) trace->steps.push_back({labels, grads, best, grads[best]});
    const std::size_t u = remaining[best];
    chosen.push_back(u);
    working.add_edge(target, ac.user_node(u), 1.0);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best));
  }
  return chosen;
}

/// Gradient of the objective w.r.t. every entry of B for the current layout.
using BlockGradient = std::function<Matrix(const InjectionLayout&)>;

/// Masked greedy argmax over B: each step takes the largest gradient among
/// unmasked entries (ties by smallest (row, column)), sets it, and masks its
/// column. Returns the chosen row for every column.
inline std::vector<std::size_t> greedy_block_select(InjectionLayout& layout, const BlockGradient& gradient,
                                                    bool recompute, SelectionTrace* trace = nullptr) {
  const auto n = static_cast<Eigen::Index>(layout.tree_nodes), d = static_cast<Eigen::Index>(layout.slots);
  std::vector<std::size_t> parent(layout.slots, 0);
  Matrix grad = gradient(layout);
  for (Eigen::Index step = 0; step < d; ++step) {
    if (step > 0 && recompute) grad = gradient(layout);
    TraceStep ts;
    Eigen::Index bi = -1, bj = -1;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < d; ++j) {
        if (layout.C(i, j) == 0.0) continue;
        const double v = grad(i, j);
        if (trace) {
          ts.candidates.push_back(std::to_string(i) + ":" + std::to_string(j));
          ts.scores.push_back(v);
        }
        if (bi < 0 || v > grad(bi, bj)) {  // row-major scan keeps the smallest index on ties
          bi = i;
          bj = j;
          ts.chosen = ts.scores.empty() ? 0 : ts.scores.size() - 1;
        }
      }
    if (bi < 0) throw Error("connection mask exhausted");
    layout.B(bi, bj) = 1.0;
    layout.C.col(bj).setZero();
    parent[static_cast<std::size_t>(bj)] = static_cast<std::size_t>(bi);
    if (trace) {
      ts.value = grad(bi, bj);
      trace->steps.push_back(std::move(ts));
    }
  }
  return parent;
}

inline std::vector<std::string> injected_ids(const std::string& target, std::size_t count) {
  std::vector<std::string> ids;
  for (std::size_t k = 0; k < count; ++k) ids.push_back(injected_post_id(target, k));
  return ids;
}

/// Parent tree node for each injected post. Injected posts carry their
/// fraudster's user representation; the objective is the tree surrogate's
/// cross-entropy at the target's label.
inline std::vector<std::size_t> optimize_connections(const nn::Model& tree_model, const DerivedGraph& tree,
                                                     const Matrix& fraudster_features, int label, bool recompute = true,
                                                     SelectionTrace* trace = nullptr) {
  const auto slots = static_cast<int>(fraudster_features.rows());
  if (slots <= 0) throw Error("optimize_connections: no injected posts");
  InjectionLayout layout = init_injection_layout(tree, slots);
  const auto ids = injected_ids(tree.ids.front(), static_cast<std::size_t>(slots));
  BlockGradient gradient = [&](const InjectionLayout& l) {
    DerivedGraph g = l.assemble(tree, fraudster_features, ids);
    std::vector<std::pair<std::size_t, std::size_t>> cand;
    cand.reserve(l.tree_nodes * l.slots);
    for (std::size_t i = 0; i < l.tree_nodes; ++i)
      for (std::size_t j = 0; j < l.slots; ++j) cand.emplace_back(i, l.tree_nodes + j);
    auto flat = nn::grad_wrt_adjacency(tree_model, g, cand, nn::Objective::xent_loss(label));
    Matrix out(static_cast<Eigen::Index>(l.tree_nodes), static_cast<Eigen::Index>(l.slots));
    std::copy(flat.begin(), flat.end(), out.data());
    return out;
  };
  return greedy_block_select(layout, gradient, recompute, trace);
}

/// Propagation tree with injected posts attached; features from `source`
/// for original nodes and `injected_features` for the new ones.
inline DerivedGraph attach_injected(const DerivedGraph& tree, std::span<const std::size_t> parents,
                                    const Matrix& injected_features) {
  InjectionLayout layout = init_injection_layout(tree, static_cast<int>(parents.size()));
  for (std::size_t j = 0; j < parents.size(); ++j)
    layout.B(static_cast<Eigen::Index>(parents[j]), static_cast<Eigen::Index>(j)) = 1.0;
  return layout.assemble(tree, injected_features, injected_ids(tree.ids.front(), parents.size()));
}

/// P_r: uniform sample of existing posts, shared by every injected post of one attack.
inline std::vector<std::size_t> sample_reference_posts(const AttackContext& ac, std::size_t target, int pr_size,
                                                       std::uint64_t seed, bool exclude_target_posts) {
  const auto& ix = ac.index();
  std::vector<std::size_t> pool;
  for (std::size_t p = 0; p < ac.context().posts.size(); ++p)
    if (!exclude_target_posts || ix.post_root[p] != target) pool.push_back(p);
  Rng rng(mix_seed(seed, 0x7072ULL));
  auto pick = sample_without_replacement(rng, pool.size(), static_cast<std::size_t>(std::max(pr_size, 0)));
  std::vector<std::size_t> out;
  out.reserve(pick.size());
  for (auto i : pick) out.push_back(pool[i]);
  return out;
}

/// Content for each injected post: the text of the reference post whose
/// features align best with the post's feature gradient (ties: smallest id).
inline std::vector<Tokens> clone_content(const nn::Model& text_model, const AttackContext& ac, std::size_t target,
                                         std::span<const std::size_t> parents, std::span<const std::size_t> reference,
                                         SelectionTrace* trace = nullptr) {
  const auto& ctx = ac.context();
  std::vector<Tokens> out(parents.size());
  if (parents.empty()) return out;
  if (reference.empty()) {
    if (trace) trace->flags.push_back("empty_reference: injected posts keep empty content");
    return out;
  }
  DerivedGraph tree = build_prop_tree(ac.indexed(), ac.features(), target, FeatureSource::text);
  const Eigen::Index dim = tree.features.cols();
  DerivedGraph g = attach_injected(tree, parents, Matrix::Zero(static_cast<Eigen::Index>(parents.size()), dim));
  Matrix grad =
      nn::grad_wrt_features(text_model, g, nn::Objective::class_score(detail::opposite(ctx.news[target].label)));
  std::vector<std::string> labels;
  Matrix ref(static_cast<Eigen::Index>(reference.size()), dim);
  for (std::size_t r = 0; r < reference.size(); ++r) {
    labels.push_back(ctx.posts[reference[r]].id);
    ref.row(static_cast<Eigen::Index>(r)) = ac.features().posts.row(static_cast<Eigen::Index>(reference[r]));
  }
  for (std::size_t j = 0; j < parents.size(); ++j) {
    Eigen::VectorXd s = ref * grad.row(static_cast<Eigen::Index>(tree.size() + j)).transpose();
    std::vector<double> scores(s.data(), s.data() + s.size());
    std::size_t best = detail::argmax_by_label(scores, labels);
    out[j] = ctx.posts[reference[best]].text;
    if (trace) trace->steps.push_back({labels, std::move(scores), best, s[static_cast<Eigen::Index>(best)]});
  }
  return out;
}

struct AttackResult {
  AttackPlan plan;
  int delta = 0;
  LocalInfluence local;
  std::vector<std::size_t> shortlist;  // user positions after pruning
  std::vector<std::size_t> fraudsters;  // U_a, in selection order
  std::vector<std::size_t> parents;     // tree node per injected post
  SelectionTrace selection, connection, content;
  std::vector<std::string> flags;
};

/// Full pipeline for one target news. Reads only the surrogates and the raw
/// context; deterministic in cfg.seed.
inline AttackResult gafsi_attack(const AttackContext& ac, std::size_t target, const Surrogates& s,
                                 const AttackConfig& cfg = {}) {
  cfg.check();
  const auto& ctx = ac.context();
  AttackResult res;
  res.delta = budget(ac.indexed(), target, cfg);
  res.plan.target = ctx.news[target].id;
  res.plan.budget = res.delta;
  if (res.delta == 0) return res;

  auto pool = candidate_pool(ac.indexed(), target);
  if (pool.empty()) {
    res.flags.push_back("no_candidates: no controllable user outside the target's audience");
    return res;
  }
  res.local = local_influence(s.tree, ac, target, pool);
  if (res.local.degenerate) res.flags.push_back("degenerate_tree: root gradient used for local influence");
  std::vector<std::string> ids;
  ids.reserve(pool.size());
  for (auto u : pool) ids.push_back(ctx.users[u].id);
  for (auto i : prune(ids, res.local.scores, res.delta, cfg.alpha, &res.selection)) res.shortlist.push_back(pool[i]);

  res.fraudsters = select_fraudsters(s.bipartite, ac, target, res.shortlist, res.delta, &res.selection);
  if (static_cast<int>(res.fraudsters.size()) < res.delta) res.flags.push_back("partial: fewer fraudsters than budget");

  DerivedGraph tree = build_prop_tree(ac.indexed(), ac.features(), target, FeatureSource::user);
  Matrix feats(static_cast<Eigen::Index>(res.fraudsters.size()), tree.features.cols());
  for (std::size_t j = 0; j < res.fraudsters.size(); ++j)
    feats.row(static_cast<Eigen::Index>(j)) = ac.features().users.row(static_cast<Eigen::Index>(res.fraudsters[j]));
  res.parents = optimize_connections(s.tree, tree, feats, ctx.news[target].label, cfg.recompute, &res.connection);

  std::vector<Tokens> texts(res.parents.size());
  try {
    auto reference = sample_reference_posts(ac, target, cfg.pr_size, cfg.seed, cfg.exclude_target_posts);
    texts = clone_content(s.text_tree, ac, target, res.parents, reference, &res.content);
  } catch (const Error& e) {
    res.flags.push_back(std::string("clone_failed: ") + e.what());
  }
  for (const auto& f : res.content.flags) res.flags.push_back(f);

  for (std::size_t j = 0; j < res.fraudsters.size(); ++j)
    res.plan.posts.push_back({ctx.users[res.fraudsters[j]].id, tree.ids[res.parents[j]], std::move(texts[j])});
  return res;
}

}  // namespace gafsi::attack
