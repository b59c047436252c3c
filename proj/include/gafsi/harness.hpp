#pragma once

// Experiment orchestration: detectors and surrogates trained on the clean
// training split, attacks on test news, re-evaluation of the frozen
// detectors on the perturbed views, reports and sweep curves.

#include "gafsi/attack/baselines.hpp"
#include "gafsi/dataio.hpp"
#include "gafsi/neural/train.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <chrono>
#include <thread>

namespace gafsi::harness {

class CalibrationError : public Error {
 public:
  using Error::Error;
};

enum class DetectorKind { g1_gcn, g1_sage, g1_gat, g2_gcn, g3_gcn, g3_sage, g3_gat, g4_bidir };
enum class AttackKind { none, random, dice, sga, gafsi };

inline constexpr DetectorKind kAllDetectors[] = {DetectorKind::g1_gcn, DetectorKind::g1_sage, DetectorKind::g1_gat,
                                                 DetectorKind::g2_gcn, DetectorKind::g3_gcn,  DetectorKind::g3_sage,
                                                 DetectorKind::g3_gat, DetectorKind::g4_bidir};
inline constexpr AttackKind kAllAttacks[] = {AttackKind::none, AttackKind::random, AttackKind::dice, AttackKind::sga,
                                             AttackKind::gafsi};

inline std::string to_string(DetectorKind d) {
  switch (d) {
    case DetectorKind::g1_gcn: return "G1-gcn";
    case DetectorKind::g1_sage: return "G1-sage";
    case DetectorKind::g1_gat: return "G1-gat";
    case DetectorKind::g2_gcn: return "G2-gcn";
    case DetectorKind::g3_gcn: return "G3-gcn";
    case DetectorKind::g3_sage: return "G3-sage";
    case DetectorKind::g3_gat: return "G3-gat";
    case DetectorKind::g4_bidir: return "G4-bidir";
  }
  return "?";
}

inline std::string graph_of(DetectorKind d) { return to_string(d).substr(0, 2); }

inline std::string to_string(AttackKind a) {
  switch (a) {
    case AttackKind::none: return "-";
    case AttackKind::random: return "random";
    case AttackKind::dice: return "dice";
    case AttackKind::sga: return "sga";
    case AttackKind::gafsi: return "gafsi";
  }
  return "?";
}

inline DetectorKind detector_from_string(const std::string& s) {
  for (auto d : kAllDetectors)
    if (to_string(d) == s) return d;
  std::string valid;
  for (auto d : kAllDetectors) valid += (valid.empty() ? "" : ", ") + to_string(d);
  throw ConfigError("unknown detector '" + s + "' (valid: " + valid + ")");
}

inline AttackKind attack_from_string(const std::string& s) {
  if (s == "none") return AttackKind::none;
  for (auto a : kAllAttacks)
    if (to_string(a) == s) return a;
  throw ConfigError("unknown attack '" + s + "' (valid: none, random, dice, sga, gafsi)");
}

inline bool is_tree(DetectorKind d) { return graph_of(d) == "G3" || graph_of(d) == "G4"; }

struct ExperimentConfig {
  GenConfig data;
  std::string dataset;  // interchange document; generated from `data` when empty
  FeatureConfig features;
  std::vector<DetectorKind> detectors{std::begin(kAllDetectors), std::end(kAllDetectors)};
  std::vector<AttackKind> attacks{std::begin(kAllAttacks), std::end(kAllAttacks)};
  int repeats = 10;
  attack::AttackConfig attack;
  std::vector<double> alpha_grid{0.1, 0.2, 0.3, 0.5, 1.0};
  std::vector<double> budget_grid{0.0, 0.25, 0.5, 1.0};
  std::vector<int> degree_edges{0, 10, 25, 50, 100};  // buckets (e0, e1], (e1, e2], ...
  int hidden = 32;
  int layers = 2;
  nn::Readout surrogate_readout = nn::Readout::root_concat_mean_pool;  // tree surrogates
  nn::TrainConfig train;
  SplitFractions split;
  double min_clean_accuracy = 0.8;
  int max_targets_per_class = 0;   // 0: every test news
  int max_targets_per_bucket = 0;  // degree sweep; 0: every eligible news
  std::uint64_t seed = 0;
  int jobs = 1;

  void check() const {
    if (repeats < 1) throw ConfigError("repeats must be >= 1");
    if (detectors.empty()) throw ConfigError("detector list is empty");
    if (attacks.empty()) throw ConfigError("attack list is empty");
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
    if (degree_edges.size() < 2 || !std::is_sorted(degree_edges.begin(), degree_edges.end()))
      throw ConfigError("degree_edges needs at least two ascending values");
    attack.check();
    features.check();
  }
};

// --- config documents ----------------------------------------------------------

inline json experiment_config_to_json(const ExperimentConfig& c) {
  json j;
  j["data"] = gen_config_to_json(c.data);
  j["dataset"] = c.dataset;
  j["feature_dim"] = c.features.dim;
  j["feature_seed"] = c.features.seed;
  j["detectors"] = json::array();
  for (auto d : c.detectors) j["detectors"].push_back(to_string(d));
  j["attacks"] = json::array();
  for (auto a : c.attacks) j["attacks"].push_back(a == AttackKind::none ? "none" : to_string(a));
  j["repeats"] = c.repeats;
  j["alpha"] = c.attack.alpha;
  j["delta_floor"] = c.attack.delta_floor;
  j["pr_size"] = c.attack.pr_size;
  j["recompute"] = c.attack.recompute;
  j["exclude_target_posts"] = c.attack.exclude_target_posts;
  j["alpha_grid"] = c.alpha_grid;
  j["budget_grid"] = c.budget_grid;
  j["degree_edges"] = c.degree_edges;
  j["hidden"] = c.hidden;
  j["layers"] = c.layers;
  j["surrogate_readout"] = c.surrogate_readout == nn::Readout::mean_pool ? "mean_pool" : "root_concat_mean_pool";
  j["learning_rate"] = c.train.learning_rate;
  j["max_epochs"] = c.train.max_epochs;
  j["patience"] = c.train.patience;
  j["batch_size"] = c.train.batch_size;
  j["split"] = {c.split.train, c.split.val, c.split.test};
  j["min_clean_accuracy"] = c.min_clean_accuracy;
  j["max_targets_per_class"] = c.max_targets_per_class;
  j["max_targets_per_bucket"] = c.max_targets_per_bucket;
  j["seed"] = c.seed;
  j["jobs"] = c.jobs;
  return j;
}

/// Strict: unknown keys are rejected; absent keys keep their defaults.
inline ExperimentConfig experiment_config_from_json(const json& j) {
  require_keys(j,
               {"data", "dataset", "feature_dim", "feature_seed", "detectors", "attacks", "repeats", "alpha",
                "delta_floor", "pr_size", "recompute", "exclude_target_posts", "alpha_grid", "budget_grid",
                "degree_edges", "hidden", "layers", "surrogate_readout", "learning_rate", "max_epochs", "patience", "batch_size", "split",
                "min_clean_accuracy", "max_targets_per_class", "max_targets_per_bucket", "seed", "jobs"},
               "experiment config");
  ExperimentConfig c;
  try {
    if (j.contains("data")) c.data = gen_config_from_json(j["data"]);
    c.dataset = j.value("dataset", c.dataset);
    c.features.dim = j.value("feature_dim", c.features.dim);
    c.features.seed = j.value("feature_seed", c.features.seed);
    if (j.contains("detectors")) {
      c.detectors.clear();
      for (const auto& d : j["detectors"]) c.detectors.push_back(detector_from_string(d.get<std::string>()));
    }
    if (j.contains("attacks")) {
      c.attacks.clear();
      for (const auto& a : j["attacks"]) c.attacks.push_back(attack_from_string(a.get<std::string>()));
    }
    c.repeats = j.value("repeats", c.repeats);
    c.attack.alpha = j.value("alpha", c.attack.alpha);
    c.attack.delta_floor = j.value("delta_floor", c.attack.delta_floor);
    c.attack.pr_size = j.value("pr_size", c.attack.pr_size);
    c.attack.recompute = j.value("recompute", c.attack.recompute);
    c.attack.exclude_target_posts = j.value("exclude_target_posts", c.attack.exclude_target_posts);
    c.alpha_grid = j.value("alpha_grid", c.alpha_grid);
    c.budget_grid = j.value("budget_grid", c.budget_grid);
    c.degree_edges = j.value("degree_edges", c.degree_edges);
    c.hidden = j.value("hidden", c.hidden);
    c.layers = j.value("layers", c.layers);
    if (j.contains("surrogate_readout")) {
      const auto r = j["surrogate_readout"].get<std::string>();
      if (r != "mean_pool" && r != "root_concat_mean_pool")
        throw ConfigError("surrogate_readout must be mean_pool or root_concat_mean_pool");
      c.surrogate_readout = r == "mean_pool" ? nn::Readout::mean_pool : nn::Readout::root_concat_mean_pool;
    }
    c.train.learning_rate = j.value("learning_rate", c.train.learning_rate);
    c.train.max_epochs = j.value("max_epochs", c.train.max_epochs);
    c.train.patience = j.value("patience", c.train.patience);
    c.train.batch_size = j.value("batch_size", c.train.batch_size);
    if (j.contains("split")) {
      auto f = j["split"].get<std::vector<double>>();
      if (f.size() != 3) throw ConfigError("split needs three fractions (train, val, test)");
      c.split = {f[0], f[1], f[2]};
    }
    c.min_clean_accuracy = j.value("min_clean_accuracy", c.min_clean_accuracy);
    c.max_targets_per_class = j.value("max_targets_per_class", c.max_targets_per_class);
    c.max_targets_per_bucket = j.value("max_targets_per_bucket", c.max_targets_per_bucket);
    c.seed = j.value("seed", c.seed);
    c.jobs = j.value("jobs", c.jobs);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
  c.check();
  return c;
}

// --- views and training ----------------------------------------------------------

/// Clean graph views of one context, as the detectors consume them.
struct Views {
  DerivedGraph g1, g2;
  std::vector<DerivedGraph> user_trees, text_trees;

  static Views build(const IndexedContext& ictx, const ContextFeatures& f) {
    Views v;
    v.g1 = build_bipartite(ictx, f);
    v.g2 = build_engagement(ictx, f);
    const std::size_t n = ictx.context().news.size();
    v.user_trees.reserve(n);
    v.text_trees.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
      v.user_trees.push_back(build_prop_tree(ictx, f, k, FeatureSource::user));
      v.text_trees.push_back(build_prop_tree(ictx, f, k, FeatureSource::text));
    }
    return v;
  }
};

inline nn::ModelSpec detector_spec(DetectorKind d, const ExperimentConfig& cfg) {
  nn::ModelSpec s;
  s.hidden = cfg.hidden;
  s.layers = cfg.layers;
  s.in_dim = cfg.features.dim;
  s.seed = mix_seed(cfg.seed, 0x646574ULL + static_cast<std::uint64_t>(d));
  s.readout = nn::Readout::root_concat_mean_pool;
  switch (d) {
    case DetectorKind::g1_gcn: s.architecture = nn::Architecture::gcn; break;
    case DetectorKind::g1_sage: s.architecture = nn::Architecture::sage; break;
    case DetectorKind::g1_gat: s.architecture = nn::Architecture::gat; break;
    case DetectorKind::g2_gcn:
      s.architecture = nn::Architecture::gcn;
      s.in_dim = cfg.features.dim + 1;
      break;
    case DetectorKind::g3_gcn: s.architecture = nn::Architecture::gcn; break;
    case DetectorKind::g3_sage: s.architecture = nn::Architecture::sage; break;
    case DetectorKind::g3_gat: s.architecture = nn::Architecture::gat; break;
    case DetectorKind::g4_bidir: s.architecture = nn::Architecture::bidir_gcn; break;
  }
  s.task = is_tree(d) ? nn::Task::graph_classification : nn::Task::node_classification;
  return s;
}

namespace detail {

inline std::vector<int> labels_of(const SocialContext& ctx, const std::vector<std::size_t>& news) {
  std::vector<int> y;
  for (auto k : news) y.push_back(ctx.news[k].label);
  return y;
}

inline std::vector<DerivedGraph> pick(const std::vector<DerivedGraph>& all, const std::vector<std::size_t>& idx) {
  std::vector<DerivedGraph> out;
  out.reserve(idx.size());
  for (auto k : idx) out.push_back(all[k]);
  return out;
}

inline nn::Model train_on(const nn::ModelSpec& spec, const DerivedGraph* node_graph,
                          const std::vector<DerivedGraph>* trees, const SocialContext& ctx, const Split& sp,
                          const nn::TrainConfig& tc) {
  auto ytr = labels_of(ctx, sp.train), yva = labels_of(ctx, sp.val);
  if (node_graph) return nn::train_node_classifier(spec, *node_graph, sp.train, ytr, sp.val, yva, tc);
  return nn::train_graph_classifier(spec, pick(*trees, sp.train), ytr, pick(*trees, sp.val), yva, tc);
}

}  // namespace detail

inline nn::Model train_detector(DetectorKind d, const ExperimentConfig& cfg, const Views& v, const SocialContext& ctx,
                                const Split& sp) {
  const auto spec = detector_spec(d, cfg);
  switch (graph_of(d)[1]) {
    case '1': return detail::train_on(spec, &v.g1, nullptr, ctx, sp, cfg.train);
    case '2': return detail::train_on(spec, &v.g2, nullptr, ctx, sp, cfg.train);
    case '3': return detail::train_on(spec, nullptr, &v.user_trees, ctx, sp, cfg.train);
    default: return detail::train_on(spec, nullptr, &v.text_trees, ctx, sp, cfg.train);
  }
}

/// Two-layer gcn surrogates; seeds are disjoint from every detector seed.
/// The node-level surrogate has no readout.
inline attack::Surrogates train_surrogates(const ExperimentConfig& cfg, const Views& v, const SocialContext& ctx,
                                           const Split& sp) {
  nn::ModelSpec s;
  s.architecture = nn::Architecture::gcn;
  s.hidden = cfg.hidden;
  s.layers = 2;
  s.in_dim = cfg.features.dim;
  s.readout = cfg.surrogate_readout;
  attack::Surrogates out;
  s.task = nn::Task::graph_classification;
  s.seed = mix_seed(cfg.seed, 0x737572ULL);
  out.tree = detail::train_on(s, nullptr, &v.user_trees, ctx, sp, cfg.train);
  s.seed = mix_seed(cfg.seed, 0x737573ULL);
  out.text_tree = detail::train_on(s, nullptr, &v.text_trees, ctx, sp, cfg.train);
  s.task = nn::Task::node_classification;
  s.seed = mix_seed(cfg.seed, 0x737574ULL);
  out.bipartite = detail::train_on(s, &v.g1, nullptr, ctx, sp, cfg.train);
  return out;
}

/// Order-sensitive digest of every parameter bit; equal iff bit-identical.
inline std::uint64_t fingerprint(const nn::Model& m) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : m.params)
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(p.data()), static_cast<std::size_t>(p.size()) * sizeof(double)), h);
  return h;
}

// --- the experiment ---------------------------------------------------------------

/// Test news to attack: all of them, or a seeded per-class sample.
inline std::vector<std::size_t> sample_targets(const SocialContext& ctx, const Split& sp, const ExperimentConfig& cfg) {
  if (cfg.max_targets_per_class <= 0) return sp.test;
  std::vector<std::size_t> out;
  for (int cls = 0; cls < 2; ++cls) {
    std::vector<std::size_t> members;
    for (auto k : sp.test)
      if (ctx.news[k].label == cls) members.push_back(k);
    Rng rng(mix_seed(cfg.seed, 0x746774ULL + static_cast<std::uint64_t>(cls)));
    std::shuffle(members.begin(), members.end(), rng);
    members.resize(std::min(members.size(), static_cast<std::size_t>(cfg.max_targets_per_class)));
    out.insert(out.end(), members.begin(), members.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

class Perturber;

/// Plan of attack `a` on one target from the attacker-side view only.
inline AttackPlan make_plan(const attack::AttackContext& ac, const attack::Surrogates& sur,
                            std::span<const int> pseudo_labels, AttackKind a, std::size_t target, std::uint64_t seed,
                            const attack::AttackConfig& acfg, std::optional<int> delta = std::nullopt) {
  attack::AttackConfig c = acfg;
  c.seed = seed;
  if (delta) c.delta_override = *delta;
  const int d = attack::budget(ac.indexed(), target, c);
  switch (a) {
    case AttackKind::none: return AttackPlan{ac.context().news[target].id, {}, d};
    case AttackKind::random: return attack::attack_random(ac, target, d, seed).plan;
    case AttackKind::dice: return attack::attack_dice(ac, target, d, pseudo_labels, seed).plan;
    case AttackKind::sga: return attack::attack_sga_like(ac, target, d, sur.bipartite).plan;
    case AttackKind::gafsi: return attack::gafsi_attack(ac, target, sur, c).plan;
  }
  throw Error("unknown attack");
}

/// One dataset with its split, trained detectors and surrogates.
class Experiment {
 public:
  using Detectors = std::vector<std::pair<DetectorKind, nn::Model>>;

  /// Trains every configured detector and the surrogates; enforces the
  /// calibration gate on clean validation accuracy.
  Experiment(ExperimentConfig cfg, SocialContext ctx) : Experiment(std::move(cfg), std::move(ctx), {}, std::nullopt) {}

  /// Uses the given models; missing detectors or surrogates are trained.
  Experiment(ExperimentConfig cfg, SocialContext ctx, Detectors detectors, std::optional<attack::Surrogates> surrogates)
      : cfg_(std::move(cfg)), ictx_(std::make_unique<IndexedContext>(std::move(ctx))) {
    cfg_.check();
    split_ = gafsi::split(ictx_->context(), cfg_.split, cfg_.seed);
    ac_ = std::make_unique<attack::AttackContext>(*ictx_, cfg_.features);
    views_ = Views::build(*ictx_, ac_->features());
    for (auto d : cfg_.detectors) {
      auto it = std::find_if(detectors.begin(), detectors.end(), [d](const auto& p) { return p.first == d; });
      if (it != detectors.end()) {
        if (it->second.spec != detector_spec(d, cfg_))
          throw ConfigError("checkpoint for " + to_string(d) + " does not match the experiment config");
        detectors_.emplace_back(d, std::move(it->second));
      } else {
        detectors_.emplace_back(d, train_detector(d, cfg_, views_, ictx_->context(), split_));
      }
    }
    surrogates_ = surrogates ? std::move(*surrogates) : train_surrogates(cfg_, views_, ictx_->context(), split_);
    pseudo_labels_ = attack::user_pseudo_labels(surrogates_.bipartite, *ac_);
    cache_clean_predictions();
    for (const auto& [d, m] : detectors_) {
      double acc = accuracy(d, split_.val);
      val_accuracy_.push_back(acc);
      if (acc < cfg_.min_clean_accuracy)
        throw CalibrationError(to_string(d) + " reaches clean validation accuracy " + std::to_string(acc) +
                               " < " + std::to_string(cfg_.min_clean_accuracy));
    }
  }

  Experiment(const Experiment&) = delete;
  Experiment& operator=(const Experiment&) = delete;

  const ExperimentConfig& config() const { return cfg_; }
  ExperimentConfig& mutable_config() { return cfg_; }
  const IndexedContext& indexed() const { return *ictx_; }
  const SocialContext& context() const { return ictx_->context(); }
  const Split& split() const { return split_; }
  const Views& views() const { return views_; }
  const attack::AttackContext& attack_context() const { return *ac_; }
  const Detectors& detectors() const { return detectors_; }
  const attack::Surrogates& surrogates() const { return surrogates_; }
  const std::vector<int>& pseudo_labels() const { return pseudo_labels_; }
  double val_accuracy(std::size_t i) const { return val_accuracy_.at(i); }

  const nn::Model& detector(DetectorKind d) const {
    for (const auto& [k, m] : detectors_)
      if (k == d) return m;
    throw Error("detector " + to_string(d) + " is not part of this experiment");
  }

  /// Clean prediction of one detector for one news item.
  int clean_prediction(DetectorKind d, std::size_t news) const {
    for (std::size_t i = 0; i < detectors_.size(); ++i)
      if (detectors_[i].first == d) return clean_.at(i).at(news);
    throw Error("detector " + to_string(d) + " is not part of this experiment");
  }

  double accuracy(DetectorKind d, const std::vector<std::size_t>& news) const {
    if (news.empty()) return 0.0;
    std::size_t ok = 0;
    for (auto k : news) ok += clean_prediction(d, k) == context().news[k].label;
    return static_cast<double>(ok) / static_cast<double>(news.size());
  }

  /// Test news to attack: all of them, or a seeded per-class sample.
  std::vector<std::size_t> targets() const;

  /// Plan of one attack on one target. `delta` overrides the budget when set.
  AttackPlan make_plan(AttackKind a, std::size_t target, std::uint64_t seed, const attack::AttackConfig& acfg,
                       std::optional<int> delta = std::nullopt) const;

 private:
  ExperimentConfig cfg_;
  std::unique_ptr<IndexedContext> ictx_;
  Split split_;
  std::unique_ptr<attack::AttackContext> ac_;
  Views views_;
  Detectors detectors_;
  attack::Surrogates surrogates_;
  std::vector<int> pseudo_labels_;
  std::vector<double> val_accuracy_;
  std::vector<std::vector<int>> clean_;  // per detector, per news

  void cache_clean_predictions();
};

/// Evaluates frozen detectors on a context perturbed by one plan, editing
/// only what the plan changes: G1 gains user-news edges, G2 reweights the
/// target's edges and its engagement-degree feature, G3/G4 trees gain the
/// injected posts. One instance per thread.
class Perturber {
 public:
  explicit Perturber(const Experiment& ex)
      : ex_(&ex), g1_nb_(ex.views().g1), g2_(ex.views().g2), g2_nb_(g2_) {}

  /// Class scores (1 x 2) of detector `d` for the plan's target.
  RowVector scores(DetectorKind d, const AttackPlan& plan) {
    const auto& ictx = ex_->indexed();
    if (auto problems = check_plan(ictx, plan); !problems.empty())
      throw PlanError(problems.front().first, problems.front().second);
    const std::size_t k = ictx.news_position(plan.target);
    const nn::Model& m = ex_->detector(d);
    const auto g = graph_of(d);
    if (g == "G1" || g == "G2") {
      const bool g1 = g == "G1";
      auto new_users = newly_engaged(k, plan);
      if (g1) {
        for (auto u : new_users) edit(g1_nb_, k, ex_->context().news.size() + u, 1.0);
      } else {
        perturb_engagement(k, new_users);
      }
      RowVector out = g1 ? nn::node_logits(m, ex_->views().g1, g1_nb_, k) : nn::node_logits(m, g2_, g2_nb_, k);
      undo();
      return out;
    }
    DerivedGraph tree = extended_tree(k, plan, g == "G3");
    return nn::forward(m, tree).row(0);
  }

  int predict(DetectorKind d, const AttackPlan& plan) {
    RowVector z = scores(d, plan);
    return z[1] > z[0] ? 1 : 0;
  }

  /// Target tree with the plan's posts appended after the original nodes.
  DerivedGraph extended_tree(std::size_t k, const AttackPlan& plan, bool user_features) const {
    const auto& v = ex_->views();
    DerivedGraph t = user_features ? v.user_trees[k] : v.text_trees[k];
    if (plan.posts.empty()) return t;
    std::unordered_map<std::string, std::size_t> node;
    for (std::size_t i = 0; i < t.size(); ++i) node.emplace(t.ids[i], i);
    const auto& ac = ex_->attack_context();
    const Eigen::Index n0 = static_cast<Eigen::Index>(t.size());
    t.features.conservativeResize(n0 + static_cast<Eigen::Index>(plan.posts.size()), Eigen::NoChange);
    for (std::size_t j = 0; j < plan.posts.size(); ++j) {
      const auto& p = plan.posts[j];
      const std::string id = injected_post_id(plan.target, j);
      const std::size_t idx = t.size();
      t.edges.push_back({node.at(p.parent), idx, 1.0});
      t.ids.push_back(id);
      t.roles.push_back(NodeRole::post);
      node.emplace(id, idx);
      t.features.row(static_cast<Eigen::Index>(idx)) =
          user_features ? RowVector(ac.features().users.row(static_cast<Eigen::Index>(ex_->indexed().user_position(p.fraudster))))
                        : ac.featurizer().text(p.text);
    }
    return t;
  }

 private:
  struct Change {
    nn::Neighborhood* nb;
    std::size_t i, j;
    std::optional<double> old;
  };

  std::vector<std::size_t> newly_engaged(std::size_t k, const AttackPlan& plan) const {
    const auto& engaged = ex_->indexed().index().engaged_users[k];
    std::vector<std::size_t> out;
    for (const auto& p : plan.posts) {
      auto u = ex_->indexed().user_position(p.fraudster);
      if (!std::binary_search(engaged.begin(), engaged.end(), u) && std::find(out.begin(), out.end(), u) == out.end())
        out.push_back(u);
    }
    return out;
  }

  void edit(nn::Neighborhood& nb, std::size_t i, std::size_t j, double w) {
    changes_.push_back({&nb, i, j, nb.weight(i, j)});
    nb.set_weight(i, j, w);
  }

  void perturb_engagement(std::size_t k, const std::vector<std::size_t>& new_users) {
    const auto& ix = ex_->indexed().index();
    for (auto u : new_users)
      for (auto m : ix.user_news[u])
        if (m != k) edit(g2_nb_, k, m, g2_nb_.weight(k, m).value_or(0.0) + 1.0);
    const auto col = g2_.features.cols() - 1;
    saved_feature_ = {k, g2_.features(static_cast<Eigen::Index>(k), col)};
    g2_.features(static_cast<Eigen::Index>(k), col) = degree_feature(ix.engaged_users[k].size() + new_users.size());
  }

  // Restores every edit in reverse order, so adjacency lists regain their exact layout.
  void undo() {
    for (auto it = changes_.rbegin(); it != changes_.rend(); ++it) it->nb->set_weight(it->i, it->j, it->old);
    changes_.clear();
    if (saved_feature_) {
      g2_.features(static_cast<Eigen::Index>(saved_feature_->first), g2_.features.cols() - 1) = saved_feature_->second;
      saved_feature_.reset();
    }
  }

  const Experiment* ex_;
  nn::Neighborhood g1_nb_;
  DerivedGraph g2_;
  nn::Neighborhood g2_nb_;
  std::vector<Change> changes_;
  std::optional<std::pair<std::size_t, double>> saved_feature_;
};

inline std::vector<std::size_t> Experiment::targets() const { return sample_targets(context(), split_, cfg_); }

inline AttackPlan Experiment::make_plan(AttackKind a, std::size_t target, std::uint64_t seed,
                                       const attack::AttackConfig& acfg, std::optional<int> delta) const {
  return harness::make_plan(*ac_, surrogates_, pseudo_labels_, a, target, seed, acfg, delta);
}

// Same evaluation path as attacked news, with an empty plan.
inline void Experiment::cache_clean_predictions() {
  Perturber p(*this);
  clean_.assign(detectors_.size(), std::vector<int>(context().news.size()));
  for (std::size_t i = 0; i < detectors_.size(); ++i)
    for (std::size_t k = 0; k < context().news.size(); ++k)
      clean_[i][k] = p.predict(detectors_[i].first, AttackPlan{context().news[k].id, {}, 0});
}

/// Reference evaluation: apply the plan, rebuild features and every view
/// from scratch, run the detector on the full graph.
inline RowVector rebuild_scores(const Experiment& ex, DetectorKind d, const AttackPlan& plan) {
  SocialContext perturbed = apply_plan(ex.indexed(), plan);
  IndexedContext ictx(std::move(perturbed));
  ContextFeatures f = compute_features(ictx.context(), ex.config().features);
  const std::size_t k = ictx.news_position(plan.target);
  const nn::Model& m = ex.detector(d);
  const auto g = graph_of(d);
  if (g == "G1") return nn::forward(m, build_bipartite(ictx, f)).row(static_cast<Eigen::Index>(k));
  if (g == "G2") return nn::forward(m, build_engagement(ictx, f)).row(static_cast<Eigen::Index>(k));
  return nn::forward(m, build_prop_tree(ictx, f, k, g == "G3" ? FeatureSource::user : FeatureSource::text)).row(0);
}

// --- evaluation loop -----------------------------------------------------------------

template <class F>
void parallel_for(std::size_t n, int jobs, F&& body) {
  const auto workers = static_cast<std::size_t>(std::max(1, std::min<int>(jobs, static_cast<int>(n))));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i, 0);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) body(i, w);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
        next = n;
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

/// Budget multipliers scale Δ; nullopt keeps the attack config's budget rule.
struct EvalRequest {
  std::vector<AttackKind> attacks;
  std::vector<std::size_t> targets;
  int repeats = 1;
  attack::AttackConfig attack;
  std::optional<double> budget_multiplier;
  bool keep_plans = false;
};

struct Outcome {
  std::size_t target = 0;
  AttackKind attack = AttackKind::none;
  int repeat = 0;
  double seconds = 0.0;
  std::vector<int> predictions;  // per detector, in experiment order
  std::optional<AttackPlan> plan;
};

inline std::uint64_t plan_seed(std::uint64_t base, std::size_t target, AttackKind a, int repeat) {
  return mix_seed(mix_seed(base, target), static_cast<std::uint64_t>(a) * 1000003ULL + static_cast<std::uint64_t>(repeat));
}

inline std::vector<Outcome> evaluate(const Experiment& ex, const EvalRequest& req) {
  struct Job {
    std::size_t target;
    AttackKind attack;
    int repeat;
  };
  std::vector<Job> jobs;
  for (auto t : req.targets)
    for (auto a : req.attacks)
      for (int r = 0; r < req.repeats; ++r) jobs.push_back({t, a, r});
  std::vector<Outcome> out(jobs.size());
  const int workers = ex.config().jobs;
  std::vector<std::unique_ptr<Perturber>> perturbers;
  for (int w = 0; w < std::max(1, std::min<int>(workers, static_cast<int>(jobs.size()))); ++w)
    perturbers.push_back(std::make_unique<Perturber>(ex));
  parallel_for(jobs.size(), workers, [&](std::size_t i, std::size_t w) {
    const auto& job = jobs[i];
    std::optional<int> delta;
    if (req.budget_multiplier) {
      const int base = attack::budget(ex.indexed(), job.target, req.attack);
      delta = static_cast<int>(std::lround(*req.budget_multiplier * base));
    }
    const auto t0 = std::chrono::steady_clock::now();
    AttackPlan plan =
        ex.make_plan(job.attack, job.target, plan_seed(ex.config().seed, job.target, job.attack, job.repeat), req.attack, delta);
    const auto t1 = std::chrono::steady_clock::now();
    Outcome& o = out[i];
    o.target = job.target;
    o.attack = job.attack;
    o.repeat = job.repeat;
    o.seconds = std::chrono::duration<double>(t1 - t0).count();
    for (const auto& [d, m] : ex.detectors()) o.predictions.push_back(perturbers[w]->predict(d, plan));
    if (req.keep_plans) o.plan = std::move(plan);
  });
  return out;
}

// --- reports --------------------------------------------------------------------------

struct ReportRow {
  std::string dataset, detector, graph, attack, target_class;
  std::size_t targets = 0;
  double clean_rate = 0.0, success_rate = 0.0, stddev = 0.0, mean_time_ms = 0.0;
  bool operator==(const ReportRow&) const = default;
};

struct CurvePoint {
  double x = 0.0;
  double y = 0.0;
  std::size_t n = 0;
  bool operator==(const CurvePoint&) const = default;
};

struct Curve {
  std::string name;
  std::vector<CurvePoint> points;
  std::vector<std::string> flags;
  bool operator==(const Curve&) const = default;
};

struct ExperimentReport {
  std::string dataset;
  std::vector<std::pair<std::string, double>> clean_accuracy;  // detector -> test accuracy
  std::vector<ReportRow> rows;
  std::vector<Curve> curves;
  bool operator==(const ExperimentReport&) const = default;

  const ReportRow& row(const std::string& detector, const std::string& attack, const std::string& cls) const {
    for (const auto& r : rows)
      if (r.detector == detector && r.attack == attack && r.target_class == cls) return r;
    throw Error("no report row for " + detector + "/" + attack + "/" + cls);
  }
};

inline const char* class_name(int label) { return label ? "fake" : "real"; }

/// Aggregates outcomes into rows per (detector, attack, target class).
inline std::vector<ReportRow> aggregate(const Experiment& ex, const std::vector<Outcome>& outcomes,
                                        const std::vector<AttackKind>& attacks, int repeats, const std::string& dataset) {
  const auto& ctx = ex.context();
  std::map<std::size_t, std::vector<int>> clean;  // target -> clean prediction per detector
  for (const auto& o : outcomes)
    if (!clean.count(o.target)) {
      auto& v = clean[o.target];
      for (const auto& [d, m] : ex.detectors()) v.push_back(ex.clean_prediction(d, o.target));
    }
  std::vector<ReportRow> rows;
  for (std::size_t di = 0; di < ex.detectors().size(); ++di) {
    const DetectorKind d = ex.detectors()[di].first;
    for (auto a : attacks)
      for (int cls : {1, 0}) {
        ReportRow r{dataset, to_string(d), graph_of(d), to_string(a), class_name(cls)};
        std::vector<double> flips(static_cast<std::size_t>(repeats), 0.0);
        double clean_miss = 0.0, time = 0.0;
        std::size_t n = 0, timed = 0;
        for (const auto& o : outcomes) {
          if (o.attack != a || ctx.news[o.target].label != cls) continue;
          flips[static_cast<std::size_t>(o.repeat)] += o.predictions[di] != cls;
          time += o.seconds;
          ++timed;
          if (o.repeat == 0) {
            ++n;
            clean_miss += clean.at(o.target)[di] != cls;
          }
        }
        r.targets = n;
        if (n > 0) {
          r.clean_rate = clean_miss / static_cast<double>(n);
          double mean = 0.0;
          for (auto& f : flips) mean += (f /= static_cast<double>(n));
          mean /= static_cast<double>(repeats);
          double var = 0.0;
          for (double f : flips) var += (f - mean) * (f - mean);
          r.success_rate = mean;
          r.stddev = std::sqrt(var / static_cast<double>(repeats));
          r.mean_time_ms = 1000.0 * time / static_cast<double>(timed);
        }
        rows.push_back(std::move(r));
      }
  }
  return rows;
}

/// Mean success rate of `a` over the outcomes, detectors restricted to `which`
/// (all when empty), both classes pooled.
inline double success_rate(const Experiment& ex, const std::vector<Outcome>& outcomes, AttackKind a,
                           const std::vector<DetectorKind>& which = {}) {
  double flips = 0.0;
  std::size_t n = 0;
  for (std::size_t di = 0; di < ex.detectors().size(); ++di) {
    const DetectorKind d = ex.detectors()[di].first;
    if (!which.empty() && std::find(which.begin(), which.end(), d) == which.end()) continue;
    for (const auto& o : outcomes)
      if (o.attack == a) {
        flips += o.predictions[di] != ex.context().news[o.target].label;
        ++n;
      }
  }
  return n ? flips / static_cast<double>(n) : 0.0;
}

inline std::string dataset_name(const ExperimentConfig& cfg) {
  return cfg.dataset.empty() ? "synthetic-" + std::to_string(cfg.data.seed) : std::filesystem::path(cfg.dataset).stem().string();
}

/// Attacks every target with every configured attack and repeat.
inline ExperimentReport run(const Experiment& ex) {
  const auto& cfg = ex.config();
  ExperimentReport rep;
  rep.dataset = dataset_name(cfg);
  for (const auto& [d, m] : ex.detectors()) rep.clean_accuracy.emplace_back(to_string(d), ex.accuracy(d, ex.split().test));
  EvalRequest req{cfg.attacks, ex.targets(), cfg.repeats, cfg.attack, std::nullopt, false};
  rep.rows = aggregate(ex, evaluate(ex, req), cfg.attacks, cfg.repeats, rep.dataset);
  return rep;
}

inline SocialContext load_or_generate(const ExperimentConfig& cfg) {
  return cfg.dataset.empty() ? generate(cfg.data) : load_context(cfg.dataset);
}

inline ExperimentReport run(const ExperimentConfig& cfg) {
  Experiment ex(cfg, load_or_generate(cfg));
  return run(ex);
}

/// GAFSI success over the α grid, one curve per G1/G3 detector.
inline std::vector<Curve> sweep_alpha(const Experiment& ex) {
  const auto& cfg = ex.config();
  if (cfg.alpha_grid.empty()) throw ConfigError("alpha grid is empty");
  std::vector<DetectorKind> which;
  for (const auto& [d, m] : ex.detectors())
    if (graph_of(d) == "G1" || graph_of(d) == "G3") which.push_back(d);
  std::vector<Curve> curves;
  for (auto d : which) curves.push_back({"gafsi/" + to_string(d), {}, {}});
  const auto targets = ex.targets();
  for (double alpha : cfg.alpha_grid) {
    EvalRequest req{{AttackKind::gafsi}, targets, cfg.repeats, cfg.attack, std::nullopt, false};
    req.attack.alpha = alpha;
    auto out = evaluate(ex, req);
    for (std::size_t i = 0; i < which.size(); ++i)
      curves[i].points.push_back({alpha, success_rate(ex, out, AttackKind::gafsi, {which[i]}), targets.size()});
  }
  return curves;
}

/// Success over budget multipliers: one curve per attack (all detectors
/// pooled) plus one per (attack, detector).
inline std::vector<Curve> sweep_budget(const Experiment& ex) {
  const auto& cfg = ex.config();
  if (cfg.budget_grid.empty()) throw ConfigError("budget grid is empty");
  std::vector<AttackKind> attacks;
  for (auto a : cfg.attacks)
    if (a != AttackKind::none) attacks.push_back(a);
  std::vector<Curve> pooled, per;
  for (auto a : attacks) {
    pooled.push_back({to_string(a), {}, {}});
    for (const auto& [d, m] : ex.detectors()) per.push_back({to_string(a) + "/" + to_string(d), {}, {}});
  }
  const auto targets = ex.targets();
  for (double mult : cfg.budget_grid) {
    EvalRequest req{attacks, targets, cfg.repeats, cfg.attack, mult, false};
    auto out = evaluate(ex, req);
    std::size_t c = 0;
    for (std::size_t ai = 0; ai < attacks.size(); ++ai) {
      pooled[ai].points.push_back({mult, success_rate(ex, out, attacks[ai]), targets.size()});
      for (const auto& [d, m] : ex.detectors()) per[c++].points.push_back({mult, success_rate(ex, out, attacks[ai], {d}), targets.size()});
    }
  }
  pooled.insert(pooled.end(), per.begin(), per.end());
  return pooled;
}

/// Test news grouped by bipartite degree into (e0, e1], (e1, e2], ...
inline std::vector<std::vector<std::size_t>> degree_bucket_members(const Experiment& ex) {
  const auto& edges = ex.config().degree_edges;
  std::vector<std::vector<std::size_t>> buckets(edges.size() - 1);
  for (auto k : ex.split().test) {
    const auto deg = static_cast<int>(ex.indexed().index().engaged_users[k].size());
    for (std::size_t b = 0; b + 1 < edges.size(); ++b)
      if (deg > edges[b] && deg <= edges[b + 1]) {
        buckets[b].push_back(k);
        break;
      }
  }
  if (int cap = ex.config().max_targets_per_bucket; cap > 0)
    for (std::size_t b = 0; b < buckets.size(); ++b) {
      Rng rng(mix_seed(ex.config().seed, 0x626b74ULL + b));
      std::shuffle(buckets[b].begin(), buckets[b].end(), rng);
      buckets[b].resize(std::min(buckets[b].size(), static_cast<std::size_t>(cap)));
      std::sort(buckets[b].begin(), buckets[b].end());
    }
  return buckets;
}

/// GAFSI success per degree bucket (x = bucket upper edge), detectors pooled.
inline Curve degree_buckets(const Experiment& ex) {
  const auto& cfg = ex.config();
  Curve c{"gafsi/degree", {}, {}};
  auto buckets = degree_bucket_members(ex);
  for (std::size_t b = 0; b < buckets.size(); ++b) {
    const std::string label = std::to_string(cfg.degree_edges[b] + 1) + "-" + std::to_string(cfg.degree_edges[b + 1]);
    if (buckets[b].empty()) {
      c.flags.push_back("empty bucket " + label);
      continue;
    }
    EvalRequest req{{AttackKind::gafsi}, buckets[b], cfg.repeats, cfg.attack, std::nullopt, false};
    auto out = evaluate(ex, req);
    c.points.push_back({static_cast<double>(cfg.degree_edges[b + 1]), success_rate(ex, out, AttackKind::gafsi), buckets[b].size()});
  }
  return c;
}

/// Mean wall-clock seconds per single-news attack over the targets.
inline std::vector<std::pair<AttackKind, double>> time_attacks(const Experiment& ex, std::optional<double> multiplier = std::nullopt) {
  const auto& cfg = ex.config();
  const auto targets = ex.targets();
  std::vector<std::pair<AttackKind, double>> out;
  for (auto a : cfg.attacks) {
    double total = 0.0;
    for (auto t : targets) {
      std::optional<int> delta;
      if (multiplier) delta = static_cast<int>(std::lround(*multiplier * attack::budget(ex.indexed(), t, cfg.attack)));
      const auto t0 = std::chrono::steady_clock::now();
      (void)ex.make_plan(a, t, plan_seed(cfg.seed, t, a, 0), cfg.attack, delta);
      total += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    out.emplace_back(a, targets.empty() ? 0.0 : total / static_cast<double>(targets.size()));
  }
  return out;
}

// --- writers ------------------------------------------------------------------------------

inline void write_report_tsv(const std::filesystem::path& path, const ExperimentReport& rep) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "dataset\tdetector\tgraph\tattack\ttarget_class\tclean_rate\tsuccess_rate\tstddev\tmean_time_ms\n";
  out << std::setprecision(6);
  for (const auto& r : rep.rows)
    out << r.dataset << '\t' << r.detector << '\t' << r.graph << '\t' << r.attack << '\t' << r.target_class << '\t'
        << r.clean_rate << '\t' << r.success_rate << '\t' << r.stddev << '\t' << r.mean_time_ms << '\n';
}

inline json curve_to_json(const Curve& c) {
  json pts = json::array();
  for (const auto& p : c.points) pts.push_back({{"x", p.x}, {"y", p.y}, {"n", p.n}});
  return {{"name", c.name}, {"points", pts}, {"flags", c.flags}};
}

inline json report_to_json(const ExperimentReport& rep) {
  json j{{"dataset", rep.dataset}, {"clean_accuracy", json::object()}, {"rows", json::array()}, {"curves", json::array()}};
  for (const auto& [d, a] : rep.clean_accuracy) j["clean_accuracy"][d] = a;
  for (const auto& r : rep.rows)
    j["rows"].push_back({{"detector", r.detector},
                         {"graph", r.graph},
                         {"attack", r.attack},
                         {"target_class", r.target_class},
                         {"targets", r.targets},
                         {"clean_rate", r.clean_rate},
                         {"success_rate", r.success_rate},
                         {"stddev", r.stddev},
                         {"mean_time_ms", r.mean_time_ms}});
  for (const auto& c : rep.curves) j["curves"].push_back(curve_to_json(c));
  return j;
}

inline void write_curves_tsv(const std::filesystem::path& path, const std::vector<Curve>& curves) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "curve\tgrid\tvalue\tn\n" << std::setprecision(6);
  for (const auto& c : curves)
    for (const auto& p : c.points) out << c.name << '\t' << p.x << '\t' << p.y << '\t' << p.n << '\n';
}

// --- model directories ------------------------------------------------------------------------

inline std::string checkpoint_name(DetectorKind d) { return to_string(d) + ".json"; }

inline void save_models(const std::filesystem::path& dir, const Experiment& ex) {
  std::filesystem::create_directories(dir);
  for (const auto& [d, m] : ex.detectors()) save_model(dir / checkpoint_name(d), m);
  save_model(dir / "surrogate-tree.json", ex.surrogates().tree);
  save_model(dir / "surrogate-bipartite.json", ex.surrogates().bipartite);
  save_model(dir / "surrogate-text.json", ex.surrogates().text_tree);
}

/// Loads whatever checkpoints exist in `dir`.
inline std::pair<Experiment::Detectors, std::optional<attack::Surrogates>> load_models(const std::filesystem::path& dir,
                                                                                      const ExperimentConfig& cfg) {
  Experiment::Detectors dets;
  for (auto d : cfg.detectors)
    if (std::filesystem::exists(dir / checkpoint_name(d))) dets.emplace_back(d, load_model(dir / checkpoint_name(d)));
  std::optional<attack::Surrogates> s;
  if (std::filesystem::exists(dir / "surrogate-tree.json")) {
    s = attack::Surrogates{load_model(dir / "surrogate-tree.json"), load_model(dir / "surrogate-bipartite.json"),
                           load_model(dir / "surrogate-text.json")};
  }
  return {std::move(dets), std::move(s)};
}

}  // namespace gafsi::harness
