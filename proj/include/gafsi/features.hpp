#pragma once

#include "gafsi/social_context.hpp"

#include <cctype>

namespace gafsi {

enum class FeatureMode { hashed, precomputed };

/// Externally supplied embeddings, keyed by record id.
struct PrecomputedFeatures {
  int dim = 0;
  std::unordered_map<std::string, std::vector<double>> users, news, posts;
};

struct FeatureConfig {
  int dim = 64;
  FeatureMode mode = FeatureMode::hashed;
  std::uint64_t seed = 0;
  std::shared_ptr<const PrecomputedFeatures> precomputed;

  void check() const {
    if (mode == FeatureMode::precomputed) {
      if (!precomputed) throw ConfigError("precomputed feature mode without a feature matrix");
      if (precomputed->dim != dim)
        throw ConfigError("precomputed features have dim " + std::to_string(precomputed->dim) +
                          ", config expects " + std::to_string(dim));
    }
    if (dim < 2) throw ConfigError("feature dim must be >= 2");
  }
};

inline std::size_t token_bucket(std::string_view token, const FeatureConfig& cfg) {
  std::string lower(token);
  for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return static_cast<std::size_t>(fnv1a(lower, cfg.seed) % static_cast<std::uint64_t>(cfg.dim));
}

/// Raw bucket counts of one token sequence.
inline RowVector hashed_counts(const Tokens& text, const FeatureConfig& cfg) {
  RowVector v = RowVector::Zero(cfg.dim);
  for (const auto& t : text) v[static_cast<Eigen::Index>(token_bucket(t, cfg))] += 1.0;
  return v;
}

inline void normalize_row(RowVector& v) {
  double n = v.norm();
  if (n > 0) v /= n;
}

/// Unit-norm hashed bag of words; the empty text maps to the zero vector.
inline RowVector text_feature(const Tokens& text, const FeatureConfig& cfg) {
  RowVector v = hashed_counts(text, cfg);
  normalize_row(v);
  return v;
}

/// One row per text.
inline Matrix text_features(const std::vector<Tokens>& texts, const FeatureConfig& cfg) {
  cfg.check();
  if (cfg.mode != FeatureMode::hashed)
    throw ConfigError("content-addressed text features require hashed mode; use compute_features");
  Matrix m(static_cast<Eigen::Index>(texts.size()), cfg.dim);
  for (std::size_t i = 0; i < texts.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = text_feature(texts[i], cfg);
  return m;
}

inline RowVector user_feature(const UserRecord& u, const FeatureConfig& cfg) {
  RowVector v = RowVector::Zero(cfg.dim);
  if (u.history.empty()) return v;
  for (const auto& h : u.history) v += hashed_counts(h, cfg);
  v /= static_cast<double>(u.history.size());
  normalize_row(v);
  return v;
}

namespace detail {
inline RowVector lookup_row(const std::unordered_map<std::string, std::vector<double>>& table, const std::string& id,
                            int dim, const char* kind) {
  auto it = table.find(id);
  if (it == table.end()) throw ConfigError(std::string("precomputed features missing ") + kind + " " + id);
  if (static_cast<int>(it->second.size()) != dim)
    throw ConfigError(std::string("precomputed ") + kind + " row " + id + " has wrong width");
  return Eigen::Map<const RowVector>(it->second.data(), dim);
}
}  // namespace detail

/// Row i represents user i: the normalized mean of its history's hashed
/// counts, or the precomputed row in precomputed mode.
inline Matrix user_features(const SocialContext& ctx, const FeatureConfig& cfg) {
  cfg.check();
  Matrix m(static_cast<Eigen::Index>(ctx.users.size()), cfg.dim);
  for (std::size_t i = 0; i < ctx.users.size(); ++i) {
    m.row(static_cast<Eigen::Index>(i)) =
        cfg.mode == FeatureMode::hashed
            ? user_feature(ctx.users[i], cfg)
            : detail::lookup_row(cfg.precomputed->users, ctx.users[i].id, cfg.dim, "user");
  }
  return m;
}

/// Feature rows for every user, news item and post of one context.
struct ContextFeatures {
  Matrix users, news, posts;
};

/// Maps post contents to feature rows. In precomputed mode a text is looked
/// up by exact content among the known posts (cloned content), else zero.
class Featurizer {
 public:
  Featurizer(const SocialContext& ctx, FeatureConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.check();
    if (cfg_.mode == FeatureMode::precomputed) {
      for (const auto& p : ctx.posts) {
        auto it = cfg_.precomputed->posts.find(p.id);
        if (it != cfg_.precomputed->posts.end()) by_text_.emplace(join(p.text), it->second);
      }
    }
  }

  const FeatureConfig& config() const { return cfg_; }

  RowVector text(const Tokens& t) const {
    if (cfg_.mode == FeatureMode::hashed) return text_feature(t, cfg_);
    if (t.empty()) return RowVector::Zero(cfg_.dim);
    auto it = by_text_.find(join(t));
    if (it == by_text_.end()) return RowVector::Zero(cfg_.dim);
    return Eigen::Map<const RowVector>(it->second.data(), cfg_.dim);
  }

  ContextFeatures compute(const SocialContext& ctx) const {
    ContextFeatures f;
    f.users = user_features(ctx, cfg_);
    f.news.resize(static_cast<Eigen::Index>(ctx.news.size()), cfg_.dim);
    for (std::size_t i = 0; i < ctx.news.size(); ++i)
      f.news.row(static_cast<Eigen::Index>(i)) =
          cfg_.mode == FeatureMode::hashed ? text_feature(ctx.news[i].text, cfg_)
                                           : detail::lookup_row(cfg_.precomputed->news, ctx.news[i].id, cfg_.dim, "news");
    f.posts.resize(static_cast<Eigen::Index>(ctx.posts.size()), cfg_.dim);
    for (std::size_t i = 0; i < ctx.posts.size(); ++i) {
      RowVector r;
      if (cfg_.mode == FeatureMode::hashed) {
        r = text_feature(ctx.posts[i].text, cfg_);
      } else if (auto it = cfg_.precomputed->posts.find(ctx.posts[i].id); it != cfg_.precomputed->posts.end()) {
        r = Eigen::Map<const RowVector>(it->second.data(), cfg_.dim);
      } else {
        r = text(ctx.posts[i].text);
      }
      f.posts.row(static_cast<Eigen::Index>(i)) = r;
    }
    return f;
  }

 private:
  static std::string join(const Tokens& t) {
    std::string s;
    for (const auto& x : t) {
      s += x;
      s += '\x1f';
    }
    return s;
  }

  FeatureConfig cfg_;
  std::unordered_map<std::string, std::vector<double>> by_text_;
};

inline ContextFeatures compute_features(const SocialContext& ctx, const FeatureConfig& cfg) {
  return Featurizer(ctx, cfg).compute(ctx);
}

}  // namespace gafsi
