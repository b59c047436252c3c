#pragma once

// Synthetic social contexts with a tunable class signal, dataset splits and
// their config documents.

#include "gafsi/io.hpp"

#include <cmath>
#include <iomanip>

namespace gafsi {

struct GenConfig {
  int n_news = 2000;
  int n_users = 4000;
  double mean_tree_size = 12.0;  // posts per news
  int max_tree_size = 100;
  double attachment = 1.0;       // preferential-attachment strength for share parents
  double sigma = 0.9;            // class signal strength in [0, 1]
  int class_vocab = 20;          // fake-leaning and real-leaning vocabulary sizes (each)
  int neutral_vocab = 2000;
  double fake_fraction = 0.5;
  double controllable_fraction = 0.5;
  std::uint64_t seed = 0;

  bool operator==(const GenConfig&) const = default;

  void check() const {
    if (n_news < 1 || n_users < 1) throw ConfigError("n_news and n_users must be >= 1");
    if (!(mean_tree_size >= 1.0)) throw ConfigError("mean_tree_size must be >= 1");
    if (max_tree_size < 1) throw ConfigError("max_tree_size must be >= 1");
    if (attachment < 0.0) throw ConfigError("attachment must be >= 0");
    if (!(sigma >= 0.0 && sigma <= 1.0)) throw ConfigError("sigma must lie in [0, 1]");
    if (class_vocab < 1 || neutral_vocab < 1) throw ConfigError("vocabulary sizes must be >= 1");
    if (!(fake_fraction >= 0.0 && fake_fraction <= 1.0)) throw ConfigError("fake_fraction must lie in [0, 1]");
    if (!(controllable_fraction >= 0.0 && controllable_fraction <= 1.0))
      throw ConfigError("controllable_fraction must lie in [0, 1]");
  }
};

namespace detail {

inline std::string padded(char prefix, std::size_t i, int width) {
  std::ostringstream s;
  s << prefix << std::setw(width) << std::setfill('0') << i;
  return s.str();
}

inline int id_width(std::size_t n) { return std::max(1, static_cast<int>(std::to_string(n > 0 ? n - 1 : 0).size())); }

// Weighted draw over a fixed weight vector via its cumulative sums.
class WeightedPicker {
 public:
  explicit WeightedPicker(std::vector<double> w) : cum_(std::move(w)) {
    for (std::size_t i = 1; i < cum_.size(); ++i) cum_[i] += cum_[i - 1];
  }
  bool empty() const { return cum_.empty() || cum_.back() <= 0.0; }
  std::size_t pick(Rng& rng) const {
    double r = uniform01(rng) * cum_.back();
    auto it = std::upper_bound(cum_.begin(), cum_.end(), r);
    return std::min(static_cast<std::size_t>(it - cum_.begin()), cum_.size() - 1);
  }

 private:
  std::vector<double> cum_;
};

}  // namespace detail

/// Users carry a latent stance s in [-1, 1]; their histories lean towards the
/// fake (s > 0) or real vocabulary with probability |s|. With probability σ an
/// engager is drawn from users whose stance matches the news label, and news
/// text draws class tokens with probability σ/2. σ = 0 leaves no signal.
inline SocialContext generate(const GenConfig& cfg) {
  cfg.check();
  Rng rng(mix_seed(cfg.seed, 0x67656eULL));
  auto word = [&](char cls, int vocab) { return std::string(1, cls) + std::to_string(uniform_index(rng, static_cast<std::size_t>(vocab))); };
  auto lean_token = [&](double stance) {
    if (uniform01(rng) < std::abs(stance)) return word(stance > 0 ? 'f' : 'r', cfg.class_vocab);
    return word('w', cfg.neutral_vocab);
  };

  const auto nu = static_cast<std::size_t>(cfg.n_users), nn_ = static_cast<std::size_t>(cfg.n_news);
  const int uw = detail::id_width(nu), nw = detail::id_width(nn_);
  std::vector<UserRecord> users(nu);
  std::vector<double> stance(nu), activity(nu);
  for (std::size_t u = 0; u < nu; ++u) {
    stance[u] = 2.0 * uniform01(rng) - 1.0;
    activity[u] = std::min(20.0, std::pow(1.0 - uniform01(rng), -1.0 / 1.5));  // Pareto(1.5), capped
    users[u].id = detail::padded('u', u, uw);
    users[u].controllable = uniform01(rng) < cfg.controllable_fraction;
    const std::size_t h = 2 + uniform_index(rng, 5);
    for (std::size_t k = 0; k < h; ++k) {
      Tokens t;
      for (int i = 0; i < 8; ++i) t.push_back(lean_token(stance[u]));
      users[u].history.push_back(std::move(t));
    }
  }
  std::vector<double> fake_w(nu), real_w(nu);
  for (std::size_t u = 0; u < nu; ++u) {
    fake_w[u] = stance[u] > 0 ? activity[u] * stance[u] : 0.0;
    real_w[u] = stance[u] < 0 ? -activity[u] * stance[u] : 0.0;
  }
  const detail::WeightedPicker any(activity), fake_side(fake_w), real_side(real_w);

  const auto n_fake = static_cast<std::size_t>(std::llround(cfg.fake_fraction * static_cast<double>(nn_)));
  std::vector<int> labels(nn_, 0);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_fake), 1);
  std::shuffle(labels.begin(), labels.end(), rng);

  // lognormal tree sizes with the requested mean
  const double sd = 0.8, mu = std::log(cfg.mean_tree_size) - 0.5 * sd * sd;
  std::normal_distribution<double> normal(mu, sd);

  std::vector<NewsRecord> news(nn_);
  std::vector<PostRecord> posts;
  long order = 0;
  for (std::size_t k = 0; k < nn_; ++k) {
    auto& q = news[k];
    q.id = detail::padded('n', k, nw);
    q.label = labels[k];
    const char cls = q.label ? 'f' : 'r';
    for (int i = 0; i < 12; ++i)
      q.text.push_back(uniform01(rng) < 0.5 * cfg.sigma ? word(cls, cfg.class_vocab) : word('w', cfg.neutral_vocab));

    const auto size = static_cast<std::size_t>(
        std::clamp<long>(std::lround(std::exp(normal(rng))), 1L, static_cast<long>(cfg.max_tree_size)));
    std::vector<std::string> node_ids{q.id};
    std::vector<double> children{0.0};
    std::vector<std::size_t> authors;
    const auto& aligned = q.label ? fake_side : real_side;
    for (std::size_t i = 0; i < size; ++i) {
      std::size_t author = 0;
      for (int attempt = 0; attempt < 20; ++attempt) {
        const bool align = !aligned.empty() && uniform01(rng) < cfg.sigma;
        author = align ? aligned.pick(rng) : any.pick(rng);
        if (std::find(authors.begin(), authors.end(), author) == authors.end()) break;
      }
      authors.push_back(author);
      std::vector<double> w(children.size());
      for (std::size_t c = 0; c < children.size(); ++c) w[c] = 1.0 + cfg.attachment * children[c];
      const std::size_t parent = detail::WeightedPicker(std::move(w)).pick(rng);
      children[parent] += 1.0;

      PostRecord p;
      p.id = "p" + q.id.substr(1) + "_" + std::to_string(i);
      p.author = users[author].id;
      p.parent = node_ids[parent];
      p.order = order++;
      for (int t = 0; t < 6; ++t)
        p.text.push_back(uniform01(rng) < 0.5 ? q.text[uniform_index(rng, q.text.size())] : lean_token(stance[author]));
      node_ids.push_back(p.id);
      children.push_back(0.0);
      posts.push_back(std::move(p));
    }
  }
  return make_context(std::move(users), std::move(news), std::move(posts));
}

inline json gen_config_to_json(const GenConfig& c) {
  return {{"n_news", c.n_news},
          {"n_users", c.n_users},
          {"mean_tree_size", c.mean_tree_size},
          {"max_tree_size", c.max_tree_size},
          {"attachment", c.attachment},
          {"sigma", c.sigma},
          {"class_vocab", c.class_vocab},
          {"neutral_vocab", c.neutral_vocab},
          {"fake_fraction", c.fake_fraction},
          {"controllable_fraction", c.controllable_fraction},
          {"seed", c.seed}};
}

inline GenConfig gen_config_from_json(const json& j) {
  require_keys(j,
               {"n_news", "n_users", "mean_tree_size", "max_tree_size", "attachment", "sigma", "class_vocab",
                "neutral_vocab", "fake_fraction", "controllable_fraction", "seed"},
               "generator config");
  GenConfig c;
  try {
    c.n_news = j.value("n_news", c.n_news);
    c.n_users = j.value("n_users", c.n_users);
    c.mean_tree_size = j.value("mean_tree_size", c.mean_tree_size);
    c.max_tree_size = j.value("max_tree_size", c.max_tree_size);
    c.attachment = j.value("attachment", c.attachment);
    c.sigma = j.value("sigma", c.sigma);
    c.class_vocab = j.value("class_vocab", c.class_vocab);
    c.neutral_vocab = j.value("neutral_vocab", c.neutral_vocab);
    c.fake_fraction = j.value("fake_fraction", c.fake_fraction);
    c.controllable_fraction = j.value("controllable_fraction", c.controllable_fraction);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("generator config: ") + e.what());
  }
  c.check();
  return c;
}

struct SplitFractions {
  double train = 0.2, val = 0.1, test = 0.7;
};

/// News positions per split; disjoint, covering, stratified by label.
struct Split {
  std::vector<std::size_t> train, val, test;
  bool operator==(const Split&) const = default;
};

inline Split split(const SocialContext& ctx, const SplitFractions& f = {}, std::uint64_t seed = 0) {
  if (f.train < 0 || f.val < 0 || f.test < 0) throw ConfigError("split fractions must be non-negative");
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  Rng rng(mix_seed(seed, 0x73706cULL));
  Split s;
  for (int cls = 0; cls < 2; ++cls) {
    std::vector<std::size_t> members;
    for (std::size_t k = 0; k < ctx.news.size(); ++k)
      if (ctx.news[k].label == cls) members.push_back(k);
    std::shuffle(members.begin(), members.end(), rng);
    const auto n = static_cast<double>(members.size());
    const auto n_train = static_cast<std::size_t>(std::llround(f.train * n));
    const auto n_val = std::min(members.size() - n_train, static_cast<std::size_t>(std::llround(f.val * n)));
    for (std::size_t i = 0; i < members.size(); ++i)
      (i < n_train ? s.train : i < n_train + n_val ? s.val : s.test).push_back(members[i]);
  }
  for (auto* v : {&s.train, &s.val, &s.test}) std::sort(v->begin(), v->end());
  return s;
}

inline json split_to_json(const SocialContext& ctx, const Split& s) {
  auto ids = [&](const std::vector<std::size_t>& v) {
    json a = json::array();
    for (auto k : v) a.push_back(ctx.news[k].id);
    return a;
  };
  return {{"train", ids(s.train)}, {"val", ids(s.val)}, {"test", ids(s.test)}};
}

}  // namespace gafsi
