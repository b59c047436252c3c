#pragma once

#include "gafsi/common.hpp"

#include <algorithm>
#include <deque>
#include <memory>
#include <optional>
#include <unordered_map>
#include <unordered_set>

namespace gafsi {

using Tokens = std::vector<std::string>;

struct NewsRecord {
  std::string id;
  Tokens text;
  int label = 0;  // 0 real, 1 fake

  bool operator==(const NewsRecord&) const = default;
};

struct UserRecord {
  std::string id;
  std::vector<Tokens> history;
  bool controllable = true;

  bool operator==(const UserRecord&) const = default;
};

struct PostRecord {
  std::string id;
  std::string author;
  Tokens text;
  std::string parent;  // news id or post id
  long order = 0;      // insertion order, stands in for a timestamp

  bool operator==(const PostRecord&) const = default;
};

/// Raw dissemination record. `authorship` holds (user, post) pairs and
/// `shares` holds (child post, parent) pairs; both must agree with the
/// author/parent fields of the posts.
struct SocialContext {
  std::vector<UserRecord> users;
  std::vector<NewsRecord> news;
  std::vector<PostRecord> posts;
  std::vector<std::pair<std::string, std::string>> authorship;
  std::vector<std::pair<std::string, std::string>> shares;

  bool operator==(const SocialContext&) const = default;
};

/// Builds a context whose edge sets are derived from the post records.
inline SocialContext make_context(std::vector<UserRecord> users, std::vector<NewsRecord> news,
                                  std::vector<PostRecord> posts) {
  SocialContext ctx{std::move(users), std::move(news), std::move(posts), {}, {}};
  ctx.authorship.reserve(ctx.posts.size());
  ctx.shares.reserve(ctx.posts.size());
  for (const auto& p : ctx.posts) {
    ctx.authorship.emplace_back(p.author, p.id);
    ctx.shares.emplace_back(p.id, p.parent);
  }
  return ctx;
}

/// Every invariant violation of `ctx`, each naming the offending id or edge.
/// Empty iff the context is well formed.
inline std::vector<std::string> validate(const SocialContext& ctx) {
  std::vector<std::string> out;
  std::unordered_map<std::string, std::size_t> user_pos, news_pos, post_pos;

  auto index_ids = [&out](const auto& records, auto& pos, const char* kind) {
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (!pos.emplace(records[i].id, i).second)
        out.push_back(std::string("duplicate ") + kind + " id " + records[i].id);
    }
  };
  index_ids(ctx.users, user_pos, "user");
  index_ids(ctx.news, news_pos, "news");
  index_ids(ctx.posts, post_pos, "post");

  // Parents may name either kind, so a news/post id clash is ambiguous.
  for (const auto& p : ctx.posts)
    if (news_pos.count(p.id)) out.push_back("post id " + p.id + " collides with a news id");

  for (const auto& n : ctx.news)
    if (n.label != 0 && n.label != 1)
      out.push_back("news " + n.id + " has label " + std::to_string(n.label) + " outside {0,1}");

  std::vector<int> author_count(ctx.posts.size(), 0), share_count(ctx.posts.size(), 0);
  std::vector<const std::string*> edge_author(ctx.posts.size(), nullptr), edge_parent(ctx.posts.size(), nullptr);

  for (const auto& [u, p] : ctx.authorship) {
    bool ok = true;
    if (!user_pos.count(u)) {
      out.push_back("authorship edge (" + u + ", " + p + ") references unknown user " + u);
      ok = false;
    }
    auto it = post_pos.find(p);
    if (it == post_pos.end()) {
      out.push_back("authorship edge (" + u + ", " + p + ") references unknown post " + p);
      ok = false;
    }
    if (ok) {
      ++author_count[it->second];
      edge_author[it->second] = &u;
    }
  }
  for (const auto& [c, par] : ctx.shares) {
    bool ok = true;
    auto it = post_pos.find(c);
    if (it == post_pos.end()) {
      out.push_back("share edge (" + c + ", " + par + ") has unknown child post " + c);
      ok = false;
    }
    if (!news_pos.count(par) && !post_pos.count(par)) {
      out.push_back("share edge (" + c + ", " + par + ") references unknown parent " + par);
      ok = false;
    }
    if (ok) {
      ++share_count[it->second];
      edge_parent[it->second] = &par;
    }
  }

  for (std::size_t i = 0; i < ctx.posts.size(); ++i) {
    const auto& p = ctx.posts[i];
    if (!user_pos.count(p.author)) out.push_back("post " + p.id + " has unknown author " + p.author);
    if (p.parent == p.id) out.push_back("post " + p.id + " is its own parent");
    else if (!news_pos.count(p.parent) && !post_pos.count(p.parent))
      out.push_back("post " + p.id + " has unknown parent " + p.parent);

    if (author_count[i] != 1)
      out.push_back("post " + p.id + " has " + std::to_string(author_count[i]) + " authorship edges");
    else if (*edge_author[i] != p.author)
      out.push_back("post " + p.id + " authorship edge names " + *edge_author[i] + " but author is " + p.author);
    if (share_count[i] != 1)
      out.push_back("post " + p.id + " has " + std::to_string(share_count[i]) + " share edges");
    else if (*edge_parent[i] != p.parent)
      out.push_back("post " + p.id + " share edge names " + *edge_parent[i] + " but parent is " + p.parent);
  }

  // Cycle detection along parent fields; one violation per cycle.
  enum : char { unseen, active, done };
  std::vector<char> state(ctx.posts.size(), unseen);
  for (std::size_t start = 0; start < ctx.posts.size(); ++start) {
    if (state[start] != unseen) continue;
    std::vector<std::size_t> path;
    std::size_t cur = start;
    while (true) {
      if (state[cur] == done) break;
      if (state[cur] == active) {
        auto at = std::find(path.begin(), path.end(), cur);
        std::string chain;
        for (auto it = at; it != path.end(); ++it) chain += ctx.posts[*it].id + " -> ";
        chain += ctx.posts[cur].id;
        out.push_back("share cycle through post " + ctx.posts[cur].id + " (" + chain + ")");
        break;
      }
      state[cur] = active;
      path.push_back(cur);
      const auto& par = ctx.posts[cur].parent;
      auto it = post_pos.find(par);
      if (it == post_pos.end() || par == ctx.posts[cur].id) break;
      cur = it->second;
    }
    for (auto i : path) state[i] = done;
  }
  return out;
}

/// Reference to a tree node: a news item (root) or a post.
struct NodeRef {
  enum class Kind { news, post } kind = Kind::news;
  std::size_t index = 0;
  bool operator==(const NodeRef&) const = default;
};

/// Lookup structure over a valid context. Positions index the record vectors.
struct ContextIndex {
  std::unordered_map<std::string, std::size_t> user_pos, news_pos, post_pos;
  std::vector<std::size_t> post_author;
  std::vector<NodeRef> post_parent;
  std::vector<std::size_t> post_root;                  // news position of each post's tree
  std::vector<std::vector<std::size_t>> news_children;  // posts sharing the news directly
  std::vector<std::vector<std::size_t>> post_children;
  std::vector<std::vector<std::size_t>> tree_posts;     // BFS order, parents before children
  std::vector<std::vector<std::size_t>> engaged_users;  // sorted distinct authors per news
  std::vector<std::vector<std::size_t>> user_news;      // sorted news engaged per user

  static ContextIndex build(const SocialContext& ctx) {
    ContextIndex ix;
    for (std::size_t i = 0; i < ctx.users.size(); ++i) ix.user_pos.emplace(ctx.users[i].id, i);
    for (std::size_t i = 0; i < ctx.news.size(); ++i) ix.news_pos.emplace(ctx.news[i].id, i);
    for (std::size_t i = 0; i < ctx.posts.size(); ++i) ix.post_pos.emplace(ctx.posts[i].id, i);

    const std::size_t np = ctx.posts.size();
    ix.post_author.resize(np);
    ix.post_parent.resize(np);
    ix.post_root.assign(np, 0);
    ix.news_children.assign(ctx.news.size(), {});
    ix.post_children.assign(np, {});
    for (std::size_t i = 0; i < np; ++i) {
      const auto& p = ctx.posts[i];
      ix.post_author[i] = ix.user_pos.at(p.author);
      if (auto it = ix.post_pos.find(p.parent); it != ix.post_pos.end()) {
        ix.post_parent[i] = {NodeRef::Kind::post, it->second};
        ix.post_children[it->second].push_back(i);
      } else {
        std::size_t n = ix.news_pos.at(p.parent);
        ix.post_parent[i] = {NodeRef::Kind::news, n};
        ix.news_children[n].push_back(i);
      }
    }

    ix.tree_posts.assign(ctx.news.size(), {});
    ix.engaged_users.assign(ctx.news.size(), {});
    ix.user_news.assign(ctx.users.size(), {});
    for (std::size_t n = 0; n < ctx.news.size(); ++n) {
      auto& order = ix.tree_posts[n];
      std::deque<std::size_t> queue(ix.news_children[n].begin(), ix.news_children[n].end());
      while (!queue.empty()) {
        std::size_t p = queue.front();
        queue.pop_front();
        order.push_back(p);
        ix.post_root[p] = n;
        for (auto c : ix.post_children[p]) queue.push_back(c);
      }
      auto& eng = ix.engaged_users[n];
      for (auto p : order) eng.push_back(ix.post_author[p]);
      std::sort(eng.begin(), eng.end());
      eng.erase(std::unique(eng.begin(), eng.end()), eng.end());
      for (auto u : eng) ix.user_news[u].push_back(n);
    }
    return ix;
  }
};

/// A validated, indexed, immutable context shared by graph builders and attacks.
class IndexedContext {
 public:
  explicit IndexedContext(SocialContext ctx) : ctx_(std::move(ctx)) {
    auto violations = validate(ctx_);
    if (!violations.empty()) throw ValidationError(std::move(violations));
    ix_ = ContextIndex::build(ctx_);
  }

  const SocialContext& context() const { return ctx_; }
  const ContextIndex& index() const { return ix_; }

  std::size_t news_position(const std::string& id) const {
    auto it = ix_.news_pos.find(id);
    if (it == ix_.news_pos.end()) throw Error("unknown news id " + id);
    return it->second;
  }
  std::size_t user_position(const std::string& id) const {
    auto it = ix_.user_pos.find(id);
    if (it == ix_.user_pos.end()) throw Error("unknown user id " + id);
    return it->second;
  }

 private:
  SocialContext ctx_;
  ContextIndex ix_;
};

struct InjectedPost {
  std::string fraudster;
  std::string parent;
  Tokens text;

  bool operator==(const InjectedPost&) const = default;
};

/// The perturbation: new posts, each implying one authorship and one share edge.
struct AttackPlan {
  std::string target;
  std::vector<InjectedPost> posts;
  int budget = 0;

  bool operator==(const AttackPlan&) const = default;
};

/// Id assigned to the k-th injected post of a plan. Later posts of the same
/// plan may use it as their parent.
inline std::string injected_post_id(const std::string& target, std::size_t k) {
  return target + "::inj" + std::to_string(k);
}

/// Violations of the AttackPlan invariants against `ctx`. Plans are checked
/// before they are applied; an empty result means apply_plan will succeed.
inline std::vector<std::pair<std::string, std::string>> check_plan(const IndexedContext& ictx,
                                                                   const AttackPlan& plan) {
  std::vector<std::pair<std::string, std::string>> out;  // (message, offending id)
  const auto& ctx = ictx.context();
  const auto& ix = ictx.index();
  auto target_it = ix.news_pos.find(plan.target);
  if (target_it == ix.news_pos.end()) {
    out.emplace_back("unknown target news", plan.target);
    return out;
  }
  const std::size_t target = target_it->second;
  if (plan.budget < 0) out.emplace_back("negative budget", std::to_string(plan.budget));
  if (static_cast<long>(plan.posts.size()) > plan.budget)
    out.emplace_back("plan exceeds budget", std::to_string(plan.posts.size()));

  std::unordered_set<std::string> fraudsters;
  for (std::size_t k = 0; k < plan.posts.size(); ++k) {
    const auto& p = plan.posts[k];
    auto u = ix.user_pos.find(p.fraudster);
    if (u == ix.user_pos.end()) {
      out.emplace_back("unknown fraudster", p.fraudster);
    } else if (!ctx.users[u->second].controllable) {
      out.emplace_back("fraudster is not controllable", p.fraudster);
    }
    if (!fraudsters.insert(p.fraudster).second) out.emplace_back("fraudster used twice", p.fraudster);

    const std::string id = injected_post_id(plan.target, k);
    if (ix.post_pos.count(id) || ix.news_pos.count(id)) out.emplace_back("injected post id collides", id);

    bool parent_ok = false;
    if (p.parent == plan.target) {
      parent_ok = true;
    } else if (auto it = ix.post_pos.find(p.parent); it != ix.post_pos.end()) {
      parent_ok = ix.post_root[it->second] == target;
    } else {
      for (std::size_t j = 0; j < k; ++j)
        if (p.parent == injected_post_id(plan.target, j)) parent_ok = true;
    }
    if (!parent_ok) out.emplace_back("parent outside the target's propagation tree", p.parent);
  }
  return out;
}

/// Perturbed copy of the context: one fresh post per plan entry plus its
/// authorship and share edges. The input is left untouched.
inline SocialContext apply_plan(const IndexedContext& ictx, const AttackPlan& plan) {
  auto problems = check_plan(ictx, plan);
  if (!problems.empty()) throw PlanError(problems.front().first, problems.front().second);

  SocialContext out = ictx.context();
  long next_order = 0;
  for (const auto& p : out.posts) next_order = std::max(next_order, p.order + 1);
  for (std::size_t k = 0; k < plan.posts.size(); ++k) {
    const auto& ip = plan.posts[k];
    PostRecord rec{injected_post_id(plan.target, k), ip.fraudster, ip.text, ip.parent, next_order++};
    out.authorship.emplace_back(rec.author, rec.id);
    out.shares.emplace_back(rec.id, rec.parent);
    out.posts.push_back(std::move(rec));
  }
  return out;
}

inline SocialContext apply_plan(const SocialContext& ctx, const AttackPlan& plan) {
  return apply_plan(IndexedContext(ctx), plan);
}

}  // namespace gafsi
