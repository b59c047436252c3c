#pragma once

#include "gafsi/social_context.hpp"

#include <random>

namespace gafsi::testing {

// 3 news, 5 users, 8 posts:
//   n1 <- p1 <- p2 <- p3        (authors u1 u2 u3)
//   n1 <- p4                    (u4)
//   n2 <- p5, n2 <- p6 <- p7    (u1 u5 u2)
//   n3 <- p8                    (u5)
inline SocialContext toy_context() {
  std::vector<UserRecord> users;
  for (int i = 1; i <= 5; ++i)
    users.push_back({"u" + std::to_string(i), {{"tok" + std::to_string(i), "shared"}}, true});
  std::vector<NewsRecord> news{{"n1", {"breaking", "story"}, 1}, {"n2", {"calm", "report"}, 0}, {"n3", {"other"}, 1}};
  std::vector<PostRecord> posts{
      {"p1", "u1", {"wow"}, "n1", 0},  {"p2", "u2", {"really"}, "p1", 1}, {"p3", "u3", {"no"}, "p2", 2},
      {"p4", "u4", {"hmm"}, "n1", 3},  {"p5", "u1", {"ok"}, "n2", 4},     {"p6", "u5", {"fine"}, "n2", 5},
      {"p7", "u2", {"sure"}, "p6", 6}, {"p8", "u5", {}, "n3", 7},
  };
  return make_context(std::move(users), std::move(news), std::move(posts));
}

/// Random well-formed context: posts attach to a uniformly chosen earlier
/// node of a uniformly chosen tree.
inline SocialContext random_context(std::uint64_t seed, int n_news, int n_users, int n_posts, int vocab = 12) {
  std::mt19937_64 rng(seed);
  auto pick = [&rng](int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); };
  auto text = [&](int len) {
    Tokens t;
    for (int i = 0; i < len; ++i) t.push_back("w" + std::to_string(pick(vocab)));
    return t;
  };
  std::vector<UserRecord> users;
  for (int i = 0; i < n_users; ++i) {
    UserRecord u{"u" + std::to_string(i), {}, true};
    int h = pick(3);
    for (int k = 0; k < h; ++k) u.history.push_back(text(1 + pick(5)));
    users.push_back(std::move(u));
  }
  std::vector<NewsRecord> news;
  for (int i = 0; i < n_news; ++i) news.push_back({"n" + std::to_string(i), text(3), pick(2)});
  std::vector<std::vector<std::string>> nodes(static_cast<std::size_t>(n_news));
  for (int i = 0; i < n_news; ++i) nodes[static_cast<std::size_t>(i)].push_back(news[static_cast<std::size_t>(i)].id);
  std::vector<PostRecord> posts;
  for (int i = 0; i < n_posts; ++i) {
    auto& tree = nodes[static_cast<std::size_t>(pick(n_news))];
    std::string parent = tree[static_cast<std::size_t>(pick(static_cast<int>(tree.size())))];
    PostRecord p{"p" + std::to_string(i), users[static_cast<std::size_t>(pick(n_users))].id, text(pick(4)), parent, i};
    tree.push_back(p.id);
    posts.push_back(std::move(p));
  }
  return make_context(std::move(users), std::move(news), std::move(posts));
}

}  // namespace gafsi::testing
