#pragma once

// JSON documents: the social-context interchange format, attack plans and
// model checkpoints.

#include "gafsi/neural/model.hpp"
#include "gafsi/social_context.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace gafsi {

using json = nlohmann::json;

/// Rejects keys outside `allowed`; strict parsing for configs and documents.
inline void require_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) {
      std::string list;
      for (const auto& a : ok) list += (list.empty() ? "" : ", ") + a;
      throw ConfigError(where + ": unknown key '" + k + "' (valid: " + list + ")");
    }
}

inline json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

namespace detail {

inline Tokens tokens_from_json(const json& j) {
  if (j.is_string()) {
    Tokens t;
    std::istringstream ss(j.get<std::string>());
    for (std::string w; ss >> w;) t.push_back(w);
    return t;
  }
  return j.get<Tokens>();
}

}  // namespace detail

// --- interchange format ----------------------------------------------------

inline json context_to_json(const SocialContext& ctx) {
  json j;
  j["news"] = json::array();
  for (const auto& n : ctx.news) j["news"].push_back({{"id", n.id}, {"label", n.label}, {"text", n.text}});
  j["users"] = json::array();
  for (const auto& u : ctx.users)
    j["users"].push_back({{"id", u.id}, {"history", u.history}, {"controllable", u.controllable}});
  j["posts"] = json::array();
  for (const auto& p : ctx.posts)
    j["posts"].push_back(
        {{"id", p.id}, {"author", p.author}, {"text", p.text}, {"parent", p.parent}, {"order", p.order}});
  return j;
}

/// Parses an interchange document; throws ValidationError listing every
/// violation when the described context is not well formed.
inline SocialContext context_from_json(const json& j) {
  require_keys(j, {"news", "users", "posts"}, "dataset");
  std::vector<UserRecord> users;
  std::vector<NewsRecord> news;
  std::vector<PostRecord> posts;
  try {
    for (const auto& n : j.at("news")) {
      require_keys(n, {"id", "label", "text"}, "news entry");
      news.push_back({n.at("id").get<std::string>(), detail::tokens_from_json(n.value("text", json::array())),
                      n.at("label").get<int>()});
    }
    for (const auto& u : j.at("users")) {
      require_keys(u, {"id", "history", "controllable"}, "user entry");
      UserRecord r{u.at("id").get<std::string>(), {}, u.value("controllable", true)};
      for (const auto& h : u.value("history", json::array())) r.history.push_back(detail::tokens_from_json(h));
      users.push_back(std::move(r));
    }
    for (const auto& p : j.at("posts")) {
      require_keys(p, {"id", "author", "text", "parent", "order"}, "post entry");
      posts.push_back({p.at("id").get<std::string>(), p.at("author").get<std::string>(),
                       detail::tokens_from_json(p.value("text", json::array())), p.at("parent").get<std::string>(),
                       p.value("order", 0L)});
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed dataset document: ") + e.what());
  }
  SocialContext ctx = make_context(std::move(users), std::move(news), std::move(posts));
  auto violations = validate(ctx);
  if (!violations.empty()) throw ValidationError(std::move(violations));
  return ctx;
}

inline void save_context(const std::filesystem::path& path, const SocialContext& ctx) {
  write_json(path, context_to_json(ctx));
}

inline SocialContext load_context(const std::filesystem::path& path) { return context_from_json(read_json(path)); }

// --- attack plans ------------------------------------------------------------

inline json plan_to_json(const AttackPlan& p) {
  json j{{"target", p.target}, {"budget", p.budget}, {"posts", json::array()}};
  for (const auto& ip : p.posts) j["posts"].push_back({{"fraudster", ip.fraudster}, {"parent", ip.parent}, {"text", ip.text}});
  return j;
}

inline AttackPlan plan_from_json(const json& j) {
  require_keys(j, {"target", "budget", "posts", "attack", "repeat", "seed"}, "attack plan");
  AttackPlan p;
  try {
    p.target = j.at("target").get<std::string>();
    p.budget = j.at("budget").get<int>();
    for (const auto& e : j.at("posts")) {
      require_keys(e, {"fraudster", "parent", "text"}, "plan post");
      p.posts.push_back(
          {e.at("fraudster").get<std::string>(), e.at("parent").get<std::string>(), detail::tokens_from_json(e.at("text"))});
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed attack plan: ") + e.what());
  }
  return p;
}

// --- model checkpoints ---------------------------------------------------------

inline const char* to_string(nn::Architecture a) {
  switch (a) {
    case nn::Architecture::gcn: return "gcn";
    case nn::Architecture::sage: return "sage";
    case nn::Architecture::gat: return "gat";
    case nn::Architecture::bidir_gcn: return "bidir_gcn";
  }
  return "?";
}

inline nn::Architecture architecture_from_string(const std::string& s) {
  if (s == "gcn") return nn::Architecture::gcn;
  if (s == "sage") return nn::Architecture::sage;
  if (s == "gat") return nn::Architecture::gat;
  if (s == "bidir_gcn") return nn::Architecture::bidir_gcn;
  throw ConfigError("unknown architecture '" + s + "' (valid: gcn, sage, gat, bidir_gcn)");
}

inline json spec_to_json(const nn::ModelSpec& s) {
  return {{"architecture", to_string(s.architecture)},
          {"task", s.task == nn::Task::node_classification ? "node_classification" : "graph_classification"},
          {"in_dim", s.in_dim},
          {"hidden", s.hidden},
          {"layers", s.layers},
          {"readout", s.readout == nn::Readout::mean_pool ? "mean_pool" : "root_concat_mean_pool"},
          {"seed", s.seed}};
}

inline nn::ModelSpec spec_from_json(const json& j) {
  require_keys(j, {"architecture", "task", "in_dim", "hidden", "layers", "readout", "seed"}, "model spec");
  nn::ModelSpec s;
  s.architecture = architecture_from_string(j.at("architecture").get<std::string>());
  auto task = j.at("task").get<std::string>();
  if (task == "node_classification") s.task = nn::Task::node_classification;
  else if (task == "graph_classification") s.task = nn::Task::graph_classification;
  else throw ConfigError("unknown task " + task);
  s.in_dim = j.at("in_dim").get<int>();
  s.hidden = j.value("hidden", 32);
  s.layers = j.value("layers", 2);
  auto readout = j.value("readout", std::string("mean_pool"));
  if (readout == "mean_pool") s.readout = nn::Readout::mean_pool;
  else if (readout == "root_concat_mean_pool") s.readout = nn::Readout::root_concat_mean_pool;
  else throw ConfigError("unknown readout " + readout);
  s.seed = j.value("seed", std::uint64_t{0});
  s.check();
  return s;
}

inline json model_to_json(const nn::Model& m) {
  json j{{"format", "gafsi-model"}, {"version", 1}, {"spec", spec_to_json(m.spec)}, {"params", json::array()}};
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    const auto& p = m.params[i];
    std::vector<double> data(p.data(), p.data() + p.size());
    j["params"].push_back({{"name", m.names[i]}, {"rows", p.rows()}, {"cols", p.cols()}, {"data", data}});
  }
  json log = json::array();
  for (const auto& e : m.log.epochs) log.push_back({e.epoch, e.train_loss, e.val_accuracy});
  j["log"] = {{"epochs", log}, {"best_epoch", m.log.best_epoch}};
  return j;
}

inline nn::Model model_from_json(const json& j) {
  require_keys(j, {"format", "version", "spec", "params", "log"}, "model checkpoint");
  if (j.at("format") != "gafsi-model" || j.at("version") != 1) throw ConfigError("unsupported checkpoint format");
  nn::Model m = nn::init_model(spec_from_json(j.at("spec")));
  const auto& params = j.at("params");
  if (params.size() != m.params.size()) throw ConfigError("checkpoint parameter count does not match its spec");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (p.at("name").get<std::string>() != m.names[i] || p.at("rows").get<Eigen::Index>() != m.params[i].rows() ||
        p.at("cols").get<Eigen::Index>() != m.params[i].cols())
      throw ConfigError("checkpoint parameter " + p.at("name").get<std::string>() + " does not match its spec");
    auto data = p.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != m.params[i].size()) throw ConfigError("checkpoint data size mismatch");
    std::copy(data.begin(), data.end(), m.params[i].data());
  }
  if (j.contains("log")) {
    for (const auto& e : j["log"].at("epochs"))
      m.log.epochs.push_back({e.at(0).get<int>(), e.at(1).get<double>(), e.at(2).get<double>()});
    m.log.best_epoch = j["log"].value("best_epoch", 0);
  }
  return m;
}

inline void save_model(const std::filesystem::path& path, const nn::Model& m) { write_json(path, model_to_json(m)); }
inline nn::Model load_model(const std::filesystem::path& path) { return model_from_json(read_json(path)); }

}  // namespace gafsi
