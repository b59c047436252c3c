// gafsi: generate data, train detectors, craft attack plans, evaluate and sweep.

#include "gafsi/harness.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <set>

using namespace gafsi;
using namespace gafsi::harness;
namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config, out, dataset, models, plans, attack = "gafsi", target = "all-test", kind;
  std::vector<std::string> detectors;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
};

/// Failure tagged with the pipeline stage that raised it.
struct StageError : std::runtime_error {
  StageError(const std::string& stage, const std::string& what) : std::runtime_error(stage + ": " + what) {}
};

template <class F>
auto stage(const std::string& name, F&& f) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

std::string default_out() {
  const char* env = std::getenv("GAFSI_OUT");
  return env && *env ? env : "gafsi-out";
}

ExperimentConfig resolve_config(const Options& o) {
  return stage("config", [&] {
    ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : experiment_config_from_json(read_json(o.config));
    if (o.seed) cfg.seed = cfg.data.seed = *o.seed;
    if (o.jobs) cfg.jobs = *o.jobs;
    if (!o.dataset.empty()) cfg.dataset = fs::absolute(o.dataset).string();
    if (!o.detectors.empty()) {
      cfg.detectors.clear();
      for (const auto& d : o.detectors) cfg.detectors.push_back(detector_from_string(d));
    }
    cfg.check();
    return cfg;
  });
}

fs::path out_dir(const Options& o) {
  fs::path p = o.out.empty() ? fs::path(default_out()) : fs::path(o.out);
  fs::create_directories(p);
  return fs::absolute(p);
}

void write_manifest(const fs::path& out, const std::string& command, const ExperimentConfig& cfg, const json& artifacts) {
  stage("manifest", [&] {
    json m{{"tool", "gafsi"},
           {"version", GAFSI_VERSION},
           {"command", command},
           {"config", experiment_config_to_json(cfg)},
           {"seeds", {{"experiment", cfg.seed}, {"data", cfg.data.seed}, {"features", cfg.features.seed}}},
           {"artifacts", artifacts}};
    for (const auto& [k, v] : artifacts.items())
      if (!fs::exists(v.get<std::string>())) throw Error("artifact " + k + " was not written: " + v.get<std::string>());
    write_json(out / "manifest.json", m);
    return 0;
  });
}

SocialContext dataset_of(const ExperimentConfig& cfg) {
  return stage("dataset", [&] { return load_or_generate(cfg); });
}

std::unique_ptr<Experiment> experiment_of(const ExperimentConfig& cfg, const Options& o) {
  SocialContext ctx = dataset_of(cfg);
  Experiment::Detectors dets;
  std::optional<attack::Surrogates> sur;
  if (!o.models.empty()) {
    std::tie(dets, sur) = stage("models", [&] {
      if (!fs::is_directory(o.models)) throw Error("models directory " + o.models + " does not exist");
      return load_models(o.models, cfg);
    });
  }
  return stage("train", [&] { return std::make_unique<Experiment>(cfg, std::move(ctx), std::move(dets), std::move(sur)); });
}

std::string plan_file_name(const std::string& target, AttackKind a, int repeat) {
  return to_string(a) + "/" + target + "-r" + std::to_string(repeat) + ".json";
}

int cmd_gen(const Options& o) {
  auto cfg = resolve_config(o);
  auto out = out_dir(o);
  auto ctx = stage("generate", [&] { return generate(cfg.data); });
  stage("write", [&] {
    save_context(out / "dataset.json", ctx);
    return 0;
  });
  cfg.dataset = (out / "dataset.json").string();
  write_manifest(out, "gen", cfg, {{"dataset", cfg.dataset}});
  std::cout << "wrote " << ctx.news.size() << " news, " << ctx.users.size() << " users, " << ctx.posts.size()
            << " posts to " << cfg.dataset << '\n';
  return 0;
}

int cmd_train(const Options& o) {
  auto cfg = resolve_config(o);
  auto out = out_dir(o);
  Options fresh = o;
  fresh.models.clear();
  auto ex = experiment_of(cfg, fresh);
  const fs::path models = out / "models";
  stage("write", [&] {
    save_models(models, *ex);
    write_json(out / "split.json", split_to_json(ex->context(), ex->split()));
    std::ofstream t(out / "clean_accuracy.tsv");
    t << "detector\tval_accuracy\ttest_accuracy\n";
    for (std::size_t i = 0; i < ex->detectors().size(); ++i) {
      const auto d = ex->detectors()[i].first;
      t << to_string(d) << '\t' << ex->val_accuracy(i) << '\t' << ex->accuracy(d, ex->split().test) << '\n';
      std::cout << to_string(d) << "\tval " << ex->val_accuracy(i) << "\ttest " << ex->accuracy(d, ex->split().test) << '\n';
    }
    return 0;
  });
  json artifacts{{"models", models.string()},
                 {"split", (out / "split.json").string()},
                 {"clean_accuracy", (out / "clean_accuracy.tsv").string()}};
  if (!cfg.dataset.empty()) artifacts["dataset"] = cfg.dataset;
  write_manifest(out, "train", cfg, artifacts);
  return 0;
}

int cmd_attack(const Options& o) {
  auto cfg = resolve_config(o);
  const AttackKind a = stage("config", [&] { return attack_from_string(o.attack); });
  auto out = out_dir(o);
  IndexedContext ictx(dataset_of(cfg));
  auto sur = stage("models", [&] {
    if (o.models.empty()) throw Error("--models is required");
    auto [dets, s] = load_models(o.models, cfg);
    if (!s) throw Error("no surrogate checkpoints in " + o.models);
    return std::move(*s);
  });
  attack::AttackContext ac(ictx, cfg.features);
  const auto pseudo = attack::user_pseudo_labels(sur.bipartite, ac);
  std::vector<std::size_t> targets = stage("targets", [&] {
    if (o.target == "all-test") return sample_targets(ictx.context(), split(ictx.context(), cfg.split, cfg.seed), cfg);
    return std::vector<std::size_t>{ictx.news_position(o.target)};
  });
  const fs::path plans = out / "plans";
  std::vector<std::pair<std::size_t, int>> jobs;
  for (auto t : targets)
    for (int r = 0; r < cfg.repeats; ++r) jobs.emplace_back(t, r);
  std::vector<json> docs(jobs.size());
  stage("attack", [&] {
    parallel_for(jobs.size(), cfg.jobs, [&](std::size_t i, std::size_t) {
      const auto [t, r] = jobs[i];
      const auto seed = plan_seed(cfg.seed, t, a, r);
      const auto t0 = std::chrono::steady_clock::now();
      AttackPlan plan = make_plan(ac, sur, pseudo, a, t, seed, cfg.attack);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      json j = plan_to_json(plan);
      j["attack"] = to_string(a);
      j["repeat"] = r;
      j["seed"] = seed;
      j["seconds"] = secs;
      docs[i] = std::move(j);
    });
    return 0;
  });
  stage("write", [&] {
    for (std::size_t i = 0; i < jobs.size(); ++i)
      write_json(plans / plan_file_name(ictx.context().news[jobs[i].first].id, a, jobs[i].second), docs[i]);
    return 0;
  });
  fs::create_directories(plans);
  write_manifest(out, "attack", cfg, {{"plans", plans.string()}, {"models", fs::absolute(o.models).string()}});
  std::cout << "wrote " << docs.size() << " " << to_string(a) << " plans to " << plans.string() << '\n';
  return 0;
}

struct PlanFile {
  AttackPlan plan;
  AttackKind attack;
  int repeat;
  double seconds;
};

std::vector<PlanFile> read_plans(const fs::path& dir) {
  std::vector<PlanFile> out;
  if (!fs::is_directory(dir)) throw Error("plans directory " + dir.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    json j = read_json(f);
    if (!j.contains("attack") || !j.contains("repeat")) throw Error(f.string() + ": plan lacks attack/repeat tags");
    const double secs = j.value("seconds", 0.0);
    j.erase("seconds");
    out.push_back({plan_from_json(j), attack_from_string(j.at("attack").get<std::string>()), j.at("repeat").get<int>(), secs});
  }
  return out;
}

int cmd_eval(const Options& o) {
  auto cfg = resolve_config(o);
  auto out = out_dir(o);
  if (o.plans.empty()) throw StageError("config", "--plans is required");
  auto plans = stage("plans", [&] { return read_plans(o.plans); });
  auto ex = experiment_of(cfg, o);
  ExperimentReport rep = stage("eval", [&] {
    ExperimentReport r;
    r.dataset = dataset_name(cfg);
    for (const auto& [d, m] : ex->detectors()) r.clean_accuracy.emplace_back(to_string(d), ex->accuracy(d, ex->split().test));
    std::map<AttackKind, std::vector<Outcome>> by_attack;
    std::set<std::size_t> seen;
    Perturber p(*ex);
    for (const auto& pf : plans) {
      const auto k = ex->indexed().news_position(pf.plan.target);
      Outcome oc{k, pf.attack, pf.repeat, pf.seconds, {}, std::nullopt};
      for (const auto& [d, m] : ex->detectors()) oc.predictions.push_back(p.predict(d, pf.plan));
      by_attack[pf.attack].push_back(std::move(oc));
      seen.insert(k);
    }
    auto baseline = seen.empty() ? ex->targets() : std::vector<std::size_t>(seen.begin(), seen.end());
    auto& clean = by_attack[AttackKind::none];
    if (clean.empty())
      for (auto k : baseline) {
        Outcome oc{k, AttackKind::none, 0, 0.0, {}, std::nullopt};
        for (const auto& [d, m] : ex->detectors()) oc.predictions.push_back(ex->clean_prediction(d, k));
        clean.push_back(std::move(oc));
      }
    for (const auto& [a, outcomes] : by_attack) {
      int repeats = 0;
      for (const auto& oc : outcomes) repeats = std::max(repeats, oc.repeat + 1);
      auto rows = aggregate(*ex, outcomes, {a}, repeats, r.dataset);
      r.rows.insert(r.rows.end(), rows.begin(), rows.end());
    }
    return r;
  });
  stage("write", [&] {
    write_report_tsv(out / "report.tsv", rep);
    write_json(out / "report.json", report_to_json(rep));
    return 0;
  });
  json artifacts{{"report", (out / "report.tsv").string()},
                 {"summary", (out / "report.json").string()},
                 {"plans", fs::absolute(o.plans).string()}};
  if (!o.models.empty()) artifacts["models"] = fs::absolute(o.models).string();
  write_manifest(out, "eval", cfg, artifacts);
  std::cout << "wrote " << rep.rows.size() << " report rows to " << (out / "report.tsv").string() << '\n';
  return 0;
}

int cmd_sweep(const Options& o) {
  auto cfg = resolve_config(o);
  auto out = out_dir(o);
  auto ex = experiment_of(cfg, o);
  std::vector<Curve> curves = stage("sweep", [&] {
    if (o.kind == "alpha") return sweep_alpha(*ex);
    if (o.kind == "budget") return sweep_budget(*ex);
    if (o.kind == "degree") return std::vector<Curve>{degree_buckets(*ex)};
    throw ConfigError("unknown sweep kind '" + o.kind + "' (valid: alpha, budget, degree)");
  });
  const fs::path tsv = out / ("sweep-" + o.kind + ".tsv"), doc = out / ("sweep-" + o.kind + ".json");
  stage("write", [&] {
    write_curves_tsv(tsv, curves);
    json j = json::array();
    for (const auto& c : curves) j.push_back(curve_to_json(c));
    write_json(doc, j);
    return 0;
  });
  for (const auto& c : curves)
    for (const auto& f : c.flags) std::cerr << "warning: " << c.name << ": " << f << '\n';
  json artifacts{{"curves", tsv.string()}, {"summary", doc.string()}};
  if (!o.models.empty()) artifacts["models"] = fs::absolute(o.models).string();
  write_manifest(out, "sweep " + o.kind, cfg, artifacts);
  std::cout << "wrote " << curves.size() << " curves to " << tsv.string() << '\n';
  return 0;
}

int cmd_run(const Options& o) {
  auto cfg = resolve_config(o);
  auto out = out_dir(o);
  auto ex = experiment_of(cfg, o);
  auto rep = stage("eval", [&] { return run(*ex); });
  stage("write", [&] {
    write_report_tsv(out / "report.tsv", rep);
    write_json(out / "report.json", report_to_json(rep));
    return 0;
  });
  json artifacts{{"report", (out / "report.tsv").string()}, {"summary", (out / "report.json").string()}};
  if (!cfg.dataset.empty()) artifacts["dataset"] = cfg.dataset;
  write_manifest(out, "run", cfg, artifacts);
  std::cout << "wrote " << rep.rows.size() << " report rows to " << (out / "report.tsv").string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fake-news detector attacks on synthetic social contexts"};
  app.set_version_flag("--version", std::string(GAFSI_VERSION));
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
    c->add_option("--seed", o.seed, "Seed for data, splits, training and attacks");
    c->add_option("--out", o.out, "Output directory (default: $GAFSI_OUT or ./gafsi-out)");
    c->add_option("--jobs", o.jobs, "Worker threads for per-target jobs")->check(CLI::PositiveNumber);
  };
  auto data = [&](CLI::App* c) { c->add_option("--dataset", o.dataset, "Dataset document")->check(CLI::ExistingFile); };

  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  common(gen);
  auto* train = app.add_subcommand("train", "Train detectors and surrogates");
  common(train);
  data(train);
  train->add_option("--detectors", o.detectors, "Detectors to train (default: from config)")->delimiter(',');
  auto* atk = app.add_subcommand("attack", "Write attack plans");
  common(atk);
  data(atk);
  atk->add_option("--models", o.models, "Directory with surrogate checkpoints")->required();
  atk->add_option("--attack", o.attack, "random, dice, sga, gafsi or none")->capture_default_str();
  atk->add_option("--target", o.target, "News id or all-test")->capture_default_str();
  auto* ev = app.add_subcommand("eval", "Evaluate detectors on attack plans");
  common(ev);
  data(ev);
  ev->add_option("--models", o.models, "Directory with detector checkpoints");
  ev->add_option("--plans", o.plans, "Directory of plan files")->required();
  auto* sw = app.add_subcommand("sweep", "Emit alpha, budget or degree curves");
  common(sw);
  data(sw);
  sw->add_option("kind", o.kind, "alpha, budget or degree")->required();
  sw->add_option("--models", o.models, "Directory with checkpoints");
  auto* rn = app.add_subcommand("run", "Train, attack and report in one process");
  common(rn);
  data(rn);
  rn->add_option("--models", o.models, "Directory with checkpoints");

  CLI11_PARSE(app, argc, argv);
  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (name == "gen") return cmd_gen(o);
    if (name == "train") return cmd_train(o);
    if (name == "attack") return cmd_attack(o);
    if (name == "eval") return cmd_eval(o);
    if (name == "sweep") return cmd_sweep(o);
    return cmd_run(o);
  } catch (const std::exception& e) {
    std::cerr << "gafsi " << name << " failed at " << e.what() << '\n';
    return 1;
  }
}
