#pragma once

#include "gafsi/neural/model.hpp"

#include <numeric>
#include <set>

namespace gafsi::nn {

struct TrainConfig {
  double learning_rate = 0.01;
  int max_epochs = 200;
  int patience = 20;
  int batch_size = 16;  // graphs per optimizer step (graph task)
};

class Adam {
 public:
  Adam(const std::vector<Matrix>& params, double lr) : lr_(lr) {
    for (const auto& p : params) {
      m_.push_back(Matrix::Zero(p.rows(), p.cols()));
      v_.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
  }

  void step(std::vector<Matrix>& params, const std::vector<Matrix>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, t_), c2 = 1.0 - std::pow(kBeta2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * grads[i];
      v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * grads[i].cwiseProduct(grads[i]);
      params[i].array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + kEps);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  double lr_;
  int t_ = 0;
  std::vector<Matrix> m_, v_;
};

namespace detail {

inline void check_labels(std::span<const int> train_labels, std::size_t val_size) {
  if (train_labels.empty()) throw Error("empty training split");
  if (val_size == 0) throw Error("empty validation split");
  std::set<int> classes(train_labels.begin(), train_labels.end());
  for (int c : classes)
    if (c < 0 || c >= kNumClasses) throw Error("label outside {0,1}");
  if (classes.size() < 2) throw Error("training data contains a single class");
}

// Snapshot selection: higher validation accuracy, or equal accuracy with
// lower training loss; never a snapshot with higher training loss than the
// current best.
struct BestTracker {
  double acc = -1.0;
  double loss = std::numeric_limits<double>::infinity();
  int since = 0;

  bool offer(double val_acc, double train_loss) {
    bool better = train_loss <= loss && (val_acc > acc || (val_acc == acc && train_loss < loss));
    if (better) {
      acc = val_acc;
      loss = train_loss;
      since = 0;
    } else {
      ++since;
    }
    return better;
  }
};

inline std::vector<Var> variable_params(Tape& t, const Model& m) {
  std::vector<Var> v;
  for (const auto& p : m.params) v.push_back(t.variable(p));
  return v;
}

inline int argmax_row(const Matrix& z, Eigen::Index r) { return z(r, 1) > z(r, 0) ? 1 : 0; }

}  // namespace detail

/// Full-batch node classifier; labels are given for the listed nodes only.
inline Model train_node_classifier(const ModelSpec& spec, const DerivedGraph& g, std::span<const std::size_t> train_nodes,
                                   std::span<const int> train_labels, std::span<const std::size_t> val_nodes,
                                   std::span<const int> val_labels, const TrainConfig& cfg = {}) {
  if (spec.task != Task::node_classification) throw ConfigError("spec is not a node classifier");
  if (train_nodes.size() != train_labels.size() || val_nodes.size() != val_labels.size())
    throw ShapeError("node/label count mismatch");
  detail::check_labels(train_labels, val_nodes.size());
  Model m = init_model(spec);
  PreparedGraph p = prepare(spec, g);
  std::vector<std::pair<std::size_t, int>> targets;
  for (std::size_t i = 0; i < train_nodes.size(); ++i) targets.emplace_back(train_nodes[i], train_labels[i]);

  Adam opt(m.params, cfg.learning_rate);
  detail::BestTracker best;
  Model snapshot = m;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    {
      Tape t;
      auto vars = detail::variable_params(t, m);
      Var loss = cross_entropy(t, logits(t, m, vars, p, t.constant(g.features)), targets);
      t.backward(loss);
      std::vector<Matrix> grads;
      for (auto v : vars) grads.push_back(t.gradient(v));
      opt.step(m.params, grads);
    }
    Tape t;
    auto consts = constant_params(t, m);
    Var z = logits(t, m, consts, p, t.constant(g.features));
    double train_loss = t.value(cross_entropy(t, z, targets))(0, 0);
    require_finite(t.value(z), "training forward");
    int correct = 0;
    for (std::size_t i = 0; i < val_nodes.size(); ++i)
      correct += detail::argmax_row(t.value(z), static_cast<Eigen::Index>(val_nodes[i])) == val_labels[i];
    double acc = static_cast<double>(correct) / static_cast<double>(val_nodes.size());
    EpochRecord rec{epoch, train_loss, acc};
    m.log.epochs.push_back(rec);
    if (best.offer(acc, train_loss)) {
      snapshot.params = m.params;
      m.log.best_sequence.push_back(rec);
      m.log.best_epoch = epoch;
    }
    if (best.since >= cfg.patience) break;
  }
  snapshot.log = m.log;
  return snapshot;
}

/// Graph classifier trained over per-graph passes, averaging gradients over
/// shuffled groups of `batch_size` graphs.
inline Model train_graph_classifier(const ModelSpec& spec, const std::vector<DerivedGraph>& train_graphs,
                                    std::span<const int> train_labels, const std::vector<DerivedGraph>& val_graphs,
                                    std::span<const int> val_labels, const TrainConfig& cfg = {}) {
  if (spec.task != Task::graph_classification) throw ConfigError("spec is not a graph classifier");
  if (train_graphs.size() != train_labels.size() || val_graphs.size() != val_labels.size())
    throw ShapeError("graph/label count mismatch");
  detail::check_labels(train_labels, val_graphs.size());
  Model m = init_model(spec);
  std::vector<PreparedGraph> tp, vp;
  for (const auto& g : train_graphs) tp.push_back(prepare(spec, g));
  for (const auto& g : val_graphs) vp.push_back(prepare(spec, g));

  Rng rng(mix_seed(spec.seed, 0x747261696eULL));
  std::vector<std::size_t> order(train_graphs.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = static_cast<std::size_t>(std::max(1, cfg.batch_size));

  Adam opt(m.params, cfg.learning_rate);
  detail::BestTracker best;
  Model snapshot = m;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::vector<Matrix> grads;
      for (const auto& p : m.params) grads.push_back(Matrix::Zero(p.rows(), p.cols()));
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        Tape t;
        auto vars = detail::variable_params(t, m);
        Var loss = cross_entropy(t, logits(t, m, vars, tp[i], t.constant(train_graphs[i].features)),
                                 {{0, train_labels[i]}});
        t.backward(loss);
        for (std::size_t q = 0; q < vars.size(); ++q) grads[q] += t.gradient(vars[q]);
      }
      for (auto& gr : grads) gr /= static_cast<double>(end - start);
      opt.step(m.params, grads);
    }

    double train_loss = 0.0;
    for (std::size_t i = 0; i < tp.size(); ++i) {
      Tape t;
      auto consts = constant_params(t, m);
      Var z = logits(t, m, consts, tp[i], t.constant(train_graphs[i].features));
      train_loss += t.value(cross_entropy(t, z, {{0, train_labels[i]}}))(0, 0);
    }
    train_loss /= static_cast<double>(tp.size());
    if (!std::isfinite(train_loss)) throw NumericError("non-finite training loss");
    int correct = 0;
    for (std::size_t i = 0; i < vp.size(); ++i)
      correct += detail::argmax_row(forward(m, vp[i], val_graphs[i].features), 0) == val_labels[i];
    double acc = static_cast<double>(correct) / static_cast<double>(vp.size());
    EpochRecord rec{epoch, train_loss, acc};
    m.log.epochs.push_back(rec);
    if (best.offer(acc, train_loss)) {
      snapshot.params = m.params;
      m.log.best_sequence.push_back(rec);
      m.log.best_epoch = epoch;
    }
    if (best.since >= cfg.patience) break;
  }
  snapshot.log = m.log;
  return snapshot;
}

inline int predict_graph(const Model& m, const DerivedGraph& g) {
  return detail::argmax_row(forward(m, g), 0);
}

}  // namespace gafsi::nn
