#pragma once

#include "gafsi/graph_builders.hpp"
#include "gafsi/neural/autodiff.hpp"

#include <cmath>
#include <deque>
#include <limits>
#include <span>

namespace gafsi::nn {

enum class Architecture { gcn, sage, gat, bidir_gcn };
enum class Task { node_classification, graph_classification };
enum class Readout { mean_pool, root_concat_mean_pool };

inline constexpr int kNumClasses = 2;
inline constexpr double kAttentionSlope = 0.2;

struct ModelSpec {
  Architecture architecture = Architecture::gcn;
  Task task = Task::graph_classification;
  int in_dim = 64;
  int hidden = 32;
  int layers = 2;
  Readout readout = Readout::mean_pool;
  std::uint64_t seed = 0;

  bool operator==(const ModelSpec&) const = default;

  void check() const {
    if (layers < 1) throw ConfigError("model needs at least one layer");
    if (hidden < 2) throw ConfigError("hidden dim must be >= 2");
    if (in_dim < 1) throw ConfigError("input dim must be positive");
    if (architecture == Architecture::bidir_gcn && task != Task::graph_classification)
      throw ConfigError("bidir_gcn is a graph classifier");
  }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  bool operator==(const EpochRecord&) const = default;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
  std::vector<EpochRecord> best_sequence;  // every snapshot that became the best
  int best_epoch = 0;
  bool operator==(const TrainingLog&) const = default;
};

struct Model {
  ModelSpec spec;
  std::vector<std::string> names;
  std::vector<Matrix> params;
  TrainingLog log;

  const Matrix& param(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return params[i];
    throw Error("model has no parameter " + name);
  }
  Matrix& param(const std::string& name) {
    return const_cast<Matrix&>(static_cast<const Model&>(*this).param(name));
  }
};

namespace detail {

inline Matrix glorot(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

inline void add_conv(Model& m, Rng& rng, Architecture arch, const std::string& prefix, int in, int out) {
  auto push = [&](const std::string& n, Matrix v) {
    m.names.push_back(prefix + n);
    m.params.push_back(std::move(v));
  };
  switch (arch) {
    case Architecture::gcn:
    case Architecture::bidir_gcn:
      push("weight", glorot(rng, in, out));
      break;
    case Architecture::sage:
      push("weight_self", glorot(rng, in, out));
      push("weight_neigh", glorot(rng, in, out));
      break;
    case Architecture::gat:
      push("weight", glorot(rng, in, out));
      push("att_src", glorot(rng, out, 1));
      push("att_dst", glorot(rng, out, 1));
      break;
  }
  push("bias", Matrix::Zero(1, out));
}

inline int layer_out(const ModelSpec& s, int l) {
  return (s.task == Task::node_classification && l == s.layers - 1) ? kNumClasses : s.hidden;
}

inline int readout_dim(const ModelSpec& s) {
  int per_stack = s.readout == Readout::mean_pool ? s.hidden : 2 * s.hidden;
  return s.architecture == Architecture::bidir_gcn ? 2 * per_stack : per_stack;
}

}  // namespace detail

/// Glorot-initialized parameters, deterministic in spec.seed.
inline Model init_model(const ModelSpec& spec) {
  spec.check();
  Model m;
  m.spec = spec;
  Rng rng(mix_seed(spec.seed, 0x6d6f64656cULL));
  const int stacks = spec.architecture == Architecture::bidir_gcn ? 2 : 1;
  for (int s = 0; s < stacks; ++s) {
    int in = spec.in_dim;
    for (int l = 0; l < spec.layers; ++l) {
      std::string prefix = (stacks == 2 ? (s == 0 ? "td." : "bu.") : "") + std::string("conv") + std::to_string(l) + ".";
      int out = detail::layer_out(spec, l);
      detail::add_conv(m, rng, spec.architecture, prefix, in, out);
      in = out;
    }
  }
  if (spec.task == Task::graph_classification) {
    m.names.push_back("head.weight");
    m.params.push_back(detail::glorot(rng, detail::readout_dim(spec), kNumClasses));
    m.names.push_back("head.bias");
    m.params.push_back(Matrix::Zero(1, kNumClasses));
  }
  return m;
}

/// D^{-1/2} (A + I) D^{-1/2} with D the row sums of A + I (or of A when
/// self loops are off). Rows with zero degree stay zero. `degree`, when
/// given, replaces the row sums of A (before the self loop is added).
inline SparseMatrix normalize_adjacency(const SparseMatrix& a, bool add_self_loops,
                                        const std::vector<double>* degree = nullptr) {
  if (a.rows() != a.cols()) throw ShapeError("adjacency must be square");
  for (Eigen::Index k = 0; k < a.nonZeros(); ++k)
    if (a.valuePtr()[k] < 0) throw Error("adjacency has a negative weight");
  SparseMatrix m = a;
  if (add_self_loops) {
    SparseMatrix eye(a.rows(), a.cols());
    eye.setIdentity();
    m = m + eye;
  }
  m.makeCompressed();
  Eigen::VectorXd d(a.rows());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    d[r] = degree ? (*degree)[static_cast<std::size_t>(r)] + (add_self_loops ? 1.0 : 0.0) : m.row(r).sum();
  }
  Eigen::VectorXd inv = d.unaryExpr([](double v) { return v > 0 ? 1.0 / std::sqrt(v) : 0.0; });
  for (Eigen::Index r = 0; r < m.outerSize(); ++r)
    for (SparseMatrix::InnerIterator it(m, r); it; ++it) it.valueRef() *= inv[r] * inv[it.col()];
  return m;
}

/// Architecture-specific operators for one graph; independent of parameters.
struct PreparedGraph {
  std::size_t n = 0;
  std::shared_ptr<SparseOperator> prop;     // gcn: normalized adjacency; sage: mean aggregator; bidir: top-down
  std::shared_ptr<SparseOperator> prop_bu;  // bidir: bottom-up
  std::shared_ptr<const NeighborLists> neighbors;  // gat
  std::optional<std::size_t> root;
  std::vector<double> degree;  // gcn: degree of A + I
};

struct PrepareOptions {
  std::vector<std::pair<std::size_t, std::size_t>> extra_entries;  // stored (as zero) in the gcn operator
  const std::vector<double>* degree = nullptr;                     // degree of A without self loops
  bool track = false;
};

namespace detail {

using Triplet = Eigen::Triplet<double>;

// Undirected view: a_ij = a_ji = max of the listed weights in either direction.
inline SparseMatrix symmetric_adjacency(const DerivedGraph& g,
                                        const std::vector<std::pair<std::size_t, std::size_t>>& extra) {
  std::vector<Triplet> trips;
  trips.reserve(2 * (g.edges.size() + extra.size()));
  for (const auto& e : g.edges) {
    trips.emplace_back(static_cast<int>(e.src), static_cast<int>(e.dst), e.weight);
    trips.emplace_back(static_cast<int>(e.dst), static_cast<int>(e.src), e.weight);
  }
  for (const auto& [i, j] : extra) {
    trips.emplace_back(static_cast<int>(i), static_cast<int>(j), 0.0);
    trips.emplace_back(static_cast<int>(j), static_cast<int>(i), 0.0);
  }
  const auto n = static_cast<Eigen::Index>(g.size());
  SparseMatrix a(n, n);
  a.setFromTriplets(trips.begin(), trips.end(), [](double x, double y) { return std::max(x, y); });
  a.makeCompressed();
  return a;
}

// Directed view in message-passing orientation: row dst gathers from src.
inline SparseMatrix directed_adjacency(const DerivedGraph& g) {
  std::vector<Triplet> trips;
  for (const auto& e : g.edges) trips.emplace_back(static_cast<int>(e.dst), static_cast<int>(e.src), e.weight);
  const auto n = static_cast<Eigen::Index>(g.size());
  SparseMatrix a(n, n);
  a.setFromTriplets(trips.begin(), trips.end(), [](double x, double y) { return std::max(x, y); });
  a.makeCompressed();
  return a;
}

inline std::shared_ptr<SparseOperator> make_op(SparseMatrix m, bool track) {
  auto op = std::make_shared<SparseOperator>();
  op->matrix = std::move(m);
  op->matrix.makeCompressed();
  op->track = track;
  if (track) op->reset_grad();
  return op;
}

}  // namespace detail

inline PreparedGraph prepare(const ModelSpec& spec, const DerivedGraph& g, const PrepareOptions& opt = {}) {
  PreparedGraph p;
  p.n = g.size();
  p.root = g.root;
  if (static_cast<std::size_t>(g.features.rows()) != g.size()) throw ShapeError("feature rows must match node count");
  switch (spec.architecture) {
    case Architecture::gcn: {
      SparseMatrix a = detail::symmetric_adjacency(g, opt.extra_entries);
      SparseMatrix norm = normalize_adjacency(a, true, opt.degree);
      p.degree.resize(p.n);
      for (std::size_t i = 0; i < p.n; ++i)
        p.degree[i] = opt.degree ? (*opt.degree)[i] + 1.0 : a.row(static_cast<Eigen::Index>(i)).sum() + 1.0;
      p.prop = detail::make_op(std::move(norm), opt.track);
      break;
    }
    case Architecture::sage: {
      SparseMatrix a = detail::symmetric_adjacency(g, {});
      for (Eigen::Index r = 0; r < a.outerSize(); ++r) {
        double d = opt.degree ? (*opt.degree)[static_cast<std::size_t>(r)] : a.row(r).sum();
        for (SparseMatrix::InnerIterator it(a, r); it; ++it) it.valueRef() = d > 0 ? it.value() / d : 0.0;
      }
      p.prop = detail::make_op(std::move(a), false);
      break;
    }
    case Architecture::gat: {
      SparseMatrix a = detail::symmetric_adjacency(g, {});
      auto nl = std::make_shared<NeighborLists>();
      nl->of.resize(p.n);
      for (Eigen::Index r = 0; r < a.outerSize(); ++r) {
        auto& row = nl->of[static_cast<std::size_t>(r)];
        row.push_back(static_cast<std::size_t>(r));
        for (SparseMatrix::InnerIterator it(a, r); it; ++it)
          if (it.col() != r) row.push_back(static_cast<std::size_t>(it.col()));
      }
      p.neighbors = std::move(nl);
      break;
    }
    case Architecture::bidir_gcn: {
      auto [td, bu] = build_bidir_views(g);
      p.prop = detail::make_op(normalize_adjacency(detail::directed_adjacency(td), true), false);
      p.prop_bu = detail::make_op(normalize_adjacency(detail::directed_adjacency(bu), true), false);
      break;
    }
  }
  return p;
}

namespace detail {

struct ParamCursor {
  const std::vector<Var>& vars;
  std::size_t next = 0;
  Var take() { return vars.at(next++); }
};

inline Var conv(Tape& t, Architecture arch, ParamCursor& pc, const std::shared_ptr<SparseOperator>& op,
                const std::shared_ptr<const NeighborLists>& nbrs, Var h) {
  switch (arch) {
    case Architecture::gcn:
    case Architecture::bidir_gcn: {
      Var w = pc.take(), b = pc.take();
      return add_row(t, spmm(t, op, matmul(t, h, w)), b);
    }
    case Architecture::sage: {
      Var ws = pc.take(), wn = pc.take(), b = pc.take();
      Var self = matmul(t, h, ws);
      Var neigh = matmul(t, spmm(t, op, h), wn);
      return add_row(t, add(t, self, neigh), b);
    }
    case Architecture::gat: {
      Var w = pc.take(), as = pc.take(), ad = pc.take(), b = pc.take();
      Var z = matmul(t, h, w);
      return add_row(t, attend(t, nbrs, z, as, ad, kAttentionSlope), b);
    }
  }
  throw UnsupportedError("unknown architecture");
}

inline Var stack(Tape& t, const ModelSpec& s, ParamCursor& pc, const std::shared_ptr<SparseOperator>& op,
                 const std::shared_ptr<const NeighborLists>& nbrs, Var x) {
  Var h = x;
  for (int l = 0; l < s.layers; ++l) {
    h = conv(t, s.architecture, pc, op, nbrs, h);
    bool last = l == s.layers - 1;
    if (!(last && s.task == Task::node_classification)) h = relu(t, h);
  }
  return h;
}

inline Var readout(Tape& t, const ModelSpec& s, const PreparedGraph& g, Var h) {
  Var pooled = mean_rows(t, h);
  if (s.readout == Readout::root_concat_mean_pool) {
    if (!g.root) throw ShapeError("root readout on a graph without a root");
    pooled = concat_cols(t, select_row(t, h, *g.root), pooled);
  }
  return pooled;
}

}  // namespace detail

/// Class logits: n x 2 for node classification, 1 x 2 for graph classification.
inline Var logits(Tape& t, const Model& m, const std::vector<Var>& params, const PreparedGraph& g, Var x) {
  const auto& s = m.spec;
  if (t.value(x).cols() != s.in_dim)
    throw ShapeError("feature dim " + std::to_string(t.value(x).cols()) + " does not match model input " +
                     std::to_string(s.in_dim));
  if (static_cast<std::size_t>(t.value(x).rows()) != g.n) throw ShapeError("feature rows do not match graph");
  detail::ParamCursor pc{params};
  if (s.architecture == Architecture::bidir_gcn) {
    Var td = detail::stack(t, s, pc, g.prop, nullptr, x);
    Var bu = detail::stack(t, s, pc, g.prop_bu, nullptr, x);
    Var pooled = concat_cols(t, detail::readout(t, s, g, td), detail::readout(t, s, g, bu));
    Var w = pc.take(), b = pc.take();
    return add_row(t, matmul(t, pooled, w), b);
  }
  Var h = detail::stack(t, s, pc, g.prop, g.neighbors, x);
  if (s.task == Task::node_classification) return h;
  Var pooled = detail::readout(t, s, g, h);
  Var w = pc.take(), b = pc.take();
  return add_row(t, matmul(t, pooled, w), b);
}

inline std::vector<Var> constant_params(Tape& t, const Model& m) {
  std::vector<Var> v;
  v.reserve(m.params.size());
  for (const auto& p : m.params) v.push_back(t.constant(p));
  return v;
}

inline Matrix forward(const Model& m, const PreparedGraph& g, const Matrix& x) {
  Tape t;
  auto params = constant_params(t, m);
  Matrix out = t.value(logits(t, m, params, g, t.constant(x)));
  require_finite(out, "forward");
  return out;
}

/// Class scores per node (node task) or for the whole graph (graph task).
inline Matrix forward(const Model& m, const DerivedGraph& g) { return forward(m, prepare(m.spec, g), g.features); }

// ---------------------------------------------------------------------------
// Receptive-field evaluation for node tasks.

/// Undirected weighted adjacency lists of a node-task graph. Weights combine
/// by max, matching the detectors' symmetric view.
class Neighborhood {
 public:
  explicit Neighborhood(const DerivedGraph& g) : adj_(g.size()) {
    for (const auto& e : g.edges) add_edge(e.src, e.dst, e.weight);
  }

  void add_edge(std::size_t i, std::size_t j, double w) {
    upsert(i, j, w);
    if (i != j) upsert(j, i, w);
  }

  std::optional<double> weight(std::size_t i, std::size_t j) const {
    for (const auto& [k, v] : adj_[i])
      if (k == j) return v;
    return std::nullopt;
  }

  /// Overwrites (or inserts) the symmetric entry; nullopt removes it.
  void set_weight(std::size_t i, std::size_t j, std::optional<double> w) {
    assign(i, j, w);
    if (i != j) assign(j, i, w);
  }

  const std::vector<std::pair<std::size_t, double>>& of(std::size_t i) const { return adj_[i]; }
  std::size_t size() const { return adj_.size(); }

  double degree(std::size_t i) const {
    double d = 0.0;
    for (const auto& [j, w] : adj_[i]) d += w;
    return d;
  }

 private:
  void upsert(std::size_t i, std::size_t j, double w) {
    for (auto& [k, v] : adj_[i])
      if (k == j) {
        v = std::max(v, w);
        return;
      }
    adj_[i].emplace_back(j, w);
  }
  void assign(std::size_t i, std::size_t j, std::optional<double> w) {
    auto& row = adj_[i];
    auto it = std::find_if(row.begin(), row.end(), [j](const auto& e) { return e.first == j; });
    if (!w) {
      if (it != row.end()) row.erase(it);
    } else if (it != row.end()) {
      it->second = *w;
    } else {
      row.emplace_back(j, *w);
    }
  }
  std::vector<std::vector<std::pair<std::size_t, double>>> adj_;
};

/// Nodes within `hops` of a center, with full-graph degrees, so an L-layer
/// model evaluated on it reproduces the center's full-graph output exactly.
struct LocalGraph {
  DerivedGraph graph;
  std::vector<double> degree;
  std::vector<std::size_t> to_global;
  std::unordered_map<std::size_t, std::size_t> to_local;
  std::size_t center = 0;
};

inline LocalGraph extract_ball(const DerivedGraph& g, const Neighborhood& nb, std::size_t center, int hops,
                               const std::vector<std::pair<std::size_t, std::size_t>>& virtual_edges = {}) {
  if (center >= g.size()) throw Error("center node out of range");
  std::unordered_map<std::size_t, std::vector<std::size_t>> extra;
  for (const auto& [i, j] : virtual_edges) {
    extra[i].push_back(j);
    extra[j].push_back(i);
  }
  LocalGraph lg;
  lg.to_local.emplace(center, 0);
  lg.to_global.push_back(center);
  std::vector<std::size_t> frontier{center};
  for (int h = 0; h < hops && !frontier.empty(); ++h) {
    std::vector<std::size_t> next;
    auto visit = [&](std::size_t j) {
      if (lg.to_local.emplace(j, lg.to_global.size()).second) {
        lg.to_global.push_back(j);
        next.push_back(j);
      }
    };
    for (auto i : frontier) {
      for (const auto& [j, w] : nb.of(i)) visit(j);
      if (auto it = extra.find(i); it != extra.end())
        for (auto j : it->second) visit(j);
    }
    frontier = std::move(next);
  }
  // A virtual edge leaving the ball still moves its inner endpoint's degree.
  for (const auto& [i, j] : virtual_edges)
    for (auto [in, out] : {std::pair{i, j}, std::pair{j, i}})
      if (lg.to_local.count(in) && lg.to_local.emplace(out, lg.to_global.size()).second) lg.to_global.push_back(out);
  auto& sub = lg.graph;
  sub.kind = g.kind;
  sub.root = std::nullopt;
  sub.features.resize(static_cast<Eigen::Index>(lg.to_global.size()), g.features.cols());
  lg.degree.resize(lg.to_global.size());
  for (std::size_t l = 0; l < lg.to_global.size(); ++l) {
    const std::size_t gi = lg.to_global[l];
    sub.ids.push_back(g.ids[gi]);
    sub.roles.push_back(g.roles[gi]);
    sub.features.row(static_cast<Eigen::Index>(l)) = g.features.row(static_cast<Eigen::Index>(gi));
    lg.degree[l] = nb.degree(gi);
    for (const auto& [j, w] : nb.of(gi)) {
      auto it = lg.to_local.find(j);
      if (it != lg.to_local.end() && (l < it->second || (l == it->second))) sub.edges.push_back({l, it->second, w});
    }
  }
  return lg;
}

/// Scores of one node computed on its receptive field.
inline RowVector node_logits(const Model& m, const DerivedGraph& g, const Neighborhood& nb, std::size_t node) {
  if (m.spec.task != Task::node_classification) throw UnsupportedError("node_logits needs a node classifier");
  LocalGraph lg = extract_ball(g, nb, node, m.spec.layers);
  PrepareOptions opt;
  opt.degree = &lg.degree;
  Matrix out = forward(m, prepare(m.spec, lg.graph, opt), lg.graph.features);
  return out.row(0);
}

// ---------------------------------------------------------------------------
// Objectives and gradients.

struct Objective {
  enum class Kind { class_score, xent_loss } kind = Kind::class_score;
  int cls = 0;                      // class for class_score, label for xent_loss
  std::optional<std::size_t> node;  // required for node tasks

  static Objective class_score(int c, std::optional<std::size_t> node = std::nullopt) {
    return {Kind::class_score, c, node};
  }
  static Objective xent_loss(int label, std::optional<std::size_t> node = std::nullopt) {
    return {Kind::xent_loss, label, node};
  }
};

namespace detail {

inline Var objective_var(Tape& t, const Model& m, Var z, const Objective& obj, std::size_t row_override) {
  if (obj.cls < 0 || obj.cls >= kNumClasses) throw Error("objective class out of range");
  std::size_t row = 0;
  if (m.spec.task == Task::node_classification) {
    if (!obj.node) throw ShapeError("node-task objective needs a node (non-scalar objective)");
    row = row_override;
  } else if (obj.node) {
    throw ShapeError("graph-task objective cannot name a node");
  }
  if (obj.kind == Objective::Kind::class_score) return element(t, z, row, static_cast<std::size_t>(obj.cls));
  return cross_entropy(t, z, {{row, obj.cls}});
}

}  // namespace detail

/// Exact d(objective)/dX on a prepared graph.
inline Matrix grad_wrt_features(const Model& m, const PreparedGraph& g, const Matrix& x, const Objective& obj,
                                std::size_t objective_row = 0) {
  Tape t;
  auto params = constant_params(t, m);
  Var xv = t.variable(x);
  Var z = logits(t, m, params, g, xv);
  Var o = detail::objective_var(t, m, z, obj, objective_row);
  t.backward(o);
  Matrix grad = t.gradient(xv);
  require_finite(grad, "feature gradient");
  return grad;
}

/// Exact gradient of a scalar objective with respect to every feature entry.
inline Matrix grad_wrt_features(const Model& m, const DerivedGraph& g, const Objective& obj) {
  if (m.spec.task == Task::graph_classification) return grad_wrt_features(m, prepare(m.spec, g), g.features, obj);
  if (!obj.node) throw ShapeError("node-task objective needs a node (non-scalar objective)");
  Neighborhood nb(g);
  LocalGraph lg = extract_ball(g, nb, *obj.node, m.spec.layers);
  PrepareOptions opt;
  opt.degree = &lg.degree;
  Matrix local = grad_wrt_features(m, prepare(m.spec, lg.graph, opt), lg.graph.features, obj, 0);
  Matrix full = Matrix::Zero(g.features.rows(), g.features.cols());
  for (std::size_t l = 0; l < lg.to_global.size(); ++l)
    full.row(static_cast<Eigen::Index>(lg.to_global[l])) = local.row(static_cast<Eigen::Index>(l));
  return full;
}

namespace detail {

inline double lookup(const SparseMatrix& m, const std::vector<double>& vals, std::size_t r, std::size_t c) {
  const auto* outer = m.outerIndexPtr();
  const auto* inner = m.innerIndexPtr();
  auto begin = inner + outer[r], end = inner + outer[r + 1];
  auto it = std::lower_bound(begin, end, static_cast<int>(c));
  if (it == end || *it != static_cast<int>(c)) return 0.0;
  return vals[static_cast<std::size_t>(it - inner)];
}

// Chain rule from d/d(normalized entries) to d/d(raw symmetric entry a_ij),
// including the dependence of both degrees on a_ij.
inline std::vector<double> adjacency_chain(const PreparedGraph& p,
                                           const std::vector<std::pair<std::size_t, std::size_t>>& cand) {
  const SparseMatrix& norm = p.prop->matrix;
  const auto& g = p.prop->value_grad;
  std::vector<double> ddeg(p.n, 0.0);
  const auto* outer = norm.outerIndexPtr();
  const auto* inner = norm.innerIndexPtr();
  const auto* val = norm.valuePtr();
  for (Eigen::Index r = 0; r < norm.outerSize(); ++r)
    for (auto k = outer[r]; k < outer[r + 1]; ++k) {
      double term = g[static_cast<std::size_t>(k)] * val[k];
      ddeg[static_cast<std::size_t>(r)] += term;
      ddeg[static_cast<std::size_t>(inner[k])] += term;
    }
  for (std::size_t i = 0; i < p.n; ++i) ddeg[i] *= -0.5 / p.degree[i];

  std::vector<double> out;
  out.reserve(cand.size());
  for (const auto& [i, j] : cand) {
    const double scale = 1.0 / std::sqrt(p.degree[i] * p.degree[j]);
    if (i == j) {
      out.push_back(lookup(norm, g, i, i) * scale + ddeg[i]);
    } else {
      out.push_back((lookup(norm, g, i, j) + lookup(norm, g, j, i)) * scale + ddeg[i] + ddeg[j]);
    }
  }
  return out;
}

inline std::vector<double> grad_adjacency_prepared(const Model& m, const DerivedGraph& g,
                                                   const std::vector<std::pair<std::size_t, std::size_t>>& cand,
                                                   const Objective& obj, const std::vector<double>* degree,
                                                   std::size_t objective_row) {
  PrepareOptions opt;
  opt.extra_entries = cand;
  opt.degree = degree;
  opt.track = true;
  PreparedGraph p = prepare(m.spec, g, opt);
  Tape t;
  auto params = constant_params(t, m);
  Var z = logits(t, m, params, p, t.constant(g.features));
  Var o = objective_var(t, m, z, obj, objective_row);
  t.backward(o);
  auto out = adjacency_chain(p, cand);
  for (double v : out)
    if (!std::isfinite(v)) throw NumericError("non-finite adjacency gradient");
  return out;
}

}  // namespace detail

/// d(objective)/d(a_ij) for each candidate entry of the raw (undirected)
/// adjacency, evaluated at its current value (0 for absent edges). Only GCN
/// models supply these.
inline std::vector<double> grad_wrt_adjacency(const Model& m, const DerivedGraph& g, const Neighborhood& nb,
                                              const std::vector<std::pair<std::size_t, std::size_t>>& candidates,
                                              const Objective& obj) {
  if (m.spec.architecture != Architecture::gcn)
    throw UnsupportedError("adjacency gradients are only available for gcn models");
  for (const auto& [i, j] : candidates)
    if (i >= g.size() || j >= g.size()) throw Error("candidate edge out of range");
  if (m.spec.task == Task::graph_classification)
    return detail::grad_adjacency_prepared(m, g, candidates, obj, nullptr, 0);

  if (!obj.node) throw ShapeError("node-task objective needs a node (non-scalar objective)");
  LocalGraph lg = extract_ball(g, nb, *obj.node, m.spec.layers, candidates);
  std::vector<std::pair<std::size_t, std::size_t>> local_cand;
  std::vector<std::size_t> inside;  // positions of candidates touching the ball
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    auto a = lg.to_local.find(candidates[k].first), b = lg.to_local.find(candidates[k].second);
    if (a != lg.to_local.end() && b != lg.to_local.end()) {
      local_cand.emplace_back(a->second, b->second);
      inside.push_back(k);
    }
  }
  std::vector<double> out(candidates.size(), 0.0);
  if (local_cand.empty()) return out;
  auto local = detail::grad_adjacency_prepared(m, lg.graph, local_cand, obj, &lg.degree, 0);
  for (std::size_t k = 0; k < inside.size(); ++k) out[inside[k]] = local[k];
  return out;
}

inline std::vector<double> grad_wrt_adjacency(const Model& m, const DerivedGraph& g,
                                              const std::vector<std::pair<std::size_t, std::size_t>>& candidates,
                                              const Objective& obj) {
  if (m.spec.task == Task::graph_classification) {
    if (m.spec.architecture != Architecture::gcn)
      throw UnsupportedError("adjacency gradients are only available for gcn models");
    return detail::grad_adjacency_prepared(m, g, candidates, obj, nullptr, 0);
  }
  return grad_wrt_adjacency(m, g, Neighborhood(g), candidates, obj);
}

}  // namespace gafsi::nn
