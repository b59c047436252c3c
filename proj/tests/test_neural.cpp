#include "gafsi/io.hpp"
#include "gafsi/neural/train.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace gafsi;
using namespace gafsi::nn;

namespace {

constexpr double kRtol = 1e-4;
constexpr double kAtol = 1e-7;
constexpr double kStep = 1e-6;

bool close(double g, double fd, double rtol = kRtol, double atol = kAtol) {
  return std::abs(g - fd) <= rtol * std::max(std::abs(g), std::abs(fd)) + atol;
}

DerivedGraph random_graph(std::uint64_t seed, std::size_t n, int dim, double p_edge, GraphKind kind) {
  Rng rng(seed);
  DerivedGraph g;
  g.kind = kind;
  for (std::size_t i = 0; i < n; ++i) {
    g.ids.push_back("v" + std::to_string(i));
    g.roles.push_back(NodeRole::post);
  }
  if (kind == GraphKind::prop_tree) {
    for (std::size_t i = 1; i < n; ++i) g.edges.push_back({uniform_index(rng, i), i, 1.0});
    g.root = 0;
  } else {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (uniform01(rng) < p_edge) g.edges.push_back({i, j, 1.0 + std::floor(3 * uniform01(rng))});
  }
  g.features = Matrix::Random(static_cast<Eigen::Index>(n), dim);
  return g;
}

ModelSpec spec_of(Architecture a, Task task, int in_dim, std::uint64_t seed = 1) {
  ModelSpec s;
  s.architecture = a;
  s.task = task;
  s.in_dim = in_dim;
  s.hidden = 8;
  s.seed = seed;
  return s;
}

double scalar(const Model& m, const DerivedGraph& g, const Objective& obj) {
  Matrix z = forward(m, g);
  std::size_t row = obj.node.value_or(0);
  RowVector r = z.row(static_cast<Eigen::Index>(row));
  if (obj.kind == Objective::Kind::class_score) return r[obj.cls];
  double mx = r.maxCoeff();
  return -(r[obj.cls] - mx - std::log((r.array() - mx).exp().sum()));
}

// Independent dense GCN forward on an explicit symmetric adjacency.
Matrix dense_gcn(const Model& m, const Matrix& a, const Matrix& x) {
  const Eigen::Index n = a.rows();
  Matrix ah = a + Matrix::Identity(n, n);
  Eigen::VectorXd d = ah.rowwise().sum();
  Eigen::VectorXd inv = d.array().rsqrt();
  Matrix norm = inv.asDiagonal() * ah * inv.asDiagonal();
  Matrix h = x;
  for (int l = 0; l < m.spec.layers; ++l) {
    const std::string p = "conv" + std::to_string(l) + ".";
    h = norm * h * m.param(p + "weight");
    h.rowwise() += m.param(p + "bias").row(0);
    bool last = l == m.spec.layers - 1;
    if (!(last && m.spec.task == Task::node_classification)) h = h.cwiseMax(0.0);
  }
  if (m.spec.task == Task::node_classification) return h;
  Matrix pooled = h.colwise().mean();
  Matrix out = pooled * m.param("head.weight");
  out.rowwise() += m.param("head.bias").row(0);
  return out;
}

double dense_objective(const Model& m, const Matrix& a, const Matrix& x, const Objective& obj) {
  Matrix z = dense_gcn(m, a, x);
  RowVector r = z.row(static_cast<Eigen::Index>(obj.node.value_or(0)));
  if (obj.kind == Objective::Kind::class_score) return r[obj.cls];
  double mx = r.maxCoeff();
  return -(r[obj.cls] - mx - std::log((r.array() - mx).exp().sum()));
}

Matrix symmetric_dense(const DerivedGraph& g) {
  Matrix a = Matrix::Zero(static_cast<Eigen::Index>(g.size()), static_cast<Eigen::Index>(g.size()));
  for (const auto& e : g.edges) {
    auto i = static_cast<Eigen::Index>(e.src), j = static_cast<Eigen::Index>(e.dst);
    a(i, j) = std::max(a(i, j), e.weight);
    a(j, i) = std::max(a(j, i), e.weight);
  }
  return a;
}

std::vector<std::size_t> hop_distance(const DerivedGraph& g, std::size_t from) {
  Neighborhood nb(g);
  std::vector<std::size_t> d(g.size(), SIZE_MAX);
  d[from] = 0;
  std::deque<std::size_t> q{from};
  while (!q.empty()) {
    auto i = q.front();
    q.pop_front();
    for (const auto& [j, w] : nb.of(i))
      if (d[j] == SIZE_MAX) {
        d[j] = d[i] + 1;
        q.push_back(j);
      }
  }
  return d;
}

}  // namespace

TEST(NormalizeAdjacency, SingleEdgeAndIsolatedNode) {
  SparseMatrix a(2, 2);
  a.insert(0, 1) = 1.0;
  a.insert(1, 0) = 1.0;
  Matrix n = normalize_adjacency(a, true);
  EXPECT_TRUE(n.isApprox(Matrix::Constant(2, 2, 0.5)));
  SparseMatrix iso(1, 1);
  EXPECT_DOUBLE_EQ(Matrix(normalize_adjacency(iso, true))(0, 0), 1.0);
  SparseMatrix neg(2, 2);
  neg.insert(0, 1) = -1.0;
  EXPECT_THROW(normalize_adjacency(neg, true), Error);
}

TEST(Autodiff, MeanPoolExample) {
  Tape t;
  Matrix h(3, 2);
  h << 1, 2, 3, 4, 5, 6;
  Var v = t.variable(h);
  Var p = mean_rows(t, v);
  EXPECT_EQ(t.value(p), (Matrix(1, 2) << 3, 4).finished());
  t.backward(element(t, p, 0, 1));
  EXPECT_TRUE(t.gradient(v).col(1).isApprox(Eigen::VectorXd::Constant(3, 1.0 / 3)));
  EXPECT_THROW(t.backward(p), ShapeError);
}

TEST(Forward, GcnMatchesDenseOracle) {
  for (auto task : {Task::node_classification, Task::graph_classification}) {
    auto g = random_graph(3, 12, 5, 0.25, GraphKind::engagement);
    Model m = init_model(spec_of(Architecture::gcn, task, 5));
    EXPECT_TRUE(forward(m, g).isApprox(dense_gcn(m, symmetric_dense(g), g.features), 1e-12));
  }
}

TEST(Forward, ShapeErrors) {
  auto g = random_graph(1, 5, 4, 0.5, GraphKind::engagement);
  Model m = init_model(spec_of(Architecture::gcn, Task::graph_classification, 6));
  EXPECT_THROW(forward(m, g), ShapeError);
  EXPECT_THROW(init_model(spec_of(Architecture::bidir_gcn, Task::node_classification, 4)), ConfigError);
}

class FeatureGradient : public ::testing::TestWithParam<std::tuple<Architecture, Task>> {};

TEST_P(FeatureGradient, MatchesCentralDifferences) {
  auto [arch, task] = GetParam();
  const bool tree = task == Task::graph_classification;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto g = random_graph(10 + seed, 9, 4, 0.3, tree ? GraphKind::prop_tree : GraphKind::engagement);
    Model m = init_model(spec_of(arch, task, 4, seed));
    std::optional<std::size_t> node;
    if (!tree) node = seed % g.size();
    for (auto obj : {Objective::class_score(1, node), Objective::xent_loss(0, node)}) {
      Matrix grad = grad_wrt_features(m, g, obj);
      for (Eigen::Index i = 0; i < g.features.rows(); ++i)
        for (Eigen::Index j = 0; j < g.features.cols(); ++j) {
          auto gp = g, gm = g;
          gp.features(i, j) += kStep;
          gm.features(i, j) -= kStep;
          double fd = (scalar(m, gp, obj) - scalar(m, gm, obj)) / (2 * kStep);
          EXPECT_TRUE(close(grad(i, j), fd)) << i << "," << j << " got " << grad(i, j) << " fd " << fd;
        }
    }
  }
}

INSTANTIATE_TEST_SUITE_P(
    AllArchitectures, FeatureGradient,
    ::testing::Values(std::tuple{Architecture::gcn, Task::node_classification},
                      std::tuple{Architecture::sage, Task::node_classification},
                      std::tuple{Architecture::gat, Task::node_classification},
                      std::tuple{Architecture::gcn, Task::graph_classification},
                      std::tuple{Architecture::sage, Task::graph_classification},
                      std::tuple{Architecture::gat, Task::graph_classification},
                      std::tuple{Architecture::bidir_gcn, Task::graph_classification}));

TEST(AdjacencyGradient, MatchesDenseOracleDifferences) {
  for (auto task : {Task::node_classification, Task::graph_classification}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      auto g = random_graph(40 + seed, 10, 4, 0.2, GraphKind::engagement);
      Model m = init_model(spec_of(Architecture::gcn, task, 4, seed));
      std::optional<std::size_t> node;
      if (task == Task::node_classification) node = 2;
      auto obj = Objective::xent_loss(1, node);
      std::vector<std::pair<std::size_t, std::size_t>> cand;
      for (std::size_t i = 0; i < g.size(); ++i)
        for (std::size_t j = i; j < g.size(); ++j) cand.emplace_back(i, j);
      auto grads = grad_wrt_adjacency(m, g, cand, obj);
      Matrix a = symmetric_dense(g);
      for (std::size_t k = 0; k < cand.size(); ++k) {
        auto [i, j] = cand[k];
        auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
        Matrix ap = a, am = a;
        ap(ii, jj) += kStep;
        am(ii, jj) -= kStep;
        if (i != j) {
          ap(jj, ii) += kStep;
          am(jj, ii) -= kStep;
        }
        double fd = (dense_objective(m, ap, g.features, obj) - dense_objective(m, am, g.features, obj)) / (2 * kStep);
        EXPECT_TRUE(close(grads[k], fd)) << "(" << i << "," << j << ") got " << grads[k] << " fd " << fd;
      }
    }
  }
}

TEST(AdjacencyGradient, EdgeLeavingTheReceptiveFieldMovesBoundaryDegree) {
  // Path 0-1-2 plus an isolated node 3; the candidate (2, 3) starts two hops out.
  DerivedGraph g;
  g.kind = GraphKind::engagement;
  for (int i = 0; i < 4; ++i) {
    g.ids.push_back("v" + std::to_string(i));
    g.roles.push_back(NodeRole::post);
  }
  g.edges = {{0, 1, 1.0}, {1, 2, 1.0}};
  g.features = Matrix::Random(4, 3);
  Model m = init_model(spec_of(Architecture::gcn, Task::node_classification, 3, 4));
  auto obj = Objective::xent_loss(0, 0);
  double grad = grad_wrt_adjacency(m, g, {{2, 3}}, obj)[0];
  Matrix a = symmetric_dense(g), ap = a, am = a;
  ap(2, 3) = ap(3, 2) = kStep;
  am(2, 3) = am(3, 2) = -kStep;
  double fd = (dense_objective(m, ap, g.features, obj) - dense_objective(m, am, g.features, obj)) / (2 * kStep);
  EXPECT_NE(fd, 0.0);
  EXPECT_TRUE(close(grad, fd)) << grad << " vs " << fd;
}

TEST(AdjacencyGradient, OnlyGcnSupplies) {
  auto g = random_graph(1, 6, 3, 0.4, GraphKind::engagement);
  Model m = init_model(spec_of(Architecture::sage, Task::node_classification, 3));
  EXPECT_THROW(grad_wrt_adjacency(m, g, {{0, 1}}, Objective::class_score(0, 0)), UnsupportedError);
  Model gcn = init_model(spec_of(Architecture::gcn, Task::node_classification, 3));
  EXPECT_THROW(grad_wrt_adjacency(gcn, g, {{0, 1}}, Objective::class_score(0)), ShapeError);
}

TEST(Locality, GradientsVanishOutsideReceptiveField) {
  for (auto arch : {Architecture::gcn, Architecture::sage, Architecture::gat}) {
    auto g = random_graph(77, 30, 4, 0.06, GraphKind::engagement);
    Model m = init_model(spec_of(arch, Task::node_classification, 4));
    auto dist = hop_distance(g, 0);
    Matrix grad = grad_wrt_features(m, g, Objective::class_score(1, 0));
    for (std::size_t i = 0; i < g.size(); ++i)
      if (dist[i] > static_cast<std::size_t>(m.spec.layers)) {
        EXPECT_TRUE(grad.row(static_cast<Eigen::Index>(i)).isZero(0)) << "node " << i;
      }
    if (arch == Architecture::gcn) {
      std::vector<std::pair<std::size_t, std::size_t>> cand;
      for (std::size_t i = 0; i < g.size(); ++i)
        for (std::size_t j = i + 1; j < g.size(); ++j)
          if (dist[i] > 2 && dist[j] > 2) cand.emplace_back(i, j);
      for (double v : grad_wrt_adjacency(m, g, cand, Objective::class_score(1, 0))) EXPECT_EQ(v, 0.0);
    }
  }
}

TEST(ReceptiveField, BallEvaluationEqualsFullGraph) {
  for (auto arch : {Architecture::gcn, Architecture::sage, Architecture::gat}) {
    auto g = random_graph(5, 25, 4, 0.12, GraphKind::engagement);
    Model m = init_model(spec_of(arch, Task::node_classification, 4));
    Matrix full = forward(m, g);
    Neighborhood nb(g);
    PreparedGraph p = prepare(m.spec, g);
    for (std::size_t v = 0; v < g.size(); ++v) {
      EXPECT_TRUE(node_logits(m, g, nb, v).isApprox(full.row(static_cast<Eigen::Index>(v)), 1e-12));
      auto obj = Objective::class_score(0, v);
      Matrix ball = grad_wrt_features(m, g, obj);
      Matrix whole = grad_wrt_features(m, p, g.features, obj, v);
      EXPECT_LE((ball - whole).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Invariance, EdgeOrderDoesNotMatter) {
  for (auto arch : {Architecture::gcn, Architecture::sage, Architecture::gat}) {
    auto g = random_graph(9, 15, 4, 0.2, GraphKind::engagement);
    auto h = g;
    Rng rng(3);
    std::shuffle(h.edges.begin(), h.edges.end(), rng);
    for (auto& e : h.edges)
      if (uniform01(rng) < 0.5) std::swap(e.src, e.dst);
    for (auto task : {Task::node_classification, Task::graph_classification}) {
      Model m = init_model(spec_of(arch, task, 4));
      EXPECT_TRUE(forward(m, g).isApprox(forward(m, h), 1e-12));
    }
  }
}

TEST(Invariance, IsolatedNodeLeavesOthersUnchanged) {
  for (auto arch : {Architecture::gcn, Architecture::sage, Architecture::gat}) {
    auto g = random_graph(13, 10, 4, 0.3, GraphKind::engagement);
    auto h = g;
    h.ids.push_back("iso");
    h.roles.push_back(NodeRole::post);
    h.features.conservativeResize(11, 4);
    h.features.row(10).setRandom();
    Model m = init_model(spec_of(arch, Task::node_classification, 4));
    EXPECT_TRUE(forward(m, h).topRows(10).isApprox(forward(m, g), 1e-12));
  }
}

TEST(Invariance, ZeroHeadGivesEqualScores) {
  auto g = random_graph(4, 8, 4, 0, GraphKind::prop_tree);
  Model m = init_model(spec_of(Architecture::gcn, Task::graph_classification, 4));
  m.param("head.weight").setZero();
  m.param("head.bias").setZero();
  Matrix z = forward(m, g);
  EXPECT_EQ(z(0, 0), z(0, 1));
  EXPECT_EQ(predict_graph(m, g), 0);
}

namespace {

// Small trees whose node features are drawn around a class-dependent mean.
struct GraphSet {
  std::vector<DerivedGraph> graphs;
  std::vector<int> labels;
};

GraphSet separable_graphs(std::uint64_t seed, int count, double shift) {
  Rng rng(seed);
  GraphSet s;
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int k = 0; k < count; ++k) {
    int label = k % 2;
    auto g = random_graph(seed * 1000 + static_cast<std::uint64_t>(k), 3 + uniform_index(rng, 6), 4, 0,
                          GraphKind::prop_tree);
    for (Eigen::Index i = 0; i < g.features.rows(); ++i)
      for (Eigen::Index j = 0; j < 4; ++j) g.features(i, j) = noise(rng) + (j == 0 ? (label ? shift : -shift) : 0.0);
    s.graphs.push_back(std::move(g));
    s.labels.push_back(label);
  }
  return s;
}

double accuracy(const Model& m, const GraphSet& s) {
  int ok = 0;
  for (std::size_t i = 0; i < s.graphs.size(); ++i) ok += predict_graph(m, s.graphs[i]) == s.labels[i];
  return static_cast<double>(ok) / static_cast<double>(s.graphs.size());
}

}  // namespace

TEST(Training, SeparableGraphsReachHighAccuracy) {
  auto train = separable_graphs(1, 120, 1.5), val = separable_graphs(2, 40, 1.5), test = separable_graphs(3, 200, 1.5);
  TrainConfig cfg;
  cfg.max_epochs = 60;
  Model m = train_graph_classifier(spec_of(Architecture::gcn, Task::graph_classification, 4), train.graphs,
                                   train.labels, val.graphs, val.labels, cfg);
  EXPECT_GE(accuracy(m, test), 0.95);
}

TEST(Training, ShuffledLabelsStayNearChance) {
  auto train = separable_graphs(4, 120, 1.5), val = separable_graphs(5, 40, 1.5), test = separable_graphs(6, 200, 1.5);
  Rng rng(17);
  std::shuffle(train.labels.begin(), train.labels.end(), rng);
  std::shuffle(val.labels.begin(), val.labels.end(), rng);
  std::shuffle(test.labels.begin(), test.labels.end(), rng);
  TrainConfig cfg;
  cfg.max_epochs = 40;
  Model m = train_graph_classifier(spec_of(Architecture::gcn, Task::graph_classification, 4), train.graphs,
                                   train.labels, val.graphs, val.labels, cfg);
  EXPECT_NEAR(accuracy(m, test), 0.5, 0.15);
}

TEST(Training, DeterministicAndSnapshotsImproveMonotonically) {
  auto train = separable_graphs(7, 40, 0.7), val = separable_graphs(8, 20, 0.7);
  TrainConfig cfg;
  cfg.max_epochs = 25;
  auto spec = spec_of(Architecture::sage, Task::graph_classification, 4);
  Model a = train_graph_classifier(spec, train.graphs, train.labels, val.graphs, val.labels, cfg);
  Model b = train_graph_classifier(spec, train.graphs, train.labels, val.graphs, val.labels, cfg);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.log, b.log);
  const auto& seq = a.log.best_sequence;
  ASSERT_FALSE(seq.empty());
  for (std::size_t i = 1; i < seq.size(); ++i) {
    EXPECT_GE(seq[i].val_accuracy, seq[i - 1].val_accuracy);
    EXPECT_LE(seq[i].train_loss, seq[i - 1].train_loss);
  }
}

TEST(Training, NodeClassifierLearnsFeatureSign) {
  auto g = random_graph(21, 80, 4, 0.04, GraphKind::engagement);
  std::vector<std::size_t> tr, va;
  std::vector<int> ytr, yva;
  for (std::size_t i = 0; i < g.size(); ++i) {
    int y = g.features(static_cast<Eigen::Index>(i), 0) > 0;
    g.features(static_cast<Eigen::Index>(i), 0) = y ? 2.0 : -2.0;
    (i % 4 == 0 ? va : tr).push_back(i);
    (i % 4 == 0 ? yva : ytr).push_back(y);
  }
  Model m = train_node_classifier(spec_of(Architecture::sage, Task::node_classification, 4), g, tr, ytr, va, yva);
  Matrix z = forward(m, g);
  int ok = 0;
  for (std::size_t k = 0; k < va.size(); ++k) ok += (z(static_cast<Eigen::Index>(va[k]), 1) > z(static_cast<Eigen::Index>(va[k]), 0)) == yva[k];
  EXPECT_GE(static_cast<double>(ok) / static_cast<double>(va.size()), 0.9);
}

TEST(Training, RejectsDegenerateSplits) {
  auto s = separable_graphs(9, 6, 1.0);
  std::vector<int> ones(6, 1);
  auto spec = spec_of(Architecture::gcn, Task::graph_classification, 4);
  EXPECT_THROW(train_graph_classifier(spec, s.graphs, ones, s.graphs, s.labels), Error);
  EXPECT_THROW(train_graph_classifier(spec, s.graphs, s.labels, {}, {}), Error);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto dir = std::filesystem::temp_directory_path() / "gafsi_ckpt_test";
  for (auto arch : {Architecture::gcn, Architecture::sage, Architecture::gat, Architecture::bidir_gcn}) {
    auto spec = spec_of(arch, Task::graph_classification, 4, 5);
    spec.readout = Readout::root_concat_mean_pool;
    Model m = init_model(spec);
    for (auto& p : m.params) p.setRandom();
    m.log.epochs.push_back({1, 0.123456789012345678, 0.5});
    auto path = dir / (std::string(to_string(arch)) + ".json");
    save_model(path, m);
    Model back = load_model(path);
    EXPECT_EQ(back.spec, m.spec);
    EXPECT_EQ(back.params, m.params);
    auto g = random_graph(2, 7, 4, 0, GraphKind::prop_tree);
    EXPECT_EQ(forward(back, g), forward(m, g));
  }
  std::filesystem::remove_all(dir);
  json bad = model_to_json(init_model(spec_of(Architecture::gcn, Task::graph_classification, 4)));
  bad["params"][0]["rows"] = 99;
  EXPECT_THROW(model_from_json(bad), ConfigError);
}
