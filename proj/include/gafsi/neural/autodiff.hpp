#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices, with
// the two graph-specific primitives the detectors need: sparse propagation
// (optionally accumulating gradients for every stored entry of the operator)
// and single-head additive attention.

#include "gafsi/common.hpp"

#include <functional>
#include <memory>

namespace gafsi::nn {

struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Var constant(Matrix value) { return push(std::move(value), false, nullptr); }
  Var variable(Matrix value) { return push(std::move(value), true, nullptr); }

  Var push(Matrix value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Matrix(), false, requires_grad, std::move(backward)});
    return Var{nodes_.size() - 1};
  }

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of a node, zero-initialized on first access.
  Matrix& grad(std::size_t id) {
    auto& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
      n.has_grad = true;
    }
    return n.grad;
  }
  Matrix& grad(Var v) { return grad(v.id); }

  /// d(out)/d(v) after backward(); zeros if v does not influence out.
  Matrix gradient(Var v) const {
    const auto& n = nodes_[v.id];
    return n.has_grad ? n.grad : Matrix::Zero(n.value.rows(), n.value.cols());
  }

  void backward(Var out) {
    if (value(out).size() != 1) throw ShapeError("backward() needs a scalar objective");
    grad(out)(0, 0) += 1.0;
    for (std::size_t i = out.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.has_grad && n.requires_grad && n.backward) n.backward(*this, i);
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool has_grad = false;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

inline Var matmul(Tape& t, Var a, Var b) {
  Matrix out = t.value(a) * t.value(b);
  bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(out), rg, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(a)) t.grad(a) += g * t.value(b).transpose();
    if (t.requires_grad(b)) t.grad(b) += t.value(a).transpose() * g;
  });
}

inline Var add(Tape& t, Var a, Var b) {
  if (t.value(a).rows() != t.value(b).rows() || t.value(a).cols() != t.value(b).cols())
    throw ShapeError("add: shape mismatch");
  Matrix out = t.value(a) + t.value(b);
  bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(out), rg, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(a)) t.grad(a) += g;
    if (t.requires_grad(b)) t.grad(b) += g;
  });
}

/// a (n x k) plus a 1 x k row broadcast over every row.
inline Var add_row(Tape& t, Var a, Var row) {
  if (t.value(row).rows() != 1 || t.value(row).cols() != t.value(a).cols()) throw ShapeError("add_row: shape mismatch");
  Matrix out = t.value(a).rowwise() + t.value(row).row(0);
  bool rg = t.requires_grad(a) || t.requires_grad(row);
  return t.push(std::move(out), rg, [a, row](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(a)) t.grad(a) += g;
    if (t.requires_grad(row)) t.grad(row) += g.colwise().sum();
  });
}

inline Var leaky_relu(Tape& t, Var a, double slope) {
  const Matrix& x = t.value(a);
  Matrix out = x.unaryExpr([slope](double v) { return v > 0 ? v : slope * v; });
  return t.push(std::move(out), t.requires_grad(a), [a, slope](Tape& t, std::size_t self) {
    const Matrix& x = t.value(a);
    Matrix mask = x.unaryExpr([slope](double v) { return v > 0 ? 1.0 : slope; });
    t.grad(a) += t.grad(self).cwiseProduct(mask);
  });
}

inline Var relu(Tape& t, Var a) { return leaky_relu(t, a, 0.0); }

inline Var concat_cols(Tape& t, Var a, Var b) {
  const Matrix& x = t.value(a);
  const Matrix& y = t.value(b);
  if (x.rows() != y.rows()) throw ShapeError("concat_cols: row mismatch");
  Matrix out(x.rows(), x.cols() + y.cols());
  out << x, y;
  const Eigen::Index split = x.cols();
  bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(out), rg, [a, b, split](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(a)) t.grad(a) += g.leftCols(split);
    if (t.requires_grad(b)) t.grad(b) += g.rightCols(g.cols() - split);
  });
}

inline Var mean_rows(Tape& t, Var a) {
  const Matrix& x = t.value(a);
  if (x.rows() == 0) throw ShapeError("mean_rows of an empty matrix");
  Matrix out = x.colwise().mean();
  return t.push(std::move(out), t.requires_grad(a), [a](Tape& t, std::size_t self) {
    const double inv = 1.0 / static_cast<double>(t.value(a).rows());
    t.grad(a).rowwise() += t.grad(self).row(0) * inv;
  });
}

inline Var select_row(Tape& t, Var a, std::size_t r) {
  const auto row = static_cast<Eigen::Index>(r);
  if (row >= t.value(a).rows()) throw ShapeError("select_row: index out of range");
  Matrix out = t.value(a).row(row);
  return t.push(std::move(out), t.requires_grad(a),
                [a, row](Tape& t, std::size_t self) { t.grad(a).row(row) += t.grad(self).row(0); });
}

inline Var element(Tape& t, Var a, std::size_t r, std::size_t c) {
  const auto row = static_cast<Eigen::Index>(r), col = static_cast<Eigen::Index>(c);
  if (row >= t.value(a).rows() || col >= t.value(a).cols()) throw ShapeError("element: index out of range");
  Matrix out(1, 1);
  out(0, 0) = t.value(a)(row, col);
  return t.push(std::move(out), t.requires_grad(a),
                [a, row, col](Tape& t, std::size_t self) { t.grad(a)(row, col) += t.grad(self)(0, 0); });
}

/// Mean softmax cross-entropy over the listed (row, label) pairs.
inline Var cross_entropy(Tape& t, Var logits, std::vector<std::pair<std::size_t, int>> targets) {
  if (targets.empty()) throw ShapeError("cross_entropy over no rows");
  const Matrix& z = t.value(logits);
  double loss = 0.0;
  Matrix probs(static_cast<Eigen::Index>(targets.size()), z.cols());
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(targets[k].first);
    RowVector row = z.row(r);
    double mx = row.maxCoeff();
    RowVector e = (row.array() - mx).exp();
    double s = e.sum();
    probs.row(static_cast<Eigen::Index>(k)) = e / s;
    loss -= (row[targets[k].second] - mx) - std::log(s);
  }
  loss /= static_cast<double>(targets.size());
  Matrix out(1, 1);
  out(0, 0) = loss;
  return t.push(std::move(out), t.requires_grad(logits),
                [logits, targets = std::move(targets), probs = std::move(probs)](Tape& t, std::size_t self) {
                  const double scale = t.grad(self)(0, 0) / static_cast<double>(targets.size());
                  Matrix& g = t.grad(logits);
                  for (std::size_t k = 0; k < targets.size(); ++k) {
                    const auto r = static_cast<Eigen::Index>(targets[k].first);
                    RowVector d = probs.row(static_cast<Eigen::Index>(k));
                    d[targets[k].second] -= 1.0;
                    g.row(r) += scale * d;
                  }
                });
}

/// Fixed sparse propagation matrix. When `track` is set, backward passes
/// accumulate d(objective)/d(entry) for every stored entry into `value_grad`
/// (aligned with the compressed value array).
struct SparseOperator {
  SparseMatrix matrix;
  bool track = false;
  std::vector<double> value_grad;

  void reset_grad() { value_grad.assign(static_cast<std::size_t>(matrix.nonZeros()), 0.0); }
};

inline Var spmm(Tape& t, std::shared_ptr<SparseOperator> op, Var h) {
  if (op->matrix.cols() != t.value(h).rows()) throw ShapeError("spmm: operator/feature shape mismatch");
  Matrix out = op->matrix * t.value(h);
  bool rg = t.requires_grad(h) || op->track;
  return t.push(std::move(out), rg, [op, h](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(h)) t.grad(h) += op->matrix.transpose() * g;
    if (op->track) {
      if (op->value_grad.size() != static_cast<std::size_t>(op->matrix.nonZeros())) op->reset_grad();
      const Matrix& x = t.value(h);
      const auto* outer = op->matrix.outerIndexPtr();
      const auto* inner = op->matrix.innerIndexPtr();
      for (Eigen::Index r = 0; r < op->matrix.outerSize(); ++r)
        for (auto k = outer[r]; k < outer[r + 1]; ++k)
          op->value_grad[static_cast<std::size_t>(k)] += g.row(r).dot(x.row(inner[k]));
    }
  });
}

/// Neighbor lists for attention; each list includes the node itself.
struct NeighborLists {
  std::vector<std::vector<std::size_t>> of;
};

/// out_i = sum_j alpha_ij z_j with alpha_i = softmax_j(LeakyReLU(z_i.a_src + z_j.a_dst)).
inline Var attend(Tape& t, std::shared_ptr<const NeighborLists> nbrs, Var z, Var a_src, Var a_dst, double slope) {
  const Matrix& zv = t.value(z);
  const Eigen::Index n = zv.rows();
  if (static_cast<Eigen::Index>(nbrs->of.size()) != n) throw ShapeError("attend: neighbor lists do not match rows");
  Eigen::VectorXd s = zv * t.value(a_src).col(0);
  Eigen::VectorXd d = zv * t.value(a_dst).col(0);
  auto alpha = std::make_shared<std::vector<std::vector<double>>>(static_cast<std::size_t>(n));
  auto pre = std::make_shared<std::vector<std::vector<double>>>(static_cast<std::size_t>(n));
  Matrix out = Matrix::Zero(n, zv.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& nb = nbrs->of[static_cast<std::size_t>(i)];
    auto& al = (*alpha)[static_cast<std::size_t>(i)];
    auto& pr = (*pre)[static_cast<std::size_t>(i)];
    al.resize(nb.size());
    pr.resize(nb.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < nb.size(); ++k) {
      pr[k] = s[i] + d[static_cast<Eigen::Index>(nb[k])];
      al[k] = pr[k] > 0 ? pr[k] : slope * pr[k];
      mx = std::max(mx, al[k]);
    }
    double sum = 0.0;
    for (auto& v : al) sum += (v = std::exp(v - mx));
    for (std::size_t k = 0; k < nb.size(); ++k) {
      al[k] /= sum;
      out.row(i) += al[k] * zv.row(static_cast<Eigen::Index>(nb[k]));
    }
  }
  bool rg = t.requires_grad(z) || t.requires_grad(a_src) || t.requires_grad(a_dst);
  return t.push(std::move(out), rg, [=](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& zv = t.value(z);
    const Eigen::VectorXd as = t.value(a_src).col(0);
    const Eigen::VectorXd ad = t.value(a_dst).col(0);
    Matrix dz = Matrix::Zero(zv.rows(), zv.cols());
    Eigen::VectorXd ds = Eigen::VectorXd::Zero(zv.rows());  // d/d(z_i . a_src)
    Eigen::VectorXd dd = Eigen::VectorXd::Zero(zv.rows());  // d/d(z_j . a_dst)
    for (Eigen::Index i = 0; i < zv.rows(); ++i) {
      const auto& nb = nbrs->of[static_cast<std::size_t>(i)];
      const auto& al = (*alpha)[static_cast<std::size_t>(i)];
      const auto& pr = (*pre)[static_cast<std::size_t>(i)];
      std::vector<double> dalpha(nb.size());
      double weighted = 0.0;
      for (std::size_t k = 0; k < nb.size(); ++k) {
        const auto j = static_cast<Eigen::Index>(nb[k]);
        dz.row(j) += al[k] * g.row(i);
        dalpha[k] = g.row(i).dot(zv.row(j));
        weighted += al[k] * dalpha[k];
      }
      for (std::size_t k = 0; k < nb.size(); ++k) {
        double de = al[k] * (dalpha[k] - weighted);
        double dp = de * (pr[k] > 0 ? 1.0 : slope);
        ds[i] += dp;
        dd[static_cast<Eigen::Index>(nb[k])] += dp;
      }
    }
    if (t.requires_grad(z)) {
      dz += ds * as.transpose();
      dz += dd * ad.transpose();
      t.grad(z) += dz;
    }
    if (t.requires_grad(a_src)) t.grad(a_src) += zv.transpose() * ds;
    if (t.requires_grad(a_dst)) t.grad(a_dst) += zv.transpose() * dd;
  });
}

}  // namespace gafsi::nn
