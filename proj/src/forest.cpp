#include "pairadjust/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

#include "pairadjust/common.hpp"

namespace pairadjust {

namespace {

struct SplitCandidate {
  bool found = false;
  int feature = -1;
  double threshold = 0.0;
  double gain = -1.0;

  // Deterministic preference: larger gain, then lower column, then lower
  // threshold.
  bool better_than(const SplitCandidate& other) const {
    if (!found) return false;
    if (!other.found) return true;
    if (gain != other.gain) return gain > other.gain;
    if (feature != other.feature) return feature < other.feature;
    return threshold < other.threshold;
  }
};

}  // namespace

double RandomForest::Tree::predict(const Eigen::MatrixXd& x, Eigen::Index row) const {
  int node = 0;
  while (nodes[static_cast<std::size_t>(node)].feature >= 0) {
    const Node& nd = nodes[static_cast<std::size_t>(node)];
    node = x(row, nd.feature) <= nd.threshold ? nd.left : nd.right;
  }
  return nodes[static_cast<std::size_t>(node)].value;
}

double RandomForest::Tree::predict_row(const Eigen::RowVectorXd& row) const {
  int node = 0;
  while (nodes[static_cast<std::size_t>(node)].feature >= 0) {
    const Node& nd = nodes[static_cast<std::size_t>(node)];
    node = row[nd.feature] <= nd.threshold ? nd.left : nd.right;
  }
  return nodes[static_cast<std::size_t>(node)].value;
}

RandomForest::Tree RandomForest::grow_tree(std::uint64_t tree_seed) const {
  const auto n = x_.rows();
  const auto cols = static_cast<int>(x_.cols());
  const int mtry = params_.mtry > 0
                       ? params_.mtry
                       : std::max(1, static_cast<int>((cols + 2) / 3));
  std::mt19937_64 rng(tree_seed);

  Tree tree;
  tree.oob.assign(static_cast<std::size_t>(n), 1);
  tree.split_gain = Eigen::VectorXd::Zero(cols);
  std::vector<Eigen::Index> sample;
  sample.reserve(static_cast<std::size_t>(n));
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index s = pick(rng);
    sample.push_back(s);
    tree.oob[static_cast<std::size_t>(s)] = 0;
  }

  struct Work {
    int node;
    int depth;
    std::size_t begin;
    std::size_t end;  // half-open range into `sample`
  };

  std::vector<int> feature_pool(static_cast<std::size_t>(cols));
  std::iota(feature_pool.begin(), feature_pool.end(), 0);
  std::vector<int> chosen(static_cast<std::size_t>(mtry));
  std::vector<std::pair<double, double>> vals;  // (feature value, y)

  tree.nodes.push_back({});
  std::vector<Work> stack{{0, 0, 0, sample.size()}};
  while (!stack.empty()) {
    Work w = stack.back();
    stack.pop_back();
    const std::size_t count = w.end - w.begin;

    double sum = 0.0, sum2 = 0.0;
    for (std::size_t k = w.begin; k < w.end; ++k) {
      const double yv = y_[sample[k]];
      sum += yv;
      sum2 += yv * yv;
    }
    const double mean = sum / static_cast<double>(count);
    const double sse = sum2 - sum * mean;

    Node& node = tree.nodes[static_cast<std::size_t>(w.node)];
    node.value = mean;
    const bool depth_capped = params_.max_depth >= 0 && w.depth >= params_.max_depth;
    if (depth_capped || count < 2 * static_cast<std::size_t>(params_.min_leaf) ||
        sse <= 0.0)
      continue;

    // sample mtry candidate features without replacement, evaluated in
    // ascending column order so the tie rule is by index
    for (int j = 0; j < mtry; ++j) {
      std::uniform_int_distribution<int> d(j, cols - 1);
      std::swap(feature_pool[static_cast<std::size_t>(j)],
                feature_pool[static_cast<std::size_t>(d(rng))]);
      chosen[static_cast<std::size_t>(j)] = feature_pool[static_cast<std::size_t>(j)];
    }
    std::sort(chosen.begin(), chosen.end());

    SplitCandidate best;
    for (int f : chosen) {
      vals.clear();
      for (std::size_t k = w.begin; k < w.end; ++k)
        vals.emplace_back(x_(sample[k], f), y_[sample[k]]);
      std::sort(vals.begin(), vals.end());
      double left_sum = 0.0;
      std::size_t left_n = 0;
      for (std::size_t k = 0; k + 1 < vals.size(); ++k) {
        left_sum += vals[k].second;
        ++left_n;
        if (vals[k].first == vals[k + 1].first) continue;
        if (left_n < static_cast<std::size_t>(params_.min_leaf)) continue;
        const std::size_t right_n = vals.size() - left_n;
        if (right_n < static_cast<std::size_t>(params_.min_leaf)) break;
        const double right_sum = sum - left_sum;
        // maximizing sum_L^2/n_L + sum_R^2/n_R maximizes the SSE decrease
        const double score = left_sum * left_sum / static_cast<double>(left_n) +
                             right_sum * right_sum / static_cast<double>(right_n);
        SplitCandidate cand;
        cand.found = true;
        cand.feature = f;
        cand.threshold = std::midpoint(vals[k].first, vals[k + 1].first);
        cand.gain = score - sum * mean;  // parent term subtracted for readability
        if (cand.better_than(best)) best = cand;
      }
    }
    if (!best.found) continue;

    const auto mid = static_cast<std::size_t>(
        std::partition(sample.begin() + static_cast<std::ptrdiff_t>(w.begin),
                       sample.begin() + static_cast<std::ptrdiff_t>(w.end),
                       [&](Eigen::Index idx) {
                         return x_(idx, best.feature) <= best.threshold;
                       }) -
        sample.begin());
    if (mid == w.begin || mid == w.end) continue;  // numeric ties, keep as leaf
    tree.split_gain[best.feature] += best.gain;

    Node parent = tree.nodes[static_cast<std::size_t>(w.node)];
    parent.feature = best.feature;
    parent.threshold = best.threshold;
    parent.left = static_cast<int>(tree.nodes.size());
    parent.right = parent.left + 1;
    tree.nodes[static_cast<std::size_t>(w.node)] = parent;
    tree.nodes.push_back({});
    tree.nodes.push_back({});
    stack.push_back({parent.right, w.depth + 1, mid, w.end});
    stack.push_back({parent.left, w.depth + 1, w.begin, mid});
  }
  return tree;
}

void RandomForest::fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                       const ForestParams& params) {
  if (x.rows() != y.size()) throw ValidationError("forest: x/y row mismatch");
  if (x.rows() < 1) throw ValidationError("forest: empty training data");
  if (params.n_trees < 1) throw ValidationError("forest: n_trees must be >= 1");
  if (params.min_leaf < 1) throw ValidationError("forest: min_leaf must be >= 1");
  if (params.mtry > x.cols())
    throw ValidationError("forest: mtry " + std::to_string(params.mtry) +
                          " exceeds column count " + std::to_string(x.cols()));
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (!std::isfinite(y[i])) throw ValidationError("forest: non-finite outcome");

  x_ = x;
  y_ = y;
  params_ = params;
  trees_.assign(static_cast<std::size_t>(params.n_trees), {});

  // per-tree seed = seed + tree index, so scheduling cannot change results
  auto grow_range = [&](int lo, int hi) {
    for (int t = lo; t < hi; ++t)
      trees_[static_cast<std::size_t>(t)] =
          grow_tree(params_.seed + static_cast<std::uint64_t>(t));
  };
  const int threads = std::max(1, params.n_threads);
  if (threads == 1 || params.n_trees < 4) {
    grow_range(0, params.n_trees);
  } else {
    std::vector<std::thread> pool;
    const int chunk = (params.n_trees + threads - 1) / threads;
    for (int t = 0; t < params.n_trees; t += chunk)
      pool.emplace_back(grow_range, t, std::min(params.n_trees, t + chunk));
    for (auto& th : pool) th.join();
  }

  importance_raw_ = Eigen::VectorXd::Zero(x.cols());
  for (const Tree& tree : trees_) importance_raw_ += tree.split_gain;
}

double RandomForest::predict_row(const Eigen::RowVectorXd& row) const {
  double s = 0.0;
  for (const Tree& t : trees_) s += t.predict_row(row);
  return s / static_cast<double>(trees_.size());
}

Eigen::VectorXd RandomForest::predict(const Eigen::MatrixXd& x) const {
  Eigen::VectorXd out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (const Tree& t : trees_) s += t.predict(x, i);
    out[i] = s / static_cast<double>(trees_.size());
  }
  return out;
}

std::vector<int> RandomForest::oob_counts() const {
  std::vector<int> counts(static_cast<std::size_t>(x_.rows()), 0);
  for (const Tree& t : trees_)
    for (std::size_t i = 0; i < counts.size(); ++i)
      counts[i] += t.oob[i];
  return counts;
}

Eigen::VectorXd RandomForest::oob_predict() const { return oob_predict(x_); }

Eigen::VectorXd RandomForest::oob_predict(const Eigen::MatrixXd& x_alt) const {
  if (x_alt.rows() != x_.rows() || x_alt.cols() != x_.cols())
    throw ValidationError("oob_predict: substitute rows must match training shape");
  Eigen::VectorXd sums = Eigen::VectorXd::Zero(x_.rows());
  std::vector<int> counts(static_cast<std::size_t>(x_.rows()), 0);
  for (const Tree& t : trees_) {
    for (Eigen::Index i = 0; i < x_.rows(); ++i) {
      if (!t.oob[static_cast<std::size_t>(i)]) continue;
      sums[i] += t.predict(x_alt, i);
      ++counts[static_cast<std::size_t>(i)];
    }
  }
  for (Eigen::Index i = 0; i < x_.rows(); ++i) {
    if (counts[static_cast<std::size_t>(i)] == 0)
      throw ValidationError(
          "unit " + std::to_string(i) +
          " was in-bag in every tree; increase n_trees so every unit has "
          "out-of-bag predictions");
    sums[i] /= counts[static_cast<std::size_t>(i)];
  }
  return sums;
}

Eigen::VectorXd RandomForest::importance() const {
  const double total = importance_raw_.sum();
  if (total <= 0.0) return Eigen::VectorXd::Zero(importance_raw_.size());
  return importance_raw_ / total;
}

double RandomForest::oob_mse() const {
  const Eigen::VectorXd pred = oob_predict();
  return (pred - y_).squaredNorm() / static_cast<double>(y_.size());
}

}  // namespace pairadjust
