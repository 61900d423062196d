#ifndef PAIRADJUST_FOREST_HPP
#define PAIRADJUST_FOREST_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace pairadjust {

struct ForestParams {
  int n_trees = 500;
  int mtry = 0;        // 0 -> ceil(cols/3)
  int min_leaf = 5;
  int max_depth = -1;  // -1 -> unlimited; 0 -> root leaf only
  std::uint64_t seed = 0;
  int n_threads = 1;
};

// Regression forest of CART trees on bootstrap samples. Splits minimize the
// children's summed squared error; ties break on lowest column index, then
// lowest threshold, so refits with the same seed are bit-identical.
class RandomForest {
public:
  void fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const ForestParams& params);

  // Mean prediction over all trees (for units outside the training arm).
  double predict_row(const Eigen::RowVectorXd& row) const;
  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const;

  // Mean over trees whose bootstrap sample excluded the training row.
  // Throws if some row is in-bag everywhere (advise a larger n_trees).
  Eigen::VectorXd oob_predict() const;
  // Same out-of-bag tree sets, but rows substituted (e.g. treatment toggled).
  Eigen::VectorXd oob_predict(const Eigen::MatrixXd& x_alt) const;
  // Out-of-bag tree counts per training row.
  std::vector<int> oob_counts() const;

  // Total split impurity decrease per column, normalized to sum to 1.
  // All-zero (no splits anywhere) stays all-zero.
  Eigen::VectorXd importance() const;

  double oob_mse() const;  // against the training outcomes
  int n_trees() const { return static_cast<int>(trees_.size()); }

private:
  struct Node {
    int feature = -1;  // -1 for leaves
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
  };
  struct Tree {
    std::vector<Node> nodes;
    std::vector<std::uint8_t> oob;   // per training row
    Eigen::VectorXd split_gain;      // impurity decrease per column
    double predict(const Eigen::MatrixXd& x, Eigen::Index row) const;
    double predict_row(const Eigen::RowVectorXd& row) const;
  };

  Tree grow_tree(std::uint64_t tree_seed) const;

  Eigen::MatrixXd x_;
  Eigen::VectorXd y_;
  ForestParams params_;
  std::vector<Tree> trees_;
  Eigen::VectorXd importance_raw_;
};

}  // namespace pairadjust

#endif  // PAIRADJUST_FOREST_HPP
