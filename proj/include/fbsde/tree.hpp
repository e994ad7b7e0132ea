#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace fbsde::cart {

// Node in a flat pool; leaf iff left < 0. Every node keeps its training
// statistics so pruning can collapse it without revisiting the data.
struct TreeNode {
    int left = -1;
    int right = -1;
    int feature = -1;
    double threshold = 0.0;
    double mean = 0.0;
    double sse = 0.0;  // sum of squared deviations of the training responses here
    std::size_t count = 0;

    bool is_leaf() const { return left < 0; }
};

// Least-squares regression tree. Routing: x[feature] <= threshold goes left.
class RegressionTree {
public:
    double predict(std::span<const double> x) const;
    const TreeNode& leaf_for(std::span<const double> x) const;

    const std::vector<TreeNode>& nodes() const { return nodes_; }
    const TreeNode& root() const { return nodes_.front(); }
    std::size_t leaf_count() const;
    std::size_t n_features() const { return n_features_; }
    std::size_t n_train() const { return n_train_; }
    // mean squared training error: sum of leaf sse over n_train
    double mse() const { return mse_; }

    // One node per line, children indented; stable format for golden tests.
    std::string dump() const;

private:
    friend RegressionTree grow(std::span<const double>, std::span<const double>, std::size_t,
                               std::size_t);
    friend class PruneSequence;

    std::vector<TreeNode> nodes_;  // nodes_[0] is the root
    std::size_t n_features_ = 0;
    std::size_t n_train_ = 0;
    double mse_ = 0.0;
};

// Greedy growth: split maximizing the squared-error reduction, children at
// least min_leaf samples each, candidate thresholds at midpoints of
// consecutive distinct feature values. Stops when a node has fewer than
// 2*min_leaf samples, all equal responses, or no strictly improving split.
// Ties break toward the lowest feature index, then the smallest threshold.
// x is row-major [n][n_features].
RegressionTree grow(std::span<const double> x, std::span<const double> y, std::size_t n_features,
                    std::size_t min_leaf);

// Cost-complexity pruning ladder of a grown tree: entry 0 is the tree itself
// (alpha 0); each later entry collapses the weakest links (all minimizers of
// g = (branch error increase)/(leaves removed), error in tree-mse units) and
// records alpha = that minimum. Alphas increase strictly; sizes decrease
// strictly; the last entry is the root-only tree.
class PruneSequence {
public:
    std::size_t size() const { return alphas_.size(); }
    double alpha(std::size_t k) const { return alphas_.at(k); }
    std::size_t leaf_count(std::size_t k) const { return leaves_.at(k); }
    double mse(std::size_t k) const { return mses_.at(k); }
    const RegressionTree& base() const { return base_; }

    double predict(std::size_t k, std::span<const double> x) const;
    // Materialize entry k as a standalone tree.
    RegressionTree tree(std::size_t k) const;

    // Step at which a base node stops being internal (entry index);
    // SIZE_MAX for nodes that are never collapsed themselves.
    const std::vector<std::size_t>& collapse_step() const { return collapse_; }

private:
    friend PruneSequence prune_sequence(const RegressionTree&);
    friend RegressionTree select_tree(const PruneSequence&, std::span<const double>,
                                      std::span<const double>);

    RegressionTree base_;
    std::vector<double> alphas_;
    std::vector<std::size_t> leaves_;
    std::vector<double> mses_;
    std::vector<std::size_t> collapse_;
};

PruneSequence prune_sequence(const RegressionTree& tree);

// 1-SE rule on an independent test set: among the pruned subtrees, take the
// smallest one whose test error is within one standard error of the best.
RegressionTree select_tree(const PruneSequence& seq, std::span<const double> x_test,
                           std::span<const double> y_test);

// Random split into grow/selection halves, then grow + prune + 1-SE select.
RegressionTree fit_with_holdout(std::span<const double> x, std::span<const double> y,
                                std::size_t n_features, std::size_t min_leaf,
                                double holdout_fraction, std::uint64_t seed);

// k-fold cross-validation over min_leaf candidates (grow-only fits);
// smallest CV squared error wins, exact ties go to the larger candidate.
std::size_t best_min_leaf(std::span<const double> x, std::span<const double> y,
                          std::size_t n_features, std::span<const std::size_t> candidates,
                          std::size_t n_folds, std::uint64_t seed);

}  // namespace fbsde::cart
