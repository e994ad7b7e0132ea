#include "fbsde/tree.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "fbsde/rng.hpp"

namespace fbsde::cart {

namespace {

void check_dataset(std::span<const double> x, std::span<const double> y,
                   std::size_t n_features, std::size_t min_leaf) {
    if (n_features == 0) throw std::invalid_argument("tree: need at least one feature");
    if (min_leaf == 0) throw std::invalid_argument("tree: min_leaf must be positive");
    if (y.empty()) throw std::invalid_argument("tree: empty training set");
    if (x.size() != y.size() * n_features)
        throw std::invalid_argument("tree: x/y sizes are inconsistent");
    for (double v : x)
        if (!std::isfinite(v)) throw std::invalid_argument("tree: non-finite feature value");
    for (double v : y)
        if (!std::isfinite(v)) throw std::invalid_argument("tree: non-finite response");
}

struct Builder {
    std::span<const double> x;
    std::span<const double> y;
    std::size_t d = 0;
    std::size_t min_leaf = 1;
    std::vector<std::size_t> idx;      // sample indices, permuted range by range
    std::vector<std::size_t> scratch;  // per-node sort buffer
    std::vector<TreeNode> nodes;

    double value(std::size_t sample, std::size_t feature) const {
        return x[sample * d + feature];
    }

    // Builds the subtree over idx[lo, hi); returns its node index.
    int build(std::size_t lo, std::size_t hi) {
        const std::size_t n = hi - lo;
        double sum = 0.0;
        double y_min = y[idx[lo]], y_max = y_min;
        for (std::size_t k = lo; k < hi; ++k) {
            const double v = y[idx[k]];
            sum += v;
            y_min = std::min(y_min, v);
            y_max = std::max(y_max, v);
        }
        const double mean = sum / static_cast<double>(n);
        double sse = 0.0;
        for (std::size_t k = lo; k < hi; ++k) {
            const double r = y[idx[k]] - mean;
            sse += r * r;
        }

        const int self = static_cast<int>(nodes.size());
        nodes.push_back(TreeNode{-1, -1, -1, 0.0, mean, sse, n});
        if (n < 2 * min_leaf || y_min == y_max) return self;

        // Best split: largest squared-error reduction via the sum-of-squares
        // identity; ties fall to the lowest feature, then smallest threshold,
        // because only strict improvements replace the incumbent.
        int best_f = -1;
        double best_thr = 0.0;
        double best_red = 0.0;
        const double base = sum * sum / static_cast<double>(n);
        scratch.assign(idx.begin() + static_cast<std::ptrdiff_t>(lo),
                       idx.begin() + static_cast<std::ptrdiff_t>(hi));
        for (std::size_t f = 0; f < d; ++f) {
            std::stable_sort(scratch.begin(), scratch.end(),
                             [&](std::size_t a, std::size_t b) {
                                 return value(a, f) < value(b, f);
                             });
            double sum_l = 0.0;
            for (std::size_t k = 1; k < n; ++k) {
                sum_l += y[scratch[k - 1]];
                const double prev = value(scratch[k - 1], f);
                const double next = value(scratch[k], f);
                if (prev == next) continue;
                if (k < min_leaf || n - k < min_leaf) continue;
                const double sum_r = sum - sum_l;
                const double red = sum_l * sum_l / static_cast<double>(k) +
                                   sum_r * sum_r / static_cast<double>(n - k) - base;
                if (red > best_red) {
                    best_red = red;
                    best_f = static_cast<int>(f);
                    best_thr = (prev + next) / 2.0;
                }
            }
        }
        if (best_f < 0) return self;

        const auto begin = idx.begin() + static_cast<std::ptrdiff_t>(lo);
        const auto end = idx.begin() + static_cast<std::ptrdiff_t>(hi);
        const auto mid = std::stable_partition(begin, end, [&](std::size_t s) {
            return value(s, static_cast<std::size_t>(best_f)) <= best_thr;
        });
        const std::size_t cut = lo + static_cast<std::size_t>(mid - begin);

        const int left = build(lo, cut);
        const int right = build(cut, hi);
        // Guard against a vanishing gain once the exact child deviations are
        // in hand: such a split would not strictly reduce the error.
        if (nodes[self].sse - (nodes[static_cast<std::size_t>(left)].sse +
                               nodes[static_cast<std::size_t>(right)].sse) <= 0.0) {
            nodes.resize(static_cast<std::size_t>(self) + 1);
            return self;
        }
        nodes[self].left = left;
        nodes[self].right = right;
        nodes[self].feature = best_f;
        nodes[self].threshold = best_thr;
        return self;
    }
};

int walk(const std::vector<TreeNode>& nodes, std::span<const double> x) {
    int i = 0;
    while (!nodes[static_cast<std::size_t>(i)].is_leaf()) {
        const auto& nd = nodes[static_cast<std::size_t>(i)];
        i = x[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
    }
    return i;
}

void append_dump(const std::vector<TreeNode>& nodes, int i, int depth, std::string& out) {
    const auto& nd = nodes[static_cast<std::size_t>(i)];
    out.append(static_cast<std::size_t>(2 * depth), ' ');
    char buf[128];
    if (nd.is_leaf()) {
        std::snprintf(buf, sizeof buf, "leaf n=%zu mean=%g\n", nd.count, nd.mean);
        out += buf;
    } else {
        std::snprintf(buf, sizeof buf, "split f%d <= %g n=%zu mean=%g\n", nd.feature,
                      nd.threshold, nd.count, nd.mean);
        out += buf;
        append_dump(nodes, nd.left, depth + 1, out);
        append_dump(nodes, nd.right, depth + 1, out);
    }
}

}  // namespace

double RegressionTree::predict(std::span<const double> x) const {
    return leaf_for(x).mean;
}

const TreeNode& RegressionTree::leaf_for(std::span<const double> x) const {
    if (x.size() != n_features_)
        throw std::invalid_argument("tree: query dimension does not match the features");
    return nodes_[static_cast<std::size_t>(walk(nodes_, x))];
}

std::size_t RegressionTree::leaf_count() const {
    std::size_t c = 0;
    for (const auto& nd : nodes_)
        if (nd.is_leaf()) ++c;
    return c;
}

std::string RegressionTree::dump() const {
    std::string out;
    append_dump(nodes_, 0, 0, out);
    return out;
}

RegressionTree grow(std::span<const double> x, std::span<const double> y,
                    std::size_t n_features, std::size_t min_leaf) {
    check_dataset(x, y, n_features, min_leaf);
    Builder b;
    b.x = x;
    b.y = y;
    b.d = n_features;
    b.min_leaf = min_leaf;
    b.idx.resize(y.size());
    std::iota(b.idx.begin(), b.idx.end(), std::size_t{0});
    b.build(0, y.size());

    RegressionTree t;
    t.nodes_ = std::move(b.nodes);
    t.n_features_ = n_features;
    t.n_train_ = y.size();
    double leaf_sse = 0.0;
    for (const auto& nd : t.nodes_)
        if (nd.is_leaf()) leaf_sse += nd.sse;
    t.mse_ = leaf_sse / static_cast<double>(y.size());
    return t;
}

namespace {

// Branch totals under a partial collapse: a collapsed node counts as a leaf
// with its own sse. Fills per-node {sse, leaves} for reachable nodes.
struct BranchStats {
    std::vector<double> sse;
    std::vector<std::size_t> leaves;
};

void branch_stats(const std::vector<TreeNode>& nodes, const std::vector<bool>& collapsed,
                  int i, BranchStats& bs) {
    const auto ui = static_cast<std::size_t>(i);
    const auto& nd = nodes[ui];
    if (nd.is_leaf() || collapsed[ui]) {
        bs.sse[ui] = nd.sse;
        bs.leaves[ui] = 1;
        return;
    }
    branch_stats(nodes, collapsed, nd.left, bs);
    branch_stats(nodes, collapsed, nd.right, bs);
    bs.sse[ui] = bs.sse[static_cast<std::size_t>(nd.left)] +
                 bs.sse[static_cast<std::size_t>(nd.right)];
    bs.leaves[ui] = bs.leaves[static_cast<std::size_t>(nd.left)] +
                    bs.leaves[static_cast<std::size_t>(nd.right)];
}

void reachable_internal(const std::vector<TreeNode>& nodes, const std::vector<bool>& collapsed,
                        int i, std::vector<int>& out) {
    const auto ui = static_cast<std::size_t>(i);
    const auto& nd = nodes[ui];
    if (nd.is_leaf() || collapsed[ui]) return;
    out.push_back(i);
    reachable_internal(nodes, collapsed, nd.left, out);
    reachable_internal(nodes, collapsed, nd.right, out);
}

}  // namespace

double PruneSequence::predict(std::size_t k, std::span<const double> x) const {
    if (x.size() != base_.n_features())
        throw std::invalid_argument("tree: query dimension does not match the features");
    if (k >= size()) throw std::invalid_argument("tree: prune entry out of range");
    const auto& nodes = base_.nodes();
    std::size_t i = 0;
    while (!nodes[i].is_leaf() && collapse_[i] > k) {
        const auto& nd = nodes[i];
        i = static_cast<std::size_t>(x[static_cast<std::size_t>(nd.feature)] <= nd.threshold
                                         ? nd.left
                                         : nd.right);
    }
    return nodes[i].mean;
}

RegressionTree PruneSequence::tree(std::size_t k) const {
    if (k >= size()) throw std::invalid_argument("tree: prune entry out of range");
    RegressionTree out;
    out.n_features_ = base_.n_features();
    out.n_train_ = base_.n_train();
    out.mse_ = mses_[k];

    // Pre-order copy of the base tree, stopping at nodes collapsed by step k.
    struct Copier {
        const std::vector<TreeNode>& src;
        const std::vector<std::size_t>& collapse;
        std::size_t k;
        std::vector<TreeNode>& dst;

        int copy(std::size_t i) {
            const int self = static_cast<int>(dst.size());
            TreeNode nd = src[i];
            if (!nd.is_leaf() && collapse[i] <= k) {
                nd.left = nd.right = -1;
                nd.feature = -1;
                nd.threshold = 0.0;
            }
            dst.push_back(nd);
            if (!dst[static_cast<std::size_t>(self)].is_leaf()) {
                const int l = copy(static_cast<std::size_t>(nd.left));
                const int r = copy(static_cast<std::size_t>(nd.right));
                dst[static_cast<std::size_t>(self)].left = l;
                dst[static_cast<std::size_t>(self)].right = r;
            }
            return self;
        }
    };
    Copier c{base_.nodes(), collapse_, k, out.nodes_};
    c.copy(0);
    return out;
}

PruneSequence prune_sequence(const RegressionTree& tree) {
    PruneSequence seq;
    seq.base_ = tree;
    const auto& nodes = tree.nodes();
    seq.collapse_.assign(nodes.size(), std::numeric_limits<std::size_t>::max());

    std::vector<bool> collapsed(nodes.size(), false);
    BranchStats bs;
    bs.sse.resize(nodes.size());
    bs.leaves.resize(nodes.size());
    const double n_train = static_cast<double>(tree.n_train());

    branch_stats(nodes, collapsed, 0, bs);
    seq.alphas_.push_back(0.0);
    seq.leaves_.push_back(bs.leaves[0]);
    seq.mses_.push_back(bs.sse[0] / n_train);

    std::vector<int> internal;
    while (true) {
        internal.clear();
        reachable_internal(nodes, collapsed, 0, internal);
        if (internal.empty()) break;

        // Weakest links: smallest per-leaf error increase, in tree-mse units.
        double g_min = std::numeric_limits<double>::infinity();
        for (int i : internal) {
            const auto ui = static_cast<std::size_t>(i);
            const double g = (nodes[ui].sse - bs.sse[ui]) / n_train /
                             static_cast<double>(bs.leaves[ui] - 1);
            g_min = std::min(g_min, g);
        }
        const std::size_t entry = seq.alphas_.size();
        for (int i : internal) {
            const auto ui = static_cast<std::size_t>(i);
            const double g = (nodes[ui].sse - bs.sse[ui]) / n_train /
                             static_cast<double>(bs.leaves[ui] - 1);
            if (g == g_min) {
                collapsed[ui] = true;
                seq.collapse_[ui] = entry;
            }
        }
        branch_stats(nodes, collapsed, 0, bs);
        seq.alphas_.push_back(g_min);
        seq.leaves_.push_back(bs.leaves[0]);
        seq.mses_.push_back(bs.sse[0] / n_train);
    }
    return seq;
}

RegressionTree select_tree(const PruneSequence& seq, std::span<const double> x_test,
                           std::span<const double> y_test) {
    const std::size_t d = seq.base().n_features();
    if (y_test.empty()) throw std::invalid_argument("tree: empty selection set");
    if (x_test.size() != y_test.size() * d)
        throw std::invalid_argument("tree: selection x/y sizes are inconsistent");
    const std::size_t K = seq.size();
    const std::size_t n2 = y_test.size();
    const auto& nodes = seq.base().nodes();
    const auto& collapse = seq.collapse_;

    // Per point, the prediction along its root-to-leaf path switches at the
    // collapse steps of its ancestors: node i answers for the entry range
    // [its own collapse step, first ancestor collapse step). Accumulate each
    // squared residual over that range with a difference array in k.
    std::vector<double> diff(K + 1, 0.0);
    for (std::size_t p = 0; p < n2; ++p) {
        const std::span<const double> xp{x_test.data() + p * d, d};
        std::size_t i = 0;
        std::size_t active_until = K;  // exclusive upper entry bound for node i
        while (true) {
            const auto& nd = nodes[i];
            const std::size_t from = nd.is_leaf() ? 0 : std::min(collapse[i], active_until);
            if (from < active_until) {
                const double r = y_test[p] - nd.mean;
                diff[from] += r * r;
                diff[active_until] -= r * r;
            }
            if (nd.is_leaf() || from == 0) break;
            active_until = from;
            i = static_cast<std::size_t>(xp[static_cast<std::size_t>(nd.feature)] <=
                                                 nd.threshold
                                             ? nd.left
                                             : nd.right);
        }
    }

    std::vector<double> rhat(K, 0.0);
    double acc = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        acc += diff[k];
        rhat[k] = acc / static_cast<double>(n2);
    }
    std::size_t kmin = 0;
    for (std::size_t k = 1; k < K; ++k)
        if (rhat[k] <= rhat[kmin]) kmin = k;

    // One standard error of the minimizer's squared residuals.
    double m4 = 0.0;
    for (std::size_t p = 0; p < n2; ++p) {
        const double r = y_test[p] - seq.predict(kmin, {x_test.data() + p * d, d});
        m4 += r * r * r * r;
    }
    m4 /= static_cast<double>(n2);
    const double se = std::sqrt(std::max(0.0, m4 - rhat[kmin] * rhat[kmin])) /
                      std::sqrt(static_cast<double>(n2));

    std::size_t pick = kmin;
    for (std::size_t k = kmin; k < K; ++k)
        if (rhat[k] <= rhat[kmin] + se) pick = k;
    return seq.tree(pick);
}

RegressionTree fit_with_holdout(std::span<const double> x, std::span<const double> y,
                                std::size_t n_features, std::size_t min_leaf,
                                double holdout_fraction, std::uint64_t seed) {
    check_dataset(x, y, n_features, min_leaf);
    if (!(holdout_fraction > 0.0) || !(holdout_fraction < 1.0))
        throw std::invalid_argument("tree: holdout fraction must lie strictly in (0,1)");
    const std::size_t n = y.size();
    if (n < 2) throw std::invalid_argument("tree: need two samples to hold one out");

    std::size_t n_test = static_cast<std::size_t>(
        static_cast<double>(n) * holdout_fraction);
    n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
    const std::size_t n_grow = n - n_test;

    const auto order = rng::shuffled_indices(n, seed);
    std::vector<double> gx(n_grow * n_features), gy(n_grow);
    std::vector<double> tx(n_test * n_features), ty(n_test);
    for (std::size_t k = 0; k < n_grow; ++k) {
        const std::size_t s = order[k];
        std::copy_n(x.data() + s * n_features, n_features, gx.data() + k * n_features);
        gy[k] = y[s];
    }
    for (std::size_t k = 0; k < n_test; ++k) {
        const std::size_t s = order[n_grow + k];
        std::copy_n(x.data() + s * n_features, n_features, tx.data() + k * n_features);
        ty[k] = y[s];
    }
    const auto full = grow(gx, gy, n_features, min_leaf);
    const auto seq = prune_sequence(full);
    return select_tree(seq, tx, ty);
}

std::size_t best_min_leaf(std::span<const double> x, std::span<const double> y,
                          std::size_t n_features, std::span<const std::size_t> candidates,
                          std::size_t n_folds, std::uint64_t seed) {
    check_dataset(x, y, n_features, 1);
    if (candidates.empty()) throw std::invalid_argument("tree: no min_leaf candidates");
    for (std::size_t c : candidates)
        if (c == 0) throw std::invalid_argument("tree: min_leaf candidate of zero");
    const std::size_t n = y.size();
    if (n_folds < 2 || n_folds > n)
        throw std::invalid_argument("tree: fold count must be in [2, n]");

    const auto order = rng::shuffled_indices(n, seed);
    // Contiguous blocks of the shuffled order, sizes differing by at most one.
    std::vector<std::size_t> fold_start(n_folds + 1, 0);
    for (std::size_t f = 0; f <= n_folds; ++f) fold_start[f] = f * n / n_folds;

    std::size_t best_cand = 0;
    double best_err = std::numeric_limits<double>::infinity();
    std::vector<double> tr_x, tr_y;
    for (const std::size_t cand : candidates) {
        double err = 0.0;
        for (std::size_t f = 0; f < n_folds; ++f) {
            const std::size_t held_lo = fold_start[f], held_hi = fold_start[f + 1];
            tr_x.clear();
            tr_y.clear();
            for (std::size_t k = 0; k < n; ++k) {
                if (k >= held_lo && k < held_hi) continue;
                const std::size_t s = order[k];
                tr_x.insert(tr_x.end(), x.data() + s * n_features,
                            x.data() + (s + 1) * n_features);
                tr_y.push_back(y[s]);
            }
            const auto t = grow(tr_x, tr_y, n_features, cand);
            for (std::size_t k = held_lo; k < held_hi; ++k) {
                const std::size_t s = order[k];
                const double r = y[s] - t.predict({x.data() + s * n_features, n_features});
                err += r * r;
            }
        }
        if (err < best_err || (err == best_err && cand > best_cand)) {
            best_err = err;
            best_cand = cand;
        }
    }
    return best_cand;
}

}  // namespace fbsde::cart
