#include "collab/s3d.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "collab/csv.hpp"
#include "collab/error.hpp"
#include "collab/io.hpp"

namespace collab {

namespace {

struct Unit {
    double lo = 0;  // smallest feature value pooled into the unit
    double hi = 0;  // largest
    double sum = 0;
    double count = 0;
};

struct Partition {
    double gain = 0;  // between-block sum of squares
    std::vector<double> cuts;
};

std::vector<Unit> make_units(std::span<const std::size_t> rows, const std::vector<double>& x,
                             const std::vector<double>& y, std::size_t max_units) {
    std::vector<std::size_t> order(rows.begin(), rows.end());
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<Unit> units;
    for (auto r : order) {
        if (units.empty() || x[r] != units.back().hi) units.push_back({x[r], x[r], 0.0, 0.0});
        units.back().sum += y[r];
        units.back().count += 1.0;
    }
    if (units.size() <= max_units) return units;

    // Pool runs of distinct values into roughly equal-count units.
    const double n = static_cast<double>(order.size());
    std::vector<Unit> pooled;
    double before = 0.0;
    std::size_t current = std::numeric_limits<std::size_t>::max();
    for (const auto& u : units) {
        const auto g = static_cast<std::size_t>(before * static_cast<double>(max_units) / n);
        if (g != current) {
            pooled.push_back({u.lo, u.hi, 0.0, 0.0});
            current = g;
        }
        pooled.back().hi = u.hi;
        pooled.back().sum += u.sum;
        pooled.back().count += u.count;
        before += u.count;
    }
    return pooled;
}

// Optimal partition of consecutive units into at most max_blocks blocks,
// maximizing sum S_b^2/n_b - penalty * cuts.
Partition best_partition(const std::vector<Unit>& units, std::size_t max_blocks, double penalty) {
    Partition out;
    const std::size_t u = units.size();
    if (u < 2 || max_blocks < 2) return out;
    // Centred sums, so a block's score is its between-block contribution.
    double sum = 0.0, count = 0.0;
    for (const auto& unit : units) {
        sum += unit.sum;
        count += unit.count;
    }
    const double mu = sum / count;
    std::vector<double> ps(u + 1, 0.0), pn(u + 1, 0.0);
    for (std::size_t i = 0; i < u; ++i) {
        ps[i + 1] = ps[i] + (units[i].sum - units[i].count * mu);
        pn[i + 1] = pn[i] + units[i].count;
    }
    auto score = [&](std::size_t i, std::size_t j) {
        const double s = ps[j] - ps[i];
        return s * s / (pn[j] - pn[i]);
    };
    const std::size_t blocks = std::min(max_blocks, u);
    constexpr double kNeg = -std::numeric_limits<double>::infinity();
    // best[b][j]: first j units in b blocks.
    std::vector<std::vector<double>> best(blocks + 1, std::vector<double>(u + 1, kNeg));
    std::vector<std::vector<std::size_t>> arg(blocks + 1, std::vector<std::size_t>(u + 1, 0));
    for (std::size_t j = 1; j <= u; ++j) best[1][j] = score(0, j);
    for (std::size_t b = 2; b <= blocks; ++b) {
        for (std::size_t j = b; j <= u; ++j) {
            for (std::size_t i = b - 1; i < j; ++i) {
                const double v = best[b - 1][i] + score(i, j);
                if (v > best[b][j]) {
                    best[b][j] = v;
                    arg[b][j] = i;
                }
            }
        }
    }
    std::size_t chosen = 1;
    double chosen_value = 0.0;
    const double eps = 1e-12 * best[blocks][u];
    for (std::size_t b = 2; b <= blocks; ++b) {
        const double v = best[b][u] - penalty * static_cast<double>(b - 1);
        if (v > chosen_value + eps) {
            chosen = b;
            chosen_value = v;
        }
    }
    if (chosen == 1) return out;
    std::vector<std::size_t> ends;
    for (std::size_t b = chosen, j = u; b > 1; --b) {
        j = arg[b][j];
        ends.push_back(j);
    }
    std::reverse(ends.begin(), ends.end());
    for (auto e : ends) out.cuts.push_back(0.5 * (units[e - 1].hi + units[e].lo));
    out.gain = std::max(0.0, best[chosen][u]);
    return out;
}

std::size_t block_of(const std::vector<double>& cuts, double x) {
    return static_cast<std::size_t>(std::upper_bound(cuts.begin(), cuts.end(), x) - cuts.begin());
}

}  // namespace

S3dModel fit_s3d(const FeatureMatrix& m, std::string_view response, const S3dConfig& config) {
    if (config.max_features < 1) throw Error("S3D needs max_features >= 1");
    if (config.max_blocks < 2) throw Error("S3D needs max_blocks >= 2");
    if (config.lambda < 0.0) throw Error("S3D penalty must be nonnegative");
    const std::size_t n = m.rows();
    if (n < 2) throw Error("S3D needs at least two observations");

    S3dModel model;
    model.n_obs = n;
    for (const auto& c : m.columns()) {
        if (c != response) model.features.push_back(c);
    }
    const std::vector<double> y = m.column(response);
    std::vector<std::vector<double>> x;
    for (const auto& f : model.features) x.push_back(m.column(f));

    const double ybar = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    for (double v : y) model.tss += (v - ybar) * (v - ybar);
    if (!(model.tss > 1e-12 * std::max(1.0, ybar * ybar) * static_cast<double>(n))) {
        throw Error("S3D response has zero variance");
    }
    const double penalty = config.lambda * model.tss;

    struct Leaf {
        std::size_t node;
        std::vector<std::size_t> rows;
    };
    std::vector<Leaf> leaves(1);
    leaves[0].node = 0;
    leaves[0].rows.resize(n);
    std::iota(leaves[0].rows.begin(), leaves[0].rows.end(), std::size_t{0});
    model.nodes.push_back({-1, {}, {}, ybar, n});

    std::vector<bool> used(model.features.size(), false);
    double total = 0.0;
    for (std::size_t step = 0; step < config.max_features; ++step) {
        S3dStep s;
        s.candidate_r2.assign(model.features.size(), std::nan(""));
        std::size_t best_f = model.features.size();
        double best_gain = 0.0;
        for (std::size_t f = 0; f < model.features.size(); ++f) {
            if (used[f]) continue;
            double gain = 0.0;
            for (const auto& leaf : leaves) {
                gain += best_partition(make_units(leaf.rows, x[f], y, config.max_candidate_values), config.max_blocks,
                                       penalty)
                            .gain;
            }
            s.candidate_r2[f] = gain / model.tss;
            // gains equal up to rounding are ties; the earlier column keeps them
            if (best_f == model.features.size() || gain > best_gain + 1e-12 * model.tss) {
                best_f = f;
                best_gain = gain;
            }
        }
        if (best_f == model.features.size() || best_gain <= 0.0 || best_gain / model.tss < config.min_r2_gain) break;

        used[best_f] = true;
        std::vector<Leaf> next;
        for (auto& leaf : leaves) {
            const Partition p =
                best_partition(make_units(leaf.rows, x[best_f], y, config.max_candidate_values), config.max_blocks,
                               penalty);
            if (p.cuts.empty()) {
                next.push_back(std::move(leaf));
                continue;
            }
            std::vector<Leaf> parts(p.cuts.size() + 1);
            for (auto r : leaf.rows) parts[block_of(p.cuts, x[best_f][r])].rows.push_back(r);
            std::vector<std::size_t> children;
            for (auto& part : parts) {
                double sum = 0.0;
                for (auto r : part.rows) sum += y[r];
                part.node = model.nodes.size();
                children.push_back(part.node);
                model.nodes.push_back({-1, {}, {}, sum / static_cast<double>(part.rows.size()), part.rows.size()});
                next.push_back(std::move(part));
            }
            auto& node = model.nodes[leaf.node];
            node.feature = static_cast<int>(best_f);
            node.cuts = p.cuts;
            node.children = std::move(children);
        }
        leaves = std::move(next);

        total += best_gain / model.tss;
        s.feature = model.features[best_f];
        s.r2_gain = best_gain / model.tss;
        s.total_r2 = std::min(total, 1.0);
        model.selected.push_back(s.feature);
        model.steps.push_back(std::move(s));
    }
    return model;
}

double predict_s3d(const S3dModel& model, std::span<const double> row) {
    if (row.size() != model.features.size()) throw Error("S3D prediction row has the wrong number of features");
    std::size_t at = 0;
    while (model.nodes[at].feature >= 0) {
        const auto& node = model.nodes[at];
        at = node.children[block_of(node.cuts, row[static_cast<std::size_t>(node.feature)])];
    }
    return model.nodes[at].mean;
}

std::vector<double> predict_s3d(const S3dModel& model, const FeatureMatrix& m) {
    std::vector<std::size_t> idx;
    for (const auto& f : model.features) idx.push_back(m.column_index(f));
    std::vector<double> out(m.rows()), row(idx.size());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t j = 0; j < idx.size(); ++j) row[j] = m.at(r, idx[j]);
        out[r] = predict_s3d(model, row);
    }
    return out;
}

std::vector<S3dCell> S3dModel::cells() const {
    std::vector<S3dCell> out;
    if (nodes.empty()) return out;
    const double inf = std::numeric_limits<double>::infinity();
    auto slot = [&](int feature) {
        const auto& name = features[static_cast<std::size_t>(feature)];
        return static_cast<std::size_t>(std::find(selected.begin(), selected.end(), name) - selected.begin());
    };
    struct Frame {
        std::size_t node;
        std::vector<double> lower, upper;
    };
    std::vector<Frame> stack{{0, std::vector<double>(selected.size(), -inf), std::vector<double>(selected.size(), inf)}};
    while (!stack.empty()) {
        Frame f = std::move(stack.back());
        stack.pop_back();
        const auto& node = nodes[f.node];
        if (node.feature < 0) {
            out.push_back({f.lower, f.upper, node.mean, node.count});
            continue;
        }
        const auto s = slot(node.feature);
        // Reverse push keeps cells in ascending order.
        for (std::size_t c = node.children.size(); c-- > 0;) {
            Frame child{node.children[c], f.lower, f.upper};
            if (c > 0) child.lower[s] = node.cuts[c - 1];
            if (c < node.cuts.size()) child.upper[s] = node.cuts[c];
            stack.push_back(std::move(child));
        }
    }
    return out;
}

std::vector<FeatureImportanceRow> feature_importance_steps(const S3dModel& model) {
    std::vector<FeatureImportanceRow> out;
    for (std::size_t s = 0; s < model.steps.size(); ++s) {
        const auto& step = model.steps[s];
        for (std::size_t f = 0; f < model.features.size(); ++f) {
            if (std::isnan(step.candidate_r2[f])) continue;
            out.push_back({s + 1, model.features[f], step.candidate_r2[f], model.features[f] == step.feature});
        }
    }
    return out;
}

std::vector<std::size_t> fold_assignment(std::size_t n, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw Error("cross-validation needs at least two folds");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::size_t> fold(n);
    for (std::size_t i = 0; i < n; ++i) fold[perm[i]] = i % k;
    return fold;
}

LambdaSearch cross_validate_lambda(const FeatureMatrix& m, std::string_view response, std::span<const double> grid,
                                   const S3dConfig& config, std::uint64_t seed) {
    if (grid.empty()) throw Error("empty lambda grid");
    const std::size_t k = config.cv_folds;
    if (m.rows() < 10 * k) {
        throw Error("cross-validation needs at least " + std::to_string(10 * k) + " observations");
    }
    const auto fold = fold_assignment(m.rows(), k, seed);
    const std::size_t ycol = m.column_index(response);

    std::vector<FeatureMatrix> train(k), test(k);
    for (std::size_t f = 0; f < k; ++f) {
        std::vector<std::size_t> tr, te;
        for (std::size_t r = 0; r < m.rows(); ++r) (fold[r] == f ? te : tr).push_back(r);
        train[f] = m.select_rows(tr);
        test[f] = m.select_rows(te);
    }

    LambdaSearch out;
    double best = std::numeric_limits<double>::infinity();
    for (double lambda : grid) {
        S3dConfig c = config;
        c.lambda = lambda;
        LambdaScore score;
        score.lambda = lambda;
        for (std::size_t f = 0; f < k; ++f) {
            std::vector<double> pred;
            try {
                pred = predict_s3d(fit_s3d(train[f], response, c), test[f]);
            } catch (const Error&) {
                // Constant training response: predict it.
                pred.assign(test[f].rows(), train[f].at(0, ycol));
            }
            double sse = 0.0;
            for (std::size_t r = 0; r < test[f].rows(); ++r) {
                const double e = test[f].at(r, ycol) - pred[r];
                sse += e * e;
            }
            score.fold_mse.push_back(sse / static_cast<double>(test[f].rows()));
        }
        score.cv_mse = std::accumulate(score.fold_mse.begin(), score.fold_mse.end(), 0.0) / static_cast<double>(k);
        if (score.cv_mse < best || (score.cv_mse == best && lambda > out.best_lambda)) {
            best = score.cv_mse;
            out.best_lambda = lambda;
        }
        out.scores.push_back(std::move(score));
    }
    return out;
}

const std::vector<std::string>& s3d_default_features(Mode mode) {
    static const std::vector<std::string> github = {
        "effective_size", "watchers", "forks", "group_size", "aggregate_focus", "user_age", "project_age",
        "n_projects", "n_max", "n_min", "followers", "owned_repos", "description_len"};
    static const std::vector<std::string> wikipedia = {
        "effective_size", "group_size", "aggregate_focus", "user_age", "project_age", "n_projects", "n_max",
        "n_min", "group_work", "edit_size", "n_mean", "created_pages"};
    return mode == Mode::wikipedia ? wikipedia : github;
}

std::string serialize_cells(const S3dModel& model) {
    std::vector<std::string> header = {"cell"};
    for (const auto& f : model.selected) {
        header.push_back(f + "_lower");
        header.push_back(f + "_upper");
    }
    header.push_back("mean");
    header.push_back("count");
    std::string out = join_csv(header) + "\n";
    const auto cells = model.cells();
    for (std::size_t i = 0; i < cells.size(); ++i) {
        std::vector<std::string> fields = {std::to_string(i)};
        for (std::size_t j = 0; j < model.selected.size(); ++j) {
            fields.push_back(format_number(cells[i].lower[j]));
            fields.push_back(format_number(cells[i].upper[j]));
        }
        fields.push_back(format_number(cells[i].mean));
        fields.push_back(std::to_string(cells[i].count));
        out += join_csv(fields) + "\n";
    }
    return out;
}

}  // namespace collab
