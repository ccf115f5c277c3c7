#pragma once

// Evaluation metrics: Mann-Whitney ROC-AUC (ties count 1/2), the multilabel
// mean, support-weighted F1, and normal-approximation confidence intervals
// over run repetitions.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace atx {

// Probability that a random positive outscores a random negative, computed
// from the rank statistic with average ranks on ties.
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("roc_auc: scores and labels differ in length");
    const size_t n = scores.size();
    int64_t pos = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) throw std::invalid_argument("roc_auc: labels must be 0/1");
        pos += y;
    }
    const int64_t neg = static_cast<int64_t>(n) - pos;
    if (pos == 0 || neg == 0)
        throw std::invalid_argument("AUC undefined: labels contain a single class");

    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[idx[j + 1]] == scores[idx[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (size_t k = i; k <= j; ++k)
            if (labels[idx[k]] == 1) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    return (rank_sum_pos - 0.5 * static_cast<double>(pos) * (pos + 1)) /
           (static_cast<double>(pos) * static_cast<double>(neg));
}

struct MultilabelAuc {
    std::vector<double> per_class;    // NaN where excluded
    std::vector<int> excluded;        // classes with a single label value
    double mean = 0;
};

// Unweighted mean over classes that have both label values present; the rest
// are excluded and reported.
inline MultilabelAuc mean_multilabel_auc(const std::vector<std::vector<double>>& scores,
                                         const std::vector<std::vector<int>>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw std::invalid_argument("mean_multilabel_auc: empty or mismatched inputs");
    const size_t n = scores.size();
    const size_t l = scores[0].size();
    MultilabelAuc out;
    out.per_class.assign(l, std::numeric_limits<double>::quiet_NaN());
    double acc = 0;
    int used = 0;
    for (size_t c = 0; c < l; ++c) {
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (size_t i = 0; i < n; ++i) {
            if (scores[i].size() != l || labels[i].size() != l)
                throw std::invalid_argument("mean_multilabel_auc: ragged rows");
            s[i] = scores[i][c];
            y[i] = labels[i][c];
        }
        bool has0 = false, has1 = false;
        for (int v : y) (v ? has1 : has0) = true;
        if (!has0 || !has1) {
            out.excluded.push_back(static_cast<int>(c));
            continue;
        }
        out.per_class[c] = roc_auc(s, y);
        acc += out.per_class[c];
        ++used;
    }
    if (used == 0) throw std::invalid_argument("mean_multilabel_auc: no class has both labels present");
    out.mean = acc / used;
    return out;
}

// Support-weighted average of per-class F1; a class with undefined precision
// or recall contributes 0.
inline double weighted_f1(const std::vector<int>& pred, const std::vector<int>& truth, int k) {
    if (pred.empty() || pred.size() != truth.size())
        throw std::invalid_argument("weighted_f1: empty or mismatched inputs");
    std::vector<int64_t> tp(k, 0), fp(k, 0), fn(k, 0), support(k, 0);
    for (size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] < 0 || pred[i] >= k || truth[i] < 0 || truth[i] >= k)
            throw std::invalid_argument("weighted_f1: class out of range [0," + std::to_string(k) + ")");
        ++support[truth[i]];
        if (pred[i] == truth[i]) ++tp[truth[i]];
        else {
            ++fp[pred[i]];
            ++fn[truth[i]];
        }
    }
    const double total = static_cast<double>(pred.size());
    double out = 0;
    for (int c = 0; c < k; ++c) {
        if (support[c] == 0) continue;  // weight 0
        const double p_den = static_cast<double>(tp[c] + fp[c]);
        const double r_den = static_cast<double>(tp[c] + fn[c]);
        const double prec = p_den > 0 ? tp[c] / p_den : 0.0;
        const double rec = r_den > 0 ? tp[c] / r_den : 0.0;
        const double f1 = (prec + rec) > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
        out += (support[c] / total) * f1;
    }
    return out;
}

// mean +/- 1.96 * sample_std / sqrt(n) over repetitions.
inline std::pair<double, double> confidence_interval(const std::vector<double>& values) {
    const size_t n = values.size();
    if (n < 2) throw std::invalid_argument("confidence_interval: need at least 2 repetitions");
    double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0;
    for (double v : values) ss += (v - mean) * (v - mean);
    double sd = std::sqrt(ss / (n - 1));
    return {mean, 1.96 * sd / std::sqrt(static_cast<double>(n))};
}

struct MetricReport {
    std::string metric_name;              // mean_multilabel_auc | weighted_f1
    std::vector<double> per_class_auc;    // NaN where excluded (AUC tasks)
    std::vector<int> excluded_classes;
    double value = 0;                     // single-run value
    int n_samples = 0;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["metric"] = metric_name;
        j["value"] = value;
        j["n_samples"] = n_samples;
        if (!per_class_auc.empty()) {
            nlohmann::json pc = nlohmann::json::array();
            for (double v : per_class_auc) {
                if (std::isnan(v)) pc.push_back(nullptr);
                else pc.push_back(v);
            }
            j["per_class_auc"] = pc;
            j["excluded_classes"] = excluded_classes;
        }
        return j;
    }
};

// Aggregate across repetitions: mean plus half-width when n >= 2.
struct Aggregate {
    double mean = 0;
    std::optional<double> ci_half_width;
    int n = 0;

    static Aggregate of(const std::vector<double>& values) {
        Aggregate a;
        a.n = static_cast<int>(values.size());
        if (values.empty()) throw std::invalid_argument("Aggregate: no values");
        if (values.size() == 1) {
            a.mean = values[0];
            return a;
        }
        auto [m, hw] = confidence_interval(values);
        a.mean = m;
        a.ci_half_width = hw;
        return a;
    }
};

}  // namespace atx
