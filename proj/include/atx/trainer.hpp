#pragma once

// Training loop for the two transfer modes. Per epoch: shuffled mini-batches,
// total_loss (attention transfer) or plain cross-entropy (transfer learning),
// backward, Adam on unfrozen parameters, validation metric, best+last
// checkpoints. Everything is seeded; a (config, seed, dataset) triple fully
// determines the run in single-threaded mode.

#include <chrono>
#include <filesystem>
#include <fstream>

#include "atx/adam.hpp"
#include "atx/augment.hpp"
#include "atx/checkpoint.hpp"
#include "atx/losses.hpp"
#include "atx/manifest.hpp"
#include "atx/metrics.hpp"
#include "atx/model.hpp"

namespace atx {

enum class TrainMode { transfer_learning, attention_transfer };
enum class SelectionMetric { mean_multilabel_auc, weighted_f1 };

inline const char* mode_name(TrainMode m) {
    return m == TrainMode::transfer_learning ? "transfer_learning" : "attention_transfer";
}
inline const char* selection_name(SelectionMetric m) {
    return m == SelectionMetric::mean_multilabel_auc ? "mean_multilabel_auc" : "weighted_f1";
}

struct Sample {
    Image image;
    std::vector<float> labels;  // multilabel targets after U-zero
    int class_index = -1;       // multiclass target
};

struct Dataset {
    TaskKind task = TaskKind::multilabel_binary;
    int n_classes = 0;
    std::vector<Sample> samples;
};

struct TrainConfig {
    TrainMode mode = TrainMode::transfer_learning;
    double beta = 0;  // attention-transfer weight divisor, required in AT mode
    double base_lr = 5e-5;
    int lr_halving_period = 16;
    int max_epochs = 128;
    int batch_size = 32;
    uint64_t seed = 0;
    FreezePolicy freeze = FreezePolicy::all_trainable();
    SelectionMetric selection = SelectionMetric::mean_multilabel_auc;
    int repetitions = 3;
    AugmentConfig augment;
    bool log_steps = true;

    void validate() const {
        if (mode == TrainMode::attention_transfer && beta <= 0)
            throw std::invalid_argument("TrainConfig: attention_transfer requires beta > 0");
        if (mode == TrainMode::transfer_learning && beta != 0)
            throw std::invalid_argument("TrainConfig: beta is only meaningful in attention_transfer mode");
        if (base_lr <= 0 || lr_halving_period < 1 || max_epochs < 1 || batch_size < 2 ||
            repetitions < 1)
            throw std::invalid_argument("TrainConfig: counts must be positive (batch_size >= 2)");
    }

    uint64_t hash() const {
        std::ostringstream os;
        os << mode_name(mode) << '|' << beta << '|' << base_lr << '|' << lr_halving_period << '|'
           << max_epochs << '|' << batch_size << '|' << seed << '|' << static_cast<int>(freeze.kind)
           << '|' << freeze.k << '|' << selection_name(selection) << '|' << augment.out_size;
        uint64_t h = 1469598103934665603ULL;
        for (char c : os.str()) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ULL;
        }
        return h;
    }
};

struct EpochLog {
    int epoch = 0;
    double lr = 0, ce = 0, at = 0, total = 0, val_metric = 0;
};
struct StepLog {
    int epoch = 0, step = 0;
    double ce = 0, at = 0, total = 0;
};

struct RunRecord {
    std::vector<EpochLog> epochs;
    std::vector<StepLog> steps;
    std::string best_checkpoint, last_checkpoint;
    int best_epoch = -1;
    double best_val_metric = std::numeric_limits<double>::quiet_NaN();
    double wall_seconds = 0;
    uint64_t config_hash = 0;
    std::optional<int> aborted_epoch;  // non-finite loss or gradient abort
    std::string abort_reason;
};

namespace detail {

inline std::mt19937 epoch_rng(uint64_t seed, uint64_t epoch) {
    return sample_rng(seed ^ 0xE70C4ULL, epoch, 0);
}

template <typename T>
Tensor<T> stack_batch(const Dataset& ds, const std::vector<int>& indices,
                      const AugmentConfig& cfg, bool train, uint64_t seed, uint64_t epoch) {
    const int s = cfg.out_size;
    const int b = static_cast<int>(indices.size());
    std::vector<T> data(static_cast<size_t>(b) * 3 * s * s);
    for (int i = 0; i < b; ++i) {
        Tensor<float> img;
        if (train) {
            auto rng = sample_rng(seed, epoch, static_cast<uint64_t>(indices[i]));
            img = augment_train(ds.samples[indices[i]].image, cfg, rng);
        } else {
            img = augment_eval(ds.samples[indices[i]].image, cfg);
        }
        for (int64_t j = 0; j < img.size(); ++j)
            data[static_cast<size_t>(i) * 3 * s * s + j] = static_cast<T>(img.raw()[j]);
    }
    return Tensor<T>::from({b, 3, s, s}, std::move(data));
}

template <typename T>
Tensor<T> stack_targets(const Dataset& ds, const std::vector<int>& indices) {
    const int b = static_cast<int>(indices.size());
    if (ds.task == TaskKind::multilabel_binary) {
        std::vector<T> t(static_cast<size_t>(b) * ds.n_classes);
        for (int i = 0; i < b; ++i)
            for (int c = 0; c < ds.n_classes; ++c)
                t[static_cast<size_t>(i) * ds.n_classes + c] =
                    static_cast<T>(ds.samples[indices[i]].labels[c]);
        return Tensor<T>::from({b, ds.n_classes}, std::move(t));
    }
    std::vector<T> t(b);
    for (int i = 0; i < b; ++i) t[i] = static_cast<T>(ds.samples[indices[i]].class_index);
    return Tensor<T>::from({b}, std::move(t));
}

}  // namespace detail

// Inference scores for every sample: sigmoid per label (multilabel) or
// softmax row (multiclass).
template <typename T>
std::vector<std::vector<double>> predict_scores(Model<T>& model, const Dataset& ds,
                                                const AugmentConfig& cfg, int batch_size) {
    NoGradGuard ng;
    std::vector<std::vector<double>> scores;
    scores.reserve(ds.samples.size());
    for (size_t start = 0; start < ds.samples.size(); start += batch_size) {
        std::vector<int> idx;
        for (size_t i = start; i < std::min(ds.samples.size(), start + batch_size); ++i)
            idx.push_back(static_cast<int>(i));
        auto batch = detail::stack_batch<T>(ds, idx, cfg, false, 0, 0);
        auto logits = model.forward(batch, false);
        auto probs = ds.task == TaskKind::multilabel_binary ? sigmoid(logits) : softmax(logits);
        const int k = probs.dim(1);
        for (size_t i = 0; i < idx.size(); ++i) {
            std::vector<double> row(k);
            for (int c = 0; c < k; ++c) row[c] = static_cast<double>(probs.raw()[i * k + c]);
            scores.push_back(std::move(row));
        }
    }
    return scores;
}

template <typename T>
MetricReport evaluate(Model<T>& model, const Dataset& ds, const AugmentConfig& cfg,
                      SelectionMetric selection, int batch_size = 32) {
    if (ds.samples.empty()) throw std::invalid_argument("evaluate: empty dataset");
    auto scores = predict_scores(model, ds, cfg, batch_size);
    MetricReport rep;
    rep.n_samples = static_cast<int>(ds.samples.size());
    rep.metric_name = selection_name(selection);
    if (selection == SelectionMetric::mean_multilabel_auc) {
        if (ds.task != TaskKind::multilabel_binary)
            throw std::invalid_argument("evaluate: mean_multilabel_auc requires a multilabel task");
        std::vector<std::vector<int>> labels(ds.samples.size(), std::vector<int>(ds.n_classes));
        for (size_t i = 0; i < ds.samples.size(); ++i)
            for (int c = 0; c < ds.n_classes; ++c)
                labels[i][c] = ds.samples[i].labels[c] > 0.5f ? 1 : 0;
        auto r = mean_multilabel_auc(scores, labels);
        rep.value = r.mean;
        rep.per_class_auc = r.per_class;
        rep.excluded_classes = r.excluded;
    } else {
        if (ds.task != TaskKind::multiclass)
            throw std::invalid_argument("evaluate: weighted_f1 requires a multiclass task");
        std::vector<int> pred(ds.samples.size()), truth(ds.samples.size());
        for (size_t i = 0; i < ds.samples.size(); ++i) {
            pred[i] = static_cast<int>(std::max_element(scores[i].begin(), scores[i].end()) -
                                       scores[i].begin());
            truth[i] = ds.samples[i].class_index;
        }
        rep.value = weighted_f1(pred, truth, ds.n_classes);
    }
    return rep;
}

inline void write_epoch_log(const std::string& path, const RunRecord& rec) {
    std::ofstream out(path);
    out << "epoch,lr,ce,at,total,val_metric\n";
    char buf[256];
    for (const auto& e : rec.epochs) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.17g\n", e.epoch, e.lr, e.ce,
                      e.at, e.total, e.val_metric);
        out << buf;
    }
}

inline void write_step_log(const std::string& path, const RunRecord& rec) {
    std::ofstream out(path);
    out << "epoch,step,ce,at,total\n";
    char buf[256];
    for (const auto& s : rec.steps) {
        std::snprintf(buf, sizeof(buf), "%d,%d,%.9g,%.9g,%.9g\n", s.epoch, s.step, s.ce, s.at,
                      s.total);
        out << buf;
    }
}

// Trains the student (teacher present and frozen in attention-transfer mode).
// Writes best/last checkpoints plus epoch/step CSV logs under out_dir.
// A non-finite loss aborts the run and records the epoch.
template <typename T>
RunRecord train(const TrainConfig& config, Model<T>& student, Model<T>* teacher,
                const Dataset& train_ds, const Dataset& val_ds, const std::string& out_dir) {
    config.validate();
    const auto t_start = std::chrono::steady_clock::now();
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    if (config.mode == TrainMode::attention_transfer) {
        if (!teacher)
            throw std::invalid_argument("train: attention_transfer mode requires a teacher model");
        if (!teacher->fully_frozen())
            throw std::invalid_argument("train: the teacher must be fully frozen");
    } else if (teacher) {
        throw std::invalid_argument("train: transfer_learning mode takes no teacher");
    }
    if (train_ds.samples.size() < 2) throw std::invalid_argument("train: need at least 2 samples");

    student.apply_freeze(config.freeze);

    // tap compatibility check before any training step (epoch 0)
    if (config.mode == TrainMode::attention_transfer) {
        NoGradGuard ng;
        std::vector<int> probe{0, 1};
        auto batch = detail::stack_batch<T>(train_ds, probe, config.augment, false, 0, 0);
        auto s_tap = student.forward_with_taps(batch, false).taps.at(student.tap_name);
        auto t_tap = teacher->forward_with_taps(batch, false).taps.at(teacher->tap_name);
        if (s_tap.shape() != t_tap.shape()) {
            const int s_hw = s_tap.dim(2), t_hw = t_tap.dim(2);
            if (s_hw < t_hw || s_tap.dim(3) < t_tap.dim(3))
                throw std::invalid_argument(
                    "train: tap incompatibility, student tap " + shape_str(s_tap.shape()) +
                    " cannot be adapted up to teacher tap " + shape_str(t_tap.shape()));
            student.attach_tap_adapter(s_tap.dim(1), t_tap.dim(1), t_hw, config.seed);
        }
    }

    AdamOptimizer<T> optimizer(student.params());
    if (student.fully_frozen())
        throw std::invalid_argument("train: freeze policy leaves no trainable parameters");

    RunRecord rec;
    rec.config_hash = config.hash();
    const std::string best_path = (fs::path(out_dir) / "best.atx").string();
    const std::string last_path = (fs::path(out_dir) / "last.atx").string();

    std::vector<int> order(train_ds.samples.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        const double lr = lr_schedule(epoch, config.base_lr, config.lr_halving_period);
        auto shuffle_rng = detail::epoch_rng(config.seed, static_cast<uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double ce_acc = 0, at_acc = 0, total_acc = 0;
        int steps = 0;
        bool aborted = false;
        for (size_t start = 0; start < order.size(); start += config.batch_size) {
            std::vector<int> idx(order.begin() + start,
                                 order.begin() + std::min(order.size(), start + config.batch_size));
            if (idx.size() < 2) continue;  // batch-norm train mode needs >= 2 samples
            auto batch = detail::stack_batch<T>(train_ds, idx, config.augment, true, config.seed,
                                                static_cast<uint64_t>(epoch));
            auto targets = detail::stack_targets<T>(train_ds, idx);

            double ce_v, at_v, total_v;
            Tensor<T> loss;
            auto fwd = student.forward_with_taps(batch, true);
            if (config.mode == TrainMode::attention_transfer) {
                Tensor<T> t_tap;
                {
                    NoGradGuard ng;
                    t_tap = teacher->forward_with_taps(batch, false).taps.at(teacher->tap_name);
                }
                auto lb = total_loss(fwd.logits, targets, fwd.taps.at(student.tap_name), t_tap,
                                     config.beta, train_ds.task);
                ce_v = lb.ce_value();
                at_v = lb.at_value();
                total_v = lb.total_value();
                loss = lb.total;
            } else {
                loss = cross_entropy(fwd.logits, targets, train_ds.task);
                ce_v = static_cast<double>(loss.value());
                at_v = 0;
                total_v = ce_v;
            }
            if (!std::isfinite(total_v)) {
                rec.aborted_epoch = epoch;
                rec.abort_reason = "non-finite loss";
                aborted = true;
                break;
            }
            loss.backward();
            try {
                optimizer.step(lr);
            } catch (const std::runtime_error& e) {
                if (std::string(e.what()).find("non-finite gradient") == std::string::npos) throw;
                rec.aborted_epoch = epoch;
                rec.abort_reason = e.what();
                aborted = true;
                break;
            }
            optimizer.zero_grad();

            if (config.log_steps) rec.steps.push_back({epoch, steps, ce_v, at_v, total_v});
            ce_acc += ce_v;
            at_acc += at_v;
            total_acc += total_v;
            ++steps;
        }
        if (aborted) break;
        if (steps == 0) throw std::runtime_error("train: no usable batches (all below size 2)");

        const auto val_rep = evaluate(student, val_ds, config.augment, config.selection,
                                      config.batch_size);
        EpochLog el{epoch, lr, ce_acc / steps, at_acc / steps, total_acc / steps, val_rep.value};
        rec.epochs.push_back(el);

        save_checkpoint(last_path, student, epoch, val_rep.value);
        rec.last_checkpoint = last_path;
        if (std::isfinite(val_rep.value) &&
            (rec.best_epoch < 0 || val_rep.value > rec.best_val_metric)) {
            rec.best_epoch = epoch;
            rec.best_val_metric = val_rep.value;
            save_checkpoint(best_path, student, epoch, val_rep.value);
            rec.best_checkpoint = best_path;
        }
    }

    write_epoch_log((fs::path(out_dir) / "epochs.csv").string(), rec);
    if (config.log_steps) write_step_log((fs::path(out_dir) / "steps.csv").string(), rec);
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return rec;
}

template <typename T>
RunRecord train(const TrainConfig& config, Model<T>& student, std::nullptr_t,
                const Dataset& train_ds, const Dataset& val_ds, const std::string& out_dir) {
    return train(config, student, static_cast<Model<T>*>(nullptr), train_ds, val_ds, out_dir);
}

// Best epoch by validation metric; ties break to the earliest epoch.
inline int select_best(const RunRecord& rec) {
    int best = -1;
    double best_v = 0;
    for (const auto& e : rec.epochs) {
        if (!std::isfinite(e.val_metric)) continue;
        if (best < 0 || e.val_metric > best_v) {
            best = e.epoch;
            best_v = e.val_metric;
        }
    }
    if (best < 0) throw std::runtime_error("select_best: no finite validation metric in the run");
    return best;
}

}  // namespace atx
