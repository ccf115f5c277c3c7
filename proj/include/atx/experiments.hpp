#pragma once

// Experiment front end: versioned key-value spec files (unknown keys
// rejected), dataset materialization, and the four experiment drivers
// (train, beta search, size sweep, compare) plus dataset generation.
// Sweep cells are independent and may run on ATX_WORKERS threads; each cell
// is internally single-threaded and self-seeded.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include "atx/plot.hpp"
#include "atx/synthetic.hpp"
#include "atx/trainer.hpp"

namespace atx {

// Raised for malformed specs / misuse (CLI exit code 1); runtime failures
// surface as other exceptions (exit code 2).
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ExperimentSpec {
    TaskKind task = TaskKind::multilabel_binary;
    std::string manifest_path;  // file-backed source
    std::string image_root;     // defaults to the manifest's directory
    std::optional<SyntheticSpec> synthetic;
    double split_train = 0.6, split_val = 0.2, split_test = 0.2;
    std::optional<uint64_t> split_seed;  // defaults to the run seed
    ArchConfig student;
    TrainConfig train;
    std::vector<double> beta_grid{1, 20, 30, 50, 60, 100, 1000, 2000};
    std::vector<int> size_list;

    void validate() const {
        if (manifest_path.empty() == !synthetic.has_value())
            throw UsageError("spec: exactly one of 'manifest' or 'synthetic.*' must be given");
        if (split_train <= 0 || split_val <= 0 || split_test < 0 ||
            split_train + split_val + split_test > 1.0 + 1e-9)
            throw UsageError("spec: split fractions must be positive and sum to <= 1");
        student.validate();
        train.validate();
        if ((task == TaskKind::multiclass) != (student.head == HeadKind::softmax_multiclass))
            throw UsageError("spec: task and student head kind disagree");
        if ((task == TaskKind::multiclass) !=
            (train.selection == SelectionMetric::weighted_f1))
            throw UsageError("spec: selection metric does not match the task");
    }
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(ch))) {
            cur.push_back(ch);
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

struct SpecParser {
    std::map<std::string, std::pair<std::string, int>> kv;  // key -> (value, line)
    std::set<std::string> consumed;
    std::string path;

    bool has(const std::string& key) const { return kv.count(key) > 0; }

    std::optional<std::string> take(const std::string& key) {
        auto it = kv.find(key);
        if (it == kv.end()) return std::nullopt;
        consumed.insert(key);
        return it->second.first;
    }
    std::string require(const std::string& key) {
        auto v = take(key);
        if (!v) throw UsageError("spec " + path + ": missing required key '" + key + "'");
        return *v;
    }
    double number(const std::string& key, double fallback) {
        auto v = take(key);
        if (!v) return fallback;
        try {
            size_t pos;
            double d = std::stod(*v, &pos);
            if (pos != v->size()) throw std::invalid_argument(*v);
            return d;
        } catch (const std::exception&) {
            throw UsageError("spec " + path + ": key '" + key + "' needs a number, got '" + *v + "'");
        }
    }
    int integer(const std::string& key, int fallback) {
        double d = number(key, fallback);
        if (d != std::floor(d))
            throw UsageError("spec " + path + ": key '" + key + "' needs an integer");
        return static_cast<int>(d);
    }

    void reject_unknown() const {
        for (const auto& [key, vl] : kv)
            if (!consumed.count(key))
                throw UsageError("spec " + path + ":" + std::to_string(vl.second) +
                                 ": unknown key '" + key + "'");
    }
};

inline SpecParser read_spec_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("spec '" + path + "': cannot open");
    SpecParser p;
    p.path = path;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto eq = t.find('=');
        if (eq == std::string::npos)
            throw UsageError("spec " + path + ":" + std::to_string(lineno) +
                             ": expected 'key = value'");
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (key.empty()) throw UsageError("spec " + path + ":" + std::to_string(lineno) + ": empty key");
        if (p.kv.count(key))
            throw UsageError("spec " + path + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
        p.kv[key] = {value, lineno};
    }
    return p;
}

}  // namespace detail

inline ExperimentSpec parse_spec_file(const std::string& path) {
    auto p = detail::read_spec_file(path);
    const int version = p.integer("spec_version", -1);
    if (version != 1)
        throw UsageError("spec " + path + ": spec_version must be 1 (got " +
                         std::to_string(version) + ")");
    ExperimentSpec spec;

    const std::string task = p.require("task");
    if (task == "multilabel") spec.task = TaskKind::multilabel_binary;
    else if (task == "multiclass") spec.task = TaskKind::multiclass;
    else throw UsageError("spec " + path + ": task must be multilabel or multiclass");

    if (auto v = p.take("manifest")) spec.manifest_path = *v;
    if (auto v = p.take("image_root")) spec.image_root = *v;
    if (p.has("synthetic.n_patients")) {
        SyntheticSpec sy;
        sy.task = spec.task;
        sy.n_patients = p.integer("synthetic.n_patients", sy.n_patients);
        sy.images_per_patient = p.integer("synthetic.images_per_patient", sy.images_per_patient);
        sy.image_size = p.integer("synthetic.image_size", sy.image_size);
        sy.n_classes = p.integer("synthetic.n_classes", sy.n_classes);
        sy.blob_count = p.integer("synthetic.blob_count", sy.blob_count);
        sy.texture_cycles = p.number("synthetic.texture_cycles", sy.texture_cycles);
        sy.signal_amplitude = p.number("synthetic.signal_amplitude", sy.signal_amplitude);
        sy.noise_level = p.number("synthetic.noise_level", sy.noise_level);
        sy.domain_shift = p.number("synthetic.domain_shift", sy.domain_shift);
        sy.validate();
        spec.synthetic = sy;
    }

    spec.split_train = p.number("split.train", spec.split_train);
    spec.split_val = p.number("split.val", spec.split_val);
    spec.split_test = p.number("split.test", spec.split_test);
    if (p.has("split.seed")) spec.split_seed = static_cast<uint64_t>(p.integer("split.seed", 0));

    spec.train.augment.out_size = p.integer("augment.size", 256);
    spec.train.augment.max_rotation_deg = p.number("augment.max_rotation_deg", 15.0);
    spec.train.augment.flip_prob = p.number("augment.flip_prob", 0.5);

    ArchConfig& a = spec.student;
    a.head = spec.task == TaskKind::multiclass ? HeadKind::softmax_multiclass
                                               : HeadKind::sigmoid_multilabel;
    a.in_channels = 3;
    a.init_channels = p.integer("student.init_channels", 64);
    a.growth_rate = p.integer("student.growth_rate", 32);
    if (auto v = p.take("student.blocks")) {
        a.block_layer_counts.clear();
        for (const auto& tok : detail::split_list(*v)) a.block_layer_counts.push_back(std::stoi(tok));
    }
    a.transition_compression = p.number("student.compression", 0.5);
    a.num_classes = p.integer("student.num_classes", -1);
    if (a.num_classes < 0) throw UsageError("spec " + path + ": missing student.num_classes");
    if (auto v = p.take("student.projections")) {
        a.projection_widths.clear();
        for (const auto& tok : detail::split_list(*v)) a.projection_widths.push_back(std::stoi(tok));
    }
    a.pool_target = p.integer("student.pool_target", 8);
    if (auto v = p.take("student.tap")) a.tap_spec = *v;

    TrainConfig& t = spec.train;
    const std::string mode = p.require("train.mode");
    if (mode == "transfer_learning") t.mode = TrainMode::transfer_learning;
    else if (mode == "attention_transfer") t.mode = TrainMode::attention_transfer;
    else throw UsageError("spec " + path + ": train.mode must be transfer_learning or attention_transfer");
    t.beta = p.number("train.beta", 0.0);
    t.base_lr = p.number("train.lr", 5e-5);
    t.lr_halving_period = p.integer("train.lr_halving_period", 16);
    t.max_epochs = p.integer("train.max_epochs", 128);
    t.batch_size = p.integer("train.batch_size", 32);
    t.repetitions = p.integer("train.repetitions", 3);
    if (auto v = p.take("train.selection")) {
        if (*v == "mean_multilabel_auc") t.selection = SelectionMetric::mean_multilabel_auc;
        else if (*v == "weighted_f1") t.selection = SelectionMetric::weighted_f1;
        else throw UsageError("spec " + path + ": unknown train.selection '" + *v + "'");
    } else {
        t.selection = spec.task == TaskKind::multiclass ? SelectionMetric::weighted_f1
                                                        : SelectionMetric::mean_multilabel_auc;
    }
    if (auto v = p.take("train.freeze")) {
        if (*v == "all_trainable") t.freeze = FreezePolicy::all_trainable();
        else if (*v == "frozen") t.freeze = FreezePolicy::frozen();
        else if (v->rfind("unfreeze_last_k:", 0) == 0)
            t.freeze = FreezePolicy::unfreeze_last_k(std::stoi(v->substr(16)));
        else throw UsageError("spec " + path + ": unknown train.freeze '" + *v + "'");
    }
    if (auto v = p.take("train.log_steps")) t.log_steps = (*v == "true" || *v == "1");

    if (auto v = p.take("sweep.betas")) {
        spec.beta_grid.clear();
        for (const auto& tok : detail::split_list(*v)) spec.beta_grid.push_back(std::stod(tok));
    }
    if (auto v = p.take("sweep.sizes")) {
        spec.size_list.clear();
        for (const auto& tok : detail::split_list(*v)) spec.size_list.push_back(std::stoi(tok));
    }

    p.reject_unknown();
    spec.validate();
    return spec;
}

// ---------------------------------------------------------------------------
// Dataset materialization
// ---------------------------------------------------------------------------

struct DataBundle {
    Dataset train, val, test;
    DatasetManifest manifest;
    SplitAssignment split;
    // patient order over the train split, for nested size-sweep subsets
    std::vector<std::string> train_patient_order;
};

namespace detail {

inline Dataset dataset_from_records(const DatasetManifest& m, const std::vector<int>& indices,
                                    const std::string& root) {
    namespace fs = std::filesystem;
    Dataset ds;
    ds.task = m.task;
    ds.n_classes = m.n_classes;
    for (int idx : indices) {
        const auto& rec = m.records[idx];
        Sample s;
        fs::path p(rec.image_path);
        s.image = decode_image(p.is_absolute() ? p.string() : (fs::path(root) / p).string());
        if (m.task == TaskKind::multilabel_binary) s.labels = map_labels_uzero(rec.labels);
        else s.class_index = rec.class_index;
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

}  // namespace detail

inline DataBundle materialize_data(const ExperimentSpec& spec, const std::string& out_dir,
                                   uint64_t seed) {
    namespace fs = std::filesystem;
    DataBundle b;
    const uint64_t split_seed = spec.split_seed.value_or(seed);
    std::string manifest_path = spec.manifest_path;
    std::string root = spec.image_root;
    if (spec.synthetic) {
        const std::string data_dir = (fs::path(out_dir) / "data").string();
        auto rep = generate_synthetic(*spec.synthetic, split_seed, data_dir);
        manifest_path = rep.manifest_path;
        root = data_dir;
    }
    b.manifest = load_manifest(manifest_path);
    if (b.manifest.task != spec.task)
        throw UsageError("spec task does not match the manifest task");
    if (root.empty()) root = fs::path(manifest_path).parent_path().string();
    b.split = split_by_patient(
        b.manifest, SplitRequest::fractions(spec.split_train, spec.split_val, spec.split_test),
        split_seed);
    b.train = detail::dataset_from_records(b.manifest, b.split.train, root);
    b.val = detail::dataset_from_records(b.manifest, b.split.validation, root);
    b.test = detail::dataset_from_records(b.manifest, b.split.test, root);

    // first-appearance patient order within the shuffled train split
    std::set<std::string> seen;
    for (int idx : b.split.train) {
        const auto& pid = b.manifest.records[idx].patient_id;
        if (seen.insert(pid).second) b.train_patient_order.push_back(pid);
    }
    // reshuffle deterministically so subset nesting has its own seed path
    std::mt19937 rng(static_cast<uint32_t>(split_seed ^ 0x5125EEDULL));
    std::shuffle(b.train_patient_order.begin(), b.train_patient_order.end(), rng);
    return b;
}

// Whole-patient nested subset: first patients in the fixed order until
// `size` records are reached (same seed => smaller subsets prefix larger).
inline std::vector<int> subset_train_indices(const DataBundle& b, int size) {
    if (size > static_cast<int>(b.split.train.size()))
        throw UsageError("size " + std::to_string(size) + " exceeds " +
                         std::to_string(b.split.train.size()) + " training records");
    std::map<std::string, std::vector<int>> by_patient;  // index into b.train
    for (size_t i = 0; i < b.split.train.size(); ++i)
        by_patient[b.manifest.records[b.split.train[i]].patient_id].push_back(static_cast<int>(i));
    std::vector<int> out;
    for (const auto& pid : b.train_patient_order) {
        if (static_cast<int>(out.size()) >= size) break;
        for (int i : by_patient[pid]) out.push_back(i);
    }
    return out;
}

inline Dataset dataset_subset(const Dataset& ds, const std::vector<int>& indices) {
    Dataset out;
    out.task = ds.task;
    out.n_classes = ds.n_classes;
    for (int i : indices) out.samples.push_back(ds.samples[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Cell execution (ATX_WORKERS threads; cells are self-seeded and independent)
// ---------------------------------------------------------------------------

namespace detail {

inline int worker_count(int cells) {
    const char* env = std::getenv("ATX_WORKERS");
    int w = env ? std::atoi(env) : 1;
    if (w < 1) w = 1;
    return std::min(w, cells);
}

template <typename F>
void run_cells(int n, F&& fn) {
    const int workers = worker_count(n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex err_mu;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (;;) {
                int i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lk(err_mu);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Experiment drivers
// ---------------------------------------------------------------------------

struct RepOutcome {
    uint64_t seed = 0;
    int best_epoch = -1;
    double best_val = std::numeric_limits<double>::quiet_NaN();
    double test_metric = std::numeric_limits<double>::quiet_NaN();
    bool aborted = false;
    RunRecord record;
};

namespace detail {

// One repetition: fresh student, full training, test metric of the best
// checkpoint.
inline RepOutcome run_one_rep(const ExperimentSpec& spec, const Dataset& train_ds,
                              const Dataset& val_ds, const Dataset& test_ds, Model<float>* teacher,
                              double beta, uint64_t seed, const std::string& rep_dir) {
    RepOutcome out;
    out.seed = seed;
    TrainConfig cfg = spec.train;
    cfg.seed = seed;
    cfg.beta = beta;
    auto student = build_densenet_scaled<float>(spec.student, seed);
    out.record = train(cfg, student, teacher, train_ds, val_ds, rep_dir);
    if (out.record.aborted_epoch.has_value() || out.record.epochs.empty()) {
        out.aborted = true;
        return out;
    }
    out.best_epoch = select_best(out.record);
    out.best_val = out.record.best_val_metric;
    auto best = model_from_checkpoint<float>(out.record.best_checkpoint);
    auto report = evaluate(best, test_ds, cfg.augment, cfg.selection, cfg.batch_size);
    out.test_metric = report.value;
    std::ofstream(std::filesystem::path(rep_dir) / "metrics.json") << report.to_json().dump(2) << "\n";
    return out;
}

inline nlohmann::json aggregate_json(const std::vector<double>& values) {
    auto agg = Aggregate::of(values);
    nlohmann::json j;
    j["mean"] = agg.mean;
    if (agg.ci_half_width) j["ci_half_width"] = *agg.ci_half_width;
    else j["ci_half_width"] = nullptr;
    j["n"] = agg.n;
    return j;
}

}  // namespace detail

// `atx train`: `repetitions` seeded runs; per-rep logs/checkpoints plus an
// aggregate summary with mean +/- CI.
inline nlohmann::json run_training_experiment(const ExperimentSpec& spec,
                                              const std::string& out_dir,
                                              const std::string& teacher_ckpt, uint64_t base_seed,
                                              int reps) {
    namespace fs = std::filesystem;
    if (spec.train.mode == TrainMode::attention_transfer && teacher_ckpt.empty())
        throw UsageError("attention_transfer mode requires --teacher <checkpoint>");
    if (spec.train.mode == TrainMode::transfer_learning && !teacher_ckpt.empty())
        throw UsageError("transfer_learning mode takes no --teacher");
    fs::create_directories(out_dir);
    auto data = materialize_data(spec, out_dir, base_seed);

    std::optional<Model<float>> teacher;
    if (!teacher_ckpt.empty()) {
        teacher.emplace(model_from_checkpoint<float>(teacher_ckpt));
        teacher->apply_freeze(FreezePolicy::frozen());
    }

    std::vector<RepOutcome> outcomes(reps);
    detail::run_cells(reps, [&](int r) {
        const std::string rep_dir = (fs::path(out_dir) / ("rep" + std::to_string(r))).string();
        outcomes[r] = detail::run_one_rep(spec, data.train, data.val, data.test,
                                          teacher ? &*teacher : nullptr, spec.train.beta,
                                          base_seed + r, rep_dir);
    });

    nlohmann::json summary;
    summary["selection_metric"] = selection_name(spec.train.selection);
    summary["mode"] = mode_name(spec.train.mode);
    if (spec.train.mode == TrainMode::attention_transfer) summary["beta"] = spec.train.beta;
    summary["repetitions"] = reps;
    summary["n_train"] = data.train.samples.size();
    summary["n_val"] = data.val.samples.size();
    summary["n_test"] = data.test.samples.size();
    nlohmann::json reps_json = nlohmann::json::array();
    std::vector<double> best_vals, test_vals;
    for (const auto& o : outcomes) {
        nlohmann::json r;
        r["seed"] = o.seed;
        r["aborted"] = o.aborted;
        if (!o.aborted) {
            r["best_epoch"] = o.best_epoch;
            r["best_val"] = o.best_val;
            r["test"] = o.test_metric;
            best_vals.push_back(o.best_val);
            test_vals.push_back(o.test_metric);
        } else {
            r["aborted_epoch"] = *o.record.aborted_epoch;
            r["abort_reason"] = o.record.abort_reason;
        }
        reps_json.push_back(r);
    }
    summary["reps"] = reps_json;
    if (best_vals.empty()) throw std::runtime_error("all repetitions aborted");
    summary["best_val"] = detail::aggregate_json(best_vals);
    summary["test"] = detail::aggregate_json(test_vals);
    std::ofstream(fs::path(out_dir) / "summary.json") << summary.dump(2) << "\n";
    return summary;
}

// `atx beta-search`: one training per grid value on the validation metric;
// ties resolve to the smaller beta. Aborted cells are excluded and marked.
inline nlohmann::json run_beta_search(const ExperimentSpec& spec, const std::string& out_dir,
                                      const std::string& teacher_ckpt, uint64_t base_seed) {
    namespace fs = std::filesystem;
    if (spec.beta_grid.empty()) throw UsageError("beta-search: empty grid");
    for (double b : spec.beta_grid)
        if (b <= 0) throw UsageError("beta-search: grid values must be positive");
    if (teacher_ckpt.empty()) throw UsageError("beta-search requires --teacher <checkpoint>");
    fs::create_directories(out_dir);

    ExperimentSpec at_spec = spec;
    at_spec.train.mode = TrainMode::attention_transfer;
    auto data = materialize_data(at_spec, out_dir, base_seed);
    Model<float> teacher = model_from_checkpoint<float>(teacher_ckpt);
    teacher.apply_freeze(FreezePolicy::frozen());

    std::vector<double> grid = spec.beta_grid;
    std::sort(grid.begin(), grid.end());
    std::vector<RepOutcome> outcomes(grid.size());
    detail::run_cells(static_cast<int>(grid.size()), [&](int i) {
        std::ostringstream name;
        name << "beta_" << grid[i];
        const std::string cell_dir = (fs::path(out_dir) / name.str()).string();
        outcomes[i] = detail::run_one_rep(at_spec, data.train, data.val, data.test, &teacher,
                                          grid[i], base_seed, cell_dir);
    });

    std::ofstream table(fs::path(out_dir) / "betas.csv");
    table << "beta,val_metric\n";
    int best = -1;
    for (size_t i = 0; i < grid.size(); ++i) {
        char buf[80];
        std::snprintf(buf, sizeof(buf), "%.9g,%.17g\n", grid[i],
                      outcomes[i].aborted ? std::numeric_limits<double>::quiet_NaN()
                                          : outcomes[i].best_val);
        table << buf;
        if (outcomes[i].aborted) continue;
        if (best < 0 || outcomes[i].best_val > outcomes[best].best_val) best = static_cast<int>(i);
    }
    if (best < 0) throw std::runtime_error("beta-search: every grid cell aborted");

    nlohmann::json summary;
    summary["best_beta"] = grid[best];
    summary["best_val"] = outcomes[best].best_val;
    summary["grid"] = grid;
    nlohmann::json tbl = nlohmann::json::array();
    for (size_t i = 0; i < grid.size(); ++i) {
        nlohmann::json row;
        row["beta"] = grid[i];
        if (outcomes[i].aborted) row["val_metric"] = nullptr;
        else row["val_metric"] = outcomes[i].best_val;
        tbl.push_back(row);
    }
    summary["table"] = tbl;
    std::ofstream(fs::path(out_dir) / "summary.json") << summary.dump(2) << "\n";
    return summary;
}

// `atx size-sweep`: nested patient-disjoint training subsets; per size,
// `reps` trainings and the test metric of each best checkpoint. Emits
// `size,metric,ci` rows for the configured mode.
inline nlohmann::json run_size_sweep(const ExperimentSpec& spec, const std::string& out_dir,
                                     const std::string& teacher_ckpt, uint64_t base_seed,
                                     int reps) {
    namespace fs = std::filesystem;
    if (spec.size_list.empty()) throw UsageError("size-sweep: sweep.sizes is empty");
    if (spec.train.mode == TrainMode::attention_transfer && teacher_ckpt.empty())
        throw UsageError("attention_transfer mode requires --teacher <checkpoint>");
    fs::create_directories(out_dir);
    auto data = materialize_data(spec, out_dir, base_seed);
    for (int s : spec.size_list) subset_train_indices(data, s);  // feasibility check up front

    std::optional<Model<float>> teacher;
    if (!teacher_ckpt.empty()) {
        teacher.emplace(model_from_checkpoint<float>(teacher_ckpt));
        teacher->apply_freeze(FreezePolicy::frozen());
    }

    struct Cell {
        int size_idx, rep;
    };
    std::vector<Cell> cells;
    for (size_t si = 0; si < spec.size_list.size(); ++si)
        for (int r = 0; r < reps; ++r) cells.push_back({static_cast<int>(si), r});
    std::vector<RepOutcome> outcomes(cells.size());
    detail::run_cells(static_cast<int>(cells.size()), [&](int i) {
        const auto [si, r] = cells[i];
        const int size = spec.size_list[si];
        auto subset = dataset_subset(data.train, subset_train_indices(data, size));
        const std::string cell_dir =
            (fs::path(out_dir) / ("size_" + std::to_string(size)) / ("rep" + std::to_string(r)))
                .string();
        outcomes[i] = detail::run_one_rep(spec, subset, data.val, data.test,
                                          teacher ? &*teacher : nullptr, spec.train.beta,
                                          base_seed + r, cell_dir);
    });

    const std::string curve_name = std::string("curve_") + mode_name(spec.train.mode) + ".csv";
    std::ofstream curve(fs::path(out_dir) / curve_name);
    curve << "size,metric,ci\n";
    nlohmann::json rows = nlohmann::json::array();
    std::vector<PlotSeries> plot(1);
    plot[0].name = mode_name(spec.train.mode);
    for (size_t si = 0; si < spec.size_list.size(); ++si) {
        std::vector<double> tests;
        for (size_t i = 0; i < cells.size(); ++i)
            if (cells[i].size_idx == static_cast<int>(si) && !outcomes[i].aborted)
                tests.push_back(outcomes[i].test_metric);
        if (tests.empty()) throw std::runtime_error("size-sweep: all repetitions aborted for size " +
                                                    std::to_string(spec.size_list[si]));
        auto agg = Aggregate::of(tests);
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", spec.size_list[si], agg.mean,
                      agg.ci_half_width.value_or(0.0));
        curve << buf;
        nlohmann::json row;
        row["size"] = spec.size_list[si];
        row["metric"] = agg.mean;
        row["ci"] = agg.ci_half_width.value_or(0.0);
        rows.push_back(row);
        plot[0].points.push_back({static_cast<double>(spec.size_list[si]), agg.mean});
    }
    render_plot((fs::path(out_dir) / "curve.png").string(), plot);
    nlohmann::json summary;
    summary["mode"] = mode_name(spec.train.mode);
    summary["rows"] = rows;
    std::ofstream(fs::path(out_dir) / "summary.json") << summary.dump(2) << "\n";
    return summary;
}

// ---------------------------------------------------------------------------
// Comparison of finished runs
// ---------------------------------------------------------------------------

struct ParsedEpochLog {
    std::vector<EpochLog> epochs;
};

inline ParsedEpochLog parse_epoch_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("compare: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line != "epoch,lr,ce,at,total,val_metric")
        throw std::runtime_error("compare: '" + path + "' is not an epoch log");
    ParsedEpochLog out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        EpochLog e;
        if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf", &e.epoch, &e.lr, &e.ce, &e.at,
                        &e.total, &e.val_metric) != 6)
            throw std::runtime_error("compare: malformed row in '" + path + "': " + line);
        out.epochs.push_back(e);
    }
    return out;
}

// std of the validation metric over the final quarter of epochs
inline double late_epoch_fluctuation(const std::vector<double>& curve) {
    if (curve.empty()) throw std::invalid_argument("late_epoch_fluctuation: empty curve");
    const size_t tail = std::max<size_t>(1, (curve.size() + 3) / 4);
    const size_t start = curve.size() - tail;
    double mean = 0;
    for (size_t i = start; i < curve.size(); ++i) mean += curve[i];
    mean /= tail;
    double ss = 0;
    for (size_t i = start; i < curve.size(); ++i) ss += (curve[i] - mean) * (curve[i] - mean);
    return tail > 1 ? std::sqrt(ss / (tail - 1)) : 0.0;
}

// `atx compare`: aligns per-epoch validation curves of >= 2 run directories,
// reports mean +/- CI and the late-epoch fluctuation statistic per run.
inline nlohmann::json run_compare(const std::vector<std::string>& run_dirs,
                                  const std::string& out_dir) {
    namespace fs = std::filesystem;
    if (run_dirs.size() < 2) throw UsageError("compare needs at least two run directories");
    fs::create_directories(out_dir);

    struct RunData {
        std::string name;
        nlohmann::json summary;
        std::vector<std::vector<double>> rep_curves;
        std::vector<double> mean_curve;
        std::vector<double> fluctuations;
    };
    std::vector<RunData> runs;
    std::string metric_name;
    std::vector<int> epoch_axis;
    for (const auto& dir : run_dirs) {
        RunData rd;
        rd.name = fs::path(dir).filename().string();
        std::ifstream sj(fs::path(dir) / "summary.json");
        if (!sj) throw std::runtime_error("compare: missing summary.json in '" + dir + "'");
        sj >> rd.summary;
        const std::string m = rd.summary.at("selection_metric").get<std::string>();
        if (metric_name.empty()) metric_name = m;
        else if (metric_name != m)
            throw UsageError("compare: incompatible selection metrics ('" + metric_name + "' vs '" +
                             m + "' in '" + dir + "')");
        for (int r = 0;; ++r) {
            const auto rep_log = fs::path(dir) / ("rep" + std::to_string(r)) / "epochs.csv";
            if (!fs::exists(rep_log)) break;
            auto parsed = parse_epoch_csv(rep_log.string());
            std::vector<double> curve;
            std::vector<int> axis;
            for (const auto& e : parsed.epochs) {
                curve.push_back(e.val_metric);
                axis.push_back(e.epoch);
            }
            if (epoch_axis.empty()) epoch_axis = axis;
            else if (axis != epoch_axis)
                throw std::runtime_error("compare: '" + rep_log.string() +
                                         "' is missing epochs relative to the other logs");
            rd.fluctuations.push_back(late_epoch_fluctuation(curve));
            rd.rep_curves.push_back(std::move(curve));
        }
        if (rd.rep_curves.empty())
            throw std::runtime_error("compare: no rep*/epochs.csv logs under '" + dir + "'");
        rd.mean_curve.assign(epoch_axis.size(), 0.0);
        for (const auto& c : rd.rep_curves)
            for (size_t i = 0; i < c.size(); ++i) rd.mean_curve[i] += c[i];
        for (auto& v : rd.mean_curve) v /= rd.rep_curves.size();
        runs.push_back(std::move(rd));
    }

    // epoch-aligned CSV of mean validation curves
    {
        std::ofstream out(fs::path(out_dir) / "compare.csv");
        out << "epoch";
        for (const auto& r : runs) out << "," << r.name;
        out << "\n";
        char buf[64];
        for (size_t i = 0; i < epoch_axis.size(); ++i) {
            out << epoch_axis[i];
            for (const auto& r : runs) {
                std::snprintf(buf, sizeof(buf), ",%.17g", r.mean_curve[i]);
                out << buf;
            }
            out << "\n";
        }
    }
    // markdown table + plot
    nlohmann::json summary;
    summary["selection_metric"] = metric_name;
    nlohmann::json rows = nlohmann::json::array();
    {
        std::ofstream md(fs::path(out_dir) / "compare.md");
        md << "| run | best val (mean ± CI) | test (mean ± CI) | late-epoch fluctuation |\n";
        md << "| --- | --- | --- | --- |\n";
        std::vector<PlotSeries> series;
        for (const auto& r : runs) {
            const auto& bv = r.summary.at("best_val");
            const auto& tv = r.summary.at("test");
            auto fmt_ci = [](const nlohmann::json& j) {
                char buf[96];
                if (j.at("ci_half_width").is_null())
                    std::snprintf(buf, sizeof(buf), "%.4f", j.at("mean").get<double>());
                else
                    std::snprintf(buf, sizeof(buf), "%.4f ± %.4f", j.at("mean").get<double>(),
                                  j.at("ci_half_width").get<double>());
                return std::string(buf);
            };
            double fl_mean = 0;
            for (double f : r.fluctuations) fl_mean += f;
            fl_mean /= r.fluctuations.size();
            char fl[32];
            std::snprintf(fl, sizeof(fl), "%.5f", fl_mean);
            md << "| " << r.name << " | " << fmt_ci(bv) << " | " << fmt_ci(tv) << " | " << fl
               << " |\n";
            nlohmann::json row;
            row["run"] = r.name;
            row["best_val_mean"] = bv.at("mean");
            row["test_mean"] = tv.at("mean");
            row["late_epoch_fluctuation_mean"] = fl_mean;
            row["late_epoch_fluctuation_per_rep"] = r.fluctuations;
            rows.push_back(row);
            PlotSeries ps;
            ps.name = r.name;
            for (size_t i = 0; i < epoch_axis.size(); ++i)
                ps.points.push_back({static_cast<double>(epoch_axis[i]), r.mean_curve[i]});
            series.push_back(std::move(ps));
        }
        render_plot((fs::path(out_dir) / "curves.png").string(), series);
    }
    summary["runs"] = rows;
    std::ofstream(fs::path(out_dir) / "compare.json") << summary.dump(2) << "\n";
    return summary;
}

// `atx gen-data`: standalone synthetic dataset generation.
inline nlohmann::json run_gen_data(const ExperimentSpec& spec, const std::string& out_dir,
                                   uint64_t seed) {
    if (!spec.synthetic) throw UsageError("gen-data requires a synthetic.* block in the spec");
    auto rep = generate_synthetic(*spec.synthetic, seed, out_dir);
    nlohmann::json j;
    j["manifest"] = rep.manifest_path;
    j["n_images"] = rep.n_images;
    j["positives_per_class"] = rep.positives_per_class;
    j["probe_auc"] = rep.probe_auc;
    std::ofstream(std::filesystem::path(out_dir) / "report.json") << j.dump(2) << "\n";
    return j;
}

}  // namespace atx
