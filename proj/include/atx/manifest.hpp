#pragma once

// Dataset manifests: strict CSV ingestion with four-state labels, the U-zero
// mapping, and seeded patient-disjoint splitting.

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "atx/losses.hpp"  // TaskKind

namespace atx {

// {positive, negative, uncertain, missing} per the radiology label states
enum class LabelState : int8_t { positive = 1, negative = 0, uncertain = -1, missing = 2 };

struct ManifestRecord {
    std::string image_path;
    std::string patient_id;
    std::vector<LabelState> labels;  // multilabel task
    int class_index = -1;            // multiclass task
};

struct DatasetManifest {
    TaskKind task = TaskKind::multilabel_binary;
    std::vector<std::string> class_names;  // multilabel column names
    int n_classes = 0;
    std::vector<ManifestRecord> records;
};

class ManifestError : public std::runtime_error {
public:
    ManifestError(const std::string& path, int line, const std::string& what)
        : std::runtime_error(path + ":" + std::to_string(line) + ": " + what) {}
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace detail

// Header `image_path,patient_id,<class_1>,...,<class_K>` for multilabel, or
// `image_path,patient_id,class_index` for multiclass. Unknown label tokens
// are rejected with their line number.
inline DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("manifest '" + path + "': cannot open");
    std::string line;
    if (!std::getline(in, line)) throw ManifestError(path, 1, "missing header row");
    auto header = detail::split_csv_line(line);
    if (header.size() < 3 || header[0] != "image_path" || header[1] != "patient_id")
        throw ManifestError(path, 1, "header must start with image_path,patient_id");

    DatasetManifest m;
    if (header.size() == 3 && header[2] == "class_index") {
        m.task = TaskKind::multiclass;
    } else {
        m.task = TaskKind::multilabel_binary;
        m.class_names.assign(header.begin() + 2, header.end());
        for (const auto& name : m.class_names)
            if (name.empty()) throw ManifestError(path, 1, "empty class name in header");
        m.n_classes = static_cast<int>(m.class_names.size());
    }

    std::unordered_set<std::string> seen_paths;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != header.size())
            throw ManifestError(path, lineno, "expected " + std::to_string(header.size()) +
                                                  " fields, got " + std::to_string(fields.size()));
        ManifestRecord rec;
        rec.image_path = fields[0];
        rec.patient_id = fields[1];
        if (rec.image_path.empty()) throw ManifestError(path, lineno, "empty image_path");
        if (rec.patient_id.empty()) throw ManifestError(path, lineno, "empty patient_id");
        if (!seen_paths.insert(rec.image_path).second)
            throw ManifestError(path, lineno, "duplicate image path '" + rec.image_path + "'");
        if (m.task == TaskKind::multiclass) {
            const std::string& tok = fields[2];
            try {
                size_t pos = 0;
                rec.class_index = std::stoi(tok, &pos);
                if (pos != tok.size() || rec.class_index < 0) throw std::invalid_argument(tok);
            } catch (const std::exception&) {
                throw ManifestError(path, lineno, "bad class_index token '" + tok + "'");
            }
            m.n_classes = std::max(m.n_classes, rec.class_index + 1);
        } else {
            rec.labels.reserve(m.n_classes);
            for (size_t c = 2; c < fields.size(); ++c) {
                const std::string& tok = fields[c];
                if (tok == "1") rec.labels.push_back(LabelState::positive);
                else if (tok == "0") rec.labels.push_back(LabelState::negative);
                else if (tok == "-1") rec.labels.push_back(LabelState::uncertain);
                else if (tok.empty()) rec.labels.push_back(LabelState::missing);
                else throw ManifestError(path, lineno, "unknown label token '" + tok + "' for class '" +
                                                           m.class_names[c - 2] + "'");
            }
        }
        m.records.push_back(std::move(rec));
    }
    return m;
}

inline void save_manifest(const std::string& path, const DatasetManifest& m) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("manifest '" + path + "': cannot write");
    out << "image_path,patient_id";
    if (m.task == TaskKind::multiclass) out << ",class_index";
    else
        for (const auto& name : m.class_names) out << "," << name;
    out << "\n";
    for (const auto& rec : m.records) {
        out << rec.image_path << "," << rec.patient_id;
        if (m.task == TaskKind::multiclass) {
            out << "," << rec.class_index;
        } else {
            for (LabelState s : rec.labels) {
                switch (s) {
                    case LabelState::positive: out << ",1"; break;
                    case LabelState::negative: out << ",0"; break;
                    case LabelState::uncertain: out << ",-1"; break;
                    case LabelState::missing: out << ","; break;
                }
            }
        }
        out << "\n";
    }
}

// U-zero: positive stays 1; negative, uncertain and missing all map to 0.
inline std::vector<float> map_labels_uzero(const std::vector<LabelState>& raw) {
    std::vector<float> out(raw.size());
    for (size_t i = 0; i < raw.size(); ++i) out[i] = raw[i] == LabelState::positive ? 1.f : 0.f;
    return out;
}

struct SplitAssignment {
    uint64_t seed = 0;
    std::vector<int> train, validation, test;             // record indices
    std::set<std::string> train_patients, val_patients, test_patients;
};

struct SplitRequest {
    // either fractions of records (summing to <= 1; remainder goes to test)
    // or absolute record counts
    bool use_fractions = true;
    double train_fraction = 0.6, val_fraction = 0.2, test_fraction = 0.2;
    int64_t train_count = 0, val_count = 0, test_count = 0;

    static SplitRequest fractions(double tr, double va, double te) {
        SplitRequest r;
        r.use_fractions = true;
        r.train_fraction = tr;
        r.val_fraction = va;
        r.test_fraction = te;
        return r;
    }
    static SplitRequest counts(int64_t tr, int64_t va, int64_t te) {
        SplitRequest r;
        r.use_fractions = false;
        r.train_count = tr;
        r.val_count = va;
        r.test_count = te;
        return r;
    }
};

// Patients are shuffled with the seeded RNG and assigned whole to splits until
// each record-count target is met. A patient straddling a target stays whole
// and the split overshoots (disjointness outranks exact counts).
inline SplitAssignment split_by_patient(const DatasetManifest& m, const SplitRequest& req,
                                        uint64_t seed) {
    const int64_t total = static_cast<int64_t>(m.records.size());
    int64_t target_train, target_val, target_test;
    if (req.use_fractions) {
        if (req.train_fraction < 0 || req.val_fraction < 0 || req.test_fraction < 0 ||
            req.train_fraction + req.val_fraction + req.test_fraction > 1.0 + 1e-9)
            throw std::invalid_argument("split_by_patient: fractions must be nonnegative and sum to <= 1");
        target_train = static_cast<int64_t>(std::llround(req.train_fraction * total));
        target_val = static_cast<int64_t>(std::llround(req.val_fraction * total));
        target_test = total - target_train - target_val;
    } else {
        target_train = req.train_count;
        target_val = req.val_count;
        target_test = req.test_count;
        if (target_train < 0 || target_val < 0 || target_test < 0 ||
            target_train + target_val + target_test > total)
            throw std::invalid_argument("split_by_patient: requested counts infeasible (" +
                                        std::to_string(target_train + target_val + target_test) +
                                        " of " + std::to_string(total) + " records)");
    }

    // patients in first-appearance order, then seeded shuffle
    std::vector<std::string> patients;
    std::unordered_map<std::string, std::vector<int>> by_patient;
    for (size_t i = 0; i < m.records.size(); ++i) {
        auto& v = by_patient[m.records[i].patient_id];
        if (v.empty()) patients.push_back(m.records[i].patient_id);
        v.push_back(static_cast<int>(i));
    }
    std::mt19937 rng(static_cast<uint32_t>(seed ^ (seed >> 32)));
    std::shuffle(patients.begin(), patients.end(), rng);

    SplitAssignment out;
    out.seed = seed;
    size_t p = 0;
    auto fill = [&](std::vector<int>& dst, std::set<std::string>& pats, int64_t target) {
        int64_t count = 0;
        while (count < target && p < patients.size()) {
            const auto& recs = by_patient[patients[p]];
            pats.insert(patients[p]);
            for (int idx : recs) dst.push_back(idx);
            count += static_cast<int64_t>(recs.size());
            ++p;
        }
    };
    fill(out.train, out.train_patients, target_train);
    fill(out.validation, out.val_patients, target_val);
    fill(out.test, out.test_patients, target_test);
    // leftover patients keep the "every record lands in exactly one split"
    // invariant; they extend the test split
    while (p < patients.size()) {
        out.test_patients.insert(patients[p]);
        for (int idx : by_patient[patients[p]]) out.test.push_back(idx);
        ++p;
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.validation.begin(), out.validation.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

}  // namespace atx
