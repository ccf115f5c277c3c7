#pragma once

// Checkpoint container: text header (format version, architecture as JSON,
// epoch, metric snapshot, tensor count) followed by named arrays stored as
// 32-bit little-endian row-major floats. Loading verifies the architecture
// matches before any weight is accepted. Writes go through a temp file and
// an atomic rename.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>

#include "atx/model.hpp"

namespace atx {

struct CheckpointData {
    int format_version = 1;
    ArchConfig arch;
    int epoch = 0;
    double metric = 0;
    std::map<std::string, std::pair<Shape, std::vector<float>>> tensors;
};

namespace detail {

inline void write_le32_array(std::ostream& out, const float* data, int64_t n) {
    static_assert(sizeof(float) == 4);
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(data), n * 4);
    } else {
        for (int64_t i = 0; i < n; ++i) {
            uint32_t v;
            std::memcpy(&v, &data[i], 4);
            char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8),
                         static_cast<char>(v >> 16), static_cast<char>(v >> 24)};
            out.write(b, 4);
        }
    }
}

inline void read_le32_array(std::istream& in, float* data, int64_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        in.read(reinterpret_cast<char*>(data), n * 4);
    } else {
        for (int64_t i = 0; i < n; ++i) {
            unsigned char b[4];
            in.read(reinterpret_cast<char*>(b), 4);
            uint32_t v = b[0] | (b[1] << 8) | (b[2] << 16) | (uint32_t(b[3]) << 24);
            std::memcpy(&data[i], &v, 4);
        }
    }
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, Model<T>& model, int epoch, double metric) {
    namespace fs = std::filesystem;
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("checkpoint '" + path + "': cannot write");
        std::vector<std::pair<std::string, std::pair<Shape, std::vector<float>>>> entries;
        for (auto* p : model.params()) {
            std::vector<float> v(p->value.size());
            for (int64_t i = 0; i < p->value.size(); ++i) v[i] = static_cast<float>(p->value.raw()[i]);
            entries.push_back({p->name, {p->value.shape(), std::move(v)}});
        }
        for (auto& b : model.buffers()) {
            std::vector<float> v(b.data->size());
            for (size_t i = 0; i < b.data->size(); ++i) v[i] = static_cast<float>((*b.data)[i]);
            entries.push_back({b.name, {{static_cast<int>(b.data->size())}, std::move(v)}});
        }
        out << "atxckpt 1\n";
        out << "arch " << model.config.to_json().dump() << "\n";
        out << "epoch " << epoch << "\n";
        out << "metric " << std::setprecision(17) << metric << "\n";
        out << "tensors " << entries.size() << "\n";
        out << "---\n";
        for (auto& [name, sv] : entries) {
            auto& [shape, values] = sv;
            out << name << " " << shape.size();
            for (int d : shape) out << " " << d;
            out << "\n";
            detail::write_le32_array(out, values.data(), static_cast<int64_t>(values.size()));
        }
        if (!out) throw std::runtime_error("checkpoint '" + path + "': write failed");
    }
    fs::rename(tmp, path);
}

inline CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint '" + path + "': cannot open");
    CheckpointData ck;
    std::string line;
    if (!std::getline(in, line) || line.rfind("atxckpt ", 0) != 0)
        throw std::runtime_error("checkpoint '" + path + "': bad magic");
    ck.format_version = std::stoi(line.substr(8));
    if (ck.format_version != 1)
        throw std::runtime_error("checkpoint '" + path + "': unsupported version " +
                                 std::to_string(ck.format_version));
    int n_tensors = -1;
    while (std::getline(in, line) && line != "---") {
        auto sp = line.find(' ');
        if (sp == std::string::npos) throw std::runtime_error("checkpoint '" + path + "': bad header line");
        const std::string key = line.substr(0, sp), val = line.substr(sp + 1);
        if (key == "arch") ck.arch = ArchConfig::from_json(nlohmann::json::parse(val));
        else if (key == "epoch") ck.epoch = std::stoi(val);
        else if (key == "metric") ck.metric = std::stod(val);
        else if (key == "tensors") n_tensors = std::stoi(val);
        else throw std::runtime_error("checkpoint '" + path + "': unknown header key '" + key + "'");
    }
    if (n_tensors < 0) throw std::runtime_error("checkpoint '" + path + "': missing tensor count");
    for (int t = 0; t < n_tensors; ++t) {
        if (!std::getline(in, line))
            throw std::runtime_error("checkpoint '" + path + "': truncated tensor table");
        std::istringstream hdr(line);
        std::string name;
        int ndim;
        hdr >> name >> ndim;
        Shape shape(ndim);
        for (int d = 0; d < ndim; ++d) hdr >> shape[d];
        if (!hdr) throw std::runtime_error("checkpoint '" + path + "': bad tensor header '" + line + "'");
        std::vector<float> values(shape_numel(shape));
        detail::read_le32_array(in, values.data(), static_cast<int64_t>(values.size()));
        if (!in) throw std::runtime_error("checkpoint '" + path + "': truncated data for '" + name + "'");
        ck.tensors[name] = {std::move(shape), std::move(values)};
    }
    return ck;
}

// Weights are applied only after the architecture equality check passes.
template <typename T>
void load_into_model(Model<T>& model, const CheckpointData& ck) {
    if (!(model.config == ck.arch))
        throw std::runtime_error("checkpoint rejected: architecture differs from the target model (" +
                                 ck.arch.to_json().dump() + " vs " + model.config.to_json().dump() + ")");
    for (auto* p : model.params()) {
        auto it = ck.tensors.find(p->name);
        if (it == ck.tensors.end())
            throw std::runtime_error("checkpoint missing parameter '" + p->name + "'");
        const auto& [shape, values] = it->second;
        if (shape != p->value.shape())
            throw std::runtime_error("checkpoint parameter '" + p->name + "' has shape " +
                                     shape_str(shape) + ", expected " + shape_str(p->value.shape()));
        for (int64_t i = 0; i < p->value.size(); ++i) p->value.raw()[i] = static_cast<T>(values[i]);
    }
    for (auto& b : model.buffers()) {
        auto it = ck.tensors.find(b.name);
        if (it == ck.tensors.end())
            throw std::runtime_error("checkpoint missing buffer '" + b.name + "'");
        const auto& values = it->second.second;
        if (values.size() != b.data->size())
            throw std::runtime_error("checkpoint buffer '" + b.name + "' has wrong length");
        for (size_t i = 0; i < values.size(); ++i) (*b.data)[i] = static_cast<T>(values[i]);
    }
}

// Rebuild the model a checkpoint describes (architecture from the embedded
// config) and load its weights.
template <typename T = float>
Model<T> model_from_checkpoint(const std::string& path) {
    auto ck = load_checkpoint(path);
    auto model = build_densenet_scaled<T>(ck.arch, 0, nullptr);
    load_into_model(model, ck);
    return model;
}

}  // namespace atx
