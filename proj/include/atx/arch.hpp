#pragma once

// Architecture description for the DenseNet-style family: stem, dense blocks
// with transitions, adaptive pool, optional 1x1 projection stack, head.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "atx/tensor.hpp"

namespace atx {

enum class HeadKind { sigmoid_multilabel, softmax_multiclass };

inline const char* head_name(HeadKind h) {
    return h == HeadKind::sigmoid_multilabel ? "sigmoid_multilabel" : "softmax_multiclass";
}
inline HeadKind head_from_name(const std::string& s) {
    if (s == "sigmoid_multilabel") return HeadKind::sigmoid_multilabel;
    if (s == "softmax_multiclass") return HeadKind::softmax_multiclass;
    throw std::invalid_argument("unknown head kind '" + s + "'");
}

struct ArchConfig {
    int in_channels = 3;
    int init_channels = 64;
    int growth_rate = 32;
    std::vector<int> block_layer_counts{6, 12};
    double transition_compression = 0.5;  // in (0,1]
    HeadKind head = HeadKind::sigmoid_multilabel;
    int num_classes = 2;
    std::vector<int> projection_widths{1024, 1024};  // post-pool 1x1 convs
    int pool_target = 8;                             // adaptive pool before projections
    std::string tap_spec;                            // empty -> builder default

    void validate() const {
        if (in_channels <= 0 || init_channels <= 0 || growth_rate <= 0)
            throw std::invalid_argument("ArchConfig: channel counts must be positive");
        if (block_layer_counts.empty())
            throw std::invalid_argument("ArchConfig: block_layer_counts must be non-empty");
        for (int n : block_layer_counts)
            if (n < 1) throw std::invalid_argument("ArchConfig: block layer counts must be >= 1");
        if (transition_compression <= 0 || transition_compression > 1)
            throw std::invalid_argument("ArchConfig: transition_compression must lie in (0,1]");
        const int min_classes = head == HeadKind::softmax_multiclass ? 2 : 1;
        if (num_classes < min_classes)
            throw std::invalid_argument("ArchConfig: num_classes must be >= " + std::to_string(min_classes));
        for (int w : projection_widths)
            if (w <= 0) throw std::invalid_argument("ArchConfig: projection widths must be positive");
        if (pool_target <= 0) throw std::invalid_argument("ArchConfig: pool_target must be positive");
    }

    bool operator==(const ArchConfig& o) const {
        return in_channels == o.in_channels && init_channels == o.init_channels &&
               growth_rate == o.growth_rate && block_layer_counts == o.block_layer_counts &&
               transition_compression == o.transition_compression && head == o.head &&
               num_classes == o.num_classes && projection_widths == o.projection_widths &&
               pool_target == o.pool_target && tap_spec == o.tap_spec;
    }

    nlohmann::json to_json() const {
        return nlohmann::json{{"in_channels", in_channels},
                              {"init_channels", init_channels},
                              {"growth_rate", growth_rate},
                              {"block_layer_counts", block_layer_counts},
                              {"transition_compression", transition_compression},
                              {"head", head_name(head)},
                              {"num_classes", num_classes},
                              {"projection_widths", projection_widths},
                              {"pool_target", pool_target},
                              {"tap_spec", tap_spec}};
    }

    static ArchConfig from_json(const nlohmann::json& j) {
        ArchConfig c;
        c.in_channels = j.at("in_channels").get<int>();
        c.init_channels = j.at("init_channels").get<int>();
        c.growth_rate = j.at("growth_rate").get<int>();
        c.block_layer_counts = j.at("block_layer_counts").get<std::vector<int>>();
        c.transition_compression = j.at("transition_compression").get<double>();
        c.head = head_from_name(j.at("head").get<std::string>());
        c.num_classes = j.at("num_classes").get<int>();
        c.projection_widths = j.at("projection_widths").get<std::vector<int>>();
        c.pool_target = j.at("pool_target").get<int>();
        c.tap_spec = j.at("tap_spec").get<std::string>();
        c.validate();
        return c;
    }
};

// the exact DenseNet-40 recipe (DenseNet-121 truncated after its second block)
inline ArchConfig densenet40_config(int num_classes, HeadKind head) {
    ArchConfig c;
    c.in_channels = 3;
    c.init_channels = 64;
    c.growth_rate = 32;
    c.block_layer_counts = {6, 12};
    c.transition_compression = 0.5;
    c.head = head;
    c.num_classes = num_classes;
    c.projection_widths = {1024, 1024};
    c.pool_target = 8;
    c.tap_spec = "proj2";
    c.validate();
    return c;
}

}  // namespace atx
