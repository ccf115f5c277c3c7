#pragma once

// Layer hierarchy, tap registry and the DenseNet-family builders. A Model is
// an ordered list of named layers; parameters live in named groups (one per
// parameter-bearing top-level layer) that the freeze policy addresses.

#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>

#include "atx/arch.hpp"
#include "atx/nn_ops.hpp"
#include "atx/tensor.hpp"

namespace atx {

template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;
    bool trainable = true;

    void set_trainable(bool b) {
        trainable = b;
        value.set_requires_grad(b);
    }
};

// Persistent non-trainable state (batch-norm running statistics).
template <typename T>
struct BufferRef {
    std::string name;
    std::vector<T>* data;
};

template <typename T>
struct TapRecorder {
    const std::string* wanted = nullptr;  // single registered tap
    Tensor<T> tap;
    bool wants(const std::string& name) const { return wanted && *wanted == name; }
    void record(const std::string& name, const Tensor<T>& t) {
        if (wants(name)) tap = t;
    }
};

template <typename T>
class Layer {
public:
    explicit Layer(std::string name) : name_(std::move(name)) {}
    virtual ~Layer() = default;
    const std::string& name() const { return name_; }
    virtual Tensor<T> forward(const Tensor<T>& x, bool train, TapRecorder<T>* taps) = 0;
    virtual void collect_params(std::vector<Param<T>*>&) {}
    virtual void collect_buffers(std::vector<BufferRef<T>>&) {}

private:
    std::string name_;
};

namespace detail {

template <typename T>
Tensor<T> kaiming_conv_weight(int cout, int cin, int kh, int kw, std::mt19937& rng) {
    const T sd = static_cast<T>(std::sqrt(2.0 / (static_cast<double>(cin) * kh * kw)));
    return Tensor<T>::randn({cout, cin, kh, kw}, rng, sd);
}

}  // namespace detail

template <typename T>
class Conv2dLayer : public Layer<T> {
public:
    Conv2dLayer(std::string name, int cin, int cout, int kernel, int stride, int padding,
                bool bias, std::mt19937& rng)
        : Layer<T>(std::move(name)), stride_(stride), padding_(padding) {
        weight_.name = this->name() + ".weight";
        weight_.value = detail::kaiming_conv_weight<T>(cout, cin, kernel, kernel, rng);
        weight_.value.set_requires_grad(true);
        if (bias) {
            bias_.emplace();
            bias_->name = this->name() + ".bias";
            bias_->value = Tensor<T>::zeros({cout});
            bias_->value.set_requires_grad(true);
        }
    }

    Tensor<T> forward(const Tensor<T>& x, bool, TapRecorder<T>*) override {
        return bias_ ? conv2d(x, weight_.value, bias_->value, stride_, padding_)
                     : conv2d(x, weight_.value, stride_, padding_);
    }
    void collect_params(std::vector<Param<T>*>& out) override {
        out.push_back(&weight_);
        if (bias_) out.push_back(&*bias_);
    }

private:
    Param<T> weight_;
    std::optional<Param<T>> bias_;
    int stride_, padding_;
};

template <typename T>
class BatchNormLayer : public Layer<T> {
public:
    BatchNormLayer(std::string name, int channels)
        : Layer<T>(std::move(name)), running_mean_(channels, T(0)), running_var_(channels, T(1)) {
        gamma_.name = this->name() + ".gamma";
        gamma_.value = Tensor<T>::ones({channels});
        gamma_.value.set_requires_grad(true);
        beta_.name = this->name() + ".beta";
        beta_.value = Tensor<T>::zeros({channels});
        beta_.value.set_requires_grad(true);
    }

    Tensor<T> forward(const Tensor<T>& x, bool train, TapRecorder<T>*) override {
        return batch_norm(x, gamma_.value, beta_.value, running_mean_, running_var_, train);
    }
    void collect_params(std::vector<Param<T>*>& out) override {
        out.push_back(&gamma_);
        out.push_back(&beta_);
    }
    void collect_buffers(std::vector<BufferRef<T>>& out) override {
        out.push_back({this->name() + ".running_mean", &running_mean_});
        out.push_back({this->name() + ".running_var", &running_var_});
    }

private:
    Param<T> gamma_, beta_;
    std::vector<T> running_mean_, running_var_;
};

template <typename T>
class ReLULayer : public Layer<T> {
public:
    using Layer<T>::Layer;
    Tensor<T> forward(const Tensor<T>& x, bool, TapRecorder<T>*) override { return relu(x); }
};

template <typename T>
class MaxPoolLayer : public Layer<T> {
public:
    MaxPoolLayer(std::string name, int kernel, int stride, int padding)
        : Layer<T>(std::move(name)), k_(kernel), s_(stride), p_(padding) {}
    Tensor<T> forward(const Tensor<T>& x, bool, TapRecorder<T>*) override {
        return max_pool2d(x, k_, s_, p_);
    }

private:
    int k_, s_, p_;
};

template <typename T>
class AdaptiveAvgPoolLayer : public Layer<T> {
public:
    AdaptiveAvgPoolLayer(std::string name, int target) : Layer<T>(std::move(name)), t_(target) {}
    Tensor<T> forward(const Tensor<T>& x, bool, TapRecorder<T>*) override {
        return adaptive_avg_pool2d(x, t_, t_);
    }

private:
    int t_;
};

template <typename T>
class FlattenLayer : public Layer<T> {
public:
    using Layer<T>::Layer;
    Tensor<T> forward(const Tensor<T>& x, bool, TapRecorder<T>*) override {
        const int n = x.dim(0);
        return reshape(x, {n, static_cast<int>(x.size() / n)});
    }
};

template <typename T>
class DenseHeadLayer : public Layer<T> {
public:
    DenseHeadLayer(std::string name, int in_features, int out_features, std::mt19937& rng)
        : Layer<T>(std::move(name)) {
        const T sd = static_cast<T>(std::sqrt(1.0 / in_features));
        weight_.name = this->name() + ".weight";
        weight_.value = Tensor<T>::randn({out_features, in_features}, rng, sd);
        weight_.value.set_requires_grad(true);
        bias_.name = this->name() + ".bias";
        bias_.value = Tensor<T>::zeros({out_features});
        bias_.value.set_requires_grad(true);
    }
    Tensor<T> forward(const Tensor<T>& x, bool, TapRecorder<T>*) override {
        return dense(x, weight_.value, bias_.value);
    }
    void collect_params(std::vector<Param<T>*>& out) override {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }

private:
    Param<T> weight_, bias_;
};

// One dense block: n composite units, each BN-ReLU-1x1conv(4g)-BN-ReLU-3x3conv(g),
// output concatenated onto the running feature stream. The concatenated input
// to the last unit is exposed as the "<name>.penultimate" tap.
template <typename T>
class DenseBlockLayer : public Layer<T> {
public:
    DenseBlockLayer(std::string name, int in_channels, int n_layers, int growth, std::mt19937& rng)
        : Layer<T>(std::move(name)), in_channels_(in_channels), growth_(growth) {
        const int bottleneck = 4 * growth;
        int c = in_channels;
        for (int i = 0; i < n_layers; ++i) {
            const std::string base = this->name() + ".u" + std::to_string(i);
            Unit u;
            u.bn1 = std::make_unique<BatchNormLayer<T>>(base + ".bn1", c);
            u.conv1 = std::make_unique<Conv2dLayer<T>>(base + ".conv1", c, bottleneck, 1, 1, 0,
                                                       false, rng);
            u.bn2 = std::make_unique<BatchNormLayer<T>>(base + ".bn2", bottleneck);
            u.conv2 = std::make_unique<Conv2dLayer<T>>(base + ".conv2", bottleneck, growth, 3, 1, 1,
                                                       false, rng);
            units_.push_back(std::move(u));
            c += growth;
        }
    }

    int out_channels() const { return in_channels_ + static_cast<int>(units_.size()) * growth_; }

    Tensor<T> forward(const Tensor<T>& x, bool train, TapRecorder<T>* taps) override {
        Tensor<T> features = x;
        for (size_t i = 0; i < units_.size(); ++i) {
            if (taps && i + 1 == units_.size())
                taps->record(this->name() + ".penultimate", features);
            auto& u = units_[i];
            auto h = u.bn1->forward(features, train, nullptr);
            h = relu(h);
            h = u.conv1->forward(h, train, nullptr);
            h = u.bn2->forward(h, train, nullptr);
            h = relu(h);
            h = u.conv2->forward(h, train, nullptr);
            features = concat_channels<T>({features, h});
        }
        return features;
    }

    void collect_params(std::vector<Param<T>*>& out) override {
        for (auto& u : units_) {
            u.bn1->collect_params(out);
            u.conv1->collect_params(out);
            u.bn2->collect_params(out);
            u.conv2->collect_params(out);
        }
    }
    void collect_buffers(std::vector<BufferRef<T>>& out) override {
        for (auto& u : units_) {
            u.bn1->collect_buffers(out);
            u.bn2->collect_buffers(out);
        }
    }

private:
    struct Unit {
        std::unique_ptr<BatchNormLayer<T>> bn1;
        std::unique_ptr<Conv2dLayer<T>> conv1;
        std::unique_ptr<BatchNormLayer<T>> bn2;
        std::unique_ptr<Conv2dLayer<T>> conv2;
    };
    std::vector<Unit> units_;
    int in_channels_, growth_;
};

// Transition: BN-ReLU-1x1conv(compressed)-2x2 avg pool stride 2.
template <typename T>
class TransitionLayer : public Layer<T> {
public:
    TransitionLayer(std::string name, int in_channels, double compression, std::mt19937& rng)
        : Layer<T>(std::move(name)) {
        out_channels_ = static_cast<int>(std::floor(compression * in_channels));
        if (out_channels_ < 1) out_channels_ = 1;
        bn_ = std::make_unique<BatchNormLayer<T>>(this->name() + ".bn", in_channels);
        conv_ = std::make_unique<Conv2dLayer<T>>(this->name() + ".conv", in_channels, out_channels_,
                                                 1, 1, 0, false, rng);
    }

    int out_channels() const { return out_channels_; }

    Tensor<T> forward(const Tensor<T>& x, bool train, TapRecorder<T>*) override {
        auto h = bn_->forward(x, train, nullptr);
        h = relu(h);
        h = conv_->forward(h, train, nullptr);
        return avg_pool2d(h, 2, 2, 0);
    }
    void collect_params(std::vector<Param<T>*>& out) override {
        bn_->collect_params(out);
        conv_->collect_params(out);
    }
    void collect_buffers(std::vector<BufferRef<T>>& out) override { bn_->collect_buffers(out); }

private:
    std::unique_ptr<BatchNormLayer<T>> bn_;
    std::unique_ptr<Conv2dLayer<T>> conv_;
    int out_channels_;
};

// Trainable student-side adapter reconciling tap shapes with a teacher's:
// adaptive average pool to the teacher's spatial size, then a 1x1 projection
// to the teacher's channel count.
template <typename T>
struct TapAdapter {
    int target_hw = 0;
    std::unique_ptr<Conv2dLayer<T>> proj;

    Tensor<T> apply(const Tensor<T>& tap, bool train) {
        Tensor<T> h = tap;
        if (tap.dim(2) != target_hw || tap.dim(3) != target_hw)
            h = adaptive_avg_pool2d(h, target_hw, target_hw);
        return proj->forward(h, train, nullptr);
    }
};

struct FreezePolicy {
    enum class Kind { all_trainable, frozen, unfreeze_last_k };
    Kind kind = Kind::all_trainable;
    int k = 0;

    static FreezePolicy all_trainable() { return {Kind::all_trainable, 0}; }
    static FreezePolicy frozen() { return {Kind::frozen, 0}; }
    static FreezePolicy unfreeze_last_k(int k) { return {Kind::unfreeze_last_k, k}; }
};

template <typename T>
struct ForwardResult {
    Tensor<T> logits;  // pre-sigmoid/softmax
    std::map<std::string, Tensor<T>> taps;
    std::vector<std::pair<std::string, Shape>> layer_shapes;
};

template <typename T>
class Model {
public:
    ArchConfig config;
    std::string tap_name;

    void add_layer(std::unique_ptr<Layer<T>> layer) { layers_.push_back(std::move(layer)); }

    Tensor<T> forward(const Tensor<T>& batch, bool train) {
        return forward_with_taps(batch, train).logits;
    }

    ForwardResult<T> forward_with_taps(const Tensor<T>& batch, bool train) {
        if (train && fully_frozen())
            throw std::runtime_error("forward: frozen model requires eval mode (batch-norm running stats)");
        ForwardResult<T> out;
        TapRecorder<T> rec;
        rec.wanted = &tap_name;
        Tensor<T> h = batch;
        for (auto& layer : layers_) {
            h = layer->forward(h, train, &rec);
            rec.record(layer->name(), h);
            out.layer_shapes.emplace_back(layer->name(), h.shape());
        }
        out.logits = h;
        if (!tap_name.empty()) {
            if (!rec.tap.defined())
                throw std::runtime_error("forward: tap '" + tap_name + "' was never produced");
            Tensor<T> tap = rec.tap;
            if (adapter_) tap = adapter_->apply(tap, train);
            out.taps.emplace(tap_name, tap);
        }
        return out;
    }

    std::vector<Param<T>*> params() {
        std::vector<Param<T>*> out;
        for (auto& l : layers_) l->collect_params(out);
        if (adapter_) adapter_->proj->collect_params(out);
        return out;
    }
    std::vector<BufferRef<T>> buffers() {
        std::vector<BufferRef<T>> out;
        for (auto& l : layers_) l->collect_buffers(out);
        return out;
    }

    int64_t param_count(bool trainable_only = true) {
        int64_t n = 0;
        for (auto* p : params())
            if (!trainable_only || p->trainable) n += p->value.size();
        return n;
    }

    bool fully_frozen() {
        for (auto* p : params())
            if (p->trainable) return false;
        return true;
    }

    // Parameter-bearing top-level layer names, in order; the freeze policy's
    // layer groups.
    std::vector<std::string> param_groups() {
        std::vector<std::string> out;
        for (auto& l : layers_) {
            std::vector<Param<T>*> ps;
            l->collect_params(ps);
            if (!ps.empty()) out.push_back(l->name());
        }
        if (adapter_) out.push_back("tap_adapter");
        return out;
    }

    void apply_freeze(const FreezePolicy& policy) {
        auto groups = param_groups();
        switch (policy.kind) {
            case FreezePolicy::Kind::all_trainable:
                for (auto* p : params()) p->set_trainable(true);
                return;
            case FreezePolicy::Kind::frozen:
                for (auto* p : params()) p->set_trainable(false);
                return;
            case FreezePolicy::Kind::unfreeze_last_k: {
                if (policy.k <= 0)
                    throw std::invalid_argument("freeze policy: unfreeze_last_k requires k >= 1 for training");
                if (policy.k > static_cast<int>(groups.size()))
                    throw std::invalid_argument("freeze policy: k=" + std::to_string(policy.k) +
                                                " exceeds " + std::to_string(groups.size()) +
                                                " parameter-bearing layer groups");
                std::set<std::string> unfrozen(groups.end() - policy.k, groups.end());
                for (auto& l : layers_) {
                    std::vector<Param<T>*> ps;
                    l->collect_params(ps);
                    const bool on = unfrozen.count(l->name()) > 0;
                    for (auto* p : ps) p->set_trainable(on);
                }
                if (adapter_) {
                    std::vector<Param<T>*> ps;
                    adapter_->proj->collect_params(ps);
                    const bool on = unfrozen.count("tap_adapter") > 0;
                    for (auto* p : ps) p->set_trainable(on);
                }
                return;
            }
        }
    }

    bool has_adapter() const { return adapter_.has_value(); }

    void attach_tap_adapter(int tap_channels, int target_channels, int target_hw, uint64_t seed) {
        std::mt19937 rng(static_cast<uint32_t>(seed ^ 0xADA7u));
        adapter_.emplace();
        adapter_->target_hw = target_hw;
        adapter_->proj = std::make_unique<Conv2dLayer<T>>("tap_adapter.proj", tap_channels,
                                                          target_channels, 1, 1, 0, false, rng);
    }

    const std::vector<std::unique_ptr<Layer<T>>>& layers() const { return layers_; }

private:
    std::vector<std::unique_ptr<Layer<T>>> layers_;
    std::optional<TapAdapter<T>> adapter_;
};

// Standalone dense-block builder (LayerGraph segment).
template <typename T>
std::unique_ptr<DenseBlockLayer<T>> build_dense_block(int in_channels, int n_layers, int growth_rate,
                                                      uint64_t seed = 0) {
    if (in_channels <= 0 || n_layers <= 0 || growth_rate <= 0)
        throw std::invalid_argument("build_dense_block: arguments must be positive");
    std::mt19937 rng(static_cast<uint32_t>(seed ^ 0xB10Cu));
    return std::make_unique<DenseBlockLayer<T>>("block", in_channels, n_layers, growth_rate, rng);
}

// Generalized builder: stem conv/pool, dense blocks with transitions,
// adaptive pool, projection stack, head. The tap defaults to the last
// projection output (or the last block's penultimate stream when there are
// no projections).
template <typename T>
Model<T> build_densenet_scaled(const ArchConfig& cfg, uint64_t seed, std::ostream* log = nullptr) {
    cfg.validate();
    std::mt19937 rng(static_cast<uint32_t>(seed ^ 0xD19Eu));
    Model<T> m;
    m.config = cfg;

    m.add_layer(std::make_unique<Conv2dLayer<T>>("stem_conv", cfg.in_channels, cfg.init_channels,
                                                 7, 2, 3, false, rng));
    m.add_layer(std::make_unique<BatchNormLayer<T>>("stem_bn", cfg.init_channels));
    m.add_layer(std::make_unique<ReLULayer<T>>("stem_relu"));
    m.add_layer(std::make_unique<MaxPoolLayer<T>>("stem_pool", 3, 2, 1));

    int c = cfg.init_channels;
    const int n_blocks = static_cast<int>(cfg.block_layer_counts.size());
    for (int b = 0; b < n_blocks; ++b) {
        auto block = std::make_unique<DenseBlockLayer<T>>("block" + std::to_string(b + 1), c,
                                                          cfg.block_layer_counts[b],
                                                          cfg.growth_rate, rng);
        c = block->out_channels();
        m.add_layer(std::move(block));
        if (b + 1 < n_blocks) {
            auto trans = std::make_unique<TransitionLayer<T>>("trans" + std::to_string(b + 1), c,
                                                              cfg.transition_compression, rng);
            c = trans->out_channels();
            m.add_layer(std::move(trans));
        }
    }
    m.add_layer(std::make_unique<BatchNormLayer<T>>("final_bn", c));
    m.add_layer(std::make_unique<ReLULayer<T>>("final_relu"));
    m.add_layer(std::make_unique<AdaptiveAvgPoolLayer<T>>("gpool", cfg.pool_target));
    for (size_t j = 0; j < cfg.projection_widths.size(); ++j) {
        const std::string pname = "proj" + std::to_string(j + 1);
        m.add_layer(std::make_unique<Conv2dLayer<T>>(pname, c, cfg.projection_widths[j], 1, 1, 0,
                                                     false, rng));
        c = cfg.projection_widths[j];
        if (j + 1 < cfg.projection_widths.size())
            m.add_layer(std::make_unique<ReLULayer<T>>(pname + "_relu"));
    }
    m.add_layer(std::make_unique<AdaptiveAvgPoolLayer<T>>("head_pool", 1));
    m.add_layer(std::make_unique<FlattenLayer<T>>("flatten"));
    m.add_layer(std::make_unique<DenseHeadLayer<T>>("head", c, cfg.num_classes, rng));

    // resolve the tap
    std::string tap = cfg.tap_spec;
    if (tap.empty()) {
        tap = cfg.projection_widths.empty()
                  ? ("block" + std::to_string(n_blocks) + ".penultimate")
                  : ("proj" + std::to_string(cfg.projection_widths.size()));
    }
    bool found = false;
    for (const auto& l : m.layers())
        if (l->name() == tap) found = true;
    for (int b = 0; b < n_blocks && !found; ++b)
        if (tap == "block" + std::to_string(b + 1) + ".penultimate") found = true;
    if (!found) throw std::invalid_argument("tap_spec names a nonexistent layer: '" + tap + "'");
    m.tap_name = tap;
    m.config.tap_spec = tap;

    if (log)
        *log << "model: " << m.param_count(false) << " parameters ("
             << m.param_count(true) << " trainable)\n";
    return m;
}

// reference trainable-parameter count this family is compared against
constexpr int64_t kDensenet40ReferenceParams = 1364142;

template <typename T>
Model<T> build_densenet40(int num_classes, HeadKind head, uint64_t seed = 0,
                          std::ostream* log = &std::cout) {
    auto m = build_densenet_scaled<T>(densenet40_config(num_classes, head), seed, nullptr);
    if (log) {
        const int64_t n = m.param_count(true);
        *log << "densenet40: " << n << " trainable parameters";
        if (n != kDensenet40ReferenceParams)
            *log << " (deviates from reference count " << kDensenet40ReferenceParams << " by "
                 << (n - kDensenet40ReferenceParams) << "; projection widths are configurable)";
        *log << "\n";
    }
    return m;
}

}  // namespace atx
