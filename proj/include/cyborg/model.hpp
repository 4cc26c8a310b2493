#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cyborg/grid.hpp"

namespace cyborg::model {

/// One conv -> ReLU [-> 2x2 average pool] stage. Convolutions use stride 1 and
/// "same" zero padding, so only pooling changes the resolution.
struct ConvBlockSpec {
    int channels = 16;
    int kernel = 3;
    bool pool = true;
};

/// Plain conv-pool stack followed by global average pooling and a linear head.
struct BackboneConfig {
    int input_h = 224;
    int input_w = 224;
    int input_c = 3;
    double input_shift = 0.5;  // subtracted from every input value before the first conv
    std::vector<ConvBlockSpec> blocks = {{16, 3, true}, {32, 3, true}, {64, 3, true}, {64, 3, true}};
    int classes = 2;

    int feature_h() const;
    int feature_w() const;
    int feature_maps() const;  // N
    void validate() const;

    nlohmann::json to_json() const;
    static BackboneConfig from_json(const nlohmann::json& j);
};

/// Flat parameter tensor living inside Network::values().
struct ParamInfo {
    std::string name;
    std::vector<int> shape;
    std::size_t offset = 0;
    std::size_t count = 0;
};

/// Per-sample forward result. `features` is N x h x w, channel-major.
template <typename S>
struct BackboneOutput {
    int n = 0;
    int h = 0;
    int w = 0;
    std::vector<S> features;
    std::vector<S> pooled;
    std::vector<S> logits;
};

/// Last-layer classifier weights: row c of `weight` (C x N) drives logit c and CAM c.
template <typename S>
struct HeadView {
    std::span<const S> weight;
    std::span<const S> bias;
    int classes = 0;
    int n = 0;

    std::span<const S> row(int c) const { return weight.subspan(static_cast<std::size_t>(c) * n, n); }
};

template <typename S>
struct BlockTrace {
    std::vector<S> input;  // Cin x H x W
    std::vector<S> cols;   // im2col buffer
    std::vector<S> activ;  // post-ReLU, Cout x H x W
};

template <typename S>
struct ForwardTrace {
    BackboneOutput<S> out;
    std::vector<BlockTrace<S>> blocks;
};

template <typename S>
class Network {
public:
    explicit Network(BackboneConfig cfg);

    const BackboneConfig& config() const { return cfg_; }
    const std::vector<ParamInfo>& params() const { return params_; }
    std::size_t param_count() const { return values_.size(); }
    std::span<S> values() { return values_; }
    std::span<const S> values() const { return values_; }
    const ParamInfo& param(const std::string& name) const;

    /// He-uniform conv weights, uniform(+-1/sqrt(N)) head weights, zero biases.
    void initialize(std::uint64_t seed);

    HeadView<S> head() const;

    /// `image` is HWC in [0,1] with the configured input geometry.
    BackboneOutput<S> forward(std::span<const float> image) const;
    ForwardTrace<S> forward_trace(std::span<const float> image) const;

    /// Accumulates d(loss)/d(params) into `grad` given the loss gradient with
    /// respect to logits and (optionally empty) features.
    void backward(const ForwardTrace<S>& trace, std::span<const S> dlogits, std::span<const S> dfeatures,
                  std::span<S> grad) const;

private:
    BackboneConfig cfg_;
    std::vector<ParamInfo> params_;
    std::vector<S> values_;
    std::vector<std::size_t> conv_w_, conv_b_;
    std::size_t head_w_ = 0, head_b_ = 0;
};

extern template class Network<float>;
extern template class Network<double>;

/// Normalized class activation map plus what the backward pass needs.
struct CamOutput {
    Grid<double> grid;  // in [0,1]
    Grid<double> raw;
    int class_used = 0;
    double raw_min = 0.0;
    double raw_max = 0.0;
    std::size_t argmin = 0;
    std::size_t argmax = 0;
};

/// raw = sum_n f_n * W[c][n] accumulated in double in channel order, then min-max
/// scaled; a constant raw map yields an all-zero grid.
template <typename S>
CamOutput cam(std::span<const S> features, int n, int h, int w, const HeadView<S>& head, int c);

/// Chains d(loss)/d(grid) through the normalization and weighted sum. Adds into
/// `dfeatures` (N x h x w) and `dweight_row` (length N). The constant-map case
/// contributes nothing.
template <typename S>
void cam_backward(std::span<const S> features, int n, int h, int w, const HeadView<S>& head, const CamOutput& cam,
                  const Grid<double>& dgrid, std::span<S> dfeatures, std::span<S> dweight_row);

/// Which class's weights produce the CAM during training.
enum class CamClass { true_label, argmax_prediction };
CamClass cam_class_from_string(const std::string& s);
std::string to_string(CamClass c);

template <typename S>
int argmax(std::span<const S> v) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

struct CheckpointMeta {
    int epoch = -1;
    double validation_accuracy = 0.0;
    std::string config_hash;
    nlohmann::json extra = nlohmann::json::object();
};

/// One JSON header line (metadata, backbone config, parameter table) followed
/// by every parameter as little-endian f32 in table order.
void save_checkpoint(const std::filesystem::path& path, const Network<float>& net, const CheckpointMeta& meta);
Network<float> load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

}  // namespace cyborg::model
