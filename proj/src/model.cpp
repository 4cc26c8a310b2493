#include "cyborg/model.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include <Eigen/Core>

#include "cyborg/binary_io.hpp"
#include "cyborg/errors.hpp"

namespace cyborg::model {

namespace {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMat<S>>;

double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

template <typename S>
void im2col(const std::vector<S>& in, int c, int h, int w, int k, std::vector<S>& cols) {
    const int pad = k / 2;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    cols.assign(static_cast<std::size_t>(c) * k * k * hw, S{0});
    for (int ci = 0; ci < c; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                S* dst = cols.data() + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * hw;
                const S* src = in.data() + static_cast<std::size_t>(ci) * hw;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - pad;
                    if (sy < 0 || sy >= h) continue;
                    const int x_lo = std::max(0, pad - kx);
                    const int x_hi = std::min(w, w + pad - kx);
                    for (int x = x_lo; x < x_hi; ++x) dst[y * w + x] = src[sy * w + x + kx - pad];
                }
            }
}

template <typename S>
void col2im(const S* dcols, int c, int h, int w, int k, std::vector<S>& dx) {
    const int pad = k / 2;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    dx.assign(static_cast<std::size_t>(c) * hw, S{0});
    for (int ci = 0; ci < c; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const S* src = dcols + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * hw;
                S* dst = dx.data() + static_cast<std::size_t>(ci) * hw;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - pad;
                    if (sy < 0 || sy >= h) continue;
                    const int x_lo = std::max(0, pad - kx);
                    const int x_hi = std::min(w, w + pad - kx);
                    for (int x = x_lo; x < x_hi; ++x) dst[sy * w + x + kx - pad] += src[y * w + x];
                }
            }
}

template <typename S>
std::vector<S> avg_pool2(const std::vector<S>& in, int c, int h, int w) {
    const int oh = h / 2;
    const int ow = w / 2;
    std::vector<S> out(static_cast<std::size_t>(c) * oh * ow);
    for (int ci = 0; ci < c; ++ci) {
        const S* src = in.data() + static_cast<std::size_t>(ci) * h * w;
        S* dst = out.data() + static_cast<std::size_t>(ci) * oh * ow;
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                const S* p = src + 2 * y * w + 2 * x;
                dst[y * ow + x] = (p[0] + p[1] + p[w] + p[w + 1]) * S(0.25);
            }
    }
    return out;
}

template <typename S>
std::vector<S> avg_pool2_backward(const std::vector<S>& dout, int c, int h, int w) {
    const int oh = h / 2;
    const int ow = w / 2;
    std::vector<S> din(static_cast<std::size_t>(c) * h * w);
    for (int ci = 0; ci < c; ++ci) {
        const S* src = dout.data() + static_cast<std::size_t>(ci) * oh * ow;
        S* dst = din.data() + static_cast<std::size_t>(ci) * h * w;
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                const S g = src[y * ow + x] * S(0.25);
                S* p = dst + 2 * y * w + 2 * x;
                p[0] = g;
                p[1] = g;
                p[w] = g;
                p[w + 1] = g;
            }
    }
    return din;
}

}  // namespace

// ---------------------------------------------------------------------------
// BackboneConfig

int BackboneConfig::feature_h() const {
    int h = input_h;
    for (const auto& b : blocks)
        if (b.pool) h /= 2;
    return h;
}

int BackboneConfig::feature_w() const {
    int w = input_w;
    for (const auto& b : blocks)
        if (b.pool) w /= 2;
    return w;
}

int BackboneConfig::feature_maps() const { return blocks.empty() ? input_c : blocks.back().channels; }

void BackboneConfig::validate() const {
    require(input_h >= 1 && input_w >= 1 && input_c >= 1, "input geometry must be positive");
    require(std::isfinite(input_shift), "input_shift must be finite");
    require(!blocks.empty(), "backbone needs at least one conv block");
    require(classes >= 2, "classifier needs at least two classes");
    int h = input_h;
    int w = input_w;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& b = blocks[i];
        require(b.channels >= 1, "block " + std::to_string(i) + ": channels must be positive");
        require(b.kernel >= 1 && b.kernel % 2 == 1, "block " + std::to_string(i) + ": kernel must be odd");
        if (b.pool) {
            require(h % 2 == 0 && w % 2 == 0,
                    "block " + std::to_string(i) + ": pooling needs even spatial size, got " + std::to_string(h) +
                        "x" + std::to_string(w));
            h /= 2;
            w /= 2;
        }
    }
    require(h >= 2 && w >= 2, "final feature resolution must be at least 2x2");
}

nlohmann::json BackboneConfig::to_json() const {
    nlohmann::json jb = nlohmann::json::array();
    for (const auto& b : blocks) jb.push_back({{"channels", b.channels}, {"kernel", b.kernel}, {"pool", b.pool}});
    return {{"input_h", input_h}, {"input_w", input_w}, {"input_c", input_c}, {"input_shift", input_shift}, {"blocks", jb}, {"classes", classes}};
}

BackboneConfig BackboneConfig::from_json(const nlohmann::json& j) {
    BackboneConfig cfg;
    try {
        cfg.input_h = j.value("input_h", cfg.input_h);
        cfg.input_w = j.value("input_w", cfg.input_w);
        cfg.input_c = j.value("input_c", cfg.input_c);
        cfg.input_shift = j.value("input_shift", cfg.input_shift);
        cfg.classes = j.value("classes", cfg.classes);
        if (j.contains("blocks")) {
            cfg.blocks.clear();
            for (const auto& b : j.at("blocks"))
                cfg.blocks.push_back({b.at("channels").get<int>(), b.value("kernel", 3), b.value("pool", true)});
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad backbone config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------
// Network

template <typename S>
Network<S>::Network(BackboneConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::size_t offset = 0;
    auto add = [&](std::string name, std::vector<int> shape) {
        std::size_t count = 1;
        for (int d : shape) count *= static_cast<std::size_t>(d);
        params_.push_back({std::move(name), std::move(shape), offset, count});
        offset += count;
        return params_.size() - 1;
    };
    int cin = cfg_.input_c;
    for (std::size_t i = 0; i < cfg_.blocks.size(); ++i) {
        const auto& b = cfg_.blocks[i];
        conv_w_.push_back(add("conv" + std::to_string(i) + ".weight", {b.channels, cin, b.kernel, b.kernel}));
        conv_b_.push_back(add("conv" + std::to_string(i) + ".bias", {b.channels}));
        cin = b.channels;
    }
    head_w_ = add("head.weight", {cfg_.classes, cin});
    head_b_ = add("head.bias", {cfg_.classes});
    values_.assign(offset, S{0});
}

template <typename S>
const ParamInfo& Network<S>::param(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return p;
    throw ValidationError("no parameter named " + name);
}

template <typename S>
void Network<S>::initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::fill(values_.begin(), values_.end(), S{0});
    int cin = cfg_.input_c;
    for (std::size_t i = 0; i < cfg_.blocks.size(); ++i) {
        const auto& info = params_[conv_w_[i]];
        const double fan_in = static_cast<double>(cin) * cfg_.blocks[i].kernel * cfg_.blocks[i].kernel;
        const double bound = std::sqrt(6.0 / fan_in);
        for (std::size_t j = 0; j < info.count; ++j)
            values_[info.offset + j] = static_cast<S>((2.0 * unit_uniform(rng) - 1.0) * bound);
        cin = cfg_.blocks[i].channels;
    }
    const auto& head = params_[head_w_];
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin));
    for (std::size_t j = 0; j < head.count; ++j)
        values_[head.offset + j] = static_cast<S>((2.0 * unit_uniform(rng) - 1.0) * bound);
}

template <typename S>
HeadView<S> Network<S>::head() const {
    const auto& w = params_[head_w_];
    const auto& b = params_[head_b_];
    return {std::span<const S>(values_).subspan(w.offset, w.count), std::span<const S>(values_).subspan(b.offset, b.count),
            cfg_.classes, cfg_.feature_maps()};
}

template <typename S>
ForwardTrace<S> Network<S>::forward_trace(std::span<const float> image) const {
    const std::size_t expected = static_cast<std::size_t>(cfg_.input_h) * cfg_.input_w * cfg_.input_c;
    require(image.size() == expected, "input tensor has " + std::to_string(image.size()) + " values, expected " +
                                          std::to_string(expected));
    ForwardTrace<S> trace;
    int c = cfg_.input_c;
    int h = cfg_.input_h;
    int w = cfg_.input_w;
    std::vector<S> x(expected);
    const S shift = static_cast<S>(cfg_.input_shift);
    for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
            for (int ch = 0; ch < c; ++ch)
                x[(static_cast<std::size_t>(ch) * h + y) * w + xx] =
                    static_cast<S>(image[(static_cast<std::size_t>(y) * w + xx) * c + ch]) - shift;

    for (std::size_t i = 0; i < cfg_.blocks.size(); ++i) {
        const auto& b = cfg_.blocks[i];
        const int k = b.kernel;
        const std::size_t hw = static_cast<std::size_t>(h) * w;
        BlockTrace<S> bt;
        im2col(x, c, h, w, k, bt.cols);
        const auto& wi = params_[conv_w_[i]];
        const auto& bi = params_[conv_b_[i]];
        ConstMatMap<S> weight(values_.data() + wi.offset, b.channels, static_cast<Eigen::Index>(c) * k * k);
        Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> bias(values_.data() + bi.offset, b.channels);
        ConstMatMap<S> cols(bt.cols.data(), static_cast<Eigen::Index>(c) * k * k, hw);
        bt.activ.resize(static_cast<std::size_t>(b.channels) * hw);
        MatMap<S> out(bt.activ.data(), b.channels, hw);
        out.noalias() = weight * cols;
        out.colwise() += bias;
        out = out.cwiseMax(S{0});
        bt.input = std::move(x);
        x = b.pool ? avg_pool2(bt.activ, b.channels, h, w) : bt.activ;
        c = b.channels;
        if (b.pool) {
            h /= 2;
            w /= 2;
        }
        trace.blocks.push_back(std::move(bt));
    }

    auto& out = trace.out;
    out.n = c;
    out.h = h;
    out.w = w;
    out.features = std::move(x);
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    out.pooled.assign(c, S{0});
    for (int n = 0; n < c; ++n) {
        S acc{0};
        for (std::size_t p = 0; p < hw; ++p) acc += out.features[n * hw + p];
        out.pooled[n] = acc / static_cast<S>(hw);
    }
    const auto hv = head();
    out.logits.assign(cfg_.classes, S{0});
    for (int cl = 0; cl < cfg_.classes; ++cl) {
        S acc = hv.bias[cl];
        auto row = hv.row(cl);
        for (int n = 0; n < c; ++n) acc += row[n] * out.pooled[n];
        out.logits[cl] = acc;
    }
    return trace;
}

template <typename S>
BackboneOutput<S> Network<S>::forward(std::span<const float> image) const {
    return std::move(forward_trace(image).out);
}

template <typename S>
void Network<S>::backward(const ForwardTrace<S>& trace, std::span<const S> dlogits, std::span<const S> dfeatures,
                          std::span<S> grad) const {
    require(grad.size() == values_.size(), "gradient buffer size mismatch");
    require(dlogits.size() == static_cast<std::size_t>(cfg_.classes), "dlogits size mismatch");
    const auto& out = trace.out;
    const std::size_t hw = static_cast<std::size_t>(out.h) * out.w;
    require(dfeatures.empty() || dfeatures.size() == out.features.size(), "dfeatures size mismatch");

    // Linear head and global average pooling.
    const auto hv = head();
    const auto& hwp = params_[head_w_];
    const auto& hbp = params_[head_b_];
    std::vector<S> dpooled(out.n, S{0});
    for (int cl = 0; cl < cfg_.classes; ++cl) {
        grad[hbp.offset + cl] += dlogits[cl];
        auto row = hv.row(cl);
        for (int n = 0; n < out.n; ++n) {
            grad[hwp.offset + static_cast<std::size_t>(cl) * out.n + n] += dlogits[cl] * out.pooled[n];
            dpooled[n] += dlogits[cl] * row[n];
        }
    }
    std::vector<S> dx(out.features.size());
    for (int n = 0; n < out.n; ++n) {
        const S g = dpooled[n] / static_cast<S>(hw);
        for (std::size_t p = 0; p < hw; ++p) dx[n * hw + p] = g;
    }
    if (!dfeatures.empty())
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dfeatures[i];

    // Conv blocks in reverse; the gradient w.r.t. the raw image is not needed.
    int h = out.h;
    int w = out.w;
    for (std::size_t ii = cfg_.blocks.size(); ii-- > 0;) {
        const auto& b = cfg_.blocks[ii];
        const auto& bt = trace.blocks[ii];
        if (b.pool) {
            h *= 2;
            w *= 2;
        }
        const int cin = ii == 0 ? cfg_.input_c : cfg_.blocks[ii - 1].channels;
        const int k = b.kernel;
        const std::size_t bhw = static_cast<std::size_t>(h) * w;
        std::vector<S> dact = b.pool ? avg_pool2_backward(dx, b.channels, h, w) : std::move(dx);
        for (std::size_t i = 0; i < dact.size(); ++i)
            if (!(bt.activ[i] > S{0})) dact[i] = S{0};
        MatMap<S> dz(dact.data(), b.channels, bhw);
        ConstMatMap<S> cols(bt.cols.data(), static_cast<Eigen::Index>(cin) * k * k, bhw);
        const auto& wi = params_[conv_w_[ii]];
        const auto& bi = params_[conv_b_[ii]];
        MatMap<S> dweight(grad.data() + wi.offset, b.channels, static_cast<Eigen::Index>(cin) * k * k);
        dweight.noalias() += dz * cols.transpose();
        Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> dbias(grad.data() + bi.offset, b.channels);
        dbias += dz.rowwise().sum();
        if (ii == 0) break;
        ConstMatMap<S> weight(values_.data() + wi.offset, b.channels, static_cast<Eigen::Index>(cin) * k * k);
        RowMat<S> dcols = weight.transpose() * dz;
        col2im(dcols.data(), cin, h, w, k, dx);
    }
}

template class Network<float>;
template class Network<double>;

// ---------------------------------------------------------------------------
// CAM

template <typename S>
CamOutput cam(std::span<const S> features, int n, int h, int w, const HeadView<S>& head, int c) {
    require(c >= 0 && c < head.classes, "CAM class index out of range");
    require(n == head.n, "feature map count " + std::to_string(n) + " does not match head width " +
                             std::to_string(head.n));
    require(h >= 1 && w >= 1, "CAM needs a nonempty spatial grid");
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    require(features.size() == static_cast<std::size_t>(n) * hw, "feature tensor size mismatch");
    CamOutput out;
    out.class_used = c;
    out.raw = Grid<double>(h, w, 0.0);
    auto raw = out.raw.values();
    auto row = head.row(c);
    for (int k = 0; k < n; ++k) {
        const double wk = static_cast<double>(row[k]);
        const S* f = features.data() + static_cast<std::size_t>(k) * hw;
        for (std::size_t p = 0; p < hw; ++p) raw[p] += static_cast<double>(f[p]) * wk;
    }
    out.argmin = 0;
    out.argmax = 0;
    for (std::size_t p = 1; p < hw; ++p) {
        if (raw[p] < raw[out.argmin]) out.argmin = p;
        if (raw[p] > raw[out.argmax]) out.argmax = p;
    }
    out.raw_min = raw[out.argmin];
    out.raw_max = raw[out.argmax];
    out.grid = Grid<double>(h, w, 0.0);
    if (out.raw_max > out.raw_min) {
        const double span = out.raw_max - out.raw_min;
        auto g = out.grid.values();
        for (std::size_t p = 0; p < hw; ++p) g[p] = (raw[p] - out.raw_min) / span;
    }
    return out;
}

template <typename S>
void cam_backward(std::span<const S> features, int n, int h, int w, const HeadView<S>& head, const CamOutput& c,
                  const Grid<double>& dgrid, std::span<S> dfeatures, std::span<S> dweight_row) {
    require(dgrid.rows() == h && dgrid.cols() == w, "CAM gradient shape mismatch");
    if (!(c.raw_max > c.raw_min)) return;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    const double span = c.raw_max - c.raw_min;
    auto g = c.grid.values();
    auto dg = dgrid.values();
    // grid_p = (raw_p - m) / (M - m):  d/dm = (grid_p - 1)/D,  d/dM = -grid_p/D.
    std::vector<double> draw(hw);
    double dmin = 0.0;
    double dmax = 0.0;
    for (std::size_t p = 0; p < hw; ++p) {
        draw[p] = dg[p] / span;
        dmin += dg[p] * (g[p] - 1.0) / span;
        dmax -= dg[p] * g[p] / span;
    }
    draw[c.argmin] += dmin;
    draw[c.argmax] += dmax;
    auto row = head.row(c.class_used);
    for (int k = 0; k < n; ++k) {
        const S* f = features.data() + static_cast<std::size_t>(k) * hw;
        S* df = dfeatures.data() + static_cast<std::size_t>(k) * hw;
        const double wk = static_cast<double>(row[k]);
        double dw = 0.0;
        for (std::size_t p = 0; p < hw; ++p) {
            dw += draw[p] * static_cast<double>(f[p]);
            df[p] += static_cast<S>(draw[p] * wk);
        }
        dweight_row[k] += static_cast<S>(dw);
    }
}

template CamOutput cam<float>(std::span<const float>, int, int, int, const HeadView<float>&, int);
template CamOutput cam<double>(std::span<const double>, int, int, int, const HeadView<double>&, int);
template void cam_backward<float>(std::span<const float>, int, int, int, const HeadView<float>&, const CamOutput&,
                                  const Grid<double>&, std::span<float>, std::span<float>);
template void cam_backward<double>(std::span<const double>, int, int, int, const HeadView<double>&, const CamOutput&,
                                   const Grid<double>&, std::span<double>, std::span<double>);

CamClass cam_class_from_string(const std::string& s) {
    if (s == "true_label") return CamClass::true_label;
    if (s == "argmax_prediction") return CamClass::argmax_prediction;
    throw ValidationError("unknown cam_class '" + s + "' (expected true_label or argmax_prediction)");
}

std::string to_string(CamClass c) { return c == CamClass::true_label ? "true_label" : "argmax_prediction"; }

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::filesystem::path& path, const Network<float>& net, const CheckpointMeta& meta) {
    nlohmann::json table = nlohmann::json::array();
    for (const auto& p : net.params())
        table.push_back({{"name", p.name}, {"shape", p.shape}, {"offset", p.offset}, {"count", p.count}});
    nlohmann::json header = {{"format", "cyborg-checkpoint"},
                             {"version", 1},
                             {"dtype", "f32le"},
                             {"backbone", net.config().to_json()},
                             {"epoch", meta.epoch},
                             {"validation_accuracy", meta.validation_accuracy},
                             {"config_hash", meta.config_hash},
                             {"extra", meta.extra},
                             {"params", table}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << header.dump() << '\n';
    write_f32le(out, net.values());
    if (!out) throw IoError("write failed: " + path.string());
}

Network<float> load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty checkpoint: " + path.string());
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad checkpoint header in " + path.string() + ": " + e.what());
    }
    if (header.value("format", "") != "cyborg-checkpoint") throw IoError("not a checkpoint: " + path.string());
    Network<float> net(BackboneConfig::from_json(header.at("backbone")));
    const auto& table = header.at("params");
    require(table.size() == net.params().size(), "checkpoint parameter table does not match backbone");
    for (std::size_t i = 0; i < table.size(); ++i)
        require(table[i].at("name").get<std::string>() == net.params()[i].name &&
                    table[i].at("count").get<std::size_t>() == net.params()[i].count,
                "checkpoint parameter " + net.params()[i].name + " does not match backbone");
    auto values = read_f32le(in, net.param_count());
    std::copy(values.begin(), values.end(), net.values().begin());
    if (meta) {
        meta->epoch = header.value("epoch", -1);
        meta->validation_accuracy = header.value("validation_accuracy", 0.0);
        meta->config_hash = header.value("config_hash", "");
        meta->extra = header.value("extra", nlohmann::json::object());
    }
    return net;
}

}  // namespace cyborg::model
