#include "cyborg/objective.hpp"

#include "cyborg/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace cyborg::loss {

namespace {

template <typename S>
struct SampleWork {
    model::ForwardTrace<S> trace;
    std::vector<double> logits;
    std::optional<model::CamOutput> cam;
};

}  // namespace

template <typename S>
BatchResult<S> evaluate_batch(const model::Network<S>& net, std::span<const Example> batch, const LossConfig& cfg,
                              model::CamClass cam_class, bool need_grad, int threads) {
    cfg.validate();
    require(!batch.empty(), "empty batch");
    const auto head = net.head();
    const auto& bcfg = net.config();
    const int n = bcfg.feature_maps();
    const int h = bcfg.feature_h();
    const int w = bcfg.feature_w();

    int k_saliency = 0;
    for (const auto& ex : batch) {
        require(ex.label >= 0 && ex.label < bcfg.classes, "label out of range");
        if (ex.saliency != nullptr) {
            require(ex.saliency->rows() == h && ex.saliency->cols() == w,
                    "human saliency must be resized to the CAM resolution first");
            ++k_saliency;
        } else {
            require(cfg.missing == MissingSaliency::skip_term, "sample lacks a human saliency map (policy: error)");
        }
    }
    const int K = static_cast<int>(batch.size());

    std::vector<SampleWork<S>> work(batch.size());
    std::vector<std::vector<S>> grads(need_grad ? batch.size() : 0);

    parallel_for(batch.size(), threads, [&](std::size_t i) {
        const auto& ex = batch[i];
        auto& wk = work[i];
        wk.trace = net.forward_trace(ex.image);
        const auto& out = wk.trace.out;
        wk.logits.assign(out.logits.begin(), out.logits.end());
        if (ex.saliency != nullptr) {
            const int c = cam_class == model::CamClass::true_label ? ex.label
                                                                   : model::argmax(std::span<const S>(out.logits));
            wk.cam = model::cam(std::span<const S>(out.features), n, h, w, head, c);
        }
        if (!need_grad) {
            wk.trace.blocks.clear();
            return;
        }
        SampleInput si{wk.logits, wk.cam ? &*wk.cam : nullptr, ex.saliency, ex.label};
        const auto sg = sample_gradient(si, cfg, K, k_saliency);
        auto& g = grads[i];
        g.assign(net.param_count(), S{0});
        std::vector<S> dlogits(sg.dlogits.begin(), sg.dlogits.end());
        std::vector<S> dfeatures;
        if (wk.cam && !sg.dgrid.empty()) {
            dfeatures.assign(out.features.size(), S{0});
            const auto& hp = net.param("head.weight");
            std::span<S> drow(g.data() + hp.offset + static_cast<std::size_t>(wk.cam->class_used) * n, n);
            model::cam_backward(std::span<const S>(out.features), n, h, w, head, *wk.cam, sg.dgrid,
                                std::span<S>(dfeatures), drow);
        }
        net.backward(wk.trace, dlogits, dfeatures, g);
        wk.trace.blocks.clear();
    });

    BatchResult<S> result;
    std::vector<SampleInput> inputs;
    inputs.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        inputs.push_back({work[i].logits, work[i].cam ? &*work[i].cam : nullptr, batch[i].saliency, batch[i].label});
        result.predictions.push_back(model::argmax(std::span<const double>(work[i].logits)));
    }
    result.loss = cyborg_loss(inputs, cfg);
    if (need_grad) {
        result.grad.assign(net.param_count(), S{0});
        for (const auto& g : grads)
            for (std::size_t j = 0; j < g.size(); ++j) result.grad[j] += g[j];
    }
    return result;
}

template <typename S>
GradCheckResult loss_gradcheck(model::Network<S>& net, std::span<const Example> batch, const LossConfig& cfg,
                               model::CamClass cam_class, double epsilon, double floor) {
    require(epsilon > 0.0, "epsilon must be positive");
    const auto analytic = evaluate_batch(net, batch, cfg, cam_class, true, 1).grad;
    GradCheckResult res;
    auto values = net.values();
    for (const auto& p : net.params()) {
        const bool is_conv_weight = p.name.rfind("conv", 0) == 0 && p.name.find(".weight") != std::string::npos;
        for (std::size_t j = 0; j < p.count; ++j) {
            const std::size_t idx = p.offset + j;
            const S saved = values[idx];
            auto loss_at = [&](double offset) {
                values[idx] = static_cast<S>(static_cast<double>(saved) + offset);
                const double l = evaluate_batch(net, batch, cfg, cam_class, false, 1).loss.total;
                if (!std::isfinite(l))
                    throw NumericalError("non-finite loss while perturbing " + p.name + "[" + std::to_string(j) + "]");
                return l;
            };
            // Fourth-order central stencil.
            const double f_p1 = loss_at(epsilon);
            const double f_m1 = loss_at(-epsilon);
            const double f_p2 = loss_at(2 * epsilon);
            const double f_m2 = loss_at(-2 * epsilon);
            values[idx] = saved;
            const double numeric = (8.0 * (f_p1 - f_m1) - (f_p2 - f_m2)) / (12.0 * epsilon);
            const double a = static_cast<double>(analytic[idx]);
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
            res.max_abs_grad = std::max(res.max_abs_grad, std::abs(a));
            if (is_conv_weight) res.max_abs_grad_conv = std::max(res.max_abs_grad_conv, std::abs(a));
            ++res.checked;
            if (rel > res.max_rel_error || res.checked == 1) {
                res.max_rel_error = std::max(res.max_rel_error, rel);
                if (rel >= res.max_rel_error) {
                    res.worst_param = p.name;
                    res.worst_index = j;
                    res.worst_analytic = a;
                    res.worst_numeric = numeric;
                }
            }
        }
    }
    return res;
}

template BatchResult<float> evaluate_batch<float>(const model::Network<float>&, std::span<const Example>,
                                                  const LossConfig&, model::CamClass, bool, int);
template BatchResult<double> evaluate_batch<double>(const model::Network<double>&, std::span<const Example>,
                                                    const LossConfig&, model::CamClass, bool, int);
template GradCheckResult loss_gradcheck<float>(model::Network<float>&, std::span<const Example>, const LossConfig&,
                                               model::CamClass, double, double);
template GradCheckResult loss_gradcheck<double>(model::Network<double>&, std::span<const Example>,
                                                const LossConfig&, model::CamClass, double, double);

}  // namespace cyborg::loss
