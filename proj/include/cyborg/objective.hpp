#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cyborg/loss.hpp"
#include "cyborg/model.hpp"

namespace cyborg::loss {

/// A network input together with what the loss needs to score it.
struct Example {
    std::span<const float> image;      // HWC in [0,1]
    int label = 0;
    const FloatGrid* saliency = nullptr;  // at CAM resolution, or null
};

template <typename S>
struct BatchResult {
    BatchLossBreakdown loss;
    std::vector<S> grad;          // empty unless requested
    std::vector<int> predictions;  // argmax of logits per sample
};

/// Forward pass, CAM, CYBORG loss and (optionally) the full parameter gradient
/// for one batch. Per-sample work is spread over `threads` workers; per-sample
/// gradients are reduced in sample order, so results do not depend on the
/// thread count.
template <typename S>
BatchResult<S> evaluate_batch(const model::Network<S>& net, std::span<const Example> batch, const LossConfig& cfg,
                              model::CamClass cam_class, bool need_grad, int threads = 1);

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t checked = 0;
    double max_abs_grad = 0.0;
    double max_abs_grad_conv = 0.0;  // largest analytic gradient on conv weights
};

/// Fourth-order central finite differences of the batch total against the analytic
/// gradient, over every trainable parameter. Relative error is
/// |a - n| / max(|a|, |n|, floor). Throws NumericalError naming the parameter
/// if a perturbed loss is not finite.
template <typename S>
GradCheckResult loss_gradcheck(model::Network<S>& net, std::span<const Example> batch, const LossConfig& cfg,
                               model::CamClass cam_class, double epsilon, double floor = 1e-6);

}  // namespace cyborg::loss
