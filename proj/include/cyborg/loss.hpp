#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cyborg/grid.hpp"
#include "cyborg/model.hpp"

namespace cyborg::loss {

enum class Reduction { mean_over_elements, sum_over_elements };
enum class MissingSaliency { skip_term, error };

struct LossConfig {
    double alpha = 0.5;  // weight of the classification term
    Reduction reduction = Reduction::mean_over_elements;
    MissingSaliency missing = MissingSaliency::skip_term;

    void validate() const;
    nlohmann::json to_json() const;
    static LossConfig from_json(const nlohmann::json& j);
};

/// One sample as the loss sees it. `cam` may be null only when `human` is null.
struct SampleInput {
    std::span<const double> logits;
    const model::CamOutput* cam = nullptr;
    const FloatGrid* human = nullptr;  // already at CAM resolution
    int label = 0;
};

struct PerSample {
    double saliency_sq_err = 0.0;  // after the configured reduction; 0 when skipped
    double neg_log_prob = 0.0;
    bool has_saliency = false;
};

struct BatchLossBreakdown {
    double total = 0.0;
    double human_term = 0.0;
    double ce_term = 0.0;
    int K = 0;
    int K_saliency = 0;  // denominator of the human term
    std::vector<PerSample> per_sample;
};

/// -log softmax(logits)[label], via log-sum-exp.
double neg_log_prob(std::span<const double> logits, int label);

/// Squared l2 distance between two equally shaped grids, optionally divided by
/// the element count.
double saliency_distance(const Grid<double>& model_map, const FloatGrid& human, Reduction reduction);

/// total = (1 - alpha) * human_term + alpha * ce_term, where human_term averages
/// the saliency distance over samples that carry a human map and ce_term
/// averages -log p(y_k) over the whole batch.
BatchLossBreakdown cyborg_loss(std::span<const SampleInput> batch, const LossConfig& cfg);

/// d(total)/d(logits) and d(total)/d(CAM grid) for one sample of a batch with
/// `K` samples of which `K_saliency` carry human maps.
struct SampleGradient {
    std::vector<double> dlogits;
    Grid<double> dgrid;  // empty when the sample has no human map
};
SampleGradient sample_gradient(const SampleInput& s, const LossConfig& cfg, int K, int K_saliency);

Reduction reduction_from_string(const std::string& s);
std::string to_string(Reduction r);

}  // namespace cyborg::loss
