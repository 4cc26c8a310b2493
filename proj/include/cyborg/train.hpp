#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cyborg/loss.hpp"
#include "cyborg/objective.hpp"
#include "cyborg/model.hpp"
#include "cyborg/preprocess.hpp"

namespace cyborg::train {

/// ce_only: classification term only. cyborg: full composite loss.
/// ce_extra_data: classification only, on an enlarged training manifest.
enum class Scenario { ce_only, cyborg, ce_extra_data };
Scenario scenario_from_string(const std::string& s);
std::string to_string(Scenario s);

struct TrainConfig {
    double lr = 0.005;
    int epochs = 50;
    double lr_decay_factor = 0.1;
    int lr_decay_every = 12;
    int batch_size = 32;
    double alpha = 0.5;
    std::uint64_t seed = 0;
    Scenario scenario = Scenario::cyborg;
    model::CamClass cam_class = model::CamClass::true_label;
    loss::Reduction reduction = loss::Reduction::mean_over_elements;
    model::BackboneConfig backbone;
    int threads = 1;  // not part of the hash: results do not depend on it

    void validate() const;
    /// Step decay applied as repeated multiplication, once per elapsed period.
    double lr_at(int epoch) const;
    /// The loss actually optimized (alpha forced to 1 outside the cyborg scenario).
    loss::LossConfig loss_config() const;

    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
    std::string hash() const;
};

/// Training-ready samples at the backbone's input size, with human saliency
/// already reduced to the CAM resolution.
struct TrainingSet {
    std::vector<std::string> ids;
    std::vector<std::vector<float>> images;
    std::vector<int> labels;
    std::vector<std::optional<FloatGrid>> saliency;

    std::size_t size() const { return images.size(); }
    std::size_t with_saliency() const;
    std::vector<loss::Example> examples(std::span<const std::size_t> order) const;
    void add(const preprocess::LabeledSample& s, const model::BackboneConfig& cfg);
};

TrainingSet make_set(const std::vector<preprocess::LabeledSample>& samples, const model::BackboneConfig& cfg);
TrainingSet load_set(const preprocess::DatasetManifest& manifest, const model::BackboneConfig& cfg);

/// Seeded Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed);

struct Checkpoint {
    model::Network<float> net;
    model::CheckpointMeta meta;
};

struct TrainResult {
    Checkpoint best;
    std::vector<nlohmann::json> metrics;  // step and epoch records, in order
    std::vector<double> epoch_val_accuracy;
    bool aborted = false;
    std::string error;
    nlohmann::json diagnostics;  // populated on abort
};

/// Accuracy of argmax(logits) over the set; no saliency term is involved.
double accuracy(const model::Network<float>& net, const TrainingSet& set, int threads = 1);

/// Softmax probability of class 1 ("synthetic") per sample.
std::vector<double> synthetic_scores(const model::Network<float>& net, const TrainingSet& set, int threads = 1);

/// Seeded SGD over shuffled batches at the scheduled learning rate; keeps the
/// weights of the epoch with the highest validation accuracy (earliest on ties).
/// epochs == 0 evaluates the initialization only.
TrainResult train_one(const TrainConfig& cfg, const TrainingSet& train, const TrainingSet& val);

/// Writes checkpoint.bin, metrics.jsonl and summary.json into `dir`.
void write_run(const std::filesystem::path& dir, const TrainConfig& cfg, const TrainResult& result);

struct RunRecord {
    std::uint64_t seed = 0;
    bool completed = false;
    std::string error;
    std::optional<TrainResult> result;
};

struct RunSet {
    std::vector<RunRecord> runs;
    bool partial() const;
};

/// Runs seeds base..base+n-1. With `out`, each run lands in out/seed_<s>/ and a
/// run_summary.json is written at the root. Aborted runs stay in the set.
RunSet run_replicates(const TrainConfig& base, int n_seeds, const TrainingSet& train, const TrainingSet& val,
                      const std::optional<std::filesystem::path>& out = std::nullopt);

}  // namespace cyborg::train
