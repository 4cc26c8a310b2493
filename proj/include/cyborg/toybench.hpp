#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "cyborg/eval.hpp"
#include "cyborg/preprocess.hpp"
#include "cyborg/train.hpp"

namespace cyborg::toybench {

/// Synthetic shift benchmark. Each image is gray noise with an oriented
/// stripe texture in a central "face" square (vertical for synthetic,
/// horizontal for real). Training and validation images also carry a bright
/// corner marker on every synthetic sample; test images carry it on every
/// real sample instead.
struct ToyBenchSpec {
    int image_size = 64;
    int face_size = 24;  // centered square
    double noise_std = 0.12;
    double texture_amplitude = 0.1;
    int stripe_period = 4;
    int marker_size = 10;
    double marker_value = 1.0;
    bool salient_patch = true;
    bool spurious_cue = true;
    int n_train = 240;
    int n_val = 80;
    int n_test = 400;
    std::uint64_t data_seed = 7;
    double blur_sigma = 5.0;
    train::TrainConfig train;  // seed is the base seed for replicates

    ToyBenchSpec();
    void validate() const;
    nlohmann::json to_json() const;
    static ToyBenchSpec from_json(const nlohmann::json& j);
};

enum class Split { train, val, test };

/// Region where the human saliency is 1 before blurring: {top, left, size}.
struct Square {
    int top = 0;
    int left = 0;
    int size = 0;
};
Square face_square(const ToyBenchSpec& spec);
Square marker_square(const ToyBenchSpec& spec);

/// Balanced labels (even index real, odd synthetic). Every sample carries the
/// blurred face-region saliency map.
std::vector<preprocess::LabeledSample> generate(const ToyBenchSpec& spec, Split split);

struct ScenarioResult {
    train::Scenario scenario;
    std::vector<double> test_aucs;  // one per completed seed
    eval::AucCell cell;
    std::vector<eval::RocCurve> curves;
    bool partial = false;
};

struct ToyBenchResult {
    ScenarioResult ce_only;
    ScenarioResult cyborg;
    eval::AucTable table;
    double auc_gap = 0.0;  // cyborg mean - ce_only mean
};

ToyBenchResult run(const ToyBenchSpec& spec, int seeds, const std::optional<std::filesystem::path>& out);

}  // namespace cyborg::toybench
