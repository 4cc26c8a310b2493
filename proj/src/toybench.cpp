#include "cyborg/toybench.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "cyborg/binary_io.hpp"
#include "cyborg/errors.hpp"
#include "cyborg/saliency.hpp"

namespace cyborg::toybench {

namespace fs = std::filesystem;

ToyBenchSpec::ToyBenchSpec() {
    train.backbone.input_h = image_size;
    train.backbone.input_w = image_size;
    train.backbone.blocks = {{8, 3, true}, {16, 3, true}, {16, 3, true}};
    train.lr = 0.1;
    train.epochs = 36;
    train.batch_size = 32;
    train.lr_decay_every = 12;
    train.seed = 1;
}

void ToyBenchSpec::validate() const {
    require(image_size >= 8, "image_size must be at least 8");
    require(face_size >= 1 && face_size <= image_size, "face_size must fit inside the image");
    require(marker_size >= 1 && marker_size <= image_size, "marker_size must fit inside the image");
    require(noise_std >= 0 && texture_amplitude >= 0, "noise_std and texture_amplitude must be nonnegative");
    require(stripe_period >= 2, "stripe_period must be at least 2");
    require(n_train >= 2 && n_val >= 2 && n_test >= 2, "each split needs at least two samples");
    require(blur_sigma >= 0, "blur_sigma must be nonnegative");
    require(train.backbone.input_h == image_size && train.backbone.input_w == image_size,
            "backbone input size must equal image_size");
    train.validate();
}

nlohmann::json ToyBenchSpec::to_json() const {
    return {{"image_size", image_size},
            {"face_size", face_size},
            {"noise_std", noise_std},
            {"texture_amplitude", texture_amplitude},
            {"stripe_period", stripe_period},
            {"marker_size", marker_size},
            {"marker_value", marker_value},
            {"salient_patch", salient_patch},
            {"spurious_cue", spurious_cue},
            {"n_train", n_train},
            {"n_val", n_val},
            {"n_test", n_test},
            {"data_seed", data_seed},
            {"blur_sigma", blur_sigma},
            {"train", train.to_json()}};
}

ToyBenchSpec ToyBenchSpec::from_json(const nlohmann::json& j) {
    ToyBenchSpec s;
    try {
        s.image_size = j.value("image_size", s.image_size);
        s.face_size = j.value("face_size", s.face_size);
        s.noise_std = j.value("noise_std", s.noise_std);
        s.texture_amplitude = j.value("texture_amplitude", s.texture_amplitude);
        s.stripe_period = j.value("stripe_period", s.stripe_period);
        s.marker_size = j.value("marker_size", s.marker_size);
        s.marker_value = j.value("marker_value", s.marker_value);
        s.salient_patch = j.value("salient_patch", s.salient_patch);
        s.spurious_cue = j.value("spurious_cue", s.spurious_cue);
        s.n_train = j.value("n_train", s.n_train);
        s.n_val = j.value("n_val", s.n_val);
        s.n_test = j.value("n_test", s.n_test);
        s.data_seed = j.value("data_seed", s.data_seed);
        s.blur_sigma = j.value("blur_sigma", s.blur_sigma);
        s.train.backbone.input_h = s.image_size;
        s.train.backbone.input_w = s.image_size;
        if (j.contains("train")) {
            auto t = s.train.to_json();
            t.merge_patch(j.at("train"));
            s.train = train::TrainConfig::from_json(t);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad toybench spec: ") + e.what());
    }
    s.validate();
    return s;
}

Square face_square(const ToyBenchSpec& spec) {
    const int off = (spec.image_size - spec.face_size) / 2;
    return {off, off, spec.face_size};
}

Square marker_square(const ToyBenchSpec& spec) { return {0, 0, spec.marker_size}; }

namespace {

bool inside(const Square& s, int r, int c) {
    return r >= s.top && r < s.top + s.size && c >= s.left && c < s.left + s.size;
}

saliency::HumanSaliencyMap face_saliency(const ToyBenchSpec& spec) {
    const auto face = face_square(spec);
    MaskGrid m(spec.image_size, spec.image_size, 0);
    for (int r = 0; r < spec.image_size; ++r)
        for (int c = 0; c < spec.image_size; ++c) m(r, c) = inside(face, r, c);
    saliency::BuildConfig cfg;
    cfg.blur_sigma = spec.blur_sigma;
    std::vector<saliency::AnnotatorMask> masks = {{"face", "generator", std::move(m), true}};
    return saliency::aggregate(masks, cfg);
}

}  // namespace

std::vector<preprocess::LabeledSample> generate(const ToyBenchSpec& spec, Split split) {
    const int n = split == Split::train ? spec.n_train : split == Split::val ? spec.n_val : spec.n_test;
    const char* tag = split == Split::train ? "train" : split == Split::val ? "val" : "test";
    const auto face = face_square(spec);
    const auto marker = marker_square(spec);
    const auto sal = face_saliency(spec);
    const int S = spec.image_size;
    std::vector<preprocess::LabeledSample> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        std::mt19937_64 rng(mix_seed(mix_seed(spec.data_seed, static_cast<std::uint64_t>(split)), i));
        std::normal_distribution<double> noise(0.0, spec.noise_std);
        std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
        const int label = i % 2;
        const double phase = phase_dist(rng);
        const bool marked = spec.spurious_cue && (split == Split::test ? label == 0 : label == 1);

        preprocess::LabeledSample s;
        s.image_id = std::string(tag) + "_" + std::to_string(i);
        s.label = static_cast<preprocess::Label>(label);
        s.tensor = Image(S, S, 3);
        for (int r = 0; r < S; ++r)
            for (int c = 0; c < S; ++c) {
                double base = 0.5;
                if (spec.salient_patch && inside(face, r, c)) {
                    const int coord = label == 1 ? c : r;
                    base += spec.texture_amplitude *
                            std::sin(2.0 * std::numbers::pi * coord / spec.stripe_period + phase);
                }
                if (marked && inside(marker, r, c)) base = spec.marker_value;
                for (int ch = 0; ch < 3; ++ch) {
                    const double v = std::clamp(base + noise(rng), 0.0, 1.0);
                    s.tensor.at(r, c, ch) = static_cast<float>(v);
                }
            }
        s.saliency = sal;
        s.saliency->image_id = s.image_id;
        out.push_back(std::move(s));
    }
    return out;
}

namespace {

eval::ScoreSet score_set(const model::Network<float>& net, const train::TrainingSet& test, int threads,
                         const std::string& tag) {
    eval::ScoreSet s;
    s.source_tag = tag;
    const auto scores = train::synthetic_scores(net, test, threads);
    for (std::size_t i = 0; i < scores.size(); ++i) s.scores.push_back({scores[i], test.labels[i]});
    return s;
}

ScenarioResult run_scenario(const ToyBenchSpec& spec, train::Scenario scenario, int seeds,
                            const train::TrainingSet& tr, const train::TrainingSet& val,
                            const train::TrainingSet& test, const std::optional<fs::path>& out) {
    auto cfg = spec.train;
    cfg.scenario = scenario;
    const auto name = train::to_string(scenario);
    std::optional<fs::path> dir;
    if (out) dir = *out / name;
    auto runs = train::run_replicates(cfg, seeds, tr, val, dir);

    ScenarioResult res;
    res.scenario = scenario;
    res.partial = runs.partial();
    std::vector<eval::ScoreSet> sets;
    for (const auto& r : runs.runs) {
        if (!r.completed) continue;
        auto s = score_set(r.result->best.net, test, cfg.threads, "toy_test");
        auto curve = eval::roc(s);
        res.test_aucs.push_back(eval::auc(s));
        if (dir) {
            const auto seed_dir = *dir / ("seed_" + std::to_string(r.seed));
            eval::write_scores_csv(seed_dir / "test_scores.csv", s);
            eval::write_roc_csv(seed_dir / "test_roc.csv", curve);
        }
        res.curves.push_back(std::move(curve));
        sets.push_back(std::move(s));
    }
    if (sets.empty()) throw NumericalError("every " + name + " run aborted");
    res.cell = eval::aggregate_runs({{"toy_test", sets}}).at("toy_test");
    return res;
}

}  // namespace

ToyBenchResult run(const ToyBenchSpec& spec, int seeds, const std::optional<fs::path>& out) {
    spec.validate();
    require(seeds >= 1, "toybench needs at least one seed");
    const auto& b = spec.train.backbone;
    const auto tr = train::make_set(generate(spec, Split::train), b);
    const auto val = train::make_set(generate(spec, Split::val), b);
    const auto test = train::make_set(generate(spec, Split::test), b);

    ToyBenchResult res;
    res.ce_only = run_scenario(spec, train::Scenario::ce_only, seeds, tr, val, test, out);
    res.cyborg = run_scenario(spec, train::Scenario::cyborg, seeds, tr, val, test, out);
    res.auc_gap = res.cyborg.cell.mean - res.ce_only.cell.mean;
    res.table.columns = {"toy_test"};
    res.table.rows = {{"ce_only", {{"toy_test", res.ce_only.cell}}}, {"cyborg", {{"toy_test", res.cyborg.cell}}}};

    if (out) {
        std::ofstream(*out / "comparison.json")
            << nlohmann::json{{"table", res.table.to_json()}, {"auc_gap", res.auc_gap}}.dump(2) << '\n';
        std::ofstream(*out / "comparison.csv") << res.table.to_csv();
        std::ofstream(*out / "roc.svg") << eval::roc_plot_svg(
            "toy test ROC", {{"ce_only", eval::roc_band(res.ce_only.curves)}, {"cyborg", eval::roc_band(res.cyborg.curves)}});
        std::ofstream(*out / "run_summary.json")
            << nlohmann::json{{"command", "toybench"},
                              {"spec", spec.to_json()},
                              {"seeds", seeds},
                              {"partial", res.ce_only.partial || res.cyborg.partial},
                              {"ce_only_aucs", res.ce_only.test_aucs},
                              {"cyborg_aucs", res.cyborg.test_aucs},
                              {"auc_gap", res.auc_gap}}
                   .dump(2)
            << '\n';
    }
    return res;
}

}  // namespace cyborg::toybench
