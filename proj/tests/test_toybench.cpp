#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "cyborg/errors.hpp"
#include "cyborg/eval.hpp"
#include "cyborg/toybench.hpp"

using namespace cyborg;
using namespace cyborg::toybench;

namespace {

double gray(const Image& im, int r, int c) { return (im.at(r, c, 0) + im.at(r, c, 1) + im.at(r, c, 2)) / 3.0; }

/// Stripe-orientation detector restricted to the face square: vertical
/// stripes vary along columns, horizontal ones along rows.
double orientation_score(const Image& im, const Square& f) {
    double along_cols = 0, along_rows = 0;
    for (int r = f.top; r < f.top + f.size - 2; ++r)
        for (int c = f.left; c < f.left + f.size - 2; ++c) {
            along_cols += std::pow(gray(im, r, c) - gray(im, r, c + 2), 2);
            along_rows += std::pow(gray(im, r, c) - gray(im, r + 2, c), 2);
        }
    return along_cols - along_rows;
}

double marker_score(const Image& im, const Square& m) {
    double s = 0;
    for (int r = m.top; r < m.top + m.size; ++r)
        for (int c = m.left; c < m.left + m.size; ++c) s += gray(im, r, c);
    return s;
}

template <typename F>
double split_auc(const std::vector<preprocess::LabeledSample>& samples, F score) {
    eval::ScoreSet set;
    for (const auto& s : samples) set.scores.push_back({score(s.tensor), static_cast<int>(s.label)});
    return eval::auc(set);
}

}  // namespace

TEST_CASE("generated data has the advertised cues") {
    ToyBenchSpec spec;
    const auto test = generate(spec, Split::test);
    const auto train = generate(spec, Split::train);
    const auto face = face_square(spec);
    const auto marker = marker_square(spec);
    CHECK(split_auc(test, [&](const Image& im) { return orientation_score(im, face); }) >= 0.95);
    CHECK(split_auc(test, [&](const Image& im) { return marker_score(im, marker); }) <= 0.05);
    CHECK(split_auc(train, [&](const Image& im) { return marker_score(im, marker); }) >= 0.95);
}

TEST_CASE("generated splits are balanced, deterministic and carry face saliency") {
    ToyBenchSpec spec;
    spec.n_train = 10;
    const auto a = generate(spec, Split::train);
    const auto b = generate(spec, Split::train);
    REQUIRE(a.size() == 10);
    int synthetic = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].tensor.pixels == b[i].tensor.pixels);
        synthetic += a[i].label == preprocess::Label::synthetic;
        REQUIRE(a[i].saliency);
        const auto& g = a[i].saliency->grid;
        CHECK(g.rows() == spec.image_size);
        for (float v : g.values()) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        const int mid = spec.image_size / 2;
        CHECK(g(mid, mid) == 1.0f);
        CHECK(g(0, 0) == 0.0f);
        for (float v : a[i].tensor.pixels) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
    CHECK(synthetic == 5);
    CHECK(generate(spec, Split::val)[0].tensor.pixels != a[0].tensor.pixels);
}

TEST_CASE("spec validation and json round trip") {
    ToyBenchSpec spec;
    spec.marker_size = 6;
    auto back = ToyBenchSpec::from_json(spec.to_json());
    CHECK(back.to_json() == spec.to_json());
    CHECK_THROWS_AS(ToyBenchSpec::from_json({{"face_size", 500}}), ValidationError);
    CHECK_THROWS_AS(ToyBenchSpec::from_json({{"image_size", 32}, {"train", {{"backbone", {{"input_h", 64}}}}}}),
                    ValidationError);
    auto small = ToyBenchSpec::from_json({{"image_size", 32}, {"face_size", 12}});
    CHECK(small.train.backbone.input_h == 32);
}

TEST_CASE("toybench plumbing writes a comparison") {
    auto dir = std::filesystem::temp_directory_path() / "cyborg_test_toybench";
    std::filesystem::remove_all(dir);
    auto spec = ToyBenchSpec::from_json({{"image_size", 32},
                                         {"face_size", 12},
                                         {"marker_size", 6},
                                         {"n_train", 16},
                                         {"n_val", 8},
                                         {"n_test", 20},
                                         {"train", {{"epochs", 1}}}});
    auto res = run(spec, 2, dir);
    CHECK(res.ce_only.test_aucs.size() == 2);
    CHECK(res.cyborg.test_aucs.size() == 2);
    CHECK(res.auc_gap == doctest::Approx(res.cyborg.cell.mean - res.ce_only.cell.mean));
    for (const char* f : {"comparison.json", "comparison.csv", "roc.svg", "run_summary.json"})
        CHECK(std::filesystem::exists(dir / f));
    CHECK(std::filesystem::exists(dir / "cyborg" / "seed_2" / "test_scores.csv"));
    CHECK(std::filesystem::exists(dir / "ce_only" / "run_summary.json"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("without the spurious cue both scenarios find the face texture") {
    ToyBenchSpec spec;
    spec.spurious_cue = false;
    auto res = run(spec, 1, std::nullopt);
    CHECK(res.ce_only.cell.mean >= 0.9);
    CHECK(res.cyborg.cell.mean >= 0.9);
}

TEST_CASE("without any cue the test AUC stays near chance") {
    ToyBenchSpec spec;
    spec.spurious_cue = false;
    spec.salient_patch = false;
    spec.train.alpha = 0.0;
    spec.train.epochs = 4;
    auto res = run(spec, 1, std::nullopt);
    CHECK(std::abs(res.cyborg.cell.mean - 0.5) <= 0.1);
}
