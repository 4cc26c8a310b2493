#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "cyborg/errors.hpp"
#include "cyborg/eval.hpp"
#include "oracles.hpp"

using namespace cyborg;
using namespace cyborg::eval;
using testing::brute_force_auc;

namespace {

ScoreSet make(std::vector<double> pos, std::vector<double> neg) {
    ScoreSet s;
    for (double p : pos) s.scores.push_back({p, 1});
    for (double n : neg) s.scores.push_back({n, 0});
    return s;
}

ScoreSet random_set(std::mt19937_64& rng, bool coarse) {
    std::uniform_int_distribution<int> size(2, 1000);
    std::uniform_int_distribution<int> level(0, 9);
    std::normal_distribution<double> noise(0.0, 1.0);
    const int n = size(rng);
    ScoreSet s;
    for (int i = 0; i < n; ++i) {
        const int label = i == 0 ? 0 : i == 1 ? 1 : static_cast<int>(rng() & 1);
        const double v = coarse ? level(rng) / 10.0 : noise(rng) + 0.7 * label;
        s.scores.push_back({v, label});
    }
    std::shuffle(s.scores.begin(), s.scores.end(), rng);
    return s;
}

}  // namespace

TEST_CASE("auc examples") {
    CHECK(auc(make({0.9, 0.8}, {0.2, 0.1})) == 1.0);
    CHECK(auc(make({0.2, 0.1}, {0.9, 0.8})) == 0.0);
    CHECK(auc(make({0.5, 0.5}, {0.5, 0.5})) == 0.5);
    CHECK(auc(make({0.9, 0.4}, {0.5, 0.1})) == 0.75);
}

TEST_CASE("auc rejects degenerate input") {
    CHECK_THROWS_AS(auc(make({0.1, 0.2}, {})), ValidationError);
    CHECK_THROWS_AS(auc(make({}, {0.3})), ValidationError);
    CHECK_THROWS_AS(auc(make({NAN}, {0.3})), ValidationError);
}

TEST_CASE("roc of identical scores is the diagonal") {
    auto curve = roc(make({0.4, 0.4}, {0.4}));
    REQUIRE(curve.points.size() == 2);
    CHECK(curve.points[1].fpr == 1.0);
    CHECK(curve.points[1].tpr == 1.0);
    CHECK(curve.auc == 0.5);
}

TEST_CASE("roc of one positive and one negative") {
    auto curve = roc(make({0.8}, {0.3}));
    REQUIRE(curve.points.size() == 3);
    CHECK(curve.points[0].fpr == 0.0);
    CHECK(curve.points[0].tpr == 0.0);
    CHECK(curve.points[1].fpr == 0.0);
    CHECK(curve.points[1].tpr == 1.0);
    CHECK(curve.points[2].fpr == 1.0);
    CHECK(curve.points[2].tpr == 1.0);
    CHECK(curve.auc == 1.0);
}

TEST_CASE("auc matches brute force and trapezoid on random sets") {
    std::mt19937_64 rng(11);
    for (int t = 0; t < 60; ++t) {
        auto s = random_set(rng, t % 2 == 0);
        const double a = auc(s);
        CHECK(std::abs(a - brute_force_auc(s)) <= 1e-9);
        CHECK(std::abs(a - roc(s).auc) <= 1e-9);
    }
}

TEST_CASE("auc properties") {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 30; ++t) {
        auto s = random_set(rng, t % 3 == 0);
        const double a = auc(s);
        CHECK(a >= 0.0);
        CHECK(a <= 1.0);

        auto flipped = s;
        for (auto& x : flipped.scores) x.label = 1 - x.label;
        CHECK(std::abs(auc(flipped) - (1.0 - a)) <= 1e-12);

        auto warped = s;
        for (auto& x : warped.scores) x.score = std::exp(3.0 * x.score) + 2.0;
        CHECK(auc(warped) == a);

        auto shuffled = s;
        std::shuffle(shuffled.scores.begin(), shuffled.scores.end(), rng);
        CHECK(auc(shuffled) == a);
    }
}

TEST_CASE("roc curve is monotone and ends at the corners") {
    std::mt19937_64 rng(8);
    for (int t = 0; t < 20; ++t) {
        auto c = roc(random_set(rng, t % 2 == 0));
        CHECK(c.points.front().fpr == 0.0);
        CHECK(c.points.front().tpr == 0.0);
        CHECK(c.points.back().fpr == 1.0);
        CHECK(c.points.back().tpr == 1.0);
        for (std::size_t i = 1; i < c.points.size(); ++i) {
            CHECK(c.points[i].fpr >= c.points[i - 1].fpr);
            CHECK(c.points[i].tpr >= c.points[i - 1].tpr);
        }
    }
}

TEST_CASE("mean and sample std") {
    auto [m, s] = mean_std({0.6, 0.8});
    CHECK(m == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(s == doctest::Approx(std::sqrt(0.02)).epsilon(1e-12));
    CHECK(mean_std({0.3}).second == 0.0);
    CHECK(mean_std({0.1, 0.7, 0.3}) == mean_std({0.7, 0.3, 0.1}));
}

TEST_CASE("aggregate runs") {
    std::map<std::string, std::vector<ScoreSet>> runs;
    runs["a"] = {make({0.9}, {0.1}), make({0.1, 0.9}, {0.5, 0.5})};
    auto cells = aggregate_runs(runs);
    CHECK(cells["a"].mean == 0.75);
    CHECK(cells["a"].std == doctest::Approx(std::sqrt(0.125)));
    CHECK(cells["a"].aucs.size() == 2);
}

TEST_CASE("roc band") {
    auto a = roc(make({0.9}, {0.1}));
    auto b = roc(make({0.1}, {0.9}));
    auto band = roc_band({a, b}, 11);
    REQUIRE(band.tpr.size() == 11);
    CHECK(band.tpr.front() == 0.0);
    CHECK(band.tpr.back() == 1.0);
    // a reaches any positive TPR at FPR 0, b needs FPR 1
    CHECK(band.fpr_mean[5] == doctest::Approx(0.5));
    CHECK(band.fpr_std[5] == doctest::Approx(std::sqrt(0.5)));
    for (std::size_t i = 0; i < band.tpr.size(); ++i) {
        CHECK(band.fpr_mean[i] >= 0.0);
        CHECK(band.fpr_mean[i] <= 1.0);
    }
}

TEST_CASE("auc table shapes") {
    AucTable t;
    t.columns = {"x", "y"};
    AucCell c;
    c.mean = 0.5;
    c.std = 0.25;
    c.aucs = {0.25, 0.75};
    t.rows.push_back({"ce_only", {{"x", c}}});
    auto j = t.to_json();
    CHECK(j["rows"][0]["row"] == "ce_only");
    CHECK(j["rows"][0]["cells"]["x"]["mean"] == 0.5);
    CHECK(t.to_csv() == "row,x_mean,x_std,y_mean,y_std\nce_only,0.500000,0.250000,,\n");
}

TEST_CASE("pair accuracy examples") {
    PairRecordSet r;
    r.pairs = {{"p1", "f", {true, false}}, {"p2", "f", {false, true}}};
    auto s = pair_accuracy_stats(r);
    CHECK(s.mean == 0.5);
    CHECK(s.decisions == 4);
    CHECK(s.histogram[5] == 2);

    PairRecordSet all;
    all.pairs = {{"p1", "f", {true, true}}, {"p2", "g", {true}}};
    auto t = pair_accuracy_stats(all);
    CHECK(t.mean == 1.0);
    CHECK(t.histogram.back() == 2);
    CHECK(t.family_mean.at("g") == 1.0);
}

TEST_CASE("pair accuracy matches a counting oracle") {
    std::mt19937_64 rng(17);
    for (int t = 0; t < 50; ++t) {
        PairRecordSet r;
        std::vector<std::pair<int, int>> counts;
        const int pairs = 1 + static_cast<int>(rng() % 40);
        for (int p = 0; p < pairs; ++p) {
            const int total = 1 + static_cast<int>(rng() % 7);
            int correct = 0;
            PairRecord rec{"p" + std::to_string(p), p % 2 ? "odd" : "even", {}};
            for (int d = 0; d < total; ++d) {
                const bool ok = rng() % 3 != 0;
                correct += ok;
                rec.decisions.push_back(ok);
            }
            counts.push_back({correct, total});
            r.pairs.push_back(std::move(rec));
        }
        double sum = 0;
        int hist_total = 0;
        for (auto [c, n] : counts) sum += static_cast<double>(c) / n;
        auto s = pair_accuracy_stats(r);
        for (int h : s.histogram) hist_total += h;
        CHECK(std::abs(s.mean - sum / pairs) <= 1e-12);
        CHECK(hist_total == pairs);
    }
}

TEST_CASE("pair records from CSV and JSON") {
    auto dir = std::filesystem::temp_directory_path() / "cyborg_test_eval";
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "d.csv");
        out << "pair_id,family,correct\np1,f,1\np1,f,0\np2,g,true\n";
    }
    auto r = load_pair_records(dir / "d.csv");
    REQUIRE(r.pairs.size() == 2);
    CHECK(r.pairs[0].decisions == std::vector<bool>{true, false});
    CHECK(pair_accuracy_stats(r).mean == 0.75);

    nlohmann::json j = {{"pairs", {{{"pair_id", "a"}, {"family", "f"}, {"correct", 1}, {"total", 4}}}}};
    CHECK(pair_accuracy_stats(pair_records_from_json(j)).mean == 0.25);
    std::filesystem::remove_all(dir);
}

TEST_CASE("score csv round trip") {
    auto dir = std::filesystem::temp_directory_path() / "cyborg_test_eval_scores";
    std::filesystem::create_directories(dir);
    auto s = make({0.1234567890123, 1.0 / 3.0}, {2e-17});
    write_scores_csv(dir / "s.csv", s);
    auto back = read_scores_csv(dir / "s.csv", "t");
    REQUIRE(back.scores.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back.scores[i].score == s.scores[i].score);
        CHECK(back.scores[i].label == s.scores[i].label);
    }
    std::filesystem::remove_all(dir);
}
