#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace cyborg::eval {

/// Label 1 ("synthetic") is the positive class; `score` is its softmax probability.
struct Scored {
    double score = 0.0;
    int label = 0;
};

struct ScoreSet {
    std::vector<Scored> scores;
    std::string source_tag;
};

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
    double threshold = 0.0;  // classify positive when score >= threshold; +inf for the origin
};

struct RocCurve {
    std::vector<RocPoint> points;
    double auc = 0.0;
};

/// Mann-Whitney U / (n_pos * n_neg) with mid-ranks for ties. Throws
/// ValidationError unless both labels are present and every score is finite.
double auc(const ScoreSet& set);

/// Threshold sweep over the distinct scores, from (0,0) to (1,1).
RocCurve roc(const ScoreSet& set);

double trapezoid_area(const std::vector<RocPoint>& points);

/// FPR reached at a given TPR, interpolating linearly along the curve.
double fpr_at_tpr(const RocCurve& curve, double tpr);

/// Mean and sample std of FPR at each TPR on a fixed grid, across runs.
struct RocBand {
    std::vector<double> tpr;
    std::vector<double> fpr_mean;
    std::vector<double> fpr_std;
};
RocBand roc_band(const std::vector<RocCurve>& runs, int grid_points = 1001);

/// Mean and sample standard deviation (n-1 denominator; 0 for one value).
/// Values are summed in sorted order so any permutation gives identical bits.
std::pair<double, double> mean_std(std::vector<double> values);

struct AucCell {
    double mean = 0.0;
    double std = 0.0;
    std::vector<double> aucs;
};

/// source -> cross-run AUC statistics.
std::map<std::string, AucCell> aggregate_runs(const std::map<std::string, std::vector<ScoreSet>>& runs_by_source);

/// A table shaped like "rows = training configurations, columns = test
/// sources, cells = mean +- std AUC".
struct AucTable {
    std::vector<std::string> columns;
    std::vector<std::pair<std::string, std::map<std::string, AucCell>>> rows;

    nlohmann::json to_json() const;
    std::string to_csv() const;
};

// ---------------------------------------------------------------------------
// Human pair accuracy

struct PairRecord {
    std::string pair_id;
    std::string family;
    std::vector<bool> decisions;  // true = correct
};

struct PairRecordSet {
    std::vector<PairRecord> pairs;
};

struct PairAccuracyStats {
    std::vector<std::pair<std::string, double>> per_pair;  // pair_id, accuracy
    std::vector<int> histogram;                            // bins over [0,1], 1.0 lands in the top bin
    std::map<std::string, double> family_mean;
    double mean = 0.0;  // mean of per-pair accuracies
    int decisions = 0;

    nlohmann::json to_json() const;
};

PairAccuracyStats pair_accuracy_stats(const PairRecordSet& records, int bins = 10);

/// Accepts CSV rows `pair_id,family,correct` (header optional; correct in
/// {0,1,true,false}) or the JSON returned by the annotation service's stats endpoint.
PairRecordSet load_pair_records(const std::filesystem::path& path);
PairRecordSet pair_records_from_json(const nlohmann::json& stats);

// ---------------------------------------------------------------------------
// Files and plots

void write_scores_csv(const std::filesystem::path& path, const ScoreSet& set);
ScoreSet read_scores_csv(const std::filesystem::path& path, const std::string& source_tag);
void write_roc_csv(const std::filesystem::path& path, const RocCurve& curve);

struct RocSeries {
    std::string name;
    RocBand band;
};

/// Static SVG: mean ROC per series with a shaded +-1 std FPR band.
std::string roc_plot_svg(const std::string& title, const std::vector<RocSeries>& series);

/// Static SVG bar chart of a histogram over [0,1].
std::string histogram_svg(const std::string& title, const std::vector<int>& counts, double mean);

}  // namespace cyborg::eval
