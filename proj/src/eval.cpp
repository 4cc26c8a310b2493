#include "cyborg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "cyborg/errors.hpp"

namespace cyborg::eval {

namespace {

void check_scores(const ScoreSet& set) {
    bool pos = false;
    bool neg = false;
    for (const auto& s : set.scores) {
        require(std::isfinite(s.score), "non-finite score in " + set.source_tag);
        require(s.label == 0 || s.label == 1, "labels must be 0 or 1");
        (s.label == 1 ? pos : neg) = true;
    }
    require(pos && neg, "AUC is undefined without both labels (source '" + set.source_tag + "')");
}

}  // namespace

double auc(const ScoreSet& set) {
    check_scores(set);
    std::vector<std::size_t> order(set.scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return set.scores[a].score < set.scores[b].score; });
    double pos_rank_sum = 0.0;
    double n_pos = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && set.scores[order[j]].score == set.scores[order[i]].score) ++j;
        const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
        for (std::size_t k = i; k < j; ++k)
            if (set.scores[order[k]].label == 1) {
                pos_rank_sum += mid_rank;
                n_pos += 1.0;
            }
        i = j;
    }
    const double n_neg = static_cast<double>(order.size()) - n_pos;
    const double u = pos_rank_sum - n_pos * (n_pos + 1.0) / 2.0;
    return u / (n_pos * n_neg);
}

RocCurve roc(const ScoreSet& set) {
    check_scores(set);
    std::vector<Scored> sorted = set.scores;
    std::sort(sorted.begin(), sorted.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });
    double n_pos = 0;
    for (const auto& s : sorted) n_pos += s.label;
    const double n_neg = static_cast<double>(sorted.size()) - n_pos;
    RocCurve curve;
    curve.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    double tp = 0;
    double fp = 0;
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j].score == sorted[i].score) {
            (sorted[j].label == 1 ? tp : fp) += 1;
            ++j;
        }
        curve.points.push_back({fp / n_neg, tp / n_pos, sorted[i].score});
        i = j;
    }
    curve.auc = trapezoid_area(curve.points);
    return curve;
}

double trapezoid_area(const std::vector<RocPoint>& points) {
    double area = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i)
        area += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) / 2.0;
    return area;
}

double fpr_at_tpr(const RocCurve& curve, double tpr) {
    const auto& p = curve.points;
    require(!p.empty(), "empty ROC curve");
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i].tpr < tpr) continue;
        if (i == 0 || p[i].tpr == p[i - 1].tpr) return p[i].fpr;
        const double t = (tpr - p[i - 1].tpr) / (p[i].tpr - p[i - 1].tpr);
        return p[i - 1].fpr + t * (p[i].fpr - p[i - 1].fpr);
    }
    return p.back().fpr;
}

std::pair<double, double> mean_std(std::vector<double> values) {
    require(!values.empty(), "mean of an empty list");
    std::sort(values.begin(), values.end());
    double sum = 0.0;
    for (double v : values) sum += v;
    const double mean = sum / static_cast<double>(values.size());
    if (values.size() == 1) return {mean, 0.0};
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

RocBand roc_band(const std::vector<RocCurve>& runs, int grid_points) {
    require(!runs.empty(), "no ROC curves to band");
    require(grid_points >= 2, "TPR grid needs at least two points");
    RocBand band;
    for (int g = 0; g < grid_points; ++g) {
        const double t = static_cast<double>(g) / (grid_points - 1);
        std::vector<double> fprs;
        for (const auto& r : runs) fprs.push_back(fpr_at_tpr(r, t));
        auto [m, s] = mean_std(fprs);
        band.tpr.push_back(t);
        band.fpr_mean.push_back(m);
        band.fpr_std.push_back(s);
    }
    return band;
}

std::map<std::string, AucCell> aggregate_runs(const std::map<std::string, std::vector<ScoreSet>>& runs_by_source) {
    std::map<std::string, AucCell> out;
    for (const auto& [source, sets] : runs_by_source) {
        require(!sets.empty(), "source '" + source + "' has no runs");
        AucCell cell;
        for (const auto& s : sets) cell.aucs.push_back(auc(s));
        std::tie(cell.mean, cell.std) = mean_std(cell.aucs);
        std::sort(cell.aucs.begin(), cell.aucs.end());
        out[source] = std::move(cell);
    }
    return out;
}

nlohmann::json AucTable::to_json() const {
    nlohmann::json rows_json = nlohmann::json::array();
    for (const auto& [name, cells] : rows) {
        nlohmann::json cj = nlohmann::json::object();
        for (const auto& [src, c] : cells)
            cj[src] = {{"mean", c.mean}, {"std", c.std}, {"runs", c.aucs.size()}, {"aucs", c.aucs}};
        rows_json.push_back({{"row", name}, {"cells", cj}});
    }
    return {{"metric", "auc"}, {"columns", columns}, {"rows", rows_json}};
}

std::string AucTable::to_csv() const {
    std::ostringstream out;
    out << "row";
    for (const auto& c : columns) out << ',' << c << "_mean," << c << "_std";
    out << '\n';
    char buf[64];
    for (const auto& [name, cells] : rows) {
        out << name;
        for (const auto& c : columns) {
            auto it = cells.find(c);
            if (it == cells.end()) {
                out << ",,";
                continue;
            }
            std::snprintf(buf, sizeof buf, ",%.6f,%.6f", it->second.mean, it->second.std);
            out << buf;
        }
        out << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------

nlohmann::json PairAccuracyStats::to_json() const {
    nlohmann::json pp = nlohmann::json::array();
    for (const auto& [id, acc] : per_pair) pp.push_back({{"pair_id", id}, {"accuracy", acc}});
    return {{"mean", mean}, {"decisions", decisions}, {"family_mean", family_mean}, {"histogram", histogram},
            {"per_pair", pp}};
}

PairAccuracyStats pair_accuracy_stats(const PairRecordSet& records, int bins) {
    require(bins >= 1, "histogram needs at least one bin");
    PairAccuracyStats out;
    out.histogram.assign(bins, 0);
    std::map<std::string, std::vector<double>> by_family;
    std::vector<double> all;
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& p : records.pairs) {
        if (p.decisions.empty()) continue;
        require(seen.insert({p.family, p.pair_id}).second,
                "duplicate pair id '" + p.pair_id + "' in family '" + p.family + "'");
        const auto correct = std::count(p.decisions.begin(), p.decisions.end(), true);
        const double acc = static_cast<double>(correct) / static_cast<double>(p.decisions.size());
        out.per_pair.emplace_back(p.pair_id, acc);
        out.decisions += static_cast<int>(p.decisions.size());
        int bin = std::min(bins - 1, static_cast<int>(std::floor(acc * bins)));
        ++out.histogram[bin];
        by_family[p.family].push_back(acc);
        all.push_back(acc);
    }
    require(!all.empty(), "no pair decisions to summarize");
    out.mean = mean_std(all).first;
    for (const auto& [fam, accs] : by_family) out.family_mean[fam] = mean_std(accs).first;
    return out;
}

PairRecordSet pair_records_from_json(const nlohmann::json& stats) {
    PairRecordSet out;
    try {
        for (const auto& p : stats.at("pairs")) {
            PairRecord r;
            r.pair_id = p.at("pair_id").get<std::string>();
            r.family = p.value("family", "");
            if (p.contains("decisions")) {
                for (const auto& d : p.at("decisions")) r.decisions.push_back(d.get<bool>());
            } else {
                const int correct = p.at("correct").get<int>();
                const int total = p.at("total").get<int>();
                require(correct >= 0 && correct <= total, "inconsistent correct/total for pair " + r.pair_id);
                r.decisions.assign(total, false);
                std::fill_n(r.decisions.begin(), correct, true);
            }
            out.pairs.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad pair statistics JSON: ") + e.what());
    }
    return out;
}

PairRecordSet load_pair_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    if (path.extension() == ".json") {
        try {
            return pair_records_from_json(nlohmann::json::parse(in));
        } catch (const nlohmann::json::parse_error& e) {
            throw ValidationError(path.string() + ": " + e.what());
        }
    }
    std::map<std::pair<std::string, std::string>, std::size_t> index;
    PairRecordSet out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
        require(cols.size() >= 3, path.string() + ":" + std::to_string(lineno) + ": expected pair_id,family,correct");
        if (lineno == 1 && cols[0] == "pair_id") continue;
        bool correct;
        if (cols[2] == "1" || cols[2] == "true")
            correct = true;
        else if (cols[2] == "0" || cols[2] == "false")
            correct = false;
        else
            throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": bad decision '" + cols[2] + "'");
        auto key = std::make_pair(cols[1], cols[0]);
        auto it = index.find(key);
        if (it == index.end()) {
            it = index.emplace(key, out.pairs.size()).first;
            out.pairs.push_back({cols[0], cols[1], {}});
        }
        out.pairs[it->second].decisions.push_back(correct);
    }
    return out;
}

// ---------------------------------------------------------------------------

void write_scores_csv(const std::filesystem::path& path, const ScoreSet& set) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "score,label\n";
    char buf[64];
    for (const auto& s : set.scores) {
        std::snprintf(buf, sizeof buf, "%.17g,%d\n", s.score, s.label);
        out << buf;
    }
}

ScoreSet read_scores_csv(const std::filesystem::path& path, const std::string& source_tag) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    ScoreSet set;
    set.source_tag = source_tag;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        require(comma != std::string::npos, "bad score row in " + path.string());
        set.scores.push_back({std::stod(line.substr(0, comma)), std::stoi(line.substr(comma + 1))});
    }
    return set;
}

void write_roc_csv(const std::filesystem::path& path, const RocCurve& curve) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "fpr,tpr,threshold\n";
    char buf[96];
    for (const auto& p : curve.points) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", p.fpr, p.tpr, p.threshold);
        out << buf;
    }
}

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string escape_xml(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

std::string roc_plot_svg(const std::string& title, const std::vector<RocSeries>& series) {
    const double W = 420, H = 420, M = 50, P = W - 2 * M;
    auto px = [&](double fpr) { return M + fpr * P; };
    auto py = [&](double tpr) { return H - M - tpr * P; };
    std::ostringstream s;
    char buf[128];
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << W / 2 << "\" y=\"25\" text-anchor=\"middle\" font-size=\"14\">" << escape_xml(title)
      << "</text>\n";
    s << "<rect x=\"" << M << "\" y=\"" << M << "\" width=\"" << P << "\" height=\"" << P
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(1) << "\" y2=\"" << py(1)
      << "\" stroke=\"#999\" stroke-dasharray=\"4\"/>\n";
    s << "<text x=\"" << W / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"12\">FPR</text>\n";
    s << "<text x=\"14\" y=\"" << H / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 "
      << H / 2 << ")\">TPR</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& b = series[k].band;
        const char* color = kPalette[k % std::size(kPalette)];
        std::string band = "<polygon fill=\"" + std::string(color) + "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
        for (std::size_t i = 0; i < b.tpr.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(std::clamp(b.fpr_mean[i] - b.fpr_std[i], 0.0, 1.0)),
                          py(b.tpr[i]));
            band += buf;
        }
        for (std::size_t i = b.tpr.size(); i-- > 0;) {
            std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(std::clamp(b.fpr_mean[i] + b.fpr_std[i], 0.0, 1.0)),
                          py(b.tpr[i]));
            band += buf;
        }
        s << band << "\"/>\n";
        s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < b.tpr.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(b.fpr_mean[i]), py(b.tpr[i]));
            s << buf;
        }
        s << "\"/>\n";
        s << "<text x=\"" << px(0.55) << "\" y=\"" << py(0.1) + 16.0 * k << "\" font-size=\"12\" fill=\"" << color
          << "\">" << escape_xml(series[k].name) << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

std::string histogram_svg(const std::string& title, const std::vector<int>& counts, double mean) {
    const double W = 420, H = 300, M = 40;
    const double P = W - 2 * M;
    const int peak = counts.empty() ? 1 : std::max(1, *std::max_element(counts.begin(), counts.end()));
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape_xml(title)
      << "</text>\n";
    const double bw = counts.empty() ? 0 : P / static_cast<double>(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i) {
        const double h = (H - 2 * M) * counts[i] / peak;
        s << "<rect x=\"" << M + i * bw << "\" y=\"" << H - M - h << "\" width=\"" << bw - 1 << "\" height=\"" << h
          << "\" fill=\"#1f77b4\"/>\n";
    }
    s << "<line x1=\"" << M + mean * P << "\" y1=\"" << M << "\" x2=\"" << M + mean * P << "\" y2=\"" << H - M
      << "\" stroke=\"#d62728\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << W / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\" font-size=\"12\">pair accuracy"
      << "</text>\n</svg>\n";
    return s.str();
}

}  // namespace cyborg::eval
