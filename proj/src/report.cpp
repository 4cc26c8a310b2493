#include "cyborg/report.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "cyborg/errors.hpp"
#include "cyborg/preprocess.hpp"
#include "cyborg/train.hpp"

namespace cyborg::report {

namespace fs = std::filesystem;

std::string safe_name(const std::string& s) {
    std::string out;
    for (unsigned char c : s) out += std::isalnum(c) || c == '-' || c == '_' || c == '.' ? static_cast<char>(c) : '_';
    return out.empty() ? "_" : out;
}

namespace {

void make_dirs(const fs::path& p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw IoError("cannot create " + p.string() + ": " + ec.message());
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
    if (!out) throw IoError("cannot write " + p.string());
}

std::string source_of(const preprocess::DatasetManifest& m, const fs::path& path) {
    return m.source_tag.empty() ? path.stem().string() : m.source_tag;
}

}  // namespace

std::vector<RunRef> find_checkpoints(const fs::path& dir) {
    require(fs::is_directory(dir), "checkpoint directory " + dir.string() + " does not exist");
    std::vector<RunRef> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file() || e.path().filename() != "checkpoint.bin") continue;
        const auto run_dir = e.path().parent_path();
        const auto row_dir = run_dir.parent_path();
        auto root = fs::absolute(dir).lexically_normal();
        if (!root.has_filename()) root = root.parent_path();
        const auto root_name = root.filename().string();
        std::string row;
        if (fs::equivalent(run_dir, dir) || fs::equivalent(row_dir, dir))
            row = root_name.empty() ? "runs" : root_name;
        else
            row = fs::relative(row_dir, dir).generic_string();
        out.push_back({row, run_dir.filename().string(), e.path()});
    }
    require(!out.empty(), "no checkpoint.bin found below " + dir.string());
    std::sort(out.begin(), out.end(), [](const RunRef& a, const RunRef& b) {
        return std::tie(a.row, a.run) < std::tie(b.row, b.run);
    });
    return out;
}

ReportSummary evaluate_checkpoints(const fs::path& checkpoints, const std::vector<fs::path>& test_manifests,
                                   const fs::path& out, int threads) {
    require(!test_manifests.empty(), "at least one test manifest is required");
    const auto runs = find_checkpoints(checkpoints);
    std::vector<std::pair<std::string, preprocess::DatasetManifest>> manifests;
    std::set<std::string> seen;
    for (const auto& p : test_manifests) {
        auto m = preprocess::read_manifest(p);
        auto tag = source_of(m, p);
        require(seen.insert(tag).second, "two test manifests share the source tag '" + tag + "'");
        manifests.emplace_back(tag, std::move(m));
    }

    std::map<std::string, train::TrainingSet> cache;  // backbone json + source -> set
    GroupedScores grouped;
    for (const auto& run : runs) {
        model::CheckpointMeta meta;
        const auto net = model::load_checkpoint(run.checkpoint, &meta);
        const auto key = net.config().to_json().dump();
        for (const auto& [tag, manifest] : manifests) {
            auto it = cache.find(key + tag);
            if (it == cache.end()) it = cache.emplace(key + tag, train::load_set(manifest, net.config())).first;
            const auto& set = it->second;
            const auto scores = train::synthetic_scores(net, set, threads);
            eval::ScoreSet s;
            s.source_tag = tag;
            for (std::size_t i = 0; i < scores.size(); ++i) s.scores.push_back({scores[i], set.labels[i]});
            const auto rel = fs::path(run.row) / safe_name(run.run);
            make_dirs(out / "scores" / rel);
            make_dirs(out / "roc" / rel);
            eval::write_scores_csv(out / "scores" / rel / (safe_name(tag) + ".csv"), s);
            eval::write_roc_csv(out / "roc" / rel / (safe_name(tag) + ".csv"), eval::roc(s));
            grouped[run.row][tag].push_back(std::move(s));
        }
    }
    return write_report(grouped, out);
}

GroupedScores collect_scores(const fs::path& dir) {
    require(fs::is_directory(dir), "run-set directory " + dir.string() + " does not exist");
    GroupedScores grouped;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file() || e.path().extension() != ".csv") continue;
        // .../scores/<row...>/<run>/<source>.csv
        const auto rel = e.path().lexically_relative(dir);
        std::vector<std::string> parts;
        for (const auto& p : rel) parts.push_back(p.string());
        auto it = std::find(parts.begin(), parts.end(), "scores");
        if (it == parts.end() || parts.end() - it < 4) continue;
        std::string row;
        for (auto p = it + 1; p < parts.end() - 2; ++p) row += (row.empty() ? "" : "/") + *p;
        const auto source = e.path().stem().string();
        grouped[row][source].push_back(eval::read_scores_csv(e.path(), source));
    }
    require(!grouped.empty(), "no score files found below " + dir.string());
    return grouped;
}

ReportSummary write_report(const GroupedScores& scores, const fs::path& out) {
    make_dirs(out / "plots");
    ReportSummary summary;
    std::set<std::string> sources;
    for (const auto& [row, by_source] : scores)
        for (const auto& [src, sets] : by_source) sources.insert(src);
    summary.sources.assign(sources.begin(), sources.end());
    summary.table.columns = summary.sources;
    for (const auto& [row, by_source] : scores) {
        summary.table.rows.emplace_back(row, eval::aggregate_runs(by_source));
        for (const auto& [src, sets] : by_source) summary.runs = std::max(summary.runs, static_cast<int>(sets.size()));
    }
    nlohmann::json table = summary.table.to_json();
    write_text(out / "table.json", table.dump(2) + "\n");
    write_text(out / "table.csv", summary.table.to_csv());
    for (const auto& src : summary.sources) {
        std::vector<eval::RocSeries> series;
        for (const auto& [row, by_source] : scores) {
            const auto it = by_source.find(src);
            if (it == by_source.end()) continue;
            std::vector<eval::RocCurve> curves;
            for (const auto& s : it->second) curves.push_back(eval::roc(s));
            series.push_back({row, eval::roc_band(curves)});
        }
        write_text(out / "plots" / ("roc_" + safe_name(src) + ".svg"), eval::roc_plot_svg("ROC: " + src, series));
    }
    return summary;
}

eval::PairAccuracyStats write_pair_report(const eval::PairRecordSet& records, const fs::path& out) {
    make_dirs(out / "plots");
    const auto stats = eval::pair_accuracy_stats(records);
    write_text(out / "pair_stats.json", stats.to_json().dump(2) + "\n");
    write_text(out / "plots" / "pair_accuracy.svg",
               eval::histogram_svg("per-pair accuracy", stats.histogram, stats.mean));
    return stats;
}

}  // namespace cyborg::report
