#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "cyborg/annotate.hpp"
#include "cyborg/errors.hpp"
#include "cyborg/preprocess.hpp"
#include "cyborg/report.hpp"
#include "cyborg/saliency.hpp"
#include "cyborg/toybench.hpp"
#include "cyborg/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cyborg;

namespace {

constexpr const char* kVersion = "0.1.0";

/// Flags of one subcommand, merged over an optional --config JSON file.
class Command {
public:
    explicit Command(CLI::App* app) : app_(app) {
        app_->add_option("--config", config_, "JSON file with default values for any flag below");
        app_->fallthrough();
    }

    Command& opt(const std::string& name, const std::string& desc, const std::string& type = "TEXT") {
        app_->add_option("--" + name, scalars_[name], desc)->type_name(type);
        return *this;
    }
    Command& list(const std::string& name, const std::string& desc) {
        app_->add_option("--" + name, lists_[name], desc)->expected(1, -1);
        return *this;
    }
    Command& flag(const std::string& name, const std::string& desc) {
        app_->add_flag("--" + name, flags_[name], desc);
        return *this;
    }

    CLI::App* app() const { return app_; }

    json settings() const {
        json s = json::object();
        if (!config_.empty()) {
            std::ifstream in(config_);
            if (!in) throw IoError("cannot open config " + config_);
            try {
                s = json::parse(in);
            } catch (const json::parse_error& e) {
                throw ValidationError("config " + config_ + ": " + e.what());
            }
            require(s.is_object(), "config " + config_ + " must hold a JSON object");
        }
        for (const auto& [name, value] : scalars_)
            if (given(name)) s[key(name)] = typed(value);
        for (const auto& [name, values] : lists_)
            if (given(name)) s[key(name)] = values;
        for (const auto& [name, value] : flags_)
            if (given(name)) s[key(name)] = value;
        return s;
    }

private:
    bool given(const std::string& name) const { return app_->get_option("--" + name)->count() > 0; }

    static std::string key(std::string name) {
        std::replace(name.begin(), name.end(), '-', '_');
        return name;
    }

    static json typed(const std::string& v) {
        try {
            auto j = json::parse(v);
            if (j.is_number() || j.is_boolean()) return j;
        } catch (const json::parse_error&) {
        }
        return v;
    }

    CLI::App* app_;
    std::string config_;
    std::map<std::string, std::string> scalars_;
    std::map<std::string, std::vector<std::string>> lists_;
    std::map<std::string, bool> flags_;
};

std::string flag_name(std::string k) {
    std::replace(k.begin(), k.end(), '_', '-');
    return "--" + k;
}

std::string text(const json& s, const std::string& k) {
    require(s.contains(k), "missing required setting " + flag_name(k));
    const auto& v = s.at(k);
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

std::optional<std::string> optional_text(const json& s, const std::string& k) {
    if (!s.contains(k) || s.at(k).is_null()) return std::nullopt;
    return text(s, k);
}

template <typename T>
T number(const json& s, const std::string& k, T fallback) {
    if (!s.contains(k)) return fallback;
    const auto& v = s.at(k);
    require(v.is_number(), flag_name(k) + " must be a number");
    return v.get<T>();
}

bool boolean(const json& s, const std::string& k, bool fallback) {
    if (!s.contains(k)) return fallback;
    require(s.at(k).is_boolean(), flag_name(k) + " must be true or false");
    return s.at(k).get<bool>();
}

std::vector<std::string> texts(const json& s, const std::string& k) {
    require(s.contains(k), "missing required setting " + flag_name(k));
    const auto& v = s.at(k);
    if (v.is_string()) return {v.get<std::string>()};
    require(v.is_array(), flag_name(k) + " must be a list");
    return v.get<std::vector<std::string>>();
}

void make_dirs(const fs::path& p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw IoError("cannot create " + p.string() + ": " + ec.message());
}

void write_json(const fs::path& p, const json& j) {
    std::ofstream out(p);
    out << j.dump(2) << '\n';
    if (!out) throw IoError("cannot write " + p.string());
}

json summary_base(const std::string& command, const json& settings, int threads) {
    return {{"command", command}, {"version", kVersion}, {"settings", settings}, {"threads", threads}};
}

// ---------------------------------------------------------------------------

int run_annotate(const json& s, int) {
    const fs::path store = text(s, "store");
    annotate::ServiceOptions so;
    so.seed = number<std::uint64_t>(s, "seed", 0);
    so.snapshot_every = number<int>(s, "snapshot_every", so.snapshot_every);
    annotate::Service service(annotate::load_pairs(text(s, "pairs")), store, so);
    for (const auto& e : service.replay_exclusions())
        std::cerr << "warning: skipped corrupt log record " << e.where << ": " << e.reason << '\n';
    annotate::ServerOptions opts;
    opts.host = s.value("host", opts.host);
    opts.port = number<int>(s, "port", opts.port);
    if (auto ui = optional_text(s, "ui")) opts.ui_dir = *ui;
    annotate::HttpServer server(service, opts);
    const int port = server.bind();
    if (port < 0) throw IoError("cannot bind " + opts.host + ":" + std::to_string(opts.port));
    auto summary = summary_base("annotate-serve", s, 1);
    summary["port"] = port;
    summary["records_replayed"] = service.record_count();
    summary["replay_exclusions"] = service.replay_exclusions().size();
    write_json(store / "run_summary.json", summary);
    std::cout << "listening on http://" << opts.host << ":" << port << std::endl;
    server.listen();
    return 0;
}

int run_saliency_build(const json& s, int threads) {
    const fs::path out = text(s, "out");
    saliency::BuildConfig cfg;
    cfg.blur_sigma = number<double>(s, "sigma", cfg.blur_sigma);
    cfg.blur_kernel_radius = number<int>(s, "radius", cfg.blur_kernel_radius);
    cfg.include_incorrect = boolean(s, "include_incorrect", false);

    std::map<std::string, std::vector<saliency::AnnotatorMask>> by_image;
    json exclusions = json::array();
    if (s.contains("masks"))
        for (const auto& file : texts(s, "masks")) {
            std::ifstream in(file);
            if (!in) throw IoError("cannot open " + file);
            std::string line;
            int lineno = 0;
            while (std::getline(in, line)) {
                ++lineno;
                if (line.empty()) continue;
                try {
                    auto m = annotate::exported_mask_from_json(json::parse(line));
                    by_image[m.mask.image_id].push_back(std::move(m.mask));
                } catch (const std::exception& e) {
                    exclusions.push_back({{"where", file + ":" + std::to_string(lineno)}, {"reason", e.what()}});
                }
            }
        }
    if (auto dir = optional_text(s, "mask_dir")) {
        require(fs::is_directory(*dir), "mask directory " + *dir + " does not exist");
        for (const auto& img_dir : fs::directory_iterator(*dir)) {
            if (!img_dir.is_directory()) continue;
            for (const auto& f : fs::directory_iterator(img_dir.path())) {
                if (!preprocess::is_image_file(f.path())) continue;
                try {
                    by_image[img_dir.path().filename().string()].push_back(
                        {img_dir.path().filename().string(), f.path().stem().string(), load_mask(f.path()), true});
                } catch (const std::exception& e) {
                    exclusions.push_back({{"where", f.path().string()}, {"reason", e.what()}});
                }
            }
        }
    }
    require(s.contains("masks") || s.contains("mask_dir"), "give --masks and/or --mask-dir");
    make_dirs(out);
    int written = 0;
    for (const auto& [id, masks] : by_image) {
        try {
            auto map = saliency::aggregate(masks, cfg);
            saliency::export_saliency(map, out / report::safe_name(id));
            ++written;
        } catch (const ValidationError& e) {
            exclusions.push_back({{"where", id}, {"reason", e.what()}});
        }
    }
    for (const auto& e : exclusions) std::cerr << "excluded " << e["where"] << ": " << e["reason"] << '\n';
    auto summary = summary_base("saliency build", s, threads);
    summary["maps_written"] = written;
    summary["exclusions"] = exclusions;
    write_json(out / "run_summary.json", summary);
    std::cout << written << " saliency maps written to " << out.string() << '\n';
    return 0;
}

int run_preprocess_cmd(const json& s, int threads) {
    preprocess::PreprocessOptions o;
    o.images = text(s, "images");
    o.label = preprocess::label_from_string(text(s, "label"));
    if (auto b = optional_text(s, "boxes")) o.boxes = *b;
    if (auto b = optional_text(s, "saliency")) o.saliency = *b;
    o.out = text(s, "out");
    o.out_size = number<int>(s, "size", o.out_size);
    if (auto sp = optional_text(s, "split")) o.split = preprocess::split_from_string(*sp);
    o.source_tag = s.value("source_tag", "");
    const auto rep = preprocess::run_preprocess(o);
    json ex = json::array();
    for (const auto& e : rep.exclusions) ex.push_back({{"path", e.path}, {"reason", e.reason}});
    for (const auto& w : rep.warnings) std::cerr << "warning: " << w << '\n';
    for (const auto& e : rep.exclusions) std::cerr << "excluded " << e.path << ": " << e.reason << '\n';
    auto summary = summary_base("preprocess", s, threads);
    summary["images"] = rep.manifest.entries.size();
    summary["counts"] = rep.manifest.counts();
    summary["fallback_boxes"] = rep.fallback_boxes;
    summary["exclusions"] = ex;
    summary["warnings"] = rep.warnings;
    write_json(o.out / "run_summary.json", summary);
    std::cout << rep.manifest.entries.size() << " images written to " << (o.out / "manifest.jsonl").string() << '\n';
    return 0;
}

train::TrainingSet load_sets(const std::vector<std::string>& manifests, const model::BackboneConfig& b) {
    train::TrainingSet all;
    for (const auto& m : manifests) {
        auto set = train::load_set(preprocess::read_manifest(m), b);
        for (std::size_t i = 0; i < set.size(); ++i) {
            all.ids.push_back(set.ids[i]);
            all.images.push_back(std::move(set.images[i]));
            all.labels.push_back(set.labels[i]);
            all.saliency.push_back(std::move(set.saliency[i]));
        }
    }
    return all;
}

int run_train(const json& s, int threads) {
    auto cfg = train::TrainConfig::from_json(s);
    cfg.threads = threads;
    const fs::path out = text(s, "out");
    const int seeds = number<int>(s, "seeds", 1);
    const auto tr = load_sets(texts(s, "train_manifest"), cfg.backbone);
    const auto val = load_sets(texts(s, "val_manifest"), cfg.backbone);
    make_dirs(out);
    const auto runs = train::run_replicates(cfg, seeds, tr, val, out);

    std::ifstream in(out / "run_summary.json");
    json summary = json::parse(in);
    in.close();
    summary.update(summary_base("train", s, threads));
    summary["config"] = cfg.to_json();
    summary["config_hash"] = cfg.hash();
    write_json(out / "run_summary.json", summary);
    for (const auto& r : runs.runs)
        std::cout << "seed " << r.seed << ": "
                  << (r.completed ? "best val accuracy " + std::to_string(r.result->best.meta.validation_accuracy)
                                  : "aborted (" + r.error + ")")
                  << '\n';
    return runs.partial() ? 3 : 0;
}

void print_table(const eval::AucTable& t) {
    std::printf("%-20s", "");
    for (const auto& c : t.columns) std::printf(" %22s", c.c_str());
    std::printf("\n");
    for (const auto& [row, cells] : t.rows) {
        std::printf("%-20s", row.c_str());
        for (const auto& c : t.columns) {
            auto it = cells.find(c);
            if (it == cells.end())
                std::printf(" %22s", "-");
            else
                std::printf("        %.4f +- %.4f", it->second.mean, it->second.std);
        }
        std::printf("\n");
    }
}

int run_eval(const json& s, int threads) {
    const fs::path out = text(s, "out");
    std::vector<fs::path> manifests;
    for (const auto& m : texts(s, "test_manifests")) manifests.emplace_back(m);
    make_dirs(out);
    const auto rep = report::evaluate_checkpoints(text(s, "checkpoints"), manifests, out, threads);
    auto summary = summary_base("eval", s, threads);
    summary["sources"] = rep.sources;
    summary["table"] = rep.table.to_json();
    write_json(out / "run_summary.json", summary);
    print_table(rep.table);
    return 0;
}

int run_report(const json& s, int threads) {
    const fs::path out = text(s, "out");
    make_dirs(out);
    auto summary = summary_base("report", s, threads);
    if (s.contains("runsets")) {
        const auto rep = report::write_report(report::collect_scores(text(s, "runsets")), out);
        summary["table"] = rep.table.to_json();
        print_table(rep.table);
    }
    if (auto pairs = optional_text(s, "pair_data")) {
        const auto stats = report::write_pair_report(eval::load_pair_records(*pairs), out);
        summary["pair_accuracy_mean"] = stats.mean;
        summary["pair_decisions"] = stats.decisions;
        std::printf("mean pair accuracy %.4f over %zu pairs\n", stats.mean, stats.per_pair.size());
    }
    require(s.contains("runsets") || s.contains("pair_data"), "give --runsets and/or --pair-data");
    write_json(out / "run_summary.json", summary);
    return 0;
}

int run_toybench(const json& s, int threads) {
    json spec_json = s.contains("spec") ? s.at("spec") : json::object();
    for (const char* k : {"image_size", "n_train", "n_val", "n_test", "data_seed", "marker_size", "face_size"})
        if (s.contains(k)) spec_json[k] = s.at(k);
    json tr = spec_json.value("train", json::object());
    for (const char* k : {"epochs", "lr", "alpha", "seed", "batch_size"})
        if (s.contains(k)) tr[k] = s.at(k);
    tr["threads"] = threads;
    spec_json["train"] = tr;
    const auto spec = toybench::ToyBenchSpec::from_json(spec_json);
    const int seeds = number<int>(s, "seeds", 5);
    std::optional<fs::path> out;
    if (auto o = optional_text(s, "out")) {
        out = *o;
        make_dirs(*out);
    }
    const auto t0 = std::chrono::steady_clock::now();
    const auto res = toybench::run(spec, seeds, out);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    print_table(res.table);
    std::printf("AUC gap (cyborg - ce_only): %+.4f   [%.1f s]\n", res.auc_gap, secs);
    if (out) {
        std::ifstream in(*out / "run_summary.json");
        json summary = json::parse(in);
        in.close();
        summary.update(summary_base("toybench", s, threads));
        summary["seconds"] = secs;
        write_json(*out / "run_summary.json", summary);
    }
    return res.ce_only.partial || res.cyborg.partial ? 3 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Human-saliency-guided training and evaluation for synthetic face detection"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    int threads = 1;
    app.add_option("--threads", threads, "Worker threads (1 = deterministic single-threaded path)")
        ->check(CLI::PositiveNumber);

    Command serve(app.add_subcommand("annotate-serve", "Run the pair-annotation HTTP service"));
    serve.opt("pairs", "Pair manifest (JSON lines)")
        .opt("store", "Directory for the append-only record log")
        .opt("port", "TCP port (0 picks a free one; default 8080)", "INT")
        .opt("host", "Bind address (default 0.0.0.0)")
        .opt("seed", "Seed for left/right placement", "INT")
        .opt("ui", "Directory with the UI bundle, served at /")
        .opt("snapshot-every", "Log records between index snapshots (default 100)", "INT");

    auto* sal = app.add_subcommand("saliency", "Human saliency maps");
    sal->require_subcommand(1);
    Command build(sal->add_subcommand("build", "Aggregate annotator masks into saliency maps"));
    build.list("masks", "Mask export files (JSON lines from /api/export)")
        .opt("mask-dir", "Directory of <image_id>/<annotator>.png masks, all counted as correct")
        .opt("out", "Output directory for <image_id>.png and <image_id>.f32")
        .opt("sigma", "Gaussian blur sigma in pixels (default 5)", "FLOAT")
        .opt("radius", "Blur kernel radius (default ceil(3 sigma))", "INT")
        .flag("include-incorrect", "Keep masks from incorrectly answered pairs");

    Command prep(app.add_subcommand("preprocess", "Crop, align and ingest a labeled image directory"));
    prep.opt("images", "Directory of images")
        .opt("label", "real or synthetic")
        .opt("boxes", "Directory of <image_id>.json face boxes")
        .opt("saliency", "Directory of <image_id>.png or .f32 saliency maps")
        .opt("out", "Output directory")
        .opt("split", "train, val or test (default train)")
        .opt("source-tag", "Source tag recorded in the manifest")
        .opt("size", "Output edge length (default 224)", "INT");

    Command tr(app.add_subcommand("train", "Train one or more seeded replicates"));
    tr.list("train-manifest", "Training manifest(s)")
        .list("val-manifest", "Validation manifest(s)")
        .opt("out", "Output directory")
        .opt("seeds", "Number of replicates (seeds base..base+n-1, default 1)", "INT")
        .opt("seed", "Base seed", "INT")
        .opt("scenario", "ce_only, cyborg or ce_extra_data")
        .opt("alpha", "Weight of the classification term", "FLOAT")
        .opt("lr", "Initial learning rate", "FLOAT")
        .opt("epochs", "Epochs", "INT")
        .opt("batch-size", "Batch size", "INT")
        .opt("cam-class", "true_label or argmax_prediction")
        .opt("saliency-reduction", "mean_over_elements or sum_over_elements");

    Command ev(app.add_subcommand("eval", "Score checkpoints on test manifests"));
    ev.opt("checkpoints", "Directory searched for checkpoint.bin files")
        .list("test-manifests", "One manifest per test source")
        .opt("out", "Output directory");

    Command rep(app.add_subcommand("report", "Rebuild tables and plots from evaluation outputs"));
    rep.opt("runsets", "Directory holding one or more eval outputs")
        .opt("pair-data", "Pair decisions (CSV pair_id,family,correct or /api/stats JSON)")
        .opt("out", "Output directory");

    Command toy(app.add_subcommand("toybench", "Run the synthetic shift benchmark (ce_only vs cyborg)"));
    toy.opt("out", "Output directory (optional)")
        .opt("seeds", "Replicates per scenario (default 5)", "INT")
        .opt("seed", "Base training seed", "INT")
        .opt("image-size", "Image edge length (default 64)", "INT")
        .opt("n-train", "Training samples", "INT")
        .opt("n-val", "Validation samples", "INT")
        .opt("n-test", "Test samples", "INT")
        .opt("data-seed", "Data generator seed", "INT")
        .opt("epochs", "Epochs", "INT")
        .opt("lr", "Learning rate", "FLOAT")
        .opt("alpha", "Weight of the classification term", "FLOAT");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (serve.app()->parsed()) return run_annotate(serve.settings(), threads);
        if (build.app()->parsed()) return run_saliency_build(build.settings(), threads);
        if (prep.app()->parsed()) return run_preprocess_cmd(prep.settings(), threads);
        if (tr.app()->parsed()) return run_train(tr.settings(), threads);
        if (ev.app()->parsed()) return run_eval(ev.settings(), threads);
        if (rep.app()->parsed()) return run_report(rep.settings(), threads);
        if (toy.app()->parsed()) return run_toybench(toy.settings(), threads);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 2;
}
