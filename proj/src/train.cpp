#include "cyborg/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "cyborg/binary_io.hpp"
#include "cyborg/objective.hpp"
#include "cyborg/parallel.hpp"

namespace cyborg::train {

namespace fs = std::filesystem;

Scenario scenario_from_string(const std::string& s) {
    if (s == "ce_only") return Scenario::ce_only;
    if (s == "cyborg") return Scenario::cyborg;
    if (s == "ce_extra_data") return Scenario::ce_extra_data;
    throw ValidationError("unknown scenario '" + s + "' (ce_only, cyborg, ce_extra_data)");
}

std::string to_string(Scenario s) {
    switch (s) {
        case Scenario::ce_only: return "ce_only";
        case Scenario::cyborg: return "cyborg";
        case Scenario::ce_extra_data: return "ce_extra_data";
    }
    return "cyborg";
}

void TrainConfig::validate() const {
    require(std::isfinite(lr) && lr > 0, "lr must be positive");
    require(epochs >= 0, "epochs must be nonnegative");
    require(lr_decay_factor > 0 && lr_decay_factor <= 1, "lr_decay_factor must lie in (0,1]");
    require(lr_decay_every >= 1, "lr_decay_every must be at least 1");
    require(batch_size >= 1, "batch_size must be at least 1");
    require(threads >= 1, "threads must be at least 1");
    loss_config().validate();
    require(alpha >= 0 && alpha <= 1, "alpha must lie in [0,1]");
    backbone.validate();
}

double TrainConfig::lr_at(int epoch) const {
    double rate = lr;
    for (int k = 0; k < epoch / lr_decay_every; ++k) rate *= lr_decay_factor;
    return rate;
}

loss::LossConfig TrainConfig::loss_config() const {
    loss::LossConfig c;
    c.alpha = scenario == Scenario::cyborg ? alpha : 1.0;
    c.reduction = reduction;
    c.missing = loss::MissingSaliency::skip_term;
    return c;
}

nlohmann::json TrainConfig::to_json() const {
    return {{"optimizer", "sgd"},
            {"lr", lr},
            {"epochs", epochs},
            {"lr_decay_factor", lr_decay_factor},
            {"lr_decay_every", lr_decay_every},
            {"batch_size", batch_size},
            {"alpha", alpha},
            {"seed", seed},
            {"scenario", to_string(scenario)},
            {"cam_class", model::to_string(cam_class)},
            {"saliency_reduction", loss::to_string(reduction)},
            {"backbone", backbone.to_json()}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    try {
        if (j.contains("optimizer"))
            require(j.at("optimizer").get<std::string>() == "sgd", "only the sgd optimizer is supported");
        c.lr = j.value("lr", c.lr);
        c.epochs = j.value("epochs", c.epochs);
        c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
        c.lr_decay_every = j.value("lr_decay_every", c.lr_decay_every);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.alpha = j.value("alpha", c.alpha);
        c.seed = j.value("seed", c.seed);
        c.threads = j.value("threads", c.threads);
        if (j.contains("scenario")) c.scenario = scenario_from_string(j.at("scenario"));
        if (j.contains("cam_class")) c.cam_class = model::cam_class_from_string(j.at("cam_class"));
        if (j.contains("saliency_reduction")) c.reduction = loss::reduction_from_string(j.at("saliency_reduction"));
        if (j.contains("backbone")) c.backbone = model::BackboneConfig::from_json(j.at("backbone"));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad training config: ") + e.what());
    }
    c.validate();
    return c;
}

std::string TrainConfig::hash() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json().dump())));
    return buf;
}

// ---------------------------------------------------------------------------

std::size_t TrainingSet::with_saliency() const {
    std::size_t n = 0;
    for (const auto& s : saliency) n += s.has_value();
    return n;
}

std::vector<loss::Example> TrainingSet::examples(std::span<const std::size_t> order) const {
    std::vector<loss::Example> out;
    out.reserve(order.size());
    for (std::size_t i : order) out.push_back({images[i], labels[i], saliency[i] ? &*saliency[i] : nullptr});
    return out;
}

void TrainingSet::add(const preprocess::LabeledSample& s, const model::BackboneConfig& cfg) {
    require(cfg.input_c == 3, "training sets feed 3-channel images");
    const Image& img = s.tensor.height == cfg.input_h && s.tensor.width == cfg.input_w
                           ? s.tensor
                           : preprocess::resize_bilinear(s.tensor, cfg.input_h, cfg.input_w);
    ids.push_back(s.image_id);
    images.push_back(img.pixels);
    labels.push_back(static_cast<int>(s.label));
    if (s.saliency)
        saliency.push_back(preprocess::resample_area(s.saliency->grid, cfg.feature_h(), cfg.feature_w()));
    else
        saliency.push_back(std::nullopt);
}

TrainingSet make_set(const std::vector<preprocess::LabeledSample>& samples, const model::BackboneConfig& cfg) {
    TrainingSet set;
    for (const auto& s : samples) set.add(s, cfg);
    return set;
}

TrainingSet load_set(const preprocess::DatasetManifest& manifest, const model::BackboneConfig& cfg) {
    TrainingSet set;
    for (const auto& e : manifest.entries) {
        preprocess::LabeledSample s;
        s.image_id = e.image_id;
        s.label = e.label;
        s.tensor = load_image(e.path);
        if (e.saliency_path) {
            s.saliency = preprocess::load_saliency_file(*e.saliency_path, e.image_id);
            require(s.saliency->grid.rows() == s.tensor.height && s.saliency->grid.cols() == s.tensor.width,
                    "saliency for " + e.image_id + " is not registered with its image");
        }
        set.add(s, cfg);
    }
    return set;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::uint64_t state = seed;
    for (std::size_t i = n; i > 1; --i) {
        state = mix_seed(state, i);
        // Multiply-shift maps the 64-bit draw onto [0, i) without modulo bias worth caring about here.
        const auto j = static_cast<std::size_t>((static_cast<unsigned __int128>(state) * i) >> 64);
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

namespace {

std::vector<std::vector<float>> all_logits(const model::Network<float>& net, const TrainingSet& set, int threads) {
    std::vector<std::vector<float>> out(set.size());
    parallel_for(set.size(), threads, [&](std::size_t i) { out[i] = net.forward(set.images[i]).logits; });
    return out;
}

}  // namespace

double accuracy(const model::Network<float>& net, const TrainingSet& set, int threads) {
    require(set.size() > 0, "accuracy of an empty set is undefined");
    const auto logits = all_logits(net, set, threads);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < set.size(); ++i)
        hits += model::argmax(std::span<const float>(logits[i])) == set.labels[i];
    return static_cast<double>(hits) / static_cast<double>(set.size());
}

std::vector<double> synthetic_scores(const model::Network<float>& net, const TrainingSet& set, int threads) {
    const auto logits = all_logits(net, set, threads);
    std::vector<double> scores(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
        std::vector<double> z(logits[i].begin(), logits[i].end());
        scores[i] = std::exp(-loss::neg_log_prob(z, 1));
    }
    return scores;
}

TrainResult train_one(const TrainConfig& cfg, const TrainingSet& train, const TrainingSet& val) {
    cfg.validate();
    require(train.size() > 0, "training set is empty");
    require(val.size() > 0, "validation set is empty");
    if (cfg.scenario == Scenario::cyborg)
        require(train.with_saliency() > 0, "cyborg scenario needs human saliency on at least one training sample");

    model::Network<float> net(cfg.backbone);
    net.initialize(cfg.seed);
    const auto lcfg = cfg.loss_config();
    const bool use_saliency = cfg.scenario == Scenario::cyborg;

    TrainResult result{{net, {0, accuracy(net, val, cfg.threads), cfg.hash(), {{"seed", cfg.seed}}}}, {}, {}, false, {}, {}};
    if (cfg.epochs == 0) {
        result.epoch_val_accuracy.push_back(result.best.meta.validation_accuracy);
        return result;
    }

    std::vector<float> last_good(net.values().begin(), net.values().end());
    bool have_best = false;
    std::int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.lr_at(epoch);
        const auto order = shuffled_indices(train.size(), mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
        double epoch_total = 0.0;
        std::size_t epoch_hits = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            auto batch = train.examples(std::span<const std::size_t>(order).subspan(start, stop - start));
            if (!use_saliency)
                for (auto& ex : batch) ex.saliency = nullptr;
            auto br = loss::evaluate_batch(net, std::span<const loss::Example>(batch), lcfg, cfg.cam_class, true,
                                           cfg.threads);
            bool finite = std::isfinite(br.loss.total);
            for (float g : br.grad) finite = finite && std::isfinite(g);
            if (!finite) {
                result.aborted = true;
                result.error = "non-finite loss or gradient at epoch " + std::to_string(epoch) + ", step " +
                               std::to_string(step);
                nlohmann::json bad = nlohmann::json::array();
                for (const auto& p : net.params())
                    for (std::size_t j = 0; j < p.count; ++j)
                        if (!std::isfinite(br.grad[p.offset + j])) {
                            bad.push_back(p.name);
                            break;
                        }
                result.diagnostics = {{"epoch", epoch},
                                      {"step", step},
                                      {"lr", lr},
                                      {"human_term", br.loss.human_term},
                                      {"ce_term", br.loss.ce_term},
                                      {"nonfinite_gradients", bad},
                                      {"batch_ids", nlohmann::json::array()}};
                for (std::size_t k = start; k < stop; ++k) result.diagnostics["batch_ids"].push_back(train.ids[order[k]]);
                if (!have_best) std::copy(last_good.begin(), last_good.end(), result.best.net.values().begin());
                return result;
            }
            auto values = net.values();
            const float rate = static_cast<float>(lr);
            for (std::size_t j = 0; j < values.size(); ++j) values[j] -= rate * br.grad[j];
            std::copy(values.begin(), values.end(), last_good.begin());

            result.metrics.push_back({{"kind", "step"},
                                      {"step", step},
                                      {"epoch", epoch},
                                      {"lr", lr},
                                      {"total", br.loss.total},
                                      {"human_term", br.loss.human_term},
                                      {"ce_term", br.loss.ce_term}});
            ++step;
            epoch_total += br.loss.total * static_cast<double>(stop - start);
            for (std::size_t k = 0; k < br.predictions.size(); ++k)
                epoch_hits += br.predictions[k] == batch[k].label;
        }
        const double val_acc = accuracy(net, val, cfg.threads);
        result.epoch_val_accuracy.push_back(val_acc);
        result.metrics.push_back({{"kind", "epoch"},
                                  {"epoch", epoch},
                                  {"lr", lr},
                                  {"train_loss", epoch_total / static_cast<double>(train.size())},
                                  {"train_accuracy", static_cast<double>(epoch_hits) / static_cast<double>(train.size())},
                                  {"val_accuracy", val_acc}});
        if (!have_best || val_acc > result.best.meta.validation_accuracy) {
            have_best = true;
            std::copy(net.values().begin(), net.values().end(), result.best.net.values().begin());
            result.best.meta.epoch = epoch;
            result.best.meta.validation_accuracy = val_acc;
        }
    }
    return result;
}

void write_run(const fs::path& dir, const TrainConfig& cfg, const TrainResult& result) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    model::save_checkpoint(dir / "checkpoint.bin", result.best.net, result.best.meta);
    std::ofstream metrics(dir / "metrics.jsonl", std::ios::binary);
    for (const auto& m : result.metrics) metrics << m.dump() << '\n';
    nlohmann::json summary = {{"config", cfg.to_json()},
                              {"config_hash", cfg.hash()},
                              {"best_epoch", result.best.meta.epoch},
                              {"best_validation_accuracy", result.best.meta.validation_accuracy},
                              {"epoch_val_accuracy", result.epoch_val_accuracy},
                              {"aborted", result.aborted}};
    if (result.aborted) {
        summary["error"] = result.error;
        std::ofstream(dir / "diagnostics.json") << result.diagnostics.dump(2) << '\n';
    }
    std::ofstream(dir / "summary.json") << summary.dump(2) << '\n';
    if (!metrics) throw IoError("failed writing metrics in " + dir.string());
}

bool RunSet::partial() const {
    return std::any_of(runs.begin(), runs.end(), [](const RunRecord& r) { return !r.completed; });
}

RunSet run_replicates(const TrainConfig& base, int n_seeds, const TrainingSet& train, const TrainingSet& val,
                      const std::optional<fs::path>& out) {
    require(n_seeds >= 1, "need at least one seed");
    RunSet set;
    nlohmann::json runs = nlohmann::json::array();
    for (int i = 0; i < n_seeds; ++i) {
        TrainConfig cfg = base;
        cfg.seed = base.seed + static_cast<std::uint64_t>(i);
        RunRecord rec;
        rec.seed = cfg.seed;
        try {
            auto r = train_one(cfg, train, val);
            rec.completed = !r.aborted;
            rec.error = r.error;
            if (out) write_run(*out / ("seed_" + std::to_string(cfg.seed)), cfg, r);
            rec.result = std::move(r);
        } catch (const NumericalError& e) {
            rec.completed = false;
            rec.error = e.what();
        }
        runs.push_back({{"seed", rec.seed},
                        {"completed", rec.completed},
                        {"error", rec.error},
                        {"best_validation_accuracy",
                         rec.result ? rec.result->best.meta.validation_accuracy : 0.0}});
        set.runs.push_back(std::move(rec));
    }
    if (out) fs::create_directories(*out);
    if (out)
        std::ofstream(*out / "run_summary.json")
            << nlohmann::json{{"command", "train"}, {"seeds", n_seeds}, {"partial", set.partial()}, {"runs", runs}}.dump(2)
            << '\n';
    return set;
}

}  // namespace cyborg::train
