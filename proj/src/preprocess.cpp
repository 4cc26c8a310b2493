#include "cyborg/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>

#include <opencv2/imgcodecs.hpp>

namespace cyborg::preprocess {

namespace fs = std::filesystem;

Label label_from_string(const std::string& s) {
    if (s == "real" || s == "0") return Label::real;
    if (s == "synthetic" || s == "1") return Label::synthetic;
    throw ValidationError("label must be 'real' or 'synthetic', got '" + s + "'");
}

std::string to_string(Label l) { return l == Label::real ? "real" : "synthetic"; }

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw ValidationError("split must be train, val or test, got '" + s + "'");
}

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

FaceBox full_image_box(int img_h, int img_w) {
    return {0.0, 0.0, static_cast<double>(img_w), static_cast<double>(img_h), BoxSource::full_image_fallback};
}

FaceBox expand_box(const FaceBox& box, int img_h, int img_w) {
    require(img_h >= 1 && img_w >= 1, "image dimensions must be positive");
    require(std::isfinite(box.x0) && std::isfinite(box.y0) && std::isfinite(box.x1) && std::isfinite(box.y1),
            "box coordinates must be finite");
    FaceBox b = box;
    b.x0 = std::clamp(b.x0, 0.0, static_cast<double>(img_w));
    b.x1 = std::clamp(b.x1, 0.0, static_cast<double>(img_w));
    b.y0 = std::clamp(b.y0, 0.0, static_cast<double>(img_h));
    b.y1 = std::clamp(b.y1, 0.0, static_cast<double>(img_h));
    require(b.width() > 0 && b.height() > 0, "degenerate face box (zero area inside the image)");
    const double w = b.width();
    const double h = b.height();
    FaceBox out = b;
    out.x0 = std::max(0.0, b.x0 - 0.2 * w);
    out.x1 = std::min(static_cast<double>(img_w), b.x1 + 0.2 * w);
    out.y0 = std::max(0.0, b.y0 - (0.2 + 0.3) * h);
    out.y1 = std::min(static_cast<double>(img_h), b.y1 + 0.2 * h);
    return out;
}

FaceBox read_box_sidecar(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open box sidecar " + path.string());
    try {
        auto j = nlohmann::json::parse(in);
        return {j.at("x0").get<double>(), j.at("y0").get<double>(), j.at("x1").get<double>(),
                j.at("y1").get<double>(), BoxSource::provided_file};
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("bad box sidecar " + path.string() + ": " + e.what());
    }
}

Image resize_bilinear(const Image& img, int out_h, int out_w) {
    require(img.height >= 1 && img.width >= 1, "cannot resize an empty image");
    require(out_h >= 1 && out_w >= 1, "target size must be positive");
    Image out(out_h, out_w, img.channels);
    const double sy = static_cast<double>(img.height) / out_h;
    const double sx = static_cast<double>(img.width) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
        const int y0 = static_cast<int>(std::floor(fy));
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
            const int x0 = static_cast<int>(std::floor(fx));
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < img.channels; ++c) {
                const double top = (1 - wx) * img.at(y0, x0, c) + wx * img.at(y0, x1, c);
                const double bot = (1 - wx) * img.at(y1, x0, c) + wx * img.at(y1, x1, c);
                out.at(y, x, c) = std::clamp(static_cast<float>((1 - wy) * top + wy * bot), 0.0f, 1.0f);
            }
        }
    }
    return out;
}

namespace {

std::vector<std::vector<std::pair<int, double>>> overlap_weights(int in_n, int out_n) {
    std::vector<std::vector<std::pair<int, double>>> w(out_n);
    const double scale = static_cast<double>(in_n) / out_n;
    for (int i = 0; i < out_n; ++i) {
        const double lo = i * scale;
        const double hi = (i + 1) * scale;
        for (int s = static_cast<int>(std::floor(lo)); s < in_n && s < hi; ++s) {
            const double overlap = std::min(hi, s + 1.0) - std::max(lo, static_cast<double>(s));
            if (overlap > 0) w[i].emplace_back(s, overlap / scale);
        }
    }
    return w;
}

}  // namespace

FloatGrid resample_area(const FloatGrid& grid, int out_rows, int out_cols) {
    require(!grid.empty(), "cannot resample an empty grid");
    require(out_rows >= 1 && out_cols >= 1, "target size must be positive");
    if (out_rows <= grid.rows() && out_cols <= grid.cols()) return saliency::area_resize(grid, out_rows, out_cols);
    auto [lo_it, hi_it] = std::minmax_element(grid.values().begin(), grid.values().end());
    const auto wy = overlap_weights(grid.rows(), out_rows);
    const auto wx = overlap_weights(grid.cols(), out_cols);
    FloatGrid out(out_rows, out_cols, 0.0f);
    for (int i = 0; i < out_rows; ++i)
        for (int j = 0; j < out_cols; ++j) {
            double acc = 0.0;
            for (auto [sy, ay] : wy[i])
                for (auto [sx, ax] : wx[j]) acc += ay * ax * grid(sy, sx);
            out(i, j) = std::clamp(static_cast<float>(acc), *lo_it, *hi_it);
        }
    return out;
}

LabeledSample crop_resize(const Image& image, const FaceBox& box, const saliency::HumanSaliencyMap* sal,
                          std::string image_id, Label label, int out_size) {
    require(image.channels == 3, "expected a 3-channel image");
    require(out_size >= 1, "output size must be positive");
    if (sal != nullptr)
        require(sal->grid.rows() == image.height && sal->grid.cols() == image.width,
                "saliency map " + std::to_string(sal->grid.rows()) + "x" + std::to_string(sal->grid.cols()) +
                    " does not match image " + std::to_string(image.height) + "x" + std::to_string(image.width));
    const int cx0 = std::clamp(static_cast<int>(std::floor(box.x0)), 0, image.width - 1);
    const int cy0 = std::clamp(static_cast<int>(std::floor(box.y0)), 0, image.height - 1);
    const int cx1 = std::clamp(static_cast<int>(std::ceil(box.x1)), cx0 + 1, image.width);
    const int cy1 = std::clamp(static_cast<int>(std::ceil(box.y1)), cy0 + 1, image.height);
    require(box.x1 > box.x0 && box.y1 > box.y0, "degenerate crop box");

    Image crop(cy1 - cy0, cx1 - cx0, 3);
    for (int y = cy0; y < cy1; ++y)
        for (int x = cx0; x < cx1; ++x)
            for (int c = 0; c < 3; ++c) crop.at(y - cy0, x - cx0, c) = std::clamp(image.at(y, x, c), 0.0f, 1.0f);

    LabeledSample out;
    out.image_id = std::move(image_id);
    out.label = label;
    out.tensor = resize_bilinear(crop, out_size, out_size);
    if (sal != nullptr) {
        FloatGrid scrop(cy1 - cy0, cx1 - cx0, 0.0f);
        for (int y = cy0; y < cy1; ++y)
            for (int x = cx0; x < cx1; ++x) scrop(y - cy0, x - cx0) = sal->grid(y, x);
        out.saliency = saliency::HumanSaliencyMap{sal->image_id.empty() ? out.image_id : sal->image_id,
                                                  resample_area(scrop, out_size, out_size), sal->source_count};
    }
    return out;
}

std::map<std::string, int> DatasetManifest::counts() const {
    std::map<std::string, int> c{{"real", 0}, {"synthetic", 0}};
    for (const auto& e : entries) ++c[to_string(e.label)];
    return c;
}

bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".tif" || ext == ".tiff" ||
           ext == ".webp" || ext == ".ppm" || ext == ".pgm";
}

namespace {

std::optional<fs::path> find_sidecar(const std::optional<fs::path>& dir, const fs::path& image,
                                     std::initializer_list<const char*> exts) {
    if (!dir) return std::nullopt;
    for (const char* ext : exts) {
        fs::path candidate = *dir / image.stem();
        candidate += ext;
        if (fs::exists(candidate)) return candidate;
    }
    return std::nullopt;
}

bool decodable(const fs::path& p) {
    try {
        return !cv::imread(p.string(), cv::IMREAD_UNCHANGED).empty();
    } catch (const cv::Exception&) {
        return false;
    }
}

}  // namespace

ManifestBuild build_manifest(const std::vector<LabeledDir>& dirs, Split split, const std::string& source_tag) {
    ManifestBuild out;
    out.manifest.split = split;
    out.manifest.source_tag = source_tag;
    for (const auto& d : dirs) {
        std::error_code ec;
        if (!fs::is_directory(d.images, ec)) throw IoError("not a readable directory: " + d.images.string());
        std::vector<fs::path> files;
        for (const auto& it : fs::directory_iterator(d.images, ec))
            if (it.is_regular_file() && is_image_file(it.path())) files.push_back(it.path());
        if (ec) throw IoError("cannot list " + d.images.string() + ": " + ec.message());
        std::sort(files.begin(), files.end());
        if (files.empty()) out.warnings.push_back("no images in " + d.images.string());
        for (const auto& f : files) {
            if (!decodable(f)) {
                out.exclusions.push_back({f.string(), "unreadable or undecodable image"});
                continue;
            }
            ManifestEntry e;
            e.image_id = f.stem().string();
            e.path = f.string();
            e.label = d.label;
            if (auto s = find_sidecar(d.saliency, f, {".f32", ".png"})) e.saliency_path = s->string();
            if (auto b = find_sidecar(d.boxes, f, {".json"})) e.box_path = b->string();
            out.manifest.entries.push_back(std::move(e));
        }
    }
    std::stable_sort(out.manifest.entries.begin(), out.manifest.entries.end(),
                     [](const ManifestEntry& a, const ManifestEntry& b) { return a.path < b.path; });
    return out;
}

void write_manifest(const fs::path& path, const DatasetManifest& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    for (const auto& e : m.entries) {
        nlohmann::json j = {{"image_id", e.image_id},
                            {"path", e.path},
                            {"label", to_string(e.label)},
                            {"split", to_string(m.split)},
                            {"source_tag", m.source_tag}};
        if (e.saliency_path) j["saliency"] = *e.saliency_path;
        if (e.box_path) j["box"] = *e.box_path;
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

DatasetManifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    DatasetManifest m;
    std::string line;
    int lineno = 0;
    const fs::path base = path.parent_path();
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            auto j = nlohmann::json::parse(line);
            ManifestEntry e;
            e.path = j.at("path").get<std::string>();
            if (fs::path(e.path).is_relative()) e.path = (base / e.path).string();
            e.image_id = j.value("image_id", fs::path(e.path).stem().string());
            e.label = label_from_string(j.at("label").get<std::string>());
            auto resolve = [&](const std::string& p) { return fs::path(p).is_relative() ? (base / p).string() : p; };
            if (j.contains("saliency")) e.saliency_path = resolve(j.at("saliency").get<std::string>());
            if (j.contains("box")) e.box_path = resolve(j.at("box").get<std::string>());
            if (j.contains("split")) m.split = split_from_string(j.at("split").get<std::string>());
            if (j.contains("source_tag")) m.source_tag = j.at("source_tag").get<std::string>();
            m.entries.push_back(std::move(e));
        } catch (const nlohmann::json::exception& ex) {
            throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
        }
    }
    return m;
}

saliency::HumanSaliencyMap load_saliency_file(const fs::path& path, const std::string& image_id) {
    if (path.extension() == ".f32") {
        auto m = saliency::read_float_record(path);
        if (m.image_id.empty()) m.image_id = image_id;
        return m;
    }
    auto bytes = load_gray_bytes(path);
    FloatGrid g(bytes.rows(), bytes.cols(), 0.0f);
    for (std::size_t i = 0; i < g.size(); ++i) g.storage()[i] = bytes.storage()[i] / 255.0f;
    return {image_id, std::move(g), 0};
}

PreprocessReport run_preprocess(const PreprocessOptions& opts) {
    auto build = build_manifest({{opts.images, opts.label, opts.saliency, opts.boxes}}, opts.split, opts.source_tag);
    PreprocessReport report;
    report.exclusions = build.exclusions;
    report.warnings = build.warnings;
    report.manifest.split = opts.split;
    report.manifest.source_tag = opts.source_tag;
    std::error_code ec;
    fs::create_directories(opts.out / "images", ec);
    if (ec) throw IoError("cannot create " + (opts.out / "images").string() + ": " + ec.message());
    if (opts.saliency) fs::create_directories(opts.out / "saliency", ec);
    for (const auto& e : build.manifest.entries) {
        Image img = load_image(e.path);
        FaceBox box = full_image_box(img.height, img.width);
        if (e.box_path) {
            box = read_box_sidecar(*e.box_path);
        } else {
            ++report.fallback_boxes;
        }
        const FaceBox expanded = box.source == BoxSource::full_image_fallback ? box
                                                                              : expand_box(box, img.height, img.width);
        std::optional<saliency::HumanSaliencyMap> sal;
        if (e.saliency_path) sal = load_saliency_file(*e.saliency_path, e.image_id);
        auto sample = crop_resize(img, expanded, sal ? &*sal : nullptr, e.image_id, e.label, opts.out_size);

        ManifestEntry processed;
        processed.image_id = e.image_id;
        processed.label = e.label;
        processed.path = (opts.out / "images" / (e.image_id + ".png")).string();
        save_image_png(processed.path, sample.tensor);
        if (sample.saliency) {
            auto [png, rec] = saliency::export_saliency(*sample.saliency, opts.out / "saliency" / e.image_id);
            processed.saliency_path = rec.string();
        }
        report.manifest.entries.push_back(std::move(processed));
    }
    // Paths in the written manifest are relative to its directory so the output tree can be moved.
    DatasetManifest portable = report.manifest;
    for (auto& e : portable.entries) {
        e.path = fs::path(e.path).lexically_relative(opts.out).string();
        if (e.saliency_path) e.saliency_path = fs::path(*e.saliency_path).lexically_relative(opts.out).string();
    }
    write_manifest(opts.out / "manifest.jsonl", portable);
    return report;
}

}  // namespace cyborg::preprocess
