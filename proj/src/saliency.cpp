#include "cyborg/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "cyborg/binary_io.hpp"
#include "cyborg/image.hpp"

namespace cyborg::saliency {

int BuildConfig::effective_radius() const {
    if (blur_kernel_radius >= 0) return blur_kernel_radius;
    return static_cast<int>(std::ceil(3.0 * blur_sigma));
}

void BuildConfig::validate() const {
    require(std::isfinite(blur_sigma) && blur_sigma >= 0.0, "blur_sigma must be a nonnegative finite number");
    if (blur_sigma > 0.0) require(effective_radius() >= 1, "blur_kernel_radius must be >= 1 when blurring");
}

std::vector<double> gaussian_kernel(double sigma, int radius) {
    require(sigma > 0.0 && radius >= 1, "gaussian kernel needs sigma > 0 and radius >= 1");
    std::vector<double> taps(2 * static_cast<std::size_t>(radius) + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        double v = std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma * sigma));
        taps[i + radius] = v;
        sum += v;
    }
    for (double& t : taps) t /= sum;
    return taps;
}

Grid<double> gaussian_blur(const Grid<double>& in, double sigma, int radius) {
    const auto taps = gaussian_kernel(sigma, radius);
    const int rows = in.rows();
    const int cols = in.cols();
    Grid<double> horiz(rows, cols, 0.0);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                int cc = c + k;
                if (cc >= 0 && cc < cols) acc += taps[k + radius] * in(r, cc);
            }
            horiz(r, c) = acc;
        }
    Grid<double> out(rows, cols, 0.0);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                int rr = r + k;
                if (rr >= 0 && rr < rows) acc += taps[k + radius] * horiz(rr, c);
            }
            out(r, c) = acc;
        }
    return out;
}

FloatGrid min_max_scale(const Grid<double>& in) {
    FloatGrid out(in.rows(), in.cols(), 0.0f);
    if (in.empty()) return out;
    auto [lo_it, hi_it] = std::minmax_element(in.values().begin(), in.values().end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    if (!(hi > lo)) return out;
    const double span = hi - lo;
    auto src = in.values();
    auto dst = out.values();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<float>((src[i] - lo) / span);
    return out;
}

HumanSaliencyMap aggregate(std::span<const AnnotatorMask> masks, const BuildConfig& cfg, int rows, int cols) {
    cfg.validate();
    if (!masks.empty()) {
        const auto& first = masks.front();
        for (const auto& m : masks) {
            require(m.image_id == first.image_id, "masks refer to different images: " + first.image_id + " vs " +
                                                      m.image_id);
            require(m.mask.same_shape(first.mask), "mask dimensions differ for image " + first.image_id);
        }
        if (rows >= 0 || cols >= 0)
            require(rows == first.mask.rows() && cols == first.mask.cols(),
                    "explicit dimensions disagree with mask dimensions");
        rows = first.mask.rows();
        cols = first.mask.cols();
    }
    require(rows >= 1 && cols >= 1, "cannot size an empty aggregation; supply image dimensions");

    HumanSaliencyMap out;
    out.image_id = masks.empty() ? std::string{} : masks.front().image_id;
    Grid<double> sum(rows, cols, 0.0);
    for (const auto& m : masks) {
        if (!m.correct && !cfg.include_incorrect) continue;
        ++out.source_count;
        auto src = m.mask.values();
        auto dst = sum.values();
        for (std::size_t i = 0; i < src.size(); ++i) {
            require(src[i] <= 1, "mask values must be binary");
            dst[i] += src[i];
        }
    }
    if (cfg.blur_sigma > 0.0) sum = gaussian_blur(sum, cfg.blur_sigma, cfg.effective_radius());
    out.grid = min_max_scale(sum);
    return out;
}

namespace {

// Row i of the result holds the fractional overlap of output cell i with each
// source cell, divided by the cell extent (so each row sums to 1).
std::vector<std::vector<std::pair<int, double>>> area_weights(int in_n, int out_n) {
    std::vector<std::vector<std::pair<int, double>>> w(out_n);
    const double scale = static_cast<double>(in_n) / out_n;
    for (int i = 0; i < out_n; ++i) {
        const double lo = i * scale;
        const double hi = (i + 1) * scale;
        for (int s = static_cast<int>(std::floor(lo)); s < in_n && s < hi; ++s) {
            double overlap = std::min(hi, s + 1.0) - std::max(lo, static_cast<double>(s));
            if (overlap > 0) w[i].emplace_back(s, overlap / scale);
        }
    }
    return w;
}

}  // namespace

FloatGrid area_resize(const FloatGrid& grid, int out_rows, int out_cols) {
    require(out_rows >= 1 && out_cols >= 1, "target dimensions must be positive");
    require(out_rows <= grid.rows() && out_cols <= grid.cols(),
            "area resize only downsamples (requested larger than source)");
    if (out_rows == grid.rows() && out_cols == grid.cols()) return grid;

    auto [lo_it, hi_it] = std::minmax_element(grid.values().begin(), grid.values().end());
    const float lo = *lo_it;
    const float hi = *hi_it;
    const auto wy = area_weights(grid.rows(), out_rows);
    const auto wx = area_weights(grid.cols(), out_cols);
    FloatGrid out(out_rows, out_cols, 0.0f);
    for (int i = 0; i < out_rows; ++i)
        for (int j = 0; j < out_cols; ++j) {
            double acc = 0.0;
            for (auto [sy, ay] : wy[i]) {
                double row_acc = 0.0;
                for (auto [sx, ax] : wx[j]) row_acc += ax * grid(sy, sx);
                acc += ay * row_acc;
            }
            out(i, j) = std::clamp(static_cast<float>(acc), lo, hi);
        }
    return out;
}

HumanSaliencyMap resize_to_cam(const HumanSaliencyMap& map, int cam_h, int cam_w) {
    HumanSaliencyMap out{map.image_id, area_resize(map.grid, cam_h, cam_w), map.source_count};
    return out;
}

void write_float_record(const std::filesystem::path& path, const HumanSaliencyMap& map) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    nlohmann::json header = {
        {"image_id", map.image_id}, {"height", map.grid.rows()}, {"width", map.grid.cols()}, {"dtype", "f32le"},
        {"source_count", map.source_count}};
    out << header.dump() << '\n';
    write_f32le(out, map.grid.values());
    if (!out) throw IoError("write failed: " + path.string());
}

HumanSaliencyMap read_float_record(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw IoError("missing header in " + path.string());
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad float record header in " + path.string() + ": " + e.what());
    }
    if (header.value("dtype", "") != "f32le") throw IoError("unsupported dtype in " + path.string());
    const int h = header.at("height").get<int>();
    const int w = header.at("width").get<int>();
    require(h >= 0 && w >= 0, "negative dimensions in float record");
    HumanSaliencyMap out;
    out.image_id = header.at("image_id").get<std::string>();
    out.grid = FloatGrid(h, w, read_f32le(in, static_cast<std::size_t>(h) * w));
    out.source_count = header.value("source_count", 0);
    return out;
}

std::pair<std::filesystem::path, std::filesystem::path> export_saliency(const HumanSaliencyMap& map,
                                                                        const std::filesystem::path& stem) {
    auto png = stem;
    png += ".png";
    auto rec = stem;
    rec += ".f32";
    std::error_code ec;
    if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path(), ec);
    if (ec) throw IoError("cannot create " + stem.parent_path().string() + ": " + ec.message());
    save_gray_png(png, map.grid);
    write_float_record(rec, map);
    return {png, rec};
}

}  // namespace cyborg::saliency
