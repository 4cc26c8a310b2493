#include "cyborg/image.hpp"

#include <cmath>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace cyborg {

namespace {

cv::Mat read_or_throw(const std::filesystem::path& path, int flags) {
    if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
    cv::Mat m = cv::imread(path.string(), flags);
    if (m.empty()) throw IoError("cannot decode image: " + path.string());
    return m;
}

void write_or_throw(const std::filesystem::path& path, const cv::Mat& m) {
    bool ok = false;
    try {
        ok = cv::imwrite(path.string(), m);
    } catch (const cv::Exception& e) {
        throw IoError("cannot write " + path.string() + ": " + e.what());
    }
    if (!ok) throw IoError("cannot write " + path.string());
}

}  // namespace

unsigned char quantize_unit(float v) {
    double scaled = std::floor(static_cast<double>(v) * 255.0 + 0.5);
    if (scaled < 0) scaled = 0;
    if (scaled > 255) scaled = 255;
    return static_cast<unsigned char>(scaled);
}

Image load_image(const std::filesystem::path& path) {
    cv::Mat bgr = read_or_throw(path, cv::IMREAD_COLOR);
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    Image img(rgb.rows, rgb.cols, 3);
    for (int y = 0; y < rgb.rows; ++y) {
        const auto* row = rgb.ptr<unsigned char>(y);
        for (int x = 0; x < rgb.cols * 3; ++x)
            img.pixels[static_cast<std::size_t>(y) * rgb.cols * 3 + x] = row[x] / 255.0f;
    }
    return img;
}

void save_image_png(const std::filesystem::path& path, const Image& img) {
    require(img.channels == 3 || img.channels == 1, "PNG export supports 1 or 3 channels");
    cv::Mat m(img.height, img.width, img.channels == 3 ? CV_8UC3 : CV_8UC1);
    for (int y = 0; y < img.height; ++y) {
        auto* row = m.ptr<unsigned char>(y);
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                int dst = img.channels == 3 ? 2 - c : c;  // RGB -> BGR
                row[x * img.channels + dst] = quantize_unit(img.at(y, x, c));
            }
    }
    write_or_throw(path, m);
}

MaskGrid load_mask(const std::filesystem::path& path) {
    cv::Mat m = read_or_throw(path, cv::IMREAD_GRAYSCALE);
    MaskGrid out(m.rows, m.cols, 0);
    for (int y = 0; y < m.rows; ++y) {
        const auto* row = m.ptr<unsigned char>(y);
        for (int x = 0; x < m.cols; ++x) out(y, x) = row[x] != 0 ? 1 : 0;
    }
    return out;
}

void save_gray_png(const std::filesystem::path& path, const FloatGrid& grid) {
    cv::Mat m(grid.rows(), grid.cols(), CV_8UC1);
    for (int y = 0; y < grid.rows(); ++y) {
        auto* row = m.ptr<unsigned char>(y);
        for (int x = 0; x < grid.cols(); ++x) row[x] = quantize_unit(grid(y, x));
    }
    write_or_throw(path, m);
}

Grid<unsigned char> load_gray_bytes(const std::filesystem::path& path) {
    cv::Mat m = read_or_throw(path, cv::IMREAD_UNCHANGED);
    require(m.channels() == 1 && m.depth() == CV_8U, "expected an 8-bit single-channel image");
    Grid<unsigned char> out(m.rows, m.cols, 0);
    for (int y = 0; y < m.rows; ++y) {
        const auto* row = m.ptr<unsigned char>(y);
        for (int x = 0; x < m.cols; ++x) out(y, x) = row[x];
    }
    return out;
}

}  // namespace cyborg
