#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cyborg/grid.hpp"

namespace cyborg::saliency {

/// One annotator's painted region for one image.
struct AnnotatorMask {
    std::string image_id;
    std::string annotator_id;
    MaskGrid mask;  // values in {0,1}
    bool correct = false;
};

/// Aggregated human saliency, values in [0,1].
struct HumanSaliencyMap {
    std::string image_id;
    FloatGrid grid;
    int source_count = 0;
};

struct BuildConfig {
    double blur_sigma = 5.0;
    int blur_kernel_radius = -1;  // <0 selects ceil(3*sigma)
    bool include_incorrect = false;

    int effective_radius() const;
    void validate() const;
};

/// Normalized, truncated 1-D Gaussian taps for radius r (length 2r+1).
std::vector<double> gaussian_kernel(double sigma, int radius);

/// Separable Gaussian blur with zero padding outside the grid.
Grid<double> gaussian_blur(const Grid<double>& in, double sigma, int radius);

/// Maps [min,max] onto [0,1]; constant input maps to all-zero.
FloatGrid min_max_scale(const Grid<double>& in);

/// Correct-only filter, elementwise sum, blur, then min-max scale.
/// An empty (or fully filtered) mask list needs `rows`/`cols` to size the map;
/// pass the source image dimensions.
HumanSaliencyMap aggregate(std::span<const AnnotatorMask> masks, const BuildConfig& cfg, int rows = -1,
                           int cols = -1);

/// Exact area-weighted downsampling (fractional cell overlaps); rejects upsampling.
FloatGrid area_resize(const FloatGrid& grid, int out_rows, int out_cols);

HumanSaliencyMap resize_to_cam(const HumanSaliencyMap& map, int cam_h, int cam_w);

/// Writes `<stem>.png` (8-bit) and `<stem>.f32` (lossless record) and returns both paths.
std::pair<std::filesystem::path, std::filesystem::path> export_saliency(const HumanSaliencyMap& map,
                                                                        const std::filesystem::path& stem);

/// Float record: one JSON header line {image_id,height,width,dtype:"f32le"} then raw data.
void write_float_record(const std::filesystem::path& path, const HumanSaliencyMap& map);
HumanSaliencyMap read_float_record(const std::filesystem::path& path);

}  // namespace cyborg::saliency
