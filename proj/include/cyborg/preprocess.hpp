#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cyborg/image.hpp"
#include "cyborg/saliency.hpp"

namespace cyborg::preprocess {

inline constexpr int kInputSize = 224;

enum class Label { real = 0, synthetic = 1 };
Label label_from_string(const std::string& s);
std::string to_string(Label l);

enum class BoxSource { external_detector, provided_file, full_image_fallback };

/// Pixel-edge coordinates: the box covers [x0, x1) x [y0, y1).
struct FaceBox {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    BoxSource source = BoxSource::provided_file;

    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    friend bool operator==(const FaceBox&, const FaceBox&) = default;
};

/// Grows the box by 20% of its width on the left and right, 20% of its height
/// at the bottom and 50% of its height at the top (20% plus 30% forehead
/// allowance), then clamps to the image.
FaceBox expand_box(const FaceBox& box, int img_h, int img_w);

FaceBox full_image_box(int img_h, int img_w);

/// Reads a sidecar {image_id, x0, y0, x1, y1}.
FaceBox read_box_sidecar(const std::filesystem::path& path);

struct LabeledSample {
    std::string image_id;
    Image tensor;  // kInputSize x kInputSize x 3 unless resized for a smaller backbone
    Label label = Label::real;
    std::optional<saliency::HumanSaliencyMap> saliency;  // registered with `tensor`
};

/// Bilinear resampling with half-pixel centers and edge clamping.
Image resize_bilinear(const Image& img, int out_h, int out_w);

/// Area-weighted resampling in either direction (fractional cell overlaps).
FloatGrid resample_area(const FloatGrid& grid, int out_rows, int out_cols);

/// Crops image and saliency with the same box, then resizes the image
/// bilinearly and the saliency by area averaging to out_size x out_size.
LabeledSample crop_resize(const Image& image, const FaceBox& box, const saliency::HumanSaliencyMap* saliency,
                          std::string image_id, Label label, int out_size = kInputSize);

enum class Split { train, val, test };
Split split_from_string(const std::string& s);
std::string to_string(Split s);

struct ManifestEntry {
    std::string image_id;
    std::string path;
    Label label = Label::real;
    std::optional<std::string> saliency_path;
    std::optional<std::string> box_path;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    Split split = Split::train;
    std::string source_tag;

    std::map<std::string, int> counts() const;  // keyed "real"/"synthetic"
};

/// One directory of images sharing a label, with optional sidecar directories
/// holding `<stem>.f32` / `<stem>.png` saliency maps and `<stem>.json` boxes.
struct LabeledDir {
    std::filesystem::path images;
    Label label = Label::real;
    std::optional<std::filesystem::path> saliency;
    std::optional<std::filesystem::path> boxes;
};

struct Exclusion {
    std::string path;
    std::string reason;
};

struct ManifestBuild {
    DatasetManifest manifest;
    std::vector<Exclusion> exclusions;
    std::vector<std::string> warnings;
};

/// Lists decodable images in lexicographic path order; undecodable files go to
/// the exclusions report and empty directories produce a warning.
ManifestBuild build_manifest(const std::vector<LabeledDir>& dirs, Split split, const std::string& source_tag);

/// JSON-lines, one entry per line, each carrying split and source_tag.
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Loads a saliency map stored as a float record (.f32) or 8-bit PNG.
saliency::HumanSaliencyMap load_saliency_file(const std::filesystem::path& path, const std::string& image_id);

struct PreprocessOptions {
    std::filesystem::path images;
    Label label = Label::real;
    std::optional<std::filesystem::path> boxes;
    std::optional<std::filesystem::path> saliency;
    std::filesystem::path out;
    int out_size = kInputSize;
    Split split = Split::train;
    std::string source_tag;
};

struct PreprocessReport {
    DatasetManifest manifest;  // points at the processed files
    std::vector<Exclusion> exclusions;
    std::vector<std::string> warnings;
    int fallback_boxes = 0;
};

/// Crops, aligns and writes every image of one labeled directory to
/// `out/images`, saliency to `out/saliency`, and `out/manifest.jsonl`.
PreprocessReport run_preprocess(const PreprocessOptions& opts);

bool is_image_file(const std::filesystem::path& p);

}  // namespace cyborg::preprocess
