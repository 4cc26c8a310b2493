#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include "cyborg/image.hpp"
#include "cyborg/preprocess.hpp"

using namespace cyborg;
using namespace cyborg::preprocess;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void write_png(const fs::path& p, int h, int w, float value) {
    Image img(h, w, 3, value);
    save_image_png(p, img);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

// Reference bilinear sample with half-pixel centers and clamped edges.
double bilinear_probe(const Image& img, int out_h, int out_w, int y, int x, int c) {
    double fy = (y + 0.5) * img.height / out_h - 0.5;
    double fx = (x + 0.5) * img.width / out_w - 0.5;
    fy = std::min(std::max(fy, 0.0), img.height - 1.0);
    fx = std::min(std::max(fx, 0.0), img.width - 1.0);
    int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
    int y1 = std::min(y0 + 1, img.height - 1), x1 = std::min(x0 + 1, img.width - 1);
    double ay = fy - y0, ax = fx - x0;
    return (1 - ay) * ((1 - ax) * img.at(y0, x0, c) + ax * img.at(y0, x1, c)) +
           ay * ((1 - ax) * img.at(y1, x0, c) + ax * img.at(y1, x1, c));
}

}  // namespace

TEST_CASE("expand_box examples") {
    FaceBox b{100, 100, 200, 200};
    CHECK(expand_box(b, 1000, 1000) == FaceBox{80, 50, 220, 220, BoxSource::provided_file});
    FaceBox top{100, 0, 200, 100};
    CHECK(expand_box(top, 1000, 1000) == FaceBox{80, 0, 220, 120, BoxSource::provided_file});
    auto full = full_image_box(300, 400);
    auto e = expand_box(full, 300, 400);
    CHECK(e.x0 == 0);
    CHECK(e.y0 == 0);
    CHECK(e.x1 == 400);
    CHECK(e.y1 == 300);
    CHECK_THROWS_AS(expand_box(FaceBox{10, 10, 10, 50}, 100, 100), ValidationError);
    CHECK_THROWS_AS(expand_box(FaceBox{200, 200, 300, 300}, 100, 100), ValidationError);
}

TEST_CASE("expand_box only stabilizes under full clamping") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(0, 1);
    for (int t = 0; t < 500; ++t) {
        const int H = 50 + static_cast<int>(rng() % 500), W = 50 + static_cast<int>(rng() % 500);
        double x0 = u(rng) * (W - 2), y0 = u(rng) * (H - 2);
        FaceBox b{x0, y0, x0 + 1 + u(rng) * (W - x0 - 1), y0 + 1 + u(rng) * (H - y0 - 1)};
        auto once = expand_box(b, H, W);
        auto twice = expand_box(once, H, W);
        const bool saturated = once.x0 == 0 && once.y0 == 0 && once.x1 == W && once.y1 == H;
        CHECK((twice == once) == saturated);
        CHECK(once.x0 >= 0);
        CHECK(once.y1 <= H);
    }
}

TEST_CASE("crop_resize") {
    SUBCASE("constant image stays constant; all-ones saliency stays ones") {
        Image gray(300, 260, 3, 0.4f);
        saliency::HumanSaliencyMap ones{"x", FloatGrid(300, 260, 1.0f), 1};
        auto s = crop_resize(gray, expand_box({50, 60, 180, 200}, 300, 260), &ones, "x", Label::real);
        CHECK(s.tensor.height == 224);
        CHECK(s.tensor.width == 224);
        CHECK(s.tensor.channels == 3);
        for (float v : s.tensor.pixels) CHECK(v == doctest::Approx(0.4f));
        REQUIRE(s.saliency);
        CHECK(s.saliency->grid.rows() == 224);
        for (float v : s.saliency->grid.storage()) CHECK(v == 1.0f);
    }
    SUBCASE("2x2 blocks at 448 average to one output pixel each") {
        std::mt19937_64 rng(4);
        std::uniform_real_distribution<float> u(0, 1);
        Image img(448, 448, 3);
        std::vector<float> blocks(224 * 224 * 3);
        for (auto& v : blocks) v = u(rng);
        for (int y = 0; y < 448; ++y)
            for (int x = 0; x < 448; ++x)
                for (int c = 0; c < 3; ++c) img.at(y, x, c) = blocks[((y / 2) * 224 + x / 2) * 3 + c];
        auto s = crop_resize(img, full_image_box(448, 448), nullptr, "b", Label::synthetic);
        for (auto [y, x] : {std::pair{0, 0}, {10, 200}, {223, 223}, {111, 57}, {200, 3}})
            for (int c = 0; c < 3; ++c) {
                CHECK(s.tensor.at(y, x, c) == doctest::Approx(bilinear_probe(img, 224, 224, y, x, c)).epsilon(1e-6));
                CHECK(s.tensor.at(y, x, c) == doctest::Approx(blocks[(y * 224 + x) * 3 + c]).epsilon(1e-6));
            }
    }
    SUBCASE("mismatched saliency is rejected") {
        Image img(10, 10, 3);
        saliency::HumanSaliencyMap bad{"x", FloatGrid(9, 10, 0.0f), 1};
        CHECK_THROWS_AS(crop_resize(img, full_image_box(10, 10), &bad, "x", Label::real), ValidationError);
    }
}

TEST_CASE("delta saliency stays registered with the image") {
    std::mt19937_64 rng(21);
    for (int t = 0; t < 40; ++t) {
        const int H = 120 + static_cast<int>(rng() % 300), W = 120 + static_cast<int>(rng() % 300);
        Image img(H, W, 3, 0.0f);
        FaceBox box = expand_box({W * 0.3, H * 0.3, W * 0.7, H * 0.7}, H, W);
        const int px = static_cast<int>(box.x0) + 1 + static_cast<int>(rng() % static_cast<int>(box.width() - 2));
        const int py = static_cast<int>(box.y0) + 1 + static_cast<int>(rng() % static_cast<int>(box.height() - 2));
        img.at(py, px, 0) = 1.0f;
        saliency::HumanSaliencyMap delta{"d", FloatGrid(H, W, 0.0f), 1};
        delta.grid(py, px) = 1.0f;
        auto s = crop_resize(img, box, &delta, "d", Label::real);
        const auto& g = s.saliency->grid.storage();
        const auto sal_idx = std::max_element(g.begin(), g.end()) - g.begin();
        int best = 0;
        for (int i = 1; i < 224 * 224; ++i)
            if (s.tensor.pixels[i * 3] > s.tensor.pixels[best * 3]) best = i;
        CHECK(std::abs(static_cast<int>(sal_idx / 224) - best / 224) <= 1);
        CHECK(std::abs(static_cast<int>(sal_idx % 224) - best % 224) <= 1);
        for (float v : g) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
}

TEST_CASE("build_manifest") {
    TempDir tmp("cyborg_test_manifest");
    fs::create_directories(tmp.path / "real");
    fs::create_directories(tmp.path / "fake");
    for (auto n : {"c.png", "a.png", "b.png"}) write_png(tmp.path / "real" / n, 8, 8, 0.2f);
    for (auto n : {"y.png", "x.png"}) write_png(tmp.path / "fake" / n, 8, 8, 0.8f);
    std::ofstream(tmp.path / "fake" / "notes.txt") << "ignored";

    std::vector<LabeledDir> dirs = {{tmp.path / "real", Label::real, {}, {}},
                                    {tmp.path / "fake", Label::synthetic, {}, {}}};
    auto m = build_manifest(dirs, Split::train, "toy");
    CHECK(m.manifest.entries.size() == 5);
    CHECK(m.manifest.counts() == std::map<std::string, int>{{"real", 3}, {"synthetic", 2}});
    CHECK(std::is_sorted(m.manifest.entries.begin(), m.manifest.entries.end(),
                         [](const auto& a, const auto& b) { return a.path < b.path; }));
    CHECK(m.exclusions.empty());

    write_manifest(tmp.path / "one.jsonl", m.manifest);
    write_manifest(tmp.path / "two.jsonl", build_manifest(dirs, Split::train, "toy").manifest);
    CHECK(slurp(tmp.path / "one.jsonl") == slurp(tmp.path / "two.jsonl"));
    auto back = read_manifest(tmp.path / "one.jsonl");
    CHECK(back.entries.size() == 5);
    CHECK(back.source_tag == "toy");
    CHECK(back.entries[0].path == m.manifest.entries[0].path);

    SUBCASE("an undecodable file is excluded and reported") {
        fs::create_directories(tmp.path / "mixed");
        for (auto n : {"1.png", "2.png", "3.png"}) write_png(tmp.path / "mixed" / n, 4, 4, 0.5f);
        std::ofstream(tmp.path / "mixed" / "4.png") << "definitely not a png";
        auto mm = build_manifest({{tmp.path / "mixed", Label::real, {}, {}}}, Split::val, "");
        CHECK(mm.manifest.entries.size() == 3);
        REQUIRE(mm.exclusions.size() == 1);
        CHECK(mm.exclusions[0].path.find("4.png") != std::string::npos);
    }
    SUBCASE("empty directory warns") {
        fs::create_directories(tmp.path / "empty");
        auto mm = build_manifest({{tmp.path / "empty", Label::real, {}, {}}}, Split::test, "");
        CHECK(mm.manifest.entries.empty());
        CHECK(mm.warnings.size() == 1);
    }
    SUBCASE("missing directory is an I/O error") {
        CHECK_THROWS_AS(build_manifest({{tmp.path / "nope", Label::real, {}, {}}}, Split::test, ""), IoError);
    }
}

TEST_CASE("run_preprocess writes registered images, saliency and a manifest") {
    TempDir tmp("cyborg_test_preprocess");
    fs::create_directories(tmp.path / "in");
    fs::create_directories(tmp.path / "boxes");
    fs::create_directories(tmp.path / "sal");
    write_png(tmp.path / "in" / "face1.png", 100, 80, 0.5f);
    write_png(tmp.path / "in" / "face2.png", 60, 60, 0.25f);
    std::ofstream(tmp.path / "boxes" / "face1.json") << R"({"image_id":"face1","x0":20,"y0":30,"x1":60,"y1":80})";
    saliency::HumanSaliencyMap m{"face1", FloatGrid(100, 80, 1.0f), 2};
    saliency::write_float_record(tmp.path / "sal" / "face1.f32", m);

    PreprocessOptions opts;
    opts.images = tmp.path / "in";
    opts.label = Label::synthetic;
    opts.boxes = tmp.path / "boxes";
    opts.saliency = tmp.path / "sal";
    opts.out = tmp.path / "out";
    opts.out_size = 32;
    auto rep = run_preprocess(opts);
    CHECK(rep.manifest.entries.size() == 2);
    CHECK(rep.fallback_boxes == 1);
    auto back = read_manifest(tmp.path / "out" / "manifest.jsonl");
    REQUIRE(back.entries.size() == 2);
    CHECK(back.entries[0].saliency_path.has_value());
    CHECK_FALSE(back.entries[1].saliency_path.has_value());
    auto img = load_image(back.entries[0].path);
    CHECK(img.height == 32);
    auto sal = saliency::read_float_record(*back.entries[0].saliency_path);
    CHECK(sal.grid.rows() == 32);
    CHECK(back.entries[1].label == Label::synthetic);
}
