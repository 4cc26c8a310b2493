#include "cyborg/rle.hpp"

#include <algorithm>

namespace cyborg {

RleMask rle_encode(const MaskGrid& mask) {
    RleMask out{mask.cols(), mask.rows(), {}};
    for (int r = 0; r < mask.rows(); ++r) {
        int c = 0;
        while (c < mask.cols()) {
            if (mask(r, c) == 0) {
                ++c;
                continue;
            }
            int begin = c;
            while (c < mask.cols() && mask(r, c) != 0) ++c;
            out.runs.push_back({static_cast<std::int64_t>(r) * mask.cols() + begin, c - begin});
        }
    }
    return out;
}

MaskGrid rle_decode(const RleMask& rle) {
    require(rle.width > 0 && rle.height > 0, "mask dimensions must be positive");
    MaskGrid out(rle.height, rle.width, 0);
    const std::int64_t total = static_cast<std::int64_t>(rle.width) * rle.height;
    auto& data = out.storage();
    for (const Run& run : rle.runs) {
        require(run.length >= 1, "run length must be positive");
        require(run.start >= 0 && run.start + run.length <= total, "run exceeds mask bounds");
        std::fill_n(data.begin() + run.start, run.length, static_cast<unsigned char>(1));
    }
    return out;
}

bool rle_is_empty(const RleMask& rle) {
    return std::none_of(rle.runs.begin(), rle.runs.end(), [](const Run& r) { return r.length > 0; });
}

nlohmann::json to_json(const RleMask& rle) {
    nlohmann::json runs = nlohmann::json::array();
    for (const Run& r : rle.runs) runs.push_back({r.start, r.length});
    return {{"width", rle.width}, {"height", rle.height}, {"runs", std::move(runs)}};
}

RleMask rle_from_json(const nlohmann::json& j) {
    try {
        RleMask out;
        out.width = j.at("width").get<int>();
        out.height = j.at("height").get<int>();
        for (const auto& r : j.at("runs")) {
            require(r.is_array() && r.size() == 2, "run must be a [start, length] pair");
            out.runs.push_back({r[0].get<std::int64_t>(), r[1].get<std::int64_t>()});
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed RLE mask: ") + e.what());
    }
}

}  // namespace cyborg
