#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "cyborg/grid.hpp"

namespace cyborg {

/// One run of set pixels: `length` consecutive row-major indices starting at `start`.
struct Run {
    std::int64_t start = 0;
    std::int64_t length = 0;
    friend bool operator==(const Run&, const Run&) = default;
};

/// Wire form of a binary mask: {width, height, runs:[[start,len],...]}.
struct RleMask {
    int width = 0;
    int height = 0;
    std::vector<Run> runs;
    friend bool operator==(const RleMask&, const RleMask&) = default;
};

/// Canonical encoding: runs sorted by start and split at row boundaries,
/// so a compact blob yields one run per covered row.
RleMask rle_encode(const MaskGrid& mask);

/// Accepts any in-bounds runs (overlapping or row-spanning runs are unioned).
/// Throws ValidationError on out-of-range runs or bad dimensions.
MaskGrid rle_decode(const RleMask& rle);

bool rle_is_empty(const RleMask& rle);

nlohmann::json to_json(const RleMask& rle);
RleMask rle_from_json(const nlohmann::json& j);

}  // namespace cyborg
