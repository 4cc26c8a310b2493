#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "cyborg/rle.hpp"
#include "cyborg/saliency.hpp"

namespace cyborg::annotate {

enum class Prompt { which_is_real, which_is_fake };
enum class Side { left, right };
enum class Role { real, fake };

Prompt prompt_from_string(const std::string& s);
std::string to_string(Prompt p);
Side side_from_string(const std::string& s);
std::string to_string(Side s);
std::string to_string(Role r);

/// The whole truth table of the 2AFC decision.
bool is_correct(Prompt prompt, Role chosen);

struct PairImage {
    std::string id;
    std::filesystem::path path;  // empty when images are not served
    int width = 0;               // 0 = unknown, dimensions are then not checked
    int height = 0;
};

struct PairSpec {
    std::string pair_id;
    std::string family;
    PairImage real;
    PairImage fake;
};

/// JSON-lines: {pair_id, family?, real:{id, path?, width?, height?}, fake:{...}}.
/// Relative paths resolve against the manifest's directory. Missing
/// dimensions are read from the image files when a path is given.
std::vector<PairSpec> load_pairs(const std::filesystem::path& manifest);

struct Serving {
    std::int64_t serving_id = 0;
    std::string pair_id;
    std::string annotator_id;
    Prompt prompt = Prompt::which_is_real;
    Role left = Role::real;
    std::int64_t timestamp = 0;  // ms since epoch

    const std::string& image_on(Side side, const PairSpec& pair) const;
    Role role_on(Side side) const;
};

/// Either a serving or {done: true} when the annotator has seen every pair.
struct NextPair {
    bool done = false;
    Serving serving;
};

struct Submission {
    std::string pair_id;
    std::string annotator_id;
    Prompt prompt = Prompt::which_is_real;
    Side chosen_side = Side::left;
    RleMask strokes;
    std::int64_t duration_ms = 0;
    std::optional<std::int64_t> timestamp;  // server clock when absent
};

Submission submission_from_json(const nlohmann::json& j);

struct Verdict {
    std::int64_t record = 0;  // position in the submission history
    bool correct = false;
    std::string annotated_image_id;
    bool superseded_previous = false;
};

struct StoredSubmission {
    Submission sub;
    Verdict verdict;
    std::int64_t serving_id = 0;
};

struct ExportedMask {
    saliency::AnnotatorMask mask;
    std::string pair_id;
    std::int64_t timestamp = 0;
    RleMask strokes;

    nlohmann::json to_json() const;
};

struct Exclusion {
    std::string where;
    std::string reason;
};

struct ExportResult {
    std::vector<ExportedMask> masks;  // sorted by (timestamp, pair_id, annotator_id)
    std::vector<Exclusion> exclusions;
};

/// Parses one line of the export stream back into a mask.
ExportedMask exported_mask_from_json(const nlohmann::json& j);

struct ServiceOptions {
    std::uint64_t seed = 0;
    int snapshot_every = 100;  // log records between index snapshots; 0 disables
};

/// Pair scheduling, verdicts and the append-only record log. All methods are
/// safe to call concurrently; next_pair and submit are serialized.
class Service {
public:
    /// Replays `store_dir`/log.jsonl when it exists; corrupt lines are
    /// skipped and listed in replay_exclusions().
    Service(std::vector<PairSpec> pairs, std::optional<std::filesystem::path> store_dir, ServiceOptions opts = {});

    NextPair next_pair(const std::string& annotator_id);
    Verdict submit(const Submission& sub);
    ExportResult export_masks(bool correct_only) const;
    nlohmann::json stats() const;

    const PairSpec* find_pair(const std::string& pair_id) const;
    const PairImage* find_image(const std::string& image_id) const;
    std::size_t record_count() const;  // servings + submissions in the log
    std::size_t submission_count() const;
    int served_count(const std::string& pair_id) const;
    std::pair<int, int> prompt_counts(const std::string& pair_id) const;  // real, fake
    const std::vector<Exclusion>& replay_exclusions() const { return replay_exclusions_; }

private:
    struct PairState {
        int served = 0;
        int prompt_real = 0;
        int prompt_fake = 0;
        std::set<std::string> annotators;
    };

    void apply_serving(const Serving& s);
    void apply_submission(const StoredSubmission& s);
    void append(const nlohmann::json& record);
    void maybe_snapshot();
    std::int64_t now_ms() const;

    std::vector<PairSpec> pairs_;
    std::map<std::string, std::size_t> pair_index_;
    std::map<std::string, std::pair<std::size_t, Role>> image_index_;
    std::optional<std::filesystem::path> store_;
    ServiceOptions opts_;

    mutable std::mutex mu_;
    std::map<std::string, PairState> state_;
    std::map<std::pair<std::string, std::string>, Serving> servings_;  // (pair, annotator)
    std::vector<StoredSubmission> history_;
    std::map<std::pair<std::string, std::string>, std::size_t> latest_;  // (pair, annotator) -> history index
    std::int64_t next_serving_id_ = 0;
    std::size_t records_ = 0;
    std::vector<Exclusion> replay_exclusions_;
};

struct ServerOptions {
    std::string host = "0.0.0.0";
    int port = 8080;
    std::optional<std::filesystem::path> ui_dir;  // served at /
};

/// HTTP+JSON front end. Routes: GET /api/pair, POST /api/annotation,
/// GET /api/export, GET /api/export/exclusions, GET /api/stats,
/// GET /images/<image_id>, and the UI bundle at /.
class HttpServer {
public:
    HttpServer(Service& service, ServerOptions opts);
    ~HttpServer();
    /// Binds the socket; port 0 picks a free port. Returns the bound port or -1.
    int bind();
    /// Serves until stop() is called.
    void listen();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace cyborg::annotate
