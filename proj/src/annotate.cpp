#include "cyborg/annotate.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <limits>
#include <sstream>

#include <httplib.h>

#include "cyborg/binary_io.hpp"
#include "cyborg/errors.hpp"
#include "cyborg/image.hpp"

namespace cyborg::annotate {

namespace fs = std::filesystem;
using nlohmann::json;

Prompt prompt_from_string(const std::string& s) {
    if (s == "which_is_real") return Prompt::which_is_real;
    if (s == "which_is_fake") return Prompt::which_is_fake;
    throw ValidationError("unknown prompt '" + s + "'");
}

std::string to_string(Prompt p) { return p == Prompt::which_is_real ? "which_is_real" : "which_is_fake"; }

Side side_from_string(const std::string& s) {
    if (s == "left") return Side::left;
    if (s == "right") return Side::right;
    throw ValidationError("unknown side '" + s + "'");
}

std::string to_string(Side s) { return s == Side::left ? "left" : "right"; }
std::string to_string(Role r) { return r == Role::real ? "real" : "fake"; }

bool is_correct(Prompt prompt, Role chosen) {
    return (prompt == Prompt::which_is_fake && chosen == Role::fake) ||
           (prompt == Prompt::which_is_real && chosen == Role::real);
}

namespace {

PairImage image_from_json(const json& j, const fs::path& base) {
    PairImage im;
    im.id = j.at("id").get<std::string>();
    require(!im.id.empty(), "empty image id");
    if (j.contains("path")) {
        fs::path p = j.at("path").get<std::string>();
        im.path = p.is_absolute() ? p : base / p;
    }
    im.width = j.value("width", 0);
    im.height = j.value("height", 0);
    if ((im.width == 0 || im.height == 0) && !im.path.empty()) {
        const auto img = load_image(im.path);
        im.width = img.width;
        im.height = img.height;
    }
    return im;
}

}  // namespace

std::vector<PairSpec> load_pairs(const fs::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw IoError("cannot open pair manifest " + manifest.string());
    std::vector<PairSpec> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto where = manifest.string() + ":" + std::to_string(lineno);
        try {
            const auto j = json::parse(line);
            PairSpec p;
            p.pair_id = j.at("pair_id").get<std::string>();
            p.family = j.value("family", "");
            p.real = image_from_json(j.at("real"), manifest.parent_path());
            p.fake = image_from_json(j.at("fake"), manifest.parent_path());
            require(p.real.id != p.fake.id, where + ": real and fake image share an id");
            out.push_back(std::move(p));
        } catch (const json::exception& e) {
            throw ValidationError(where + ": " + e.what());
        }
    }
    return out;
}

const std::string& Serving::image_on(Side side, const PairSpec& pair) const {
    return role_on(side) == Role::real ? pair.real.id : pair.fake.id;
}

Role Serving::role_on(Side side) const {
    if (side == Side::left) return left;
    return left == Role::real ? Role::fake : Role::real;
}

Submission submission_from_json(const json& j) {
    try {
        Submission s;
        s.pair_id = j.at("pair_id").get<std::string>();
        s.annotator_id = j.at("annotator_id").get<std::string>();
        require(!s.annotator_id.empty(), "annotator_id is empty");
        s.prompt = prompt_from_string(j.at("prompt").get<std::string>());
        s.chosen_side = side_from_string(j.at("chosen_side").get<std::string>());
        s.strokes = rle_from_json(j.at("strokes"));
        s.duration_ms = j.value("duration_ms", std::int64_t{0});
        require(s.duration_ms >= 0, "duration_ms must be nonnegative");
        if (j.contains("timestamp") && !j.at("timestamp").is_null()) s.timestamp = j.at("timestamp").get<std::int64_t>();
        return s;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("bad submission: ") + e.what());
    }
}

json ExportedMask::to_json() const {
    return {{"image_id", mask.image_id}, {"annotator_id", mask.annotator_id}, {"pair_id", pair_id},
            {"correct", mask.correct},   {"timestamp", timestamp},            {"mask", cyborg::to_json(strokes)}};
}

ExportedMask exported_mask_from_json(const json& j) {
    try {
        ExportedMask m;
        m.pair_id = j.value("pair_id", "");
        m.timestamp = j.value("timestamp", std::int64_t{0});
        m.strokes = rle_from_json(j.at("mask"));
        m.mask = {j.at("image_id").get<std::string>(), j.value("annotator_id", ""), rle_decode(m.strokes),
                  j.at("correct").get<bool>()};
        return m;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("bad exported mask: ") + e.what());
    }
}

// ---------------------------------------------------------------------------

namespace {

json serving_to_json(const Serving& s) {
    return {{"type", "serving"},          {"serving_id", s.serving_id}, {"pair_id", s.pair_id},
            {"annotator_id", s.annotator_id}, {"prompt", to_string(s.prompt)}, {"left", to_string(s.left)},
            {"timestamp", s.timestamp}};
}

Serving serving_from_json(const json& j) {
    Serving s;
    s.serving_id = j.at("serving_id").get<std::int64_t>();
    s.pair_id = j.at("pair_id").get<std::string>();
    s.annotator_id = j.at("annotator_id").get<std::string>();
    s.prompt = prompt_from_string(j.at("prompt").get<std::string>());
    const auto left = j.at("left").get<std::string>();
    require(left == "real" || left == "fake", "bad placement '" + left + "'");
    s.left = left == "real" ? Role::real : Role::fake;
    s.timestamp = j.at("timestamp").get<std::int64_t>();
    return s;
}

json submission_to_json(const StoredSubmission& s) {
    return {{"type", "submission"},
            {"record", s.verdict.record},
            {"serving_id", s.serving_id},
            {"pair_id", s.sub.pair_id},
            {"annotator_id", s.sub.annotator_id},
            {"prompt", to_string(s.sub.prompt)},
            {"chosen_side", to_string(s.sub.chosen_side)},
            {"strokes", to_json(s.sub.strokes)},
            {"duration_ms", s.sub.duration_ms},
            {"timestamp", *s.sub.timestamp},
            {"correct", s.verdict.correct},
            {"annotated_image_id", s.verdict.annotated_image_id},
            {"superseded_previous", s.verdict.superseded_previous}};
}

}  // namespace

Service::Service(std::vector<PairSpec> pairs, std::optional<fs::path> store_dir, ServiceOptions opts)
    : pairs_(std::move(pairs)), store_(std::move(store_dir)), opts_(opts) {
    require(!pairs_.empty(), "pair pool is empty");
    std::sort(pairs_.begin(), pairs_.end(), [](const PairSpec& a, const PairSpec& b) { return a.pair_id < b.pair_id; });
    for (std::size_t i = 0; i < pairs_.size(); ++i) {
        require(pair_index_.emplace(pairs_[i].pair_id, i).second, "duplicate pair id '" + pairs_[i].pair_id + "'");
        image_index_.emplace(pairs_[i].real.id, std::make_pair(i, Role::real));
        image_index_.emplace(pairs_[i].fake.id, std::make_pair(i, Role::fake));
        state_[pairs_[i].pair_id];
    }
    if (!store_) return;
    std::error_code ec;
    fs::create_directories(*store_, ec);
    if (ec) throw IoError("cannot create store " + store_->string() + ": " + ec.message());

    std::ifstream in(*store_ / "log.jsonl");
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto where = "log.jsonl:" + std::to_string(lineno);
        try {
            const auto j = json::parse(line);
            const auto type = j.at("type").get<std::string>();
            if (type == "serving") {
                auto s = serving_from_json(j);
                require(pair_index_.count(s.pair_id) > 0, "unknown pair '" + s.pair_id + "'");
                apply_serving(s);
            } else if (type == "submission") {
                StoredSubmission st;
                st.sub = submission_from_json(j);
                st.serving_id = j.at("serving_id").get<std::int64_t>();
                st.verdict.correct = j.at("correct").get<bool>();
                st.verdict.annotated_image_id = j.at("annotated_image_id").get<std::string>();
                st.verdict.superseded_previous = j.value("superseded_previous", false);
                const auto it = servings_.find({st.sub.pair_id, st.sub.annotator_id});
                require(it != servings_.end() && it->second.serving_id == st.serving_id,
                        "submission without a matching serving");
                const auto& pair = pairs_[pair_index_.at(st.sub.pair_id)];
                require(is_correct(st.sub.prompt, it->second.role_on(st.sub.chosen_side)) == st.verdict.correct &&
                            it->second.image_on(st.sub.chosen_side, pair) == st.verdict.annotated_image_id,
                        "stored verdict disagrees with the recorded placement");
                st.verdict.record = static_cast<std::int64_t>(history_.size());
                apply_submission(st);
            } else {
                throw ValidationError("unknown record type '" + type + "'");
            }
            ++records_;
        } catch (const std::exception& e) {
            replay_exclusions_.push_back({where, e.what()});
        }
    }
}

void Service::apply_serving(const Serving& s) {
    auto& st = state_.at(s.pair_id);
    ++st.served;
    (s.prompt == Prompt::which_is_real ? st.prompt_real : st.prompt_fake) += 1;
    st.annotators.insert(s.annotator_id);
    servings_[{s.pair_id, s.annotator_id}] = s;
    next_serving_id_ = std::max(next_serving_id_, s.serving_id + 1);
}

void Service::apply_submission(const StoredSubmission& s) {
    latest_[{s.sub.pair_id, s.sub.annotator_id}] = history_.size();
    history_.push_back(s);
}

std::int64_t Service::now_ms() const {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

void Service::append(const json& record) {
    ++records_;
    if (!store_) return;
    std::ofstream out(*store_ / "log.jsonl", std::ios::app | std::ios::binary);
    out << record.dump() << '\n';
    out.flush();
    if (!out) throw IoError("cannot append to " + (*store_ / "log.jsonl").string());
    maybe_snapshot();
}

void Service::maybe_snapshot() {
    if (opts_.snapshot_every <= 0 || records_ % static_cast<std::size_t>(opts_.snapshot_every) != 0) return;
    json pairs = json::array();
    for (const auto& [id, st] : state_)
        pairs.push_back({{"pair_id", id},
                         {"served_count", st.served},
                         {"prompt_real", st.prompt_real},
                         {"prompt_fake", st.prompt_fake},
                         {"annotators", st.annotators}});
    const json snap = {{"log_records", records_},
                       {"submissions", history_.size()},
                       {"next_serving_id", next_serving_id_},
                       {"pairs", pairs}};
    const auto tmp = *store_ / "index.json.tmp";
    std::ofstream(tmp) << snap.dump() << '\n';
    std::error_code ec;
    fs::rename(tmp, *store_ / "index.json", ec);
    if (ec) throw IoError("cannot write index snapshot: " + ec.message());
}

NextPair Service::next_pair(const std::string& annotator_id) {
    require(!annotator_id.empty(), "annotator id is empty");
    std::lock_guard lock(mu_);
    const PairSpec* best = nullptr;
    int best_served = std::numeric_limits<int>::max();
    for (const auto& p : pairs_) {
        const auto& st = state_.at(p.pair_id);
        if (st.annotators.count(annotator_id)) continue;
        if (st.served < best_served) {
            best = &p;
            best_served = st.served;
        }
    }
    NextPair out;
    if (!best) {
        out.done = true;
        return out;
    }
    Serving s;
    s.serving_id = next_serving_id_;
    s.pair_id = best->pair_id;
    s.annotator_id = annotator_id;
    s.prompt = best_served % 2 == 0 ? Prompt::which_is_real : Prompt::which_is_fake;
    s.left = (mix_seed(opts_.seed, static_cast<std::uint64_t>(s.serving_id)) & 1) ? Role::fake : Role::real;
    s.timestamp = now_ms();
    append(serving_to_json(s));
    apply_serving(s);
    out.serving = s;
    return out;
}

Verdict Service::submit(const Submission& sub) {
    const auto pit = pair_index_.find(sub.pair_id);
    require(pit != pair_index_.end(), "unknown pair '" + sub.pair_id + "'");
    const auto& pair = pairs_[pit->second];
    require(!rle_is_empty(sub.strokes), "annotation mask is empty; highlighting a region is required");
    rle_decode(sub.strokes);  // bounds check

    std::lock_guard lock(mu_);
    const auto sit = servings_.find({sub.pair_id, sub.annotator_id});
    require(sit != servings_.end(), "pair '" + sub.pair_id + "' was not served to annotator '" + sub.annotator_id + "'");
    const Serving& serving = sit->second;
    require(sub.prompt == serving.prompt, "prompt does not match the one served");
    const Role chosen = serving.role_on(sub.chosen_side);
    const PairImage& img = chosen == Role::real ? pair.real : pair.fake;
    if (img.width > 0 && img.height > 0)
        require(sub.strokes.width == img.width && sub.strokes.height == img.height,
                "mask is " + std::to_string(sub.strokes.width) + "x" + std::to_string(sub.strokes.height) +
                    " but image '" + img.id + "' is " + std::to_string(img.width) + "x" + std::to_string(img.height));

    StoredSubmission st;
    st.sub = sub;
    if (!st.sub.timestamp) st.sub.timestamp = now_ms();
    st.serving_id = serving.serving_id;
    st.verdict.record = static_cast<std::int64_t>(history_.size());
    st.verdict.correct = is_correct(sub.prompt, chosen);
    st.verdict.annotated_image_id = img.id;
    st.verdict.superseded_previous = latest_.count({sub.pair_id, sub.annotator_id}) > 0;
    append(submission_to_json(st));
    apply_submission(st);
    return st.verdict;
}

ExportResult Service::export_masks(bool correct_only) const {
    std::vector<StoredSubmission> latest;
    ExportResult out;
    {
        std::lock_guard lock(mu_);
        for (const auto& [key, idx] : latest_) latest.push_back(history_[idx]);
        out.exclusions = replay_exclusions_;
    }
    for (const auto& s : latest) {
        if (correct_only && !s.verdict.correct) continue;
        try {
            ExportedMask m;
            m.pair_id = s.sub.pair_id;
            m.timestamp = *s.sub.timestamp;
            m.strokes = s.sub.strokes;
            m.mask = {s.verdict.annotated_image_id, s.sub.annotator_id, rle_decode(s.sub.strokes), s.verdict.correct};
            out.masks.push_back(std::move(m));
        } catch (const std::exception& e) {
            out.exclusions.push_back({"record " + std::to_string(s.verdict.record), e.what()});
        }
    }
    std::sort(out.masks.begin(), out.masks.end(), [](const ExportedMask& a, const ExportedMask& b) {
        return std::tie(a.timestamp, a.pair_id, a.mask.annotator_id) <
               std::tie(b.timestamp, b.pair_id, b.mask.annotator_id);
    });
    return out;
}

json Service::stats() const {
    std::lock_guard lock(mu_);
    std::map<std::string, std::pair<int, int>> tally;  // correct, total over latest submissions
    for (const auto& [key, idx] : latest_) {
        auto& t = tally[key.first];
        t.first += history_[idx].verdict.correct;
        t.second += 1;
    }
    json pairs = json::array();
    int correct = 0;
    for (const auto& p : pairs_) {
        const auto& st = state_.at(p.pair_id);
        const auto t = tally.count(p.pair_id) ? tally.at(p.pair_id) : std::make_pair(0, 0);
        correct += t.first;
        pairs.push_back({{"pair_id", p.pair_id},
                         {"family", p.family},
                         {"served_count", st.served},
                         {"prompt_real", st.prompt_real},
                         {"prompt_fake", st.prompt_fake},
                         {"correct", t.first},
                         {"total", t.second}});
    }
    return {{"pair_count", pairs_.size()},
            {"servings", next_serving_id_},
            {"submissions", history_.size()},
            {"latest_submissions", latest_.size()},
            {"correct", correct},
            {"replay_exclusions", replay_exclusions_.size()},
            {"pairs", pairs}};
}

const PairSpec* Service::find_pair(const std::string& pair_id) const {
    const auto it = pair_index_.find(pair_id);
    return it == pair_index_.end() ? nullptr : &pairs_[it->second];
}

const PairImage* Service::find_image(const std::string& image_id) const {
    const auto it = image_index_.find(image_id);
    if (it == image_index_.end()) return nullptr;
    const auto& p = pairs_[it->second.first];
    return it->second.second == Role::real ? &p.real : &p.fake;
}

std::size_t Service::record_count() const {
    std::lock_guard lock(mu_);
    return records_;
}

std::size_t Service::submission_count() const {
    std::lock_guard lock(mu_);
    return history_.size();
}

int Service::served_count(const std::string& pair_id) const {
    std::lock_guard lock(mu_);
    return state_.at(pair_id).served;
}

std::pair<int, int> Service::prompt_counts(const std::string& pair_id) const {
    std::lock_guard lock(mu_);
    const auto& st = state_.at(pair_id);
    return {st.prompt_real, st.prompt_fake};
}

// ---------------------------------------------------------------------------
// HTTP

namespace {

std::string url_escape(const std::string& s) {
    static const char* hex = "0123456789ABCDEF";
    std::string out;
    for (unsigned char c : s) {
        if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
            out += static_cast<char>(c);
        } else {
            out += '%';
            out += hex[c >> 4];
            out += hex[c & 15];
        }
    }
    return out;
}

std::string content_type(const fs::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") return "image/png";
    if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
    if (ext == ".bmp") return "image/bmp";
    if (ext == ".webp") return "image/webp";
    return "application/octet-stream";
}

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

}  // namespace

struct HttpServer::Impl {
    Service& service;
    ServerOptions opts;
    httplib::Server server;

    Impl(Service& s, ServerOptions o) : service(s), opts(std::move(o)) {}
};

HttpServer::HttpServer(Service& service, ServerOptions opts) : impl_(std::make_unique<Impl>(service, std::move(opts))) {
    auto& srv = impl_->server;
    Service& svc = impl_->service;

    srv.Get("/api/pair", [&svc](const httplib::Request& req, httplib::Response& res) {
        const auto annotator = req.get_param_value("annotator");
        if (annotator.empty()) return send_json(res, 400, {{"error", "missing annotator parameter"}});
        const auto next = svc.next_pair(annotator);
        if (next.done) return send_json(res, 200, {{"done", true}});
        const auto& s = next.serving;
        const auto* pair = svc.find_pair(s.pair_id);
        send_json(res, 200,
                  {{"done", false},
                   {"pair_id", s.pair_id},
                   {"serving_id", s.serving_id},
                   {"prompt", to_string(s.prompt)},
                   {"left_url", "/images/" + url_escape(s.image_on(Side::left, *pair))},
                   {"right_url", "/images/" + url_escape(s.image_on(Side::right, *pair))}});
    });

    srv.Post("/api/annotation", [&svc](const httplib::Request& req, httplib::Response& res) {
        try {
            const auto v = svc.submit(submission_from_json(json::parse(req.body)));
            send_json(res, 200,
                      {{"record", v.record},
                       {"correct", v.correct},
                       {"annotated_image_id", v.annotated_image_id},
                       {"superseded_previous", v.superseded_previous}});
        } catch (const json::parse_error& e) {
            send_json(res, 400, {{"error", std::string("malformed JSON: ") + e.what()}});
        } catch (const ValidationError& e) {
            send_json(res, 400, {{"error", e.what()}});
        } catch (const std::exception& e) {
            send_json(res, 500, {{"error", e.what()}});
        }
    });

    srv.Get("/api/export", [&svc](const httplib::Request& req, httplib::Response& res) {
        const auto flag = req.get_param_value("correct_only");
        if (!flag.empty() && flag != "true" && flag != "false")
            return send_json(res, 400, {{"error", "correct_only must be true or false"}});
        const auto out = svc.export_masks(flag == "true");
        std::string body;
        for (const auto& m : out.masks) body += m.to_json().dump() + "\n";
        res.set_header("X-Excluded-Records", std::to_string(out.exclusions.size()));
        res.set_content(body, "application/x-ndjson");
    });

    srv.Get("/api/export/exclusions", [&svc](const httplib::Request&, httplib::Response& res) {
        json ex = json::array();
        for (const auto& e : svc.export_masks(false).exclusions) ex.push_back({{"where", e.where}, {"reason", e.reason}});
        send_json(res, 200, ex);
    });

    srv.Get("/api/stats", [&svc](const httplib::Request&, httplib::Response& res) { send_json(res, 200, svc.stats()); });

    srv.Get(R"(/images/(.+))", [&svc](const httplib::Request& req, httplib::Response& res) {
        const auto id = httplib::detail::decode_url(req.matches[1].str(), false);
        const auto* img = svc.find_image(id);
        if (!img || img->path.empty()) return send_json(res, 404, {{"error", "unknown image '" + id + "'"}});
        std::ifstream in(img->path, std::ios::binary);
        if (!in) return send_json(res, 404, {{"error", "image file missing for '" + id + "'"}});
        std::ostringstream buf;
        buf << in.rdbuf();
        res.set_content(buf.str(), content_type(img->path).c_str());
    });

    if (impl_->opts.ui_dir) srv.set_mount_point("/", impl_->opts.ui_dir->string());
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind() {
    auto& srv = impl_->server;
    if (impl_->opts.port == 0) return srv.bind_to_any_port(impl_->opts.host);
    return srv.bind_to_port(impl_->opts.host, impl_->opts.port) ? impl_->opts.port : -1;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
    if (impl_) impl_->server.stop();
}

}  // namespace cyborg::annotate
