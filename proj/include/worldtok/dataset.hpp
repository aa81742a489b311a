// Copyright Contributors to the worldtok Project
// SPDX-License-Identifier: Apache-2.0
//
// QA and trajectory dataset records: exact-layout JSON emit/parse, the pose
// text grammar, ego-normalized trajectory QA pairs, the prefix-LM scorer and
// PSNR-based scene filtering.
#pragma once

#include "error.hpp"
#include "grid.hpp"
#include "mlp.hpp"
#include "render.hpp"
#include "scene.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <string>
#include <string_view>
#include <vector>

namespace worldtok {

inline constexpr std::string_view kGaussMarker = "<gauss>";

struct Turn {
    std::string from; // "human" or "gpt"
    std::string value;

    bool operator==(const Turn &) const = default;
};

struct QaRecord {
    std::string token;
    std::string scene_token;
    long long scene_idx = 0;
    long long frame_idx = 0;
    std::string category;
    std::string task;
    std::vector<Turn> conversations;
    std::vector<std::string> image;
    std::vector<std::string> views;
    std::vector<std::string> gauss;

    bool operator==(const QaRecord &) const = default;
};

/// The Gaussian reference opens the first human turn, either bare or as
/// "based on <gauss>".
inline bool
starts_with_gauss_marker(std::string_view v) {
    return v.starts_with(kGaussMarker) || v.starts_with("based on <gauss>");
}

inline void
validate_conversations(const std::vector<Turn> &turns) {
    require(!turns.empty(), ErrorKind::InvariantViolation, "conversation is empty");
    for (std::size_t i = 0; i < turns.size(); ++i) {
        const char *expect = i % 2 == 0 ? "human" : "gpt";
        require(turns[i].from == expect, ErrorKind::InvariantViolation,
                "turn " + std::to_string(i) + " must be from '" + expect + "', got '" + turns[i].from + "'");
    }
}

inline void
validate_qa_record(const QaRecord &r) {
    validate_conversations(r.conversations);
    require(starts_with_gauss_marker(r.conversations.front().value), ErrorKind::InvariantViolation,
            "first human turn must begin with the <gauss> marker");
}

// --- pretty layout ------------------------------------------------------------
//
// Objects and string arrays break one element per line, except "views" which
// stays on one line. Empty arrays print as [].

namespace detail {

inline std::string
quote(const std::string &s) {
    return nlohmann::json(s).dump();
}

inline std::string
spaces(int n) {
    return std::string(static_cast<std::size_t>(n), ' ');
}

inline std::string
string_array_block(const std::vector<std::string> &items, int indent, int step) {
    if (items.empty()) return "[]";
    std::string out = "[\n";
    for (std::size_t i = 0; i < items.size(); ++i) {
        out += spaces(indent + step) + quote(items[i]) + (i + 1 < items.size() ? ",\n" : "\n");
    }
    return out + spaces(indent) + "]";
}

inline std::string
string_array_inline(const std::vector<std::string> &items) {
    std::string out = "[";
    for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ", " : "") + quote(items[i]);
    return out + "]";
}

} // namespace detail

/// `"conversations": [...]` with the key at `indent` spaces and each nesting
/// level `step` further in. No trailing newline.
inline std::string
emit_conversations(const std::vector<Turn> &turns, int indent, int step) {
    using detail::quote;
    using detail::spaces;
    std::string out = spaces(indent) + "\"conversations\": ";
    if (turns.empty()) return out + "[]";
    out += "[\n";
    for (std::size_t i = 0; i < turns.size(); ++i) {
        out += spaces(indent + step) + "{\n";
        out += spaces(indent + 2 * step) + "\"from\": " + quote(turns[i].from) + ",\n";
        out += spaces(indent + 2 * step) + "\"value\": " + quote(turns[i].value) + "\n";
        out += spaces(indent + step) + (i + 1 < turns.size() ? "},\n" : "}\n");
    }
    return out + spaces(indent) + "]";
}

inline std::string
emit_qa_record(const QaRecord &r) {
    validate_qa_record(r);
    using detail::quote;
    std::string out = "{\n";
    out += "  \"token\": " + quote(r.token) + ",\n";
    out += "  \"scene_token\": " + quote(r.scene_token) + ",\n";
    out += "  \"scene_idx\": " + std::to_string(r.scene_idx) + ",\n";
    out += "  \"frame_idx\": " + std::to_string(r.frame_idx) + ",\n";
    out += "  \"category\": " + quote(r.category) + ",\n";
    out += "  \"task\": " + quote(r.task) + ",\n";
    out += emit_conversations(r.conversations, 2, 2) + ",\n";
    out += "  \"image\": " + detail::string_array_block(r.image, 2, 2) + ",\n";
    out += "  \"views\": " + detail::string_array_inline(r.views) + ",\n";
    out += "  \"gauss\": " + detail::string_array_block(r.gauss, 2, 2) + "\n";
    return out + "}";
}

// --- parsing ------------------------------------------------------------------

namespace detail {

inline nlohmann::json
parse_json(std::string_view text, const std::string &what) {
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error &e) {
        fail(ErrorKind::MalformedJson, what + ": " + e.what());
    }
}

inline const nlohmann::json &
field(const nlohmann::json &j, const char *key, bool (nlohmann::json::*is)() const noexcept, const char *type) {
    const auto it = j.find(key);
    require(it != j.end(), ErrorKind::SchemaViolation, std::string("missing field '") + key + "'");
    require(((*it).*is)(), ErrorKind::SchemaViolation, std::string("field '") + key + "' must be " + type);
    return *it;
}

inline std::vector<std::string>
string_list(const nlohmann::json &j, const char *key) {
    std::vector<std::string> out;
    for (const auto &v : field(j, key, &nlohmann::json::is_array, "an array")) {
        require(v.is_string(), ErrorKind::SchemaViolation, std::string("'") + key + "' entries must be strings");
        out.push_back(v.get<std::string>());
    }
    return out;
}

inline std::vector<Turn>
turns_from_json(const nlohmann::json &arr) {
    std::vector<Turn> out;
    for (const auto &t : arr) {
        require(t.is_object() && t.size() == 2, ErrorKind::SchemaViolation, "turn must be {\"from\", \"value\"}");
        out.push_back({field(t, "from", &nlohmann::json::is_string, "a string").get<std::string>(),
                       field(t, "value", &nlohmann::json::is_string, "a string").get<std::string>()});
    }
    return out;
}

} // namespace detail

inline QaRecord
qa_record_from_json(const nlohmann::json &j) {
    using detail::field;
    require(j.is_object(), ErrorKind::SchemaViolation, "QA record must be an object");
    static const std::array<const char *, 10> keys = {"token",    "scene_token",   "scene_idx", "frame_idx", "category",
                                                      "task",     "conversations", "image",     "views",     "gauss"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string &k = it.key();
        require(std::find_if(keys.begin(), keys.end(), [&](const char *s) { return k == s; }) != keys.end(),
                ErrorKind::SchemaViolation, "unknown field '" + k + "'");
    }
    QaRecord r;
    r.token = field(j, "token", &nlohmann::json::is_string, "a string").get<std::string>();
    r.scene_token = field(j, "scene_token", &nlohmann::json::is_string, "a string").get<std::string>();
    r.scene_idx = field(j, "scene_idx", &nlohmann::json::is_number_integer, "an integer").get<long long>();
    r.frame_idx = field(j, "frame_idx", &nlohmann::json::is_number_integer, "an integer").get<long long>();
    r.category = field(j, "category", &nlohmann::json::is_string, "a string").get<std::string>();
    r.task = field(j, "task", &nlohmann::json::is_string, "a string").get<std::string>();
    r.conversations = detail::turns_from_json(field(j, "conversations", &nlohmann::json::is_array, "an array"));
    r.image = detail::string_list(j, "image");
    r.views = detail::string_list(j, "views");
    r.gauss = detail::string_list(j, "gauss");
    validate_qa_record(r);
    return r;
}

inline QaRecord
parse_qa_record(std::string_view text) {
    return qa_record_from_json(detail::parse_json(text, "QA record"));
}

/// Parses a bare `"conversations": [...]` fragment.
inline std::vector<Turn>
parse_conversations(std::string_view fragment) {
    const auto j = detail::parse_json("{" + std::string(fragment) + "}", "conversations fragment");
    require(j.size() == 1, ErrorKind::SchemaViolation, "fragment must hold only \"conversations\"");
    auto turns = detail::turns_from_json(detail::field(j, "conversations", &nlohmann::json::is_array, "an array"));
    validate_conversations(turns);
    return turns;
}

/// Compact one-line form for JSON-lines files, fields in record order.
inline std::string
emit_qa_line(const QaRecord &r) {
    validate_qa_record(r);
    nlohmann::ordered_json j;
    j["token"] = r.token;
    j["scene_token"] = r.scene_token;
    j["scene_idx"] = r.scene_idx;
    j["frame_idx"] = r.frame_idx;
    j["category"] = r.category;
    j["task"] = r.task;
    j["conversations"] = nlohmann::ordered_json::array();
    for (const auto &t : r.conversations) j["conversations"].push_back({{"from", t.from}, {"value", t.value}});
    j["image"] = r.image;
    j["views"] = r.views;
    j["gauss"] = r.gauss;
    return j.dump();
}

inline std::string
emit_qa_jsonl(const std::vector<QaRecord> &records) {
    std::string out;
    for (const auto &r : records) out += emit_qa_line(r) + "\n";
    return out;
}

inline std::vector<QaRecord>
parse_qa_jsonl(std::string_view text) {
    std::vector<QaRecord> out;
    std::size_t pos = 0, line = 0;
    while (pos < text.size()) {
        const std::size_t end = std::min(text.find('\n', pos), text.size());
        const std::string_view l = text.substr(pos, end - pos);
        pos = end + 1;
        ++line;
        if (l.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        try {
            out.push_back(parse_qa_record(l));
        } catch (const Error &e) {
            fail(e.kind(), "line " + std::to_string(line) + ": " + e.what());
        }
    }
    return out;
}

// --- pose text ----------------------------------------------------------------
//
// "[PT, [x, y, z, qx, qy, qz, qw], ...]" with every number rounded half away
// from zero to 2 decimals and printed with at least one fractional digit.

/// Round(v * 100) with ties away from zero, decided on the exact binary value.
inline long long
hundredths(double v) {
    require(std::isfinite(v) && std::abs(v) < 1e15, ErrorKind::InvalidArgument, "pose value out of range");
    const double p = v * 100.0;
    const double err = std::fma(v, 100.0, -p); // exact: v * 100 = p + err
    const double fl = std::floor(p);
    const double frac = p - fl;
    // Away from an exact .5 the product's rounding error cannot cross the
    // midpoint, so only the tie case needs the residual.
    if (frac != 0.5) return static_cast<long long>(std::round(p));
    if (err != 0.0) return static_cast<long long>(err > 0.0 ? fl + 1.0 : fl);
    return static_cast<long long>(v > 0.0 ? fl + 1.0 : fl);
}

inline std::string
format_decimal2(double v) {
    const long long n = hundredths(v);
    const long long a = n < 0 ? -n : n;
    std::string out = n < 0 ? "-" : "";
    out += std::to_string(a / 100) + ".";
    const long long f = a % 100;
    if (f == 0) return out + "0";
    out += static_cast<char>('0' + f / 10);
    if (f % 10) out += static_cast<char>('0' + f % 10);
    return out;
}

using PoseRow = std::array<double, 7>;

inline PoseRow
pose_row(const Pose &p) {
    return {p.translation.x(), p.translation.y(), p.translation.z(), p.rotation.x(),
            p.rotation.y(),    p.rotation.z(),    p.rotation.w()};
}

inline std::string
format_pose_rows(const std::vector<PoseRow> &rows) {
    std::string out = "[PT";
    for (const auto &r : rows) {
        out += ", [";
        for (std::size_t i = 0; i < r.size(); ++i) out += (i ? ", " : "") + format_decimal2(r[i]);
        out += "]";
    }
    return out + "]";
}

inline std::string
format_pose_text(const std::vector<Pose> &poses) {
    std::vector<PoseRow> rows;
    for (const auto &p : poses) rows.push_back(pose_row(p));
    return format_pose_rows(rows);
}

namespace detail {

class PoseTextReader {
  public:
    explicit PoseTextReader(std::string_view s) : mText(s) {}

    void
    expect(std::string_view lit) {
        skip_ws();
        if (!mText.substr(mPos).starts_with(lit)) error("expected '" + std::string(lit) + "'");
        mPos += lit.size();
    }

    bool
    peek(char c) {
        skip_ws();
        return mPos < mText.size() && mText[mPos] == c;
    }

    double
    number() {
        skip_ws();
        const std::string tail(mText.substr(mPos, 64));
        char *end = nullptr;
        const double v = std::strtod(tail.c_str(), &end);
        if (end == tail.c_str() || !std::isfinite(v)) error("expected a number");
        mPos += static_cast<std::size_t>(end - tail.c_str());
        return v;
    }

    bool at_end() {
        skip_ws();
        return mPos == mText.size();
    }

    [[noreturn]] void
    error(const std::string &msg) const {
        fail(ErrorKind::MalformedText, "pose text at offset " + std::to_string(mPos) + ": " + msg);
    }

  private:
    void
    skip_ws() {
        while (mPos < mText.size() && (mText[mPos] == ' ' || mText[mPos] == '\t' || mText[mPos] == '\n')) ++mPos;
    }

    std::string_view mText;
    std::size_t mPos = 0;
};

} // namespace detail

inline std::vector<PoseRow>
parse_pose_rows(std::string_view text) {
    detail::PoseTextReader r(text);
    r.expect("[PT");
    std::vector<PoseRow> rows;
    while (r.peek(',')) {
        r.expect(",");
        r.expect("[");
        PoseRow row{};
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) r.expect(",");
            row[i] = r.number();
        }
        r.expect("]");
        rows.push_back(row);
    }
    r.expect("]");
    if (!r.at_end()) r.error("trailing characters");
    return rows;
}

/// The first "[PT, ...]" span inside a longer string (e.g. a prompt).
inline std::string_view
find_pose_text(std::string_view s) {
    const auto start = s.find("[PT");
    require(start != std::string_view::npos, ErrorKind::MalformedText, "no [PT, ...] block in text");
    int depth = 0;
    for (std::size_t i = start; i < s.size(); ++i) {
        depth += s[i] == '[' ? 1 : s[i] == ']' ? -1 : 0;
        if (depth == 0) return s.substr(start, i - start + 1);
    }
    fail(ErrorKind::MalformedText, "unterminated [PT, ...] block");
}

inline constexpr double kPoseQuaternionTolerance = 0.02;

/// Rows rounded to 2 decimals are only approximately unit quaternions;
/// anything within `tol` of unit norm is accepted and normalized.
inline Pose
pose_from_row(const PoseRow &r, double tol = kPoseQuaternionTolerance) {
    for (double v : r) require(std::isfinite(v), ErrorKind::InvalidArgument, "pose row has non-finite values");
    const double n = std::sqrt(r[3] * r[3] + r[4] * r[4] + r[5] * r[5] + r[6] * r[6]);
    require(std::abs(n - 1.0) <= tol, ErrorKind::InvariantViolation,
            "pose quaternion norm " + std::to_string(n) + " is not within " + std::to_string(tol) + " of 1");
    return {Vec3(r[0], r[1], r[2]), UnitQuaternion(r[3] / n, r[4] / n, r[5] / n, r[6] / n)};
}

inline std::vector<Pose>
parse_pose_text(std::string_view text) {
    std::vector<Pose> out;
    for (const auto &r : parse_pose_rows(text)) out.push_back(pose_from_row(r));
    return out;
}

// --- trajectories ---------------------------------------------------------------

inline constexpr int kClipFrames = 10;
inline constexpr int kPromptFrames = 4;
inline constexpr int kReferenceFrame = 4; // 0-based index of the 5th frame

struct TrajectoryClip {
    std::vector<Pose> poses;
    std::vector<double> times;

    void
    validate() const {
        require(poses.size() == kClipFrames, ErrorKind::InvariantViolation,
                "trajectory clip needs exactly 10 poses, got " + std::to_string(poses.size()));
        require(times.empty() || times.size() == poses.size(), ErrorKind::DimensionMismatch,
                "frame times do not match pose count");
        for (const auto &p : poses) {
            require(std::abs(p.rotation.norm() - 1.0) <= 1e-6, ErrorKind::InvariantViolation,
                    "trajectory pose quaternion is not normalized");
        }
    }

    static TrajectoryClip
    from_rows(const std::vector<PoseRow> &rows, double tol = kPoseQuaternionTolerance) {
        TrajectoryClip c;
        for (const auto &r : rows) c.poses.push_back(pose_from_row(r, tol));
        c.validate();
        return c;
    }
};

/// Every pose re-expressed in the frame of pose 5: p_i' = p_5^-1 * p_i.
inline TrajectoryClip
ego_normalize(const TrajectoryClip &clip) {
    clip.validate();
    const Pose inv = clip.poses[kReferenceFrame].inverse();
    TrajectoryClip out = clip;
    for (auto &p : out.poses) p = inv * p;
    out.poses[kReferenceFrame] = Pose::identity();
    return out;
}

struct TrajectoryQa {
    std::string prompt;
    std::string target;

    std::vector<Turn>
    conversations() const {
        return {{"human", prompt}, {"gpt", target}};
    }
};

inline TrajectoryQa
build_trajectory_qa(const TrajectoryClip &clip) {
    const TrajectoryClip rel = ego_normalize(clip);
    const std::vector<Pose> past(rel.poses.begin(), rel.poses.begin() + kPromptFrames);
    const std::vector<Pose> future(rel.poses.begin() + kPromptFrames, rel.poses.end());
    TrajectoryQa qa;
    qa.prompt = "There is last " + std::to_string(kPromptFrames) + " frames trajectory, " + format_pose_text(past) +
                ". Summarize the motion of the ego vehicle in this " + std::to_string(kClipFrames - kPromptFrames) +
                "-frame clip";
    qa.target = format_pose_text(future);
    return qa;
}

// --- scoring and filtering --------------------------------------------------------

/// Ground-truth tokens after a prefix, with the model's distribution over the
/// vocabulary at each ground-truth position.
struct PrefixSample {
    std::vector<int> prefix;
    std::vector<int> target;
    std::vector<VecX> distributions;
};

/// -sum over samples and positions of log p(target_i | target_<i, prefix).
inline double
prefix_lm_loss(const std::vector<PrefixSample> &batch) {
    double loss = 0.0;
    for (const auto &s : batch) {
        require(s.distributions.size() == s.target.size(), ErrorKind::DimensionMismatch,
                "prefix_lm_loss: one distribution per target token required");
        for (std::size_t i = 0; i < s.target.size(); ++i) {
            const VecX &p = s.distributions[i];
            require(s.target[i] >= 0 && s.target[i] < p.size(), ErrorKind::InvalidArgument,
                    "prefix_lm_loss: target token outside vocabulary");
            require(p.allFinite() && p.minCoeff() >= 0.0 && std::abs(p.sum() - 1.0) <= 1e-9, ErrorKind::InvalidArgument,
                    "prefix_lm_loss: invalid probability table");
            const double q = p[s.target[i]];
            require(q > 0.0, ErrorKind::InvalidArgument, "prefix_lm_loss: zero probability on a target token");
            loss -= std::log(q);
        }
    }
    return loss;
}

inline constexpr double kDefaultPsnrThreshold = 25.0;

struct SceneViews {
    std::string scene_id;
    std::vector<Grid> renders;
    std::vector<Grid> ground_truth;
};

inline double
mean_psnr(const SceneViews &s) {
    require(!s.renders.empty(), ErrorKind::InvalidArgument, "scene '" + s.scene_id + "' has no views");
    require(s.renders.size() == s.ground_truth.size(), ErrorKind::DimensionMismatch,
            "scene '" + s.scene_id + "': render and ground-truth counts differ");
    double acc = 0.0;
    for (std::size_t i = 0; i < s.renders.size(); ++i) acc += psnr(s.renders[i], s.ground_truth[i]);
    return acc / static_cast<double>(s.renders.size());
}

inline std::vector<std::string>
filter_scenes_by_psnr(const std::vector<SceneViews> &scenes, double threshold_db = kDefaultPsnrThreshold) {
    std::vector<std::string> kept;
    for (const auto &s : scenes) {
        if (mean_psnr(s) >= threshold_db) kept.push_back(s.scene_id);
    }
    return kept;
}

} // namespace worldtok
