#pragma once

// JSON documents for parameter tracks and experiment reports. Doubles are
// written in shortest round-trip form, so write -> read is exact.

#include <cstdio>
#include <sstream>
#include <string>

#include <json.hpp>

#include "tractmatch/error.hpp"
#include "tractmatch/estimation.hpp"
#include "tractmatch/pipeline.hpp"

namespace tractmatch {

using Json = nlohmann::json;

inline constexpr const char* kTrackSchema = "tractmatch.parameter_track";
inline constexpr const char* kReportSchema = "tractmatch.experiment_report";
inline constexpr int kSchemaVersion = 1;

inline Json to_json(const ParameterTrack& track) {
    Json frames = Json::array();
    for (const auto& f : track.frames) {
        Json cs = Json::array();
        for (const auto& c : f.constrictions) cs.push_back({{"position", c.position}, {"diameter", c.diameter}});
        frames.push_back({{"frame_index", f.frame_index},
                          {"time_s", f.time_s},
                          {"f0_hz", f.f0_hz},
                          {"tenseness", f.tenseness},
                          {"tongue_position", f.tongue_position},
                          {"tongue_diameter", f.tongue_diameter},
                          {"constrictions", cs},
                          {"loss", f.loss},
                          {"voiced", f.voiced}});
    }
    return {{"schema", kTrackSchema},
            {"schema_version", kSchemaVersion},
            {"header",
             {{"sample_rate", track.header.sample_rate},
              {"hop_s", track.header.hop_s},
              {"model_version", track.header.model_version}}},
            {"frames", frames}};
}

namespace detail {

inline const Json& require(const Json& obj, const char* key, const std::string& path) {
    if (!obj.is_object() || !obj.contains(key)) throw Error(ErrorKind::Schema, "missing field " + path + key);
    return obj.at(key);
}

inline double require_number(const Json& obj, const char* key, const std::string& path) {
    const Json& v = require(obj, key, path);
    if (!v.is_number()) throw Error(ErrorKind::Schema, path + key + " must be a number");
    return v.get<double>();
}

}  // namespace detail

/// Parses and validates a track document; Schema errors name the field.
inline ParameterTrack track_from_json(const Json& doc) {
    using detail::require;
    using detail::require_number;
    if (!doc.is_object()) throw Error(ErrorKind::Schema, "document must be an object");
    if (require(doc, "schema", "") != kTrackSchema) throw Error(ErrorKind::Schema, "schema");
    if (require(doc, "schema_version", "") != kSchemaVersion) throw Error(ErrorKind::Schema, "schema_version");

    ParameterTrack track;
    const Json& header = require(doc, "header", "");
    track.header.sample_rate = require_number(header, "sample_rate", "header.");
    track.header.hop_s = require_number(header, "hop_s", "header.");
    const Json& mv = require(header, "model_version", "header.");
    if (!mv.is_string()) throw Error(ErrorKind::Schema, "header.model_version must be a string");
    track.header.model_version = mv.get<std::string>();

    const Json& frames = require(doc, "frames", "");
    if (!frames.is_array()) throw Error(ErrorKind::Schema, "frames must be an array");
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const Json& j = frames[i];
        const std::string path = "frames[" + std::to_string(i) + "].";
        FrameRecord f;
        const Json& index = require(j, "frame_index", path);
        if (!index.is_number_unsigned()) throw Error(ErrorKind::Schema, path + "frame_index must be a non-negative integer");
        f.frame_index = index.get<std::size_t>();
        f.time_s = require_number(j, "time_s", path);
        f.f0_hz = require_number(j, "f0_hz", path);
        f.tenseness = require_number(j, "tenseness", path);
        f.tongue_position = require_number(j, "tongue_position", path);
        f.tongue_diameter = require_number(j, "tongue_diameter", path);
        f.loss = require_number(j, "loss", path);
        const Json& voiced = require(j, "voiced", path);
        if (!voiced.is_boolean()) throw Error(ErrorKind::Schema, path + "voiced must be a boolean");
        f.voiced = voiced.get<bool>();
        const Json& cs = require(j, "constrictions", path);
        if (!cs.is_array()) throw Error(ErrorKind::Schema, path + "constrictions must be an array");
        for (std::size_t c = 0; c < cs.size(); ++c) {
            const std::string cpath = path + "constrictions[" + std::to_string(c) + "].";
            f.constrictions.push_back({require_number(cs[c], "position", cpath), require_number(cs[c], "diameter", cpath)});
        }
        track.frames.push_back(std::move(f));
    }
    validate(track);
    return track;
}

inline ParameterTrack track_from_string(const std::string& text) {
    Json doc;
    try {
        doc = Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw Error(ErrorKind::Schema, std::string("malformed JSON: ") + e.what());
    }
    return track_from_json(doc);
}

// ---- experiment report ----------------------------------------------------

inline Json to_json(const ConditionMetrics& m) {
    return {{"tongue_position", m.tongue_position},
            {"tongue_diameter", m.tongue_diameter},
            {"total_diameter", m.total_diameter},
            {"frequency_response_db", m.frequency_response},
            {"frequency_response_vs_truth_db", m.frequency_response_truth},
            {"trials", m.trials},
            {"failures", m.failures}};
}

inline Json to_json(const GlottalMetrics& m) {
    return {{"tenseness_original", m.tenseness_original},
            {"f0_original_hz", m.f0_original},
            {"tenseness_recovered", m.tenseness_recovered},
            {"f0_recovered_hz", m.f0_recovered},
            {"trials", m.trials},
            {"failures", m.failures}};
}

inline Json to_json(const ExperimentReport& r) {
    Json conditions = Json::array();
    for (std::size_t i = 0; i < kConstrictionCounts.size(); ++i) {
        conditions.push_back({{"constrictions", kConstrictionCounts[i]},
                              {"given", to_json(r.given[i])},
                              {"inverse_filtered", to_json(r.inverse_filtered[i])},
                              {"glottal", to_json(r.glottal_by_condition[i])}});
    }
    return {{"schema", kReportSchema},
            {"schema_version", kSchemaVersion},
            {"trials_per_condition", r.trials_per_condition},
            {"seed", r.seed},
            {"conditions", conditions},
            {"glottal", to_json(r.glottal)},
            {"failures", r.failures},
            {"has_failures", r.has_failures()}};
}

/// Plain-text table: metrics as rows, (constrictions x target) as columns.
inline std::string format_report_table(const ExperimentReport& r) {
    std::ostringstream out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-26s", "# of constrictions");
    out << buf;
    for (std::size_t c : kConstrictionCounts) {
        std::snprintf(buf, sizeof buf, "%9zu%9s", c, "");
        out << buf;
    }
    out << '\n';
    std::snprintf(buf, sizeof buf, "%-26s", "VT transfer function");
    out << buf;
    for (std::size_t i = 0; i < kConstrictionCounts.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%9s%9s", "Given", "IF");
        out << buf;
    }
    out << '\n';
    auto row = [&](const char* name, double ConditionMetrics::*field) {
        std::snprintf(buf, sizeof buf, "%-26s", name);
        out << buf;
        for (std::size_t i = 0; i < kConstrictionCounts.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%9.3f%9.3f", r.given[i].*field, r.inverse_filtered[i].*field);
            out << buf;
        }
        out << '\n';
    };
    row("t_p [segments]", &ConditionMetrics::tongue_position);
    row("t_d [cm]", &ConditionMetrics::tongue_diameter);
    row("Total diameter [cm]", &ConditionMetrics::total_diameter);
    row("Frequency response [dB]", &ConditionMetrics::frequency_response);
    out << '\n';
    std::snprintf(buf, sizeof buf, "Tenseness MAE: original %.4f, recovered %.4f\n", r.glottal.tenseness_original,
                  r.glottal.tenseness_recovered);
    out << buf;
    std::snprintf(buf, sizeof buf, "F0 MAE [Hz]:   original %.4f, recovered %.4f\n", r.glottal.f0_original,
                  r.glottal.f0_recovered);
    out << buf;
    std::snprintf(buf, sizeof buf, "Trials per condition: %zu, excluded failures: %zu\n", r.trials_per_condition,
                  r.failures);
    out << buf;
    return out.str();
}

}  // namespace tractmatch
