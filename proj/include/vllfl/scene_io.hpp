#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "vllfl/errors.hpp"
#include "vllfl/matrix.hpp"
#include "vllfl/surrogate.hpp"

namespace vllfl {

// Line-delimited scene files: one JSON object per line,
//   {"regions":[{"feature":[...],"box":[cx,cy,w,h]}],
//    "gt":[{"label":0,"box":[cx,cy,w,h]}]}
// This is the ingestion path for externally featurized data. Region features
// must be unit-norm d-vectors; boxes must lie inside the unit square with
// positive extents. Violations are rejected with the offending line number.

namespace detail {

inline BoxCxCyWH parse_box(const nlohmann::json& j, std::size_t line, const char* what) {
    if (!j.is_array() || j.size() != 4) {
        throw format_error("scene file line " + std::to_string(line) + ": " + what +
                           " box must be [cx,cy,w,h]");
    }
    BoxCxCyWH b;
    b.cx = j[0].get<double>();
    b.cy = j[1].get<double>();
    b.w = j[2].get<double>();
    b.h = j[3].get<double>();
    const bool valid = std::isfinite(b.cx) && std::isfinite(b.cy) && std::isfinite(b.w) &&
                       std::isfinite(b.h) && b.w > 0.0 && b.h > 0.0 && b.x1() >= 0.0 &&
                       b.x2() <= 1.0 && b.y1() >= 0.0 && b.y2() <= 1.0;
    if (!valid) {
        throw format_error("scene file line " + std::to_string(line) + ": " + what +
                           " box outside the unit square or degenerate");
    }
    return b;
}

}  // namespace detail

inline Scene parse_scene_line(const std::string& text, std::size_t line, std::size_t dim) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw format_error("scene file line " + std::to_string(line) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("regions") || !j.contains("gt")) {
        throw format_error("scene file line " + std::to_string(line) +
                           ": expected object with 'regions' and 'gt'");
    }
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (key != "regions" && key != "gt") {
            throw format_error("scene file line " + std::to_string(line) + ": unknown key '" +
                               key + "'");
        }
    }
    Scene scene;
    for (const auto& rj : j["regions"]) {
        if (!rj.is_object() || !rj.contains("feature") || !rj.contains("box")) {
            throw format_error("scene file line " + std::to_string(line) +
                               ": region needs 'feature' and 'box'");
        }
        Region region;
        const auto& fj = rj["feature"];
        if (!fj.is_array() || fj.size() != dim) {
            throw format_error("scene file line " + std::to_string(line) + ": feature must be " +
                               std::to_string(dim) + " numbers");
        }
        region.feature.reserve(dim);
        for (const auto& v : fj) region.feature.push_back(v.get<double>());
        const double nrm = norm(region.feature);
        if (!std::isfinite(nrm) || std::abs(nrm - 1.0) > 1e-6) {
            throw format_error("scene file line " + std::to_string(line) +
                               ": region feature must be unit-norm");
        }
        region.proposal = detail::parse_box(rj["box"], line, "region");
        scene.regions.push_back(std::move(region));
    }
    for (const auto& gj : j["gt"]) {
        if (!gj.is_object() || !gj.contains("label") || !gj.contains("box")) {
            throw format_error("scene file line " + std::to_string(line) +
                               ": gt needs 'label' and 'box'");
        }
        GroundTruthInstance gt;
        const auto& lj = gj["label"];
        if (!lj.is_number_integer() || lj.get<long long>() < 0) {
            throw format_error("scene file line " + std::to_string(line) +
                               ": gt label must be a nonnegative integer");
        }
        gt.label = lj.get<std::size_t>();
        gt.box = detail::parse_box(gj["box"], line, "gt");
        scene.ground_truth.push_back(gt);
    }
    return scene;
}

inline std::vector<Scene> read_scene_file(const std::string& path, std::size_t dim) {
    std::ifstream in(path);
    if (!in) throw format_error("scene file: cannot open '" + path + "'");
    std::vector<Scene> scenes;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.empty()) continue;
        scenes.push_back(parse_scene_line(text, line, dim));
    }
    return scenes;
}

inline std::string scene_to_json_line(const Scene& scene) {
    nlohmann::json j;
    j["regions"] = nlohmann::json::array();
    for (const auto& r : scene.regions) {
        nlohmann::json rj;
        rj["feature"] = r.feature;
        rj["box"] = {r.proposal.cx, r.proposal.cy, r.proposal.w, r.proposal.h};
        j["regions"].push_back(std::move(rj));
    }
    j["gt"] = nlohmann::json::array();
    for (const auto& g : scene.ground_truth) {
        nlohmann::json gj;
        gj["label"] = g.label;
        gj["box"] = {g.box.cx, g.box.cy, g.box.w, g.box.h};
        j["gt"].push_back(std::move(gj));
    }
    return j.dump();
}

inline void write_scene_file(const std::string& path, const std::vector<Scene>& scenes) {
    std::ofstream out(path);
    if (!out) throw format_error("scene file: cannot write '" + path + "'");
    for (const auto& s : scenes) out << scene_to_json_line(s) << "\n";
}

}  // namespace vllfl
