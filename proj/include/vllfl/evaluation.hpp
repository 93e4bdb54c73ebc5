#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <vector>

#include "vllfl/geometry.hpp"
#include "vllfl/surrogate.hpp"

namespace vllfl {

// Detection labelled in the same id space as the ground truth, plus the
// scene it came from. The evaluation input format.
struct EvalDetection {
    std::size_t scene = 0;
    std::size_t label = 0;
    double score = 0.0;
    BoxCxCyWH box;
};

struct PrPoint {
    double recall = 0.0;
    double precision = 0.0;
};

struct ClassAp {
    std::size_t label = 0;
    std::size_t n_gt = 0;
    double ap = 0.0;
    std::vector<PrPoint> curve;
};

struct EvalReport {
    std::vector<ClassAp> per_class;  // classes with >= 1 ground-truth instance
    double map = 0.0;
};

// Average precision at a single IoU threshold, all-point interpolation:
// detections swept in descending score order, each greedily matched to the
// highest-IoU unmatched ground truth of its class in its scene (ties by
// lowest ground-truth index); AP is the exact area under the precision
// envelope. mAP averages classes that have at least one ground-truth
// instance; classes without ground truth are excluded, not scored zero.
inline EvalReport evaluate_map(const std::vector<std::vector<EvalDetection>>& detections,
                               const std::vector<std::vector<GroundTruthInstance>>& ground_truth,
                               double iou_threshold = 0.5) {
    std::map<std::size_t, std::size_t> gt_count;
    for (const auto& scene_gt : ground_truth)
        for (const auto& gt : scene_gt) gt_count[gt.label] += 1;

    EvalReport report;
    if (gt_count.empty()) return report;

    for (const auto& [label, n_gt] : gt_count) {
        // Gather this class's detections across scenes with a deterministic
        // order: score desc, then scene asc, then emission order asc.
        struct Entry {
            double score;
            std::size_t scene;
            std::size_t order;
            const EvalDetection* det;
        };
        std::vector<Entry> entries;
        for (std::size_t s = 0; s < detections.size(); ++s) {
            for (std::size_t k = 0; k < detections[s].size(); ++k) {
                if (detections[s][k].label == label) {
                    entries.push_back({detections[s][k].score, s, k, &detections[s][k]});
                }
            }
        }
        std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.scene != b.scene) return a.scene < b.scene;
            return a.order < b.order;
        });

        std::vector<std::vector<bool>> used(ground_truth.size());
        for (std::size_t s = 0; s < ground_truth.size(); ++s)
            used[s].assign(ground_truth[s].size(), false);

        ClassAp cls;
        cls.label = label;
        cls.n_gt = n_gt;
        std::size_t tp = 0, fp = 0;
        for (const auto& e : entries) {
            double best_iou = 0.0;
            std::size_t best_gt = 0;
            bool found = false;
            const auto& scene_gt = ground_truth[e.scene];
            for (std::size_t g = 0; g < scene_gt.size(); ++g) {
                if (scene_gt[g].label != label || used[e.scene][g]) continue;
                const double ov = iou(e.det->box, scene_gt[g].box);
                if (ov >= iou_threshold && ov > best_iou) {
                    best_iou = ov;
                    best_gt = g;
                    found = true;
                }
            }
            if (found) {
                used[e.scene][best_gt] = true;
                ++tp;
            } else {
                ++fp;
            }
            cls.curve.push_back({static_cast<double>(tp) / static_cast<double>(n_gt),
                                 static_cast<double>(tp) / static_cast<double>(tp + fp)});
        }

        // Exact area under the precision envelope.
        std::vector<double> env(cls.curve.size());
        double running = 0.0;
        for (std::size_t i = cls.curve.size(); i-- > 0;) {
            running = std::max(running, cls.curve[i].precision);
            env[i] = running;
        }
        double ap = 0.0, prev_recall = 0.0;
        for (std::size_t i = 0; i < cls.curve.size(); ++i) {
            ap += (cls.curve[i].recall - prev_recall) * env[i];
            prev_recall = cls.curve[i].recall;
        }
        cls.ap = ap;
        report.per_class.push_back(std::move(cls));
    }

    double sum = 0.0;
    for (const auto& cls : report.per_class) sum += cls.ap;
    report.map = sum / static_cast<double>(report.per_class.size());
    return report;
}

}  // namespace vllfl
