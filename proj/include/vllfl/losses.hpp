#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "vllfl/errors.hpp"
#include "vllfl/geometry.hpp"
#include "vllfl/matching.hpp"
#include "vllfl/matrix.hpp"
#include "vllfl/surrogate.hpp"

namespace vllfl {

// Training objective: L1 box loss + GIoU loss over matched pairs, plus a
// dense binary cross-entropy consistency term over every (region, class)
// cell. total is always the exact sum of the three parts.
struct LossBreakdown {
    double l1 = 0.0;
    double giou = 0.0;
    double cons = 0.0;
    double total = 0.0;
};

// Numerically stable BCE of sigmoid(logit) against target in {0, 1}:
//   max(x, 0) - x t + log(1 + exp(-|x|))
inline double bce_with_logit(double x, double t) {
    return std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
}

// Mean BCE over all cells of the logit grid. Targets are 1 exactly at the
// (matched region, ground-truth label) cells given by the assignment and 0
// everywhere else. Also returns the exact gradient with respect to logits.
inline double consistency_loss(const Matrix& logits, const Assignment& assignment,
                               const std::vector<std::size_t>& gt_columns,
                               Matrix& d_logits) {
    const std::size_t n_cells = logits.rows * logits.cols;
    d_logits = Matrix(logits.rows, logits.cols);
    if (n_cells == 0) return 0.0;

    Matrix targets(logits.rows, logits.cols);
    for (const auto& [pred, gt] : assignment.pairs) {
        if (gt >= gt_columns.size() || gt_columns[gt] >= logits.cols || pred >= logits.rows) {
            throw domain_error("consistency_loss: label or index out of range");
        }
        targets(pred, gt_columns[gt]) = 1.0;
    }
    double loss = 0.0;
    for (std::size_t i = 0; i < n_cells; ++i) {
        const double x = logits.data[i];
        const double t = targets.data[i];
        loss += bce_with_logit(x, t);
        d_logits.data[i] = (sigmoid(x) - t) / static_cast<double>(n_cells);
    }
    return loss / static_cast<double>(n_cells);
}

// Matching cost for pairing region r with ground truth g, evaluated on the
// class column of g: score complement + L1 + GIoU complement, unit weights.
inline Matrix matching_cost(const DenseForward& fwd, const Scene& scene,
                            const std::vector<std::size_t>& gt_columns) {
    const std::size_t n_pred = scene.regions.size();
    const std::size_t n_gt = scene.ground_truth.size();
    const std::size_t n_c = fwd.logits.cols;
    Matrix cost(n_pred, n_gt);
    for (std::size_t g = 0; g < n_gt; ++g) {
        if (gt_columns[g] >= n_c) throw domain_error("matching_cost: label out of range");
        for (std::size_t r = 0; r < n_pred; ++r) {
            const std::size_t idx = r * n_c + gt_columns[g];
            cost(r, g) = (1.0 - sigmoid(fwd.logits(r, gt_columns[g]))) +
                         l1_box(fwd.boxes[idx], scene.ground_truth[g].box) +
                         giou_loss(fwd.boxes[idx], scene.ground_truth[g].box);
        }
    }
    return cost;
}

struct SceneLoss {
    LossBreakdown breakdown;
    Assignment assignment;
    Matrix d_logits;                           // n_regions x n_classes
    std::vector<std::array<double, 4>> d_boxes;  // per (region, class) pair
};

// Full per-scene loss. The assignment is recomputed here and treated as a
// constant of the gradient: box gradients flow only through matched pairs,
// the consistency gradient through every cell.
inline SceneLoss total_loss(const Scene& scene, const DenseForward& fwd,
                            const std::vector<std::size_t>& gt_columns) {
    const std::size_t n_r = scene.regions.size();
    const std::size_t n_c = fwd.logits.cols;
    if (fwd.logits.rows != n_r || fwd.boxes.size() != n_r * n_c ||
        gt_columns.size() != scene.ground_truth.size()) {
        throw shape_error("total_loss: forward output does not match scene");
    }

    SceneLoss out;
    out.d_boxes.assign(n_r * n_c, {0.0, 0.0, 0.0, 0.0});

    if (!scene.ground_truth.empty() && n_r > 0) {
        out.assignment = match(matching_cost(fwd, scene, gt_columns));
        const double n_pairs = static_cast<double>(out.assignment.pairs.size());
        for (const auto& [pred, gt] : out.assignment.pairs) {
            const std::size_t idx = pred * n_c + gt_columns[gt];
            const BoxCxCyWH& pb = fwd.boxes[idx];
            const BoxCxCyWH& gb = scene.ground_truth[gt].box;
            out.breakdown.l1 += l1_box(pb, gb) / n_pairs;
            out.breakdown.giou += giou_loss(pb, gb) / n_pairs;
            const auto gl1 = l1_box_grad(pb, gb);
            const auto ggiou = giou_grad(pb, gb);
            for (std::size_t k = 0; k < 4; ++k) {
                // d(l1)/dbox + d(1 - giou)/dbox, averaged over pairs
                out.d_boxes[idx][k] += (gl1[k] - ggiou[k]) / n_pairs;
            }
        }
    }
    out.breakdown.cons = consistency_loss(fwd.logits, out.assignment, gt_columns, out.d_logits);
    out.breakdown.total = out.breakdown.l1 + out.breakdown.giou + out.breakdown.cons;
    return out;
}

}  // namespace vllfl
