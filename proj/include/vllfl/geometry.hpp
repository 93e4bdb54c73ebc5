#pragma once

#include <algorithm>
#include <array>
#include <cmath>

#include "vllfl/errors.hpp"

namespace vllfl {

// Axis-aligned box as center + extents, all in unit-square coordinates
// for scene boxes (the math itself works for any finite coordinates).
struct BoxCxCyWH {
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;

    double x1() const { return cx - 0.5 * w; }
    double x2() const { return cx + 0.5 * w; }
    double y1() const { return cy - 0.5 * h; }
    double y2() const { return cy + 0.5 * h; }
    double area() const { return w * h; }
};

inline void check_box(const BoxCxCyWH& b, const char* who) {
    if (!(b.w > 0.0) || !(b.h > 0.0) || !std::isfinite(b.cx) || !std::isfinite(b.cy) ||
        !std::isfinite(b.w) || !std::isfinite(b.h)) {
        throw domain_error(std::string(who) + ": degenerate box");
    }
}

inline double iou(const BoxCxCyWH& a, const BoxCxCyWH& b) {
    check_box(a, "iou");
    check_box(b, "iou");
    const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
    const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    return inter / (a.area() + b.area() - inter);
}

// Generalized IoU: iou - (enclosing - union) / enclosing, in (-1, 1].
inline double giou(const BoxCxCyWH& a, const BoxCxCyWH& b) {
    check_box(a, "giou");
    check_box(b, "giou");
    const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
    const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
    const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
    const double uni = a.area() + b.area() - inter;
    const double ew = std::max(a.x2(), b.x2()) - std::min(a.x1(), b.x1());
    const double eh = std::max(a.y2(), b.y2()) - std::min(a.y1(), b.y1());
    const double enc = ew * eh;
    return inter / uni - (enc - uni) / enc;
}

inline double giou_loss(const BoxCxCyWH& a, const BoxCxCyWH& b) { return 1.0 - giou(a, b); }

// Mean absolute error over the four box coordinates.
inline double l1_box(const BoxCxCyWH& a, const BoxCxCyWH& b) {
    return (std::abs(a.cx - b.cx) + std::abs(a.cy - b.cy) +
            std::abs(a.w - b.w) + std::abs(a.h - b.h)) / 4.0;
}

// Gradient of l1_box with respect to the first box, as (cx, cy, w, h).
inline std::array<double, 4> l1_box_grad(const BoxCxCyWH& a, const BoxCxCyWH& b) {
    auto sgn = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
    return {sgn(a.cx - b.cx) / 4.0, sgn(a.cy - b.cy) / 4.0,
            sgn(a.w - b.w) / 4.0, sgn(a.h - b.h) / 4.0};
}

// Gradient of giou(a, b) with respect to a, as (cx, cy, w, h).
// Piecewise-smooth; at ties of the min/max corners the subgradient of the
// first branch is used.
inline std::array<double, 4> giou_grad(const BoxCxCyWH& a, const BoxCxCyWH& b) {
    check_box(a, "giou_grad");
    check_box(b, "giou_grad");
    const double ax1 = a.x1(), ax2 = a.x2(), ay1 = a.y1(), ay2 = a.y2();
    const double bx1 = b.x1(), bx2 = b.x2(), by1 = b.y1(), by2 = b.y2();

    const double iw = std::min(ax2, bx2) - std::max(ax1, bx1);
    const double ih = std::min(ay2, by2) - std::max(ay1, by1);
    const bool overlap = iw > 0.0 && ih > 0.0;
    const double inter = overlap ? iw * ih : 0.0;
    const double uni = a.area() + b.area() - inter;
    const double ew = std::max(ax2, bx2) - std::min(ax1, bx1);
    const double eh = std::max(ay2, by2) - std::min(ay1, by1);
    const double enc = ew * eh;

    // d(inter)/d corners of a
    double di_ax1 = 0.0, di_ax2 = 0.0, di_ay1 = 0.0, di_ay2 = 0.0;
    if (overlap) {
        if (ax1 > bx1) di_ax1 = -ih;
        if (ax2 < bx2) di_ax2 = ih;
        if (ay1 > by1) di_ay1 = -iw;
        if (ay2 < by2) di_ay2 = iw;
    }
    // d(area_a)/d corners
    const double aw = ax2 - ax1, ah = ay2 - ay1;
    const double da_ax1 = -ah, da_ax2 = ah, da_ay1 = -aw, da_ay2 = aw;
    // d(enclosing)/d corners
    double de_ax1 = 0.0, de_ax2 = 0.0, de_ay1 = 0.0, de_ay2 = 0.0;
    if (ax1 < bx1) de_ax1 = -eh;
    if (ax2 > bx2) de_ax2 = eh;
    if (ay1 < by1) de_ay1 = -ew;
    if (ay2 > by2) de_ay2 = ew;

    // giou = inter/uni + uni/enc - 1, with d(uni) = d(area_a) - d(inter)
    auto corner_grad = [&](double di, double da, double de) {
        const double du = da - di;
        return (di * uni - inter * du) / (uni * uni) + (du * enc - uni * de) / (enc * enc);
    };
    const double gx1 = corner_grad(di_ax1, da_ax1, de_ax1);
    const double gx2 = corner_grad(di_ax2, da_ax2, de_ax2);
    const double gy1 = corner_grad(di_ay1, da_ay1, de_ay1);
    const double gy2 = corner_grad(di_ay2, da_ay2, de_ay2);

    // Chain to (cx, cy, w, h): x1 = cx - w/2, x2 = cx + w/2.
    return {gx1 + gx2, gy1 + gy2, 0.5 * (gx2 - gx1), 0.5 * (gy2 - gy1)};
}

}  // namespace vllfl
