#include "mssm/worlds/reacher.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mssm::worlds {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kViewHalf = 1.2;  // world units covered by half the frame
constexpr double kArmLen1 = 0.55, kArmLen2 = 0.45;

double wrap_angle(double a) {
    while (a > kPi) a -= 2.0 * kPi;
    while (a <= -kPi) a += 2.0 * kPi;
    return a;
}

struct Point {
    double x, y;
};

Point fingertip(const ReacherWorldState& s) {
    const double x1 = kArmLen1 * std::cos(s.theta1);
    const double y1 = kArmLen1 * std::sin(s.theta1);
    return {x1 + kArmLen2 * std::cos(s.theta1 + s.theta2),
            y1 + kArmLen2 * std::sin(s.theta1 + s.theta2)};
}

// world (x,y) -> pixel coordinates in [0, hw)
Point to_pixel(double x, double y, std::int64_t hw) {
    const double half = static_cast<double>(hw) / 2.0;
    return {(x / kViewHalf) * half + half, (y / kViewHalf) * half + half};
}

void put_pixel(Tensor& img, Tensor& cover, std::int64_t px, std::int64_t py, double r, double g,
               double b) {
    const std::int64_t hw = img.dim(1);
    if (px < 0 || py < 0 || px >= hw || py >= hw) return;
    const std::int64_t idx = py * hw + px;
    img[0 * hw * hw + idx] = r;
    img[1 * hw * hw + idx] = g;
    img[2 * hw * hw + idx] = b;
    cover[idx] = 1.0;
}

void draw_disk(Tensor& img, Tensor& cover, Point c, double radius_px, double r, double g,
               double b) {
    const std::int64_t hw = img.dim(1);
    const std::int64_t lo_x = static_cast<std::int64_t>(std::floor(c.x - radius_px));
    const std::int64_t hi_x = static_cast<std::int64_t>(std::ceil(c.x + radius_px));
    const std::int64_t lo_y = static_cast<std::int64_t>(std::floor(c.y - radius_px));
    const std::int64_t hi_y = static_cast<std::int64_t>(std::ceil(c.y + radius_px));
    for (std::int64_t py = std::max<std::int64_t>(0, lo_y); py <= std::min(hw - 1, hi_y); ++py)
        for (std::int64_t px = std::max<std::int64_t>(0, lo_x); px <= std::min(hw - 1, hi_x);
             ++px) {
            const double dx = (px + 0.5) - c.x, dy = (py + 0.5) - c.y;
            if (dx * dx + dy * dy <= radius_px * radius_px)
                put_pixel(img, cover, px, py, r, g, b);
        }
}

void draw_segment(Tensor& img, Tensor& cover, Point a, Point b, double width_px, double r,
                  double g, double bl) {
    const double len = std::hypot(b.x - a.x, b.y - a.y);
    const int steps = std::max(2, static_cast<int>(std::ceil(len * 2.0)));
    for (int i = 0; i <= steps; ++i) {
        const double f = static_cast<double>(i) / steps;
        draw_disk(img, cover, {a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)}, width_px / 2.0, r,
                  g, bl);
    }
}

}  // namespace

Variant variant_from_string(const std::string& s) {
    if (s == "clean") return Variant::Clean;
    if (s == "distractor") return Variant::Distractor;
    if (s == "occlusion") return Variant::Occlusion;
    throw std::invalid_argument("unknown world variant: " + s);
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::Clean: return "clean";
        case Variant::Distractor: return "distractor";
        case Variant::Occlusion: return "occlusion";
    }
    return "?";
}

TwoSensorReacher::TwoSensorReacher(WorldConfig cfg) : cfg_(cfg) {
    if (cfg_.render_hw <= cfg_.image_hw)
        throw std::invalid_argument("render size must exceed crop size");
}

ObservationBundle TwoSensorReacher::reset(std::uint64_t seed) {
    Rng rng(Rng::mix(seed, 0x5eedULL));
    state_ = ReacherWorldState{};
    state_.theta1 = rng.uniform(-kPi, kPi);
    state_.theta2 = rng.uniform(-kPi, kPi);
    // target anywhere reachable, away from the base
    const double ang = rng.uniform(-kPi, kPi);
    const double rad = rng.uniform(0.35, 0.95);
    state_.target_x = rad * std::cos(ang);
    state_.target_y = rad * std::sin(ang);

    if (cfg_.variant == Variant::Occlusion) {
        state_.occluder.x = rng.uniform(0.2, 0.8);
        state_.occluder.y = rng.uniform(0.2, 0.8);
        const double dir = rng.uniform(0.0, 2.0 * kPi);
        state_.occluder.vx = cfg_.occluder_speed * std::cos(dir);
        state_.occluder.vy = cfg_.occluder_speed * std::sin(dir);
        state_.occluder.radius = cfg_.occluder_radius;
    }
    if (cfg_.variant == Variant::Distractor) {
        state_.distractor_seed = seed;
        Rng drng(Rng::mix(seed, 0xd157ULL));
        for (int k = 0; k < DistractorField::kBlobs; ++k) {
            state_.distractor.cx[k] = drng.uniform(0.2, 0.8);
            state_.distractor.cy[k] = drng.uniform(0.2, 0.8);
            state_.distractor.ax[k] = drng.uniform(0.1, 0.3);
            state_.distractor.ay[k] = drng.uniform(0.1, 0.3);
            state_.distractor.wx[k] = drng.uniform(0.02, 0.08);
            state_.distractor.wy[k] = drng.uniform(0.02, 0.08);
            state_.distractor.phase[k] = drng.uniform(0.0, 2.0 * kPi);
        }
    }
    state_.step_index = 0;
    return observe();
}

StepResult TwoSensorReacher::step(const Tensor& action) {
    if (action.numel() != 2) throw std::invalid_argument("reacher expects a 2-d action");
    double reward_acc = 0.0;
    for (std::int64_t rep = 0; rep < cfg_.action_repeat; ++rep) {
        const double a1 = std::clamp(action[0], -1.0, 1.0);
        const double a2 = std::clamp(action[1], -1.0, 1.0);
        state_.omega1 += cfg_.dt * (cfg_.torque_gain * a1 - cfg_.damping * state_.omega1);
        state_.omega2 += cfg_.dt * (cfg_.torque_gain * a2 - cfg_.damping * state_.omega2);
        state_.omega1 = std::clamp(state_.omega1, -cfg_.vel_cap, cfg_.vel_cap);
        state_.omega2 = std::clamp(state_.omega2, -cfg_.vel_cap, cfg_.vel_cap);
        state_.theta1 = wrap_angle(state_.theta1 + cfg_.dt * state_.omega1);
        state_.theta2 = wrap_angle(state_.theta2 + cfg_.dt * state_.omega2);

        const Point ft = fingertip(state_);
        const double dx = ft.x - state_.target_x, dy = ft.y - state_.target_y;
        reward_acc +=
            std::exp(-(dx * dx + dy * dy) / (cfg_.reward_sigma * cfg_.reward_sigma));

        // occluder drifts and bounces off the frame
        Occluder& oc = state_.occluder;
        if (oc.radius > 0.0) {
            oc.x += oc.vx;
            oc.y += oc.vy;
            if (oc.x < 0.0 || oc.x > 1.0) {
                oc.vx = -oc.vx;
                oc.x = std::clamp(oc.x, 0.0, 1.0);
            }
            if (oc.y < 0.0 || oc.y > 1.0) {
                oc.vy = -oc.vy;
                oc.y = std::clamp(oc.y, 0.0, 1.0);
            }
        }
        state_.step_index += 1;
    }
    StepResult res;
    res.obs = observe();
    res.reward = reward_acc;
    res.last = state_.step_index >= cfg_.episode_len * cfg_.action_repeat;
    return res;
}

double TwoSensorReacher::fingertip_distance() const {
    const Point ft = fingertip(state_);
    return std::hypot(ft.x - state_.target_x, ft.y - state_.target_y);
}

ObservationBundle TwoSensorReacher::observe() const {
    ObservationBundle out;
    if (!cfg_.single_sensor) {
        Tensor proprio({6});
        proprio[0] = std::cos(state_.theta1);
        proprio[1] = std::sin(state_.theta1);
        proprio[2] = std::cos(state_.theta2);
        proprio[3] = std::sin(state_.theta2);
        proprio[4] = state_.omega1;
        proprio[5] = state_.omega2;
        out.emplace("proprio", std::move(proprio));
    }
    out.emplace("image", render_image(state_, cfg_));
    return out;
}

Tensor TwoSensorReacher::render_image(const ReacherWorldState& s, const WorldConfig& cfg) {
    const std::int64_t hw = cfg.render_hw;
    Tensor img({3, hw, hw});
    Tensor cover({hw, hw});

    const Point base = to_pixel(0, 0, hw);
    const double x1 = kArmLen1 * std::cos(s.theta1);
    const double y1 = kArmLen1 * std::sin(s.theta1);
    const Point elbow = to_pixel(x1, y1, hw);
    const Point ftw = to_pixel(fingertip(s).x, fingertip(s).y, hw);
    const Point target = to_pixel(s.target_x, s.target_y, hw);

    const double unit_px = static_cast<double>(hw) / (2.0 * kViewHalf);
    // target first so the arm occludes it when crossing
    draw_disk(img, cover, target, 0.10 * unit_px, 0.1, 0.9, 0.1);
    draw_segment(img, cover, base, elbow, 0.08 * unit_px, 0.85, 0.85, 0.85);
    draw_segment(img, cover, elbow, ftw, 0.08 * unit_px, 0.7, 0.7, 0.9);
    draw_disk(img, cover, ftw, 0.05 * unit_px, 1.0, 0.4, 0.4);

    if (cfg.variant == Variant::Distractor)
        apply_distractor(img, cover, s.distractor, s.step_index);
    if (cfg.variant == Variant::Occlusion && s.occluder.radius > 0.0)
        apply_occlusion(img, s.occluder);
    return img;
}

void TwoSensorReacher::apply_occlusion(Tensor& image, const Occluder& occ) {
    if (occ.radius <= 0.0) return;
    const std::int64_t hw = image.dim(1);
    const double cx = occ.x * hw, cy = occ.y * hw;
    const double r_px = occ.radius * hw;
    for (std::int64_t py = 0; py < hw; ++py)
        for (std::int64_t px = 0; px < hw; ++px) {
            const double dx = (px + 0.5) - cx, dy = (py + 0.5) - cy;
            if (dx * dx + dy * dy <= r_px * r_px) {
                const std::int64_t idx = py * hw + px;
                image[0 * hw * hw + idx] = occ.shade;
                image[1 * hw * hw + idx] = occ.shade;
                image[2 * hw * hw + idx] = occ.shade;
            }
        }
}

void TwoSensorReacher::apply_distractor(Tensor& image, const Tensor& coverage,
                                        const DistractorField& field, std::int64_t step_index) {
    const std::int64_t hw = image.dim(1);
    const double t = static_cast<double>(step_index);
    double bx[DistractorField::kBlobs], by[DistractorField::kBlobs];
    for (int k = 0; k < DistractorField::kBlobs; ++k) {
        bx[k] = field.cx[k] + field.ax[k] * std::sin(field.wx[k] * t + field.phase[k]);
        by[k] = field.cy[k] + field.ay[k] * std::cos(field.wy[k] * t + field.phase[k]);
    }
    for (std::int64_t py = 0; py < hw; ++py)
        for (std::int64_t px = 0; px < hw; ++px) {
            const std::int64_t idx = py * hw + px;
            if (coverage[idx] > 0.0) continue;  // foreground stays intact
            const double x = (px + 0.5) / hw, y = (py + 0.5) / hw;
            double v0 = 0.0, v1 = 0.0;
            for (int k = 0; k < DistractorField::kBlobs; ++k) {
                const double dx = x - bx[k], dy = y - by[k];
                const double g = std::exp(-(dx * dx + dy * dy) /
                                          (2.0 * field.sigma * field.sigma));
                if (k % 2 == 0) v0 += g;
                else v1 += g;
            }
            image[0 * hw * hw + idx] = std::min(1.0, 0.15 + 0.8 * v0);
            image[2 * hw * hw + idx] = std::min(1.0, 0.15 + 0.8 * v1);
        }
}

Tensor center_crop(const Tensor& chw, std::int64_t crop_hw) {
    const std::int64_t c = chw.dim(0), hw = chw.dim(1);
    if (crop_hw > hw) throw std::invalid_argument("crop larger than source");
    const std::int64_t off = (hw - crop_hw) / 2;
    Tensor out({c, crop_hw, crop_hw});
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t y = 0; y < crop_hw; ++y)
            for (std::int64_t x = 0; x < crop_hw; ++x)
                out[(ch * crop_hw + y) * crop_hw + x] =
                    chw[(ch * hw + (y + off)) * hw + (x + off)];
    return out;
}

}  // namespace mssm::worlds
