#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "mssm/rng.hpp"
#include "mssm/tensor.hpp"

namespace mssm::worlds {

// Observation bundle at one step: "proprio" -> [6] vector, "image" ->
// [3, render_hw, render_hw] grid in [0,1] (pre-crop).
using ObservationBundle = std::map<std::string, Tensor>;

enum class Variant { Clean, Distractor, Occlusion };
Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);

struct WorldConfig {
    Variant variant = Variant::Clean;
    std::int64_t image_hw = 32;    // model-facing crop size
    std::int64_t render_hw = 40;   // pre-crop render size
    std::int64_t episode_len = 100;
    std::int64_t action_repeat = 1;
    double dt = 0.15;
    double torque_gain = 2.0;
    double damping = 0.6;
    double vel_cap = 4.0;
    double reward_sigma = 0.35;    // in arm-reach units
    double occluder_radius = 0.34; // fraction of render width
    double occluder_speed = 0.02;  // image-widths per step
    bool single_sensor = false;    // image-only bundles when set
};

struct Occluder {
    double x = 0, y = 0;      // in [0,1] image coordinates
    double vx = 0, vy = 0;
    double radius = 0;        // in image widths
    double shade = 0.5;
};

struct DistractorField {
    // Sum of drifting Gaussian blobs, re-seeded each episode; a pure function
    // of the episode phase values and the step index.
    static constexpr int kBlobs = 3;
    double cx[kBlobs] = {0}, cy[kBlobs] = {0};
    double ax[kBlobs] = {0}, ay[kBlobs] = {0};
    double wx[kBlobs] = {0}, wy[kBlobs] = {0};
    double phase[kBlobs] = {0};
    double sigma = 0.12;
};

struct ReacherWorldState {
    double theta1 = 0, theta2 = 0;   // radians, wrapped to (-pi, pi]
    double omega1 = 0, omega2 = 0;
    double target_x = 0, target_y = 0;  // arm-reach units
    Occluder occluder;
    DistractorField distractor;
    std::uint64_t distractor_seed = 0;
    std::int64_t step_index = 0;
};

struct StepResult {
    ObservationBundle obs;
    double reward = 0;
    bool last = false;
};

// Deterministic two-joint arm with a target visible only in the image
// modality. (seed, action sequence) fully determines every observation.
class TwoSensorReacher {
public:
    explicit TwoSensorReacher(WorldConfig cfg);

    ObservationBundle reset(std::uint64_t seed);
    StepResult step(const Tensor& action);  // [2] torques in [-1,1]

    const WorldConfig& config() const { return cfg_; }
    const ReacherWorldState& state() const { return state_; }
    std::int64_t steps_taken() const { return state_.step_index; }
    double fingertip_distance() const;
    std::int64_t proprio_dim() const { return 6; }
    std::int64_t action_dim() const { return 2; }

    static Tensor render_image(const ReacherWorldState& s, const WorldConfig& cfg);
    static void apply_occlusion(Tensor& image, const Occluder& occ);
    static void apply_distractor(Tensor& image, const Tensor& coverage,
                                 const DistractorField& field, std::int64_t step_index);

private:
    WorldConfig cfg_;
    ReacherWorldState state_;
    ObservationBundle observe() const;
};

// Deterministic center crop shared by collection and evaluation paths.
Tensor center_crop(const Tensor& chw, std::int64_t crop_hw);

}  // namespace mssm::worlds
