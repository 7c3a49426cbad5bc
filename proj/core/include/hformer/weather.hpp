#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hformer/rng.hpp"
#include "hformer/tensor.hpp"

namespace hformer {

enum class WeatherKind { Haze, Rain, Snow, RainHaze };

std::string weather_kind_name(WeatherKind kind);
WeatherKind weather_kind_from_name(const std::string& name);

// Atmospheric scattering: I = J*t + A*(1-t) with t = exp(-beta * depth).
struct HazeParams {
    double a = 0.8;     // global atmospheric light in [0,1]
    double beta = 1.0;  // scattering coefficient, > 0
    Tensor depth;       // [H,W], nonnegative pseudo-depths
};

struct RainLayer {
    double angle_deg = 75.0; // streak direction, degrees from horizontal
    double length = 12.0;    // streak length in pixels
    double density = 0.3;    // expected streak coverage knob in [0,1]
    double intensity = 0.6;  // streak brightness in [0,1]
};

struct RainParams {
    std::vector<RainLayer> layers;
    uint64_t seed = 0;
};

// Snow composite: K = J*(1 - Z*R) + C*Z*R, then I = K*T + A*(1-T).
struct SnowParams {
    Tensor t_map;  // [H,W] transmission in (0,1]
    double a = 0.8;
    Tensor r_mask; // [H,W] binary snow locations
    Tensor z_mask; // [H,W] snow opacity in [0,1]
    Tensor c_map;  // [3,H,W] chromatic aberration around white
};

struct ImagePair {
    Tensor clean;    // [3,H,W] in [0,1]
    Tensor degraded; // [3,H,W] in [0,1]
    WeatherKind kind = WeatherKind::Haze;
    uint64_t seed = 0;
    std::string params; // key:value;key:value summary
};

// Seeded smooth value noise in [0,1], bilinearly interpolated from a coarse
// lattice with `cell` pixels per lattice step.
Tensor smooth_noise(int64_t h, int64_t w, int64_t cell, Rng& rng);

// Single streak-layer mask [H,W] with values in [0, intensity]; interior
// streak samples carry exactly the layer intensity, ends taper off.
Tensor render_rain_layer(int64_t h, int64_t w, const RainLayer& layer, Rng& rng);

// Exact physical compositions (no clamping surprises beyond [0,1]).
ImagePair synth_haze(const Tensor& clean, const HazeParams& p);
ImagePair synth_rain(const Tensor& clean, const RainParams& p);
ImagePair synth_snow(const Tensor& clean, const SnowParams& p);
ImagePair synth_rain_haze(const Tensor& clean, const RainParams& rain, const HazeParams& haze);

// Seeded default parameter draws at moderate degradation strength.
HazeParams make_haze_params(int64_t h, int64_t w, Rng& rng);
RainParams make_rain_params(Rng& rng);
SnowParams make_snow_params(int64_t h, int64_t w, Rng& rng);

// Seeded procedural clean scene: gradient background, solid shapes, mild
// texture noise; values in [0,1].
Tensor make_clean_scene(int64_t size, Rng& rng);

// Deterministic dataset synthesis; kinds drawn by the given weights.
std::vector<ImagePair> make_dataset(int64_t count, int64_t size,
                                    const std::map<std::string, double>& mix, uint64_t seed);

} // namespace hformer
