#include "hformer/weather.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "hformer/errors.hpp"
#include "hformer/ops.hpp"

namespace hformer {

namespace {

void check_clean(const Tensor& clean, const char* op) {
    if (clean.rank() != 3 || clean.dim(0) != 3) {
        throw ShapeError(std::string(op) + ": expected a [3,H,W] clean image, got " +
                         shape_str(clean.shape()));
    }
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

} // namespace

std::string weather_kind_name(WeatherKind kind) {
    switch (kind) {
        case WeatherKind::Haze: return "haze";
        case WeatherKind::Rain: return "rain";
        case WeatherKind::Snow: return "snow";
        case WeatherKind::RainHaze: return "rain+haze";
    }
    throw ConfigError("unknown weather kind");
}

WeatherKind weather_kind_from_name(const std::string& name) {
    if (name == "haze") return WeatherKind::Haze;
    if (name == "rain") return WeatherKind::Rain;
    if (name == "snow") return WeatherKind::Snow;
    if (name == "rain+haze" || name == "rainhaze") return WeatherKind::RainHaze;
    throw DataError("unknown weather kind: " + name);
}

Tensor smooth_noise(int64_t h, int64_t w, int64_t cell, Rng& rng) {
    if (cell < 1) cell = 1;
    const int64_t gh = (h - 1) / cell + 2;
    const int64_t gw = (w - 1) / cell + 2;
    std::vector<double> lattice(static_cast<size_t>(gh * gw));
    for (double& v : lattice) v = rng.uniform();
    Tensor out = Tensor::zeros({h, w});
    double* o = out.mutable_data().data();
    for (int64_t y = 0; y < h; ++y) {
        const int64_t ny = y / cell;
        const double fy = static_cast<double>(y - ny * cell) / static_cast<double>(cell);
        for (int64_t x = 0; x < w; ++x) {
            const int64_t nx = x / cell;
            const double fx = static_cast<double>(x - nx * cell) / static_cast<double>(cell);
            const double v00 = lattice[static_cast<size_t>(ny * gw + nx)];
            const double v01 = lattice[static_cast<size_t>(ny * gw + nx + 1)];
            const double v10 = lattice[static_cast<size_t>((ny + 1) * gw + nx)];
            const double v11 = lattice[static_cast<size_t>((ny + 1) * gw + nx + 1)];
            o[y * w + x] = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) +
                           fy * ((1.0 - fx) * v10 + fx * v11);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Haze
// ---------------------------------------------------------------------------

ImagePair synth_haze(const Tensor& clean, const HazeParams& p) {
    check_clean(clean, "synth_haze");
    if (p.beta <= 0.0) throw DataError("synth_haze: beta must be positive");
    const int64_t h = clean.dim(1), w = clean.dim(2);
    if (!p.depth.defined() || p.depth.rank() != 2 || p.depth.dim(0) != h || p.depth.dim(1) != w) {
        throw ShapeError("synth_haze: depth map must be [H,W] matching the image");
    }
    Tensor out = Tensor::zeros(clean.shape());
    const double* j = clean.data().data();
    const double* d = p.depth.data().data();
    double* o = out.mutable_data().data();
    const int64_t plane = h * w;
    for (int64_t pix = 0; pix < plane; ++pix) {
        const double t = std::exp(-p.beta * d[pix]);
        const double air = p.a * (1.0 - t);
        for (int64_t c = 0; c < 3; ++c) o[c * plane + pix] = j[c * plane + pix] * t + air;
    }
    ImagePair pair;
    pair.clean = clean;
    pair.degraded = clamp01(out);
    pair.kind = WeatherKind::Haze;
    pair.params = "a:" + fmt(p.a) + ";beta:" + fmt(p.beta);
    return pair;
}

HazeParams make_haze_params(int64_t h, int64_t w, Rng& rng) {
    HazeParams p;
    p.a = rng.uniform(0.7, 0.95);
    p.beta = rng.uniform(0.8, 1.8);
    const double dmax = rng.uniform(0.8, 1.2);
    p.depth = smooth_noise(h, w, std::max<int64_t>(h / 4, 1), rng);
    for (double& v : p.depth.mutable_data()) v *= dmax;
    return p;
}

// ---------------------------------------------------------------------------
// Rain
// ---------------------------------------------------------------------------

Tensor render_rain_layer(int64_t h, int64_t w, const RainLayer& layer, Rng& rng) {
    Tensor s = Tensor::zeros({h, w});
    double* sp = s.mutable_data().data();
    const int64_t count = std::max<int64_t>(
        1, std::llround(layer.density * static_cast<double>(h * w) / (layer.length * 8.0)));
    // Tapered ends approximate a 1-D Gaussian blur along the streak axis;
    // interior samples keep the exact layer intensity.
    constexpr int kTaper = 2;
    constexpr double kSigma = 1.0;
    double kernel[2 * kTaper + 1];
    double ksum = 0.0;
    for (int i = -kTaper; i <= kTaper; ++i) {
        kernel[i + kTaper] = std::exp(-0.5 * (i * i) / (kSigma * kSigma));
        ksum += kernel[i + kTaper];
    }
    for (double& k : kernel) k /= ksum;

    for (int64_t n = 0; n < count; ++n) {
        const double cx = rng.uniform(0.0, static_cast<double>(w));
        const double cy = rng.uniform(0.0, static_cast<double>(h));
        const double ang = (layer.angle_deg + rng.uniform(-3.0, 3.0)) *
                           std::numbers::pi / 180.0;
        const double dx = std::cos(ang);
        const double dy = std::sin(ang);
        const int64_t len = std::max<int64_t>(2, std::llround(layer.length * rng.uniform(0.8, 1.2)));
        for (int64_t t = 0; t < len; ++t) {
            const double along = static_cast<double>(t) - 0.5 * static_cast<double>(len - 1);
            const int64_t px = std::llround(cx + along * dx);
            const int64_t py = std::llround(cy + along * dy);
            if (px < 0 || px >= w || py < 0 || py >= h) continue;
            double profile = 1.0;
            if (t < kTaper || t >= len - kTaper) {
                profile = 0.0;
                for (int i = -kTaper; i <= kTaper; ++i) {
                    const int64_t u = t + i;
                    if (u >= 0 && u < len) profile += kernel[i + kTaper];
                }
            }
            const double v = layer.intensity * profile;
            double& cellv = sp[py * w + px];
            if (v > cellv) cellv = v;
        }
    }
    return s;
}

ImagePair synth_rain(const Tensor& clean, const RainParams& p) {
    check_clean(clean, "synth_rain");
    if (p.layers.empty()) throw DataError("synth_rain: at least one streak layer required");
    const int64_t h = clean.dim(1), w = clean.dim(2), plane = h * w;
    Tensor total = Tensor::zeros({h, w});
    double* tp = total.mutable_data().data();
    for (size_t i = 0; i < p.layers.size(); ++i) {
        Rng layer_rng(p.seed + 0x9e3779b9ULL * (i + 1));
        const Tensor s = render_rain_layer(h, w, p.layers[i], layer_rng);
        const double* spd = s.data().data();
        for (int64_t pix = 0; pix < plane; ++pix) tp[pix] += spd[pix];
    }
    Tensor out = Tensor::zeros(clean.shape());
    const double* j = clean.data().data();
    double* o = out.mutable_data().data();
    for (int64_t c = 0; c < 3; ++c) {
        for (int64_t pix = 0; pix < plane; ++pix) {
            o[c * plane + pix] = j[c * plane + pix] + tp[pix];
        }
    }
    ImagePair pair;
    pair.clean = clean;
    pair.degraded = clamp01(out);
    pair.kind = WeatherKind::Rain;
    pair.params = "layers:" + std::to_string(p.layers.size()) +
                  (p.layers.empty() ? "" : ";angle:" + fmt(p.layers[0].angle_deg) +
                                               ";intensity:" + fmt(p.layers[0].intensity));
    return pair;
}

RainParams make_rain_params(Rng& rng) {
    RainParams p;
    const double base_angle = rng.uniform(60.0, 110.0);
    const size_t layers = 2 + static_cast<size_t>(rng.uniform_int(2));
    for (size_t i = 0; i < layers; ++i) {
        RainLayer layer;
        layer.angle_deg = base_angle + rng.uniform(-4.0, 4.0);
        layer.length = rng.uniform(8.0, 16.0);
        layer.density = rng.uniform(0.25, 0.55);
        layer.intensity = rng.uniform(0.35, 0.75);
        p.layers.push_back(layer);
    }
    p.seed = rng.fork_seed();
    return p;
}

// ---------------------------------------------------------------------------
// Snow
// ---------------------------------------------------------------------------

ImagePair synth_snow(const Tensor& clean, const SnowParams& p) {
    check_clean(clean, "synth_snow");
    const int64_t h = clean.dim(1), w = clean.dim(2), plane = h * w;
    auto check_map = [&](const Tensor& m, const char* name) {
        if (!m.defined() || m.rank() != 2 || m.dim(0) != h || m.dim(1) != w) {
            throw ShapeError(std::string("synth_snow: ") + name + " must be [H,W]");
        }
    };
    check_map(p.t_map, "T");
    check_map(p.r_mask, "R");
    check_map(p.z_mask, "Z");
    if (!p.c_map.defined() || p.c_map.shape() != clean.shape()) {
        throw ShapeError("synth_snow: C must match the image shape");
    }
    for (double v : p.r_mask.data()) {
        if (v != 0.0 && v != 1.0) throw DataError("synth_snow: R mask must be binary");
    }
    for (double v : p.t_map.data()) {
        if (v <= 0.0 || v > 1.0) throw DataError("synth_snow: T must lie in (0,1]");
    }
    Tensor out = Tensor::zeros(clean.shape());
    const double* j = clean.data().data();
    const double* tm = p.t_map.data().data();
    const double* rm = p.r_mask.data().data();
    const double* zm = p.z_mask.data().data();
    const double* cm = p.c_map.data().data();
    double* o = out.mutable_data().data();
    for (int64_t pix = 0; pix < plane; ++pix) {
        const double zr = zm[pix] * rm[pix];
        const double t = tm[pix];
        const double air = p.a * (1.0 - t);
        for (int64_t c = 0; c < 3; ++c) {
            const int64_t at = c * plane + pix;
            const double k = j[at] * (1.0 - zr) + cm[at] * zr;
            o[at] = k * t + air;
        }
    }
    ImagePair pair;
    pair.clean = clean;
    pair.degraded = clamp01(out);
    pair.kind = WeatherKind::Snow;
    double coverage = 0.0;
    for (double v : p.r_mask.data()) coverage += v;
    coverage /= static_cast<double>(plane);
    pair.params = "a:" + fmt(p.a) + ";cover:" + fmt(coverage);
    return pair;
}

SnowParams make_snow_params(int64_t h, int64_t w, Rng& rng) {
    SnowParams p;
    p.a = rng.uniform(0.7, 0.95);
    p.t_map = smooth_noise(h, w, std::max<int64_t>(h / 4, 1), rng);
    for (double& v : p.t_map.mutable_data()) v = 0.55 + 0.4 * v;
    const Tensor flake_noise = smooth_noise(h, w, 2, rng);
    p.r_mask = Tensor::zeros({h, w});
    {
        const double* f = flake_noise.data().data();
        double* r = p.r_mask.mutable_data().data();
        for (int64_t i = 0; i < h * w; ++i) r[i] = f[i] > 0.72 ? 1.0 : 0.0;
    }
    p.z_mask = smooth_noise(h, w, 4, rng);
    for (double& v : p.z_mask.mutable_data()) v = 0.5 + 0.5 * v;
    p.c_map = Tensor::zeros({3, h, w});
    for (double& v : p.c_map.mutable_data()) v = rng.uniform(0.85, 1.0);
    return p;
}

// ---------------------------------------------------------------------------
// Composition and datasets
// ---------------------------------------------------------------------------

ImagePair synth_rain_haze(const Tensor& clean, const RainParams& rain, const HazeParams& haze) {
    // Haze first: near-camera streaks are barely attenuated by the medium.
    const ImagePair hazed = synth_haze(clean, haze);
    ImagePair pair = synth_rain(hazed.degraded, rain);
    pair.clean = clean;
    pair.kind = WeatherKind::RainHaze;
    pair.params = "haze[" + hazed.params + "];rain[" + pair.params + "]";
    return pair;
}

Tensor make_clean_scene(int64_t size, Rng& rng) {
    const int64_t h = size, w = size, plane = h * w;
    Tensor img = Tensor::zeros({3, h, w});
    double* o = img.mutable_data().data();

    // Two-color gradient background along a random direction.
    double c0[3], c1[3];
    for (int i = 0; i < 3; ++i) {
        c0[i] = rng.uniform();
        c1[i] = rng.uniform();
    }
    const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double gx = std::cos(phi), gy = std::sin(phi);
    const double span = std::abs(gx) * static_cast<double>(w - 1) +
                        std::abs(gy) * static_cast<double>(h - 1);
    const double base = std::min(0.0, gx * static_cast<double>(w - 1)) +
                        std::min(0.0, gy * static_cast<double>(h - 1));
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            const double g = span > 0.0
                                 ? (gx * static_cast<double>(x) + gy * static_cast<double>(y) -
                                    base) / span
                                 : 0.5;
            for (int64_t c = 0; c < 3; ++c) {
                o[c * plane + y * w + x] = (1.0 - g) * c0[c] + g * c1[c];
            }
        }
    }

    // A handful of solid shapes.
    const int64_t shapes = 2 + rng.uniform_int(4);
    for (int64_t s = 0; s < shapes; ++s) {
        double col[3];
        for (int i = 0; i < 3; ++i) col[i] = rng.uniform();
        const bool circle = rng.uniform() < 0.5;
        const double cx = rng.uniform(0.0, static_cast<double>(w));
        const double cy = rng.uniform(0.0, static_cast<double>(h));
        const double rx = rng.uniform(static_cast<double>(size) / 10.0,
                                      static_cast<double>(size) / 3.0);
        const double ry = circle ? rx
                                 : rng.uniform(static_cast<double>(size) / 10.0,
                                               static_cast<double>(size) / 3.0);
        for (int64_t y = 0; y < h; ++y) {
            for (int64_t x = 0; x < w; ++x) {
                const double ddx = (static_cast<double>(x) - cx) / rx;
                const double ddy = (static_cast<double>(y) - cy) / ry;
                const bool inside = circle ? (ddx * ddx + ddy * ddy <= 1.0)
                                           : (std::abs(ddx) <= 1.0 && std::abs(ddy) <= 1.0);
                if (inside) {
                    for (int64_t c = 0; c < 3; ++c) o[c * plane + y * w + x] = col[c];
                }
            }
        }
    }

    // Mild shared texture.
    const Tensor tex = smooth_noise(h, w, 4, rng);
    const double* tp = tex.data().data();
    for (int64_t c = 0; c < 3; ++c) {
        for (int64_t pix = 0; pix < plane; ++pix) {
            o[c * plane + pix] += 0.08 * (tp[pix] - 0.5);
        }
    }
    return clamp01(img);
}

std::vector<ImagePair> make_dataset(int64_t count, int64_t size,
                                    const std::map<std::string, double>& mix, uint64_t seed) {
    if (count < 0) throw DataError("make_dataset: negative count");
    std::vector<WeatherKind> kinds;
    std::vector<double> weights;
    for (const auto& [name, weight] : mix) {
        if (weight < 0.0) throw DataError("make_dataset: negative weight for " + name);
        if (weight == 0.0) continue;
        kinds.push_back(weather_kind_from_name(name));
        weights.push_back(weight);
    }
    if (kinds.empty()) throw DataError("make_dataset: mix selects no weather kinds");

    Rng master(seed);
    std::vector<ImagePair> pairs;
    pairs.reserve(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) {
        const WeatherKind kind = kinds[master.weighted_choice(weights)];
        const uint64_t sample_seed = master.fork_seed();
        Rng rng(sample_seed);
        const Tensor clean = make_clean_scene(size, rng);
        ImagePair pair;
        switch (kind) {
            case WeatherKind::Haze:
                pair = synth_haze(clean, make_haze_params(size, size, rng));
                break;
            case WeatherKind::Rain:
                pair = synth_rain(clean, make_rain_params(rng));
                break;
            case WeatherKind::Snow:
                pair = synth_snow(clean, make_snow_params(size, size, rng));
                break;
            case WeatherKind::RainHaze: {
                const HazeParams hp = make_haze_params(size, size, rng);
                pair = synth_rain_haze(clean, make_rain_params(rng), hp);
                break;
            }
        }
        pair.seed = sample_seed;
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

} // namespace hformer
