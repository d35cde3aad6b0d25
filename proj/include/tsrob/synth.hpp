#pragma once

// Deterministic synthetic benchmark series: hourly electricity-style load
// (daily/weekly seasonality + AR noise, kW scale), noisy sine, and stable
// AR(p) processes. All generators are pure functions of their seed.

#include <cmath>
#include <numbers>
#include <random>

#include "tsrob/series.hpp"

namespace tsrob::synth {

// Stable AR(p) coefficients: roots placed in the disk of the given radius.
inline Vec random_stable_ar(std::size_t p, std::mt19937_64& rng, double max_radius = 0.9) {
    std::uniform_real_distribution<double> ur(0.25, max_radius);
    std::uniform_real_distribution<double> uth(0.15, std::numbers::pi - 0.15);
    // build the monic polynomial prod (z - r_i) with real/conjugate roots,
    // then phi_i are the negated non-leading coefficients:
    // z^p - phi_1 z^{p-1} - ... - phi_p
    std::vector<double> poly = { 1.0 };  // ascending from leading term
    std::size_t placed = 0;
    while (placed < p) {
        if (p - placed >= 2 && (rng() & 1)) {
            const double r = ur(rng), th = uth(rng);
            // (z^2 - 2 r cos th z + r^2)
            std::vector<double> np(poly.size() + 2, 0.0);
            for (std::size_t i = 0; i < poly.size(); ++i) {
                np[i] += poly[i];
                np[i + 1] += poly[i] * (-2.0 * r * std::cos(th));
                np[i + 2] += poly[i] * (r * r);
            }
            poly = np;
            placed += 2;
        } else {
            std::uniform_real_distribution<double> sgn(-1.0, 1.0);
            const double root = ur(rng) * (sgn(rng) >= 0 ? 1.0 : -1.0);
            std::vector<double> np(poly.size() + 1, 0.0);
            for (std::size_t i = 0; i < poly.size(); ++i) {
                np[i] += poly[i];
                np[i + 1] += poly[i] * (-root);
            }
            poly = np;
            placed += 1;
        }
    }
    Vec phi(p);
    for (std::size_t i = 1; i <= p; ++i) phi[i - 1] = -poly[i];
    return phi;
}

// AR(p) trajectory y_k = sum_i phi_i y_{k-i} + noise_std * n_k.
inline RawSeries ar_series(const Vec& phi, std::size_t length, std::uint64_t seed,
                           double noise_std = 0.0, double init_scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const std::size_t p = phi.size();
    RawSeries s;
    s.name = "ar" + std::to_string(p);
    s.values.reserve(length + p);
    Vec hist(p);
    for (double& v : hist) v = init_scale * gauss(rng);
    // warm-up so the trajectory forgets the arbitrary initial state
    const std::size_t burn = 8 * p + 50;
    for (std::size_t k = 0; k < burn + length; ++k) {
        double y = 0.0;
        for (std::size_t i = 0; i < p; ++i) y += phi[i] * hist[i];
        if (noise_std > 0.0) y += noise_std * gauss(rng);
        for (std::size_t i = p; i-- > 1;) hist[i] = hist[i - 1];
        if (p > 0) hist[0] = y;
        if (k >= burn) s.values.push_back(y);
    }
    return s;
}

// Noiseless AR needs a non-decaying start when the roots are stable; seed the
// history directly without burn-in so the transient itself is the signal.
inline RawSeries ar_series_noiseless(const Vec& phi, std::size_t length, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const std::size_t p = phi.size();
    RawSeries s;
    s.name = "ar" + std::to_string(p);
    Vec hist(p);
    for (double& v : hist) v = gauss(rng);
    for (std::size_t k = 0; k < length; ++k) {
        double y = 0.0;
        for (std::size_t i = 0; i < p; ++i) y += phi[i] * hist[i];
        for (std::size_t i = p; i-- > 1;) hist[i] = hist[i - 1];
        if (p > 0) hist[0] = y;
        s.values.push_back(y);
    }
    return s;
}

inline RawSeries noisy_sine(std::size_t length, std::uint64_t seed, double period = 24.0,
                            double noise_std = 0.08, double amplitude = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    RawSeries s;
    s.name = "sine";
    s.values.reserve(length);
    for (std::size_t k = 0; k < length; ++k) {
        const double t = static_cast<double>(k);
        s.values.push_back(amplitude * std::sin(2.0 * std::numbers::pi * t / period) +
                           noise_std * gauss(rng));
    }
    return s;
}

struct LoadProfileConfig {
    std::size_t length = 26304;  // 3 years of hourly samples
    double base_kw = 700.0;
    double daily_amp = 170.0;
    double daily_amp2 = 55.0;    // second harmonic sharpens the evening peak
    double weekly_dip = 90.0;    // weekend reduction
    double ar_phi = 0.65;
    double ar_innov_std = 34.0;
    double spike_prob = 0.002;
    double spike_kw = 160.0;
};

// Hourly electricity-consumption-style series in kW.
inline RawSeries load_profile(std::uint64_t seed, const LoadProfileConfig& cfg = {}) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    RawSeries s;
    s.name = "load_kw";
    s.frequency = "1H";
    s.values.reserve(cfg.length);
    double ar = 0.0;
    constexpr double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t k = 0; k < cfg.length; ++k) {
        const double hour = static_cast<double>(k % 24);
        const double dow = static_cast<double>((k / 24) % 7);
        double v = cfg.base_kw;
        v += cfg.daily_amp * std::sin(two_pi * (hour - 7.0) / 24.0);
        v += cfg.daily_amp2 * std::sin(two_pi * (hour - 17.5) / 12.0);
        if (dow >= 5.0) v -= cfg.weekly_dip;
        ar = cfg.ar_phi * ar + cfg.ar_innov_std * gauss(rng);
        v += ar;
        if (uni(rng) < cfg.spike_prob) v += cfg.spike_kw * (0.5 + uni(rng));
        s.values.push_back(v);
    }
    return s;
}

} // namespace tsrob::synth
