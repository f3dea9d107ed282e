#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "dipstop/image.hpp"

namespace testing_support {

inline double kFdStep = 1e-7;

inline dipstop::Image random_image(int h, int w, int c, std::uint64_t seed, double lo = 0.0, double hi = 1.0)
{
    dipstop::Image img(h, w, c);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : img.data()) v = dist(rng);
    return img;
}

struct SampleStats {
    double mean = 0.0;
    double stddev = 0.0;
    double std_error = 0.0;
};

inline SampleStats sample_stats(const std::vector<double>& xs)
{
    SampleStats s;
    const double n = static_cast<double>(xs.size());
    s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    double acc = 0.0;
    for (double x : xs) acc += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(acc / (n - 1.0));
    s.std_error = s.stddev / std::sqrt(n);
    return s;
}

inline double median(std::vector<double> xs)
{
    std::sort(xs.begin(), xs.end());
    const std::size_t n = xs.size();
    return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

}  // namespace testing_support
