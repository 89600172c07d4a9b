#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace harvest {

/// Compensated (Kahan) accumulator; order-independent aggregation relies on
/// summing per-path results in index order with this.
class KahanSum {
  public:
    void add(double v) {
        double y = v - comp_;
        double t = sum_ + y;
        comp_ = (t - sum_) - y;
        sum_ = t;
    }
    double value() const { return sum_; }

  private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

/// FNV-1a 64-bit hash, used for config hashes and output checksums.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
    return fnv1a64(s.data(), s.size());
}

inline std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

/// n log-spaced points on [lo, hi], lo > 0.
inline std::vector<double> logspace(double lo, double hi, int n) {
    if (!(lo > 0.0) || !(hi > lo) || n < 2)
        throw std::invalid_argument("logspace: need 0 < lo < hi and n >= 2");
    std::vector<double> out(n);
    double llo = std::log(lo), lhi = std::log(hi);
    for (int i = 0; i < n; ++i)
        out[i] = std::exp(llo + (lhi - llo) * i / (n - 1));
    return out;
}

inline std::vector<double> linspace(double lo, double hi, int n) {
    if (n < 2) throw std::invalid_argument("linspace: n >= 2");
    std::vector<double> out(n);
    for (int i = 0; i < n; ++i)
        out[i] = lo + (hi - lo) * i / (n - 1);
    return out;
}

inline double mean(const std::vector<double>& v) {
    KahanSum s;
    for (double x : v) s.add(x);
    return v.empty() ? 0.0 : s.value() / double(v.size());
}

/// Across-sample standard error of the mean.
inline double stderr_of_mean(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = mean(v);
    KahanSum s;
    for (double x : v) s.add((x - m) * (x - m));
    return std::sqrt(s.value() / (double(v.size()) * double(v.size() - 1)));
}

inline double percentile(std::vector<double> v, double q) {
    if (v.empty()) throw std::invalid_argument("percentile of empty sample");
    std::sort(v.begin(), v.end());
    double pos = q * double(v.size() - 1);
    std::size_t i = static_cast<std::size_t>(pos);
    if (i + 1 >= v.size()) return v.back();
    double frac = pos - double(i);
    return v[i] * (1.0 - frac) + v[i + 1] * frac;
}

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return std::string(buf);
}

} // namespace harvest
