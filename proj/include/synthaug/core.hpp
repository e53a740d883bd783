#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace synthaug {

/** Raised when a precondition on caller-supplied arguments fails. */
struct InvalidArgument : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/** Raised when a text record or CSV cell cannot be parsed; carries the record index. */
struct ParseError : std::runtime_error {
    std::size_t index;
    ParseError(std::size_t idx, const std::string& msg)
        : std::runtime_error("record " + std::to_string(idx) + ": " + msg), index(idx) {}
};

/** Raised when a numerical routine cannot honour its contract (singular matrix, divergence). */
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& msg) {
    if (!ok) throw InvalidArgument(msg);
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

/** splitmix64 finaliser, used to derive independent stream seeds. */
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/** Seed for the stream identified by (master, a, b); stable across platforms and job counts. */
inline std::uint64_t stream_seed(std::uint64_t master, std::uint64_t a = 0, std::uint64_t b = 0) {
    return mix64(mix64(mix64(master) ^ (a + 0x1234567ULL)) ^ (b + 0x89ABCDEFULL));
}

/** Explicit random state passed to every stochastic operation. */
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : eng_(seed) {}

    double normal() { return std::normal_distribution<double>(0.0, 1.0)(eng_); }
    double normal(double mean, double sd) { return mean + sd * normal(); }
    /** Uniform on [0, 1). */
    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(eng_); }
    /** Uniform integer in [0, n). */
    std::size_t index(std::size_t n) {
        return std::uniform_int_distribution<std::size_t>(0, n - 1)(eng_);
    }
    /** Draw from an unnormalised nonnegative weight vector. */
    std::size_t categorical(const std::vector<double>& w) {
        double total = 0.0;
        for (double v : w) total += v;
        double u = uniform() * total, acc = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            acc += w[i];
            if (u < acc) return i;
        }
        for (std::size_t i = w.size(); i-- > 0;)
            if (w[i] > 0.0) return i;
        return w.size() - 1;
    }
    std::mt19937_64& engine() { return eng_; }

private:
    std::mt19937_64 eng_;
};

/** Run body(i) for i in [0, n) on up to `jobs` threads; each index must write to its own slot. */
inline void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& body) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) body(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

/** 64-bit FNV-1a; used for config hashes embedded in output files. */
inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/** Sample standard deviation (n - 1 denominator); 0 for fewer than two values. */
inline double sd_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = mean_of(v), s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace synthaug
