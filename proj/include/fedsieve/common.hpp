#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace fedsieve {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class InsufficientPointsError : public Error {
public:
    using Error::Error;
};

class CodecOverflowError : public Error {
public:
    using Error::Error;
};

// Raised when a local training loss turns NaN; carries the federated round.
class TrainingDivergedError : public Error {
public:
    TrainingDivergedError(std::size_t round, const std::string& what)
        : Error("round " + std::to_string(round) + ": " + what), round_(round) {}
    std::size_t round() const { return round_; }

private:
    std::size_t round_;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derives independent RNG streams from one master seed. Order of the tags
// matters; every (purpose, round, client) triple gets its own stream.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                              std::uint64_t c = 0) {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ b);
    h = splitmix64(h ^ c);
    return h;
}

inline void check_finite(const std::vector<double>& v, const char* context) {
    for (double x : v) {
        if (!std::isfinite(x)) throw Error(std::string(context) + ": non-finite value");
    }
}

inline unsigned thread_cap() {
    if (const char* env = std::getenv("FEDSIEVE_THREADS")) {
        long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<unsigned>(v);
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw ? hw : 1;
}

// Runs fn(i) for i in [0, count). Chunked across at most thread_cap() threads;
// each index is processed exactly once, so seeded work stays deterministic.
template <typename F>
void parallel_for(std::size_t count, F&& fn) {
    unsigned nthreads = thread_cap();
    if (count < 2 || nthreads < 2) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    nthreads = static_cast<unsigned>(std::min<std::size_t>(nthreads, count));
    std::vector<std::thread> workers;
    workers.reserve(nthreads);
    std::size_t chunk = (count + nthreads - 1) / nthreads;
    std::exception_ptr first_error;
    std::mutex error_mutex;
    for (unsigned t = 0; t < nthreads; ++t) {
        std::size_t lo = t * chunk;
        std::size_t hi = std::min(count, lo + chunk);
        if (lo >= hi) break;
        workers.emplace_back([lo, hi, &fn, &first_error, &error_mutex] {
            try {
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& w : workers) w.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace fedsieve
