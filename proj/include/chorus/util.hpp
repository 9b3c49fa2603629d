#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace chorus {

// FNV-1a. Used everywhere a stable, platform-independent hash is needed
// (mock fallbacks, run ids, evaluator caches). std::hash is not portable.
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ULL) {
    std::uint64_t h = seed;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a_combine(std::uint64_t a, std::uint64_t b) {
    char buf[16];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((a >> (8 * i)) & 0xff);
    for (int i = 0; i < 8; ++i) buf[8 + i] = static_cast<char>((b >> (8 * i)) & 0xff);
    return fnv1a(std::string_view(buf, 16));
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

// Deterministic RNG wrapper. We draw doubles from the raw 64-bit stream
// instead of std::uniform_real_distribution so sequences do not depend on
// the standard library implementation.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; one value per call, deterministic.
    double gaussian() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        return n == 0 ? 0 : engine_() % n;
    }

    std::uint64_t next() { return engine_(); }

private:
    std::mt19937_64 engine_;
};

inline std::string to_lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

inline std::string strip(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_lines(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == '\n') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

template <typename It>
std::string join(It begin, It end, const std::string& sep) {
    std::string out;
    for (It it = begin; it != end; ++it) {
        if (it != begin) out += sep;
        out += *it;
    }
    return out;
}

// Runs fn(0), ..., fn(n-1) concurrently and waits for all of them. fn must
// capture its own failures; a throwing task propagates from here.
template <typename F>
void parallel_for(int n, F&& fn) {
    if (n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::future<void>> tasks;
    tasks.reserve(n);
    for (int i = 0; i < n; ++i) {
        tasks.push_back(std::async(std::launch::async, [&fn, i] { fn(i); }));
    }
    for (auto& t : tasks) t.get();
}

// Position of the first occurrence of `token` in `text` delimited by
// non-alphanumerics on both sides (the whole-token parse rule used by
// routing and selection); npos when absent.
inline std::size_t find_whole_token(const std::string& text, const std::string& token) {
    if (token.empty()) return std::string::npos;
    std::size_t pos = 0;
    auto is_word = [](unsigned char c) { return std::isalnum(c) || c == '_'; };
    while ((pos = text.find(token, pos)) != std::string::npos) {
        bool left_ok = pos == 0 || !is_word(static_cast<unsigned char>(text[pos - 1]));
        std::size_t after = pos + token.size();
        bool right_ok = after >= text.size() || !is_word(static_cast<unsigned char>(text[after]));
        if (left_ok && right_ok) return pos;
        pos += 1;
    }
    return std::string::npos;
}

inline bool contains_whole_token(const std::string& text, const std::string& token) {
    return find_whole_token(text, token) != std::string::npos;
}

}  // namespace chorus
