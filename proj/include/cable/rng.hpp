#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <string>

#include "cable/errors.hpp"

namespace cable {

// Deterministic RNG. mt19937_64 supplies the bit stream; the distributions
// are implemented here because the std:: ones are allowed to differ between
// standard libraries, and we promise bit-identical runs for a given seed.
class Rng {
  public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller, one spare cached.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log1p(-u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Unbiased integer in [0, n) by rejection.
    int64_t below(int64_t n) {
        if (n <= 0) throw ArgumentError("rng: below() needs n > 0");
        uint64_t un = static_cast<uint64_t>(n);
        uint64_t limit = std::numeric_limits<uint64_t>::max() -
                         std::numeric_limits<uint64_t>::max() % un;
        uint64_t x;
        do {
            x = eng_();
        } while (x >= limit);
        return static_cast<int64_t>(x % un);
    }

    // Engine state plus the Box-Muller spare, as text. Used by checkpoints.
    std::string serialize() const {
        std::ostringstream os;
        os << eng_ << ' ' << (has_spare_ ? 1 : 0);
        if (has_spare_) {
            os.precision(17);
            os << ' ' << spare_;
        }
        return os.str();
    }

    void deserialize(const std::string& text) {
        std::istringstream is(text);
        int spare_flag = 0;
        is >> eng_ >> spare_flag;
        if (!is) throw IoError("rng: bad serialized state");
        has_spare_ = spare_flag != 0;
        spare_ = 0.0;
        if (has_spare_) {
            is >> spare_;
            if (!is) throw IoError("rng: bad serialized spare");
        }
    }

  private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace cable
