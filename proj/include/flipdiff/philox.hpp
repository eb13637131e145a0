// SPDX-License-Identifier: Apache-2.0
//
// Counter-based Philox4x32-10 generator. A stream is addressed by a 64-bit key
// (the master seed) and a 64-bit stream id (e.g. the trajectory index); draws
// within the stream advance a 64-bit block counter. Streams are therefore
// reproducible and independent of the order in which they are consumed.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>

namespace flipdiff {

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

namespace detail {
inline constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
inline constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
inline constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
inline constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

constexpr void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo)
{
    std::uint64_t p = std::uint64_t(a) * b;
    hi = std::uint32_t(p >> 32);
    lo = std::uint32_t(p);
}
} // namespace detail

/// Ten-round Philox4x32 bijection of the counter under the key.
constexpr PhiloxCounter philox4x32_10(PhiloxCounter ctr, PhiloxKey key)
{
    for (int round = 0; round < 10; ++round) {
        if (round > 0) {
            key[0] += detail::kPhiloxW0;
            key[1] += detail::kPhiloxW1;
        }
        std::uint32_t hi0, lo0, hi1, lo1;
        detail::mulhilo(detail::kPhiloxM0, ctr[0], hi0, lo0);
        detail::mulhilo(detail::kPhiloxM1, ctr[2], hi1, lo1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
}

class PhiloxStream
{
  public:
    using result_type = std::uint64_t;

    PhiloxStream(std::uint64_t key, std::uint64_t stream)
        : key_{std::uint32_t(key), std::uint32_t(key >> 32)},
          stream_lo_(std::uint32_t(stream)), stream_hi_(std::uint32_t(stream >> 32))
    {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()()
    {
        if (used_ == 2) refill();
        std::uint64_t v = (std::uint64_t(block_[2 * used_ + 1]) << 32) | block_[2 * used_];
        ++used_;
        return v;
    }

    /// Uniform double in the open interval (0, 1) with 53 random bits.
    double uniform()
    {
        return (double((*this)() >> 11) + 0.5) * 0x1.0p-53;
    }

    double exponential(double rate) { return -std::log(uniform()) / rate; }

    /// Uniform integer in [0, n), unbiased by rejection.
    std::uint64_t below(std::uint64_t n)
    {
        const std::uint64_t limit = max() - max() % n;
        std::uint64_t v;
        do v = (*this)(); while (v >= limit);
        return v % n;
    }

    std::uint64_t blocks_consumed() const { return counter_; }

  private:
    void refill()
    {
        PhiloxCounter ctr{std::uint32_t(counter_), std::uint32_t(counter_ >> 32),
                          stream_lo_, stream_hi_};
        block_ = philox4x32_10(ctr, key_);
        ++counter_;
        used_ = 0;
    }

    PhiloxKey key_;
    std::uint32_t stream_lo_, stream_hi_;
    std::uint64_t counter_ = 0;
    PhiloxCounter block_{};
    int used_ = 2;
};

/// Stream id layout: low bits index the trajectory, the top byte tags the purpose.
enum class StreamPurpose : std::uint64_t { trajectory = 0, bootstrap = 1, sampling_test = 2 };

inline PhiloxStream make_stream(std::uint64_t master_seed, std::uint64_t index,
                                StreamPurpose purpose = StreamPurpose::trajectory)
{
    return PhiloxStream(master_seed, (std::uint64_t(purpose) << 56) | (index & ((1ull << 56) - 1)));
}

} // namespace flipdiff
