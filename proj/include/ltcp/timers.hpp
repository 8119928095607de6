// ltcp/timers.hpp
// Timer manager over a simulated tick clock.
//
// restart() re-anchors a timer at the present; reset() advances it by one
// interval from its previous expiry, so a periodic timer driven only by
// reset() never drifts.

#pragma once

#include <cstdint>

#include "ltcp/error.hpp"

namespace ltcp {

using Tick = std::uint64_t;

class Clock {
public:
    Tick now() const noexcept { return now_; }
    void advance(Tick ticks = 1) noexcept { now_ += ticks; }

private:
    Tick now_ = 0;
};

class Timer {
public:
    Timer() = default;

    /// Arms the timer to fire `interval` ticks from now.
    void set(const Clock& clock, Tick interval) {
        if (interval == 0) {
            throw Error(Errc::InvalidArgument, "timer interval must be positive");
        }
        interval_ = interval;
        expiry_ = clock.now() + interval;
        armed_ = true;
    }

    bool expired(const Clock& clock) const {
        if (!armed_) {
            throw Error(Errc::Contract, "expiry queried on an unarmed timer");
        }
        return clock.now() >= expiry_;
    }

    void restart(const Clock& clock) {
        if (interval_ == 0) {
            throw Error(Errc::Contract, "restart of a timer that was never set");
        }
        expiry_ = clock.now() + interval_;
        armed_ = true;
    }

    void reset() {
        if (interval_ == 0) {
            throw Error(Errc::Contract, "reset of a timer that was never set");
        }
        expiry_ += interval_;
        armed_ = true;
    }

    // Changes the interval used by later restart()/reset() calls.
    void set_interval(Tick interval) {
        if (interval == 0) {
            throw Error(Errc::InvalidArgument, "timer interval must be positive");
        }
        interval_ = interval;
    }

    void cancel() noexcept { armed_ = false; }

    bool armed() const noexcept { return armed_; }
    Tick interval() const noexcept { return interval_; }
    Tick expiry() const noexcept { return expiry_; }

private:
    Tick interval_ = 0;
    Tick expiry_ = 0;
    bool armed_ = false;
};

inline Timer timer_set(const Clock& clock, Tick interval) {
    Timer t;
    t.set(clock, interval);
    return t;
}

inline bool timer_expired(const Timer& t, const Clock& clock) { return t.expired(clock); }
inline void timer_restart(Timer& t, const Clock& clock) { t.restart(clock); }
inline void timer_reset(Timer& t, const Clock& /*clock*/) { t.reset(); }

}  // namespace ltcp
