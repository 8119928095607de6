// ltcp/protothread.hpp
// Stackless cooperative threads.
//
// A Protothread is two words: the label of the blocking point to resume at and
// the last status. The body is an ordinary callable that switches on the label
// (the LTCP_PT_* macros generate the switch). Nothing on the C++ stack survives
// a blocking point, so every value a body needs later lives in an environment
// it owns, usually captured by reference.
//
//   auto body = [&env](ltcp::Protothread& pt) {
//       LTCP_PT_BEGIN(pt);
//       LTCP_PT_WAIT_UNTIL(pt, env.flag);
//       ++env.count;
//       LTCP_PT_END(pt);
//   };
//   while (ltcp::pt_resume(pt, body) != ltcp::PtStatus::Exited) { ... }
//
// Labels are source line numbers, so at most one blocking macro per line.

#pragma once

#include <cstdint>
#include <string_view>

#include "ltcp/error.hpp"

namespace ltcp {

enum class PtStatus : std::uint8_t { Running, Waiting, Yielded, Exited };

constexpr std::string_view to_string(PtStatus s) {
    switch (s) {
        case PtStatus::Running: return "Running";
        case PtStatus::Waiting: return "Waiting";
        case PtStatus::Yielded: return "Yielded";
        case PtStatus::Exited: return "Exited";
    }
    return "?";
}

struct Protothread {
    std::uint32_t resume_point = 0;
    PtStatus status = PtStatus::Running;
};

inline void pt_init(Protothread& pt) noexcept {
    pt.resume_point = 0;
    pt.status = PtStatus::Running;
}

/// Runs the body from its recorded blocking point until it blocks, yields or
/// finishes. Resuming an exited thread is a no-op.
template <typename Body>
PtStatus pt_resume(Protothread& pt, Body&& body) {
    if (pt.status == PtStatus::Exited) {
        return PtStatus::Exited;
    }
    pt.status = PtStatus::Running;
    PtStatus s = body(pt);
    pt.status = s;
    return s;
}

}  // namespace ltcp

#define LTCP_PT_BEGIN(pt)                                                                \
    switch ((pt).resume_point) {                                                         \
        default:                                                                         \
            throw ::ltcp::Error(::ltcp::Errc::Corrupt, "undefined protothread resume point"); \
        case 0:

#define LTCP_PT_END(pt)                     \
    }                                       \
    (pt).status = ::ltcp::PtStatus::Exited; \
    return ::ltcp::PtStatus::Exited

#define LTCP_PT_WAIT_UNTIL(pt, cond)                  \
    do {                                              \
        (pt).resume_point = __LINE__;                 \
        [[fallthrough]];                              \
        case __LINE__:                                \
            if (!(cond)) {                            \
                return ::ltcp::PtStatus::Waiting;     \
            }                                         \
    } while (0)

#define LTCP_PT_WAIT_WHILE(pt, cond) LTCP_PT_WAIT_UNTIL(pt, !(cond))

#define LTCP_PT_YIELD(pt)                      \
    do {                                       \
        (pt).resume_point = __LINE__;          \
        return ::ltcp::PtStatus::Yielded;      \
        case __LINE__:;                        \
    } while (0)

#define LTCP_PT_EXIT(pt)                        \
    do {                                        \
        (pt).status = ::ltcp::PtStatus::Exited; \
        return ::ltcp::PtStatus::Exited;        \
    } while (0)
