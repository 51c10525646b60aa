#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace vic {

enum class ErrorCode {
    OutOfGuestMemory,
    Misaligned,
    AlreadyMapped,
    PageNotPresent,
    NonCanonicalAddress,
    WriteProtected,
    ExecuteProtected,
    NoSuchProcess,
    DuplicateProcess,
    DuplicateMapping,
    UnmappedFrame,
    HugePageUnsupported,
    SlatViolationUnhandled,
    RecursiveGuestEntry,
    NoSuchGuard,
    SessionBusy,
    ChannelClosed,
    EndpointUnavailable,
    IoFailure,
    ParseError,
    StaleOffsets,
    InvalidMatrix,
    LengthMismatch,
    IncompatibleAtRuntime,
    PreconditionFailed,
    InvalidArgument,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the simulator. `level()` is meaningful only for
/// PageNotPresent, where it names the page-table level (4..1) whose entry
/// was not present.
class SimError : public std::runtime_error {
public:
    SimError(ErrorCode code, const std::string& detail, int level = 0);

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }
    [[nodiscard]] int level() const noexcept { return level_; }

private:
    ErrorCode code_;
    int level_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& detail, int level = 0)
{
    throw SimError(code, detail, level);
}

} // namespace vic
