#include "vic/error.hpp"

namespace vic {

std::string_view to_string(ErrorCode code) noexcept
{
    switch (code) {
    case ErrorCode::OutOfGuestMemory: return "OutOfGuestMemory";
    case ErrorCode::Misaligned: return "Misaligned";
    case ErrorCode::AlreadyMapped: return "AlreadyMapped";
    case ErrorCode::PageNotPresent: return "PageNotPresent";
    case ErrorCode::NonCanonicalAddress: return "NonCanonicalAddress";
    case ErrorCode::WriteProtected: return "WriteProtected";
    case ErrorCode::ExecuteProtected: return "ExecuteProtected";
    case ErrorCode::NoSuchProcess: return "NoSuchProcess";
    case ErrorCode::DuplicateProcess: return "DuplicateProcess";
    case ErrorCode::DuplicateMapping: return "DuplicateMapping";
    case ErrorCode::UnmappedFrame: return "UnmappedFrame";
    case ErrorCode::HugePageUnsupported: return "HugePageUnsupported";
    case ErrorCode::SlatViolationUnhandled: return "SlatViolationUnhandled";
    case ErrorCode::RecursiveGuestEntry: return "RecursiveGuestEntry";
    case ErrorCode::NoSuchGuard: return "NoSuchGuard";
    case ErrorCode::SessionBusy: return "SessionBusy";
    case ErrorCode::ChannelClosed: return "ChannelClosed";
    case ErrorCode::EndpointUnavailable: return "EndpointUnavailable";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::StaleOffsets: return "StaleOffsets";
    case ErrorCode::InvalidMatrix: return "InvalidMatrix";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::IncompatibleAtRuntime: return "IncompatibleAtRuntime";
    case ErrorCode::PreconditionFailed: return "PreconditionFailed";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

SimError::SimError(ErrorCode code, const std::string& detail, int level)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code), level_(level)
{
}

} // namespace vic
