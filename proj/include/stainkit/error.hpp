#ifndef STAINKIT_ERROR_HPP
#define STAINKIT_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace stainkit {

enum class ErrorKind {
    InvalidArgument,
    InvalidConfig,
    Io,
    SingularMatrix,
    NonSquareRotation,
    InsufficientTissue,
    DegeneratePlane,
    ProfileMismatch,
    ShapeMismatch,
    StaleCache,
    EmptyDataset,
    NonFiniteLoss,
    UntrainedNetwork,
    TooFewDatasets,
};

constexpr std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::Io: return "Io";
    case ErrorKind::SingularMatrix: return "SingularMatrix";
    case ErrorKind::NonSquareRotation: return "NonSquareRotation";
    case ErrorKind::InsufficientTissue: return "InsufficientTissue";
    case ErrorKind::DegeneratePlane: return "DegeneratePlane";
    case ErrorKind::ProfileMismatch: return "ProfileMismatch";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::StaleCache: return "StaleCache";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::UntrainedNetwork: return "UntrainedNetwork";
    case ErrorKind::TooFewDatasets: return "TooFewDatasets";
    }
    return "Unknown";
}

/// Every failure raised by the library carries one of the kinds above; the
/// message is prefixed with the kind name so CLI diagnostics stay greppable.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

} // namespace stainkit

#endif
