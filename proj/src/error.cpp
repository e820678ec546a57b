#include "rrp/error.hpp"

#include <array>
#include <utility>

namespace rrp {

namespace {

constexpr std::array kNames = {
    std::pair{ErrorCode::CloneFailed, "CloneFailed"},
    std::pair{ErrorCode::RefNotFound, "RefNotFound"},
    std::pair{ErrorCode::ManifestSyntax, "ManifestSyntax"},
    std::pair{ErrorCode::DuplicateMountTarget, "DuplicateMountTarget"},
    std::pair{ErrorCode::InvalidFolderName, "InvalidFolderName"},
    std::pair{ErrorCode::NoEnvironmentFound, "NoEnvironmentFound"},
    std::pair{ErrorCode::UnreadableFile, "UnreadableFile"},
    std::pair{ErrorCode::NotARepository, "NotARepository"},
    std::pair{ErrorCode::UnsupportedRuntime, "UnsupportedRuntime"},
    std::pair{ErrorCode::ConflictingInputs, "ConflictingInputs"},
    std::pair{ErrorCode::EmptyName, "EmptyName"},
    std::pair{ErrorCode::BuildFailed, "BuildFailed"},
    std::pair{ErrorCode::DaemonUnavailable, "DaemonUnavailable"},
    std::pair{ErrorCode::ImageNotFound, "ImageNotFound"},
    std::pair{ErrorCode::ResourceDenied, "ResourceDenied"},
    std::pair{ErrorCode::StartFailed, "StartFailed"},
    std::pair{ErrorCode::UnknownSession, "UnknownSession"},
    std::pair{ErrorCode::CorruptArchive, "CorruptArchive"},
    std::pair{ErrorCode::AuthFailed, "AuthFailed"},
    std::pair{ErrorCode::RegistryUnreachable, "RegistryUnreachable"},
    std::pair{ErrorCode::AccessDenied, "AccessDenied"},
    std::pair{ErrorCode::ImagePullFailed, "ImagePullFailed"},
    std::pair{ErrorCode::ExecFailed, "ExecFailed"},
    std::pair{ErrorCode::ServerUnreachable, "ServerUnreachable"},
    std::pair{ErrorCode::DatasetNotFound, "DatasetNotFound"},
    std::pair{ErrorCode::ChecksumMismatch, "ChecksumMismatch"},
    std::pair{ErrorCode::TargetNotWritable, "TargetNotWritable"},
    std::pair{ErrorCode::EmptyDataset, "EmptyDataset"},
    std::pair{ErrorCode::ObjectNotFound, "ObjectNotFound"},
    std::pair{ErrorCode::PortInUse, "PortInUse"},
    std::pair{ErrorCode::DataDirUnwritable, "DataDirUnwritable"},
    std::pair{ErrorCode::NameTaken, "NameTaken"},
    std::pair{ErrorCode::InvalidState, "InvalidState"},
    std::pair{ErrorCode::UnknownProject, "UnknownProject"},
    std::pair{ErrorCode::ResultNotFound, "ResultNotFound"},
    std::pair{ErrorCode::RdmsError, "RdmsError"},
    std::pair{ErrorCode::RepositoryDirty, "RepositoryDirty"},
    std::pair{ErrorCode::ShareNotFound, "ShareNotFound"},
    std::pair{ErrorCode::NoActiveSession, "NoActiveSession"},
    std::pair{ErrorCode::ExportFailed, "ExportFailed"},
    std::pair{ErrorCode::UnpublishedDatasets, "UnpublishedDatasets"},
    std::pair{ErrorCode::ImageNotPublished, "ImageNotPublished"},
    std::pair{ErrorCode::VerificationFailed, "VerificationFailed"},
    std::pair{ErrorCode::ImportFailed, "ImportFailed"},
    std::pair{ErrorCode::FetchFailed, "FetchFailed"},
    std::pair{ErrorCode::RdmsUnreachable, "RdmsUnreachable"},
    std::pair{ErrorCode::InvalidArgument, "InvalidArgument"},
    std::pair{ErrorCode::Internal, "Internal"},
};

}  // namespace

std::string_view to_string(ErrorCode code) noexcept {
  for (const auto& [c, name] : kNames) {
    if (c == code) return name;
  }
  return "Internal";
}

ErrorCode error_code_from_string(std::string_view name) noexcept {
  for (const auto& [c, n] : kNames) {
    if (name == n) return c;
  }
  return ErrorCode::Internal;
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message),
      code_(code),
      detail_(message) {}

BuildError::BuildError(const std::string& message, std::vector<std::string> tail)
    : Error(ErrorCode::BuildFailed, message), tail_(std::move(tail)) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace rrp
