#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rrp {

enum class ErrorCode {
  // project-spec
  CloneFailed,
  RefNotFound,
  ManifestSyntax,
  DuplicateMountTarget,
  InvalidFolderName,
  NoEnvironmentFound,
  UnreadableFile,
  NotARepository,
  // build-planner
  UnsupportedRuntime,
  ConflictingInputs,
  EmptyName,
  // runtime
  BuildFailed,
  DaemonUnavailable,
  ImageNotFound,
  ResourceDenied,
  StartFailed,
  UnknownSession,
  CorruptArchive,
  AuthFailed,
  RegistryUnreachable,
  AccessDenied,
  ImagePullFailed,
  ExecFailed,
  // rdms
  ServerUnreachable,
  DatasetNotFound,
  ChecksumMismatch,
  TargetNotWritable,
  EmptyDataset,
  ObjectNotFound,
  PortInUse,
  DataDirUnwritable,
  // orchestrator
  NameTaken,
  InvalidState,
  UnknownProject,
  ResultNotFound,
  RdmsError,
  RepositoryDirty,
  ShareNotFound,
  NoActiveSession,
  // bundler
  ExportFailed,
  UnpublishedDatasets,
  ImageNotPublished,
  VerificationFailed,
  ImportFailed,
  FetchFailed,
  // api-service
  RdmsUnreachable,
  InvalidArgument,
  Internal,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Inverse of to_string; unknown names map to ErrorCode::Internal.
ErrorCode error_code_from_string(std::string_view name) noexcept;

/// Every failure in the library is reported as an rrp::Error carrying a code
/// that callers (and the wire protocols) can switch on.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }
  /// Message without the "<Code>: " prefix that what() carries.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

/// BuildFailed with the tail of the build log attached.
class BuildError : public Error {
 public:
  BuildError(const std::string& message, std::vector<std::string> tail);

  const std::vector<std::string>& log_tail() const noexcept { return tail_; }

 private:
  std::vector<std::string> tail_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace rrp
