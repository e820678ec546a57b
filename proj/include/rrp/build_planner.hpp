#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "rrp/project_spec.hpp"

namespace rrp {

/// Declaration order is the order steps appear in a plan.
enum class StepKind { BaseImage, SystemPackages, RuntimeInstall, PackageInstall, CopyProject, PostBuild, Entrypoint };

std::string_view to_string(StepKind kind) noexcept;

struct BuildStep {
  StepKind kind;
  std::string payload;

  bool operator==(const BuildStep&) const = default;
};

struct BuildPlan {
  std::vector<BuildStep> steps;
  std::string specDigest;
  std::string baseImage;

  bool operator==(const BuildPlan&) const = default;
};

struct ImageRef {
  std::string repository;  // rrp/<slug>
  std::string tag;         // first 12 hex chars of the spec digest

  std::string str() const { return repository + ":" + tag; }
  static ImageRef parse(std::string_view text);
  bool operator==(const ImageRef&) const = default;
  auto operator<=>(const ImageRef&) const = default;
};

/// One pinned base image per runtime ecosystem; "default" is used when the
/// project has no runtime.txt.
struct BaseImageTable {
  std::map<std::string, std::string> images;

  static BaseImageTable defaults();
  /// {"python": "...", "r": "...", "julia": "...", "default": "..."}
  static BaseImageTable from_json(std::string_view text);
  const std::string& lookup(const std::string& ecosystem) const;
};

struct RuntimeVersion {
  std::string ecosystem;
  std::string version;
};

/// Parses `<ecosystem>-<version>`; UnsupportedRuntime unless the ecosystem is
/// python, r or julia and the version is dotted digits.
RuntimeVersion parse_runtime(std::string_view runtime);

inline constexpr int kSessionPort = 8888;
inline constexpr std::string_view kProjectDir = "/project";

BuildPlan plan_build(const EnvironmentSpec& environment, std::string_view specDigest,
                     const BaseImageTable& baseImages = BaseImageTable::defaults());

using RecipeText = std::string;
RecipeText render_recipe(const BuildPlan& plan);
/// Reads the mandatory `# rrp-spec-digest:` header; empty if absent.
std::string recipe_spec_digest(std::string_view recipe);

std::string slugify(std::string_view name);
ImageRef image_reference(std::string_view projectName, std::string_view specDigest);

enum class Change { Changed, Added, Removed };
std::string_view to_string(Change change) noexcept;

struct StepChange {
  StepKind kind;
  Change change;
  bool operator==(const StepChange&) const = default;
};
using ChangeSet = std::vector<StepChange>;

ChangeSet plan_diff(const BuildPlan& a, const BuildPlan& b);

}  // namespace rrp
