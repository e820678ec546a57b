#include "rrp/build_planner.hpp"

#include <json.hpp>

#include <algorithm>
#include <sstream>

#include "rrp/error.hpp"

namespace rrp {

std::string_view to_string(StepKind kind) noexcept {
  switch (kind) {
    case StepKind::BaseImage: return "BaseImage";
    case StepKind::SystemPackages: return "SystemPackages";
    case StepKind::RuntimeInstall: return "RuntimeInstall";
    case StepKind::PackageInstall: return "PackageInstall";
    case StepKind::CopyProject: return "CopyProject";
    case StepKind::PostBuild: return "PostBuild";
    case StepKind::Entrypoint: return "Entrypoint";
  }
  return "?";
}

std::string_view to_string(Change change) noexcept {
  switch (change) {
    case Change::Changed: return "changed";
    case Change::Added: return "added";
    case Change::Removed: return "removed";
  }
  return "?";
}

ImageRef ImageRef::parse(std::string_view text) {
  const auto slash = text.rfind('/');
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos || (slash != std::string_view::npos && colon < slash) || colon + 1 == text.size()) {
    fail(ErrorCode::InvalidArgument, "image reference needs repository:tag: " + std::string(text));
  }
  return {std::string(text.substr(0, colon)), std::string(text.substr(colon + 1))};
}

BaseImageTable BaseImageTable::defaults() {
  // micromamba can install any python/R/julia version from conda-forge, so
  // one pinned image serves every ecosystem.
  constexpr auto kMamba = "docker.io/mambaorg/micromamba:1.5.8-bookworm-slim";
  return {{
      {"default", "docker.io/library/python:3.10.14-slim-bookworm"},
      {"python", kMamba},
      {"r", kMamba},
      {"julia", kMamba},
  }};
}

BaseImageTable BaseImageTable::from_json(std::string_view text) {
  BaseImageTable table;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& [key, value] : j.items()) table.images[key] = value.get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("base image table: ") + e.what());
  }
  if (!table.images.contains("default")) fail(ErrorCode::InvalidArgument, "base image table needs a 'default' entry");
  return table;
}

const std::string& BaseImageTable::lookup(const std::string& ecosystem) const {
  const auto it = images.find(ecosystem);
  if (it == images.end()) fail(ErrorCode::UnsupportedRuntime, "no base image configured for '" + ecosystem + "'");
  return it->second;
}

RuntimeVersion parse_runtime(std::string_view runtime) {
  const auto dash = runtime.find('-');
  if (dash == std::string_view::npos) fail(ErrorCode::UnsupportedRuntime, "expected <ecosystem>-<version>: " + std::string(runtime));
  RuntimeVersion rv{to_lower(runtime.substr(0, dash)), std::string(runtime.substr(dash + 1))};
  if (rv.ecosystem != "python" && rv.ecosystem != "r" && rv.ecosystem != "julia") {
    fail(ErrorCode::UnsupportedRuntime, "unsupported runtime ecosystem '" + rv.ecosystem + "'");
  }
  const bool digits = !rv.version.empty() && std::isdigit(static_cast<unsigned char>(rv.version.front())) &&
                      std::all_of(rv.version.begin(), rv.version.end(),
                                  [](char c) { return std::isdigit(static_cast<unsigned char>(c)) || c == '.'; });
  if (!digits) fail(ErrorCode::UnsupportedRuntime, "bad runtime version '" + rv.version + "'");
  return rv;
}

namespace {

// Requirement-style lists: trimmed, blank and comment lines dropped, order kept.
std::string normalize_list(std::string_view text) {
  std::string out;
  for (const auto& line : split_lines(text)) {
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    out.append(t).push_back('\n');
  }
  return out;
}

// Scripts and structured files: trailing whitespace trimmed per line,
// trailing blank lines dropped.
std::string normalize_script(std::string_view text) {
  std::string out;
  for (const auto& line : split_lines(text)) out.append(rtrim(line)).push_back('\n');
  while (out.size() >= 2 && out[out.size() - 1] == '\n' && out[out.size() - 2] == '\n') out.pop_back();
  if (out == "\n") out.clear();
  return out;
}

std::string first_line(std::string_view payload) { return std::string(payload.substr(0, payload.find('\n'))); }

}  // namespace

BuildPlan plan_build(const EnvironmentSpec& env, std::string_view specDigest, const BaseImageTable& baseImages) {
  if (!env.pipRequirements.empty() && !env.condaEnvironment.empty()) {
    fail(ErrorCode::ConflictingInputs, "both requirements.txt and environment.yml are present; keep only one");
  }

  BuildPlan plan;
  plan.specDigest = std::string(specDigest);

  std::optional<RuntimeVersion> runtime;
  if (env.runtime) runtime = parse_runtime(*env.runtime);
  plan.baseImage = baseImages.lookup(runtime ? runtime->ecosystem : "default");

  plan.steps.push_back({StepKind::BaseImage, plan.baseImage});
  if (!env.aptPackages.empty()) {
    std::string joined;
    for (const auto& p : env.aptPackages) joined += (joined.empty() ? "" : " ") + p;
    plan.steps.push_back({StepKind::SystemPackages, joined});
  }
  if (runtime) plan.steps.push_back({StepKind::RuntimeInstall, runtime->ecosystem + "-" + runtime->version});

  auto package_step = [&](std::string_view manager, std::string_view file, std::string body) {
    plan.steps.push_back({StepKind::PackageInstall,
                          std::string(manager) + " " + env.path_of(file) + "\n" + std::move(body)});
  };
  if (!env.pipRequirements.empty()) package_step("pip", "requirements.txt", normalize_list(env.pipRequirements));
  if (!env.condaEnvironment.empty()) package_step("conda", "environment.yml", normalize_script(env.condaEnvironment));
  if (!env.rInstallScript.empty()) package_step("r", "install.R", normalize_script(env.rInstallScript));
  if (!env.juliaProject.empty()) package_step("julia", "Project.toml", normalize_script(env.juliaProject));

  plan.steps.push_back({StepKind::CopyProject, std::string(kProjectDir)});
  if (!env.postBuild.empty()) {
    plan.steps.push_back({StepKind::PostBuild, env.path_of("postBuild") + "\n" + normalize_script(env.postBuild)});
  }
  plan.steps.push_back({StepKind::Entrypoint, env.startCommand.empty() ? "default" : "start " + env.path_of("start")});
  return plan;
}

namespace {

constexpr std::string_view kDigestHeader = "# rrp-spec-digest: ";

std::string default_command() {
  std::ostringstream os;
  os << R"(CMD ["sh", "-c", "exec jupyter lab --ip=0.0.0.0 --port=)" << kSessionPort
     << R"( --no-browser --allow-root --ServerApp.base_url=${RRP_BASE_URL:-/}"])";
  return os.str();
}

std::string render_step(const BuildStep& step) {
  std::ostringstream os;
  switch (step.kind) {
    case StepKind::BaseImage:
      os << "FROM " << step.payload << "\n"
         << "USER root\n"
         << "ENV RRP_PROJECT_DIR=" << kProjectDir;
      break;
    case StepKind::SystemPackages:
      os << "RUN apt-get update \\\n"
         << " && apt-get install -y --no-install-recommends " << step.payload << " \\\n"
         << " && rm -rf /var/lib/apt/lists/*";
      break;
    case StepKind::RuntimeInstall: {
      const auto rv = parse_runtime(step.payload);
      const auto package = rv.ecosystem == "python" ? "python=" + rv.version + " pip"
                           : rv.ecosystem == "r"    ? "r-base=" + rv.version
                                                    : "julia=" + rv.version;
      os << "ENV PATH=/opt/conda/bin:$PATH\n"
         << "RUN micromamba install -y -n base -c conda-forge " << package << " && micromamba clean -a -y";
      break;
    }
    case StepKind::PackageInstall: {
      const auto head = first_line(step.payload);
      const auto manager = head.substr(0, head.find(' '));
      const auto path = head.substr(head.find(' ') + 1);
      const auto file = fs::path(path).filename().string();
      os << "COPY " << path << " /tmp/rrp/" << file << "\n";
      if (manager == "pip") {
        os << "RUN python -m pip install --no-cache-dir -r /tmp/rrp/" << file;
      } else if (manager == "conda") {
        os << "RUN micromamba install -y -n base -f /tmp/rrp/" << file << " && micromamba clean -a -y";
      } else if (manager == "r") {
        os << "RUN Rscript /tmp/rrp/" << file;
      } else {
        os << "RUN julia --project=/tmp/rrp -e 'using Pkg; Pkg.instantiate()'";
      }
      break;
    }
    case StepKind::CopyProject:
      os << "COPY . " << step.payload << "\n"
         << "WORKDIR " << step.payload;
      break;
    case StepKind::PostBuild: {
      const auto path = std::string(kProjectDir) + "/" + first_line(step.payload);
      os << "RUN chmod +x " << path << " && " << path;
      break;
    }
    case StepKind::Entrypoint:
      os << "EXPOSE " << kSessionPort << "\n";
      if (starts_with(step.payload, "start ")) {
        os << R"(ENTRYPOINT ["/bin/sh", ")" << kProjectDir << "/" << step.payload.substr(6) << "\"]\n";
      }
      os << default_command();
      break;
  }
  return os.str();
}

}  // namespace

RecipeText render_recipe(const BuildPlan& plan) {
  std::ostringstream os;
  os << kDigestHeader << plan.specDigest << "\n";
  os << "# Generated from the project's environment files; edit those instead.\n";
  for (std::size_t i = 0; i < plan.steps.size(); ++i) {
    const auto& step = plan.steps[i];
    os << "\n# step " << i + 1 << ": " << to_string(step.kind) << "\n" << render_step(step) << "\n";
  }
  return os.str();
}

std::string recipe_spec_digest(std::string_view recipe) {
  for (const auto& line : split_lines(recipe)) {
    if (starts_with(line, kDigestHeader)) return std::string(trim(std::string_view(line).substr(kDigestHeader.size())));
  }
  return {};
}

std::string slugify(std::string_view name) {
  std::string slug;
  for (unsigned char c : name) {
    if (std::isalnum(c) && c < 0x80) {
      slug.push_back(static_cast<char>(std::tolower(c)));
    } else if (!slug.empty() && slug.back() != '-') {
      slug.push_back('-');
    }
  }
  while (!slug.empty() && slug.back() == '-') slug.pop_back();
  return slug;
}

ImageRef image_reference(std::string_view projectName, std::string_view specDigest) {
  if (trim(projectName).empty()) fail(ErrorCode::EmptyName, "project name is empty");
  const auto slug = slugify(projectName);
  if (slug.empty()) fail(ErrorCode::EmptyName, "project name has no alphanumeric characters");
  if (specDigest.size() < 12) fail(ErrorCode::InvalidArgument, "spec digest too short");
  return {"rrp/" + slug, std::string(specDigest.substr(0, 12))};
}

ChangeSet plan_diff(const BuildPlan& a, const BuildPlan& b) {
  // PackageInstall may occur once per manager; key it by manager name.
  using Key = std::pair<StepKind, std::string>;
  auto index = [](const BuildPlan& plan) {
    std::map<Key, std::string> m;
    for (const auto& s : plan.steps) {
      std::string disc;
      if (s.kind == StepKind::PackageInstall) {
        const auto head = first_line(s.payload);
        disc = head.substr(0, head.find(' '));
      }
      m[{s.kind, disc}] = s.payload;
    }
    return m;
  };
  const auto ia = index(a);
  const auto ib = index(b);
  ChangeSet changes;
  for (const auto& [key, payload] : ia) {
    const auto it = ib.find(key);
    if (it == ib.end()) {
      changes.push_back({key.first, Change::Removed});
    } else if (it->second != payload) {
      changes.push_back({key.first, Change::Changed});
    }
  }
  for (const auto& [key, payload] : ib) {
    if (!ia.contains(key)) changes.push_back({key.first, Change::Added});
  }
  std::stable_sort(changes.begin(), changes.end(),
                   [](const StepChange& x, const StepChange& y) { return x.kind < y.kind; });
  return changes;
}

}  // namespace rrp
