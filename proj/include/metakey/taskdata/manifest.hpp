#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include "metakey/taskdata/types.hpp"

namespace metakey::taskdata {

/// Header every manifest starts with.
inline constexpr std::string_view kManifestHeader =
    "image_path,day_id,season,vp_x,vp_y,left_x,right_x";

using WarningSink = std::function<void(const std::string&)>;

/// Reads a manifest CSV; image paths are resolved against `root`.
/// Images are binary PPM (P6) files.
TaskCollection load_manifest(const std::filesystem::path& root,
                             const std::filesystem::path& manifest_file,
                             const WarningSink& warn = {});

/// Writes every sample's image under `root` (at its image_path, or a
/// generated "<day_id>/<index>.ppm" when empty) plus the manifest itself.
void write_manifest(const TaskCollection& collection, const std::filesystem::path& root,
                    const std::filesystem::path& manifest_file);

Image read_ppm(const std::filesystem::path& path);
void write_ppm(const Image& image, const std::filesystem::path& path);

}  // namespace metakey::taskdata
