#pragma once

#include <string>
#include <vector>

#include "pcup/geometry.hpp"

namespace pcup {

enum class CloudFormat { xyz, ply, off };
enum class PlyEncoding { ascii, binary_little_endian };

CloudFormat format_from_path(const std::string& path);

Points read_cloud(const std::string& path, CloudFormat format);
Points read_cloud(const std::string& path);  // format from extension

void write_cloud(const Points& pts, const std::string& path, CloudFormat format,
                 PlyEncoding ply = PlyEncoding::binary_little_endian);
void write_cloud(const Points& pts, const std::string& path);

// OFF with faces, for meshes feeding point-to-surface evaluation.
TriangleMesh read_off_mesh(const std::string& path);
void write_off_mesh(const TriangleMesh& mesh, const std::string& path);

// Dataset manifest: one "cloud_path [mesh_path]" pair per line.
struct ManifestEntry {
  std::string cloud_path;
  std::string mesh_path;  // empty when absent
};
std::vector<ManifestEntry> read_manifest(const std::string& path);

}  // namespace pcup
