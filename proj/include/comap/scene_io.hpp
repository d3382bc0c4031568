#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "comap/covis_map.hpp"
#include "comap/point_cloud.hpp"
#include "comap/scene.hpp"

namespace comap::io {

namespace fs = std::filesystem;

// --- COLMAP text reconstructions -------------------------------------------

// One 2D observation of a 3D point, used when writing image tracks.
struct TrackElement {
  int view_id = 0;
  Pixel pixel;
};

// Reads cameras.txt, images.txt and points3D.txt. PINHOLE and SIMPLE_PINHOLE
// are exact; SIMPLE_RADIAL drops its radial coefficient with a warning.
SceneBundle read_colmap_reconstruction(const fs::path& dir);

// Writes one PINHOLE camera per view (camera id = view id). `tracks`, when
// non-empty, is parallel to `points.points`.
void write_colmap_reconstruction(const fs::path& dir,
                                 std::span<const CameraView> views,
                                 const PointCloud& points,
                                 std::span<const std::vector<TrackElement>> tracks = {});

// Reads the COLMAP reconstruction in `dir` plus, when present, depth maps
// from `depth_dir` (depth_<id>.pfm) and correspondences from `corr_dir`
// (*.jsonl).
SceneBundle load_scene(const fs::path& dir, const fs::path& depth_dir,
                       const fs::path& corr_dir);

// --- Correspondence JSONL ---------------------------------------------------
//
// One object per line: {"src_view", "dst_view", "sx", "sy", "dx", "dy",
// "conf"}. File coordinates put the top-left pixel center at (0, 0); in
// memory they are shifted by +0.5 to the projection frame.

CorrespondenceSet read_correspondences(const fs::path& path,
                                       std::span<const CameraView> views);
std::vector<CorrespondenceSet> read_correspondence_dir(
    const fs::path& dir, std::span<const CameraView> views);
void write_correspondences(const fs::path& path, const CorrespondenceSet& set);
fs::path correspondence_file_name(int src_view, int dst_view);

// --- PLY --------------------------------------------------------------------

void write_ply(const PointCloud& cloud, const fs::path& path, bool binary = true);
// Accepts ascii and binary_little_endian vertex elements with any scalar
// property types; missing color defaults, missing source means colmap.
PointCloud read_ply(const fs::path& path);

// --- Covisibility maps (PGM) -------------------------------------------------

struct GrayImage {
  int width = 0;
  int height = 0;
  int max_value = 0;
  std::vector<std::uint16_t> values;
};

GrayImage read_pgm(const fs::path& path);
// 8-bit rendering with n-1 mapped to 255, rounding half up.
std::vector<std::uint8_t> covis_visualization(const CovisMap& map);
// Writes `<stem>.pgm` (16-bit raw counts) and `<stem>_vis.pgm` (8-bit).
void write_covis_map_image(const CovisMap& map, const fs::path& stem);
CovisMap read_covis_map(const fs::path& path, int view_id, int n_views);

// --- Depth (PFM) -----------------------------------------------------------

DepthMap read_depth_map(const fs::path& path);
void write_depth_map(const DepthMap& depth, const fs::path& path);
fs::path depth_file_name(int view_id);

}  // namespace comap::io
