#pragma once

#include <string>
#include <vector>

#include "matfield/camera.hpp"
#include "matfield/featlift.hpp"
#include "matfield/mtd.hpp"
#include "matfield/transfer.hpp"
#include "matfield/voxelizer.hpp"

namespace matfield::io {

// OBJ subset: v / f / g. Each g group is one segment named after the group;
// faces before any g land in a "default" segment. Faces fan-triangulate later.
SegmentedMesh read_obj(const std::string& path);
SegmentedMesh parse_obj(const std::string& text);

// Splat CSV, header: mx,my,mz,qw,qx,qy,qz,sx,sy,sz,opacity.
std::vector<GaussianSplat> read_splats_csv(const std::string& path);
std::vector<GaussianSplat> parse_splats_csv(const std::string& text);

// Triplet CSV, header: e_pa,nu,rho_kgm3.
std::vector<MaterialTriplet> read_triplets_csv(const std::string& path);
std::string triplets_to_csv(const std::vector<MaterialTriplet>& triplets);
void write_triplets_csv(const std::vector<MaterialTriplet>& triplets,
                        const std::string& path);

// Material sidecar CSV, header: voxel_index,e_pa,nu,rho_kgm3. Rows must be
// dense in voxel order when paired with a VOXF file.
struct IndexedTriplet {
    std::size_t voxel_index = 0;
    MaterialTriplet triplet;
};
std::vector<IndexedTriplet> read_materials_csv(const std::string& path);
void write_materials_csv(const std::vector<MaterialTriplet>& materials,
                         const std::string& path);

// VOXF binary: magic "VOXF", u32 version=1, u32 r, u32 count, per voxel
// 3 x u16 indices, 3 x f32 center, u32 segment-name index (0xFFFFFFFF =
// none), then u32 string count and length-prefixed UTF-8 names.
// Little-endian throughout.
void write_voxf(const SolidVoxelization& vox, const std::string& path);
SolidVoxelization read_voxf(const std::string& path);

// Feature map binary: magic "VFMP", u32 version=1, u32 n, u32 c, f32 data in
// (row, col, channel) order.
void write_vfmp(const FeatureMap& map, const std::string& path);
FeatureMap read_vfmp(const std::string& path);

// Lifted voxel features: magic "VFEA", u32 version=1, u32 count, u32 c,
// count x c f32 values, then count u8 seen flags.
void write_vfea(const VoxelFeatures& features, const std::string& path);
VoxelFeatures read_vfea(const std::string& path);

// Camera JSON: array of {"world_to_camera": [16 row-major], "fov_y_deg": f,
// "width": u, "height": u}.
std::vector<CameraView> read_cameras_json(const std::string& path);
std::string cameras_to_json(const std::vector<CameraView>& views);
void write_cameras_json(const std::vector<CameraView>& views, const std::string& path);

}  // namespace matfield::io
