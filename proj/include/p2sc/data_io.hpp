#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "p2sc/point_ops.hpp"
#include "p2sc/rng.hpp"

namespace p2sc {

enum class ShapeFamily { sphere, cube, torus, cylinder, cone, plane, helix, cross };

constexpr int kNumFamilies = 8;

const char* family_name(ShapeFamily f);
ShapeFamily family_from_name(const std::string& name);

struct SyntheticSpec {
    ShapeFamily shape_family = ShapeFamily::sphere;
    int64_t points_per_cloud = 256;
    double jitter_sigma = 0.0;
    uint64_t seed = 0;

    void validate() const;
};

struct ManifestEntry {
    std::string path;        // resolved to an absolute/openable path on load
    int label = 0;
    std::string parts_path;  // optional; empty when absent
};

struct DatasetManifest {
    std::vector<std::string> class_names;
    std::vector<ManifestEntry> entries;
};

struct LabeledCloud {
    PointCloud cloud;
    int label = 0;
};

// Format is chosen by extension: .xyz/.txt are text, anything else is the
// P2PC binary container.
PointCloud load_cloud(const std::string& path);
void save_cloud_xyz(const std::string& path, const PointCloud& cloud);
void save_cloud_binary(const std::string& path, const PointCloud& cloud);

PointCloud normalize_unit_sphere(const PointCloud& cloud);

// Uniform surface samples plus Gaussian jitter. Normals are analytic from the
// un-jittered surface; every cloud carries a 2-part labeling by the sign of
// the pre-jitter x coordinate, used by the segmentation task.
std::vector<PointCloud> generate_synthetic(const SyntheticSpec& spec, int64_t count);

// FPS subsample when larger, repeat random points when smaller.
PointCloud resample_to(const PointCloud& cloud, int64_t n, RngStream& rng);

DatasetManifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const DatasetManifest& manifest);

// Stratified by class, deterministic by seed; every class needs >= 2 items.
std::pair<DatasetManifest, DatasetManifest> split_manifest(const DatasetManifest& manifest,
                                                           double train_fraction, uint64_t seed);

std::vector<LabeledCloud> load_dataset(const DatasetManifest& manifest);

// In-memory multi-family dataset used by the toy experiments.
std::vector<LabeledCloud> make_synth_dataset(const std::vector<ShapeFamily>& families,
                                             int64_t per_class, int64_t points_per_cloud,
                                             double jitter_sigma, uint64_t seed);

}  // namespace p2sc
