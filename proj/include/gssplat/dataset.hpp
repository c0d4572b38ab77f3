#pragma once

#include <string>
#include <vector>

#include "gssplat/geometry.hpp"
#include "gssplat/image.hpp"

namespace gssplat {

struct View {
    Camera camera;
    ImageF image;    // H x W x 3 in [0,1]
    ImageF depth;    // H x W x 1, meters; <= 0 means invalid
    LabelMap labels; // 255 = unlabeled
    bool has_labels = false;
};

struct ViewSet {
    std::string scene_id;
    std::vector<View> views;
    std::vector<int> train_ids;
    std::vector<int> novel_ids;
    int num_classes = 0;
    float scene_extent = 1.f;

    void validate() const;
};

// On-disk layout per scene: scene.json, cameras.json, rgb/%04d.ppm,
// depth/%04d.pfm, label/%04d.pgm.
void save_scene(const std::string& dir, const ViewSet& scene);
ViewSet load_scene(const std::string& dir);

struct Manifest {
    std::vector<std::string> scene_dirs;  // relative to the manifest directory
    int num_classes = 0;
};

void save_manifest(const std::string& path, const Manifest& manifest);
Manifest load_manifest(const std::string& path);

// Loads every scene listed in a manifest file.
std::vector<ViewSet> load_dataset(const std::string& manifest_path);

}  // namespace gssplat
