#include "gssplat/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "gssplat/core.hpp"

namespace gssplat {

namespace fs = std::filesystem;
using json = nlohmann::json;

void ViewSet::validate() const {
    if (views.empty()) throw data_error("scene " + scene_id + ": no views");
    int w = views[0].image.width, h = views[0].image.height;
    for (const auto& v : views) {
        if (v.image.width != w || v.image.height != h || v.image.channels != 3)
            throw data_error("scene " + scene_id + ": inconsistent image dimensions");
        if (v.depth.width != w || v.depth.height != h || v.depth.channels != 1)
            throw data_error("scene " + scene_id + ": inconsistent depth dimensions");
        if (v.has_labels && (v.labels.width != w || v.labels.height != h))
            throw data_error("scene " + scene_id + ": inconsistent label dimensions");
        if (v.camera.intrinsics.width != w || v.camera.intrinsics.height != h)
            throw data_error("scene " + scene_id + ": camera size does not match images");
    }
    for (int id : train_ids)
        if (id < 0 || id >= static_cast<int>(views.size()))
            throw data_error("scene " + scene_id + ": train view id out of range");
    for (int id : novel_ids)
        if (id < 0 || id >= static_cast<int>(views.size()))
            throw data_error("scene " + scene_id + ": novel view id out of range");
    if (!(scene_extent > 0)) throw data_error("scene " + scene_id + ": scene extent must be positive");
}

namespace {

std::string view_name(const char* stem, int i, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s/%04d.%s", stem, i, ext);
    return buf;
}

}  // namespace

void save_scene(const std::string& dir, const ViewSet& scene) {
    scene.validate();
    fs::create_directories(fs::path(dir) / "rgb");
    fs::create_directories(fs::path(dir) / "depth");
    fs::create_directories(fs::path(dir) / "label");

    std::vector<Camera> cameras;
    for (const auto& v : scene.views) cameras.push_back(v.camera);
    save_cameras_json((fs::path(dir) / "cameras.json").string(), cameras);

    for (size_t i = 0; i < scene.views.size(); ++i) {
        const auto& v = scene.views[i];
        write_ppm((fs::path(dir) / view_name("rgb", static_cast<int>(i), "ppm")).string(), v.image);
        write_pfm((fs::path(dir) / view_name("depth", static_cast<int>(i), "pfm")).string(), v.depth);
        if (v.has_labels)
            write_pgm((fs::path(dir) / view_name("label", static_cast<int>(i), "pgm")).string(), v.labels);
    }

    json meta;
    meta["id"] = scene.scene_id;
    meta["num_views"] = scene.views.size();
    meta["train_views"] = scene.train_ids;
    meta["novel_views"] = scene.novel_ids;
    meta["num_classes"] = scene.num_classes;
    meta["scene_extent"] = scene.scene_extent;
    std::ofstream f((fs::path(dir) / "scene.json").string());
    if (!f) throw data_error("cannot write scene.json in " + dir);
    f << meta.dump(2) << "\n";
}

ViewSet load_scene(const std::string& dir) {
    std::ifstream f((fs::path(dir) / "scene.json").string());
    if (!f) throw data_error("missing scene.json in " + dir);
    json meta;
    try {
        meta = json::parse(f);
    } catch (const json::exception& e) {
        throw data_error("scene.json parse error: " + std::string(e.what()));
    }
    ViewSet scene;
    try {
        scene.scene_id = meta.at("id").get<std::string>();
        scene.train_ids = meta.at("train_views").get<std::vector<int>>();
        scene.novel_ids = meta.at("novel_views").get<std::vector<int>>();
        scene.num_classes = meta.at("num_classes").get<int>();
        scene.scene_extent = meta.at("scene_extent").get<float>();
    } catch (const json::exception& e) {
        throw data_error("scene.json missing field: " + std::string(e.what()));
    }
    size_t num_views = meta.at("num_views").get<size_t>();

    auto cameras = load_cameras_json((fs::path(dir) / "cameras.json").string());
    if (cameras.size() != num_views) throw data_error("cameras.json view count mismatch in " + dir);

    scene.views.resize(num_views);
    for (size_t i = 0; i < num_views; ++i) {
        auto& v = scene.views[i];
        v.camera = cameras[i];
        v.image = read_ppm((fs::path(dir) / view_name("rgb", static_cast<int>(i), "ppm")).string());
        v.depth = read_pfm((fs::path(dir) / view_name("depth", static_cast<int>(i), "pfm")).string());
        auto label_path = fs::path(dir) / view_name("label", static_cast<int>(i), "pgm");
        if (fs::exists(label_path)) {
            v.labels = read_pgm(label_path.string());
            v.has_labels = true;
        }
    }
    scene.validate();
    return scene;
}

void save_manifest(const std::string& path, const Manifest& manifest) {
    json j;
    j["scenes"] = json::array();
    for (const auto& d : manifest.scene_dirs) j["scenes"].push_back({{"dir", d}});
    j["num_classes"] = manifest.num_classes;
    std::ofstream f(path);
    if (!f) throw data_error("cannot write manifest: " + path);
    f << j.dump(2) << "\n";
}

Manifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw data_error("cannot open manifest: " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw data_error("manifest parse error: " + std::string(e.what()));
    }
    Manifest m;
    try {
        for (const auto& s : j.at("scenes")) m.scene_dirs.push_back(s.at("dir").get<std::string>());
        m.num_classes = j.at("num_classes").get<int>();
    } catch (const json::exception& e) {
        throw data_error("manifest missing field: " + std::string(e.what()));
    }
    return m;
}

std::vector<ViewSet> load_dataset(const std::string& manifest_path) {
    Manifest m = load_manifest(manifest_path);
    fs::path base = fs::path(manifest_path).parent_path();
    std::vector<ViewSet> scenes;
    for (const auto& d : m.scene_dirs) {
        scenes.push_back(load_scene((base / d).string()));
        if (scenes.back().num_classes != m.num_classes)
            throw data_error("scene " + d + " class count differs from manifest");
    }
    return scenes;
}

}  // namespace gssplat
